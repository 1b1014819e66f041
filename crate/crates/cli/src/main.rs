use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use pheno_core::farm_map::{load_detections, Instance};
use pheno_core::geometry::TriMesh;
use pheno_core::global_planner::GlobalPath;
use pheno_core::pipeline::{
    build_structure, eval_poses, extract_mesh, genfarm, load_farm, plan, plan_trajectories, read_views, render_views,
    report, run_pipeline, train_field, trajectory_poses, view_tracks_from_json, write_farm, write_structure,
    write_views, RunConfig,
};
use pheno_core::radiance::{checkpoint, evaluate_psnr, TrainConfig};
use pheno_core::Vec2;

/// Field phenotyping planner and plant modeller.
#[derive(Debug, Parser)]
#[command(name = "pheno", version)]
struct Cli {
    /// JSON run configuration with optional `farm`, `pipeline` and `targets` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for farm generation and planning; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Inputs {
    /// Farm directory written by `genfarm` [default: OUT/farm].
    #[arg(long)]
    farm: Option<PathBuf>,
    /// Detections JSON [default: FARM/detections.json].
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Terrain cloud, PLY or XYZ [default: FARM/terrain.ply].
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// Robot start `x,y` [default: the farm's suggested start].
    #[arg(long, value_delimiter = ',', num_args = 2)]
    start: Option<Vec<f64>>,
    /// Target instance ids [default: configuration, else every instance].
    #[arg(long, value_delimiter = ',')]
    targets: Vec<u32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic farm into OUT/farm.
    Genfarm,
    /// Build the structure map and the global coverage path.
    Plan(Inputs),
    /// Plan and optimize the local trajectories of a global path.
    Optimize {
        #[command(flatten)]
        inputs: Inputs,
        /// Plan written by `plan` [default: OUT/plan.json].
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Render the views an instance's trajectory segments capture.
    Simulate {
        #[arg(long)]
        farm: Option<PathBuf>,
        /// Trajectories written by `optimize` [default: OUT/trajectories.json].
        #[arg(long)]
        trajectories: Option<PathBuf>,
        /// Instances to capture [default: every instance with viewpoints].
        #[arg(long, value_delimiter = ',')]
        instance: Vec<u32>,
    },
    /// Train a radiance field on an instance's captured views.
    TrainField {
        #[arg(long)]
        farm: Option<PathBuf>,
        #[arg(long)]
        instance: u32,
        /// Override the occlusion weight.
        #[arg(long)]
        occ_weight: Option<f64>,
    },
    /// Extract a vertex-coloured mesh from a field checkpoint.
    ExtractMesh {
        #[arg(long)]
        field: PathBuf,
        /// Output OBJ [default: mesh.obj next to the field].
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Generate a farm and run every stage.
    Run {
        #[arg(long, value_delimiter = ',')]
        targets: Vec<u32>,
    },
    /// Rebuild the reports of a run directory.
    Report {
        /// Run directory [default: OUT].
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

const PARTIAL: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.pipeline.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.pipeline.workers = w;
    }
    Ok(cfg)
}

fn target_set(explicit: &[u32], cfg: &RunConfig, instances: &[Instance]) -> BTreeSet<u32> {
    if !explicit.is_empty() {
        explicit.iter().copied().collect()
    } else if let Some(t) = &cfg.targets {
        t.iter().copied().collect()
    } else {
        instances.iter().map(|i| i.id).collect()
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

struct Loaded {
    instances: Vec<Instance>,
    cloud: Vec<pheno_core::Vec3>,
    start: Vec2,
}

fn load_inputs(inputs: &Inputs, out: &Path) -> Result<Loaded> {
    let farm_dir = inputs.farm.clone().unwrap_or_else(|| out.join("farm"));
    let farm = load_farm(&farm_dir).ok();
    let instances = match &inputs.detections {
        Some(p) => load_detections(p)?,
        None => load_detections(&farm_dir.join("detections.json"))?,
    };
    let cloud_path = inputs.cloud.clone().unwrap_or_else(|| farm_dir.join("terrain.ply"));
    let cloud = pheno_core::io::read_cloud(&cloud_path)?;
    let start = match (&inputs.start, &farm) {
        (Some(s), _) => Vec2::new(s[0], s[1]),
        (None, Some(f)) => Vec2::new(f.start[0], f.start[1]),
        (None, None) => bail!("no --start given and no farm scene to take it from"),
    };
    Ok(Loaded {
        instances,
        cloud,
        start,
    })
}

fn execute(cli: Cli) -> Result<u8> {
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::Genfarm => {
            let farm = genfarm(&cfg.farm, cfg.pipeline.seed)?;
            write_farm(&out.join("farm"), &farm)?;
            println!("{} instances written to {}", farm.instances.len(), out.join("farm").display());
            Ok(0)
        }
        Command::Plan(inputs) => {
            let l = load_inputs(inputs, &out)?;
            let targets = target_set(&inputs.targets, &cfg, &l.instances);
            let s = build_structure(&l.instances, l.cloud, &cfg.pipeline)?;
            write_structure(&out, &s)?;
            let path = plan(&s, &targets, l.start, &cfg.pipeline)?;
            write_json(&out.join("plan.json"), &path.to_plan_json(&s.map))?;
            std::fs::write(out.join("audit.jsonl"), path.audit_jsonl())?;
            println!(
                "{} nodes, {:.2} m, covered {:?}, unreachable {:?}",
                path.node_ids.len(),
                path.total_length,
                path.covered_instances,
                path.unreachable
            );
            Ok(if path.unreachable.is_empty() { 0 } else { PARTIAL })
        }
        Command::Optimize { inputs, plan } => {
            let l = load_inputs(inputs, &out)?;
            let s = build_structure(&l.instances, l.cloud, &cfg.pipeline)?;
            let doc = read_json(&plan.clone().unwrap_or_else(|| out.join("plan.json")))?;
            let path = global_path_from_json(&doc, s.map.nodes.len())?;
            let segs = plan_trajectories(&s, &path, &cfg.pipeline);
            write_json(&out.join("trajectories.json"), &segs.to_json(&cfg.pipeline.local))?;
            let failed = segs.trajectories.len() < segs.records.len();
            println!("{} segments, {} delivered", segs.records.len(), segs.trajectories.len());
            Ok(if failed { PARTIAL } else { 0 })
        }
        Command::Simulate {
            farm,
            trajectories,
            instance,
        } => {
            let farm = load_farm(&farm.clone().unwrap_or_else(|| out.join("farm")))?;
            let doc = read_json(&trajectories.clone().unwrap_or_else(|| out.join("trajectories.json")))?;
            let ids: Vec<u32> = if instance.is_empty() {
                farm.instances.iter().map(|i| i.id).collect()
            } else {
                instance.clone()
            };
            let capture = &cfg.pipeline.capture;
            for id in ids {
                let inst = farm.instances.iter().find(|i| i.id == id).ok_or_else(|| anyhow!("unknown instance {id}"))?;
                let plant = farm.plant(id).ok_or_else(|| anyhow!("no plant model for instance {id}"))?;
                let tracks = view_tracks_from_json(&doc, id)?;
                if tracks.is_empty() && !instance.is_empty() {
                    bail!("instance {id} has no viewpoint segments");
                }
                if tracks.is_empty() {
                    continue;
                }
                let ground = farm.ground_height(inst.center);
                let dir = out.join("instances").join(id.to_string());
                let views = render_views(&plant.scene, &trajectory_poses(inst, ground, &tracks, capture), capture);
                write_views(&dir, &views)?;
                write_views(&dir.join("eval"), &render_views(&plant.scene, &eval_poses(inst, ground, capture), capture))?;
                println!("instance {id}: {} views", views.len());
            }
            Ok(0)
        }
        Command::TrainField {
            farm,
            instance,
            occ_weight,
        } => {
            let farm = load_farm(&farm.clone().unwrap_or_else(|| out.join("farm")))?;
            let plant = farm.plant(*instance).ok_or_else(|| anyhow!("no plant model for instance {instance}"))?;
            let dir = out.join("instances").join(instance.to_string());
            let views = read_views(&dir)?;
            let p = &cfg.pipeline;
            let tc = TrainConfig {
                occ_weight: occ_weight.unwrap_or(p.train.occ_weight),
                seed: p.train.seed.wrapping_add(p.seed).wrapping_add(*instance as u64),
                ..p.train
            };
            let (field, metrics) = train_field(&views, plant.scene.bounds, p.field_resolution, &tc)?;
            checkpoint::save(&field, &dir.join("field.bin"))?;
            let mut csv = String::from("epoch,l_color,l_occ,psnr_db\n");
            for m in &metrics {
                csv += &format!("{},{:.9},{:.9},{:.6}\n", m.epoch, m.l_color, m.l_occ, m.psnr);
            }
            std::fs::write(dir.join("metrics.csv"), csv)?;
            let last = metrics.last().map(|m| m.psnr).unwrap_or(f64::NAN);
            match read_views(&dir.join("eval")) {
                Ok(eval) => println!(
                    "train PSNR {last:.2} dB, held-out PSNR {:.2} dB",
                    evaluate_psnr(&field, &eval, tc.samples_per_ray)
                ),
                Err(_) => println!("train PSNR {last:.2} dB"),
            }
            Ok(0)
        }
        Command::ExtractMesh {
            field,
            output,
            threshold,
            resolution,
        } => {
            let f = checkpoint::load(field)?;
            let mut mc = cfg.pipeline.mesh;
            if threshold.is_some() {
                mc.threshold = *threshold;
            }
            if let Some(r) = resolution {
                mc.resolution = *r;
            }
            let (mesh, level): (TriMesh, f64) = extract_mesh(&f, &mc);
            let target = output.clone().unwrap_or_else(|| field.with_file_name("mesh.obj"));
            mesh.write_obj(&target).with_context(|| format!("writing {}", target.display()))?;
            println!(
                "{} vertices, {} triangles at level {level:.4}",
                mesh.vertices.len(),
                mesh.triangles.len()
            );
            Ok(0)
        }
        Command::Run { targets } => {
            let farm = genfarm(&cfg.farm, cfg.pipeline.seed)?;
            write_farm(&out.join("farm"), &farm)?;
            let t = target_set(targets, &cfg, &farm.instances);
            let r = run_pipeline(&farm, &t, &cfg.pipeline, &out)?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
            Ok(if r.is_partial() { PARTIAL } else { 0 })
        }
        Command::Report { run } => {
            let dir = run.clone().unwrap_or(out);
            let r = report(&dir)?;
            print!("{}", std::fs::read_to_string(dir.join("summary.txt"))?);
            Ok(if r.is_partial() { PARTIAL } else { 0 })
        }
    }
}

fn global_path_from_json(doc: &serde_json::Value, node_count: usize) -> Result<GlobalPath> {
    let start = doc["start"].as_array().ok_or_else(|| anyhow!("plan has no start"))?;
    let coord = |i: usize| start.get(i).and_then(|v| v.as_f64()).ok_or_else(|| anyhow!("bad plan start"));
    let mut path = GlobalPath::new(Vec2::new(coord(0)?, coord(1)?));
    for n in doc["nodes"].as_array().ok_or_else(|| anyhow!("plan has no nodes"))? {
        let id = n["id"].as_u64().ok_or_else(|| anyhow!("bad node id"))? as usize;
        if id >= node_count {
            bail!("plan node {id} is not in the graph map");
        }
        path.node_ids.push(id);
    }
    Ok(path)
}
