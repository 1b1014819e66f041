//! End-to-end runs: structure map, plan, trajectories, simulated capture,
//! field training, meshing and reports.
//!
//! A run directory looks like this:
//!
//! ```text
//! out/
//!   structure/{terrain.ply, grid.csv, semantic.json, obstacles.json}
//!   plan.json  audit.jsonl  trajectories.json  run.json
//!   instances/index.json
//!   instances/<id>/{views/*.ppm, poses.json, eval/, handheld/,
//!                   field.bin, mesh.obj, metrics.csv, summary.json}
//!   report.csv  report.json  summary.txt  timing.csv  psnr.dat  curves.dat
//! ```

mod capture;
mod farm;
mod report;
mod store;

pub use capture::{eval_poses, orbit_poses, render_views, trajectory_poses, CaptureConfig, ViewTrack};
pub use farm::{genfarm, FarmScene, FarmSpec, PlantModel, TerrainSpec};
pub use report::{report, ConfigRow, InstanceEntry, InstanceStatus, InstanceSummary, PlanStats, RunInfo, RunReport};
pub use store::{read_views, write_views};

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::farm_map::{build_graph, detect_rows, GraphMap, Instance, MapConfig, PlanningNode};
use crate::geometry::{colour_vertices, marching_cubes, sample_volume, TriMesh};
use crate::global_planner::{generate_global_path, GlobalPath, PlanContext, PlannerConfig};
use crate::local_planner::{plan_segment, AStarConfig, LocalPlannerConfig, SegmentKind, TimedSample, Trajectory};
use crate::radiance::{
    checkpoint, evaluate_psnr, prefix_mean_density, train, Aabb, EpochMetrics, PosedImage, TrainConfig,
    VoxelRadianceField,
};
use crate::terrain::{build_grid, extract_obstacles, CostFieldConfig, ObstacleField, TraversabilityGrid};
use crate::{Vec2, Vec3};
use store::{create_dir, write_json, write_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Structure,
    Plan,
    Trajectories,
    Capture,
    Train,
    Mesh,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Structure => "structure",
            Stage::Plan => "plan",
            Stage::Trajectories => "trajectories",
            Stage::Capture => "capture",
            Stage::Train => "train",
            Stage::Mesh => "mesh",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage} stage: {message}")]
    Stage { stage: Stage, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("no overlap-free layout after {0} attempts")]
    Overlap(usize),
    #[error("invalid farm spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("run directory {0} does not exist")]
    MissingRunDir(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn stage(stage: Stage, e: impl fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    /// Lattice points per axis over the field bounds.
    pub resolution: usize,
    /// Density iso-level; half the 99th density percentile when absent.
    pub threshold: Option<f64>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            resolution: 48,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub map: MapConfig,
    pub cost: CostFieldConfig,
    pub cell_size: f64,
    /// Cells at or above this traversability become obstacle polygons.
    pub obstacle_threshold: f64,
    pub planner: PlannerConfig,
    pub local: LocalPlannerConfig,
    pub capture: CaptureConfig,
    pub train: TrainConfig,
    pub field_resolution: usize,
    pub mesh: MeshConfig,
    /// Train handheld-like and trajectory views, each with and without the
    /// occlusion term, instead of the trajectory views alone.
    pub compare_modes: bool,
    /// Put wall-clock training times into report.csv. Off by default so
    /// reports are reproducible byte for byte.
    pub report_wall_time: bool,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            map: MapConfig {
                clearance: 0.9,
                ..Default::default()
            },
            cost: CostFieldConfig::default(),
            cell_size: 0.1,
            obstacle_threshold: 0.4,
            planner: PlannerConfig::default(),
            local: LocalPlannerConfig {
                astar: AStarConfig { block_threshold: 0.4 },
                epsilon: 0.3,
                ..Default::default()
            },
            capture: CaptureConfig::default(),
            train: TrainConfig::default(),
            field_resolution: 32,
            mesh: MeshConfig::default(),
            compare_modes: false,
            report_wall_time: false,
            workers: 0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if !(self.cell_size > 0.0) {
            return bad("cell_size must be positive");
        }
        if !(self.obstacle_threshold > 0.0) {
            return bad("obstacle_threshold must be positive");
        }
        if self.field_resolution < 2 || self.mesh.resolution < 2 {
            return bad("field and mesh resolutions must be at least 2");
        }
        if self.capture.image_size == 0 || !(self.capture.fov > 0.0 && self.capture.fov < std::f64::consts::PI) {
            return bad("bad camera");
        }
        if self.train.samples_per_ray == 0 {
            return bad("samples_per_ray must be positive");
        }
        self.local.optimizer.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }

    /// Training configurations of one instance, in report order.
    pub fn configurations(&self) -> Vec<(ViewMode, f64)> {
        let w = self.train.occ_weight;
        if self.compare_modes {
            vec![(ViewMode::Ha, 0.0), (ViewMode::Ha, w), (ViewMode::Ra, 0.0), (ViewMode::Ra, w)]
        } else {
            vec![(ViewMode::Ra, w)]
        }
    }
}

/// Everything the `run` command needs besides the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub farm: FarmSpec,
    pub pipeline: PipelineConfig,
    /// Instance ids to model; every instance when absent.
    pub targets: Option<Vec<u32>>,
}

/// Where training views come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewMode {
    /// Dense orbit, like a handheld capture.
    #[serde(rename = "HA")]
    Ha,
    /// Views along the planned trajectory.
    #[serde(rename = "RA")]
    Ra,
}

impl fmt::Display for ViewMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewMode::Ha => "HA",
            ViewMode::Ra => "RA",
        })
    }
}

/// Writes `scene.json`, `detections.json` and `terrain.ply` into `dir`.
pub fn write_farm(dir: &Path, farm: &FarmScene) -> Result<(), PipelineError> {
    create_dir(dir)?;
    write_json(&dir.join("scene.json"), farm)?;
    write_text(&dir.join("detections.json"), &(crate::farm_map::detections_to_json(&farm.instances) + "\n"))?;
    crate::io::write_ply(&dir.join("terrain.ply"), &farm.terrain_cloud()).map_err(|e| PipelineError::stage(Stage::Structure, e))
}

/// Reads the `scene.json` written by [`write_farm`].
pub fn load_farm(dir: &Path) -> Result<FarmScene, PipelineError> {
    store::read_json(&dir.join("scene.json"))
}

/// Structure level of the hierarchy map.
#[derive(Debug, Clone)]
pub struct Structure {
    pub instances: Vec<Instance>,
    pub cloud: Vec<Vec3>,
    pub grid: TraversabilityGrid,
    pub obstacles: ObstacleField,
    pub map: GraphMap,
}

pub fn build_structure(instances: &[Instance], cloud: Vec<Vec3>, cfg: &PipelineConfig) -> Result<Structure, PipelineError> {
    for i in instances {
        i.validate().map_err(|e| PipelineError::stage(Stage::Structure, e))?;
    }
    let grid = build_grid(&cloud, &cfg.cost, cfg.cell_size);
    let obstacles = extract_obstacles(&grid, cfg.obstacle_threshold);
    let groups = detect_rows(instances, &cfg.map);
    let map = build_graph(instances, &groups, Some(&grid), &cfg.map);
    Ok(Structure {
        instances: instances.to_vec(),
        cloud,
        grid,
        obstacles,
        map,
    })
}

/// Writes `structure/` under `out`.
pub fn write_structure(out: &Path, s: &Structure) -> Result<(), PipelineError> {
    let dir = out.join("structure");
    create_dir(&dir)?;
    crate::io::write_ply(&dir.join("terrain.ply"), &s.cloud).map_err(|e| PipelineError::stage(Stage::Structure, e))?;
    write_text(&dir.join("grid.csv"), &s.grid.to_csv())?;
    write_json(&dir.join("obstacles.json"), &s.obstacles)?;
    write_json(&dir.join("graph.json"), &serde_json::from_str::<serde_json::Value>(&s.map.to_json()).expect("graph is json"))?;
    write_json(&dir.join("semantic.json"), &semantic_map(s))
}

/// Instance footprints rasterized onto the traversability grid.
pub fn semantic_map(s: &Structure) -> serde_json::Value {
    let g = &s.grid;
    let instances: Vec<_> = s
        .instances
        .iter()
        .map(|inst| {
            let mut cells = Vec::new();
            for iy in 0..g.height {
                for ix in 0..g.width {
                    if inst.footprint_contains(g.cell_center(ix, iy)) {
                        cells.push([ix, iy]);
                    }
                }
            }
            serde_json::json!({
                "id": inst.id,
                "center": [inst.center.x, inst.center.y],
                "half_extents": [inst.half_extents.x, inst.half_extents.y],
                "yaw": inst.yaw,
                "height": inst.height,
                "row": s.map.group_of(inst.id).map(|r| r.id),
                "cells": cells,
            })
        })
        .collect();
    serde_json::json!({"grid": g.header(), "instances": instances})
}

pub fn plan(s: &Structure, targets: &BTreeSet<u32>, start: Vec2, cfg: &PipelineConfig) -> Result<GlobalPath, PipelineError> {
    let ctx = PlanContext::new(&s.map, Some(&s.grid), cfg.planner);
    generate_global_path(targets, &s.map, start, &ctx).map_err(|e| PipelineError::stage(Stage::Plan, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentStatus {
    Ok,
    /// The smoothed curve failed the audit; the raw polyline is used.
    Fallback,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub index: usize,
    pub kind: SegmentKind,
    pub from_node: Option<usize>,
    pub to_node: usize,
    pub instance_id: Option<u32>,
    pub status: SegmentStatus,
    pub message: Option<String>,
    pub length_m: f64,
    pub initial_objective: Option<f64>,
    pub final_objective: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct PlannedSegments {
    pub trajectories: Vec<Trajectory>,
    pub records: Vec<SegmentRecord>,
}

impl PlannedSegments {
    /// Viewpoint segments of instance `id`.
    pub fn for_instance(&self, id: u32) -> Vec<ViewTrack> {
        self.delivered()
            .filter(|(_, r)| r.instance_id == Some(id))
            .filter_map(|(t, _)| ViewTrack::from_trajectory(t))
            .collect()
    }

    fn delivered(&self) -> impl Iterator<Item = (&Trajectory, &SegmentRecord)> {
        self.trajectories
            .iter()
            .zip(self.records.iter().filter(|r| r.status != SegmentStatus::Failed))
    }

    /// Export document: every delivered trajectory tagged with its segment
    /// index and instance.
    pub fn to_json(&self, cfg: &LocalPlannerConfig) -> serde_json::Value {
        let items = self
            .delivered()
            .map(|(t, r)| {
                let mut v = t.to_json(cfg);
                v["segment"] = serde_json::json!(r.index);
                v["instance_id"] = serde_json::json!(r.instance_id);
                v
            })
            .collect();
        serde_json::Value::Array(items)
    }
}

/// View tracks of instance `id` from an exported trajectory document.
pub fn view_tracks_from_json(doc: &serde_json::Value, id: u32) -> Result<Vec<ViewTrack>, PipelineError> {
    #[derive(Deserialize)]
    struct Item {
        kind: SegmentKind,
        instance_id: Option<u32>,
        viewpoints: Vec<[f64; 2]>,
        samples: Vec<TimedSample>,
    }
    let items: Vec<Item> =
        serde_json::from_value(doc.clone()).map_err(|e| PipelineError::stage(Stage::Capture, e))?;
    Ok(items
        .into_iter()
        .filter(|i| i.kind == SegmentKind::Viewpoint && i.instance_id == Some(id))
        .map(|i| ViewTrack {
            viewpoints: i.viewpoints.iter().map(|p| Vec2::new(p[0], p[1])).collect(),
            samples: i.samples.iter().map(|s| Vec2::new(s.x, s.y)).collect(),
        })
        .collect())
}

/// Plans every segment of `path`: between two nodes of the same instance a
/// viewpoint segment, otherwise a transit. Zero-length hops are skipped.
/// Failed segments are recorded and do not stop the others.
pub fn plan_trajectories(s: &Structure, path: &GlobalPath, cfg: &PipelineConfig) -> PlannedSegments {
    let start = PlanningNode {
        id: usize::MAX,
        instance_id: None,
        position: path.start,
        heading: 0.0,
        corner_index: None,
        direction_index: None,
    };
    let mut nodes = vec![start];
    nodes.extend(path.node_ids.iter().map(|&id| *s.map.node(id)));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = PlannedSegments::default();
    for (index, w) in nodes.windows(2).enumerate() {
        let seed = rng.next_u64();
        let (a, b) = (&w[0], &w[1]);
        if (a.position - b.position).norm() < 1e-9 {
            continue;
        }
        let same = a.instance_id.is_some() && a.instance_id == b.instance_id;
        let kind = if same { SegmentKind::Viewpoint } else { SegmentKind::Transit };
        let inst = a.instance_id.filter(|_| same).and_then(|id| s.map.instance(id));
        let result = plan_segment(kind, a, b, inst, &s.obstacles, Some(&s.grid), &cfg.local, seed);
        let mut rec = SegmentRecord {
            index,
            kind,
            from_node: (a.id != usize::MAX).then_some(a.id),
            to_node: b.id,
            instance_id: inst.map(|i| i.id),
            status: SegmentStatus::Ok,
            message: None,
            length_m: 0.0,
            initial_objective: None,
            final_objective: None,
        };
        match result {
            Ok(t) => {
                rec.status = if t.fallback { SegmentStatus::Fallback } else { SegmentStatus::Ok };
                rec.length_m = t.length();
                rec.initial_objective = t.objective_history.first().copied();
                rec.final_objective = t.objective_history.last().copied();
                out.trajectories.push(t);
            }
            Err(e) => {
                log::warn!("segment {index} ({kind:?}) failed: {e}");
                rec.status = SegmentStatus::Failed;
                rec.message = Some(e.to_string());
            }
        }
        out.records.push(rec);
    }
    out
}

/// One trained configuration of an instance.
#[derive(Debug, Clone)]
pub struct TrainedField {
    pub view_mode: ViewMode,
    pub occ_weight: f64,
    pub field: VoxelRadianceField,
    pub metrics: Vec<EpochMetrics>,
    pub eval_psnr: f64,
    pub prefix_density: f64,
    pub train_time_s: f64,
}

/// Trains a fresh field over `bounds` on `views`.
pub fn train_field(
    views: &[PosedImage],
    bounds: Aabb,
    resolution: usize,
    cfg: &TrainConfig,
) -> Result<(VoxelRadianceField, Vec<EpochMetrics>), PipelineError> {
    let mut field = VoxelRadianceField::initial(bounds, [resolution; 3]);
    let metrics = train(&mut field, views, cfg).map_err(|e| PipelineError::stage(Stage::Train, e))?;
    Ok((field, metrics))
}

/// Vertex-coloured iso-surface of a trained field and the level used.
pub fn extract_mesh(field: &VoxelRadianceField, cfg: &MeshConfig) -> (TriMesh, f64) {
    let vol = sample_volume(field, &field.bounds, [cfg.resolution; 3]);
    let threshold = cfg.threshold.unwrap_or_else(|| vol.default_threshold());
    (colour_vertices(marching_cubes(&vol, threshold), field), threshold)
}

/// Captures, trains and meshes one instance into `dir`.
pub fn process_instance(
    farm: &FarmScene,
    inst: &Instance,
    tracks: &[ViewTrack],
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<InstanceSummary, PipelineError> {
    let plant = farm
        .plant(inst.id)
        .ok_or_else(|| PipelineError::stage(Stage::Capture, format!("no plant model for instance {}", inst.id)))?;
    let ground = farm.ground_height(inst.center);
    create_dir(dir)?;
    let ra_views = render_views(&plant.scene, &trajectory_poses(inst, ground, tracks, &cfg.capture), &cfg.capture);
    write_views(dir, &ra_views)?;
    if ra_views.len() < 2 {
        return Err(PipelineError::stage(
            Stage::Capture,
            format!("instance {} has {} trajectory views, need 2", inst.id, ra_views.len()),
        ));
    }
    let eval = render_views(&plant.scene, &eval_poses(inst, ground, &cfg.capture), &cfg.capture);
    write_views(&dir.join("eval"), &eval)?;
    let configs = cfg.configurations();
    let ha_views = if configs.iter().any(|c| c.0 == ViewMode::Ha) {
        let v = render_views(&plant.scene, &orbit_poses(inst, ground, &cfg.capture), &cfg.capture);
        write_views(&dir.join("handheld"), &v)?;
        v
    } else {
        Vec::new()
    };

    let train_cfg = TrainConfig {
        seed: cfg.train.seed.wrapping_add(cfg.seed).wrapping_add(inst.id as u64),
        ..cfg.train
    };
    let k = train_cfg.samples_per_ray;
    let mut runs = Vec::new();
    for (mode, occ) in configs {
        let views = match mode {
            ViewMode::Ha => &ha_views,
            ViewMode::Ra => &ra_views,
        };
        let tc = TrainConfig {
            occ_weight: occ,
            ..train_cfg
        };
        let clock = Instant::now();
        let (field, metrics) = train_field(views, plant.scene.bounds, cfg.field_resolution, &tc)?;
        let train_time_s = clock.elapsed().as_secs_f64();
        runs.push(TrainedField {
            view_mode: mode,
            occ_weight: occ,
            eval_psnr: evaluate_psnr(&field, &eval, k),
            prefix_density: prefix_mean_density(&field, views, k, &tc.occlusion),
            field,
            metrics,
            train_time_s,
        });
    }

    let mut csv = String::from("view_mode,occ_weight,epoch,l_color,l_occ,psnr_db\n");
    for r in &runs {
        for m in &r.metrics {
            csv += &format!("{},{},{},{:.9},{:.9},{:.6}\n", r.view_mode, r.occ_weight, m.epoch, m.l_color, m.l_occ, m.psnr);
        }
    }
    write_text(&dir.join("metrics.csv"), &csv)?;

    // The delivered model is the trajectory-view field with the configured weight.
    let main = runs
        .iter()
        .rfind(|r| r.view_mode == ViewMode::Ra && r.occ_weight == cfg.train.occ_weight)
        .expect("trajectory configuration is always trained");
    checkpoint::save(&main.field, &dir.join("field.bin")).map_err(|e| PipelineError::stage(Stage::Train, e))?;
    let (mesh, threshold) = extract_mesh(&main.field, &cfg.mesh);
    mesh.write_obj(&dir.join("mesh.obj")).map_err(|e| PipelineError::io(&dir.join("mesh.obj"), e))?;

    let summary = InstanceSummary {
        id: inst.id,
        views: ra_views.len(),
        handheld_views: ha_views.len(),
        eval_views: eval.len(),
        mesh_vertices: mesh.vertices.len(),
        mesh_triangles: mesh.triangles.len(),
        mesh_threshold: threshold,
        configs: runs
            .iter()
            .map(|r| ConfigRow {
                view_mode: r.view_mode,
                occ_weight: r.occ_weight,
                psnr_db: r.eval_psnr,
                train_psnr_db: r.metrics.last().map(|m| m.psnr).unwrap_or(f64::NAN),
                prefix_density: r.prefix_density,
                epochs: r.metrics.len(),
                train_time_s: r.train_time_s,
            })
            .collect(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn instance_dir(out: &Path, id: u32) -> PathBuf {
    out.join("instances").join(id.to_string())
}

/// Runs every stage for `targets` and writes the hierarchy map and reports
/// under `out`. Outputs of finished stages stay on disk when a later stage
/// fails.
pub fn run_pipeline(
    farm: &FarmScene,
    targets: &BTreeSet<u32>,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    for t in targets {
        if !farm.instances.iter().any(|i| i.id == *t) {
            return Err(PipelineError::stage(Stage::Plan, format!("unknown target instance {t}")));
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.workers > 0 {
        builder = builder.num_threads(cfg.workers);
    }
    let pool = builder.build().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    pool.install(|| run_stages(farm, targets, cfg, out))
}

fn run_stages(farm: &FarmScene, targets: &BTreeSet<u32>, cfg: &PipelineConfig, out: &Path) -> Result<RunReport, PipelineError> {
    create_dir(out)?;
    let mut timing = vec![("structure".to_string(), Instant::now(), 0.0)];
    let lap = |name: &str, timing: &mut Vec<(String, Instant, f64)>| {
        let last = timing.last_mut().expect("timing has a running entry");
        last.2 = last.1.elapsed().as_secs_f64();
        timing.push((name.to_string(), Instant::now(), 0.0));
    };

    let structure = build_structure(&farm.instances, farm.terrain_cloud(), cfg)?;
    write_structure(out, &structure)?;
    log::info!(
        "structure: {} points, {}x{} cells, {} obstacles",
        structure.cloud.len(),
        structure.grid.width,
        structure.grid.height,
        structure.obstacles.polygons.len()
    );

    lap("plan", &mut timing);
    let start = Vec2::new(farm.start[0], farm.start[1]);
    let path = plan(&structure, targets, start, cfg)?;
    write_json(&out.join("plan.json"), &path.to_plan_json(&structure.map))?;
    write_text(&out.join("audit.jsonl"), &path.audit_jsonl())?;

    lap("trajectories", &mut timing);
    let segments = plan_trajectories(&structure, &path, cfg);
    write_json(&out.join("trajectories.json"), &segments.to_json(&cfg.local))?;

    let covered: Vec<u32> = targets.iter().copied().filter(|t| path.covered_instances.contains(t)).collect();
    let plan_stats = PlanStats {
        targets: targets.iter().copied().collect(),
        covered: covered.clone(),
        unreachable: path.unreachable.iter().copied().collect(),
        coverage_pct: if targets.is_empty() {
            100.0
        } else {
            100.0 * covered.len() as f64 / targets.len() as f64
        },
        path_length_m: path.total_length,
        trajectory_length_m: segments.records.iter().map(|r| r.length_m).sum(),
        failed_segments: segments.records.iter().filter(|r| r.status == SegmentStatus::Failed).count(),
    };
    let info = RunInfo {
        scene: farm.spec.name.clone(),
        farm_seed: farm.seed,
        seed: cfg.seed,
        config: cfg.clone(),
        plan: plan_stats,
        segments: segments.records.clone(),
    };
    write_json(&out.join("run.json"), &info)?;

    lap("instances", &mut timing);
    create_dir(&out.join("instances"))?;
    let jobs: Vec<&Instance> = farm.instances.iter().filter(|i| covered.contains(&i.id)).collect();
    let results: Vec<(u32, Result<InstanceSummary, PipelineError>, f64)> = jobs
        .par_iter()
        .map(|inst| {
            let clock = Instant::now();
            let tracks = segments.for_instance(inst.id);
            let r = process_instance(farm, inst, &tracks, cfg, &instance_dir(out, inst.id));
            (inst.id, r, clock.elapsed().as_secs_f64())
        })
        .collect();

    let mut index = Vec::new();
    for inst in &farm.instances {
        let (status, message) = if let Some((_, r, _)) = results.iter().find(|(id, _, _)| *id == inst.id) {
            match r {
                Ok(_) => (InstanceStatus::Sampled, None),
                Err(e) => {
                    log::warn!("instance {}: {e}", inst.id);
                    (InstanceStatus::Incomplete, Some(e.to_string()))
                }
            }
        } else if path.unreachable.contains(&inst.id) {
            (InstanceStatus::Unreachable, None)
        } else {
            (InstanceStatus::NotSampled, None)
        };
        let dir = matches!(status, InstanceStatus::Sampled | InstanceStatus::Incomplete).then(|| format!("instances/{}", inst.id));
        index.push(InstanceEntry {
            id: inst.id,
            status,
            dir,
            message,
        });
    }
    write_json(&out.join("instances").join("index.json"), &index)?;

    lap("report", &mut timing);
    let report = report(out)?;
    let last = timing.last_mut().expect("timing has a running entry");
    last.2 = last.1.elapsed().as_secs_f64();
    let mut csv = String::from("item,seconds\n");
    for (name, _, secs) in &timing {
        csv += &format!("stage:{name},{secs:.3}\n");
    }
    for (id, _, secs) in &results {
        csv += &format!("instance:{id},{secs:.3}\n");
    }
    write_text(&out.join("timing.csv"), &csv)?;
    Ok(report)
}
