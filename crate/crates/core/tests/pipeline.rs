use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pheno_core::local_planner::distance_to_polyline;
use pheno_core::pipeline::*;
use pheno_core::radiance::checkpoint;
use pheno_core::Vec2;

/// Small images, a coarse field and few epochs so a run takes seconds.
fn quick_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.capture.image_size = 16;
    cfg.capture.reference_samples = 64;
    cfg.capture.orbit_views = 8;
    cfg.capture.eval_views = 3;
    cfg.train.epochs = 3;
    cfg.train.samples_per_ray = 24;
    cfg.field_resolution = 12;
    cfg.mesh.resolution = 16;
    cfg
}

fn small_farm(rows: usize, plants: usize) -> FarmScene {
    genfarm(
        &FarmSpec {
            rows,
            plants_per_row: plants,
            margin: 2.5,
            ..Default::default()
        },
        7,
    )
    .unwrap()
}

fn ids(v: &[u32]) -> BTreeSet<u32> {
    v.iter().copied().collect()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn index(out: &Path) -> Vec<InstanceEntry> {
    serde_json::from_str(&read(&out.join("instances/index.json"))).unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn genfarm_is_reproducible_on_disk() {
    let spec = FarmSpec {
        rows: 1,
        plants_per_row: 2,
        jitter: 0.0,
        ..Default::default()
    };
    let farm = genfarm(&spec, 1).unwrap();
    assert_eq!(farm.instances.len(), 2);
    assert_eq!(farm.instances[0].center.y, farm.instances[1].center.y);

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_farm(&a, &genfarm(&spec, 1).unwrap()).unwrap();
    write_farm(&b, &genfarm(&spec, 1).unwrap()).unwrap();
    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    assert_eq!(files.len(), 3);
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{}", f.display());
    }
    assert_eq!(load_farm(&a).unwrap(), farm);
    let dets = pheno_core::farm_map::load_detections(&a.join("detections.json")).unwrap();
    assert_eq!(dets, farm.instances);

    let tight = FarmSpec {
        spacing: 0.3,
        jitter: 0.0,
        ..Default::default()
    };
    assert!(matches!(genfarm(&tight, 1), Err(PipelineError::Overlap(_))));
    let bad = FarmSpec {
        rows: 0,
        ..Default::default()
    };
    assert!(matches!(genfarm(&bad, 1), Err(PipelineError::InvalidSpec(_))));
}

#[test]
fn no_targets_writes_only_the_structure_level() {
    let farm = small_farm(1, 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = run_pipeline(&farm, &BTreeSet::new(), &quick_config(), &out).unwrap();
    for f in ["terrain.ply", "grid.csv", "semantic.json", "obstacles.json"] {
        assert!(out.join("structure").join(f).is_file(), "{f}");
    }
    assert!(r.instances.is_empty());
    assert!(!r.is_partial());
    let idx = index(&out);
    assert_eq!(idx.len(), 2);
    assert!(idx.iter().all(|e| e.status == InstanceStatus::NotSampled && e.dir.is_none()));
    let entries: Vec<_> = fs::read_dir(out.join("instances")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("index.json")]);
    assert_eq!(read(&out.join("report.csv")), "scene,view_mode,occ_weight,PSNR_dB,train_time_s\n");

    let sem: serde_json::Value = serde_json::from_str(&read(&out.join("structure/semantic.json"))).unwrap();
    let insts = sem["instances"].as_array().unwrap();
    assert_eq!(insts.len(), 2);
    assert!(insts.iter().all(|i| !i["cells"].as_array().unwrap().is_empty()));
}

#[test]
fn one_target_produces_a_full_instance_entry() {
    let farm = small_farm(1, 2);
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = run_pipeline(&farm, &ids(&[1]), &cfg, &out).unwrap();
    assert!(!r.is_partial());
    assert_eq!(r.plan.covered, vec![1]);

    let inst = out.join("instances/1");
    let views = read_views(&inst).unwrap();
    assert!(views.len() >= cfg.local.n_views, "{} views", views.len());
    assert_eq!(views.len(), r.instances[0].views);
    assert!(inst.join("field.bin").is_file() && inst.join("mesh.obj").is_file() && inst.join("metrics.csv").is_file());
    let field = checkpoint::load(&inst.join("field.bin")).unwrap();
    assert_eq!(field.resolution, [12; 3]);
    assert!(read(&inst.join("mesh.obj")).lines().any(|l| l.starts_with("v ")));
    assert_eq!(read(&inst.join("metrics.csv")).lines().count(), 1 + cfg.train.epochs);
    assert!(!out.join("instances/0").exists());

    let csv = read(&out.join("report.csv"));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    let f: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(&f[..3], &["farm/plant_1", "RA", "1"]);
    assert!(f[3].parse::<f64>().unwrap().is_finite());
    assert_eq!(f[4], "-");
    assert!(!read(&out.join("psnr.dat")).is_empty() && !read(&out.join("curves.dat")).is_empty());

    // Every capture pose sits on an exported trajectory, next to a viewpoint.
    let traj: serde_json::Value = serde_json::from_str(&read(&out.join("trajectories.json"))).unwrap();
    let tracks = view_tracks_from_json(&traj, 1).unwrap();
    assert!(!tracks.is_empty());
    for v in &views {
        let c = Vec2::new(v.pose.center.x, v.pose.center.y);
        assert!(tracks.iter().any(|t| distance_to_polyline(c, &t.samples) < 1e-9));
        let near = tracks
            .iter()
            .flat_map(|t| t.viewpoints.iter())
            .map(|p| (p - c).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(near <= cfg.local.view_tol, "pose {near} m from its viewpoint");
    }
}

#[test]
fn target_across_a_ditch_is_reported_unreachable() {
    let spec = FarmSpec {
        rows: 2,
        plants_per_row: 2,
        jitter: 0.0,
        margin: 2.5,
        terrain: TerrainSpec::Ditch { y: 1.3, width: 0.4 },
        ..Default::default()
    };
    let farm = genfarm(&spec, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = run_pipeline(&farm, &ids(&[0, 3]), &quick_config(), &out).unwrap();
    assert_eq!(r.plan.unreachable, vec![3]);
    assert_eq!(r.plan.covered, vec![0]);
    assert!(r.is_partial());
    assert!(!out.join("instances/3").exists());
    assert!(out.join("instances/0/field.bin").is_file());
    let entry = index(&out).into_iter().find(|e| e.id == 3).unwrap();
    assert_eq!(entry.status, InstanceStatus::Unreachable);
    assert!(entry.dir.is_none());
    assert!(read(&out.join("summary.txt")).contains("unreachable: 3"));
    let plan: serde_json::Value = serde_json::from_str(&read(&out.join("plan.json"))).unwrap();
    assert_eq!(plan["unreachable"], serde_json::json!([3]));
}

#[test]
fn curb_farm_still_covers_every_target() {
    let spec = FarmSpec {
        rows: 1,
        plants_per_row: 3,
        jitter: 0.0,
        margin: 2.5,
        terrain: TerrainSpec::Curb { height: 0.3, x: 3.75 },
        ..Default::default()
    };
    let farm = genfarm(&spec, 2).unwrap();
    assert_eq!(farm.ground_height(farm.instances[2].center), 0.3);
    assert_eq!(farm.ground_height(farm.instances[0].center), 0.0);
    let dir = tempfile::tempdir().unwrap();
    let r = run_pipeline(&farm, &ids(&[2]), &quick_config(), &dir.path().join("run")).unwrap();
    assert_eq!(r.plan.covered, vec![2]);
    assert!(!r.is_partial());
}

#[test]
fn report_rows_follow_instances_and_configurations() {
    let farm = small_farm(1, 3);
    let mut cfg = quick_config();
    cfg.compare_modes = true;
    cfg.train.epochs = 2;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = run_pipeline(&farm, &ids(&[0, 2]), &cfg, &out).unwrap();
    let csv = read(&out.join("report.csv"));
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 8);
    for (mode, occ) in cfg.configurations() {
        let n = rows.iter().filter(|f| f[1] == mode.to_string() && f[2] == occ.to_string()).count();
        assert_eq!(n, 2, "{mode} {occ}");
    }
    for id in [0, 2] {
        let label = format!("farm/plant_{id}");
        assert_eq!(rows.iter().filter(|f| f[0] == label).count(), 4);
    }
    assert!(rows.iter().all(|f| f[3].parse::<f64>().is_ok()));
    assert_eq!(r.instances.iter().map(|s| s.handheld_views).collect::<Vec<_>>(), vec![8, 8]);

    // Drop one instance's results and mark it unfinished: the report keeps
    // its rows, flagged incomplete.
    let mut idx = index(&out);
    idx.iter_mut().find(|e| e.id == 2).unwrap().status = InstanceStatus::Incomplete;
    fs::write(out.join("instances/index.json"), serde_json::to_string(&idx).unwrap()).unwrap();
    fs::remove_file(out.join("instances/2/summary.json")).unwrap();
    let partial = report(&out).unwrap();
    assert!(partial.is_partial());
    assert_eq!(partial.incomplete(), vec![2]);
    let csv = read(&out.join("report.csv"));
    let flagged: Vec<&str> = csv.lines().filter(|l| l.starts_with("farm/plant_2,")).collect();
    assert_eq!(flagged.len(), 4);
    assert!(flagged.iter().all(|l| l.ends_with(",incomplete,-")));
    assert_eq!(csv.lines().filter(|l| l.starts_with("farm/plant_0,")).count(), 4);

    assert!(matches!(report(&dir.path().join("nope")), Err(PipelineError::MissingRunDir(_))));
}

#[test]
fn runs_are_reproducible_for_any_worker_count() {
    let farm = small_farm(2, 2);
    let targets = ids(&[0, 3]);
    let dir = tempfile::tempdir().unwrap();
    let run = |workers: usize, name: &str| {
        let cfg = PipelineConfig {
            workers,
            ..quick_config()
        };
        let out = dir.path().join(name);
        run_pipeline(&farm, &targets, &cfg, &out).unwrap();
        out
    };
    let a = run(1, "a");
    let b = run(1, "b");
    let c = run(3, "c");
    let files = files_under(&a);
    assert_eq!(files, files_under(&c));
    for f in files {
        let name = f.to_string_lossy();
        // Wall-clock time is the only thing allowed to differ.
        if name == "timing.csv" || name == "report.json" || name.ends_with("summary.json") || name == "run.json" {
            continue;
        }
        let bytes = fs::read(a.join(&f)).unwrap();
        assert_eq!(bytes, fs::read(b.join(&f)).unwrap(), "{name}");
        assert_eq!(bytes, fs::read(c.join(&f)).unwrap(), "{name}");
    }
}

#[test]
fn every_covered_instance_has_an_entry() {
    let farm = small_farm(2, 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = run_pipeline(&farm, &ids(&[0, 1, 2, 3]), &quick_config(), &out).unwrap();
    let idx = index(&out);
    assert_eq!(idx.iter().map(|e| e.id).collect::<Vec<_>>(), farm.instances.iter().map(|i| i.id).collect::<Vec<_>>());
    for id in &r.plan.covered {
        let e = idx.iter().find(|e| e.id == *id).unwrap();
        assert_eq!(e.status, InstanceStatus::Sampled);
        assert!(out.join(e.dir.as_ref().unwrap()).join("field.bin").is_file());
    }
    assert_eq!(r.plan.coverage_pct, 100.0);
}

#[test]
fn unknown_target_and_bad_config_are_errors() {
    let farm = small_farm(1, 2);
    let dir = tempfile::tempdir().unwrap();
    let err = run_pipeline(&farm, &ids(&[42]), &quick_config(), &dir.path().join("x")).unwrap_err();
    assert!(matches!(err, PipelineError::Stage { stage: Stage::Plan, .. }));
    let cfg = PipelineConfig {
        field_resolution: 1,
        ..quick_config()
    };
    assert!(matches!(run_pipeline(&farm, &BTreeSet::new(), &cfg, &dir.path().join("y")), Err(PipelineError::InvalidConfig(_))));
}
