//! Run reports built from the files of a run directory.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{read_json, write_json, write_text};
use super::{PipelineConfig, PipelineError, SegmentRecord, ViewMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub targets: Vec<u32>,
    pub covered: Vec<u32>,
    pub unreachable: Vec<u32>,
    pub coverage_pct: f64,
    /// Length of the global node path.
    pub path_length_m: f64,
    /// Length of the planned trajectories.
    pub trajectory_length_m: f64,
    pub failed_segments: usize,
}

/// Run metadata written before the instance stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub scene: String,
    pub farm_seed: u64,
    pub seed: u64,
    pub config: PipelineConfig,
    pub plan: PlanStats,
    pub segments: Vec<SegmentRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Sampled,
    NotSampled,
    Unreachable,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub id: u32,
    pub status: InstanceStatus,
    pub dir: Option<String>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRow {
    pub view_mode: ViewMode,
    pub occ_weight: f64,
    /// On the held-out views.
    pub psnr_db: f64,
    /// Last training epoch.
    pub train_psnr_db: f64,
    pub prefix_density: f64,
    pub epochs: usize,
    pub train_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub id: u32,
    pub views: usize,
    pub handheld_views: usize,
    pub eval_views: usize,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    pub mesh_threshold: f64,
    pub configs: Vec<ConfigRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scene: String,
    pub farm_seed: u64,
    pub seed: u64,
    pub plan: PlanStats,
    pub segments: Vec<SegmentRecord>,
    pub index: Vec<InstanceEntry>,
    pub instances: Vec<InstanceSummary>,
    pub config: PipelineConfig,
}

impl RunReport {
    pub fn incomplete(&self) -> Vec<u32> {
        self.index.iter().filter(|e| e.status == InstanceStatus::Incomplete).map(|e| e.id).collect()
    }

    /// Some target was unreachable or could not be modelled.
    pub fn is_partial(&self) -> bool {
        !self.plan.unreachable.is_empty() || !self.incomplete().is_empty()
    }
}

fn scene_label(scene: &str, id: u32) -> String {
    format!("{scene}/plant_{id}")
}

/// Reads a run directory and writes report.csv, report.json, summary.txt,
/// psnr.dat and curves.dat into it.
pub fn report(run: &Path) -> Result<RunReport, PipelineError> {
    if !run.is_dir() {
        return Err(PipelineError::MissingRunDir(run.display().to_string()));
    }
    let info: RunInfo = read_json(&run.join("run.json"))?;
    let index: Vec<InstanceEntry> = read_json(&run.join("instances").join("index.json"))?;
    let mut instances = Vec::new();
    for e in &index {
        if e.status != InstanceStatus::Sampled {
            continue;
        }
        let path = run.join("instances").join(e.id.to_string()).join("summary.json");
        if path.is_file() {
            instances.push(read_json::<InstanceSummary>(&path)?);
        }
    }
    let cfg = &info.config;

    let mut csv = String::from("scene,view_mode,occ_weight,PSNR_dB,train_time_s\n");
    for e in &index {
        let label = scene_label(&info.scene, e.id);
        match instances.iter().find(|s| s.id == e.id) {
            Some(s) => {
                for c in &s.configs {
                    let time = if cfg.report_wall_time {
                        format!("{:.3}", c.train_time_s)
                    } else {
                        "-".to_string()
                    };
                    writeln!(csv, "{label},{},{},{:.4},{time}", c.view_mode, c.occ_weight, c.psnr_db).unwrap();
                }
            }
            None if matches!(e.status, InstanceStatus::Sampled | InstanceStatus::Incomplete) => {
                for (mode, occ) in cfg.configurations() {
                    writeln!(csv, "{label},{mode},{occ},incomplete,-").unwrap();
                }
            }
            None => {}
        }
    }
    write_text(&run.join("report.csv"), &csv)?;

    // One row per instance, one column per configuration.
    let configs = cfg.configurations();
    let mut dat = String::from("# instance");
    for (mode, occ) in &configs {
        write!(dat, " {mode}_occ{occ}").unwrap();
    }
    dat.push('\n');
    for s in &instances {
        write!(dat, "{}", s.id).unwrap();
        for (mode, occ) in &configs {
            match s.configs.iter().find(|c| c.view_mode == *mode && c.occ_weight == *occ) {
                Some(c) => write!(dat, " {:.4}", c.psnr_db).unwrap(),
                None => dat.push_str(" NaN"),
            }
        }
        dat.push('\n');
    }
    write_text(&run.join("psnr.dat"), &dat)?;

    // Training curves, one gnuplot block per instance and configuration.
    let mut curves = String::new();
    for s in &instances {
        let Ok(text) = std::fs::read_to_string(run.join("instances").join(s.id.to_string()).join("metrics.csv")) else {
            continue;
        };
        let mut current = String::new();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 6 {
                continue;
            }
            let key = format!("{}_occ{}", f[0], f[1]);
            if key != current {
                if !current.is_empty() {
                    curves.push_str("\n\n");
                }
                writeln!(curves, "# instance {} {key}\n# epoch l_color l_occ psnr_db", s.id).unwrap();
                current = key;
            }
            writeln!(curves, "{} {} {} {}", f[2], f[3], f[4], f[5]).unwrap();
        }
        if !current.is_empty() {
            curves.push_str("\n\n");
        }
    }
    write_text(&run.join("curves.dat"), &curves)?;

    let report = RunReport {
        scene: info.scene.clone(),
        farm_seed: info.farm_seed,
        seed: info.seed,
        plan: info.plan.clone(),
        segments: info.segments.clone(),
        index,
        instances,
        config: info.config.clone(),
    };
    write_json(&run.join("report.json"), &report)?;
    write_text(&run.join("summary.txt"), &summary_text(&report))?;
    Ok(report)
}

fn ids(v: &[u32]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
    }
}

fn summary_text(r: &RunReport) -> String {
    let p = &r.plan;
    let mut s = String::new();
    writeln!(s, "scene {} (farm seed {}, run seed {})", r.scene, r.farm_seed, r.seed).unwrap();
    writeln!(s, "targets: {}", ids(&p.targets)).unwrap();
    writeln!(s, "covered: {} ({:.1}%)", ids(&p.covered), p.coverage_pct).unwrap();
    writeln!(s, "unreachable: {}", ids(&p.unreachable)).unwrap();
    writeln!(s, "incomplete: {}", ids(&r.incomplete())).unwrap();
    writeln!(s, "global path {:.2} m, trajectories {:.2} m", p.path_length_m, p.trajectory_length_m).unwrap();
    let fallback = r.segments.iter().filter(|x| x.status == super::SegmentStatus::Fallback).count();
    writeln!(s, "segments: {} planned, {} fallback, {} failed", r.segments.len(), fallback, p.failed_segments).unwrap();
    for inst in &r.instances {
        writeln!(
            s,
            "plant {}: {} views, mesh {} vertices / {} triangles",
            inst.id, inst.views, inst.mesh_vertices, inst.mesh_triangles
        )
        .unwrap();
        for c in &inst.configs {
            writeln!(
                s,
                "  {} occ {}: PSNR {:.2} dB (train {:.2} dB), prefix density {:.4}",
                c.view_mode, c.occ_weight, c.psnr_db, c.train_psnr_db, c.prefix_density
            )
            .unwrap();
        }
    }
    s
}
