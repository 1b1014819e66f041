//! Camera placement for simulated image capture.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::farm_map::Instance;
use crate::local_planner::{SegmentKind, Trajectory};
use crate::radiance::{render_reference, AnalyticScene, Intrinsics, Pose, PosedImage, K_REF};
use crate::{Vec2, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureConfig {
    pub image_size: usize,
    /// Horizontal field of view, radians.
    pub fov: f64,
    /// Camera height above the plant base as a fraction of plant height.
    pub camera_height: f64,
    /// Look-at height as a fraction of plant height.
    pub target_height: f64,
    /// Samples per pixel when rendering reference images.
    pub reference_samples: usize,
    /// Views of the dense orbit, split evenly over the two rings.
    pub orbit_views: usize,
    /// Ring radii and heights in plant heights.
    pub orbit_radii: [f64; 2],
    pub orbit_heights: [f64; 2],
    /// Held-out evaluation views on a ring between the two orbit rings.
    pub eval_views: usize,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            fov: 1.3,
            camera_height: 0.6,
            target_height: 0.5,
            reference_samples: K_REF,
            orbit_views: 30,
            orbit_radii: [1.2, 1.6],
            orbit_heights: [1.1, 0.5],
            eval_views: 8,
        }
    }
}

impl CaptureConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.image_size, self.image_size, self.fov)
    }
}

fn up() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

fn look_target(inst: &Instance, ground: f64, cfg: &CaptureConfig) -> Vec3 {
    Vec3::new(inst.center.x, inst.center.y, ground + cfg.target_height * inst.height)
}

/// Viewpoints of one viewpoint segment and the delivered samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTrack {
    pub viewpoints: Vec<Vec2>,
    pub samples: Vec<Vec2>,
}

impl ViewTrack {
    pub fn from_trajectory(t: &Trajectory) -> Option<Self> {
        (t.kind == SegmentKind::Viewpoint).then(|| Self {
            viewpoints: t.viewpoints.clone(),
            samples: t.sample_points(),
        })
    }
}

/// Robot-acquisition poses: for every viewpoint, the track sample nearest to
/// it, looking at the plant. Viewpoints shared by consecutive segments are
/// used once.
pub fn trajectory_poses(inst: &Instance, ground: f64, tracks: &[ViewTrack], cfg: &CaptureConfig) -> Vec<Pose> {
    let target = look_target(inst, ground, cfg);
    let mut spots: Vec<Vec2> = Vec::new();
    for t in tracks {
        for v in &t.viewpoints {
            let Some(p) = t.samples.iter().min_by(|a, b| (*a - v).norm().total_cmp(&(*b - v).norm())) else {
                continue;
            };
            if !spots.iter().any(|s| (s - p).norm() < 1e-9) {
                spots.push(*p);
            }
        }
    }
    spots
        .iter()
        .map(|p| Pose::look_at(Vec3::new(p.x, p.y, ground + cfg.camera_height * inst.height), target, up()))
        .collect()
}

fn ring(inst: &Instance, ground: f64, n: usize, radius: f64, height: f64, phase: f64, cfg: &CaptureConfig) -> Vec<Pose> {
    let target = look_target(inst, ground, cfg);
    let h = inst.height;
    (0..n)
        .map(|i| {
            let a = phase + TAU * i as f64 / n as f64;
            let eye = Vec3::new(
                inst.center.x + radius * h * a.cos(),
                inst.center.y + radius * h * a.sin(),
                ground + height * h,
            );
            Pose::look_at(eye, target, up())
        })
        .collect()
}

/// Handheld-like dense poses: a full orbit at two radii.
pub fn orbit_poses(inst: &Instance, ground: f64, cfg: &CaptureConfig) -> Vec<Pose> {
    let inner = cfg.orbit_views / 2;
    let mut out = ring(inst, ground, inner, cfg.orbit_radii[0], cfg.orbit_heights[0], 0.0, cfg);
    let outer = cfg.orbit_views - inner;
    out.extend(ring(inst, ground, outer, cfg.orbit_radii[1], cfg.orbit_heights[1], 0.2, cfg));
    out
}

/// Held-out poses used to score every training configuration.
pub fn eval_poses(inst: &Instance, ground: f64, cfg: &CaptureConfig) -> Vec<Pose> {
    let r = 0.5 * (cfg.orbit_radii[0] + cfg.orbit_radii[1]);
    let z = 0.5 * (cfg.orbit_heights[0] + cfg.orbit_heights[1]);
    ring(inst, ground, cfg.eval_views, r, z, 0.37, cfg)
}

/// Reference images of `scene`, quantized to 8 bits as they are stored.
pub fn render_views(scene: &AnalyticScene, poses: &[Pose], cfg: &CaptureConfig) -> Vec<PosedImage> {
    let k = cfg.intrinsics();
    poses
        .par_iter()
        .map(|p| {
            let mut img = render_reference(scene, p, &k, cfg.reference_samples);
            img.image = img.image.quantized();
            img
        })
        .collect()
}
