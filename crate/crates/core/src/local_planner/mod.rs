//! Local trajectories between consecutive global-path nodes.
//!
//! A segment starts as a collision-free polyline (RRT through viewpoints on
//! a plant flank, or A* across the grid), is smoothed by functional-gradient
//! descent, parameterized as a B-spline and finally timed at constant speed.
//! Delivered samples are audited against the obstacle field; when the
//! smoothed curve fails the audit the raw polyline is delivered instead.

mod bspline;
mod chomp;
mod initial;

pub use bspline::{clamped_uniform_knots, BSpline, BSplineConfig};
pub use chomp::{
    continuous_obstacle_gradient, functional_gradient, objective, optimize, term_gradients, ChompContext,
    ObjectiveTerms, OptimizeResult, OptimizerConfig, TermGradients, ViewpointTrack,
};
pub use initial::{
    astar, grid_neighbours, initial_path_transit, initial_path_viewpoints, merge_collinear, preset_viewpoints, rrt,
    segment_cells, shortcut, step_cost, subdivide, AStarConfig, GridPath, RrtConfig,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::farm_map::{Instance, PlanningNode};
use crate::terrain::{ObstacleField, TraversabilityGrid};
use crate::Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalPlanError {
    #[error("trajectory needs at least 3 control points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("objective became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("RRT found no path between viewpoints {from} and {to}")]
    RrtFailed { from: usize, to: usize },
    #[error("viewpoint {index} lies inside an obstacle")]
    ViewpointBlocked { index: usize },
    #[error("segment endpoints must belong to the same instance")]
    NotSameInstance,
    #[error("no traversable path between the segment endpoints")]
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Along a plant flank, capturing views.
    Viewpoint,
    /// Between plants or rows.
    Transit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedLimits {
    pub sampling: f64,
    pub transit: f64,
}

impl Default for SpeedLimits {
    fn default() -> Self {
        Self {
            sampling: 0.2,
            transit: 1.0,
        }
    }
}

impl SpeedLimits {
    pub fn for_kind(&self, kind: SegmentKind) -> f64 {
        match kind {
            SegmentKind::Viewpoint => self.sampling,
            SegmentKind::Transit => self.transit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
}

/// Constant-speed timestamps by arc length. Repeated points are dropped, so
/// a zero-length curve yields a single sample at `t = 0`.
pub fn time_parameterize(points: &[Vec2], v_max: f64) -> Vec<TimedSample> {
    assert!(v_max > 0.0, "speed must be positive");
    let mut out: Vec<TimedSample> = Vec::with_capacity(points.len());
    let mut s = 0.0;
    let mut last: Option<Vec2> = None;
    for &p in points {
        if let Some(q) = last {
            let d = (p - q).norm();
            if d == 0.0 {
                continue;
            }
            s += d;
        }
        out.push(TimedSample {
            t: s / v_max,
            x: p.x,
            y: p.y,
            speed: v_max,
        });
        last = Some(p);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalPlannerConfig {
    pub optimizer: OptimizerConfig,
    pub bspline: BSplineConfig,
    pub rrt: RrtConfig,
    pub astar: AStarConfig,
    pub speeds: SpeedLimits,
    /// Preset viewpoints per flank.
    pub n_views: usize,
    /// Largest distance between a viewpoint and the delivered trajectory, metres.
    pub view_tol: f64,
    /// Largest spacing of control points handed to the optimizer, metres.
    pub control_spacing: f64,
    /// Longer polylines are optimized in independent pieces of this size.
    pub max_control_points: usize,
    /// Influence radius of the obstacle cost, metres.
    pub epsilon: f64,
}

impl Default for LocalPlannerConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            bspline: BSplineConfig::default(),
            rrt: RrtConfig::default(),
            astar: AStarConfig::default(),
            speeds: SpeedLimits::default(),
            n_views: 6,
            view_tol: 0.1,
            control_spacing: 0.25,
            max_control_points: 40,
            epsilon: 0.8,
        }
    }
}

/// A planned, timed segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: SegmentKind,
    pub from_node: usize,
    pub to_node: usize,
    /// Polyline the optimizer started from.
    pub initial: Vec<Vec2>,
    pub control_points: Vec<Vec2>,
    pub spline: Option<BSpline>,
    pub samples: Vec<TimedSample>,
    pub objective_history: Vec<f64>,
    pub viewpoints: Vec<Vec2>,
    /// Set when the smoothed curve failed the audit and the raw polyline was delivered.
    pub fallback: bool,
    pub seed: u64,
}

impl Trajectory {
    pub fn sample_points(&self) -> Vec<Vec2> {
        self.samples.iter().map(|s| Vec2::new(s.x, s.y)).collect()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(0.0)
    }

    pub fn length(&self) -> f64 {
        self.sample_points().windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Export document with the configuration echoed.
    pub fn to_json(&self, cfg: &LocalPlannerConfig) -> serde_json::Value {
        let spline = self.spline.as_ref().map(|s| {
            serde_json::json!({"degree": s.degree, "knots": s.knots, "weights": s.weights})
        });
        serde_json::json!({
            "kind": self.kind,
            "from_node": self.from_node,
            "to_node": self.to_node,
            "control_points": self.control_points.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
            "spline": spline,
            "samples": self.samples,
            "objective_history": self.objective_history,
            "viewpoints": self.viewpoints.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
            "fallback": self.fallback,
            "seed": self.seed,
            "config": cfg,
        })
    }
}

/// Splits `pts` into consecutive pieces of at most `max` points sharing
/// their end points.
fn chunks(pts: &[Vec2], max: usize) -> Vec<&[Vec2]> {
    let step = max.max(3) - 1;
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < pts.len() {
        let end = (start + step).min(pts.len() - 1);
        out.push(&pts[start..=end]);
        start = end;
    }
    out
}

/// Smallest distance from `p` to any sample, measured along the sample polyline.
pub fn distance_to_polyline(p: Vec2, pts: &[Vec2]) -> f64 {
    if pts.len() == 1 {
        return (p - pts[0]).norm();
    }
    pts.windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            let t = if d.norm_squared() > 0.0 {
                ((p - w[0]).dot(&d) / d.norm_squared()).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (p - (w[0] + d * t)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Plans one segment between two global-path nodes.
///
/// Viewpoint segments need `inst`, the instance both nodes belong to.
/// Transit segments use A* when a grid is given and RRT otherwise.
#[allow(clippy::too_many_arguments)]
pub fn plan_segment(
    kind: SegmentKind,
    a: &PlanningNode,
    b: &PlanningNode,
    inst: Option<&Instance>,
    field: &ObstacleField,
    grid: Option<&TraversabilityGrid>,
    cfg: &LocalPlannerConfig,
    seed: u64,
) -> Result<Trajectory, LocalPlanError> {
    let rrt_cfg = RrtConfig { seed, ..cfg.rrt };
    let (raw, viewpoints) = match kind {
        SegmentKind::Viewpoint => {
            let inst = inst.ok_or(LocalPlanError::NotSameInstance)?;
            initial_path_viewpoints(a, b, inst, field, cfg.n_views, &rrt_cfg)?
        }
        SegmentKind::Transit => {
            let path = match grid {
                Some(g) => initial_path_transit(g, a.position, b.position, &cfg.astar)?,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rrt(a.position, b.position, field, &rrt_cfg, &mut rng)
                        .ok_or(LocalPlanError::RrtFailed { from: 0, to: 1 })?
                }
            };
            (path, Vec::new())
        }
    };
    let dense = subdivide(&raw, cfg.control_spacing);

    let mut control_points = vec![dense[0]];
    let mut history: Vec<f64> = Vec::new();
    for piece in chunks(&dense, cfg.max_control_points) {
        let result = if piece.len() >= 3 {
            let track = ViewpointTrack {
                positions: piece[1..piece.len() - 1].to_vec(),
            };
            let ctx = ChompContext {
                obstacles: field,
                epsilon: cfg.epsilon,
                track: (kind == SegmentKind::Viewpoint).then_some(&track),
                cfg: &cfg.optimizer,
            };
            optimize(piece, &ctx)?
        } else {
            OptimizeResult {
                control_points: piece.to_vec(),
                history: Vec::new(),
            }
        };
        // Pieces are optimized independently; the history adds them up.
        if history.len() < result.history.len() {
            let last = history.last().copied().unwrap_or(0.0);
            history.resize(result.history.len(), last);
        }
        let piece_last = result.history.last().copied().unwrap_or(0.0);
        for (k, h) in history.iter_mut().enumerate() {
            *h += result.history.get(k).copied().unwrap_or(piece_last);
        }
        control_points.extend_from_slice(&result.control_points[1..]);
    }

    let spline = BSpline::from_config(control_points.clone(), &cfg.bspline)?;
    let smooth: Vec<Vec2> = spline
        .sample(cfg.bspline.samples_per_span)
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let passes = |pts: &[Vec2]| {
        pts.iter().all(|&p| field.min_separation(p) >= 0.0)
            && viewpoints.iter().all(|&v| distance_to_polyline(v, pts) <= cfg.view_tol)
    };
    let (spline, points, fallback) = if passes(&smooth) {
        (Some(spline), smooth, false)
    } else {
        log::debug!("segment {}->{} failed the audit, delivering the raw polyline", a.id, b.id);
        (None, dense.clone(), true)
    };
    let samples = time_parameterize(&points, cfg.speeds.for_kind(kind));
    Ok(Trajectory {
        kind,
        from_node: a.id,
        to_node: b.id,
        initial: dense,
        control_points,
        spline,
        samples,
        objective_history: history,
        viewpoints,
        fallback,
        seed,
    })
}
