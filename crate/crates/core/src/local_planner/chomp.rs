//! Functional-gradient trajectory optimization.
//!
//! The trajectory is a polyline of control points `Q_0..Q_n` with uniform
//! time step `dt` (default `1/n`). The objective is
//!
//! ```text
//! f_s = sum_i |Q_{i+1} - Q_i|^2 / dt
//! f_c = sum_i c(Q_i) |Q_{i+1} - Q_i|
//! f_o = sum_interior |Q_i - D_i|^2 dt
//! f   = a_s f_s + a_c f_c + a_o f_o
//! ```
//!
//! and the gradient returned by [`functional_gradient`] is the exact gradient
//! of that sum with respect to the interior control points. The endpoints
//! are never moved.

use serde::{Deserialize, Serialize};

use super::LocalPlanError;
use crate::terrain::{obstacle_cost, ObstacleField};
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub alpha_s: f64,
    pub alpha_c: f64,
    pub alpha_o: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once an iteration lowers the objective by less than this.
    pub convergence_tol: f64,
    /// Time step between control points; `None` means `1/n`.
    pub dt: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha_s: 1.0,
            alpha_c: 10.0,
            alpha_o: 2.0,
            learning_rate: 5e-3,
            max_iters: 300,
            convergence_tol: 1e-9,
            dt: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), LocalPlanError> {
        let weights = [self.alpha_s, self.alpha_c, self.alpha_o];
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LocalPlanError::InvalidConfig("learning rate must be positive".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(LocalPlanError::InvalidConfig("weights must be non-negative".into()));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(LocalPlanError::InvalidConfig("at least one weight must be positive".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(LocalPlanError::InvalidConfig("dt must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Desired positions for the interior control points `Q_1..Q_{n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointTrack {
    pub positions: Vec<Vec2>,
}

/// Scene and weights an objective is evaluated against.
#[derive(Debug, Clone, Copy)]
pub struct ChompContext<'a> {
    pub obstacles: &'a ObstacleField,
    /// Influence radius of the obstacle cost, metres.
    pub epsilon: f64,
    pub track: Option<&'a ViewpointTrack>,
    pub cfg: &'a OptimizerConfig,
}

impl ChompContext<'_> {
    fn dt(&self, n_points: usize) -> f64 {
        self.cfg.dt.unwrap_or(1.0 / (n_points - 1) as f64)
    }

    fn desired(&self, i: usize) -> Option<Vec2> {
        self.track.and_then(|t| t.positions.get(i - 1).copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub f_s: f64,
    pub f_c: f64,
    pub f_o: f64,
    pub total: f64,
}

fn check_shape(q: &[Vec2], ctx: &ChompContext) -> Result<(), LocalPlanError> {
    if q.len() < 3 {
        return Err(LocalPlanError::TooFewPoints(q.len()));
    }
    if let Some(t) = ctx.track {
        if t.positions.len() != q.len() - 2 {
            return Err(LocalPlanError::InvalidConfig(format!(
                "viewpoint track has {} positions for {} interior points",
                t.positions.len(),
                q.len() - 2
            )));
        }
    }
    Ok(())
}

/// Weighted objective and its three terms.
pub fn objective(q: &[Vec2], ctx: &ChompContext) -> Result<ObjectiveTerms, LocalPlanError> {
    check_shape(q, ctx)?;
    let dt = ctx.dt(q.len());
    let mut t = ObjectiveTerms::default();
    for i in 0..q.len() - 1 {
        let d = q[i + 1] - q[i];
        t.f_s += d.norm_squared() / dt;
        if ctx.cfg.alpha_c > 0.0 {
            t.f_c += obstacle_cost(ctx.obstacles, q[i], ctx.epsilon).0 * d.norm();
        }
    }
    for (i, qi) in q.iter().enumerate().take(q.len() - 1).skip(1) {
        if let Some(d) = ctx.desired(i) {
            t.f_o += (qi - d).norm_squared() * dt;
        }
    }
    t.total = ctx.cfg.alpha_s * t.f_s + ctx.cfg.alpha_c * t.f_c + ctx.cfg.alpha_o * t.f_o;
    Ok(t)
}

fn unit(v: Vec2) -> Vec2 {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vec2::zeros()
    }
}

/// Per-term gradients; endpoint entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGradients {
    pub smooth: Vec<Vec2>,
    pub obstacle: Vec<Vec2>,
    pub view: Vec<Vec2>,
}

/// Unweighted gradients of `f_s`, `f_c` and `f_o`.
pub fn term_gradients(q: &[Vec2], ctx: &ChompContext) -> Result<TermGradients, LocalPlanError> {
    check_shape(q, ctx)?;
    let n = q.len();
    let dt = ctx.dt(n);
    let mut g = TermGradients {
        smooth: vec![Vec2::zeros(); n],
        obstacle: vec![Vec2::zeros(); n],
        view: vec![Vec2::zeros(); n],
    };
    let costs: Vec<(f64, Vec2)> = if ctx.cfg.alpha_c > 0.0 {
        q.iter().map(|&p| obstacle_cost(ctx.obstacles, p, ctx.epsilon)).collect()
    } else {
        vec![(0.0, Vec2::zeros()); n]
    };
    for i in 1..n - 1 {
        // -2 dt * second difference / dt^2
        g.smooth[i] = (2.0 * q[i] - q[i - 1] - q[i + 1]) * (2.0 / dt);

        let (seg_prev, seg) = (q[i] - q[i - 1], q[i + 1] - q[i]);
        let (u_prev, u) = (unit(seg_prev), unit(seg));
        let (c_prev, _) = costs[i - 1];
        let (c, grad_c) = costs[i];
        g.obstacle[i] = grad_c * seg.norm() - (u - u_prev) * c - u_prev * (c - c_prev);

        if let Some(d) = ctx.desired(i) {
            g.view[i] = (q[i] - d) * (2.0 * dt);
        }
    }
    Ok(g)
}

/// Gradient of the weighted objective with respect to every control point.
pub fn functional_gradient(q: &[Vec2], ctx: &ChompContext) -> Result<Vec<Vec2>, LocalPlanError> {
    let g = term_gradients(q, ctx)?;
    let c = ctx.cfg;
    Ok((0..q.len())
        .map(|i| g.smooth[i] * c.alpha_s + g.obstacle[i] * c.alpha_c + g.view[i] * c.alpha_o)
        .collect())
}

/// Continuous obstacle gradient `|Q'| [(I - T T^T) grad c - c kappa]` at an
/// interior control point, with `T` the unit tangent and
/// `kappa = (I - T T^T) Q'' / |Q'|^2`, both from central differences.
///
/// For a finely sampled smooth curve the discrete obstacle gradient divided
/// by `dt` converges to this value.
pub fn continuous_obstacle_gradient(q: &[Vec2], i: usize, dt: f64, field: &ObstacleField, epsilon: f64) -> Vec2 {
    let d1 = (q[i + 1] - q[i - 1]) / (2.0 * dt);
    let d2 = (q[i + 1] - 2.0 * q[i] + q[i - 1]) / (dt * dt);
    let speed = d1.norm();
    let t = d1 / speed;
    let project = |v: Vec2| v - t * t.dot(&v);
    let kappa = project(d2) / (speed * speed);
    let (c, grad_c) = obstacle_cost(field, q[i], epsilon);
    (project(grad_c) - kappa * c) * speed
}

/// Optimized control points and the objective after every iteration
/// (entry 0 is the initial objective).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub control_points: Vec<Vec2>,
    pub history: Vec<f64>,
}

/// Gradient descent `Q <- Q - lr * grad f` on the interior control points.
pub fn optimize(q0: &[Vec2], ctx: &ChompContext) -> Result<OptimizeResult, LocalPlanError> {
    ctx.cfg.validate()?;
    let mut q = q0.to_vec();
    let mut f = objective(&q, ctx)?.total;
    if !f.is_finite() {
        return Err(LocalPlanError::Diverged { iteration: 0 });
    }
    let mut history = vec![f];
    let lr = ctx.cfg.learning_rate;
    for iteration in 1..=ctx.cfg.max_iters {
        let g = functional_gradient(&q, ctx)?;
        let n = q.len();
        for (qi, gi) in q[1..n - 1].iter_mut().zip(&g[1..n - 1]) {
            *qi -= gi * lr;
        }
        let next = objective(&q, ctx)?.total;
        if !next.is_finite() {
            return Err(LocalPlanError::Diverged { iteration });
        }
        history.push(next);
        let decrease = f - next;
        f = next;
        if decrease < ctx.cfg.convergence_tol {
            break;
        }
    }
    Ok(OptimizeResult {
        control_points: q,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::Polygon;

    fn square(lo: Vec2, side: f64) -> ObstacleField {
        ObstacleField::new(vec![Polygon::new(vec![
            lo,
            lo + Vec2::new(side, 0.0),
            lo + Vec2::new(side, side),
            lo + Vec2::new(0.0, side),
        ])
        .unwrap()])
    }

    fn ctx<'a>(field: &'a ObstacleField, cfg: &'a OptimizerConfig) -> ChompContext<'a> {
        ChompContext {
            obstacles: field,
            epsilon: 0.8,
            track: None,
            cfg,
        }
    }

    fn smooth_only(dt: Option<f64>) -> OptimizerConfig {
        OptimizerConfig {
            alpha_s: 1.0,
            alpha_c: 0.0,
            alpha_o: 0.0,
            dt,
            ..Default::default()
        }
    }

    #[test]
    fn coincident_points_have_no_smoothness_cost() {
        let field = ObstacleField::default();
        let cfg = smooth_only(None);
        let q = vec![Vec2::new(1.0, 2.0); 5];
        assert_eq!(objective(&q, &ctx(&field, &cfg)).unwrap().f_s, 0.0);
    }

    #[test]
    fn unit_spaced_collinear_points() {
        let field = ObstacleField::default();
        let cfg = smooth_only(Some(1.0));
        let q = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        let t = objective(&q, &ctx(&field, &cfg)).unwrap();
        assert_eq!(t.total, 2.0);
        let g = functional_gradient(&q, &ctx(&field, &cfg)).unwrap();
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn tracking_term_vanishes_on_track() {
        let field = ObstacleField::default();
        let cfg = OptimizerConfig::default();
        let q = vec![Vec2::new(0.0, 0.0), Vec2::new(0.3, 0.4), Vec2::new(1.0, 0.1), Vec2::new(2.0, 0.0)];
        let track = ViewpointTrack {
            positions: q[1..3].to_vec(),
        };
        let c = ChompContext {
            track: Some(&track),
            ..ctx(&field, &cfg)
        };
        assert_eq!(objective(&q, &c).unwrap().f_o, 0.0);
        assert!(term_gradients(&q, &c).unwrap().view.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn mismatched_track_is_rejected() {
        let field = ObstacleField::default();
        let cfg = OptimizerConfig::default();
        let track = ViewpointTrack {
            positions: vec![Vec2::zeros()],
        };
        let c = ChompContext {
            track: Some(&track),
            ..ctx(&field, &cfg)
        };
        let q = vec![Vec2::zeros(); 4];
        assert!(matches!(objective(&q, &c), Err(LocalPlanError::InvalidConfig(_))));
    }

    #[test]
    fn invalid_configs() {
        let zero = OptimizerConfig {
            alpha_s: 0.0,
            alpha_c: 0.0,
            alpha_o: 0.0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
        let lr = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(lr.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }

    #[test]
    fn optimal_start_is_a_fixed_point() {
        let field = ObstacleField::default();
        let cfg = smooth_only(None);
        let q0: Vec<Vec2> = (0..6).map(|i| Vec2::new(i as f64 * 0.5, 1.0)).collect();
        let r = optimize(&q0, &ctx(&field, &cfg)).unwrap();
        assert!(r.history.len() <= 3);
        assert_eq!(r.control_points, q0);
    }

    #[test]
    fn zigzag_straightens() {
        let field = ObstacleField::default();
        let cfg = OptimizerConfig {
            learning_rate: 1e-2,
            ..smooth_only(None)
        };
        let q0: Vec<Vec2> = (0..9)
            .map(|i| Vec2::new(i as f64 * 0.5, if i % 2 == 1 { 0.4 } else { 0.0 }))
            .collect();
        let r = optimize(&q0, &ctx(&field, &cfg)).unwrap();
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.history.last().unwrap() < &r.history[0]);
        let dev = |q: &[Vec2]| q.iter().map(|p| p.y.abs()).fold(0.0, f64::max);
        assert!(dev(&r.control_points) < dev(&q0));
        assert_eq!(r.control_points[0], q0[0]);
        assert_eq!(r.control_points[8], q0[8]);
    }

    #[test]
    fn obstacle_term_pushes_path_out() {
        let field = square(Vec2::new(1.0, -0.3), 0.6);
        let cfg = OptimizerConfig {
            alpha_o: 0.0,
            ..Default::default()
        };
        let q0: Vec<Vec2> = (0..13).map(|i| Vec2::new(i as f64 * 0.25, 0.05)).collect();
        let min_sep = |q: &[Vec2]| q.iter().map(|&p| field.min_separation(p)).fold(f64::INFINITY, f64::min);
        let r = optimize(&q0, &ctx(&field, &cfg)).unwrap();
        assert!(min_sep(&r.control_points) > min_sep(&q0));
    }

    #[test]
    fn discrete_gradient_approaches_continuous_form() {
        // Arc of radius 3 skirting the left side of a large square, away from corners.
        let field = square(Vec2::new(0.2, -5.0), 10.0);
        let err = |n: usize| {
            let q: Vec<Vec2> = (0..=n)
                .map(|k| {
                    let a = -0.3 + 0.6 * k as f64 / n as f64;
                    Vec2::new(-3.0 + 3.0 * a.cos(), 3.0 * a.sin())
                })
                .collect();
            let cfg = OptimizerConfig {
                alpha_s: 0.0,
                alpha_c: 1.0,
                alpha_o: 0.0,
                ..Default::default()
            };
            let c = ctx(&field, &cfg);
            let dt = 1.0 / n as f64;
            let g = term_gradients(&q, &c).unwrap();
            let i = n / 2;
            let cont = continuous_obstacle_gradient(&q, i, dt, &field, 0.8);
            (g.obstacle[i] / dt - cont).norm() / cont.norm()
        };
        let (coarse, fine) = (err(20), err(160));
        assert!(fine < coarse, "{fine} !< {coarse}");
        assert!(fine < 1e-2);
    }
}
