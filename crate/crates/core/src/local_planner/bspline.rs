//! Clamped rational B-splines over planar control points.

use serde::{Deserialize, Serialize};

use super::LocalPlanError;
use crate::Vec2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BSplineConfig {
    pub degree: usize,
    /// Per control point weights; `None` means all ones.
    pub weights: Option<Vec<f64>>,
    pub samples_per_span: usize,
}

impl Default for BSplineConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            weights: None,
            samples_per_span: 10,
        }
    }
}

/// Rational B-spline `sum N_i w_i Q_i / sum N_i w_i` with `n_q + m + 1` knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSpline {
    pub degree: usize,
    pub knots: Vec<f64>,
    pub weights: Vec<f64>,
    pub control_points: Vec<Vec2>,
}

/// Clamped knots on `[0, 1]` with uniform interior spacing.
pub fn clamped_uniform_knots(n_points: usize, degree: usize) -> Vec<f64> {
    let spans = n_points - degree;
    let mut k = vec![0.0; degree + 1];
    k.extend((1..spans).map(|i| i as f64 / spans as f64));
    k.extend(std::iter::repeat(1.0).take(degree + 1));
    k
}

impl BSpline {
    pub fn new(
        control_points: Vec<Vec2>,
        degree: usize,
        knots: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self, LocalPlanError> {
        let n = control_points.len();
        let bad = |m: String| Err(LocalPlanError::InvalidKnots(m));
        if degree == 0 || n < degree + 1 {
            return bad(format!("{n} control points cannot carry degree {degree}"));
        }
        if knots.len() != n + degree + 1 {
            return bad(format!("expected {} knots, got {}", n + degree + 1, knots.len()));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] < w[0]) {
            return bad("knots must be finite and non-decreasing".into());
        }
        let (first, last) = (knots[0], knots[knots.len() - 1]);
        let clamped = knots[..=degree].iter().all(|&k| k == first) && knots[n..].iter().all(|&k| k == last);
        if !clamped || last <= first {
            return bad("knot vector must be clamped with a non-empty domain".into());
        }
        if weights.len() != n || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(LocalPlanError::InvalidConfig("weights must be positive, one per control point".into()));
        }
        Ok(Self {
            degree,
            knots,
            weights,
            control_points,
        })
    }

    /// Clamped uniform spline from a config. The degree drops to `n - 1`
    /// when there are too few control points.
    pub fn from_config(control_points: Vec<Vec2>, cfg: &BSplineConfig) -> Result<Self, LocalPlanError> {
        let n = control_points.len();
        if n < 2 {
            return Err(LocalPlanError::TooFewPoints(n));
        }
        let degree = cfg.degree.min(n - 1);
        let weights = cfg.weights.clone().unwrap_or_else(|| vec![1.0; n]);
        let knots = clamped_uniform_knots(n, degree);
        Self::new(control_points, degree, knots, weights)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.control_points.len()])
    }

    /// Index `k` with `knots[k] <= t < knots[k + 1]`, clamped to the last
    /// non-empty span at the right end.
    fn span(&self, t: f64) -> usize {
        let n = self.control_points.len();
        let (lo, hi) = self.domain();
        if t >= hi {
            return (self.degree..n).rev().find(|&k| self.knots[k] < self.knots[k + 1]).unwrap();
        }
        if t <= lo {
            return (self.degree..n).find(|&k| self.knots[k] < self.knots[k + 1]).unwrap();
        }
        let mut k = self.knots[..=n].partition_point(|&x| x <= t) - 1;
        k = k.clamp(self.degree, n - 1);
        k
    }

    /// Non-zero basis values `N_{k-m..=k}` at `t`.
    fn basis(&self, k: usize, t: f64) -> Vec<f64> {
        let m = self.degree;
        let u = &self.knots;
        let mut n = vec![0.0; m + 1];
        let mut left = vec![0.0; m + 1];
        let mut right = vec![0.0; m + 1];
        n[0] = 1.0;
        for j in 1..=m {
            left[j] = t - u[k + 1 - j];
            right[j] = u[k + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        n
    }

    /// Curve point at parameter `t`, clamped to the domain.
    pub fn eval(&self, t: f64) -> Vec2 {
        let (lo, hi) = self.domain();
        let t = t.clamp(lo, hi);
        let k = self.span(t);
        let basis = self.basis(k, t);
        let mut num = Vec2::zeros();
        let mut den = 0.0;
        for (r, b) in basis.iter().enumerate() {
            let i = k - self.degree + r;
            let w = b * self.weights[i];
            num += self.control_points[i] * w;
            den += w;
        }
        num / den
    }

    /// Indices of the control points that influence parameter `t`.
    pub fn active_points(&self, t: f64) -> std::ops::RangeInclusive<usize> {
        let (lo, hi) = self.domain();
        let k = self.span(t.clamp(lo, hi));
        k - self.degree..=k
    }

    /// Samples at `samples_per_span` uniform parameter steps per knot span,
    /// including both ends.
    pub fn sample(&self, samples_per_span: usize) -> Vec<(f64, Vec2)> {
        let spans = self.control_points.len() - self.degree;
        let total = spans * samples_per_span.max(1);
        let (lo, hi) = self.domain();
        (0..=total)
            .map(|s| {
                let t = lo + (hi - lo) * s as f64 / total as f64;
                (t, self.eval(t))
            })
            .collect()
    }
}
