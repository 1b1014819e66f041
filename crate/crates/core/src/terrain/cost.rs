use serde::{Deserialize, Serialize};

use super::ObstacleField;
use crate::Vec2;

/// Weights and critical values of the traversability model and the obstacle
/// cost field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostFieldConfig {
    /// Distance below which the obstacle cost becomes non-zero, metres.
    pub epsilon: f64,
    /// Maximum allowed slope, radians.
    pub slope_crit: f64,
    /// Maximum allowed height gap between neighbouring cells, metres.
    pub step_crit: f64,
    pub slope_weight: f64,
    pub step_weight: f64,
    /// Side length of the cube used to gather points for the slope plane fit.
    pub slope_window: f64,
    /// Points higher than this above the cell ground count as collision points.
    pub body_clearance: f64,
}

impl Default for CostFieldConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.8,
            slope_crit: 0.35,
            step_crit: 0.15,
            slope_weight: 0.5,
            step_weight: 0.5,
            slope_window: 0.5,
            body_clearance: 0.3,
        }
    }
}

/// Cost of a signed separation `phi` and its derivative `dc/dphi`.
///
/// Quadratic inside the influence radius, linear once the point is inside an
/// obstacle; the two pieces meet with matching value and slope at `phi = 0`.
pub fn obstacle_cost_of_separation(phi: f64, epsilon: f64) -> (f64, f64) {
    if phi >= epsilon {
        (0.0, 0.0)
    } else if phi > 0.0 {
        let d = epsilon - phi;
        (d * d / (2.0 * epsilon), -d / epsilon)
    } else {
        (-phi + 0.5 * epsilon, -1.0)
    }
}

/// Obstacle cost `c(q)` and its spatial gradient.
pub fn obstacle_cost(field: &ObstacleField, q: Vec2, epsilon: f64) -> (f64, Vec2) {
    let Some((phi, grad_phi)) = field.signed_distance_with_gradient(q) else {
        return (0.0, Vec2::zeros());
    };
    let (c, dc) = obstacle_cost_of_separation(phi, epsilon);
    (c, grad_phi * dc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::Polygon;

    fn unit_square() -> ObstacleField {
        ObstacleField::new(vec![Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ])
        .unwrap()])
    }

    #[test]
    fn cost_is_zero_at_influence_boundary() {
        let eps = 0.8;
        let (c, g) = obstacle_cost(&unit_square(), Vec2::new(1.0 + eps, 0.5), eps);
        assert_eq!(c, 0.0);
        assert_eq!(g, Vec2::zeros());
    }

    #[test]
    fn cost_at_half_epsilon() {
        let eps = 0.8;
        let (c, g) = obstacle_cost(&unit_square(), Vec2::new(1.0 + eps / 2.0, 0.5), eps);
        assert!((c - eps / 8.0).abs() < 1e-15);
        // dc/dphi = -1/2 and grad phi = +x
        assert!((g - Vec2::new(-0.5, 0.0)).norm() < 1e-12);
        let h = 1e-6;
        let fd = (obstacle_cost(&unit_square(), Vec2::new(1.0 + eps / 2.0 + h, 0.5), eps).0
            - obstacle_cost(&unit_square(), Vec2::new(1.0 + eps / 2.0 - h, 0.5), eps).0)
            / (2.0 * h);
        assert!((fd - g.x).abs() < 1e-8);
    }

    #[test]
    fn cost_inside_is_linear() {
        let eps = 0.8;
        // 0.2 deep from the left edge, nearest edge is x = 0
        let (c, _) = obstacle_cost(&unit_square(), Vec2::new(0.2, 0.5), eps);
        assert!((c - (0.2 + eps / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn pieces_join_smoothly() {
        let eps = 0.5;
        let (c0, d0) = obstacle_cost_of_separation(1e-12, eps);
        let (c1, d1) = obstacle_cost_of_separation(-1e-12, eps);
        assert!((c0 - c1).abs() < 1e-10);
        assert!((d0 - d1).abs() < 1e-10);
    }

    #[test]
    fn empty_field_costs_nothing() {
        let (c, g) = obstacle_cost(&ObstacleField::default(), Vec2::new(3.0, 3.0), 0.8);
        assert_eq!((c, g), (0.0, Vec2::zeros()));
    }
}
