//! Terrain analysis: traversability grid, obstacle polygons and the obstacle
//! cost field used by the trajectory optimizer.
//!
//! Each occupied grid cell carries three risks that are folded into a single
//! traversability value
//!
//! ```text
//! cost = collision + slope_weight * slope / slope_crit + step_weight * step / step_crit
//! ```
//!
//! Cells without measurement points are negative obstacles and get an
//! infinite cost.

mod cost;
mod grid;
mod obstacles;

pub use cost::{obstacle_cost, obstacle_cost_of_separation, CostFieldConfig};
pub use grid::{build_grid, plane_slope, slope_at, CellRisk, GridHeader, TraversabilityGrid};
pub use obstacles::{extract_obstacles, ObstacleField, Polygon};
