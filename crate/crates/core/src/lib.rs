//! Planning and in-situ plant modelling for field phenotyping robots.
//!
//! The crate is organised along the data flow of a phenotyping run:
//!
//! * [`farm_map`] turns plant detections into a row-structured graph map.
//! * [`terrain`] builds a traversability grid and obstacle polygons from a
//!   terrain point cloud.
//! * [`global_planner`] greedily orders the graph nodes that cover a target set.
//! * [`local_planner`] turns consecutive global nodes into smooth,
//!   collision-free trajectories.
//! * [`radiance`] trains a voxel radiance field on the images captured along
//!   the trajectory.
//! * [`geometry`] extracts a vertex-coloured mesh from a trained field.
//! * [`pipeline`] wires everything together and owns the on-disk layout.

pub mod farm_map;
pub mod geometry;
pub mod global_planner;
pub mod io;
pub mod local_planner;
pub mod pipeline;
pub mod radiance;
pub mod terrain;

pub use nalgebra::{Vector2, Vector3};

/// Planar point or direction in metres.
pub type Vec2 = Vector2<f64>;
/// Spatial point or direction in metres.
pub type Vec3 = Vector3<f64>;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w >= std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}
