//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use pheno_core::farm_map::{build_graph, detect_rows, GraphMap, Instance, MapConfig};
use pheno_core::global_planner::{is_fully_covered, GlobalPath, PlannerConfig};
use pheno_core::terrain::{ObstacleField, Polygon};
use pheno_core::{wrap_angle, Vec2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn square_instance(id: u32, x: f64, y: f64, half: f64) -> Instance {
    Instance {
        id,
        center: Vec2::new(x, y),
        half_extents: Vec2::repeat(half),
        yaw: 0.0,
        height: 1.0,
    }
}

/// A seeded farm of up to 5 rows of up to 8 plants, with up to 12 targets
/// and a start point left of the rows.
pub struct RandomFarm {
    pub map: GraphMap,
    pub targets: BTreeSet<u32>,
    pub start: Vec2,
}

pub fn random_farm(seed: u64) -> RandomFarm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.gen_range(1..=5);
    let per_row = rng.gen_range(1..=8);
    let spacing = rng.gen_range(1.8..2.6);
    let row_spacing = rng.gen_range(2.8..3.6);
    let mut v = Vec::new();
    for r in 0..rows {
        for k in 0..per_row {
            v.push(Instance {
                id: (10 * r + k) as u32,
                center: Vec2::new(
                    k as f64 * spacing + rng.gen_range(-0.1..0.1),
                    r as f64 * row_spacing + rng.gen_range(-0.1..0.1),
                ),
                half_extents: Vec2::new(rng.gen_range(0.25..0.45), rng.gen_range(0.25..0.45)),
                yaw: rng.gen_range(-0.05..0.05),
                height: 1.0,
            });
        }
    }
    let cfg = MapConfig::default();
    let map = build_graph(&v, &detect_rows(&v, &cfg), None, &cfg);
    let mut ids: Vec<u32> = v.iter().map(|i| i.id).collect();
    ids.shuffle(&mut rng);
    let n = rng.gen_range(0..=ids.len().min(12));
    let targets = ids[..n].iter().copied().collect();
    let start = Vec2::new(-4.0, rng.gen_range(-1.0..(rows as f64 * row_spacing)));
    RandomFarm { map, targets, start }
}

/// Problems found in a plan: uncovered reachable targets, coverage claims
/// that do not hold and heading jumps between consecutive row nodes.
pub fn plan_violations(p: &GlobalPath, map: &GraphMap, targets: &BTreeSet<u32>, cfg: &PlannerConfig) -> Vec<String> {
    let mut out = Vec::new();
    for t in targets {
        if !p.covered_instances.contains(t) && !p.unreachable.contains(t) {
            out.push(format!("target {t} neither covered nor unreachable"));
        }
    }
    for &t in &p.covered_instances {
        if !is_fully_covered(&p.node_ids, t, map, cfg.cover_min_corners) {
            out.push(format!("instance {t} reported covered but is not"));
        }
    }
    for w in p.node_ids.windows(2) {
        let (a, b) = (map.node(w[0]), map.node(w[1]));
        let (Some(x), Some(y)) = (a.instance_id, b.instance_id) else { continue };
        if map.group_of(x).map(|g| g.id) != map.group_of(y).map(|g| g.id) {
            continue;
        }
        if wrap_angle(a.heading - b.heading).abs() > cfg.max_heading_change + 1e-12 {
            out.push(format!("heading jump between nodes {} and {}", a.id, b.id));
        }
    }
    out
}

pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    Polygon::new(vec![Vec2::new(x0, y0), Vec2::new(x1, y0), Vec2::new(x1, y1), Vec2::new(x0, y1)]).unwrap()
}

fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (p - a - d * t).norm()
}

/// Whether the signed separation may fail to be differentiable near `q`:
/// `q` is within `corner_clear` of a polygon vertex or almost equidistant
/// to two edges.
pub fn near_kink(field: &ObstacleField, q: Vec2, corner_clear: f64) -> bool {
    let mut d: Vec<f64> = Vec::new();
    for poly in &field.polygons {
        let v = poly.vertices();
        for i in 0..v.len() {
            if (v[i] - q).norm() < corner_clear {
                return true;
            }
            d.push(segment_distance(q, v[i], v[(i + 1) % v.len()]));
        }
    }
    d.sort_by(f64::total_cmp);
    d.len() > 1 && d[1] - d[0] < 1e-3
}
