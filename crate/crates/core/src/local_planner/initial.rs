//! Initial paths: RRT through preset viewpoints along a plant flank, and
//! A* over the traversability grid between plants.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LocalPlanError;
use crate::farm_map::{Instance, PlanningNode};
use crate::terrain::{ObstacleField, TraversabilityGrid};
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrtConfig {
    pub step: f64,
    pub goal_bias: f64,
    pub max_samples: usize,
    /// Sampling box padding around the two endpoints, metres.
    pub padding: f64,
    /// Minimum clearance of every tree edge from the obstacles, metres.
    pub margin: f64,
    pub seed: u64,
}

impl Default for RrtConfig {
    fn default() -> Self {
        Self {
            step: 0.25,
            goal_bias: 0.1,
            max_samples: 5000,
            padding: 3.0,
            margin: 0.05,
            seed: 0,
        }
    }
}

/// `n` evenly spaced positions on `a -> b`, both ends included.
pub fn preset_viewpoints(a: Vec2, b: Vec2, n: usize) -> Vec<Vec2> {
    match n {
        0 => Vec::new(),
        1 => vec![(a + b) * 0.5],
        _ => (0..n).map(|k| a + (b - a) * (k as f64 / (n - 1) as f64)).collect(),
    }
}

/// Tree edges are straight and must keep `margin` from every obstacle.
fn free(field: &ObstacleField, a: Vec2, b: Vec2, margin: f64) -> bool {
    field.segment_is_free(a, b, margin)
}

/// Goal-biased RRT from `from` to `to`, followed by greedy shortcutting.
/// Returns `None` when the sample budget runs out.
pub fn rrt(from: Vec2, to: Vec2, field: &ObstacleField, cfg: &RrtConfig, rng: &mut ChaCha8Rng) -> Option<Vec<Vec2>> {
    if free(field, from, to, cfg.margin) {
        return Some(vec![from, to]);
    }
    let lo = from.inf(&to) - Vec2::repeat(cfg.padding);
    let hi = from.sup(&to) + Vec2::repeat(cfg.padding);
    let mut nodes = vec![from];
    let mut parent = vec![usize::MAX];
    for _ in 0..cfg.max_samples {
        let sample = if rng.gen::<f64>() < cfg.goal_bias {
            to
        } else {
            Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y))
        };
        let (near, _) = nodes
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - sample).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let d = sample - nodes[near];
        let len = d.norm();
        if len < 1e-12 {
            continue;
        }
        let new = if len > cfg.step { nodes[near] + d * (cfg.step / len) } else { sample };
        if !free(field, nodes[near], new, cfg.margin) {
            continue;
        }
        nodes.push(new);
        parent.push(near);
        if free(field, new, to, cfg.margin) {
            let mut path = vec![to];
            let mut i = nodes.len() - 1;
            while i != usize::MAX {
                path.push(nodes[i]);
                i = parent[i];
            }
            path.reverse();
            return Some(shortcut(&path, field, cfg.margin));
        }
    }
    None
}

/// Greedily connects each waypoint to the farthest later one in sight.
pub fn shortcut(path: &[Vec2], field: &ObstacleField, margin: f64) -> Vec<Vec2> {
    let mut out = vec![path[0]];
    let mut i = 0;
    while i < path.len() - 1 {
        let j = (i + 1..path.len())
            .rev()
            .find(|&j| j == i + 1 || free(field, path[i], path[j], margin))
            .unwrap();
        out.push(path[j]);
        i = j;
    }
    out
}

/// Path from `a` to `b` through the preset viewpoints of `inst`'s flank,
/// joining consecutive viewpoints with RRT.
pub fn initial_path_viewpoints(
    a: &PlanningNode,
    b: &PlanningNode,
    inst: &Instance,
    field: &ObstacleField,
    n_views: usize,
    cfg: &RrtConfig,
) -> Result<(Vec<Vec2>, Vec<Vec2>), LocalPlanError> {
    if a.instance_id != Some(inst.id) || b.instance_id != Some(inst.id) {
        return Err(LocalPlanError::NotSameInstance);
    }
    let views = preset_viewpoints(a.position, b.position, n_views.max(2));
    for (i, v) in views.iter().enumerate() {
        if field.min_separation(*v) < cfg.margin {
            return Err(LocalPlanError::ViewpointBlocked { index: i });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut path = vec![views[0]];
    for (i, w) in views.windows(2).enumerate() {
        let leg = rrt(w[0], w[1], field, cfg, &mut rng).ok_or(LocalPlanError::RrtFailed { from: i, to: i + 1 })?;
        path.extend_from_slice(&leg[1..]);
    }
    Ok((path, views))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AStarConfig {
    /// Cells with traversability at or above this are blocked.
    pub block_threshold: f64,
}

impl Default for AStarConfig {
    fn default() -> Self {
        Self { block_threshold: 1.0 }
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    cell: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The eight neighbour moves. Diagonal moves need both side cells free so
/// the path never cuts a blocked corner.
pub fn grid_neighbours(grid: &TraversabilityGrid, cell: usize, threshold: f64) -> Vec<(usize, f64)> {
    let (w, h) = (grid.width as i64, grid.height as i64);
    let (x, y) = ((cell % grid.width) as i64, (cell / grid.width) as i64);
    let open = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && grid.cells[(y * w + x) as usize].cost < threshold;
    let mut out = Vec::with_capacity(8);
    for dy in -1..=1i64 {
        for dx in -1..=1i64 {
            if (dx, dy) == (0, 0) || !open(x + dx, y + dy) {
                continue;
            }
            if dx != 0 && dy != 0 && !(open(x + dx, y) && open(x, y + dy)) {
                continue;
            }
            let next = ((y + dy) * w + x + dx) as usize;
            out.push((next, step_cost(grid, cell, next)));
        }
    }
    out
}

/// Move cost: length times one plus the mean traversability of both cells.
pub fn step_cost(grid: &TraversabilityGrid, a: usize, b: usize) -> f64 {
    let (ax, ay) = (a % grid.width, a / grid.width);
    let (bx, by) = (b % grid.width, b / grid.width);
    let len = grid.cell_size * (((ax as f64 - bx as f64).powi(2) + (ay as f64 - by as f64).powi(2)).sqrt());
    len * (1.0 + 0.5 * (grid.cells[a].cost + grid.cells[b].cost))
}

/// A* result: cell indices from start to goal and the summed move cost.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub cells: Vec<usize>,
    pub cost: f64,
}

/// Cost-optimal 8-connected grid path between the cells containing `a` and `b`.
pub fn astar(grid: &TraversabilityGrid, a: Vec2, b: Vec2, cfg: &AStarConfig) -> Result<GridPath, LocalPlanError> {
    let cell_of = |p: Vec2| -> Option<usize> {
        let (x, y) = grid.locate(p)?;
        let i = grid.index(x, y);
        (grid.cells[i].cost < cfg.block_threshold).then_some(i)
    };
    let (start, goal) = match (cell_of(a), cell_of(b)) {
        (Some(s), Some(g)) => (s, g),
        _ => return Err(LocalPlanError::Unreachable),
    };
    let centre = |i: usize| grid.cell_center(i % grid.width, i / grid.width);
    let goal_c = centre(goal);
    let heuristic = |i: usize| (centre(i) - goal_c).norm();

    let n = grid.cells.len();
    let mut g = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[start] = 0.0;
    open.push(Open {
        f: heuristic(start),
        g: 0.0,
        cell: start,
    });
    while let Some(Open { cell, .. }) = open.pop() {
        if closed[cell] {
            continue;
        }
        closed[cell] = true;
        if cell == goal {
            let mut cells = vec![goal];
            let mut c = goal;
            while prev[c] != usize::MAX {
                c = prev[c];
                cells.push(c);
            }
            cells.reverse();
            return Ok(GridPath { cells, cost: g[goal] });
        }
        for (next, w) in grid_neighbours(grid, cell, cfg.block_threshold) {
            let ng = g[cell] + w;
            if ng < g[next] {
                g[next] = ng;
                prev[next] = cell;
                open.push(Open {
                    f: ng + heuristic(next),
                    g: ng,
                    cell: next,
                });
            }
        }
    }
    Err(LocalPlanError::Unreachable)
}

/// Transit path from `a` to `b`: A* cell centres with collinear runs merged,
/// with the exact endpoints substituted for their cell centres.
pub fn initial_path_transit(
    grid: &TraversabilityGrid,
    a: Vec2,
    b: Vec2,
    cfg: &AStarConfig,
) -> Result<Vec<Vec2>, LocalPlanError> {
    let path = astar(grid, a, b, cfg)?;
    let mut pts: Vec<Vec2> = path
        .cells
        .iter()
        .map(|&i| grid.cell_center(i % grid.width, i / grid.width))
        .collect();
    let last = pts.len() - 1;
    pts[0] = a;
    pts[last] = b;
    if pts.len() == 1 {
        return Ok(vec![a, b]);
    }
    // Line-of-sight shortcuts may only cross free cells no costlier than the
    // worst cell of the stretch they replace.
    let cost = |i: usize| grid.cells[path.cells[i]].cost;
    let mut out = vec![pts[0]];
    let mut i = 0;
    while i < last {
        let j = (i + 1..=last)
            .rev()
            .find(|&j| {
                let bound = (i..=j).map(cost).fold(f64::NEG_INFINITY, f64::max);
                j == i + 1
                    || segment_cells(grid, pts[i], pts[j]).iter().all(|c| match c {
                        Some(k) => grid.cells[*k].cost < cfg.block_threshold && grid.cells[*k].cost <= bound,
                        None => false,
                    })
            })
            .unwrap();
        out.push(pts[j]);
        i = j;
    }
    Ok(merge_collinear(&out))
}

/// Every cell the segment `a -> b` passes through, including both side
/// cells where it crosses a cell corner. `None` marks cells outside the grid.
pub fn segment_cells(grid: &TraversabilityGrid, a: Vec2, b: Vec2) -> Vec<Option<usize>> {
    let cs = grid.cell_size;
    let to_cell = |p: Vec2| {
        let q = (p - grid.origin) / cs;
        (q.x.floor() as i64, q.y.floor() as i64)
    };
    let id = |(x, y): (i64, i64)| {
        (x >= 0 && y >= 0 && (x as usize) < grid.width && (y as usize) < grid.height)
            .then(|| y as usize * grid.width + x as usize)
    };
    let (mut x, mut y) = to_cell(a);
    let end = to_cell(b);
    let d = b - a;
    let sx: i64 = if d.x > 0.0 { 1 } else { -1 };
    let sy: i64 = if d.y > 0.0 { 1 } else { -1 };
    let boundary = |origin: f64, c: i64, s: i64| origin + (c + (s > 0) as i64) as f64 * cs;
    let mut t_max_x = if d.x != 0.0 { (boundary(grid.origin.x, x, sx) - a.x) / d.x } else { f64::INFINITY };
    let mut t_max_y = if d.y != 0.0 { (boundary(grid.origin.y, y, sy) - a.y) / d.y } else { f64::INFINITY };
    let dt_x = if d.x != 0.0 { cs / d.x.abs() } else { f64::INFINITY };
    let dt_y = if d.y != 0.0 { cs / d.y.abs() } else { f64::INFINITY };
    let mut out = vec![id((x, y))];
    let limit = 4 * (grid.width + grid.height) + 8 + (d.norm() / cs).ceil() as usize * 2;
    for _ in 0..limit {
        if (x, y) == end {
            break;
        }
        let tol = 1e-12;
        if (t_max_x - t_max_y).abs() <= tol {
            if t_max_x > 1.0 {
                break;
            }
            out.push(id((x + sx, y)));
            out.push(id((x, y + sy)));
            x += sx;
            y += sy;
            t_max_x += dt_x;
            t_max_y += dt_y;
        } else if t_max_x < t_max_y {
            if t_max_x > 1.0 {
                break;
            }
            x += sx;
            t_max_x += dt_x;
        } else {
            if t_max_y > 1.0 {
                break;
            }
            y += sy;
            t_max_y += dt_y;
        }
        out.push(id((x, y)));
    }
    out
}

/// Drops interior points lying on the straight line through their neighbours.
pub fn merge_collinear(pts: &[Vec2]) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(pts.len());
    for &p in pts {
        if out.last().map(|&q| (q - p).norm() < 1e-12).unwrap_or(false) {
            continue;
        }
        if out.len() >= 2 {
            let (a, b) = (out[out.len() - 2], out[out.len() - 1]);
            let (u, v) = (b - a, p - b);
            if (u.x * v.y - u.y * v.x).abs() < 1e-12 * u.norm() * v.norm() && u.dot(&v) > 0.0 {
                out.pop();
            }
        }
        out.push(p);
    }
    if out.len() == 1 {
        out.push(out[0]);
    }
    out
}

/// Splits every polyline segment into pieces no longer than `spacing`,
/// keeping the original vertices so the geometry is unchanged.
pub fn subdivide(pts: &[Vec2], spacing: f64) -> Vec<Vec2> {
    let mut out = vec![pts[0]];
    for w in pts.windows(2) {
        let k = ((w[1] - w[0]).norm() / spacing).ceil().max(1.0) as usize;
        out.extend((1..=k).map(|j| w[0] + (w[1] - w[0]) * (j as f64 / k as f64)));
    }
    out
}
