//! Greedy coverage planning over the graph map.
//!
//! Targets are grouped by row into subgroups. The planner repeatedly picks
//! the subgroup nearest to the end of the current path and then extends the
//! path node by node until every target of that subgroup is fully covered.
//!
//! A hop into an instance node must respect the node's heading: the heading
//! change between consecutive instance nodes is bounded by
//! `max_heading_change`, and the travel direction must agree with the
//! heading of the node being entered within the same bound. Turning around
//! is only possible at access nodes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::f64::consts::FRAC_PI_3;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::farm_map::{GraphMap, PlanningNode};
use crate::terrain::TraversabilityGrid;
use crate::{wrap_angle, Vec2};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("unknown instance id {0}")]
    UnknownInstance(u32),
    #[error("subgroup of row {0} has no targets")]
    EmptySubgroup(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclidean,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Distinct corners that must be visited before an instance counts as covered.
    pub cover_min_corners: usize,
    /// Largest heading change between consecutive instance nodes, radians.
    pub max_heading_change: f64,
    /// Straight hops need a mean traversability below this value.
    pub max_corridor_cost: f64,
    /// Metric used to pick the nearest subgroup.
    pub metric: DistanceMetric,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            cover_min_corners: 4,
            max_heading_change: FRAC_PI_3,
            max_corridor_cost: 0.8,
            metric: DistanceMetric::Euclidean,
        }
    }
}

/// Targets of one row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgroup {
    pub group_id: usize,
    pub target_instance_ids: Vec<u32>,
}

/// One greedy subgroup choice, with the distances of every candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub step: usize,
    pub tail: Vec2,
    pub chosen_group: usize,
    pub candidates: Vec<(usize, f64)>,
}

/// Planned node sequence. The path starts at `start`, which is not a graph node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPath {
    pub start: Vec2,
    pub node_ids: Vec<usize>,
    pub covered_instances: BTreeSet<u32>,
    pub unreachable: BTreeSet<u32>,
    pub total_length: f64,
    pub audit: Vec<AuditEntry>,
}

impl GlobalPath {
    pub fn new(start: Vec2) -> Self {
        Self {
            start,
            node_ids: Vec::new(),
            covered_instances: BTreeSet::new(),
            unreachable: BTreeSet::new(),
            total_length: 0.0,
            audit: Vec::new(),
        }
    }

    /// Position of the last waypoint.
    pub fn tail_position(&self, map: &GraphMap) -> Vec2 {
        self.node_ids
            .last()
            .map(|&id| map.node(id).position)
            .unwrap_or(self.start)
    }

    /// Waypoint positions including the start.
    pub fn positions(&self, map: &GraphMap) -> Vec<Vec2> {
        std::iter::once(self.start)
            .chain(self.node_ids.iter().map(|&id| map.node(id).position))
            .collect()
    }

    fn recompute_length(&mut self, map: &GraphMap) {
        self.total_length = self
            .positions(map)
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum();
    }

    /// Plan export document.
    pub fn to_plan_json(&self, map: &GraphMap) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .node_ids
            .iter()
            .map(|&id| {
                let n = map.node(id);
                serde_json::json!({"id": id, "x": n.position.x, "y": n.position.y, "heading": n.heading})
            })
            .collect();
        serde_json::json!({
            "start": [self.start.x, self.start.y],
            "nodes": nodes,
            "covered": self.covered_instances,
            "unreachable": self.unreachable,
            "length_m": self.total_length,
        })
    }

    /// Audit log as JSON lines.
    pub fn audit_jsonl(&self) -> String {
        self.audit
            .iter()
            .map(|e| serde_json::to_string(e).expect("audit entry serializes") + "\n")
            .collect()
    }
}

/// Group (row) containing instance `t`.
pub fn find_parent(t: u32, map: &GraphMap) -> Result<usize, PlanError> {
    map.group_of(t).map(|g| g.id).ok_or(PlanError::UnknownInstance(t))
}

/// Heading gate between two nodes; the bound is inclusive.
pub fn orientation_feasible(a: &PlanningNode, b: &PlanningNode, max_change: f64) -> bool {
    wrap_angle(a.heading - b.heading).abs() <= max_change + 1e-12
}

/// Whether enough distinct corners of `t` appear among `node_ids`.
pub fn is_fully_covered(node_ids: &[usize], t: u32, map: &GraphMap, min_corners: usize) -> bool {
    covered_corners(node_ids.iter().copied(), t, map).len() >= min_corners
}

fn covered_corners(ids: impl Iterator<Item = usize>, t: u32, map: &GraphMap) -> BTreeSet<u8> {
    ids.map(|id| map.node(id))
        .filter(|n| n.instance_id == Some(t))
        .filter_map(|n| n.corner_index)
        .collect()
}

/// Everything the feasibility checks need.
pub struct PlanContext<'a> {
    pub map: &'a GraphMap,
    pub terrain: Option<&'a TraversabilityGrid>,
    pub cfg: PlannerConfig,
    adjacency: Vec<Vec<(usize, f64)>>,
}

/// Origin of a hop: the start position or a graph node.
#[derive(Debug, Clone, Copy, PartialEq)]
enum From {
    Start(Vec2),
    Node(usize),
}

#[derive(Copy, Clone, PartialEq)]
struct QueueItem {
    cost: f64,
    node: usize,
}

impl Eq for QueueItem {}

impl Ord for QueueItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> PlanContext<'a> {
    pub fn new(map: &'a GraphMap, terrain: Option<&'a TraversabilityGrid>, cfg: PlannerConfig) -> Self {
        Self {
            map,
            terrain,
            cfg,
            adjacency: map.adjacency(),
        }
    }

    fn position(&self, from: From) -> Vec2 {
        match from {
            From::Start(p) => p,
            From::Node(id) => self.map.node(id).position,
        }
    }

    fn corridor_open(&self, a: Vec2, b: Vec2) -> bool {
        self.terrain
            .map(|t| t.segment_mean_cost(a, b) < self.cfg.max_corridor_cost)
            .unwrap_or(true)
    }

    fn crosses_footprint(&self, a: Vec2, b: Vec2) -> bool {
        self.map.instances.iter().any(|i| i.footprint_hits_segment(a, b))
    }

    /// Travel-direction rule for entering `to` from `from_pos`.
    fn motion_agrees(&self, from_pos: Vec2, to: &PlanningNode) -> bool {
        if to.is_access() {
            return true;
        }
        let d = to.position - from_pos;
        if d.norm() < 1e-9 {
            return true;
        }
        wrap_angle(d.y.atan2(d.x) - to.heading).abs() <= self.cfg.max_heading_change + 1e-12
    }

    /// Directed traversal of an existing graph edge.
    fn edge_traversable(&self, u: usize, v: usize) -> bool {
        let (a, b) = (self.map.node(u), self.map.node(v));
        if !a.is_access() && !b.is_access() && !orientation_feasible(a, b, self.cfg.max_heading_change) {
            return false;
        }
        self.motion_agrees(a.position, b)
    }

    /// Straight hop that is not necessarily a graph edge.
    fn direct_hop_feasible(&self, from: From, to: usize) -> bool {
        let b = self.map.node(to);
        let from_pos = self.position(from);
        if let From::Node(u) = from {
            if u == to {
                return false;
            }
            let a = self.map.node(u);
            if !a.is_access() && !b.is_access() {
                let same_row = match (a.instance_id, b.instance_id) {
                    (Some(x), Some(y)) => self.map.group_of(x).map(|g| g.id) == self.map.group_of(y).map(|g| g.id),
                    _ => false,
                };
                if !same_row || !orientation_feasible(a, b, self.cfg.max_heading_change) {
                    return false;
                }
                let d = b.position - a.position;
                if d.norm() > 1e-9 && wrap_angle(d.y.atan2(d.x) - a.heading).abs() > self.cfg.max_heading_change + 1e-12 {
                    return false;
                }
            }
        }
        self.motion_agrees(from_pos, b)
            && !self.crosses_footprint(from_pos, b.position)
            && self.corridor_open(from_pos, b.position)
    }

    /// Single-source shortest paths over the directed planning graph.
    /// Returns distances and predecessors (`usize::MAX` marks the start).
    fn shortest_paths(&self, from: From) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.map.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![None; n];
        let mut heap = BinaryHeap::new();
        match from {
            From::Node(s) => {
                dist[s] = 0.0;
                heap.push(QueueItem { cost: 0.0, node: s });
            }
            From::Start(p) => {
                for node in self.map.nodes.iter().filter(|n| n.is_access()) {
                    if !self.crosses_footprint(p, node.position) && self.corridor_open(p, node.position) {
                        let d = (node.position - p).norm();
                        if d < dist[node.id] {
                            dist[node.id] = d;
                            prev[node.id] = Some(usize::MAX);
                            heap.push(QueueItem { cost: d, node: node.id });
                        }
                    }
                }
            }
        }
        while let Some(QueueItem { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &(next, len) in &self.adjacency[node] {
                if !self.edge_traversable(node, next) {
                    continue;
                }
                let nd = cost + len;
                if nd < dist[next] {
                    dist[next] = nd;
                    prev[next] = Some(node);
                    heap.push(QueueItem { cost: nd, node: next });
                }
            }
        }
        (dist, prev)
    }

    fn tail(&self, path: &GlobalPath, appended: &[usize]) -> From {
        appended
            .last()
            .or(path.node_ids.last())
            .map(|&id| From::Node(id))
            .unwrap_or(From::Start(path.start))
    }
}

/// Distance from the path tail to the subgroup under the configured metric.
fn subgroup_distance(path: &GlobalPath, v: &Subgroup, ctx: &PlanContext, graph: Option<&[f64]>) -> f64 {
    let tail = path.tail_position(ctx.map);
    v.target_instance_ids
        .iter()
        .flat_map(|&t| ctx.map.instance_nodes(t).unwrap_or(&[]).iter())
        .map(|n| match graph {
            Some(d) => d[n.id],
            None => (n.position - tail).norm(),
        })
        .fold(f64::INFINITY, f64::min)
}

/// Subgroup with the target node closest to the path tail; ties go to the
/// lower group id. Returns the index into `subgroups` and all distances.
pub fn find_nearest_subgroup(
    path: &GlobalPath,
    subgroups: &[Subgroup],
    ctx: &PlanContext,
) -> Option<(usize, Vec<(usize, f64)>)> {
    let graph = match ctx.cfg.metric {
        DistanceMetric::Graph => Some(ctx.shortest_paths(ctx.tail(path, &[])).0),
        DistanceMetric::Euclidean => None,
    };
    let dists: Vec<(usize, f64)> = subgroups
        .iter()
        .map(|v| (v.group_id, subgroup_distance(path, v, ctx, graph.as_deref())))
        .collect();
    let best = (0..subgroups.len()).min_by(|&a, &b| {
        dists[a]
            .1
            .total_cmp(&dists[b].1)
            .then(dists[a].0.cmp(&dists[b].0))
    })?;
    Some((best, dists))
}

/// Result of extending the path through one subgroup.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub nodes: Vec<usize>,
    pub covered: Vec<u32>,
    pub unreachable: Vec<u32>,
}

/// Extends `path` until every target of `v` is covered or proven unreachable.
///
/// Each step appends the nearest node that is directly reachable and still
/// contributes an unvisited corner. When no such hop exists the planner
/// routes over the graph, typically through an access node, to the closest
/// useful node.
pub fn plan_connection(path: &GlobalPath, v: &Subgroup, ctx: &PlanContext) -> Result<Connection, PlanError> {
    if v.target_instance_ids.is_empty() {
        return Err(PlanError::EmptySubgroup(v.group_id));
    }
    let map = ctx.map;
    let mut remaining: Vec<u32> = v.target_instance_ids.clone();
    let mut appended: Vec<usize> = Vec::new();
    let mut covered = Vec::new();
    let mut unreachable = Vec::new();

    // Targets already covered by earlier parts of the path need nothing.
    remaining.retain(|&t| {
        let done = is_fully_covered(&path.node_ids, t, map, ctx.cfg.cover_min_corners);
        if done {
            covered.push(t);
        }
        !done
    });

    while !remaining.is_empty() {
        let visited = path.node_ids.iter().chain(appended.iter()).copied();
        let mut seen: BTreeMap<u32, BTreeSet<u8>> = remaining.iter().map(|&t| (t, BTreeSet::new())).collect();
        for id in visited {
            let n = map.node(id);
            if let (Some(t), Some(c)) = (n.instance_id, n.corner_index) {
                if let Some(s) = seen.get_mut(&t) {
                    s.insert(c);
                }
            }
        }
        let candidates: Vec<usize> = remaining
            .iter()
            .flat_map(|&t| map.instance_nodes(t).unwrap_or(&[]).iter())
            .filter(|n| !seen[&n.instance_id.unwrap()].contains(&n.corner_index.unwrap()))
            .map(|n| n.id)
            .collect();

        let tail = ctx.tail(path, &appended);
        let tail_pos = ctx.position(tail);
        let direct = candidates
            .iter()
            .copied()
            .filter(|&c| ctx.direct_hop_feasible(tail, c))
            .min_by(|&a, &b| {
                let da = (map.node(a).position - tail_pos).norm();
                let db = (map.node(b).position - tail_pos).norm();
                da.total_cmp(&db).then(a.cmp(&b))
            });

        if let Some(c) = direct {
            appended.push(c);
        } else {
            let (dist, prev) = ctx.shortest_paths(tail);
            let routed = candidates
                .iter()
                .copied()
                .filter(|&c| dist[c].is_finite() && Some(c) != appended.last().copied())
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
            match routed {
                Some(c) => {
                    let mut hops = vec![c];
                    let mut cur = c;
                    while let Some(p) = prev[cur] {
                        if p == usize::MAX || From::Node(p) == tail {
                            break;
                        }
                        hops.push(p);
                        cur = p;
                    }
                    hops.reverse();
                    appended.extend(hops);
                }
                None => {
                    unreachable.append(&mut remaining);
                    break;
                }
            }
        }

        let full: Vec<usize> = path.node_ids.iter().chain(appended.iter()).copied().collect();
        remaining.retain(|&t| {
            let done = is_fully_covered(&full, t, map, ctx.cfg.cover_min_corners);
            if done {
                covered.push(t);
            }
            !done
        });
    }
    covered.sort_unstable();
    unreachable.sort_unstable();
    Ok(Connection {
        nodes: appended,
        covered,
        unreachable,
    })
}

/// Greedy global path covering `targets`, starting at `start`.
pub fn generate_global_path(
    targets: &BTreeSet<u32>,
    map: &GraphMap,
    start: Vec2,
    ctx: &PlanContext,
) -> Result<GlobalPath, PlanError> {
    let mut by_group: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for &t in targets {
        by_group.entry(find_parent(t, map)?).or_default().push(t);
    }
    let mut subgroups: Vec<Subgroup> = by_group
        .into_iter()
        .map(|(group_id, mut ids)| {
            let order = &map.groups[group_id].instance_ids;
            ids.sort_by_key(|id| order.iter().position(|x| x == id));
            Subgroup {
                group_id,
                target_instance_ids: ids,
            }
        })
        .collect();

    let mut path = GlobalPath::new(start);
    let mut step = 0;
    while let Some((k, candidates)) = find_nearest_subgroup(&path, &subgroups, ctx) {
        let v = subgroups.remove(k);
        path.audit.push(AuditEntry {
            step,
            tail: path.tail_position(map),
            chosen_group: v.group_id,
            candidates,
        });
        let conn = plan_connection(&path, &v, ctx)?;
        path.node_ids.extend(conn.nodes);
        path.covered_instances.extend(conn.covered);
        path.unreachable.extend(conn.unreachable);
        step += 1;
    }
    path.recompute_length(map);
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::farm_map::{build_graph, detect_rows, Instance, MapConfig};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn inst(id: u32, x: f64, y: f64) -> Instance {
        Instance {
            id,
            center: Vec2::new(x, y),
            half_extents: Vec2::new(0.3, 0.3),
            yaw: 0.0,
            height: 1.0,
        }
    }

    fn map_of(v: &[Instance]) -> GraphMap {
        let cfg = MapConfig::default();
        build_graph(v, &detect_rows(v, &cfg), None, &cfg)
    }

    fn node_with_heading(h: f64) -> PlanningNode {
        PlanningNode {
            id: 0,
            instance_id: Some(0),
            position: Vec2::zeros(),
            heading: h,
            corner_index: Some(0),
            direction_index: Some(0),
        }
    }

    #[test]
    fn orientation_gate_examples() {
        let a = node_with_heading(0.0);
        assert!(orientation_feasible(&a, &node_with_heading(FRAC_PI_4), FRAC_PI_3));
        assert!(!orientation_feasible(&a, &node_with_heading(FRAC_PI_2), FRAC_PI_3));
        assert!(orientation_feasible(&a, &node_with_heading(FRAC_PI_3), FRAC_PI_3));
        // wrap-around
        assert!(orientation_feasible(
            &node_with_heading(3.0),
            &node_with_heading(-3.0),
            FRAC_PI_3
        ));
    }

    #[test]
    fn find_parent_lookup() {
        let map = map_of(&[inst(3, 0.0, 0.0), inst(4, 2.0, 0.0), inst(8, 0.0, 5.0)]);
        assert_eq!(find_parent(3, &map), Ok(0));
        assert_eq!(find_parent(8, &map), Ok(1));
        assert_eq!(find_parent(99, &map), Err(PlanError::UnknownInstance(99)));
    }

    #[test]
    fn coverage_rules() {
        let map = map_of(&[inst(1, 0.0, 0.0)]);
        let ids = |cs: &[(usize, usize)]| cs.iter().map(|&(c, d)| 2 * c + d).collect::<Vec<_>>();
        assert!(is_fully_covered(&ids(&[(0, 0), (1, 0), (2, 0), (3, 0)]), 1, &map, 4));
        assert!(!is_fully_covered(&ids(&[(0, 0), (1, 0), (2, 0)]), 1, &map, 4));
        assert!(is_fully_covered(&ids(&[(0, 0), (1, 0), (2, 1), (3, 1)]), 1, &map, 4));
        assert!(!is_fully_covered(&ids(&[(0, 0), (0, 1), (1, 0), (1, 1)]), 1, &map, 4));
    }

    #[test]
    fn nearest_subgroup_and_tie_break() {
        let v = [inst(1, 0.0, 0.0), inst(2, 0.0, 10.0), inst(3, 0.0, -10.0)];
        let map = map_of(&v);
        let ctx = PlanContext::new(&map, None, PlannerConfig::default());
        let sub = |g: usize, t: u32| Subgroup {
            group_id: g,
            target_instance_ids: vec![t],
        };
        let g2 = find_parent(2, &map).unwrap();
        let g3 = find_parent(3, &map).unwrap();
        // tail at the origin: rows at +10 and -10 are equidistant
        let path = GlobalPath::new(Vec2::new(0.0, 0.0));
        let subs = vec![sub(g2, 2), sub(g3, 3)];
        let (k, _) = find_nearest_subgroup(&path, &subs, &ctx).unwrap();
        assert_eq!(subs[k].group_id, g2.min(g3));
        let path = GlobalPath::new(Vec2::new(0.0, 6.0));
        let (k, d) = find_nearest_subgroup(&path, &subs, &ctx).unwrap();
        assert_eq!(subs[k].group_id, g2);
        assert!(d.iter().all(|&(_, x)| x >= d[k].1));
        let single = vec![sub(g3, 3)];
        assert_eq!(find_nearest_subgroup(&path, &single, &ctx).unwrap().0, 0);
    }

    #[test]
    fn empty_subgroup_is_rejected() {
        let map = map_of(&[inst(1, 0.0, 0.0)]);
        let ctx = PlanContext::new(&map, None, PlannerConfig::default());
        let v = Subgroup {
            group_id: 0,
            target_instance_ids: vec![],
        };
        assert_eq!(
            plan_connection(&GlobalPath::new(Vec2::zeros()), &v, &ctx),
            Err(PlanError::EmptySubgroup(0))
        );
    }

    #[test]
    fn empty_target_set_keeps_start() {
        let map = map_of(&[inst(1, 0.0, 0.0)]);
        let ctx = PlanContext::new(&map, None, PlannerConfig::default());
        let p = generate_global_path(&BTreeSet::new(), &map, Vec2::new(-3.0, 0.0), &ctx).unwrap();
        assert!(p.node_ids.is_empty());
        assert!(p.covered_instances.is_empty());
        assert_eq!(p.positions(&map), vec![Vec2::new(-3.0, 0.0)]);
    }
}
