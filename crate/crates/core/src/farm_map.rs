//! Graph map of a farm: plant instances, their eight planning nodes, crop
//! rows with shared access nodes, and the connecting edges.
//!
//! Every instance gets a node at each of its four box corners, pushed
//! diagonally outward by the clearance, once per travel direction along the
//! row. Corners are labelled in the row frame:
//!
//! ```text
//!        3 ---- 2          upper flank
//!        |  ()  |   --> row axis
//!        0 ---- 1          lower flank
//! ```
//!
//! Direction 0 heads along the row axis, direction 1 against it.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::terrain::TraversabilityGrid;
use crate::{wrap_angle, Vec2};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("detections parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("duplicate instance id {0}")]
    DuplicateId(u32),
    #[error("instance {id}: {msg}")]
    InvalidInstance { id: u32, msg: String },
}

/// A detected plant: oriented footprint box and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u32,
    pub center: Vec2,
    pub half_extents: Vec2,
    pub yaw: f64,
    pub height: f64,
}

impl Instance {
    pub fn validate(&self) -> Result<(), MapError> {
        let bad = |msg: &str| {
            Err(MapError::InvalidInstance {
                id: self.id,
                msg: msg.to_string(),
            })
        };
        if !(self.center.x.is_finite() && self.center.y.is_finite()) {
            return bad("non-finite center");
        }
        if !(self.half_extents.x > 0.0 && self.half_extents.y > 0.0) {
            return bad("half extents must be positive");
        }
        if !self.yaw.is_finite() {
            return bad("non-finite yaw");
        }
        if !(self.height >= 0.0) {
            return bad("height must be non-negative");
        }
        Ok(())
    }

    /// Unit vector of the box's local x axis.
    pub fn box_axis(&self) -> Vec2 {
        Vec2::new(self.yaw.cos(), self.yaw.sin())
    }

    fn to_world(&self, local: Vec2) -> Vec2 {
        let (s, c) = self.yaw.sin_cos();
        self.center + Vec2::new(c * local.x - s * local.y, s * local.x + c * local.y)
    }

    fn to_local(&self, p: Vec2) -> Vec2 {
        let (s, c) = self.yaw.sin_cos();
        let d = p - self.center;
        Vec2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    /// Box corners pushed outward along the local diagonals by `clearance`,
    /// in local order (-,-), (+,-), (+,+), (-,+).
    pub fn node_corners(&self, clearance: f64) -> [Vec2; 4] {
        let h = self.half_extents + Vec2::repeat(clearance * FRAC_1_SQRT_2);
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .map(|(sx, sy)| self.to_world(Vec2::new(sx * h.x, sy * h.y)))
    }

    /// Whether `p` lies strictly inside the box inflated by `clearance / sqrt 2`
    /// per axis (the box whose corners are the planning nodes).
    pub fn strictly_contains_inflated(&self, p: Vec2, clearance: f64) -> bool {
        let h = self.half_extents + Vec2::repeat(clearance * FRAC_1_SQRT_2);
        let l = self.to_local(p);
        let tol = 1e-9;
        l.x.abs() < h.x - tol && l.y.abs() < h.y - tol
    }

    /// Whether `p` lies inside the plain footprint box.
    pub fn footprint_contains(&self, p: Vec2) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half_extents.x && l.y.abs() <= self.half_extents.y
    }

    /// Whether segment `a-b` touches the footprint box.
    pub fn footprint_hits_segment(&self, a: Vec2, b: Vec2) -> bool {
        // Slab test in the local frame.
        let (la, lb) = (self.to_local(a), self.to_local(b));
        let d = lb - la;
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..2 {
            let h = self.half_extents[k];
            if d[k].abs() < 1e-15 {
                if la[k].abs() > h {
                    return false;
                }
            } else {
                let (mut ta, mut tb) = ((-h - la[k]) / d[k], (h - la[k]) / d[k]);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

/// Waypoint of the graph map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanningNode {
    pub id: usize,
    /// `None` for row access nodes.
    pub instance_id: Option<u32>,
    pub position: Vec2,
    /// Intended travel direction through the node, radians.
    pub heading: f64,
    pub corner_index: Option<u8>,
    pub direction_index: Option<u8>,
}

impl PlanningNode {
    pub fn is_access(&self) -> bool {
        self.instance_id.is_none()
    }
}

/// Eight planning nodes of `inst` with headings along the box's own x axis.
/// Node ids are local, `2 * corner + direction`.
pub fn generate_nodes(inst: &Instance, clearance: f64) -> [PlanningNode; 8] {
    nodes_along(inst, clearance, inst.box_axis(), 0)
}

/// Eight planning nodes of `inst` labelled in the frame of `axis` (unit
/// vector), with ids starting at `first_id`.
pub fn nodes_along(inst: &Instance, clearance: f64, axis: Vec2, first_id: usize) -> [PlanningNode; 8] {
    assert!(clearance >= 0.0, "clearance must be non-negative");
    let normal = Vec2::new(-axis.y, axis.x);
    let corners = inst.node_corners(clearance);
    let mut order = [0usize, 1, 2, 3];
    let lateral = |i: usize| (corners[i] - inst.center).dot(&normal);
    let axial = |i: usize| (corners[i] - inst.center).dot(&axis);
    order.sort_by(|&a, &b| lateral(a).total_cmp(&lateral(b)).then(a.cmp(&b)));
    let (mut lower, mut upper) = ([order[0], order[1]], [order[2], order[3]]);
    lower.sort_by(|&a, &b| axial(a).total_cmp(&axial(b)).then(a.cmp(&b)));
    upper.sort_by(|&a, &b| axial(a).total_cmp(&axial(b)).then(a.cmp(&b)));
    // corner index -> which box corner
    let labelled = [lower[0], lower[1], upper[1], upper[0]];
    let forward = axis.y.atan2(axis.x);
    let mut out = [PlanningNode {
        id: 0,
        instance_id: None,
        position: Vec2::zeros(),
        heading: 0.0,
        corner_index: None,
        direction_index: None,
    }; 8];
    for (corner, &src) in labelled.iter().enumerate() {
        for dir in 0..2u8 {
            let k = 2 * corner + dir as usize;
            out[k] = PlanningNode {
                id: first_id + k,
                instance_id: Some(inst.id),
                position: corners[src],
                heading: wrap_angle(forward + if dir == 0 { 0.0 } else { PI }),
                corner_index: Some(corner as u8),
                direction_index: Some(dir),
            };
        }
    }
    out
}

#[derive(Debug, Deserialize)]
struct DetectionRecord {
    id: u32,
    center: [f64; 2],
    half_extents: [f64; 2],
    yaw: f64,
    height: f64,
}

/// Parses the detections JSON array. Yaw is wrapped into `[-pi, pi)`.
pub fn parse_detections(text: &str) -> Result<Vec<Instance>, MapError> {
    let records: Vec<DetectionRecord> = serde_json::from_str(text).map_err(|e| MapError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.id) {
            return Err(MapError::DuplicateId(r.id));
        }
        let inst = Instance {
            id: r.id,
            center: Vec2::new(r.center[0], r.center[1]),
            half_extents: Vec2::new(r.half_extents[0], r.half_extents[1]),
            yaw: wrap_angle(r.yaw),
            height: r.height,
        };
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

pub fn load_detections(path: &Path) -> Result<Vec<Instance>, MapError> {
    let text = fs::read_to_string(path).map_err(|source| MapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_detections(&text)
}

/// Serializes instances in the detections format.
pub fn detections_to_json(instances: &[Instance]) -> String {
    let records: Vec<serde_json::Value> = instances
        .iter()
        .map(|i| {
            serde_json::json!({
                "id": i.id,
                "center": [i.center.x, i.center.y],
                "half_extents": [i.half_extents.x, i.half_extents.y],
                "yaw": i.yaw,
                "height": i.height,
            })
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("detections serialize")
}

/// Parameters of row detection, node placement and graph gating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    /// Diagonal offset of planning nodes from the box corners, metres.
    pub clearance: f64,
    /// Largest perpendicular distance of an instance from its row line.
    pub lateral_tolerance: f64,
    /// Distance of the access nodes beyond the outermost row node.
    pub row_margin: f64,
    /// Row axis used when it cannot be estimated (single instance).
    pub default_row_axis: [f64; 2],
    /// Inter-row links need a mean traversability below this value.
    pub max_corridor_cost: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            clearance: 0.6,
            lateral_tolerance: 0.75,
            row_margin: 1.5,
            default_row_axis: [1.0, 0.0],
            max_corridor_cost: 0.8,
        }
    }
}

/// Instances of one crop row in axial order, with the shared access nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowGroup {
    pub id: usize,
    pub instance_ids: Vec<u32>,
    pub left_access: PlanningNode,
    pub right_access: PlanningNode,
    pub axis_direction: Vec2,
}

fn canonical_axis(v: Vec2) -> Vec2 {
    let v = v.normalize();
    if v.x < -1e-12 || (v.x.abs() <= 1e-12 && v.y < 0.0) {
        -v
    } else {
        v
    }
}

/// Axis estimate from nearest-neighbour directions (axial mean of doubled angles).
fn neighbour_axis(centers: &[Vec2]) -> Option<Vec2> {
    if centers.len() < 2 {
        return None;
    }
    let (mut c2, mut s2) = (0.0, 0.0);
    for (i, a) in centers.iter().enumerate() {
        let nearest = centers
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .min_by(|(_, p), (_, q)| (*p - a).norm_squared().total_cmp(&(*q - a).norm_squared()))
            .map(|(_, p)| p - a)?;
        let ang = nearest.y.atan2(nearest.x);
        c2 += (2.0 * ang).cos();
        s2 += (2.0 * ang).sin();
    }
    if c2.hypot(s2) < 1e-12 {
        return None;
    }
    let half = 0.5 * s2.atan2(c2);
    Some(canonical_axis(Vec2::new(half.cos(), half.sin())))
}

/// Splits instance indices into rows by perpendicular offset from `axis`.
fn bucket_by_offset(centers: &[Vec2], ids: &[u32], axis: Vec2, tol: f64) -> Vec<Vec<usize>> {
    let normal = Vec2::new(-axis.y, axis.x);
    let mut idx: Vec<usize> = (0..centers.len()).collect();
    idx.sort_by(|&a, &b| {
        centers[a]
            .dot(&normal)
            .total_cmp(&centers[b].dot(&normal))
            .then(ids[a].cmp(&ids[b]))
    });
    let mut buckets: Vec<Vec<usize>> = Vec::new();
    let mut start = f64::NEG_INFINITY;
    for i in idx {
        let o = centers[i].dot(&normal);
        match buckets.last_mut() {
            Some(b) if o - start <= tol => b.push(i),
            _ => {
                start = o;
                buckets.push(vec![i]);
            }
        }
    }
    for b in &mut buckets {
        b.sort_by(|&x, &y| {
            centers[x]
                .dot(&axis)
                .total_cmp(&centers[y].dot(&axis))
                .then(ids[x].cmp(&ids[y]))
        });
    }
    buckets
}

/// Dominant direction of the pooled within-row scatter.
fn pooled_axis(centers: &[Vec2], buckets: &[Vec<usize>]) -> Option<Vec2> {
    let mut cov = nalgebra::Matrix2::<f64>::zeros();
    for b in buckets.iter().filter(|b| b.len() > 1) {
        let mean = b.iter().map(|&i| centers[i]).sum::<Vec2>() / b.len() as f64;
        for &i in b {
            let d = centers[i] - mean;
            cov += d * d.transpose();
        }
    }
    if cov.norm() < 1e-12 {
        return None;
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let k = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    Some(canonical_axis(eig.eigenvectors.column(k).into_owned()))
}

/// Groups instances into rows.
///
/// The row direction starts from the nearest-neighbour axis estimate, then
/// alternates bucketing by perpendicular offset and refitting the direction
/// to the pooled within-row scatter until the partition is stable.
pub fn detect_rows(instances: &[Instance], cfg: &MapConfig) -> Vec<RowGroup> {
    if instances.is_empty() {
        return Vec::new();
    }
    let centers: Vec<Vec2> = instances.iter().map(|i| i.center).collect();
    let ids: Vec<u32> = instances.iter().map(|i| i.id).collect();
    let default_axis = canonical_axis(Vec2::new(cfg.default_row_axis[0], cfg.default_row_axis[1]));
    let mut axis = neighbour_axis(&centers).unwrap_or(default_axis);
    let mut buckets = bucket_by_offset(&centers, &ids, axis, cfg.lateral_tolerance);
    for _ in 0..8 {
        let Some(refit) = pooled_axis(&centers, &buckets) else {
            break;
        };
        let next = bucket_by_offset(&centers, &ids, refit, cfg.lateral_tolerance);
        axis = refit;
        if next == buckets {
            break;
        }
        buckets = next;
    }

    let n_inst = instances.len();
    buckets
        .into_iter()
        .enumerate()
        .map(|(g, members)| {
            let row_centers: Vec<Vec2> = members.iter().map(|&i| centers[i]).collect();
            let normal = Vec2::new(-axis.y, axis.x);
            let lateral = row_centers.iter().map(|c| c.dot(&normal)).sum::<f64>() / members.len() as f64;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &members {
                for c in instances[i].node_corners(cfg.clearance) {
                    lo = lo.min(c.dot(&axis));
                    hi = hi.max(c.dot(&axis));
                }
            }
            let heading = axis.y.atan2(axis.x);
            let access = |along: f64, id: usize, h: f64| PlanningNode {
                id,
                instance_id: None,
                position: axis * along + normal * lateral,
                heading: wrap_angle(h),
                corner_index: None,
                direction_index: None,
            };
            RowGroup {
                id: g,
                instance_ids: members.iter().map(|&i| ids[i]).collect(),
                left_access: access(lo - cfg.row_margin, 8 * n_inst + 2 * g, heading + PI),
                right_access: access(hi + cfg.row_margin, 8 * n_inst + 2 * g + 1, heading),
                axis_direction: axis,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// The farm graph map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMap {
    pub clearance: f64,
    pub instances: Vec<Instance>,
    pub nodes: Vec<PlanningNode>,
    pub groups: Vec<RowGroup>,
    pub edges: Vec<Edge>,
    /// Node id sets of the connected components when there is more than one.
    pub disconnected_components: Vec<Vec<usize>>,
}

impl GraphMap {
    pub fn node(&self, id: usize) -> &PlanningNode {
        &self.nodes[id]
    }

    pub fn instance_index(&self, id: u32) -> Option<usize> {
        self.instances.iter().position(|i| i.id == id)
    }

    pub fn instance(&self, id: u32) -> Option<&Instance> {
        self.instance_index(id).map(|k| &self.instances[k])
    }

    /// The eight nodes of an instance.
    pub fn instance_nodes(&self, id: u32) -> Option<&[PlanningNode]> {
        self.instance_index(id).map(|k| &self.nodes[8 * k..8 * k + 8])
    }

    pub fn group_of(&self, instance_id: u32) -> Option<&RowGroup> {
        self.groups.iter().find(|g| g.instance_ids.contains(&instance_id))
    }

    pub fn is_connected(&self) -> bool {
        self.disconnected_components.is_empty()
    }

    /// Adjacency lists `(neighbour, length)` indexed by node id, sorted by neighbour.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a].push((e.b, e.length));
            adj[e.b].push((e.a, e.length));
        }
        for l in &mut adj {
            l.sort_by(|x, y| x.0.cmp(&y.0));
        }
        adj
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph map serializes")
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Assembles the graph map.
///
/// Intra-row edges join same-direction nodes along each flank and the access
/// nodes to both row ends; access nodes of different rows are linked when the
/// straight corridor between them has mean traversability below
/// `cfg.max_corridor_cost`. Without a grid every corridor is open.
pub fn build_graph(
    instances: &[Instance],
    groups: &[RowGroup],
    terrain: Option<&TraversabilityGrid>,
    cfg: &MapConfig,
) -> GraphMap {
    let index: HashMap<u32, usize> = instances.iter().enumerate().map(|(k, i)| (i.id, k)).collect();
    let mut axis_of = vec![Vec2::new(cfg.default_row_axis[0], cfg.default_row_axis[1]).normalize(); instances.len()];
    for g in groups {
        for id in &g.instance_ids {
            axis_of[index[id]] = g.axis_direction;
        }
    }
    let mut nodes: Vec<PlanningNode> = instances
        .iter()
        .enumerate()
        .flat_map(|(k, inst)| nodes_along(inst, cfg.clearance, axis_of[k], 8 * k))
        .collect();
    let mut access: Vec<PlanningNode> = groups
        .iter()
        .flat_map(|g| [g.left_access, g.right_access])
        .collect();
    access.sort_by_key(|n| n.id);
    nodes.extend(access);
    debug_assert!(nodes.iter().enumerate().all(|(i, n)| n.id == i));

    let node_id = |inst: u32, corner: usize, dir: usize| 8 * index[&inst] + 2 * corner + dir;
    let mut pairs = BTreeSet::new();
    let mut link = |a: usize, b: usize| {
        pairs.insert((a.min(b), a.max(b)));
    };
    for g in groups {
        let (first, last) = (g.instance_ids[0], *g.instance_ids.last().unwrap());
        for dir in 0..2 {
            for &id in &g.instance_ids {
                link(node_id(id, 0, dir), node_id(id, 1, dir));
                link(node_id(id, 3, dir), node_id(id, 2, dir));
            }
            for w in g.instance_ids.windows(2) {
                link(node_id(w[0], 1, dir), node_id(w[1], 0, dir));
                link(node_id(w[0], 2, dir), node_id(w[1], 3, dir));
            }
            link(g.left_access.id, node_id(first, 0, dir));
            link(g.left_access.id, node_id(first, 3, dir));
            link(g.right_access.id, node_id(last, 1, dir));
            link(g.right_access.id, node_id(last, 2, dir));
        }
    }
    for (gi, g) in groups.iter().enumerate() {
        for h in &groups[gi + 1..] {
            for a in [g.left_access, g.right_access] {
                for b in [h.left_access, h.right_access] {
                    let open = terrain
                        .map(|t| t.segment_mean_cost(a.position, b.position) < cfg.max_corridor_cost)
                        .unwrap_or(true);
                    if open {
                        link(a.id, b.id);
                    }
                }
            }
        }
    }
    let edges: Vec<Edge> = pairs
        .into_iter()
        .map(|(a, b)| Edge {
            a,
            b,
            length: (nodes[a].position - nodes[b].position).norm(),
        })
        .collect();

    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    for e in &edges {
        let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut comps: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for v in 0..nodes.len() {
        let r = find(&mut parent, v);
        comps.entry(r).or_default().push(v);
    }
    let disconnected_components = if comps.len() > 1 {
        comps.into_values().collect()
    } else {
        Vec::new()
    };

    GraphMap {
        clearance: cfg.clearance,
        instances: instances.to_vec(),
        nodes,
        groups: groups.to_vec(),
        edges,
        disconnected_components,
    }
}
