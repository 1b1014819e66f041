use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TraversabilityGrid;
use crate::Vec2;

/// Simple counter-clockwise polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Polygon {
    vertices: Vec<Vec2>,
    #[serde(skip)]
    bbox: (Vec2, Vec2),
}

impl TryFrom<Vec<Vec2>> for Polygon {
    type Error = String;
    fn try_from(v: Vec<Vec2>) -> Result<Self, String> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<Vec2> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

fn signed_area(v: &[Vec2]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Closest point to `p` on segment `a-b`.
fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = cross(q2 - q1, p1 - q1);
    let d2 = cross(q2 - q1, p2 - q1);
    let d3 = cross(p2 - p1, q1 - p1);
    let d4 = cross(p2 - p1, q2 - p1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |d: f64, a: Vec2, b: Vec2, p: Vec2| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(d1, q1, q2, p1) || on(d2, q1, q2, p2) || on(d3, p1, p2, q1) || on(d4, p1, p2, q2)
}

fn segment_segment_distance(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> f64 {
    if segments_intersect(p1, p2, q1, q2) {
        return 0.0;
    }
    [
        (p1 - closest_on_segment(p1, q1, q2)).norm(),
        (p2 - closest_on_segment(p2, q1, q2)).norm(),
        (q1 - closest_on_segment(q1, p1, p2)).norm(),
        (q2 - closest_on_segment(q2, p1, p2)).norm(),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

impl Polygon {
    /// Builds a polygon, reorienting clockwise input to counter-clockwise.
    pub fn new(mut vertices: Vec<Vec2>) -> Result<Self, String> {
        if vertices.len() < 3 {
            return Err(format!("polygon needs >= 3 vertices, got {}", vertices.len()));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err("polygon has non-finite vertex".into());
        }
        let area = signed_area(&vertices);
        if area == 0.0 {
            return Err("polygon has zero area".into());
        }
        if area < 0.0 {
            vertices.reverse();
        }
        let mut lo = Vec2::repeat(f64::INFINITY);
        let mut hi = Vec2::repeat(f64::NEG_INFINITY);
        for v in &vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        Ok(Self {
            vertices,
            bbox: (lo, hi),
        })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Even-odd containment; boundary points may go either way.
    pub fn contains(&self, p: Vec2) -> bool {
        let (lo, hi) = self.bbox;
        if p.x < lo.x || p.y < lo.y || p.x > hi.x || p.y > hi.y {
            return false;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Lower bound on the distance from `p` to any point of the polygon.
    fn bbox_distance(&self, p: Vec2) -> f64 {
        let (lo, hi) = self.bbox;
        let dx = (lo.x - p.x).max(0.0).max(p.x - hi.x);
        let dy = (lo.y - p.y).max(0.0).max(p.y - hi.y);
        (dx * dx + dy * dy).sqrt()
    }

    /// Closest boundary point and its distance.
    fn closest_boundary(&self, p: Vec2) -> (Vec2, f64, usize) {
        let mut best = (self.vertices[0], f64::INFINITY, 0);
        for (i, (a, b)) in self.edges().enumerate() {
            let c = closest_on_segment(p, a, b);
            let d = (p - c).norm();
            if d < best.1 {
                best = (c, d, i);
            }
        }
        best
    }

    /// Signed distance: positive outside, zero on the boundary, negative inside.
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        let (_, d, _) = self.closest_boundary(p);
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    /// Distance between segment `a-b` and the polygon region (0 on contact).
    pub fn segment_distance(&self, a: Vec2, b: Vec2) -> f64 {
        if self.contains(a) || self.contains(b) {
            return 0.0;
        }
        self.edges()
            .map(|(p, q)| segment_segment_distance(a, b, p, q))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Set of obstacle polygons with separation queries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObstacleField {
    pub polygons: Vec<Polygon>,
}

impl ObstacleField {
    pub fn new(polygons: Vec<Polygon>) -> Self {
        Self { polygons }
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    /// Minimum signed separation between `q` and every obstacle; `+inf` for
    /// an empty field.
    pub fn min_separation(&self, q: Vec2) -> f64 {
        self.signed_distance_with_gradient(q)
            .map(|(d, _)| d)
            .unwrap_or(f64::INFINITY)
    }

    /// Signed separation and its gradient, `None` for an empty field.
    pub fn signed_distance_with_gradient(&self, q: Vec2) -> Option<(f64, Vec2)> {
        let mut best: Option<(f64, Vec2)> = None;
        for poly in &self.polygons {
            if let Some((d, _)) = best {
                if d >= 0.0 && poly.bbox_distance(q) >= d {
                    continue;
                }
            }
            let (c, dist, edge) = poly.closest_boundary(q);
            let inside = poly.contains(q);
            let phi = if inside { -dist } else { dist };
            if best.map(|(d, _)| phi < d).unwrap_or(true) {
                let grad = if dist > 0.0 {
                    let g = (q - c) / dist;
                    if inside {
                        -g
                    } else {
                        g
                    }
                } else {
                    // On the boundary: outward edge normal (CCW polygon).
                    let (a, b) = poly.edges().nth(edge).unwrap();
                    let t = (b - a).normalize();
                    Vec2::new(t.y, -t.x)
                };
                best = Some((phi, grad));
            }
        }
        best
    }

    /// Whether the straight segment keeps at least `margin` from every obstacle.
    pub fn segment_is_free(&self, a: Vec2, b: Vec2, margin: f64) -> bool {
        let margin = margin.max(1e-9);
        let (lo, hi) = (a.inf(&b), a.sup(&b));
        self.polygons.iter().all(|poly| {
            let (plo, phi) = poly.bbox;
            let far = plo.x > hi.x + margin
                || plo.y > hi.y + margin
                || phi.x < lo.x - margin
                || phi.y < lo.y - margin;
            far || poly.segment_distance(a, b) >= margin
        })
    }
}

/// Traces connected components of cells with cost `>= threshold` (including
/// unknown cells) into counter-clockwise outline polygons.
///
/// Components are 4-connected. Collinear boundary vertices are merged.
/// Free pockets fully enclosed by a component are absorbed into its outline.
pub fn extract_obstacles(grid: &TraversabilityGrid, threshold: f64) -> ObstacleField {
    assert!(threshold > 0.0, "obstacle threshold must be positive");
    let (w, h) = (grid.width as i64, grid.height as i64);
    let blocked = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && x < w && y < h && grid.cell(x as usize, y as usize).cost >= threshold
    };

    // Directed boundary edges with the obstacle on the left, keyed by start lattice vertex.
    let mut outgoing: BTreeMap<(i64, i64), Vec<(i64, i64)>> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            if !blocked(x, y) {
                continue;
            }
            if !blocked(x, y - 1) {
                outgoing.entry((x, y)).or_default().push((x + 1, y));
            }
            if !blocked(x + 1, y) {
                outgoing.entry((x + 1, y)).or_default().push((x + 1, y + 1));
            }
            if !blocked(x, y + 1) {
                outgoing.entry((x + 1, y + 1)).or_default().push((x, y + 1));
            }
            if !blocked(x - 1, y) {
                outgoing.entry((x, y + 1)).or_default().push((x, y));
            }
        }
    }

    let mut polygons = Vec::new();
    while let Some((&start, _)) = outgoing.iter().find(|(_, v)| !v.is_empty()) {
        let mut loop_pts = vec![start];
        let mut prev_dir: Option<(i64, i64)> = None;
        let mut cur = start;
        loop {
            let outs = outgoing.get_mut(&cur).expect("boundary is closed");
            // At a saddle vertex prefer the left turn so diagonal cells stay
            // in separate components.
            let pick = match prev_dir {
                Some(pd) if outs.len() > 1 => outs
                    .iter()
                    .position(|&n| {
                        let d = (n.0 - cur.0, n.1 - cur.1);
                        pd.0 * d.1 - pd.1 * d.0 > 0
                    })
                    .unwrap_or(0),
                _ => 0,
            };
            let next = outs.swap_remove(pick);
            prev_dir = Some((next.0 - cur.0, next.1 - cur.1));
            cur = next;
            if cur == start {
                break;
            }
            loop_pts.push(cur);
        }
        let pts: Vec<Vec2> = simplify(&loop_pts)
            .into_iter()
            .map(|(x, y)| grid.origin + Vec2::new(x as f64, y as f64) * grid.cell_size)
            .collect();
        // Clockwise loops are holes; the outer outline already covers them.
        if signed_area(&pts) > 0.0 {
            polygons.push(Polygon::new(pts).expect("traced outline is valid"));
        }
    }
    ObstacleField { polygons }
}

fn simplify(pts: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let n = pts.len();
    (0..n)
        .filter(|&i| {
            let (p, c, q) = (pts[(i + n - 1) % n], pts[i], pts[(i + 1) % n]);
            (c.0 - p.0) * (q.1 - c.1) - (c.1 - p.1) * (q.0 - c.0) != 0
        })
        .map(|i| pts[i])
        .collect()
}
