use nalgebra::{Matrix3, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CostFieldConfig;
use crate::{Vec2, Vec3};

/// Risks of one grid cell. Unknown quantities are NaN and force an infinite cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRisk {
    /// Ground height (lower 10th percentile of the cell's point heights).
    pub ground: f64,
    /// Fraction of points above the body clearance, in `[0, 1]`.
    pub collision: f64,
    /// Slope angle of the fitted ground plane, radians.
    pub slope: f64,
    /// Largest height gap to an occupied 8-neighbour, metres.
    pub step: f64,
    /// Combined traversability value; `+inf` for unknown cells.
    pub cost: f64,
}

impl CellRisk {
    pub const UNKNOWN: CellRisk = CellRisk {
        ground: f64::NAN,
        collision: f64::NAN,
        slope: f64::NAN,
        step: f64::NAN,
        cost: f64::INFINITY,
    };

    pub fn is_occupied(&self) -> bool {
        self.ground.is_finite()
    }
}

/// Combines the three risks; any non-finite input gives `+inf`.
pub(crate) fn combine(collision: f64, slope: f64, step: f64, cfg: &CostFieldConfig) -> f64 {
    if !(collision.is_finite() && slope.is_finite() && step.is_finite()) {
        return f64::INFINITY;
    }
    collision + cfg.slope_weight * slope / cfg.slope_crit + cfg.step_weight * step / cfg.step_crit
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

/// Row-major 2-D grid of cell risks. Cell `(ix, iy)` covers
/// `origin + [ix, ix+1) x [iy, iy+1) * cell_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversabilityGrid {
    pub origin: Vec2,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<CellRisk>,
}

impl TraversabilityGrid {
    /// Grid where every cell is flat, occupied ground with zero cost.
    pub fn flat(origin: Vec2, cell_size: f64, width: usize, height: usize) -> Self {
        let free = CellRisk {
            ground: 0.0,
            collision: 0.0,
            slope: 0.0,
            step: 0.0,
            cost: 0.0,
        };
        Self {
            origin,
            cell_size,
            width,
            height,
            cells: vec![free; width * height],
        }
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            origin: [self.origin.x, self.origin.y],
            cell_size: self.cell_size,
            width: self.width,
            height: self.height,
        }
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &CellRisk {
        &self.cells[self.index(ix, iy)]
    }

    pub fn cell_mut(&mut self, ix: usize, iy: usize) -> &mut CellRisk {
        let i = self.index(ix, iy);
        &mut self.cells[i]
    }

    /// Cell containing `p`, if inside the grid.
    pub fn locate(&self, p: Vec2) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.cell_size).floor();
        let fy = ((p.y - self.origin.y) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        self.origin + Vec2::new(ix as f64 + 0.5, iy as f64 + 0.5) * self.cell_size
    }

    /// Traversability at a world position; `None` outside the grid.
    pub fn cost_at(&self, p: Vec2) -> Option<f64> {
        self.locate(p).map(|(ix, iy)| self.cell(ix, iy).cost)
    }

    /// Mean traversability along the straight segment `a -> b`, sampled once
    /// per cell length. Samples outside the grid are ignored; a segment that
    /// never touches the grid has mean 0.
    pub fn segment_mean_cost(&self, a: Vec2, b: Vec2) -> f64 {
        let len = (b - a).norm();
        let n = (len / self.cell_size).ceil().max(1.0) as usize;
        let mut sum = 0.0;
        let mut count = 0usize;
        for k in 0..=n {
            let p = a + (b - a) * (k as f64 / n as f64);
            if let Some(c) = self.cost_at(p) {
                if c.is_infinite() {
                    return f64::INFINITY;
                }
                sum += c;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Step risk of cell `(ix, iy)` from the stored ground heights.
    pub fn step_at(&self, ix: usize, iy: usize) -> f64 {
        let grounds: Vec<f64> = self.cells.iter().map(|c| c.ground).collect();
        step_from_heights(&grounds, self.width, self.height, ix, iy)
    }

    /// Recomputes every combined cost from the stored risks.
    pub fn recompute_costs(&mut self, cfg: &CostFieldConfig) {
        for c in &mut self.cells {
            c.cost = combine(c.collision, c.slope, c.step, cfg);
        }
    }

    /// Grid export: one JSON header line, then one CSV row of costs per grid row.
    pub fn to_csv(&self) -> String {
        let mut out = serde_json::to_string(&self.header()).expect("header serializes");
        out.push('\n');
        for iy in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|ix| format_cost(self.cell(ix, iy).cost))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses the export produced by [`TraversabilityGrid::to_csv`]. Only the
    /// costs round-trip; the individual risks come back as NaN.
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header: GridHeader = serde_json::from_str(lines.next().ok_or("empty grid file")?)
            .map_err(|e| format!("grid header: {e}"))?;
        let mut cells = Vec::with_capacity(header.width * header.height);
        for (iy, line) in lines.enumerate().take(header.height) {
            for tok in line.split(',') {
                let cost = parse_cost(tok.trim())
                    .ok_or_else(|| format!("grid row {iy}: bad value '{tok}'"))?;
                cells.push(CellRisk {
                    cost,
                    ..CellRisk::UNKNOWN
                });
            }
        }
        if cells.len() != header.width * header.height {
            return Err(format!(
                "grid has {} values, header says {}x{}",
                cells.len(),
                header.width,
                header.height
            ));
        }
        Ok(Self {
            origin: Vec2::new(header.origin[0], header.origin[1]),
            cell_size: header.cell_size,
            width: header.width,
            height: header.height,
            cells,
        })
    }
}

fn format_cost(c: f64) -> String {
    if c.is_infinite() {
        "inf".to_string()
    } else {
        format!("{c}")
    }
}

fn parse_cost(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        _ => s.parse().ok(),
    }
}

fn step_from_heights(grounds: &[f64], width: usize, height: usize, ix: usize, iy: usize) -> f64 {
    let h = grounds[iy * width + ix];
    if !h.is_finite() {
        return f64::NAN;
    }
    let mut step = 0.0f64;
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let (nx, ny) = (ix as i64 + dx, iy as i64 + dy);
            if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                continue;
            }
            let hn = grounds[ny as usize * width + nx as usize];
            if hn.is_finite() {
                step = step.max((h - hn).abs());
            }
        }
    }
    step
}

/// Slope of the least-squares plane through `points`, radians in `[0, pi/2]`.
///
/// The normal is the right singular vector of the centred point scatter with
/// the smallest singular value. Returns `None` for fewer than three points or
/// a collinear neighbourhood.
pub fn plane_slope(points: &[Vec3]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let svd = SVD::new(scatter, false, true);
    let v_t = svd.v_t?;
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (largest, middle, smallest) = (sv[order[0]], sv[order[1]], order[2]);
    if largest <= 0.0 || middle <= largest * 1e-10 {
        return None;
    }
    let normal = v_t.row(smallest).transpose();
    let cos = (normal.z.abs() / normal.norm()).clamp(0.0, 1.0);
    Some(cos.acos())
}

/// Slope at terrain point `center` from the points inside the axis-aligned
/// cube of side `window` around it.
pub fn slope_at(points: &[Vec3], center: Vec3, window: f64) -> Option<f64> {
    let half = 0.5 * window;
    let local: Vec<Vec3> = points
        .iter()
        .filter(|p| (*p - center).abs().max() <= half)
        .copied()
        .collect();
    plane_slope(&local)
}

/// Builds the traversability grid of a terrain cloud.
///
/// The grid spans the cloud's bounding box snapped to multiples of
/// `cell_size`. An empty cloud yields an empty grid.
pub fn build_grid(cloud: &[Vec3], cfg: &CostFieldConfig, cell_size: f64) -> TraversabilityGrid {
    assert!(cell_size > 0.0, "cell_size must be positive");
    if cloud.is_empty() {
        return TraversabilityGrid {
            origin: Vec2::zeros(),
            cell_size,
            width: 0,
            height: 0,
            cells: Vec::new(),
        };
    }
    let (mut min, mut max) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
    for p in cloud {
        min = min.inf(&p.xy());
        max = max.sup(&p.xy());
    }
    let origin = (min / cell_size).map(f64::floor) * cell_size;
    let width = ((max.x - origin.x) / cell_size).floor() as usize + 1;
    let height = ((max.y - origin.y) / cell_size).floor() as usize + 1;

    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); width * height];
    for (i, p) in cloud.iter().enumerate() {
        let ix = (((p.x - origin.x) / cell_size).floor() as usize).min(width - 1);
        let iy = (((p.y - origin.y) / cell_size).floor() as usize).min(height - 1);
        bins[iy * width + ix].push(i as u32);
    }

    // Ground height and collision risk per cell.
    let base: Vec<(f64, f64)> = bins
        .par_iter()
        .map(|bin| {
            if bin.is_empty() {
                return (f64::NAN, f64::NAN);
            }
            let mut zs: Vec<f64> = bin.iter().map(|&i| cloud[i as usize].z).collect();
            zs.sort_by(f64::total_cmp);
            let ground = zs[((zs.len() - 1) as f64 * 0.1).floor() as usize];
            let above = zs.iter().filter(|&&z| z > ground + cfg.body_clearance).count();
            (ground, (above as f64 / zs.len() as f64).clamp(0.0, 1.0))
        })
        .collect();
    let grounds: Vec<f64> = base.iter().map(|b| b.0).collect();

    let reach = (0.5 * cfg.slope_window / cell_size).ceil() as i64;
    let cells: Vec<CellRisk> = (0..width * height)
        .into_par_iter()
        .map(|idx| {
            let (ix, iy) = (idx % width, idx / width);
            let (ground, collision) = base[idx];
            if !ground.is_finite() {
                return CellRisk::UNKNOWN;
            }
            let c = origin + Vec2::new(ix as f64 + 0.5, iy as f64 + 0.5) * cell_size;
            let center = Vec3::new(c.x, c.y, ground);
            let mut neighbourhood = Vec::new();
            for ny in (iy as i64 - reach).max(0)..=(iy as i64 + reach).min(height as i64 - 1) {
                for nx in (ix as i64 - reach).max(0)..=(ix as i64 + reach).min(width as i64 - 1) {
                    neighbourhood.extend(
                        bins[ny as usize * width + nx as usize]
                            .iter()
                            .map(|&i| cloud[i as usize]),
                    );
                }
            }
            let slope = slope_at(&neighbourhood, center, cfg.slope_window).unwrap_or(f64::NAN);
            let step = step_from_heights(&grounds, width, height, ix, iy);
            CellRisk {
                ground,
                collision,
                slope,
                step,
                cost: combine(collision, slope, step, cfg),
            }
        })
        .collect();

    TraversabilityGrid {
        origin,
        cell_size,
        width,
        height,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn plane_cloud(f: impl Fn(f64, f64) -> f64, n: usize, spacing: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let (x, y) = ((i as f64 + 0.25) * spacing, (j as f64 + 0.25) * spacing);
                pts.push(Vec3::new(x, y, f(x, y)));
            }
        }
        pts
    }

    #[test]
    fn flat_plane_is_free() {
        let cloud = plane_cloud(|_, _| 0.0, 40, 0.05);
        let grid = build_grid(&cloud, &CostFieldConfig::default(), 0.1);
        assert!(grid.cells.iter().all(|c| c.cost == 0.0 && c.slope == 0.0));
    }

    #[test]
    fn ramp_slope_term_is_one() {
        let cfg = CostFieldConfig {
            slope_weight: 1.0,
            slope_crit: FRAC_PI_4,
            step_weight: 0.0,
            ..Default::default()
        };
        let cloud = plane_cloud(|x, _| x, 40, 0.05);
        let grid = build_grid(&cloud, &cfg, 0.1);
        for c in &grid.cells {
            assert!((c.slope - FRAC_PI_4).abs() < 1e-9, "slope {}", c.slope);
            assert_eq!(c.collision, 0.0);
            assert!((c.cost - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn slope_of_analytic_planes() {
        let flat = plane_cloud(|_, _| 1.5, 6, 0.1);
        assert!(plane_slope(&flat).unwrap().abs() < 1e-12);
        let ramp = plane_cloud(|x, _| x, 6, 0.1);
        assert!((plane_slope(&ramp).unwrap() - FRAC_PI_4).abs() < 1e-12);
        let wall: Vec<Vec3> = (0..5)
            .flat_map(|i| (0..5).map(move |j| Vec3::new(2.0, i as f64 * 0.1, j as f64 * 0.1)))
            .collect();
        assert!((plane_slope(&wall).unwrap() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_neighbourhoods_have_no_slope() {
        assert!(plane_slope(&[Vec3::zeros(), Vec3::x()]).is_none());
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(plane_slope(&line).is_none());
    }

    #[test]
    fn slope_invariant_under_yaw() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..30)
            .map(|_| {
                let (x, y) = (rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
                Vec3::new(x, y, 0.3 * x - 0.7 * y + rng.gen_range(-0.01..0.01))
            })
            .collect();
        let s0 = plane_slope(&pts).unwrap();
        for k in 1..8 {
            let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), k as f64 * 0.7);
            let rotated: Vec<Vec3> = pts.iter().map(|p| rot * p).collect();
            assert!((plane_slope(&rotated).unwrap() - s0).abs() < 1e-10);
        }
    }

    #[test]
    fn hole_in_cloud_is_negative_obstacle() {
        let cloud: Vec<Vec3> = plane_cloud(|_, _| 0.0, 30, 0.05)
            .into_iter()
            .filter(|p| !(p.x > 0.7 && p.x < 0.8 && p.y > 0.7 && p.y < 0.8))
            .collect();
        let grid = build_grid(&cloud, &CostFieldConfig::default(), 0.1);
        let (ix, iy) = grid.locate(Vec2::new(0.75, 0.75)).unwrap();
        assert_eq!(grid.cell(ix, iy).cost, f64::INFINITY);
        assert!(grid.cell(ix + 1, iy).cost.is_finite());
    }

    #[test]
    fn step_edge_cases() {
        let mut grid = TraversabilityGrid::flat(Vec2::zeros(), 0.1, 3, 3);
        assert_eq!(grid.step_at(1, 1), 0.0);
        for c in &mut grid.cells {
            *c = CellRisk::UNKNOWN;
        }
        grid.cell_mut(1, 1).ground = 0.4;
        assert_eq!(grid.step_at(1, 1), 0.0);
    }

    #[test]
    fn csv_roundtrip_keeps_costs() {
        let mut grid = TraversabilityGrid::flat(Vec2::new(-1.0, 2.0), 0.25, 3, 2);
        grid.cell_mut(2, 1).cost = f64::INFINITY;
        grid.cell_mut(0, 1).cost = 0.125;
        let text = grid.to_csv();
        assert!(text.lines().nth(2).unwrap().ends_with("inf"));
        let back = TraversabilityGrid::from_csv(&text).unwrap();
        let costs: Vec<f64> = back.cells.iter().map(|c| c.cost).collect();
        let orig: Vec<f64> = grid.cells.iter().map(|c| c.cost).collect();
        assert_eq!(costs, orig);
        assert_eq!(back.header(), grid.header());
    }

    #[test]
    fn segment_mean_cost_sees_walls() {
        let mut grid = TraversabilityGrid::flat(Vec2::zeros(), 0.1, 20, 20);
        assert_eq!(grid.segment_mean_cost(Vec2::new(0.05, 0.05), Vec2::new(1.9, 1.9)), 0.0);
        for iy in 0..20 {
            grid.cell_mut(10, iy).cost = f64::INFINITY;
        }
        assert!(grid
            .segment_mean_cost(Vec2::new(0.05, 0.5), Vec2::new(1.9, 0.5))
            .is_infinite());
    }
}
