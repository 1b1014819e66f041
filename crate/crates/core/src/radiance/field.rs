use serde::{Deserialize, Serialize};

use crate::Vec3;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        assert!(min.iter().zip(max.iter()).all(|(a, b)| a < b), "empty box");
        Self { min, max }
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.max[a])
    }

    /// Entry and exit distances of the ray `o + t d`, `t >= 0`.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, f64)> {
        let mut t0: f64 = 0.0;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-300 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut lo, mut hi) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

/// Anything that can be queried for density and colour.
pub trait RadianceQuery: Sync {
    fn query(&self, x: &Vec3) -> (f64, [f64; 3]);

    fn density(&self, x: &Vec3) -> f64 {
        self.query(x).0
    }

    /// Region outside of which density is zero.
    fn bounds(&self) -> Aabb;
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive values.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Dense voxel grid of raw density and colour parameters.
///
/// Densities pass through softplus and colours through a sigmoid; the
/// activated values are interpolated trilinearly between voxel centres.
/// Queries beyond the outermost centres clamp to the border voxels, and
/// queries outside `bounds` return zero density and black.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelRadianceField {
    pub bounds: Aabb,
    pub resolution: [usize; 3],
    pub density: Vec<f64>,
    pub colour: Vec<[f64; 3]>,
}

/// The eight voxels around a point with their trilinear weights.
pub type Stencil = [(usize, f64); 8];

impl VoxelRadianceField {
    pub fn new(bounds: Aabb, resolution: [usize; 3], raw_density: f64, raw_colour: f64) -> Self {
        assert!(resolution.iter().all(|&r| r >= 1), "resolution must be positive");
        let n = resolution.iter().product();
        Self {
            bounds,
            resolution,
            density: vec![raw_density; n],
            colour: vec![[raw_colour; 3]; n],
        }
    }

    /// Starting point for training: faint density (about 0.13) and mid-grey.
    pub fn initial(bounds: Aabb, resolution: [usize; 3]) -> Self {
        Self::new(bounds, resolution, -2.0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution[1] + j) * self.resolution[0] + i
    }

    pub fn voxel_size(&self) -> Vec3 {
        let s = self.bounds.size();
        Vec3::new(
            s.x / self.resolution[0] as f64,
            s.y / self.resolution[1] as f64,
            s.z / self.resolution[2] as f64,
        )
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let v = self.voxel_size();
        self.bounds.min + Vec3::new((i as f64 + 0.5) * v.x, (j as f64 + 0.5) * v.y, (k as f64 + 0.5) * v.z)
    }

    pub fn activated_density(&self, idx: usize) -> f64 {
        softplus(self.density[idx])
    }

    pub fn activated_colour(&self, idx: usize) -> [f64; 3] {
        self.colour[idx].map(sigmoid)
    }

    /// Interpolation stencil of `x`, `None` outside the bounds.
    pub fn stencil(&self, x: &Vec3) -> Option<Stencil> {
        if !self.bounds.contains(x) {
            return None;
        }
        let v = self.voxel_size();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut f = [0.0; 3];
        for a in 0..3 {
            let r = self.resolution[a];
            let u = ((x[a] - self.bounds.min[a]) / v[a] - 0.5).clamp(0.0, (r - 1) as f64);
            let i0 = (u.floor() as usize).min(r.saturating_sub(2));
            lo[a] = i0;
            hi[a] = (i0 + 1).min(r - 1);
            f[a] = if hi[a] == lo[a] { 0.0 } else { u - i0 as f64 };
        }
        let mut out = [(0usize, 0.0); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let pick = |a: usize| if c >> a & 1 == 1 { (hi[a], f[a]) } else { (lo[a], 1.0 - f[a]) };
            let ((i, wx), (j, wy), (k, wz)) = (pick(0), pick(1), pick(2));
            *slot = (self.index(i, j, k), wx * wy * wz);
        }
        Some(out)
    }

    /// Activated values blended with a precomputed stencil.
    pub fn query_stencil(&self, s: &Stencil) -> (f64, [f64; 3]) {
        let mut sigma = 0.0;
        let mut c = [0.0; 3];
        for &(idx, w) in s {
            if w == 0.0 {
                continue;
            }
            sigma += w * self.activated_density(idx);
            let a = self.activated_colour(idx);
            for ch in 0..3 {
                c[ch] += w * a[ch];
            }
        }
        (sigma, c)
    }
}

impl RadianceQuery for VoxelRadianceField {
    fn query(&self, x: &Vec3) -> (f64, [f64; 3]) {
        match self.stencil(x) {
            Some(s) => self.query_stencil(&s),
            None => (0.0, [0.0; 3]),
        }
    }

    fn bounds(&self) -> Aabb {
        self.bounds
    }
}
