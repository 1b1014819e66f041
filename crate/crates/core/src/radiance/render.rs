use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pixel_ray, Image, Intrinsics, Pose, RadianceQuery};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    /// Ray from `origin` along the normalized `direction`, unbounded.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
            near: 0.0,
            far: f64::INFINITY,
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Interval of the ray inside the field bounds, if any.
    pub fn clip<F: RadianceQuery + ?Sized>(&self, field: &F) -> Option<(f64, f64)> {
        let (t0, t1) = field.bounds().intersect(&self.origin, &self.direction)?;
        let (near, far) = (t0.max(self.near), t1.min(self.far));
        (near < far).then_some((near, far))
    }
}

/// Samples along one ray, ordered by depth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub colour: Vec<[f64; 3]>,
    /// `T_1..T_{K+1}`; the last entry is the light surviving the whole ray.
    pub transmittance: Vec<f64>,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Compositing weights `T_i (1 - exp(-sigma_i delta_i))`.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.transmittance[i] - self.transmittance[i + 1])
            .collect()
    }
}

/// Front-to-back compositing. Returns the colour and `T_1..T_{K+1}`.
pub fn composite(sigma: &[f64], delta: &[f64], colour: &[[f64; 3]]) -> ([f64; 3], Vec<f64>) {
    let mut t = Vec::with_capacity(sigma.len() + 1);
    let mut c = [0.0; 3];
    let mut trans = 1.0;
    t.push(trans);
    for i in 0..sigma.len() {
        let survive = (-sigma[i] * delta[i]).exp();
        let w = trans * (1.0 - survive);
        for ch in 0..3 {
            c[ch] += w * colour[i][ch];
        }
        trans *= survive;
        t.push(trans);
    }
    (c, t)
}

/// Stratified depths on `[near, far]`: bin `i` is sampled at fraction
/// `jitter[i]` of its width (the bin midpoint without jitter).
pub fn stratified_depths(near: f64, far: f64, k: usize, jitter: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let delta = (far - near) / k as f64;
    let t = (0..k)
        .map(|i| near + (i as f64 + jitter.map(|j| j[i]).unwrap_or(0.5)) * delta)
        .collect();
    (t, vec![delta; k])
}

/// Renders one ray with `k` samples over its part inside the field bounds.
/// Rays that miss the bounds are black and carry no samples.
pub fn render_ray<F: RadianceQuery + ?Sized>(field: &F, ray: &Ray, k: usize, jitter: Option<&[f64]>) -> ([f64; 3], RaySamples) {
    assert!(k >= 1, "need at least one sample");
    let Some((near, far)) = ray.clip(field) else {
        return ([0.0; 3], RaySamples::default());
    };
    let (t, delta) = stratified_depths(near, far, k, jitter);
    let (sigma, colour): (Vec<f64>, Vec<[f64; 3]>) = t.iter().map(|&s| field.query(&ray.at(s))).unzip();
    let (c, transmittance) = composite(&sigma, &delta, &colour);
    (
        c,
        RaySamples {
            t,
            delta,
            sigma,
            colour,
            transmittance,
        },
    )
}

/// Renders a full image with midpoint samples.
pub fn render_image<F: RadianceQuery + ?Sized>(field: &F, pose: &Pose, k: &Intrinsics, samples: usize) -> Image {
    let pixels = (0..k.width * k.height)
        .into_par_iter()
        .map(|i| render_ray(field, &pixel_ray(pose, k, i % k.width, i / k.width), samples, None).0)
        .collect();
    Image {
        width: k.width,
        height: k.height,
        pixels,
    }
}
