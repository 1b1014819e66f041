use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::sigmoid;
use super::loss::{psnr_from_mse, OcclusionConfig};
use super::render::{composite, stratified_depths};
use super::{PosedImage, RadianceError, Ray, VoxelRadianceField};

/// Rays per parallel work item. Fixed so results do not depend on the
/// number of worker threads.
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_ray: usize,
    pub lr_density: f64,
    pub lr_colour: f64,
    /// Heavy-ball momentum; 0 gives plain gradient descent.
    pub momentum: f64,
    pub occ_weight: f64,
    pub occlusion: OcclusionConfig,
    /// Jitter sample depths inside their bins.
    pub jitter: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 4096,
            samples_per_ray: 48,
            lr_density: 5.0,
            lr_colour: 3.0,
            momentum: 0.9,
            occ_weight: 1.0,
            occlusion: OcclusionConfig::default(),
            jitter: true,
            seed: 0,
        }
    }
}

/// Training losses averaged over the rays of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_color: f64,
    pub l_occ: f64,
    /// From the per-channel colour error.
    pub psnr: f64,
}

/// Gradient with respect to the raw voxel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub density: Vec<f64>,
    pub colour: Vec<[f64; 3]>,
}

impl Gradient {
    pub fn zeros(n: usize) -> Self {
        Self {
            density: vec![0.0; n],
            colour: vec![[0.0; 3]; n],
        }
    }

    fn add(&mut self, other: &Gradient) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += b;
        }
        for (a, b) in self.colour.iter_mut().zip(&other.colour) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
    }
}

/// Loss terms of a ray batch and the gradient of
/// `l_color + occ_weight * l_occ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub l_color: f64,
    pub l_occ: f64,
    pub gradient: Gradient,
}

/// Forward and backward pass over a batch. `jitter` holds `k` values per
/// ray when present.
pub fn loss_and_gradient(
    field: &VoxelRadianceField,
    rays: &[Ray],
    targets: &[[f64; 3]],
    k: usize,
    jitter: Option<&[f64]>,
    occ_weight: f64,
    occlusion: &OcclusionConfig,
) -> BatchLoss {
    assert_eq!(rays.len(), targets.len());
    let n = rays.len().max(1) as f64;
    let mask = occlusion.mask(k);
    let parts: Vec<(f64, f64, Gradient)> = (0..rays.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut g = Gradient::zeros(field.len());
            let (mut lc, mut lo) = (0.0, 0.0);
            for &r in idx {
                let jit = jitter.map(|j| &j[r * k..(r + 1) * k]);
                let (c, o) = ray_backward(field, &rays[r], &targets[r], k, jit, &mask, occ_weight, n, &mut g);
                lc += c;
                lo += o;
            }
            (lc, lo, g)
        })
        .collect();
    let mut out = BatchLoss {
        l_color: 0.0,
        l_occ: 0.0,
        gradient: Gradient::zeros(field.len()),
    };
    for (lc, lo, g) in &parts {
        out.l_color += lc;
        out.l_occ += lo;
        out.gradient.add(g);
    }
    out.l_color /= n;
    out.l_occ /= n;
    out
}

/// Accumulates one ray's gradient into `g` and returns its unnormalized
/// colour error and occlusion term.
#[allow(clippy::too_many_arguments)]
fn ray_backward(
    field: &VoxelRadianceField,
    ray: &Ray,
    target: &[f64; 3],
    k: usize,
    jitter: Option<&[f64]>,
    mask: &[bool],
    occ_weight: f64,
    n: f64,
    g: &mut Gradient,
) -> (f64, f64) {
    let Some((near, far)) = ray.clip(field) else {
        return ((0..3).map(|c| target[c] * target[c]).sum(), 0.0);
    };
    let (t, delta) = stratified_depths(near, far, k, jitter);
    let stencils: Vec<_> = t.iter().map(|&s| field.stencil(&ray.at(s))).collect();
    let (sigma, colour): (Vec<f64>, Vec<[f64; 3]>) = stencils
        .iter()
        .map(|s| s.as_ref().map(|s| field.query_stencil(s)).unwrap_or((0.0, [0.0; 3])))
        .unzip();
    let (c, trans) = composite(&sigma, &delta, &colour);
    let err: [f64; 3] = [0, 1, 2].map(|ch| c[ch] - target[ch]);
    let l_color: f64 = err.iter().map(|e| e * e).sum();
    let l_occ: f64 = sigma.iter().zip(mask).filter(|(_, &m)| m).map(|(s, _)| s).sum::<f64>() / k as f64;
    let dc = err.map(|e| 2.0 * e / n);

    // Walk back to front keeping sum_{j>i} w_j <dc, c_j>.
    let mut tail = 0.0;
    for i in (0..k).rev() {
        let w = trans[i] - trans[i + 1];
        let gc: f64 = (0..3).map(|ch| dc[ch] * colour[i][ch]).sum();
        let mut d_sigma = delta[i] * (trans[i + 1] * gc - tail);
        if mask[i] {
            d_sigma += occ_weight / (k as f64 * n);
        }
        tail += w * gc;
        let Some(st) = &stencils[i] else { continue };
        for &(idx, wt) in st {
            if wt == 0.0 {
                continue;
            }
            g.density[idx] += d_sigma * wt * sigmoid(field.density[idx]);
            if w != 0.0 {
                for ch in 0..3 {
                    let s = sigmoid(field.colour[idx][ch]);
                    g.colour[idx][ch] += dc[ch] * w * wt * s * (1.0 - s);
                }
            }
        }
    }
    (l_color, l_occ)
}

/// Trains `field` on posed images by mini-batch gradient descent.
pub fn train(
    field: &mut VoxelRadianceField,
    images: &[PosedImage],
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>, RadianceError> {
    if images.len() < 2 {
        return Err(RadianceError::TooFewImages(images.len()));
    }
    let k = cfg.samples_per_ray;
    let mut rays = Vec::new();
    let mut targets = Vec::new();
    for img in images {
        for y in 0..img.image.height {
            for x in 0..img.image.width {
                rays.push(img.pixel_ray(x, y));
                targets.push(img.image.get(x, y));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..rays.len()).collect();
    let mut velocity = Gradient::zeros(field.len());
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut lc, mut lo) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let br: Vec<Ray> = batch.iter().map(|&i| rays[i]).collect();
            let bt: Vec<[f64; 3]> = batch.iter().map(|&i| targets[i]).collect();
            let jitter: Option<Vec<f64>> = cfg.jitter.then(|| (0..br.len() * k).map(|_| rng.gen::<f64>()).collect());
            let out = loss_and_gradient(field, &br, &bt, k, jitter.as_deref(), cfg.occ_weight, &cfg.occlusion);
            if !(out.l_color.is_finite() && out.l_occ.is_finite()) {
                return Err(RadianceError::Diverged { epoch });
            }
            lc += out.l_color * batch.len() as f64;
            lo += out.l_occ * batch.len() as f64;
            step(field, &mut velocity, &out.gradient, batch.len() as f64, cfg);
        }
        let l_color = lc / rays.len() as f64;
        let l_occ = lo / rays.len() as f64;
        log::debug!("epoch {epoch}: L_color {l_color:.6} L_occ {l_occ:.6}");
        metrics.push(EpochMetrics {
            epoch,
            l_color,
            l_occ,
            psnr: psnr_from_mse(l_color / 3.0),
        });
    }
    Ok(metrics)
}

/// Step sizes apply to the batch-summed loss, so a step does not shrink as
/// the batch grows.
fn step(field: &mut VoxelRadianceField, v: &mut Gradient, g: &Gradient, rays: f64, cfg: &TrainConfig) {
    for i in 0..field.len() {
        v.density[i] = cfg.momentum * v.density[i] + rays * g.density[i];
        field.density[i] -= cfg.lr_density * v.density[i];
        for ch in 0..3 {
            v.colour[i][ch] = cfg.momentum * v.colour[i][ch] + rays * g.colour[i][ch];
            field.colour[i][ch] -= cfg.lr_colour * v.colour[i][ch];
        }
    }
}
