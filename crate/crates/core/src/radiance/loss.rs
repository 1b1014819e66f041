use serde::{Deserialize, Serialize};

use super::{Image, RadianceError, RaySamples};

/// Mean over rays of the squared colour error.
pub fn rendering_loss(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64, RadianceError> {
    if pred.len() != gt.len() {
        return Err(RadianceError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (0..3).map(|c| (p[c] - g[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Which near-camera samples the occlusion penalty applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    /// Fraction of the samples, counted from the camera, that are penalised.
    pub prefix_frac: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self { prefix_frac: 0.15 }
    }
}

impl OcclusionConfig {
    /// Number of penalised samples out of `k`.
    pub fn prefix_len(&self, k: usize) -> usize {
        ((self.prefix_frac.clamp(0.0, 1.0) * k as f64).ceil() as usize).min(k)
    }

    pub fn mask(&self, k: usize) -> Vec<bool> {
        let p = self.prefix_len(k);
        (0..k).map(|i| i < p).collect()
    }
}

/// `(1/K) sum_k sigma_k m_k` for one ray.
pub fn occlusion_term(sigma: &[f64], mask: &[bool]) -> f64 {
    assert_eq!(sigma.len(), mask.len(), "mask length must match the samples");
    if sigma.is_empty() {
        return 0.0;
    }
    sigma.iter().zip(mask).filter(|(_, &m)| m).map(|(s, _)| s).sum::<f64>() / sigma.len() as f64
}

/// Mean occlusion term over a batch of rays.
pub fn occlusion_loss(samples: &[RaySamples], cfg: &OcclusionConfig) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| occlusion_term(&s.sigma, &cfg.mask(s.len())))
        .sum::<f64>()
        / samples.len() as f64
}

/// Peak signal-to-noise ratio of unit-range images; `+inf` when identical.
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64, RadianceError> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(RadianceError::DimensionMismatch);
    }
    let mse = rendering_loss(&pred.pixels, &gt.pixels)? / 3.0;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_loss_examples() {
        assert_eq!(rendering_loss(&[[0.2; 3]], &[[0.2; 3]]).unwrap(), 0.0);
        assert_eq!(rendering_loss(&[[1.0, 0.0, 0.0]], &[[0.0; 3]]).unwrap(), 1.0);
        let a = [[0.5f64.sqrt(), 0.0, 0.0], [0.5, 0.0, 0.0]];
        let l = rendering_loss(&a, &[[0.0; 3]; 2]).unwrap();
        assert!((l - 0.375).abs() < 1e-15);
        assert!(matches!(rendering_loss(&a, &[[0.0; 3]]), Err(RadianceError::LengthMismatch(2, 1))));
    }

    #[test]
    fn occlusion_examples() {
        assert_eq!(occlusion_term(&[1.0; 4], &[true, true, false, false]), 0.5);
        assert_eq!(occlusion_term(&[1.0; 4], &[false; 4]), 0.0);
        assert_eq!(occlusion_term(&[2.0, 0.0, 4.0, 0.0], &[true; 4]), 1.5);
    }

    #[test]
    fn prefix_mask() {
        let cfg = OcclusionConfig::default();
        assert_eq!(cfg.prefix_len(64), 10);
        let m = cfg.mask(20);
        assert_eq!(m.iter().filter(|&&x| x).count(), 3);
        assert!(m[..3].iter().all(|&x| x) && m[3..].iter().all(|&x| !x));
    }

    #[test]
    fn psnr_examples() {
        let mut a = Image::new(4, 4);
        let b = a.clone();
        assert_eq!(psnr(&a, &b).unwrap(), f64::INFINITY);
        for p in &mut a.pixels {
            *p = [0.1; 3];
        }
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        for p in &mut a.pixels {
            *p = [1.0; 3];
        }
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &Image::new(2, 2)).is_err());
    }
}
