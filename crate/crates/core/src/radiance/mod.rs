//! Voxel radiance fields: queries, volume rendering, losses and training.
//!
//! Colour does not depend on the viewing direction.

mod camera;
pub mod checkpoint;
mod field;
mod loss;
mod render;
mod scene;
mod train;

pub use camera::{pixel_ray, Image, Intrinsics, Pose, PoseRecord, PosedImage};
pub use field::{sigmoid, softplus, softplus_inverse, Aabb, RadianceQuery, Stencil, VoxelRadianceField};
pub use loss::{occlusion_loss, occlusion_term, psnr, psnr_from_mse, rendering_loss, OcclusionConfig};
pub use render::{composite, render_image, render_ray, stratified_depths, Ray, RaySamples};
pub use scene::{render_reference, AnalyticScene, Primitive, Shape, K_REF};
pub use train::{loss_and_gradient, train, BatchLoss, EpochMetrics, Gradient, TrainConfig};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RadianceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(String),
    #[error("batch lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("image dimensions differ")]
    DimensionMismatch,
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("training needs at least 2 images, got {0}")]
    TooFewImages(usize),
    #[error("loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid scene description")]
    InvalidScene,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

impl RadianceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Mean density of the near-camera samples of every training ray, using
/// midpoint sampling. This is the band the occlusion penalty acts on.
pub fn prefix_mean_density<F: RadianceQuery + ?Sized>(
    field: &F,
    images: &[PosedImage],
    k: usize,
    occlusion: &OcclusionConfig,
) -> f64 {
    let p = occlusion.prefix_len(k);
    let mut sum = 0.0;
    let mut count = 0usize;
    for img in images {
        for y in 0..img.image.height {
            for x in 0..img.image.width {
                let (_, s) = render_ray(field, &img.pixel_ray(x, y), k, None);
                if s.is_empty() {
                    continue;
                }
                sum += s.sigma[..p].iter().sum::<f64>();
                count += p;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean PSNR of the field rendered at every image pose.
pub fn evaluate_psnr<F: RadianceQuery + ?Sized>(field: &F, images: &[PosedImage], k: usize) -> f64 {
    let mut mse = 0.0;
    for img in images {
        let pred = render_image(field, &img.pose, &img.intrinsics, k);
        mse += rendering_loss(&pred.pixels, &img.image.pixels).expect("same size") / 3.0;
    }
    psnr_from_mse(mse / images.len().max(1) as f64)
}
