use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{RadianceError, Ray};
use crate::Vec3;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Centred principal point and a horizontal field of view in radians.
    pub fn from_fov(width: usize, height: usize, fov_x: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }
}

/// Camera-to-world rotation and camera centre. The camera looks along its
/// +z axis with +x right and +y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub center: Vec3,
}

impl Pose {
    /// Camera at `eye` looking at `target`, with world `up` pointing up in the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let fwd = (target - eye).normalize();
        let mut right = fwd.cross(&up);
        if right.norm() < 1e-9 {
            right = fwd.cross(&Vec3::new(1.0, 0.0, 0.0));
            if right.norm() < 1e-9 {
                right = fwd.cross(&Vec3::new(0.0, 1.0, 0.0));
            }
        }
        let right = right.normalize();
        let down = fwd.cross(&right);
        Self {
            rotation: Matrix3::from_columns(&[right, down, fwd]),
            center: eye,
        }
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() < tol && (r.determinant() - 1.0).abs() < tol
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into()
    }
}

/// Pose and intrinsics in the exchange format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PoseRecord {
    pub fn new(pose: &Pose, k: &Intrinsics) -> Self {
        let m = &pose.rotation;
        Self {
            r: [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]),
            t: [pose.center.x, pose.center.y, pose.center.z],
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }

    pub fn split(&self) -> Result<(Pose, Intrinsics), RadianceError> {
        let pose = Pose {
            rotation: Matrix3::from_fn(|i, j| self.r[i][j]),
            center: Vec3::from(self.t),
        };
        if !pose.is_orthonormal(1e-6) {
            return Err(RadianceError::InvalidPose("rotation is not orthonormal".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(RadianceError::InvalidPose("intrinsics must be positive".into()));
        }
        let k = Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        Ok((pose, k))
    }
}

/// Row-major RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0))
                .collect(),
        }
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), RadianceError> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions");
        let file = std::fs::File::create(path).map_err(|e| RadianceError::io(path, e))?;
        let encoder = image::codecs::pnm::PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(image::codecs::pnm::PnmSubtype::Pixmap(image::codecs::pnm::SampleEncoding::Binary));
        img.write_with_encoder(encoder)
            .map_err(|e| RadianceError::Image(format!("{}: {e}", path.display())))
    }

    pub fn read_ppm(path: &Path) -> Result<Self, RadianceError> {
        let bytes = std::fs::read(path).map_err(|e| RadianceError::io(path, e))?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
            .map_err(|e| RadianceError::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        Ok(Self {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels: img.pixels().map(|p| p.0.map(|v| v as f64 / 255.0)).collect(),
        })
    }
}

/// Image with the camera that took it.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedImage {
    pub image: Image,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

impl PosedImage {
    /// Ray through the centre of pixel `(x, y)`.
    pub fn pixel_ray(&self, x: usize, y: usize) -> Ray {
        pixel_ray(&self.pose, &self.intrinsics, x, y)
    }
}

pub fn pixel_ray(pose: &Pose, k: &Intrinsics, x: usize, y: usize) -> Ray {
    let d = Vec3::new((x as f64 + 0.5 - k.cx) / k.fx, (y as f64 + 0.5 - k.cy) / k.fy, 1.0);
    Ray::new(pose.center, pose.rotation * d)
}
