use serde::{Deserialize, Serialize};

use super::field::sigmoid;
use super::render::render_image;
use super::{Aabb, Intrinsics, Pose, PosedImage, RadianceError, RadianceQuery};
use crate::Vec3;

/// Ray-marching samples used for ground-truth images.
pub const K_REF: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Ellipsoid { center: Vec3, radii: Vec3 },
    /// Upright cylinder standing on `base`.
    Cylinder { base: Vec3, radius: f64, height: f64 },
}

impl Shape {
    /// Approximate signed distance, negative inside.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        match *self {
            Shape::Ellipsoid { center, radii } => {
                let q = (x - center).component_div(&radii);
                (q.norm() - 1.0) * radii.min()
            }
            Shape::Cylinder { base, radius, height } => {
                let d = x - base;
                let radial = (d.x * d.x + d.y * d.y).sqrt() - radius;
                let vertical = (d.z - 0.5 * height).abs() - 0.5 * height;
                radial.max(vertical)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    /// Density deep inside the shape, 1/m.
    pub density: f64,
    pub colour: [f64; 3],
}

/// Closed-form density and colour built from soft-edged primitives.
///
/// A primitive contributes `density * sigmoid(-d / softness)` at signed
/// distance `d`; colours are density-weighted averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub bounds: Aabb,
    pub softness: f64,
    pub primitives: Vec<Primitive>,
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<(), RadianceError> {
        let ok = self.softness > 0.0
            && self
                .primitives
                .iter()
                .all(|p| p.density >= 0.0 && p.colour.iter().all(|c| (0.0..=1.0).contains(c)));
        if ok {
            Ok(())
        } else {
            Err(RadianceError::InvalidScene)
        }
    }

    pub fn empty(bounds: Aabb) -> Self {
        Self {
            bounds,
            softness: 0.02,
            primitives: Vec::new(),
        }
    }

    /// Single sphere.
    pub fn sphere(center: Vec3, radius: f64, density: f64, colour: [f64; 3], softness: f64) -> Self {
        let r = Vec3::repeat(radius * 1.5);
        Self {
            bounds: Aabb::new(center - r, center + r),
            softness,
            primitives: vec![Primitive {
                shape: Shape::Ellipsoid {
                    center,
                    radii: Vec3::repeat(radius),
                },
                density,
                colour,
            }],
        }
    }

    /// Stylised plant of height `height` standing at `base`: stem, round
    /// canopy and a few coloured fruit.
    pub fn plant(base: Vec3, height: f64, spread: f64) -> Self {
        let h = height;
        let r = spread;
        let canopy_c = base + Vec3::new(0.0, 0.0, 0.6 * h);
        let fruit = |dx: f64, dy: f64, dz: f64, colour: [f64; 3]| Primitive {
            shape: Shape::Ellipsoid {
                center: canopy_c + Vec3::new(dx * r, dy * r, dz * h),
                radii: Vec3::repeat(0.22 * r),
            },
            density: 60.0,
            colour,
        };
        let margin = Vec3::new(0.25 * r, 0.25 * r, 0.1 * h);
        Self {
            bounds: Aabb::new(
                base - Vec3::new(r, r, 0.0) - margin,
                base + Vec3::new(r, r, h) + margin,
            ),
            softness: 0.02 * h.max(r),
            primitives: vec![
                Primitive {
                    shape: Shape::Cylinder {
                        base,
                        radius: 0.12 * r,
                        height: 0.45 * h,
                    },
                    density: 40.0,
                    colour: [0.45, 0.3, 0.15],
                },
                Primitive {
                    shape: Shape::Ellipsoid {
                        center: canopy_c,
                        radii: Vec3::new(0.8 * r, 0.8 * r, 0.35 * h),
                    },
                    density: 30.0,
                    colour: [0.2, 0.65, 0.2],
                },
                fruit(0.7, 0.0, 0.05, [0.9, 0.15, 0.1]),
                fruit(-0.35, 0.6, 0.1, [0.95, 0.8, 0.1]),
                fruit(-0.35, -0.6, -0.05, [0.9, 0.15, 0.1]),
                fruit(0.0, 0.0, 0.3, [0.95, 0.8, 0.1]),
            ],
        }
    }
}

impl RadianceQuery for AnalyticScene {
    fn query(&self, x: &Vec3) -> (f64, [f64; 3]) {
        if !self.bounds.contains(x) {
            return (0.0, [0.0; 3]);
        }
        let mut sigma = 0.0;
        let mut c = [0.0; 3];
        for p in &self.primitives {
            let s = p.density * sigmoid(-p.shape.signed_distance(x) / self.softness);
            sigma += s;
            for ch in 0..3 {
                c[ch] += s * p.colour[ch];
            }
        }
        if sigma > 0.0 {
            c = c.map(|v| v / sigma);
        }
        (sigma, c)
    }

    fn bounds(&self) -> Aabb {
        self.bounds
    }
}

/// Ground-truth image of an analytic scene, ray-marched with `k` samples
/// per pixel (normally [`K_REF`]).
pub fn render_reference(scene: &AnalyticScene, pose: &Pose, k: &Intrinsics, samples: usize) -> PosedImage {
    PosedImage {
        image: render_image(scene, pose, k, samples),
        pose: *pose,
        intrinsics: *k,
    }
}
