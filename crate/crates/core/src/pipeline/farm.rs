//! Synthetic farms: plant layout, terrain cloud and per-plant appearance.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::farm_map::Instance;
use crate::radiance::AnalyticScene;
use crate::{Vec2, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TerrainSpec {
    Flat,
    /// Ground rising along +x at `angle` radians.
    Ramp { angle: f64 },
    /// Ground raised by `height` for x at or beyond `x`.
    Curb { height: f64, x: f64 },
    /// Smooth seeded undulation with peak amplitude `amplitude`.
    Noise { amplitude: f64 },
    /// Strip `y <= p.y < y + width` across the farm without ground returns,
    /// which leaves its cells unknown and impassable.
    Ditch { y: f64, width: f64 },
}

/// Layout of a synthetic farm. Rows run along +x and are stacked along +y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FarmSpec {
    pub name: String,
    pub rows: usize,
    pub plants_per_row: usize,
    /// Distance between plant centres within a row.
    pub spacing: f64,
    pub row_spacing: f64,
    pub plant_height: f64,
    /// Canopy radius parameter of the plant model.
    pub plant_spread: f64,
    /// Largest random offset of a plant centre per axis.
    pub jitter: f64,
    /// Free ground around the plants.
    pub margin: f64,
    pub point_spacing: f64,
    pub terrain: TerrainSpec,
    pub max_retries: usize,
}

impl Default for FarmSpec {
    fn default() -> Self {
        Self {
            name: "farm".into(),
            rows: 2,
            plants_per_row: 3,
            spacing: 2.5,
            row_spacing: 3.0,
            plant_height: 0.8,
            plant_spread: 0.4,
            jitter: 0.1,
            margin: 3.0,
            point_spacing: 0.05,
            terrain: TerrainSpec::Flat,
            max_retries: 50,
        }
    }
}

impl FarmSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidSpec(m.to_string()));
        if self.rows == 0 || self.plants_per_row == 0 {
            return bad("a farm needs at least one plant");
        }
        let positive = [
            self.spacing,
            self.row_spacing,
            self.plant_height,
            self.plant_spread,
            self.margin,
            self.point_spacing,
        ];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return bad("lengths must be positive");
        }
        if !(self.jitter >= 0.0) {
            return bad("jitter must be non-negative");
        }
        match self.terrain {
            TerrainSpec::Ramp { angle } if !(angle.abs() < std::f64::consts::FRAC_PI_2) => bad("ramp angle out of range"),
            TerrainSpec::Curb { height, x } if !(height.is_finite() && x.is_finite()) => bad("bad curb"),
            TerrainSpec::Noise { amplitude } if !(amplitude >= 0.0) => bad("noise amplitude must be non-negative"),
            TerrainSpec::Ditch { y, width } if !(y.is_finite() && width.is_finite() && width > 0.0) => bad("bad ditch"),
            _ => Ok(()),
        }
    }

    /// Half extents of a plant footprint.
    pub fn footprint(&self) -> Vec2 {
        Vec2::repeat(0.8 * self.plant_spread)
    }
}

/// Appearance model of one detected plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub instance_id: u32,
    pub scene: AnalyticScene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmScene {
    pub spec: FarmSpec,
    pub seed: u64,
    pub instances: Vec<Instance>,
    pub plants: Vec<PlantModel>,
    /// Suggested robot start outside the rows.
    pub start: [f64; 2],
    /// Phases of the noise terrain.
    pub noise: Vec<[f64; 4]>,
}

impl FarmScene {
    pub fn plant(&self, id: u32) -> Option<&PlantModel> {
        self.plants.iter().find(|p| p.instance_id == id)
    }

    pub fn ground_height(&self, p: Vec2) -> f64 {
        match self.spec.terrain {
            TerrainSpec::Flat | TerrainSpec::Ditch { .. } => 0.0,
            TerrainSpec::Ramp { angle } => angle.tan() * p.x,
            TerrainSpec::Curb { height, x } => {
                if p.x >= x {
                    height
                } else {
                    0.0
                }
            }
            TerrainSpec::Noise { amplitude } => {
                let n = self.noise.len().max(1) as f64;
                amplitude * self.noise.iter().map(|w| (w[0] * p.x + w[1]).sin() * (w[2] * p.y + w[3]).sin()).sum::<f64>() / n
            }
        }
    }

    fn in_ditch(&self, p: Vec2) -> bool {
        matches!(self.spec.terrain, TerrainSpec::Ditch { y, width } if p.y >= y && p.y < y + width)
    }

    /// Ground and plant points. Plants are vertical columns of points over
    /// their footprint, so their cells carry a high collision risk.
    pub fn terrain_cloud(&self) -> Vec<Vec3> {
        let s = self.spec.point_spacing;
        let (lo, hi) = self.extent();
        let nx = ((hi.x - lo.x) / s).round() as usize;
        let ny = ((hi.y - lo.y) / s).round() as usize;
        let mut cloud = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let p = Vec2::new(lo.x + i as f64 * s, lo.y + j as f64 * s);
                if self.in_ditch(p) {
                    continue;
                }
                let z = self.ground_height(p);
                cloud.push(Vec3::new(p.x, p.y, z));
                if let Some(inst) = self.instances.iter().find(|inst| inst.footprint_contains(p)) {
                    let levels = (inst.height / s).floor() as usize;
                    for l in 1..=levels {
                        cloud.push(Vec3::new(p.x, p.y, z + l as f64 * s));
                    }
                }
            }
        }
        cloud
    }

    /// Corners of the generated ground patch.
    pub fn extent(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::repeat(f64::INFINITY);
        let mut hi = Vec2::repeat(f64::NEG_INFINITY);
        for i in &self.instances {
            lo = lo.inf(&(i.center - i.half_extents));
            hi = hi.sup(&(i.center + i.half_extents));
        }
        let m = Vec2::repeat(self.spec.margin);
        (lo - m, hi + m)
    }
}

fn overlaps(a: &Instance, b: &Instance) -> bool {
    let d = (a.center - b.center).abs();
    let s = a.half_extents + b.half_extents;
    d.x < s.x && d.y < s.y
}

/// Generates a farm from `spec`; identical inputs give identical farms.
pub fn genfarm(spec: &FarmSpec, seed: u64) -> Result<FarmScene, PipelineError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = spec.footprint();
    let mut instances = Vec::new();
    let mut placed = false;
    for _ in 0..spec.max_retries.max(1) {
        instances.clear();
        for r in 0..spec.rows {
            for p in 0..spec.plants_per_row {
                let mut offset = || {
                    if spec.jitter > 0.0 {
                        rng.gen_range(-spec.jitter..=spec.jitter)
                    } else {
                        0.0
                    }
                };
                let (dx, dy) = (offset(), offset());
                instances.push(Instance {
                    id: (r * spec.plants_per_row + p) as u32,
                    center: Vec2::new(p as f64 * spec.spacing + dx, r as f64 * spec.row_spacing + dy),
                    half_extents: half,
                    yaw: 0.0,
                    height: spec.plant_height,
                });
            }
        }
        let clash = (0..instances.len()).any(|a| (a + 1..instances.len()).any(|b| overlaps(&instances[a], &instances[b])));
        if !clash {
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(PipelineError::Overlap(spec.max_retries.max(1)));
    }
    let noise = (0..3)
        .map(|_| [rng.gen_range(0.5..1.5), rng.gen_range(0.0..TAU), rng.gen_range(0.5..1.5), rng.gen_range(0.0..TAU)])
        .collect();
    let mut scene = FarmScene {
        spec: spec.clone(),
        seed,
        instances,
        plants: Vec::new(),
        start: [0.0; 2],
        noise,
    };
    scene.plants = scene
        .instances
        .iter()
        .map(|i| PlantModel {
            instance_id: i.id,
            scene: AnalyticScene::plant(
                Vec3::new(i.center.x, i.center.y, scene.ground_height(i.center)),
                spec.plant_height,
                spec.plant_spread,
            ),
        })
        .collect();
    let (lo, _) = scene.extent();
    scene.start = [lo.x + 0.25 * spec.margin, lo.y + 0.5 * spec.margin];
    Ok(scene)
}
