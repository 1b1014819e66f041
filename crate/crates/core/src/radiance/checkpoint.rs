//! Field checkpoints: magic, little-endian `u32` header length, JSON header,
//! then four `f32` planes (raw density, red, green, blue) in voxel order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Aabb, RadianceError, VoxelRadianceField};

const MAGIC: &[u8; 8] = b"PHVOXF01";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    bounds: Aabb,
    resolution: [usize; 3],
    planes: Vec<String>,
}

pub fn encode(field: &VoxelRadianceField) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        bounds: field.bounds,
        resolution: field.resolution,
        planes: ["density", "red", "green", "blue"].map(String::from).to_vec(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + 16 * field.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &field.density {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for ch in 0..3 {
        for c in &field.colour {
            out.extend_from_slice(&(c[ch] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<VoxelRadianceField, RadianceError> {
    let bad = |m: &str| RadianceError::Checkpoint(m.to_string());
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("not a field checkpoint"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
    let len = u32::from_le_bytes(len) as usize;
    if r.len() < len {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&r[..len]).map_err(|e| bad(&e.to_string()))?;
    r = &r[len..];
    let n: usize = header.resolution.iter().product();
    if r.len() != 16 * n {
        return Err(bad("plane data has the wrong size"));
    }
    let vals: Vec<f64> = r
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mut field = VoxelRadianceField::new(header.bounds, header.resolution, 0.0, 0.0);
    field.density.copy_from_slice(&vals[..n]);
    for (i, c) in field.colour.iter_mut().enumerate() {
        *c = [vals[n + i], vals[2 * n + i], vals[3 * n + i]];
    }
    Ok(field)
}

pub fn save(field: &VoxelRadianceField, path: &Path) -> Result<(), RadianceError> {
    let mut f = std::fs::File::create(path).map_err(|e| RadianceError::io(path, e))?;
    f.write_all(&encode(field)).map_err(|e| RadianceError::io(path, e))
}

pub fn load(path: &Path) -> Result<VoxelRadianceField, RadianceError> {
    decode(&std::fs::read(path).map_err(|e| RadianceError::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    #[test]
    fn round_trip_at_f32_precision() {
        let mut f = VoxelRadianceField::new(Aabb::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)), [2, 3, 4], -1.0, 0.0);
        for i in 0..f.len() {
            f.density[i] = i as f64 * 0.25;
            f.colour[i] = [i as f64, -(i as f64), 0.5];
        }
        let g = decode(&encode(&f)).unwrap();
        assert_eq!(g, f);
        assert!(decode(&encode(&f)[..20]).is_err());
        assert!(decode(b"nonsense").is_err());
    }
}
