//! Iso-surface meshes from density fields.
//!
//! Densities are sampled on a cell-centred lattice over a region of
//! interest, triangulated with marching cubes and coloured by querying the
//! field at every vertex.

mod tables;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::radiance::{Aabb, RadianceQuery};
use crate::Vec3;
use tables::{EDGE_TABLE, TRI_TABLE};

/// Lattice offsets of the eight cube corners.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs of the twelve cube edges.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Regular lattice of density samples; `values` is x-fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityVolume {
    /// Position of lattice point `(0, 0, 0)`.
    pub origin: Vec3,
    pub spacing: Vec3,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl DensityVolume {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64).component_mul(&self.spacing)
    }

    pub fn point_of_index(&self, idx: usize) -> Vec3 {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        self.point(i, j, k)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// `q`-quantile of the samples, nearest rank.
    pub fn quantile(&self, q: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let rank = ((q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize).clamp(1, v.len());
        v[rank - 1]
    }

    /// Half of the 99th-percentile density.
    pub fn default_threshold(&self) -> f64 {
        0.5 * self.quantile(0.99)
    }
}

/// Samples the field density at the centres of a `resolution` grid of
/// cells covering `roi`.
pub fn sample_volume<F: RadianceQuery + ?Sized>(field: &F, roi: &Aabb, resolution: [usize; 3]) -> DensityVolume {
    assert!(resolution.iter().all(|&r| r >= 2), "resolution must be at least 2 per axis");
    let size = roi.size();
    let spacing = Vec3::new(
        size.x / resolution[0] as f64,
        size.y / resolution[1] as f64,
        size.z / resolution[2] as f64,
    );
    let mut vol = DensityVolume {
        origin: roi.min + spacing * 0.5,
        spacing,
        dims: resolution,
        values: Vec::new(),
    };
    let n: usize = resolution.iter().product();
    vol.values = (0..n)
        .into_par_iter()
        .map(|idx| field.density(&vol.point_of_index(idx)))
        .collect();
    vol
}

/// Triangle mesh with per-vertex colour.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colours: Vec<[f64; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Volume enclosed by a closed mesh, positive when triangles wind
    /// counter-clockwise seen from outside.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Undirected edges, each with the number of triangles using it.
    pub fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// `V - E + F` over the vertices referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Every directed edge appears at most once, so neighbouring triangles
    /// agree on orientation.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.triangles
            .iter()
            .all(|t| (0..3).all(|e| seen.insert((t[e], t[(e + 1) % 3]))))
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut n = vec![Vec3::zeros(); self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            let f = (b - a).cross(&(c - a));
            for &i in t {
                n[i as usize] += f;
            }
        }
        n.into_iter()
            .map(|v| if v.norm() > 0.0 { v.normalize() } else { v })
            .collect()
    }

    /// Wavefront OBJ with `v x y z r g b` lines.
    pub fn to_obj(&self) -> String {
        let mut s = String::with_capacity(48 * (self.vertices.len() + self.triangles.len()));
        for (i, v) in self.vertices.iter().enumerate() {
            let c = self.colours.get(i).copied().unwrap_or([0.5; 3]);
            writeln!(s, "v {:.6} {:.6} {:.6} {:.4} {:.4} {:.4}", v.x, v.y, v.z, c[0], c[1], c[2]).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_obj())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mesh serializes")
    }
}

/// Marching cubes output with the lattice edge each vertex was placed on.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoSurface {
    pub mesh: TriMesh,
    /// Lattice indices bracketing every vertex.
    pub vertex_edges: Vec<[usize; 2]>,
}

/// Triangulates the `threshold` iso-surface. Triangles wind
/// counter-clockwise seen from the low-density side.
pub fn marching_cubes(vol: &DensityVolume, threshold: f64) -> TriMesh {
    marching_cubes_detailed(vol, threshold).mesh
}

pub fn marching_cubes_detailed(vol: &DensityVolume, threshold: f64) -> IsoSurface {
    let [nx, ny, nz] = vol.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return IsoSurface {
            mesh: TriMesh::default(),
            vertex_edges: Vec::new(),
        };
    }
    // Triangles as triples of lattice edges (lower index, upper index).
    let slabs: Vec<Vec<[[usize; 2]; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let idx = CORNERS.map(|o| vol.index(i + o[0], j + o[1], k + o[2]));
                    let mut case = 0usize;
                    for (c, &id) in idx.iter().enumerate() {
                        if vol.values[id] > threshold {
                            case |= 1 << c;
                        }
                    }
                    if EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    let edge = |e: i8| {
                        let [a, b] = EDGES[e as usize];
                        [idx[a].min(idx[b]), idx[a].max(idx[b])]
                    };
                    for tri in TRI_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                        // The table winds the other way for this inside convention.
                        out.push([edge(tri[0]), edge(tri[2]), edge(tri[1])]);
                    }
                }
            }
            out
        })
        .collect();

    let mut ids: HashMap<[usize; 2], u32> = HashMap::new();
    let mut weld: HashMap<[i64; 3], u32> = HashMap::new();
    let mut mesh = TriMesh::default();
    let mut vertex_edges = Vec::new();
    let mut vertex_of = |e: [usize; 2], mesh: &mut TriMesh| -> u32 {
        if let Some(&v) = ids.get(&e) {
            return v;
        }
        let (va, vb) = (vol.values[e[0]], vol.values[e[1]]);
        let (pa, pb) = (vol.point_of_index(e[0]), vol.point_of_index(e[1]));
        let t = if (vb - va).abs() > 1e-300 {
            ((threshold - va) / (vb - va)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        let p = pa + (pb - pa) * t;
        let key = [p.x, p.y, p.z].map(|c| (c * 1e9).round() as i64);
        let v = *weld.entry(key).or_insert_with(|| {
            mesh.vertices.push(p);
            vertex_edges.push(e);
            (mesh.vertices.len() - 1) as u32
        });
        ids.insert(e, v);
        v
    };
    for tri in slabs.into_iter().flatten() {
        let t = tri.map(|e| vertex_of(e, &mut mesh));
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] || mesh.triangle_area(&t) < 1e-12 {
            continue;
        }
        mesh.triangles.push(t);
    }
    mesh.colours = vec![[0.0; 3]; mesh.vertices.len()];
    IsoSurface { mesh, vertex_edges }
}

/// Sets every vertex colour to the field colour at the vertex. The viewing
/// ray would run along the outward normal, but colour here does not depend
/// on direction.
pub fn colour_vertices<F: RadianceQuery + ?Sized>(mut mesh: TriMesh, field: &F) -> TriMesh {
    mesh.colours = mesh.vertices.par_iter().map(|v| field.query(v).1).collect();
    mesh
}
