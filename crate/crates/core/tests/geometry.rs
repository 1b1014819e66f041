use pheno_core::geometry::*;
use pheno_core::radiance::{softplus, Aabb, AnalyticScene, RadianceQuery, VoxelRadianceField};
use pheno_core::Vec3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SOFT: f64 = 0.05;

fn unit_sphere() -> AnalyticScene {
    AnalyticScene::sphere(Vec3::zeros(), 1.0, 1.0, [0.2, 0.7, 0.4], SOFT)
}

fn sphere_volume(res: usize) -> DensityVolume {
    sample_volume(&unit_sphere(), &Aabb::new(Vec3::repeat(-1.4), Vec3::repeat(1.4)), [res; 3])
}

fn radial_errors(mesh: &TriMesh) -> Vec<f64> {
    mesh.vertices.iter().map(|v| (v.norm() - 1.0).abs()).collect()
}

fn assert_well_formed(mesh: &TriMesh) {
    let n = mesh.vertices.len() as u32;
    for t in &mesh.triangles {
        assert!(t.iter().all(|&i| i < n));
        assert!(t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
        assert!(mesh.triangle_area(t) > 1e-12);
    }
    assert_eq!(mesh.colours.len(), mesh.vertices.len());
}

fn is_closed(mesh: &TriMesh) -> bool {
    mesh.edge_counts().values().all(|&c| c == 2)
}

#[test]
fn sphere_samples_match_the_formula() {
    let vol = sphere_volume(17);
    for (idx, &v) in vol.values.iter().enumerate() {
        let p = vol.point_of_index(idx);
        let expected = 1.0 / (1.0 + ((p.norm() - 1.0) / SOFT).exp());
        assert!((v - expected).abs() < 1e-12, "{p:?}: {v} vs {expected}");
    }
}

#[test]
fn sampling_a_voxel_field_on_its_own_lattice_is_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bounds = Aabb::new(Vec3::new(-1.0, 0.0, 0.5), Vec3::new(1.0, 3.0, 2.0));
    let mut f = VoxelRadianceField::new(bounds, [4, 6, 3], 0.0, 0.0);
    for d in f.density.iter_mut() {
        *d = rng.gen_range(-3.0..3.0);
    }
    let vol = sample_volume(&f, &bounds, f.resolution);
    for (i, &v) in vol.values.iter().enumerate() {
        assert!((v - softplus(f.density[i])).abs() < 1e-12);
    }
    let zero = VoxelRadianceField::new(bounds, [4, 4, 4], -800.0, 0.0);
    assert!(sample_volume(&zero, &bounds, [5, 5, 5]).values.iter().all(|&v| v == 0.0));
}

#[test]
fn sphere_vertices_lie_near_the_unit_radius() {
    let vol = sphere_volume(64);
    let mesh = marching_cubes(&vol, 0.5 * vol.max());
    assert_well_formed(&mesh);
    let worst = radial_errors(&mesh).into_iter().fold(0.0, f64::max);
    assert!(worst <= 1.5 * vol.spacing.x, "{worst} > 1.5 * {}", vol.spacing.x);
    assert!(is_closed(&mesh));
    assert!(mesh.is_consistently_oriented());
    assert_eq!(mesh.euler_characteristic(), 2);
    let exact = 4.0 / 3.0 * std::f64::consts::PI;
    assert!((mesh.signed_volume() - exact).abs() < 0.05 * exact);
}

#[test]
fn finer_lattice_reduces_radial_error() {
    let mean = |res: usize| {
        let vol = sphere_volume(res);
        let e = radial_errors(&marching_cubes(&vol, 0.5));
        e.iter().sum::<f64>() / e.len() as f64
    };
    let (coarse, fine, finer) = (mean(16), mean(32), mean(64));
    assert!(fine < coarse && finer < fine, "{coarse} {fine} {finer}");
}

#[test]
fn enclosed_volume_shrinks_with_the_threshold() {
    let vol = sphere_volume(32);
    let volumes: Vec<f64> = (1..10).map(|i| marching_cubes(&vol, i as f64 / 10.0).signed_volume()).collect();
    assert!(volumes.iter().all(|&v| v > 0.0));
    assert!(volumes.windows(2).all(|w| w[1] <= w[0]), "{volumes:?}");
}

#[test]
fn single_hot_point_is_a_closed_polyhedron() {
    let mut vol = DensityVolume {
        origin: Vec3::zeros(),
        spacing: Vec3::repeat(0.1),
        dims: [5, 5, 5],
        values: vec![0.0; 125],
    };
    let c = vol.index(2, 2, 2);
    vol.values[c] = 1.0;
    let mesh = marching_cubes(&vol, 0.5);
    assert_well_formed(&mesh);
    assert_eq!(mesh.vertices.len(), 6);
    assert_eq!(mesh.triangles.len(), 8);
    assert_eq!(mesh.euler_characteristic(), 2);
    assert!(is_closed(&mesh) && mesh.is_consistently_oriented());
    assert!(mesh.signed_volume() > 0.0);
    // Octahedron with half-diagonal 0.05.
    assert!((mesh.signed_volume() - 4.0 / 3.0 * 0.05f64.powi(3)).abs() < 1e-15);
}

#[test]
fn nothing_above_threshold_gives_an_empty_mesh() {
    let vol = sphere_volume(8);
    assert!(marching_cubes(&vol, 2.0).is_empty());
    let empty = colour_vertices(TriMesh::default(), &unit_sphere());
    assert!(empty.is_empty() && empty.colours.is_empty());
}

/// Colour equal to the position clamped into the unit cube.
struct PositionColour;

impl RadianceQuery for PositionColour {
    fn query(&self, x: &Vec3) -> (f64, [f64; 3]) {
        let r = x.norm();
        ((1.0 - r).max(0.0), [x.x, x.y, x.z].map(|v| v.clamp(0.0, 1.0)))
    }

    fn bounds(&self) -> Aabb {
        Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0))
    }
}

#[test]
fn vertex_colours_are_field_lookups() {
    let vol = sample_volume(&PositionColour, &PositionColour.bounds(), [20; 3]);
    let mesh = colour_vertices(marching_cubes(&vol, 0.4), &PositionColour);
    assert!(!mesh.is_empty());
    for (v, c) in mesh.vertices.iter().zip(&mesh.colours) {
        for a in 0..3 {
            assert!((c[a] - v[a].clamp(0.0, 1.0)).abs() < 1e-12);
        }
    }
    let red = AnalyticScene::sphere(Vec3::zeros(), 1.0, 5.0, [1.0, 0.0, 0.0], SOFT);
    let mesh = colour_vertices(marching_cubes(&sphere_volume(12), 0.5), &red);
    assert!(mesh.colours.iter().all(|c| (c[0] - 1.0).abs() < 1e-12 && c[1] == 0.0 && c[2] == 0.0));
}

#[test]
fn obj_export_lists_coloured_vertices_and_faces() {
    let vol = sphere_volume(8);
    let mesh = colour_vertices(marching_cubes(&vol, 0.5), &unit_sphere());
    let obj = mesh.to_obj();
    let v: Vec<&str> = obj.lines().filter(|l| l.starts_with("v ")).collect();
    let f: Vec<&str> = obj.lines().filter(|l| l.starts_with("f ")).collect();
    assert_eq!(v.len(), mesh.vertices.len());
    assert_eq!(f.len(), mesh.triangles.len());
    assert!(v.iter().all(|l| l.split_whitespace().count() == 7));
    for l in f {
        let idx: Vec<usize> = l.split_whitespace().skip(1).map(|s| s.parse().unwrap()).collect();
        assert!(idx.iter().all(|&i| (1..=mesh.vertices.len()).contains(&i)));
    }
    let back: TriMesh = serde_json::from_str(&mesh.to_json()).unwrap();
    assert_eq!(back, mesh);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_volumes_give_sandwiched_well_formed_meshes(
        values in prop::collection::vec(0.0f64..1.0, 6 * 5 * 4),
        threshold in 0.05f64..0.95,
    ) {
        let vol = DensityVolume {
            origin: Vec3::new(-1.0, 2.0, 0.5),
            spacing: Vec3::new(0.3, 0.2, 0.25),
            dims: [6, 5, 4],
            values,
        };
        let iso = marching_cubes_detailed(&vol, threshold);
        assert_well_formed(&iso.mesh);
        prop_assert!(iso.mesh.is_consistently_oriented());
        prop_assert_eq!(iso.vertex_edges.len(), iso.mesh.vertices.len());
        for (p, &[a, b]) in iso.mesh.vertices.iter().zip(&iso.vertex_edges) {
            let (va, vb) = (vol.values[a], vol.values[b]);
            prop_assert!(va.min(vb) <= threshold && threshold <= va.max(vb));
            let (pa, pb) = (vol.point_of_index(a), vol.point_of_index(b));
            // The vertex sits on the segment between its bracketing points.
            prop_assert!(((p - pa).norm() + (pb - p).norm() - (pb - pa).norm()).abs() < 1e-9);
            let expected = pa + (pb - pa) * ((threshold - va) / (vb - va));
            prop_assert!((p - expected).norm() < 1e-9);
        }
    }
}
