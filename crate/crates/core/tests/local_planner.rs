mod common;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use common::{near_kink, rectangle};
use pheno_core::farm_map::{generate_nodes, Instance};
use pheno_core::local_planner::*;
use pheno_core::terrain::{obstacle_cost, ObstacleField, TraversabilityGrid};
use pheno_core::Vec2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ctx<'a>(field: &'a ObstacleField, cfg: &'a OptimizerConfig, track: Option<&'a ViewpointTrack>) -> ChompContext<'a> {
    ChompContext {
        obstacles: field,
        epsilon: 0.8,
        track,
        cfg,
    }
}

/// Central differences of the weighted objective with respect to every
/// coordinate of the interior points.
fn numeric_gradient(q: &[Vec2], c: &ChompContext, h: f64) -> Vec<Vec2> {
    let f = |p: &[Vec2]| objective(p, c).unwrap().total;
    let mut out = vec![Vec2::zeros(); q.len()];
    for i in 1..q.len() - 1 {
        for k in 0..2 {
            let mut plus = q.to_vec();
            let mut minus = q.to_vec();
            plus[i][k] += h;
            minus[i][k] -= h;
            out[i][k] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    out
}

fn max_relative_error(g: &[Vec2], fd: &[Vec2]) -> f64 {
    g.iter()
        .zip(fd)
        .map(|(a, b)| (a - b).norm() / a.norm().max(b.norm()).max(1e-3))
        .fold(0.0, f64::max)
}

#[test]
fn gradient_matches_finite_differences_near_an_obstacle() {
    let field = ObstacleField::new(vec![rectangle(-0.3, -0.3, 0.3, 0.3)]);
    let cfg = OptimizerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 100 {
        let y0 = rng.gen_range(-0.8..0.8);
        let q: Vec<Vec2> = (0..8)
            .map(|i| {
                let x = -1.5 + 3.0 * i as f64 / 7.0;
                Vec2::new(x + rng.gen_range(-0.1..0.1), y0 + rng.gen_range(-0.3..0.3))
            })
            .collect();
        if q.iter().any(|&p| near_kink(&field, p, 0.2)) {
            continue;
        }
        let track = ViewpointTrack {
            positions: q[1..7].iter().map(|p| p + Vec2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2))).collect(),
        };
        let c = ctx(&field, &cfg, Some(&track));
        let g = functional_gradient(&q, &c).unwrap();
        assert_eq!(g[0], Vec2::zeros());
        assert_eq!(g[7], Vec2::zeros());
        let err = max_relative_error(&g, &numeric_gradient(&q, &c, 1e-6));
        assert!(err < 1e-4, "trajectory {done}: relative error {err}");
        done += 1;
    }
}

#[test]
fn objective_terms_match_a_direct_sum() {
    let field = ObstacleField::new(vec![rectangle(0.5, -0.2, 1.0, 0.4)]);
    let cfg = OptimizerConfig::default();
    let q = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(0.4, 0.5),
        Vec2::new(0.9, 0.7),
        Vec2::new(1.3, 0.1),
        Vec2::new(2.0, 0.0),
    ];
    let d = vec![Vec2::new(0.5, 0.6), Vec2::new(1.0, 0.6), Vec2::new(1.5, 0.6)];
    let track = ViewpointTrack { positions: d.clone() };
    let t = objective(&q, &ctx(&field, &cfg, Some(&track))).unwrap();
    let dt = 0.25;
    let mut f_s = 0.0;
    let mut f_c = 0.0;
    for i in 0..4 {
        let step = ((q[i + 1].x - q[i].x).powi(2) + (q[i + 1].y - q[i].y).powi(2)).sqrt();
        f_s += step * step / dt;
        f_c += obstacle_cost(&field, q[i], 0.8).0 * step;
    }
    let f_o: f64 = (1..4).map(|i| ((q[i].x - d[i - 1].x).powi(2) + (q[i].y - d[i - 1].y).powi(2)) * dt).sum();
    assert!((t.f_s - f_s).abs() < 1e-12);
    assert!((t.f_c - f_c).abs() < 1e-12);
    assert!((t.f_o - f_o).abs() < 1e-12);
    assert!((t.total - (f_s + 10.0 * f_c + 2.0 * f_o)).abs() < 1e-12);
    assert!(f_c > 0.0);
}

#[test]
fn zigzag_descends_monotonically() {
    let field = ObstacleField::default();
    let cfg = OptimizerConfig {
        alpha_c: 0.0,
        alpha_o: 0.0,
        learning_rate: 1e-2,
        ..Default::default()
    };
    let q0: Vec<Vec2> = (0..11).map(|i| Vec2::new(0.3 * i as f64, if i % 2 == 0 { 0.0 } else { 0.25 })).collect();
    let r = optimize(&q0, &ctx(&field, &cfg, None)).unwrap();
    assert!(r.history[1..].windows(2).all(|w| w[1] <= w[0]));
    let f_s = |q: &[Vec2]| objective(q, &ctx(&field, &cfg, None)).unwrap().f_s;
    assert!(f_s(&r.control_points) < f_s(&q0));
    let straightness = |q: &[Vec2]| q.iter().map(|p| p.y.abs()).sum::<f64>();
    assert!(straightness(&r.control_points) < 0.1 * straightness(&q0));
}

#[test]
fn threading_path_gains_clearance() {
    let field = ObstacleField::new(vec![rectangle(0.6, -0.15, 1.6, 0.3)]);
    let cfg = OptimizerConfig {
        alpha_o: 0.0,
        ..Default::default()
    };
    let q0: Vec<Vec2> = (0..12).map(|i| Vec2::new(0.2 * i as f64, 0.0)).collect();
    let r = optimize(&q0, &ctx(&field, &cfg, None)).unwrap();
    let sep = |q: &[Vec2]| q.iter().map(|&p| field.min_separation(p)).fold(f64::INFINITY, f64::min);
    let (a, b) = (sep(&q0), sep(&r.control_points));
    assert!(b > a, "{a} -> {b}: {:?}", r.control_points);
}

/// Textbook de Boor evaluation of a non-rational clamped B-spline.
fn de_boor(t: f64, knots: &[f64], ctrl: &[Vec2], p: usize) -> Vec2 {
    let n = ctrl.len();
    let mut k = p;
    while k < n - 1 && knots[k + 1] <= t {
        k += 1;
    }
    let mut d: Vec<Vec2> = (0..=p).map(|j| ctrl[j + k - p]).collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let i = j + k - p;
            let denom = knots[i + p + 1 - r] - knots[i];
            let a = if denom == 0.0 { 0.0 } else { (t - knots[i]) / denom };
            d[j] = d[j - 1] * (1.0 - a) + d[j] * a;
        }
    }
    d[p]
}

#[test]
fn uniform_weights_reduce_to_de_boor() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ctrl: Vec<Vec2> = (0..9).map(|_| Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))).collect();
    let s = BSpline::from_config(ctrl.clone(), &BSplineConfig::default()).unwrap();
    for i in 0..1000 {
        let t = i as f64 / 999.0;
        let a = s.eval(t);
        let b = de_boor(t, &s.knots, &ctrl, 3);
        assert!((a - b).norm() < 1e-12, "t={t}: {a:?} vs {b:?}");
    }
}

fn side(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    (b - a).perp(&(p - a))
}

/// Convex-hull membership: `p` lies on the inner side of every supporting
/// line through two of `pts`.
fn in_hull(p: Vec2, pts: &[Vec2]) -> bool {
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            if i == j || (pts[i] - pts[j]).norm() < 1e-12 {
                continue;
            }
            let s: Vec<f64> = pts.iter().map(|&q| side(pts[i], pts[j], q)).collect();
            let scale = 1e-9 * (1.0 + (pts[j] - pts[i]).norm());
            if s.iter().all(|&v| v >= -scale) && side(pts[i], pts[j], p) < -scale {
                return false;
            }
            if s.iter().all(|&v| v <= scale) && side(pts[i], pts[j], p) > scale {
                return false;
            }
        }
    }
    true
}

#[test]
fn free_flank_passes_through_viewpoints() {
    let inst = Instance {
        id: 3,
        center: Vec2::new(1.0, 1.0),
        half_extents: Vec2::new(0.5, 0.3),
        yaw: 0.0,
        height: 1.0,
    };
    let nodes = generate_nodes(&inst, 0.6);
    let field = ObstacleField::default();
    let (path, views) = initial_path_viewpoints(&nodes[0], &nodes[2], &inst, &field, 3, &RrtConfig::default()).unwrap();
    assert_eq!(views.len(), 3);
    assert_eq!(merge_collinear(&path), vec![nodes[0].position, nodes[2].position]);
    for v in &views {
        assert!(distance_to_polyline(*v, &path) < 1e-12);
    }
}

fn flank_fixture() -> (Instance, [pheno_core::farm_map::PlanningNode; 8]) {
    let inst = Instance {
        id: 1,
        center: Vec2::zeros(),
        half_extents: Vec2::new(0.5, 0.3),
        yaw: 0.0,
        height: 1.0,
    };
    (inst, generate_nodes(&inst, 0.6))
}

#[test]
fn rrt_detours_around_an_obstacle_between_viewpoints() {
    let (inst, nodes) = flank_fixture();
    let views = preset_viewpoints(nodes[0].position, nodes[2].position, 6);
    let mid = (views[1] + views[2]) * 0.5;
    let field = ObstacleField::new(vec![rectangle(mid.x - 0.07, mid.y - 0.07, mid.x + 0.07, mid.y + 0.07)]);
    let (path, _) = initial_path_viewpoints(&nodes[0], &nodes[2], &inst, &field, 6, &RrtConfig::default()).unwrap();
    assert!(path.len() > 6, "no detour: {path:?}");
    for w in path.windows(2) {
        assert!(field.segment_is_free(w[0], w[1], 0.0));
    }
    for p in subdivide(&path, 0.01) {
        assert!(field.min_separation(p) >= 0.0);
    }
    for v in &views {
        assert!(distance_to_polyline(*v, &path) < 1e-12);
    }
}

#[test]
fn blocked_viewpoint_is_an_error() {
    let (inst, nodes) = flank_fixture();
    let views = preset_viewpoints(nodes[0].position, nodes[2].position, 6);
    let v = views[2];
    let field = ObstacleField::new(vec![rectangle(v.x - 0.1, v.y - 0.1, v.x + 0.1, v.y + 0.1)]);
    assert_eq!(
        initial_path_viewpoints(&nodes[0], &nodes[2], &inst, &field, 6, &RrtConfig::default()),
        Err(LocalPlanError::ViewpointBlocked { index: 2 })
    );
}

#[test]
fn planned_flank_segment_passes_the_audit() {
    let (inst, nodes) = flank_fixture();
    let field = ObstacleField::new(vec![rectangle(-0.5, -0.3, 0.5, 0.3)]);
    let cfg = LocalPlannerConfig {
        epsilon: 0.3,
        ..Default::default()
    };
    let t = plan_segment(SegmentKind::Viewpoint, &nodes[0], &nodes[2], Some(&inst), &field, None, &cfg, 4).unwrap();
    assert!(!t.fallback);
    let pts = t.sample_points();
    assert_eq!(pts[0], nodes[0].position);
    assert!((pts.last().unwrap() - nodes[2].position).norm() < 1e-12);
    for p in &pts {
        assert!(field.min_separation(*p) >= 0.0);
    }
    for v in &t.viewpoints {
        assert!(distance_to_polyline(*v, &pts) <= cfg.view_tol);
    }
    let spline = t.spline.as_ref().unwrap();
    for k in 0..=200 {
        let u = k as f64 / 200.0;
        let active: Vec<Vec2> = spline.active_points(u).map(|i| spline.control_points[i]).collect();
        assert!(in_hull(spline.eval(u), &active));
    }
    // 0.2 m/s while sampling.
    assert!((t.duration() - t.length() / 0.2).abs() < 1e-9);
    let doc = t.to_json(&cfg);
    assert_eq!(doc["spline"]["degree"], 3);
    assert_eq!(doc["samples"].as_array().unwrap().len(), pts.len());
    assert_eq!(doc["seed"], 4);
}

#[test]
fn time_stamps_follow_arc_length() {
    let line = [Vec2::zeros(), Vec2::new(0.6, 0.0), Vec2::new(1.0, 0.0)];
    assert!((time_parameterize(&line, 1.0).last().unwrap().t - 1.0).abs() < 1e-12);
    assert!((time_parameterize(&line, 0.2).last().unwrap().t - 5.0).abs() < 1e-12);
    let still = time_parameterize(&[Vec2::zeros(), Vec2::zeros()], 1.0);
    assert_eq!(still.len(), 1);
    assert_eq!(still[0].t, 0.0);
}

fn grid_from(costs: &[f64], w: usize, h: usize) -> TraversabilityGrid {
    let mut g = TraversabilityGrid::flat(Vec2::zeros(), 0.1, w, h);
    for (c, &v) in g.cells.iter_mut().zip(costs) {
        c.cost = v;
    }
    g
}

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0)
    }
}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Plain Dijkstra over the 8-connected cells below `block`, without corner
/// cutting; a move costs its length times one plus the mean cell cost.
fn dijkstra(g: &TraversabilityGrid, from: usize, to: usize, block: f64) -> f64 {
    let (w, h) = (g.width as i64, g.height as i64);
    let free = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && g.cells[(y * w + x) as usize].cost < block;
    let mut dist = vec![f64::INFINITY; g.cells.len()];
    let mut heap = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Item(0.0, from));
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        let (x, y) = ((u % g.width) as i64, (u / g.width) as i64);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if (dx, dy) == (0, 0) || !free(nx, ny) {
                    continue;
                }
                if dx != 0 && dy != 0 && !(free(nx, y) && free(x, ny)) {
                    continue;
                }
                let v = (ny * w + nx) as usize;
                let len = g.cell_size * ((dx * dx + dy * dy) as f64).sqrt();
                let nd = d + len * (1.0 + 0.5 * (g.cells[u].cost + g.cells[v].cost));
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Item(nd, v));
                }
            }
        }
    }
    dist[to]
}

#[test]
fn wall_gap_path_is_cost_optimal() {
    let (w, h) = (30, 20);
    let mut costs = vec![0.0; w * h];
    for y in 0..h {
        if y != 14 {
            costs[y * w + 15] = f64::INFINITY;
        }
    }
    let g = grid_from(&costs, w, h);
    let cfg = AStarConfig::default();
    let (a, b) = (Vec2::new(0.25, 0.25), Vec2::new(2.85, 0.35));
    let path = astar(&g, a, b, &cfg).unwrap();
    assert!(path.cells.contains(&(14 * w + 15)));
    let oracle = dijkstra(&g, 2 * w + 2, 3 * w + 28, cfg.block_threshold);
    assert!((path.cost - oracle).abs() < 1e-9, "{} vs {oracle}", path.cost);

    let pts = initial_path_transit(&g, a, b, &cfg).unwrap();
    assert_eq!(pts[0], a);
    assert_eq!(*pts.last().unwrap(), b);
    for s in pts.windows(2) {
        for c in segment_cells(&g, s[0], s[1]) {
            assert!(g.cells[c.unwrap()].cost < cfg.block_threshold);
        }
    }
}

#[test]
fn empty_grid_transit_is_straight() {
    let g = TraversabilityGrid::flat(Vec2::new(-1.0, -1.0), 0.1, 30, 80);
    let pts = initial_path_transit(&g, Vec2::zeros(), Vec2::new(0.0, 5.0), &AStarConfig::default()).unwrap();
    assert_eq!(pts, vec![Vec2::zeros(), Vec2::new(0.0, 5.0)]);
    let mut blocked = g.clone();
    let (x, y) = blocked.locate(Vec2::new(0.0, 5.0)).unwrap();
    blocked.cell_mut(x, y).cost = f64::INFINITY;
    assert_eq!(
        initial_path_transit(&blocked, Vec2::zeros(), Vec2::new(0.0, 5.0), &AStarConfig::default()),
        Err(LocalPlanError::Unreachable)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn astar_agrees_with_dijkstra(cells in prop::collection::vec(prop_oneof![3 => Just(0.0), 2 => 0.0f64..0.9, 1 => Just(f64::INFINITY)], 144)) {
        let g = grid_from(&cells, 12, 12);
        let cfg = AStarConfig::default();
        let (a, b) = (Vec2::new(0.05, 0.05), Vec2::new(1.15, 1.15));
        let oracle = dijkstra(&g, 0, 143, cfg.block_threshold);
        match astar(&g, a, b, &cfg) {
            Ok(p) => {
                prop_assert!((p.cost - oracle).abs() < 1e-9);
                prop_assert_eq!(p.cells[0], 0);
                prop_assert_eq!(*p.cells.last().unwrap(), 143);
            }
            Err(_) => prop_assert!(oracle.is_infinite()),
        }
    }

    #[test]
    fn endpoints_never_move(
        pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 4..12),
        lr in 1e-4f64..5e-3,
    ) {
        let q0: Vec<Vec2> = pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        let field = ObstacleField::new(vec![rectangle(-0.4, -0.4, 0.4, 0.4)]);
        let cfg = OptimizerConfig { learning_rate: lr, max_iters: 50, ..Default::default() };
        let track = ViewpointTrack { positions: q0[1..q0.len() - 1].iter().map(|p| p * 0.5).collect() };
        let r = optimize(&q0, &ctx(&field, &cfg, Some(&track))).unwrap();
        prop_assert_eq!(r.control_points[0], q0[0]);
        prop_assert_eq!(r.control_points[q0.len() - 1], q0[q0.len() - 1]);
        prop_assert_eq!(r.history.len() - 1 <= 50, true);
    }

    #[test]
    fn spline_ignores_weight_scale(
        pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 4..10),
        w in prop::collection::vec(0.2f64..5.0, 10),
        scale in 0.01f64..100.0,
    ) {
        let ctrl: Vec<Vec2> = pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        let n = ctrl.len();
        let cfg = BSplineConfig { weights: Some(w[..n].to_vec()), ..Default::default() };
        let scaled = BSplineConfig { weights: Some(w[..n].iter().map(|v| v * scale).collect()), ..Default::default() };
        let a = BSpline::from_config(ctrl.clone(), &cfg).unwrap();
        let b = BSpline::from_config(ctrl.clone(), &scaled).unwrap();
        for (p, q) in a.sample(20).iter().zip(b.sample(20).iter()) {
            prop_assert!((p.1 - q.1).norm() < 1e-12);
        }
        prop_assert!((a.eval(0.0) - ctrl[0]).norm() < 1e-12);
        prop_assert!((a.eval(1.0) - ctrl[n - 1]).norm() < 1e-12);
        for k in 0..=100 {
            let u = k as f64 / 100.0;
            let active: Vec<Vec2> = a.active_points(u).map(|i| ctrl[i]).collect();
            prop_assert!(in_hull(a.eval(u), &active));
        }
    }
}
