mod common;

use common::*;
use occrisk::geom::Vec2;
use occrisk::kinematics::{rollout, Control, ControlSequence, State};
use occrisk::risk::*;
use occrisk::rng::stream;
use occrisk::trajgen::TrajectorySet;
use occrisk::Traj;
use rand::Rng as _;

fn spec(resolution: f64) -> GridSpec {
    GridSpec::covering(p(0.0, 0.0), p(60.0, 60.0), 0.0, resolution)
}

fn traj(rng: &mut occrisk::rng::Rng, id: &str, mode: usize) -> Traj {
    let init = State::new(
        rng.random_range(10.0..50.0),
        rng.random_range(10.0..50.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(1.0..8.0),
    );
    let u = (0..80)
        .map(|_| Control::new(rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2)))
        .collect();
    rollout(init, &ControlSequence::new(u, 0.1)).tagged(id, mode)
}

fn set(seed: u64) -> (TrajectorySet, Traj) {
    let mut rng = stream(seed, 3);
    let set = (0..5)
        .map(|a| {
            let id = format!("a{a}");
            let modes = (0..6).map(|m| traj(&mut rng, &id, m)).collect();
            (id, modes)
        })
        .collect();
    let ego = traj(&mut rng, "ego", 0);
    (set, ego)
}

#[test]
fn permuting_agents_and_modes_changes_nothing() {
    let cfg = RiskConfig {
        delta: 8.0,
        ..Default::default()
    };
    for seed in 0..5 {
        let (set, ego) = set(seed);
        // reverse the agent order by renaming, and the mode order within each agent
        let n = set.len();
        let permuted: TrajectorySet = set
            .iter()
            .enumerate()
            .map(|(i, (_, modes))| {
                let mut m = modes.clone();
                m.reverse();
                (format!("b{}", n - i), m)
            })
            .collect();
        let a = build_risk_grid(&set, &ego, spec(0.5), &cfg);
        let b = build_risk_grid(&permuted, &ego, spec(0.5), &cfg);
        for (x, y) in [
            (&a.flow, &b.flow),
            (&a.collision, &b.collision),
            (&a.total, &b.total),
        ] {
            let d = x
                .iter()
                .zip(y)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max);
            assert!(d < 1e-9, "seed {seed}: {d}");
        }
    }
}

#[test]
fn adding_points_never_lowers_flow() {
    let cfg = RiskConfig::default();
    let (mut set, _) = set(7);
    let before = flow_risk(&set, &spec(0.5), &cfg).layer;
    let mut rng = stream(8, 0);
    set.insert("extra".into(), vec![traj(&mut rng, "extra", 0)]);
    let after = flow_risk(&set, &spec(0.5), &cfg).layer;
    assert!(after.iter().zip(&before).all(|(a, b)| a >= b));
    assert!(after.iter().zip(&before).any(|(a, b)| a > b));
}

#[test]
fn total_layer_is_normalised() {
    for seed in 0..5 {
        let (set, ego) = set(seed);
        let g = build_risk_grid(&set, &ego, spec(0.5), &RiskConfig::default());
        assert!(g.total.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(g.total.iter().copied().fold(0.0, f64::max), 1.0);
    }
    let empty = build_risk_grid(
        &TrajectorySet::new(),
        &set(0).1,
        spec(0.5),
        &RiskConfig::default(),
    );
    assert!(empty.total.iter().all(|v| *v == 0.0));
}

/// A Gaussian density laid out on a lattice much finer than either grid.
fn smooth_field(spec: &GridSpec, cfg: &RiskConfig) -> RiskGrid {
    let h = 0.05;
    let n = (60.0 / h) as usize;
    let c = p(30.0, 30.0);
    let points = (0..n).flat_map(|i| {
        (0..n).map(move |j| {
            let q = Vec2::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            (q, (-q.dist(c).powi(2) / (2.0 * 64.0)).exp() * h * h)
        })
    });
    let flow = accumulate(spec, cfg.lambda, points).layer;
    let zero = vec![0.0; flow.len()];
    let total = fuse_and_finish(&flow, &zero, spec, 1.0, 0.0, cfg.sigma_g);
    RiskGrid {
        spec: *spec,
        lambda: cfg.lambda,
        alpha: 1.0,
        beta: 0.0,
        sigma_g: cfg.sigma_g,
        flow,
        collision: zero,
        total,
        bins: vec![],
        dropped_points: 0,
    }
}

#[test]
fn halving_the_resolution_barely_moves_a_smooth_field() {
    let cfg = RiskConfig::default();
    let coarse = smooth_field(&spec(0.5), &cfg);
    let fine = smooth_field(&spec(0.25), &cfg);
    let mut rng = stream(1, 0);
    let path = occrisk::geom::Polyline::new(vec![p(5.0, 20.0), p(55.0, 40.0)]).unwrap();
    for _ in 0..100 {
        let q = path.point_at(rng.random_range(0.0..path.length()));
        let (a, b) = (risk_at(&coarse, q), risk_at(&fine, q));
        assert!((a - b).abs() < 0.1 * a.max(b), "{q:?}: {a} vs {b}");
    }
}

#[test]
fn grid_file_round_trip_is_f32_exact() {
    let (set, ego) = set(2);
    let g = build_risk_grid(&set, &ego, spec(0.5), &RiskConfig::default());
    let back = read_grid(&mut grid_bytes(&g).as_slice()).unwrap();
    assert_eq!(back, quantized(&g));
    assert_eq!(grid_bytes(&back), grid_bytes(&g));
}
