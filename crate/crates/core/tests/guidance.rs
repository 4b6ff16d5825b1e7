mod common;

use common::*;
use occrisk::diffusion::{reverse_sample, DiffusionSchedule};
use occrisk::guidance::*;
use occrisk::kinematics::{rollout, ControlSequence, State};
use occrisk::rng::stream;
use occrisk::scene::{LaneSegment, RoadMap};
use occrisk::Traj;

/// Ego driving east along y = 0 at 8 m/s, phantom heading north on a crossing lane.
struct Crossing {
    lanes: Vec<LaneSegment>,
    ego: Vec<Traj>,
    init: State<f64>,
    nominal: ControlSequence<f64>,
}

fn crossing() -> Crossing {
    let lanes = vec![
        lane("east", vec![p(-60.0, 0.0), p(60.0, 0.0)]),
        lane("north", vec![p(20.0, -60.0), p(20.0, 60.0)]),
    ];
    let ego = rollout(
        State::new(-10.0, 0.0, 0.0, 8.0),
        &ControlSequence::zeros(80, 0.1),
    );
    Crossing {
        lanes,
        ego: vec![ego],
        init: State::new(20.0, -35.0, std::f64::consts::FRAC_PI_2, 6.0),
        nominal: ControlSequence::zeros(80, 0.1),
    }
}

fn generate(c: &Crossing, cfg: &GuidanceConfig, seed: u64) -> Traj {
    let ctx = GuidanceContext {
        init: c.init,
        others: &c.ego,
        lanes: &c.lanes,
    };
    let sched = DiffusionSchedule::cosine(cfg.steps);
    let den = phantom_denoiser(c.nominal.clone(), cfg);
    guided_reverse(&ctx, &den, &sched, 80, 0.1, cfg, &mut stream(seed, 0))
        .unwrap()
        .trajectory
}

#[test]
fn zero_weights_reproduce_unguided_sampling() {
    let c = crossing();
    let cfg = GuidanceConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..Default::default()
    };
    let ctx = GuidanceContext {
        init: c.init,
        others: &c.ego,
        lanes: &c.lanes,
    };
    let sched = DiffusionSchedule::cosine(cfg.steps);
    let den = phantom_denoiser(c.nominal.clone(), &cfg);
    for seed in 0..5 {
        let guided =
            guided_reverse(&ctx, &den, &sched, 80, 0.1, &cfg, &mut stream(seed, 0)).unwrap();
        let plain =
            reverse_sample(&den, &sched, 80, 0.1, &mut stream(seed, 0)).clamped(&cfg.limits);
        assert_eq!(guided.controls, plain);
    }
}

#[test]
fn output_respects_control_limits() {
    let c = crossing();
    let cfg = GuidanceConfig {
        lambda: 1e5,
        ..Default::default()
    };
    let ctx = GuidanceContext {
        init: c.init,
        others: &c.ego,
        lanes: &c.lanes,
    };
    let sched = DiffusionSchedule::cosine(cfg.steps);
    let den = phantom_denoiser(c.nominal.clone(), &cfg);
    for seed in 0..10 {
        let g = guided_reverse(&ctx, &den, &sched, 80, 0.1, &cfg, &mut stream(seed, 0)).unwrap();
        assert!(g.controls.controls.iter().all(|u| cfg.limits.admits(*u)));
        assert!(g.trajectory.states.iter().all(|s| s.is_finite()));
    }
}

#[test]
fn unguided_output_recovers_the_prior() {
    let c = crossing();
    let cfg = GuidanceConfig {
        lambda: 0.0,
        ..Default::default()
    };
    let nominal = rollout(c.init, &c.nominal);
    let n = 100;
    let mean: f64 = (0..n)
        .map(|seed| {
            let t = generate(&c, &cfg, seed);
            t.positions()
                .zip(nominal.positions())
                .map(|(a, b)| a.dist(b))
                .sum::<f64>()
                / t.states.len() as f64
        })
        .sum::<f64>()
        / n as f64;
    assert!(mean < 0.5, "mean distance to the nominal rollout {mean}");
}

#[test]
fn guidance_pulls_phantoms_toward_the_ego() {
    let c = crossing();
    let on = GuidanceConfig::default();
    let off = GuidanceConfig { lambda: 0.0, ..on };
    let closer = (0..100)
        .filter(|&seed| {
            closest_approach(&generate(&c, &on, seed), &c.ego)
                < closest_approach(&generate(&c, &off, seed), &c.ego)
        })
        .count();
    assert!(closer >= 80, "closer on {closer}/100 seeds");
}

#[test]
fn strong_lane_weight_keeps_phantoms_on_road() {
    let c = crossing();
    let map = RoadMap::new(&c.lanes).unwrap();
    let lane = GuidanceConfig {
        lambda1: 1.0,
        lambda2: 50.0,
        ..Default::default()
    };
    let free = GuidanceConfig {
        lambda2: 0.0,
        ..lane
    };
    let ok = (0..50)
        .filter(|&seed| {
            onroad_fraction(&generate(&c, &lane, seed), &map)
                >= onroad_fraction(&generate(&c, &free, seed), &map)
        })
        .count();
    assert!(ok >= 40, "on-road at least as often on {ok}/50 seeds");
}

#[test]
fn larger_closeness_weight_never_backs_off_by_more_than_tau() {
    let c = crossing();
    let probe = GuidanceConfig {
        lambda1: 1.0,
        lambda2: 0.0,
        ..Default::default()
    };
    let ctx = GuidanceContext {
        init: c.init,
        others: &c.ego,
        lanes: &c.lanes,
    };
    for seed in 0..10 {
        let softmin: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
            .iter()
            .map(|&l1| {
                let cfg = GuidanceConfig {
                    lambda1: l1,
                    ..Default::default()
                };
                let sched = DiffusionSchedule::cosine(cfg.steps);
                let den = phantom_denoiser(c.nominal.clone(), &cfg);
                let g = guided_reverse(&ctx, &den, &sched, 80, 0.1, &cfg, &mut stream(seed, 0))
                    .unwrap();
                -guidance_objective(&g.controls, &ctx, &probe).inter
            })
            .collect();
        for w in softmin.windows(2) {
            assert!(w[1] <= w[0] + probe.tau, "seed {seed}: {softmin:?}");
        }
    }
}
