mod common;

use common::*;
use occrisk::planner::*;
use occrisk::risk::{anchor_risks, build_risk_grid, GridSpec, RiskConfig};
use occrisk::scene::{RoadMap, Scenario};
use occrisk::trajgen::{build_trajectory_set, filter_active, NominalConfig};

fn risk_scene(i: usize) -> (Scenario, occrisk::risk::AnchorRisk) {
    let sc = demo(i);
    let map = RoadMap::new(&sc.lanes).unwrap();
    let set = build_trajectory_set(
        &sc,
        &map,
        &filter_active(&sc, 0.5),
        6,
        &NominalConfig::default(),
    );
    let ctx = PlanContext::new(&sc).unwrap();
    let ego = ctx.trajectory(&plan_noap(&ctx, &PlannerConfig::default()).unwrap().profile);
    let (lo, hi) = sc.bounds();
    let grid = build_risk_grid(
        &set,
        &ego,
        GridSpec::covering(lo, hi, 10.0, 0.5),
        &RiskConfig::default(),
    );
    let anchors = anchor_risks(&grid, &ctx.path, 40, None).unwrap();
    (sc, anchors)
}

fn check_feasible(plan: &Plan, ctx: &PlanContext, cfg: &PlannerConfig) {
    let v = &plan.profile.v;
    assert_eq!(v[0], ctx.v0, "v0 anchoring");
    assert_eq!(v.len(), ctx.steps);
    assert!(v.iter().all(|x| (0.0..=cfg.v_cap).contains(x)), "{v:?}");
    for w in v.windows(2) {
        assert!((w[1] - w[0]).abs() <= cfg.a_max * ctx.dt + 1e-12, "{w:?}");
    }
    assert_eq!(plan.profile.s, positions(v, ctx.s0, ctx.dt));
}

#[test]
fn every_variant_returns_a_feasible_profile() {
    let cfg = PlannerConfig::default();
    for i in 0..6 {
        let (sc, anchors) = risk_scene(i);
        let ctx = PlanContext::new(&sc).unwrap();
        check_feasible(&plan_noap(&ctx, &cfg).unwrap(), &ctx, &cfg);
        check_feasible(&plan_risk_aware(&ctx, &anchors, &cfg).unwrap(), &ctx, &cfg);
        check_feasible(&plan_opbp(&ctx, &[], &cfg).unwrap(), &ctx, &cfg);
        let limit = srq_limit(vec![ctx.s0 + 40.0], &cfg);
        let plan = plan_srq(&ctx, limit.clone(), &cfg).unwrap();
        check_feasible(&plan, &ctx, &cfg);
        let p = &plan.profile;
        assert!(p.v.iter().zip(&p.s).all(|(v, s)| *v <= limit.v_limit(*s)));
    }
}

#[test]
fn planning_is_bit_reproducible() {
    let cfg = PlannerConfig::default();
    let (sc, anchors) = risk_scene(1);
    let ctx = PlanContext::new(&sc).unwrap();
    let a = plan_risk_aware(&ctx, &anchors, &cfg).unwrap();
    let b = plan_risk_aware(&ctx, &anchors, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scaling_all_weights_keeps_the_argmin() {
    let cfg = PlannerConfig::default();
    let scaled = PlannerConfig {
        w1: 3.0 * cfg.w1,
        w2: 3.0 * cfg.w2,
        w3: 3.0 * cfg.w3,
        w4: 3.0 * cfg.w4,
        ..cfg
    };
    for i in 0..3 {
        let (sc, anchors) = risk_scene(i);
        let ctx = PlanContext::new(&sc).unwrap();
        let a = plan_risk_aware(&ctx, &anchors, &cfg).unwrap();
        let b = plan_risk_aware(&ctx, &anchors, &scaled).unwrap();
        let d = a
            .profile
            .v
            .iter()
            .zip(&b.profile.v)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(d < 0.05, "{}: max speed difference {d}", sc.id);
        assert!((3.0 * a.cost.total - b.cost.total).abs() <= 1e-3 * b.cost.total.abs().max(1.0));
    }
}

#[test]
fn solution_never_costs_more_than_its_start() {
    let cfg = PlannerConfig::default();
    for i in 0..4 {
        let (sc, anchors) = risk_scene(i);
        let ctx = PlanContext::new(&sc).unwrap();
        let mut p = ctx.problem(&cfg);
        p.risk = Some(&anchors);
        for start in [ctx.v0, 0.0, cfg.v_cap] {
            let init = p.repair(&vec![start; ctx.steps]).unwrap();
            let plan = p.solve(PlannerKind::RiskAware, Some(&init)).unwrap();
            assert!(
                plan.cost.total <= p.cost(&init).total + 1e-9,
                "{}: start {start}",
                sc.id
            );
        }
    }
}
