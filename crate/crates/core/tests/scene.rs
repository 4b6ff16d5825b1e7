mod common;

use common::*;
use occrisk::geom::Polyline;
use occrisk::io::{from_json_bytes, to_json_bytes};
use occrisk::scene::LaneSegment;
use occrisk::scene::{road_sdf, validate, Scenario};
use proptest::prelude::*;
use std::sync::OnceLock;

static LANES: OnceLock<Vec<Vec<LaneSegment>>> = OnceLock::new();

proptest! {
    #[test]
    fn road_sdf_is_one_lipschitz(
        ax in -120.0..120.0f64, ay in -120.0..120.0f64,
        bx in -120.0..120.0f64, by in -120.0..120.0f64,
        archetype in 0usize..3,
    ) {
        let lanes = &LANES.get_or_init(|| (0..3).map(|i| demo(i).lanes).collect::<Vec<_>>())[archetype];
        let (a, b) = (p(ax, ay), p(bx, by));
        let lhs = (road_sdf(a, lanes) - road_sdf(b, lanes)).abs();
        prop_assert!(lhs <= a.dist(b) + 1e-9, "{lhs} > {}", a.dist(b));
    }

    #[test]
    fn projection_is_idempotent(
        pts in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 2..6),
        qx in -80.0..80.0f64, qy in -80.0..80.0f64,
    ) {
        let pts: Vec<_> = pts.into_iter().map(|(x, y)| p(x, y)).collect();
        let Ok(line) = Polyline::new(pts) else { return Ok(()) };
        let first = line.project(p(qx, qy));
        let again = line.project(first.point);
        prop_assert!((again.s - first.s).abs() < 1e-9, "s {} vs {}", again.s, first.s);
        prop_assert!(again.lateral.abs() < 1e-9);
        prop_assert!(again.point.dist(first.point) < 1e-9);
    }
}

#[test]
fn scenario_bytes_round_trip() {
    for i in 0..6 {
        let sc = demo(i);
        let bytes = to_json_bytes(&sc).unwrap();
        let back: Scenario = from_json_bytes(&bytes, "mem").unwrap();
        assert_eq!(back, sc);
        assert_eq!(to_json_bytes(&back).unwrap(), bytes, "{}", sc.id);
    }
}

#[test]
fn demo_suite_is_valid() {
    for sc in occrisk::demo::demo_suite(0, 12, &Default::default()) {
        assert!(validate(&sc).is_empty(), "{}: {:?}", sc.id, validate(&sc));
    }
}

#[test]
fn demo_suite_is_seed_stable() {
    let a = to_json_bytes(&occrisk::demo::demo_suite(0, 3, &Default::default())).unwrap();
    let b = to_json_bytes(&occrisk::demo::demo_suite(0, 3, &Default::default())).unwrap();
    let c = to_json_bytes(&occrisk::demo::demo_suite(1, 3, &Default::default())).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
