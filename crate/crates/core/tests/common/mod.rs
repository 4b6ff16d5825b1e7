#![allow(dead_code)]

use std::collections::BTreeMap;

use occrisk::geom::Vec2;
use occrisk::planner::PlannerConfig;
use occrisk::scene::*;
use occrisk::Point;

pub fn p(x: f64, y: f64) -> Point {
    Vec2::new(x, y)
}

pub fn lane(id: &str, pts: Vec<Point>) -> LaneSegment {
    LaneSegment {
        id: id.into(),
        centerline: pts,
        width: 4.0,
        successors: vec![],
        predecessors: vec![],
        kind: LaneKind::Drive,
    }
}

/// Ego at the origin heading east along `y = 0`, no agents or occluders.
pub fn scenario(lanes: Vec<LaneSegment>) -> Scenario {
    Scenario {
        schema: SCHEMA_VERSION,
        id: "test".into(),
        lanes,
        agents: vec![],
        ego: EgoSpec {
            initial: EgoState {
                x: 0.0,
                y: 0.0,
                heading: 0.0,
                speed: 5.0,
            },
            reference_path: ReferencePath::from_points(vec![p(0.0, 0.0), p(100.0, 0.0)]).unwrap(),
            d_desired: 40.0,
            footprint: Footprint::default(),
            log: vec![],
        },
        occluders: vec![],
        dt: DEFAULT_DT,
        horizon: DEFAULT_HORIZON,
        metadata: BTreeMap::new(),
        phantoms: vec![],
    }
}

pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<Point> {
    vec![p(x0, y0), p(x1, y0), p(x1, y1), p(x0, y1)]
}

pub fn demo(i: usize) -> Scenario {
    occrisk::demo::demo_scenario(0, i, &PlannerConfig::default())
}
