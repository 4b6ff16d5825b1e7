//! Synthetic occlusion scenarios: wall-occluded crossing, T-intersection and
//! occluded left turn, with layouts and logged traffic varied by seed.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng as _;

use crate::geom::Vec2;
use crate::planner::{plan_noap, PlanContext, PlannerConfig};
use crate::rng::{derive_seed, stream, Rng};
use crate::scene::*;
use crate::Point;

pub const DEFAULT_COUNT: usize = 50;
const HALF_LENGTH: f64 = 90.0;
const LANE_WIDTH: f64 = 4.0;
/// Centerline offset from the road axis (right-hand traffic).
const OFFSET: f64 = 0.5 * LANE_WIDTH;
const ROAD_EDGE: f64 = LANE_WIDTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Archetype {
    Crossing,
    TJunction,
    LeftTurn,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Self::Crossing, Self::TJunction, Self::LeftTurn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Crossing => "crossing",
            Self::TJunction => "t_junction",
            Self::LeftTurn => "left_turn",
        }
    }
}

fn p(x: f64, y: f64) -> Point {
    Vec2::new(x, y)
}

fn lane(id: &str, centerline: Vec<Point>, successors: &[&str], kind: LaneKind) -> LaneSegment {
    LaneSegment {
        id: id.into(),
        centerline,
        width: LANE_WIDTH,
        successors: successors.iter().map(|s| s.to_string()).collect(),
        predecessors: vec![],
        kind,
    }
}

/// Counter-clockwise rectangle.
fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<Point> {
    vec![p(x0, y0), p(x1, y0), p(x1, y1), p(x0, y1)]
}

/// Quarter arc around `center` from angle `a0` to `a1`.
fn arc(center: Point, r: f64, a0: f64, a1: f64) -> Vec<Point> {
    const N: usize = 8;
    (0..=N)
        .map(|i| center + Vec2::from_angle(a0 + (a1 - a0) * i as f64 / N as f64) * r)
        .collect()
}

fn four_way() -> Vec<LaneSegment> {
    let (h, o) = (HALF_LENGTH, OFFSET);
    vec![
        lane("eb", vec![p(-h, -o), p(h, -o)], &[], LaneKind::Drive),
        lane("wb", vec![p(h, o), p(-h, o)], &[], LaneKind::Drive),
        lane("nb", vec![p(o, -h), p(o, h)], &[], LaneKind::Drive),
        lane("sb", vec![p(-o, h), p(-o, -h)], &[], LaneKind::Drive),
    ]
}

fn t_junction() -> Vec<LaneSegment> {
    let (h, o, e) = (HALF_LENGTH, OFFSET, ROAD_EDGE);
    let mut right = arc(p(e, -e), e - o, PI, FRAC_PI_2);
    right[0] = p(o, -e);
    let left = arc(p(-e, -e), e + o, 0.0, FRAC_PI_2);
    vec![
        lane(
            "eb_w",
            vec![p(-h, -o), p(e, -o)],
            &["eb_e"],
            LaneKind::Drive,
        ),
        lane("eb_e", vec![p(e, -o), p(h, -o)], &[], LaneKind::Drive),
        lane("wb_e", vec![p(h, o), p(-e, o)], &["wb_w"], LaneKind::Drive),
        lane("wb_w", vec![p(-e, o), p(-h, o)], &[], LaneKind::Drive),
        lane(
            "nb",
            vec![p(o, -h), p(o, -e)],
            &["turn_r", "turn_l"],
            LaneKind::Drive,
        ),
        lane("turn_r", right, &["eb_e"], LaneKind::Turn),
        lane("turn_l", left, &["wb_w"], LaneKind::Turn),
    ]
}

/// Building filling a corner quadrant (`sx`, `sy` are the quadrant signs).
fn corner_building(rng: &mut Rng, sx: f64, sy: f64) -> Vec<Point> {
    let gap = ROAD_EDGE + rng.random_range(1.0..3.0);
    let w = rng.random_range(15.0..30.0);
    let h = rng.random_range(15.0..30.0);
    let (xa, xb) = (sx * gap, sx * (gap + w));
    let (ya, yb) = (sy * gap, sy * (gap + h));
    rect(xa.min(xb), xa.max(xb), ya.min(yb), ya.max(yb))
}

/// Constant-speed log along a straight lane, starting `s0` into it.
fn lane_log(id: &str, lane: &LaneSegment, s0: f64, speed: f64, dt: f64, steps: usize) -> AgentLog {
    let a = lane.centerline[0];
    let b = *lane.centerline.last().expect("two points");
    let dir = (b - a).normalized().expect("non-degenerate lane");
    AgentLog {
        id: id.into(),
        kind: AgentKind::Vehicle,
        footprint: Footprint::default(),
        states: (0..=steps)
            .map(|i| {
                let q = a + dir * (s0 + speed * dt * i as f64);
                StateSample {
                    t: i as f64 * dt,
                    x: q.x,
                    y: q.y,
                    heading: dir.angle(),
                    speed,
                }
            })
            .collect(),
    }
}

/// Scenario `index` of the suite for `seed`.
pub fn demo_scenario(seed: u64, index: usize, planner: &PlannerConfig) -> Scenario {
    let archetype = Archetype::ALL[index % Archetype::ALL.len()];
    let mut rng = stream(derive_seed(seed, &format!("demo/{index}")), index as u64);
    let dt = DEFAULT_DT;
    let steps = (DEFAULT_HORIZON / dt).round() as usize;
    let x0 = rng.random_range(-45.0..-30.0);
    let v0 = rng.random_range(6.0..10.0);
    let d_desired = rng.random_range(50.0..75.0);
    let (h, o) = (HALF_LENGTH, OFFSET);

    let (lanes, mut occluders, path) = match archetype {
        Archetype::Crossing => {
            let mut occ = vec![corner_building(&mut rng, -1.0, -1.0)];
            if rng.random_bool(0.5) {
                occ.push(corner_building(&mut rng, -1.0, 1.0));
            }
            (four_way(), occ, vec![p(x0, -o), p(h, -o)])
        }
        Archetype::TJunction => {
            let occ = vec![
                corner_building(&mut rng, -1.0, -1.0),
                corner_building(&mut rng, 1.0, -1.0),
            ];
            (t_junction(), occ, vec![p(x0, -o), p(h, -o)])
        }
        Archetype::LeftTurn => {
            let occ = vec![corner_building(&mut rng, -1.0, 1.0)];
            let mut path = vec![p(x0, -o)];
            path.extend(arc(p(-o, o), 2.0 * o, -FRAC_PI_2, 0.0));
            path.push(p(o, h));
            (four_way(), occ, path)
        }
    };
    // a parked van on the far side hides a little more of the cross traffic
    if rng.random_bool(0.3) {
        let x = rng.random_range(8.0..20.0);
        occluders.push(rect(x, x + 5.0, -ROAD_EDGE - 2.5, -ROAD_EDGE - 0.5));
    }

    let mut agents = Vec::new();
    let wb = lanes
        .iter()
        .find(|l| l.id == "wb" || l.id == "wb_e")
        .expect("westbound lane");
    if rng.random_bool(0.8) {
        let s0 = rng.random_range(10.0..60.0);
        let speed = rng.random_range(5.0..12.0);
        agents.push(lane_log("car_0", wb, s0, speed, dt, steps));
    }
    let mut sc = Scenario {
        schema: SCHEMA_VERSION,
        id: format!("demo_{index:03}_{}", archetype.name()),
        lanes,
        agents,
        ego: EgoSpec {
            initial: EgoState {
                x: x0,
                y: -o,
                heading: 0.0,
                speed: v0,
            },
            reference_path: ReferencePath::from_points(path).expect("valid ego path"),
            d_desired,
            footprint: Footprint::default(),
            log: vec![],
        },
        occluders,
        dt,
        horizon: DEFAULT_HORIZON,
        metadata: BTreeMap::from([
            ("archetype".to_string(), archetype.name().to_string()),
            ("demo_seed".to_string(), seed.to_string()),
        ]),
        phantoms: vec![],
    };
    sc.ego.log = ego_log(&sc, planner);
    sc
}

/// The ego's logged motion: the occlusion-unaware plan against the visible traffic.
fn ego_log(sc: &Scenario, cfg: &PlannerConfig) -> Vec<StateSample> {
    let Ok(ctx) = PlanContext::new(sc) else {
        return vec![];
    };
    let Ok(plan) = plan_noap(&ctx, cfg) else {
        return vec![];
    };
    ctx.trajectory(&plan.profile)
        .states
        .iter()
        .enumerate()
        .map(|(i, st)| StateSample {
            t: i as f64 * sc.dt,
            x: st.x,
            y: st.y,
            heading: st.heading,
            speed: st.speed,
        })
        .collect()
}

pub fn demo_suite(seed: u64, count: usize, planner: &PlannerConfig) -> Vec<Scenario> {
    (0..count)
        .map(|i| demo_scenario(seed, i, planner))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visibility::{cast_fov, occluded_segments, DEFAULT_MAX_RANGE, DEFAULT_RAY_COUNT};

    #[test]
    fn every_archetype_is_valid_and_occluded() {
        let cfg = PlannerConfig::default();
        for i in 0..6 {
            let sc = demo_scenario(0, i, &cfg);
            assert!(validate(&sc).is_empty(), "{}: {:?}", sc.id, validate(&sc));
            assert_eq!(sc.ego.log.len(), sc.steps() + 1);
            let fov = cast_fov(
                &sc,
                sc.ego.initial.position(),
                0.0,
                DEFAULT_RAY_COUNT,
                DEFAULT_MAX_RANGE,
            )
            .unwrap();
            assert!(
                !occluded_segments(&sc, &fov, 0.5, 2.0).is_empty(),
                "{}",
                sc.id
            );
        }
    }

    #[test]
    fn lanes_stay_on_the_road() {
        let lanes = t_junction();
        for l in &lanes {
            for q in &l.centerline {
                assert_eq!(road_sdf(*q, &lanes), 0.0, "{} at {q:?}", l.id);
            }
        }
    }
}
