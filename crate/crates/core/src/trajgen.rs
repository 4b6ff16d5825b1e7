//! Lane-following nominal controls and rule-based multimodal trajectories.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Polyline, Vec2};
use crate::kinematics::{rollout, Control, ControlLimits, ControlSequence};
use crate::scene::{AgentLog, RoadMap, Scenario, StateSample};
use crate::{AgentState, Controls, Traj};

pub const DEFAULT_V_MIN: f64 = 0.5;
pub const DEFAULT_MODES: usize = 6;
/// Speed factors applied to the current speed when filling extra modes.
pub const SPEED_FACTORS: [f64; 6] = [1.0, 0.7, 1.3, 0.85, 1.15, 0.5];
/// Successor hops explored when enumerating lane branches.
pub const ROUTE_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajError {
    #[error("agent is {offset:.2} m from its route, more than twice the lane width")]
    OffRouteStart { offset: f64 },
}

/// Pure-pursuit steering plus proportional speed regulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NominalConfig {
    pub lookahead_min: f64,
    /// Lookahead grows as `speed * lookahead_time`.
    pub lookahead_time: f64,
    pub speed_gain: f64,
    pub limits: ControlLimits<f64>,
}

impl Default for NominalConfig {
    fn default() -> Self {
        Self {
            lookahead_min: 5.0,
            lookahead_time: 1.0,
            speed_gain: 2.5,
            limits: ControlLimits::default(),
        }
    }
}

/// A lane sequence flattened into one centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub lanes: Vec<usize>,
    pub line: Polyline<f64>,
    pub width: f64,
}

impl Route {
    /// Centerline continued straight past its end so lookahead never runs off.
    pub fn tracking_line(&self, steps: usize, dt: f64) -> Polyline<f64> {
        self.line.extended(40.0 * steps as f64 * dt + 50.0)
    }
}

pub fn nominal_controls(
    state: AgentState,
    route: &Route,
    target_speed: f64,
    steps: usize,
    dt: f64,
    cfg: &NominalConfig,
) -> Result<Controls, TrajError> {
    let proj = route.line.project(state.position());
    if proj.distance > 2.0 * route.width {
        return Err(TrajError::OffRouteStart {
            offset: proj.distance,
        });
    }
    let line = route.tracking_line(steps, dt);
    let mut s = state;
    let mut controls = Vec::with_capacity(steps);
    let mut s_hint = line.project(state.position()).s;
    for _ in 0..steps {
        let p = s.position();
        let proj = project_forward(&line, p, s_hint);
        s_hint = proj;
        let lookahead = cfg.lookahead_min.max(cfg.lookahead_time * s.speed);
        let target = line.point_at(proj + lookahead);
        let to_target = target - p;
        let ld = to_target.norm();
        let alpha = if ld > 0.0 {
            wrap_angle(to_target.angle() - s.heading)
        } else {
            0.0
        };
        let curvature = if ld > 0.0 {
            2.0 * alpha.sin() / ld
        } else {
            0.0
        };
        let u = cfg.limits.clamp(Control::new(
            cfg.speed_gain * (target_speed - s.speed),
            s.speed * curvature,
        ));
        controls.push(u);
        s = s.step(u, dt);
    }
    Ok(ControlSequence::new(controls, dt))
}

/// Projection restricted to a window ahead of the previous arc length, so a
/// route that comes back near itself cannot make the tracker jump.
fn project_forward(line: &Polyline<f64>, p: Vec2<f64>, s_prev: f64) -> f64 {
    let pts = line.points();
    let s = line.arc_lengths();
    let lo = s_prev - 5.0;
    let hi = s_prev + 60.0;
    let mut best = (f64::INFINITY, s_prev);
    for i in 0..pts.len() - 1 {
        if s[i + 1] < lo || s[i] > hi {
            continue;
        }
        let u = crate::geom::segment_param(p, pts[i], pts[i + 1]);
        let d = p.dist(pts[i].lerp(pts[i + 1], u));
        if d < best.0 {
            best = (d, s[i] + u * (s[i + 1] - s[i]));
        }
    }
    best.1
}

pub fn state_of(sample: &StateSample) -> AgentState {
    AgentState::new(sample.x, sample.y, sample.heading, sample.speed)
}

pub fn trajectory_from_log(log: &AgentLog, dt: f64) -> Traj {
    Traj {
        agent_id: log.id.clone(),
        mode_id: 0,
        dt,
        states: log.states.iter().map(state_of).collect(),
    }
}

/// Every lane branch an agent at `state` can follow, up to [`ROUTE_DEPTH`] successor hops.
pub fn agent_routes(map: &RoadMap, state: AgentState) -> Vec<Route> {
    let Some((lane, proj)) = map.locate(state.position(), state.heading) else {
        return vec![];
    };
    map.routes_from(lane, ROUTE_DEPTH)
        .into_iter()
        .map(|lanes| Route {
            line: map.route_polyline(&lanes, proj.s),
            width: map.lane(lane).width,
            lanes,
        })
        .collect()
}

/// `modes` trajectories for one agent: one per lane branch at current speed,
/// then branches reused with scaled target speeds. Agents off the lane graph
/// fall back to constant-velocity rollouts.
pub fn multimodal(
    map: &RoadMap,
    agent_id: &str,
    state: AgentState,
    modes: usize,
    steps: usize,
    dt: f64,
    cfg: &NominalConfig,
) -> Vec<Traj> {
    assert!(modes >= 1, "at least one mode");
    let routes = agent_routes(map, state);
    let mut plan: Vec<(Option<&Route>, f64)> = Vec::with_capacity(modes);
    if routes.is_empty() {
        plan.extend((0..modes).map(|k| (None, SPEED_FACTORS[k % SPEED_FACTORS.len()])));
    } else {
        'fill: for k in 0.. {
            let factor = SPEED_FACTORS[k % SPEED_FACTORS.len()];
            for r in &routes {
                if plan.len() == modes {
                    break 'fill;
                }
                plan.push((Some(r), factor));
            }
        }
    }
    plan.into_iter()
        .enumerate()
        .map(|(mode, (route, factor))| {
            let controls = route
                .and_then(|r| nominal_controls(state, r, factor * state.speed, steps, dt, cfg).ok())
                .unwrap_or_else(|| ControlSequence::zeros(steps, dt));
            rollout(state, &controls).tagged(agent_id, mode)
        })
        .collect()
}

/// Ids of agents moving at least `v_min` at t = 0 (inclusive); phantoms always pass.
pub fn filter_active(sc: &Scenario, v_min: f64) -> BTreeSet<String> {
    sc.agents
        .iter()
        .filter(|a| a.is_phantom() || a.initial().is_some_and(|s| s.speed >= v_min))
        .map(|a| a.id.clone())
        .collect()
}

/// Per-agent multimodal trajectories keyed by agent id.
pub type TrajectorySet = BTreeMap<String, Vec<Traj>>;

/// Multimodal trajectories for every active agent. A phantom whose log already
/// spans the horizon (a generated trajectory) contributes that log as mode 0.
pub fn build_trajectory_set(
    sc: &Scenario,
    map: &RoadMap,
    active: &BTreeSet<String>,
    modes: usize,
    cfg: &NominalConfig,
) -> TrajectorySet {
    let steps = sc.steps();
    sc.agents
        .iter()
        .filter(|a| active.contains(&a.id))
        .filter_map(|a| {
            let init = state_of(a.initial()?);
            let mut set = multimodal(map, &a.id, init, modes, steps, sc.dt, cfg);
            if a.is_phantom() && a.states.len() == steps + 1 {
                set[0] = trajectory_from_log(a, sc.dt);
            }
            Some((a.id.clone(), set))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{LaneKind, LaneSegment};

    fn lane(id: &str, pts: &[(f64, f64)], succ: &[&str]) -> LaneSegment {
        LaneSegment {
            id: id.into(),
            centerline: pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
            width: 4.0,
            successors: succ.iter().map(|s| s.to_string()).collect(),
            predecessors: vec![],
            kind: LaneKind::Drive,
        }
    }

    fn straight_route() -> Route {
        Route {
            lanes: vec![0],
            line: Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(300.0, 0.0)]).unwrap(),
            width: 4.0,
        }
    }

    #[test]
    fn equilibrium_gives_zero_controls() {
        let u = nominal_controls(
            AgentState::new(10.0, 0.0, 0.0, 8.0),
            &straight_route(),
            8.0,
            80,
            0.1,
            &NominalConfig::default(),
        )
        .unwrap();
        assert!(u.max_abs() < 1e-6);
    }

    #[test]
    fn lateral_offset_decays() {
        let init = AgentState::new(0.0, 1.0, 0.0, 10.0);
        let u = nominal_controls(
            init,
            &straight_route(),
            10.0,
            80,
            0.1,
            &NominalConfig::default(),
        )
        .unwrap();
        let traj = rollout(init, &u);
        let lat: Vec<f64> = traj.states.iter().map(|s| s.y.abs()).collect();
        let first_below = lat.iter().position(|&y| y < 0.1).expect("converges");
        assert!(first_below as f64 * 0.1 <= 4.0, "took {first_below} steps");
        assert!(lat[..=first_below].windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn braking_to_standstill() {
        let cfg = NominalConfig::default();
        let v0 = 12.0;
        let init = AgentState::new(0.0, 0.0, 0.0, v0);
        let u = nominal_controls(init, &straight_route(), 0.0, 80, 0.1, &cfg).unwrap();
        let traj = rollout(init, &u);
        let bound = v0 / cfg.limits.accel_max + 1.0;
        let k = traj.states.iter().position(|s| s.speed < 0.1).unwrap();
        assert!(k as f64 * 0.1 <= bound);
    }

    #[test]
    fn off_route_start_is_rejected() {
        let r = nominal_controls(
            AgentState::new(0.0, 9.0, 0.0, 5.0),
            &straight_route(),
            5.0,
            10,
            0.1,
            &NominalConfig::default(),
        );
        assert!(matches!(r, Err(TrajError::OffRouteStart { .. })));
    }

    #[test]
    fn single_lane_single_mode() {
        let map = RoadMap::new(&[lane("a", &[(0.0, 0.0), (200.0, 0.0)], &[])]).unwrap();
        let modes = multimodal(
            &map,
            "v",
            AgentState::new(0.0, 0.0, 0.0, 5.0),
            1,
            80,
            0.1,
            &NominalConfig::default(),
        );
        assert_eq!(modes.len(), 1);
        assert!((modes[0].final_state().x - 40.0).abs() < 1e-6);
    }

    #[test]
    fn speed_modes_are_ordered() {
        let map = RoadMap::new(&[lane("a", &[(0.0, 0.0), (300.0, 0.0)], &[])]).unwrap();
        let v0 = 10.0;
        let modes = multimodal(
            &map,
            "v",
            AgentState::new(0.0, 0.0, 0.0, v0),
            3,
            80,
            0.1,
            &NominalConfig::default(),
        );
        let finals: Vec<f64> = modes.iter().map(|m| m.final_state().speed).collect();
        for (f, k) in finals.iter().zip([1.0, 0.7, 1.3]) {
            assert!((f - k * v0).abs() <= 0.1 * k * v0, "{finals:?}");
        }
        assert!(finals[1] < finals[0] && finals[0] < finals[2]);
    }

    #[test]
    fn branches_reach_different_successors() {
        let map = RoadMap::new(&[
            lane("in", &[(0.0, 0.0), (30.0, 0.0)], &["left", "right"]),
            lane(
                "left",
                &[(30.0, 0.0), (45.0, 5.0), (60.0, 40.0), (60.0, 150.0)],
                &[],
            ),
            lane(
                "right",
                &[(30.0, 0.0), (45.0, -5.0), (60.0, -40.0), (60.0, -150.0)],
                &[],
            ),
        ])
        .unwrap();
        let modes = multimodal(
            &map,
            "v",
            AgentState::new(0.0, 0.0, 0.0, 8.0),
            2,
            80,
            0.1,
            &NominalConfig::default(),
        );
        let end_lane = |t: &Traj| {
            let p = t.final_state().position();
            let dl = map.line(1).project(p).distance;
            let dr = map.line(2).project(p).distance;
            if dl < dr {
                1
            } else {
                2
            }
        };
        assert_eq!(end_lane(&modes[0]), 1);
        assert_eq!(end_lane(&modes[1]), 2);
    }
}
