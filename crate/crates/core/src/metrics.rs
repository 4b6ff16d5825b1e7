//! Evaluation metrics: time-to-collision, critical moments, the risk score of
//! an ego run under a ground-truth grid, and realism of generated scenes.

use serde::{Deserialize, Serialize};

use crate::risk::{risk_at, RiskGrid};
use crate::scene::{road_sdf, LaneSegment};
use crate::{Path, Point, Traj};

pub const DEFAULT_TTC_CAP: f64 = 100.0;
/// TTC strictly below this counts as a critical moment (s).
pub const CRITICAL_TTC: f64 = 3.0;
/// Agents closer than this to the ego path count as interacting (m).
pub const INTERACTION_RADIUS: f64 = 20.0;

/// A disc moving at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub position: Point,
    pub velocity: Point,
    pub radius: f64,
}

/// Smallest `tau >= 0` at which the two discs touch when both keep their
/// velocity; 0 when they already overlap, `cap` when they never meet.
pub fn pair_ttc(a: &Body, b: &Body, cap: f64) -> f64 {
    let r = b.position - a.position;
    let w = b.velocity - a.velocity;
    let reach = a.radius + b.radius;
    let c = r.norm_sq() - reach * reach;
    if c <= 0.0 {
        return 0.0;
    }
    let aa = w.norm_sq();
    let bb = 2.0 * r.dot(w);
    if aa == 0.0 || bb >= 0.0 {
        return cap;
    }
    let disc = bb * bb - 4.0 * aa * c;
    if disc < 0.0 {
        return cap;
    }
    ((-bb - disc.sqrt()) / (2.0 * aa)).min(cap)
}

/// Ego-vs-agent TTC for every timestep (rows) and agent (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct TtcMatrix {
    pub steps: usize,
    pub agents: usize,
    pub cap: f64,
    /// Row-major, `steps x agents`.
    pub values: Vec<f64>,
}

impl TtcMatrix {
    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.agents + k]
    }

    fn row_min(&self, t: usize) -> f64 {
        self.values[t * self.agents..(t + 1) * self.agents]
            .iter()
            .copied()
            .fold(self.cap, f64::min)
    }
}

fn body(traj: &Traj, t: usize, radius: f64) -> Option<Body> {
    traj.states.get(t).map(|s| Body {
        position: s.position(),
        velocity: s.velocity(),
        radius,
    })
}

/// TTC matrix over the ego's timesteps. Agents are `(trajectory, radius)`;
/// steps past the end of an agent's trajectory are `cap`.
pub fn ttc(ego: &Traj, ego_radius: f64, agents: &[(&Traj, f64)], cap: f64) -> TtcMatrix {
    let steps = ego.states.len();
    let mut values = Vec::with_capacity(steps * agents.len());
    for t in 0..steps {
        let e = body(ego, t, ego_radius).expect("t within ego states");
        for (traj, radius) in agents {
            values.push(body(traj, t, *radius).map_or(cap, |a| pair_ttc(&e, &a, cap)));
        }
    }
    TtcMatrix {
        steps,
        agents: agents.len(),
        cap,
        values,
    }
}

pub fn ttc_min(m: &TtcMatrix) -> f64 {
    m.values.iter().copied().fold(m.cap, f64::min)
}

/// Mean over all entries; `cap` for an agent-free scene.
pub fn ttc_avg(m: &TtcMatrix) -> f64 {
    if m.values.is_empty() {
        return m.cap;
    }
    m.values.iter().sum::<f64>() / m.values.len() as f64
}

/// Timesteps whose smallest TTC is strictly below `threshold`.
pub fn critical_moments(m: &TtcMatrix, threshold: f64) -> usize {
    (0..m.steps).filter(|&t| m.row_min(t) < threshold).count()
}

/// `sum_i risk(p_i) v_i dt` over paired positions and speeds.
pub fn risk_score_with(
    risk: impl Fn(Point) -> f64,
    positions: &[Point],
    speeds: &[f64],
    dt: f64,
) -> f64 {
    positions
        .iter()
        .zip(speeds)
        .map(|(p, v)| risk(*p) * v * dt)
        .sum()
}

/// Risk score of an ego run (states `0..N-1` of `ego`) under `grid`.
pub fn risk_score(grid: &RiskGrid, ego: &Traj, steps: usize) -> f64 {
    let states = &ego.states[..steps.min(ego.states.len())];
    let positions: Vec<Point> = states.iter().map(|s| s.position()).collect();
    let speeds: Vec<f64> = states.iter().map(|s| s.speed).collect();
    risk_score_with(|p| risk_at(grid, p), &positions, &speeds, ego.dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub ttc_min: f64,
    pub onroad_rate: f64,
    pub offroad_dist: f64,
    pub interaction_agents: usize,
}

/// On-road fraction and mean off-road distance over every point of `trajs`;
/// `(1, 0)` when there are no points.
pub fn road_stats<'a>(
    lanes: &[LaneSegment],
    trajs: impl IntoIterator<Item = &'a Traj>,
) -> (f64, f64) {
    let sdf: Vec<f64> = trajs
        .into_iter()
        .flat_map(|t| t.positions())
        .map(|p| road_sdf(p, lanes))
        .collect();
    let off: Vec<f64> = sdf.iter().copied().filter(|d| *d > 0.0).collect();
    let rate = if sdf.is_empty() {
        1.0
    } else {
        (sdf.len() - off.len()) as f64 / sdf.len() as f64
    };
    let dist = if off.is_empty() {
        0.0
    } else {
        off.iter().sum::<f64>() / off.len() as f64
    };
    (rate, dist)
}

/// Realism and criticality of a scene. `agents` holds one trajectory per
/// agent (logged or generated) with its radius; the road statistics cover the
/// generated ones only.
pub fn generation_metrics(
    lanes: &[LaneSegment],
    ego: &Traj,
    ego_radius: f64,
    ego_path: &Path,
    agents: &[(&Traj, f64)],
    generated: &[&Traj],
    cap: f64,
    interaction_radius: f64,
) -> GenerationMetrics {
    let m = ttc(ego, ego_radius, agents, cap);
    let (onroad_rate, offroad_dist) = road_stats(lanes, generated.iter().copied());
    let interaction_agents = agents
        .iter()
        .filter(|(t, _)| {
            t.positions()
                .any(|p| ego_path.distance(p) < interaction_radius)
        })
        .count();
    GenerationMetrics {
        ttc_min: ttc_min(&m),
        onroad_rate,
        offroad_dist,
        interaction_agents,
    }
}

/// One row of the planner comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scenario: String,
    pub planner: String,
    pub ttc_min: f64,
    pub ttc_avg: f64,
    pub risk_score: f64,
    pub critical_moments: usize,
    pub onroad_rate: f64,
    pub offroad_dist: f64,
    pub interaction_agents: usize,
}

/// Column means of the numeric fields.
pub fn mean_row(rows: &[EvalRow]) -> Option<[f64; 7]> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mut acc = [0.0; 7];
    for r in rows {
        let vals = [
            r.ttc_min,
            r.ttc_avg,
            r.risk_score,
            r.critical_moments as f64,
            r.onroad_rate,
            r.offroad_dist,
            r.interaction_agents as f64,
        ];
        for (a, v) in acc.iter_mut().zip(vals) {
            *a += v;
        }
    }
    Some(acc.map(|a| a / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::kinematics::State;

    fn disc(x: f64, y: f64, vx: f64, vy: f64, r: f64) -> Body {
        Body {
            position: Vec2::new(x, y),
            velocity: Vec2::new(vx, vy),
            radius: r,
        }
    }

    fn straight(id: &str, x0: f64, y: f64, heading: f64, speed: f64, steps: usize) -> Traj {
        let dir = Vec2::from_angle(heading);
        Traj {
            agent_id: id.into(),
            mode_id: 0,
            dt: 0.1,
            states: (0..steps)
                .map(|i| {
                    let p = Vec2::new(x0, y) + dir * (speed * 0.1 * i as f64);
                    State::new(p.x, p.y, heading, speed)
                })
                .collect(),
        }
    }

    #[test]
    fn head_on_closed_form() {
        let a = disc(0.0, 0.0, 5.0, 0.0, 2.0);
        let b = disc(50.0, 0.0, -5.0, 0.0, 2.0);
        assert!((pair_ttc(&a, &b, 100.0) - 4.6).abs() < 1e-12);
    }

    #[test]
    fn receding_and_overlapping() {
        let a = disc(0.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(pair_ttc(&a, &disc(10.0, 0.0, 3.0, 0.0, 1.0), 100.0), 100.0);
        assert_eq!(pair_ttc(&a, &disc(1.5, 0.0, 3.0, 0.0, 1.0), 100.0), 0.0);
        assert_eq!(pair_ttc(&a, &disc(10.0, 10.0, 0.0, 0.0, 1.0), 100.0), 100.0);
    }

    #[test]
    fn critical_threshold_is_strict() {
        let m = TtcMatrix {
            steps: 4,
            agents: 1,
            cap: 100.0,
            values: vec![3.0, 2.999, 100.0, 0.0],
        };
        assert_eq!(critical_moments(&m, 3.0), 2);
        assert_eq!(ttc_min(&m), 0.0);
    }

    #[test]
    fn ego_alone_gets_cap() {
        let ego = straight("ego", 0.0, 0.0, 0.0, 10.0, 10);
        let m = ttc(&ego, 2.0, &[], 100.0);
        assert_eq!(ttc_min(&m), 100.0);
        assert_eq!(ttc_avg(&m), 100.0);
        assert_eq!(critical_moments(&m, 3.0), 0);
    }

    #[test]
    fn risk_score_direct_evaluation() {
        let pos = vec![Vec2::new(0.0, 0.0); 80];
        let v = vec![10.0; 80];
        assert_eq!(risk_score_with(|_| 0.5, &pos, &v, 0.1), 40.0);
        assert_eq!(risk_score_with(|_| 0.5, &pos, &[0.0; 80], 0.1), 0.0);
    }

    #[test]
    fn empty_scene_is_fully_on_road() {
        let path =
            crate::geom::Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)]).unwrap();
        let ego = straight("ego", 0.0, 0.0, 0.0, 10.0, 10);
        let g = generation_metrics(&[], &ego, 2.0, &path, &[], &[], 100.0, 20.0);
        assert_eq!(g.onroad_rate, 1.0);
        assert_eq!(g.offroad_dist, 0.0);
        assert_eq!(g.interaction_agents, 0);
    }
}
