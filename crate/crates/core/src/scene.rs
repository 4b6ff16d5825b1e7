//! Scenario domain model: lanes, logged agents, the ego, static occluders.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geom::{self, Polyline, Projection, Vec2};
use crate::Point;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_HORIZON: f64 = 8.0;
/// Max distance between the ego's initial position and its reference path start.
pub const EGO_START_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneKind {
    Drive,
    Turn,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSegment {
    pub id: String,
    pub centerline: Vec<Point>,
    pub width: f64,
    #[serde(default)]
    pub successors: Vec<String>,
    #[serde(default)]
    pub predecessors: Vec<String>,
    pub kind: LaneKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Vehicle,
    Phantom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footprint {
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for Footprint {
    /// 4.8 m x 2.0 m passenger car.
    fn default() -> Self {
        Self {
            half_length: 2.4,
            half_width: 1.0,
        }
    }
}

impl Footprint {
    /// Radius of the disc with the same area as the box; the body model used by
    /// the TTC and collision-distance computations.
    pub fn radius(&self) -> f64 {
        (4.0 * self.half_length * self.half_width / std::f64::consts::PI).sqrt()
    }

    pub fn length(&self) -> f64 {
        2.0 * self.half_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl StateSample {
    pub fn position(&self) -> Point {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Point {
        Vec2::from_angle(self.heading) * self.speed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentLog {
    pub id: String,
    pub kind: AgentKind,
    #[serde(default)]
    pub footprint: Footprint,
    pub states: Vec<StateSample>,
}

impl AgentLog {
    pub fn is_phantom(&self) -> bool {
        self.kind == AgentKind::Phantom
    }

    pub fn initial(&self) -> Option<&StateSample> {
        self.states.first()
    }

    /// State at step `i`, holding the last sample past the end of the log.
    pub fn state_at(&self, i: usize) -> Option<&StateSample> {
        self.states.get(i).or_else(|| self.states.last())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl EgoState {
    pub fn position(&self) -> Point {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePath {
    pub points: Vec<Point>,
    /// Cumulative arc length at each point.
    pub s: Vec<f64>,
}

impl ReferencePath {
    pub fn from_points(points: Vec<Point>) -> Result<Self, geom::PolylineError> {
        let line = Polyline::new(points)?;
        Ok(Self {
            points: line.points().to_vec(),
            s: line.arc_lengths().to_vec(),
        })
    }

    pub fn polyline(&self) -> Result<Polyline<f64>, geom::PolylineError> {
        Polyline::new(self.points.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    pub initial: EgoState,
    pub reference_path: ReferencePath,
    pub d_desired: f64,
    #[serde(default)]
    pub footprint: Footprint,
    /// Recorded ego motion over the horizon; empty when the scenario has no log.
    #[serde(default)]
    pub log: Vec<StateSample>,
}

/// Where a phantom agent came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub agent_id: String,
    pub segment_lane: String,
    pub s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub id: String,
    pub lanes: Vec<LaneSegment>,
    pub agents: Vec<AgentLog>,
    pub ego: EgoSpec,
    /// Static convex polygons (walls, buildings).
    pub occluders: Vec<Vec<Point>>,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    #[serde(default)]
    pub phantoms: Vec<Provenance>,
}

impl Scenario {
    /// Number of control steps over the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn agent(&self, id: &str) -> Option<&AgentLog> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Axis-aligned bounds of every lane, occluder, agent sample and the ego path.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut add = |p: Point| {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        };
        for lane in &self.lanes {
            lane.centerline.iter().copied().for_each(&mut add);
        }
        for poly in &self.occluders {
            poly.iter().copied().for_each(&mut add);
        }
        for a in &self.agents {
            a.states
                .iter()
                .map(StateSample::position)
                .for_each(&mut add);
        }
        self.ego
            .reference_path
            .points
            .iter()
            .copied()
            .for_each(&mut add);
        add(self.ego.initial.position());
        (lo, hi)
    }
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

fn check_log(
    entity: &str,
    states: &[StateSample],
    dt: f64,
    horizon: f64,
    out: &mut Vec<Violation>,
) {
    let mut push = |rule: String| {
        out.push(Violation {
            entity: entity.to_string(),
            rule,
        })
    };
    let tol = 1e-6 * dt.max(1e-3);
    for (i, st) in states.iter().enumerate() {
        if ![st.t, st.x, st.y, st.heading, st.speed]
            .iter()
            .all(|v| v.is_finite())
        {
            push(format!("state {i} has a non-finite value"));
            return;
        }
        if st.speed < 0.0 {
            push(format!("state {i} has negative speed {}", st.speed));
            return;
        }
    }
    if let Some(w) = states.windows(2).position(|w| w[1].t <= w[0].t) {
        push(format!(
            "timestamps not strictly increasing at state {}",
            w + 1
        ));
        return;
    }
    if let Some(w) = states
        .windows(2)
        .position(|w| ((w[1].t - w[0].t) - dt).abs() > tol)
    {
        push(format!(
            "non-uniform time step at state {} (expected dt = {dt})",
            w + 1
        ));
        return;
    }
    if let (Some(first), Some(last)) = (states.first(), states.last()) {
        if first.t.abs() > tol || (last.t - horizon).abs() > tol {
            push(format!(
                "log spans [{}, {}] instead of [0, {horizon}]",
                first.t, last.t
            ));
        }
    }
}

/// Check every type invariant; an empty list means the scenario is well formed.
pub fn validate(sc: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<Violation>, entity: String, rule: &str| {
        out.push(Violation {
            entity,
            rule: rule.to_string(),
        })
    };

    if sc.schema != SCHEMA_VERSION {
        push(&mut out, "scenario".into(), "unsupported schema version");
    }
    if !(sc.dt > 0.0 && sc.dt.is_finite()) {
        push(&mut out, "scenario".into(), "dt must be positive");
    }
    if !(sc.horizon > 0.0 && sc.horizon.is_finite()) {
        push(&mut out, "scenario".into(), "horizon must be positive");
    } else if sc.dt > 0.0 && ((sc.horizon / sc.dt) - (sc.horizon / sc.dt).round()).abs() > 1e-6 {
        push(
            &mut out,
            "scenario".into(),
            "horizon is not a whole number of steps",
        );
    }

    let lane_ids: BTreeSet<&str> = sc.lanes.iter().map(|l| l.id.as_str()).collect();
    if lane_ids.len() != sc.lanes.len() {
        push(&mut out, "lanes".into(), "duplicate lane id");
    }
    for lane in &sc.lanes {
        let entity = format!("lane {}", lane.id);
        if let Err(e) = Polyline::new(lane.centerline.clone()) {
            push(
                &mut out,
                entity.clone(),
                &format!("invalid centerline: {e}"),
            );
        }
        if !(lane.width > 0.0 && lane.width.is_finite()) {
            push(&mut out, entity.clone(), "width must be positive");
        }
        for r in lane.successors.iter().chain(&lane.predecessors) {
            if !lane_ids.contains(r.as_str()) {
                push(
                    &mut out,
                    entity.clone(),
                    &format!("unknown lane reference {r}"),
                );
            }
        }
    }

    let agent_ids: BTreeSet<&str> = sc.agents.iter().map(|a| a.id.as_str()).collect();
    if agent_ids.len() != sc.agents.len() {
        push(&mut out, "agents".into(), "duplicate agent id");
    }
    let provenance: BTreeSet<&str> = sc.phantoms.iter().map(|p| p.agent_id.as_str()).collect();
    for agent in &sc.agents {
        let entity = format!("agent {}", agent.id);
        if agent.states.is_empty() {
            push(&mut out, entity, "empty state log");
            continue;
        }
        if !(agent.footprint.half_length > 0.0 && agent.footprint.half_width > 0.0) {
            push(&mut out, entity.clone(), "footprint must be positive");
        }
        if agent.is_phantom() {
            if !provenance.contains(agent.id.as_str()) {
                push(&mut out, entity.clone(), "phantom without provenance");
            }
            // a freshly sampled phantom only carries its initial state
            if agent.states.len() == 1 {
                let st = agent.states[0];
                if st.t != 0.0 || st.speed < 0.0 || !st.speed.is_finite() {
                    push(
                        &mut out,
                        entity,
                        "phantom initial state must be at t = 0 with speed >= 0",
                    );
                }
                continue;
            }
        }
        check_log(&entity, &agent.states, sc.dt, sc.horizon, &mut out);
    }
    for p in &sc.phantoms {
        if sc.agent(&p.agent_id).is_none_or(|a| !a.is_phantom()) {
            push(
                &mut out,
                format!("phantom {}", p.agent_id),
                "provenance without phantom agent",
            );
        }
        if !lane_ids.contains(p.segment_lane.as_str()) {
            push(
                &mut out,
                format!("phantom {}", p.agent_id),
                "provenance lane does not exist",
            );
        }
    }

    let ego = &sc.ego;
    let rp = &ego.reference_path;
    match Polyline::new(rp.points.clone()) {
        Err(e) => push(
            &mut out,
            "ego".into(),
            &format!("invalid reference path: {e}"),
        ),
        Ok(line) => {
            let consistent = rp.s.len() == rp.points.len()
                && rp.s.windows(2).all(|w| w[1] > w[0])
                && rp
                    .s
                    .iter()
                    .zip(line.arc_lengths())
                    .all(|(a, b)| (a - b).abs() <= 1e-6 * (1.0 + b.abs()));
            if !consistent {
                push(
                    &mut out,
                    "ego".into(),
                    "reference path arc length inconsistent or not increasing",
                );
            }
            if ego.initial.position().dist(rp.points[0]) > EGO_START_TOLERANCE {
                push(
                    &mut out,
                    "ego".into(),
                    "initial position is not at the reference path start",
                );
            }
        }
    }
    if !(ego.initial.speed >= 0.0 && ego.initial.speed.is_finite()) {
        push(&mut out, "ego".into(), "initial speed must be >= 0");
    }
    if !ego.d_desired.is_finite() {
        push(&mut out, "ego".into(), "d_desired must be finite");
    }
    if !ego.log.is_empty() {
        check_log("ego log", &ego.log, sc.dt, sc.horizon, &mut out);
    }

    for (i, poly) in sc.occluders.iter().enumerate() {
        if poly.len() < 3 || !geom::is_convex(poly) {
            push(
                &mut out,
                format!("occluder {i}"),
                "occluder must be a convex polygon",
            );
        }
    }
    out
}

/// Distance from `p` to the road region: the union of lane corridors (each
/// centerline buffered by half its width, round caps). Zero inside the road.
pub fn road_sdf(p: Point, lanes: &[LaneSegment]) -> f64 {
    let mut best = f64::INFINITY;
    for lane in lanes {
        let r = 0.5 * lane.width;
        for w in lane.centerline.windows(2) {
            best = best.min(geom::point_segment_distance(p, w[0], w[1]) - r);
        }
    }
    best.max(0.0)
}

/// [`road_sdf`] together with its spatial gradient (zero inside the road).
pub fn road_sdf_grad(p: Point, lanes: &[LaneSegment]) -> (f64, Point) {
    let mut best = f64::INFINITY;
    let mut nearest = p;
    for lane in lanes {
        let r = 0.5 * lane.width;
        for w in lane.centerline.windows(2) {
            let u = geom::segment_param(p, w[0], w[1]);
            let q = w[0].lerp(w[1], u);
            let d = p.dist(q) - r;
            if d < best {
                best = d;
                nearest = q;
            }
        }
    }
    if best <= 0.0 {
        return (0.0, Vec2::zero());
    }
    let g = (p - nearest).normalized().unwrap_or_else(Vec2::zero);
    (best, g)
}

/// Lanes with their centerlines prepared as polylines, plus topology lookups.
#[derive(Debug, Clone)]
pub struct RoadMap {
    lanes: Vec<LaneSegment>,
    lines: Vec<Polyline<f64>>,
    index: BTreeMap<String, usize>,
}

impl RoadMap {
    pub fn new(lanes: &[LaneSegment]) -> Result<Self, geom::PolylineError> {
        let lines = lanes
            .iter()
            .map(|l| Polyline::new(l.centerline.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let index = lanes
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i))
            .collect();
        Ok(Self {
            lanes: lanes.to_vec(),
            lines,
            index,
        })
    }

    pub fn lanes(&self) -> &[LaneSegment] {
        &self.lanes
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn lane(&self, i: usize) -> &LaneSegment {
        &self.lanes[i]
    }

    pub fn line(&self, i: usize) -> &Polyline<f64> {
        &self.lines[i]
    }

    pub fn sdf(&self, p: Point) -> f64 {
        road_sdf(p, &self.lanes)
    }

    /// Lane whose centerline is nearest to `p` among lanes roughly aligned with `heading`
    /// (within 90 degrees); falls back to the nearest lane of any direction.
    pub fn locate(&self, p: Point, heading: f64) -> Option<(usize, Projection<f64>)> {
        let mut aligned: Option<(usize, Projection<f64>)> = None;
        let mut any: Option<(usize, Projection<f64>)> = None;
        for (i, line) in self.lines.iter().enumerate() {
            let proj = line.project(p);
            let tangent = line.tangent_at(proj.s);
            if any.is_none_or(|(_, b)| proj.distance < b.distance) {
                any = Some((i, proj));
            }
            if tangent.dot(Vec2::from_angle(heading)) > 0.0
                && aligned.is_none_or(|(_, b)| proj.distance < b.distance)
            {
                aligned = Some((i, proj));
            }
        }
        aligned.or(any)
    }

    /// Every lane sequence starting at `start` that follows successor links up to
    /// `depth` hops, stopping early at lanes without successors. Cycles are cut.
    pub fn routes_from(&self, start: usize, depth: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![vec![start]];
        while let Some(route) = stack.pop() {
            let last = *route.last().expect("non-empty");
            let next: Vec<usize> = self.lanes[last]
                .successors
                .iter()
                .filter_map(|id| self.index_of(id))
                .filter(|i| !route.contains(i))
                .collect();
            if route.len() > depth || next.is_empty() {
                out.push(route);
                continue;
            }
            // reversed so routes pop in successor order
            for n in next.into_iter().rev() {
                let mut r = route.clone();
                r.push(n);
                stack.push(r);
            }
        }
        out
    }

    /// Concatenated centerline of `route` starting at arc length `start_s` on its first lane.
    pub fn route_polyline(&self, route: &[usize], start_s: f64) -> Polyline<f64> {
        let first = &self.lines[route[0]];
        let mut pts: Vec<Point> = vec![first.point_at(start_s)];
        let s = first.arc_lengths();
        for (i, p) in first.points().iter().enumerate() {
            if s[i] > start_s {
                pts.push(*p);
            }
        }
        for &li in &route[1..] {
            for p in self.lines[li].points() {
                push_distinct(&mut pts, *p);
            }
        }
        if pts.len() < 2 {
            // starting at the very end of a dead-end lane
            let t = first.tangent_at(first.length());
            pts.push(pts[0] + t);
        }
        dedup_points(pts)
    }
}

fn push_distinct(pts: &mut Vec<Point>, p: Point) {
    if pts.last().is_none_or(|q| q.dist(p) > 1e-9) {
        pts.push(p);
    }
}

fn dedup_points(pts: Vec<Point>) -> Polyline<f64> {
    let mut out: Vec<Point> = Vec::with_capacity(pts.len());
    for p in pts {
        push_distinct(&mut out, p);
    }
    Polyline::new(out).expect("route has distinct points")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn lane(id: &str, pts: &[(f64, f64)], width: f64) -> LaneSegment {
        LaneSegment {
            id: id.into(),
            centerline: pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
            width,
            successors: vec![],
            predecessors: vec![],
            kind: LaneKind::Drive,
        }
    }

    fn full_log(dt: f64, steps: usize, y: f64, speed: f64) -> Vec<StateSample> {
        (0..=steps)
            .map(|i| StateSample {
                t: i as f64 * dt,
                x: speed * i as f64 * dt,
                y,
                heading: 0.0,
                speed,
            })
            .collect()
    }

    fn scenario() -> Scenario {
        let path =
            ReferencePath::from_points(vec![Vec2::new(0.0, 0.0), Vec2::new(50.0, 0.0)]).unwrap();
        Scenario {
            schema: SCHEMA_VERSION,
            id: "s".into(),
            lanes: vec![lane("a", &[(0.0, 0.0), (50.0, 0.0)], 4.0)],
            agents: vec![AgentLog {
                id: "v1".into(),
                kind: AgentKind::Vehicle,
                footprint: Footprint::default(),
                states: full_log(0.1, 80, 4.0, 2.0),
            }],
            ego: EgoSpec {
                initial: EgoState {
                    x: 0.0,
                    y: 0.0,
                    heading: 0.0,
                    speed: 5.0,
                },
                reference_path: path,
                d_desired: 40.0,
                footprint: Footprint::default(),
                log: vec![],
            },
            occluders: vec![],
            dt: 0.1,
            horizon: 8.0,
            metadata: BTreeMap::new(),
            phantoms: vec![],
        }
    }

    #[test]
    fn well_formed_scenario_validates() {
        assert_eq!(validate(&scenario()), vec![]);
    }

    #[test]
    fn decreasing_timestamps_flagged() {
        let mut sc = scenario();
        sc.agents[0].states.swap(3, 4);
        let v = validate(&sc);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].entity, "agent v1");
    }

    #[test]
    fn missing_successor_flagged() {
        let mut sc = scenario();
        sc.lanes[0].successors.push("nope".into());
        let v = validate(&sc);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].entity, "lane a");
    }

    #[test]
    fn sdf_examples() {
        let lanes = [lane("a", &[(0.0, 0.0), (20.0, 0.0)], 4.0)];
        assert_eq!(road_sdf(Vec2::new(7.0, 0.0), &lanes), 0.0);
        assert!((road_sdf(Vec2::new(10.0, 3.0), &lanes) - 1.0).abs() < 1e-12);
        let (d, g) = road_sdf_grad(Vec2::new(10.0, -5.0), &lanes);
        assert!((d - 3.0).abs() < 1e-12 && (g.y + 1.0).abs() < 1e-12);
    }

    #[test]
    fn route_enumeration_follows_successors() {
        let mut a = lane("a", &[(0.0, 0.0), (10.0, 0.0)], 4.0);
        a.successors = vec!["b".into(), "c".into()];
        let b = lane("b", &[(10.0, 0.0), (20.0, 0.0)], 4.0);
        let mut c = lane("c", &[(10.0, 0.0), (20.0, 10.0)], 4.0);
        c.successors = vec!["d".into()];
        let d = lane("d", &[(20.0, 10.0), (20.0, 30.0)], 4.0);
        let map = RoadMap::new(&[a, b, c, d]).unwrap();
        assert_eq!(map.routes_from(0, 2), vec![vec![0, 1], vec![0, 2, 3]]);
        assert_eq!(map.routes_from(0, 0), vec![vec![0]]);
        let line = map.route_polyline(&[0, 2, 3], 5.0);
        assert_eq!(line.points()[0], Vec2::new(5.0, 0.0));
        assert_eq!(*line.points().last().unwrap(), Vec2::new(20.0, 30.0));
    }
}
