//! Ray-cast field of view from the ego pose and extraction of occluded lane stretches.

use serde::{Deserialize, Serialize};

use crate::geom::{self, Polyline, Vec2};
use crate::scene::Scenario;
use crate::Point;

pub const DEFAULT_RAY_COUNT: usize = 360;
pub const DEFAULT_MAX_RANGE: f64 = 80.0;
pub const MIN_RAY_COUNT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub angle: f64,
    pub distance: f64,
}

/// Fan of rays around `origin`; angles are uniformly spaced over `[-pi, pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldOfView {
    pub origin: Point,
    pub rays: Vec<Ray>,
    pub max_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccludedSegment {
    pub lane_id: String,
    pub s_start: f64,
    pub s_end: f64,
}

impl OccludedSegment {
    pub fn length(&self) -> f64 {
        self.s_end - self.s_start
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VisibilityError {
    #[error("ego position lies inside {0}")]
    EgoInsideObstacle(String),
    #[error("ray count {0} is below the minimum of 8")]
    TooFewRays(usize),
    #[error("max range must be positive")]
    BadRange,
}

/// Every edge that blocks sight at step `t`: occluder polygons plus the boxes of
/// logged (non-phantom) agents.
fn blocking_edges(sc: &Scenario, t: f64) -> Vec<(Point, Point, String)> {
    let mut edges = Vec::new();
    for (i, poly) in sc.occluders.iter().enumerate() {
        for k in 0..poly.len() {
            edges.push((poly[k], poly[(k + 1) % poly.len()], format!("occluder {i}")));
        }
    }
    let step = (t / sc.dt).round().max(0.0) as usize;
    for a in sc.agents.iter().filter(|a| !a.is_phantom()) {
        if let Some(st) = a.state_at(step) {
            let c = geom::obb_corners(
                st.position(),
                st.heading,
                a.footprint.half_length,
                a.footprint.half_width,
            );
            for k in 0..4 {
                edges.push((c[k], c[(k + 1) % 4], format!("agent {}", a.id)));
            }
        }
    }
    edges
}

fn obstacle_polygons(sc: &Scenario, t: f64) -> Vec<(Vec<Point>, String)> {
    let mut out: Vec<(Vec<Point>, String)> = sc
        .occluders
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), format!("occluder {i}")))
        .collect();
    let step = (t / sc.dt).round().max(0.0) as usize;
    for a in sc.agents.iter().filter(|a| !a.is_phantom()) {
        if let Some(st) = a.state_at(step) {
            let c = geom::obb_corners(
                st.position(),
                st.heading,
                a.footprint.half_length,
                a.footprint.half_width,
            );
            out.push((c.to_vec(), format!("agent {}", a.id)));
        }
    }
    out
}

/// Angle of ray `i` out of `n`.
pub fn ray_angle(i: usize, n: usize) -> f64 {
    -std::f64::consts::PI + (i as f64) * std::f64::consts::TAU / n as f64
}

pub fn cast_fov(
    sc: &Scenario,
    origin: Point,
    t: f64,
    ray_count: usize,
    max_range: f64,
) -> Result<FieldOfView, VisibilityError> {
    if ray_count < MIN_RAY_COUNT {
        return Err(VisibilityError::TooFewRays(ray_count));
    }
    if !(max_range > 0.0 && max_range.is_finite()) {
        return Err(VisibilityError::BadRange);
    }
    for (poly, what) in obstacle_polygons(sc, t) {
        if geom::point_in_polygon(origin, &poly) {
            return Err(VisibilityError::EgoInsideObstacle(what));
        }
    }
    let edges = blocking_edges(sc, t);
    let rays = (0..ray_count)
        .map(|i| {
            let angle = ray_angle(i, ray_count);
            let dir = Vec2::from_angle(angle);
            let hit = edges
                .iter()
                .filter_map(|(a, b, _)| geom::ray_segment_intersection(origin, dir, *a, *b))
                .fold(max_range, f64::min);
            Ray {
                angle,
                distance: hit.max(f64::MIN_POSITIVE),
            }
        })
        .collect();
    Ok(FieldOfView {
        origin,
        rays,
        max_range,
    })
}

impl FieldOfView {
    pub fn ray_count(&self) -> usize {
        self.rays.len()
    }

    /// Visible-range limit at `bearing`: the smaller of the two bracketing rays,
    /// so points near a shadow edge count as occluded.
    pub fn limit_at(&self, bearing: f64) -> f64 {
        let n = self.rays.len();
        let step = std::f64::consts::TAU / n as f64;
        let f = (geom::wrap_angle(bearing) + std::f64::consts::PI) / step;
        let i0 = (f.floor() as isize).rem_euclid(n as isize) as usize;
        let i1 = (i0 + 1) % n;
        self.rays[i0].distance.min(self.rays[i1].distance)
    }

    pub fn contains(&self, p: Point) -> bool {
        fov_contains(self, p)
    }
}

pub fn fov_contains(fov: &FieldOfView, p: Point) -> bool {
    let d = p - fov.origin;
    let r = d.norm();
    if r == 0.0 {
        return true;
    }
    if r > fov.max_range {
        return false;
    }
    r <= fov.limit_at(d.angle())
}

/// Maximal runs of centerline samples that are in range but not visible. Runs
/// shorter than `min_length` are dropped. Output is grouped by lane in scenario
/// order and sorted by `s_start` within a lane.
pub fn occluded_segments(
    sc: &Scenario,
    fov: &FieldOfView,
    sample_step: f64,
    min_length: f64,
) -> Vec<OccludedSegment> {
    assert!(sample_step > 0.0, "sample_step must be positive");
    let mut out = Vec::new();
    for lane in &sc.lanes {
        let Ok(line) = Polyline::new(lane.centerline.clone()) else {
            continue;
        };
        let mut run: Option<(f64, f64)> = None;
        let close = |run: &mut Option<(f64, f64)>, out: &mut Vec<OccludedSegment>| {
            if let Some((a, b)) = run.take() {
                if b - a >= min_length && b > a {
                    out.push(OccludedSegment {
                        lane_id: lane.id.clone(),
                        s_start: a,
                        s_end: b,
                    });
                }
            }
        };
        for (s, p) in line.sample(sample_step) {
            let in_range = p.dist(fov.origin) <= fov.max_range;
            if in_range && !fov_contains(fov, p) {
                run = Some(run.map_or((s, s), |(a, _)| (a, s)));
            } else {
                close(&mut run, &mut out);
            }
        }
        close(&mut run, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::*;
    use std::collections::BTreeMap;

    pub(crate) fn bare_scenario(occluders: Vec<Vec<Point>>, lanes: Vec<LaneSegment>) -> Scenario {
        Scenario {
            schema: SCHEMA_VERSION,
            id: "vis".into(),
            lanes,
            agents: vec![],
            ego: EgoSpec {
                initial: EgoState {
                    x: 0.0,
                    y: 0.0,
                    heading: 0.0,
                    speed: 0.0,
                },
                reference_path: ReferencePath::from_points(vec![
                    Vec2::new(0.0, 0.0),
                    Vec2::new(10.0, 0.0),
                ])
                .unwrap(),
                d_desired: 10.0,
                footprint: Footprint::default(),
                log: vec![],
            },
            occluders,
            dt: 0.1,
            horizon: 8.0,
            metadata: BTreeMap::new(),
            phantoms: vec![],
        }
    }

    fn square(cx: f64, cy: f64, h: f64) -> Vec<Point> {
        vec![
            Vec2::new(cx - h, cy - h),
            Vec2::new(cx + h, cy - h),
            Vec2::new(cx + h, cy + h),
            Vec2::new(cx - h, cy + h),
        ]
    }

    #[test]
    fn open_scene_sees_max_range() {
        let sc = bare_scenario(vec![], vec![]);
        let fov = cast_fov(&sc, Vec2::zero(), 0.0, 64, 50.0).unwrap();
        assert!(fov.rays.iter().all(|r| r.distance == 50.0));
        assert!(fov.contains(Vec2::zero()));
        assert!(!fov.contains(Vec2::new(51.0, 0.0)));
    }

    #[test]
    fn wall_ahead_hits_near_face() {
        let sc = bare_scenario(vec![square(10.0, 0.0, 1.0)], vec![]);
        let fov = cast_fov(&sc, Vec2::zero(), 0.0, 360, 80.0).unwrap();
        let forward = fov.rays.iter().find(|r| r.angle.abs() < 1e-12).unwrap();
        assert!((forward.distance - 9.0).abs() < 1e-12);
        assert_eq!(fov.rays[0].distance, 80.0); // angle -pi points backward
    }

    #[test]
    fn ego_inside_wall_is_an_error() {
        let sc = bare_scenario(vec![square(0.0, 0.0, 1.0)], vec![]);
        assert!(matches!(
            cast_fov(&sc, Vec2::zero(), 0.0, 360, 80.0),
            Err(VisibilityError::EgoInsideObstacle(_))
        ));
    }

    #[test]
    fn phantoms_do_not_occlude_but_vehicles_do() {
        let mut sc = bare_scenario(vec![], vec![]);
        let st = StateSample {
            t: 0.0,
            x: 10.0,
            y: 0.0,
            heading: 0.0,
            speed: 0.0,
        };
        sc.agents.push(AgentLog {
            id: "p".into(),
            kind: AgentKind::Phantom,
            footprint: Footprint::default(),
            states: vec![st],
        });
        let fov = cast_fov(&sc, Vec2::zero(), 0.0, 360, 80.0).unwrap();
        assert_eq!(fov.rays[180].distance, 80.0);
        sc.agents[0].kind = AgentKind::Vehicle;
        let fov = cast_fov(&sc, Vec2::zero(), 0.0, 360, 80.0).unwrap();
        assert!((fov.rays[180].distance - 7.6).abs() < 1e-9);
    }

    #[test]
    fn fully_visible_scene_has_no_occluded_segments() {
        let lanes = vec![LaneSegment {
            id: "a".into(),
            centerline: vec![Vec2::new(-30.0, 5.0), Vec2::new(30.0, 5.0)],
            width: 4.0,
            successors: vec![],
            predecessors: vec![],
            kind: LaneKind::Drive,
        }];
        let sc = bare_scenario(vec![], lanes);
        let fov = cast_fov(&sc, Vec2::zero(), 0.0, 360, 80.0).unwrap();
        assert!(occluded_segments(&sc, &fov, 0.5, 4.8).is_empty());
    }
}
