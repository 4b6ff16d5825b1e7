//! Phantom agents: hypothetical vehicles placed inside occluded lane stretches.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::geom::Polyline;
use crate::rng::{derive_seed, stream};
use crate::scene::{AgentKind, AgentLog, Footprint, Provenance, Scenario, StateSample};
use crate::visibility::{FieldOfView, OccludedSegment};

/// Rejection-sampling attempts per phantom before it is given up.
const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub speed_min: f64,
    pub speed_max: f64,
    pub max_per_segment: usize,
    pub spacing_min: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            speed_min: 3.0,
            speed_max: 15.0,
            max_per_segment: 2,
            spacing_min: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhantomError {
    #[error("speed range [{0}, {1}] is empty or negative")]
    BadSpeedRange(f64, f64),
    #[error("spacing {0} m is shorter than a vehicle")]
    SpacingTooSmall(f64),
    #[error("max_per_segment must be at least 1")]
    NoPhantoms,
    #[error("segment on unknown lane {0}")]
    UnknownLane(String),
}

impl PhantomConfig {
    pub fn check(&self) -> Result<(), PhantomError> {
        if !(self.speed_min >= 0.0 && self.speed_min < self.speed_max) {
            return Err(PhantomError::BadSpeedRange(self.speed_min, self.speed_max));
        }
        if !(self.spacing_min >= Footprint::default().length()) {
            return Err(PhantomError::SpacingTooSmall(self.spacing_min));
        }
        if self.max_per_segment == 0 {
            return Err(PhantomError::NoPhantoms);
        }
        Ok(())
    }
}

/// Seed of the substream used for segment `index`.
pub fn segment_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, &format!("phantom/{index}"))
}

/// Scenario extended with phantom initial states. Each segment draws from its
/// own substream. When `fov` is given, candidate positions it can see are
/// rejected.
pub fn sample_phantoms(
    sc: &Scenario,
    segments: &[OccludedSegment],
    fov: Option<&FieldOfView>,
    cfg: &PhantomConfig,
) -> Result<Scenario, PhantomError> {
    cfg.check()?;
    let mut out = sc.clone();
    let mut placed: Vec<(String, f64)> = Vec::new();
    let mut next_id = out.agents.iter().filter(|a| a.is_phantom()).count();
    for (index, seg) in segments.iter().enumerate() {
        let lane = sc
            .lanes
            .iter()
            .find(|l| l.id == seg.lane_id)
            .ok_or_else(|| PhantomError::UnknownLane(seg.lane_id.clone()))?;
        let Ok(line) = Polyline::new(lane.centerline.clone()) else {
            continue;
        };
        let seed = segment_seed(cfg.seed, index);
        let mut rng = stream(seed, index as u64);
        let len = seg.length();
        let clear = |s: f64, placed: &[(String, f64)]| {
            placed
                .iter()
                .filter(|(l, _)| *l == seg.lane_id)
                .all(|(_, q)| (s - q).abs() >= cfg.spacing_min)
        };

        let mut positions = Vec::new();
        if len < cfg.spacing_min {
            let mid = 0.5 * (seg.s_start + seg.s_end);
            if clear(mid, &placed) {
                positions.push(mid);
                placed.push((seg.lane_id.clone(), mid));
            }
        } else {
            let cap = ((len / cfg.spacing_min).floor() as usize).clamp(1, cfg.max_per_segment);
            let count = rng.random_range(1..=cap);
            for _ in 0..count {
                for _ in 0..MAX_ATTEMPTS {
                    let s = rng.random_range(seg.s_start..seg.s_end);
                    if s <= seg.s_start || !clear(s, &placed) {
                        continue;
                    }
                    if fov.is_some_and(|f| f.contains(line.point_at(s))) {
                        continue;
                    }
                    positions.push(s);
                    placed.push((seg.lane_id.clone(), s));
                    break;
                }
            }
        }

        for s in positions {
            let speed = rng.random_range(cfg.speed_min..cfg.speed_max);
            let p = line.point_at(s);
            let id = format!("phantom_{next_id}");
            next_id += 1;
            out.agents.push(AgentLog {
                id: id.clone(),
                kind: AgentKind::Phantom,
                footprint: Footprint::default(),
                states: vec![StateSample {
                    t: 0.0,
                    x: p.x,
                    y: p.y,
                    heading: line.heading_at(s),
                    speed,
                }],
            });
            out.phantoms.push(Provenance {
                agent_id: id,
                segment_lane: seg.lane_id.clone(),
                s,
                seed,
            });
        }
    }
    if !out.phantoms.is_empty() {
        out.metadata
            .insert("phantom_seed".into(), cfg.seed.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::scene::*;
    use std::collections::BTreeMap;

    pub(crate) fn scenario() -> Scenario {
        Scenario {
            schema: SCHEMA_VERSION,
            id: "ph".into(),
            lanes: vec![LaneSegment {
                id: "a".into(),
                centerline: vec![Vec2::new(0.0, 20.0), Vec2::new(100.0, 20.0)],
                width: 4.0,
                successors: vec![],
                predecessors: vec![],
                kind: LaneKind::Drive,
            }],
            agents: vec![],
            ego: EgoSpec {
                initial: EgoState {
                    x: 0.0,
                    y: 0.0,
                    heading: 0.0,
                    speed: 5.0,
                },
                reference_path: ReferencePath::from_points(vec![
                    Vec2::new(0.0, 0.0),
                    Vec2::new(50.0, 0.0),
                ])
                .unwrap(),
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

    fn seg(a: f64, b: f64) -> OccludedSegment {
        OccludedSegment {
            lane_id: "a".into(),
            s_start: a,
            s_end: b,
        }
    }

    #[test]
    fn no_segments_no_phantoms() {
        let sc = scenario();
        let out = sample_phantoms(&sc, &[], None, &PhantomConfig::default()).unwrap();
        assert_eq!(out, sc);
        assert!(out.phantoms.is_empty());
    }

    #[test]
    fn single_phantom_respects_bounds() {
        let cfg = PhantomConfig {
            max_per_segment: 1,
            seed: 9,
            ..Default::default()
        };
        let out = sample_phantoms(&scenario(), &[seg(20.0, 50.0)], None, &cfg).unwrap();
        assert_eq!(out.agents.len(), 1);
        let st = out.agents[0].states[0];
        let s = out.phantoms[0].s;
        assert!(s > 20.0 && s < 50.0);
        assert!((st.x - s).abs() < 1e-12);
        assert!(st.speed >= 3.0 && st.speed < 15.0);
        assert!(st.heading.abs() < 1e-9);
    }

    #[test]
    fn short_segment_gets_midpoint() {
        let out = sample_phantoms(
            &scenario(),
            &[seg(30.0, 36.0)],
            None,
            &PhantomConfig::default(),
        )
        .unwrap();
        assert_eq!(out.phantoms.len(), 1);
        assert_eq!(out.phantoms[0].s, 33.0);
    }

    #[test]
    fn spacing_holds() {
        for seed in 0..50 {
            let cfg = PhantomConfig {
                max_per_segment: 4,
                seed,
                ..Default::default()
            };
            let out = sample_phantoms(&scenario(), &[seg(0.0, 45.0), seg(47.0, 60.0)], None, &cfg)
                .unwrap();
            let s: Vec<f64> = out.phantoms.iter().map(|p| p.s).collect();
            for i in 0..s.len() {
                for j in 0..i {
                    assert!((s[i] - s[j]).abs() >= 10.0);
                }
            }
        }
    }
}
