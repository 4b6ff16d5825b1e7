//! Unified risk grid: trajectory-density (flow) and near-collision layers,
//! fused, Gaussian-smoothed and normalised, plus risk queries along the ego path.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::trajgen::TrajectorySet;
use crate::{Path, Point, Traj};

pub const DEFAULT_ANCHORS: usize = 20;
/// Width of one time bin of the optional time-resolved stack (s).
pub const BIN_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub resolution: f64,
    /// Extra border around the scene bounds (m).
    pub margin: f64,
    /// Spatial decay (1/m).
    pub lambda: f64,
    /// Near-collision distance threshold (m).
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Blur std in cells.
    pub sigma_g: f64,
    /// Keep a per-second stack of layers next to the collapsed one.
    pub time_bins: bool,
    /// Per-step weight factor `discount^t`; 1 weights every step equally.
    pub discount: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            resolution: 0.5,
            margin: 10.0,
            lambda: 2.0,
            delta: 3.0,
            alpha: 0.4,
            beta: 0.6,
            sigma_g: 2.0,
            time_bins: false,
            discount: 1.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RiskError {
    #[error("path of {length:.2} m is too short for {anchors} anchors at {resolution} m cells")]
    PathTooShort {
        length: f64,
        anchors: usize,
        resolution: f64,
    },
    #[error("grid file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cell layout. Cell `(col, row)` spans `origin + [col, col+1) x [row, row+1)`
/// cells and is stored at `row * n1 + col`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point,
    pub resolution: f64,
    /// Columns (along x).
    pub n1: usize,
    /// Rows (along y).
    pub n2: usize,
}

impl GridSpec {
    /// Smallest grid covering `lo..hi` plus `margin` on every side.
    pub fn covering(lo: Point, hi: Point, margin: f64, resolution: f64) -> Self {
        let origin = Vec2::new(lo.x - margin, lo.y - margin);
        let n1 = (((hi.x - lo.x + 2.0 * margin) / resolution).ceil() as usize).max(1);
        let n2 = (((hi.y - lo.y + 2.0 * margin) / resolution).ceil() as usize).max(1);
        Self {
            origin,
            resolution,
            n1,
            n2,
        }
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx >= 0.0 && fy >= 0.0 && (fx as usize) < self.n1 && (fy as usize) < self.n2 {
            Some((fx as usize, fy as usize))
        } else {
            None
        }
    }

    pub fn center(&self, col: usize, row: usize) -> Point {
        Vec2::new(
            self.origin.x + (col as f64 + 0.5) * self.resolution,
            self.origin.y + (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.n1 + col
    }
}

/// Dense row-major scalar field plus the number of points that fell outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulated {
    pub layer: Vec<f64>,
    pub dropped: usize,
}

/// Add `weight * exp(-lambda * D)` to the cell containing each point, `D`
/// being the distance to that cell's centre.
pub fn accumulate(
    spec: &GridSpec,
    lambda: f64,
    points: impl IntoIterator<Item = (Point, f64)>,
) -> Accumulated {
    let mut layer = vec![0.0; spec.len()];
    let mut dropped = 0;
    for (p, w) in points {
        match spec.cell_of(p) {
            Some((c, r)) => {
                layer[spec.index(c, r)] += w * (-lambda * p.dist(spec.center(c, r))).exp()
            }
            None => dropped += 1,
        }
    }
    Accumulated { layer, dropped }
}

fn step_weight(discount: f64, t: usize) -> f64 {
    if discount == 1.0 {
        1.0
    } else {
        discount.powi(t as i32)
    }
}

/// Every state of every mode of every agent in `set` (already restricted to
/// active agents) in deterministic order, tagged with its step.
fn flow_points(set: &TrajectorySet) -> impl Iterator<Item = (usize, Point)> + '_ {
    set.values().flatten().flat_map(|traj| {
        traj.states
            .iter()
            .enumerate()
            .map(|(t, s)| (t, s.position()))
    })
}

pub fn flow_risk(set: &TrajectorySet, spec: &GridSpec, cfg: &RiskConfig) -> Accumulated {
    accumulate(
        spec,
        cfg.lambda,
        flow_points(set).map(|(t, p)| (p, step_weight(cfg.discount, t))),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub t: f64,
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub agent_id: String,
    pub mode: usize,
}

/// Every (step, agent, mode) where the agent's centre is closer than `delta`
/// to the ego's; the event sits at the agent's position.
pub fn collision_events(ego: &Traj, set: &TrajectorySet, delta: f64) -> Vec<CollisionEvent> {
    let mut out = Vec::new();
    for trajs in set.values() {
        for traj in trajs {
            for (t, (a, e)) in traj.states.iter().zip(&ego.states).enumerate() {
                if a.position().dist(e.position()) < delta {
                    out.push(CollisionEvent {
                        t: t as f64 * ego.dt,
                        step: t,
                        x: a.x,
                        y: a.y,
                        agent_id: traj.agent_id.clone(),
                        mode: traj.mode_id,
                    });
                }
            }
        }
    }
    out
}

pub fn collision_risk(events: &[CollisionEvent], spec: &GridSpec, cfg: &RiskConfig) -> Accumulated {
    accumulate(
        spec,
        cfg.lambda,
        events
            .iter()
            .map(|e| (Vec2::new(e.x, e.y), step_weight(cfg.discount, e.step))),
    )
}

/// Normalised Gaussian kernel truncated at 3 sigma; `[1]` for sigma 0.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = k.iter().sum();
    k.into_iter().map(|v| v / z).collect()
}

/// Separable blur with zero padding.
pub fn gaussian_blur(layer: &[f64], n1: usize, n2: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return layer.to_vec();
    }
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; layer.len()];
    for row in 0..n2 {
        let src = &layer[row * n1..(row + 1) * n1];
        for col in 0..n1 {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let c = col as isize + j as isize - r;
                if c >= 0 && (c as usize) < n1 {
                    acc += kv * src[c as usize];
                }
            }
            tmp[row * n1 + col] = acc;
        }
    }
    let mut out = vec![0.0; layer.len()];
    for row in 0..n2 {
        for col in 0..n1 {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let rr = row as isize + j as isize - r;
                if rr >= 0 && (rr as usize) < n2 {
                    acc += kv * tmp[rr as usize * n1 + col];
                }
            }
            out[row * n1 + col] = acc;
        }
    }
    out
}

/// `alpha * flow + beta * collision`, blurred, divided by its maximum.
pub fn fuse_and_finish(
    flow: &[f64],
    collision: &[f64],
    spec: &GridSpec,
    alpha: f64,
    beta: f64,
    sigma_g: f64,
) -> Vec<f64> {
    assert_eq!(flow.len(), collision.len(), "layers differ in size");
    let fused: Vec<f64> = flow
        .iter()
        .zip(collision)
        .map(|(f, c)| alpha * f + beta * c)
        .collect();
    let mut out = gaussian_blur(&fused, spec.n1, spec.n2, sigma_g);
    normalize(&mut out);
    out
}

fn normalize(layer: &mut [f64]) {
    let m = layer.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        for v in layer.iter_mut() {
            *v = (*v / m).clamp(0.0, 1.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskGrid {
    pub spec: GridSpec,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma_g: f64,
    pub flow: Vec<f64>,
    pub collision: Vec<f64>,
    pub total: Vec<f64>,
    /// Per-second total layers (normalised by their common maximum); empty unless enabled.
    pub bins: Vec<Vec<f64>>,
    pub dropped_points: usize,
}

impl RiskGrid {
    pub fn at(&self, p: Point) -> f64 {
        bilinear(&self.spec, &self.total, p)
    }

    /// Lookup in the time bin containing `t`; the collapsed layer when no bins exist.
    pub fn at_time(&self, p: Point, t: f64) -> f64 {
        if self.bins.is_empty() {
            return self.at(p);
        }
        let b = ((t / BIN_WIDTH).floor().max(0.0) as usize).min(self.bins.len() - 1);
        bilinear(&self.spec, &self.bins[b], p)
    }
}

pub fn risk_at(grid: &RiskGrid, p: Point) -> f64 {
    grid.at(p)
}

/// Bilinear interpolation between cell centres; 0 outside the grid, edge
/// values held between the outermost centres and the border.
pub fn bilinear(spec: &GridSpec, layer: &[f64], p: Point) -> f64 {
    if spec.cell_of(p).is_none() {
        return 0.0;
    }
    let fx = (p.x - spec.origin.x) / spec.resolution - 0.5;
    let fy = (p.y - spec.origin.y) / spec.resolution - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let clamp_c = |i: f64| (i.max(0.0) as usize).min(spec.n1 - 1);
    let clamp_r = |i: f64| (i.max(0.0) as usize).min(spec.n2 - 1);
    let (c0, c1) = (clamp_c(x0), clamp_c(x0 + 1.0));
    let (r0, r1) = (clamp_r(y0), clamp_r(y0 + 1.0));
    let v = |c, r| layer[spec.index(c, r)];
    let bottom = v(c0, r0) * (1.0 - tx) + v(c1, r0) * tx;
    let top = v(c0, r1) * (1.0 - tx) + v(c1, r1) * tx;
    bottom * (1.0 - ty) + top * ty
}

/// Full grid for one scene. `set` holds the active agents' modes, `ego` the
/// trajectory the near-collision layer is measured against.
pub fn build_risk_grid(
    set: &TrajectorySet,
    ego: &Traj,
    spec: GridSpec,
    cfg: &RiskConfig,
) -> RiskGrid {
    let flow = flow_risk(set, &spec, cfg);
    let events = collision_events(ego, set, cfg.delta);
    let coll = collision_risk(&events, &spec, cfg);
    let total = fuse_and_finish(
        &flow.layer,
        &coll.layer,
        &spec,
        cfg.alpha,
        cfg.beta,
        cfg.sigma_g,
    );
    let bins = if cfg.time_bins {
        time_bins(set, &events, ego.dt, &spec, cfg)
    } else {
        vec![]
    };
    RiskGrid {
        spec,
        lambda: cfg.lambda,
        alpha: cfg.alpha,
        beta: cfg.beta,
        sigma_g: cfg.sigma_g,
        flow: flow.layer,
        collision: coll.layer,
        total,
        bins,
        dropped_points: flow.dropped + coll.dropped,
    }
}

fn time_bins(
    set: &TrajectorySet,
    events: &[CollisionEvent],
    dt: f64,
    spec: &GridSpec,
    cfg: &RiskConfig,
) -> Vec<Vec<f64>> {
    let horizon_steps = set
        .values()
        .flatten()
        .map(|t| t.states.len())
        .max()
        .unwrap_or(1);
    let n = (((horizon_steps.saturating_sub(1)) as f64 * dt / BIN_WIDTH).ceil() as usize).max(1);
    let bin_of = |step: usize| (((step as f64 * dt) / BIN_WIDTH).floor() as usize).min(n - 1);
    let mut out: Vec<Vec<f64>> = (0..n)
        .map(|b| {
            let flow = accumulate(
                spec,
                cfg.lambda,
                flow_points(set)
                    .filter(|(t, _)| bin_of(*t) == b)
                    .map(|(t, p)| (p, step_weight(cfg.discount, t))),
            );
            let coll = accumulate(
                spec,
                cfg.lambda,
                events
                    .iter()
                    .filter(|e| bin_of(e.step) == b)
                    .map(|e| (Vec2::new(e.x, e.y), step_weight(cfg.discount, e.step))),
            );
            let fused: Vec<f64> = flow
                .layer
                .iter()
                .zip(&coll.layer)
                .map(|(f, c)| cfg.alpha * f + cfg.beta * c)
                .collect();
            gaussian_blur(&fused, spec.n1, spec.n2, cfg.sigma_g)
        })
        .collect();
    let m = out.iter().flatten().copied().fold(0.0, f64::max);
    if m > 0.0 {
        for v in out.iter_mut().flatten() {
            *v = (*v / m).clamp(0.0, 1.0);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub s: f64,
    pub point: Point,
    /// Time the ego reaches the anchor under the supplied profile, if any.
    pub time: Option<f64>,
}

/// Risk sampled at evenly spaced anchors along the ego path, with a Gaussian
/// smoothing over arc length for lookups in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRisk {
    pub anchors: Vec<Anchor>,
    pub risk: Vec<f64>,
    /// Smoothing std over arc length (m).
    pub bandwidth: f64,
}

impl AnchorRisk {
    /// Smoothed risk at arc length `s`.
    pub fn smoothed(&self, s: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, r) in self.anchors.iter().zip(&self.risk) {
            let z = (s - a.s) / self.bandwidth;
            let w = (-0.5 * z * z).exp();
            num += w * r;
            den += w;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

/// `positions` optionally gives the ego arc length at each step of size `dt`
/// to attach arrival times to the anchors.
pub fn anchor_risks(
    grid: &RiskGrid,
    path: &Path,
    n_anchors: usize,
    positions: Option<(&[f64], f64)>,
) -> Result<AnchorRisk, RiskError> {
    let length = path.length();
    if n_anchors < 2 || length <= n_anchors as f64 * grid.spec.resolution {
        return Err(RiskError::PathTooShort {
            length,
            anchors: n_anchors,
            resolution: grid.spec.resolution,
        });
    }
    let anchors: Vec<Anchor> = (0..n_anchors)
        .map(|a| {
            let s = a as f64 * length / (n_anchors - 1) as f64;
            Anchor {
                s,
                point: path.point_at(s),
                time: positions.and_then(|(pos, dt)| arrival_time(pos, dt, s)),
            }
        })
        .collect();
    let risk = anchors.iter().map(|a| grid.at(a.point)).collect();
    Ok(AnchorRisk {
        anchors,
        risk,
        bandwidth: length / n_anchors as f64,
    })
}

fn arrival_time(pos: &[f64], dt: f64, s: f64) -> Option<f64> {
    if pos.first().is_some_and(|p0| s <= *p0) {
        return Some(0.0);
    }
    pos.windows(2).enumerate().find_map(|(i, w)| {
        (s <= w[1] && w[1] > w[0]).then(|| (i as f64 + (s - w[0]) / (w[1] - w[0])) * dt)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    origin: Point,
    resolution: f64,
    n1: usize,
    n2: usize,
    lambda: f64,
    alpha: f64,
    beta: f64,
    sigma_g: f64,
    dropped_points: usize,
    layers: Vec<String>,
}

const FORMAT: &str = "occrisk-grid-1";

/// One JSON header line, then each layer as little-endian `f32`, row-major.
pub fn write_grid(grid: &RiskGrid, w: &mut impl Write) -> Result<(), RiskError> {
    let mut layers = vec!["flow".to_string(), "collision".into(), "total".into()];
    layers.extend((0..grid.bins.len()).map(|b| format!("bin{b}")));
    let header = Header {
        format: FORMAT.into(),
        origin: grid.spec.origin,
        resolution: grid.spec.resolution,
        n1: grid.spec.n1,
        n2: grid.spec.n2,
        lambda: grid.lambda,
        alpha: grid.alpha,
        beta: grid.beta,
        sigma_g: grid.sigma_g,
        dropped_points: grid.dropped_points,
        layers,
    };
    let mut line =
        crate::io::to_json_bytes(&header).map_err(|e| RiskError::Format(e.to_string()))?;
    let mut payload = Vec::with_capacity(4 * grid.spec.len() * (3 + grid.bins.len()));
    for layer in [&grid.flow, &grid.collision, &grid.total]
        .into_iter()
        .chain(&grid.bins)
    {
        for v in layer {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    line.extend(payload);
    w.write_all(&line)?;
    Ok(())
}

pub fn grid_bytes(grid: &RiskGrid) -> Vec<u8> {
    let mut buf = Vec::new();
    write_grid(grid, &mut buf).expect("writing to memory");
    buf
}

pub fn read_grid(r: &mut impl Read) -> Result<RiskGrid, RiskError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| RiskError::Format("missing header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| RiskError::Format(e.to_string()))?;
    if header.format != FORMAT {
        return Err(RiskError::Format(format!(
            "unknown format {}",
            header.format
        )));
    }
    let cells = header.n1 * header.n2;
    let body = &bytes[nl + 1..];
    if body.len() != 4 * cells * header.layers.len() || header.layers.len() < 3 {
        return Err(RiskError::Format(format!(
            "payload holds {} bytes, expected {}",
            body.len(),
            4 * cells * header.layers.len()
        )));
    }
    let mut layers: Vec<Vec<f64>> = body
        .chunks_exact(4 * cells)
        .map(|c| {
            c.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect()
        })
        .collect();
    let bins = layers.split_off(3);
    let total = layers.pop().unwrap();
    let collision = layers.pop().unwrap();
    let flow = layers.pop().unwrap();
    Ok(RiskGrid {
        spec: GridSpec {
            origin: header.origin,
            resolution: header.resolution,
            n1: header.n1,
            n2: header.n2,
        },
        lambda: header.lambda,
        alpha: header.alpha,
        beta: header.beta,
        sigma_g: header.sigma_g,
        flow,
        collision,
        total,
        bins,
        dropped_points: header.dropped_points,
    })
}

/// Copy of `grid` with every layer rounded through `f32`, i.e. what a
/// write/read round trip yields.
pub fn quantized(grid: &RiskGrid) -> RiskGrid {
    let q = |l: &Vec<f64>| l.iter().map(|v| *v as f32 as f64).collect::<Vec<_>>();
    RiskGrid {
        flow: q(&grid.flow),
        collision: q(&grid.collision),
        total: q(&grid.total),
        bins: grid.bins.iter().map(q).collect(),
        ..grid.clone()
    }
}

/// Plain ASCII graymap (P2) of the total layer, top row first.
pub fn pgm(grid: &RiskGrid) -> String {
    let GridSpec { n1, n2, .. } = grid.spec;
    let mut s = format!("P2\n{n1} {n2}\n255\n");
    for row in (0..n2).rev() {
        let line: Vec<String> = (0..n1)
            .map(|col| ((grid.total[grid.spec.index(col, row)] * 255.0).round() as u8).to_string())
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::State;

    fn spec() -> GridSpec {
        GridSpec {
            origin: Vec2::new(0.0, 0.0),
            resolution: 0.5,
            n1: 20,
            n2: 10,
        }
    }

    #[test]
    fn point_at_cell_center_gives_one() {
        let s = spec();
        let acc = accumulate(&s, 2.0, [(s.center(3, 4), 1.0)]);
        assert_eq!(acc.layer[s.index(3, 4)], 1.0);
        assert_eq!(acc.layer.iter().sum::<f64>(), 1.0);
        let acc = accumulate(&s, 2.0, [(Vec2::new(-1.0, 0.0), 1.0)]);
        assert_eq!(acc.dropped, 1);
    }

    #[test]
    fn bilinear_at_centers_and_midpoints() {
        let s = spec();
        let layer: Vec<f64> = (0..s.len())
            .map(|i| (i as f64 * 0.37).sin().abs())
            .collect();
        let g = RiskGrid {
            spec: s,
            lambda: 2.0,
            alpha: 0.4,
            beta: 0.6,
            sigma_g: 0.0,
            flow: layer.clone(),
            collision: layer.clone(),
            total: layer.clone(),
            bins: vec![],
            dropped_points: 0,
        };
        assert_eq!(g.at(s.center(5, 5)), layer[s.index(5, 5)]);
        let mid = s.center(5, 5).lerp(s.center(6, 5), 0.5);
        let want = 0.5 * (layer[s.index(5, 5)] + layer[s.index(6, 5)]);
        assert!((g.at(mid) - want).abs() < 1e-15);
        assert_eq!(g.at(Vec2::new(-0.1, 1.0)), 0.0);
    }

    #[test]
    fn fuse_identity_and_zero() {
        let s = spec();
        let mut flow = vec![0.0; s.len()];
        flow[7] = 2.0;
        flow[30] = 0.5;
        let z = vec![0.0; s.len()];
        let t = fuse_and_finish(&flow, &z, &s, 1.0, 0.0, 0.0);
        assert_eq!(t[7], 1.0);
        assert_eq!(t[30], 0.25);
        assert!(fuse_and_finish(&flow, &z, &s, 0.0, 0.0, 2.0)
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn identical_trajectories_collide_every_step() {
        let ego = Traj {
            agent_id: "ego".into(),
            mode_id: 0,
            dt: 0.1,
            states: (0..11)
                .map(|i| State::new(i as f64, 0.0, 0.0, 10.0))
                .collect(),
        };
        let mut set = TrajectorySet::new();
        set.insert("a".into(), vec![ego.clone().tagged("a", 0)]);
        assert_eq!(collision_events(&ego, &set, 3.0).len(), 11);
    }

    #[test]
    fn grid_file_round_trip() {
        let s = spec();
        let total: Vec<f64> = (0..s.len()).map(|i| i as f64 / s.len() as f64).collect();
        let g = RiskGrid {
            spec: s,
            lambda: 2.0,
            alpha: 0.4,
            beta: 0.6,
            sigma_g: 2.0,
            flow: total.clone(),
            collision: vec![0.0; s.len()],
            total,
            bins: vec![],
            dropped_points: 3,
        };
        let bytes = grid_bytes(&g);
        let back = read_grid(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, quantized(&g));
        assert_eq!(grid_bytes(&back), bytes);
    }
}
