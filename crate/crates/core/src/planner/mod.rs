//! Speed planning along the fixed ego reference path.
//!
//! The decision variables are the speeds `v_0..v_{T-1}` (with `v_0` pinned to
//! the ego's current speed); positions follow `s_{i+1} = s_i + v_i dt`. The
//! cost is
//!
//! ```text
//! w1 sum (v_{i+1} - v_i)^2 + w2 sum (s_i - d)^2 + w3 sum R(s_i) v_i^2 + w4 sum exp(-d_t)
//! ```
//!
//! and is minimised by sequential convexification: positions, risk values and
//! obstacle clearances are frozen at the current iterate, the clearance term
//! is replaced by its second-order expansion, and the resulting QP is solved
//! by [`qp`]. Every iterate is repaired to exact feasibility and the best one
//! under the true cost is returned.

pub mod qp;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geom::wrap_angle;
use crate::kinematics::State;
use crate::risk::{AnchorRisk, RiskGrid};
use crate::scene::{RoadMap, Scenario};
use crate::visibility::OccludedSegment;
use crate::{Path, Point, Traj};

use qp::{Qp, QpError, QpSettings};

/// Iteration cap of the true-cost refinement.
const REFINE_ITERS: usize = 300;
/// Sweep cap per step size of the coordinate search.
const PATTERN_SWEEPS: usize = 10;
/// Position-distinct labels kept per lattice speed.
const LATTICE_LABELS: usize = 8;
/// Positions closer than this share a label (m).
const LATTICE_BUCKET: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    RiskAware,
    Noap,
    Srq,
    Opbp,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 4] = [Self::RiskAware, Self::Noap, Self::Srq, Self::Opbp];

    pub fn name(self) -> &'static str {
        match self {
            Self::RiskAware => "risk_aware",
            Self::Noap => "noap",
            Self::Srq => "srq",
            Self::Opbp => "opbp",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!("unknown planner '{s}' (expected risk_aware, noap, srq or opbp)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub v_cap: f64,
    pub a_max: f64,
    /// Penalise only the final position against the goal.
    pub terminal_reach: bool,
    pub max_iter: usize,
    /// Stop when no speed moves more than this between iterations (m/s).
    pub tol: f64,
    /// Weight of a proximal term `sum (v - v_prev)^2` in each subproblem.
    pub prox: f64,
    /// Braking deceleration of the reachability speed limit (m/s^2).
    pub a_brake: f64,
    /// Stand-off kept before a conflict point (m).
    pub srq_margin: f64,
    /// Max distance between the path and an occluded lane for a conflict (m).
    pub conflict_radius: f64,
    /// Lanes crossing the path at less than this angle are not conflicts (deg).
    pub conflict_angle: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.05,
            w3: 50.0,
            w4: 10.0,
            v_cap: 15.0,
            a_max: 3.0,
            terminal_reach: false,
            max_iter: 20,
            tol: 1e-3,
            prox: 0.0,
            a_brake: 3.0,
            srq_margin: 2.0,
            conflict_radius: 3.0,
            conflict_angle: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("no feasible profile: {0}")]
    Infeasible(String),
    #[error("reference path: {0}")]
    Path(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Risk along the path as a function of arc length and time.
pub trait RiskLookup {
    fn risk(&self, s: f64, t: f64) -> f64;
}

impl RiskLookup for AnchorRisk {
    fn risk(&self, s: f64, _t: f64) -> f64 {
        self.smoothed(s)
    }
}

impl<F: Fn(f64, f64) -> f64> RiskLookup for F {
    fn risk(&self, s: f64, t: f64) -> f64 {
        self(s, t)
    }
}

/// Direct lookup in the time-binned grid at the path point.
pub struct TimedGridRisk<'a> {
    pub grid: &'a RiskGrid,
    pub path: &'a Path,
}

impl RiskLookup for TimedGridRisk<'_> {
    fn risk(&self, s: f64, t: f64) -> f64 {
        self.grid.at_time(self.path.point_at(s), t)
    }
}

/// Moving disc the ego must keep clear of.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub id: String,
    pub radius: f64,
    /// Position at every step; the last one is held past the end.
    pub positions: Vec<Point>,
}

impl Obstacle {
    pub fn from_traj(traj: &Traj, radius: f64) -> Self {
        Self {
            id: traj.agent_id.clone(),
            radius,
            positions: traj.positions().collect(),
        }
    }

    fn at(&self, t: usize) -> Point {
        self.positions[t.min(self.positions.len() - 1)]
    }
}

/// Reachability speed cap `sqrt(2 a (d_clear - margin))` in front of conflict points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimitField {
    /// Arc lengths of the conflict points, ascending.
    pub conflicts: Vec<f64>,
    pub a_brake: f64,
    pub margin: f64,
    pub v_cap: f64,
}

impl SpeedLimitField {
    pub fn v_limit(&self, s: f64) -> f64 {
        match self.conflicts.iter().find(|c| **c >= s) {
            Some(c) => (2.0 * self.a_brake * (c - s - self.margin).max(0.0))
                .sqrt()
                .min(self.v_cap),
            None => self.v_cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub smooth: f64,
    pub reach: f64,
    pub risk: f64,
    pub collision: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityProfile {
    pub dt: f64,
    /// Speeds `v_0..v_{T-1}`.
    pub v: Vec<f64>,
    /// Positions `s_0..s_T`.
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub kind: PlannerKind,
    pub profile: VelocityProfile,
    pub cost: CostBreakdown,
    pub iterations: usize,
    pub converged: bool,
}

/// One speed-planning instance.
pub struct Problem<'a> {
    pub dt: f64,
    pub steps: usize,
    pub v0: f64,
    pub s0: f64,
    pub d_desired: f64,
    pub path: &'a Path,
    pub ego_radius: f64,
    pub obstacles: Vec<Obstacle>,
    pub risk: Option<&'a dyn RiskLookup>,
    pub limit: Option<SpeedLimitField>,
    pub cfg: PlannerConfig,
}

pub fn positions(v: &[f64], s0: f64, dt: f64) -> Vec<f64> {
    let mut s = Vec::with_capacity(v.len() + 1);
    s.push(s0);
    for vi in v {
        s.push(s.last().unwrap() + vi * dt);
    }
    s
}

impl Problem<'_> {
    /// Clearance `d_t` (floored at 0) and its derivative in `s` at position `s`, step `t`.
    fn clearance(&self, s: f64, t: usize) -> Option<(f64, f64)> {
        let p = self.path.point_at(s);
        let (raw, o) = self
            .obstacles
            .iter()
            .map(|o| (p.dist(o.at(t)) - self.ego_radius - o.radius, o.at(t)))
            .min_by(|a, b| a.0.total_cmp(&b.0))?;
        let diff = p - o;
        let n = diff.norm();
        let slope = if n > 0.0 {
            diff.dot(self.path.tangent_at(s)) / n
        } else {
            0.0
        };
        Some((raw.max(0.0), slope))
    }

    fn reach_range(&self) -> std::ops::RangeInclusive<usize> {
        if self.cfg.terminal_reach {
            self.steps..=self.steps
        } else {
            1..=self.steps
        }
    }

    pub fn cost(&self, v: &[f64]) -> CostBreakdown {
        let s = positions(v, self.s0, self.dt);
        let smooth: f64 = v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        let reach: f64 = self
            .reach_range()
            .map(|i| (s[i] - self.d_desired).powi(2))
            .sum();
        let risk = match self.risk {
            Some(r) => (0..v.len())
                .map(|i| r.risk(s[i], i as f64 * self.dt) * v[i] * v[i])
                .sum(),
            None => 0.0,
        };
        let collision: f64 = (1..=v.len())
            .filter_map(|t| self.clearance(s[t], t))
            .map(|(d, _)| (-d).exp())
            .sum();
        let c = &self.cfg;
        CostBreakdown {
            smooth,
            reach,
            risk,
            collision,
            total: c.w1 * smooth + c.w2 * reach + c.w3 * risk + c.w4 * collision,
        }
    }

    /// Largest speed at `s` from which braking at `a_max` keeps every later
    /// step under the speed limit.
    pub fn brake_limit(&self, s: f64) -> f64 {
        let Some(limit) = &self.limit else {
            return self.cfg.v_cap;
        };
        let ok = |v0: f64| {
            let (mut s, mut v) = (s, v0);
            loop {
                if v > limit.v_limit(s) {
                    return false;
                }
                if v <= 0.0 {
                    return true;
                }
                s += v * self.dt;
                v = (v - self.cfg.a_max * self.dt).max(0.0);
            }
        };
        if ok(self.cfg.v_cap) {
            return self.cfg.v_cap;
        }
        let (mut lo, mut hi) = (0.0, self.cfg.v_cap);
        if !ok(lo) {
            return 0.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Closest feasible profile reachable by a forward clamping pass.
    pub fn repair(&self, v: &[f64]) -> Result<Vec<f64>, PlanError> {
        let c = &self.cfg;
        if !(self.v0 >= 0.0 && self.v0 <= c.v_cap + 1e-12) {
            return Err(PlanError::Infeasible(format!(
                "initial speed {} outside [0, {}]",
                self.v0, c.v_cap
            )));
        }
        if self.v0 > self.brake_limit(self.s0) {
            return Err(PlanError::Infeasible(format!(
                "initial speed {:.3} cannot brake in time for the speed limit",
                self.v0
            )));
        }
        let step = c.a_max * self.dt;
        let mut out = Vec::with_capacity(self.steps);
        out.push(self.v0);
        let mut s = self.s0;
        for i in 1..self.steps {
            let prev = out[i - 1];
            s += prev * self.dt;
            let hi = c.v_cap.min(prev + step).min(self.brake_limit(s));
            let lo = (prev - step).max(0.0).min(hi);
            out.push(v.get(i).copied().unwrap_or(prev).clamp(lo, hi));
        }
        Ok(out)
    }

    /// Convex subproblem around `vbar` over `x = v_1..v_{T-1}`.
    fn subproblem(&self, vbar: &[f64]) -> Qp {
        let t_steps = self.steps;
        let n = t_steps - 1;
        let c = &self.cfg;
        let dt = self.dt;
        let sbar = positions(vbar, self.s0, dt);
        let mut p = DMatrix::<f64>::zeros(n, n);
        let mut q = DVector::<f64>::zeros(n);
        // w * (row . x + off)^2 over the listed (index, coefficient) entries
        let mut add_sq = |row: &[(usize, f64)], off: f64, w: f64| {
            for &(i, a) in row {
                q[i] += 2.0 * w * off * a;
                for &(j, b) in row {
                    p[(i, j)] += 2.0 * w * a * b;
                }
            }
        };
        let s_row = |i: usize| -> (Vec<(usize, f64)>, f64) {
            // s_i = s0 + dt v0 + dt (x_0 + ... + x_{i-2})
            (
                (0..i.saturating_sub(1)).map(|k| (k, dt)).collect(),
                self.s0 + dt * self.v0,
            )
        };

        add_sq(&[(0, 1.0)], -self.v0, c.w1);
        for j in 0..n.saturating_sub(1) {
            add_sq(&[(j + 1, 1.0), (j, -1.0)], 0.0, c.w1);
        }
        for i in self.reach_range() {
            let (row, off) = s_row(i);
            add_sq(&row, off - self.d_desired, c.w2);
        }
        if let Some(r) = self.risk {
            for i in 1..t_steps {
                let ri = r.risk(sbar[i], i as f64 * dt).max(0.0);
                add_sq(&[(i - 1, 1.0)], 0.0, c.w3 * ri);
            }
        }
        let mut lin = vec![0.0; n];
        for t in 1..=t_steps {
            let Some((d, slope)) = self.clearance(sbar[t], t) else {
                continue;
            };
            let e0 = (-d).exp();
            let (row, off) = s_row(t);
            add_sq(&row, off - sbar[t], c.w4 * 0.5 * e0 * slope * slope);
            for (k, a) in row {
                lin[k] -= c.w4 * e0 * slope * a;
            }
        }
        if c.prox > 0.0 {
            for j in 0..n {
                add_sq(&[(j, 1.0)], -vbar[j + 1], c.prox);
            }
        }
        for j in 0..n {
            q[j] += lin[j];
        }

        let m = n + n.saturating_sub(1);
        let mut a = DMatrix::<f64>::zeros(m, n);
        let mut l = DVector::<f64>::zeros(m);
        let mut u = DVector::<f64>::zeros(m);
        let step = c.a_max * dt;
        for j in 0..n {
            a[(j, j)] = 1.0;
            let cap = c.v_cap.min(self.brake_limit(sbar[j + 1]));
            l[j] = 0.0;
            u[j] = cap;
            if j == 0 {
                l[j] = (self.v0 - step).max(0.0);
                u[j] = cap.min(self.v0 + step).max(l[j]);
            }
        }
        for j in 0..n.saturating_sub(1) {
            a[(n + j, j + 1)] = 1.0;
            a[(n + j, j)] = -1.0;
            l[n + j] = -step;
            u[n + j] = step;
        }
        Qp { p, q, a, l, u }
    }

    /// Gradient of the true cost with respect to every speed (entry 0 included).
    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let c = &self.cfg;
        let dt = self.dt;
        let n = v.len();
        let s = positions(v, self.s0, dt);
        let mut gv = vec![0.0; n];
        let mut gs = vec![0.0; n + 1];
        for i in 1..n {
            let d = 2.0 * c.w1 * (v[i] - v[i - 1]);
            gv[i] += d;
            gv[i - 1] -= d;
        }
        for i in self.reach_range() {
            gs[i] += 2.0 * c.w2 * (s[i] - self.d_desired);
        }
        if let Some(r) = self.risk {
            let h = 1e-4;
            for i in 0..n {
                let t = i as f64 * dt;
                gv[i] += 2.0 * c.w3 * r.risk(s[i], t) * v[i];
                let slope = (r.risk(s[i] + h, t) - r.risk(s[i] - h, t)) / (2.0 * h);
                gs[i] += c.w3 * slope * v[i] * v[i];
            }
        }
        for t in 1..=n {
            if let Some((d, slope)) = self.clearance(s[t], t) {
                if d > 0.0 {
                    gs[t] -= c.w4 * (-d).exp() * slope;
                }
            }
        }
        // s_i depends on v_j for every j < i
        let mut tail = 0.0;
        for j in (0..n).rev() {
            tail += gs[j + 1];
            gv[j] += dt * tail;
        }
        gv
    }

    /// Projected gradient descent on the true cost, with `repair` as the projection.
    fn refine(&self, v: Vec<f64>) -> Result<(CostBreakdown, Vec<f64>), PlanError> {
        let mut v = self.repair(&v)?;
        let mut cost = self.cost(&v);
        let mut step = 1.0;
        for _ in 0..REFINE_ITERS {
            let g = self.gradient(&v);
            let gnorm = g[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
            if gnorm < 1e-10 {
                break;
            }
            let mut improved = false;
            let mut trial_step = step;
            for _ in 0..40 {
                let trial: Vec<f64> = v.iter().zip(&g).map(|(a, b)| a - trial_step * b).collect();
                let trial = self.repair(&trial)?;
                let tc = self.cost(&trial);
                if tc.total < cost.total - 1e-12 * (1.0 + cost.total.abs()) {
                    v = trial;
                    cost = tc;
                    improved = true;
                    break;
                }
                trial_step *= 0.5;
            }
            if !improved {
                break;
            }
            step = (trial_step * 2.0).min(1e3);
        }
        Ok((cost, v))
    }

    /// Single-coordinate moves on shrinking steps; catches descent directions
    /// the projected gradient misses at speed-limit kinks.
    fn pattern_search(
        &self,
        mut cost: CostBreakdown,
        mut v: Vec<f64>,
    ) -> Result<(CostBreakdown, Vec<f64>), PlanError> {
        for h in [1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001] {
            for _ in 0..PATTERN_SWEEPS {
                let mut improved = false;
                for i in 1..v.len() {
                    for dir in [h, -h] {
                        let mut trial = v.clone();
                        trial[i] += dir;
                        let trial = self.repair(&trial)?;
                        let tc = self.cost(&trial);
                        if tc.total < cost.total - 1e-12 * (1.0 + cost.total.abs()) {
                            v = trial;
                            cost = tc;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
        }
        self.refine(v.clone())
            .map(|r| if r.0.total < cost.total { r } else { (cost, v) })
    }

    /// Dynamic programme over a speed lattice spaced at most 0.5 m/s, keeping
    /// a few position-distinct labels per lattice speed; a global-ish start
    /// for the local methods.
    fn lattice_start(&self) -> Option<Vec<f64>> {
        let c = &self.cfg;
        let dt = self.dt;
        let reach = self.reach_range();
        let stage = |i: usize, v: f64, s: f64| {
            let mut cost = 0.0;
            if reach.contains(&i) {
                cost += c.w2 * (s - self.d_desired).powi(2);
            }
            if let Some(r) = self.risk {
                cost += c.w3 * r.risk(s, i as f64 * dt) * v * v;
            }
            if let Some((d, _)) = self.clearance(s, i) {
                cost += c.w4 * (-d).exp();
            }
            cost
        };
        let step = c.a_max * dt;
        let h = (0.5f64).min(step).max(1e-3);
        let lo = -((self.v0 / h + 1e-9).floor() as i64);
        let hi = ((c.v_cap - self.v0) / h + 1e-9).floor() as i64;
        let reach_k = (step / h + 1e-9).floor() as i64;
        let speed = |k: i64| self.v0 + k as f64 * h;
        struct Label {
            s: f64,
            cost: f64,
            path: Vec<i64>,
        }
        let mut layer: Vec<(i64, Vec<Label>)> = vec![(
            0,
            vec![Label {
                s: self.s0,
                cost: 0.0,
                path: vec![0],
            }],
        )];
        for i in 1..self.steps {
            let mut next: std::collections::BTreeMap<i64, Vec<Label>> = Default::default();
            for (k, labels) in &layer {
                let v = speed(*k);
                for lab in labels {
                    let s = lab.s + v * dt;
                    let cap = if self.limit.is_some() {
                        self.brake_limit(s)
                    } else {
                        c.v_cap
                    };
                    for nk in (k - reach_k).max(lo)..=(k + reach_k).min(hi) {
                        let nv = speed(nk);
                        if nv > cap + 1e-9 {
                            continue;
                        }
                        let cost = lab.cost + c.w1 * (nv - v).powi(2) + stage(i, nv, s);
                        let slot = next.entry(nk).or_default();
                        let bucket = (s / LATTICE_BUCKET).floor();
                        match slot
                            .iter_mut()
                            .find(|l| (l.s / LATTICE_BUCKET).floor() == bucket)
                        {
                            Some(l) if l.cost <= cost => {}
                            Some(l) => {
                                l.s = s;
                                l.cost = cost;
                                l.path = lab.path.clone();
                                l.path.push(nk);
                            }
                            None => {
                                let mut path = lab.path.clone();
                                path.push(nk);
                                slot.push(Label { s, cost, path });
                            }
                        }
                    }
                }
            }
            layer = next
                .into_iter()
                .map(|(k, mut labels)| {
                    labels.sort_by(|a, b| a.cost.total_cmp(&b.cost));
                    labels.truncate(LATTICE_LABELS);
                    (k, labels)
                })
                .collect();
        }
        layer
            .into_iter()
            .flat_map(|(k, labels)| {
                let v = speed(k);
                labels.into_iter().map(move |l| {
                    let s_end = l.s + v * dt;
                    let total = l.cost + stage(self.steps, 0.0, s_end);
                    (total, l.path)
                })
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, path)| path.into_iter().map(speed).collect())
    }

    /// Candidate starting profiles besides `init`.
    fn starts(&self, init: Option<&[f64]>) -> Vec<Vec<f64>> {
        let step = self.cfg.a_max * self.dt;
        let ramp = |dir: f64| {
            (0..self.steps)
                .map(|i| (self.v0 + dir * step * i as f64).clamp(0.0, self.cfg.v_cap))
                .collect::<Vec<_>>()
        };
        let cruise =
            ((self.d_desired - self.s0) / (self.steps as f64 * self.dt)).clamp(0.0, self.cfg.v_cap);
        let mut out = Vec::new();
        if let Some(v) = init {
            out.push(v.to_vec());
        }
        out.push(vec![self.v0; self.steps]);
        out.push(ramp(1.0));
        out.push(ramp(-1.0));
        out.push(
            (0..self.steps)
                .map(|i| if i == 0 { self.v0 } else { cruise })
                .collect(),
        );
        out.extend(self.lattice_start());
        out
    }

    /// Sequential convexification followed by true-cost refinement, run from
    /// `init` and a few generic starting profiles; the cheapest result wins.
    ///
    /// The search runs with the weights divided by `w1` (or by their sum when
    /// `w1` is zero), so scaling all weights together leaves the result alone;
    /// the returned cost is in the caller's units.
    pub fn solve(&self, kind: PlannerKind, init: Option<&[f64]>) -> Result<Plan, PlanError> {
        let c = &self.cfg;
        let unit = if c.w1 > 0.0 {
            c.w1
        } else {
            c.w1 + c.w2 + c.w3 + c.w4
        };
        if unit == 1.0 || !(unit > 0.0 && unit.is_finite()) {
            return self.solve_unit(kind, init);
        }
        let unit_problem = Problem {
            dt: self.dt,
            steps: self.steps,
            v0: self.v0,
            s0: self.s0,
            d_desired: self.d_desired,
            path: self.path,
            ego_radius: self.ego_radius,
            obstacles: self.obstacles.clone(),
            risk: self.risk,
            limit: self.limit.clone(),
            cfg: PlannerConfig {
                w1: c.w1 / unit,
                w2: c.w2 / unit,
                w3: c.w3 / unit,
                w4: c.w4 / unit,
                ..*c
            },
        };
        let mut plan = unit_problem.solve_unit(kind, init)?;
        plan.cost = self.cost(&plan.profile.v);
        Ok(plan)
    }

    fn solve_unit(&self, kind: PlannerKind, init: Option<&[f64]>) -> Result<Plan, PlanError> {
        assert!(self.steps >= 2, "need at least two steps");
        let mut seed: Option<(CostBreakdown, Vec<f64>)> = None;
        for start in self.starts(init) {
            let r = self.refine(start)?;
            if seed.as_ref().is_none_or(|b| r.0.total < b.0.total) {
                seed = Some(r);
            }
        }
        let seed = seed.expect("at least one start");
        let (cost, v, iterations, converged) = self.convexify(&seed.1)?;
        let mut best = Some((cost, v.clone(), iterations, converged));
        for (cost, v) in [self.refine(v)?, seed] {
            let b = best.as_mut().expect("set above");
            if cost.total < b.0.total {
                b.0 = cost;
                b.1 = v;
            }
        }
        // restarts from slowed copies of the winner escape speed-limit kinks
        let winner = best.as_ref().expect("at least one start").1.clone();
        for scale in [0.9, 0.75, 0.5] {
            let start: Vec<f64> = winner.iter().map(|x| x * scale).collect();
            let (cost, v) = self.refine(start)?;
            let b = best.as_mut().expect("at least one start");
            if cost.total < b.0.total {
                b.0 = cost;
                b.1 = v;
            }
        }
        let (cost, v, iterations, converged) = best.expect("at least one start");
        let (cost, v) = self.pattern_search(cost, v)?;
        Ok(Plan {
            kind,
            profile: VelocityProfile {
                dt: self.dt,
                s: positions(&v, self.s0, self.dt),
                v,
            },
            cost,
            iterations,
            converged,
        })
    }

    fn convexify(
        &self,
        start: &[f64],
    ) -> Result<(CostBreakdown, Vec<f64>, usize, bool), PlanError> {
        let mut vbar = self.repair(start)?;
        let mut best = (self.cost(&vbar), vbar.clone());
        let mut iterations = 0;
        let mut converged = false;
        let settings = QpSettings::default();
        for _ in 0..self.cfg.max_iter {
            iterations += 1;
            let qp = self.subproblem(&vbar);
            let x0 = DVector::from_column_slice(&vbar[1..]);
            let sol = qp.solve(Some(&x0), &settings)?;
            let mut cand = vec![self.v0];
            cand.extend(sol.x.iter());
            let cand = self.repair(&cand)?;
            let cost = self.cost(&cand);
            if cost.total < best.0.total {
                best = (cost, cand.clone());
            }
            let delta = cand
                .iter()
                .zip(&vbar)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            vbar = cand;
            if delta < self.cfg.tol {
                converged = true;
                break;
            }
        }
        Ok((best.0, best.1, iterations, converged))
    }
}

/// Scenario-level inputs shared by all planner variants.
pub struct PlanContext {
    pub path: Path,
    pub dt: f64,
    pub steps: usize,
    pub v0: f64,
    pub s0: f64,
    pub d_desired: f64,
    pub ego_radius: f64,
    /// Logged (non-phantom) agents.
    pub visible: Vec<Obstacle>,
}

impl PlanContext {
    pub fn new(sc: &Scenario) -> Result<Self, PlanError> {
        let path = sc
            .ego
            .reference_path
            .polyline()
            .map_err(|e| PlanError::Path(e.to_string()))?;
        let s0 = path.project(sc.ego.initial.position()).s;
        let visible = sc
            .agents
            .iter()
            .filter(|a| !a.is_phantom())
            .map(|a| Obstacle {
                id: a.id.clone(),
                radius: a.footprint.radius(),
                positions: a.states.iter().map(|s| s.position()).collect(),
            })
            .filter(|o| !o.positions.is_empty())
            .collect();
        Ok(Self {
            path,
            dt: sc.dt,
            steps: sc.steps(),
            v0: sc.ego.initial.speed,
            s0,
            d_desired: sc.ego.d_desired,
            ego_radius: sc.ego.footprint.radius(),
            visible,
        })
    }

    pub fn problem<'a>(&'a self, cfg: &PlannerConfig) -> Problem<'a> {
        Problem {
            dt: self.dt,
            steps: self.steps,
            v0: self.v0,
            s0: self.s0,
            d_desired: self.d_desired,
            path: &self.path,
            ego_radius: self.ego_radius,
            obstacles: self.visible.clone(),
            risk: None,
            limit: None,
            cfg: *cfg,
        }
    }

    /// Ego trajectory driving `profile` along the path.
    pub fn trajectory(&self, profile: &VelocityProfile) -> Traj {
        profile_trajectory(&self.path, profile)
    }
}

pub fn profile_trajectory(path: &Path, profile: &VelocityProfile) -> Traj {
    let states = profile
        .s
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = path.point_at(*s);
            let v = profile
                .v
                .get(i)
                .or(profile.v.last())
                .copied()
                .unwrap_or(0.0);
            State::new(p.x, p.y, path.heading_at(*s), v)
        })
        .collect();
    Traj {
        agent_id: "ego".into(),
        mode_id: 0,
        dt: profile.dt,
        states,
    }
}

pub fn plan_noap(ctx: &PlanContext, cfg: &PlannerConfig) -> Result<Plan, PlanError> {
    let cfg = PlannerConfig { w3: 0.0, ..*cfg };
    ctx.problem(&cfg).solve(PlannerKind::Noap, None)
}

pub fn plan_risk_aware(
    ctx: &PlanContext,
    risk: &dyn RiskLookup,
    cfg: &PlannerConfig,
) -> Result<Plan, PlanError> {
    let init = plan_noap(ctx, cfg)?;
    let mut p = ctx.problem(cfg);
    p.risk = Some(risk);
    p.solve(PlannerKind::RiskAware, Some(&init.profile.v))
}

pub fn plan_srq(
    ctx: &PlanContext,
    limit: SpeedLimitField,
    cfg: &PlannerConfig,
) -> Result<Plan, PlanError> {
    let cfg = PlannerConfig { w3: 0.0, ..*cfg };
    let init = plan_noap(ctx, &cfg)?;
    let mut p = ctx.problem(&cfg);
    p.limit = Some(limit);
    p.solve(PlannerKind::Srq, Some(&init.profile.v))
}

/// NOAP plus a collision cost against one predicted trajectory per phantom.
pub fn plan_opbp(
    ctx: &PlanContext,
    phantom_trajs: &[Traj],
    cfg: &PlannerConfig,
) -> Result<Plan, PlanError> {
    let cfg = PlannerConfig { w3: 0.0, ..*cfg };
    let init = plan_noap(ctx, &cfg)?;
    let mut p = ctx.problem(&cfg);
    let radius = crate::scene::Footprint::default().radius();
    p.obstacles
        .extend(phantom_trajs.iter().map(|t| Obstacle::from_traj(t, radius)));
    p.solve(PlannerKind::Opbp, Some(&init.profile.v))
}

/// The mode of `modes` that comes closest to `ego`.
pub fn most_adversarial<'a>(modes: &'a [Traj], ego: &Traj) -> Option<&'a Traj> {
    modes.iter().min_by(|a, b| {
        let da = crate::guidance::closest_approach(a, std::slice::from_ref(ego));
        let db = crate::guidance::closest_approach(b, std::slice::from_ref(ego));
        da.total_cmp(&db)
    })
}

/// Arc lengths along the ego path where the forward extension of an occluded
/// lane stretch crosses it.
pub fn conflict_points(
    ctx: &PlanContext,
    map: &RoadMap,
    segments: &[OccludedSegment],
    cfg: &PlannerConfig,
) -> Vec<f64> {
    let samples = ctx.path.sample(0.5);
    let min_angle = cfg.conflict_angle.to_radians();
    let mut out: Vec<f64> = Vec::new();
    for seg in segments {
        let Some(lane) = map.index_of(&seg.lane_id) else {
            continue;
        };
        for route in map.routes_from(lane, crate::trajgen::ROUTE_DEPTH) {
            let ext = map.route_polyline(&route, seg.s_start);
            let hit = samples.iter().find(|(s, p)| {
                if *s < ctx.s0 {
                    return false;
                }
                let proj = ext.project(*p);
                if proj.distance >= cfg.conflict_radius {
                    return false;
                }
                let a = wrap_angle(ctx.path.heading_at(*s) - ext.heading_at(proj.s)).abs();
                a.min(std::f64::consts::PI - a) > min_angle
            });
            if let Some((s, _)) = hit {
                out.push(*s);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

pub fn srq_limit(conflicts: Vec<f64>, cfg: &PlannerConfig) -> SpeedLimitField {
    SpeedLimitField {
        conflicts,
        a_brake: cfg.a_brake,
        margin: cfg.srq_margin,
        v_cap: cfg.v_cap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Polyline, Vec2};

    fn line() -> Path {
        Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(300.0, 0.0)]).unwrap()
    }

    fn problem(path: &Path, cfg: PlannerConfig) -> Problem<'_> {
        Problem {
            dt: 0.1,
            steps: 80,
            v0: 10.0,
            s0: 0.0,
            d_desired: 80.0,
            path,
            ego_radius: 1.75,
            obstacles: vec![],
            risk: None,
            limit: None,
            cfg,
        }
    }

    #[test]
    fn constant_profile_costs() {
        let path = line();
        let cfg = PlannerConfig {
            w1: 1.0,
            w2: 0.0,
            w3: 1.0,
            w4: 0.0,
            ..Default::default()
        };
        let half = |_: f64, _: f64| 0.5;
        let mut p = problem(&path, cfg);
        let v = vec![10.0; 80];
        assert_eq!(p.cost(&v).total, 0.0);
        p.risk = Some(&half);
        assert_eq!(p.cost(&v).risk, 4000.0);
    }

    #[test]
    fn speed_limit_formula() {
        let f = SpeedLimitField {
            conflicts: vec![20.0],
            a_brake: 4.0,
            margin: 2.0,
            v_cap: 15.0,
        };
        assert!((f.v_limit(0.0) - 12.0).abs() < 1e-12);
        assert_eq!(f.v_limit(19.0), 0.0);
        assert_eq!(f.v_limit(25.0), 15.0);
    }

    #[test]
    fn srq_respects_limit_exactly() {
        let path = line();
        let cfg = PlannerConfig::default();
        let mut p = problem(&path, PlannerConfig { w3: 0.0, ..cfg });
        p.limit = Some(SpeedLimitField {
            conflicts: vec![40.0],
            a_brake: 3.0,
            margin: 2.0,
            v_cap: 15.0,
        });
        let plan = p.solve(PlannerKind::Srq, None).unwrap();
        let lim = p.limit.as_ref().unwrap();
        for (v, s) in plan.profile.v.iter().zip(&plan.profile.s) {
            assert!(*v <= lim.v_limit(*s), "v {v} at s {s}");
        }
    }

    #[test]
    fn noap_accelerates_then_settles_on_goal() {
        let path = line();
        let cfg = PlannerConfig {
            w3: 0.0,
            terminal_reach: true,
            ..Default::default()
        };
        let p = problem(&path, cfg);
        let plan = p.solve(PlannerKind::Noap, None).unwrap();
        let v = &plan.profile.v;
        for w in v.windows(2) {
            assert!((w[1] - w[0]).abs() <= 0.3 + 1e-12);
        }
        let end = *plan.profile.s.last().unwrap();
        assert!((end - 80.0).abs() < 0.05 * 80.0, "final s {end}");
    }
}
