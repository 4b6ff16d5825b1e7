//! Adversarial guidance for phantom trajectories: a smooth closeness +
//! lane-adherence objective over the rolled-out controls, its gradient, and the
//! guided reverse diffusion loop that ascends it at every denoising step.

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    normal_controls, reverse_step, Denoiser, DiffusionSchedule, NominalPriorDenoiser,
};
use crate::geom::Vec2;
use crate::kinematics::{
    rollout, rollout_states, rollout_vjp, Control, ControlLimits, ControlSequence, State,
};
use crate::rng::Rng;
use crate::scene::{road_sdf, road_sdf_grad, LaneSegment, RoadMap};
use crate::trajgen::{agent_routes, nominal_controls, NominalConfig};
use crate::{AgentState, Controls, Point, Traj};

pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    /// Weight of the closeness term.
    pub lambda1: f64,
    /// Weight of the lane-adherence term.
    pub lambda2: f64,
    /// Step-size scale of the guidance update.
    pub lambda: f64,
    /// Soft-min / soft-max temperature (m).
    pub tau: f64,
    pub gradient: GradientMode,
    /// Denoising steps K.
    pub steps: usize,
    /// Std of the Gaussian prior around the nominal controls.
    pub prior_std_accel: f64,
    pub prior_std_yaw: f64,
    pub limits: ControlLimits<f64>,
    /// Scale each guidance step by the prior variance of its channel, so
    /// acceleration and yaw rate move in proportion to their spread.
    pub precondition: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda: 1000.0,
            tau: 1.0,
            gradient: GradientMode::Analytic,
            steps: crate::diffusion::DEFAULT_STEPS,
            prior_std_accel: 0.3,
            prior_std_yaw: 0.02,
            limits: ControlLimits::default(),
            precondition: true,
        }
    }
}

impl GuidanceConfig {
    pub fn prior_std(&self) -> Control<f64> {
        Control::new(self.prior_std_accel, self.prior_std_yaw)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GuidanceError {
    #[error("non-finite guidance gradient at denoising step {step}, control {index} (objective {objective})")]
    NonFiniteGradient {
        step: usize,
        index: usize,
        objective: f64,
    },
}

/// Objective value with its two unweighted terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    /// Negated soft-min distance to the other agents.
    pub inter: f64,
    /// Negated soft-max off-road distance.
    pub road: f64,
}

/// Everything the objective needs besides the controls.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceContext<'a> {
    pub init: AgentState,
    pub others: &'a [Traj],
    pub lanes: &'a [LaneSegment],
}

/// `tau * log(sum(exp(x / tau)))` and the softmax weights of `x`.
fn soft_max(x: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| ((v - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    (m + tau * z.ln(), e.into_iter().map(|v| v / z).collect())
}

struct Terms {
    objective: Objective,
    /// d(weighted total)/d(position) per state.
    pos_grad: Vec<Point>,
}

fn terms(
    states: &[AgentState],
    ctx: &GuidanceContext,
    cfg: &GuidanceConfig,
    want_grad: bool,
) -> Terms {
    let tau = cfg.tau;
    let mut pos_grad = if want_grad {
        vec![Vec2::zero(); states.len()]
    } else {
        vec![]
    };

    // closeness: tau * log sum exp(-d / tau) over (t, other)
    let mut dists = Vec::new();
    let mut index = Vec::new();
    for o in ctx.others {
        for (t, (p, q)) in states.iter().zip(&o.states).enumerate() {
            let diff = p.position() - q.position();
            dists.push(-diff.norm());
            index.push((t, diff));
        }
    }
    let inter = if dists.is_empty() {
        0.0
    } else {
        let (v, w) = soft_max(&dists, tau);
        if want_grad {
            for ((t, diff), wi) in index.iter().zip(&w) {
                let d = diff.norm();
                if d > 0.0 {
                    pos_grad[*t] -= *diff * (cfg.lambda1 * wi / d);
                }
            }
        }
        v
    };

    // lane adherence: -tau * log sum exp(sdf / tau)
    let road = if ctx.lanes.is_empty() || states.is_empty() {
        0.0
    } else {
        let sd: Vec<(f64, Point)> = states
            .iter()
            .map(|s| {
                if want_grad {
                    road_sdf_grad(s.position(), ctx.lanes)
                } else {
                    (road_sdf(s.position(), ctx.lanes), Vec2::zero())
                }
            })
            .collect();
        let vals: Vec<f64> = sd.iter().map(|(v, _)| *v).collect();
        let (v, w) = soft_max(&vals, tau);
        if want_grad {
            for (t, ((_, g), wi)) in sd.iter().zip(&w).enumerate() {
                pos_grad[t] -= *g * (cfg.lambda2 * wi);
            }
        }
        -v
    };

    Terms {
        objective: Objective {
            total: cfg.lambda1 * inter + cfg.lambda2 * road,
            inter,
            road,
        },
        pos_grad,
    }
}

pub fn guidance_objective(u: &Controls, ctx: &GuidanceContext, cfg: &GuidanceConfig) -> Objective {
    let states = rollout_states(ctx.init, &u.controls, u.dt);
    terms(&states, ctx, cfg, false).objective
}

/// Gradient of the weighted objective with respect to every control coordinate.
pub fn guidance_gradient(u: &Controls, ctx: &GuidanceContext, cfg: &GuidanceConfig) -> Controls {
    match cfg.gradient {
        GradientMode::Analytic => {
            let states = rollout_states(ctx.init, &u.controls, u.dt);
            let t = terms(&states, ctx, cfg, true);
            let grads: Vec<AgentState> = t
                .pos_grad
                .iter()
                .map(|g| State::new(g.x, g.y, 0.0, 0.0))
                .collect();
            ControlSequence::new(rollout_vjp(&states, &u.controls, u.dt, &grads), u.dt)
        }
        GradientMode::FiniteDifference => {
            let flat = u.to_flat();
            let mut g = vec![0.0; flat.len()];
            let mut x = flat.clone();
            for i in 0..flat.len() {
                x[i] = flat[i] + FD_STEP;
                let fp = guidance_objective(&ControlSequence::from_flat(&x, u.dt), ctx, cfg).total;
                x[i] = flat[i] - FD_STEP;
                let fm = guidance_objective(&ControlSequence::from_flat(&x, u.dt), ctx, cfg).total;
                x[i] = flat[i];
                g[i] = (fp - fm) / (2.0 * FD_STEP);
            }
            ControlSequence::from_flat(&g, u.dt)
        }
    }
}

/// Result of one guided generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Guided {
    pub controls: Controls,
    pub trajectory: Traj,
}

/// Guided reverse diffusion. Each step: denoise, ascend the objective at the
/// denoised controls (the gradient is applied to the noisy controls directly),
/// denoise again and take the ancestral step. The final controls are clamped
/// to the limits before the rollout.
pub fn guided_reverse(
    ctx: &GuidanceContext,
    denoiser: &impl Denoiser<f64>,
    sched: &DiffusionSchedule<f64>,
    steps: usize,
    dt: f64,
    cfg: &GuidanceConfig,
    rng: &mut Rng,
) -> Result<Guided, GuidanceError> {
    let mut u = normal_controls(steps, dt, rng);
    for k in (1..=sched.steps()).rev() {
        let clean = denoiser.denoise(&u, k, sched);
        let g = guidance_gradient(&clean, ctx, cfg);
        if let Some(index) = g.to_flat().iter().position(|v| !v.is_finite()) {
            return Err(GuidanceError::NonFiniteGradient {
                step: k,
                index,
                objective: guidance_objective(&clean, ctx, cfg).total,
            });
        }
        let scale = cfg.lambda * sched.sigma(k);
        let (sa, sw) = if cfg.precondition {
            (cfg.prior_std_accel.powi(2), cfg.prior_std_yaw.powi(2))
        } else {
            (1.0, 1.0)
        };
        u = ControlSequence::new(
            u.controls
                .iter()
                .zip(&g.controls)
                .map(|(x, gi)| {
                    Control::new(
                        x.accel + scale * sa * gi.accel,
                        x.yaw_rate + scale * sw * gi.yaw_rate,
                    )
                })
                .collect(),
            dt,
        );
        let clean = denoiser.denoise(&u, k, sched);
        u = reverse_step(&u, &clean, k, sched, rng);
    }
    let controls = u.clamped(&cfg.limits);
    let trajectory = rollout(ctx.init, &controls);
    Ok(Guided {
        controls,
        trajectory,
    })
}

/// Hard minimum distance between `traj` and any of `others` over shared steps.
pub fn closest_approach(traj: &Traj, others: &[Traj]) -> f64 {
    others
        .iter()
        .flat_map(|o| {
            traj.states
                .iter()
                .zip(&o.states)
                .map(|(a, b)| a.position().dist(b.position()))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Fraction of trajectory points inside the road region.
pub fn onroad_fraction(traj: &Traj, map: &RoadMap) -> f64 {
    if traj.states.is_empty() {
        return 1.0;
    }
    let on = traj
        .states
        .iter()
        .filter(|s| map.sdf(s.position()) == 0.0)
        .count();
    on as f64 / traj.states.len() as f64
}

/// Nominal lane-following controls for a phantom along the lane branch whose
/// rollout comes closest to `others`. Falls back to constant velocity off the
/// lane graph.
pub fn adversarial_nominal(
    map: &RoadMap,
    init: AgentState,
    others: &[Traj],
    steps: usize,
    dt: f64,
    cfg: &NominalConfig,
) -> Controls {
    let mut best: Option<(f64, Controls)> = None;
    for route in agent_routes(map, init) {
        let Ok(c) = nominal_controls(init, &route, init.speed, steps, dt, cfg) else {
            continue;
        };
        let d = closest_approach(&rollout(init, &c), others);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, c));
        }
    }
    best.map(|(_, c)| c)
        .unwrap_or_else(|| ControlSequence::zeros(steps, dt))
}

/// Prior denoiser built around [`adversarial_nominal`].
pub fn phantom_denoiser(nominal: Controls, cfg: &GuidanceConfig) -> NominalPriorDenoiser<f64> {
    NominalPriorDenoiser::new(nominal, cfg.prior_std())
}

/// One row of the generation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub scenario: String,
    pub agent_id: String,
    pub seed: u64,
    pub steps: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda: f64,
    /// Closest approach of the nominal rollout.
    pub closest_before: f64,
    /// Closest approach of the guided rollout.
    pub closest_after: f64,
    pub onroad_fraction: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::LaneKind;

    fn straight(y: f64, n: usize, v: f64) -> Traj {
        Traj {
            agent_id: "o".into(),
            mode_id: 0,
            dt: 0.1,
            states: (0..=n)
                .map(|i| State::new(v * 0.1 * i as f64, y, 0.0, v))
                .collect(),
        }
    }

    #[test]
    fn zero_weights_give_zero_objective_and_gradient() {
        let others = [straight(3.0, 20, 4.0)];
        let ctx = GuidanceContext {
            init: State::new(0.0, 0.0, 0.2, 5.0),
            others: &others,
            lanes: &[],
        };
        let cfg = GuidanceConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..Default::default()
        };
        let u = ControlSequence::new(vec![Control::new(0.4, 0.1); 20], 0.1);
        assert_eq!(guidance_objective(&u, &ctx, &cfg).total, 0.0);
        assert!(guidance_gradient(&u, &ctx, &cfg)
            .to_flat()
            .iter()
            .all(|g| *g == 0.0));
    }

    #[test]
    fn parallel_offset_tends_to_negative_gap() {
        let others = [straight(5.0, 30, 4.0)];
        let ctx = GuidanceContext {
            init: State::new(0.0, 0.0, 0.0, 4.0),
            others: &others,
            lanes: &[],
        };
        let cfg = GuidanceConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            tau: 1e-3,
            ..Default::default()
        };
        let f = guidance_objective(&ControlSequence::zeros(30, 0.1), &ctx, &cfg);
        // tau * ln(31) leftover from the equal-distance sum
        assert!((f.total + 5.0).abs() < 1e-3 * 31f64.ln() + 1e-12);
    }

    #[test]
    fn on_road_phantom_has_small_road_term() {
        let lanes = [LaneSegment {
            id: "l".into(),
            centerline: vec![Vec2::new(-10.0, 0.0), Vec2::new(100.0, 0.0)],
            width: 4.0,
            successors: vec![],
            predecessors: vec![],
            kind: LaneKind::Drive,
        }];
        let ctx = GuidanceContext {
            init: State::new(0.0, 0.0, 0.0, 5.0),
            others: &[],
            lanes: &lanes,
        };
        let cfg = GuidanceConfig::default();
        let f = guidance_objective(&ControlSequence::zeros(80, 0.1), &ctx, &cfg);
        assert!(f.road <= 0.0 && f.road >= -cfg.tau * 81f64.ln() - 1e-12);
    }
}
