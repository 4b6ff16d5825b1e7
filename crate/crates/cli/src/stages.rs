//! In-memory pipeline stages. The commands in [`crate::commands`] wrap these
//! with file input/output; tests call them directly.

use anyhow::{anyhow, Context as _, Result};

use occrisk::diffusion::DiffusionSchedule;
use occrisk::guidance::{
    adversarial_nominal, closest_approach, guided_reverse, onroad_fraction, phantom_denoiser,
    GenerationRow, GuidanceContext,
};
use occrisk::kinematics::{rollout, ControlSequence};
use occrisk::metrics::{self, EvalRow, GenerationMetrics};
use occrisk::phantom::sample_phantoms;
use occrisk::planner::{
    conflict_points, most_adversarial, plan_noap, plan_opbp, plan_risk_aware, plan_srq, srq_limit,
    Plan, PlanContext, PlanError, PlannerKind, TimedGridRisk,
};
use occrisk::risk::{anchor_risks, build_risk_grid, GridSpec, RiskGrid};
use occrisk::rng::{derive_seed, stream};
use occrisk::scene::{RoadMap, Scenario, StateSample};
use occrisk::trajgen::{
    build_trajectory_set, filter_active, state_of, trajectory_from_log, TrajectorySet,
};
use occrisk::visibility::{cast_fov, occluded_segments, FieldOfView, OccludedSegment};
use occrisk::Traj;

use crate::config::{CollisionEgo, PhantomMotion, RunConfig};

pub fn road_map(sc: &Scenario) -> Result<RoadMap> {
    RoadMap::new(&sc.lanes).map_err(|e| anyhow!("{}: lane centerline: {e}", sc.id))
}

/// Field of view from the ego's initial pose and the occluded lane stretches it leaves.
pub fn occlusion(sc: &Scenario, cfg: &RunConfig) -> Result<(FieldOfView, Vec<OccludedSegment>)> {
    let v = &cfg.visibility;
    let fov = cast_fov(sc, sc.ego.initial.position(), 0.0, v.ray_count, v.max_range)
        .with_context(|| format!("{}: field of view", sc.id))?;
    let segments = occluded_segments(sc, &fov, v.sample_step, v.min_length);
    Ok((fov, segments))
}

fn log_of(traj: &Traj) -> Vec<StateSample> {
    traj.states
        .iter()
        .enumerate()
        .map(|(i, s)| StateSample {
            t: i as f64 * traj.dt,
            x: s.x,
            y: s.y,
            heading: s.heading,
            speed: s.speed,
        })
        .collect()
}

/// The ego's recorded motion, or its occlusion-unaware plan when there is no log.
pub fn ego_trajectory(sc: &Scenario, cfg: &RunConfig) -> Result<Traj> {
    if sc.ego.log.len() == sc.steps() + 1 {
        return Ok(Traj {
            agent_id: "ego".into(),
            mode_id: 0,
            dt: sc.dt,
            states: sc.ego.log.iter().map(state_of).collect(),
        });
    }
    noap_trajectory(sc, cfg)
}

fn noap_trajectory(sc: &Scenario, cfg: &RunConfig) -> Result<Traj> {
    let ctx = PlanContext::new(sc)?;
    let plan = plan_noap(&ctx, &cfg.plan.weights)?;
    Ok(ctx.trajectory(&plan.profile))
}

pub fn scenario_seed(cfg: &RunConfig, sc: &Scenario, stage: &str) -> u64 {
    derive_seed(cfg.seed, &format!("{stage}/{}", sc.id))
}

/// Place phantoms in the occluded stretches and give each a trajectory.
pub fn generate(sc: &Scenario, cfg: &RunConfig) -> Result<(Scenario, Vec<GenerationRow>)> {
    let (fov, segments) = occlusion(sc, cfg)?;
    let mut pcfg = cfg.generation.phantom;
    pcfg.seed = scenario_seed(cfg, sc, "phantom");
    let mut out = sample_phantoms(sc, &segments, Some(&fov), &pcfg)
        .with_context(|| format!("{}: phantoms", sc.id))?;
    let map = road_map(sc)?;
    let ego = ego_trajectory(sc, cfg)?;
    let others = std::slice::from_ref(&ego);
    let steps = sc.steps();
    let g = &cfg.generation.guidance;
    if g.steps == 0 {
        return Err(anyhow!("guidance.steps must be at least 1"));
    }
    let sched = DiffusionSchedule::cosine(g.steps);
    let mut rows = Vec::new();
    for agent in out
        .agents
        .iter_mut()
        .filter(|a| a.is_phantom() && a.states.len() == 1)
    {
        let init = state_of(&agent.states[0]);
        let nominal = adversarial_nominal(&map, init, others, steps, sc.dt, &cfg.nominal);
        let before = closest_approach(&rollout(init, &nominal), others);
        let seed = derive_seed(pcfg.seed, &format!("guide/{}", agent.id));
        let traj = match cfg.generation.motion {
            PhantomMotion::Guided => {
                let ctx = GuidanceContext {
                    init,
                    others,
                    lanes: &sc.lanes,
                };
                let denoiser = phantom_denoiser(nominal, g);
                let mut rng = stream(seed, 0);
                guided_reverse(&ctx, &denoiser, &sched, steps, sc.dt, g, &mut rng)
                    .with_context(|| format!("{}: guidance for {}", sc.id, agent.id))?
                    .trajectory
            }
            PhantomMotion::ConstantVelocity => rollout(init, &ControlSequence::zeros(steps, sc.dt)),
        };
        rows.push(GenerationRow {
            scenario: sc.id.clone(),
            agent_id: agent.id.clone(),
            seed,
            steps: g.steps,
            lambda1: g.lambda1,
            lambda2: g.lambda2,
            lambda: g.lambda,
            closest_before: before,
            closest_after: closest_approach(&traj, others),
            onroad_fraction: onroad_fraction(&traj, &map),
        });
        agent.states = log_of(&traj);
    }
    Ok((out, rows))
}

pub fn trajectory_set(sc: &Scenario, map: &RoadMap, cfg: &RunConfig) -> TrajectorySet {
    let active = filter_active(sc, cfg.risk.v_min);
    build_trajectory_set(sc, map, &active, cfg.risk.modes, &cfg.nominal)
}

pub fn grid_spec(sc: &Scenario, cfg: &RunConfig) -> GridSpec {
    let (lo, hi) = sc.bounds();
    GridSpec::covering(lo, hi, cfg.risk.field.margin, cfg.risk.field.resolution)
}

pub fn risk(sc: &Scenario, cfg: &RunConfig) -> Result<RiskGrid> {
    let map = road_map(sc)?;
    let set = trajectory_set(sc, &map, cfg);
    let ego = match cfg.risk.collision_ego {
        CollisionEgo::Log => ego_trajectory(sc, cfg)?,
        CollisionEgo::Noap => noap_trajectory(sc, cfg)?,
    };
    Ok(build_risk_grid(
        &set,
        &ego,
        grid_spec(sc, cfg),
        &cfg.risk.field,
    ))
}

/// Plan every requested variant; failures are kept per planner.
pub fn plan(
    sc: &Scenario,
    grid: &RiskGrid,
    kinds: &[PlannerKind],
    cfg: &RunConfig,
) -> Result<Vec<(PlannerKind, Result<Plan, PlanError>)>> {
    let ctx = PlanContext::new(sc)?;
    let w = &cfg.plan.weights;
    let mut out = Vec::new();
    for &kind in kinds {
        let plan = match kind {
            PlannerKind::Noap => plan_noap(&ctx, w),
            PlannerKind::RiskAware => {
                if cfg.risk.field.time_bins && !grid.bins.is_empty() {
                    let lookup = TimedGridRisk {
                        grid,
                        path: &ctx.path,
                    };
                    plan_risk_aware(&ctx, &lookup, w)
                } else {
                    let anchors = anchor_risks(grid, &ctx.path, cfg.risk.anchors, None)
                        .with_context(|| format!("{}: anchors", sc.id))?;
                    plan_risk_aware(&ctx, &anchors, w)
                }
            }
            PlannerKind::Srq => {
                let (_, segments) = occlusion(sc, cfg)?;
                let conflicts = conflict_points(&ctx, &road_map(sc)?, &segments, w);
                plan_srq(&ctx, srq_limit(conflicts, w), w)
            }
            PlannerKind::Opbp => {
                let map = road_map(sc)?;
                let set = trajectory_set(sc, &map, cfg);
                let ego = match plan_noap(&ctx, w) {
                    Ok(p) => ctx.trajectory(&p.profile),
                    Err(e) => {
                        out.push((kind, Err(e)));
                        continue;
                    }
                };
                let worst: Vec<Traj> = sc
                    .agents
                    .iter()
                    .filter(|a| a.is_phantom())
                    .filter_map(|a| set.get(&a.id))
                    .filter_map(|modes| most_adversarial(modes, &ego).cloned())
                    .collect();
                plan_opbp(&ctx, &worst, w)
            }
        };
        out.push((kind, plan));
    }
    Ok(out)
}

/// Every agent's logged or generated trajectory with its disc radius.
pub fn agent_trajectories(sc: &Scenario) -> Vec<(Traj, f64)> {
    sc.agents
        .iter()
        .filter(|a| a.states.len() > 1)
        .map(|a| (trajectory_from_log(a, sc.dt), a.footprint.radius()))
        .collect()
}

pub fn generation_metrics(sc: &Scenario, cfg: &RunConfig) -> Result<GenerationMetrics> {
    let ego = ego_trajectory(sc, cfg)?;
    let path = sc.ego.reference_path.polyline()?;
    let agents = agent_trajectories(sc);
    let refs: Vec<(&Traj, f64)> = agents.iter().map(|(t, r)| (t, *r)).collect();
    let phantoms: Vec<Traj> = sc
        .agents
        .iter()
        .filter(|a| a.is_phantom() && a.states.len() > 1)
        .map(|a| trajectory_from_log(a, sc.dt))
        .collect();
    let generated: Vec<&Traj> = phantoms.iter().collect();
    let m = &cfg.metrics;
    Ok(metrics::generation_metrics(
        &sc.lanes,
        &ego,
        sc.ego.footprint.radius(),
        &path,
        &refs,
        &generated,
        m.ttc_cap,
        m.interaction_radius,
    ))
}

/// Metrics of one plan against the scenario's agents (phantoms included) and the grid.
pub fn evaluate(
    sc: &Scenario,
    grid: &RiskGrid,
    kind: PlannerKind,
    plan: &Plan,
    cfg: &RunConfig,
) -> Result<EvalRow> {
    let ctx = PlanContext::new(sc)?;
    let ego = ctx.trajectory(&plan.profile);
    let agents = agent_trajectories(sc);
    let refs: Vec<(&Traj, f64)> = agents.iter().map(|(t, r)| (t, *r)).collect();
    let m = &cfg.metrics;
    let matrix = metrics::ttc(&ego, sc.ego.footprint.radius(), &refs, m.ttc_cap);
    let gen = generation_metrics(sc, cfg)?;
    Ok(EvalRow {
        scenario: sc.id.clone(),
        planner: kind.name().to_string(),
        ttc_min: metrics::ttc_min(&matrix),
        ttc_avg: metrics::ttc_avg(&matrix),
        risk_score: metrics::risk_score(grid, &ego, plan.profile.v.len()),
        critical_moments: metrics::critical_moments(&matrix, m.critical_ttc),
        onroad_rate: gen.onroad_rate,
        offroad_dist: gen.offroad_dist,
        interaction_agents: gen.interaction_agents,
    })
}
