//! File-level subcommands. Every stage reads the previous stage's files and
//! writes its own under the output directory:
//!
//! ```text
//! <out>/config.resolved
//! <out>/scenarios/<id>.json      demo
//! <out>/generated/<id>.json      generate  (+ <out>/generation.csv)
//! <out>/grids/<id>.grid, .pgm    risk
//! <out>/plans/<id>.json          plan
//! <out>/eval.csv                 eval      (+ <out>/generation_metrics.csv)
//! <out>/figures/<id>_*.png       plot
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use occrisk::guidance::GenerationRow;
use occrisk::io::{read_json, read_scenario, write_bytes, write_json, write_scenario};
use occrisk::metrics::{mean_row, EvalRow, GenerationMetrics};
use occrisk::planner::{CostBreakdown, Plan, PlannerKind, VelocityProfile};
use occrisk::risk::{grid_bytes, pgm, read_grid, RiskGrid};
use occrisk::scene::{validate, Scenario};

use crate::config::RunConfig;
use crate::stages;

pub const SCENARIOS: &str = "scenarios";
pub const GENERATED: &str = "generated";
pub const GRIDS: &str = "grids";
pub const PLANS: &str = "plans";
pub const FIGURES: &str = "figures";

/// Shared options of every subcommand.
#[derive(Debug, Clone)]
pub struct Env {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub jobs: usize,
}

impl Env {
    pub fn dir(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Echo the resolved configuration next to the outputs.
    pub fn write_resolved(&self) -> Result<()> {
        write_bytes(
            &self.out.join("config.resolved"),
            self.cfg.resolved().as_bytes(),
        )?;
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .context("thread pool")
    }
}

/// Per-file failures of one stage. The stage still writes everything that succeeded.
#[derive(Debug)]
pub struct Failures(pub Vec<(String, anyhow::Error)>);

impl Failures {
    fn into_result(self, stage: &str) -> Result<()> {
        if self.0.is_empty() {
            return Ok(());
        }
        let lines: Vec<String> = self
            .0
            .iter()
            .map(|(f, e)| format!("  {f}: {e:#}"))
            .collect();
        bail!(
            "{stage}: {} file(s) failed\n{}",
            self.0.len(),
            lines.join("\n")
        )
    }
}

/// `*.json` files of a directory, sorted by name.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Explicit inputs, or every scenario file in the default directory.
pub fn inputs(explicit: &[PathBuf], default_dir: &Path) -> Result<Vec<PathBuf>> {
    if explicit.is_empty() {
        return json_files(default_dir);
    }
    let mut out = Vec::new();
    for p in explicit {
        if p.is_dir() {
            out.extend(json_files(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load(path: &Path) -> Result<Scenario> {
    let sc = read_scenario(path)?;
    let problems = validate(&sc);
    if !problems.is_empty() {
        let msgs: Vec<String> = problems.iter().map(|p| p.to_string()).collect();
        bail!("invalid scenario: {}", msgs.join("; "));
    }
    Ok(sc)
}

/// Run `f` over every input in parallel and split the results by outcome,
/// keeping input order.
fn each<T: Send>(
    env: &Env,
    files: &[PathBuf],
    f: impl Fn(&Path) -> Result<T> + Sync,
) -> Result<(Vec<T>, Failures)> {
    let results: Vec<Result<T>> = env
        .pool()?
        .install(|| files.par_iter().map(|p| f(p)).collect());
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (p, r) in files.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => bad.push((p.display().to_string(), e)),
        }
    }
    Ok((ok, Failures(bad)))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    write_bytes(path, &w.into_inner()?)?;
    Ok(())
}

pub fn cmd_demo(env: &Env, count: usize) -> Result<Vec<PathBuf>> {
    let dir = env.dir(SCENARIOS);
    let suite: Vec<Scenario> = env.pool()?.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| occrisk::demo::demo_scenario(env.cfg.seed, i, &env.cfg.plan.weights))
            .collect()
    });
    let mut paths = Vec::new();
    for sc in &suite {
        let p = dir.join(format!("{}.json", sc.id));
        write_scenario(&p, sc)?;
        paths.push(p);
    }
    Ok(paths)
}

pub fn cmd_generate(env: &Env, files: &[PathBuf]) -> Result<()> {
    let dir = env.dir(GENERATED);
    let (done, failures) = each(env, files, |p| {
        let sc = load(p)?;
        let (out, rows) = stages::generate(&sc, &env.cfg)?;
        write_scenario(&dir.join(format!("{}.json", out.id)), &out)?;
        Ok(rows)
    })?;
    let mut rows: Vec<GenerationRow> = done.into_iter().flatten().collect();
    rows.sort_by(|a, b| (&a.scenario, &a.agent_id).cmp(&(&b.scenario, &b.agent_id)));
    write_csv(&env.out.join("generation.csv"), &rows)?;
    failures.into_result("generate")
}

pub fn grid_path(env: &Env, id: &str) -> PathBuf {
    env.dir(GRIDS).join(format!("{id}.grid"))
}

pub fn load_grid(path: &Path) -> Result<RiskGrid> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_grid(&mut f).with_context(|| format!("reading {}", path.display()))
}

pub fn cmd_risk(env: &Env, files: &[PathBuf]) -> Result<()> {
    let (_, failures) = each(env, files, |p| {
        let sc = load(p)?;
        let grid = stages::risk(&sc, &env.cfg)?;
        let path = grid_path(env, &sc.id);
        write_bytes(&path, &grid_bytes(&grid))?;
        write_bytes(&path.with_extension("pgm"), pgm(&grid).as_bytes())?;
        Ok(())
    })?;
    failures.into_result("risk")
}

/// One planner's outcome in a plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub planner: PlannerKind,
    pub error: Option<String>,
    pub profile: Option<VelocityProfile>,
    pub cost: Option<CostBreakdown>,
    pub iterations: usize,
    pub converged: bool,
}

impl PlanRecord {
    fn new(kind: PlannerKind, r: &Result<Plan, occrisk::planner::PlanError>) -> Self {
        match r {
            Ok(p) => Self {
                planner: kind,
                error: None,
                profile: Some(p.profile.clone()),
                cost: Some(p.cost),
                iterations: p.iterations,
                converged: p.converged,
            },
            Err(e) => Self {
                planner: kind,
                error: Some(e.to_string()),
                profile: None,
                cost: None,
                iterations: 0,
                converged: false,
            },
        }
    }

    pub fn plan(&self) -> Option<Plan> {
        Some(Plan {
            kind: self.planner,
            profile: self.profile.clone()?,
            cost: self.cost?,
            iterations: self.iterations,
            converged: self.converged,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub scenario: String,
    pub plans: Vec<PlanRecord>,
}

pub fn plan_path(env: &Env, id: &str) -> PathBuf {
    env.dir(PLANS).join(format!("{id}.json"))
}

pub fn cmd_plan(env: &Env, files: &[PathBuf], planners: &[PlannerKind]) -> Result<()> {
    if planners.is_empty() {
        bail!("usage: at least one planner is required");
    }
    let (_, failures) = each(env, files, |p| {
        let sc = load(p)?;
        let grid = load_grid(&grid_path(env, &sc.id))?;
        let plans = stages::plan(&sc, &grid, planners, &env.cfg)?;
        let file = PlanFile {
            scenario: sc.id.clone(),
            plans: plans.iter().map(|(k, r)| PlanRecord::new(*k, r)).collect(),
        };
        write_json(&plan_path(env, &sc.id), &file)?;
        Ok(())
    })?;
    failures.into_result("plan")
}

/// Per-scenario generation metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetricsRow {
    pub scenario: String,
    pub ttc_min: f64,
    pub onroad_rate: f64,
    pub offroad_dist: f64,
    pub interaction_agents: usize,
}

impl GenerationMetricsRow {
    fn new(scenario: &str, m: GenerationMetrics) -> Self {
        Self {
            scenario: scenario.to_string(),
            ttc_min: m.ttc_min,
            onroad_rate: m.onroad_rate,
            offroad_dist: m.offroad_dist,
            interaction_agents: m.interaction_agents,
        }
    }
}

const EVAL_HEADER: [&str; 9] = [
    "scenario",
    "planner",
    "ttc_min",
    "ttc_avg",
    "risk_score",
    "critical_moments",
    "onroad_rate",
    "offroad_dist",
    "interaction_agents",
];

/// The comparison table: one row per (scenario, planner) and a footer of means.
pub fn eval_csv(rows: &[EvalRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(EVAL_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    if let Some(m) = mean_row(rows) {
        let mut rec = vec!["mean".to_string(), String::new()];
        rec.extend(m.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    Ok(w.into_inner()?)
}

pub fn cmd_eval(env: &Env, files: &[PathBuf]) -> Result<()> {
    let (done, mut failures) = each(env, files, |p| {
        let sc = load(p)?;
        let grid = load_grid(&grid_path(env, &sc.id))?;
        let plans: PlanFile = read_json(&plan_path(env, &sc.id))?;
        let mut rows = Vec::new();
        let mut missing = Vec::new();
        for rec in &plans.plans {
            match rec.plan() {
                Some(plan) => {
                    rows.push(stages::evaluate(&sc, &grid, rec.planner, &plan, &env.cfg)?)
                }
                None => missing.push(format!(
                    "{}: {}",
                    rec.planner,
                    rec.error.as_deref().unwrap_or("no profile")
                )),
            }
        }
        let gen = GenerationMetricsRow::new(&sc.id, stages::generation_metrics(&sc, &env.cfg)?);
        Ok((sc.id, rows, gen, missing))
    })?;
    let mut rows = Vec::new();
    let mut gens = Vec::new();
    for (id, r, g, missing) in done {
        rows.extend(r);
        gens.push(g);
        for m in missing {
            failures.0.push((id.clone(), anyhow!("{m}")));
        }
    }
    rows.sort_by(|a, b| (&a.scenario, &a.planner).cmp(&(&b.scenario, &b.planner)));
    gens.sort_by(|a, b| a.scenario.cmp(&b.scenario));
    write_bytes(&env.out.join("eval.csv"), &eval_csv(&rows)?)?;
    write_csv(&env.out.join("generation_metrics.csv"), &gens)?;
    failures.into_result("eval")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Heatmap,
    Profile,
    All,
}

pub fn cmd_plot(env: &Env, files: &[PathBuf], fig: Figure) -> Result<()> {
    let dir = env.dir(FIGURES);
    let (_, failures) = each(env, files, |p| {
        let sc = load(p)?;
        if matches!(fig, Figure::Heatmap | Figure::All) {
            let grid = load_grid(&grid_path(env, &sc.id))?;
            let (fov, _) = stages::occlusion(&sc, &env.cfg)?;
            let img = occrisk_plot::render_heatmap(&sc, &grid, Some(&fov))?;
            write_bytes(
                &dir.join(format!("{}_heatmap.png", sc.id)),
                &img.png_bytes()?,
            )?;
        }
        if matches!(fig, Figure::Profile | Figure::All) {
            let plans: PlanFile = read_json(&plan_path(env, &sc.id))?;
            let curves: Vec<(&str, &VelocityProfile)> = plans
                .plans
                .iter()
                .filter_map(|r| r.profile.as_ref().map(|p| (r.planner.name(), p)))
                .collect();
            let img = occrisk_plot::render_profile(&curves)?;
            write_bytes(
                &dir.join(format!("{}_profile.png", sc.id)),
                &img.png_bytes()?,
            )?;
        }
        Ok(())
    })?;
    failures.into_result("plot")
}

/// Every stage in order. Without inputs the demo suite is generated first.
pub fn cmd_pipeline(
    env: &Env,
    files: &[PathBuf],
    planners: &[PlannerKind],
    fig: Option<Figure>,
) -> Result<()> {
    let scenarios = if files.is_empty() {
        cmd_demo(env, env.cfg.demo.count)?
    } else {
        inputs(files, &env.dir(SCENARIOS))?
    };
    cmd_generate(env, &scenarios)?;
    let generated = json_files(&env.dir(GENERATED))?;
    cmd_risk(env, &generated)?;
    cmd_plan(env, &generated, planners)?;
    cmd_eval(env, &generated)?;
    if let Some(fig) = fig {
        cmd_plot(env, &generated, fig)?;
    }
    Ok(())
}
