use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};

use occrisk::planner::PlannerKind;
use occrisk_cli::commands::{self, Env, Figure};
use occrisk_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "occrisk", version, about = "Occlusion-aware risk pipeline")]
struct Cli {
    /// TOML run configuration; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (scenario-level parallelism).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Inputs {
    /// Scenario files or directories; defaults to the previous stage's output.
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct PlannerArgs {
    /// Comma-separated subset of risk_aware, noap, srq, opbp.
    #[arg(long, value_delimiter = ',')]
    planners: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic scenario suite to <out>/scenarios.
    Demo {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Place and animate phantoms in occluded areas.
    Generate(Inputs),
    /// Compute risk grids.
    Risk(Inputs),
    /// Plan speed profiles with each requested planner.
    Plan {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        planners: PlannerArgs,
    },
    /// Score the plans and write eval.csv.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum)]
        fig: Option<Figure>,
    },
    /// Render heatmaps and velocity profiles.
    Plot {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value = "all")]
        fig: Figure,
    },
    /// demo (unless inputs are given) -> generate -> risk -> plan -> eval.
    Pipeline {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        planners: PlannerArgs,
        #[arg(long, value_enum)]
        fig: Option<Figure>,
    },
}

/// Bad invocation rather than a failed run.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn planners(args: &PlannerArgs, cfg: &RunConfig) -> Result<Vec<PlannerKind>> {
    let kinds = match &args.planners {
        Some(names) => names
            .iter()
            .filter(|n| !n.is_empty())
            .map(|n| n.parse().map_err(UsageError))
            .collect::<Result<Vec<_>, _>>()?,
        None => cfg.plan.planners.clone(),
    };
    if kinds.is_empty() {
        bail!(UsageError("at least one planner is required".into()));
    }
    Ok(kinds)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_toml(&text)
                .map_err(|e| UsageError(format!("{}: {e:#}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.jobs == 0 {
        bail!(UsageError("--jobs must be at least 1".into()));
    }
    let env = Env {
        cfg,
        out: cli.out,
        jobs: cli.jobs,
    };
    let generated = env.dir(commands::GENERATED);
    match cli.cmd {
        Cmd::Demo { count } => {
            env.write_resolved()?;
            commands::cmd_demo(&env, count.unwrap_or(env.cfg.demo.count))?;
        }
        Cmd::Generate(i) => {
            let files = commands::inputs(&i.inputs, &env.dir(commands::SCENARIOS))?;
            env.write_resolved()?;
            commands::cmd_generate(&env, &files)?;
        }
        Cmd::Risk(i) => {
            let files = commands::inputs(&i.inputs, &generated)?;
            env.write_resolved()?;
            commands::cmd_risk(&env, &files)?;
        }
        Cmd::Plan {
            inputs,
            planners: p,
        } => {
            let kinds = planners(&p, &env.cfg)?;
            let files = commands::inputs(&inputs.inputs, &generated)?;
            env.write_resolved()?;
            commands::cmd_plan(&env, &files, &kinds)?;
        }
        Cmd::Eval { inputs, fig } => {
            let files = commands::inputs(&inputs.inputs, &generated)?;
            env.write_resolved()?;
            let eval = commands::cmd_eval(&env, &files);
            if let Some(fig) = fig {
                commands::cmd_plot(&env, &files, fig)?;
            }
            eval?;
        }
        Cmd::Plot { inputs, fig } => {
            let files = commands::inputs(&inputs.inputs, &generated)?;
            commands::cmd_plot(&env, &files, fig)?;
        }
        Cmd::Pipeline {
            inputs,
            planners: p,
            fig,
        } => {
            let kinds = planners(&p, &env.cfg)?;
            env.write_resolved()?;
            commands::cmd_pipeline(&env, &inputs.inputs, &kinds, fig)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
