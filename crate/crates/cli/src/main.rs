//! Command-line harness: configure, run, and record experiments.
//!
//! Exit codes: 0 success, 2 invalid config, 3 data error, 4 divergence
//! abort, 5 diagnostic failure.

mod diagnose;
mod settings;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cco_core::{CcoError, Result};

use settings::{GammaSpec, NamedGamma, Settings};
use setup::{build_problem, git_describe, write_checkpoint, write_trace, ConfigEcho, RunArtifacts};

#[derive(Parser)]
#[command(name = "cco", about = "Compositional optimization experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (TOML).
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel workers for sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Record a trace row every N iterations.
    #[arg(long)]
    trace_every: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write trace.csv, summary.json, checkpoint.json.
    Run(CommonArgs),
    /// Run the configured diagnostic suite and print a pass/fail table.
    Diagnose(CommonArgs),
    /// Run a matched-seed gamma sweep and emit a wide objective CSV.
    Compare(CommonArgs),
}

fn exit_code_for(e: &CcoError) -> u8 {
    match e {
        CcoError::InvalidConfig(_) | CcoError::ContractViolation(_) | CcoError::MetricUndefined(_) => 2,
        CcoError::Data { .. } | CcoError::Io(_) => 3,
        CcoError::RunAborted { .. } => 4,
    }
}

fn load_settings(args: &CommonArgs) -> Result<Settings> {
    let mut settings = Settings::load(&args.config)?;
    if let Some(seed) = args.seed {
        settings.hyperparameters.seed = Some(seed);
    }
    if let Some(out) = &args.out {
        settings.out = Some(out.clone());
    }
    if let Some(every) = args.trace_every {
        settings.hyperparameters.trace_every = Some(every);
    }
    Ok(settings)
}

fn out_dir(settings: &Settings) -> Result<PathBuf> {
    let dir = settings
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("cco-out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

#[derive(Serialize)]
struct Summary<'a> {
    solver: settings::SolverKind,
    problem_kind: &'a str,
    git_describe: String,
    #[serde(flatten)]
    artifacts: &'a RunArtifacts,
    config: ConfigEcho,
}

fn cmd_run(args: &CommonArgs) -> Result<u8> {
    let settings = load_settings(args)?;
    let problem = build_problem(&settings)?;
    let config = settings.resolve_config(problem.outer_count(), problem.middle_count())?;
    let dir = out_dir(&settings)?;

    let artifacts = setup::run_solver(&settings, &problem, &config)?;
    if let Some(trace) = &artifacts.trace {
        write_trace(&dir.join("trace.csv"), trace)?;
    }
    write_checkpoint(&dir.join("checkpoint.json"), &artifacts)?;
    let summary = Summary {
        solver: settings.solver,
        problem_kind: &settings.problem.kind,
        git_describe: git_describe(),
        artifacts: &artifacts,
        config: ConfigEcho::from(&config),
    };
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CcoError::invalid_config(format!("serialize summary: {e}")))?;
    std::fs::write(dir.join("summary.json"), text)?;

    if let Some(reason) = &artifacts.failure {
        eprintln!("run aborted: {reason}");
        return Ok(4);
    }
    println!(
        "run complete: {} iterations, objective {:?}",
        artifacts.iterations_completed, artifacts.final_objective
    );
    Ok(0)
}

fn cmd_compare(args: &CommonArgs) -> Result<u8> {
    let settings = load_settings(args)?;
    if settings.compare.gammas.is_empty() {
        return Err(CcoError::invalid_config(
            "compare needs a non-empty gamma list",
        ));
    }
    let problem = build_problem(&settings)?;
    let base_config = settings.resolve_config(problem.outer_count(), problem.middle_count())?;
    let dir = out_dir(&settings)?;

    let gammas: Vec<(String, f64)> = settings
        .compare
        .gammas
        .iter()
        .map(|spec| match spec {
            GammaSpec::Value(v) => Ok((format!("{v:?}"), *v)),
            GammaSpec::Named(NamedGamma::Default) => {
                let g = cco_core::config::default_gamma(
                    problem.outer_count(),
                    base_config.b1,
                    base_config.tau,
                )?;
                Ok((format!("default({g:.4})"), g))
            }
        })
        .collect::<Result<_>>()?;

    let track_errors = settings.hyperparameters.track_estimator_error;
    let run_one = |gamma: f64| -> Result<Vec<(u64, f64, f64)>> {
        let mut config = base_config.clone();
        config.gamma = gamma;
        config.gamma1 = gamma;
        config.gamma2 = gamma;
        config.gamma3 = gamma;
        let artifacts = setup::run_solver(&settings, &problem, &config)?;
        if let Some(reason) = artifacts.failure {
            return Err(CcoError::RunAborted {
                iteration: artifacts.iterations_completed,
                reason,
            });
        }
        Ok(artifacts
            .trace
            .map(|t| {
                t.rows
                    .iter()
                    .map(|r| {
                        (
                            r.iteration,
                            r.objective.unwrap_or(f64::NAN),
                            r.est_error.unwrap_or(f64::NAN),
                        )
                    })
                    .collect()
            })
            .unwrap_or_default())
    };

    let columns: Vec<Vec<(u64, f64, f64)>> = if args.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| CcoError::invalid_config(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            gammas
                .par_iter()
                .map(|(_, g)| run_one(*g))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        gammas
            .iter()
            .map(|(_, g)| run_one(*g))
            .collect::<Result<Vec<_>>>()?
    };

    let mut out = String::new();
    out.push_str("iter");
    for (name, _) in &gammas {
        out.push_str(&format!(",gamma_{name}"));
    }
    if track_errors {
        for (name, _) in &gammas {
            out.push_str(&format!(",est_error_gamma_{name}"));
        }
    }
    out.push('\n');
    let rows = columns.first().map(|c| c.len()).unwrap_or(0);
    for r in 0..rows {
        out.push_str(&format!("{}", columns[0][r].0));
        for column in &columns {
            out.push_str(&format!(",{:?}", column[r].1));
        }
        if track_errors {
            for column in &columns {
                out.push_str(&format!(",{:?}", column[r].2));
            }
        }
        out.push('\n');
    }
    std::fs::write(dir.join("compare.csv"), out)?;
    println!(
        "compare complete: {} sweeps x {} rows -> {}",
        gammas.len(),
        rows,
        dir.join("compare.csv").display()
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Diagnose(args) => diagnose::cmd_diagnose(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
