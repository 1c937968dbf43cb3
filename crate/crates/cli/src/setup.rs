//! Builds problems from settings, dispatches runs, and writes outputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use cco_core::config::SolverConfig;
use cco_core::data::{
    gen_fcco, gen_grouped, gen_mil_tpauc, gen_tcco, load_csv_binary, load_grouped_csv,
    load_mil_bags, FccoGen, GroupGen, MiddleKind, MilGen, SyntheticFcco, SyntheticTcco,
    TccoGen,
};
use cco_core::diagnostics::{moreau_grad_norm, FccoObjective, MoreauConfig, TccoObjective};
use cco_core::gdro::{as_fcco, GdroProblem, GroupedDataset, LossKind};
use cco_core::problem::{fcco_objective, tcco_objective, FccoProblem, TccoProblem};
use cco_core::solvers::{sonx_run, sonx_run_ma, sont_run, sont_run_ma};
use cco_core::tpauc::{
    tpauc_sonx_run, tpauc_sont_run, Pooling, Scorer, SurrogateSpec, TpaucDataset, TpaucModel,
};
use cco_core::trace::RunTrace;
use cco_core::{CcoError, ParamVector, Result};

use crate::settings::{Settings, SolverKind};

pub enum BuiltProblem {
    FccoSynthetic(SyntheticFcco<f64>),
    Gdro(GdroProblem<f64>),
    Tcco(SyntheticTcco<f64>),
    Tpauc(TpaucDataset<f64>),
}

impl BuiltProblem {
    pub fn outer_count(&self) -> usize {
        match self {
            BuiltProblem::FccoSynthetic(p) => p.num_blocks(),
            BuiltProblem::Gdro(p) => p.num_blocks(),
            BuiltProblem::Tcco(p) => p.outer_blocks(),
            BuiltProblem::Tpauc(d) => d.n_pos(),
        }
    }

    pub fn middle_count(&self) -> usize {
        match self {
            BuiltProblem::Tcco(p) => p.middle_blocks(),
            BuiltProblem::Tpauc(d) => d.n_neg(),
            _ => 1,
        }
    }
}

fn parse_loss(name: Option<&str>) -> Result<LossKind> {
    match name.unwrap_or("hinge") {
        "hinge" => Ok(LossKind::Hinge),
        "squared-hinge" => Ok(LossKind::SquaredHinge),
        "logistic" => Ok(LossKind::Logistic),
        other => Err(CcoError::invalid_config(format!("unknown loss {other:?}"))),
    }
}

pub fn build_problem(settings: &Settings) -> Result<BuiltProblem> {
    let p = &settings.problem;
    let need_path = || {
        p.path
            .clone()
            .ok_or_else(|| CcoError::invalid_config(format!("problem kind {} needs a path", p.kind)))
    };
    match p.kind.as_str() {
        "fcco-linear" => Ok(BuiltProblem::FccoSynthetic(gen_fcco(FccoGen::linear(
            p.n, p.d, p.d1, p.sigma, p.seed,
        )))),
        "fcco-quadratic" => Ok(BuiltProblem::FccoSynthetic(gen_fcco(FccoGen::quadratic(
            p.n, p.d, p.sigma, p.seed,
        )))),
        "tcco" => {
            let middle = match p.middle.as_deref().unwrap_or("tanh") {
                "tanh" => MiddleKind::Tanh,
                "identity" => MiddleKind::Identity,
                other => {
                    return Err(CcoError::invalid_config(format!(
                        "unknown middle level {other:?}"
                    )))
                }
            };
            Ok(BuiltProblem::Tcco(gen_tcco(TccoGen {
                n1: p.n,
                n2: p.n2,
                d: p.d,
                d1: p.d1,
                d2: p.d2,
                middle,
                sigma: p.sigma,
                seed: p.seed,
            })?))
        }
        "mil-tpauc" => {
            let (dataset, _) = gen_mil_tpauc(MilGen {
                n_pos: p.n_pos,
                n_neg: p.n_neg,
                d: p.d,
                bag_min: p.bag_min,
                bag_max: p.bag_max,
                noise: p.noise,
                separable: p.separable,
                seed: p.seed,
            })?;
            Ok(BuiltProblem::Tpauc(dataset))
        }
        "gdro" => {
            let dataset = gen_grouped(GroupGen {
                groups: p.groups,
                per_group: p.per_group,
                d: p.d,
                max_flip: p.max_flip,
                seed: p.seed,
                loss: parse_loss(p.loss.as_deref())?,
            })?;
            Ok(BuiltProblem::Gdro(as_fcco(dataset, p.top_k)?))
        }
        "csv-binary" => Ok(BuiltProblem::Tpauc(load_csv_binary(&need_path()?)?)),
        "mil-bags" => Ok(BuiltProblem::Tpauc(load_mil_bags(&need_path()?)?)),
        "grouped-csv" => {
            let mut dataset: GroupedDataset<f64> = load_grouped_csv(&need_path()?)?;
            dataset.loss = parse_loss(p.loss.as_deref())?;
            Ok(BuiltProblem::Gdro(as_fcco(dataset, p.top_k)?))
        }
        other => Err(CcoError::invalid_config(format!(
            "unknown problem kind {other:?}"
        ))),
    }
}

pub fn build_tpauc_model<'a>(
    settings: &Settings,
    dataset: &'a TpaucDataset<f64>,
) -> Result<TpaucModel<'a, f64>> {
    let t = &settings.tpauc;
    let scorer = match t.scorer.as_deref().unwrap_or("linear") {
        "linear" => Scorer::linear(dataset.feature_dim, t.sigmoid),
        "one-hidden" => Scorer::one_hidden(dataset.feature_dim, t.hidden, t.sigmoid),
        other => {
            return Err(CcoError::invalid_config(format!(
                "unknown scorer {other:?}"
            )))
        }
    };
    let pooling = match t.pooling.as_deref().unwrap_or("mean") {
        "mean" => Pooling::Mean,
        "smoothed-max" => Pooling::SmoothedMax {
            tau: t.pool_tau,
            offset: t.pool_offset,
        },
        other => {
            return Err(CcoError::invalid_config(format!(
                "unknown pooling {other:?}"
            )))
        }
    };
    let spec = SurrogateSpec::new(t.margin, t.alpha, t.beta)?;
    TpaucModel::new(dataset, scorer, pooling, spec)
}

#[derive(Debug, Default, Serialize)]
pub struct RunArtifacts {
    pub iterations_completed: u64,
    pub final_objective: Option<f64>,
    pub final_metric: Option<f64>,
    pub final_moreau_grad: Option<f64>,
    /// Running mean of squared Moreau gradient estimates over checkpoints.
    pub moreau_mean_square: Option<f64>,
    pub wall_time_secs: f64,
    pub failure: Option<String>,
    #[serde(skip)]
    pub trace: Option<RunTrace<f64>>,
    #[serde(skip)]
    pub final_w: Vec<f64>,
    #[serde(skip)]
    pub final_s: Option<Vec<f64>>,
    #[serde(skip)]
    pub final_s_prime: Option<f64>,
}

fn moreau_cfg_for(settings: &Settings, default_rho_bar: f64) -> MoreauConfig<f64> {
    let d = &settings.diagnostics;
    let mut cfg = MoreauConfig::new(d.rho_bar.unwrap_or_else(|| default_rho_bar.max(1.0)));
    cfg.inner_iterations = d.inner_iterations;
    cfg.inner_step = d.inner_step;
    cfg.restarts = d.restarts;
    cfg
}

/// Patches per-checkpoint Moreau estimates into an in-memory trace.
fn apply_moreau_checkpoints(trace: &mut RunTrace<f64>, estimates: &BTreeMap<u64, f64>) {
    for row in trace.rows.iter_mut() {
        if let Some(v) = estimates.get(&row.iteration) {
            row.moreau_grad = Some(*v);
        }
    }
}

pub fn run_solver(
    settings: &Settings,
    problem: &BuiltProblem,
    config: &SolverConfig<f64>,
) -> Result<RunArtifacts> {
    let diag = &settings.diagnostics;
    let mut artifacts = RunArtifacts::default();

    match (settings.solver, problem) {
        (SolverKind::Sonx | SolverKind::SonxMa | SolverKind::GdroSonx, _) => {
            let problem: &dyn FccoProblem<f64> = match problem {
                BuiltProblem::FccoSynthetic(p) => p,
                BuiltProblem::Gdro(p) => p,
                _ => {
                    return Err(CcoError::invalid_config(
                        "two-level solvers need a two-level problem kind",
                    ))
                }
            };
            let w0 = ParamVector::zeros(problem.dim());
            let objective = FccoObjective::new(problem);
            let moreau_cfg = moreau_cfg_for(
                settings,
                problem.constants().rho_bar(problem.inner_dim()),
            );
            let mut checkpoints: BTreeMap<u64, f64> = BTreeMap::new();
            let mut hook_err: Option<CcoError> = None;
            let every = diag.moreau_every;
            let moreau_on = diag.moreau;
            let mut hook = |state: &cco_core::solvers::FccoSolverState<f64>,
                            row: &cco_core::trace::TraceRow<f64>| {
                if moreau_on && every > 0 && row.iteration % every == 0 && hook_err.is_none() {
                    match moreau_grad_norm(&objective, &state.w, &moreau_cfg) {
                        Ok(est) => {
                            checkpoints.insert(row.iteration, est.grad_norm);
                        }
                        Err(e) => hook_err = Some(e),
                    }
                }
            };
            let outcome = match settings.solver {
                SolverKind::SonxMa => sonx_run_ma(problem, config, w0, Some(&mut hook))?,
                _ => sonx_run(problem, config, w0, Some(&mut hook))?,
            };
            if let Some(e) = hook_err {
                return Err(e);
            }
            artifacts.final_objective = Some(fcco_objective(problem, &outcome.state.w));
            if diag.moreau {
                let est = moreau_grad_norm(&objective, &outcome.state.w, &moreau_cfg)?;
                artifacts.final_moreau_grad = Some(est.grad_norm);
            }
            artifacts.final_w = outcome.state.w.as_slice().to_vec();
            artifacts.iterations_completed = outcome.state.iteration;
            let mut trace = outcome.trace;
            if !checkpoints.is_empty() {
                apply_moreau_checkpoints(&mut trace, &checkpoints);
                let n = checkpoints.len() as f64;
                artifacts.moreau_mean_square =
                    Some(checkpoints.values().map(|v| v * v).sum::<f64>() / n);
            }
            artifacts.wall_time_secs = trace.meta.wall_time_secs;
            artifacts.failure = outcome.failure.map(|e| e.to_string());
            artifacts.trace = Some(trace);
        }
        (SolverKind::Sont | SolverKind::SontMa, BuiltProblem::Tcco(problem)) => {
            let w0 = ParamVector::zeros(problem.dim());
            let outcome = match settings.solver {
                SolverKind::SontMa => sont_run_ma(problem, config, w0, None)?,
                _ => sont_run(problem, config, w0, None)?,
            };
            artifacts.final_objective = Some(tcco_objective(problem, &outcome.state.w));
            if diag.moreau {
                let objective = TccoObjective::new(problem);
                let moreau_cfg = moreau_cfg_for(
                    settings,
                    problem
                        .constants()
                        .rho_bar(problem.middle_dim(), problem.inner_dim()),
                );
                let est = moreau_grad_norm(&objective, &outcome.state.w, &moreau_cfg)?;
                artifacts.final_moreau_grad = Some(est.grad_norm);
            }
            artifacts.final_w = outcome.state.w.as_slice().to_vec();
            artifacts.iterations_completed = outcome.state.iteration;
            artifacts.wall_time_secs = outcome.trace.meta.wall_time_secs;
            artifacts.failure = outcome.failure.map(|e| e.to_string());
            artifacts.trace = Some(outcome.trace);
        }
        (SolverKind::TpaucSonx | SolverKind::TpaucSont, BuiltProblem::Tpauc(dataset)) => {
            let model = build_tpauc_model(settings, dataset)?;
            let w0 = ParamVector::zeros(model.scorer.param_dim());
            let (trace, failure, w, s, s_prime, iterations) = match settings.solver {
                SolverKind::TpaucSonx => {
                    let out = tpauc_sonx_run(&model, config, w0, None)?;
                    (
                        out.trace,
                        out.failure,
                        out.state.w,
                        out.state.s,
                        out.state.s_prime,
                        out.state.iteration,
                    )
                }
                _ => {
                    let out = tpauc_sont_run(&model, config, w0, None)?;
                    (
                        out.trace,
                        out.failure,
                        out.state.w,
                        out.state.s,
                        out.state.s_prime,
                        out.state.iteration,
                    )
                }
            };
            artifacts.final_objective = Some(model.objective(w.as_slice(), &s, s_prime)?);
            artifacts.final_metric = Some(model.metric(w.as_slice())?);
            if diag.moreau {
                let rho = diag
                    .rho_override
                    .or_else(|| model.weak_convexity_bound())
                    .unwrap_or(0.0);
                let joint = model.joint_objective(rho);
                let moreau_cfg = moreau_cfg_for(settings, 2.0 * rho);
                let packed = joint.pack(w.as_slice(), &s, s_prime);
                let est = moreau_grad_norm(&joint, &packed, &moreau_cfg)?;
                artifacts.final_moreau_grad = Some(est.grad_norm);
            }
            artifacts.final_w = w.as_slice().to_vec();
            artifacts.final_s = Some(s);
            artifacts.final_s_prime = Some(s_prime);
            artifacts.iterations_completed = iterations;
            artifacts.wall_time_secs = trace.meta.wall_time_secs;
            artifacts.failure = failure.map(|e| e.to_string());
            artifacts.trace = Some(trace);
        }
        _ => {
            return Err(CcoError::invalid_config(format!(
                "solver {:?} does not match problem kind {}",
                settings.solver, settings.problem.kind
            )))
        }
    }
    Ok(artifacts)
}

/// Echo of the resolved hyperparameters for the summary.
#[derive(Debug, Serialize)]
pub struct ConfigEcho {
    pub eta: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub tau: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub b1: usize,
    pub b2: usize,
    pub b3: usize,
    pub iterations: u64,
    pub seed: u64,
    pub trace_every: u64,
    pub projection_radius: Option<f64>,
    pub read_updated_estimates: bool,
    pub scale_s_by_batch: bool,
}

impl ConfigEcho {
    pub fn from(config: &SolverConfig<f64>) -> Self {
        ConfigEcho {
            eta: config.eta,
            eta1: config.eta1,
            eta2: config.eta2,
            tau: config.tau,
            tau1: config.tau1,
            tau2: config.tau2,
            gamma: config.gamma,
            gamma1: config.gamma1,
            gamma2: config.gamma2,
            gamma3: config.gamma3,
            b1: config.b1,
            b2: config.b2,
            b3: config.b3,
            iterations: config.iterations,
            seed: config.seed,
            trace_every: config.trace_every,
            projection_radius: config.projection_radius,
            read_updated_estimates: config.read_updated_estimates,
            scale_s_by_batch: config.scale_s_by_batch,
        }
    }
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Writes the trace CSV append-only with periodic syncs.
pub fn write_trace(path: &Path, trace: &RunTrace<f64>) -> Result<()> {
    let mut body = Vec::new();
    trace.write_csv(&mut body)?;
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    for (count, chunk) in body.split_inclusive(|&b| b == b'\n').enumerate() {
        writer.write_all(chunk)?;
        if count % 8192 == 8191 {
            writer.flush()?;
            writer.get_ref().sync_data()?;
        }
    }
    writer.flush()?;
    writer.get_ref().sync_data()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Checkpoint {
    pub w: Vec<f64>,
    pub s: Option<Vec<f64>>,
    pub s_prime: Option<f64>,
}

pub fn write_checkpoint(path: &Path, artifacts: &RunArtifacts) -> Result<()> {
    let checkpoint = Checkpoint {
        w: artifacts.final_w.clone(),
        s: artifacts.final_s.clone(),
        s_prime: artifacts.final_s_prime,
    };
    let text = serde_json::to_string_pretty(&checkpoint)
        .map_err(|e| CcoError::invalid_config(format!("serialize checkpoint: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_checkpoint_w(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CcoError::data(0, format!("bad checkpoint json: {e}")))?;
    value["w"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
        .ok_or_else(|| CcoError::data(0, "checkpoint missing w array"))
}
