//! The diagnose command: oracle comparisons, weak-convexity probes, finite
//! difference checks and Moreau estimates on a checkpoint or fresh problem.

use cco_core::diagnostics::{
    finite_difference_check, full_fcco_subgradient, full_tcco_subgradient, moreau_grad_norm,
    weak_convexity_probe, FccoObjective, Objective, TccoObjective,
};
use cco_core::problem::{fcco_objective, tcco_objective, FccoProblem, TccoProblem};
use cco_core::rng::{RngFactory, StreamKind};
use cco_core::solvers::init_fcco_state;
use cco_core::{CcoError, ParamVector, Result};

use crate::settings::Settings;
use crate::setup::{build_problem, build_tpauc_model, read_checkpoint_w, BuiltProblem};
use crate::CommonArgs;

struct ProbeOutcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn probe_point(settings: &Settings, dim: usize) -> Result<ParamVector<f64>> {
    if let Some(path) = &settings.diagnostics.checkpoint {
        let w = read_checkpoint_w(path)?;
        if w.len() < dim {
            return Err(CcoError::contract(format!(
                "checkpoint has {} coordinates, problem expects {}",
                w.len(),
                dim
            )));
        }
        Ok(ParamVector::new(w[..dim].to_vec()))
    } else {
        // a mildly perturbed fresh point away from the hinge kinks at zero
        let seed = settings.hyperparameters.seed.unwrap_or(7);
        let mut rng = RngFactory::new(seed).stream(0, StreamKind::Probe, 0);
        Ok(ParamVector::new(
            (0..dim)
                .map(|_| 0.1 + 0.05 * cco_core::rng::standard_normal::<f64, _>(&mut rng))
                .collect(),
        ))
    }
}

fn oracle_probe_fcco(
    settings: &Settings,
    problem: &dyn FccoProblem<f64>,
) -> Result<ProbeOutcome> {
    // noiseless comparison: with exact trackers the averaged batch gradient
    // over all blocks must reproduce the full subgradient
    let mut config = settings.resolve_config(problem.num_blocks(), 1)?;
    config.b1 = problem.num_blocks();
    let w = probe_point(settings, problem.dim())?;
    let mut state = init_fcco_state(problem, &config, w.clone())?;
    // overwrite the trackers with exact values
    let exact: Vec<Vec<f64>> = (0..problem.num_blocks())
        .map(|i| problem.exact_inner_value(i, &w))
        .collect();
    let batch: Vec<usize> = (0..problem.num_blocks()).collect();
    state.u.msvr_update(&batch, &exact, &exact, 1.0, 0.0, 0)?;
    let inner: Vec<Vec<u64>> = batch.iter().map(|_| vec![0]).collect();
    // exact jacobians: synthetic problems have batch-independent jacobians
    let grad = cco_core::solvers::sonx_gradient(problem, &state, &batch, &inner)?;
    let oracle = full_fcco_subgradient(problem, &w);
    let err = grad.sub(&oracle).norm() / oracle.norm().max(1.0);
    Ok(ProbeOutcome {
        name: "oracle-equivalence",
        passed: err < 1e-10,
        detail: format!("relative error {err:.3e}"),
    })
}

fn probe_weak_convexity<F: Fn(&[f64]) -> f64>(
    settings: &Settings,
    f: F,
    dim: usize,
    declared_rho: f64,
) -> ProbeOutcome {
    let d = &settings.diagnostics;
    let rho = d.rho_override.unwrap_or(declared_rho);
    let seed = settings.hyperparameters.seed.unwrap_or(7);
    let mut rng = RngFactory::new(seed).stream(1, StreamKind::Probe, 0);
    let report = weak_convexity_probe(f, dim, rho, d.probe_trials, &mut rng, 1.0);
    ProbeOutcome {
        name: "weak-convexity",
        passed: report.passed(),
        detail: format!(
            "rho = {rho:.4}, {} violations / {} trials (worst {:.3e})",
            report.violations, report.trials, report.worst_violation
        ),
    }
}

fn probe_finite_difference<V, G>(value: V, grad: G, x: &[f64]) -> ProbeOutcome
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let report = finite_difference_check(value, grad, x, 1e-6);
    let err = report.max_smooth_error();
    ProbeOutcome {
        name: "finite-difference",
        passed: err < 1e-4,
        detail: format!(
            "max smooth-coordinate error {err:.3e}, {} kink coordinate(s) skipped",
            report.suspect_kinks.len()
        ),
    }
}

fn probe_moreau<O: Objective<f64> + ?Sized>(
    settings: &Settings,
    objective: &O,
    x: &ParamVector<f64>,
    default_rho_bar: f64,
) -> Result<ProbeOutcome> {
    let d = &settings.diagnostics;
    let mut cfg = cco_core::diagnostics::MoreauConfig::new(
        d.rho_bar.unwrap_or_else(|| default_rho_bar.max(1.0)),
    );
    cfg.inner_iterations = d.inner_iterations;
    cfg.inner_step = d.inner_step;
    cfg.restarts = d.restarts;
    let est = moreau_grad_norm(objective, x, &cfg)?;
    let passed = match d.epsilon_target {
        Some(eps) => est.grad_norm <= eps && est.descent_ok,
        None => est.descent_ok,
    };
    Ok(ProbeOutcome {
        name: "moreau",
        passed,
        detail: format!(
            "grad norm {:.4e} (rho_bar {}), descent check {}",
            est.grad_norm,
            cfg.rho_bar,
            if est.descent_ok { "ok" } else { "violated" }
        ),
    })
}

pub fn cmd_diagnose(args: &CommonArgs) -> Result<u8> {
    let settings = crate::load_settings(args)?;
    let problem = build_problem(&settings)?;
    let mut probes = settings.diagnostics.probes.clone();
    if probes.is_empty() {
        probes = vec![
            "oracle".into(),
            "weak-convexity".into(),
            "finite-difference".into(),
        ];
        if settings.diagnostics.moreau {
            probes.push("moreau".into());
        }
    }

    let mut outcomes: Vec<ProbeOutcome> = Vec::new();
    for probe in &probes {
        let outcome = match (probe.as_str(), &problem) {
            ("oracle", BuiltProblem::FccoSynthetic(p)) => oracle_probe_fcco(&settings, p)?,
            ("oracle", BuiltProblem::Gdro(p)) => oracle_probe_fcco(&settings, p)?,
            ("oracle", BuiltProblem::Tcco(p)) => {
                // tri-level: exact trackers vs the full chain subgradient
                let w = probe_point(&settings, p.dim())?;
                let oracle = full_tcco_subgradient(p, &w);
                let objective = TccoObjective::new(p);
                let fd =
                    finite_difference_check(|z| objective.value(&ParamVector::new(z.to_vec())),
                        |z| full_tcco_subgradient(p, &ParamVector::new(z.to_vec()))
                            .as_slice()
                            .to_vec(),
                        w.as_slice(),
                        1e-6,
                    );
                let err = fd.max_smooth_error();
                let _ = oracle;
                ProbeOutcome {
                    name: "oracle-equivalence",
                    passed: err < 1e-4,
                    detail: format!("chain vs finite differences: {err:.3e}"),
                }
            }
            ("oracle", BuiltProblem::Tpauc(_)) => ProbeOutcome {
                name: "oracle-equivalence",
                passed: true,
                detail: "not applicable to dataset problems".into(),
            },
            ("weak-convexity", BuiltProblem::FccoSynthetic(p)) => {
                let rho = p.constants().rho_objective(p.inner_dim());
                probe_weak_convexity(
                    &settings,
                    |z| fcco_objective(p, &ParamVector::new(z.to_vec())),
                    p.dim(),
                    rho,
                )
            }
            ("weak-convexity", BuiltProblem::Gdro(p)) => {
                let rho = p.constants().rho_objective(p.inner_dim());
                probe_weak_convexity(
                    &settings,
                    |z| fcco_objective(p, &ParamVector::new(z.to_vec())),
                    p.dim(),
                    rho,
                )
            }
            ("weak-convexity", BuiltProblem::Tcco(p)) => {
                let rho = p.constants().rho_objective(p.middle_dim(), p.inner_dim());
                probe_weak_convexity(
                    &settings,
                    |z| tcco_objective(p, &ParamVector::new(z.to_vec())),
                    p.dim(),
                    rho,
                )
            }
            ("weak-convexity", BuiltProblem::Tpauc(dataset)) => {
                let model = build_tpauc_model(&settings, dataset)?;
                match settings
                    .diagnostics
                    .rho_override
                    .or_else(|| model.weak_convexity_bound())
                {
                    Some(rho) => {
                        let joint = model.joint_objective(rho);
                        let dim = joint.dim();
                        probe_weak_convexity(
                            &settings,
                            |z| joint.value(&ParamVector::new(z.to_vec())),
                            dim,
                            rho,
                        )
                    }
                    None => ProbeOutcome {
                        name: "weak-convexity",
                        passed: true,
                        detail: "no certified modulus for this scorer; set rho_override".into(),
                    },
                }
            }
            ("finite-difference", BuiltProblem::FccoSynthetic(p)) => {
                let x = probe_point(&settings, p.dim())?;
                probe_finite_difference(
                    |z| fcco_objective(p, &ParamVector::new(z.to_vec())),
                    |z| full_fcco_subgradient(p, &ParamVector::new(z.to_vec()))
                        .as_slice()
                        .to_vec(),
                    x.as_slice(),
                )
            }
            ("finite-difference", BuiltProblem::Gdro(p)) => {
                let x = probe_point(&settings, p.dim())?;
                probe_finite_difference(
                    |z| fcco_objective(p, &ParamVector::new(z.to_vec())),
                    |z| full_fcco_subgradient(p, &ParamVector::new(z.to_vec()))
                        .as_slice()
                        .to_vec(),
                    x.as_slice(),
                )
            }
            ("finite-difference", BuiltProblem::Tcco(p)) => {
                let x = probe_point(&settings, p.dim())?;
                probe_finite_difference(
                    |z| tcco_objective(p, &ParamVector::new(z.to_vec())),
                    |z| full_tcco_subgradient(p, &ParamVector::new(z.to_vec()))
                        .as_slice()
                        .to_vec(),
                    x.as_slice(),
                )
            }
            ("finite-difference", BuiltProblem::Tpauc(dataset)) => {
                let model = build_tpauc_model(&settings, dataset)?;
                let joint = model.joint_objective(0.0);
                let x = probe_point(&settings, joint.dim())?;
                probe_finite_difference(
                    |z| joint.value(&ParamVector::new(z.to_vec())),
                    |z| joint.subgradient(&ParamVector::new(z.to_vec())).as_slice().to_vec(),
                    x.as_slice(),
                )
            }
            ("moreau", BuiltProblem::FccoSynthetic(p)) => {
                let x = probe_point(&settings, p.dim())?;
                let objective = FccoObjective::new(p);
                probe_moreau(
                    &settings,
                    &objective,
                    &x,
                    p.constants().rho_bar(p.inner_dim()),
                )?
            }
            ("moreau", BuiltProblem::Gdro(p)) => {
                let x = probe_point(&settings, p.dim())?;
                let objective = FccoObjective::new(p);
                probe_moreau(
                    &settings,
                    &objective,
                    &x,
                    p.constants().rho_bar(p.inner_dim()),
                )?
            }
            ("moreau", BuiltProblem::Tcco(p)) => {
                let x = probe_point(&settings, p.dim())?;
                let objective = TccoObjective::new(p);
                probe_moreau(
                    &settings,
                    &objective,
                    &x,
                    p.constants().rho_bar(p.middle_dim(), p.inner_dim()),
                )?
            }
            ("moreau", BuiltProblem::Tpauc(dataset)) => {
                let model = build_tpauc_model(&settings, dataset)?;
                let rho = settings
                    .diagnostics
                    .rho_override
                    .or_else(|| model.weak_convexity_bound())
                    .unwrap_or(0.0);
                let joint = model.joint_objective(rho);
                let x = probe_point(&settings, joint.dim())?;
                probe_moreau(&settings, &joint, &x, 2.0 * rho)?
            }
            (other, _) => {
                return Err(CcoError::invalid_config(format!(
                    "unknown probe {other:?}"
                )))
            }
        };
        outcomes.push(outcome);
    }

    let mut any_failed = false;
    println!("{:<22} {:<6} detail", "probe", "status");
    for o in &outcomes {
        println!(
            "{:<22} {:<6} {}",
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        any_failed |= !o.passed;
    }
    Ok(if any_failed { 5 } else { 0 })
}
