//! Two-level single loop.

use std::time::Instant;

use super::{guard_iterate, FccoSolverState, Hook, RunOutcome, StepOutcome};
use crate::config::SolverConfig;
use crate::error::{CcoError, Result};
use crate::linalg::ParamVector;
use crate::problem::FccoProblem;
use crate::rng::{sample_blocks, sample_ids, RngFactory, StreamKind};
use crate::scalar::Scalar;
use crate::trace::{RunTrace, TraceRow};

#[derive(Clone, Copy, PartialEq)]
enum TrackerRule {
    Msvr,
    MovingAverage,
}

/// Builds the initial state: `u_{i,0}` comes from one stochastic evaluation
/// of each block at `w0`.
pub fn init_fcco_state<T: Scalar, P: FccoProblem<T> + ?Sized>(
    problem: &P,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
) -> Result<FccoSolverState<T>> {
    config.validate_for_population(problem.num_blocks())?;
    if w0.dim() != problem.dim() {
        return Err(CcoError::contract(format!(
            "w0 has dimension {}, problem expects {}",
            w0.dim(),
            problem.dim()
        )));
    }
    let rng = RngFactory::new(config.seed);
    let n = problem.num_blocks();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let mut stream = rng.stream(0, StreamKind::Init, i as u64);
        let batch = sample_ids(
            &mut stream,
            problem.sample_space(i),
            config.b2.min(problem.sample_space(i) as usize),
        )?;
        values.push(problem.inner_value(i, &w0, &batch));
    }
    let u = crate::estimators::BlockEstimatorState::from_values(values)?;
    let initial_norm = w0.norm();
    Ok(FccoSolverState {
        w_prev: w0.clone(),
        w: w0,
        u,
        iteration: 0,
        rng,
        initial_norm,
    })
}

/// Chained stochastic subgradient
/// `(1/B1) sum_{i in batch} J_i(w; batch_i) * df_i(u_i)` where `J_i` is the
/// inner subjacobian on the same sample batch used for the value updates.
pub fn sonx_gradient<T: Scalar, P: FccoProblem<T> + ?Sized>(
    problem: &P,
    state: &FccoSolverState<T>,
    batch: &[usize],
    inner_batches: &[Vec<u64>],
) -> Result<ParamVector<T>> {
    if batch.len() != inner_batches.len() {
        return Err(CcoError::contract(
            "sonx gradient needs one inner batch per outer block",
        ));
    }
    let d = problem.dim();
    let mut grad = ParamVector::zeros(d);
    for (&i, inner) in batch.iter().zip(inner_batches) {
        let df = problem.outer_subgradient(i, state.u.get(i));
        let jac = problem.inner_subjacobian(i, &state.w, inner);
        if jac.rows() != d || jac.cols() != df.len() {
            return Err(CcoError::contract(format!(
                "inner subjacobian for block {i} is {}x{}, expected {}x{}",
                jac.rows(),
                jac.cols(),
                d,
                df.len()
            )));
        }
        let chain = jac.matvec(&df);
        for (g, c) in grad.as_mut_slice().iter_mut().zip(chain.iter()) {
            *g = *g + *c;
        }
    }
    grad.scale(T::one() / T::of(batch.len() as f64));
    Ok(grad)
}

fn step<T: Scalar, P: FccoProblem<T> + ?Sized>(
    problem: &P,
    state: &mut FccoSolverState<T>,
    config: &SolverConfig<T>,
    rule: TrackerRule,
) -> Result<StepOutcome<T>> {
    let t = state.iteration;
    let n = problem.num_blocks();

    let mut outer_stream = state.rng.stream(t, StreamKind::OuterBlocks, 0);
    let batch = sample_blocks(&mut outer_stream, n, config.b1)?;

    let mut inner_batches = Vec::with_capacity(batch.len());
    let mut g_curr = Vec::with_capacity(batch.len());
    let mut g_prev = Vec::with_capacity(batch.len());
    for &i in &batch {
        let mut stream = state.rng.stream(t, StreamKind::InnerSamples, i as u64);
        let space = problem.sample_space(i);
        let inner = sample_ids(&mut stream, space, config.b2.min(space as usize))?;
        g_curr.push(problem.inner_value(i, &state.w, &inner));
        if rule == TrackerRule::Msvr {
            g_prev.push(problem.inner_value(i, &state.w_prev, &inner));
        }
        inner_batches.push(inner);
    }

    let update_tracker = |state: &mut FccoSolverState<T>| -> Result<()> {
        match rule {
            TrackerRule::Msvr => state.u.msvr_update(
                &batch,
                &g_curr,
                &g_prev,
                config.tau,
                config.gamma,
                t + 1,
            ),
            TrackerRule::MovingAverage => state.u.ma_update(&batch, &g_curr, config.tau, t + 1),
        }
    };

    // The stated update order writes u_{t+1} first but the gradient reads
    // u_t; flipping the flag makes the gradient read the fresh values.
    let gradient;
    if config.read_updated_estimates {
        update_tracker(state)?;
        gradient = sonx_gradient(problem, state, &batch, &inner_batches)?;
    } else {
        gradient = sonx_gradient(problem, state, &batch, &inner_batches)?;
        update_tracker(state)?;
    }

    if !gradient.is_finite() {
        return Err(CcoError::RunAborted {
            iteration: t,
            reason: "non-finite gradient".into(),
        });
    }

    let mut objective = T::zero();
    for &i in &batch {
        objective = objective + problem.outer_value(i, state.u.get(i));
    }
    objective = objective / T::of(batch.len() as f64);

    state.w_prev = state.w.clone();
    state.w.add_scaled(-config.eta, &gradient);
    guard_iterate(&state.w, state.initial_norm, config.divergence_factor, t)?;
    state.iteration = t + 1;

    Ok(StepOutcome {
        objective_estimate: objective,
        step_norm: config.eta * gradient.norm(),
    })
}

/// One iteration with the MSVR tracker.
pub fn sonx_step<T: Scalar, P: FccoProblem<T> + ?Sized>(
    problem: &P,
    state: &mut FccoSolverState<T>,
    config: &SolverConfig<T>,
) -> Result<StepOutcome<T>> {
    step(problem, state, config, TrackerRule::Msvr)
}

/// One iteration with the coordinate moving-average tracker; skips the
/// previous-iterate evaluations entirely.
pub fn sonx_step_ma<T: Scalar, P: FccoProblem<T> + ?Sized>(
    problem: &P,
    state: &mut FccoSolverState<T>,
    config: &SolverConfig<T>,
) -> Result<StepOutcome<T>> {
    step(problem, state, config, TrackerRule::MovingAverage)
}

fn run<T: Scalar, P: FccoProblem<T> + ?Sized>(
    problem: &P,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
    mut hook: Option<Hook<'_, FccoSolverState<T>, T>>,
    rule: TrackerRule,
) -> Result<RunOutcome<FccoSolverState<T>, T>> {
    let start = Instant::now();
    let mut state = init_fcco_state(problem, config, w0)?;
    let mut trace = RunTrace::new(config.seed, config.trace_every);
    let mut failure = None;

    for t in 0..config.iterations {
        let outcome = match step(problem, &mut state, config, rule) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        if t % config.trace_every == 0 {
            let est_error = if config.track_estimator_error {
                let reference: Vec<Vec<T>> = (0..problem.num_blocks())
                    .map(|i| problem.exact_inner_value(i, &state.w))
                    .collect();
                Some(state.u.estimator_error(&reference)?)
            } else {
                None
            };
            let row = TraceRow {
                iteration: t,
                objective: Some(outcome.objective_estimate),
                step_norm: outcome.step_norm,
                est_error,
                moreau_grad: None,
            };
            if let Some(h) = hook.as_mut() {
                h(&state, &row);
            }
            trace.push(row);
        }
    }

    trace.meta.iterations = state.iteration;
    trace.meta.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(RunOutcome {
        state,
        trace,
        failure,
    })
}

/// Full MSVR run.
pub fn sonx_run<T: Scalar, P: FccoProblem<T> + ?Sized>(
    problem: &P,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
    hook: Option<Hook<'_, FccoSolverState<T>, T>>,
) -> Result<RunOutcome<FccoSolverState<T>, T>> {
    run(problem, config, w0, hook, TrackerRule::Msvr)
}

/// Full moving-average run (the `gamma = 0` variant with one fewer inner
/// evaluation per block per step).
pub fn sonx_run_ma<T: Scalar, P: FccoProblem<T> + ?Sized>(
    problem: &P,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
    hook: Option<Hook<'_, FccoSolverState<T>, T>>,
) -> Result<RunOutcome<FccoSolverState<T>, T>> {
    run(problem, config, w0, hook, TrackerRule::MovingAverage)
}
