//! Two-level TPAUC training loop (regular learning setting).
//!
//! Per iteration: sample a positive batch and one shared negative batch,
//! refresh the tracked inner losses `u_i` with MSVR evaluated at
//! `(w_t, s_{i,t})` and `(w_{t-1}, s_{i,t-1})` on the same negatives, then
//! take subgradient steps on the sampled thresholds `s_i`, the global
//! threshold `s'`, and `w`.

use std::time::Instant;

use super::{outer_f, outer_f_subgradient, TpaucModel};
use crate::config::SolverConfig;
use crate::error::{CcoError, Result};
use crate::estimators::BlockEstimatorState;
use crate::linalg::ParamVector;
use crate::rng::{sample_blocks, RngFactory, StreamKind};
use crate::scalar::Scalar;
use crate::solvers::{guard_iterate, Hook, RunOutcome, StepOutcome};
use crate::trace::{RunTrace, TraceRow};

#[derive(Clone, Debug)]
pub struct TpaucSonxState<T> {
    pub w: ParamVector<T>,
    pub w_prev: ParamVector<T>,
    pub s: Vec<T>,
    pub s_prev: Vec<T>,
    pub s_prime: T,
    pub u: BlockEstimatorState<T>,
    pub iteration: u64,
    pub rng: RngFactory,
    pub(crate) initial_norm: T,
}

/// Thresholds start at zero (hinge-active start) and `u_{i,0}` comes from
/// one stochastic inner evaluation at `w0`.
pub fn tpauc_sonx_init<T: Scalar>(
    model: &TpaucModel<'_, T>,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
) -> Result<TpaucSonxState<T>> {
    let n_pos = model.dataset.n_pos();
    let n_neg = model.dataset.n_neg();
    config.validate_for_population(n_pos)?;
    if config.b2 > n_neg {
        return Err(CcoError::invalid_config(format!(
            "B2 = {} exceeds negative count {}",
            config.b2, n_neg
        )));
    }
    if w0.dim() != model.scorer.param_dim() {
        return Err(CcoError::contract(format!(
            "w0 has dimension {}, scorer expects {}",
            w0.dim(),
            model.scorer.param_dim()
        )));
    }
    let rng = RngFactory::new(config.seed);
    let mut u_values = Vec::with_capacity(n_pos);
    for i in 0..n_pos {
        let mut stream = rng.stream(0, StreamKind::Init, i as u64);
        let batch = sample_blocks(&mut stream, n_neg, config.b2)?;
        u_values.push(vec![model.psi_value(w0.as_slice(), T::zero(), i, &batch)?]);
    }
    let initial_norm = w0.norm();
    Ok(TpaucSonxState {
        w_prev: w0.clone(),
        w: w0,
        s: vec![T::zero(); n_pos],
        s_prev: vec![T::zero(); n_pos],
        s_prime: T::zero(),
        u: BlockEstimatorState::from_values(u_values)?,
        iteration: 0,
        rng,
        initial_norm,
    })
}

pub fn tpauc_sonx_step<T: Scalar>(
    model: &TpaucModel<'_, T>,
    state: &mut TpaucSonxState<T>,
    config: &SolverConfig<T>,
) -> Result<StepOutcome<T>> {
    let t = state.iteration;
    let n_pos = model.dataset.n_pos();
    let n_neg = model.dataset.n_neg();

    let batch1 = sample_blocks(
        &mut state.rng.stream(t, StreamKind::OuterBlocks, 0),
        n_pos,
        config.b1,
    )?;
    let batch2 = sample_blocks(
        &mut state.rng.stream(t, StreamKind::MiddleBlocks, 0),
        n_neg,
        config.b2,
    )?;

    // Inner evaluations on the shared negative batch, at the current and
    // previous (w, s) pairs.
    let mut curr_evals = Vec::with_capacity(batch1.len());
    let mut curr_values = Vec::with_capacity(batch1.len());
    let mut prev_values = Vec::with_capacity(batch1.len());
    for &i in &batch1 {
        let eval = model.psi_eval(state.w.as_slice(), state.s[i], i, &batch2)?;
        curr_values.push(vec![eval.value]);
        curr_evals.push(eval);
        prev_values.push(vec![model.psi_value(
            state.w_prev.as_slice(),
            state.s_prev[i],
            i,
            &batch2,
        )?]);
    }

    let update_u = |state: &mut TpaucSonxState<T>| -> Result<()> {
        state.u.msvr_update(
            &batch1,
            &curr_values,
            &prev_values,
            config.tau,
            config.gamma,
            t + 1,
        )
    };

    if config.read_updated_estimates {
        update_u(state)?;
    }
    let u_read: Vec<T> = batch1.iter().map(|&i| state.u.get(i)[0]).collect();
    if !config.read_updated_estimates {
        update_u(state)?;
    }

    // Subgradient steps on s (sampled coordinates), s' and w, all from the
    // same tracker read.
    let inv_b1 = T::one() / T::of(batch1.len() as f64);
    let s_scale = if config.scale_s_by_batch {
        inv_b1
    } else {
        T::one()
    };
    let mut grad_w = vec![T::zero(); state.w.dim()];
    let mut grad_sp = T::zero();
    let mut objective = T::zero();
    let s_now = state.s.clone();
    for (k, &i) in batch1.iter().enumerate() {
        let (df_u, df_sp) = outer_f_subgradient(u_read[k], state.s_prime, model.spec.alpha)?;
        objective = objective + outer_f(u_read[k], state.s_prime, model.spec.alpha)?;
        grad_sp = grad_sp + df_sp;
        for (g, p) in grad_w.iter_mut().zip(curr_evals[k].grad_w.iter()) {
            *g = *g + df_u * *p;
        }
        state.s[i] = state.s[i] - config.eta1 * s_scale * curr_evals[k].grad_s * df_u;
    }
    objective = objective * inv_b1;

    state.s_prime = state.s_prime - config.eta2 * inv_b1 * grad_sp;

    let mut step_norm_sq = T::zero();
    state.w_prev = state.w.clone();
    for (w, g) in state.w.as_mut_slice().iter_mut().zip(grad_w.iter()) {
        let delta = config.eta * inv_b1 * *g;
        *w = *w - delta;
        step_norm_sq = step_norm_sq + delta * delta;
    }
    state.s_prev = s_now;

    if !state.w.is_finite() || !state.s_prime.is_finite() {
        return Err(CcoError::RunAborted {
            iteration: t,
            reason: "non-finite iterate".into(),
        });
    }
    guard_iterate(&state.w, state.initial_norm, config.divergence_factor, t)?;
    state.iteration = t + 1;

    Ok(StepOutcome {
        objective_estimate: objective,
        step_norm: step_norm_sq.sqrt(),
    })
}

pub fn tpauc_sonx_run<T: Scalar>(
    model: &TpaucModel<'_, T>,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
    mut hook: Option<Hook<'_, TpaucSonxState<T>, T>>,
) -> Result<RunOutcome<TpaucSonxState<T>, T>> {
    let start = Instant::now();
    let mut state = tpauc_sonx_init(model, config, w0)?;
    let mut trace = RunTrace::new(config.seed, config.trace_every);
    let mut failure = None;

    for t in 0..config.iterations {
        let outcome = match tpauc_sonx_step(model, &mut state, config) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        if t % config.trace_every == 0 {
            let row = TraceRow {
                iteration: t,
                objective: Some(outcome.objective_estimate),
                step_norm: outcome.step_norm,
                est_error: None,
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
