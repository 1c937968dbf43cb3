//! Tri-level TPAUC training loop (multi-instance setting).
//!
//! Pooled bag scores are expensive, so each example keeps a projected
//! tracker `v_i` of its pooled score, refreshed from instance sub-batches.
//! The per-pair tracked quantity decouples into `v_j - v_i`. Positives'
//! trackers use `gamma1`, negatives' `gamma2`, and the middle tracker `u_i`
//! (the per-positive inner loss) uses `gamma3`.

use std::time::Instant;

use super::{
    cvar_term, cvar_term_subgradient, outer_f, outer_f_subgradient, pooled_score_grad,
    squared_hinge, squared_hinge_deriv, Pooling, TpaucModel,
};
use crate::config::SolverConfig;
use crate::error::{CcoError, Result};
use crate::estimators::BlockEstimatorState;
use crate::linalg::ParamVector;
use crate::rng::{sample_blocks, RngFactory, StreamKind};
use crate::scalar::Scalar;
use crate::solvers::{guard_iterate, Hook, RunOutcome, StepOutcome};
use crate::trace::{RunTrace, TraceRow};

#[derive(Clone, Debug)]
pub struct TpaucSontState<T> {
    pub w: ParamVector<T>,
    pub w_prev: ParamVector<T>,
    pub s: Vec<T>,
    pub s_prev: Vec<T>,
    pub s_prime: T,
    /// Tracked per-positive inner losses.
    pub u: BlockEstimatorState<T>,
    /// Tracked pooled scores, one scalar per example.
    pub v_pos: Vec<T>,
    pub v_neg: Vec<T>,
    pub v_pos_prev: Vec<T>,
    pub v_neg_prev: Vec<T>,
    pub iteration: u64,
    pub rng: RngFactory,
    pub(crate) initial_norm: T,
}

fn clamp_abs<T: Scalar>(x: T, radius: T) -> T {
    x.max(-radius).min(radius)
}

fn score_radius<T: Scalar>(model: &TpaucModel<'_, T>, config: &SolverConfig<T>) -> Result<T> {
    if let Some(r) = config.projection_radius {
        return Ok(r);
    }
    if model.scorer.sigmoid {
        // sigmoid instance scores lie in (0, 1), so pooled scores do too,
        // up to the smoothed-max offset correction
        return Ok(match model.pooling {
            Pooling::Mean => T::one(),
            Pooling::SmoothedMax { tau, offset } => T::one() + tau * offset.ln_1p(),
        });
    }
    Err(CcoError::invalid_config(
        "tri-level TPAUC without a sigmoid scorer needs an explicit projection_radius",
    ))
}

/// Instance sub-batch for one example; stream index keys positives by `i`
/// and negatives by `n_pos + j`.
fn instance_batch(
    rng: &RngFactory,
    iteration: u64,
    stream_index: u64,
    bag_len: usize,
    b3: usize,
) -> Result<Vec<usize>> {
    let take = b3.min(bag_len);
    sample_blocks(
        &mut rng.stream(iteration, StreamKind::InstanceBatch, stream_index),
        bag_len,
        take,
    )
}

/// Trackers start from one stochastic pooled evaluation per example, and
/// `u_{i,0}` from the tracked scores over an initial negative batch.
pub fn tpauc_sont_init<T: Scalar>(
    model: &TpaucModel<'_, T>,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
) -> Result<TpaucSontState<T>> {
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
    let radius = score_radius(model, config)?;
    let rng = RngFactory::new(config.seed);

    let mut v_pos = Vec::with_capacity(n_pos);
    for i in 0..n_pos {
        let bag = &model.dataset.positives[i];
        let ids = instance_batch(&rng, 0, i as u64, bag.len(), config.b3)?;
        let score = super::pooled_score(&model.scorer, &model.pooling, w0.as_slice(), bag, Some(&ids))?;
        v_pos.push(clamp_abs(score, radius));
    }
    let mut v_neg = Vec::with_capacity(n_neg);
    for j in 0..n_neg {
        let bag = &model.dataset.negatives[j];
        let ids = instance_batch(&rng, 0, (n_pos + j) as u64, bag.len(), config.b3)?;
        let score = super::pooled_score(&model.scorer, &model.pooling, w0.as_slice(), bag, Some(&ids))?;
        v_neg.push(clamp_abs(score, radius));
    }

    let mut u_values = Vec::with_capacity(n_pos);
    for i in 0..n_pos {
        let mut stream = rng.stream(0, StreamKind::Init, i as u64);
        let batch = sample_blocks(&mut stream, n_neg, config.b2)?;
        let mut acc = T::zero();
        for &j in &batch {
            acc = acc
                + cvar_term(
                    squared_hinge(v_neg[j] - v_pos[i], model.spec.margin),
                    T::zero(),
                    model.spec.beta,
                );
        }
        u_values.push(vec![acc / T::of(batch.len() as f64)]);
    }

    let initial_norm = w0.norm();
    Ok(TpaucSontState {
        w_prev: w0.clone(),
        w: w0,
        s: vec![T::zero(); n_pos],
        s_prev: vec![T::zero(); n_pos],
        s_prime: T::zero(),
        u: BlockEstimatorState::from_values(u_values)?,
        v_pos_prev: v_pos.clone(),
        v_neg_prev: v_neg.clone(),
        v_pos,
        v_neg,
        iteration: 0,
        rng,
        initial_norm,
    })
}

pub fn tpauc_sont_step<T: Scalar>(
    model: &TpaucModel<'_, T>,
    state: &mut TpaucSontState<T>,
    config: &SolverConfig<T>,
) -> Result<StepOutcome<T>> {
    let t = state.iteration;
    let n_pos = model.dataset.n_pos();
    let n_neg = model.dataset.n_neg();
    let radius = score_radius(model, config)?;
    let margin = model.spec.margin;
    let beta = model.spec.beta;

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

    // Stochastic pooled scores and gradients on per-example instance batches.
    let mut hp_curr = Vec::with_capacity(batch1.len());
    let mut hp_prev = Vec::with_capacity(batch1.len());
    let mut hp_grad = Vec::with_capacity(batch1.len());
    for &i in &batch1 {
        let bag = &model.dataset.positives[i];
        let ids = instance_batch(&state.rng, t, i as u64, bag.len(), config.b3)?;
        let (score, grad) =
            pooled_score_grad(&model.scorer, &model.pooling, state.w.as_slice(), bag, Some(&ids))?;
        hp_curr.push(score);
        hp_grad.push(grad);
        hp_prev.push(super::pooled_score(
            &model.scorer,
            &model.pooling,
            state.w_prev.as_slice(),
            bag,
            Some(&ids),
        )?);
    }
    let mut hn_curr = Vec::with_capacity(batch2.len());
    let mut hn_prev = Vec::with_capacity(batch2.len());
    let mut hn_grad = Vec::with_capacity(batch2.len());
    for &j in &batch2 {
        let bag = &model.dataset.negatives[j];
        let ids = instance_batch(&state.rng, t, (n_pos + j) as u64, bag.len(), config.b3)?;
        let (score, grad) =
            pooled_score_grad(&model.scorer, &model.pooling, state.w.as_slice(), bag, Some(&ids))?;
        hn_curr.push(score);
        hn_grad.push(grad);
        hn_prev.push(super::pooled_score(
            &model.scorer,
            &model.pooling,
            state.w_prev.as_slice(),
            bag,
            Some(&ids),
        )?);
    }

    // Tracker values entering this iteration and their previous-iteration
    // counterparts.
    let v_pos_t = state.v_pos.clone();
    let v_neg_t = state.v_neg.clone();
    let v_pos_old = state.v_pos_prev.clone();
    let v_neg_old = state.v_neg_prev.clone();

    // Projected tracker refresh (gamma1 for positives, gamma2 for negatives).
    for (k, &i) in batch1.iter().enumerate() {
        let fresh = (T::one() - config.tau1) * state.v_pos[i]
            + config.tau1 * hp_curr[k]
            + config.gamma1 * (hp_curr[k] - hp_prev[k]);
        state.v_pos[i] = clamp_abs(fresh, radius);
    }
    for (k, &j) in batch2.iter().enumerate() {
        let fresh = (T::one() - config.tau1) * state.v_neg[j]
            + config.tau1 * hn_curr[k]
            + config.gamma2 * (hn_curr[k] - hn_prev[k]);
        state.v_neg[j] = clamp_abs(fresh, radius);
    }

    // Middle values for the u update and the (s, w) subgradients.
    let fresh_reads = config.read_updated_estimates;
    let v_pos_used: Vec<T> = if fresh_reads {
        state.v_pos.clone()
    } else {
        v_pos_t.clone()
    };
    let v_neg_used: Vec<T> = if fresh_reads {
        state.v_neg.clone()
    } else {
        v_neg_t.clone()
    };
    let (v_pos_for_prev, v_neg_for_prev) = if fresh_reads {
        (&v_pos_t, &v_neg_t)
    } else {
        (&v_pos_old, &v_neg_old)
    };

    let mut middle_curr = Vec::with_capacity(batch1.len());
    let mut middle_prev = Vec::with_capacity(batch1.len());
    for &i in &batch1 {
        let mut row_curr = Vec::with_capacity(batch2.len());
        let mut row_prev = Vec::with_capacity(batch2.len());
        for &j in &batch2 {
            row_curr.push(vec![cvar_term(
                squared_hinge(v_neg_used[j] - v_pos_used[i], margin),
                state.s[i],
                beta,
            )]);
            row_prev.push(vec![cvar_term(
                squared_hinge(v_neg_for_prev[j] - v_pos_for_prev[i], margin),
                state.s_prev[i],
                beta,
            )]);
        }
        middle_curr.push(row_curr);
        middle_prev.push(row_prev);
    }

    let update_u = |state: &mut TpaucSontState<T>| -> Result<()> {
        state.u.tcco_u_update(
            &batch1,
            &middle_curr,
            &middle_prev,
            config.tau2,
            config.gamma3,
            t + 1,
        )
    };

    if fresh_reads {
        update_u(state)?;
    }
    let u_read: Vec<T> = batch1.iter().map(|&i| state.u.get(i)[0]).collect();
    if !fresh_reads {
        update_u(state)?;
    }

    // Steps on s (sampled), s', w.
    let inv_b1 = T::one() / T::of(batch1.len() as f64);
    let inv_b2 = T::one() / T::of(batch2.len() as f64);
    let s_scale = if config.scale_s_by_batch {
        inv_b1
    } else {
        T::one()
    };
    let s_now = state.s.clone();
    let mut grad_w = vec![T::zero(); state.w.dim()];
    let mut grad_sp = T::zero();
    let mut objective = T::zero();
    for (k, &i) in batch1.iter().enumerate() {
        let (df_u, df_sp) = outer_f_subgradient(u_read[k], state.s_prime, model.spec.alpha)?;
        objective = objective + outer_f(u_read[k], state.s_prime, model.spec.alpha)?;
        grad_sp = grad_sp + df_sp;

        let mut dg_s_mean = T::zero();
        for (l, &j) in batch2.iter().enumerate() {
            let delta = v_neg_used[j] - v_pos_used[i];
            let loss = squared_hinge(delta, margin);
            let (dg_v, dg_s) = cvar_term_subgradient(loss, s_now[i], beta);
            dg_s_mean = dg_s_mean + dg_s;
            if dg_v > T::zero() {
                let chain = df_u * dg_v * squared_hinge_deriv(delta, margin) * inv_b2 * inv_b1;
                for ((g, gn), gp) in grad_w
                    .iter_mut()
                    .zip(hn_grad[l].iter())
                    .zip(hp_grad[k].iter())
                {
                    *g = *g + chain * (*gn - *gp);
                }
            }
        }
        dg_s_mean = dg_s_mean * inv_b2;
        state.s[i] = state.s[i] - config.eta1 * s_scale * dg_s_mean * df_u;
    }
    objective = objective * inv_b1;

    state.s_prime = state.s_prime - config.eta2 * inv_b1 * grad_sp;

    let mut step_norm_sq = T::zero();
    state.w_prev = state.w.clone();
    for (w, g) in state.w.as_mut_slice().iter_mut().zip(grad_w.iter()) {
        let delta = config.eta * *g;
        *w = *w - delta;
        step_norm_sq = step_norm_sq + delta * delta;
    }
    state.s_prev = s_now;
    state.v_pos_prev = v_pos_t;
    state.v_neg_prev = v_neg_t;

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

pub fn tpauc_sont_run<T: Scalar>(
    model: &TpaucModel<'_, T>,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
    mut hook: Option<Hook<'_, TpaucSontState<T>, T>>,
) -> Result<RunOutcome<TpaucSontState<T>, T>> {
    let start = Instant::now();
    let mut state = tpauc_sont_init(model, config, w0)?;
    let mut trace = RunTrace::new(config.seed, config.trace_every);
    let mut failure = None;

    for t in 0..config.iterations {
        let outcome = match tpauc_sont_step(model, &mut state, config) {
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
