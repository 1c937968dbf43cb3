//! Tri-level single loop.

use std::collections::HashMap;
use std::time::Instant;

use super::{guard_iterate, Hook, RunOutcome, StepOutcome, TccoSolverState};
use crate::config::SolverConfig;
use crate::error::{CcoError, Result};
use crate::estimators::{BlockEstimatorState, PairEstimatorState};
use crate::linalg::ParamVector;
use crate::problem::TccoProblem;
use crate::rng::{sample_blocks, sample_ids, RngFactory, StreamKind};
use crate::scalar::Scalar;
use crate::trace::{RunTrace, TraceRow};

#[derive(Clone, Copy, PartialEq)]
enum TrackerRule {
    Msvr,
    MovingAverage,
}

fn pair_index(i: usize, j: usize, n2: usize) -> u64 {
    (i * n2 + j) as u64
}

fn projection_radius<T: Scalar, P: TccoProblem<T> + ?Sized>(
    problem: &P,
    config: &SolverConfig<T>,
) -> T {
    config
        .projection_radius
        .unwrap_or_else(|| problem.constants().h_bound)
}

/// Builds the initial state. Innermost trackers start at
/// `v_{ij,0} = h_ij(w0; batch)` for every pair (or lazily when requested);
/// middle trackers start from one stochastic evaluation over an initial
/// middle batch.
pub fn init_tcco_state<T: Scalar, P: TccoProblem<T> + ?Sized>(
    problem: &P,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
    lazy_pairs: bool,
) -> Result<TccoSolverState<T>> {
    config.validate_for_population(problem.outer_blocks())?;
    let n1 = problem.outer_blocks();
    let n2 = problem.middle_blocks();
    if config.b2 > n2 {
        return Err(CcoError::invalid_config(format!(
            "B2 = {} exceeds middle block count n2 = {}",
            config.b2, n2
        )));
    }
    if w0.dim() != problem.dim() {
        return Err(CcoError::contract(format!(
            "w0 has dimension {}, problem expects {}",
            w0.dim(),
            problem.dim()
        )));
    }
    let radius = projection_radius(problem, config);
    if radius <= T::zero() {
        return Err(CcoError::invalid_config(
            "tri-level runs need a positive projection radius",
        ));
    }
    let rng = RngFactory::new(config.seed);

    let eval_h0 = |i: usize, j: usize| -> Result<Vec<T>> {
        let mut stream = rng.stream(0, StreamKind::Init, pair_index(i, j, n2));
        let space = problem.sample_space(i, j);
        let batch = sample_ids(&mut stream, space, config.b3.min(space as usize))?;
        Ok(problem.innermost_value(i, j, &w0, &batch))
    };

    let mut v = if lazy_pairs {
        PairEstimatorState::lazy(problem.inner_dim())
    } else {
        let mut values = HashMap::new();
        for i in 0..n1 {
            for j in 0..n2 {
                values.insert((i, j), eval_h0(i, j)?);
            }
        }
        PairEstimatorState::from_values(values, problem.inner_dim())?
    };

    let mut u_values = Vec::with_capacity(n1);
    for i in 0..n1 {
        let mut stream = rng.stream(0, StreamKind::Init, (n1 * n2 + i) as u64);
        let middle = sample_blocks(&mut stream, n2, config.b2)?;
        let mut mean = vec![T::zero(); problem.middle_dim()];
        for &j in &middle {
            if v.get(i, j).is_none() {
                let h0 = eval_h0(i, j)?;
                v.ensure(i, j, &h0)?;
            }
            let g = problem.middle_value(i, v.get(i, j).expect("ensured"));
            for (m, x) in mean.iter_mut().zip(g.iter()) {
                *m = *m + *x;
            }
        }
        let inv = T::one() / T::of(middle.len() as f64);
        for m in mean.iter_mut() {
            *m = *m * inv;
        }
        u_values.push(mean);
    }

    let initial_norm = w0.norm();
    Ok(TccoSolverState {
        w_prev: w0.clone(),
        w: w0,
        u: BlockEstimatorState::from_values(u_values)?,
        v,
        iteration: 0,
        rng,
        initial_norm,
    })
}

/// Chained tri-level stochastic subgradient
/// `(1/B1) sum_i [ (1/B2) sum_j Jh_ij * dg_i(v_ij) ] * df_i(u_i)`,
/// with caller-supplied innermost jacobians and tracker values.
pub fn sont_gradient<T: Scalar, P: TccoProblem<T> + ?Sized>(
    problem: &P,
    w_dim: usize,
    batch1: &[usize],
    batch2: &[usize],
    jacobians: &HashMap<(usize, usize), crate::linalg::Jacobian<T>>,
    v_values: &HashMap<(usize, usize), Vec<T>>,
    u_values: &[Vec<T>],
) -> Result<ParamVector<T>> {
    if u_values.len() != batch1.len() {
        return Err(CcoError::contract(
            "sont gradient needs one tracked middle value per outer block",
        ));
    }
    let mut grad = ParamVector::zeros(w_dim);
    let inv_b2 = T::one() / T::of(batch2.len() as f64);
    for (bi, &i) in batch1.iter().enumerate() {
        let df = problem.outer_subgradient(i, &u_values[bi]);
        let mut per_block = vec![T::zero(); w_dim];
        for &j in batch2 {
            let v = v_values
                .get(&(i, j))
                .ok_or_else(|| CcoError::contract(format!("missing v value for pair ({i},{j})")))?;
            let dg = problem.middle_subjacobian(i, v);
            let pulled = dg.matvec(&df); // length d2
            let jac = jacobians
                .get(&(i, j))
                .ok_or_else(|| CcoError::contract(format!("missing jacobian for pair ({i},{j})")))?;
            let chain = jac.matvec(&pulled); // length d
            for (acc, c) in per_block.iter_mut().zip(chain.iter()) {
                *acc = *acc + *c * inv_b2;
            }
        }
        for (g, c) in grad.as_mut_slice().iter_mut().zip(per_block.iter()) {
            *g = *g + *c;
        }
    }
    grad.scale(T::one() / T::of(batch1.len() as f64));
    Ok(grad)
}

fn step<T: Scalar, P: TccoProblem<T> + ?Sized>(
    problem: &P,
    state: &mut TccoSolverState<T>,
    config: &SolverConfig<T>,
    rule: TrackerRule,
) -> Result<StepOutcome<T>> {
    let t = state.iteration;
    let n1 = problem.outer_blocks();
    let n2 = problem.middle_blocks();
    let radius = projection_radius(problem, config);

    let batch1 = sample_blocks(
        &mut state.rng.stream(t, StreamKind::OuterBlocks, 0),
        n1,
        config.b1,
    )?;
    let batch2 = sample_blocks(
        &mut state.rng.stream(t, StreamKind::MiddleBlocks, 0),
        n2,
        config.b2,
    )?;

    // Evaluate the innermost maps once per sampled pair, on one shared batch
    // per pair for values (current and previous iterate) and jacobian.
    let mut h_curr = HashMap::new();
    let mut h_prev = HashMap::new();
    let mut jacobians = HashMap::new();
    let mut v_before = HashMap::new();
    let mut v_old = HashMap::new();
    for &i in &batch1 {
        for &j in &batch2 {
            let mut stream = state
                .rng
                .stream(t, StreamKind::InnerSamples, pair_index(i, j, n2));
            let space = problem.sample_space(i, j);
            let inner = sample_ids(&mut stream, space, config.b3.min(space as usize))?;
            let curr = problem.innermost_value(i, j, &state.w, &inner);
            if rule == TrackerRule::Msvr {
                h_prev.insert((i, j), problem.innermost_value(i, j, &state.w_prev, &inner));
            }
            jacobians.insert((i, j), problem.innermost_jacobian(i, j, &state.w, &inner));
            state.v.ensure(i, j, &curr)?;
            v_before.insert((i, j), state.v.get(i, j).expect("ensured").to_vec());
            v_old.insert(
                (i, j),
                state.v.previous(i, j).expect("ensured").to_vec(),
            );
            h_curr.insert((i, j), curr);
        }
    }

    let update_v = |state: &mut TccoSolverState<T>| -> Result<()> {
        for &i in &batch1 {
            for &j in &batch2 {
                let curr = &h_curr[&(i, j)];
                match rule {
                    TrackerRule::Msvr => state.v.msvr_update_projected(
                        i,
                        j,
                        curr,
                        &h_prev[&(i, j)],
                        config.tau1,
                        config.gamma1,
                        radius,
                    )?,
                    // no projection and no correction term in this variant
                    TrackerRule::MovingAverage => {
                        state.v.update(i, j, curr, curr, config.tau1, T::zero())?
                    }
                }
            }
        }
        Ok(())
    };

    // Middle values feeding the u update: the stated order reads the
    // trackers as they were entering this iteration (and their previous
    // values for the correction); the flag switches to the freshly updated
    // trackers.
    let mut middle_curr: Vec<Vec<Vec<T>>> = Vec::with_capacity(batch1.len());
    let mut middle_prev: Vec<Vec<Vec<T>>> = Vec::with_capacity(batch1.len());
    let mut v_for_grad: HashMap<(usize, usize), Vec<T>> = HashMap::new();

    let collect_middle = |state: &TccoSolverState<T>,
                          fresh: bool,
                          middle_curr: &mut Vec<Vec<Vec<T>>>,
                          middle_prev: &mut Vec<Vec<Vec<T>>>,
                          v_for_grad: &mut HashMap<(usize, usize), Vec<T>>| {
        for &i in &batch1 {
            let mut row_curr = Vec::with_capacity(batch2.len());
            let mut row_prev = Vec::with_capacity(batch2.len());
            for &j in &batch2 {
                let (curr_v, prev_v) = if fresh {
                    (
                        state.v.get(i, j).expect("ensured").to_vec(),
                        v_before[&(i, j)].clone(),
                    )
                } else {
                    (v_before[&(i, j)].clone(), v_old[&(i, j)].clone())
                };
                row_curr.push(problem.middle_value(i, &curr_v));
                row_prev.push(problem.middle_value(i, &prev_v));
                v_for_grad.insert((i, j), curr_v);
            }
            middle_curr.push(row_curr);
            middle_prev.push(row_prev);
        }
    };

    let gradient;
    let u_for_grad: Vec<Vec<T>>;
    if config.read_updated_estimates {
        update_v(state)?;
        collect_middle(
            state,
            true,
            &mut middle_curr,
            &mut middle_prev,
            &mut v_for_grad,
        );
        update_u(state, &batch1, &middle_curr, &middle_prev, config, rule, t)?;
        u_for_grad = batch1.iter().map(|&i| state.u.get(i).to_vec()).collect();
        gradient = sont_gradient(
            problem,
            problem.dim(),
            &batch1,
            &batch2,
            &jacobians,
            &v_for_grad,
            &u_for_grad,
        )?;
    } else {
        collect_middle(
            state,
            false,
            &mut middle_curr,
            &mut middle_prev,
            &mut v_for_grad,
        );
        u_for_grad = batch1.iter().map(|&i| state.u.get(i).to_vec()).collect();
        gradient = sont_gradient(
            problem,
            problem.dim(),
            &batch1,
            &batch2,
            &jacobians,
            &v_for_grad,
            &u_for_grad,
        )?;
        update_v(state)?;
        update_u(state, &batch1, &middle_curr, &middle_prev, config, rule, t)?;
    }

    if !gradient.is_finite() {
        return Err(CcoError::RunAborted {
            iteration: t,
            reason: "non-finite gradient".into(),
        });
    }

    let mut objective = T::zero();
    for &i in &batch1 {
        objective = objective + problem.outer_value(i, state.u.get(i));
    }
    objective = objective / T::of(batch1.len() as f64);

    state.w_prev = state.w.clone();
    state.w.add_scaled(-config.eta, &gradient);
    guard_iterate(&state.w, state.initial_norm, config.divergence_factor, t)?;
    state.v.commit_iteration();
    state.iteration = t + 1;

    Ok(StepOutcome {
        objective_estimate: objective,
        step_norm: config.eta * gradient.norm(),
    })
}

fn update_u<T: Scalar>(
    state: &mut TccoSolverState<T>,
    batch1: &[usize],
    middle_curr: &[Vec<Vec<T>>],
    middle_prev: &[Vec<Vec<T>>],
    config: &SolverConfig<T>,
    rule: TrackerRule,
    t: u64,
) -> Result<()> {
    let gamma2 = match rule {
        TrackerRule::Msvr => config.gamma2,
        TrackerRule::MovingAverage => T::zero(),
    };
    state
        .u
        .tcco_u_update(batch1, middle_curr, middle_prev, config.tau2, gamma2, t + 1)
}

/// One iteration with projected MSVR trackers.
pub fn sont_step<T: Scalar, P: TccoProblem<T> + ?Sized>(
    problem: &P,
    state: &mut TccoSolverState<T>,
    config: &SolverConfig<T>,
) -> Result<StepOutcome<T>> {
    step(problem, state, config, TrackerRule::Msvr)
}

/// One iteration with plain moving averages (no projection, no correction).
pub fn sont_step_ma<T: Scalar, P: TccoProblem<T> + ?Sized>(
    problem: &P,
    state: &mut TccoSolverState<T>,
    config: &SolverConfig<T>,
) -> Result<StepOutcome<T>> {
    step(problem, state, config, TrackerRule::MovingAverage)
}

fn run<T: Scalar, P: TccoProblem<T> + ?Sized>(
    problem: &P,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
    mut hook: Option<Hook<'_, TccoSolverState<T>, T>>,
    rule: TrackerRule,
    lazy_pairs: bool,
) -> Result<RunOutcome<TccoSolverState<T>, T>> {
    let start = Instant::now();
    let mut state = init_tcco_state(problem, config, w0, lazy_pairs)?;
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

/// Full tri-level MSVR run.
pub fn sont_run<T: Scalar, P: TccoProblem<T> + ?Sized>(
    problem: &P,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
    hook: Option<Hook<'_, TccoSolverState<T>, T>>,
) -> Result<RunOutcome<TccoSolverState<T>, T>> {
    run(problem, config, w0, hook, TrackerRule::Msvr, false)
}

/// Full tri-level moving-average run.
pub fn sont_run_ma<T: Scalar, P: TccoProblem<T> + ?Sized>(
    problem: &P,
    config: &SolverConfig<T>,
    w0: ParamVector<T>,
    hook: Option<Hook<'_, TccoSolverState<T>, T>>,
) -> Result<RunOutcome<TccoSolverState<T>, T>> {
    run(problem, config, w0, hook, TrackerRule::MovingAverage, false)
}
