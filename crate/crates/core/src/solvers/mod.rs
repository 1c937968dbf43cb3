//! Single-loop stochastic solvers.
//!
//! `sonx` runs the two-level loop: sample outer blocks, refresh the tracked
//! inner values with an MSVR (or moving-average) update, form the chained
//! stochastic subgradient, and take a subgradient step. `sont` runs the
//! tri-level loop with an extra projected tracker for innermost values.

mod sonx;
mod sont;

pub use sonx::{init_fcco_state, sonx_gradient, sonx_run, sonx_run_ma, sonx_step, sonx_step_ma};
pub use sont::{init_tcco_state, sont_gradient, sont_run, sont_run_ma, sont_step, sont_step_ma};

use crate::error::CcoError;
use crate::estimators::{BlockEstimatorState, PairEstimatorState};
use crate::linalg::ParamVector;
use crate::rng::RngFactory;
use crate::scalar::Scalar;
use crate::trace::{RunTrace, TraceRow};

/// Mutable state of a two-level run.
#[derive(Clone, Debug)]
pub struct FccoSolverState<T> {
    pub w: ParamVector<T>,
    pub w_prev: ParamVector<T>,
    pub u: BlockEstimatorState<T>,
    pub iteration: u64,
    pub rng: RngFactory,
    pub(crate) initial_norm: T,
}

/// Mutable state of a tri-level run.
#[derive(Clone, Debug)]
pub struct TccoSolverState<T> {
    pub w: ParamVector<T>,
    pub w_prev: ParamVector<T>,
    pub u: BlockEstimatorState<T>,
    pub v: PairEstimatorState<T>,
    pub iteration: u64,
    pub rng: RngFactory,
    pub(crate) initial_norm: T,
}

/// Per-step scalars surfaced to traces.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome<T> {
    pub objective_estimate: T,
    pub step_norm: T,
}

/// A completed (or aborted) run. On abort the state and trace cover the
/// iterations that finished.
#[derive(Debug)]
pub struct RunOutcome<S, T> {
    pub state: S,
    pub trace: RunTrace<T>,
    pub failure: Option<CcoError>,
}

impl<S, T> RunOutcome<S, T> {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Per-iteration observer; receives the post-step state and the trace row.
pub type Hook<'a, S, T> = &'a mut dyn FnMut(&S, &TraceRow<T>);

pub(crate) fn guard_iterate<T: Scalar>(
    w: &ParamVector<T>,
    initial_norm: T,
    factor: T,
    iteration: u64,
) -> Result<(), CcoError> {
    if !w.is_finite() {
        return Err(CcoError::RunAborted {
            iteration,
            reason: "iterate became non-finite".into(),
        });
    }
    if w.norm() > factor * (T::one() + initial_norm) {
        return Err(CcoError::RunAborted {
            iteration,
            reason: format!(
                "divergence guard: ||w|| exceeded {factor} * (1 + initial norm)"
            ),
        });
    }
    Ok(())
}
