//! Problem interfaces for two-level (FCCO) and tri-level (TCCO) coupled
//! compositional objectives.
//!
//! An FCCO objective is `F(w) = (1/n) sum_i f_i(g_i(w))` where each inner
//! map `g_i` is an expectation estimated on sample batches, and each outer
//! `f_i` has a closed form. A TCCO objective nests one more level:
//! `F(w) = (1/n1) sum_i f_i((1/n2) sum_j g_i(h_ij(w)))`.
//!
//! Sampling randomness lives entirely in the batch argument: with identical
//! batches, evaluations are deterministic.

use crate::linalg::{Jacobian, ParamVector};
use crate::scalar::Scalar;

/// Regularity constants declared by an FCCO problem author.
///
/// `rho_*` are weak-convexity moduli, `c_*` Lipschitz constants and `sigma`
/// the bound on the standard deviation of the stochastic inner estimators.
/// They are metadata: the diagnostics module can empirically falsify them
/// but the solvers never infer them.
#[derive(Clone, Copy, Debug)]
pub struct FccoConstants<T> {
    pub rho_f: T,
    pub rho_g: T,
    pub c_f: T,
    pub c_g: T,
    pub sigma: T,
}

impl<T: Scalar> FccoConstants<T> {
    /// Weak-convexity modulus of the full objective,
    /// `sqrt(d1) * rho_g * C_f + rho_f * C_g^2`.
    pub fn rho_objective(&self, inner_dim: usize) -> T {
        T::of((inner_dim as f64).sqrt()) * self.rho_g * self.c_f + self.rho_f * self.c_g * self.c_g
    }

    /// Envelope parameter `rho_F + rho_g C_f + 2 rho_f C_g^2` used by the
    /// convergence diagnostics.
    pub fn rho_bar(&self, inner_dim: usize) -> T {
        self.rho_objective(inner_dim)
            + self.rho_g * self.c_f
            + T::of(2.0) * self.rho_f * self.c_g * self.c_g
    }

    /// `C_f * C_g`, a bound on the norm of every stochastic gradient.
    pub fn gradient_bound(&self) -> T {
        self.c_f * self.c_g
    }
}

/// Regularity constants for a TCCO problem.
#[derive(Clone, Copy, Debug)]
pub struct TccoConstants<T> {
    pub rho_f: T,
    pub rho_g: T,
    pub c_f: T,
    pub c_g: T,
    pub c_h: T,
    pub l_h: T,
    /// Bound on `||h_ij(w)||`; also the projection radius for tracked values.
    pub h_bound: T,
    pub sigma: T,
}

impl<T: Scalar> TccoConstants<T> {
    /// `sqrt(d1) * (sqrt(d2) L_h C_g + rho_g C_h^2) C_f + rho_f C_g^2 C_h^2`.
    pub fn rho_objective(&self, middle_dim: usize, inner_dim: usize) -> T {
        let sqrt_d1 = T::of((middle_dim as f64).sqrt());
        let sqrt_d2 = T::of((inner_dim as f64).sqrt());
        sqrt_d1 * (sqrt_d2 * self.l_h * self.c_g + self.rho_g * self.c_h * self.c_h) * self.c_f
            + self.rho_f * self.c_g * self.c_g * self.c_h * self.c_h
    }

    /// `C_f * C_g * C_h`, a bound on the norm of every stochastic gradient.
    pub fn gradient_bound(&self) -> T {
        self.c_f * self.c_g * self.c_h
    }

    /// Envelope parameter
    /// `rho_F + 4 rho_f C_g^2 + 2 rho_g C_f C_h^2 + C_f C_g L_h`.
    pub fn rho_bar(&self, middle_dim: usize, inner_dim: usize) -> T {
        self.rho_objective(middle_dim, inner_dim)
            + T::of(4.0) * self.rho_f * self.c_g * self.c_g
            + T::of(2.0) * self.rho_g * self.c_f * self.c_h * self.c_h
            + self.c_f * self.c_g * self.l_h
    }
}

/// Two-level problem: outer `f_i` closed-form, inner `g_i` stochastic.
pub trait FccoProblem<T: Scalar>: Send + Sync {
    /// Number of outer blocks `n`.
    fn num_blocks(&self) -> usize;

    /// Decision-variable dimension `d`.
    fn dim(&self) -> usize;

    /// Inner output dimension `d1`.
    fn inner_dim(&self) -> usize;

    /// Size of the empirical sample space behind block `i`'s distribution.
    fn sample_space(&self, block: usize) -> u64;

    /// Stochastic estimate of `g_i(w)` on a sample batch (length `d1`).
    fn inner_value(&self, block: usize, w: &ParamVector<T>, batch: &[u64]) -> Vec<T>;

    /// Stochastic estimate of the subjacobian of `g_i` at `w` (`d x d1`).
    fn inner_subjacobian(&self, block: usize, w: &ParamVector<T>, batch: &[u64]) -> Jacobian<T>;

    /// Exact `g_i(w)` (full-population evaluation), for oracles and traces.
    fn exact_inner_value(&self, block: usize, w: &ParamVector<T>) -> Vec<T>;

    /// Exact subjacobian of `g_i` at `w`.
    fn exact_inner_subjacobian(&self, block: usize, w: &ParamVector<T>) -> Jacobian<T>;

    /// Outer value `f_i(u)`.
    fn outer_value(&self, block: usize, u: &[T]) -> T;

    /// One subgradient of `f_i` at `u` (length `d1`), with the fixed
    /// hinge-at-zero convention.
    fn outer_subgradient(&self, block: usize, u: &[T]) -> Vec<T>;

    fn constants(&self) -> FccoConstants<T>;
}

/// Tri-level problem: outer `f_i`, middle `g_i` (closed form), innermost
/// `h_ij` stochastic.
pub trait TccoProblem<T: Scalar>: Send + Sync {
    /// Number of outer blocks `n1`.
    fn outer_blocks(&self) -> usize;

    /// Number of middle blocks `n2`.
    fn middle_blocks(&self) -> usize;

    fn dim(&self) -> usize;

    /// Middle output dimension `d1` (input of `f_i`).
    fn middle_dim(&self) -> usize;

    /// Innermost output dimension `d2` (input of `g_i`).
    fn inner_dim(&self) -> usize;

    fn sample_space(&self, i: usize, j: usize) -> u64;

    /// Stochastic estimate of `h_ij(w)` (length `d2`).
    fn innermost_value(&self, i: usize, j: usize, w: &ParamVector<T>, batch: &[u64]) -> Vec<T>;

    /// Stochastic estimate of the jacobian of `h_ij` at `w` (`d x d2`).
    fn innermost_jacobian(&self, i: usize, j: usize, w: &ParamVector<T>, batch: &[u64])
        -> Jacobian<T>;

    fn exact_innermost_value(&self, i: usize, j: usize, w: &ParamVector<T>) -> Vec<T>;

    fn exact_innermost_jacobian(&self, i: usize, j: usize, w: &ParamVector<T>) -> Jacobian<T>;

    /// Middle value `g_i(v)` (length `d1`).
    fn middle_value(&self, i: usize, v: &[T]) -> Vec<T>;

    /// Subjacobian of `g_i` at `v` (`d2 x d1`).
    fn middle_subjacobian(&self, i: usize, v: &[T]) -> Jacobian<T>;

    fn outer_value(&self, i: usize, u: &[T]) -> T;

    fn outer_subgradient(&self, i: usize, u: &[T]) -> Vec<T>;

    fn constants(&self) -> TccoConstants<T>;
}

/// Exact objective `F(w) = (1/n) sum_i f_i(g_i(w))`.
pub fn fcco_objective<T: Scalar, P: FccoProblem<T> + ?Sized>(problem: &P, w: &ParamVector<T>) -> T {
    let n = problem.num_blocks();
    let mut acc = T::zero();
    for i in 0..n {
        let g = problem.exact_inner_value(i, w);
        acc = acc + problem.outer_value(i, &g);
    }
    acc / T::of(n as f64)
}

/// Exact objective `F(w) = (1/n1) sum_i f_i((1/n2) sum_j g_i(h_ij(w)))`.
pub fn tcco_objective<T: Scalar, P: TccoProblem<T> + ?Sized>(problem: &P, w: &ParamVector<T>) -> T {
    let n1 = problem.outer_blocks();
    let n2 = problem.middle_blocks();
    let d1 = problem.middle_dim();
    let mut acc = T::zero();
    for i in 0..n1 {
        let mut mean = vec![T::zero(); d1];
        for j in 0..n2 {
            let h = problem.exact_innermost_value(i, j, w);
            let g = problem.middle_value(i, &h);
            for (m, v) in mean.iter_mut().zip(g.iter()) {
                *m = *m + *v;
            }
        }
        let inv = T::one() / T::of(n2 as f64);
        for m in mean.iter_mut() {
            *m = *m * inv;
        }
        acc = acc + problem.outer_value(i, &mean);
    }
    acc / T::of(n1 as f64)
}
