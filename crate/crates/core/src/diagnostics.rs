//! Convergence measurement: proximal points and Moreau-envelope gradients,
//! exact full-batch subgradient oracles, weak-convexity probes and finite
//! difference checks. Everything here is pure given its inputs and never
//! feeds back into training.

use rand::Rng;

use crate::error::{CcoError, Result};
use crate::linalg::ParamVector;
use crate::problem::{fcco_objective, FccoProblem, TccoProblem};
use crate::rng::standard_normal;
use crate::scalar::Scalar;

/// Full-batch objective with a value, one subgradient, and a declared
/// weak-convexity modulus.
pub trait Objective<T: Scalar> {
    fn dim(&self) -> usize;
    fn value(&self, x: &ParamVector<T>) -> T;
    fn subgradient(&self, x: &ParamVector<T>) -> ParamVector<T>;
    /// Declared weak-convexity modulus of the objective.
    fn weak_convexity(&self) -> T;
}

/// Envelope parameters. The envelope is `F_{1/rho_bar}` (`lambda = 1/rho_bar`);
/// the proximal subproblem is `(rho_bar - rho_F)`-strongly convex, so
/// `rho_bar` must exceed the declared modulus.
#[derive(Clone, Copy, Debug)]
pub struct MoreauConfig<T> {
    pub rho_bar: T,
    pub inner_iterations: usize,
    /// Step-size multiplier: inner step `k` uses `inner_step / (mu * k)`.
    pub inner_step: T,
    pub restarts: usize,
}

impl<T: Scalar> MoreauConfig<T> {
    pub fn new(rho_bar: T) -> Self {
        MoreauConfig {
            rho_bar,
            inner_iterations: 20_000,
            inner_step: T::one(),
            restarts: 2,
        }
    }
}

/// Result of one proximal-point computation.
#[derive(Clone, Debug)]
pub struct ProxReport<T> {
    pub point: ParamVector<T>,
    /// `F(y) + (rho_bar/2) ||y - x||^2` at the returned point.
    pub subproblem_value: T,
    /// Subproblem improvement over the final sweep; a convergence indicator.
    pub last_sweep_improvement: T,
}

/// Approximates `argmin_y F(y) + (rho_bar / 2) ||y - x||^2` by subgradient
/// descent with step `c / (mu k)`, keeping the best iterate by exact
/// subproblem value across restart sweeps.
pub fn prox_point<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    x: &ParamVector<T>,
    cfg: &MoreauConfig<T>,
) -> Result<ProxReport<T>> {
    let rho_f = objective.weak_convexity();
    if cfg.rho_bar <= rho_f {
        return Err(CcoError::invalid_config(format!(
            "rho_bar = {} must exceed the declared weak-convexity modulus {}",
            cfg.rho_bar, rho_f
        )));
    }
    let mu = cfg.rho_bar - rho_f;
    let subproblem = |y: &ParamVector<T>| -> T {
        let v = objective.value(y);
        if !v.is_finite() {
            return T::infinity();
        }
        v + cfg.rho_bar / T::of(2.0) * y.distance(x).powi(2)
    };

    let mut best = x.clone();
    let mut best_value = subproblem(x);
    if !best_value.is_finite() {
        return Err(CcoError::contract("objective non-finite at the base point"));
    }
    let mut k_global = 0usize;
    let mut last_improvement = T::zero();
    for _ in 0..cfg.restarts.max(1) {
        let sweep_start = best_value;
        let mut y = best.clone();
        let mut avg = y.clone();
        let mut avg_weight = T::zero();
        for _ in 0..cfg.inner_iterations {
            k_global += 1;
            let mut g = objective.subgradient(&y);
            g.add_scaled(cfg.rho_bar, &y.sub(x));
            let step = cfg.inner_step / (mu * T::of(k_global as f64));
            y.add_scaled(-step, &g);
            let value = subproblem(&y);
            if value < best_value {
                best_value = value;
                best = y.clone();
            }
            // weighted average favoring late iterates
            let weight = T::of(k_global as f64);
            avg.scale(avg_weight / (avg_weight + weight));
            avg.add_scaled(weight / (avg_weight + weight), &y);
            avg_weight = avg_weight + weight;
        }
        let avg_value = subproblem(&avg);
        if avg_value < best_value {
            best_value = avg_value;
            best = avg.clone();
        }
        last_improvement = sweep_start - best_value;
    }
    Ok(ProxReport {
        point: best,
        subproblem_value: best_value,
        last_sweep_improvement: last_improvement,
    })
}

/// Moreau gradient-norm estimate and the descent sanity check.
#[derive(Clone, Debug)]
pub struct MoreauEstimate<T> {
    pub grad_norm: T,
    pub prox: ParamVector<T>,
    pub value_at_x: T,
    pub value_at_prox: T,
    /// `F(prox(x)) <= F(x)` up to the inner-solver slack.
    pub descent_ok: bool,
}

/// `rho_bar * ||x - prox(x)||`, the stationarity measure for weakly convex
/// objectives.
pub fn moreau_grad_norm<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    x: &ParamVector<T>,
    cfg: &MoreauConfig<T>,
) -> Result<MoreauEstimate<T>> {
    let report = prox_point(objective, x, cfg)?;
    let value_at_x = objective.value(x);
    let value_at_prox = objective.value(&report.point);
    let slack = T::of(1e-9) + report.last_sweep_improvement.abs();
    Ok(MoreauEstimate {
        grad_norm: cfg.rho_bar * x.distance(&report.point),
        descent_ok: value_at_prox <= value_at_x + slack,
        prox: report.point,
        value_at_x,
        value_at_prox,
    })
}

/// Exact deterministic chain subgradient
/// `(1/n) sum_i Jg_i(w) df_i(g_i(w))` with the fixed kink convention.
pub fn full_fcco_subgradient<T: Scalar, P: FccoProblem<T> + ?Sized>(
    problem: &P,
    w: &ParamVector<T>,
) -> ParamVector<T> {
    let n = problem.num_blocks();
    let mut grad = ParamVector::zeros(problem.dim());
    for i in 0..n {
        let g = problem.exact_inner_value(i, w);
        let df = problem.outer_subgradient(i, &g);
        let jac = problem.exact_inner_subjacobian(i, w);
        let chain = jac.matvec(&df);
        for (a, b) in grad.as_mut_slice().iter_mut().zip(chain.iter()) {
            *a = *a + *b;
        }
    }
    grad.scale(T::one() / T::of(n as f64));
    grad
}

/// Exact tri-level chain subgradient
/// `(1/n1) sum_i [(1/n2) sum_j Jh_ij dg_i(h_ij)] df_i((1/n2) sum_j g_i(h_ij))`.
pub fn full_tcco_subgradient<T: Scalar, P: TccoProblem<T> + ?Sized>(
    problem: &P,
    w: &ParamVector<T>,
) -> ParamVector<T> {
    let n1 = problem.outer_blocks();
    let n2 = problem.middle_blocks();
    let d = problem.dim();
    let d1 = problem.middle_dim();
    let mut grad = ParamVector::zeros(d);
    for i in 0..n1 {
        let mut mean_g = vec![T::zero(); d1];
        let mut h_values = Vec::with_capacity(n2);
        for j in 0..n2 {
            let h = problem.exact_innermost_value(i, j, w);
            let g = problem.middle_value(i, &h);
            for (m, v) in mean_g.iter_mut().zip(g.iter()) {
                *m = *m + *v;
            }
            h_values.push(h);
        }
        let inv2 = T::one() / T::of(n2 as f64);
        for m in mean_g.iter_mut() {
            *m = *m * inv2;
        }
        let df = problem.outer_subgradient(i, &mean_g);
        for (j, h) in h_values.iter().enumerate() {
            let dg = problem.middle_subjacobian(i, h);
            let pulled = dg.matvec(&df);
            let jac = problem.exact_innermost_jacobian(i, j, w);
            let chain = jac.matvec(&pulled);
            for (a, b) in grad.as_mut_slice().iter_mut().zip(chain.iter()) {
                *a = *a + *b * inv2;
            }
        }
    }
    grad.scale(T::one() / T::of(n1 as f64));
    grad
}

/// Ready-made [`Objective`] over a two-level problem's exact evaluators.
pub struct FccoObjective<'a, T, P: ?Sized> {
    problem: &'a P,
    _marker: std::marker::PhantomData<T>,
}

impl<'a, T: Scalar, P: FccoProblem<T> + ?Sized> FccoObjective<'a, T, P> {
    pub fn new(problem: &'a P) -> Self {
        FccoObjective {
            problem,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<'a, T: Scalar, P: FccoProblem<T> + ?Sized> Objective<T> for FccoObjective<'a, T, P> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn value(&self, x: &ParamVector<T>) -> T {
        fcco_objective(self.problem, x)
    }

    fn subgradient(&self, x: &ParamVector<T>) -> ParamVector<T> {
        full_fcco_subgradient(self.problem, x)
    }

    fn weak_convexity(&self) -> T {
        self.problem
            .constants()
            .rho_objective(self.problem.inner_dim())
    }
}

/// Ready-made [`Objective`] over a tri-level problem's exact evaluators.
pub struct TccoObjective<'a, T, P: ?Sized> {
    problem: &'a P,
    _marker: std::marker::PhantomData<T>,
}

impl<'a, T: Scalar, P: TccoProblem<T> + ?Sized> TccoObjective<'a, T, P> {
    pub fn new(problem: &'a P) -> Self {
        TccoObjective {
            problem,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<'a, T: Scalar, P: TccoProblem<T> + ?Sized> Objective<T> for TccoObjective<'a, T, P> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn value(&self, x: &ParamVector<T>) -> T {
        crate::problem::tcco_objective(self.problem, x)
    }

    fn subgradient(&self, x: &ParamVector<T>) -> ParamVector<T> {
        full_tcco_subgradient(self.problem, x)
    }

    fn weak_convexity(&self) -> T {
        self.problem
            .constants()
            .rho_objective(self.problem.middle_dim(), self.problem.inner_dim())
    }
}

/// Outcome of a weak-convexity probe.
#[derive(Clone, Debug)]
pub struct ProbeReport<T> {
    pub trials: usize,
    pub violations: usize,
    pub worst_violation: T,
}

impl<T> ProbeReport<T> {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Midpoint-convexity probe of `h(z) = f(z) + (rho/2) ||z||^2` on random
/// segments: each trial draws `x, y` and checks
/// `h((x+y)/2) <= (h(x) + h(y))/2 + 1e-9`.
pub fn weak_convexity_probe<T: Scalar, F, R>(
    f: F,
    dim: usize,
    rho: T,
    trials: usize,
    rng: &mut R,
    scale: T,
) -> ProbeReport<T>
where
    F: Fn(&[T]) -> T,
    R: Rng,
{
    let h = |z: &[T]| -> T {
        f(z) + rho / T::of(2.0) * z.iter().map(|v| *v * *v).sum::<T>()
    };
    let tol = T::of(1e-9);
    let mut violations = 0usize;
    let mut worst = T::zero();
    let mut x = vec![T::zero(); dim];
    let mut y = vec![T::zero(); dim];
    let mut mid = vec![T::zero(); dim];
    for _ in 0..trials {
        for v in x.iter_mut() {
            *v = standard_normal::<T, _>(rng) * scale;
        }
        for v in y.iter_mut() {
            *v = standard_normal::<T, _>(rng) * scale;
        }
        for ((m, a), b) in mid.iter_mut().zip(x.iter()).zip(y.iter()) {
            *m = (*a + *b) / T::of(2.0);
        }
        let gap = h(&mid) - (h(&x) + h(&y)) / T::of(2.0);
        if gap > tol {
            violations += 1;
            worst = worst.max(gap);
        }
    }
    ProbeReport {
        trials,
        violations,
        worst_violation: worst,
    }
}

/// Central-difference gradient check.
#[derive(Clone, Debug)]
pub struct FdReport<T> {
    pub max_rel_error: T,
    /// Relative error per coordinate.
    pub per_coordinate: Vec<T>,
    /// Coordinates whose one-sided differences disagree (likely kinks).
    pub suspect_kinks: Vec<usize>,
}

impl<T: Scalar> FdReport<T> {
    /// Largest relative error outside coordinates flagged as kinks.
    pub fn max_smooth_error(&self) -> T {
        self.per_coordinate
            .iter()
            .enumerate()
            .filter(|(k, _)| !self.suspect_kinks.contains(k))
            .map(|(_, e)| *e)
            .fold(T::zero(), T::max)
    }
}

/// Compares `grad_fn(x)` against central differences of `value_fn`
/// coordinate by coordinate.
pub fn finite_difference_check<T: Scalar, V, G>(
    value_fn: V,
    grad_fn: G,
    x: &[T],
    step: T,
) -> FdReport<T>
where
    V: Fn(&[T]) -> T,
    G: Fn(&[T]) -> Vec<T>,
{
    let grad = grad_fn(x);
    let mut max_rel = T::zero();
    let mut per_coordinate = Vec::with_capacity(x.len());
    let mut suspects = Vec::new();
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + step;
        let fp = value_fn(&probe);
        probe[k] = orig - step;
        let fm = value_fn(&probe);
        probe[k] = orig;
        let central = (fp - fm) / (T::of(2.0) * step);
        let f0 = value_fn(&probe);
        let forward = (fp - f0) / step;
        let backward = (f0 - fm) / step;
        if (forward - backward).abs() > step.sqrt() * (T::one() + forward.abs().max(backward.abs()))
        {
            suspects.push(k);
        }
        let denom = grad[k].abs().max(central.abs()).max(T::one());
        let rel = (grad[k] - central).abs() / denom;
        per_coordinate.push(rel);
        max_rel = max_rel.max(rel);
    }
    FdReport {
        max_rel_error: max_rel,
        per_coordinate,
        suspect_kinks: suspects,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngFactory, StreamKind};

    struct AbsObjective;

    impl Objective<f64> for AbsObjective {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &ParamVector<f64>) -> f64 {
            x[0].abs()
        }
        fn subgradient(&self, x: &ParamVector<f64>) -> ParamVector<f64> {
            // kink convention: derivative 0 at the kink
            ParamVector::new(vec![if x[0] > 0.0 {
                1.0
            } else if x[0] < 0.0 {
                -1.0
            } else {
                0.0
            }])
        }
        fn weak_convexity(&self) -> f64 {
            0.0
        }
    }

    struct QuadraticObjective;

    impl Objective<f64> for QuadraticObjective {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &ParamVector<f64>) -> f64 {
            0.5 * x[0] * x[0]
        }
        fn subgradient(&self, x: &ParamVector<f64>) -> ParamVector<f64> {
            ParamVector::new(vec![x[0]])
        }
        fn weak_convexity(&self) -> f64 {
            0.0
        }
    }

    #[test]
    fn prox_of_abs_closed_form() {
        // prox_{phi/2}(1) for phi = |.|: stationarity sign(y) + 2(y - 1) = 0
        // gives y = 1/2
        let cfg = MoreauConfig::new(2.0);
        let report = prox_point(&AbsObjective, &ParamVector::new(vec![1.0]), &cfg).unwrap();
        assert!(
            (report.point[0] - 0.5).abs() < 1e-4,
            "prox = {}",
            report.point[0]
        );
    }

    #[test]
    fn prox_of_quadratic_closed_form() {
        // lambda = 1 -> y = x / (1 + lambda) = 1
        let cfg = MoreauConfig::new(1.0);
        let report = prox_point(&QuadraticObjective, &ParamVector::new(vec![2.0]), &cfg).unwrap();
        assert!((report.point[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn prox_fixed_point_at_minimizer() {
        let cfg = MoreauConfig::new(2.0);
        let report = prox_point(&AbsObjective, &ParamVector::new(vec![0.0]), &cfg).unwrap();
        assert!(report.point[0].abs() < 1e-6);
    }

    #[test]
    fn moreau_grad_closed_forms() {
        let est = moreau_grad_norm(&AbsObjective, &ParamVector::new(vec![1.0]), &MoreauConfig::new(2.0))
            .unwrap();
        assert!((est.grad_norm - 1.0).abs() < 1e-4, "got {}", est.grad_norm);
        assert!(est.descent_ok);

        let est =
            moreau_grad_norm(&QuadraticObjective, &ParamVector::new(vec![2.0]), &MoreauConfig::new(1.0))
                .unwrap();
        assert!((est.grad_norm - 1.0).abs() < 1e-4);

        let est = moreau_grad_norm(&AbsObjective, &ParamVector::new(vec![0.0]), &MoreauConfig::new(2.0))
            .unwrap();
        assert!(est.grad_norm < 1e-6);
    }

    #[test]
    fn envelope_dominated_by_objective() {
        let cfg = MoreauConfig::new(2.0);
        for x in [-1.3, -0.2, 0.0, 0.4, 2.5] {
            let p = ParamVector::new(vec![x]);
            let report = prox_point(&AbsObjective, &p, &cfg).unwrap();
            assert!(report.subproblem_value <= AbsObjective.value(&p) + 1e-12);
        }
    }

    #[test]
    fn rho_bar_must_dominate() {
        let cfg = MoreauConfig::new(0.0);
        assert!(prox_point(&AbsObjective, &ParamVector::new(vec![1.0]), &cfg).is_err());
    }

    #[test]
    fn probe_flags_concavity_only_below_threshold() {
        let mut rng = RngFactory::new(5).stream(0, StreamKind::Probe, 0);
        // f(x) = -x^2 is 2-weakly-convex: rho = 2 passes, rho = 1 fails
        let f = |z: &[f64]| -(z[0] * z[0]);
        let ok = weak_convexity_probe(f, 1, 2.0, 1000, &mut rng, 1.0);
        assert_eq!(ok.violations, 0);
        let bad = weak_convexity_probe(f, 1, 1.0, 1000, &mut rng, 1.0);
        assert!(bad.violations > 0);
    }

    #[test]
    fn probe_accepts_convex() {
        let mut rng = RngFactory::new(6).stream(0, StreamKind::Probe, 0);
        let f = |z: &[f64]| z[0].abs() + z[1] * z[1];
        let report = weak_convexity_probe(f, 2, 0.0, 1000, &mut rng, 2.0);
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn fd_check_quadratic_and_linear() {
        let quad = |z: &[f64]| 0.5 * z[0] * z[0] + z[0] * z[1];
        let quad_grad = |z: &[f64]| vec![z[0] + z[1], z[0]];
        let report = finite_difference_check(quad, quad_grad, &[0.3, -0.7], 1e-6);
        assert!(report.max_rel_error < 1e-8);
        assert!(report.suspect_kinks.is_empty());

        // a wide step sidesteps cancellation, so linear is exact
        let lin = |z: &[f64]| 3.0 * z[0] - 2.0 * z[1];
        let lin_grad = |_: &[f64]| vec![3.0, -2.0];
        let report = finite_difference_check(lin, lin_grad, &[0.1, 0.2], 0.5);
        assert!(report.max_rel_error < 1e-14);
    }

    #[test]
    fn fd_check_flags_kinks() {
        let f = |z: &[f64]| z[0].abs();
        let g = |_: &[f64]| vec![0.0];
        let report = finite_difference_check(f, g, &[0.0], 1e-6);
        assert_eq!(report.suspect_kinks, vec![0]);
    }
}
