//! Cross-module behavior of the two solver loops: hand-computed steps,
//! determinism, oracle agreement, reductions and update-order semantics.

use std::collections::HashMap;

use cco_core::config::{default_gamma, SolverConfig};
use cco_core::data::{gen_fcco, gen_tcco, FccoGen, MiddleKind, TccoGen};
use cco_core::diagnostics::{full_fcco_subgradient, full_tcco_subgradient};
use cco_core::linalg::{Jacobian, ParamVector};
use cco_core::problem::{FccoConstants, FccoProblem, TccoProblem};
use cco_core::solvers::{
    init_fcco_state, init_tcco_state, sonx_gradient, sonx_run, sonx_run_ma, sonx_step, sont_gradient,
    sont_run, sont_run_ma, sont_step,
};

fn cfg(eta: f64, tau: f64, gamma: f64, b1: usize, b2: usize, t: u64, seed: u64) -> SolverConfig<f64> {
    SolverConfig::new(eta, tau, gamma, b1, b2, t, seed)
}

/// d = 1, n = 1, f = id, g(w) = w^2 / 2; the chained gradient is w.
struct ScalarQuadratic;

impl FccoProblem<f64> for ScalarQuadratic {
    fn num_blocks(&self) -> usize {
        1
    }
    fn dim(&self) -> usize {
        1
    }
    fn inner_dim(&self) -> usize {
        1
    }
    fn sample_space(&self, _: usize) -> u64 {
        1 << 10
    }
    fn inner_value(&self, _: usize, w: &ParamVector<f64>, _: &[u64]) -> Vec<f64> {
        vec![0.5 * w[0] * w[0]]
    }
    fn inner_subjacobian(&self, _: usize, w: &ParamVector<f64>, _: &[u64]) -> Jacobian<f64> {
        Jacobian::from_fn(1, 1, |_, _| w[0])
    }
    fn exact_inner_value(&self, i: usize, w: &ParamVector<f64>) -> Vec<f64> {
        self.inner_value(i, w, &[])
    }
    fn exact_inner_subjacobian(&self, i: usize, w: &ParamVector<f64>) -> Jacobian<f64> {
        self.inner_subjacobian(i, w, &[])
    }
    fn outer_value(&self, _: usize, u: &[f64]) -> f64 {
        u[0]
    }
    fn outer_subgradient(&self, _: usize, _: &[f64]) -> Vec<f64> {
        vec![1.0]
    }
    fn constants(&self) -> FccoConstants<f64> {
        FccoConstants {
            rho_f: 0.0,
            rho_g: 1.0,
            c_f: 1.0,
            c_g: 10.0,
            sigma: 0.0,
        }
    }
}

#[test]
fn hand_computed_step() {
    // tau = 1, eta = 0.1, w0 = 1 -> G = w = 1, w1 = 0.9
    let config = cfg(0.1, 1.0, 0.0, 1, 1, 1, 3);
    let mut state = init_fcco_state(&ScalarQuadratic, &config, ParamVector::new(vec![1.0])).unwrap();
    sonx_step(&ScalarQuadratic, &mut state, &config).unwrap();
    assert!((state.w[0] - 0.9).abs() < 1e-15);
}

#[test]
fn zero_step_size_still_updates_estimators() {
    let problem = gen_fcco::<f64>(FccoGen::linear(6, 4, 2, 0.2, 9));
    let config = cfg(0.0, 0.5, 2.0, 3, 4, 25, 11);
    let w0 = ParamVector::new(vec![0.3, -0.2, 0.1, 0.4]);
    let init = init_fcco_state(&problem, &config, w0.clone()).unwrap();
    let out = sonx_run(&problem, &config, w0.clone(), None).unwrap();
    assert!(out.is_ok());
    assert_eq!(out.state.w, w0);
    // at least one tracked value moved
    let moved = (0..6).any(|i| out.state.u.get(i) != init.u.get(i));
    assert!(moved);
}

#[test]
fn identical_seeds_identical_runs() {
    let problem = gen_fcco::<f64>(FccoGen::linear(10, 5, 1, 0.1, 4));
    let config = cfg(1e-2, 0.4, 1.5, 3, 4, 200, 77);
    let w0 = ParamVector::zeros(5);
    let a = sonx_run(&problem, &config, w0.clone(), None).unwrap();
    let b = sonx_run(&problem, &config, w0, None).unwrap();
    assert_eq!(a.state.w, b.state.w);
    assert_eq!(a.trace.len(), b.trace.len());
    for (ra, rb) in a.trace.rows.iter().zip(b.trace.rows.iter()) {
        assert_eq!(ra.step_norm, rb.step_norm);
        assert_eq!(ra.objective, rb.objective);
    }
}

#[test]
fn trace_length_matches_cadence() {
    let problem = gen_fcco::<f64>(FccoGen::linear(4, 3, 1, 0.0, 5));
    let mut config = cfg(1e-3, 0.5, 0.0, 2, 2, 10, 5);
    let out = sonx_run(&problem, &config, ParamVector::zeros(3), None).unwrap();
    assert_eq!(out.trace.len(), 10);

    config.iterations = 0;
    let out = sonx_run(&problem, &config, ParamVector::zeros(3), None).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.state.iteration, 0);

    config.iterations = 10;
    config.trace_every = 4;
    let out = sonx_run(&problem, &config, ParamVector::zeros(3), None).unwrap();
    assert_eq!(out.trace.len(), 3); // t = 0, 4, 8
}

#[test]
fn noiseless_full_batch_gradient_matches_oracle() {
    for seed in 0..10u64 {
        let n = 2 + (seed as usize % 6);
        let d = 2 + (seed as usize % 4);
        let problem = gen_fcco::<f64>(FccoGen::linear(n, d, 2, 0.0, seed));
        let config = cfg(0.1, 1.0, 0.0, n, 3, 1, seed);
        let w0 = ParamVector::new((0..d).map(|k| 0.3 * k as f64 - 0.5).collect());
        // sigma = 0 puts the trackers exactly at g_i(w0)
        let state = init_fcco_state(&problem, &config, w0.clone()).unwrap();
        let batch: Vec<usize> = (0..n).collect();
        let inner: Vec<Vec<u64>> = (0..n).map(|_| vec![0]).collect();
        let grad = sonx_gradient(&problem, &state, &batch, &inner).unwrap();
        let oracle = full_fcco_subgradient(&problem, &w0);
        let denom = oracle.norm().max(1.0);
        assert!(
            grad.sub(&oracle).norm() / denom < 1e-12,
            "seed {seed}: {:?} vs {:?}",
            grad.as_slice(),
            oracle.as_slice()
        );
    }
}

#[test]
fn sont_noiseless_full_batch_gradient_matches_oracle() {
    for seed in 0..10u64 {
        let n1 = 2 + (seed as usize % 3);
        let n2 = 1 + (seed as usize % 3);
        let problem = gen_tcco::<f64>(TccoGen {
            n1,
            n2,
            d: 3,
            d1: 2,
            d2: 2,
            middle: MiddleKind::Tanh,
            sigma: 0.0,
            seed,
        })
        .unwrap();
        let config = cfg(0.1, 1.0, 0.0, n1, n2, 1, seed);
        let w0 = ParamVector::new(vec![0.2, -0.4, 0.6]);
        let state = init_tcco_state(&problem, &config, w0.clone(), false).unwrap();
        let batch1: Vec<usize> = (0..n1).collect();
        let batch2: Vec<usize> = (0..n2).collect();
        let mut jacobians = HashMap::new();
        let mut v_values = HashMap::new();
        for &i in &batch1 {
            for &j in &batch2 {
                jacobians.insert((i, j), problem.exact_innermost_jacobian(i, j, &w0));
                v_values.insert((i, j), state.v.get(i, j).unwrap().to_vec());
            }
        }
        let u_values: Vec<Vec<f64>> = batch1.iter().map(|&i| state.u.get(i).to_vec()).collect();
        let grad = sont_gradient(
            &problem,
            3,
            &batch1,
            &batch2,
            &jacobians,
            &v_values,
            &u_values,
        )
        .unwrap();
        let oracle = full_tcco_subgradient(&problem, &w0);
        let denom = oracle.norm().max(1.0);
        assert!(
            grad.sub(&oracle).norm() / denom < 1e-12,
            "seed {seed}: mismatch"
        );
    }
}

#[test]
fn step_norm_bounded_by_declared_constants() {
    let problem = gen_fcco::<f64>(FccoGen::linear(8, 4, 2, 0.3, 6));
    let bound = problem.constants().gradient_bound();
    let config = cfg(0.05, 0.5, 3.0, 3, 2, 1000, 8);
    let out = sonx_run(&problem, &config, ParamVector::zeros(4), None).unwrap();
    assert_eq!(out.trace.len(), 1000);
    for row in &out.trace.rows {
        assert!(
            row.step_norm <= config.eta * bound + 1e-12,
            "step {} exceeded eta * Cf * Cg = {}",
            row.step_norm,
            config.eta * bound
        );
    }
}

#[test]
fn exact_oracle_reduction_is_subgradient_descent() {
    // full batches, noiseless, tau = 1, fresh reads: the loop is plain
    // deterministic subgradient descent on F
    let n = 5;
    let d = 3;
    let problem = gen_fcco::<f64>(FccoGen::linear(n, d, 2, 0.0, 12));
    let mut config = cfg(0.05, 1.0, 0.0, n, 2, 40, 3);
    config.read_updated_estimates = true;
    let w0 = ParamVector::new(vec![0.5, -0.3, 0.2]);
    let out = sonx_run(&problem, &config, w0.clone(), None).unwrap();

    let mut w = w0;
    for _ in 0..40 {
        let g = full_fcco_subgradient(&problem, &w);
        w.add_scaled(-config.eta, &g);
    }
    assert!(out.state.w.sub(&w).norm() < 1e-12);
}

#[test]
fn gradient_reads_pre_update_estimates_by_default() {
    // d = 1, d1 = 2, g(w) = (w, 1), f(u) = (u1)_+ + (u2)_+: the w-component
    // of the gradient is the indicator of the tracked u1. Crossing zero
    // separates the two read orders.
    struct CrossingProblem;
    impl FccoProblem<f64> for CrossingProblem {
        fn num_blocks(&self) -> usize {
            1
        }
        fn dim(&self) -> usize {
            1
        }
        fn inner_dim(&self) -> usize {
            2
        }
        fn sample_space(&self, _: usize) -> u64 {
            1 << 10
        }
        fn inner_value(&self, _: usize, w: &ParamVector<f64>, _: &[u64]) -> Vec<f64> {
            vec![w[0], 1.0]
        }
        fn inner_subjacobian(&self, _: usize, _: &ParamVector<f64>, _: &[u64]) -> Jacobian<f64> {
            Jacobian::from_fn(1, 2, |_, c| if c == 0 { 1.0 } else { 0.0 })
        }
        fn exact_inner_value(&self, i: usize, w: &ParamVector<f64>) -> Vec<f64> {
            self.inner_value(i, w, &[])
        }
        fn exact_inner_subjacobian(&self, i: usize, w: &ParamVector<f64>) -> Jacobian<f64> {
            self.inner_subjacobian(i, w, &[])
        }
        fn outer_value(&self, _: usize, u: &[f64]) -> f64 {
            u[0].max(0.0) + u[1].max(0.0)
        }
        fn outer_subgradient(&self, _: usize, u: &[f64]) -> Vec<f64> {
            u.iter()
                .map(|x| if *x > 0.0 { 1.0 } else { 0.0 })
                .collect()
        }
        fn constants(&self) -> FccoConstants<f64> {
            FccoConstants {
                rho_f: 0.0,
                rho_g: 0.0,
                c_f: 2.0,
                c_g: 1.0,
                sigma: 0.0,
            }
        }
    }

    let mut config = cfg(1.0, 1.0, 0.0, 1, 1, 2, 1);
    let w0 = ParamVector::new(vec![0.5]);

    // stated order: step 1 still reads u = g(w0) = (0.5, 1), so w moves past zero
    let mut state = init_fcco_state(&CrossingProblem, &config, w0.clone()).unwrap();
    sonx_step(&CrossingProblem, &mut state, &config).unwrap();
    sonx_step(&CrossingProblem, &mut state, &config).unwrap();
    assert!((state.w[0] - (-1.5)).abs() < 1e-15);

    // fresh reads: step 1 sees u1 = w1 = -0.5 <= 0 and stops
    config.read_updated_estimates = true;
    let mut state = init_fcco_state(&CrossingProblem, &config, w0).unwrap();
    sonx_step(&CrossingProblem, &mut state, &config).unwrap();
    sonx_step(&CrossingProblem, &mut state, &config).unwrap();
    assert!((state.w[0] - (-0.5)).abs() < 1e-15);
}

#[test]
fn moving_average_equals_msvr_with_zero_gamma() {
    let problem = gen_fcco::<f64>(FccoGen::linear(9, 4, 2, 0.2, 17));
    let config = cfg(5e-3, 0.4, 0.0, 4, 3, 150, 23);
    let w0 = ParamVector::zeros(4);
    let msvr = sonx_run(&problem, &config, w0.clone(), None).unwrap();
    let ma = sonx_run_ma(&problem, &config, w0, None).unwrap();
    assert_eq!(msvr.state.w, ma.state.w);
    for i in 0..9 {
        assert_eq!(msvr.state.u.get(i), ma.state.u.get(i));
    }
}

#[test]
fn sont_moving_average_equals_msvr_with_zero_gammas() {
    let problem = gen_tcco::<f64>(TccoGen {
        n1: 4,
        n2: 3,
        d: 3,
        d1: 2,
        d2: 2,
        middle: MiddleKind::Tanh,
        sigma: 0.1,
        seed: 41,
    })
    .unwrap();
    let mut config = cfg(2e-3, 0.5, 0.0, 2, 2, 120, 19);
    config.tau1 = 0.5;
    config.tau2 = 0.5;
    config.gamma1 = 0.0;
    config.gamma2 = 0.0;
    // huge radius so the (projected) MSVR path never clips
    config.projection_radius = Some(1e12);
    let w0 = ParamVector::zeros(3);
    let msvr = sont_run(&problem, &config, w0.clone(), None).unwrap();
    let ma = sont_run_ma(&problem, &config, w0, None).unwrap();
    assert_eq!(msvr.state.w, ma.state.w);
    for i in 0..4 {
        assert_eq!(msvr.state.u.get(i), ma.state.u.get(i));
    }
}

#[test]
fn sont_collapses_to_sonx_stochastic_zero_gamma() {
    // n2 = 1, identity middle level: with fresh reads, tau1 = 1 and zero
    // corrections the tri-level loop replays the two-level one exactly
    let tcco = gen_tcco::<f64>(TccoGen {
        n1: 6,
        n2: 1,
        d: 4,
        d1: 3,
        d2: 3,
        middle: MiddleKind::Identity,
        sigma: 0.2,
        seed: 29,
    })
    .unwrap();

    let mut sont_cfg = cfg(4e-3, 0.5, 0.0, 3, 1, 80, 37);
    sont_cfg.tau1 = 1.0;
    sont_cfg.gamma1 = 0.0;
    sont_cfg.tau2 = 0.5;
    sont_cfg.gamma2 = 0.0;
    sont_cfg.b3 = 5;
    sont_cfg.projection_radius = Some(1e12);
    sont_cfg.read_updated_estimates = true;

    let mut sonx_cfg = cfg(4e-3, 0.5, 0.0, 3, 5, 80, 37);
    sonx_cfg.read_updated_estimates = true;

    let w0 = ParamVector::new(vec![0.1, -0.2, 0.3, 0.0]);
    let tri = sont_run(&tcco, &sont_cfg, w0.clone(), None).unwrap();
    let flat = gen_tcco::<f64>(TccoGen {
        n1: 6,
        n2: 1,
        d: 4,
        d1: 3,
        d2: 3,
        middle: MiddleKind::Identity,
        sigma: 0.2,
        seed: 29,
    })
    .unwrap()
    .collapsed()
    .unwrap();
    let two = sonx_run(&flat, &sonx_cfg, w0, None).unwrap();

    assert!(tri.state.w.sub(&two.state.w).norm() < 1e-12);
    for (a, b) in tri.trace.rows.iter().zip(two.trace.rows.iter()) {
        assert!((a.step_norm - b.step_norm).abs() < 1e-14);
    }
}

#[test]
fn sont_collapses_to_sonx_noiseless_full_batch_with_correction() {
    // noiseless and full outer batch: the stored previous tracker equals the
    // previous-iterate evaluation, so nonzero corrections also match
    let make = || {
        gen_tcco::<f64>(TccoGen {
            n1: 5,
            n2: 1,
            d: 3,
            d1: 2,
            d2: 2,
            middle: MiddleKind::Identity,
            sigma: 0.0,
            seed: 53,
        })
        .unwrap()
    };
    let gamma = default_gamma(5, 5, 0.5).unwrap();

    let mut sont_cfg = cfg(5e-3, 0.5, 0.0, 5, 1, 60, 13);
    sont_cfg.tau1 = 1.0;
    sont_cfg.gamma1 = 0.0;
    sont_cfg.tau2 = 0.5;
    sont_cfg.gamma2 = gamma;
    sont_cfg.b3 = 2;
    sont_cfg.projection_radius = Some(1e12);
    sont_cfg.read_updated_estimates = true;

    let mut sonx_cfg = cfg(5e-3, 0.5, gamma, 5, 2, 60, 13);
    sonx_cfg.read_updated_estimates = true;

    let w0 = ParamVector::new(vec![0.4, 0.1, -0.3]);
    let tri = sont_run(&make(), &sont_cfg, w0.clone(), None).unwrap();
    let two = sonx_run(&make().collapsed().unwrap(), &sonx_cfg, w0, None).unwrap();
    assert!(tri.state.w.sub(&two.state.w).norm() < 1e-12);
}

#[test]
fn sont_zero_step_trackers_reach_fixed_point() {
    let problem = gen_tcco::<f64>(TccoGen {
        n1: 3,
        n2: 4,
        d: 3,
        d1: 2,
        d2: 2,
        middle: MiddleKind::Tanh,
        sigma: 0.0,
        seed: 3,
    })
    .unwrap();
    let mut config = cfg(0.0, 0.5, 0.0, 3, 4, 400, 2);
    config.tau1 = 0.5;
    config.tau2 = 0.5;
    config.gamma1 = 0.0;
    config.gamma2 = 0.0;
    let w0 = ParamVector::new(vec![0.2, 0.2, -0.1]);
    let out = sont_run(&problem, &config, w0.clone(), None).unwrap();
    assert_eq!(out.state.w, w0);
    for i in 0..3 {
        let mut target = vec![0.0; 2];
        for j in 0..4 {
            let h = problem.exact_innermost_value(i, j, &w0);
            assert!(
                cco_core::linalg::distance(out.state.v.get(i, j).unwrap(), &h) < 1e-9,
                "v tracker off target"
            );
            let g = problem.middle_value(i, &h);
            for (t, x) in target.iter_mut().zip(g.iter()) {
                *t += *x / 4.0;
            }
        }
        assert!(
            cco_core::linalg::distance(out.state.u.get(i), &target) < 1e-9,
            "u tracker off target"
        );
    }
}

fn enumerate_batches(n: usize, b: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn recurse(start: usize, n: usize, b: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == b {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            recurse(i + 1, n, b, current, out);
            current.pop();
        }
    }
    recurse(0, n, b, &mut current, &mut out);
    out
}

#[test]
fn batch_averaged_gradient_is_unbiased_for_the_full_subgradient() {
    // averaging the batch gradient over every equiprobable batch (exact
    // trackers, noiseless) reproduces the full subgradient exactly
    for (n, b1) in [(4usize, 2usize), (5, 3), (6, 3), (6, 1)] {
        let problem = gen_fcco::<f64>(FccoGen::linear(n, 4, 2, 0.0, (n * 10 + b1) as u64));
        let config = cfg(0.1, 1.0, 0.0, n, 2, 1, 1);
        let w0 = ParamVector::new(vec![0.25, -0.5, 0.75, 0.1]);
        let state = init_fcco_state(&problem, &config, w0.clone()).unwrap();
        let batches = enumerate_batches(n, b1);
        let mut mean = ParamVector::zeros(4);
        for batch in &batches {
            let inner: Vec<Vec<u64>> = batch.iter().map(|_| vec![0]).collect();
            let g = sonx_gradient(&problem, &state, batch, &inner).unwrap();
            mean.add_scaled(1.0 / batches.len() as f64, &g);
        }
        let oracle = full_fcco_subgradient(&problem, &w0);
        assert!(
            mean.sub(&oracle).norm() <= 1e-12,
            "n={n} B1={b1}: gap {}",
            mean.sub(&oracle).norm()
        );
    }
}

#[test]
fn runs_are_generic_over_the_scalar_type() {
    // the whole pipeline instantiates at f32 as well
    let problem = gen_fcco::<f32>(FccoGen::linear(5, 3, 1, 0.1, 44));
    let config = SolverConfig::<f32>::new(1e-3, 0.5, 1.0, 2, 2, 50, 3);
    let out = sonx_run(&problem, &config, ParamVector::<f32>::zeros(3), None).unwrap();
    assert!(out.is_ok());
    assert!(out.state.w.is_finite());
    assert_eq!(out.trace.len(), 50);
}

#[test]
fn sont_zero_iterations_returns_initial_state() {
    let problem = gen_tcco::<f64>(TccoGen {
        n1: 3,
        n2: 2,
        d: 2,
        d1: 2,
        d2: 2,
        middle: MiddleKind::Tanh,
        sigma: 0.1,
        seed: 6,
    })
    .unwrap();
    let config = cfg(0.01, 0.5, 0.5, 2, 2, 0, 8);
    let w0 = ParamVector::new(vec![0.4, -0.4]);
    let out = sont_run(&problem, &config, w0.clone(), None).unwrap();
    assert_eq!(out.state.w, w0);
    assert_eq!(out.state.iteration, 0);
    assert!(out.trace.is_empty());
}

#[test]
fn windowed_objective_trend_is_decreasing_on_convex_instance() {
    // theorem-schedule run on a convex instance: window means of the traced
    // objective must decrease significantly more often than not (one-sided
    // binomial test at the 95% level over the descent phase)
    let n = 20;
    let d = 5;
    let mut gen = FccoGen::linear(n, d, 1, 0.1, 31);
    gen.offset_scale = 0.5;
    let problem = gen_fcco::<f64>(gen);
    let b1 = 10;
    let b2 = 4;
    let (tau, eta) =
        cco_core::config::theorem_schedule_fcco(0.1f64, n, b1, b2).unwrap();
    let gamma = default_gamma(n, b1, tau).unwrap();
    let config = cfg(eta, tau, gamma, b1, b2, 20_000, 77);
    let out = sonx_run(&problem, &config, ParamVector::zeros(d), None).unwrap();
    assert!(out.is_ok());

    let window = 500;
    let means: Vec<f64> = out
        .trace
        .rows
        .chunks(window)
        .map(|c| c.iter().filter_map(|r| r.objective).sum::<f64>() / c.len() as f64)
        .collect();
    let z = mann_kendall_downward(&means);
    assert!(z > 1.645, "no significant downward trend: z = {z:.2}, means {means:?}");
}

/// Mann-Kendall statistic for a downward trend, normalized to a z-score.
fn mann_kendall_downward(series: &[f64]) -> f64 {
    let m = series.len();
    let mut s: i64 = 0;
    for i in 0..m {
        for j in (i + 1)..m {
            if series[j] < series[i] {
                s += 1;
            } else if series[j] > series[i] {
                s -= 1;
            }
        }
    }
    let var = (m as f64) * (m as f64 - 1.0) * (2.0 * m as f64 + 5.0) / 18.0;
    (s as f64 - 1.0) / var.sqrt()
}

#[test]
fn divergence_guard_aborts() {
    // eta far too large on a quadratic blows up and must abort, not panic
    let config = cfg(1e4, 1.0, 0.0, 1, 1, 10_000, 5);
    let out = sonx_run(&ScalarQuadratic, &config, ParamVector::new(vec![1.0]), None).unwrap();
    assert!(out.failure.is_some());
    let err = format!("{}", out.failure.unwrap());
    assert!(err.contains("aborted"), "unexpected error text: {err}");
}

#[test]
fn sont_determinism() {
    let problem = gen_tcco::<f64>(TccoGen {
        n1: 4,
        n2: 3,
        d: 2,
        d1: 2,
        d2: 2,
        middle: MiddleKind::Tanh,
        sigma: 0.15,
        seed: 8,
    })
    .unwrap();
    let config = cfg(1e-3, 0.5, 1.0, 2, 2, 100, 99);
    let w0 = ParamVector::zeros(2);
    let a = sont_run(&problem, &config, w0.clone(), None).unwrap();
    let b = sont_run(&problem, &config, w0, None).unwrap();
    assert_eq!(a.state.w, b.state.w);
}

#[test]
fn lazy_pair_table_matches_eager_after_all_pairs_touched() {
    // with full batches every pair is touched at initialization/first step,
    // so lazy and eager runs coincide from the first update on
    let problem = gen_tcco::<f64>(TccoGen {
        n1: 3,
        n2: 2,
        d: 2,
        d1: 2,
        d2: 2,
        middle: MiddleKind::Tanh,
        sigma: 0.0,
        seed: 21,
    })
    .unwrap();
    let config = cfg(1e-3, 0.5, 0.5, 3, 2, 30, 55);
    let w0 = ParamVector::zeros(2);
    let eager = {
        let mut state = init_tcco_state(&problem, &config, w0.clone(), false).unwrap();
        for _ in 0..30 {
            sont_step(&problem, &mut state, &config).unwrap();
        }
        state
    };
    let lazy = {
        let mut state = init_tcco_state(&problem, &config, w0, true).unwrap();
        for _ in 0..30 {
            sont_step(&problem, &mut state, &config).unwrap();
        }
        state
    };
    // noiseless: lazily-seeded pairs start at the same exact h values
    assert!(eager.w.sub(&lazy.w).norm() < 1e-12);
}
