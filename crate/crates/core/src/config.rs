//! Hyperparameters and the default schedules exposed with unit leading
//! constants. All schedule constants are user-overridable.

use crate::error::{CcoError, Result};
use crate::scalar::Scalar;

/// Error-correction coefficient `(n - B1) / (B1 (1 - tau)) + (1 - tau)`.
pub fn default_gamma<T: Scalar>(n: usize, b1: usize, tau: T) -> Result<T> {
    if tau <= T::zero() || tau >= T::one() {
        return Err(CcoError::invalid_config(format!(
            "default gamma needs 0 < tau < 1, got {tau}"
        )));
    }
    if b1 == 0 || b1 > n {
        return Err(CcoError::invalid_config(format!(
            "default gamma needs 1 <= B1 <= n, got B1={b1}, n={n}"
        )));
    }
    let nf = T::of(n as f64);
    let bf = T::of(b1 as f64);
    Ok((nf - bf) / (bf * (T::one() - tau)) + (T::one() - tau))
}

/// Two-level schedule `tau = min(1/2, B2 eps^4)`, `eta = B1 sqrt(B2) eps^4 / n`.
pub fn theorem_schedule_fcco<T: Scalar>(
    epsilon: T,
    n: usize,
    b1: usize,
    b2: usize,
) -> Result<(T, T)> {
    if epsilon <= T::zero() {
        return Err(CcoError::invalid_config("epsilon must be positive"));
    }
    let e4 = epsilon.powi(4);
    let tau = (T::of(b2 as f64) * e4).min(T::of(0.5));
    let eta = T::of(b1 as f64) * T::of(b2 as f64).sqrt() * e4 / T::of(n as f64);
    Ok((tau, eta))
}

/// Moving-average variant: `tau = min(1, B2 eps^4)`, `eta = B1 B2 eps^6 / n`.
pub fn theorem_schedule_fcco_ma<T: Scalar>(
    epsilon: T,
    n: usize,
    b1: usize,
    b2: usize,
) -> Result<(T, T)> {
    if epsilon <= T::zero() {
        return Err(CcoError::invalid_config("epsilon must be positive"));
    }
    let tau = (T::of(b2 as f64) * epsilon.powi(4)).min(T::one());
    let eta = T::of((b1 * b2) as f64) * epsilon.powi(6) / T::of(n as f64);
    Ok((tau, eta))
}

/// Tri-level schedule returning `(tau1, tau2, eta)`.
///
/// `tau1 = min(1/2, min(B3, sqrt(B1 n2 / n1)) eps^4)`, `tau2 = min(1/2, B2 eps^4)`,
/// `eta = min(sqrt(B3), (B1 n2 / n1)^(1/4), sqrt(B1 n2 / n1)) * B1 B2 eps^4 / (n1 n2)`.
pub fn theorem_schedule_tcco<T: Scalar>(
    epsilon: T,
    n1: usize,
    n2: usize,
    b1: usize,
    b2: usize,
    b3: usize,
) -> Result<(T, T, T)> {
    if epsilon <= T::zero() {
        return Err(CcoError::invalid_config("epsilon must be positive"));
    }
    let e4 = epsilon.powi(4);
    let half = T::of(0.5);
    let ratio = T::of(b1 as f64 * n2 as f64 / n1 as f64);
    let tau1 = (T::of(b3 as f64).min(ratio.sqrt()) * e4).min(half);
    let tau2 = (T::of(b2 as f64) * e4).min(half);
    let lead = T::of(b3 as f64)
        .sqrt()
        .min(ratio.sqrt().sqrt())
        .min(ratio.sqrt());
    let eta = lead * T::of((b1 * b2) as f64) / T::of((n1 * n2) as f64) * e4;
    Ok((tau1, tau2, eta))
}

/// Tri-level moving-average schedule returning `(tau1, tau2, eta)`.
pub fn theorem_schedule_tcco_ma<T: Scalar>(
    epsilon: T,
    n1: usize,
    n2: usize,
    b1: usize,
    b2: usize,
    b3: usize,
) -> Result<(T, T, T)> {
    if epsilon <= T::zero() {
        return Err(CcoError::invalid_config("epsilon must be positive"));
    }
    let e4 = epsilon.powi(4);
    let e6 = epsilon.powi(6);
    let alt = T::of((b1 as f64 * n2 as f64 / (n1 as f64 * b2 as f64)).sqrt())
        * T::of(b2 as f64)
        * e6;
    let lead = (T::of(b3 as f64) * e4).min(alt);
    let tau1 = lead.min(T::one());
    let tau2 = (T::of(b2 as f64) * e4).min(T::one());
    let eta = lead * T::of((b1 * b2) as f64) / T::of((n1 * n2) as f64) * epsilon.powi(2);
    Ok((tau1, tau2, eta))
}

/// All run hyperparameters. Two-level solvers read `tau`/`gamma`; tri-level
/// solvers read `tau1`/`gamma1` (tracked inner values), `tau2`/`gamma2`
/// (tracked middle averages). The TPAUC multi-instance solver additionally
/// reads `gamma3` and the auxiliary step sizes `eta1`/`eta2`.
#[derive(Clone, Debug)]
pub struct SolverConfig<T> {
    pub eta: T,
    /// Step size for per-block threshold variables (defaults to `eta`).
    pub eta1: T,
    /// Step size for the global threshold variable (defaults to `eta`).
    pub eta2: T,
    pub tau: T,
    pub gamma: T,
    pub tau1: T,
    pub tau2: T,
    pub gamma1: T,
    pub gamma2: T,
    pub gamma3: T,
    pub b1: usize,
    pub b2: usize,
    pub b3: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Ball radius for projected value trackers (tri-level solvers).
    pub projection_radius: Option<T>,
    /// Target accuracy used when deriving schedule defaults; informational.
    pub epsilon_target: Option<T>,
    /// Record a trace row every this many iterations.
    pub trace_every: u64,
    /// Compute the exact per-block estimator error at traced iterations.
    pub track_estimator_error: bool,
    /// When true, gradients and dependent updates read estimator values
    /// written *this* iteration instead of the previous ones. Default false,
    /// matching the algorithm as stated; used for ablation and reduction
    /// tests.
    pub read_updated_estimates: bool,
    /// Scale per-block threshold updates by `1/B1` (the stated form).
    pub scale_s_by_batch: bool,
    /// Abort when `||w||` exceeds this multiple of `1 + ||w0||`.
    pub divergence_factor: T,
}

impl<T: Scalar> SolverConfig<T> {
    pub fn new(eta: T, tau: T, gamma: T, b1: usize, b2: usize, iterations: u64, seed: u64) -> Self {
        SolverConfig {
            eta,
            eta1: eta,
            eta2: eta,
            tau,
            gamma,
            tau1: tau,
            tau2: tau,
            gamma1: gamma,
            gamma2: gamma,
            gamma3: gamma,
            b1,
            b2,
            b3: b2,
            iterations,
            seed,
            projection_radius: None,
            epsilon_target: None,
            trace_every: 1,
            track_estimator_error: false,
            read_updated_estimates: false,
            scale_s_by_batch: true,
            divergence_factor: T::of(1e6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta < T::zero() || !self.eta.is_finite() {
            return Err(CcoError::invalid_config(format!(
                "eta must be finite and >= 0, got {}",
                self.eta
            )));
        }
        if self.eta1 < T::zero() || self.eta2 < T::zero() {
            return Err(CcoError::invalid_config("eta1/eta2 must be >= 0"));
        }
        for (name, tau) in [
            ("tau", self.tau),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
        ] {
            if tau <= T::zero() || tau > T::one() {
                return Err(CcoError::invalid_config(format!(
                    "{name} must be in (0, 1], got {tau}"
                )));
            }
        }
        for (name, gamma) in [
            ("gamma", self.gamma),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
        ] {
            if gamma < T::zero() || !gamma.is_finite() {
                return Err(CcoError::invalid_config(format!(
                    "{name} must be finite and >= 0, got {gamma}"
                )));
            }
        }
        if self.b1 == 0 || self.b2 == 0 || self.b3 == 0 {
            return Err(CcoError::invalid_config("batch sizes must be positive"));
        }
        if self.trace_every == 0 {
            return Err(CcoError::invalid_config("trace_every must be >= 1"));
        }
        if let Some(r) = self.projection_radius {
            if r <= T::zero() {
                return Err(CcoError::invalid_config(format!(
                    "projection radius must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }

    /// Checks `B1` against the outer block count of a concrete problem.
    pub fn validate_for_population(&self, n: usize) -> Result<()> {
        self.validate()?;
        if self.b1 > n {
            return Err(CcoError::invalid_config(format!(
                "B1 = {} exceeds block count n = {}",
                self.b1, n
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_gamma_matches_formula() {
        assert!((default_gamma(100, 10, 0.5f64).unwrap() - 18.5).abs() < 1e-12);
        assert!((default_gamma(10, 10, 0.5f64).unwrap() - 0.5).abs() < 1e-12);
        assert!((default_gamma(50, 5, 0.25f64).unwrap() - 12.75).abs() < 1e-12);
    }

    #[test]
    fn default_gamma_rejects_tau_one() {
        assert!(default_gamma(10, 2, 1.0f64).is_err());
    }

    #[test]
    fn default_gamma_lower_bound() {
        // gamma >= 1 - tau always, equality iff n == B1
        for &(n, b1, tau) in &[(100usize, 7usize, 0.3f64), (12, 12, 0.7), (5, 1, 0.01)] {
            let g = default_gamma(n, b1, tau).unwrap();
            assert!(g >= 1.0 - tau - 1e-15);
            if n == b1 {
                assert!((g - (1.0 - tau)).abs() < 1e-15);
            } else {
                assert!(g > 1.0 - tau);
            }
        }
    }

    #[test]
    fn fcco_schedule_values() {
        let (tau, eta) = theorem_schedule_fcco(1.0f64, 10, 10, 1).unwrap();
        assert_eq!(tau, 0.5);
        assert!((eta - 1.0).abs() < 1e-12);

        // tau = B2 eps^4, eta = B1 sqrt(B2) eps^4 / n
        let (tau, eta) = theorem_schedule_fcco(0.1f64, 100, 10, 4).unwrap();
        assert!((tau - 4e-4).abs() < 1e-16);
        assert!((eta - 2e-5).abs() < 1e-18);

        assert!(theorem_schedule_fcco(0.0f64, 10, 1, 1).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::new(0.1f64, 0.5, 1.0, 2, 2, 10, 7);
        cfg.validate().unwrap();
        cfg.validate_for_population(2).unwrap();
        assert!(cfg.validate_for_population(1).is_err());
        cfg.eta = -1.0;
        assert!(cfg.validate().is_err());
        cfg.eta = 0.0; // eta = 0 is a legal degenerate step size
        cfg.validate().unwrap();
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());
    }
}
