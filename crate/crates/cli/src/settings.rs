//! Run configuration file schema (TOML) and hyperparameter resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cco_core::config::{
    default_gamma, theorem_schedule_fcco, theorem_schedule_fcco_ma, theorem_schedule_tcco,
    theorem_schedule_tcco_ma, SolverConfig,
};
use cco_core::{CcoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Sonx,
    SonxMa,
    Sont,
    SontMa,
    TpaucSonx,
    TpaucSont,
    GdroSonx,
}

impl SolverKind {
    pub fn uses_correction(self) -> bool {
        !matches!(self, SolverKind::SonxMa | SolverKind::SontMa)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub solver: SolverKind,
    /// Output directory for trace.csv, summary.json and checkpoint.json.
    pub out: Option<PathBuf>,
    pub problem: ProblemSettings,
    #[serde(default)]
    pub hyperparameters: HyperSettings,
    #[serde(default)]
    pub tpauc: TpaucSettings,
    #[serde(default)]
    pub diagnostics: DiagnosticsSettings,
    #[serde(default)]
    pub compare: CompareSettings,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSettings {
    pub kind: String,
    pub path: Option<PathBuf>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n2")]
    pub n2: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_one")]
    pub d1: usize,
    #[serde(default = "default_one")]
    pub d2: usize,
    #[serde(default)]
    pub middle: Option<String>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_one_u64")]
    pub seed: u64,
    // multi-instance generation
    #[serde(default = "default_n_pos")]
    pub n_pos: usize,
    #[serde(default = "default_n_neg")]
    pub n_neg: usize,
    #[serde(default = "default_one")]
    pub bag_min: usize,
    #[serde(default = "default_bag_max")]
    pub bag_max: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_true")]
    pub separable: bool,
    // grouped generation
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_per_group")]
    pub per_group: usize,
    #[serde(default = "default_noise")]
    pub max_flip: f64,
    #[serde(default = "default_one")]
    pub top_k: usize,
    #[serde(default)]
    pub loss: Option<String>,
}

fn default_n() -> usize {
    10
}
fn default_n2() -> usize {
    4
}
fn default_d() -> usize {
    5
}
fn default_one() -> usize {
    1
}
fn default_one_u64() -> u64 {
    1
}
fn default_n_pos() -> usize {
    20
}
fn default_n_neg() -> usize {
    80
}
fn default_bag_max() -> usize {
    8
}
fn default_noise() -> f64 {
    0.4
}
fn default_true() -> bool {
    true
}
fn default_groups() -> usize {
    10
}
fn default_per_group() -> usize {
    20
}

/// A gamma entry: an explicit value or the schedule default.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Value(f64),
    Named(NamedGamma),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedGamma {
    Default,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSettings {
    /// Target accuracy driving the schedule defaults.
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub tau: Option<f64>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub gamma: Option<GammaSpec>,
    pub gamma1: Option<GammaSpec>,
    pub gamma2: Option<GammaSpec>,
    pub gamma3: Option<GammaSpec>,
    pub b1: Option<usize>,
    pub b2: Option<usize>,
    pub b3: Option<usize>,
    pub iterations: Option<u64>,
    pub seed: Option<u64>,
    pub trace_every: Option<u64>,
    pub projection_radius: Option<f64>,
    #[serde(default)]
    pub track_estimator_error: bool,
    #[serde(default)]
    pub read_updated_estimates: bool,
    pub scale_s_by_batch: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpaucSettings {
    #[serde(default = "default_half")]
    pub alpha: f64,
    #[serde(default = "default_half")]
    pub beta: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub pooling: Option<String>,
    #[serde(default = "default_pool_tau")]
    pub pool_tau: f64,
    #[serde(default)]
    pub pool_offset: f64,
    #[serde(default = "default_true")]
    pub sigmoid: bool,
    #[serde(default)]
    pub scorer: Option<String>,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

impl Default for TpaucSettings {
    fn default() -> Self {
        TpaucSettings {
            alpha: default_half(),
            beta: default_half(),
            margin: default_margin(),
            pooling: None,
            pool_tau: default_pool_tau(),
            pool_offset: 0.0,
            sigmoid: true,
            scorer: None,
            hidden: default_hidden(),
        }
    }
}

fn default_half() -> f64 {
    0.5
}
fn default_margin() -> f64 {
    1.0
}
fn default_pool_tau() -> f64 {
    1.0
}
fn default_hidden() -> usize {
    8
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSettings {
    #[serde(default)]
    pub moreau: bool,
    pub rho_bar: Option<f64>,
    #[serde(default = "default_inner_iterations")]
    pub inner_iterations: usize,
    #[serde(default = "default_inner_step")]
    pub inner_step: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Compute a Moreau estimate at every N-th traced iteration (0 = final
    /// point only).
    #[serde(default)]
    pub moreau_every: u64,
    pub checkpoint: Option<PathBuf>,
    /// Probes run by the diagnose command.
    #[serde(default)]
    pub probes: Vec<String>,
    /// Override the probed weak-convexity modulus.
    pub rho_override: Option<f64>,
    #[serde(default = "default_trials")]
    pub probe_trials: usize,
    pub epsilon_target: Option<f64>,
}

fn default_inner_iterations() -> usize {
    20_000
}
fn default_inner_step() -> f64 {
    1.0
}
fn default_restarts() -> usize {
    2
}
fn default_trials() -> usize {
    10_000
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSettings {
    #[serde(default)]
    pub gammas: Vec<GammaSpec>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| CcoError::invalid_config(format!("cannot parse {}: {e}", path.display())))
    }

    /// Resolves the solver hyperparameters: anything unset falls back to the
    /// theorem schedule at `epsilon` (default 0.1) with unit constants.
    pub fn resolve_config(&self, n_outer: usize, n_middle: usize) -> Result<SolverConfig<f64>> {
        let h = &self.hyperparameters;
        let epsilon = h.epsilon.unwrap_or(0.1);
        let b1 = h.b1.unwrap_or_else(|| n_outer.clamp(1, 8));
        let b2 = h.b2.unwrap_or_else(|| match self.solver {
            SolverKind::Sont | SolverKind::SontMa | SolverKind::TpaucSont => n_middle.clamp(1, 8),
            _ => 8,
        });
        let b3 = h.b3.unwrap_or(b2);

        let (tau_sched, tau1_sched, tau2_sched, eta_sched) = match self.solver {
            SolverKind::Sonx | SolverKind::TpaucSonx | SolverKind::GdroSonx => {
                let (tau, eta) = theorem_schedule_fcco(epsilon, n_outer, b1, b2)?;
                (tau, tau, tau, eta)
            }
            SolverKind::SonxMa => {
                let (tau, eta) = theorem_schedule_fcco_ma(epsilon, n_outer, b1, b2)?;
                (tau, tau, tau, eta)
            }
            SolverKind::Sont | SolverKind::TpaucSont => {
                let (tau1, tau2, eta) =
                    theorem_schedule_tcco(epsilon, n_outer, n_middle, b1, b2, b3)?;
                (tau2, tau1, tau2, eta)
            }
            SolverKind::SontMa => {
                let (tau1, tau2, eta) =
                    theorem_schedule_tcco_ma(epsilon, n_outer, n_middle, b1, b2, b3)?;
                (tau2, tau1, tau2, eta)
            }
        };

        let tau = h.tau.unwrap_or(tau_sched);
        let tau1 = h.tau1.unwrap_or(tau1_sched);
        let tau2 = h.tau2.unwrap_or(tau2_sched);
        let eta = h.eta.unwrap_or(eta_sched);

        let resolve_gamma = |spec: Option<GammaSpec>, n: usize, b: usize, tau: f64| -> Result<f64> {
            match spec {
                Some(GammaSpec::Value(v)) => Ok(v),
                Some(GammaSpec::Named(NamedGamma::Default)) | None => {
                    if !self.solver.uses_correction() {
                        return Ok(0.0);
                    }
                    if tau >= 1.0 {
                        Ok(0.0)
                    } else {
                        default_gamma(n, b, tau)
                    }
                }
            }
        };

        // correction coefficients per tracked table: two-level u over n
        // blocks; tri-level v over n1 x n2 pairs and u over n1 blocks; the
        // multi-instance TPAUC variant tracks positives, negatives, and u
        let gamma = resolve_gamma(h.gamma, n_outer, b1, tau)?;
        let (gamma1, gamma2, gamma3) = match self.solver {
            SolverKind::Sont | SolverKind::SontMa => (
                resolve_gamma(h.gamma1, n_outer * n_middle, b1 * b2, tau1)?,
                resolve_gamma(h.gamma2, n_outer, b1, tau2)?,
                0.0,
            ),
            SolverKind::TpaucSont => (
                resolve_gamma(h.gamma1, n_outer, b1, tau1)?,
                resolve_gamma(h.gamma2, n_middle, b2, tau1)?,
                resolve_gamma(h.gamma3, n_outer, b1, tau2)?,
            ),
            _ => (gamma, gamma, gamma),
        };

        let mut config = SolverConfig::new(
            eta,
            tau,
            gamma,
            b1,
            b2,
            h.iterations.unwrap_or(1000),
            h.seed.unwrap_or(7),
        );
        config.eta1 = h.eta1.unwrap_or(eta);
        config.eta2 = h.eta2.unwrap_or(eta);
        config.tau1 = tau1;
        config.tau2 = tau2;
        config.gamma1 = gamma1;
        config.gamma2 = gamma2;
        config.gamma3 = gamma3;
        config.b3 = b3;
        config.trace_every = h.trace_every.unwrap_or(1);
        config.projection_radius = h.projection_radius;
        config.epsilon_target = Some(epsilon);
        config.track_estimator_error = h.track_estimator_error;
        config.read_updated_estimates = h.read_updated_estimates;
        config.scale_s_by_batch = h.scale_s_by_batch.unwrap_or(true);
        config.validate()?;
        Ok(config)
    }
}
