//! Two-way partial AUC maximization.
//!
//! The exact surrogate restricts the pairwise surrogate loss to the hardest
//! `floor(n+ * alpha)` positives and `floor(n- * beta)` negatives. Training
//! optimizes its threshold reformulation
//! `(1/n+) sum_i f_i(psi_i(w, s_i), s')` with
//! `f_i(g, s') = s' + (g - s')_+ / alpha` and
//! `psi_i(w, s_i) = (1/n-) sum_j [s_i + (l(h_w(X_j) - h_w(X_i)) - s_i)_+ / beta]`,
//! either per-example (two-level) or per-bag with pooled scores (tri-level).

mod metric;
mod pooling;
mod solver_sonx;
mod solver_sont;
mod surrogate;

pub use metric::tpauc_metric;
pub use pooling::{mean_pool, pooled_score, pooled_score_grad, smoothed_max_pool, Pooling};
pub use solver_sonx::{tpauc_sonx_init, tpauc_sonx_run, tpauc_sonx_step, TpaucSonxState};
pub use solver_sont::{tpauc_sont_init, tpauc_sont_run, tpauc_sont_step, TpaucSontState};
pub use surrogate::{
    cvar_term, cvar_term_subgradient, exact_surrogate_from_scores, outer_f, outer_f_subgradient,
    squared_hinge, squared_hinge_deriv, PsiEval,
};

use crate::error::{CcoError, Result};
use crate::scalar::Scalar;

/// A bag of instance feature vectors; regular examples are singleton bags.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag<T> {
    pub instances: Vec<Vec<T>>,
}

impl<T> Bag<T> {
    pub fn singleton(features: Vec<T>) -> Self {
        Bag {
            instances: vec![features],
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Labeled dataset split into positives and negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct TpaucDataset<T> {
    pub positives: Vec<Bag<T>>,
    pub negatives: Vec<Bag<T>>,
    pub feature_dim: usize,
}

impl<T> TpaucDataset<T> {
    pub fn n_pos(&self) -> usize {
        self.positives.len()
    }

    pub fn n_neg(&self) -> usize {
        self.negatives.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(CcoError::contract(
                "dataset needs at least one positive and one negative example",
            ));
        }
        for bag in self.positives.iter().chain(self.negatives.iter()) {
            if bag.is_empty() {
                return Err(CcoError::contract("empty bag"));
            }
            if bag.instances.iter().any(|x| x.len() != self.feature_dim) {
                return Err(CcoError::contract("inconsistent feature dimension"));
            }
        }
        Ok(())
    }
}

/// Squared-hinge surrogate parameters and the TPR/FPR budgets.
#[derive(Clone, Copy, Debug)]
pub struct SurrogateSpec<T> {
    pub margin: T,
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> SurrogateSpec<T> {
    pub fn new(margin: T, alpha: T, beta: T) -> Result<Self> {
        if margin <= T::zero() {
            return Err(CcoError::invalid_config("margin must be positive"));
        }
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if v <= T::zero() || v > T::one() {
                return Err(CcoError::invalid_config(format!(
                    "{name} must be in (0, 1], got {v}"
                )));
            }
        }
        Ok(SurrogateSpec {
            margin,
            alpha,
            beta,
        })
    }

    /// `(floor(n+ alpha), floor(n- beta))`; errors when a selection is empty.
    pub fn selection_sizes(&self, n_pos: usize, n_neg: usize) -> Result<(usize, usize)> {
        let k1 = (T::of(n_pos as f64) * self.alpha).floor().as_f64() as usize;
        let k2 = (T::of(n_neg as f64) * self.beta).floor().as_f64() as usize;
        if k1 == 0 || k2 == 0 {
            return Err(CcoError::invalid_config(format!(
                "empty selection: floor(n+ alpha) = {k1}, floor(n- beta) = {k2}"
            )));
        }
        Ok((k1, k2))
    }
}

/// Instance scorer family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorerKind {
    Linear,
    OneHidden { hidden: usize },
}

/// Maps an instance feature vector to a scalar score; optionally squashed
/// through a sigmoid.
#[derive(Clone, Copy, Debug)]
pub struct Scorer {
    pub kind: ScorerKind,
    pub input_dim: usize,
    pub sigmoid: bool,
}

impl Scorer {
    pub fn linear(input_dim: usize, sigmoid: bool) -> Self {
        Scorer {
            kind: ScorerKind::Linear,
            input_dim,
            sigmoid,
        }
    }

    pub fn one_hidden(input_dim: usize, hidden: usize, sigmoid: bool) -> Self {
        Scorer {
            kind: ScorerKind::OneHidden { hidden },
            input_dim,
            sigmoid,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self.kind {
            ScorerKind::Linear => self.input_dim,
            ScorerKind::OneHidden { hidden } => hidden * self.input_dim + hidden,
        }
    }

    fn raw_score<T: Scalar>(&self, w: &[T], x: &[T]) -> T {
        match self.kind {
            ScorerKind::Linear => w.iter().zip(x.iter()).map(|(a, b)| *a * *b).sum(),
            ScorerKind::OneHidden { hidden } => {
                let d = self.input_dim;
                let (w1, w2) = w.split_at(hidden * d);
                let mut out = T::zero();
                for k in 0..hidden {
                    let z: T = w1[k * d..(k + 1) * d]
                        .iter()
                        .zip(x.iter())
                        .map(|(a, b)| *a * *b)
                        .sum();
                    out = out + w2[k] * z.tanh();
                }
                out
            }
        }
    }

    pub fn score<T: Scalar>(&self, w: &[T], x: &[T]) -> T {
        let raw = self.raw_score(w, x);
        if self.sigmoid {
            T::one() / (T::one() + (-raw).exp())
        } else {
            raw
        }
    }

    /// Score and its gradient with respect to the parameters.
    pub fn score_and_grad<T: Scalar>(&self, w: &[T], x: &[T]) -> (T, Vec<T>) {
        let raw = self.raw_score(w, x);
        let mut grad = match self.kind {
            ScorerKind::Linear => x.to_vec(),
            ScorerKind::OneHidden { hidden } => {
                let d = self.input_dim;
                let (w1, w2) = w.split_at(hidden * d);
                let mut g = vec![T::zero(); w.len()];
                for k in 0..hidden {
                    let z: T = w1[k * d..(k + 1) * d]
                        .iter()
                        .zip(x.iter())
                        .map(|(a, b)| *a * *b)
                        .sum();
                    let th = z.tanh();
                    let dth = T::one() - th * th;
                    for l in 0..d {
                        g[k * d + l] = w2[k] * dth * x[l];
                    }
                    g[hidden * d + k] = th;
                }
                g
            }
        };
        if self.sigmoid {
            let s = T::one() / (T::one() + (-raw).exp());
            let scale = s * (T::one() - s);
            for g in grad.iter_mut() {
                *g = *g * scale;
            }
            (s, grad)
        } else {
            (raw, grad)
        }
    }
}

/// Everything needed to evaluate and train one TPAUC objective.
#[derive(Clone, Debug)]
pub struct TpaucModel<'a, T> {
    pub dataset: &'a TpaucDataset<T>,
    pub scorer: Scorer,
    pub pooling: Pooling<T>,
    pub spec: SurrogateSpec<T>,
}

impl<'a, T: Scalar> TpaucModel<'a, T> {
    pub fn new(
        dataset: &'a TpaucDataset<T>,
        scorer: Scorer,
        pooling: Pooling<T>,
        spec: SurrogateSpec<T>,
    ) -> Result<Self> {
        dataset.validate()?;
        if scorer.input_dim != dataset.feature_dim {
            return Err(CcoError::contract(format!(
                "scorer expects dimension {}, dataset has {}",
                scorer.input_dim, dataset.feature_dim
            )));
        }
        spec.selection_sizes(dataset.n_pos(), dataset.n_neg())?;
        Ok(TpaucModel {
            dataset,
            scorer,
            pooling,
            spec,
        })
    }

    /// Exact pooled score of positive example `i` (full bag).
    pub fn pos_score(&self, w: &[T], i: usize) -> Result<T> {
        pooled_score(&self.scorer, &self.pooling, w, &self.dataset.positives[i], None)
    }

    /// Exact pooled score of negative example `j` (full bag).
    pub fn neg_score(&self, w: &[T], j: usize) -> Result<T> {
        pooled_score(&self.scorer, &self.pooling, w, &self.dataset.negatives[j], None)
    }

    pub fn all_scores(&self, w: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let pos = (0..self.dataset.n_pos())
            .map(|i| self.pos_score(w, i))
            .collect::<Result<Vec<_>>>()?;
        let neg = (0..self.dataset.n_neg())
            .map(|j| self.neg_score(w, j))
            .collect::<Result<Vec<_>>>()?;
        Ok((pos, neg))
    }

    /// TPAUC of the current parameters on this dataset.
    pub fn metric(&self, w: &[T]) -> Result<T> {
        let (pos, neg) = self.all_scores(w)?;
        tpauc_metric(&pos, &neg, self.spec.alpha, self.spec.beta)
    }

    /// Exact reformulated objective as a function of the joint
    /// `(w, s, s')` vector, usable with the envelope diagnostics.
    pub fn joint_objective(&self, rho: T) -> TpaucJointObjective<'_, 'a, T> {
        TpaucJointObjective { model: self, rho }
    }

    /// Certified weak-convexity modulus of the reformulated objective, when
    /// a closed-form bound exists for the configured scorer family.
    ///
    /// Unsquashed linear scores make every level convex (modulus zero). With
    /// the sigmoid squash the per-pair loss picks up curvature bounded by
    /// `2 C_l rho_h + 4 rho_l C_h^2`, divided by `beta` for the inner hinge
    /// and `alpha` for the outer one; `C_h <= X/4` and
    /// `rho_h <= X^2 / (6 sqrt 3)` with `X` the largest instance norm (plus
    /// a `1/(16 tau)` log-sum-exp term for smoothed-max pooling). No bound
    /// is attempted for the hidden-layer scorer.
    pub fn weak_convexity_bound(&self) -> Option<T> {
        if !matches!(self.scorer.kind, ScorerKind::Linear) {
            return None;
        }
        if !self.scorer.sigmoid {
            return Some(T::zero());
        }
        let mut x_max = T::zero();
        for bag in self
            .dataset
            .positives
            .iter()
            .chain(self.dataset.negatives.iter())
        {
            for inst in &bag.instances {
                x_max = x_max.max(crate::linalg::norm(inst));
            }
        }
        let sig_curv = T::of(1.0 / (6.0 * 3f64.sqrt()));
        let (c_h, rho_h, score_range) = match self.pooling {
            Pooling::Mean => (
                x_max / T::of(4.0),
                sig_curv * x_max * x_max,
                T::one(),
            ),
            Pooling::SmoothedMax { tau, offset } => (
                x_max / T::of(4.0),
                sig_curv * x_max * x_max + x_max * x_max / (T::of(16.0) * tau),
                T::one() + tau * offset.ln_1p(),
            ),
        };
        let rho_loss = T::of(2.0); // squared hinge
        let c_loss = T::of(2.0) * (score_range + self.spec.margin);
        let rho_pair = T::of(4.0) * rho_loss * c_h * c_h + T::of(2.0) * c_loss * rho_h;
        Some(rho_pair / (self.spec.beta * self.spec.alpha))
    }
}

/// [`crate::diagnostics::Objective`] adapter over the concatenated
/// `(w, s, s')` variable. `rho` is the declared weak-convexity modulus
/// (zero for the convex linear-scorer case).
pub struct TpaucJointObjective<'m, 'a, T> {
    model: &'m TpaucModel<'a, T>,
    rho: T,
}

impl<'m, 'a, T: Scalar> TpaucJointObjective<'m, 'a, T> {
    fn split<'z>(&self, z: &'z [T]) -> (&'z [T], &'z [T], T) {
        let d = self.model.scorer.param_dim();
        let n_pos = self.model.dataset.n_pos();
        (&z[..d], &z[d..d + n_pos], z[d + n_pos])
    }

    pub fn pack(&self, w: &[T], s: &[T], s_prime: T) -> crate::linalg::ParamVector<T> {
        let mut z = w.to_vec();
        z.extend_from_slice(s);
        z.push(s_prime);
        crate::linalg::ParamVector::new(z)
    }
}

impl<'m, 'a, T: Scalar> crate::diagnostics::Objective<T> for TpaucJointObjective<'m, 'a, T> {
    fn dim(&self) -> usize {
        self.model.scorer.param_dim() + self.model.dataset.n_pos() + 1
    }

    fn value(&self, x: &crate::linalg::ParamVector<T>) -> T {
        let (w, s, sp) = self.split(x.as_slice());
        self.model.objective(w, s, sp).unwrap_or_else(|_| T::infinity())
    }

    fn subgradient(&self, x: &crate::linalg::ParamVector<T>) -> crate::linalg::ParamVector<T> {
        let (w, s, sp) = self.split(x.as_slice());
        let (gw, gs, gsp) = self
            .model
            .full_subgradient(w, s, sp)
            .expect("subgradient evaluation");
        let mut z = gw;
        z.extend_from_slice(&gs);
        z.push(gsp);
        crate::linalg::ParamVector::new(z)
    }

    fn weak_convexity(&self) -> T {
        self.rho
    }
}
