//! Surrogate pieces: threshold terms, the per-positive inner loss, the exact
//! top-pair surrogate, and full-batch subgradients.

use super::TpaucModel;
use crate::error::{CcoError, Result};
use crate::scalar::Scalar;

/// `max(0, z + margin)^2`, the squared-hinge surrogate of the 0/1 ranking
/// indicator.
pub fn squared_hinge<T: Scalar>(z: T, margin: T) -> T {
    let a = (z + margin).max(T::zero());
    a * a
}

pub fn squared_hinge_deriv<T: Scalar>(z: T, margin: T) -> T {
    T::of(2.0) * (z + margin).max(T::zero())
}

/// Threshold-plus-hinge term `s + (x - s)_+ / budget`, the building block of
/// both conditional-value-at-risk reformulation levels.
pub fn cvar_term<T: Scalar>(x: T, s: T, budget: T) -> T {
    s + (x - s).max(T::zero()) / budget
}

/// Subgradients `(d/dx, d/ds)` of [`cvar_term`] with the hinge-at-zero
/// convention: the hinge counts as inactive exactly at the kink.
pub fn cvar_term_subgradient<T: Scalar>(x: T, s: T, budget: T) -> (T, T) {
    if x - s > T::zero() {
        (T::one() / budget, T::one() - T::one() / budget)
    } else {
        (T::zero(), T::one())
    }
}

/// Outer reformulation term `f(g, s') = s' + (g - s')_+ / alpha`.
pub fn outer_f<T: Scalar>(g: T, s_prime: T, alpha: T) -> Result<T> {
    if alpha <= T::zero() {
        return Err(CcoError::invalid_config("alpha must be positive"));
    }
    Ok(cvar_term(g, s_prime, alpha))
}

/// `(d/dg, d/ds')` of [`outer_f`]; `d/dg` lies in `{0, 1/alpha}` and `d/ds'`
/// in `{1 - 1/alpha, 1}`.
pub fn outer_f_subgradient<T: Scalar>(g: T, s_prime: T, alpha: T) -> Result<(T, T)> {
    if alpha <= T::zero() {
        return Err(CcoError::invalid_config("alpha must be positive"));
    }
    Ok(cvar_term_subgradient(g, s_prime, alpha))
}

/// Exact top-pair surrogate from full score lists: average of
/// `l(score_neg - score_pos)` over the `k1` lowest-scored positives and the
/// `k2` highest-scored negatives, normalized by `1/(k1 k2)`.
pub fn exact_surrogate_from_scores<T: Scalar>(
    pos_scores: &[T],
    neg_scores: &[T],
    margin: T,
    alpha: T,
    beta: T,
) -> Result<T> {
    let k1 = (T::of(pos_scores.len() as f64) * alpha).floor().as_f64() as usize;
    let k2 = (T::of(neg_scores.len() as f64) * beta).floor().as_f64() as usize;
    if k1 == 0 || k2 == 0 {
        return Err(CcoError::invalid_config(
            "empty selection in exact surrogate",
        ));
    }
    let hard_pos = lowest_k(pos_scores, k1);
    let hard_neg = highest_k(neg_scores, k2);
    let mut acc = T::zero();
    for &i in &hard_pos {
        for &j in &hard_neg {
            acc = acc + squared_hinge(neg_scores[j] - pos_scores[i], margin);
        }
    }
    Ok(acc / T::of((k1 * k2) as f64))
}

fn lowest_k<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn highest_k<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Value and subgradients of the per-positive inner loss evaluated on a
/// negative batch.
#[derive(Clone, Debug)]
pub struct PsiEval<T> {
    pub value: T,
    pub grad_w: Vec<T>,
    pub grad_s: T,
}

impl<'a, T: Scalar> TpaucModel<'a, T> {
    /// `psi_i(w, s_i)` on a batch of negatives: the batch average of
    /// `s_i + (l(score_j - score_i) - s_i)_+ / beta`, value only.
    pub fn psi_value(&self, w: &[T], s_i: T, pos: usize, neg_batch: &[usize]) -> Result<T> {
        if neg_batch.is_empty() {
            return Err(CcoError::contract("psi needs a non-empty negative batch"));
        }
        let score_i = self.pos_score(w, pos)?;
        let mut acc = T::zero();
        for &j in neg_batch {
            let score_j = self.neg_score(w, j)?;
            let loss = squared_hinge(score_j - score_i, self.spec.margin);
            acc = acc + cvar_term(loss, s_i, self.spec.beta);
        }
        Ok(acc / T::of(neg_batch.len() as f64))
    }

    /// `psi_i` with subgradients with respect to `w` and `s_i`.
    pub fn psi_eval(&self, w: &[T], s_i: T, pos: usize, neg_batch: &[usize]) -> Result<PsiEval<T>> {
        if neg_batch.is_empty() {
            return Err(CcoError::contract("psi needs a non-empty negative batch"));
        }
        let (score_i, grad_i) = crate::tpauc::pooled_score_grad(
            &self.scorer,
            &self.pooling,
            w,
            &self.dataset.positives[pos],
            None,
        )?;
        let inv = T::one() / T::of(neg_batch.len() as f64);
        let mut value = T::zero();
        let mut grad_w = vec![T::zero(); w.len()];
        let mut grad_s = T::zero();
        for &j in neg_batch {
            let (score_j, grad_j) = crate::tpauc::pooled_score_grad(
                &self.scorer,
                &self.pooling,
                w,
                &self.dataset.negatives[j],
                None,
            )?;
            let delta = score_j - score_i;
            let loss = squared_hinge(delta, self.spec.margin);
            value = value + cvar_term(loss, s_i, self.spec.beta);
            let (d_loss, d_s) = cvar_term_subgradient(loss, s_i, self.spec.beta);
            grad_s = grad_s + d_s;
            if d_loss > T::zero() {
                let chain = d_loss * squared_hinge_deriv(delta, self.spec.margin);
                for ((g, a), b) in grad_w.iter_mut().zip(grad_j.iter()).zip(grad_i.iter()) {
                    *g = *g + chain * (*a - *b);
                }
            }
        }
        value = value * inv;
        grad_s = grad_s * inv;
        for g in grad_w.iter_mut() {
            *g = *g * inv;
        }
        Ok(PsiEval {
            value,
            grad_w,
            grad_s,
        })
    }

    /// Exact top-pair surrogate at `w`.
    pub fn exact_surrogate(&self, w: &[T]) -> Result<T> {
        let (pos, neg) = self.all_scores(w)?;
        exact_surrogate_from_scores(
            &pos,
            &neg,
            self.spec.margin,
            self.spec.alpha,
            self.spec.beta,
        )
    }

    /// One subgradient of the exact top-pair surrogate with respect to `w`
    /// (selection held fixed at the current scores). Drives the full-batch
    /// baseline.
    pub fn exact_surrogate_subgradient(&self, w: &[T]) -> Result<Vec<T>> {
        let (pos, neg) = self.all_scores(w)?;
        let (k1, k2) = self
            .spec
            .selection_sizes(self.dataset.n_pos(), self.dataset.n_neg())?;
        let hard_pos = lowest_k(&pos, k1);
        let hard_neg = highest_k(&neg, k2);
        let mut grad = vec![T::zero(); w.len()];
        let inv = T::one() / T::of((k1 * k2) as f64);
        for &i in &hard_pos {
            let (_, grad_i) = crate::tpauc::pooled_score_grad(
                &self.scorer,
                &self.pooling,
                w,
                &self.dataset.positives[i],
                None,
            )?;
            for &j in &hard_neg {
                let (_, grad_j) = crate::tpauc::pooled_score_grad(
                    &self.scorer,
                    &self.pooling,
                    w,
                    &self.dataset.negatives[j],
                    None,
                )?;
                let chain = squared_hinge_deriv(neg[j] - pos[i], self.spec.margin) * inv;
                for ((g, a), b) in grad.iter_mut().zip(grad_j.iter()).zip(grad_i.iter()) {
                    *g = *g + chain * (*a - *b);
                }
            }
        }
        Ok(grad)
    }

    /// Reformulated objective `(1/n+) sum_i f(psi_i(w, s_i), s')` with exact
    /// (full negative set) inner values.
    pub fn objective(&self, w: &[T], s: &[T], s_prime: T) -> Result<T> {
        if s.len() != self.dataset.n_pos() {
            return Err(CcoError::contract("one threshold per positive expected"));
        }
        let all_neg: Vec<usize> = (0..self.dataset.n_neg()).collect();
        let mut acc = T::zero();
        for i in 0..self.dataset.n_pos() {
            let psi = self.psi_value(w, s[i], i, &all_neg)?;
            acc = acc + outer_f(psi, s_prime, self.spec.alpha)?;
        }
        Ok(acc / T::of(self.dataset.n_pos() as f64))
    }

    /// Full-batch subgradient of [`TpaucModel::objective`] with respect to
    /// `(w, s, s')`.
    pub fn full_subgradient(&self, w: &[T], s: &[T], s_prime: T) -> Result<(Vec<T>, Vec<T>, T)> {
        if s.len() != self.dataset.n_pos() {
            return Err(CcoError::contract("one threshold per positive expected"));
        }
        let n_pos = self.dataset.n_pos();
        let all_neg: Vec<usize> = (0..self.dataset.n_neg()).collect();
        let inv = T::one() / T::of(n_pos as f64);
        let mut grad_w = vec![T::zero(); w.len()];
        let mut grad_s = vec![T::zero(); n_pos];
        let mut grad_sp = T::zero();
        for i in 0..n_pos {
            let psi = self.psi_eval(w, s[i], i, &all_neg)?;
            let (df_u, df_sp) = outer_f_subgradient(psi.value, s_prime, self.spec.alpha)?;
            grad_sp = grad_sp + df_sp * inv;
            grad_s[i] = df_u * psi.grad_s * inv;
            for (g, p) in grad_w.iter_mut().zip(psi.grad_w.iter()) {
                *g = *g + df_u * *p * inv;
            }
        }
        Ok((grad_w, grad_s, grad_sp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tpauc::{Bag, Pooling, Scorer, SurrogateSpec, TpaucDataset};

    #[test]
    fn outer_f_values() {
        assert!((outer_f(1.0, 0.0, 0.5).unwrap() - 2.0f64).abs() < 1e-15);
        assert!((outer_f(-1.0, 0.0, 0.5).unwrap() - 0.0f64).abs() < 1e-15);
        assert!(outer_f(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn outer_f_subgradient_ranges() {
        // over many random inputs, d/ds' in [1 - 1/alpha, 1], d/dg in [0, 1/alpha]
        let mut z = 0.37f64;
        for _ in 0..10_000 {
            z = (z * 9301.0 + 49297.0) % 233280.0;
            let g = z / 233280.0 * 4.0 - 2.0;
            let sp = ((z * 7.0) % 233280.0) / 233280.0 * 4.0 - 2.0;
            let alpha = 0.25 + ((z * 13.0) % 233280.0) / 233280.0 * 0.7;
            let (dg, dsp) = outer_f_subgradient(g, sp, alpha).unwrap();
            assert!(dg >= 0.0 && dg <= 1.0 / alpha + 1e-12);
            assert!(dsp >= 1.0 - 1.0 / alpha - 1e-12 && dsp <= 1.0);
        }
    }

    fn tiny_dataset() -> TpaucDataset<f64> {
        // scores under w = [1]: positives {0.9, 0.1}, negatives {0.8, 0.2}
        TpaucDataset {
            positives: vec![Bag::singleton(vec![0.9]), Bag::singleton(vec![0.1])],
            negatives: vec![Bag::singleton(vec![0.8]), Bag::singleton(vec![0.2])],
            feature_dim: 1,
        }
    }

    #[test]
    fn exact_surrogate_single_hardest_pair() {
        let data = tiny_dataset();
        let spec = SurrogateSpec::new(1.0, 0.5, 0.5).unwrap();
        let model =
            TpaucModel::new(&data, Scorer::linear(1, false), Pooling::Mean, spec).unwrap();
        // hardest positive 0.1, hardest negative 0.8 -> l(0.7) = 1.7^2
        let got = model.exact_surrogate(&[1.0]).unwrap();
        assert!((got - 2.89).abs() < 1e-12);
    }

    #[test]
    fn full_selection_is_all_pairs_average() {
        let data = tiny_dataset();
        let spec = SurrogateSpec::new(1.0, 1.0, 1.0).unwrap();
        let model =
            TpaucModel::new(&data, Scorer::linear(1, false), Pooling::Mean, spec).unwrap();
        let got = model.exact_surrogate(&[1.0]).unwrap();
        let mut expect = 0.0;
        for p in [0.9, 0.1] {
            for n in [0.8, 0.2] {
                expect += squared_hinge(n - p, 1.0);
            }
        }
        expect /= 4.0;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn psi_saturates_for_large_threshold() {
        let data = tiny_dataset();
        let spec = SurrogateSpec::new(1.0, 0.5, 0.5).unwrap();
        let model =
            TpaucModel::new(&data, Scorer::linear(1, false), Pooling::Mean, spec).unwrap();
        let psi = model.psi_value(&[1.0], 100.0, 0, &[0, 1]).unwrap();
        assert!((psi - 100.0).abs() < 1e-12);
    }

    #[test]
    fn psi_equal_scores_formula() {
        // equal scores, margin 1 -> l = 1, psi = s + (1 - s)_+ / beta
        let data = TpaucDataset {
            positives: vec![Bag::singleton(vec![1.0])],
            negatives: vec![Bag::singleton(vec![1.0]), Bag::singleton(vec![1.0])],
            feature_dim: 1,
        };
        let spec = SurrogateSpec::new(1.0, 1.0, 0.5).unwrap();
        let model =
            TpaucModel::new(&data, Scorer::linear(1, false), Pooling::Mean, spec).unwrap();
        let s_i = 0.25f64;
        let psi = model.psi_value(&[1.0], s_i, 0, &[0, 1]).unwrap();
        assert!((psi - (s_i + (1.0 - s_i) / 0.5)).abs() < 1e-12);
    }

    #[test]
    fn psi_matches_naive_double_loop() {
        let data = TpaucDataset {
            positives: vec![Bag::singleton(vec![0.4, -0.3])],
            negatives: (0..5)
                .map(|j| Bag::singleton(vec![0.1 * j as f64, 0.2 - 0.05 * j as f64]))
                .collect(),
            feature_dim: 2,
        };
        let spec = SurrogateSpec::new(0.7, 1.0, 0.4).unwrap();
        let model =
            TpaucModel::new(&data, Scorer::linear(2, false), Pooling::Mean, spec).unwrap();
        let w = [0.8, -0.6];
        let s_i = 0.3;
        let batch = vec![0, 1, 2, 3, 4];
        let got = model.psi_value(&w, s_i, 0, &batch).unwrap();
        let score_i = 0.8 * 0.4 + 0.6 * 0.3;
        let mut expect = 0.0;
        for j in 0..5 {
            let sj = 0.8 * (0.1 * j as f64) - 0.6 * (0.2 - 0.05 * j as f64);
            expect += s_i + (squared_hinge(sj - score_i, 0.7) - s_i).max(0.0) / 0.4;
        }
        expect /= 5.0;
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn surrogate_monotone_in_scores() {
        // raising a negative's score never lowers the surrogate; raising a
        // positive's never raises it
        let pos = vec![0.2, 0.7, -0.1];
        let neg = vec![0.5, -0.6];
        let base =
            exact_surrogate_from_scores(&pos, &neg, 1.0, 2.0 / 3.0, 0.5).unwrap();
        let mut neg_up = neg.clone();
        neg_up[1] += 0.4;
        let up = exact_surrogate_from_scores(&pos, &neg_up, 1.0, 2.0 / 3.0, 0.5).unwrap();
        assert!(up >= base - 1e-12);
        let mut pos_up = pos.clone();
        pos_up[0] += 0.4;
        let down = exact_surrogate_from_scores(&pos_up, &neg, 1.0, 2.0 / 3.0, 0.5).unwrap();
        assert!(down <= base + 1e-12);
    }
}
