//! The evaluation metric.

use crate::error::{CcoError, Result};
use crate::scalar::Scalar;

/// Two-way partial AUC: the fraction of correctly ordered pairs restricted
/// to the `floor(n+ alpha)` lowest-scored positives and `floor(n- beta)`
/// highest-scored negatives. Ties count one half.
pub fn tpauc_metric<T: Scalar>(
    scores_pos: &[T],
    scores_neg: &[T],
    alpha: T,
    beta: T,
) -> Result<T> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(CcoError::MetricUndefined(
            "needs at least one positive and one negative score".into(),
        ));
    }
    let k1 = (T::of(scores_pos.len() as f64) * alpha).floor().as_f64() as usize;
    let k2 = (T::of(scores_neg.len() as f64) * beta).floor().as_f64() as usize;
    if k1 == 0 || k2 == 0 {
        return Err(CcoError::MetricUndefined(format!(
            "empty restriction: floor(n+ alpha) = {k1}, floor(n- beta) = {k2}"
        )));
    }

    let mut pos = scores_pos.to_vec();
    pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pos.truncate(k1);
    let mut neg = scores_neg.to_vec();
    neg.sort_by(|a, b| b.partial_cmp(a).unwrap());
    neg.truncate(k2);

    let mut correct = T::zero();
    for p in &pos {
        for n in &neg {
            if p > n {
                correct = correct + T::one();
            } else if p == n {
                correct = correct + T::of(0.5);
            }
        }
    }
    Ok(correct / T::of((k1 * k2) as f64))
}
