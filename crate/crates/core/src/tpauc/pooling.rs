//! Bag pooling operators.

use super::{Bag, Scorer};
use crate::error::{CcoError, Result};
use crate::scalar::Scalar;

/// How instance scores aggregate into a bag score.
#[derive(Clone, Copy, Debug)]
pub enum Pooling<T> {
    Mean,
    /// `tau * log(mean exp(score / tau) + offset)`; `offset = 0` gives the
    /// plain log-sum-exp score, a positive offset keeps the tracked
    /// exponential mean bounded away from zero.
    SmoothedMax { tau: T, offset: T },
}

fn instance_indices(bag_len: usize, subset: Option<&[usize]>) -> Vec<usize> {
    match subset {
        Some(ids) => ids.to_vec(),
        None => (0..bag_len).collect(),
    }
}

/// Mean-pooled score over the full bag or an instance sub-batch.
pub fn mean_pool<T: Scalar>(
    scorer: &Scorer,
    w: &[T],
    bag: &Bag<T>,
    subset: Option<&[usize]>,
) -> Result<T> {
    if bag.is_empty() {
        return Err(CcoError::data(0, "empty bag"));
    }
    let ids = instance_indices(bag.len(), subset);
    let mut acc = T::zero();
    for &k in &ids {
        acc = acc + scorer.score(w, &bag.instances[k]);
    }
    Ok(acc / T::of(ids.len() as f64))
}

fn log_add_exp<T: Scalar>(a: T, b: T) -> T {
    if a.is_infinite() && a < T::zero() {
        return b;
    }
    if b.is_infinite() && b < T::zero() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (T::one() + (lo - hi).exp()).ln()
}

/// Smoothed-max (log-sum-exp) pooled score, computed with a max shift.
pub fn smoothed_max_pool<T: Scalar>(
    scorer: &Scorer,
    w: &[T],
    bag: &Bag<T>,
    tau: T,
    offset: T,
    subset: Option<&[usize]>,
) -> Result<T> {
    if tau <= T::zero() {
        return Err(CcoError::invalid_config("pooling tau must be positive"));
    }
    if offset < T::zero() {
        return Err(CcoError::invalid_config("pooling offset must be >= 0"));
    }
    if bag.is_empty() {
        return Err(CcoError::data(0, "empty bag"));
    }
    let ids = instance_indices(bag.len(), subset);
    let scores: Vec<T> = ids
        .iter()
        .map(|&k| scorer.score(w, &bag.instances[k]))
        .collect();
    let max = scores.iter().cloned().fold(scores[0], T::max);
    let mean_shifted: T = scores.iter().map(|&s| ((s - max) / tau).exp()).sum::<T>()
        / T::of(scores.len() as f64);
    // log(mean exp(s/tau) + offset) via log-add-exp for stability
    let log_mean = max / tau + mean_shifted.ln();
    let total = if offset > T::zero() {
        log_add_exp(log_mean, offset.ln())
    } else {
        log_mean
    };
    Ok(tau * total)
}

/// Pooled score under either operator.
pub fn pooled_score<T: Scalar>(
    scorer: &Scorer,
    pooling: &Pooling<T>,
    w: &[T],
    bag: &Bag<T>,
    subset: Option<&[usize]>,
) -> Result<T> {
    match pooling {
        Pooling::Mean => mean_pool(scorer, w, bag, subset),
        Pooling::SmoothedMax { tau, offset } => {
            smoothed_max_pool(scorer, w, bag, *tau, *offset, subset)
        }
    }
}

/// Pooled score and its gradient with respect to the scorer parameters.
pub fn pooled_score_grad<T: Scalar>(
    scorer: &Scorer,
    pooling: &Pooling<T>,
    w: &[T],
    bag: &Bag<T>,
    subset: Option<&[usize]>,
) -> Result<(T, Vec<T>)> {
    if bag.is_empty() {
        return Err(CcoError::data(0, "empty bag"));
    }
    let ids = instance_indices(bag.len(), subset);
    match pooling {
        Pooling::Mean => {
            let mut grad = vec![T::zero(); w.len()];
            let mut value = T::zero();
            let inv = T::one() / T::of(ids.len() as f64);
            for &k in &ids {
                let (s, g) = scorer.score_and_grad(w, &bag.instances[k]);
                value = value + s * inv;
                for (a, b) in grad.iter_mut().zip(g.iter()) {
                    *a = *a + *b * inv;
                }
            }
            Ok((value, grad))
        }
        Pooling::SmoothedMax { tau, offset } => {
            let tau = *tau;
            if tau <= T::zero() {
                return Err(CcoError::invalid_config("pooling tau must be positive"));
            }
            let mut scored = Vec::with_capacity(ids.len());
            for &k in &ids {
                scored.push(scorer.score_and_grad(w, &bag.instances[k]));
            }
            let max = scored
                .iter()
                .map(|(s, _)| *s)
                .fold(scored[0].0, T::max);
            let count = T::of(scored.len() as f64);
            let mean_shifted: T =
                scored.iter().map(|(s, _)| ((*s - max) / tau).exp()).sum::<T>() / count;
            let log_mean = max / tau + mean_shifted.ln();
            let log_total = if *offset > T::zero() {
                log_add_exp(log_mean, offset.ln())
            } else {
                log_mean
            };
            let value = tau * log_total;
            // d value / d score_k = exp(score_k/tau) / (count * (mean + offset))
            let mut grad = vec![T::zero(); w.len()];
            for (s, g) in &scored {
                let weight = ((*s / tau) - count.ln() - log_total).exp();
                for (a, b) in grad.iter_mut().zip(g.iter()) {
                    *a = *a + weight * *b;
                }
            }
            Ok((value, grad))
        }
    }
}
