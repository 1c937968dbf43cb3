//! Multi-block variance-reduced (MSVR) and coordinate moving-average value
//! trackers.
//!
//! A tracker holds one estimate per block. An update touches only the blocks
//! in the sampled batch; everything else is left bit-identical. The MSVR rule
//! for a sampled block is
//!
//! `u <- (1 - tau) u + tau g_curr + gamma (g_curr - g_prev)`
//!
//! where `g_curr` and `g_prev` are evaluations at the current and previous
//! iterate on the *same* sample batch. The moving-average rule is the
//! `gamma = 0` special case with no previous evaluation.

use std::collections::HashMap;

use crate::error::{CcoError, Result};
use crate::linalg::{self, distance};
use crate::scalar::Scalar;

/// Dense per-block value tracker (`u_i` tables).
#[derive(Clone, Debug)]
pub struct BlockEstimatorState<T> {
    estimates: Vec<Vec<T>>,
    value_dim: usize,
    last_update: Vec<u64>,
}

impl<T: Scalar> BlockEstimatorState<T> {
    /// Initializes every block id in `[0, n)` with the given values.
    pub fn from_values(values: Vec<Vec<T>>) -> Result<Self> {
        let dim = values
            .first()
            .map(|v| v.len())
            .ok_or_else(|| CcoError::contract("estimator state needs at least one block"))?;
        if values.iter().any(|v| v.len() != dim) {
            return Err(CcoError::contract("inconsistent estimator value dimension"));
        }
        let n = values.len();
        Ok(BlockEstimatorState {
            estimates: values,
            value_dim: dim,
            last_update: vec![0; n],
        })
    }

    pub fn zeros(n: usize, value_dim: usize) -> Self {
        BlockEstimatorState {
            estimates: vec![vec![T::zero(); value_dim]; n],
            value_dim,
            last_update: vec![0; n],
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.estimates.len()
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn get(&self, block: usize) -> &[T] {
        &self.estimates[block]
    }

    pub fn last_update(&self, block: usize) -> u64 {
        self.last_update[block]
    }

    pub fn values(&self) -> &[Vec<T>] {
        &self.estimates
    }

    fn check_batch(&self, batch: &[usize]) -> Result<()> {
        for &i in batch {
            if i >= self.estimates.len() {
                return Err(CcoError::contract(format!(
                    "block id {i} outside tracked range 0..{}",
                    self.estimates.len()
                )));
            }
        }
        Ok(())
    }

    /// MSVR update over one sampled batch. `g_curr[k]`/`g_prev[k]` belong to
    /// block `batch[k]` and must come from the same sample batch.
    pub fn msvr_update(
        &mut self,
        batch: &[usize],
        g_curr: &[Vec<T>],
        g_prev: &[Vec<T>],
        tau: T,
        gamma: T,
        iteration: u64,
    ) -> Result<()> {
        self.check_batch(batch)?;
        if g_curr.len() != batch.len() || g_prev.len() != batch.len() {
            return Err(CcoError::contract(format!(
                "msvr update needs one current and one previous evaluation per batched block \
                 (batch {}, curr {}, prev {})",
                batch.len(),
                g_curr.len(),
                g_prev.len()
            )));
        }
        for ((&i, curr), prev) in batch.iter().zip(g_curr).zip(g_prev) {
            if curr.len() != self.value_dim || prev.len() != self.value_dim {
                return Err(CcoError::contract("estimator value dimension mismatch"));
            }
            let u = &mut self.estimates[i];
            for k in 0..self.value_dim {
                u[k] = (T::one() - tau) * u[k] + tau * curr[k] + gamma * (curr[k] - prev[k]);
            }
            self.last_update[i] = iteration;
        }
        Ok(())
    }

    /// MSVR update followed by projection of each touched value onto the
    /// Euclidean ball of the given radius.
    pub fn msvr_update_projected(
        &mut self,
        batch: &[usize],
        g_curr: &[Vec<T>],
        g_prev: &[Vec<T>],
        tau: T,
        gamma: T,
        radius: T,
        iteration: u64,
    ) -> Result<()> {
        if radius <= T::zero() {
            return Err(CcoError::invalid_config(format!(
                "projection radius must be positive, got {radius}"
            )));
        }
        self.msvr_update(batch, g_curr, g_prev, tau, gamma, iteration)?;
        for &i in batch {
            linalg::project_onto_ball(&mut self.estimates[i], radius);
        }
        Ok(())
    }

    /// Coordinate moving average: the `gamma = 0` path with no previous
    /// evaluation required.
    pub fn ma_update(
        &mut self,
        batch: &[usize],
        g_curr: &[Vec<T>],
        tau: T,
        iteration: u64,
    ) -> Result<()> {
        self.check_batch(batch)?;
        if g_curr.len() != batch.len() {
            return Err(CcoError::contract(
                "ma update needs one evaluation per batched block",
            ));
        }
        for (&i, curr) in batch.iter().zip(g_curr) {
            if curr.len() != self.value_dim {
                return Err(CcoError::contract("estimator value dimension mismatch"));
            }
            let u = &mut self.estimates[i];
            for k in 0..self.value_dim {
                u[k] = (T::one() - tau) * u[k] + tau * curr[k];
            }
            self.last_update[i] = iteration;
        }
        Ok(())
    }

    /// Tri-level middle-average update: for each `i` in `batch1`,
    ///
    /// `u_i <- (1 - tau2) u_i + (1/B2) sum_j [tau2 g_i(v_ij) + gamma2 (g_i(v_ij) - g_i(v_ij^prev))]`
    ///
    /// where `g_curr[k][l]`/`g_prev[k][l]` are the middle values for block
    /// `batch1[k]` and the `l`-th middle block of the shared batch2.
    pub fn tcco_u_update(
        &mut self,
        batch1: &[usize],
        g_curr: &[Vec<Vec<T>>],
        g_prev: &[Vec<Vec<T>>],
        tau2: T,
        gamma2: T,
        iteration: u64,
    ) -> Result<()> {
        self.check_batch(batch1)?;
        if g_curr.len() != batch1.len() || g_prev.len() != batch1.len() {
            return Err(CcoError::contract(
                "tcco u update needs per-block middle evaluations",
            ));
        }
        for ((&i, curr), prev) in batch1.iter().zip(g_curr).zip(g_prev) {
            if curr.is_empty() || curr.len() != prev.len() {
                return Err(CcoError::contract(
                    "tcco u update needs matching current/previous middle batches",
                ));
            }
            let b2 = T::of(curr.len() as f64);
            let u = &mut self.estimates[i];
            let mut fresh = vec![T::zero(); self.value_dim];
            for (c, p) in curr.iter().zip(prev.iter()) {
                if c.len() != self.value_dim || p.len() != self.value_dim {
                    return Err(CcoError::contract("estimator value dimension mismatch"));
                }
                for k in 0..self.value_dim {
                    fresh[k] = fresh[k] + tau2 * c[k] + gamma2 * (c[k] - p[k]);
                }
            }
            for k in 0..self.value_dim {
                u[k] = (T::one() - tau2) * u[k] + fresh[k] / b2;
            }
            self.last_update[i] = iteration;
        }
        Ok(())
    }

    /// Mean norm error `(1/n) sum_i ||u_i - reference_i||` against an exact
    /// per-block oracle.
    pub fn estimator_error(&self, reference: &[Vec<T>]) -> Result<T> {
        if reference.len() != self.estimates.len() {
            return Err(CcoError::contract(format!(
                "reference covers {} blocks, state has {}",
                reference.len(),
                self.estimates.len()
            )));
        }
        let mut acc = T::zero();
        for (u, r) in self.estimates.iter().zip(reference) {
            if r.len() != self.value_dim {
                return Err(CcoError::contract("reference value dimension mismatch"));
            }
            acc = acc + distance(u, r);
        }
        Ok(acc / T::of(self.estimates.len() as f64))
    }
}

/// Sparse per-pair value tracker (`v_ij` tables) for tri-level problems.
///
/// Values are keyed by `(i, j)`. The table also remembers, for pairs touched
/// at the previous iteration, the value they held before that update, so the
/// correction term can read the one-iteration-old table without a full copy.
#[derive(Clone, Debug)]
pub struct PairEstimatorState<T> {
    values: HashMap<(usize, usize), Vec<T>>,
    prev_overwritten: HashMap<(usize, usize), Vec<T>>,
    pending_overwritten: HashMap<(usize, usize), Vec<T>>,
    value_dim: usize,
    lazy: bool,
}

impl<T: Scalar> PairEstimatorState<T> {
    /// Fully initialized table (one entry per pair).
    pub fn from_values(values: HashMap<(usize, usize), Vec<T>>, value_dim: usize) -> Result<Self> {
        if values.values().any(|v| v.len() != value_dim) {
            return Err(CcoError::contract("inconsistent pair value dimension"));
        }
        Ok(PairEstimatorState {
            values,
            prev_overwritten: HashMap::new(),
            pending_overwritten: HashMap::new(),
            value_dim,
            lazy: false,
        })
    }

    /// Empty table; entries appear on first touch, initialized from the
    /// first stochastic evaluation. Trades the up-front `n1 * n2`
    /// initialization sweep for a cold-start bias on late-sampled pairs.
    pub fn lazy(value_dim: usize) -> Self {
        PairEstimatorState {
            values: HashMap::new(),
            prev_overwritten: HashMap::new(),
            pending_overwritten: HashMap::new(),
            value_dim,
            lazy: true,
        }
    }

    pub fn is_lazy(&self) -> bool {
        self.lazy
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&[T]> {
        self.values.get(&(i, j)).map(|v| v.as_slice())
    }

    /// Value as of the *previous* iteration (before the last committed
    /// update), falling back to the current value for untouched pairs.
    pub fn previous(&self, i: usize, j: usize) -> Option<&[T]> {
        self.prev_overwritten
            .get(&(i, j))
            .map(|v| v.as_slice())
            .or_else(|| self.get(i, j))
    }

    /// Ensures a pair exists, seeding it with `init` when lazy.
    pub fn ensure(&mut self, i: usize, j: usize, init: &[T]) -> Result<()> {
        if !self.values.contains_key(&(i, j)) {
            if !self.lazy {
                return Err(CcoError::contract(format!(
                    "pair ({i}, {j}) missing from a fully-initialized table"
                )));
            }
            self.values.insert((i, j), init.to_vec());
        }
        Ok(())
    }

    /// Projected MSVR update of one pair. Records the overwritten value for
    /// `previous` lookups after `commit_iteration`.
    pub fn msvr_update_projected(
        &mut self,
        i: usize,
        j: usize,
        h_curr: &[T],
        h_prev: &[T],
        tau1: T,
        gamma1: T,
        radius: T,
    ) -> Result<()> {
        if radius <= T::zero() {
            return Err(CcoError::invalid_config(format!(
                "projection radius must be positive, got {radius}"
            )));
        }
        self.update_inner(i, j, h_curr, h_prev, tau1, gamma1, Some(radius))
    }

    /// Unprojected moving-average update (`gamma = 0` callers pass
    /// `h_prev = h_curr`).
    pub fn update(
        &mut self,
        i: usize,
        j: usize,
        h_curr: &[T],
        h_prev: &[T],
        tau1: T,
        gamma1: T,
    ) -> Result<()> {
        self.update_inner(i, j, h_curr, h_prev, tau1, gamma1, None)
    }

    fn update_inner(
        &mut self,
        i: usize,
        j: usize,
        h_curr: &[T],
        h_prev: &[T],
        tau1: T,
        gamma1: T,
        radius: Option<T>,
    ) -> Result<()> {
        if h_curr.len() != self.value_dim || h_prev.len() != self.value_dim {
            return Err(CcoError::contract("pair value dimension mismatch"));
        }
        self.ensure(i, j, h_curr)?;
        let v = self.values.get_mut(&(i, j)).expect("ensured above");
        self.pending_overwritten
            .entry((i, j))
            .or_insert_with(|| v.clone());
        for k in 0..self.value_dim {
            v[k] = (T::one() - tau1) * v[k] + tau1 * h_curr[k] + gamma1 * (h_curr[k] - h_prev[k]);
        }
        if let Some(r) = radius {
            linalg::project_onto_ball(v, r);
        }
        Ok(())
    }

    /// Seals the iteration: values overwritten during it become the
    /// `previous` snapshot.
    pub fn commit_iteration(&mut self) {
        self.prev_overwritten = std::mem::take(&mut self.pending_overwritten);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(values: &[f64]) -> BlockEstimatorState<f64> {
        BlockEstimatorState::from_values(values.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    #[test]
    fn full_replacement_at_tau_one() {
        let mut s = state(&[5.0, -2.0]);
        s.msvr_update(&[0, 1], &[vec![3.0], vec![4.0]], &[vec![3.0], vec![4.0]], 1.0, 0.0, 1)
            .unwrap();
        assert_eq!(s.get(0), &[3.0]);
        assert_eq!(s.get(1), &[4.0]);
    }

    #[test]
    fn correction_vanishes_on_equal_iterates() {
        // u = 0, g_curr = g_prev = 1, tau = 0.5, gamma = 18.5 -> u = 0.5
        let mut s = state(&[0.0]);
        s.msvr_update(&[0], &[vec![1.0]], &[vec![1.0]], 0.5, 18.5, 1)
            .unwrap();
        assert!((s.get(0)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn untouched_blocks_are_bit_identical() {
        let mut s = state(&[1.0, 2.0, 3.0]);
        let before = s.get(2).to_vec();
        s.msvr_update(&[0], &[vec![9.0]], &[vec![8.0]], 0.25, 2.0, 4)
            .unwrap();
        assert_eq!(s.get(2), before.as_slice());
        assert_eq!(s.last_update(2), 0);
        assert_eq!(s.last_update(0), 4);
    }

    #[test]
    fn missing_prev_is_contract_violation() {
        let mut s = state(&[1.0]);
        let err = s.msvr_update(&[0], &[vec![1.0]], &[], 0.5, 1.0, 1);
        assert!(matches!(err, Err(CcoError::ContractViolation(_))));
    }

    #[test]
    fn ma_equals_msvr_with_zero_gamma() {
        let mut a = state(&[1.0, 2.0, 3.0, 4.0]);
        let mut b = a.clone();
        let mut rng_vals = 0.3f64;
        for t in 0..100u64 {
            rng_vals = (rng_vals * 1103515245.0 + 12345.0) % 7.13;
            let batch = vec![(t as usize) % 4, ((t + 2) as usize) % 4];
            let curr: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| vec![rng_vals + i as f64])
                .collect();
            let junk_prev: Vec<Vec<f64>> =
                batch.iter().map(|&i| vec![-(i as f64) * 9.9]).collect();
            a.msvr_update(&batch, &curr, &junk_prev, 0.3, 0.0, t).unwrap();
            b.ma_update(&batch, &curr, 0.3, t).unwrap();
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn noiseless_fixed_point() {
        let mut s = state(&[2.5]);
        for (tau, gamma) in [(0.1, 0.0), (0.7, 3.0), (1.0, 18.5)] {
            s.msvr_update(&[0], &[vec![2.5]], &[vec![2.5]], tau, gamma, 1)
                .unwrap();
            assert!((s.get(0)[0] - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn projection_caps_norm_keeps_direction() {
        let mut s = BlockEstimatorState::from_values(vec![vec![0.0, 0.0]]).unwrap();
        // update lands at (3, 0) with norm 3, radius 2
        s.msvr_update_projected(&[0], &[vec![3.0, 0.0]], &[vec![3.0, 0.0]], 1.0, 0.0, 2.0, 1)
            .unwrap();
        assert_eq!(s.get(0), &[2.0, 0.0]);
        // interior update is untouched
        s.msvr_update_projected(&[0], &[vec![0.5, 0.5]], &[vec![0.5, 0.5]], 1.0, 0.0, 2.0, 2)
            .unwrap();
        assert_eq!(s.get(0), &[0.5, 0.5]);
        // non-positive radius rejected
        assert!(s
            .msvr_update_projected(&[0], &[vec![1.0, 0.0]], &[vec![1.0, 0.0]], 1.0, 0.0, 0.0, 3)
            .is_err());
    }

    #[test]
    fn tcco_full_replacement_is_middle_mean() {
        let mut s = state(&[10.0]);
        let curr = vec![vec![vec![1.0], vec![3.0], vec![8.0]]];
        let prev = curr.clone();
        s.tcco_u_update(&[0], &curr, &prev, 1.0, 0.0, 1).unwrap();
        assert!((s.get(0)[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn tcco_correction_zero_when_v_static() {
        let mut a = state(&[1.0]);
        let mut b = state(&[1.0]);
        let curr = vec![vec![vec![2.0], vec![4.0]]];
        a.tcco_u_update(&[0], &curr, &curr, 0.5, 7.0, 1).unwrap();
        b.tcco_u_update(&[0], &curr, &curr, 0.5, 0.0, 1).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn estimator_error_is_mean_norm() {
        let s = state(&[1.0, 3.0]);
        let reference = vec![vec![0.0], vec![0.0]];
        assert!((s.estimator_error(&reference).unwrap() - 2.0).abs() < 1e-15);
        let same = vec![vec![1.0], vec![3.0]];
        assert_eq!(s.estimator_error(&same).unwrap(), 0.0);
        assert!(s.estimator_error(&[vec![0.0]]).is_err());
    }

    #[test]
    fn estimator_error_matches_naive_loop() {
        let values: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![0.3 * i as f64, -(i as f64) * 0.7 + 0.2])
            .collect();
        let reference: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![1.1 - 0.2 * i as f64, 0.4 * i as f64])
            .collect();
        let s = BlockEstimatorState::from_values(values.clone()).unwrap();
        let mut expect = 0.0;
        for (u, r) in values.iter().zip(reference.iter()) {
            let mut sq = 0.0;
            for (a, b) in u.iter().zip(r.iter()) {
                sq += (a - b) * (a - b);
            }
            expect += sq.sqrt();
        }
        expect /= 5.0;
        assert!((s.estimator_error(&reference).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn pair_table_previous_tracks_one_iteration() {
        let mut p = PairEstimatorState::lazy(1);
        p.ensure(0, 0, &[1.0]).unwrap();
        p.update(0, 0, &[3.0], &[3.0], 1.0, 0.0).unwrap();
        p.commit_iteration();
        assert_eq!(p.get(0, 0).unwrap(), &[3.0]);
        assert_eq!(p.previous(0, 0).unwrap(), &[1.0]);
        // untouched pair: previous falls back to current
        p.ensure(1, 1, &[5.0]).unwrap();
        p.commit_iteration();
        assert_eq!(p.previous(1, 1).unwrap(), &[5.0]);
    }

    #[test]
    fn strict_pair_table_rejects_unknown_pairs() {
        let mut values = HashMap::new();
        values.insert((0, 0), vec![1.0]);
        let mut p = PairEstimatorState::from_values(values, 1).unwrap();
        assert!(p.update(0, 1, &[1.0], &[1.0], 0.5, 0.0).is_err());
    }
}

#[cfg(test)]
mod property_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn untouched_block_invariant(
            init in proptest::collection::vec(-10.0f64..10.0, 4),
            curr in -10.0f64..10.0,
            prev in -10.0f64..10.0,
            tau in 0.01f64..1.0,
            gamma in 0.0f64..20.0,
            touched in 0usize..4,
        ) {
            let mut s = BlockEstimatorState::from_values(
                init.iter().map(|&v| vec![v]).collect()).unwrap();
            s.msvr_update(&[touched], &[vec![curr]], &[vec![prev]], tau, gamma, 1).unwrap();
            for i in 0..4 {
                if i != touched {
                    prop_assert_eq!(s.get(i)[0], init[i]);
                }
            }
        }

        #[test]
        fn projection_safety(
            v in proptest::collection::vec(-100.0f64..100.0, 3),
            curr in proptest::collection::vec(-100.0f64..100.0, 3),
            tau in 0.01f64..1.0,
            gamma in 0.0f64..5.0,
            radius in 0.1f64..10.0,
        ) {
            let mut s = BlockEstimatorState::from_values(vec![v]).unwrap();
            let prev = vec![0.0; 3];
            s.msvr_update_projected(&[0], &[curr], &[prev], tau, gamma, radius, 1).unwrap();
            prop_assert!(crate::linalg::norm(s.get(0)) <= radius + 1e-12);
        }
    }
}
