//! Group distributionally robust optimization as a two-level compositional
//! instance.
//!
//! The robust objective is the conditional value at risk over group losses,
//! `F(w, s) = (1/K) sum_{k=1..N} [L_k(w) - s]_+ + s`, minimized jointly in
//! `(w, s)`. Mapping: one block per group, inner value `(L_k(w; batch), s)`,
//! outer `f_k(u) = (N/K) (u1 - u2)_+ + u2`, so that the block average
//! reproduces the robust objective exactly.

use crate::error::{CcoError, Result};
use crate::linalg::{Jacobian, ParamVector};
use crate::problem::{FccoConstants, FccoProblem};
use crate::scalar::Scalar;

/// Loss on a linear model; labels are 0/1 and are mapped to +-1 internally.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Hinge,
    SquaredHinge,
    Logistic,
}

impl LossKind {
    /// `loss(margin)` where `margin = y * <w, x>` with `y in {-1, +1}`.
    pub fn value<T: Scalar>(self, margin: T) -> T {
        match self {
            LossKind::Hinge => (T::one() - margin).max(T::zero()),
            LossKind::SquaredHinge => {
                let a = (T::one() - margin).max(T::zero());
                a * a
            }
            LossKind::Logistic => (-margin).exp().ln_1p(),
        }
    }

    /// Derivative with respect to the margin (hinge-at-zero convention).
    pub fn deriv<T: Scalar>(self, margin: T) -> T {
        match self {
            LossKind::Hinge => {
                if T::one() - margin > T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            LossKind::SquaredHinge => -T::of(2.0) * (T::one() - margin).max(T::zero()),
            LossKind::Logistic => {
                let e = (-margin).exp();
                -e / (T::one() + e)
            }
        }
    }
}

/// Examples partitioned into groups, with the loss used on each example.
#[derive(Clone, Debug)]
pub struct GroupedDataset<T> {
    pub groups: Vec<Vec<(Vec<T>, T)>>,
    pub feature_dim: usize,
    pub loss: LossKind,
    /// Radius of the parameter region the declared Lipschitz constants are
    /// certified on (only binding for the squared hinge).
    pub radius_hint: T,
}

impl<T: Scalar> GroupedDataset<T> {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(CcoError::contract("dataset needs at least one group"));
        }
        for (k, group) in self.groups.iter().enumerate() {
            if group.is_empty() {
                return Err(CcoError::contract(format!("group {k} is empty")));
            }
            for (x, y) in group {
                if x.len() != self.feature_dim {
                    return Err(CcoError::contract("inconsistent feature dimension"));
                }
                if !(*y == T::zero() || *y == T::one()) {
                    return Err(CcoError::contract("labels must be 0 or 1"));
                }
            }
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Average loss of group `k` over a subset of its examples (all when
    /// `subset` is `None`).
    pub fn group_loss(&self, k: usize, w: &[T], subset: Option<&[u64]>) -> T {
        let group = &self.groups[k];
        let ids: Vec<usize> = match subset {
            Some(s) => s.iter().map(|&i| i as usize).collect(),
            None => (0..group.len()).collect(),
        };
        let mut acc = T::zero();
        for &i in &ids {
            let (x, y) = &group[i];
            let sign = T::of(2.0) * *y - T::one();
            let margin = sign * dot(w, x);
            acc = acc + self.loss.value(margin);
        }
        acc / T::of(ids.len() as f64)
    }

    fn group_loss_grad(&self, k: usize, w: &[T], subset: Option<&[u64]>) -> Vec<T> {
        let group = &self.groups[k];
        let ids: Vec<usize> = match subset {
            Some(s) => s.iter().map(|&i| i as usize).collect(),
            None => (0..group.len()).collect(),
        };
        let mut grad = vec![T::zero(); self.feature_dim];
        let inv = T::one() / T::of(ids.len() as f64);
        for &i in &ids {
            let (x, y) = &group[i];
            let sign = T::of(2.0) * *y - T::one();
            let margin = sign * dot(w, x);
            let chain = self.loss.deriv(margin) * sign * inv;
            for (g, xi) in grad.iter_mut().zip(x.iter()) {
                *g = *g + chain * *xi;
            }
        }
        grad
    }

    fn max_feature_norm(&self) -> T {
        let mut best = T::zero();
        for group in &self.groups {
            for (x, _) in group {
                best = best.max(crate::linalg::norm(x));
            }
        }
        best
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b.iter()).map(|(x, y)| *x * *y).sum()
}

/// The robust objective `(1/K) sum_k [L_k(w) - s]_+ + s` with exact group
/// losses.
pub fn cvar_group_objective<T: Scalar>(
    w: &[T],
    s: T,
    dataset: &GroupedDataset<T>,
    k: usize,
) -> Result<T> {
    let n = dataset.num_groups();
    if k == 0 || k > n {
        return Err(CcoError::invalid_config(format!(
            "K = {k} out of range for {n} groups"
        )));
    }
    let mut acc = T::zero();
    for g in 0..n {
        acc = acc + (dataset.group_loss(g, w, None) - s).max(T::zero());
    }
    Ok(acc / T::of(k as f64) + s)
}

/// Two-level view of the robust objective over the joint variable `(w, s)`
/// (the threshold is the last coordinate).
#[derive(Clone, Debug)]
pub struct GdroProblem<T> {
    dataset: GroupedDataset<T>,
    k: usize,
}

/// Wraps a grouped dataset as a compositional problem with blocks = groups.
pub fn as_fcco<T: Scalar>(dataset: GroupedDataset<T>, k: usize) -> Result<GdroProblem<T>> {
    dataset.validate()?;
    let n = dataset.num_groups();
    if k == 0 || k > n {
        return Err(CcoError::invalid_config(format!(
            "K = {k} out of range for {n} groups"
        )));
    }
    Ok(GdroProblem { dataset, k })
}

impl<T: Scalar> GdroProblem<T> {
    pub fn dataset(&self) -> &GroupedDataset<T> {
        &self.dataset
    }

    pub fn top_k(&self) -> usize {
        self.k
    }

    /// Splits the joint variable into `(w, s)`.
    pub fn split<'a>(&self, joint: &'a ParamVector<T>) -> (&'a [T], T) {
        let slice = joint.as_slice();
        (&slice[..self.dataset.feature_dim], slice[self.dataset.feature_dim])
    }

    /// Robust objective at a joint `(w, s)` point.
    pub fn objective(&self, joint: &ParamVector<T>) -> Result<T> {
        let (w, s) = self.split(joint);
        cvar_group_objective(w, s, &self.dataset, self.k)
    }
}

impl<T: Scalar> FccoProblem<T> for GdroProblem<T> {
    fn num_blocks(&self) -> usize {
        self.dataset.num_groups()
    }

    fn dim(&self) -> usize {
        self.dataset.feature_dim + 1
    }

    fn inner_dim(&self) -> usize {
        2
    }

    fn sample_space(&self, block: usize) -> u64 {
        self.dataset.groups[block].len() as u64
    }

    fn inner_value(&self, block: usize, joint: &ParamVector<T>, batch: &[u64]) -> Vec<T> {
        let (w, s) = self.split(joint);
        vec![self.dataset.group_loss(block, w, Some(batch)), s]
    }

    fn inner_subjacobian(&self, block: usize, joint: &ParamVector<T>, batch: &[u64]) -> Jacobian<T> {
        let (w, _) = self.split(joint);
        let grad = self.dataset.group_loss_grad(block, w, Some(batch));
        let d = self.dim();
        let mut jac = Jacobian::zeros(d, 2);
        for (r, g) in grad.iter().enumerate() {
            jac.set(r, 0, *g);
        }
        jac.set(d - 1, 1, T::one());
        jac
    }

    fn exact_inner_value(&self, block: usize, joint: &ParamVector<T>) -> Vec<T> {
        let (w, s) = self.split(joint);
        vec![self.dataset.group_loss(block, w, None), s]
    }

    fn exact_inner_subjacobian(&self, block: usize, joint: &ParamVector<T>) -> Jacobian<T> {
        let (w, _) = self.split(joint);
        let grad = self.dataset.group_loss_grad(block, w, None);
        let d = self.dim();
        let mut jac = Jacobian::zeros(d, 2);
        for (r, g) in grad.iter().enumerate() {
            jac.set(r, 0, *g);
        }
        jac.set(d - 1, 1, T::one());
        jac
    }

    fn outer_value(&self, _block: usize, u: &[T]) -> T {
        let ratio = T::of(self.dataset.num_groups() as f64 / self.k as f64);
        ratio * (u[0] - u[1]).max(T::zero()) + u[1]
    }

    fn outer_subgradient(&self, _block: usize, u: &[T]) -> Vec<T> {
        let ratio = T::of(self.dataset.num_groups() as f64 / self.k as f64);
        if u[0] - u[1] > T::zero() {
            vec![ratio, T::one() - ratio]
        } else {
            vec![T::zero(), T::one()]
        }
    }

    fn constants(&self) -> FccoConstants<T> {
        let ratio = self.dataset.num_groups() as f64 / self.k as f64;
        let c_f = T::of((ratio * ratio + (ratio - 1.0).abs().max(1.0).powi(2)).sqrt());
        let xmax = self.dataset.max_feature_norm();
        // loss slope bound: 1 for hinge/logistic, data- and radius-dependent
        // for the squared hinge
        let slope = match self.dataset.loss {
            LossKind::Hinge | LossKind::Logistic => T::one(),
            LossKind::SquaredHinge => {
                T::of(2.0) * (T::one() + self.dataset.radius_hint * xmax)
            }
        };
        FccoConstants {
            rho_f: T::zero(),
            rho_g: T::zero(),
            c_f,
            c_g: (slope * xmax).max(T::one()),
            sigma: T::zero(),
        }
    }
}
