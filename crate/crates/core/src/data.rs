//! Synthetic problem generators with constants certified by construction,
//! and CSV dataset ingestion.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CcoError, Result};
use crate::gdro::{GroupedDataset, LossKind};
use crate::linalg::{Jacobian, ParamVector};
use crate::problem::{FccoConstants, FccoProblem, TccoConstants, TccoProblem};
use crate::rng::standard_normal;
use crate::scalar::Scalar;
use crate::tpauc::{Bag, TpaucDataset};

const NOISE_TAG: u64 = 0x5e_ed;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn noise_rng(seed: u64, block: u64, sample: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed ^ NOISE_TAG) ^ block) ^ sample))
}

/// Synthetic two-level families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FccoKind {
    /// `g_i(w) = A_i^T w + b_i`, `f_i(u) = sum_k (u_k)_+`; convex.
    LinearHinge,
    /// `g_i(w) = b_i - (q_i/2) (a_i^T w)^2` (scalar), `f_i(u) = (u)_+`;
    /// weakly convex with modulus `max_i q_i ||a_i||^2`.
    HingeOfConcaveQuadratic,
}

/// Generator parameters for [`gen_fcco`].
#[derive(Clone, Copy, Debug)]
pub struct FccoGen {
    pub kind: FccoKind,
    pub n: usize,
    pub d: usize,
    pub d1: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Scale of the affine offsets; controls how far the minimizer sits.
    pub offset_scale: f64,
}

impl FccoGen {
    pub fn linear(n: usize, d: usize, d1: usize, sigma: f64, seed: u64) -> Self {
        FccoGen {
            kind: FccoKind::LinearHinge,
            n,
            d,
            d1,
            sigma,
            seed,
            offset_scale: 1.0,
        }
    }

    pub fn quadratic(n: usize, d: usize, sigma: f64, seed: u64) -> Self {
        FccoGen {
            kind: FccoKind::HingeOfConcaveQuadratic,
            n,
            d,
            d1: 1,
            sigma,
            seed,
            offset_scale: 1.0,
        }
    }
}

enum FccoFamily<T> {
    Linear {
        maps: Vec<Jacobian<T>>, // d x d1
        offsets: Vec<Vec<T>>,
    },
    Quadratic {
        directions: Vec<Vec<T>>,
        curvatures: Vec<T>,
        offsets: Vec<T>,
    },
}

/// A generated two-level problem. Sampling noise is an additive Gaussian
/// perturbation per (block, sample id), so identical batches reproduce
/// identical values and `sigma = 0` is deterministic.
pub struct SyntheticFcco<T> {
    family: FccoFamily<T>,
    n: usize,
    d: usize,
    d1: usize,
    sigma: T,
    seed: u64,
    constants: FccoConstants<T>,
}

/// Sample-space size used by generated problems; large enough that
/// within-batch no-replacement sampling is indistinguishable from i.i.d.
pub const SYNTHETIC_SAMPLE_SPACE: u64 = 1 << 20;

pub fn gen_fcco<T: Scalar>(gen: FccoGen) -> SyntheticFcco<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(gen.seed));
    let scale = T::of(1.0 / (gen.d as f64).sqrt());
    match gen.kind {
        FccoKind::LinearHinge => {
            let mut maps = Vec::with_capacity(gen.n);
            let mut offsets = Vec::with_capacity(gen.n);
            for _ in 0..gen.n {
                maps.push(Jacobian::from_fn(gen.d, gen.d1, |_, _| {
                    standard_normal::<T, _>(&mut rng) * scale
                }));
                offsets.push(
                    (0..gen.d1)
                        .map(|_| standard_normal::<T, _>(&mut rng) * T::of(gen.offset_scale))
                        .collect::<Vec<T>>(),
                );
            }
            let c_g = maps
                .iter()
                .map(|m| m.frobenius_norm())
                .fold(T::zero(), T::max);
            let constants = FccoConstants {
                rho_f: T::zero(),
                rho_g: T::zero(),
                c_f: T::of((gen.d1 as f64).sqrt()),
                c_g,
                sigma: T::of(gen.sigma * (gen.d1 as f64).sqrt()),
            };
            SyntheticFcco {
                family: FccoFamily::Linear { maps, offsets },
                n: gen.n,
                d: gen.d,
                d1: gen.d1,
                sigma: T::of(gen.sigma),
                seed: gen.seed,
                constants,
            }
        }
        FccoKind::HingeOfConcaveQuadratic => {
            let mut directions = Vec::with_capacity(gen.n);
            let mut curvatures = Vec::with_capacity(gen.n);
            let mut offsets = Vec::with_capacity(gen.n);
            for _ in 0..gen.n {
                let a: Vec<T> = (0..gen.d)
                    .map(|_| standard_normal::<T, _>(&mut rng) * scale)
                    .collect();
                directions.push(a);
                curvatures.push(T::of(0.5 + rng.gen::<f64>()));
                offsets.push(standard_normal::<T, _>(&mut rng) * T::of(gen.offset_scale));
            }
            let rho_g = directions
                .iter()
                .zip(curvatures.iter())
                .map(|(a, q)| *q * crate::linalg::norm(a).powi(2))
                .fold(T::zero(), T::max);
            // Lipschitz constant certified on the probe ball of radius 10
            let c_g = rho_g * T::of(10.0);
            let constants = FccoConstants {
                rho_f: T::zero(),
                rho_g,
                c_f: T::one(),
                c_g,
                sigma: T::of(gen.sigma),
            };
            SyntheticFcco {
                family: FccoFamily::Quadratic {
                    directions,
                    curvatures,
                    offsets,
                },
                n: gen.n,
                d: gen.d,
                d1: 1,
                sigma: T::of(gen.sigma),
                seed: gen.seed,
                constants,
            }
        }
    }
}

impl<T: Scalar> SyntheticFcco<T> {
    fn noise_mean(&self, block: usize, batch: &[u64]) -> Vec<T> {
        let mut mean = vec![T::zero(); self.d1];
        if self.sigma == T::zero() || batch.is_empty() {
            return mean;
        }
        for &xi in batch {
            let mut rng = noise_rng(self.seed, block as u64, xi);
            for m in mean.iter_mut() {
                *m = *m + standard_normal::<T, _>(&mut rng) * self.sigma;
            }
        }
        let inv = T::one() / T::of(batch.len() as f64);
        for m in mean.iter_mut() {
            *m = *m * inv;
        }
        mean
    }
}

impl<T: Scalar> FccoProblem<T> for SyntheticFcco<T> {
    fn num_blocks(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn inner_dim(&self) -> usize {
        self.d1
    }

    fn sample_space(&self, _block: usize) -> u64 {
        SYNTHETIC_SAMPLE_SPACE
    }

    fn inner_value(&self, block: usize, w: &ParamVector<T>, batch: &[u64]) -> Vec<T> {
        let mut value = self.exact_inner_value(block, w);
        for (v, noise) in value.iter_mut().zip(self.noise_mean(block, batch)) {
            *v = *v + noise;
        }
        value
    }

    fn inner_subjacobian(&self, block: usize, w: &ParamVector<T>, _batch: &[u64]) -> Jacobian<T> {
        self.exact_inner_subjacobian(block, w)
    }

    fn exact_inner_value(&self, block: usize, w: &ParamVector<T>) -> Vec<T> {
        match &self.family {
            FccoFamily::Linear { maps, offsets } => {
                let m = &maps[block];
                let mut out = offsets[block].clone();
                for k in 0..self.d1 {
                    let mut acc = T::zero();
                    for l in 0..self.d {
                        acc = acc + m.get(l, k) * w[l];
                    }
                    out[k] = out[k] + acc;
                }
                out
            }
            FccoFamily::Quadratic {
                directions,
                curvatures,
                offsets,
            } => {
                let proj: T = directions[block]
                    .iter()
                    .zip(w.iter())
                    .map(|(a, x)| *a * *x)
                    .sum();
                vec![offsets[block] - curvatures[block] / T::of(2.0) * proj * proj]
            }
        }
    }

    fn exact_inner_subjacobian(&self, block: usize, w: &ParamVector<T>) -> Jacobian<T> {
        match &self.family {
            FccoFamily::Linear { maps, .. } => maps[block].clone(),
            FccoFamily::Quadratic {
                directions,
                curvatures,
                ..
            } => {
                let a = &directions[block];
                let proj: T = a.iter().zip(w.iter()).map(|(ai, x)| *ai * *x).sum();
                let chain = -curvatures[block] * proj;
                Jacobian::from_fn(self.d, 1, |r, _| chain * a[r])
            }
        }
    }

    fn outer_value(&self, _block: usize, u: &[T]) -> T {
        u.iter().map(|x| x.max(T::zero())).sum()
    }

    fn outer_subgradient(&self, _block: usize, u: &[T]) -> Vec<T> {
        u.iter()
            .map(|x| if *x > T::zero() { T::one() } else { T::zero() })
            .collect()
    }

    fn constants(&self) -> FccoConstants<T> {
        self.constants
    }
}

/// Middle-level families for generated tri-level problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiddleKind {
    /// `g_i(v) = v` (requires `d1 = d2`); used by reduction tests.
    Identity,
    /// `g_{i,k}(v) = tanh(c_{i,k}^T v)` with non-negative weights, so each
    /// output is non-decreasing and smooth with known constants.
    Tanh,
}

/// Generator parameters for [`gen_tcco`].
#[derive(Clone, Copy, Debug)]
pub struct TccoGen {
    pub n1: usize,
    pub n2: usize,
    pub d: usize,
    pub d1: usize,
    pub d2: usize,
    pub middle: MiddleKind,
    pub sigma: f64,
    pub seed: u64,
}

enum MiddleFamily<T> {
    Identity,
    Tanh { weights: Vec<Jacobian<T>> }, // per outer block: d2 x d1, entries >= 0
}

/// A generated tri-level problem: linear innermost maps
/// `h_ij(w) = P_ij^T w + r_ij` plus additive sampling noise, one of the
/// middle families above, and `f_i(u) = sum_k (u_k - theta_ik)_+`.
pub struct SyntheticTcco<T> {
    maps: Vec<Jacobian<T>>, // (i * n2 + j) -> d x d2
    offsets: Vec<Vec<T>>,
    middle: MiddleFamily<T>,
    thresholds: Vec<Vec<T>>, // per outer block, d1
    n1: usize,
    n2: usize,
    d: usize,
    d1: usize,
    d2: usize,
    sigma: T,
    seed: u64,
    constants: TccoConstants<T>,
}

pub fn gen_tcco<T: Scalar>(gen: TccoGen) -> Result<SyntheticTcco<T>> {
    if gen.middle == MiddleKind::Identity && gen.d1 != gen.d2 {
        return Err(CcoError::invalid_config(
            "identity middle level requires d1 = d2",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(gen.seed ^ 0x7cc0));
    let scale = T::of(1.0 / (gen.d as f64).sqrt());
    let mut maps = Vec::with_capacity(gen.n1 * gen.n2);
    let mut offsets = Vec::with_capacity(gen.n1 * gen.n2);
    for _ in 0..gen.n1 * gen.n2 {
        maps.push(Jacobian::from_fn(gen.d, gen.d2, |_, _| {
            standard_normal::<T, _>(&mut rng) * scale
        }));
        offsets.push(
            (0..gen.d2)
                .map(|_| standard_normal::<T, _>(&mut rng) * T::of(0.5))
                .collect::<Vec<T>>(),
        );
    }
    let middle = match gen.middle {
        MiddleKind::Identity => MiddleFamily::Identity,
        MiddleKind::Tanh => {
            let mscale = T::of(1.0 / (gen.d2 as f64).sqrt());
            let weights = (0..gen.n1)
                .map(|_| {
                    Jacobian::from_fn(gen.d2, gen.d1, |_, _| {
                        standard_normal::<T, _>(&mut rng).abs() * mscale
                    })
                })
                .collect();
            MiddleFamily::Tanh { weights }
        }
    };
    let thresholds: Vec<Vec<T>> = (0..gen.n1)
        .map(|_| {
            (0..gen.d1)
                .map(|_| standard_normal::<T, _>(&mut rng) * T::of(0.3))
                .collect()
        })
        .collect();

    let c_h = maps
        .iter()
        .map(|m| m.frobenius_norm())
        .fold(T::zero(), T::max);
    let h_bound = maps
        .iter()
        .zip(offsets.iter())
        .map(|(m, r)| m.frobenius_norm() * T::of(10.0) + crate::linalg::norm(r))
        .fold(T::zero(), T::max)
        + T::of(5.0 * gen.sigma);
    let (c_g, rho_g) = match &middle {
        MiddleFamily::Identity => (T::one(), T::zero()),
        MiddleFamily::Tanh { weights } => {
            let c_g = weights
                .iter()
                .map(|m| m.frobenius_norm())
                .fold(T::zero(), T::max);
            // |tanh''| <= 4/(3 sqrt(3))
            let mut worst_col = T::zero();
            for m in weights {
                for k in 0..m.cols() {
                    let mut col = T::zero();
                    for l in 0..m.rows() {
                        col = col + m.get(l, k) * m.get(l, k);
                    }
                    worst_col = worst_col.max(col);
                }
            }
            (c_g, T::of(4.0 / (3.0 * 3f64.sqrt())) * worst_col)
        }
    };
    let constants = TccoConstants {
        rho_f: T::zero(),
        rho_g,
        c_f: T::of((gen.d1 as f64).sqrt()),
        c_g,
        c_h,
        l_h: T::zero(),
        h_bound,
        sigma: T::of(gen.sigma * (gen.d2 as f64).sqrt()),
    };
    Ok(SyntheticTcco {
        maps,
        offsets,
        middle,
        thresholds,
        n1: gen.n1,
        n2: gen.n2,
        d: gen.d,
        d1: gen.d1,
        d2: gen.d2,
        sigma: T::of(gen.sigma),
        seed: gen.seed,
        constants,
    })
}

impl<T: Scalar> SyntheticTcco<T> {
    fn pair(&self, i: usize, j: usize) -> usize {
        i * self.n2 + j
    }

    fn noise_mean(&self, pair: usize, batch: &[u64]) -> Vec<T> {
        let mut mean = vec![T::zero(); self.d2];
        if self.sigma == T::zero() || batch.is_empty() {
            return mean;
        }
        for &xi in batch {
            let mut rng = noise_rng(self.seed ^ 0x7cc0, pair as u64, xi);
            for m in mean.iter_mut() {
                *m = *m + standard_normal::<T, _>(&mut rng) * self.sigma;
            }
        }
        let inv = T::one() / T::of(batch.len() as f64);
        for m in mean.iter_mut() {
            *m = *m * inv;
        }
        mean
    }

    /// Two-level view of an identity-middle, `n2 = 1` instance; used by the
    /// structural reduction tests.
    pub fn collapsed(self) -> Result<CollapsedFcco<T>> {
        if self.n2 != 1 || !matches!(self.middle, MiddleFamily::Identity) {
            return Err(CcoError::contract(
                "collapse requires identity middle level and n2 = 1",
            ));
        }
        Ok(CollapsedFcco { inner: self })
    }
}

impl<T: Scalar> TccoProblem<T> for SyntheticTcco<T> {
    fn outer_blocks(&self) -> usize {
        self.n1
    }

    fn middle_blocks(&self) -> usize {
        self.n2
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn middle_dim(&self) -> usize {
        self.d1
    }

    fn inner_dim(&self) -> usize {
        self.d2
    }

    fn sample_space(&self, _i: usize, _j: usize) -> u64 {
        SYNTHETIC_SAMPLE_SPACE
    }

    fn innermost_value(&self, i: usize, j: usize, w: &ParamVector<T>, batch: &[u64]) -> Vec<T> {
        let mut value = self.exact_innermost_value(i, j, w);
        for (v, noise) in value
            .iter_mut()
            .zip(self.noise_mean(self.pair(i, j), batch))
        {
            *v = *v + noise;
        }
        value
    }

    fn innermost_jacobian(
        &self,
        i: usize,
        j: usize,
        _w: &ParamVector<T>,
        _batch: &[u64],
    ) -> Jacobian<T> {
        self.maps[self.pair(i, j)].clone()
    }

    fn exact_innermost_value(&self, i: usize, j: usize, w: &ParamVector<T>) -> Vec<T> {
        let p = self.pair(i, j);
        let m = &self.maps[p];
        let mut out = self.offsets[p].clone();
        for k in 0..self.d2 {
            let mut acc = T::zero();
            for l in 0..self.d {
                acc = acc + m.get(l, k) * w[l];
            }
            out[k] = out[k] + acc;
        }
        out
    }

    fn exact_innermost_jacobian(&self, i: usize, j: usize, _w: &ParamVector<T>) -> Jacobian<T> {
        self.maps[self.pair(i, j)].clone()
    }

    fn middle_value(&self, i: usize, v: &[T]) -> Vec<T> {
        match &self.middle {
            MiddleFamily::Identity => v.to_vec(),
            MiddleFamily::Tanh { weights } => {
                let m = &weights[i];
                (0..self.d1)
                    .map(|k| {
                        let mut z = T::zero();
                        for l in 0..self.d2 {
                            z = z + m.get(l, k) * v[l];
                        }
                        z.tanh()
                    })
                    .collect()
            }
        }
    }

    fn middle_subjacobian(&self, i: usize, v: &[T]) -> Jacobian<T> {
        match &self.middle {
            MiddleFamily::Identity => Jacobian::identity(self.d2),
            MiddleFamily::Tanh { weights } => {
                let m = &weights[i];
                let mut jac = Jacobian::zeros(self.d2, self.d1);
                for k in 0..self.d1 {
                    let mut z = T::zero();
                    for l in 0..self.d2 {
                        z = z + m.get(l, k) * v[l];
                    }
                    let th = z.tanh();
                    let dth = T::one() - th * th;
                    for l in 0..self.d2 {
                        jac.set(l, k, dth * m.get(l, k));
                    }
                }
                jac
            }
        }
    }

    fn outer_value(&self, i: usize, u: &[T]) -> T {
        u.iter()
            .zip(self.thresholds[i].iter())
            .map(|(x, th)| (*x - *th).max(T::zero()))
            .sum()
    }

    fn outer_subgradient(&self, i: usize, u: &[T]) -> Vec<T> {
        u.iter()
            .zip(self.thresholds[i].iter())
            .map(|(x, th)| {
                if *x - *th > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    fn constants(&self) -> TccoConstants<T> {
        self.constants
    }
}

/// Two-level view of a collapsed tri-level instance.
pub struct CollapsedFcco<T> {
    inner: SyntheticTcco<T>,
}

impl<T: Scalar> FccoProblem<T> for CollapsedFcco<T> {
    fn num_blocks(&self) -> usize {
        self.inner.n1
    }

    fn dim(&self) -> usize {
        self.inner.d
    }

    fn inner_dim(&self) -> usize {
        self.inner.d2
    }

    fn sample_space(&self, _block: usize) -> u64 {
        SYNTHETIC_SAMPLE_SPACE
    }

    fn inner_value(&self, block: usize, w: &ParamVector<T>, batch: &[u64]) -> Vec<T> {
        self.inner.innermost_value(block, 0, w, batch)
    }

    fn inner_subjacobian(&self, block: usize, w: &ParamVector<T>, batch: &[u64]) -> Jacobian<T> {
        self.inner.innermost_jacobian(block, 0, w, batch)
    }

    fn exact_inner_value(&self, block: usize, w: &ParamVector<T>) -> Vec<T> {
        self.inner.exact_innermost_value(block, 0, w)
    }

    fn exact_inner_subjacobian(&self, block: usize, w: &ParamVector<T>) -> Jacobian<T> {
        self.inner.exact_innermost_jacobian(block, 0, w)
    }

    fn outer_value(&self, block: usize, u: &[T]) -> T {
        self.inner.outer_value(block, u)
    }

    fn outer_subgradient(&self, block: usize, u: &[T]) -> Vec<T> {
        self.inner.outer_subgradient(block, u)
    }

    fn constants(&self) -> FccoConstants<T> {
        let c = self.inner.constants;
        FccoConstants {
            rho_f: c.rho_f,
            rho_g: T::zero(),
            c_f: c.c_f,
            c_g: c.c_h,
            sigma: c.sigma,
        }
    }
}

/// Generator parameters for [`gen_mil_tpauc`].
#[derive(Clone, Copy, Debug)]
pub struct MilGen {
    pub n_pos: usize,
    pub n_neg: usize,
    pub d: usize,
    pub bag_min: usize,
    pub bag_max: usize,
    /// Instance scatter around each cluster center.
    pub noise: f64,
    /// Shift the positive cluster so bag-mean projections separate by >= 1.
    pub separable: bool,
    pub seed: u64,
}

/// Two Gaussian clusters of bags. Returns the dataset and the unit direction
/// whose linear scorer separates the bag means (when `separable`, with
/// margin at least one).
pub fn gen_mil_tpauc<T: Scalar>(gen: MilGen) -> Result<(TpaucDataset<T>, Vec<T>)> {
    if gen.bag_min == 0 || gen.bag_min > gen.bag_max {
        return Err(CcoError::invalid_config("bad bag size range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(gen.seed ^ 0x3417));
    let mut direction: Vec<f64> = (0..gen.d).map(|_| rng.gen::<f64>() - 0.5).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in direction.iter_mut() {
        *x /= norm;
    }

    let mut make_bags = |count: usize, center_sign: f64| -> Vec<Vec<Vec<f64>>> {
        (0..count)
            .map(|_| {
                let size = gen.bag_min + rng.gen_range(0..=gen.bag_max - gen.bag_min);
                (0..size)
                    .map(|_| {
                        (0..gen.d)
                            .map(|l| {
                                let noise: f64 = rand_distr::Distribution::sample(
                                    &rand_distr::StandardNormal,
                                    &mut rng,
                                );
                                center_sign * 2.0 * direction[l] + gen.noise * noise
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    };
    let mut pos_bags = make_bags(gen.n_pos, 1.0);
    let neg_bags = make_bags(gen.n_neg, -1.0);

    if gen.separable {
        let project = |bag: &Vec<Vec<f64>>| -> f64 {
            let mut acc = 0.0;
            for inst in bag {
                acc += inst
                    .iter()
                    .zip(direction.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            acc / bag.len() as f64
        };
        let min_pos = pos_bags.iter().map(project).fold(f64::INFINITY, f64::min);
        let max_neg = neg_bags
            .iter()
            .map(project)
            .fold(f64::NEG_INFINITY, f64::max);
        let margin = min_pos - max_neg;
        if margin < 1.0 {
            let shift = 1.0 - margin;
            for bag in pos_bags.iter_mut() {
                for inst in bag.iter_mut() {
                    for (x, u) in inst.iter_mut().zip(direction.iter()) {
                        *x += shift * u;
                    }
                }
            }
        }
    }

    let convert = |bags: Vec<Vec<Vec<f64>>>| -> Vec<Bag<T>> {
        bags.into_iter()
            .map(|instances| Bag {
                instances: instances
                    .into_iter()
                    .map(|inst| inst.into_iter().map(T::of).collect())
                    .collect(),
            })
            .collect()
    };

    Ok((
        TpaucDataset {
            positives: convert(pos_bags),
            negatives: convert(neg_bags),
            feature_dim: gen.d,
        },
        direction.into_iter().map(T::of).collect(),
    ))
}

/// Generator parameters for [`gen_grouped`].
#[derive(Clone, Copy, Debug)]
pub struct GroupGen {
    pub groups: usize,
    pub per_group: usize,
    pub d: usize,
    /// Label flip probability grows linearly across groups up to this value.
    pub max_flip: f64,
    pub seed: u64,
    pub loss: LossKind,
}

/// Linearly separable data with per-group label noise, so later groups carry
/// higher losses.
pub fn gen_grouped<T: Scalar>(gen: GroupGen) -> Result<GroupedDataset<T>> {
    if gen.groups == 0 || gen.per_group == 0 {
        return Err(CcoError::invalid_config("empty group layout"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(gen.seed ^ 0x96d0));
    let direction: Vec<f64> = (0..gen.d).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mut groups = Vec::with_capacity(gen.groups);
    for k in 0..gen.groups {
        let flip = if gen.groups > 1 {
            gen.max_flip * k as f64 / (gen.groups - 1) as f64
        } else {
            0.0
        };
        let mut group = Vec::with_capacity(gen.per_group);
        for _ in 0..gen.per_group {
            let x: Vec<f64> = (0..gen.d)
                .map(|_| {
                    let v: f64 =
                        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    v
                })
                .collect();
            let clean = x
                .iter()
                .zip(direction.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                > 0.0;
            let label = if rng.gen::<f64>() < flip { !clean } else { clean };
            group.push((
                x.into_iter().map(T::of).collect::<Vec<T>>(),
                if label { T::one() } else { T::zero() },
            ));
        }
        groups.push(group);
    }
    Ok(GroupedDataset {
        groups,
        feature_dim: gen.d,
        loss: gen.loss,
        radius_hint: T::of(10.0),
    })
}

// ---------------------------------------------------------------------------
// CSV ingestion. All formats use a period decimal separator regardless of
// locale; `#`-prefixed lines are comments.
// ---------------------------------------------------------------------------

fn parse_field<T: Scalar>(field: &str, line: usize) -> Result<T> {
    field
        .trim()
        .parse::<f64>()
        .map(T::of)
        .map_err(|_| CcoError::data(line, format!("cannot parse number from {field:?}")))
}

fn parse_label<T: Scalar>(field: &str, line: usize) -> Result<T> {
    match field.trim() {
        "0" => Ok(T::zero()),
        "1" => Ok(T::one()),
        other => Err(CcoError::data(
            line,
            format!("label must be 0 or 1, got {other:?}"),
        )),
    }
}

/// Loads `features..., label` rows (one header line) into singleton bags.
pub fn load_csv_binary<T: Scalar>(path: &Path) -> Result<TpaucDataset<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut dim = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if idx == 0 || raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() < 2 {
            return Err(CcoError::data(line, "expected features and a label"));
        }
        let d = fields.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expect) if expect != d => {
                return Err(CcoError::data(
                    line,
                    format!("row has {d} features, expected {expect}"),
                ))
            }
            _ => {}
        }
        let features: Vec<T> = fields[..d]
            .iter()
            .map(|f| parse_field(f, line))
            .collect::<Result<_>>()?;
        let label = parse_label::<T>(fields[d], line)?;
        if label == T::one() {
            positives.push(Bag::singleton(features));
        } else {
            negatives.push(Bag::singleton(features));
        }
    }
    let feature_dim = dim.ok_or_else(|| CcoError::data(0, "no data rows"))?;
    let dataset = TpaucDataset {
        positives,
        negatives,
        feature_dim,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_csv_binary<T: Scalar>(path: &Path, dataset: &TpaucDataset<T>) -> Result<()> {
    let mut out = String::new();
    let names: Vec<String> = (0..dataset.feature_dim).map(|i| format!("f{i}")).collect();
    let _ = writeln!(out, "{},label", names.join(","));
    for (bags, label) in [(&dataset.positives, 1), (&dataset.negatives, 0)] {
        for bag in bags.iter() {
            for inst in &bag.instances {
                let row: Vec<String> = inst.iter().map(|v| format!("{:?}", v.as_f64())).collect();
                let _ = writeln!(out, "{},{label}", row.join(","));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads `group, features..., label` rows (one header line).
pub fn load_grouped_csv<T: Scalar>(path: &Path) -> Result<GroupedDataset<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut groups: Vec<Vec<(Vec<T>, T)>> = Vec::new();
    let mut dim = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if idx == 0 || raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() < 3 {
            return Err(CcoError::data(line, "expected group, features, label"));
        }
        let group: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| CcoError::data(line, format!("bad group id {:?}", fields[0])))?;
        let d = fields.len() - 2;
        match dim {
            None => dim = Some(d),
            Some(expect) if expect != d => {
                return Err(CcoError::data(
                    line,
                    format!("row has {d} features, expected {expect}"),
                ))
            }
            _ => {}
        }
        let features: Vec<T> = fields[1..=d]
            .iter()
            .map(|f| parse_field(f, line))
            .collect::<Result<_>>()?;
        let label = parse_label::<T>(fields[d + 1], line)?;
        while groups.len() <= group {
            groups.push(Vec::new());
        }
        groups[group].push((features, label));
    }
    let feature_dim = dim.ok_or_else(|| CcoError::data(0, "no data rows"))?;
    let dataset = GroupedDataset {
        groups,
        feature_dim,
        loss: LossKind::Hinge,
        radius_hint: T::of(10.0),
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_grouped_csv<T: Scalar>(path: &Path, dataset: &GroupedDataset<T>) -> Result<()> {
    let mut out = String::new();
    let names: Vec<String> = (0..dataset.feature_dim).map(|i| format!("f{i}")).collect();
    let _ = writeln!(out, "group,{},label", names.join(","));
    for (k, group) in dataset.groups.iter().enumerate() {
        for (x, y) in group {
            let row: Vec<String> = x.iter().map(|v| format!("{:?}", v.as_f64())).collect();
            let _ = writeln!(out, "{k},{},{}", row.join(","), y.as_f64() as i64);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads the bag format: a `bag,<id>,<label>,<n_instances>` record line
/// followed by `n_instances` feature rows.
pub fn load_mil_bags<T: Scalar>(path: &Path) -> Result<TpaucDataset<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut dim: Option<usize> = None;
    let mut pending: Option<(T, usize)> = None; // label, instances still expected
    let mut current: Vec<Vec<T>> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        if raw.starts_with("bag,") {
            if pending.is_some() {
                return Err(CcoError::data(
                    line,
                    "new bag record before previous bag's instances finished",
                ));
            }
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() != 4 {
                return Err(CcoError::data(line, "bag record needs id, label, count"));
            }
            let label = parse_label::<T>(fields[2], line)?;
            let count: usize = fields[3]
                .trim()
                .parse()
                .map_err(|_| CcoError::data(line, format!("bad instance count {:?}", fields[3])))?;
            if count == 0 {
                return Err(CcoError::data(line, "bag must have at least one instance"));
            }
            pending = Some((label, count));
            current = Vec::with_capacity(count);
            continue;
        }
        let (label, remaining) = pending
            .ok_or_else(|| CcoError::data(line, "instance row outside any bag record"))?;
        let fields: Vec<&str> = raw.split(',').collect();
        let d = fields.len();
        match dim {
            None => dim = Some(d),
            Some(expect) if expect != d => {
                return Err(CcoError::data(
                    line,
                    format!("instance has {d} features, expected {expect}"),
                ))
            }
            _ => {}
        }
        current.push(
            fields
                .iter()
                .map(|f| parse_field(f, line))
                .collect::<Result<_>>()?,
        );
        if remaining == 1 {
            let bag = Bag {
                instances: std::mem::take(&mut current),
            };
            if label == T::one() {
                positives.push(bag);
            } else {
                negatives.push(bag);
            }
            pending = None;
        } else {
            pending = Some((label, remaining - 1));
        }
    }
    if pending.is_some() {
        return Err(CcoError::data(
            text.lines().count(),
            "file ended inside a bag record",
        ));
    }
    let feature_dim = dim.ok_or_else(|| CcoError::data(0, "no bags"))?;
    let dataset = TpaucDataset {
        positives,
        negatives,
        feature_dim,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_mil_bags<T: Scalar>(path: &Path, dataset: &TpaucDataset<T>) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# bag,<id>,<label>,<n_instances> followed by <n_instances> feature rows"
    );
    let mut id = 0usize;
    for (bags, label) in [(&dataset.positives, 1), (&dataset.negatives, 0)] {
        for bag in bags.iter() {
            let _ = writeln!(out, "bag,{id},{label},{}", bag.len());
            for inst in &bag.instances {
                let row: Vec<String> = inst.iter().map(|v| format!("{:?}", v.as_f64())).collect();
                let _ = writeln!(out, "{}", row.join(","));
            }
            id += 1;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_deterministic() {
        let p: SyntheticFcco<f64> = gen_fcco(FccoGen::linear(3, 4, 2, 0.0, 11));
        let w = ParamVector::new(vec![0.2, -0.1, 0.5, 0.0]);
        let a = p.inner_value(0, &w, &[1, 2, 3]);
        let b = p.inner_value(0, &w, &[9, 10, 11]);
        assert_eq!(a, b);
        assert_eq!(a, p.exact_inner_value(0, &w));
    }

    #[test]
    fn sampling_randomness_lives_in_the_batch() {
        // identical batches reproduce values bit for bit even with noise
        let p: SyntheticFcco<f64> = gen_fcco(FccoGen::linear(3, 4, 2, 0.7, 13));
        let w = ParamVector::new(vec![0.2, -0.1, 0.5, 0.0]);
        assert_eq!(p.inner_value(1, &w, &[4, 5, 6]), p.inner_value(1, &w, &[4, 5, 6]));
        assert_ne!(p.inner_value(1, &w, &[4, 5, 6]), p.inner_value(1, &w, &[7, 8, 9]));
    }

    #[test]
    fn outer_subgradients_are_nonnegative() {
        let lin: SyntheticFcco<f64> = gen_fcco(FccoGen::linear(4, 3, 2, 0.0, 1));
        let quad: SyntheticFcco<f64> = gen_fcco(FccoGen::quadratic(4, 3, 0.0, 1));
        let mut z = 0.9f64;
        for _ in 0..200 {
            z = (z * 9301.0 + 49297.0) % 233280.0;
            let u = vec![z / 233280.0 * 4.0 - 2.0, 2.0 - z / 233280.0 * 4.0];
            for g in lin.outer_subgradient(0, &u) {
                assert!(g >= 0.0);
            }
            for g in quad.outer_subgradient(0, &u[..1]) {
                assert!(g >= 0.0);
            }
        }
    }

    #[test]
    fn declared_h_bound_holds_on_the_domain() {
        let p: SyntheticTcco<f64> = gen_tcco(TccoGen {
            n1: 3,
            n2: 2,
            d: 4,
            d1: 2,
            d2: 2,
            middle: MiddleKind::Tanh,
            sigma: 0.1,
            seed: 19,
        })
        .unwrap();
        let bound = p.constants().h_bound;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut w: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            // scale onto the certified radius
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in w.iter_mut() {
                *x *= 10.0 * rng.gen::<f64>() / norm;
            }
            let w = ParamVector::new(w);
            for i in 0..3 {
                for j in 0..2 {
                    let h = p.exact_innermost_value(i, j, &w);
                    assert!(crate::linalg::norm(&h) <= bound);
                }
            }
        }
    }

    #[test]
    fn declared_lipschitz_matches_construction() {
        let p: SyntheticFcco<f64> = gen_fcco(FccoGen::linear(5, 3, 2, 0.1, 5));
        let c = p.constants();
        let mut expect = 0.0f64;
        for i in 0..5 {
            let jac = p.exact_inner_subjacobian(i, &ParamVector::zeros(3));
            expect = expect.max(jac.frobenius_norm());
        }
        assert!((c.c_g - expect).abs() < 1e-15);
    }

    #[test]
    fn noise_variance_scales_with_batch() {
        // empirical variance of the batch-mean noise ~ sigma^2 / B2, +-10%
        let sigma = 0.3f64;
        let b2 = 4usize;
        let p: SyntheticFcco<f64> = gen_fcco(FccoGen::linear(1, 2, 1, sigma, 21));
        let w = ParamVector::zeros(2);
        let exact = p.exact_inner_value(0, &w)[0];
        let draws = 100_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for t in 0..draws {
            let batch: Vec<u64> = (0..b2).map(|k| (t * b2 + k) as u64).collect();
            let dev = p.inner_value(0, &w, &batch)[0] - exact;
            sum += dev;
            sumsq += dev * dev;
        }
        let mean = sum / draws as f64;
        let var = sumsq / draws as f64 - mean * mean;
        let expect = sigma * sigma / b2 as f64;
        assert!(
            (var - expect).abs() < 0.1 * expect,
            "var {var}, expected {expect}"
        );
    }

    #[test]
    fn same_seed_same_dataset() {
        let gen = MilGen {
            n_pos: 4,
            n_neg: 6,
            d: 3,
            bag_min: 1,
            bag_max: 5,
            noise: 0.4,
            separable: true,
            seed: 9,
        };
        let (a, _) = gen_mil_tpauc::<f64>(gen).unwrap();
        let (b, _) = gen_mil_tpauc::<f64>(gen).unwrap();
        assert_eq!(a, b);
        for bag in a.positives.iter().chain(a.negatives.iter()) {
            assert!(bag.len() >= 1 && bag.len() <= 5);
        }
    }

    #[test]
    fn separable_direction_scores_margin() {
        let (data, w_star) = gen_mil_tpauc::<f64>(MilGen {
            n_pos: 6,
            n_neg: 10,
            d: 4,
            bag_min: 2,
            bag_max: 6,
            noise: 1.5,
            separable: true,
            seed: 31,
        })
        .unwrap();
        let project = |bag: &Bag<f64>| -> f64 {
            bag.instances
                .iter()
                .map(|x| x.iter().zip(w_star.iter()).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
                / bag.len() as f64
        };
        let min_pos = data.positives.iter().map(project).fold(f64::INFINITY, f64::min);
        let max_neg = data
            .negatives
            .iter()
            .map(project)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_pos - max_neg >= 1.0 - 1e-9);
    }

    #[test]
    fn csv_binary_round_trip() {
        let dir = std::env::temp_dir().join("cco_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("binary.csv");
        let dataset = TpaucDataset::<f64> {
            positives: vec![Bag::singleton(vec![0.25, -1.5])],
            negatives: vec![
                Bag::singleton(vec![1.0 / 3.0, 2.0]),
                Bag::singleton(vec![-0.1, 0.7]),
            ],
            feature_dim: 2,
        };
        write_csv_binary(&path, &dataset).unwrap();
        let loaded = load_csv_binary::<f64>(&path).unwrap();
        assert_eq!(loaded, dataset);
    }

    #[test]
    fn csv_binary_three_rows() {
        let dir = std::env::temp_dir().join("cco_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("three.csv");
        std::fs::write(&path, "f0,f1,label\n1.0,2.0,1\n3.0,4.0,0\n5.0,6.0,1\n").unwrap();
        let loaded = load_csv_binary::<f64>(&path).unwrap();
        assert_eq!(loaded.n_pos() + loaded.n_neg(), 3);
    }

    #[test]
    fn inconsistent_dimension_names_the_line() {
        let dir = std::env::temp_dir().join("cco_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ragged.csv");
        std::fs::write(&path, "f0,f1,label\n1.0,2.0,1\n3.0,4.0,5.0,0\n").unwrap();
        match load_csv_binary::<f64>(&path) {
            Err(CcoError::Data { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_names_the_line() {
        let dir = std::env::temp_dir().join("cco_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_label.csv");
        std::fs::write(&path, "f0,label\n1.0,1\n2.0,2\n").unwrap();
        match load_csv_binary::<f64>(&path) {
            Err(CcoError::Data { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn mil_bags_round_trip() {
        let dir = std::env::temp_dir().join("cco_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bags.csv");
        let (dataset, _) = gen_mil_tpauc::<f64>(MilGen {
            n_pos: 3,
            n_neg: 4,
            d: 2,
            bag_min: 1,
            bag_max: 4,
            noise: 0.3,
            separable: false,
            seed: 2,
        })
        .unwrap();
        write_mil_bags(&path, &dataset).unwrap();
        let loaded = load_mil_bags::<f64>(&path).unwrap();
        assert_eq!(loaded, dataset);
    }

    #[test]
    fn grouped_round_trip() {
        let dir = std::env::temp_dir().join("cco_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("groups.csv");
        let dataset = gen_grouped::<f64>(GroupGen {
            groups: 3,
            per_group: 5,
            d: 2,
            max_flip: 0.2,
            seed: 77,
            loss: LossKind::Hinge,
        })
        .unwrap();
        write_grouped_csv(&path, &dataset).unwrap();
        let loaded = load_grouped_csv::<f64>(&path).unwrap();
        assert_eq!(loaded.groups, dataset.groups);
    }
}
