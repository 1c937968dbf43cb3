//! Minimal dense vector/matrix types.
//!
//! The solvers only need a handful of BLAS-1 style operations plus a
//! Jacobian-times-vector product, so these are hand-rolled rather than
//! pulling in a linear-algebra crate.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

/// Dense decision-variable vector (the `w` of a run, or a joint variable
/// such as `(w, s)`).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T>(Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.0.iter()
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|x| *x * *x).sum::<T>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| *a * *b)
            .sum()
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a = *a + alpha * *b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for a in self.0.iter_mut() {
            *a = *a * alpha;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        ParamVector(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| *a - *b)
                .collect(),
        )
    }

    pub fn distance(&self, other: &Self) -> T {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl<T> Index<usize> for ParamVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for ParamVector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

/// Dense matrix in the input-by-output layout used for subjacobians:
/// a map `R^cols -> R^rows` is applied as `J * y` with `y` of length `cols`.
///
/// For an inner map `g: R^d -> R^d1` the subjacobian has `rows = d`,
/// `cols = d1`, so chaining with an outer subgradient of length `d1`
/// yields a vector of length `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>, // row-major
}

impl<T: Scalar> Jacobian<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Jacobian {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Jacobian { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    /// `J * y`, mapping a length-`cols` vector to a length-`rows` vector.
    pub fn matvec(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.cols, "jacobian matvec dimension mismatch");
        let mut out = vec![T::zero(); self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(y.iter()) {
                acc = acc + *a * *b;
            }
            out[r] = acc;
        }
        out
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: T, other: &Jacobian<T>) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + alpha * *b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for a in self.data.iter_mut() {
            *a = *a * alpha;
        }
    }

    /// Frobenius norm; a valid (possibly loose) spectral-norm upper bound.
    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|x| *x * *x).sum::<T>().sqrt()
    }
}

/// Euclidean norm of a slice.
pub fn norm<T: Scalar>(x: &[T]) -> T {
    x.iter().map(|v| *v * *v).sum::<T>().sqrt()
}

/// Euclidean distance between slices.
pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum::<T>()
        .sqrt()
}

/// Projects `x` onto the Euclidean ball of the given radius, in place.
pub fn project_onto_ball<T: Scalar>(x: &mut [T], radius: T) {
    let n = norm(x);
    if n > radius {
        let scale = radius / n;
        for v in x.iter_mut() {
            *v = *v * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_matches_hand_product() {
        // 2x3 map applied to a length-3 vector
        let j = Jacobian::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        let y = [1.0, 2.0, 3.0];
        let out = j.matvec(&y);
        assert_eq!(out, vec![8.0, 26.0]);
    }

    #[test]
    fn projection_shrinks_only_outside() {
        let mut far = [3.0, 4.0];
        project_onto_ball(&mut far, 2.0);
        assert!((norm(&far) - 2.0f64).abs() < 1e-12);
        assert!((far[0] / far[1] - 0.75).abs() < 1e-12); // direction kept

        let mut near = [0.3, 0.4];
        project_onto_ball(&mut near, 2.0);
        assert_eq!(near, [0.3, 0.4]);

        // idempotent
        let mut twice = [3.0, 4.0];
        project_onto_ball(&mut twice, 2.0);
        let once = twice;
        project_onto_ball(&mut twice, 2.0);
        assert_eq!(once, twice);
    }

    #[test]
    fn param_vector_ops() {
        let mut a = ParamVector::new(vec![1.0, 2.0]);
        let b = ParamVector::new(vec![3.0, -1.0]);
        a.add_scaled(2.0, &b);
        assert_eq!(a.as_slice(), &[7.0, 0.0]);
        assert!((ParamVector::new(vec![3.0, 4.0]).norm() - 5.0f64).abs() < 1e-15);
    }
}
