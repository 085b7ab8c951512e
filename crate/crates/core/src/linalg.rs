//! Dense symmetric positive-definite factorization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::scalar::Real;

/// Lower-triangular Cholesky factor `A = L Lᵀ`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<F> {
    n: usize,
    lower: Vec<F>,
}

impl<F: Real> Cholesky<F> {
    /// Factorizes `a + shift·I`. Returns `None` when a pivot is not strictly
    /// positive (or not finite).
    pub fn factor_shifted(a: ArrayView2<F>, shift: F) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let mut l = vec![F::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let s = ri.iter().zip(rj).fold(F::zero(), |acc, (&p, &q)| acc + p * q);
                let mut v = a[[i, j]] - s;
                if i == j {
                    v += shift;
                    if !(v > F::zero()) || !v.is_finite() {
                        return None;
                    }
                    l[i * n + i] = v.sqrt();
                } else {
                    l[i * n + j] = v / l[j * n + j];
                }
            }
        }
        Some(Self { n, lower: l })
    }

    pub fn factor(a: ArrayView2<F>) -> Option<Self> {
        Self::factor_shifted(a, F::zero())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal of the factor (the square roots of the pivots).
    pub fn diagonal(&self) -> impl Iterator<Item = F> + '_ {
        (0..self.n).map(move |i| self.lower[i * self.n + i])
    }

    /// Cheap 2-norm condition estimate `(max Lᵢᵢ / min Lᵢᵢ)²`. A lower bound
    /// on the true condition number.
    pub fn condition_estimate(&self) -> F {
        let (lo, hi) = self
            .diagonal()
            .fold((F::infinity(), F::zero()), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let r = hi / lo;
        r * r
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<F>) -> Array1<F> {
        let mut x = b.to_owned();
        self.solve_in_place(x.as_slice_mut().expect("owned vector is contiguous"));
        x
    }

    pub fn solve_in_place(&self, x: &mut [F]) {
        let n = self.n;
        assert_eq!(x.len(), n);
        let l = &self.lower;
        for i in 0..n {
            let s = l[i * n..i * n + i]
                .iter()
                .zip(&x[..i])
                .fold(F::zero(), |acc, (&p, &q)| acc + p * q);
            x[i] = (x[i] - s) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
    }

    /// Reconstructs `L Lᵀ`.
    pub fn reconstruct(&self) -> Array2<F> {
        let n = self.n;
        Array2::from_shape_fn((n, n), |(i, j)| {
            (0..=i.min(j)).fold(F::zero(), |acc, k| {
                acc + self.lower[i * n + k] * self.lower[j * n + k]
            })
        })
    }
}
