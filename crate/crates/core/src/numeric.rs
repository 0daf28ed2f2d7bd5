//! Summation, dot products and a symmetric eigenvalue solver.
//!
//! All reductions use Neumaier compensated summation so that 4096-wide dot
//! products over float32 inputs keep full 64-bit accuracy.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::scalar::Scalar;

/// Neumaier (improved Kahan) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum<T> {
    sum: T,
    carry: T,
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn new() -> Self {
        Self { sum: T::zero(), carry: T::zero() }
    }

    #[inline]
    pub fn add(&mut self, v: T) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry = self.carry + ((self.sum - t) + v);
        } else {
            self.carry = self.carry + ((v - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.carry
    }
}

pub fn sum<T: Scalar, I: IntoIterator<Item = T>>(values: I) -> T {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn mean<T: Scalar>(values: &[T]) -> T {
    sum(values.iter().copied()) / T::from_usize_lossy(values.len())
}

pub fn dot<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    debug_assert_eq!(a.len(), b.len());
    sum(a.iter().zip(b.iter()).map(|(&x, &y)| x * y))
}

pub fn norm<T: Scalar>(a: ArrayView1<'_, T>) -> T {
    dot(a, a).sqrt()
}

/// Column means of an `n x d` matrix.
pub fn column_means<T: Scalar>(m: ArrayView2<'_, T>) -> Array1<T> {
    let n = T::from_usize_lossy(m.nrows());
    m.axis_iter(Axis(1)).map(|col| sum(col.iter().copied()) / n).collect()
}

/// Rows minus their column means.
pub fn center_rows<T: Scalar>(m: ArrayView2<'_, T>) -> Array2<T> {
    let means = column_means(m);
    let mut out = m.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        row.zip_mut_with(&means, |x, &mu| *x = *x - mu);
    }
    out
}

/// `X Xᵀ` for an `n x d` matrix.
pub fn gram<T: Scalar>(x: ArrayView2<'_, T>) -> Array2<T> {
    let n = x.nrows();
    let mut g = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = dot(x.row(i), x.row(j));
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    g
}

/// `Xᵀ X` for an `n x d` matrix.
pub fn scatter<T: Scalar>(x: ArrayView2<'_, T>) -> Array2<T> {
    let d = x.ncols();
    let mut s = Array2::zeros((d, d));
    for i in 0..d {
        for j in i..d {
            let v = dot(x.column(i), x.column(j));
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    s
}

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues sorted descending.
    pub values: Vec<T>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Array2<T>,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotation method. Intended for the small matrices this crate
/// produces (Gram matrices over a handful of tokens or grid nodes).
pub fn symmetric_eigen<T: Scalar>(a: ArrayView2<'_, T>) -> SymmetricEigen<T> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut m = a.to_owned();
    let mut v = Array2::<T>::eye(n);

    let frob: T = sum(m.iter().map(|&x| x * x)).sqrt();
    let tiny = T::epsilon() * T::epsilon() * frob * frob;

    for _ in 0..MAX_SWEEPS {
        let off: T = sum((0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]]));
        if off <= tiny || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (T::c(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                m[[p, q]] = T::zero();
                m[[q, p]] = T::zero();
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    SymmetricEigen { values, vectors }
}
