//! Dense kernels used by the PCA, Mahalanobis and synthetic-frame code.
//!
//! Everything here is generic over [`Scalar`] and written for the small to
//! medium matrices this crate deals with (a few thousand rows, a few hundred
//! columns). There is no blocking or SIMD.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_JACOBI_SWEEPS: usize = 80;

/// Thin singular value decomposition restricted to what PCA needs.
#[derive(Debug, Clone)]
pub struct RightSvd<T> {
    /// Singular values, descending. Length equals the column count.
    pub singular_values: Array1<T>,
    /// Right singular vectors as columns, ordered like `singular_values`.
    pub v: Array2<T>,
}

/// Upper triangular factor of a Householder QR of a tall matrix (`rows >= cols`).
///
/// Returns the `cols x cols` block `R` with `A = Q R`.
pub fn householder_r<T: Scalar>(a: ArrayView2<'_, T>) -> Array2<T> {
    let (m, n) = a.dim();
    assert!(m >= n, "householder_r expects a tall matrix");
    let mut r = a.to_owned();
    let mut v = vec![T::zero(); m];
    for j in 0..n {
        let mut norm = T::zero();
        for i in j..m {
            norm += r[[i, j]] * r[[i, j]];
        }
        let norm = norm.sqrt();
        if norm == T::zero() {
            continue;
        }
        let alpha = if r[[j, j]] > T::zero() { -norm } else { norm };
        for i in j..m {
            v[i] = r[[i, j]];
        }
        v[j] -= alpha;
        let mut vnorm2 = T::zero();
        for vi in v.iter().take(m).skip(j) {
            vnorm2 += *vi * *vi;
        }
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::lit(2.0);
        for col in j..n {
            let mut dot = T::zero();
            for i in j..m {
                dot += v[i] * r[[i, col]];
            }
            let f = two * dot / vnorm2;
            for i in j..m {
                r[[i, col]] -= f * v[i];
            }
        }
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            out[[i, j]] = r[[i, j]];
        }
    }
    out
}

/// One-sided (Hestenes) Jacobi orthogonalisation of the columns of `a`.
///
/// Returns the column norms after convergence (the singular values) and the
/// accumulated rotation `V`, unsorted.
fn hestenes<T: Scalar>(mut a: Array2<T>) -> (Array1<T>, Array2<T>) {
    let n = a.ncols();
    let m = a.nrows();
    let mut v = Array2::<T>::eye(n);
    let eps = T::epsilon();
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = T::zero();
                for i in 0..m {
                    let ap = a[[i, p]];
                    let aq = a[[i, q]];
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let ap = a[[i, p]];
                    let aq = a[[i, q]];
                    a[[i, p]] = c * ap - s * aq;
                    a[[i, q]] = s * ap + c * aq;
                }
                for i in 0..n {
                    let vp = v[[i, p]];
                    let vq = v[[i, q]];
                    v[[i, p]] = c * vp - s * vq;
                    v[[i, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms = a
        .axis_iter(Axis(1))
        .map(|col| col.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt())
        .collect::<Array1<T>>();
    (norms, v)
}

/// Singular values and right singular vectors of an arbitrary `m x n` matrix.
///
/// Tall inputs are first reduced to their `n x n` triangular factor; wide
/// inputs are padded with zero rows, which leaves `AᵀA` unchanged. The result
/// always carries a full `n x n` orthonormal `V`, including a basis for the
/// null space.
///
/// Columns are sorted by descending singular value with ties kept in index
/// order, and each column's sign is fixed so its largest-magnitude entry is
/// positive.
pub fn right_svd<T: Scalar>(a: ArrayView2<'_, T>) -> RightSvd<T> {
    let (m, n) = a.dim();
    let work = if m > n {
        householder_r(a)
    } else {
        let mut padded = Array2::zeros((n, n));
        padded.slice_mut(ndarray::s![..m, ..]).assign(&a);
        padded
    };
    let (norms, v) = hestenes(work);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        norms[j]
            .partial_cmp(&norms[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut sorted_v = Array2::zeros((n, n));
    let mut sorted_s = Array1::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        sorted_s[dst] = norms[src];
        let col = v.column(src);
        let mut pivot = T::zero();
        for &x in col.iter() {
            if x.abs() > pivot.abs() {
                pivot = x;
            }
        }
        let sign = if pivot < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        for i in 0..n {
            sorted_v[[i, dst]] = col[i] * sign;
        }
    }
    RightSvd {
        singular_values: sorted_s,
        v: sorted_v,
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<T: Scalar>(a: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of a {}x{} matrix",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::SingularCovariance);
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Inverse of an SPD matrix from its lower Cholesky factor.
pub fn cholesky_inverse<T: Scalar>(l: ArrayView2<'_, T>) -> Array2<T> {
    let n = l.nrows();
    // L^{-1} by forward substitution, column by column.
    let mut linv = Array2::<T>::zeros((n, n));
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { T::one() } else { T::zero() };
            for k in col..i {
                s -= l[[i, k]] * linv[[k, col]];
            }
            linv[[i, col]] = s / l[[i, i]];
        }
    }
    let mut inv = linv.t().dot(&linv);
    // Symmetrise away rounding asymmetry.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = (inv[[i, j]] + inv[[j, i]]) / T::lit(2.0);
            inv[[i, j]] = m;
            inv[[j, i]] = m;
        }
    }
    inv
}

/// Column means of a sample matrix (rows = samples).
pub fn column_mean<T: Scalar>(x: ArrayView2<'_, T>) -> Array1<T> {
    let n = T::from_usize(x.nrows().max(1)).unwrap_or_else(T::one);
    let mut mean = Array1::<T>::zeros(x.ncols());
    for row in x.rows() {
        mean += &row;
    }
    mean / n
}

/// Modified Gram-Schmidt with a second re-orthogonalisation pass.
///
/// Columns that become numerically dependent are reported as `None`.
pub fn orthonormalize_columns<T: Scalar>(a: ArrayView2<'_, T>) -> Option<Array2<T>> {
    let (m, n) = a.dim();
    let mut q = a.to_owned();
    for j in 0..n {
        let original = norm(q.column(j));
        for _pass in 0..2 {
            for k in 0..j {
                let dot = q.column(k).dot(&q.column(j));
                for i in 0..m {
                    let qk = q[[i, k]];
                    q[[i, j]] -= dot * qk;
                }
            }
        }
        let nrm = norm(q.column(j));
        if !(nrm > original * T::lit(1e3) * T::epsilon()) {
            return None;
        }
        q.column_mut(j).mapv_inplace(|x| x / nrm);
    }
    Some(q)
}

pub fn norm<T: Scalar>(x: ArrayView1<'_, T>) -> T {
    x.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn logsumexp<T: Scalar>(x: ArrayView1<'_, T>) -> T {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s = x.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + s.ln()
}
