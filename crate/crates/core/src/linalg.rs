//! Thin wrappers over `faer` for the handful of dense operations the crate
//! needs. All products run sequentially so results do not depend on the
//! worker count.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `XᵀX` (p×p).
pub fn gram_cols(x: MatRef<'_, f64>) -> Mat<f64> {
    let p = x.ncols();
    let mut out = Mat::<f64>::zeros(p, p);
    matmul(out.as_mut(), Accum::Replace, x.transpose(), x, 1.0, Par::Seq);
    out
}

/// `XXᵀ` (n×n).
pub fn gram_rows(x: MatRef<'_, f64>) -> Mat<f64> {
    let n = x.nrows();
    let mut out = Mat::<f64>::zeros(n, n);
    matmul(out.as_mut(), Accum::Replace, x, x.transpose(), 1.0, Par::Seq);
    out
}

/// `A·B`.
pub fn product(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    out
}

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn sym_eigenvalues_desc(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut vals = a.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    vals.reverse();
    Ok(vals)
}

/// Full symmetric eigendecomposition: eigenvalues descending and the matching
/// eigenvectors as columns.
pub fn sym_eigen_desc(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    let n = a.nrows();
    let s = evd.S();
    let u = evd.U();
    let vals: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let vecs = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok((vals, vecs))
}

/// Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix with
/// the signs of `diag(R)` folded into `Q`.
pub fn haar_orthogonal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Mat<f64> {
    let g = Mat::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.compute_Q();
    let r = qr.R();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            for i in 0..p {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// `V diag(f(λ)) Vᵀ`.
pub fn spectral_function(vecs: MatRef<'_, f64>, vals: &[f64], f: impl Fn(f64) -> f64) -> Mat<f64> {
    let p = vecs.nrows();
    let scaled = Mat::from_fn(p, vals.len(), |i, j| vecs[(i, j)] * f(vals[j]));
    let mut out = Mat::<f64>::zeros(p, p);
    matmul(out.as_mut(), Accum::Replace, scaled.as_ref(), vecs.transpose(), 1.0, Par::Seq);
    out
}

/// Multiply every entry by `s`.
pub fn scale_in_place(a: &mut Mat<f64>, s: f64) {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            a[(i, j)] *= s;
        }
    }
}

/// Frobenius norm squared.
pub fn frobenius_sq(a: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s
}

pub fn trace(a: MatRef<'_, f64>) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}
