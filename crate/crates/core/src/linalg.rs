//! Dense helpers on top of `faer`.

use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigenvalues (ascending) and column eigenvectors of a small symmetric matrix
/// stored row-major, by cyclic Jacobi rotations.
pub fn jacobi_eigen(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), d * d);
    let mut m = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += m[p * d + q] * m[p * d + q];
            }
        }
        let scale: f64 = (0..d).map(|i| m[i * d + i] * m[i * d + i]).sum::<f64>() + off;
        if off <= 1e-32 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&i, &j| m[i * d + i].total_cmp(&m[j * d + j]));
    let evals = idx.iter().map(|&i| m[i * d + i]).collect();
    let mut evecs = vec![0.0; d * d];
    for (c, &i) in idx.iter().enumerate() {
        for r in 0..d {
            evecs[r * d + c] = v[r * d + i];
        }
    }
    (evals, evecs)
}

/// Checks that a small symmetric matrix is PSD up to `-rel_tol * max|eig|` and returns
/// a factor `L` (row-major, `d x d`) with `L Lᵀ = C` (negative eigenvalues clamped).
pub fn psd_factor(c: &[f64], d: usize, rel_tol: f64) -> Result<Vec<f64>> {
    let (ev, u) = jacobi_eigen(c, d);
    check_psd(&ev, rel_tol)?;
    let mut l = vec![0.0; d * d];
    for r in 0..d {
        for k in 0..d {
            l[r * d + k] = u[r * d + k] * ev[k].max(0.0).sqrt();
        }
    }
    Ok(l)
}

pub(crate) fn check_psd(eigs: &[f64], rel_tol: f64) -> Result<()> {
    let norm = eigs.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = rel_tol * norm;
    if min < -tol || !min.is_finite() {
        return Err(Error::NotPsd { min_eig: min, tol });
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sym_eigen_desc(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let vals: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let vecs = Mat::from_fn(n, n, |r, c| u[(r, n - 1 - c)]);
    Ok((vals, vecs))
}

/// Symmetric eigenvalues, descending.
pub fn sym_eigenvalues_desc(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut v = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    v.reverse();
    Ok(v)
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize<T: Scalar>(a: &Mat<T>) -> Mat<T> {
    let n = a.nrows();
    let half = T::of(0.5);
    Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)]) * half)
}

/// Principal square root of a symmetric matrix with negative eigenvalues clamped to 0.
pub fn sym_sqrt(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let (vals, u) = sym_eigen_desc(a)?;
    let n = a.nrows();
    let scaled = Mat::from_fn(n, n, |r, c| u[(r, c)] * vals[c].max(0.0).sqrt());
    Ok(&scaled * u.transpose())
}

/// Spectral norm.
pub fn spectral_norm(a: MatRef<'_, f64>) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0.0);
    }
    let s = a
        .singular_values()
        .map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    Ok(s.first().copied().unwrap_or(0.0))
}

pub fn frobenius_norm(a: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}

/// Lossy element conversion between scalar types.
pub fn cast<A: Scalar, B: Scalar>(a: MatRef<'_, A>) -> Mat<B> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| B::of(a[(i, j)].to_f64_lossy()))
}

pub fn row_major_from(rows: usize, cols: usize, data: &[f64]) -> Mat<f64> {
    assert_eq!(data.len(), rows * cols);
    Mat::from_fn(rows, cols, |i, j| data[i * cols + j])
}

pub fn to_row_major<T: Scalar>(a: MatRef<'_, T>) -> Vec<T> {
    let mut out = Vec::with_capacity(a.nrows() * a.ncols());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.push(a[(i, j)]);
        }
    }
    out
}
