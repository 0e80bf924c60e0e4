//! Dense symmetric eigendecomposition via the cyclic Jacobi method.
//!
//! Small, deterministic, and accurate enough for covariance matrices of
//! a few hundred dimensions; the FID square root is built on it.

use crate::error::{Error, Result};

/// Eigenvalues and eigenvectors (columns of `vectors`) of a symmetric
/// matrix given in row-major order.
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Row-major d x d; column j is the eigenvector for `values[j]`.
    pub vectors: Vec<f64>,
}

pub fn sym_eigen(a: &[f64], d: usize) -> Result<SymEigen> {
    if a.len() != d * d {
        return Err(Error::Contract(format!(
            "sym_eigen: {} elements for dimension {d}",
            a.len()
        )));
    }
    let mut m = a.to_vec();
    // Symmetrize defensively; callers pass nearly-symmetric matrices.
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = avg;
            m[j * d + i] = avg;
        }
    }
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let tol = 1e-14
        * m.iter()
            .map(|x| x.abs())
            .fold(0.0f64, f64::max)
            .max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += m[i * d + j].abs();
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq.abs() <= tol * 1e-3 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                for k in 0..d {
                    let akp = m[k * d + p];
                    let akq = m[k * d + q];
                    m[k * d + p] = c * akp - s * akq;
                    m[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = m[p * d + k];
                    let aqk = m[q * d + k];
                    m[p * d + k] = c * apk - s * aqk;
                    m[q * d + k] = s * apk + c * aqk;
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
    let values: Vec<f64> = (0..d).map(|i| m[i * d + i]).collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("eigendecomposition produced non-finite values".into()));
    }
    Ok(SymEigen { values, vectors: v })
}

/// C = A B for row-major d x d matrices.
pub fn matmul_square(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * d..][..d];
            let crow = &mut c[i * d..][..d];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
    c
}

/// Symmetric PSD square root: V diag(sqrt(clip(lambda, 0))) V^T.
pub fn sqrtm_psd(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let eig = sym_eigen(a, d)?;
    let mut scaled = vec![0.0; d * d]; // V * diag(sqrt(lambda))
    for j in 0..d {
        let s = eig.values[j].max(0.0).sqrt();
        for i in 0..d {
            scaled[i * d + j] = eig.vectors[i * d + j] * s;
        }
    }
    // scaled * V^T
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += scaled[i * d + k] * eig.vectors[j * d + k];
            }
            out[i * d + j] = acc;
        }
    }
    Ok(out)
}
