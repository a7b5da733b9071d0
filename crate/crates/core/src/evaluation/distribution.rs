//! Feature-distribution distances: Fréchet distance between Gaussian fits
//! (FID) and unbiased polynomial-kernel MMD² (KID).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, EvalError};

/// Default KID block size.
pub const DEFAULT_KID_BLOCK: usize = 100;

fn check_pair(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<(), EvalError> {
    if a.dim != b.dim {
        return Err(EvalError::DimensionMismatch { a: a.dim, b: b.dim });
    }
    Ok(())
}

fn mean_and_covariance(s: &EmbeddingSet) -> (DVector<f64>, DMatrix<f64>) {
    let x = DMatrix::from_row_slice(s.len(), s.dim, &s.data);
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (s.len() as f64 - 1.0);
    (mean, cov)
}

/// Eigenvalues of a symmetric PSD matrix with round-off negatives zeroed.
/// Negatives below `-1e-8 * trace` mean the input was not PSD.
fn psd_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, EvalError> {
    let sym = (&m + m.transpose()) * 0.5;
    let trace = sym.trace().abs();
    let mut eig = SymmetricEigen::new(sym);
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-8 * trace.max(f64::MIN_POSITIVE) {
                return Err(EvalError::Numerical(format!(
                    "matrix has eigenvalue {v} against trace {trace}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(eig)
}

fn psd_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
    let eig = psd_eigen(m)?;
    let roots = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^{1/2})` with sample statistics.
///
/// `Tr (Σa Σb)^{1/2}` is computed as `Tr (Σa^{1/2} Σb Σa^{1/2})^{1/2}`, whose
/// argument is symmetric PSD.
pub fn fid(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64, EvalError> {
    check_pair(a, b)?;
    for s in [a, b] {
        if s.len() < 2 {
            return Err(EvalError::TooFewSamples {
                needed: 2,
                found: s.len(),
            });
        }
    }
    let (mu_a, cov_a) = mean_and_covariance(a);
    let (mu_b, cov_b) = mean_and_covariance(b);
    let sqrt_a = psd_sqrt(cov_a.clone())?;
    let inner = &sqrt_a * &cov_b * &sqrt_a;
    let cross_trace: f64 = psd_eigen(inner)?.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let diff = mu_a - mu_b;
    Ok(diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * cross_trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KidEstimate {
    /// Mean of the per-block unbiased MMD² values; may be slightly negative.
    pub mean: f64,
    /// Standard error of that mean (0 with a single block).
    pub std_error: f64,
    pub blocks: usize,
    pub block_size: usize,
}

#[inline]
fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let v = dot / x.len() as f64 + 1.0;
    v * v * v
}

/// Unbiased MMD² between two equal-size blocks under `(xᵀy/d + 1)³`.
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]]) -> f64 {
    let m = x.len();
    let mut kxx = 0.0;
    let mut kyy = 0.0;
    let mut kxy = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += poly_kernel(x[i], x[j]);
                kyy += poly_kernel(y[i], y[j]);
            }
            kxy += poly_kernel(x[i], y[j]);
        }
    }
    let mf = m as f64;
    kxx / (mf * (mf - 1.0)) + kyy / (mf * (mf - 1.0)) - 2.0 * kxy / (mf * mf)
}

/// KID over consecutive non-overlapping blocks of `block` rows; block `k`
/// pairs rows `k*block..(k+1)*block` of both sets.
pub fn kid(a: &EmbeddingSet, b: &EmbeddingSet, block: usize) -> Result<KidEstimate, EvalError> {
    check_pair(a, b)?;
    if block < 2 {
        return Err(EvalError::Invalid(format!("KID block size {block} must be at least 2")));
    }
    let smallest = a.len().min(b.len());
    if block > smallest {
        return Err(EvalError::TooFewSamples {
            needed: block,
            found: smallest,
        });
    }
    let blocks = smallest / block;
    let values: Vec<f64> = (0..blocks)
        .into_par_iter()
        .map(|k| {
            let x: Vec<&[f64]> = (k * block..(k + 1) * block).map(|i| a.row(i)).collect();
            let y: Vec<&[f64]> = (k * block..(k + 1) * block).map(|i| b.row(i)).collect();
            mmd2_unbiased(&x, &y)
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(KidEstimate {
        mean,
        std_error,
        blocks,
        block_size: block,
    })
}

/// KID with the default block size, shrunk to the smaller set when needed.
pub fn kid_default(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<KidEstimate, EvalError> {
    kid(a, b, DEFAULT_KID_BLOCK.min(a.len()).min(b.len()))
}
