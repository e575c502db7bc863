use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::autograd::Tensor;
use crate::{Error, Result};

/// Diagonal loading used when a set has no more samples than feature
/// dimensions, where the sample covariance is singular.
const SMALL_SET_RIDGE: f64 = 1e-6;

fn moments(features: &Tensor) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = features.dims2();
    let x = DMatrix::from_row_slice(n, d, features.data());
    let mean = x.row_mean().transpose();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let mut cov = centred.transpose() * &centred / (n.max(2) - 1) as f64;
    if n <= d {
        for i in 0..d {
            cov[(i, i)] += SMALL_SET_RIDGE;
        }
    }
    (mean, cov)
}

fn symmetric_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new((m + m.transpose()) * 0.5)
}

/// Fréchet distance between Gaussian fits of two feature sets `[n, d]`.
///
/// `Tr((Σa Σb)^{1/2})` is taken as the trace of the symmetric root of
/// `Σa^{1/2} Σb Σa^{1/2}`, with eigenvalues clamped at zero.
pub fn fid(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (na, d) = a.dims2();
    let (nb, db) = b.dims2();
    if d != db {
        return Err(Error::ShapeMismatch {
            expected: vec![na, d],
            actual: vec![nb, db],
        });
    }
    if na < 2 || nb < 2 {
        return Err(Error::InvalidInput(
            "FID needs at least two samples per set".into(),
        ));
    }
    if !a.all_finite() || !b.all_finite() {
        return Err(Error::InvalidInput("non-finite features".into()));
    }
    let (mu_a, cov_a) = moments(a);
    let (mu_b, cov_b) = moments(b);
    let ea = symmetric_eigen(&cov_a);
    let root_a = &ea.eigenvectors
        * DMatrix::from_diagonal(&ea.eigenvalues.map(|v| v.max(0.0).sqrt()))
        * ea.eigenvectors.transpose();
    let inner = symmetric_eigen(&(&root_a * &cov_b * &root_a));
    let scale = cov_a.trace().abs() + cov_b.trace().abs() + 1.0;
    if let Some(v) = inner
        .eigenvalues
        .iter()
        .find(|&&v| !v.is_finite() || v < -1e-6 * scale)
    {
        return Err(Error::InvalidInput(format!(
            "covariance product is not positive semi-definite (eigenvalue {v})"
        )));
    }
    let tr_root: f64 = inner.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dist = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * tr_root;
    Ok(dist.max(0.0))
}
