//! Dense helpers shared by the certificate, coefficient and transport code.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;

/// Clamp threshold for eigenvalues of PSD matrices.
pub const PSD_TOL: f64 = 1e-12;

pub fn sym_part<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> Result<Vec<T>> {
    if !m.is_square() {
        return Err(dim_err(format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.nrows() == 0 {
        return Err(dim_err("empty matrix"));
    }
    let eig = SymmetricEigen::new(sym_part(m));
    let mut vals: Vec<T> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(vals)
}

/// Spectral norm (largest singular value).
pub fn op_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |acc, s| if s > acc { s } else { acc })
}

/// Symmetric PSD square root via eigendecomposition, clamping tiny negative
/// eigenvalues to zero. Errors if asymmetry or negativity exceeds tolerance.
pub fn psd_sqrt<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_psd(m)?;
    let eig = SymmetricEigen::new(sym_part(m));
    let roots = eig.eigenvalues.map(|v| if v > T::zero() { v.sqrt() } else { T::zero() });
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Symmetry within `PSD_TOL` (relative to the largest entry, floored at 1) and
/// smallest eigenvalue `>= -PSD_TOL`.
pub fn check_psd<T: Real>(m: &DMatrix<T>) -> Result<()> {
    if !m.is_square() {
        return Err(dim_err("covariance must be square"));
    }
    let scale = m.amax().max(T::one());
    let tol = T::lit(PSD_TOL) * scale;
    let asym = (m - m.transpose()).amax();
    if asym > tol {
        return Err(Error::NotPsd(format!("asymmetry {asym}")));
    }
    let vals = sym_eigenvalues(m)?;
    if vals[0] < -tol {
        return Err(Error::NotPsd(format!("eigenvalue {}", vals[0])));
    }
    Ok(())
}
