//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Every SPD matrix in the crate goes through [`cholesky`] so that the
//! symmetry tolerance is applied in exactly one place.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, VbError};

/// Relative tolerance on `max|A - Aᵀ|` accepted as symmetric.
pub const SYMMETRY_RTOL: f64 = 1e-10;

/// Number of times the diagonal jitter is doubled before giving up.
pub const MAX_JITTER_DOUBLINGS: u32 = 3;

const JITTER_SCALE: f64 = 1e-12;

pub fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(VbError::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    check_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(VbError::NotSpd("non-finite entry".into()));
    }
    let scale = m.amax();
    let n = m.nrows();
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_RTOL * scale {
        return Err(VbError::NotSpd(format!(
            "asymmetry {asym:e} exceeds tolerance for scale {scale:e}"
        )));
    }
    Ok(())
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    check_symmetric(m)?;
    Cholesky::new(symmetrize(m)).ok_or_else(|| VbError::NotSpd("Cholesky factorization failed".into()))
}

/// `ln |A|` from a Cholesky factor.
pub fn chol_ln_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn ln_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    Ok(chol_ln_det(&cholesky(m)?))
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of an SPD matrix, retrying with diagonal jitter
/// `1e-12·tr(A)·2^k` for `k = 0..=3` when the plain factorization fails.
///
/// Returns the inverse and the number of jitter attempts that were needed
/// (zero when the matrix factorized as given).
pub fn spd_inverse_with_jitter(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, u32)> {
    check_symmetric(m)?;
    let n = m.nrows();
    let sym = symmetrize(m);
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return Ok((symmetrize(&ch.inverse()), 0));
    }
    let base = JITTER_SCALE * sym.trace().abs().max(f64::MIN_POSITIVE);
    for k in 0..=MAX_JITTER_DOUBLINGS {
        let eps = base * f64::from(1u32 << k);
        let jittered = &sym + DMatrix::<f64>::identity(n, n) * eps;
        if let Some(ch) = Cholesky::new(jittered) {
            return Ok((symmetrize(&ch.inverse()), k + 1));
        }
    }
    Err(VbError::NotSpd("Cholesky failed after jitter escalation".into()))
}

/// `vᵀ A v`.
pub fn quad_form(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(a * v))
}

/// `tr(A B)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| x * y).sum()
}

/// Ratio of extreme eigenvalues of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = symmetrize(m).symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
