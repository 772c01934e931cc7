//! Special functions: digamma, log-gamma, and the Dirichlet and Wishart
//! normalizers and entropies built from them.
//!
//! Scalar functions are accurate to about 1e-14 absolute on `[1e-3, 1e6]`,
//! or a few ulps of the result where that is larger.
//! Both use upward recurrence into the region where the asymptotic series
//! converges quickly.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Result, VbError};
use crate::linalg;

const LN_2PI_HALF: f64 = 0.918_938_533_204_672_8;

/// A strictly positive, finite real.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PosReal(f64);

impl PosReal {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(PosReal(value))
        } else {
            Err(VbError::domain(format!(
                "expected a positive finite value, got {value}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn digamma(self) -> f64 {
        digamma_unchecked(self.0)
    }

    pub fn ln_gamma(self) -> f64 {
        ln_gamma_unchecked(self.0)
    }
}

/// ψ(x), the logarithmic derivative of Γ.
pub fn digamma(x: f64) -> Result<f64> {
    Ok(PosReal::new(x)?.digamma())
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    Ok(PosReal::new(x)?.ln_gamma())
}

pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    debug_assert!(x > 0.0, "digamma of non-positive {x}");
    let mut x = x;
    let mut shift = 0.0;
    while x < 10.0 {
        shift += 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Σ B_2k / (2k x^2k), k = 1..8
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2
                                                * (691.0 / 32760.0 - inv2 * (1.0 / 12.0 - inv2 * 3617.0 / 8160.0)))))));
    x.ln() - 0.5 * inv - tail - shift
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma of non-positive {x}");
    let mut x = x;
    let mut prod = 1.0;
    while x < 10.0 {
        prod *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Σ B_2k / (2k(2k-1) x^(2k-1)), k = 1..8
    let tail = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2
                        * (1.0 / 1260.0
                            - inv2
                                * (1.0 / 1680.0
                                    - inv2
                                        * (1.0 / 1188.0
                                            - inv2
                                                * (691.0 / 360360.0
                                                    - inv2 * (1.0 / 156.0 - inv2 * 3617.0 / 122400.0)))))));
    let stirling = (x - 0.5) * x.ln() - x + LN_2PI_HALF + tail;
    if prod == 1.0 {
        stirling
    } else {
        stirling - prod.ln()
    }
}

/// ln Γ_D(a), the multivariate log-gamma function.
pub(crate) fn ln_multigamma(a: f64, d: usize) -> f64 {
    let df = d as f64;
    df * (df - 1.0) / 4.0 * PI.ln()
        + (1..=d)
            .map(|i| ln_gamma_unchecked(a + (1.0 - i as f64) / 2.0))
            .sum::<f64>()
}

/// ψ_D(a), the derivative of ln Γ_D.
pub(crate) fn multidigamma(a: f64, d: usize) -> f64 {
    (1..=d).map(|i| digamma_unchecked(a + (1.0 - i as f64) / 2.0)).sum()
}

fn check_alpha(alpha: &[f64]) -> Result<()> {
    if alpha.is_empty() {
        return Err(VbError::domain("empty Dirichlet parameter vector"));
    }
    for &a in alpha {
        PosReal::new(a)?;
    }
    Ok(())
}

/// ln C(α) = ln Γ(Σα) − Σ ln Γ(α_k), the log normalizer of a Dirichlet.
pub fn ln_dirichlet_norm(alpha: &[f64]) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(ln_dirichlet_norm_unchecked(alpha))
}

pub(crate) fn ln_dirichlet_norm_unchecked(alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    ln_gamma_unchecked(total) - alpha.iter().map(|&a| ln_gamma_unchecked(a)).sum::<f64>()
}

/// Differential entropy of Dir(α).
pub fn dirichlet_entropy(alpha: &[f64]) -> Result<f64> {
    check_alpha(alpha)?;
    let total: f64 = alpha.iter().sum();
    let psi_total = digamma_unchecked(total);
    let cross: f64 = alpha
        .iter()
        .map(|&a| (a - 1.0) * (digamma_unchecked(a) - psi_total))
        .sum();
    Ok(-cross - ln_dirichlet_norm_unchecked(alpha))
}

fn check_wishart(w: &DMatrix<f64>, nu: f64) -> Result<f64> {
    let d = linalg::check_square(w)?;
    if d == 0 {
        return Err(VbError::domain("zero-dimensional Wishart"));
    }
    if !(nu.is_finite() && nu > d as f64 - 1.0) {
        return Err(VbError::domain(format!(
            "Wishart degrees of freedom {nu} must exceed D - 1 = {}",
            d - 1
        )));
    }
    linalg::ln_det_spd(w)
}

/// ln B(W, ν), the log normalizer of the Wishart density.
pub fn ln_wishart_norm(w: &DMatrix<f64>, nu: f64) -> Result<f64> {
    let ln_det = check_wishart(w, nu)?;
    Ok(ln_wishart_norm_from_ln_det(ln_det, w.nrows(), nu))
}

pub(crate) fn ln_wishart_norm_from_ln_det(ln_det_w: f64, d: usize, nu: f64) -> f64 {
    let df = d as f64;
    -0.5 * nu * ln_det_w - 0.5 * nu * df * std::f64::consts::LN_2 - ln_multigamma(0.5 * nu, d)
}

/// Entropy of W(Λ | W, ν), given `expected_ln_det = E[ln |Λ|]` for the same
/// parameters.
pub fn wishart_entropy(w: &DMatrix<f64>, nu: f64, expected_ln_det: f64) -> Result<f64> {
    let ln_det = check_wishart(w, nu)?;
    Ok(wishart_entropy_from_ln_det(ln_det, w.nrows(), nu, expected_ln_det))
}

pub(crate) fn wishart_entropy_from_ln_det(ln_det_w: f64, d: usize, nu: f64, expected_ln_det: f64) -> f64 {
    let df = d as f64;
    -ln_wishart_norm_from_ln_det(ln_det_w, d, nu) - 0.5 * (nu - df - 1.0) * expected_ln_det + 0.5 * nu * df
}
