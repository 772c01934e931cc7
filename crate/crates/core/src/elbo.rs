//! Variational lower bound.
//!
//! [`elbo`] evaluates the seven expectation terms directly from the
//! posterior, the sufficient statistics and the E-step marginals. The KL
//! functions give a second, independent route: right after an E-step,
//! `total == Σ log_z_tilde − KL(q(π)‖p(π)) − Σ KL(q(A_j)‖p(A_j)) − Σ KL(q(μ_j,Λ_j)‖p(μ_j,Λ_j))`.

use std::f64::consts::PI;

use crate::error::{Result, VbError};
use crate::forward_backward::EStepResult;
use crate::linalg;
use crate::posteriors::{DirichletRow, GaussWishart, HmmPosterior, HmmPriors};
use crate::special::{
    digamma_unchecked, ln_dirichlet_norm_unchecked, ln_multigamma, ln_wishart_norm_from_ln_det, multidigamma,
    wishart_entropy_from_ln_det,
};
use crate::vb_updates::SufficientStats;

/// Default relative tolerance for [`has_converged`].
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboBreakdown {
    /// E[ln p(X | Z, μ, Λ)]
    pub e_ln_p_x: f64,
    /// E[ln p(Z | π, A)]
    pub e_ln_p_z: f64,
    /// E[ln p(π, A)]
    pub e_ln_p_pi: f64,
    /// E[ln p(μ, Λ)]
    pub e_ln_p_mu_lambda: f64,
    /// E[ln q(Z)]
    pub e_ln_q_z: f64,
    /// E[ln q(π, A)]
    pub e_ln_q_pi: f64,
    /// E[ln q(μ, Λ)]
    pub e_ln_q_mu_lambda: f64,
    pub total: f64,
}

impl ElboBreakdown {
    fn from_terms(
        e_ln_p_x: f64,
        e_ln_p_z: f64,
        e_ln_p_pi: f64,
        e_ln_p_mu_lambda: f64,
        e_ln_q_z: f64,
        e_ln_q_pi: f64,
        e_ln_q_mu_lambda: f64,
    ) -> Self {
        let total = e_ln_p_x + e_ln_p_z + e_ln_p_pi + e_ln_p_mu_lambda - e_ln_q_z - e_ln_q_pi - e_ln_q_mu_lambda;
        ElboBreakdown {
            e_ln_p_x,
            e_ln_p_z,
            e_ln_p_pi,
            e_ln_p_mu_lambda,
            e_ln_q_z,
            e_ln_q_pi,
            e_ln_q_mu_lambda,
            total,
        }
    }
}

/// Lower bound for `post` with `stats` and `esteps` computed from the same
/// responsibilities (one E-step result per sequence).
pub fn elbo(
    post: &HmmPosterior,
    priors: &HmmPriors,
    stats: &SufficientStats,
    esteps: &[EStepResult],
) -> Result<ElboBreakdown> {
    let j = post.n_states();
    let d = post.dim();
    VbError::check_dim(priors.n_states(), j)?;
    VbError::check_dim(priors.dim(), d)?;
    VbError::check_dim(j, stats.n_states())?;
    for r in esteps {
        VbError::check_dim(j, r.n_states())?;
    }
    let df = d as f64;
    let ln_2pi = (2.0 * PI).ln();

    let e_ln_det: Vec<f64> = post
        .emissions
        .iter()
        .map(GaussWishart::expected_log_det_lambda)
        .collect();

    let mut e_ln_p_x = 0.0;
    for (k, gw) in post.emissions.iter().enumerate() {
        if stats.empty[k] {
            continue;
        }
        let dev = &stats.xbar[k] - gw.m();
        let inner = e_ln_det[k]
            - df / gw.beta()
            - gw.nu() * linalg::trace_of_product(&stats.s[k], gw.w())
            - gw.nu() * linalg::quad_form(gw.w(), &dev)
            - df * ln_2pi;
        e_ln_p_x += 0.5 * stats.n_j[k] * inner;
    }

    let log_pi = post.initial.expected_log_pi();
    let log_a: Vec<Vec<f64>> = post.transitions.iter().map(DirichletRow::expected_log_pi).collect();
    let mut e_ln_p_z: f64 = stats.gamma1.iter().zip(&log_pi).map(|(g, l)| g * l).sum();
    for (r, row) in log_a.iter().enumerate() {
        for (s, l) in row.iter().enumerate() {
            e_ln_p_z += stats.xi_sums[(r, s)] * l;
        }
    }

    let e_ln_q_z: f64 = esteps.iter().map(chain_expected_log_q).sum();

    let dirichlet_pairs = std::iter::once((&post.initial, &priors.initial_alpha0, &log_pi)).chain(
        post.transitions
            .iter()
            .zip(&priors.transition_alpha0)
            .zip(&log_a)
            .map(|((q, p), l)| (q, p, l)),
    );
    let mut e_ln_p_pi = 0.0;
    let mut e_ln_q_pi = 0.0;
    for (q, p, log_expect) in dirichlet_pairs {
        e_ln_p_pi += p.ln_norm()
            + p.alpha()
                .iter()
                .zip(log_expect)
                .map(|(a, l)| (a - 1.0) * l)
                .sum::<f64>();
        e_ln_q_pi += q.ln_norm()
            + q.alpha()
                .iter()
                .zip(log_expect)
                .map(|(a, l)| (a - 1.0) * l)
                .sum::<f64>();
    }

    let p0 = &priors.emission0;
    let (w0_inv, _) = linalg::spd_inverse_with_jitter(p0.w())?;
    let ln_b0 = ln_wishart_norm_from_ln_det(p0.ln_det_w(), d, p0.nu());
    let mut e_ln_p_mu_lambda = 0.0;
    let mut e_ln_q_mu_lambda = 0.0;
    for (k, gw) in post.emissions.iter().enumerate() {
        let dev = gw.m() - p0.m();
        e_ln_p_mu_lambda += 0.5
            * (df * (p0.beta() / (2.0 * PI)).ln() + e_ln_det[k]
                - df * p0.beta() / gw.beta()
                - p0.beta() * gw.nu() * linalg::quad_form(gw.w(), &dev));
        e_ln_p_mu_lambda += ln_b0 + 0.5 * (p0.nu() - df - 1.0) * e_ln_det[k]
            - 0.5 * gw.nu() * linalg::trace_of_product(&w0_inv, gw.w());

        let entropy = wishart_entropy_from_ln_det(gw.ln_det_w(), d, gw.nu(), e_ln_det[k]);
        e_ln_q_mu_lambda += 0.5 * e_ln_det[k] + 0.5 * df * (gw.beta() / (2.0 * PI)).ln() - 0.5 * df - entropy;
    }

    Ok(ElboBreakdown::from_terms(
        e_ln_p_x,
        e_ln_p_z,
        e_ln_p_pi,
        e_ln_p_mu_lambda,
        e_ln_q_z,
        e_ln_q_pi,
        e_ln_q_mu_lambda,
    ))
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// E[ln q(Z)] for a chain posterior with pairwise marginals ξ and node
/// marginals γ: Σ ξ ln ξ minus Σ γ ln γ over interior steps.
fn chain_expected_log_q(r: &EStepResult) -> f64 {
    let n = r.len();
    if n == 1 {
        return r.gamma.row(0).iter().map(|&g| xlogx(g)).sum();
    }
    let pairs: f64 = r.xi.iter().flat_map(|x| x.iter()).map(|&v| xlogx(v)).sum();
    let interior: f64 = (1..n - 1)
        .flat_map(|t| r.gamma.row(t).iter().copied().collect::<Vec<_>>())
        .map(xlogx)
        .sum();
    pairs - interior
}

/// KL(Dir(q) ‖ Dir(p)).
pub fn dirichlet_kl(q: &DirichletRow, p: &DirichletRow) -> Result<f64> {
    VbError::check_dim(p.len(), q.len())?;
    if q == p {
        return Ok(0.0);
    }
    let psi_total = digamma_unchecked(q.total());
    let cross: f64 = p
        .alpha()
        .iter()
        .zip(q.alpha())
        .map(|(pa, qa)| (pa - 1.0) * (digamma_unchecked(*qa) - psi_total))
        .sum();
    Ok(-q.entropy() - ln_dirichlet_norm_unchecked(p.alpha()) - cross)
}

/// KL(q(μ, Λ) ‖ p(μ, Λ)) for Gaussian-Wishart distributions, as the Wishart
/// divergence plus the expected conditional Gaussian divergence.
pub fn gauss_wishart_kl(q: &GaussWishart, p: &GaussWishart) -> Result<f64> {
    VbError::check_dim(p.dim(), q.dim())?;
    if q == p {
        return Ok(0.0);
    }
    let d = q.dim();
    let df = d as f64;
    let (wp_inv, _) = linalg::spd_inverse_with_jitter(p.w())?;
    let wishart = 0.5 * p.nu() * (p.ln_det_w() - q.ln_det_w()) + ln_multigamma(0.5 * p.nu(), d)
        - ln_multigamma(0.5 * q.nu(), d)
        + 0.5 * (q.nu() - p.nu()) * multidigamma(0.5 * q.nu(), d)
        + 0.5 * q.nu() * (linalg::trace_of_product(&wp_inv, q.w()) - df);
    let dev = q.m() - p.m();
    let ratio = p.beta() / q.beta();
    let gaussian = 0.5 * (df * ratio - df - df * ratio.ln() + p.beta() * q.nu() * linalg::quad_form(q.w(), &dev));
    Ok(wishart + gaussian)
}

/// Σ of all parameter KL divergences of `post` from `priors`.
pub fn parameter_kl(post: &HmmPosterior, priors: &HmmPriors) -> Result<f64> {
    let mut kl = dirichlet_kl(&post.initial, &priors.initial_alpha0)?;
    for (q, p) in post.transitions.iter().zip(&priors.transition_alpha0) {
        kl += dirichlet_kl(q, p)?;
    }
    for q in &post.emissions {
        kl += gauss_wishart_kl(q, &priors.emission0)?;
    }
    Ok(kl)
}

/// |Δℒ| / (1 + |ℒ|) < tol.
pub fn has_converged(previous: f64, current: f64, tol: f64) -> bool {
    (current - previous).abs() / (1.0 + current.abs()) < tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn gw1(m: f64, beta: f64, w: f64, nu: f64) -> GaussWishart {
        GaussWishart::new(DVector::from_element(1, m), beta, DMatrix::from_element(1, 1, w), nu).unwrap()
    }

    #[test]
    fn dirichlet_kl_values() {
        let one = DirichletRow::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(dirichlet_kl(&one, &one).unwrap(), 0.0);
        let q = DirichletRow::new(vec![2.0, 1.0]).unwrap();
        // ln 2 + ψ(2) − ψ(3)
        assert!((dirichlet_kl(&q, &one).unwrap() - 0.193_147_180_559_945_3).abs() < 1e-14);
        assert!(dirichlet_kl(&q, &DirichletRow::new(vec![1.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn dirichlet_kl_grows_with_concentration() {
        let one = DirichletRow::new(vec![1.0, 1.0]).unwrap();
        let mut last = 0.0;
        for c in [1.5, 2.0, 4.0, 8.0, 32.0] {
            let kl = dirichlet_kl(&DirichletRow::new(vec![c, c]).unwrap(), &one).unwrap();
            assert!(kl > last);
            last = kl;
        }
    }

    #[test]
    fn gauss_wishart_kl_basic() {
        let q = gw1(1.0, 2.0, 1.0, 2.0);
        let p = gw1(0.0, 1.0, 1.0, 1.0);
        assert_eq!(gauss_wishart_kl(&q, &q).unwrap(), 0.0);
        let qp = gauss_wishart_kl(&q, &p).unwrap();
        let pq = gauss_wishart_kl(&p, &q).unwrap();
        assert!(qp > 0.0 && pq > 0.0);
        assert!((qp - pq).abs() > 1e-3);
        let two = GaussWishart::new(DVector::zeros(2), 1.0, DMatrix::identity(2, 2), 2.0).unwrap();
        assert!(gauss_wishart_kl(&q, &two).is_err());
    }

    #[test]
    fn gauss_wishart_kl_matches_term_by_term_expansion() {
        // E_q[ln q] − E_q[ln p] assembled from the lower-bound terms.
        let q = GaussWishart::new(
            DVector::from_vec(vec![0.3, -1.0]),
            3.0,
            DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.1, 0.4]),
            5.5,
        )
        .unwrap();
        let p = GaussWishart::new(
            DVector::from_vec(vec![0.0, 0.5]),
            0.5,
            DMatrix::identity(2, 2) * 0.3,
            2.0,
        )
        .unwrap();
        let d = 2.0;
        let e = q.expected_log_det_lambda();
        let w0_inv = linalg::spd_inverse_with_jitter(p.w()).unwrap().0;
        let dev = q.m() - p.m();
        let e_ln_p = 0.5
            * (d * (p.beta() / (2.0 * PI)).ln() + e
                - d * p.beta() / q.beta()
                - p.beta() * q.nu() * linalg::quad_form(q.w(), &dev))
            + ln_wishart_norm_from_ln_det(p.ln_det_w(), 2, p.nu())
            + 0.5 * (p.nu() - d - 1.0) * e
            - 0.5 * q.nu() * linalg::trace_of_product(&w0_inv, q.w());
        let h = wishart_entropy_from_ln_det(q.ln_det_w(), 2, q.nu(), e);
        let e_ln_q = 0.5 * e + 0.5 * d * (q.beta() / (2.0 * PI)).ln() - 0.5 * d - h;
        assert!((gauss_wishart_kl(&q, &p).unwrap() - (e_ln_q - e_ln_p)).abs() < 1e-12);
    }

    #[test]
    fn convergence_rule() {
        assert!(has_converged(-1000.0, -1000.0005, 1e-6));
        assert!(!has_converged(-1000.0, -999.0, 1e-6));
    }
}
