//! Variational posterior families: Dirichlet rows over the initial-state and
//! transition probabilities, and a Gaussian-Wishart per emission state.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VbError};
use crate::linalg;
use crate::special::{digamma_unchecked, dirichlet_entropy, ln_dirichlet_norm_unchecked};

/// Occupancy below which a state is treated as empty.
pub const EMPTY_STATE_THRESHOLD: f64 = 1e-12;

/// Dirichlet pseudo-counts for one probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletRow {
    alpha: Vec<f64>,
}

impl DirichletRow {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(VbError::domain("Dirichlet row must be non-empty"));
        }
        if let Some(bad) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(VbError::domain(format!("Dirichlet pseudo-count {bad} is not positive")));
        }
        Ok(DirichletRow { alpha })
    }

    pub fn uniform(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// E[ln π_k] = ψ(α_k) − ψ(Σα).
    pub fn expected_log_pi(&self) -> Vec<f64> {
        let psi_total = digamma_unchecked(self.total());
        self.alpha.iter().map(|&a| digamma_unchecked(a) - psi_total).collect()
    }

    /// Mean probability vector α / Σα.
    pub fn mean(&self) -> Vec<f64> {
        let total = self.total();
        self.alpha.iter().map(|a| a / total).collect()
    }

    pub fn ln_norm(&self) -> f64 {
        ln_dirichlet_norm_unchecked(&self.alpha)
    }

    pub fn entropy(&self) -> f64 {
        dirichlet_entropy(&self.alpha).expect("validated Dirichlet row")
    }

    /// Adds non-negative counts to the pseudo-counts.
    pub fn add_counts(&self, counts: &[f64]) -> Result<Self> {
        VbError::check_dim(self.len(), counts.len())?;
        Self::new(self.alpha.iter().zip(counts).map(|(a, c)| a + c).collect())
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        DirichletRow {
            alpha: perm.iter().map(|&p| self.alpha[p]).collect(),
        }
    }
}

/// Gaussian-Wishart distribution N(μ | m, (βΛ)⁻¹) · W(Λ | W, ν).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussWishart {
    m: DVector<f64>,
    beta: f64,
    w: DMatrix<f64>,
    nu: f64,
    ln_det_w: f64,
}

impl GaussWishart {
    pub fn new(m: DVector<f64>, beta: f64, w: DMatrix<f64>, nu: f64) -> Result<Self> {
        let d = m.len();
        if d == 0 {
            return Err(VbError::domain("Gaussian-Wishart dimension must be positive"));
        }
        VbError::check_dim(d, w.nrows())?;
        VbError::check_dim(d, w.ncols())?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(VbError::domain("non-finite mean location"));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(VbError::domain(format!("beta must be positive, got {beta}")));
        }
        if !(nu.is_finite() && nu > d as f64 - 1.0) {
            return Err(VbError::domain(format!("nu = {nu} must exceed D - 1 = {}", d - 1)));
        }
        let ln_det_w = linalg::ln_det_spd(&w)?;
        let w = linalg::symmetrize(&w);
        Ok(GaussWishart {
            m,
            beta,
            w,
            nu,
            ln_det_w,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn ln_det_w(&self) -> f64 {
        self.ln_det_w
    }

    /// E[ln |Λ|] = Σ_d ψ((ν + 1 − d)/2) + D ln 2 + ln |W|.
    pub fn expected_log_det_lambda(&self) -> f64 {
        let d = self.dim();
        (1..=d)
            .map(|i| digamma_unchecked(0.5 * (self.nu + 1.0 - i as f64)))
            .sum::<f64>()
            + d as f64 * LN_2
            + self.ln_det_w
    }

    /// E[(x − μ)ᵀ Λ (x − μ)] = D/β + ν (x − m)ᵀ W (x − m).
    pub fn expected_quadratic(&self, x: &DVector<f64>) -> Result<f64> {
        VbError::check_dim(self.dim(), x.len())?;
        Ok(self.expected_quadratic_unchecked(x))
    }

    fn expected_quadratic_unchecked(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.m;
        self.dim() as f64 / self.beta + self.nu * linalg::quad_form(&self.w, &diff)
    }

    /// ln b = E[ln N(x | μ, Λ⁻¹)] under this distribution.
    pub fn log_b(&self, x: &DVector<f64>) -> Result<f64> {
        VbError::check_dim(self.dim(), x.len())?;
        Ok(EmissionTerms::new(self).log_b(x))
    }

    /// E[Λ]⁻¹ = (νW)⁻¹, the covariance implied by the expected precision.
    pub fn expected_covariance(&self) -> Result<DMatrix<f64>> {
        let (inv, _) = linalg::spd_inverse_with_jitter(&(&self.w * self.nu))?;
        Ok(inv)
    }

    /// Conjugate update of `prior` with weighted sufficient statistics.
    ///
    /// `s` is the weighted covariance normalized by `n`, so the scatter
    /// added to the prior is `n · s`.
    pub fn from_stats(prior: &GaussWishart, n: f64, xbar: &DVector<f64>, s: &DMatrix<f64>) -> Result<Self> {
        Self::from_stats_with_jitter(prior, n, xbar, s).map(|(gw, _)| gw)
    }

    /// As [`GaussWishart::from_stats`], also reporting how many jitter
    /// escalations the final SPD inversion needed.
    pub fn from_stats_with_jitter(
        prior: &GaussWishart,
        n: f64,
        xbar: &DVector<f64>,
        s: &DMatrix<f64>,
    ) -> Result<(Self, u32)> {
        let d = prior.dim();
        VbError::check_dim(d, xbar.len())?;
        VbError::check_dim(d, s.nrows())?;
        VbError::check_dim(d, s.ncols())?;
        if !(n.is_finite() && n >= 0.0) {
            return Err(VbError::domain(format!("occupancy {n} must be non-negative")));
        }
        if n < EMPTY_STATE_THRESHOLD {
            return Ok((prior.clone(), 0));
        }
        let beta = prior.beta + n;
        let nu = prior.nu + n;
        let m = (&prior.m * prior.beta + xbar * n) / beta;
        let (w0_inv, _) = linalg::spd_inverse_with_jitter(&prior.w)?;
        let dev = xbar - &prior.m;
        let w_inv = w0_inv + s * n + (&dev * dev.transpose()) * (prior.beta * n / (prior.beta + n));
        let (w, jitter) = linalg::spd_inverse_with_jitter(&linalg::symmetrize(&w_inv))
            .map_err(|e| VbError::Numeric(format!("posterior scale matrix: {e}")))?;
        Ok((Self::new(m, beta, w, nu)?, jitter))
    }

    #[cfg(test)]
    pub(crate) fn permuted_dims(&self, perm: &[usize]) -> Self {
        let d = self.dim();
        let m = DVector::from_fn(d, |i, _| self.m[perm[i]]);
        let w = DMatrix::from_fn(d, d, |i, j| self.w[(perm[i], perm[j])]);
        GaussWishart {
            m,
            beta: self.beta,
            w,
            nu: self.nu,
            ln_det_w: self.ln_det_w,
        }
    }
}

/// Per-state quantities reused for every observation in the E-step.
pub(crate) struct EmissionTerms<'a> {
    gw: &'a GaussWishart,
    constant: f64,
}

impl<'a> EmissionTerms<'a> {
    pub(crate) fn new(gw: &'a GaussWishart) -> Self {
        let d = gw.dim() as f64;
        let constant = 0.5 * gw.expected_log_det_lambda() - 0.5 * d * (2.0 * PI).ln();
        EmissionTerms { gw, constant }
    }

    pub(crate) fn log_b(&self, x: &DVector<f64>) -> f64 {
        self.constant - 0.5 * self.gw.expected_quadratic_unchecked(x)
    }
}

/// Hyperparameters of the prior over all model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmPriors {
    pub initial_alpha0: DirichletRow,
    pub transition_alpha0: Vec<DirichletRow>,
    /// Shared by every state.
    pub emission0: GaussWishart,
}

impl HmmPriors {
    pub fn new(
        initial_alpha0: DirichletRow,
        transition_alpha0: Vec<DirichletRow>,
        emission0: GaussWishart,
    ) -> Result<Self> {
        let priors = HmmPriors {
            initial_alpha0,
            transition_alpha0,
            emission0,
        };
        priors.validate()?;
        Ok(priors)
    }

    pub fn n_states(&self) -> usize {
        self.initial_alpha0.len()
    }

    pub fn dim(&self) -> usize {
        self.emission0.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.n_states();
        VbError::check_dim(j, self.transition_alpha0.len())?;
        for row in &self.transition_alpha0 {
            VbError::check_dim(j, row.len())?;
        }
        Ok(())
    }

    /// The posterior obtained from this prior with no data.
    pub fn as_posterior(&self) -> HmmPosterior {
        HmmPosterior {
            initial: self.initial_alpha0.clone(),
            transitions: self.transition_alpha0.clone(),
            emissions: vec![self.emission0.clone(); self.n_states()],
        }
    }
}

/// Variational posterior over initial, transition and emission parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmPosterior {
    pub initial: DirichletRow,
    pub transitions: Vec<DirichletRow>,
    pub emissions: Vec<GaussWishart>,
}

impl HmmPosterior {
    pub fn new(initial: DirichletRow, transitions: Vec<DirichletRow>, emissions: Vec<GaussWishart>) -> Result<Self> {
        let post = HmmPosterior {
            initial,
            transitions,
            emissions,
        };
        post.validate()?;
        Ok(post)
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.emissions.first().map_or(0, GaussWishart::dim)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.n_states();
        VbError::check_dim(j, self.transitions.len())?;
        VbError::check_dim(j, self.emissions.len())?;
        for row in &self.transitions {
            VbError::check_dim(j, row.len())?;
        }
        let d = self.dim();
        for gw in &self.emissions {
            VbError::check_dim(d, gw.dim())?;
        }
        Ok(())
    }

    /// Relabels states so that new state `i` is old state `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_states())?;
        Ok(HmmPosterior {
            initial: self.initial.permuted(perm),
            transitions: perm.iter().map(|&p| self.transitions[p].permuted(perm)).collect(),
            emissions: perm.iter().map(|&p| self.emissions[p].clone()).collect(),
        })
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    VbError::check_dim(n, perm.len())?;
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(VbError::domain(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        seen[p] = true;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER: f64 = 0.577_215_664_901_532_9;

    fn gw1(m: f64, beta: f64, w: f64, nu: f64) -> GaussWishart {
        GaussWishart::new(DVector::from_element(1, m), beta, DMatrix::from_element(1, 1, w), nu).unwrap()
    }

    #[test]
    fn expected_log_pi_values() {
        let r = DirichletRow::new(vec![1.0, 1.0]).unwrap().expected_log_pi();
        assert!(r.iter().all(|v| (v + 1.0).abs() < 1e-14));
        let r = DirichletRow::new(vec![2.0, 2.0]).unwrap().expected_log_pi();
        assert!(r.iter().all(|v| (v + 5.0 / 6.0).abs() < 1e-14));
        let r = DirichletRow::new(vec![9.0, 1.0]).unwrap().expected_log_pi();
        assert!(r.iter().all(|v| *v < 0.0));
        assert!(r.iter().map(|v| v.exp()).sum::<f64>() < 1.0);
    }

    #[test]
    fn sub_normalization_tends_to_one() {
        let mut last = 0.0;
        for scale in [1.0, 10.0, 100.0, 1e4, 1e6] {
            let s: f64 = DirichletRow::new(vec![3.0 * scale, 1.0 * scale, 2.0 * scale])
                .unwrap()
                .expected_log_pi()
                .iter()
                .map(|v| v.exp())
                .sum();
            assert!(s < 1.0 && s > last);
            last = s;
        }
        assert!(1.0 - last < 1e-5);
    }

    #[test]
    fn dirichlet_row_rejects_bad_counts() {
        assert!(DirichletRow::new(vec![]).is_err());
        assert!(DirichletRow::new(vec![1.0, 0.0]).is_err());
        assert!(DirichletRow::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn expected_log_det_values() {
        let base = -EULER - 2f64.ln();
        assert!((gw1(0.0, 1.0, 1.0, 1.0).expected_log_det_lambda() - base).abs() < 1e-14);
        let e = std::f64::consts::E;
        assert!((gw1(0.0, 1.0, e, 1.0).expected_log_det_lambda() - (base + 1.0)).abs() < 1e-14);
        let gw = GaussWishart::new(DVector::zeros(2), 1.0, DMatrix::identity(2, 2), 2.0).unwrap();
        assert!((gw.expected_log_det_lambda() - (-1.154_431_329_803_065_7)).abs() < 1e-13);
    }

    #[test]
    fn expected_quadratic_values() {
        let gw = gw1(3.0, 1.0, 0.5, 2.0);
        assert_eq!(gw.expected_quadratic(&DVector::from_element(1, 3.0)).unwrap(), 1.0);
        assert!((gw.expected_quadratic(&DVector::from_element(1, 5.0)).unwrap() - 5.0).abs() < 1e-14);
        let gw = GaussWishart::new(DVector::zeros(2), 2.0, DMatrix::identity(2, 2), 3.0).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert!((gw.expected_quadratic(&x).unwrap() - 7.0).abs() < 1e-14);
        assert!(gw.expected_quadratic(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn log_b_at_location() {
        let gw = gw1(0.0, 1.0, 1.0, 1.0);
        let want = 0.5 * (-EULER - 2f64.ln()) - 0.5 * (2.0 * PI).ln() - 0.5;
        assert!((gw.log_b(&DVector::zeros(1)).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn log_b_concentrates_on_gaussian_log_density() {
        let gw = gw1(0.0, 1e9, 1e-9, 1e9);
        let lb = gw.log_b(&DVector::zeros(1)).unwrap();
        assert!((lb + 0.5 * (2.0 * PI).ln()).abs() < 1e-3);
    }

    #[test]
    fn log_b_is_translation_invariant() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let a = GaussWishart::new(DVector::from_vec(vec![1.0, -1.0]), 0.7, w.clone(), 4.0).unwrap();
        let b = GaussWishart::new(DVector::from_vec(vec![11.0, 4.0]), 0.7, w, 4.0).unwrap();
        let x = DVector::from_vec(vec![0.2, 0.9]);
        let t = DVector::from_vec(vec![10.0, 5.0]);
        assert!((a.log_b(&x).unwrap() - b.log_b(&(&x + t)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn from_stats_empty_is_prior() {
        let prior = gw1(0.5, 2.0, 3.0, 4.0);
        let post = GaussWishart::from_stats(&prior, 0.0, &DVector::zeros(1), &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(post, prior);
    }

    #[test]
    fn from_stats_hand_example() {
        let prior = gw1(0.0, 1.0, 1.0, 1.0);
        let post =
            GaussWishart::from_stats(&prior, 1.0, &DVector::from_element(1, 2.0), &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(post.beta(), 2.0);
        assert_eq!(post.nu(), 2.0);
        assert!((post.m()[0] - 1.0).abs() < 1e-15);
        assert!((post.w()[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn from_stats_large_data_limit() {
        let prior = gw1(0.0, 1.0, 1.0, 1.0);
        let xbar = 4.0;
        let n = 1e6;
        let post = GaussWishart::from_stats(
            &prior,
            n,
            &DVector::from_element(1, xbar),
            &DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        assert!((post.m()[0] - xbar).abs() <= 10.0 * prior.beta() * (xbar - prior.m()[0]).abs() / n);
        // (νW)⁻¹ approaches the data covariance.
        assert!((post.expected_covariance().unwrap()[(0, 0)] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn from_stats_is_permutation_covariant() {
        let prior = GaussWishart::new(
            DVector::from_vec(vec![0.1, -0.2, 0.3]),
            0.5,
            DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 0.5]),
            3.5,
        )
        .unwrap();
        let xbar = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 2.0, -0.4, 0.1, -0.4, 0.7]);
        let perm = [2usize, 0, 1];
        let post = GaussWishart::from_stats(&prior, 7.0, &xbar, &s).unwrap();
        let pxbar = DVector::from_fn(3, |i, _| xbar[perm[i]]);
        let ps = DMatrix::from_fn(3, 3, |i, j| s[(perm[i], perm[j])]);
        let ppost = GaussWishart::from_stats(&prior.permuted_dims(&perm), 7.0, &pxbar, &ps).unwrap();
        let expect = post.permuted_dims(&perm);
        assert!((ppost.m() - expect.m()).amax() < 1e-12);
        assert!((ppost.w() - expect.w()).amax() < 1e-12);
    }

    #[test]
    fn relabel_rejects_non_permutation() {
        let prior = gw1(0.0, 1.0, 1.0, 1.0);
        let post = HmmPosterior::new(
            DirichletRow::uniform(2, 1.0).unwrap(),
            vec![DirichletRow::uniform(2, 1.0).unwrap(); 2],
            vec![prior.clone(), prior],
        )
        .unwrap();
        assert!(post.relabel(&[0, 0]).is_err());
        assert!(post.relabel(&[1, 0]).is_ok());
    }
}
