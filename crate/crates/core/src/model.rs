//! Concrete HMM parameters with Gaussian emissions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VbError};
use crate::forward_backward::{forward_backward, EStepResult};
use crate::linalg;
use crate::posteriors::check_permutation;
use crate::sequence::ObservationSequence;

const STOCHASTIC_TOL: f64 = 1e-10;

/// Start probabilities, transition matrix and per-state Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    pub pi: Vec<f64>,
    /// Row-stochastic, `a[(i, j)] = P(z_{n+1} = j | z_n = i)`.
    pub a: DMatrix<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

/// Maximum-likelihood model fitted by Baum-Welch.
pub type MlHmm = HmmParams;

/// Known model used to generate synthetic data.
pub type GroundTruthHmm = HmmParams;

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(VbError::domain(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(VbError::domain(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl HmmParams {
    pub fn new(
        pi: Vec<f64>,
        a: DMatrix<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let params = HmmParams {
            pi,
            a,
            means,
            covariances,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.pi.len();
        if j == 0 {
            return Err(VbError::domain("model needs at least one state"));
        }
        check_distribution(&self.pi, "initial distribution")?;
        VbError::check_dim(j, self.a.nrows())?;
        VbError::check_dim(j, self.a.ncols())?;
        for (r, row) in self.a.row_iter().enumerate() {
            let row: Vec<f64> = row.iter().copied().collect();
            check_distribution(&row, &format!("transition row {r}"))?;
        }
        VbError::check_dim(j, self.means.len())?;
        VbError::check_dim(j, self.covariances.len())?;
        let d = self.means[0].len();
        if d == 0 {
            return Err(VbError::domain("zero-dimensional emissions"));
        }
        for (m, c) in self.means.iter().zip(&self.covariances) {
            VbError::check_dim(d, m.len())?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(VbError::domain("non-finite mean"));
            }
            VbError::check_dim(d, c.nrows())?;
            linalg::cholesky(c)?;
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// N×J matrix of ln N(x_n | μ_j, Σ_j).
    pub fn log_emissions(&self, seq: &ObservationSequence) -> Result<DMatrix<f64>> {
        VbError::check_dim(self.dim(), seq.dim())?;
        let d = self.dim() as f64;
        let mut factors = Vec::with_capacity(self.n_states());
        for c in &self.covariances {
            let ch = linalg::cholesky(c)?;
            let ln_det = linalg::chol_ln_det(&ch);
            factors.push((ch, -0.5 * (d * (2.0 * PI).ln() + ln_det)));
        }
        Ok(DMatrix::from_fn(seq.len(), self.n_states(), |n, j| {
            let dev = &seq[n] - &self.means[j];
            let (ch, norm) = &factors[j];
            let z = ch
                .l_dirty()
                .solve_lower_triangular(&dev)
                .expect("non-singular Cholesky factor");
            norm - 0.5 * z.norm_squared()
        }))
    }

    pub(crate) fn log_params(&self) -> (Vec<f64>, DMatrix<f64>) {
        (self.pi.iter().map(|p| p.ln()).collect(), self.a.map(f64::ln))
    }

    /// Exact posterior marginals and log-likelihood for one sequence.
    pub fn posterior_marginals(&self, seq: &ObservationSequence) -> Result<EStepResult> {
        let (log_pi, log_a) = self.log_params();
        forward_backward(&log_pi, &log_a, &self.log_emissions(seq)?)
    }

    /// ln p(x_1..x_N).
    pub fn log_likelihood(&self, seq: &ObservationSequence) -> Result<f64> {
        Ok(self.posterior_marginals(seq)?.log_z_tilde)
    }

    /// Relabels states so that new state `i` is old state `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_states())?;
        Ok(HmmParams {
            pi: perm.iter().map(|&p| self.pi[p]).collect(),
            a: DMatrix::from_fn(perm.len(), perm.len(), |i, j| self.a[(perm[i], perm[j])]),
            means: perm.iter().map(|&p| self.means[p].clone()).collect(),
            covariances: perm.iter().map(|&p| self.covariances[p].clone()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> HmmParams {
        HmmParams::new(
            vec![0.6, 0.4],
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
            vec![DVector::from_element(1, -1.0), DVector::from_element(1, 2.0)],
            vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn log_emissions_are_gaussian_densities() {
        let m = two_state();
        let seq = ObservationSequence::from_rows(&[vec![0.0]]).unwrap();
        let lb = m.log_emissions(&seq).unwrap();
        let want0 = -0.5 * (2.0 * PI * 0.5f64).ln() - 0.5 * 1.0 / 0.5;
        let want1 = -0.5 * (2.0 * PI * 2.0f64).ln() - 0.5 * 4.0 / 2.0;
        assert!((lb[(0, 0)] - want0).abs() < 1e-14);
        assert!((lb[(0, 1)] - want1).abs() < 1e-14);
    }

    #[test]
    fn log_likelihood_of_single_observation_is_mixture() {
        let m = two_state();
        let seq = ObservationSequence::from_rows(&[vec![0.3]]).unwrap();
        let lb = m.log_emissions(&seq).unwrap();
        let want = (0.6 * lb[(0, 0)].exp() + 0.4 * lb[(0, 1)].exp()).ln();
        assert!((m.log_likelihood(&seq).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn validation() {
        let m = two_state();
        let mut bad = m.clone();
        bad.pi = vec![0.5, 0.6];
        assert!(bad.validate().is_err());
        let mut bad = m.clone();
        bad.covariances[1] = DMatrix::from_element(1, 1, -1.0);
        assert!(bad.validate().is_err());
        let mut bad = m;
        bad.a[(0, 0)] = 0.95;
        assert!(bad.validate().is_err());
    }
}
