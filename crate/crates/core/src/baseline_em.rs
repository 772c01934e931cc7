//! Maximum-likelihood Baum-Welch for the same model family, without priors.
//!
//! Covariance eigenvalues are floored at `cov_floor` after every M-step.
//! With no floor a state that captures a single repeated point drives its
//! covariance to singularity, which is reported as a numeric error.

use nalgebra::DMatrix;

use crate::elbo::has_converged;
use crate::error::{Result, VbError};
use crate::forward_backward::EStepResult;
use crate::linalg;
use crate::model::MlHmm;
use crate::posteriors::EMPTY_STATE_THRESHOLD;
use crate::sequence::ObservationSequence;
use crate::trainer::{init_responsibilities, InitMethod, TrainConfig};
use crate::vb_updates::{pooled_stats, DataSummary};

/// Relative covariance floor used when the caller has no preference.
pub const DEFAULT_COV_FLOOR_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub model: MlHmm,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of covariance eigenvalues raised to the floor, over all iterations.
    pub floor_events: usize,
}

/// `DEFAULT_COV_FLOOR_SCALE` times the mean per-dimension data variance.
pub fn default_cov_floor(data: &[ObservationSequence]) -> Result<f64> {
    Ok(DEFAULT_COV_FLOOR_SCALE * DataSummary::from_data(data)?.scale)
}

pub fn baum_welch_fit(
    data: &[ObservationSequence],
    n_states: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
    cov_floor: f64,
) -> Result<EmFit> {
    if data.is_empty() {
        return Err(VbError::EmptyData);
    }
    if !(cov_floor >= 0.0 && cov_floor.is_finite()) {
        return Err(VbError::InvalidConfig(format!(
            "covariance floor {cov_floor} must be non-negative"
        )));
    }
    let mut cfg = TrainConfig::new(n_states);
    cfg.seed = seed;
    cfg.init = InitMethod::KMeans;
    cfg.tol = tol;
    cfg.max_iters = max_iters;
    cfg.validate()?;

    let j = n_states;
    let mut esteps: Vec<EStepResult> = init_responsibilities(data, &cfg)?
        .into_iter()
        .map(|gamma| {
            let n = gamma.nrows();
            let xi = (0..n.saturating_sub(1))
                .map(|t| gamma.row(t).transpose() * gamma.row(t + 1))
                .collect();
            EStepResult {
                gamma,
                xi,
                log_c: vec![0.0; n],
                log_z_tilde: 0.0,
                degenerate_steps: 0,
            }
        })
        .collect();

    let mut model: Option<MlHmm> = None;
    let mut trace = Vec::new();
    let mut floor_events = 0;
    let mut converged = false;

    for iteration in 1..=max_iters {
        let stats = pooled_stats(&esteps, data)?;
        let total1: f64 = stats.gamma1.iter().sum();
        let pi: Vec<f64> = stats.gamma1.iter().map(|g| g / total1).collect();
        let mut a = DMatrix::zeros(j, j);
        for r in 0..j {
            let row_sum: f64 = stats.xi_sums.row(r).sum();
            for s in 0..j {
                a[(r, s)] = if row_sum > 0.0 {
                    stats.xi_sums[(r, s)] / row_sum
                } else {
                    1.0 / j as f64
                };
            }
        }
        let mut means = Vec::with_capacity(j);
        let mut covariances = Vec::with_capacity(j);
        for k in 0..j {
            if stats.n_j[k] < EMPTY_STATE_THRESHOLD {
                let prev = model
                    .as_ref()
                    .ok_or_else(|| VbError::Numeric(format!("state {k} is empty at initialization")))?;
                means.push(prev.means[k].clone());
                covariances.push(prev.covariances[k].clone());
                continue;
            }
            let (cov, raised) = floor_covariance(&stats.s[k], cov_floor);
            floor_events += raised;
            means.push(stats.xbar[k].clone());
            covariances.push(cov);
        }
        let next = MlHmm::new(pi, a, means, covariances).map_err(|e| match e {
            VbError::NotSpd(msg) => {
                VbError::Numeric(format!("covariance became singular at iteration {iteration}: {msg}"))
            }
            other => other,
        })?;

        esteps = data
            .iter()
            .map(|seq| next.posterior_marginals(seq))
            .collect::<Result<_>>()?;
        let loglik: f64 = esteps.iter().map(|r| r.log_z_tilde).sum();
        if !loglik.is_finite() {
            return Err(VbError::Numeric(format!(
                "log-likelihood diverged at iteration {iteration}"
            )));
        }
        let done = trace.last().is_some_and(|&prev| has_converged(prev, loglik, tol));
        trace.push(loglik);
        model = Some(next);
        if done {
            converged = true;
            break;
        }
    }

    Ok(EmFit {
        model: model.expect("max_iters >= 1"),
        iterations: trace.len(),
        loglik_trace: trace,
        converged,
        floor_events,
    })
}

/// Raises eigenvalues below `floor` to `floor`; returns the matrix and the
/// number of eigenvalues changed.
fn floor_covariance(s: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, usize) {
    let eig = linalg::symmetrize(s).symmetric_eigen();
    let raised = eig.eigenvalues.iter().filter(|&&v| v < floor).count();
    if raised == 0 {
        return (s.clone(), 0);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let cov = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (linalg::symmetrize(&cov), raised)
}
