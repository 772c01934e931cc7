//! Variational E-step: scaled forward-backward over the sub-normalized
//! quantities ã = exp E[ln A], π̃ = exp E[ln π] and b = exp E[ln p(x | μ, Λ)].
//!
//! Each forward step is normalized by its own constant `c_n` and the
//! backward pass reuses the same constants, so no product of emission
//! densities is ever formed directly. Emission terms are additionally
//! shifted by their per-step maximum before exponentiation.

use nalgebra::DMatrix;

use crate::error::{Result, VbError};
use crate::posteriors::{EmissionTerms, HmmPosterior};
use crate::sequence::ObservationSequence;

/// Responsibilities for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepResult {
    /// N×J, each row sums to one.
    pub gamma: DMatrix<f64>,
    /// N−1 slices; `xi[n][(j, s)]` is the probability of j at n and s at n+1.
    pub xi: Vec<DMatrix<f64>>,
    /// Log of the forward normalizer at each step, emission shift included.
    pub log_c: Vec<f64>,
    /// Σ log_c: log of the sub-normalized sequence likelihood.
    pub log_z_tilde: f64,
    /// Forward steps whose mass underflowed to zero and were reset to uniform.
    pub degenerate_steps: usize,
}

impl EStepResult {
    pub fn len(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.nrows() == 0
    }

    pub fn n_states(&self) -> usize {
        self.gamma.ncols()
    }
}

/// Log sub-normalized initial and transition parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeParams {
    pub log_pi: Vec<f64>,
    pub log_a: DMatrix<f64>,
}

pub fn tilde_params(post: &HmmPosterior) -> TildeParams {
    let j = post.n_states();
    let mut log_a = DMatrix::zeros(j, j);
    for (r, row) in post.transitions.iter().enumerate() {
        for (s, v) in row.expected_log_pi().into_iter().enumerate() {
            log_a[(r, s)] = v;
        }
    }
    TildeParams {
        log_pi: post.initial.expected_log_pi(),
        log_a,
    }
}

/// N×J matrix of ln b_{n,j}.
pub fn log_emissions(post: &HmmPosterior, seq: &ObservationSequence) -> Result<DMatrix<f64>> {
    VbError::check_dim(post.dim(), seq.dim())?;
    let terms: Vec<_> = post.emissions.iter().map(EmissionTerms::new).collect();
    Ok(DMatrix::from_fn(seq.len(), terms.len(), |n, j| terms[j].log_b(&seq[n])))
}

pub fn e_step(post: &HmmPosterior, seq: &ObservationSequence) -> Result<EStepResult> {
    let tilde = tilde_params(post);
    let log_b = log_emissions(post, seq)?;
    forward_backward(&tilde.log_pi, &tilde.log_a, &log_b)
}

/// Scaled forward-backward over log-domain inputs.
///
/// `log_pi` and `log_a` need not be normalized; `log_b` is N×J.
pub fn forward_backward(log_pi: &[f64], log_a: &DMatrix<f64>, log_b: &DMatrix<f64>) -> Result<EStepResult> {
    let n = log_b.nrows();
    let j = log_b.ncols();
    if n == 0 {
        return Err(VbError::EmptySequence);
    }
    VbError::check_dim(j, log_pi.len())?;
    VbError::check_dim(j, log_a.nrows())?;
    VbError::check_dim(j, log_a.ncols())?;

    let pi: Vec<f64> = log_pi.iter().map(|v| v.exp()).collect();
    let a = log_a.map(f64::exp);

    let mut b_hat = DMatrix::zeros(n, j);
    let mut alpha = DMatrix::zeros(n, j);
    let mut scale = vec![0.0; n];
    let mut log_c = vec![0.0; n];
    let mut degenerate_steps = 0;
    let mut raw = vec![0.0; j];

    for t in 0..n {
        let shift = log_b.row(t).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(VbError::Numeric(format!(
                "emission log-density at step {t} is not finite"
            )));
        }
        for k in 0..j {
            b_hat[(t, k)] = (log_b[(t, k)] - shift).exp();
        }
        for (k, r) in raw.iter_mut().enumerate() {
            let pred = if t == 0 {
                pi[k]
            } else {
                (0..j).map(|i| alpha[(t - 1, i)] * a[(i, k)]).sum()
            };
            *r = pred * b_hat[(t, k)];
        }
        let mut c: f64 = raw.iter().sum();
        if !(c > 0.0 && c.is_finite()) {
            degenerate_steps += 1;
            raw.fill(1.0);
            c = j as f64;
            log_c[t] = shift;
        } else {
            log_c[t] = shift + c.ln();
        }
        scale[t] = c;
        for k in 0..j {
            alpha[(t, k)] = raw[k] / c;
        }
    }

    let mut beta = DMatrix::zeros(n, j);
    beta.row_mut(n - 1).fill(1.0);
    for t in (0..n - 1).rev() {
        for i in 0..j {
            let s: f64 = (0..j).map(|k| a[(i, k)] * b_hat[(t + 1, k)] * beta[(t + 1, k)]).sum();
            beta[(t, i)] = s / scale[t + 1];
        }
    }

    let mut gamma = alpha.component_mul(&beta);
    for mut row in gamma.row_iter_mut() {
        let s: f64 = row.sum();
        row /= s;
    }

    let mut xi = Vec::with_capacity(n - 1);
    for t in 0..n - 1 {
        let mut slice = DMatrix::from_fn(j, j, |i, k| {
            alpha[(t, i)] * a[(i, k)] * b_hat[(t + 1, k)] * beta[(t + 1, k)]
        });
        let s = slice.sum();
        slice /= s;
        xi.push(slice);
    }

    let log_z_tilde = log_c.iter().sum();
    Ok(EStepResult {
        gamma,
        xi,
        log_c,
        log_z_tilde,
        degenerate_steps,
    })
}

/// Start-state probabilities read off the first responsibility row.
pub fn initial_pi_hat(result: &EStepResult) -> Vec<f64> {
    let row = result.gamma.row(0);
    let total: f64 = row.sum();
    row.iter().map(|g| g / total).collect()
}
