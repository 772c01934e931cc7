//! Variational M-step: weighted sufficient statistics and the conjugate
//! updates of the Dirichlet and Gaussian-Wishart posteriors.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VbError};
use crate::forward_backward::EStepResult;
use crate::posteriors::{DirichletRow, GaussWishart, HmmPosterior, HmmPriors, EMPTY_STATE_THRESHOLD};
use crate::sequence::{common_dim, ObservationSequence};

/// Responsibility-weighted statistics pooled over one or more sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// Σ_n γ_{n,j}.
    pub n_j: Vec<f64>,
    /// Weighted means; zero for empty states.
    pub xbar: Vec<DVector<f64>>,
    /// Weighted covariances normalized by `n_j`; zero for empty states.
    pub s: Vec<DMatrix<f64>>,
    /// Σ_n ξ_n, J×J.
    pub xi_sums: DMatrix<f64>,
    /// Σ over sequences of the first responsibility row.
    pub gamma1: Vec<f64>,
    /// States with occupancy below [`EMPTY_STATE_THRESHOLD`].
    pub empty: Vec<bool>,
}

impl SufficientStats {
    pub fn n_states(&self) -> usize {
        self.n_j.len()
    }
}

pub fn sufficient_stats(result: &EStepResult, seq: &ObservationSequence) -> Result<SufficientStats> {
    pooled_stats(std::slice::from_ref(result), std::slice::from_ref(seq))
}

/// Statistics summed over sequences in the given order.
pub fn pooled_stats(results: &[EStepResult], data: &[ObservationSequence]) -> Result<SufficientStats> {
    VbError::check_dim(data.len(), results.len())?;
    let d = common_dim(data)?;
    let j = results[0].n_states();
    for (r, seq) in results.iter().zip(data) {
        VbError::check_dim(seq.len(), r.len())?;
        VbError::check_dim(j, r.n_states())?;
        VbError::check_dim(seq.len().saturating_sub(1), r.xi.len())?;
    }

    let mut n_j = vec![0.0; j];
    let mut sum_x = vec![DVector::zeros(d); j];
    let mut xi_sums = DMatrix::zeros(j, j);
    let mut gamma1 = vec![0.0; j];
    for (r, seq) in results.iter().zip(data) {
        for (n, x) in seq.iter().enumerate() {
            for k in 0..j {
                let g = r.gamma[(n, k)];
                n_j[k] += g;
                sum_x[k].axpy(g, x, 1.0);
            }
        }
        for xi in &r.xi {
            xi_sums += xi;
        }
        for (g1, g) in gamma1.iter_mut().zip(r.gamma.row(0).iter()) {
            *g1 += g;
        }
    }

    let empty: Vec<bool> = n_j.iter().map(|&n| n < EMPTY_STATE_THRESHOLD).collect();
    let xbar: Vec<DVector<f64>> = (0..j)
        .map(|k| {
            if empty[k] {
                DVector::zeros(d)
            } else {
                &sum_x[k] / n_j[k]
            }
        })
        .collect();

    let mut s = vec![DMatrix::zeros(d, d); j];
    for (r, seq) in results.iter().zip(data) {
        for (n, x) in seq.iter().enumerate() {
            for k in 0..j {
                if empty[k] {
                    continue;
                }
                let dev = x - &xbar[k];
                s[k].ger(r.gamma[(n, k)], &dev, &dev, 1.0);
            }
        }
    }
    for k in 0..j {
        if !empty[k] {
            s[k] /= n_j[k];
            s[k] = (&s[k] + s[k].transpose()) * 0.5;
        }
    }

    Ok(SufficientStats {
        n_j,
        xbar,
        s,
        xi_sums,
        gamma1,
        empty,
    })
}

/// α_{j,s} = α⁰_{j,s} + Σ_n ξ_n(j, s).
pub fn update_transitions(prior: &HmmPriors, stats: &SufficientStats) -> Result<Vec<DirichletRow>> {
    VbError::check_dim(prior.n_states(), stats.n_states())?;
    prior
        .transition_alpha0
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let counts: Vec<f64> = stats.xi_sums.row(j).iter().copied().collect();
            row.add_counts(&counts)
        })
        .collect()
}

/// How the initial-state Dirichlet absorbs the responsibilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialUpdateMode {
    /// α_j = α₀ + N_j: total occupancy, as for mixture weights.
    Occupancy,
    /// α_j = α₀ + γ(z_{1,j}) summed over sequences.
    #[default]
    FirstStep,
}

impl fmt::Display for InitialUpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitialUpdateMode::Occupancy => "occupancy",
            InitialUpdateMode::FirstStep => "first-step",
        })
    }
}

impl FromStr for InitialUpdateMode {
    type Err = VbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occupancy" => Ok(InitialUpdateMode::Occupancy),
            "first-step" => Ok(InitialUpdateMode::FirstStep),
            other => Err(VbError::InvalidConfig(format!("unknown initial update mode {other:?}"))),
        }
    }
}

pub fn update_initial(prior: &HmmPriors, stats: &SufficientStats, mode: InitialUpdateMode) -> Result<DirichletRow> {
    let counts = match mode {
        InitialUpdateMode::Occupancy => &stats.n_j,
        InitialUpdateMode::FirstStep => &stats.gamma1,
    };
    prior.initial_alpha0.add_counts(counts)
}

pub fn update_emissions(prior: &HmmPriors, stats: &SufficientStats) -> Result<Vec<GaussWishart>> {
    Ok(update_emissions_traced(prior, stats)?
        .into_iter()
        .map(|(gw, _)| gw)
        .collect())
}

/// Emission updates together with the jitter level each SPD solve needed.
pub fn update_emissions_traced(prior: &HmmPriors, stats: &SufficientStats) -> Result<Vec<(GaussWishart, u32)>> {
    VbError::check_dim(prior.n_states(), stats.n_states())?;
    (0..stats.n_states())
        .map(|k| {
            let n = if stats.empty[k] { 0.0 } else { stats.n_j[k] };
            GaussWishart::from_stats_with_jitter(&prior.emission0, n, &stats.xbar[k], &stats.s[k])
        })
        .collect()
}

/// Full M-step.
pub fn m_step(prior: &HmmPriors, stats: &SufficientStats, mode: InitialUpdateMode) -> Result<(HmmPosterior, Vec<u32>)> {
    let (emissions, jitter): (Vec<_>, Vec<_>) = update_emissions_traced(prior, stats)?.into_iter().unzip();
    let post = HmmPosterior::new(
        update_initial(prior, stats, mode)?,
        update_transitions(prior, stats)?,
        emissions,
    )?;
    Ok((post, jitter))
}

/// Pooled location and spread used to scale the default emission prior.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSummary {
    pub mean: DVector<f64>,
    /// Mean of the per-dimension (biased) variances.
    pub scale: f64,
}

impl DataSummary {
    pub fn from_data(data: &[ObservationSequence]) -> Result<Self> {
        let d = common_dim(data)?;
        let count: usize = data.iter().map(ObservationSequence::len).sum();
        let mut mean = DVector::zeros(d);
        for x in data.iter().flat_map(ObservationSequence::iter) {
            mean += x;
        }
        mean /= count as f64;
        let mut var = DVector::<f64>::zeros(d);
        for x in data.iter().flat_map(ObservationSequence::iter) {
            let dev = x - &mean;
            var += dev.component_mul(&dev);
        }
        var /= count as f64;
        let scale = var.mean();
        Ok(DataSummary {
            mean,
            scale: if scale > 0.0 && scale.is_finite() { scale } else { 1.0 },
        })
    }
}

/// Default hyperparameters: sticky transition prior (0.5 on the diagonal,
/// 1/(2J) elsewhere), α₀ = 1 for the start state, and an emission prior
/// centred on the data with E[Λ] = ν₀W₀ = I / scale.
pub fn default_priors(n_states: usize, dim: usize, summary: &DataSummary) -> Result<HmmPriors> {
    if n_states == 0 || dim == 0 {
        return Err(VbError::InvalidConfig(
            "state count and dimension must be positive".into(),
        ));
    }
    VbError::check_dim(dim, summary.mean.len())?;
    if !(summary.scale.is_finite() && summary.scale > 0.0) {
        return Err(VbError::InvalidConfig(format!(
            "data scale {} must be positive",
            summary.scale
        )));
    }
    let off = 1.0 / (2.0 * n_states as f64);
    let transition_alpha0 = (0..n_states)
        .map(|j| DirichletRow::new((0..n_states).map(|s| if s == j { 0.5 } else { off }).collect()))
        .collect::<Result<Vec<_>>>()?;
    let d = dim as f64;
    let w0 = DMatrix::identity(dim, dim) / (d * summary.scale);
    let emission0 = GaussWishart::new(summary.mean.clone(), 1.0, w0, d)?;
    HmmPriors::new(DirichletRow::uniform(n_states, 1.0)?, transition_alpha0, emission0)
}
