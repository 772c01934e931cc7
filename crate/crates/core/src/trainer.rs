//! VB-EM training loop.
//!
//! Each iteration runs the M-step from the current responsibilities, then
//! the E-step under the new posterior, and records the lower bound of that
//! (posterior, responsibilities) pair. The first M-step uses the
//! initialization's responsibilities, with pairwise terms taken as the
//! outer product of consecutive rows.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::elbo::{elbo, has_converged, ElboBreakdown, DEFAULT_TOL};
use crate::error::{Result, VbError};
use crate::forward_backward::{e_step, EStepResult};
use crate::model::HmmParams;
use crate::posteriors::{HmmPosterior, HmmPriors};
use crate::sequence::{common_dim, ObservationSequence};
use crate::vb_updates::{default_priors, m_step, pooled_stats, DataSummary, InitialUpdateMode, SufficientStats};

/// Environment variable capping worker threads (0 or unset = all cores).
pub const THREADS_ENV: &str = "VBHMM_THREADS";

const KMEANS_ITERS: usize = 10;
const KMEANS_HIT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMethod {
    /// Each responsibility row drawn from a symmetric Dirichlet(1).
    Random,
    /// Softened hard assignments from k-means on the pooled observations.
    #[default]
    KMeans,
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMethod::Random => "random",
            InitMethod::KMeans => "kmeans",
        })
    }
}

impl FromStr for InitMethod {
    type Err = VbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitMethod::Random),
            "kmeans" => Ok(InitMethod::KMeans),
            other => Err(VbError::InvalidConfig(format!("unknown init method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_states: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub init: InitMethod,
    pub initial_update_mode: InitialUpdateMode,
    pub restarts: usize,
    /// Worker threads for restarts; 0 defers to `VBHMM_THREADS`, then to
    /// the available parallelism.
    pub threads: usize,
}

impl TrainConfig {
    pub fn new(n_states: usize) -> Self {
        TrainConfig {
            n_states,
            tol: DEFAULT_TOL,
            max_iters: 200,
            seed: 0,
            init: InitMethod::default(),
            initial_update_mode: InitialUpdateMode::default(),
            restarts: 1,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(VbError::InvalidConfig("state count must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(VbError::InvalidConfig(format!(
                "tolerance {} must be positive",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(VbError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(VbError::InvalidConfig("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainWarning {
    /// A state received (numerically) no responsibility and reverted to the prior.
    EmptyState { iteration: usize, state: usize },
    /// The posterior scale matrix needed diagonal jitter to factorize.
    Jitter { iteration: usize, state: usize, level: u32 },
    /// Forward steps underflowed and were reset to uniform.
    DegenerateForward {
        iteration: usize,
        sequence: usize,
        steps: usize,
    },
}

impl fmt::Display for TrainWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainWarning::EmptyState { iteration, state } => {
                write!(f, "iteration {iteration}: state {state} is empty")
            }
            TrainWarning::Jitter {
                iteration,
                state,
                level,
            } => {
                write!(f, "iteration {iteration}: state {state} needed jitter level {level}")
            }
            TrainWarning::DegenerateForward {
                iteration,
                sequence,
                steps,
            } => write!(
                f,
                "iteration {iteration}: sequence {sequence} had {steps} degenerate forward steps"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub posterior: HmmPosterior,
    pub priors: HmmPriors,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<TrainWarning>,
    /// Index of the restart this report came from.
    pub restart: usize,
}

impl TrainReport {
    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("at least one iteration")
    }
}

/// Everything known at the end of one iteration, passed to observers.
pub struct IterationState<'a> {
    pub iteration: usize,
    pub posterior: &'a HmmPosterior,
    pub priors: &'a HmmPriors,
    pub esteps: &'a [EStepResult],
    pub stats: &'a SufficientStats,
    pub elbo: &'a ElboBreakdown,
}

/// Priors used by [`fit`] when none are given.
pub fn priors_for(data: &[ObservationSequence], n_states: usize) -> Result<HmmPriors> {
    let d = common_dim(data)?;
    default_priors(n_states, d, &DataSummary::from_data(data)?)
}

/// Fits the model, running `cfg.restarts` independent restarts and keeping
/// the one with the highest final lower bound (lowest index on ties).
pub fn fit(data: &[ObservationSequence], cfg: &TrainConfig, priors: Option<&HmmPriors>) -> Result<TrainReport> {
    cfg.validate()?;
    let priors = resolve_priors(data, cfg, priors)?;
    let workers = worker_count(cfg.threads).min(cfg.restarts);

    let results: Vec<Result<TrainReport>> = if workers <= 1 {
        (0..cfg.restarts)
            .map(|r| fit_restart(data, cfg, &priors, r, |_| {}))
            .collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<TrainReport>>>> = Mutex::new((0..cfg.restarts).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let r = next.fetch_add(1, Ordering::Relaxed);
                    if r >= cfg.restarts {
                        break;
                    }
                    let out = fit_restart(data, cfg, &priors, r, |_| {});
                    slots.lock().expect("restart slot lock")[r] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("restart slot lock")
            .into_iter()
            .map(|s| s.expect("every restart ran"))
            .collect()
    };

    let mut best: Option<TrainReport> = None;
    let mut first_err = None;
    for res in results {
        match res {
            Ok(rep) => {
                if best.as_ref().is_none_or(|b| rep.final_elbo() > b.final_elbo()) {
                    best = Some(rep);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("no restarts succeeded and none failed"))
}

fn resolve_priors(data: &[ObservationSequence], cfg: &TrainConfig, priors: Option<&HmmPriors>) -> Result<HmmPriors> {
    let d = common_dim(data)?;
    match priors {
        Some(p) => {
            p.validate()?;
            VbError::check_dim(cfg.n_states, p.n_states())?;
            VbError::check_dim(d, p.dim())?;
            Ok(p.clone())
        }
        None => priors_for(data, cfg.n_states),
    }
}

fn worker_count(requested: usize) -> usize {
    let requested = if requested > 0 {
        requested
    } else {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(0)
    };
    if requested > 0 {
        requested
    } else {
        std::thread::available_parallelism().map_or(1, usize::from)
    }
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Runs a single restart, calling `observer` after every iteration.
pub fn fit_restart<F>(
    data: &[ObservationSequence],
    cfg: &TrainConfig,
    priors: &HmmPriors,
    restart: usize,
    observer: F,
) -> Result<TrainReport>
where
    F: FnMut(&IterationState<'_>),
{
    cfg.validate()?;
    let priors = resolve_priors(data, cfg, Some(priors))?;
    let mut rng = restart_rng(cfg.seed, restart);
    let init = init_with_rng(data, cfg, &mut rng)?;
    fit_from_responsibilities(data, cfg, &priors, init, restart, observer)
}

/// Runs the VB-EM loop from the given initial responsibilities (one N×J
/// row-stochastic matrix per sequence).
pub fn fit_from_responsibilities<F>(
    data: &[ObservationSequence],
    cfg: &TrainConfig,
    priors: &HmmPriors,
    init: Vec<DMatrix<f64>>,
    restart: usize,
    mut observer: F,
) -> Result<TrainReport>
where
    F: FnMut(&IterationState<'_>),
{
    cfg.validate()?;
    VbError::check_dim(data.len(), init.len())?;
    let mut esteps: Vec<EStepResult> = init.into_iter().map(responsibilities_as_estep).collect();
    let mut stats = pooled_stats(&esteps, data)?;
    let mut warnings = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut posterior = None;

    for iteration in 1..=cfg.max_iters {
        for (state, &empty) in stats.empty.iter().enumerate() {
            if empty {
                warnings.push(TrainWarning::EmptyState { iteration, state });
            }
        }
        let (post, jitter) = m_step(priors, &stats, cfg.initial_update_mode)?;
        for (state, &level) in jitter.iter().enumerate() {
            if level > 0 {
                warnings.push(TrainWarning::Jitter {
                    iteration,
                    state,
                    level,
                });
            }
        }
        esteps = data.iter().map(|seq| e_step(&post, seq)).collect::<Result<_>>()?;
        for (sequence, r) in esteps.iter().enumerate() {
            if r.degenerate_steps > 0 {
                warnings.push(TrainWarning::DegenerateForward {
                    iteration,
                    sequence,
                    steps: r.degenerate_steps,
                });
            }
        }
        stats = pooled_stats(&esteps, data)?;
        let bound = elbo(&post, priors, &stats, &esteps)?;
        if !bound.total.is_finite() {
            return Err(VbError::Numeric(format!(
                "lower bound is not finite at iteration {iteration}"
            )));
        }
        observer(&IterationState {
            iteration,
            posterior: &post,
            priors,
            esteps: &esteps,
            stats: &stats,
            elbo: &bound,
        });
        let done = trace
            .last()
            .is_some_and(|&prev| has_converged(prev, bound.total, cfg.tol));
        trace.push(bound.total);
        posterior = Some(post);
        if done {
            converged = true;
            break;
        }
    }

    Ok(TrainReport {
        posterior: posterior.expect("max_iters >= 1"),
        priors: priors.clone(),
        iterations: trace.len(),
        elbo_trace: trace,
        converged,
        warnings,
        restart,
    })
}

fn responsibilities_as_estep(gamma: DMatrix<f64>) -> EStepResult {
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
}

/// Initial responsibilities for the first restart of `cfg`.
pub fn init_responsibilities(data: &[ObservationSequence], cfg: &TrainConfig) -> Result<Vec<DMatrix<f64>>> {
    cfg.validate()?;
    init_with_rng(data, cfg, &mut restart_rng(cfg.seed, 0))
}

fn init_with_rng(data: &[ObservationSequence], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<DMatrix<f64>>> {
    common_dim(data)?;
    let j = cfg.n_states;
    match cfg.init {
        InitMethod::Random => Ok(data
            .iter()
            .map(|seq| {
                let mut g = DMatrix::zeros(seq.len(), j);
                for mut row in g.row_iter_mut() {
                    for v in row.iter_mut() {
                        *v = rng.sample::<f64, _>(Exp1);
                    }
                    let s = row.sum();
                    row /= s;
                }
                g
            })
            .collect()),
        InitMethod::KMeans => {
            let pooled: Vec<&DVector<f64>> = data.iter().flat_map(ObservationSequence::iter).collect();
            let labels = kmeans(&pooled, j, rng);
            let (hit, miss) = if j == 1 {
                (1.0, 0.0)
            } else {
                (KMEANS_HIT, (1.0 - KMEANS_HIT) / (j as f64 - 1.0))
            };
            let mut offset = 0;
            Ok(data
                .iter()
                .map(|seq| {
                    let g = DMatrix::from_fn(seq.len(), j, |n, k| if labels[offset + n] == k { hit } else { miss });
                    offset += seq.len();
                    g
                })
                .collect())
        }
    }
}

/// k-means++ seeding followed by a fixed number of Lloyd iterations.
fn kmeans(points: &[&DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())].clone());
    let mut dist: Vec<f64> = points.iter().map(|p| (*p - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[idx].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((*p - centers.last().unwrap()).norm_squared());
        }
    }

    let nearest = |p: &DVector<f64>, centers: &[DVector<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (c, center) in centers.iter().enumerate() {
            let d = (p - center).norm_squared();
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    };

    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..KMEANS_ITERS {
        let dim = points[0].len();
        let mut sums = vec![DVector::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l] += *p;
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Expected parameters under the posterior: Dirichlet means for π and A,
/// m_j for the means and (ν_j W_j)⁻¹ for the covariances.
pub fn point_estimate(post: &HmmPosterior) -> Result<HmmParams> {
    let j = post.n_states();
    let mut a = DMatrix::zeros(j, j);
    for (r, row) in post.transitions.iter().enumerate() {
        for (s, v) in row.mean().into_iter().enumerate() {
            a[(r, s)] = v;
        }
    }
    HmmParams::new(
        post.initial.mean(),
        a,
        post.emissions.iter().map(|gw| gw.m().clone()).collect(),
        post.emissions
            .iter()
            .map(|gw| gw.expected_covariance())
            .collect::<Result<_>>()?,
    )
}
