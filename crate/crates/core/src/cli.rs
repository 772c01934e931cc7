//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::baseline_em::{baum_welch_fit, default_cov_floor};
use crate::error::{Result, VbError};
use crate::forward_backward::e_step;
use crate::io::{
    read_ground_truth, read_model, read_sequences, write_csv, write_model, DataFormat, LoadedModel, ModelFile,
    TrainMeta,
};
use crate::model::HmmParams;
use crate::sequence::ObservationSequence;
use crate::trainer::{fit, InitMethod, TrainConfig};
use crate::vb_updates::InitialUpdateMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "vbhmm", version, about = "Variational Bayesian HMMs with Gaussian emissions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and print the objective per iteration.
    Train(TrainArgs),
    /// Sample a synthetic dataset from a model.
    Sample(SampleArgs),
    /// Score sequences under a trained model.
    Eval(EvalArgs),
    /// Print model parameters and hyperparameters.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Kmeans,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitialUpdateArg {
    #[value(alias = "paper")]
    Occupancy,
    FirstStep,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Vb,
    Em,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Observation file (CSV or JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Number of hidden states.
    #[arg(long)]
    states: usize,
    /// Input format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative change in the objective that counts as converged.
    #[arg(long, default_value_t = crate::elbo::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// How initial responsibilities are chosen.
    #[arg(long, value_enum, default_value = "kmeans")]
    init: InitArg,
    /// Counts added to the initial-state Dirichlet: total occupancy or first-step responsibilities.
    #[arg(long, value_enum, default_value = "first-step")]
    initial_update: InitialUpdateArg,
    /// Independent restarts; the one with the highest final bound is kept.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Variational Bayes or maximum-likelihood Baum-Welch.
    #[arg(long, value_enum, default_value = "vb")]
    method: MethodArg,
    /// Covariance eigenvalue floor for `--method em` (default: 1e-6 × data variance).
    #[arg(long)]
    cov_floor: Option<f64>,
    /// Where to write the model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Parameter file or trained model to sample from.
    #[arg(long)]
    model: PathBuf,
    /// Number of observations.
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append the state label as a final column.
    #[arg(long)]
    with_states: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn exit_code(err: &VbError) -> i32 {
    match err {
        VbError::InvalidConfig(_) => EXIT_USAGE,
        VbError::Numeric(_) | VbError::NotSpd(_) | VbError::Domain(_) => EXIT_NUMERIC,
        VbError::DimensionMismatch { .. }
        | VbError::EmptySequence
        | VbError::EmptyData
        | VbError::Parse { .. }
        | VbError::Model(_)
        | VbError::SchemaVersion { .. }
        | VbError::Io(_) => EXIT_DATA,
    }
}

/// Runs the CLI with `args` (program name first), writing normal output to
/// `out` and diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(rendered.as_bytes())
            } else {
                out.write_all(rendered.as_bytes())
            };
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a, out, err),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a, out),
        Command::Inspect(a) => inspect(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(VbError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load_data(path: &Path, format: Option<FormatArg>) -> Result<Vec<ObservationSequence>> {
    let format = match format {
        Some(FormatArg::Csv) => DataFormat::Csv,
        Some(FormatArg::Jsonl) => DataFormat::Jsonl,
        None => DataFormat::from_path(path),
    };
    read_sequences(path, format)
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let data = load_data(&a.data, a.format)?;
    let mut cfg = TrainConfig::new(a.states);
    cfg.seed = a.seed;
    cfg.tol = a.tol;
    cfg.max_iters = a.max_iters;
    cfg.restarts = a.restarts;
    cfg.init = match a.init {
        InitArg::Random => InitMethod::Random,
        InitArg::Kmeans => InitMethod::KMeans,
    };
    cfg.initial_update_mode = match a.initial_update {
        InitialUpdateArg::Occupancy => InitialUpdateMode::Occupancy,
        InitialUpdateArg::FirstStep => InitialUpdateMode::FirstStep,
    };
    cfg.validate()?;

    let file = match a.method {
        MethodArg::Vb => {
            let report = fit(&data, &cfg, None)?;
            for (k, v) in report.elbo_trace.iter().enumerate() {
                writeln!(out, "iter {} elbo {}", k + 1, v)?;
            }
            for w in &report.warnings {
                writeln!(err, "warning: {w}")?;
            }
            ModelFile::from_vb(
                &report.priors,
                &report.posterior,
                TrainMeta {
                    seed: cfg.seed,
                    iterations: report.iterations,
                    converged: report.converged,
                    final_elbo: Some(report.final_elbo()),
                    final_loglik: None,
                    initial_update: Some(cfg.initial_update_mode.to_string()),
                    tool_version: env!("CARGO_PKG_VERSION").to_string(),
                },
            )
        }
        MethodArg::Em => {
            let floor = match a.cov_floor {
                Some(f) => f,
                None => default_cov_floor(&data)?,
            };
            let em = baum_welch_fit(&data, cfg.n_states, cfg.seed, cfg.max_iters, cfg.tol, floor)?;
            for (k, v) in em.loglik_trace.iter().enumerate() {
                writeln!(out, "iter {} loglik {}", k + 1, v)?;
            }
            if em.floor_events > 0 {
                writeln!(
                    err,
                    "warning: {} covariance eigenvalues raised to the floor {floor}",
                    em.floor_events
                )?;
            }
            ModelFile::from_em(
                &em.model,
                TrainMeta {
                    seed: cfg.seed,
                    iterations: em.iterations,
                    converged: em.converged,
                    final_elbo: None,
                    final_loglik: em.loglik_trace.last().copied(),
                    initial_update: None,
                    tool_version: env!("CARGO_PKG_VERSION").to_string(),
                },
            )
        }
    };
    write_model(&a.out, &file)
}

fn sample(a: SampleArgs) -> Result<()> {
    let truth = read_ground_truth(&a.model)?;
    let (seq, states) = crate::datagen::sample(&truth, a.length, a.seed)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    let labels = [states];
    write_csv(&mut w, std::slice::from_ref(&seq), a.with_states.then_some(&labels[..]))?;
    w.flush()?;
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let loaded = read_model(&a.model)?.load()?;
    let data = load_data(&a.data, a.format)?;
    let label = match loaded {
        LoadedModel::Vb { .. } => "log_z_tilde",
        LoadedModel::Em { .. } => "log_likelihood",
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, seq) in data.iter().enumerate() {
        let score = match &loaded {
            LoadedModel::Vb { posterior, .. } => e_step(posterior, seq)?.log_z_tilde,
            LoadedModel::Em { model } => model.log_likelihood(seq)?,
        };
        writeln!(out, "sequence {i} length {} {label} {score}", seq.len())?;
        total += score;
        count += seq.len();
    }
    writeln!(out, "total {label} {total}")?;
    writeln!(out, "per_observation {label} {}", total / count as f64)?;
    Ok(())
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn matrix_line(m: &DMatrix<f64>) -> String {
    join(m.transpose().iter().copied())
}

fn write_params(out: &mut dyn Write, p: &HmmParams) -> Result<()> {
    writeln!(out, "pi {}", join(p.pi.iter().copied()))?;
    for (j, row) in p.a.row_iter().enumerate() {
        writeln!(out, "transition[{j}] {}", join(row.iter().copied()))?;
    }
    for (j, m) in p.means.iter().enumerate() {
        writeln!(out, "mean[{j}] {}", join(m.iter().copied()))?;
    }
    for (j, c) in p.covariances.iter().enumerate() {
        writeln!(out, "covariance[{j}] {}", matrix_line(c))?;
    }
    Ok(())
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> Result<()> {
    let file = read_model(&a.model)?;
    let loaded = file.load()?;
    let method = match loaded {
        LoadedModel::Vb { .. } => "vb",
        LoadedModel::Em { .. } => "em",
    };
    writeln!(out, "method {method}")?;
    writeln!(out, "states {}", file.states)?;
    writeln!(out, "dim {}", file.dim)?;
    write_params(out, &loaded.params()?)?;
    if let LoadedModel::Vb { priors, posterior } = &loaded {
        writeln!(
            out,
            "posterior.initial_alpha {}",
            join(posterior.initial.alpha().iter().copied())
        )?;
        for (j, row) in posterior.transitions.iter().enumerate() {
            writeln!(
                out,
                "posterior.transition_alpha[{j}] {}",
                join(row.alpha().iter().copied())
            )?;
        }
        for (j, gw) in posterior.emissions.iter().enumerate() {
            writeln!(out, "posterior.m[{j}] {}", join(gw.m().iter().copied()))?;
            writeln!(out, "posterior.beta[{j}] {}", gw.beta())?;
            writeln!(out, "posterior.w[{j}] {}", matrix_line(gw.w()))?;
            writeln!(out, "posterior.nu[{j}] {}", gw.nu())?;
        }
        writeln!(
            out,
            "prior.initial_alpha0 {}",
            join(priors.initial_alpha0.alpha().iter().copied())
        )?;
        for (j, row) in priors.transition_alpha0.iter().enumerate() {
            writeln!(
                out,
                "prior.transition_alpha0[{j}] {}",
                join(row.alpha().iter().copied())
            )?;
        }
        let e0 = &priors.emission0;
        writeln!(out, "prior.m0 {}", join(e0.m().iter().copied()))?;
        writeln!(out, "prior.beta0 {}", e0.beta())?;
        writeln!(out, "prior.w0 {}", matrix_line(e0.w()))?;
        writeln!(out, "prior.nu0 {}", e0.nu())?;
    }
    let meta = &file.train_meta;
    writeln!(out, "meta.seed {}", meta.seed)?;
    writeln!(out, "meta.iterations {}", meta.iterations)?;
    writeln!(out, "meta.converged {}", meta.converged)?;
    if let Some(v) = meta.final_elbo {
        writeln!(out, "meta.final_elbo {v}")?;
    }
    if let Some(v) = meta.final_loglik {
        writeln!(out, "meta.final_loglik {v}")?;
    }
    writeln!(out, "meta.tool_version {}", meta.tool_version)?;
    Ok(())
}
