//! Dataset and model file formats.
//!
//! Datasets are CSV (one observation per row, blank lines between
//! sequences) or JSON lines (one sequence per line, as an array of rows).
//! Models are a single versioned JSON document; numbers are written in
//! shortest round-trip form and parsed exactly, so a write/read cycle
//! reproduces every binary64 value.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VbError};
use crate::model::HmmParams;
use crate::posteriors::{DirichletRow, GaussWishart, HmmPosterior, HmmPriors};
use crate::sequence::ObservationSequence;
use crate::trainer::point_estimate;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    /// `.jsonl` / `.json` select JSON lines; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => DataFormat::Jsonl,
            _ => DataFormat::Csv,
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Csv => "csv",
            DataFormat::Jsonl => "jsonl",
        })
    }
}

impl FromStr for DataFormat {
    type Err = VbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(VbError::InvalidConfig(format!("unknown data format {other:?}"))),
        }
    }
}

pub fn read_sequences(path: &Path, format: DataFormat) -> Result<Vec<ObservationSequence>> {
    let text = fs::read_to_string(path)?;
    match format {
        DataFormat::Csv => parse_csv(&text),
        DataFormat::Jsonl => parse_jsonl(&text),
    }
}

fn parse_cell(cell: &str, line: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| VbError::Parse {
        line,
        msg: format!("not a number: {:?}", cell.trim()),
    })?;
    if !v.is_finite() {
        return Err(VbError::Parse {
            line,
            msg: format!("non-finite value {:?}", cell.trim()),
        });
    }
    Ok(v)
}

fn check_width(width: &mut Option<usize>, found: usize, line: usize) -> Result<()> {
    match *width {
        None => *width = Some(found),
        Some(d) if d != found => {
            return Err(VbError::Parse {
                line,
                msg: format!("expected {d} values, found {found}"),
            })
        }
        _ => {}
    }
    Ok(())
}

/// CSV text to sequences; one or more blank lines end a sequence.
pub fn parse_csv(text: &str) -> Result<Vec<ObservationSequence>> {
    let mut seqs = Vec::new();
    let mut current: Vec<DVector<f64>> = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            if !current.is_empty() {
                seqs.push(ObservationSequence::new(std::mem::take(&mut current))?);
            }
            continue;
        }
        let row = trimmed
            .split(',')
            .map(|c| parse_cell(c, line))
            .collect::<Result<Vec<f64>>>()?;
        check_width(&mut width, row.len(), line)?;
        current.push(DVector::from_vec(row));
    }
    if !current.is_empty() {
        seqs.push(ObservationSequence::new(current)?);
    }
    if seqs.is_empty() {
        return Err(VbError::EmptyData);
    }
    Ok(seqs)
}

/// JSON lines text to sequences; blank lines are skipped.
pub fn parse_jsonl(text: &str) -> Result<Vec<ObservationSequence>> {
    let mut seqs = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rows: Vec<Vec<f64>> = serde_json::from_str(raw).map_err(|e| VbError::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rows.is_empty() {
            return Err(VbError::Parse {
                line,
                msg: "empty sequence".into(),
            });
        }
        for row in &rows {
            check_width(&mut width, row.len(), line)?;
        }
        seqs.push(ObservationSequence::from_rows(&rows).map_err(|e| VbError::Parse {
            line,
            msg: e.to_string(),
        })?);
    }
    if seqs.is_empty() {
        return Err(VbError::EmptyData);
    }
    Ok(seqs)
}

/// Writes sequences as CSV, optionally appending each step's state label.
pub fn write_csv<W: Write>(mut out: W, seqs: &[ObservationSequence], states: Option<&[Vec<usize>]>) -> Result<()> {
    for (i, seq) in seqs.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        for (n, x) in seq.iter().enumerate() {
            let mut cells: Vec<String> = x.iter().map(|&v| format_cell(v)).collect();
            if let Some(labels) = states {
                cells.push(labels[i][n].to_string());
            }
            writeln!(out, "{}", cells.join(","))?;
        }
    }
    Ok(())
}

/// Shortest round-trip text, switching to exponent form for extreme magnitudes.
fn format_cell(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussWishartDoc {
    pub m: Vec<f64>,
    pub beta: f64,
    pub w: Vec<Vec<f64>>,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorsDoc {
    pub initial_alpha0: Vec<f64>,
    pub transition_alpha0: Vec<Vec<f64>>,
    pub emission0: GaussWishartDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDoc {
    pub initial_alpha: Vec<f64>,
    pub transition_alpha: Vec<Vec<f64>>,
    pub emissions: Vec<GaussWishartDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDoc {
    pub pi: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ModelBody {
    Vb { priors: PriorsDoc, posterior: PosteriorDoc },
    Em { model: ParamsDoc },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_elbo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loglik: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_update: Option<String>,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u64,
    pub states: usize,
    pub dim: usize,
    #[serde(flatten)]
    pub body: ModelBody,
    pub train_meta: TrainMeta,
}

/// A model file resolved into domain types.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Vb { priors: HmmPriors, posterior: HmmPosterior },
    Em { model: HmmParams },
}

impl LoadedModel {
    /// Concrete parameters: the posterior expectation for VB models.
    pub fn params(&self) -> Result<HmmParams> {
        match self {
            LoadedModel::Vb { posterior, .. } => point_estimate(posterior),
            LoadedModel::Em { model } => Ok(model.clone()),
        }
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != c) {
        return Err(VbError::Model(format!("{what} is not a rectangular non-empty matrix")));
    }
    Ok(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
}

fn model_err(what: &str) -> impl Fn(VbError) -> VbError + '_ {
    move |e| VbError::Model(format!("{what}: {e}"))
}

impl From<&GaussWishart> for GaussWishartDoc {
    fn from(gw: &GaussWishart) -> Self {
        GaussWishartDoc {
            m: gw.m().iter().copied().collect(),
            beta: gw.beta(),
            w: matrix_rows(gw.w()),
            nu: gw.nu(),
        }
    }
}

impl GaussWishartDoc {
    pub fn to_domain(&self) -> Result<GaussWishart> {
        GaussWishart::new(
            DVector::from_vec(self.m.clone()),
            self.beta,
            rows_matrix(&self.w, "scale matrix")?,
            self.nu,
        )
        .map_err(model_err("Gaussian-Wishart"))
    }
}

fn dirichlet(alpha: &[f64]) -> Result<DirichletRow> {
    DirichletRow::new(alpha.to_vec()).map_err(model_err("Dirichlet row"))
}

impl From<&HmmPriors> for PriorsDoc {
    fn from(p: &HmmPriors) -> Self {
        PriorsDoc {
            initial_alpha0: p.initial_alpha0.alpha().to_vec(),
            transition_alpha0: p.transition_alpha0.iter().map(|r| r.alpha().to_vec()).collect(),
            emission0: (&p.emission0).into(),
        }
    }
}

impl PriorsDoc {
    pub fn to_domain(&self) -> Result<HmmPriors> {
        HmmPriors::new(
            dirichlet(&self.initial_alpha0)?,
            self.transition_alpha0
                .iter()
                .map(|r| dirichlet(r))
                .collect::<Result<_>>()?,
            self.emission0.to_domain()?,
        )
        .map_err(model_err("priors"))
    }
}

impl From<&HmmPosterior> for PosteriorDoc {
    fn from(p: &HmmPosterior) -> Self {
        PosteriorDoc {
            initial_alpha: p.initial.alpha().to_vec(),
            transition_alpha: p.transitions.iter().map(|r| r.alpha().to_vec()).collect(),
            emissions: p.emissions.iter().map(GaussWishartDoc::from).collect(),
        }
    }
}

impl PosteriorDoc {
    pub fn to_domain(&self) -> Result<HmmPosterior> {
        HmmPosterior::new(
            dirichlet(&self.initial_alpha)?,
            self.transition_alpha
                .iter()
                .map(|r| dirichlet(r))
                .collect::<Result<_>>()?,
            self.emissions
                .iter()
                .map(GaussWishartDoc::to_domain)
                .collect::<Result<_>>()?,
        )
        .map_err(model_err("posterior"))
    }
}

impl From<&HmmParams> for ParamsDoc {
    fn from(p: &HmmParams) -> Self {
        ParamsDoc {
            pi: p.pi.clone(),
            transitions: matrix_rows(&p.a),
            means: p.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: p.covariances.iter().map(matrix_rows).collect(),
        }
    }
}

impl ParamsDoc {
    pub fn to_domain(&self) -> Result<HmmParams> {
        HmmParams::new(
            self.pi.clone(),
            rows_matrix(&self.transitions, "transition matrix")?,
            self.means.iter().map(|m| DVector::from_vec(m.clone())).collect(),
            self.covariances
                .iter()
                .map(|c| rows_matrix(c, "covariance"))
                .collect::<Result<_>>()?,
        )
        .map_err(model_err("parameters"))
    }
}

impl ModelFile {
    pub fn from_vb(priors: &HmmPriors, posterior: &HmmPosterior, train_meta: TrainMeta) -> Self {
        ModelFile {
            schema_version: SCHEMA_VERSION,
            states: posterior.n_states(),
            dim: posterior.dim(),
            body: ModelBody::Vb {
                priors: priors.into(),
                posterior: posterior.into(),
            },
            train_meta,
        }
    }

    pub fn from_em(model: &HmmParams, train_meta: TrainMeta) -> Self {
        ModelFile {
            schema_version: SCHEMA_VERSION,
            states: model.n_states(),
            dim: model.dim(),
            body: ModelBody::Em { model: model.into() },
            train_meta,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| VbError::Model(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| VbError::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| VbError::Model("missing or invalid schema_version".into()))?;
        if version != SCHEMA_VERSION {
            return Err(VbError::SchemaVersion {
                found: version,
                expected: SCHEMA_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| VbError::Model(e.to_string()))
    }

    /// Converts to domain types, checking the declared shape.
    pub fn load(&self) -> Result<LoadedModel> {
        let loaded = match &self.body {
            ModelBody::Vb { priors, posterior } => {
                let priors = priors.to_domain()?;
                let posterior = posterior.to_domain()?;
                if priors.n_states() != posterior.n_states() || priors.dim() != posterior.dim() {
                    return Err(VbError::Model("priors and posterior disagree in shape".into()));
                }
                LoadedModel::Vb { priors, posterior }
            }
            ModelBody::Em { model } => LoadedModel::Em {
                model: model.to_domain()?,
            },
        };
        let (states, dim) = match &loaded {
            LoadedModel::Vb { posterior, .. } => (posterior.n_states(), posterior.dim()),
            LoadedModel::Em { model } => (model.n_states(), model.dim()),
        };
        if states != self.states || dim != self.dim {
            return Err(VbError::Model(format!(
                "declared shape {}x{} does not match contents {states}x{dim}",
                self.states, self.dim
            )));
        }
        Ok(loaded)
    }
}

pub fn write_model(path: &Path, file: &ModelFile) -> Result<()> {
    fs::write(path, file.to_json()?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    ModelFile::from_json(&fs::read_to_string(path)?)
}

/// Ground-truth parameters: either a bare parameter document or any model
/// file (VB models contribute their point estimate).
pub fn read_ground_truth(path: &Path) -> Result<HmmParams> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| VbError::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if value.get("schema_version").is_some() {
        ModelFile::from_json(&text)?.load()?.params()
    } else {
        serde_json::from_value::<ParamsDoc>(value)
            .map_err(|e| VbError::Model(e.to_string()))?
            .to_domain()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_single_sequence() {
        let seqs = parse_csv("1.0,2.0\n3.0,4.0\n").unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].len(), 2);
        assert_eq!(seqs[0].dim(), 2);
        assert_eq!(seqs[0][1].as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn csv_blank_lines_split_sequences() {
        let seqs = parse_csv("1\n2\n\n\n3\n  \n4\n5\n").unwrap();
        let lens: Vec<usize> = seqs.iter().map(ObservationSequence::len).collect();
        assert_eq!(lens, vec![2, 1, 2]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        match parse_csv("1,2\n3\n") {
            Err(VbError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_csv("1,2\n\n3,x\n") {
            Err(VbError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_csv("NaN\n"), Err(VbError::Parse { line: 1, .. })));
        assert!(matches!(parse_csv("1\ninf\n"), Err(VbError::Parse { line: 2, .. })));
        assert!(matches!(parse_csv(""), Err(VbError::EmptyData)));
        assert!(matches!(parse_csv("\n\n"), Err(VbError::EmptyData)));
    }

    #[test]
    fn jsonl_sequences() {
        let seqs = parse_jsonl("[[1.0],[2.0]]\n").unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].len(), 2);
        assert_eq!(seqs[0].dim(), 1);
        let seqs = parse_jsonl("[[1,2]]\n\n[[3,4],[5,6]]\n").unwrap();
        assert_eq!(seqs.len(), 2);
        assert!(matches!(
            parse_jsonl("[[1],[2,3]]"),
            Err(VbError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_jsonl("[[1]]\n[[1,2]]"),
            Err(VbError::Parse { line: 2, .. })
        ));
        assert!(matches!(parse_jsonl("[]"), Err(VbError::Parse { .. })));
        assert!(matches!(parse_jsonl("[[\"a\"]]"), Err(VbError::Parse { .. })));
        assert!(matches!(parse_jsonl(""), Err(VbError::EmptyData)));
    }

    #[test]
    fn csv_writer_round_trips() {
        let seqs = parse_csv("0.1,0.30000000000000004\n-2e-300,5\n\n7,8\n").unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &seqs, None).unwrap();
        assert_eq!(parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), seqs);
        let mut labelled = Vec::new();
        write_csv(&mut labelled, &seqs, Some(&[vec![0, 1], vec![1]])).unwrap();
        assert_eq!(
            std::str::from_utf8(&labelled).unwrap(),
            "0.1,0.30000000000000004,0\n-2e-300,5,1\n\n7,8,1\n"
        );
    }

    #[test]
    fn format_selection() {
        assert_eq!(DataFormat::from_path(Path::new("a.jsonl")), DataFormat::Jsonl);
        assert_eq!(DataFormat::from_path(Path::new("a.csv")), DataFormat::Csv);
        assert_eq!("jsonl".parse::<DataFormat>().unwrap(), DataFormat::Jsonl);
        assert!("xml".parse::<DataFormat>().is_err());
    }

    #[test]
    fn model_version_and_truncation_errors() {
        assert!(matches!(
            ModelFile::from_json("{\"schema_version\": 1, \"sta"),
            Err(VbError::Parse { .. })
        ));
        assert!(matches!(
            ModelFile::from_json("{\"schema_version\": 2}"),
            Err(VbError::SchemaVersion { found: 2, expected: 1 })
        ));
        assert!(matches!(ModelFile::from_json("{}"), Err(VbError::Model(_))));
        assert!(matches!(
            ModelFile::from_json("{\"schema_version\": 1}"),
            Err(VbError::Model(_))
        ));
    }
}
