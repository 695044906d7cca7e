//! File formats: dataset CSV, model and DGP JSON, and the versioned results document.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::DgpConfig;
use crate::error::{Error, Result};
use crate::gmm::{FitOptions, FitResult};
use crate::latent_cov::{LatentCov, MatchOptions, PairMatch};
use crate::model::{Dataset, ModelSpec};
use crate::par::Execution;
use crate::post::PolychoricReport;

pub const SCHEMA_VERSION: u64 = 1;

pub fn read_dataset_from<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Config(format!(
                    "line {}: column '{}' holds '{field}', which is not a number",
                    row + 2,
                    names[c]
                ))
            })?;
            columns[c].push(v);
        }
    }
    Dataset::new(names, columns)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(path)?))
}

/// Shortest text that keeps 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `data`; columns in `integer_columns` are written without a fraction
/// when every value is integral.
pub fn write_dataset_to<W: Write>(writer: W, data: &Dataset, integer_columns: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(data.names())?;
    let as_int: Vec<bool> = data
        .names()
        .iter()
        .zip(data.columns())
        .map(|(n, c)| integer_columns.contains(n) && c.iter().all(|v| v.fract() == 0.0 && v.abs() < 1e15))
        .collect();
    let mut rec = Vec::with_capacity(data.names().len());
    for i in 0..data.n_obs() {
        rec.clear();
        for (c, col) in data.columns().iter().enumerate() {
            rec.push(if as_int[c] { format!("{}", col[i] as i64) } else { format_real(col[i]) });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &Dataset, integer_columns: &[String]) -> Result<()> {
    write_dataset_to(BufWriter::new(File::create(path)?), data, integer_columns)
}

pub fn read_model(path: &Path) -> Result<ModelSpec> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_model(path: &Path, spec: &ModelSpec) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, spec)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_dgp_config(path: &Path) -> Result<DgpConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: DgpConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub label: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
}

fn rows(labels: &[String], theta: &[f64], se: &[f64]) -> Vec<ParamRow> {
    labels
        .iter()
        .zip(theta)
        .zip(se)
        .map(|((l, &b), &s)| ParamRow {
            label: l.clone(),
            estimate: b,
            se: finite(s),
            z: if s > 0.0 { finite(b / s) } else { None },
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSection {
    pub converged: bool,
    pub iterations: usize,
    pub moment_norm: f64,
    pub rows: Vec<ParamRow>,
    /// Identity-weight estimates, the starting point of the weighted stage.
    pub first_stage_rows: Vec<ParamRow>,
    pub beta: Vec<f64>,
    pub cutpoints: Vec<Vec<f64>>,
    /// Residual covariance used as the weight in the final iteration.
    pub between_cov: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
}

impl FitSection {
    pub fn from_fit(fit: &FitResult) -> Self {
        FitSection {
            converged: fit.converged,
            iterations: fit.iterations,
            moment_norm: fit.moment_norm,
            rows: rows(&fit.labels, &fit.params.theta(), &fit.se),
            first_stage_rows: rows(&fit.labels, &fit.first_stage.params.theta(), &fit.first_stage.se),
            beta: fit.params.beta.clone(),
            cutpoints: fit.params.cutpoints.clone(),
            between_cov: matrix_rows(&fit.params.between_cov),
            covariance: matrix_rows(&fit.cov),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSection {
    pub options: MatchOptions,
    /// Failed pairs are `null`.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub between_cov: Vec<Vec<f64>>,
    pub pairs: Vec<PairMatch>,
    pub min_eigenvalue: Option<f64>,
    pub positive_definite: bool,
}

impl LatentSection {
    pub fn new(lc: &LatentCov, options: MatchOptions) -> Self {
        LatentSection {
            options,
            matrix: matrix_rows(&lc.matrix).into_iter().map(|r| r.into_iter().map(finite).collect()).collect(),
            between_cov: matrix_rows(&lc.between_cov),
            pairs: lc.pairs.clone(),
            min_eigenvalue: finite(lc.min_eigenvalue),
            positive_definite: lc.positive_definite,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolychoricSection {
    pub sigma_yy: Vec<Vec<f64>>,
    pub corr_yy: Vec<Vec<f64>>,
    pub structural: Vec<Vec<f64>>,
    pub error: Vec<Vec<f64>>,
}

impl From<&PolychoricReport> for PolychoricSection {
    fn from(p: &PolychoricReport) -> Self {
        PolychoricSection {
            sigma_yy: matrix_rows(&p.sigma_yy),
            corr_yy: matrix_rows(&p.corr_yy),
            structural: matrix_rows(&p.structural),
            error: matrix_rows(&p.error),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub first_stage_secs: f64,
    pub second_stage_secs: f64,
    pub covariance_secs: f64,
    pub latent_cov_secs: f64,
    pub post_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub data_path: Option<String>,
    pub n_obs: usize,
    pub demeaned: bool,
    /// Means removed from each regressor before fitting.
    pub column_means: Vec<(String, f64)>,
    pub fit_options: FitOptions,
    pub execution: Execution,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub schema: u64,
    pub provenance: Provenance,
    pub model: ModelSpec,
    pub fit: FitSection,
    pub latent: Option<LatentSection>,
    pub polychoric: Option<PolychoricSection>,
    pub r2: Vec<f64>,
    pub pearson_coded: Option<Vec<Vec<f64>>>,
    /// Standard errors had the latent responses been observed (coefficient groups).
    pub exact_data_se: Option<Vec<f64>>,
    pub timings: StageTimings,
}

pub fn results_to_string(doc: &ResultsDocument) -> Result<String> {
    Ok(serde_json::to_string_pretty(doc)?)
}

pub fn results_from_str(text: &str) -> Result<ResultsDocument> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value.get("schema").and_then(|v| v.as_u64()).unwrap_or(0);
    if found != SCHEMA_VERSION {
        return Err(Error::Schema { found, expected: SCHEMA_VERSION });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn write_results(path: &Path, doc: &ResultsDocument) -> Result<()> {
    let mut text = results_to_string(doc)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<ResultsDocument> {
    results_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_byte_stable() {
        let data = Dataset::new(
            vec!["y1".into(), "x1".into()],
            vec![vec![1.0, 3.0, 2.0], vec![0.1, -1.0 / 3.0, 12345.678901234567]],
        )
        .unwrap();
        let ints = vec!["y1".to_string()];
        let mut first = Vec::new();
        write_dataset_to(&mut first, &data, &ints).unwrap();
        let back = read_dataset_from(first.as_slice()).unwrap();
        assert_eq!(back, data);
        let mut second = Vec::new();
        write_dataset_to(&mut second, &back, &ints).unwrap();
        assert_eq!(first, second);
        assert!(String::from_utf8(first).unwrap().starts_with("y1,x1\n1,"));
    }

    #[test]
    fn non_numeric_cell_names_its_line() {
        let err = read_dataset_from("a,b\n1,2\n3,x\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let err = results_from_str(r#"{"schema": 7}"#).unwrap_err();
        assert!(matches!(err, Error::Schema { found: 7, expected: 1 }));
    }
}
