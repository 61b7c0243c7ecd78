//! File formats: long-format observation CSV, JSON manifests for bases and
//! fitted models, and a generic table writer.
//!
//! Every CSV starts with a `# spec_hash=<sha256>` line covering the rest of
//! the file, so outputs can be compared and verified byte for byte. Basis
//! manifests store the family parameters plus SHA-256 digests of the derived
//! Gram and penalty matrices; loading reconstructs the matrices from the
//! parameters and refuses to proceed when a digest disagrees.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::basis::{BasisError, BasisKind, BasisSystem, Interval, MultiBasis};
use crate::fundata::{DataError, GridObservations, VariableGrid};
use crate::model::{AlphaVector, FitError, RemfpcaModel};
use crate::simulate::SimConfig;

/// Version stamp of all JSON files written by this crate.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: stored spec_hash does not match the file contents")]
    SpecHash { path: String },
    #[error("{path}: unsupported format version {got}, expected {expected}")]
    Version {
        path: String,
        got: u32,
        expected: u32,
    },
    #[error("basis {index}: stored {which} digest does not match the recomputed matrix")]
    Digest { index: usize, which: &'static str },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a matrix in row-major little-endian `f64` encoding.
pub fn matrix_digest(matrix: &DMatrix<f64>) -> String {
    let mut hasher = Sha256::new();
    for r in 0..matrix.nrows() {
        for c in 0..matrix.ncols() {
            hasher.update(matrix[(r, c)].to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Hashed CSV plumbing
// ---------------------------------------------------------------------------

/// Write `body` to `path`, preceded by its `# spec_hash=` integrity line.
fn write_hashed_csv(path: &Path, body: &str) -> Result<(), IoError> {
    let content = format!("# spec_hash={}\n{body}", sha256_hex(body.as_bytes()));
    std::fs::write(path, content).map_err(|e| file_err(path, e))
}

/// Read a hashed CSV, verify the integrity line, and return the body.
fn read_hashed_csv(path: &Path) -> Result<String, IoError> {
    let content = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let Some((first, body)) = content.split_once('\n') else {
        return Err(format_err(path, "missing spec_hash line"));
    };
    let Some(stored) = first.strip_prefix("# spec_hash=") else {
        return Err(format_err(path, "first line must be `# spec_hash=<sha256>`"));
    };
    if stored.trim() != sha256_hex(body.as_bytes()) {
        return Err(IoError::SpecHash {
            path: path.display().to_string(),
        });
    }
    Ok(body.to_string())
}

/// Write a generic table as hashed CSV. Field contents are written verbatim;
/// callers are expected to pass fields without commas or newlines.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    let mut body = String::new();
    body.push_str(&header.join(","));
    body.push('\n');
    for row in rows {
        body.push_str(&row.join(","));
        body.push('\n');
    }
    write_hashed_csv(path, &body)
}

// ---------------------------------------------------------------------------
// Observations (long format)
// ---------------------------------------------------------------------------

/// Write observations as `sample_id,variable,t,value` rows (sample-major,
/// variables 1-based, grid order) behind a `# spec_hash` line.
pub fn write_observations_csv(path: &Path, obs: &GridObservations) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let emit = |e: csv::Error| format_err(path, e.to_string());
    writer
        .write_record(["sample_id", "variable", "t", "value"])
        .map_err(emit)?;
    for (i, id) in obs.sample_ids().iter().enumerate() {
        for (j, var) in obs.variables().iter().enumerate() {
            for (k, t) in var.grid.iter().enumerate() {
                let value = var.values[(i, k)];
                writer
                    .write_record([
                        id.as_str(),
                        &(j + 1).to_string(),
                        &format!("{t}"),
                        &format!("{value}"),
                    ])
                    .map_err(emit)?;
            }
        }
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| format_err(path, e.to_string()))?;
    let body = String::from_utf8(bytes).expect("csv output is utf-8");
    write_hashed_csv(path, &body)
}

/// Read long-format observations. Rows may appear in any order; every sample
/// must cover the same grid per variable, and variables must be the
/// contiguous set `1..=p`.
pub fn read_observations_csv(path: &Path) -> Result<GridObservations, IoError> {
    let body = read_hashed_csv(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| format_err(path, e.to_string()))?;
    if headers != vec!["sample_id", "variable", "t", "value"] {
        return Err(format_err(path, "header must be `sample_id,variable,t,value`"));
    }
    struct Row {
        sample: usize,
        variable: usize,
        t: f64,
        value: f64,
    }
    let mut sample_ids: Vec<String> = Vec::new();
    let mut sample_index: std::collections::HashMap<String, usize> =
        std::collections::HashMap::new();
    let mut rows: Vec<Row> = Vec::new();
    let mut max_variable = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let line_no = idx + 2;
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        if record.len() != 4 {
            return Err(format_err(path, format!("line {line_no}: expected 4 fields")));
        }
        let id = record[0].to_string();
        let variable: usize = record[1]
            .parse()
            .map_err(|_| format_err(path, format!("line {line_no}: bad variable index")))?;
        let t: f64 = record[2]
            .parse()
            .map_err(|_| format_err(path, format!("line {line_no}: bad t")))?;
        let value: f64 = record[3]
            .parse()
            .map_err(|_| format_err(path, format!("line {line_no}: bad value")))?;
        if variable == 0 {
            return Err(format_err(path, format!("line {line_no}: variables are 1-based")));
        }
        max_variable = max_variable.max(variable);
        let sample = *sample_index.entry(id.clone()).or_insert_with(|| {
            sample_ids.push(id);
            sample_ids.len() - 1
        });
        rows.push(Row {
            sample,
            variable: variable - 1,
            t,
            value,
        });
    }
    if rows.is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    let n = sample_ids.len();
    let mut variables = Vec::with_capacity(max_variable);
    for j in 0..max_variable {
        let mut grid: Vec<f64> = rows
            .iter()
            .filter(|r| r.variable == j)
            .map(|r| r.t)
            .collect();
        if grid.is_empty() {
            return Err(format_err(path, format!("variable {} has no rows", j + 1)));
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| a.to_bits() == b.to_bits());
        let index_of = |t: f64| grid.partition_point(|&g| g.total_cmp(&t).is_lt());
        let mut values = DMatrix::from_element(n, grid.len(), f64::NAN);
        for row in rows.iter().filter(|r| r.variable == j) {
            let k = index_of(row.t);
            if !values[(row.sample, k)].is_nan() {
                return Err(format_err(
                    path,
                    format!(
                        "duplicate value for sample {}, variable {}, t = {}",
                        sample_ids[row.sample],
                        j + 1,
                        row.t
                    ),
                ));
            }
            values[(row.sample, k)] = row.value;
        }
        if let Some(i) = (0..n).find(|&i| (0..grid.len()).any(|k| values[(i, k)].is_nan())) {
            return Err(format_err(
                path,
                format!(
                    "sample {} does not cover the full grid of variable {}",
                    sample_ids[i],
                    j + 1
                ),
            ));
        }
        variables.push(VariableGrid { grid, values });
    }
    Ok(GridObservations::new(sample_ids, variables)?)
}

/// Write `sample_id,label` rows behind a `# spec_hash` line.
pub fn write_labels_csv(path: &Path, labels: &[(String, usize)]) -> Result<(), IoError> {
    let rows: Vec<Vec<String>> = labels
        .iter()
        .map(|(id, label)| vec![id.clone(), label.to_string()])
        .collect();
    write_table_csv(path, &["sample_id", "label"], &rows)
}

/// Read a `sample_id,label` CSV produced by [`write_labels_csv`].
pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, usize)>, IoError> {
    let body = read_hashed_csv(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| format_err(path, e.to_string()))?;
    if headers != vec!["sample_id", "label"] {
        return Err(format_err(path, "header must be `sample_id,label`"));
    }
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        if record.len() != 2 {
            return Err(format_err(path, format!("line {}: expected 2 fields", idx + 2)));
        }
        let label: usize = record[1]
            .parse()
            .map_err(|_| format_err(path, format!("line {}: bad label", idx + 2)))?;
        out.push((record[0].to_string(), label));
    }
    if out.is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSON manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct BasisDescriptor {
    kind: BasisKind,
    domain: Interval,
    dim: usize,
    gram_sha256: String,
    penalty_sha256: String,
}

impl BasisDescriptor {
    fn of(system: &BasisSystem) -> Self {
        Self {
            kind: system.kind().clone(),
            domain: system.domain(),
            dim: system.dim(),
            gram_sha256: matrix_digest(system.gram()),
            penalty_sha256: matrix_digest(system.penalty()),
        }
    }

    /// Rebuild the system from its parameters and check both digests.
    fn restore(&self, index: usize) -> Result<BasisSystem, IoError> {
        let system = BasisSystem::new(self.kind.clone(), self.domain, self.dim)?;
        if matrix_digest(system.gram()) != self.gram_sha256 {
            return Err(IoError::Digest {
                index,
                which: "gram",
            });
        }
        if matrix_digest(system.penalty()) != self.penalty_sha256 {
            return Err(IoError::Digest {
                index,
                which: "penalty",
            });
        }
        Ok(system)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisManifestFile {
    format_version: u32,
    bases: Vec<BasisDescriptor>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, text).map_err(|e| file_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn check_version(path: &Path, got: u32) -> Result<(), IoError> {
    if got != FORMAT_VERSION {
        return Err(IoError::Version {
            path: path.display().to_string(),
            got,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub fn write_basis_manifest(path: &Path, bases: &MultiBasis) -> Result<(), IoError> {
    let file = BasisManifestFile {
        format_version: FORMAT_VERSION,
        bases: bases.systems().iter().map(BasisDescriptor::of).collect(),
    };
    write_json(path, &file)
}

pub fn read_basis_manifest(path: &Path) -> Result<MultiBasis, IoError> {
    let file: BasisManifestFile = read_json(path)?;
    check_version(path, file.format_version)?;
    let systems = file
        .bases
        .iter()
        .enumerate()
        .map(|(index, d)| d.restore(index))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MultiBasis::new(systems)?)
}

// ---------------------------------------------------------------------------
// Model persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    bases: Vec<BasisDescriptor>,
    alpha: Vec<f64>,
    weights: Option<Vec<f64>>,
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Component matrix in row-major order, one inner vector per basis row.
    components: Vec<Vec<f64>>,
    n_fitted: usize,
}

pub fn write_model_json(path: &Path, model: &RemfpcaModel) -> Result<(), IoError> {
    let components = (0..model.components().nrows())
        .map(|r| model.components().row(r).iter().copied().collect())
        .collect();
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        bases: model
            .bases()
            .systems()
            .iter()
            .map(BasisDescriptor::of)
            .collect(),
        alpha: model.alpha().as_slice().to_vec(),
        weights: model.rescale_weights().map(|w| w.to_vec()),
        mean: model.mean().iter().copied().collect(),
        eigenvalues: model.eigenvalues().iter().copied().collect(),
        components,
        n_fitted: model.n_fitted(),
    };
    write_json(path, &file)
}

pub fn read_model_json(path: &Path) -> Result<RemfpcaModel, IoError> {
    let file: ModelFile = read_json(path)?;
    check_version(path, file.format_version)?;
    let systems = file
        .bases
        .iter()
        .enumerate()
        .map(|(index, d)| d.restore(index))
        .collect::<Result<Vec<_>, _>>()?;
    let bases = Arc::new(MultiBasis::new(systems)?);
    let rows = file.components.len();
    let cols = file.eigenvalues.len();
    for (r, row) in file.components.iter().enumerate() {
        if row.len() != cols {
            return Err(format_err(
                path,
                format!("component row {r} has {} entries, expected {cols}", row.len()),
            ));
        }
    }
    let components = DMatrix::from_fn(rows, cols, |r, c| file.components[r][c]);
    let model = RemfpcaModel::from_parts(
        bases,
        AlphaVector::new(file.alpha)?,
        file.weights,
        DVector::from_vec(file.mean),
        DVector::from_vec(file.eigenvalues),
        components,
        file.n_fitted,
    )?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Simulation truth manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub format_version: u32,
    pub config: SimConfig,
    pub lambdas: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

pub fn write_truth_json(path: &Path, truth: &TruthFile) -> Result<(), IoError> {
    write_json(path, truth)
}

pub fn read_truth_json(path: &Path) -> Result<TruthFile, IoError> {
    let file: TruthFile = read_json(path)?;
    check_version(path, file.format_version)?;
    Ok(file)
}
