//! Command-line surface for the `remfpca` library: simulate data, fit and
//! tune models, cluster scores, evaluate label agreement, and run replicated
//! studies.
//!
//! Every command prints a small JSON object with the written paths on
//! stdout. Failures print `{"error": "E_CONFIG"|"E_NUMERIC"|"E_IO",
//! "message": …}` on stderr and exit with 2 (configuration), 3 (numerical
//! failure), or 4 (I/O). The output directory is `--out`, falling back to
//! `REMFPCA_OUT_DIR`, then the working directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use remfpca::basis::{BasisError, BasisSystem, Interval, MultiBasis};
use remfpca::evalmetrics::{ari, choose_k, kmedoids, nmi, silhouette, MetricsError};
use remfpca::experiment::{run_experiment, ExperimentConfig, ExperimentError, SummaryRow};
use remfpca::fundata::{smooth_to_coeffs, DataError, GridObservations, MFDataset};
use remfpca::io::{self, IoError, TruthFile, FORMAT_VERSION};
use remfpca::model::{fit, fit_weighted, oracle_fit, AlphaVector, FitError, RemfpcaModel};
use remfpca::simulate::{generate, SimConfig, SimError};
use remfpca::tuning::{cross_validate, CvConfig, SearchMode, TuningError};

// ---------------------------------------------------------------------------
// Error channel
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn tag(&self) -> &'static str {
        match self {
            CliError::Config(_) => "E_CONFIG",
            CliError::Numeric(_) => "E_NUMERIC",
            CliError::Io(_) => "E_IO",
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BasisError> for CliError {
    fn from(e: BasisError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Underdetermined { .. }
            | DataError::RankDeficient { .. }
            | DataError::DegenerateVariable { .. }
            | DataError::InsufficientSamples { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::NotPositiveDefinite | FitError::EigenFailure => {
                CliError::Numeric(e.to_string())
            }
            FitError::Data(d) => d.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TuningError> for CliError {
    fn from(e: TuningError) -> Self {
        match e {
            TuningError::AllCandidatesFailed(_) => CliError::Numeric(e.to_string()),
            TuningError::Fit(f) => f.into(),
            TuningError::Data(d) => d.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::ZeroTruth
            | MetricsError::ZeroComponent
            | MetricsError::ZeroNormSample { .. }
            | MetricsError::TooFewClusters(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::NoSuccessfulReplications { .. } | ExperimentError::ThreadPool(_) => {
                CliError::Numeric(e.to_string())
            }
            ExperimentError::Sim(inner) => inner.into(),
            ExperimentError::Data(inner) => inner.into(),
            ExperimentError::Fit(inner) => inner.into(),
            ExperimentError::Tuning(inner) => inner.into(),
            ExperimentError::Metrics(inner) => inner.into(),
            ExperimentError::Basis(inner) => inner.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "remfpca",
    version,
    about = "Regularized multivariate functional principal component analysis"
)]
struct Cli {
    /// Output directory (default: $REMFPCA_OUT_DIR, then the working directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from the bivariate generator and write it with its truth.
    Simulate(SimulateArgs),
    /// Smooth observations onto bases and fit the penalized eigenproblem.
    Fit(FitArgs),
    /// Cross-validate the penalty vector.
    Cv(CvArgs),
    /// k-medoids on the PC scores of a fitted model.
    Cluster(ClusterArgs),
    /// Agreement between two labelings (ARI and NMI).
    Eval(EvalArgs),
    /// Replicated simulation study with per-replication records and summaries.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator configuration (JSON; missing fields take defaults).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BasisArgs {
    /// Basis manifest (JSON) to use instead of per-variable B-splines.
    #[arg(long)]
    basis: Option<PathBuf>,
    /// B-spline dimension per variable (ignored with --basis).
    #[arg(long, default_value_t = 15)]
    basis_dim: usize,
    /// B-spline order per variable (ignored with --basis).
    #[arg(long, default_value_t = 4)]
    basis_order: usize,
}

#[derive(Args)]
struct FitArgs {
    /// Long-format observations CSV.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    basis: BasisArgs,
    /// Penalty values: one per variable, comma separated; a single value is
    /// shared by all variables.
    #[arg(long)]
    alpha: String,
    /// Number of components (clamped to the admissible maximum with a warning).
    #[arg(short = 'k', long, default_value_t = 8)]
    components: usize,
    /// Rescale every variable to unit integrated variance before fitting.
    #[arg(long, conflicts_with = "oracle")]
    rescale: bool,
    /// Use the independent spectral route instead of the production solver.
    #[arg(long)]
    oracle: bool,
    /// Points per variable in the PC evaluation table.
    #[arg(long, default_value_t = 201)]
    pc_grid: usize,
}

#[derive(Args)]
struct CvArgs {
    /// Long-format observations CSV.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    basis: BasisArgs,
    /// Cross-validation configuration (JSON; missing fields take defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the candidate grid: comma-separated values.
    #[arg(long)]
    grid: Option<String>,
    /// Override the fold count.
    #[arg(long)]
    folds: Option<usize>,
    /// Override the search mode: full_grid, coordinate_wise, or shared_scalar.
    #[arg(long)]
    mode: Option<String>,
    /// Override the shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Fitted model (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Long-format observations CSV.
    #[arg(long)]
    data: PathBuf,
    /// Number of leading PC score columns (default: all model components).
    #[arg(long)]
    pcs: Option<usize>,
    /// Fixed cluster count; omit to choose by mean silhouette.
    #[arg(short = 'k', long)]
    k: Option<usize>,
    /// Largest cluster count tried when choosing k.
    #[arg(long, default_value_t = 6)]
    max_k: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Labels to evaluate (`sample_id,label` CSV).
    #[arg(long)]
    labels: PathBuf,
    /// Reference labels: another labels CSV.
    #[arg(long, conflicts_with = "truth", required_unless_present = "truth")]
    reference: Option<PathBuf>,
    /// Reference labels from a simulation truth file (JSON).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Study configuration (JSON; missing fields take defaults).
    #[arg(long)]
    config: PathBuf,
    /// Override the worker thread count.
    #[arg(long)]
    jobs: Option<usize>,
    /// Re-run cross-validation inside every replication.
    #[arg(long)]
    cv_every_rep: bool,
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fn out_dir(flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag
        .clone()
        .or_else(|| std::env::var_os("REMFPCA_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_float_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{what}: `{s}` is not a number")))
        })
        .collect()
}

fn parse_alpha(text: &str, n_vars: usize) -> Result<AlphaVector, CliError> {
    let values = parse_float_list(text, "--alpha")?;
    let values = if values.len() == 1 {
        vec![values[0]; n_vars]
    } else if values.len() == n_vars {
        values
    } else {
        return Err(CliError::Config(format!(
            "--alpha must list 1 or {n_vars} values, got {}",
            values.len()
        )));
    };
    Ok(AlphaVector::new(values)?)
}

fn build_bases(obs: &GridObservations, args: &BasisArgs) -> Result<Arc<MultiBasis>, CliError> {
    if let Some(path) = &args.basis {
        return Ok(Arc::new(io::read_basis_manifest(path)?));
    }
    let mut systems = Vec::with_capacity(obs.n_vars());
    for variable in obs.variables() {
        let lower = variable.grid[0];
        let upper = *variable.grid.last().expect("grids are nonempty");
        systems.push(BasisSystem::bspline(
            Interval::new(lower, upper)?,
            args.basis_dim,
            args.basis_order,
        )?);
    }
    Ok(Arc::new(MultiBasis::new(systems)?))
}

fn load_dataset(
    data: &Path,
    basis: &BasisArgs,
) -> Result<(GridObservations, MFDataset), CliError> {
    let obs = io::read_observations_csv(data)?;
    let bases = build_bases(&obs, basis)?;
    let dataset = smooth_to_coeffs(&obs, bases)?;
    Ok((obs, dataset))
}

/// Format floats with Display (shortest round-trip decimal).
fn num(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_simulate(out: &Path, args: &SimulateArgs) -> Result<serde_json::Value, CliError> {
    let mut config: SimConfig = read_json_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (obs, truth) = generate(&config)?;
    let obs_path = out.join("observations.csv");
    io::write_observations_csv(&obs_path, &obs)?;
    let truth_path = out.join("truth.json");
    io::write_truth_json(
        &truth_path,
        &TruthFile {
            format_version: FORMAT_VERSION,
            config: truth.config.clone(),
            lambdas: truth.lambdas.clone(),
            labels: truth.labels.clone(),
        },
    )?;
    Ok(json!({
        "observations": obs_path,
        "truth": truth_path,
        "n_samples": obs.n_samples(),
        "n_vars": obs.n_vars(),
    }))
}

fn cmd_fit(out: &Path, args: &FitArgs) -> Result<serde_json::Value, CliError> {
    let (_, dataset) = load_dataset(&args.data, &args.basis)?;
    let bases = Arc::clone(dataset.bases());
    let alpha = parse_alpha(&args.alpha, bases.n_vars())?;

    let cap = dataset.n_samples().min(bases.total_dim());
    let k = args.components.min(cap);
    if k == 0 {
        return Err(CliError::Config("--components must be at least 1".into()));
    }
    let mut warnings = Vec::new();
    if k < args.components {
        warnings.push(format!(
            "requested {} components, clamped to the admissible maximum {k}",
            args.components
        ));
    }
    let model = if args.oracle {
        oracle_fit(&dataset, &alpha, k)?
    } else if args.rescale {
        fit_weighted(&dataset, &alpha, k)?
    } else {
        fit(&dataset, &alpha, k)?
    };

    let model_path = out.join("model.json");
    io::write_model_json(&model_path, &model)?;

    // Eigenvalue table, zero-padded up to the requested component count.
    let eig_path = out.join("eigenvalues.csv");
    let rows: Vec<Vec<String>> = (0..args.components)
        .map(|m| {
            let value = if m < k { model.eigenvalues()[m] } else { 0.0 };
            vec![(m + 1).to_string(), num(value)]
        })
        .collect();
    io::write_table_csv(&eig_path, &["component", "eigenvalue"], &rows)?;

    // Dense PC evaluations for plotting, raw and H-normalized.
    if args.pc_grid < 2 {
        return Err(CliError::Config("--pc-grid must be at least 2".into()));
    }
    let points: Vec<Vec<f64>> = (0..bases.n_vars())
        .map(|j| bases.system(j).domain().equispaced(args.pc_grid))
        .collect();
    let raw = model.eval_pcs(&points)?;
    let normalized = model.eval_pcs_normalized(&points)?;
    let mut pc_rows = Vec::new();
    for (j, grid) in points.iter().enumerate() {
        for (row, t) in grid.iter().enumerate() {
            for m in 0..k {
                pc_rows.push(vec![
                    (j + 1).to_string(),
                    num(*t),
                    (m + 1).to_string(),
                    num(raw[j][(row, m)]),
                    num(normalized[j][(row, m)]),
                ]);
            }
        }
    }
    let pcs_path = out.join("pcs.csv");
    io::write_table_csv(
        &pcs_path,
        &["variable", "t", "component", "value", "normalized_value"],
        &pc_rows,
    )?;

    Ok(json!({
        "model": model_path,
        "eigenvalues": eig_path,
        "pcs": pcs_path,
        "components": k,
        "alpha_orthonormality_error": model.alpha_orthonormality_error(),
        "warnings": warnings,
    }))
}

fn parse_mode(text: &str) -> Result<SearchMode, CliError> {
    match text {
        "full_grid" => Ok(SearchMode::FullGrid),
        "coordinate_wise" => Ok(SearchMode::CoordinateWise),
        "shared_scalar" => Ok(SearchMode::SharedScalar),
        other => Err(CliError::Config(format!(
            "--mode must be full_grid, coordinate_wise, or shared_scalar, got `{other}`"
        ))),
    }
}

fn cmd_cv(out: &Path, args: &CvArgs) -> Result<serde_json::Value, CliError> {
    let (_, dataset) = load_dataset(&args.data, &args.basis)?;
    let mut config: CvConfig = match &args.config {
        Some(path) => read_json_config(path)?,
        None => CvConfig::default(),
    };
    if let Some(grid) = &args.grid {
        config.grid = parse_float_list(grid, "--grid")?;
    }
    if let Some(folds) = args.folds {
        config.folds = folds;
    }
    if let Some(mode) = &args.mode {
        config.mode = parse_mode(mode)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let outcome = cross_validate(&dataset, &config)?;

    let table_path = out.join("cv_table.csv");
    let rows: Vec<Vec<String>> = outcome
        .records
        .iter()
        .enumerate()
        .map(|(i, record)| {
            vec![
                (i + 1).to_string(),
                record
                    .alpha
                    .iter()
                    .map(|v| num(*v))
                    .collect::<Vec<_>>()
                    .join(";"),
                record
                    .fold_scores
                    .iter()
                    .map(|v| num(*v))
                    .collect::<Vec<_>>()
                    .join(";"),
                num(record.mean_score),
            ]
        })
        .collect();
    io::write_table_csv(
        &table_path,
        &["candidate", "alpha", "fold_scores", "mean_score"],
        &rows,
    )?;

    let chosen_path = out.join("cv_chosen.json");
    let chosen = json!({
        "alpha": outcome.alpha.as_slice(),
        "score": outcome.score,
        "candidates": outcome.records.len(),
    });
    std::fs::write(&chosen_path, serde_json::to_string_pretty(&chosen)?)?;
    Ok(json!({
        "chosen": chosen_path,
        "table": table_path,
        "alpha": outcome.alpha.as_slice(),
        "score": outcome.score,
    }))
}

fn cmd_cluster(out: &Path, args: &ClusterArgs) -> Result<serde_json::Value, CliError> {
    let model: RemfpcaModel = io::read_model_json(&args.model)?;
    let obs = io::read_observations_csv(&args.data)?;
    let dataset = smooth_to_coeffs(&obs, Arc::clone(model.bases()))?;
    let scores = model.scores(&dataset)?;
    let pcs = args.pcs.unwrap_or(model.n_components());
    if pcs == 0 || pcs > model.n_components() {
        return Err(CliError::Config(format!(
            "--pcs must lie in 1..={}, got {pcs}",
            model.n_components()
        )));
    }
    let points = scores.columns(0, pcs).into_owned();

    let (outcome, chosen_k, per_k) = match args.k {
        Some(k) => {
            let outcome = kmedoids(&points, k)?;
            let report = silhouette(&points, &outcome.labels)?;
            (outcome, k, vec![(k, report.mean)])
        }
        None => choose_k(&points, 2, args.max_k)?,
    };
    let report = silhouette(&points, &outcome.labels)?;

    let labels_path = out.join("clusters.csv");
    let labels: Vec<(String, usize)> = obs
        .sample_ids()
        .iter()
        .cloned()
        .zip(outcome.labels.iter().copied())
        .collect();
    io::write_labels_csv(&labels_path, &labels)?;

    let sil_path = out.join("silhouette.csv");
    let rows: Vec<Vec<String>> = per_k
        .iter()
        .map(|(k, s)| vec![k.to_string(), num(*s)])
        .collect();
    io::write_table_csv(&sil_path, &["k", "mean_silhouette"], &rows)?;

    Ok(json!({
        "clusters": labels_path,
        "silhouette": sil_path,
        "chosen_k": chosen_k,
        "mean_silhouette": report.mean,
        "total_cost": outcome.total_cost,
        "medoids": outcome.medoids,
    }))
}

fn cmd_eval(out: &Path, args: &EvalArgs) -> Result<serde_json::Value, CliError> {
    let labeled = io::read_labels_csv(&args.labels)?;
    let labels: Vec<usize> = labeled.iter().map(|(_, l)| *l).collect();
    let reference: Vec<usize> = if let Some(path) = &args.truth {
        let truth = io::read_truth_json(path)?;
        truth.labels.ok_or_else(|| {
            CliError::Config(format!(
                "{}: the truth file has no labels (generated without cluster means)",
                path.display()
            ))
        })?
    } else {
        let path = args.reference.as_ref().expect("clap enforces the pair");
        let rows = io::read_labels_csv(path)?;
        if rows.len() == labeled.len() {
            // Align by sample id when both sides carry the same ids.
            let mut by_id: std::collections::HashMap<&str, usize> =
                std::collections::HashMap::with_capacity(rows.len());
            for (id, label) in &rows {
                by_id.insert(id.as_str(), *label);
            }
            if labeled.iter().all(|(id, _)| by_id.contains_key(id.as_str())) {
                labeled
                    .iter()
                    .map(|(id, _)| by_id[id.as_str()])
                    .collect()
            } else {
                rows.into_iter().map(|(_, l)| l).collect()
            }
        } else {
            rows.into_iter().map(|(_, l)| l).collect()
        }
    };
    let ari_value = ari(&reference, &labels)?;
    let nmi_value = nmi(&reference, &labels)?;
    let metrics = json!({
        "ari": ari_value,
        "nmi": nmi_value,
        "n": labels.len(),
        "nmi_normalization": "arithmetic mean of entropies",
    });
    let path = out.join("metrics.json");
    std::fs::write(&path, serde_json::to_string_pretty(&metrics)?)?;
    Ok(json!({"metrics": path, "ari": ari_value, "nmi": nmi_value}))
}

fn summary_text(summaries: &[SummaryRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for row in summaries {
        let label = row.method.label();
        if !methods.contains(&label) {
            methods.push(label);
        }
    }
    let mut lines: Vec<(String, Vec<String>)> = Vec::new();
    for row in summaries {
        let key = if row.index == 0 {
            row.metric.clone()
        } else {
            format!("{}[{}]", row.metric, row.index)
        };
        let column = methods
            .iter()
            .position(|m| *m == row.method.label())
            .expect("collected above");
        let cell = format!("{:.4} ({:.4})", row.mean, row.std);
        match lines.iter_mut().find(|(k, _)| *k == key) {
            Some((_, cells)) => cells[column] = cell,
            None => {
                let mut cells = vec![String::from("-"); methods.len()];
                cells[column] = cell;
                lines.push((key, cells));
            }
        }
    }
    let key_width = lines
        .iter()
        .map(|(k, _)| k.len())
        .chain(std::iter::once("metric".len()))
        .max()
        .unwrap_or(6);
    let col_width = 18;
    let mut text = format!("{:key_width$}", "metric");
    for m in &methods {
        text.push_str(&format!("  {m:>col_width$}"));
    }
    text.push('\n');
    for (key, cells) in lines {
        text.push_str(&format!("{key:key_width$}"));
        for cell in cells {
            text.push_str(&format!("  {cell:>col_width$}"));
        }
        text.push('\n');
    }
    text
}

fn cmd_experiment(out: &Path, args: &ExperimentArgs) -> Result<serde_json::Value, CliError> {
    let mut config: ExperimentConfig = read_json_config(&args.config)?;
    if let Some(jobs) = args.jobs {
        config.jobs = Some(jobs);
    }
    if args.cv_every_rep {
        config.cv_every_rep = true;
    }
    let outcome = run_experiment(&config)?;

    // Long-format per-replication records.
    let records_path = out.join("records.csv");
    let mut rows = Vec::new();
    for record in &outcome.records {
        let alpha = record
            .alpha
            .iter()
            .map(|v| num(*v))
            .collect::<Vec<_>>()
            .join(";");
        let mut push = |metric: &str, index: usize, value: f64| {
            rows.push(vec![
                record.replication.to_string(),
                record.seed.to_string(),
                record.method.label().to_string(),
                alpha.clone(),
                metric.to_string(),
                index.to_string(),
                num(value),
            ]);
        };
        for (m, v) in record.err_lambda.iter().enumerate() {
            push("err_lambda", m + 1, *v);
        }
        for (m, v) in record.err_psi.iter().enumerate() {
            push("err_psi", m + 1, *v);
        }
        for (j, v) in record.mrae.iter().enumerate() {
            push("mrae", j + 1, *v);
        }
        if let Some(v) = record.ari {
            push("ari", 0, v);
        }
        if let Some(v) = record.nmi {
            push("nmi", 0, v);
        }
        if let Some(v) = record.mean_silhouette {
            push("silhouette", 0, v);
        }
        if let Some(k) = record.chosen_k {
            push("chosen_k", 0, k as f64);
        }
    }
    io::write_table_csv(
        &records_path,
        &[
            "replication",
            "seed",
            "method",
            "alpha",
            "metric",
            "index",
            "value",
        ],
        &rows,
    )?;

    let summary_path = out.join("summary.csv");
    let rows: Vec<Vec<String>> = outcome
        .summaries
        .iter()
        .map(|row| {
            vec![
                row.method.label().to_string(),
                row.metric.clone(),
                row.index.to_string(),
                num(row.mean),
                num(row.std),
                row.count.to_string(),
            ]
        })
        .collect();
    io::write_table_csv(
        &summary_path,
        &["method", "metric", "index", "mean", "std", "count"],
        &rows,
    )?;

    let table_path = out.join("summary.txt");
    std::fs::write(&table_path, summary_text(&outcome.summaries))?;

    let meta_path = out.join("meta.json");
    let meta = json!({
        "format_version": FORMAT_VERSION,
        "config": config,
        "alphas": outcome
            .alphas
            .iter()
            .map(|(m, a)| json!({"method": m.label(), "alpha": a}))
            .collect::<Vec<_>>(),
        "failures": outcome
            .failures
            .iter()
            .map(|(rep, msg)| json!({"replication": rep, "error": msg}))
            .collect::<Vec<_>>(),
    });
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;

    Ok(json!({
        "records": records_path,
        "summary": summary_path,
        "summary_table": table_path,
        "meta": meta_path,
        "replications": config.replications,
        "failures": outcome.failures.len(),
    }))
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let out = out_dir(&cli.out)?;
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(&out, args),
        Command::Fit(args) => cmd_fit(&out, args),
        Command::Cv(args) => cmd_cv(&out, args),
        Command::Cluster(args) => cmd_cluster(&out, args),
        Command::Eval(args) => cmd_eval(&out, args),
        Command::Experiment(args) => cmd_experiment(&out, args),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => println!("{report}"),
        Err(error) => {
            eprintln!(
                "{}",
                json!({"error": error.tag(), "message": error.message()})
            );
            std::process::exit(error.exit_code());
        }
    }
}
