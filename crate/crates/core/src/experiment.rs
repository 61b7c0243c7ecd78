//! Replicated simulation studies.
//!
//! Two scenarios over the bivariate generator in [`crate::simulate`]:
//!
//! * **Estimation** — per replication, smooth the observations onto B-spline
//!   bases, fit each method, and score it against the ground truth:
//!   relative eigenvalue errors and H-norm component errors for
//!   `m = 1..=n_components`, plus the mean relative absolute error of the
//!   truncated Karhunen–Loève reconstruction `x̂_i = Σ_{m≤J} ⟨x_i, ψ̃_m⟩ ψ̃_m`
//!   (H-normalized components) for `J = 1..=n_components`. The reconstruction
//!   error is evaluated against the *true* curves, exactly in coefficient
//!   space through a quadrature cross-Gram between the truth bases and the
//!   fitting bases.
//! * **Clustering** — k-medoids on the leading PC scores, judged against the
//!   generating labels with ARI and NMI; the cluster count is either fixed or
//!   chosen by mean silhouette.
//!
//! Methods: the penalized fit (`remfpca`), the unpenalized fit (`mfpca`),
//! and their marginal counterparts which fit every variable separately and
//! combine the per-variable results (summed eigenvalues, stacked components,
//! per-variable reconstructions, concatenated score columns).
//!
//! Replication `r` uses the seed `replication_seed(master, r)` (a SplitMix64
//! finalizer), so any subset of replications can be reproduced independently.
//! Replications run in parallel and are merged in index order; a failed
//! replication is recorded and skipped rather than aborting the study.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{simpson_rule, BasisError, BasisSystem, Interval, MultiBasis};
use crate::evalmetrics::{
    ari, choose_k, err_lambda, err_psi, kmedoids, nmi, silhouette, MetricsError,
};
use crate::fundata::{smooth_to_coeffs, DataError, MFDataset};
use crate::model::{fit, AlphaVector, FitError, RemfpcaModel};
use crate::simulate::{
    generate, psi_1, psi_2, truth_bases, SimConfig, SimError, SimTruth, CLUSTER_WEIGHTS,
};
use crate::tuning::{cross_validate, CvConfig, TuningError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("replications must be at least 1")]
    InvalidReplications,
    #[error("the method list is empty")]
    EmptyMethods,
    #[error("n_components = {requested} exceeds the admissible maximum {max}")]
    InvalidComponents { requested: usize, max: usize },
    #[error("fixed alpha must list {expected} entries, got {got}")]
    AlphaLength { expected: usize, got: usize },
    #[error("the clustering scenario requires sim.cluster_means = true")]
    ClusteringNeedsMeans,
    #[error("cluster count bound {got} must lie in 2..={max}")]
    InvalidClusterCount { got: usize, max: usize },
    #[error("could not build the thread pool: {0}")]
    ThreadPool(String),
    #[error("all {failed} replications failed; first error: {first}")]
    NoSuccessfulReplications { failed: usize, first: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Estimation,
    Clustering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mfpca,
    Remfpca,
    MarginalFpca,
    MarginalRefpca,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Mfpca => "mfpca",
            Method::Remfpca => "remfpca",
            Method::MarginalFpca => "marginal_fpca",
            Method::MarginalRefpca => "marginal_refpca",
        }
    }

    fn penalized(self) -> bool {
        matches!(self, Method::Remfpca | Method::MarginalRefpca)
    }

    fn marginal(self) -> bool {
        matches!(self, Method::MarginalFpca | Method::MarginalRefpca)
    }
}

/// How penalized methods obtain their α vector. Unpenalized methods always
/// use α = 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AlphaPolicy {
    Fixed {
        alpha: Vec<f64>,
    },
    Cv {
        #[serde(default)]
        config: CvConfig,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub replications: usize,
    /// Base generator configuration; its `seed` is the master seed.
    pub sim: SimConfig,
    /// Dimension of the B-spline fitting basis, per variable.
    pub basis_dim: usize,
    pub basis_order: usize,
    /// Components evaluated: `m`/`J` range in estimation, score columns in
    /// clustering.
    pub n_components: usize,
    pub alpha_policy: AlphaPolicy,
    /// Re-run cross-validation inside every replication instead of reusing
    /// the α selected on replication 0.
    pub cv_every_rep: bool,
    /// Fixed cluster count; `None` chooses k ∈ 2..=max_k by mean silhouette.
    pub cluster_k: Option<usize>,
    pub max_k: usize,
    /// Simpson points for the truth-vs-fit quadrature (odd, ≥ 3).
    pub quad_points: usize,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Estimation,
            methods: vec![Method::Mfpca, Method::Remfpca],
            replications: 20,
            sim: SimConfig::default(),
            basis_dim: 15,
            basis_order: 4,
            n_components: 8,
            alpha_policy: AlphaPolicy::Cv {
                config: CvConfig::default(),
            },
            cv_every_rep: false,
            cluster_k: None,
            max_k: 6,
            quad_points: 8193,
            jobs: None,
        }
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), ExperimentError> {
        if self.replications == 0 {
            return Err(ExperimentError::InvalidReplications);
        }
        if self.methods.is_empty() {
            return Err(ExperimentError::EmptyMethods);
        }
        self.sim.validate()?;
        // Marginal fits cap the component count at the per-variable dimension.
        let mut max = self.basis_dim.min(self.sim.n_samples);
        if self.scenario == Scenario::Estimation {
            max = max.min(self.sim.truncation);
        }
        if self.n_components == 0 || self.n_components > max {
            return Err(ExperimentError::InvalidComponents {
                requested: self.n_components,
                max,
            });
        }
        if let AlphaPolicy::Fixed { alpha } = &self.alpha_policy {
            if self.methods.iter().any(|m| m.penalized()) && alpha.len() != 2 {
                return Err(ExperimentError::AlphaLength {
                    expected: 2,
                    got: alpha.len(),
                });
            }
        }
        if self.scenario == Scenario::Clustering {
            if !self.sim.cluster_means {
                return Err(ExperimentError::ClusteringNeedsMeans);
            }
            let n = self.sim.n_samples;
            match self.cluster_k {
                Some(k) if k < 2 || k + 1 > n => {
                    return Err(ExperimentError::InvalidClusterCount {
                        got: k,
                        max: n.saturating_sub(1),
                    })
                }
                None if self.max_k < 2 || self.max_k + 1 > n => {
                    return Err(ExperimentError::InvalidClusterCount {
                        got: self.max_k,
                        max: n.saturating_sub(1),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Seed of replication `rep` under `master`: SplitMix64 finalizer over
/// `master + (rep+1)·φ`, so replication subsets reproduce independently.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    let mut z = master.wrapping_add((rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One method's measures on one replication. Estimation fills the vectors
/// (index `m` or `J`, 1-based); clustering fills the scalar options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub replication: usize,
    pub seed: u64,
    pub method: Method,
    pub alpha: Vec<f64>,
    pub err_lambda: Vec<f64>,
    pub err_psi: Vec<f64>,
    pub mrae: Vec<f64>,
    pub ari: Option<f64>,
    pub nmi: Option<f64>,
    pub mean_silhouette: Option<f64>,
    pub chosen_k: Option<usize>,
}

/// Mean and sample standard deviation of one metric across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub metric: String,
    /// `m` or `J` for the per-component metrics, 0 for scalars.
    pub index: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    /// α resolved on replication 0, per method (order of first appearance).
    pub alphas: Vec<(Method, Vec<f64>)>,
    /// Per-replication records, replication-major then method order.
    pub records: Vec<RepRecord>,
    /// `(replication, error)` for replications that failed.
    pub failures: Vec<(usize, String)>,
    pub summaries: Vec<SummaryRow>,
}

// ---------------------------------------------------------------------------
// Shared geometry: truth basis vs fitting basis
// ---------------------------------------------------------------------------

/// Quadrature links between the exact truth bases and the fitting bases,
/// computed once per study.
struct TruthGeometry {
    /// Coefficients of `ψ_1..ψ_M` over the truth bases (M × 2M).
    component_coeffs: DMatrix<f64>,
    /// `∫ truth_a(t) fit_b(t) dt`, block diagonal over variables (2M × Σd).
    cross: DMatrix<f64>,
    m: usize,
}

fn build_geometry(
    sim: &SimConfig,
    fit_bases: &MultiBasis,
    quad_points: usize,
) -> Result<TruthGeometry, ExperimentError> {
    let truth = truth_bases(sim.truncation)?;
    let m = sim.truncation;
    let domain = Interval::new(0.0, 1.0)?;
    let (points, weights) = simpson_rule(domain, quad_points)?;
    let mut cross = DMatrix::zeros(truth.total_dim(), fit_bases.total_dim());
    for j in 0..truth.n_vars() {
        let truth_eval = truth.system(j).eval(&points)?;
        let mut fit_eval = fit_bases.system(j).eval(&points)?;
        for (k, w) in weights.iter().enumerate() {
            let mut row = fit_eval.row_mut(k);
            row *= *w;
        }
        let block = truth_eval.transpose() * fit_eval;
        let fit_block = fit_bases.block(j);
        cross
            .view_mut((j * m, fit_block.start), (m, fit_block.len()))
            .copy_from(&block);
    }
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut component_coeffs = DMatrix::zeros(m, 2 * m);
    for row in 0..m {
        component_coeffs[(row, row)] = inv_sqrt2;
        component_coeffs[(row, m + row)] = inv_sqrt2;
    }
    Ok(TruthGeometry {
        component_coeffs,
        cross,
        m,
    })
}

/// Coefficients of the true curves over the truth bases: KL scores mapped
/// through the component coefficients, plus the cluster mean when present.
/// The truth bases are exactly orthonormal, so row norms are H-norms.
fn true_coefficients(truth: &SimTruth, geometry: &TruthGeometry) -> DMatrix<f64> {
    let mut coeffs = &truth.scores * &geometry.component_coeffs;
    if let Some(labels) = &truth.labels {
        for (i, &cluster) in labels.iter().enumerate() {
            for (m, weights) in CLUSTER_WEIGHTS.iter().enumerate() {
                let w = weights[cluster];
                if w != 0.0 {
                    for c in 0..coeffs.ncols() {
                        coeffs[(i, c)] += w * geometry.component_coeffs[(m, c)];
                    }
                }
            }
        }
    }
    coeffs
}

// ---------------------------------------------------------------------------
// Per-replication work
// ---------------------------------------------------------------------------

/// Components rescaled to unit H-norm (`ψ̃`).
fn normalized_components(model: &RemfpcaModel) -> DMatrix<f64> {
    let mut b = model.components().clone();
    let norms = model.h_norms();
    for (m, mut col) in b.column_iter_mut().enumerate() {
        if norms[m] > 0.0 {
            col /= norms[m];
        }
    }
    b
}

fn variable_subset(data: &MFDataset, j: usize) -> Result<MFDataset, ExperimentError> {
    let bases = data.bases();
    let block = bases.block(j);
    let sub_bases = Arc::new(MultiBasis::new(vec![bases.systems()[j].clone()])?);
    let coeffs = data.coeffs().columns(block.start, block.len()).into_owned();
    Ok(MFDataset::new(sub_bases, coeffs)?)
}

/// One additive piece of the reconstruction error: true-side scores
/// `s_im = ⟨x_i, ψ̃_m⟩`, component Gram `P = ⟨ψ̃_m, ψ̃_l⟩`, and true squared
/// norms, either for the joint fit (one group) or per variable (marginal).
struct ProjectionGroup {
    scores: DMatrix<f64>,
    component_gram: DMatrix<f64>,
    sq_norms: DVector<f64>,
}

/// `MRAE(J) = mean_i ‖x_i − Σ_{m≤J} s_im ψ̃_m‖ / ‖x_i‖` for `J = 1..=k`,
/// expanded exactly as `‖x‖² − 2Σ s² + sᵀPs` and clamped at zero.
fn mrae_curve(groups: &[ProjectionGroup], k: usize) -> Result<Vec<f64>, ExperimentError> {
    let n = groups[0].scores.nrows();
    let mut denom = vec![0.0; n];
    for (i, d) in denom.iter_mut().enumerate() {
        *d = groups.iter().map(|g| g.sq_norms[i]).sum();
        if !(*d > 0.0) {
            return Err(MetricsError::ZeroNormSample { index: i }.into());
        }
    }
    let mut curve = Vec::with_capacity(k);
    for trunc in 1..=k {
        let mut total = 0.0;
        for i in 0..n {
            let mut err2 = 0.0;
            for g in groups {
                let s = g.scores.row(i);
                let mut part = g.sq_norms[i];
                for m in 0..trunc {
                    part -= 2.0 * s[m] * s[m];
                    for l in 0..trunc {
                        part += s[m] * s[l] * g.component_gram[(m, l)];
                    }
                }
                err2 += part;
            }
            total += (err2.max(0.0) / denom[i]).sqrt();
        }
        curve.push(total / n as f64);
    }
    Ok(curve)
}

/// Eigenvalues, H-normalized component columns over the full bases, and
/// reconstruction groups for one method on one replication's data.
struct FittedMethod {
    lambdas: Vec<f64>,
    components: Vec<DVector<f64>>,
    groups: Vec<ProjectionGroup>,
}

fn fit_for_estimation(
    method: Method,
    data: &MFDataset,
    alpha: &[f64],
    k: usize,
    geometry: &TruthGeometry,
    true_coeffs: &DMatrix<f64>,
) -> Result<FittedMethod, ExperimentError> {
    let bases = data.bases();
    if method.marginal() {
        let total_dim = bases.total_dim();
        let mut lambdas = vec![0.0; k];
        let mut components = vec![DVector::zeros(total_dim); k];
        let mut groups = Vec::with_capacity(bases.n_vars());
        for j in 0..bases.n_vars() {
            let sub = variable_subset(data, j)?;
            let model = fit(&sub, &AlphaVector::new(vec![alpha[j]])?, k)?;
            let b = normalized_components(&model);
            let block = bases.block(j);
            for m in 0..k {
                lambdas[m] += model.eigenvalues()[m];
                components[m]
                    .rows_mut(block.start, block.len())
                    .copy_from(&b.column(m));
            }
            let true_j = true_coeffs.columns(j * geometry.m, geometry.m);
            let cross_j = geometry
                .cross
                .view((j * geometry.m, block.start), (geometry.m, block.len()));
            groups.push(ProjectionGroup {
                scores: true_j * (cross_j * &b),
                component_gram: b.transpose() * sub.bases().gram() * &b,
                sq_norms: DVector::from_fn(true_coeffs.nrows(), |i, _| {
                    true_j.row(i).norm_squared()
                }),
            });
        }
        Ok(FittedMethod {
            lambdas,
            components,
            groups,
        })
    } else {
        let model = fit(data, &AlphaVector::new(alpha.to_vec())?, k)?;
        let b = normalized_components(&model);
        let lambdas = (0..k).map(|m| model.eigenvalues()[m]).collect();
        let components = (0..k).map(|m| b.column(m).into_owned()).collect();
        let groups = vec![ProjectionGroup {
            scores: true_coeffs * (&geometry.cross * &b),
            component_gram: b.transpose() * bases.gram() * &b,
            sq_norms: DVector::from_fn(true_coeffs.nrows(), |i, _| {
                true_coeffs.row(i).norm_squared()
            }),
        }];
        Ok(FittedMethod {
            lambdas,
            components,
            groups,
        })
    }
}

fn estimation_record(
    config: &ExperimentConfig,
    data: &MFDataset,
    truth: &SimTruth,
    geometry: &TruthGeometry,
    true_coeffs: &DMatrix<f64>,
    method: Method,
    alpha: &[f64],
    replication: usize,
    seed: u64,
) -> Result<RepRecord, ExperimentError> {
    let k = config.n_components;
    let fitted = fit_for_estimation(method, data, alpha, k, geometry, true_coeffs)?;
    let mut err_lambda_v = Vec::with_capacity(k);
    let mut err_psi_v = Vec::with_capacity(k);
    for m in 0..k {
        err_lambda_v.push(err_lambda(fitted.lambdas[m], truth.lambdas[m])?);
        let first = |t: f64| psi_1(m + 1, t);
        let second = |t: f64| psi_2(m + 1, t);
        let truth_fns: [&dyn Fn(f64) -> f64; 2] = [&first, &second];
        err_psi_v.push(err_psi(
            data.bases(),
            &fitted.components[m],
            &truth_fns,
            config.quad_points,
        )?);
    }
    let mrae_v = mrae_curve(&fitted.groups, k)?;
    Ok(RepRecord {
        replication,
        seed,
        method,
        alpha: alpha.to_vec(),
        err_lambda: err_lambda_v,
        err_psi: err_psi_v,
        mrae: mrae_v,
        ari: None,
        nmi: None,
        mean_silhouette: None,
        chosen_k: None,
    })
}

fn clustering_record(
    config: &ExperimentConfig,
    data: &MFDataset,
    truth: &SimTruth,
    method: Method,
    alpha: &[f64],
    replication: usize,
    seed: u64,
) -> Result<RepRecord, ExperimentError> {
    let k = config.n_components;
    let points = if method.marginal() {
        let n_vars = data.bases().n_vars();
        let mut columns = DMatrix::zeros(data.n_samples(), n_vars * k);
        for j in 0..n_vars {
            let sub = variable_subset(data, j)?;
            let model = fit(&sub, &AlphaVector::new(vec![alpha[j]])?, k)?;
            let scores = model.scores(&sub)?;
            columns.columns_mut(j * k, k).copy_from(&scores);
        }
        columns
    } else {
        let model = fit(data, &AlphaVector::new(alpha.to_vec())?, k)?;
        model.scores(data)?
    };
    let (outcome, chosen) = match config.cluster_k {
        Some(fixed) => (kmedoids(&points, fixed)?, fixed),
        None => {
            let (outcome, best, _per_k) = choose_k(&points, 2, config.max_k)?;
            (outcome, best)
        }
    };
    let sil = silhouette(&points, &outcome.labels)?;
    let reference = truth
        .labels
        .as_ref()
        .expect("cluster_means is validated for the clustering scenario");
    Ok(RepRecord {
        replication,
        seed,
        method,
        alpha: alpha.to_vec(),
        err_lambda: Vec::new(),
        err_psi: Vec::new(),
        mrae: Vec::new(),
        ari: Some(ari(reference, &outcome.labels)?),
        nmi: Some(nmi(reference, &outcome.labels)?),
        mean_silhouette: Some(sil.mean),
        chosen_k: Some(chosen),
    })
}

fn resolve_alpha(
    method: Method,
    config: &ExperimentConfig,
    data: &MFDataset,
) -> Result<Vec<f64>, ExperimentError> {
    if !method.penalized() {
        return Ok(vec![0.0; data.bases().n_vars()]);
    }
    match &config.alpha_policy {
        AlphaPolicy::Fixed { alpha } => Ok(alpha.clone()),
        AlphaPolicy::Cv { config: cv } => {
            if method.marginal() {
                let mut out = Vec::with_capacity(data.bases().n_vars());
                for j in 0..data.bases().n_vars() {
                    let sub = variable_subset(data, j)?;
                    out.push(cross_validate(&sub, cv)?.alpha.as_slice()[0]);
                }
                Ok(out)
            } else {
                Ok(cross_validate(data, cv)?.alpha.as_slice().to_vec())
            }
        }
    }
}

fn run_replication(
    config: &ExperimentConfig,
    fit_bases: &Arc<MultiBasis>,
    geometry: Option<&TruthGeometry>,
    shared_alphas: &[(Method, Vec<f64>)],
    rep: usize,
) -> Result<Vec<RepRecord>, ExperimentError> {
    let seed = replication_seed(config.sim.seed, rep);
    let mut sim = config.sim.clone();
    sim.seed = seed;
    let (obs, truth) = generate(&sim)?;
    let data = smooth_to_coeffs(&obs, Arc::clone(fit_bases))?;
    let true_coeffs = geometry.map(|g| true_coefficients(&truth, g));
    let mut records = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let alpha = if config.cv_every_rep {
            resolve_alpha(method, config, &data)?
        } else {
            shared_alphas
                .iter()
                .find(|(m, _)| *m == method)
                .map(|(_, a)| a.clone())
                .expect("every configured method has a resolved alpha")
        };
        let record = match config.scenario {
            Scenario::Estimation => estimation_record(
                config,
                &data,
                &truth,
                geometry.expect("estimation scenario builds the geometry"),
                true_coeffs.as_ref().expect("estimation scenario"),
                method,
                &alpha,
                rep,
                seed,
            )?,
            Scenario::Clustering => {
                clustering_record(config, &data, &truth, method, &alpha, rep, seed)?
            }
        };
        records.push(record);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Study driver
// ---------------------------------------------------------------------------

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn summarize(config: &ExperimentConfig, records: &[RepRecord]) -> Vec<SummaryRow> {
    let mut methods_in_order: Vec<Method> = Vec::new();
    for &m in &config.methods {
        if !methods_in_order.contains(&m) {
            methods_in_order.push(m);
        }
    }
    let mut rows = Vec::new();
    let mut push = |method: Method, metric: &str, index: usize, values: Vec<f64>| {
        if values.is_empty() {
            return;
        }
        let (mean, std) = mean_std(&values);
        rows.push(SummaryRow {
            method,
            metric: metric.to_string(),
            index,
            mean,
            std,
            count: values.len(),
        });
    };
    for method in methods_in_order {
        let of_method: Vec<&RepRecord> = records.iter().filter(|r| r.method == method).collect();
        match config.scenario {
            Scenario::Estimation => {
                for idx in 0..config.n_components {
                    for (metric, get) in [
                        ("err_lambda", &(|r: &RepRecord| r.err_lambda[idx]) as &dyn Fn(&RepRecord) -> f64),
                        ("err_psi", &|r: &RepRecord| r.err_psi[idx]),
                        ("mrae", &|r: &RepRecord| r.mrae[idx]),
                    ] {
                        push(
                            method,
                            metric,
                            idx + 1,
                            of_method.iter().map(|r| get(r)).collect(),
                        );
                    }
                }
            }
            Scenario::Clustering => {
                push(
                    method,
                    "ari",
                    0,
                    of_method.iter().filter_map(|r| r.ari).collect(),
                );
                push(
                    method,
                    "nmi",
                    0,
                    of_method.iter().filter_map(|r| r.nmi).collect(),
                );
                push(
                    method,
                    "silhouette",
                    0,
                    of_method.iter().filter_map(|r| r.mean_silhouette).collect(),
                );
                push(
                    method,
                    "chosen_k",
                    0,
                    of_method
                        .iter()
                        .filter_map(|r| r.chosen_k.map(|k| k as f64))
                        .collect(),
                );
            }
        }
    }
    rows
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    config.validate()?;
    let domain = Interval::new(0.0, 1.0)?;
    let fit_bases = Arc::new(MultiBasis::new(vec![
        BasisSystem::bspline(domain, config.basis_dim, config.basis_order)?,
        BasisSystem::bspline(domain, config.basis_dim, config.basis_order)?,
    ])?);
    let geometry = match config.scenario {
        Scenario::Estimation => Some(build_geometry(&config.sim, &fit_bases, config.quad_points)?),
        Scenario::Clustering => None,
    };

    // Resolve α once, on replication 0's data; reused unless cv_every_rep.
    let alphas = {
        let mut sim = config.sim.clone();
        sim.seed = replication_seed(config.sim.seed, 0);
        let (obs, _) = generate(&sim)?;
        let data = smooth_to_coeffs(&obs, Arc::clone(&fit_bases))?;
        let mut resolved: Vec<(Method, Vec<f64>)> = Vec::new();
        for &method in &config.methods {
            if !resolved.iter().any(|(m, _)| *m == method) {
                resolved.push((method, resolve_alpha(method, config, &data)?));
            }
        }
        resolved
    };

    let worker = |rep: usize| {
        run_replication(config, &fit_bases, geometry.as_ref(), &alphas, rep)
            .map_err(|e| e.to_string())
    };
    let results: Vec<Result<Vec<RepRecord>, String>> = match config.jobs {
        Some(1) => (0..config.replications).map(worker).collect(),
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?
            .install(|| (0..config.replications).into_par_iter().map(worker).collect()),
        None => (0..config.replications).into_par_iter().map(worker).collect(),
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, result) in results.into_iter().enumerate() {
        match result {
            Ok(mut rows) => records.append(&mut rows),
            Err(message) => failures.push((rep, message)),
        }
    }
    if records.is_empty() {
        return Err(ExperimentError::NoSuccessfulReplications {
            failed: failures.len(),
            first: failures
                .first()
                .map(|(_, m)| m.clone())
                .unwrap_or_default(),
        });
    }
    let summaries = summarize(config, &records);
    Ok(ExperimentOutcome {
        alphas,
        records,
        failures,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_sim(n: usize, truncation: usize, sigma: f64, grid: usize, seed: u64) -> SimConfig {
        SimConfig {
            n_samples: n,
            truncation,
            theta: 1.0,
            sigma1: sigma,
            sigma2: sigma,
            rho: 0.4,
            grid1: grid,
            grid2: grid,
            cluster_means: false,
            seed,
        }
    }

    #[test]
    fn replication_seeds_are_deterministic_and_distinct() {
        let seeds: Vec<u64> = (0..200).map(|r| replication_seed(42, r)).collect();
        let again: Vec<u64> = (0..200).map(|r| replication_seed(42, r)).collect();
        assert_eq!(seeds, again);
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), seeds.len());
        assert_ne!(replication_seed(42, 0), replication_seed(43, 0));
    }

    #[test]
    fn estimation_study_produces_full_record_shape() {
        let config = ExperimentConfig {
            scenario: Scenario::Estimation,
            methods: vec![
                Method::Mfpca,
                Method::Remfpca,
                Method::MarginalFpca,
                Method::MarginalRefpca,
            ],
            replications: 2,
            sim: tiny_sim(12, 4, 0.1, 25, 7),
            basis_dim: 8,
            n_components: 3,
            alpha_policy: AlphaPolicy::Fixed {
                alpha: vec![0.5, 0.5],
            },
            quad_points: 1025,
            ..ExperimentConfig::default()
        };
        let outcome = run_experiment(&config).unwrap();
        assert!(outcome.failures.is_empty());
        assert_eq!(outcome.records.len(), 2 * 4);
        assert_eq!(outcome.alphas.len(), 4);
        for record in &outcome.records {
            assert_eq!(record.err_lambda.len(), 3);
            assert_eq!(record.err_psi.len(), 3);
            assert_eq!(record.mrae.len(), 3);
            assert!(record.ari.is_none());
            for v in record
                .err_lambda
                .iter()
                .chain(&record.err_psi)
                .chain(&record.mrae)
            {
                assert!(v.is_finite() && *v >= 0.0);
            }
        }
        // 4 methods × 3 metrics × 3 indices.
        assert_eq!(outcome.summaries.len(), 36);
        // Unpenalized methods report α = 0.
        for (method, alpha) in &outcome.alphas {
            if !method.penalized() {
                assert_eq!(alpha, &vec![0.0, 0.0]);
            } else {
                assert_eq!(alpha, &vec![0.5, 0.5]);
            }
        }
    }

    /// With σ = 0 the fitted eigenvalues must match the spectrum of the
    /// sample covariance of the true KL scores (the smoothing basis is the
    /// only approximation in between).
    #[test]
    fn unpenalized_eigenvalues_match_true_score_covariance() {
        let sim = tiny_sim(40, 3, 0.0, 41, 19);
        let config = ExperimentConfig {
            scenario: Scenario::Estimation,
            methods: vec![Method::Mfpca],
            replications: 1,
            sim: sim.clone(),
            n_components: 3,
            alpha_policy: AlphaPolicy::Fixed {
                alpha: vec![0.0, 0.0],
            },
            ..ExperimentConfig::default()
        };
        let outcome = run_experiment(&config).unwrap();

        // Reproduce the replication's truth and diagonalize the score
        // covariance directly: x_i = Σ_m s_im ψ_m with orthonormal ψ.
        let mut rep_sim = sim;
        rep_sim.seed = replication_seed(19, 0);
        let (_, truth) = generate(&rep_sim).unwrap();
        let n = truth.scores.nrows();
        let mean = truth.scores.row_mean();
        let mut centered = truth.scores.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let mut eigen: Vec<f64> = cov
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigen.sort_by(|a, b| b.total_cmp(a));

        let record = &outcome.records[0];
        for m in 0..3 {
            let fitted = {
                // err_lambda = |λ̂ − λ|/λ, so recover λ̂ up to sign of the gap.
                let truth_lambda = truth.lambdas[m];
                let err = record.err_lambda[m];
                // Verify against both candidates; one must match the oracle.
                let candidates = [truth_lambda * (1.0 + err), truth_lambda * (1.0 - err)];
                let target = eigen[m];
                *candidates
                    .iter()
                    .min_by(|a, b| {
                        (*a - target).abs().total_cmp(&(*b - target).abs())
                    })
                    .unwrap()
            };
            assert_relative_eq!(fitted, eigen[m], max_relative = 2e-3);
        }
    }

    #[test]
    fn unpenalized_mrae_curves_never_increase() {
        let config = ExperimentConfig {
            scenario: Scenario::Estimation,
            methods: vec![Method::Mfpca, Method::MarginalFpca],
            replications: 3,
            sim: tiny_sim(15, 5, 0.25, 31, 23),
            basis_dim: 10,
            n_components: 5,
            alpha_policy: AlphaPolicy::Fixed {
                alpha: vec![0.0, 0.0],
            },
            quad_points: 2049,
            ..ExperimentConfig::default()
        };
        let outcome = run_experiment(&config).unwrap();
        assert!(outcome.failures.is_empty());
        for record in &outcome.records {
            for j in 1..record.mrae.len() {
                assert!(
                    record.mrae[j] <= record.mrae[j - 1] + 1e-12,
                    "MRAE rose at J = {}: {} -> {}",
                    j + 1,
                    record.mrae[j - 1],
                    record.mrae[j]
                );
            }
        }
    }

    #[test]
    fn clustering_with_separated_means_is_recovered_exactly() {
        let sim = SimConfig {
            n_samples: 30,
            truncation: 3,
            sigma1: 0.05,
            sigma2: 0.05,
            grid1: 41,
            grid2: 41,
            cluster_means: true,
            seed: 3,
            ..SimConfig::default()
        };
        let config = ExperimentConfig {
            scenario: Scenario::Clustering,
            methods: vec![Method::Mfpca, Method::Remfpca],
            replications: 2,
            sim,
            n_components: 3,
            alpha_policy: AlphaPolicy::Fixed {
                alpha: vec![0.01, 0.01],
            },
            cluster_k: Some(3),
            ..ExperimentConfig::default()
        };
        let outcome = run_experiment(&config).unwrap();
        assert!(outcome.failures.is_empty());
        assert_eq!(outcome.records.len(), 4);
        for record in &outcome.records {
            assert_eq!(record.ari, Some(1.0));
            assert_eq!(record.nmi, Some(1.0));
            assert!(record.mean_silhouette.unwrap() > 0.5);
            assert!(record.err_lambda.is_empty());
        }

        // Silhouette-based selection finds the three generating clusters.
        let auto = ExperimentConfig {
            cluster_k: None,
            max_k: 5,
            ..config
        };
        let outcome = run_experiment(&auto).unwrap();
        for record in &outcome.records {
            assert_eq!(record.chosen_k, Some(3));
            assert_eq!(record.ari, Some(1.0));
        }
    }

    #[test]
    fn cv_alpha_is_resolved_once_and_results_are_deterministic() {
        let config = ExperimentConfig {
            scenario: Scenario::Estimation,
            methods: vec![Method::Remfpca],
            replications: 3,
            sim: tiny_sim(18, 3, 0.3, 25, 11),
            basis_dim: 8,
            n_components: 2,
            alpha_policy: AlphaPolicy::Cv {
                config: CvConfig {
                    folds: 3,
                    truncation: 2,
                    ..CvConfig::default()
                },
            },
            quad_points: 1025,
            ..ExperimentConfig::default()
        };
        let first = run_experiment(&config).unwrap();
        assert!(first.failures.is_empty());
        let resolved = &first.alphas[0].1;
        for record in &first.records {
            assert_eq!(&record.alpha, resolved, "shared α must be reused verbatim");
        }
        let second = run_experiment(&config).unwrap();
        assert_eq!(first.summaries, second.summaries);
        assert_eq!(first.records, second.records);
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let base = ExperimentConfig {
            sim: tiny_sim(12, 4, 0.1, 25, 0),
            basis_dim: 8,
            n_components: 3,
            alpha_policy: AlphaPolicy::Fixed {
                alpha: vec![0.1, 0.1],
            },
            ..ExperimentConfig::default()
        };

        let zero_reps = ExperimentConfig {
            replications: 0,
            ..base.clone()
        };
        assert!(matches!(
            run_experiment(&zero_reps),
            Err(ExperimentError::InvalidReplications)
        ));

        let no_methods = ExperimentConfig {
            methods: Vec::new(),
            ..base.clone()
        };
        assert!(matches!(
            run_experiment(&no_methods),
            Err(ExperimentError::EmptyMethods)
        ));

        let too_many_components = ExperimentConfig {
            n_components: 9,
            ..base.clone()
        };
        assert!(matches!(
            run_experiment(&too_many_components),
            Err(ExperimentError::InvalidComponents { requested: 9, .. })
        ));

        let bad_alpha = ExperimentConfig {
            methods: vec![Method::Remfpca],
            alpha_policy: AlphaPolicy::Fixed {
                alpha: vec![0.1],
            },
            ..base.clone()
        };
        assert!(matches!(
            run_experiment(&bad_alpha),
            Err(ExperimentError::AlphaLength { expected: 2, got: 1 })
        ));

        let clustering_without_means = ExperimentConfig {
            scenario: Scenario::Clustering,
            ..base.clone()
        };
        assert!(matches!(
            run_experiment(&clustering_without_means),
            Err(ExperimentError::ClusteringNeedsMeans)
        ));

        let bad_k = ExperimentConfig {
            scenario: Scenario::Clustering,
            sim: SimConfig {
                cluster_means: true,
                ..tiny_sim(12, 4, 0.1, 25, 0)
            },
            cluster_k: Some(1),
            ..base
        };
        assert!(matches!(
            run_experiment(&bad_k),
            Err(ExperimentError::InvalidClusterCount { got: 1, .. })
        ));
    }

    #[test]
    fn degenerate_smoothing_fails_every_replication() {
        // Fewer grid points than basis dimensions: smoothing is
        // underdetermined in every replication.
        let config = ExperimentConfig {
            scenario: Scenario::Estimation,
            methods: vec![Method::Mfpca],
            replications: 2,
            sim: tiny_sim(12, 3, 0.1, 9, 5),
            basis_dim: 15,
            n_components: 3,
            alpha_policy: AlphaPolicy::Fixed {
                alpha: vec![0.0, 0.0],
            },
            ..ExperimentConfig::default()
        };
        // α resolution on replication 0 already hits the failure.
        assert!(run_experiment(&config).is_err());
    }
}
