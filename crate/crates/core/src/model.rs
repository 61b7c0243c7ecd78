//! The regularized multivariate functional PCA model.
//!
//! Components are stacked coefficient vectors `b` solving the generalized
//! eigenproblem
//!
//! ```text
//!     G V G b = λ (G + D_α) b,
//! ```
//!
//! where `V` is the sample covariance of the coefficient rows. [`fit`]
//! reduces it to an ordinary symmetric eigenproblem through the Cholesky
//! factor `L Lᵀ = G + D_α`: with `S = L⁻¹`, the matrix `M = S (G V G) Sᵀ`
//! is symmetric, its eigenvectors `u` map back via `b = Sᵀ u`, and the
//! α-normalization `bᵀ (G + D_α) b = 1` is automatic. [`oracle_fit`] solves
//! the same problem along an entirely different route — a hand-rolled cyclic
//! Jacobi eigensolver and a spectral inverse square root — and exists so the
//! two implementations can be checked against each other.
//!
//! Conventions shared by both routes: eigenpairs are sorted by descending
//! eigenvalue, eigenvalues below `1e-12 · λ₁` are clamped to zero, and each
//! component's sign is fixed by requiring the largest-magnitude entry of
//! `G b` to be positive (ties resolved toward the lowest index).

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::basis::{BasisError, MultiBasis};
use crate::fundata::{DataError, MFDataset};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("penalty weight at position {index} must be finite and nonnegative, got {value}")]
    InvalidAlpha { index: usize, value: f64 },
    #[error("penalty vector must not be empty")]
    EmptyAlpha,
    #[error("expected {expected} penalty weight(s), one per variable, got {got}")]
    AlphaLength { expected: usize, got: usize },
    #[error("component count must lie in 1..={max}, requested {requested}")]
    InvalidComponentCount { requested: usize, max: usize },
    #[error("G + D_alpha is numerically singular even after a jitter retry")]
    NotPositiveDefinite,
    #[error("symmetric eigensolver did not converge")]
    EigenFailure,
    #[error("dataset basis does not match the basis the model was fitted with")]
    DatasetBasisMismatch,
    #[error("reconstruction truncation {requested} exceeds the {available} fitted component(s)")]
    TruncationTooLarge { requested: usize, available: usize },
    #[error("evaluation needs {expected} point set(s), one per variable, got {got}")]
    PointSetCount { expected: usize, got: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Per-variable roughness penalty weights, validated once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector(Vec<f64>);

impl AlphaVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FitError> {
        if values.is_empty() {
            return Err(FitError::EmptyAlpha);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(FitError::InvalidAlpha { index, value });
            }
        }
        Ok(Self(values))
    }

    /// The unpenalized model: `α = 0` for every variable.
    pub fn zeros(n_vars: usize) -> Self {
        Self(vec![0.0; n_vars])
    }

    /// The same weight for every variable.
    pub fn uniform(value: f64, n_vars: usize) -> Result<Self, FitError> {
        Self::new(vec![value; n_vars])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A fitted model: mean, eigenvalues and α-normalized components, plus the
/// optional variance-equalizing weights the training data were scaled by.
#[derive(Debug, Clone)]
pub struct RemfpcaModel {
    bases: Arc<MultiBasis>,
    alpha: AlphaVector,
    weights: Option<Vec<f64>>,
    mean: DVector<f64>,
    eigenvalues: DVector<f64>,
    components: DMatrix<f64>,
    n_fitted: usize,
}

/// Fit by Cholesky whitening of `G + D_α` (the production route).
pub fn fit(data: &MFDataset, alpha: &AlphaVector, k: usize) -> Result<RemfpcaModel, FitError> {
    let prep = Preparation::build(data, alpha, k)?;
    let s = prep.whitener_from_cholesky()?;
    let m = symmetrize(&s * &prep.gvg * s.transpose());
    let eigen = SymmetricEigen::try_new(m, f64::EPSILON, 50_000).ok_or(FitError::EigenFailure)?;
    let components = s.transpose() * eigen.eigenvectors;
    prep.finish(eigen.eigenvalues, components, k)
}

/// Fit through an independent numerical route: a cyclic Jacobi eigensolver
/// and the spectral inverse square root `W = Q Λ^{-1/2} Qᵀ` of `G + D_α`,
/// so that `M' = W (G V G) W` shares eigenvalues with the pencil and maps
/// back via `b = W u`. Shares no factorization or eigensolver code with
/// [`fit`]; intended for cross-validation of results, not for speed.
pub fn oracle_fit(
    data: &MFDataset,
    alpha: &AlphaVector,
    k: usize,
) -> Result<RemfpcaModel, FitError> {
    let prep = Preparation::build(data, alpha, k)?;
    let w = prep.whitener_from_spectral()?;
    let m = symmetrize(&w * &prep.gvg * &w);
    let (eigenvalues, eigenvectors) = jacobi_eigen(&m)?;
    let components = &w * eigenvectors;
    prep.finish(eigenvalues, components, k)
}

/// Convenience pipeline for scale-heterogeneous variables: estimate the
/// variance-equalizing weights, fit on the rescaled data, and remember the
/// weights so that scoring and reconstruction accept raw-scale data.
pub fn fit_weighted(
    data: &MFDataset,
    alpha: &AlphaVector,
    k: usize,
) -> Result<RemfpcaModel, FitError> {
    let weights = data.rescale_weights()?;
    let scaled = data.apply_weights(&weights)?;
    let mut model = fit(&scaled, alpha, k)?;
    model.weights = Some(weights);
    Ok(model)
}

/// Validated inputs and shared matrices for both fitting routes.
struct Preparation {
    bases: Arc<MultiBasis>,
    alpha: AlphaVector,
    mean: DVector<f64>,
    /// `G V G`, symmetrized.
    gvg: DMatrix<f64>,
    /// `G + D_α`.
    lhs: DMatrix<f64>,
    n: usize,
}

impl Preparation {
    fn build(data: &MFDataset, alpha: &AlphaVector, k: usize) -> Result<Self, FitError> {
        let bases = Arc::clone(data.bases());
        if alpha.len() != bases.n_vars() {
            return Err(FitError::AlphaLength {
                expected: bases.n_vars(),
                got: alpha.len(),
            });
        }
        let n = data.n_samples();
        let max_k = n.min(bases.total_dim());
        if k == 0 || k > max_k {
            return Err(FitError::InvalidComponentCount {
                requested: k,
                max: max_k,
            });
        }
        let v = data.covariance()?;
        let (_, mean) = data.center();
        let g = bases.gram();
        let gvg = symmetrize(g * v * g);
        let lhs = bases.gram_plus_penalty(alpha.as_slice())?;
        Ok(Self {
            bases,
            alpha: alpha.clone(),
            mean,
            gvg,
            lhs,
            n,
        })
    }

    /// One diagonal-jitter retry before giving up on a factorization.
    fn jittered(&self) -> DMatrix<f64> {
        let d = self.lhs.nrows();
        let jitter = 1e-10 * self.lhs.trace() / d as f64;
        let mut out = self.lhs.clone();
        for i in 0..d {
            out[(i, i)] += jitter;
        }
        out
    }

    /// `S = L⁻¹` with `L Lᵀ = G + D_α`.
    fn whitener_from_cholesky(&self) -> Result<DMatrix<f64>, FitError> {
        let chol = Cholesky::new(self.lhs.clone())
            .or_else(|| Cholesky::new(self.jittered()))
            .ok_or(FitError::NotPositiveDefinite)?;
        let l = chol.unpack();
        let identity = DMatrix::identity(self.lhs.nrows(), self.lhs.ncols());
        l.solve_lower_triangular(&identity)
            .ok_or(FitError::NotPositiveDefinite)
    }

    /// `W = Q Λ^{-1/2} Qᵀ` from a Jacobi eigendecomposition of `G + D_α`.
    fn whitener_from_spectral(&self) -> Result<DMatrix<f64>, FitError> {
        let spectral = |m: &DMatrix<f64>| -> Result<Option<DMatrix<f64>>, FitError> {
            let (values, q) = jacobi_eigen(m)?;
            if values.min() <= 0.0 {
                return Ok(None);
            }
            let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |r, c| {
                q[(r, c)] / values[c].sqrt()
            });
            Ok(Some(symmetrize(scaled * q.transpose())))
        };
        if let Some(w) = spectral(&self.lhs)? {
            return Ok(w);
        }
        spectral(&self.jittered())?.ok_or(FitError::NotPositiveDefinite)
    }

    /// Sort descending, clamp, fix signs, truncate to `k`.
    fn finish(
        self,
        eigenvalues: DVector<f64>,
        components: DMatrix<f64>,
        k: usize,
    ) -> Result<RemfpcaModel, FitError> {
        let d = eigenvalues.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| {
            eigenvalues[j]
                .total_cmp(&eigenvalues[i])
                .then(i.cmp(&j))
        });
        let mut values = DVector::zeros(k);
        let mut vectors = DMatrix::zeros(components.nrows(), k);
        for (out, &src) in order.iter().take(k).enumerate() {
            values[out] = eigenvalues[src];
            vectors.set_column(out, &components.column(src));
        }
        let leading = values.max();
        let threshold = 1e-12 * leading.max(0.0);
        for l in 0..k {
            if !(values[l] > threshold) {
                values[l] = 0.0;
            }
        }
        let gram = self.bases.gram();
        for mut column in vectors.column_iter_mut() {
            let image = gram * &column;
            let mut best = 0;
            for i in 1..image.len() {
                if image[i].abs() > image[best].abs() {
                    best = i;
                }
            }
            if image[best] < 0.0 {
                column.neg_mut();
            }
        }
        Ok(RemfpcaModel {
            bases: self.bases,
            alpha: self.alpha,
            weights: None,
            mean: self.mean,
            eigenvalues: values,
            components: vectors,
            n_fitted: self.n,
        })
    }
}

impl RemfpcaModel {
    /// Rebuild a model from stored parts (deserialization path).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        bases: Arc<MultiBasis>,
        alpha: AlphaVector,
        weights: Option<Vec<f64>>,
        mean: DVector<f64>,
        eigenvalues: DVector<f64>,
        components: DMatrix<f64>,
        n_fitted: usize,
    ) -> Result<Self, FitError> {
        if alpha.len() != bases.n_vars() {
            return Err(FitError::AlphaLength {
                expected: bases.n_vars(),
                got: alpha.len(),
            });
        }
        if let Some(w) = &weights {
            if w.len() != bases.n_vars() {
                return Err(FitError::ShapeMismatch {
                    what: "weights",
                    expected: bases.n_vars(),
                    got: w.len(),
                });
            }
        }
        if mean.len() != bases.total_dim() {
            return Err(FitError::ShapeMismatch {
                what: "mean coefficients",
                expected: bases.total_dim(),
                got: mean.len(),
            });
        }
        if components.nrows() != bases.total_dim() {
            return Err(FitError::ShapeMismatch {
                what: "component rows",
                expected: bases.total_dim(),
                got: components.nrows(),
            });
        }
        if components.ncols() != eigenvalues.len() {
            return Err(FitError::ShapeMismatch {
                what: "eigenvalues",
                expected: components.ncols(),
                got: eigenvalues.len(),
            });
        }
        Ok(Self {
            bases,
            alpha,
            weights,
            mean,
            eigenvalues,
            components,
            n_fitted,
        })
    }

    pub fn bases(&self) -> &Arc<MultiBasis> {
        &self.bases
    }

    pub fn alpha(&self) -> &AlphaVector {
        &self.alpha
    }

    /// Variance-equalizing weights, when the model was fitted on rescaled
    /// data ([`fit_weighted`]).
    pub fn rescale_weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Mean coefficient vector of the (possibly rescaled) training data.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// α-normalized components, one stacked coefficient vector per column.
    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn n_fitted(&self) -> usize {
        self.n_fitted
    }

    /// `‖ Bᵀ (G + D_α) B − I ‖_∞` — zero in exact arithmetic.
    pub fn alpha_orthonormality_error(&self) -> f64 {
        let lhs = self
            .bases
            .gram_plus_penalty(self.alpha.as_slice())
            .expect("alpha was validated at fit time");
        let mut product = self.components.transpose() * lhs * &self.components;
        for i in 0..product.ncols() {
            product[(i, i)] -= 1.0;
        }
        product.amax()
    }

    /// `‖ψ_m‖_H = √(b_mᵀ G b_m)` for every component.
    pub fn h_norms(&self) -> DVector<f64> {
        let gram = self.bases.gram();
        DVector::from_fn(self.n_components(), |m, _| {
            let b = self.components.column(m);
            (b.transpose() * gram * b)[(0, 0)].max(0.0).sqrt()
        })
    }

    /// Bring raw-scale data into the space the model was fitted in
    /// (apply stored weights, if any).
    fn to_model_scale(&self, data: &MFDataset) -> Result<MFDataset, FitError> {
        if data.bases().as_ref() != self.bases.as_ref() {
            return Err(FitError::DatasetBasisMismatch);
        }
        match &self.weights {
            Some(w) => Ok(data.apply_weights(w)?),
            None => Ok(data.clone()),
        }
    }

    /// Principal component scores `⟨x_i − x̄, ψ_m⟩_H`, one row per sample.
    pub fn scores(&self, data: &MFDataset) -> Result<DMatrix<f64>, FitError> {
        let scaled = self.to_model_scale(data)?;
        let mut centered = scaled.coeffs().clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.bases.gram() * &self.components)
    }

    /// Truncated Karhunen–Loève reconstruction with the first `j`
    /// components, returned on the raw scale of the input data.
    pub fn reconstruct(&self, data: &MFDataset, j: usize) -> Result<MFDataset, FitError> {
        if j == 0 || j > self.n_components() {
            return Err(FitError::TruncationTooLarge {
                requested: j,
                available: self.n_components(),
            });
        }
        let scores = self.scores(data)?;
        let truncated_scores = scores.columns(0, j);
        let truncated_components = self.components.columns(0, j);
        let mut coeffs = truncated_scores * truncated_components.transpose();
        for mut row in coeffs.row_iter_mut() {
            row += self.mean.transpose();
        }
        if let Some(w) = &self.weights {
            for (variable, &weight) in w.iter().enumerate() {
                let block = self.bases.block(variable);
                let undo = 1.0 / weight.sqrt();
                for c in block {
                    for r in 0..coeffs.nrows() {
                        coeffs[(r, c)] *= undo;
                    }
                }
            }
        }
        let mut out = MFDataset::new(Arc::clone(&self.bases), coeffs)?;
        if let Some(labels) = data.labels() {
            out = out.with_labels(labels.to_vec())?;
        }
        if let Some(ids) = data.sample_ids() {
            out = out.with_sample_ids(ids.to_vec())?;
        }
        Ok(out)
    }

    /// Component functions evaluated per variable: entry `j` of the result
    /// holds `ψ_m^{(j)}(points[j])` with one column per component.
    pub fn eval_pcs(&self, points: &[Vec<f64>]) -> Result<Vec<DMatrix<f64>>, FitError> {
        if points.len() != self.bases.n_vars() {
            return Err(FitError::PointSetCount {
                expected: self.bases.n_vars(),
                got: points.len(),
            });
        }
        let mut out = Vec::with_capacity(points.len());
        for (j, pts) in points.iter().enumerate() {
            let phi = self.bases.system(j).eval(pts)?;
            let block = self.bases.block(j);
            let rows = self.components.rows(block.start, block.len());
            out.push(phi * rows);
        }
        Ok(out)
    }

    /// Like [`eval_pcs`], but with every component divided by its `‖·‖_H`
    /// norm, giving unit-norm functions regardless of α.
    pub fn eval_pcs_normalized(&self, points: &[Vec<f64>]) -> Result<Vec<DMatrix<f64>>, FitError> {
        let norms = self.h_norms();
        let mut evaluated = self.eval_pcs(points)?;
        for matrix in &mut evaluated {
            for (m, mut column) in matrix.column_iter_mut().enumerate() {
                if norms[m] > 0.0 {
                    column /= norms[m];
                }
            }
        }
        Ok(evaluated)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Cyclic Jacobi eigensolver for symmetric matrices: eigenvalues unsorted,
/// eigenvectors in the matching columns. Kept dependency-free on purpose —
/// it is the independent half of the fit/oracle cross-check.
fn jacobi_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>), FitError> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    if n == 1 {
        return Ok((DVector::from_element(1, a[(0, 0)]), v));
    }
    let frobenius = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * frobenius {
            return Ok((DVector::from_fn(n, |i, _| a[(i, i)]), v));
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = c * aip - s * aiq;
                    a[(i, q)] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[(p, i)];
                    let aqi = a[(q, i)];
                    a[(p, i)] = c * api - s * aqi;
                    a[(q, i)] = s * api + c * aqi;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
    }
    Err(FitError::EigenFailure)
}
