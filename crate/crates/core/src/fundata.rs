//! Multivariate functional datasets in coefficient form.
//!
//! Raw data arrive as samples of each variable on a (per-variable) grid;
//! [`smooth_to_coeffs`] projects them onto a [`MultiBasis`] by per-variable
//! least squares, after which every sample is one row of a stacked
//! coefficient matrix. All downstream quantities — inner products, the
//! coefficient covariance, variance-equalizing weights — are exact matrix
//! expressions in that representation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{BasisError, MultiBasis};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("expected {expected} variable(s) to match the basis, got {got}")]
    VariableCount { expected: usize, got: usize },
    #[error("variable {variable} has {got} samples, expected {expected}")]
    SampleCount {
        variable: usize,
        expected: usize,
        got: usize,
    },
    #[error("dataset has no samples")]
    EmptySamples,
    #[error("variable {variable}: grid must be strictly increasing")]
    UnsortedGrid { variable: usize },
    #[error(
        "variable {variable}: {points} grid point(s) cannot determine {dim} basis coefficients"
    )]
    Underdetermined {
        variable: usize,
        points: usize,
        dim: usize,
    },
    #[error("variable {variable}: design matrix rank {rank} < basis dimension {dim}")]
    RankDeficient {
        variable: usize,
        rank: usize,
        dim: usize,
    },
    #[error("variable {variable}: {source}")]
    Basis {
        variable: usize,
        source: BasisError,
    },
    #[error("coefficient matrix has {got} column(s), basis expects {expected}")]
    CoefficientWidth { expected: usize, got: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("variable {variable} has zero integrated variance; it cannot be rescaled")]
    DegenerateVariable { variable: usize },
    #[error("sample index {index} out of range for {n} samples")]
    SampleIndex { index: usize, n: usize },
}

/// One variable observed on a common grid: `values[(i, k)]` is sample `i`
/// at grid point `grid[k]`.
#[derive(Debug, Clone)]
pub struct VariableGrid {
    pub grid: Vec<f64>,
    pub values: DMatrix<f64>,
}

/// Discretely observed multivariate functional data, prior to smoothing.
#[derive(Debug, Clone)]
pub struct GridObservations {
    sample_ids: Vec<String>,
    variables: Vec<VariableGrid>,
}

impl GridObservations {
    pub fn new(sample_ids: Vec<String>, variables: Vec<VariableGrid>) -> Result<Self, DataError> {
        let n = sample_ids.len();
        if n == 0 {
            return Err(DataError::EmptySamples);
        }
        for (j, var) in variables.iter().enumerate() {
            if var.values.nrows() != n {
                return Err(DataError::SampleCount {
                    variable: j,
                    expected: n,
                    got: var.values.nrows(),
                });
            }
            if var.grid.len() != var.values.ncols() {
                return Err(DataError::LengthMismatch {
                    what: "grid points vs value columns",
                    expected: var.values.ncols(),
                    got: var.grid.len(),
                });
            }
            if var.grid.windows(2).any(|w| !(w[1] > w[0])) || var.grid.iter().any(|t| !t.is_finite())
            {
                return Err(DataError::UnsortedGrid { variable: j });
            }
        }
        Ok(Self {
            sample_ids,
            variables,
        })
    }

    /// Convenience constructor with generated sample ids `s0, s1, …`.
    pub fn from_grids(variables: Vec<VariableGrid>) -> Result<Self, DataError> {
        let n = variables.first().map_or(0, |v| v.values.nrows());
        let ids = (0..n).map(|i| format!("s{i}")).collect();
        Self::new(ids, variables)
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn variables(&self) -> &[VariableGrid] {
        &self.variables
    }
}

/// Smoothed multivariate functional dataset: sample `i` is row `i` of
/// `coeffs`, with the columns of variable `j` occupying `bases.block(j)`.
#[derive(Debug, Clone)]
pub struct MFDataset {
    bases: Arc<MultiBasis>,
    coeffs: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    sample_ids: Option<Vec<String>>,
}

impl MFDataset {
    pub fn new(bases: Arc<MultiBasis>, coeffs: DMatrix<f64>) -> Result<Self, DataError> {
        if coeffs.ncols() != bases.total_dim() {
            return Err(DataError::CoefficientWidth {
                expected: bases.total_dim(),
                got: coeffs.ncols(),
            });
        }
        if coeffs.nrows() == 0 {
            return Err(DataError::EmptySamples);
        }
        Ok(Self {
            bases,
            coeffs,
            labels: None,
            sample_ids: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self, DataError> {
        if labels.len() != self.n_samples() {
            return Err(DataError::LengthMismatch {
                what: "labels",
                expected: self.n_samples(),
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_sample_ids(mut self, ids: Vec<String>) -> Result<Self, DataError> {
        if ids.len() != self.n_samples() {
            return Err(DataError::LengthMismatch {
                what: "sample ids",
                expected: self.n_samples(),
                got: ids.len(),
            });
        }
        self.sample_ids = Some(ids);
        Ok(self)
    }

    pub fn bases(&self) -> &Arc<MultiBasis> {
        &self.bases
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn sample_ids(&self) -> Option<&[String]> {
        self.sample_ids.as_deref()
    }

    pub fn n_samples(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.bases.n_vars()
    }

    /// Restriction to a subset of sample indices (labels and ids follow).
    pub fn select(&self, indices: &[usize]) -> Result<Self, DataError> {
        for &i in indices {
            if i >= self.n_samples() {
                return Err(DataError::SampleIndex {
                    index: i,
                    n: self.n_samples(),
                });
            }
        }
        if indices.is_empty() {
            return Err(DataError::EmptySamples);
        }
        let coeffs = DMatrix::from_fn(indices.len(), self.coeffs.ncols(), |r, c| {
            self.coeffs[(indices[r], c)]
        });
        Ok(Self {
            bases: Arc::clone(&self.bases),
            coeffs,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            sample_ids: self
                .sample_ids
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i].clone()).collect()),
        })
    }

    /// Column means of the coefficient matrix (the mean function's
    /// coefficients) and the centered dataset.
    pub fn center(&self) -> (Self, DVector<f64>) {
        let n = self.n_samples() as f64;
        let mean = DVector::from_fn(self.coeffs.ncols(), |c, _| self.coeffs.column(c).sum() / n);
        let mut centered = self.coeffs.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        (
            Self {
                bases: Arc::clone(&self.bases),
                coeffs: centered,
                labels: self.labels.clone(),
                sample_ids: self.sample_ids.clone(),
            },
            mean,
        )
    }

    /// Inner product `⟨x_i, b⟩_H = c_iᵀ G b` of sample `i` with the function
    /// whose stacked coefficients are `b`.
    pub fn inner_h(&self, i: usize, b: &DVector<f64>) -> Result<f64, DataError> {
        if i >= self.n_samples() {
            return Err(DataError::SampleIndex {
                index: i,
                n: self.n_samples(),
            });
        }
        if b.len() != self.coeffs.ncols() {
            return Err(DataError::LengthMismatch {
                what: "coefficient vector",
                expected: self.coeffs.ncols(),
                got: b.len(),
            });
        }
        Ok((self.coeffs.row(i) * self.bases.gram() * b)[(0, 0)])
    }

    /// Squared norm `‖x_i‖²_H = c_iᵀ G c_i`.
    pub fn squared_norm(&self, i: usize) -> Result<f64, DataError> {
        let row = self
            .coeffs
            .row(i.min(self.n_samples().saturating_sub(1)))
            .transpose();
        if i >= self.n_samples() {
            return Err(DataError::SampleIndex {
                index: i,
                n: self.n_samples(),
            });
        }
        self.inner_h(i, &row)
    }

    /// Sample covariance of the coefficient rows,
    /// `V = (1/(n−1)) Bᵀ (I − J/n) B`.
    pub fn covariance(&self) -> Result<DMatrix<f64>, DataError> {
        let n = self.n_samples();
        if n < 2 {
            return Err(DataError::InsufficientSamples { needed: 2, got: n });
        }
        let (centered, _) = self.center();
        let mut v = centered.coeffs.transpose() * &centered.coeffs;
        v /= (n - 1) as f64;
        // Exact symmetry survives the product in theory; enforce it so the
        // eigensolvers downstream never see a stray asymmetric ulp.
        let vt = v.transpose();
        v = (v + vt) * 0.5;
        Ok(v)
    }

    /// Variance-equalizing weights `w_j = 1 / tr(Σ_j G_j)`, the reciprocal
    /// integrated pointwise variance of each variable.
    pub fn rescale_weights(&self) -> Result<Vec<f64>, DataError> {
        let v = self.covariance()?;
        let mut weights = Vec::with_capacity(self.n_vars());
        for j in 0..self.n_vars() {
            let block = self.bases.block(j);
            let d = block.len();
            let sigma = v.view((block.start, block.start), (d, d));
            let gram = self.bases.system(j).gram();
            let mut integrated = 0.0;
            for a in 0..d {
                for b in 0..d {
                    integrated += sigma[(a, b)] * gram[(b, a)];
                }
            }
            if !(integrated > 0.0) || !integrated.is_finite() {
                return Err(DataError::DegenerateVariable { variable: j });
            }
            weights.push(1.0 / integrated);
        }
        Ok(weights)
    }

    /// Scale each variable's coefficient block by `√w_j`, so variable `j`
    /// has integrated variance `w_j · tr(Σ_j G_j)`.
    pub fn apply_weights(&self, weights: &[f64]) -> Result<Self, DataError> {
        if weights.len() != self.n_vars() {
            return Err(DataError::LengthMismatch {
                what: "weights",
                expected: self.n_vars(),
                got: weights.len(),
            });
        }
        let mut coeffs = self.coeffs.clone();
        for (j, &w) in weights.iter().enumerate() {
            let block = self.bases.block(j);
            let scale = w.sqrt();
            for c in block {
                for r in 0..coeffs.nrows() {
                    coeffs[(r, c)] *= scale;
                }
            }
        }
        Ok(Self {
            bases: Arc::clone(&self.bases),
            coeffs,
            labels: self.labels.clone(),
            sample_ids: self.sample_ids.clone(),
        })
    }

    /// Evaluate every sample of one variable at `points` (rows = samples).
    pub fn eval_variable(
        &self,
        variable: usize,
        points: &[f64],
    ) -> Result<DMatrix<f64>, DataError> {
        let phi = self
            .bases
            .system(variable)
            .eval(points)
            .map_err(|source| DataError::Basis { variable, source })?;
        let block = self.bases.block(variable);
        let coeffs = self.coeffs.columns(block.start, block.len());
        Ok(coeffs * phi.transpose())
    }
}

/// Project gridded observations onto `bases` by per-variable least squares.
///
/// Every variable needs at least as many grid points as basis functions and
/// a design matrix of full column rank; otherwise the offending variable is
/// named in the error.
pub fn smooth_to_coeffs(
    obs: &GridObservations,
    bases: Arc<MultiBasis>,
) -> Result<MFDataset, DataError> {
    if obs.n_vars() != bases.n_vars() {
        return Err(DataError::VariableCount {
            expected: bases.n_vars(),
            got: obs.n_vars(),
        });
    }
    let n = obs.n_samples();
    let mut coeffs = DMatrix::zeros(n, bases.total_dim());
    for (j, var) in obs.variables().iter().enumerate() {
        let dim = bases.system(j).dim();
        let points = var.grid.len();
        if points < dim {
            return Err(DataError::Underdetermined {
                variable: j,
                points,
                dim,
            });
        }
        let design = bases
            .system(j)
            .eval(&var.grid)
            .map_err(|source| DataError::Basis { variable: j, source })?;
        let svd = design.clone().svd(true, true);
        let sv_max = svd.singular_values.max();
        let eps = sv_max * f64::EPSILON * points.max(dim) as f64;
        let rank = svd.rank(eps);
        if rank < dim {
            return Err(DataError::RankDeficient {
                variable: j,
                rank,
                dim,
            });
        }
        let solved = svd
            .solve(&var.values.transpose(), eps)
            .expect("u and v_t were requested");
        coeffs
            .view_mut((0, bases.block(j).start), (n, dim))
            .copy_from(&solved.transpose());
    }
    let ds = MFDataset::new(bases, coeffs)?;
    ds.with_sample_ids(obs.sample_ids().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{simpson_rule, BasisSystem, Interval};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn unit() -> Interval {
        Interval::new(0.0, 1.0).unwrap()
    }

    fn two_var_basis() -> Arc<MultiBasis> {
        Arc::new(
            MultiBasis::new(vec![
                BasisSystem::bspline(unit(), 6, 4).unwrap(),
                BasisSystem::sine(unit(), 4).unwrap(),
            ])
            .unwrap(),
        )
    }

    fn random_coeffs(rng: &mut ChaCha12Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn smoothing_recovers_exact_basis_expansions() {
        let bases = two_var_basis();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let truth = random_coeffs(&mut rng, 5, bases.total_dim());
        let mut variables = Vec::new();
        for j in 0..bases.n_vars() {
            let grid = unit().equispaced(25);
            let phi = bases.system(j).eval(&grid).unwrap();
            let block = bases.block(j);
            let values = truth.columns(block.start, block.len()) * phi.transpose();
            let values = DMatrix::from_iterator(5, 25, values.iter().copied());
            variables.push(VariableGrid { grid, values });
        }
        let obs = GridObservations::from_grids(variables).unwrap();
        let ds = smooth_to_coeffs(&obs, Arc::clone(&bases)).unwrap();
        for r in 0..5 {
            for c in 0..bases.total_dim() {
                assert_relative_eq!(ds.coeffs()[(r, c)], truth[(r, c)], epsilon = 1e-9);
            }
        }
        assert_eq!(ds.sample_ids().unwrap()[0], "s0");
    }

    #[test]
    fn smoothing_rejects_underdetermined_variable() {
        let bases = two_var_basis();
        let variables = vec![
            VariableGrid {
                grid: unit().equispaced(5), // 5 points for 6 basis functions
                values: DMatrix::zeros(3, 5),
            },
            VariableGrid {
                grid: unit().equispaced(10),
                values: DMatrix::zeros(3, 10),
            },
        ];
        let obs = GridObservations::from_grids(variables).unwrap();
        match smooth_to_coeffs(&obs, bases) {
            Err(DataError::Underdetermined { variable: 0, points: 5, dim: 6 }) => {}
            other => panic!("expected underdetermined error, got {other:?}"),
        }
    }

    #[test]
    fn smoothing_rejects_rank_deficient_design() {
        // Enough points, but all inside the first knot span of an order-4,
        // dimension-6 B-spline: the last two basis functions vanish there.
        let bases = Arc::new(
            MultiBasis::new(vec![BasisSystem::bspline(unit(), 6, 4).unwrap()]).unwrap(),
        );
        let grid: Vec<f64> = (0..8).map(|k| 0.03 * k as f64).collect();
        let obs = GridObservations::from_grids(vec![VariableGrid {
            grid,
            values: DMatrix::zeros(2, 8),
        }])
        .unwrap();
        match smooth_to_coeffs(&obs, bases) {
            Err(DataError::RankDeficient { variable: 0, dim: 6, .. }) => {}
            other => panic!("expected rank-deficient error, got {other:?}"),
        }
    }

    #[test]
    fn grid_must_be_strictly_increasing() {
        let err = GridObservations::from_grids(vec![VariableGrid {
            grid: vec![0.0, 0.5, 0.5, 1.0],
            values: DMatrix::zeros(2, 4),
        }]);
        assert!(matches!(err, Err(DataError::UnsortedGrid { variable: 0 })));
    }

    #[test]
    fn centering_subtracts_column_means() {
        let bases = two_var_basis();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let ds = MFDataset::new(Arc::clone(&bases), random_coeffs(&mut rng, 6, 10)).unwrap();
        let (centered, mean) = ds.center();
        for c in 0..10 {
            assert_relative_eq!(
                mean[c],
                ds.coeffs().column(c).sum() / 6.0,
                max_relative = 1e-14
            );
            assert_relative_eq!(centered.coeffs().column(c).sum(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn opposite_rows_have_zero_mean_and_variance_two() {
        // Rows +1 and −1 in a one-dimensional basis: mean 0, covariance
        // (1 + 1)/(2 − 1) = 2.
        let bases = Arc::new(
            MultiBasis::new(vec![BasisSystem::sine(unit(), 1).unwrap()]).unwrap(),
        );
        let ds = MFDataset::new(bases, DMatrix::from_row_slice(2, 1, &[1.0, -1.0])).unwrap();
        let (centered, mean) = ds.center();
        assert_eq!(mean[0], 0.0);
        assert_eq!(centered.coeffs()[(0, 0)], 1.0);
        assert_eq!(centered.coeffs()[(1, 0)], -1.0);
        let v = ds.covariance().unwrap();
        assert_relative_eq!(v[(0, 0)], 2.0, max_relative = 1e-15);
    }

    #[test]
    fn covariance_requires_two_samples() {
        let bases = two_var_basis();
        let ds = MFDataset::new(bases, DMatrix::zeros(1, 10)).unwrap();
        assert!(matches!(
            ds.covariance(),
            Err(DataError::InsufficientSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn inner_product_matches_quadrature() {
        let bases = two_var_basis();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let ds = MFDataset::new(Arc::clone(&bases), random_coeffs(&mut rng, 2, 10)).unwrap();
        let b = DVector::from_fn(10, |r, _| 0.3 * (r as f64) - 1.0);
        let direct = ds.inner_h(0, &b).unwrap();
        // Independent route: Simpson quadrature of Σ_j ∫ x_j(t) g_j(t) dt.
        let mut oracle = 0.0;
        for j in 0..bases.n_vars() {
            let (points, weights) = simpson_rule(unit(), 2001).unwrap();
            let x = ds.eval_variable(j, &points).unwrap();
            let phi = bases.system(j).eval(&points).unwrap();
            let block = bases.block(j);
            for (k, w) in weights.iter().enumerate() {
                let g: f64 = block
                    .clone()
                    .map(|c| phi[(k, c - block.start)] * b[c])
                    .sum();
                oracle += w * x[(0, k)] * g;
            }
        }
        assert_relative_eq!(direct, oracle, epsilon = 1e-8, max_relative = 1e-8);
    }

    #[test]
    fn rescaling_normalizes_integrated_variance() {
        let bases = two_var_basis();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut coeffs = random_coeffs(&mut rng, 12, 10);
        // Make the two variables live on very different scales.
        for r in 0..12 {
            for c in 0..6 {
                coeffs[(r, c)] *= 40.0;
            }
        }
        let ds = MFDataset::new(Arc::clone(&bases), coeffs).unwrap();
        let weights = ds.rescale_weights().unwrap();
        let scaled = ds.apply_weights(&weights).unwrap();
        let v = scaled.covariance().unwrap();
        for j in 0..2 {
            let block = bases.block(j);
            let d = block.len();
            let sigma = v.view((block.start, block.start), (d, d));
            let gram = bases.system(j).gram();
            let mut integrated = 0.0;
            for a in 0..d {
                for b in 0..d {
                    integrated += sigma[(a, b)] * gram[(b, a)];
                }
            }
            assert_relative_eq!(integrated, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_variable_cannot_be_rescaled() {
        let bases = two_var_basis();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut coeffs = random_coeffs(&mut rng, 4, 10);
        for r in 0..4 {
            for c in 0..6 {
                coeffs[(r, c)] = (c as f64) * 0.1; // identical across samples
            }
        }
        let ds = MFDataset::new(bases, coeffs).unwrap();
        assert!(matches!(
            ds.rescale_weights(),
            Err(DataError::DegenerateVariable { variable: 0 })
        ));
    }

    #[test]
    fn select_restricts_rows_labels_and_ids() {
        let bases = two_var_basis();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let ds = MFDataset::new(Arc::clone(&bases), random_coeffs(&mut rng, 5, 10))
            .unwrap()
            .with_labels(vec![0, 1, 2, 1, 0])
            .unwrap()
            .with_sample_ids((0..5).map(|i| format!("id{i}")).collect())
            .unwrap();
        let sub = ds.select(&[4, 1]).unwrap();
        assert_eq!(sub.n_samples(), 2);
        assert_eq!(sub.labels().unwrap(), &[0, 1]);
        assert_eq!(sub.sample_ids().unwrap(), &["id4", "id1"]);
        assert_eq!(sub.coeffs().row(0), ds.coeffs().row(4));
        assert!(ds.select(&[5]).is_err());
        assert!(ds.select(&[]).is_err());
    }

    #[test]
    fn label_and_weight_length_validation() {
        let bases = two_var_basis();
        let ds = MFDataset::new(Arc::clone(&bases), DMatrix::zeros(3, 10)).unwrap();
        assert!(ds.clone().with_labels(vec![0, 1]).is_err());
        assert!(ds.apply_weights(&[1.0]).is_err());
        assert!(MFDataset::new(bases, DMatrix::zeros(3, 9)).is_err());
    }
}
