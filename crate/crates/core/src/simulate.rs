//! Synthetic bivariate functional data from a truncated Karhunen–Loève
//! expansion.
//!
//! Each sample on `[0, 1]` is
//!
//! ```text
//!     X_i = μ_{c_i} + Σ_{m=1}^{M} ρ_{i,m} ψ_m,   ρ_{i,m} ~ N(0, λ_m),
//! ```
//!
//! with eigenvalues `λ_m = (2θ / ((2m−1)π))²` and bivariate components
//! `ψ_m = (sin(mπt), sin((2m−1)πt/2))`, an orthonormal system in the product
//! space (each coordinate contributes 1/2 to the squared norm). Observations
//! are the samples on per-variable grids plus iid bivariate Gaussian noise
//! with marginal deviations `σ₁, σ₂` and correlation `ρ`. Optional cluster
//! means come from three fixed weight combinations of `ψ₁, ψ₂, ψ₃`, with the
//! samples split into three equal blocks.
//!
//! The random stream (ChaCha12, seeded from the config) is drawn in a frozen
//! order — all scores sample-major, then per sample and grid index one noise
//! pair — so a given seed reproduces the same data forever.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSystem, Interval, MultiBasis};
use crate::fundata::{DataError, GridObservations, MFDataset, VariableGrid};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("sample count must be at least 1, got {0}")]
    InvalidSamples(usize),
    #[error("truncation order must be at least 1, got {0}")]
    InvalidTruncation(usize),
    #[error("theta must be positive and finite, got {0}")]
    InvalidTheta(f64),
    #[error("noise deviations must be finite and nonnegative, got {0}")]
    InvalidSigma(f64),
    #[error("noise correlation must lie strictly inside (-1, 1), got {0}")]
    InvalidRho(f64),
    #[error("grids need at least 2 points, got {0}")]
    InvalidGrid(usize),
    #[error("cluster means need a sample count divisible by 3, got {0}")]
    ClusterCount(usize),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Weights defining the three cluster means as combinations of `ψ₁, ψ₂, ψ₃`:
/// column `c` gives mean `Σ_m WEIGHTS[m][c] · ψ_{m+1}`.
pub const CLUSTER_WEIGHTS: [[f64; 3]; 3] = [[4.0, 0.0, 4.0], [4.0, 4.0, 0.0], [0.0, 4.0, 4.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_samples: usize,
    /// Truncation order `M` of the Karhunen–Loève expansion.
    pub truncation: usize,
    /// Scale of the eigenvalue sequence `λ_m = (2θ/((2m−1)π))²`.
    pub theta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Correlation of the two noise coordinates at each grid point.
    pub rho: f64,
    /// Grid sizes (equally spaced on `[0, 1]`, endpoints included).
    pub grid1: usize,
    pub grid2: usize,
    /// Add the three-cluster mean structure (`n_samples` must divide by 3).
    pub cluster_means: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            truncation: 100,
            theta: 1.0,
            sigma1: 0.5,
            sigma2: 0.5,
            rho: 0.4,
            grid1: 100,
            grid2: 100,
            cluster_means: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_samples == 0 {
            return Err(SimError::InvalidSamples(self.n_samples));
        }
        if self.truncation == 0 {
            return Err(SimError::InvalidTruncation(self.truncation));
        }
        if !self.theta.is_finite() || self.theta <= 0.0 {
            return Err(SimError::InvalidTheta(self.theta));
        }
        for sigma in [self.sigma1, self.sigma2] {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(SimError::InvalidSigma(sigma));
            }
        }
        if !self.rho.is_finite() || self.rho.abs() >= 1.0 {
            return Err(SimError::InvalidRho(self.rho));
        }
        for grid in [self.grid1, self.grid2] {
            if grid < 2 {
                return Err(SimError::InvalidGrid(grid));
            }
        }
        if self.cluster_means && self.n_samples % 3 != 0 {
            return Err(SimError::ClusterCount(self.n_samples));
        }
        Ok(())
    }
}

/// `λ_m = (2θ / ((2m−1)π))²` for `m = 1, 2, …`.
pub fn kl_eigenvalue(theta: f64, m: usize) -> f64 {
    let denom = (2 * m - 1) as f64 * std::f64::consts::PI;
    (2.0 * theta / denom).powi(2)
}

/// First coordinate of `ψ_m`: `sin(mπt)`.
pub fn psi_1(m: usize, t: f64) -> f64 {
    (m as f64 * std::f64::consts::PI * t).sin()
}

/// Second coordinate of `ψ_m`: `sin((2m−1)πt/2)`.
pub fn psi_2(m: usize, t: f64) -> f64 {
    ((2 * m - 1) as f64 * std::f64::consts::PI * t / 2.0).sin()
}

/// Ground truth accompanying a simulated dataset.
#[derive(Debug, Clone)]
pub struct SimTruth {
    /// `λ_1 … λ_M`.
    pub lambdas: Vec<f64>,
    /// Cluster labels (block order `0…0 1…1 2…2`), when means are on.
    pub labels: Option<Vec<usize>>,
    /// The components `ψ_1 … ψ_M` as rows of a dataset over the exact
    /// sine / half-wave-sine bases (coefficient `1/√2` at position `m` of
    /// each block).
    pub components: MFDataset,
    /// True scores `ρ_{i,m}`, one row per sample.
    pub scores: DMatrix<f64>,
    pub config: SimConfig,
}

/// Exact basis pair for the truth: `Sine(M)` for the first coordinate,
/// `HalfWaveSine(M)` for the second, both on `[0, 1]`.
pub fn truth_bases(truncation: usize) -> Result<MultiBasis, BasisError> {
    let domain = Interval::new(0.0, 1.0).expect("constant interval");
    MultiBasis::new(vec![
        BasisSystem::sine(domain, truncation)?,
        BasisSystem::half_wave_sine(domain, truncation)?,
    ])
}

/// Draw a dataset and its ground truth from `config`.
pub fn generate(config: &SimConfig) -> Result<(GridObservations, SimTruth), SimError> {
    config.validate()?;
    let n = config.n_samples;
    let m_max = config.truncation;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    let lambdas: Vec<f64> = (1..=m_max).map(|m| kl_eigenvalue(config.theta, m)).collect();
    let std_devs: Vec<f64> = lambdas.iter().map(|l| l.sqrt()).collect();

    // 1. Scores, sample-major.
    let mut scores = DMatrix::zeros(n, m_max);
    for i in 0..n {
        for m in 0..m_max {
            let z: f64 = rng.sample(StandardNormal);
            scores[(i, m)] = z * std_devs[m];
        }
    }

    // 2. Noise: one (z₁, z₂) pair per sample and grid index, longest grid
    //    first, so the stream layout does not depend on which grid is larger.
    let domain = Interval::new(0.0, 1.0).expect("constant interval");
    let grid1 = domain.equispaced(config.grid1);
    let grid2 = domain.equispaced(config.grid2);
    let mut eps1 = DMatrix::zeros(n, config.grid1);
    let mut eps2 = DMatrix::zeros(n, config.grid2);
    let cross = (1.0 - config.rho * config.rho).sqrt();
    for i in 0..n {
        for k in 0..config.grid1.max(config.grid2) {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            if k < config.grid1 {
                eps1[(i, k)] = config.sigma1 * z1;
            }
            if k < config.grid2 {
                eps2[(i, k)] = config.sigma2 * (config.rho * z1 + cross * z2);
            }
        }
    }

    // 3. Structure on the grids.
    let psi1 = DMatrix::from_fn(config.grid1, m_max, |k, m| psi_1(m + 1, grid1[k]));
    let psi2 = DMatrix::from_fn(config.grid2, m_max, |k, m| psi_2(m + 1, grid2[k]));
    let mut values1 = &scores * psi1.transpose() + eps1;
    let mut values2 = &scores * psi2.transpose() + eps2;

    // 4. Cluster means.
    let labels = if config.cluster_means {
        let per_block = n / 3;
        let labels: Vec<usize> = (0..n).map(|i| i / per_block).collect();
        for (i, &label) in labels.iter().enumerate() {
            for k in 0..config.grid1 {
                let mut mean = 0.0;
                for m in 0..3 {
                    mean += CLUSTER_WEIGHTS[m][label] * psi_1(m + 1, grid1[k]);
                }
                values1[(i, k)] += mean;
            }
            for k in 0..config.grid2 {
                let mut mean = 0.0;
                for m in 0..3 {
                    mean += CLUSTER_WEIGHTS[m][label] * psi_2(m + 1, grid2[k]);
                }
                values2[(i, k)] += mean;
            }
        }
        Some(labels)
    } else {
        None
    };

    let observations = GridObservations::from_grids(vec![
        VariableGrid {
            grid: grid1,
            values: values1,
        },
        VariableGrid {
            grid: grid2,
            values: values2,
        },
    ])?;

    // ψ_m in the exact bases: √2·sin(mπt)·(1/√2) = sin(mπt), same for the
    // half-wave block.
    let bases = std::sync::Arc::new(truth_bases(m_max)?);
    let mut component_coeffs = DMatrix::zeros(m_max, 2 * m_max);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for m in 0..m_max {
        component_coeffs[(m, m)] = inv_sqrt2;
        component_coeffs[(m, m_max + m)] = inv_sqrt2;
    }
    let components = MFDataset::new(bases, component_coeffs)?;

    let truth = SimTruth {
        lambdas,
        labels: labels.clone(),
        components,
        scores,
        config: config.clone(),
    };
    Ok((observations, truth))
}
