//! Data-driven selection of the penalty weights.
//!
//! Candidates are scored by K-fold cross-validation: fit on the training
//! part with a fixed number of components, reconstruct the held-out part,
//! and average the mean relative approximation error over folds. Fold
//! membership comes from one seeded shuffle, so a given `(data, config)`
//! always produces the same folds, the same evaluation order and the same
//! winner; score ties resolve to the candidate evaluated first, which by
//! construction is the lexicographically smallest α.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalmetrics::mrae;
use crate::fundata::{DataError, MFDataset};
use crate::model::{fit, AlphaVector, FitError};

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("cross-validation needs between 2 and {max} folds, got {folds}")]
    InvalidFolds { folds: usize, max: usize },
    #[error(
        "{folds} folds on {n} samples leave a training part of {smallest}, too small to fit"
    )]
    TrainingTooSmall {
        folds: usize,
        n: usize,
        smallest: usize,
    },
    #[error("reconstruction truncation {j} exceeds the smallest training fold capacity {max}")]
    TruncationTooLarge { j: usize, max: usize },
    #[error("candidate grid must be nonempty with finite, nonnegative values")]
    InvalidGrid,
    #[error("coordinate-wise search needs at least one sweep")]
    NoSweeps,
    #[error("every candidate failed cross-validation; last failure: {0}")]
    AllCandidatesFailed(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How the candidate grid is explored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Full Cartesian product of the grid over all variables. Exhaustive;
    /// cost grows as `grid^p`.
    FullGrid,
    /// Cyclic coordinate descent over variables, one grid line at a time.
    CoordinateWise,
    /// One shared α for every variable; a single sweep over the grid.
    SharedScalar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    /// Number of components used for the held-out reconstruction.
    pub truncation: usize,
    /// Candidate values (sorted and deduplicated internally).
    pub grid: Vec<f64>,
    pub mode: SearchMode,
    /// Sweeps of coordinate descent (ignored by the other modes).
    pub sweeps: usize,
    /// Seed of the fold-assignment shuffle.
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            truncation: 3,
            grid: default_grid(),
            mode: SearchMode::CoordinateWise,
            sweeps: 1,
            seed: 0,
        }
    }
}

/// Eleven log-spaced candidates `10⁻⁸, 10⁻⁷, …, 10²`.
pub fn default_grid() -> Vec<f64> {
    (0..11).map(|k| 10f64.powi(k - 8)).collect()
}

/// One evaluated candidate: the α vector, its per-fold mean relative errors
/// and their average (infinite when the candidate failed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvRecord {
    pub alpha: Vec<f64>,
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub alpha: AlphaVector,
    pub score: f64,
    /// Every distinct candidate in evaluation order.
    pub records: Vec<CvRecord>,
}

/// Deterministic fold assignment: indices are shuffled once with a seeded
/// generator and dealt round-robin, so fold sizes differ by at most one.
pub(crate) fn fold_assignments(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0; n];
    for (position, &index) in order.iter().enumerate() {
        assignment[index] = position % folds;
    }
    assignment
}

struct FoldSplit {
    train: MFDataset,
    test: MFDataset,
}

struct Evaluator {
    splits: Vec<FoldSplit>,
    truncation: usize,
    memo: BTreeMap<Vec<u64>, (Vec<f64>, f64)>,
    records: Vec<CvRecord>,
    last_failure: Option<String>,
}

impl Evaluator {
    /// Mean held-out MRAE of one candidate; `None` when any fold fails.
    fn score(&mut self, alpha: &[f64]) -> Option<f64> {
        let key: Vec<u64> = alpha.iter().map(|a| a.to_bits()).collect();
        if let Some((_, mean)) = self.memo.get(&key) {
            return mean.is_finite().then_some(*mean);
        }
        let alpha_vec = match AlphaVector::new(alpha.to_vec()) {
            Ok(v) => v,
            Err(e) => {
                self.remember(key, alpha, Vec::new(), f64::INFINITY, Some(e.to_string()));
                return None;
            }
        };
        let mut fold_scores = Vec::with_capacity(self.splits.len());
        for split in &self.splits {
            let result = fit(&split.train, &alpha_vec, self.truncation)
                .and_then(|model| model.reconstruct(&split.test, self.truncation))
                .map_err(|e| e.to_string())
                .and_then(|recon| {
                    mrae(&split.test, &recon)
                        .map(|r| r.mean)
                        .map_err(|e| e.to_string())
                });
            match result {
                Ok(score) => fold_scores.push(score),
                Err(message) => {
                    self.remember(key, alpha, fold_scores, f64::INFINITY, Some(message));
                    return None;
                }
            }
        }
        let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
        self.remember(key, alpha, fold_scores, mean, None);
        Some(mean)
    }

    fn remember(
        &mut self,
        key: Vec<u64>,
        alpha: &[f64],
        fold_scores: Vec<f64>,
        mean: f64,
        failure: Option<String>,
    ) {
        if let Some(message) = failure {
            self.last_failure = Some(message);
        }
        self.records.push(CvRecord {
            alpha: alpha.to_vec(),
            fold_scores: fold_scores.clone(),
            mean_score: mean,
        });
        self.memo.insert(key, (fold_scores, mean));
    }
}

/// Select penalty weights for `data` by cross-validation.
pub fn cross_validate(data: &MFDataset, config: &CvConfig) -> Result<CvOutcome, TuningError> {
    let n = data.n_samples();
    if config.folds < 2 || config.folds > n {
        return Err(TuningError::InvalidFolds {
            folds: config.folds,
            max: n,
        });
    }
    let largest_fold = n.div_ceil(config.folds);
    let smallest_train = n - largest_fold;
    if smallest_train < 2 {
        return Err(TuningError::TrainingTooSmall {
            folds: config.folds,
            n,
            smallest: smallest_train,
        });
    }
    let capacity = smallest_train.min(data.bases().total_dim());
    if config.truncation == 0 || config.truncation > capacity {
        return Err(TuningError::TruncationTooLarge {
            j: config.truncation,
            max: capacity,
        });
    }
    if config.grid.is_empty()
        || config
            .grid
            .iter()
            .any(|a| !a.is_finite() || *a < 0.0)
    {
        return Err(TuningError::InvalidGrid);
    }
    if config.mode == SearchMode::CoordinateWise && config.sweeps == 0 {
        return Err(TuningError::NoSweeps);
    }
    let mut grid = config.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let assignment = fold_assignments(n, config.folds, config.seed);
    let mut splits = Vec::with_capacity(config.folds);
    for fold in 0..config.folds {
        let test_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
        let train_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
        splits.push(FoldSplit {
            train: data.select(&train_idx)?,
            test: data.select(&test_idx)?,
        });
    }
    let mut evaluator = Evaluator {
        splits,
        truncation: config.truncation,
        memo: BTreeMap::new(),
        records: Vec::new(),
        last_failure: None,
    };

    let p = data.n_vars();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let consider = |alpha: &[f64], score: Option<f64>, best: &mut Option<(Vec<f64>, f64)>| {
        if let Some(value) = score {
            let better = match best {
                None => true,
                Some((_, current)) => value < *current,
            };
            if better {
                *best = Some((alpha.to_vec(), value));
            }
        }
    };

    match config.mode {
        SearchMode::SharedScalar => {
            for &value in &grid {
                let alpha = vec![value; p];
                let score = evaluator.score(&alpha);
                consider(&alpha, score, &mut best);
            }
        }
        SearchMode::FullGrid => {
            // Odometer over p digits, last digit fastest: candidates appear
            // in lexicographically ascending order.
            let mut digits = vec![0usize; p];
            loop {
                let alpha: Vec<f64> = digits.iter().map(|&d| grid[d]).collect();
                let score = evaluator.score(&alpha);
                consider(&alpha, score, &mut best);
                let mut pos = p;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    digits[pos] += 1;
                    if digits[pos] < grid.len() {
                        break;
                    }
                    digits[pos] = 0;
                }
                if digits.iter().all(|&d| d == 0) {
                    break;
                }
            }
        }
        SearchMode::CoordinateWise => {
            let mut current = vec![grid[0]; p];
            let score = evaluator.score(&current);
            consider(&current, score, &mut best);
            for _ in 0..config.sweeps {
                for j in 0..p {
                    let mut line_best: Option<(f64, f64)> = None;
                    for &value in &grid {
                        let mut candidate = current.clone();
                        candidate[j] = value;
                        let score = evaluator.score(&candidate);
                        consider(&candidate, score, &mut best);
                        if let Some(s) = score {
                            let better = match line_best {
                                None => true,
                                Some((_, cur)) => s < cur,
                            };
                            if better {
                                line_best = Some((value, s));
                            }
                        }
                    }
                    if let Some((value, _)) = line_best {
                        current[j] = value;
                    }
                }
            }
        }
    }

    match best {
        Some((alpha, score)) => Ok(CvOutcome {
            alpha: AlphaVector::new(alpha)?,
            score,
            records: evaluator.records,
        }),
        None => Err(TuningError::AllCandidatesFailed(
            evaluator
                .last_failure
                .unwrap_or_else(|| "no candidates were evaluated".to_string()),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisSystem, Interval, MultiBasis};
    use crate::simulate::{generate, SimConfig};
    use crate::fundata::smooth_to_coeffs;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn unit() -> Interval {
        Interval::new(0.0, 1.0).unwrap()
    }

    fn smoothed_sim(noise: f64, n: usize, seed: u64, dim: usize) -> MFDataset {
        let config = SimConfig {
            n_samples: n,
            truncation: 4,
            sigma1: noise,
            sigma2: noise,
            grid1: 40,
            grid2: 40,
            seed,
            ..SimConfig::default()
        };
        let (obs, _) = generate(&config).unwrap();
        let bases = Arc::new(
            MultiBasis::new(vec![
                BasisSystem::bspline(unit(), dim, 4).unwrap(),
                BasisSystem::bspline(unit(), dim, 4).unwrap(),
            ])
            .unwrap(),
        );
        smooth_to_coeffs(&obs, bases).unwrap()
    }

    #[test]
    fn fold_assignment_partitions_evenly() {
        let assignment = fold_assignments(13, 5, 42);
        assert_eq!(assignment.len(), 13);
        let mut sizes = vec![0usize; 5];
        for &f in &assignment {
            assert!(f < 5);
            sizes[f] += 1;
        }
        assert_eq!(sizes.iter().sum::<usize>(), 13);
        assert!(sizes.iter().all(|&s| s == 2 || s == 3));
        // Deterministic in the seed.
        assert_eq!(assignment, fold_assignments(13, 5, 42));
        assert_ne!(assignment, fold_assignments(13, 5, 43));
    }

    #[test]
    fn noiseless_data_prefers_no_penalty() {
        let data = smoothed_sim(0.0, 20, 5, 8);
        let config = CvConfig {
            folds: 4,
            truncation: 2,
            grid: vec![0.0, 1.0, 100.0],
            mode: SearchMode::SharedScalar,
            ..CvConfig::default()
        };
        let outcome = cross_validate(&data, &config).unwrap();
        assert_eq!(outcome.alpha.as_slice(), &[0.0, 0.0]);
        assert_eq!(outcome.records.len(), 3);
    }

    #[test]
    fn zero_penalty_matrix_ties_break_to_smallest_alpha() {
        // Order-2 B-splines are piecewise linear: the roughness penalty is
        // identically zero, so every candidate scores the same and the
        // lexicographically smallest must win.
        let bases = Arc::new(
            MultiBasis::new(vec![
                BasisSystem::bspline(unit(), 5, 2).unwrap(),
                BasisSystem::bspline(unit(), 4, 2).unwrap(),
            ])
            .unwrap(),
        );
        let mut rng = <ChaCha12Rng as SeedableRng>::seed_from_u64(3);
        use rand::Rng;
        let coeffs = DMatrix::from_fn(12, 9, |_, _| rng.random_range(-1.0..1.0));
        let data = MFDataset::new(bases, coeffs).unwrap();
        for mode in [SearchMode::FullGrid, SearchMode::CoordinateWise, SearchMode::SharedScalar] {
            let config = CvConfig {
                folds: 3,
                truncation: 2,
                grid: vec![0.5, 2.0, 8.0],
                mode,
                ..CvConfig::default()
            };
            let outcome = cross_validate(&data, &config).unwrap();
            assert_eq!(outcome.alpha.as_slice(), &[0.5, 0.5], "mode {mode:?}");
        }
    }

    #[test]
    fn full_grid_visits_the_cartesian_product() {
        let data = smoothed_sim(0.3, 12, 9, 6);
        let config = CvConfig {
            folds: 3,
            truncation: 2,
            grid: vec![0.0, 1.0, 10.0],
            mode: SearchMode::FullGrid,
            ..CvConfig::default()
        };
        let outcome = cross_validate(&data, &config).unwrap();
        assert_eq!(outcome.records.len(), 9);
        assert!(outcome
            .records
            .iter()
            .any(|r| r.alpha == vec![0.0, 10.0]));
        // Evaluation order is lexicographic.
        assert_eq!(outcome.records[0].alpha, vec![0.0, 0.0]);
        assert_eq!(outcome.records[1].alpha, vec![0.0, 1.0]);
        assert_eq!(outcome.records.last().unwrap().alpha, vec![10.0, 10.0]);
    }

    #[test]
    fn shared_scalar_keeps_weights_equal() {
        let data = smoothed_sim(0.5, 15, 2, 6);
        let config = CvConfig {
            folds: 3,
            truncation: 2,
            mode: SearchMode::SharedScalar,
            ..CvConfig::default()
        };
        let outcome = cross_validate(&data, &config).unwrap();
        let alpha = outcome.alpha.as_slice();
        assert_eq!(alpha[0], alpha[1]);
        assert_eq!(outcome.records.len(), default_grid().len());
    }

    #[test]
    fn outcome_is_deterministic() {
        let data = smoothed_sim(0.5, 14, 77, 6);
        let config = CvConfig {
            folds: 4,
            truncation: 2,
            ..CvConfig::default()
        };
        let a = cross_validate(&data, &config).unwrap();
        let b = cross_validate(&data, &config).unwrap();
        assert_eq!(a.alpha.as_slice(), b.alpha.as_slice());
        assert_eq!(a.score.to_bits(), b.score.to_bits());
        assert_eq!(a.records.len(), b.records.len());
    }

    #[test]
    fn configuration_is_validated() {
        let data = smoothed_sim(0.2, 10, 1, 6);
        let base = CvConfig::default();
        assert!(matches!(
            cross_validate(&data, &CvConfig { folds: 1, ..base.clone() }),
            Err(TuningError::InvalidFolds { .. })
        ));
        assert!(matches!(
            cross_validate(&data, &CvConfig { folds: 11, ..base.clone() }),
            Err(TuningError::InvalidFolds { .. })
        ));
        assert!(matches!(
            cross_validate(
                &data,
                &CvConfig { folds: 5, truncation: 9, ..base.clone() }
            ),
            Err(TuningError::TruncationTooLarge { .. })
        ));
        assert!(matches!(
            cross_validate(
                &data,
                &CvConfig { grid: vec![-1.0], ..base.clone() }
            ),
            Err(TuningError::InvalidGrid)
        ));
        assert!(matches!(
            cross_validate(
                &data,
                &CvConfig { sweeps: 0, mode: SearchMode::CoordinateWise, ..base }
            ),
            Err(TuningError::NoSweeps)
        ));
    }

    #[test]
    fn zero_norm_test_sample_fails_every_candidate() {
        let bases = Arc::new(
            MultiBasis::new(vec![BasisSystem::sine(unit(), 3).unwrap()]).unwrap(),
        );
        let mut coeffs = DMatrix::from_fn(6, 3, |r, c| ((r * 3 + c) as f64 * 0.37).sin());
        for c in 0..3 {
            coeffs[(0, c)] = 0.0; // one sample identically zero
        }
        let data = MFDataset::new(bases, coeffs).unwrap();
        let config = CvConfig {
            folds: 3,
            truncation: 1,
            grid: vec![0.0, 1.0],
            mode: SearchMode::SharedScalar,
            ..CvConfig::default()
        };
        assert!(matches!(
            cross_validate(&data, &config),
            Err(TuningError::AllCandidatesFailed(_))
        ));
    }
}
