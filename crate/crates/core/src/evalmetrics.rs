//! Estimation- and clustering-quality metrics.
//!
//! Estimation side: relative eigenvalue error, the H-norm distance between
//! an estimated component and a reference function (after sign alignment
//! and H-normalization), and the mean relative approximation error of
//! reconstructions. Clustering side: a fully deterministic PAM (k-medoids)
//! with BUILD + SWAP and lexicographic tie-breaking, silhouette scores, the
//! Hubert–Arabie adjusted Rand index, and normalized mutual information.
//!
//! ARI and NMI are computed from integer pair/entropy bookkeeping in a
//! canonical order, so identical partitions score exactly 1.0 and any
//! relabeling of cluster ids reproduces the same float to the bit.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{simpson_rule, BasisError, MultiBasis};
use crate::fundata::MFDataset;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("relative eigenvalue error needs a nonzero reference eigenvalue")]
    ZeroTruth,
    #[error("component has zero H-norm and cannot be normalized")]
    ZeroComponent,
    #[error("expected {expected} reference function(s), one per variable, got {got}")]
    TruthCount { expected: usize, got: usize },
    #[error("component has {got} coefficients, basis expects {expected}")]
    ComponentLength { expected: usize, got: usize },
    #[error("datasets must share the same basis to be compared")]
    BasisMismatch,
    #[error("datasets have {a} and {b} samples; counts must match")]
    SampleCount { a: usize, b: usize },
    #[error("reference sample {index} has zero H-norm; relative error is undefined")]
    ZeroNormSample { index: usize },
    #[error("labelings have lengths {a} and {b}; they must be equal and nonzero")]
    LabelLength { a: usize, b: usize },
    #[error("number of clusters must lie in {min}..={max}, got {k}")]
    InvalidK { k: usize, min: usize, max: usize },
    #[error("silhouette needs at least two distinct clusters, found {0}")]
    TooFewClusters(usize),
    #[error("point matrix must have at least one row")]
    EmptyPoints,
    #[error(transparent)]
    Basis(#[from] BasisError),
}

// ---------------------------------------------------------------------------
// Estimation metrics
// ---------------------------------------------------------------------------

/// Relative eigenvalue error `|λ̂ − λ| / |λ|`.
pub fn err_lambda(estimate: f64, truth: f64) -> Result<f64, MetricsError> {
    if truth == 0.0 {
        return Err(MetricsError::ZeroTruth);
    }
    Ok((estimate - truth).abs() / truth.abs())
}

/// H-norm error between an estimated component and reference functions.
///
/// The component is rescaled to unit H-norm (its raw norm is below one for
/// α > 0), the sign minimizing the distance is chosen, and
/// `‖ψ̂ − ψ‖_H = √(‖ψ̂‖² + ‖ψ‖² − 2|⟨ψ̂, ψ⟩|)` is evaluated with a composite
/// Simpson rule of `n_points` nodes per variable.
pub fn err_psi(
    bases: &MultiBasis,
    component: &DVector<f64>,
    truth: &[&dyn Fn(f64) -> f64],
    n_points: usize,
) -> Result<f64, MetricsError> {
    if truth.len() != bases.n_vars() {
        return Err(MetricsError::TruthCount {
            expected: bases.n_vars(),
            got: truth.len(),
        });
    }
    if component.len() != bases.total_dim() {
        return Err(MetricsError::ComponentLength {
            expected: bases.total_dim(),
            got: component.len(),
        });
    }
    let norm_sq = (component.transpose() * bases.gram() * component)[(0, 0)];
    if !(norm_sq > 0.0) {
        return Err(MetricsError::ZeroComponent);
    }
    let scale = norm_sq.sqrt();
    let mut est_sq = 0.0;
    let mut truth_sq = 0.0;
    let mut cross = 0.0;
    for (j, truth_fn) in truth.iter().enumerate() {
        let system = bases.system(j);
        let (points, weights) = simpson_rule(system.domain(), n_points)?;
        let phi = system.eval(&points)?;
        let block = bases.block(j);
        for (k, &w) in weights.iter().enumerate() {
            let mut est = 0.0;
            for (local, c) in block.clone().enumerate() {
                est += phi[(k, local)] * component[c];
            }
            est /= scale;
            let reference = truth_fn(points[k]);
            est_sq += w * est * est;
            truth_sq += w * reference * reference;
            cross += w * est * reference;
        }
    }
    Ok((est_sq + truth_sq - 2.0 * cross.abs()).max(0.0).sqrt())
}

/// Per-sample relative approximation errors and their mean.
#[derive(Debug, Clone)]
pub struct MraeReport {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// Mean relative approximation error
/// `MRAE = (1/n) Σᵢ ‖x̂ᵢ − xᵢ‖_H / ‖xᵢ‖_H` between a reference dataset and
/// its reconstruction, exact in coefficient space.
pub fn mrae(reference: &MFDataset, reconstructed: &MFDataset) -> Result<MraeReport, MetricsError> {
    if reference.bases().as_ref() != reconstructed.bases().as_ref() {
        return Err(MetricsError::BasisMismatch);
    }
    if reference.n_samples() != reconstructed.n_samples() {
        return Err(MetricsError::SampleCount {
            a: reference.n_samples(),
            b: reconstructed.n_samples(),
        });
    }
    let gram = reference.bases().gram();
    let n = reference.n_samples();
    let mut per_sample = Vec::with_capacity(n);
    for i in 0..n {
        let x = reference.coeffs().row(i);
        let delta = reconstructed.coeffs().row(i) - x;
        let denom_sq = (x * gram * x.transpose())[(0, 0)];
        if !(denom_sq > 0.0) {
            return Err(MetricsError::ZeroNormSample { index: i });
        }
        let num_sq = (&delta * gram * delta.transpose())[(0, 0)].max(0.0);
        per_sample.push((num_sq / denom_sq).sqrt());
    }
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    Ok(MraeReport { per_sample, mean })
}

// ---------------------------------------------------------------------------
// PAM k-medoids
// ---------------------------------------------------------------------------

/// Result of a PAM run: canonical labels (medoids sorted ascending, label =
/// position of the assigned medoid), the medoid row indices, and the summed
/// point-to-medoid distance.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub labels: Vec<usize>,
    pub medoids: Vec<usize>,
    pub total_cost: f64,
}

/// PAM (partitioning around medoids) with the classic BUILD initialization
/// and SWAP refinement, on Euclidean row distances.
///
/// Every choice is deterministic: ties in BUILD, SWAP and assignment all
/// resolve toward the lowest index, and a swap is taken only if it improves
/// the objective by more than an absolute `1e-12`. No randomness is
/// involved, so repeated runs are bitwise identical.
pub fn kmedoids(points: &DMatrix<f64>, k: usize) -> Result<ClusterOutcome, MetricsError> {
    let n = points.nrows();
    if n == 0 {
        return Err(MetricsError::EmptyPoints);
    }
    if k == 0 || k > n {
        return Err(MetricsError::InvalidK { k, min: 1, max: n });
    }
    let dist = pairwise_distances(points);
    let mut medoids = build_phase(&dist, k);
    swap_phase(&dist, &mut medoids);
    medoids.sort_unstable();
    let labels = assign(&dist, &medoids);
    let total_cost = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| dist[(i, medoids[l])])
        .sum();
    Ok(ClusterOutcome {
        labels,
        medoids,
        total_cost,
    })
}

fn pairwise_distances(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows();
    let mut dist = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (points.row(i) - points.row(j)).norm();
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    dist
}

fn build_phase(dist: &DMatrix<f64>, k: usize) -> Vec<usize> {
    let n = dist.nrows();
    // First medoid: the point minimizing total distance to all others.
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for i in 0..n {
        let cost: f64 = dist.row(i).iter().sum();
        if cost < best_cost {
            best_cost = cost;
            best = i;
        }
    }
    let mut medoids = vec![best];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist[(i, best)]).collect();
    while medoids.len() < k {
        let mut candidate = usize::MAX;
        let mut candidate_cost = f64::INFINITY;
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let cost: f64 = (0..n).map(|i| nearest[i].min(dist[(i, c)])).sum();
            if cost < candidate_cost {
                candidate_cost = cost;
                candidate = c;
            }
        }
        medoids.push(candidate);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist[(i, candidate)]);
        }
    }
    medoids
}

fn cost_of(dist: &DMatrix<f64>, medoids: &[usize]) -> f64 {
    let n = dist.nrows();
    (0..n)
        .map(|i| {
            medoids
                .iter()
                .map(|&m| dist[(i, m)])
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn swap_phase(dist: &DMatrix<f64>, medoids: &mut Vec<usize>) {
    let n = dist.nrows();
    let mut current = cost_of(dist, medoids);
    for _ in 0..10_000 {
        let mut best_gain = -1e-12;
        let mut best_swap: Option<(usize, usize)> = None;
        let mut sorted: Vec<usize> = medoids.clone();
        sorted.sort_unstable();
        for &m in &sorted {
            for h in 0..n {
                if medoids.contains(&h) {
                    continue;
                }
                let trial: Vec<usize> = medoids
                    .iter()
                    .map(|&x| if x == m { h } else { x })
                    .collect();
                let gain = cost_of(dist, &trial) - current;
                if gain < best_gain {
                    best_gain = gain;
                    best_swap = Some((m, h));
                }
            }
        }
        match best_swap {
            Some((m, h)) => {
                for x in medoids.iter_mut() {
                    if *x == m {
                        *x = h;
                    }
                }
                // Recompute exactly rather than accumulating gains, so the
                // objective cannot drift across many swaps.
                current = cost_of(dist, medoids);
            }
            None => break,
        }
    }
}

fn assign(dist: &DMatrix<f64>, sorted_medoids: &[usize]) -> Vec<usize> {
    let n = dist.nrows();
    (0..n)
        .map(|i| {
            let mut best = 0;
            for (pos, &m) in sorted_medoids.iter().enumerate() {
                if dist[(i, m)] < dist[(i, sorted_medoids[best])] {
                    best = pos;
                }
            }
            best
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Silhouette
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SilhouetteReport {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// Silhouette scores on Euclidean row distances. Singleton clusters score 0,
/// as do points with `max(a, b) = 0` (co-located clusters).
pub fn silhouette(points: &DMatrix<f64>, labels: &[usize]) -> Result<SilhouetteReport, MetricsError> {
    let n = points.nrows();
    if n == 0 {
        return Err(MetricsError::EmptyPoints);
    }
    if labels.len() != n {
        return Err(MetricsError::LabelLength {
            a: n,
            b: labels.len(),
        });
    }
    let clusters: Vec<usize> = {
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        distinct
    };
    if clusters.len() < 2 {
        return Err(MetricsError::TooFewClusters(clusters.len()));
    }
    let dist = pairwise_distances(points);
    let sizes: BTreeMap<usize, usize> = clusters
        .iter()
        .map(|&c| (c, labels.iter().filter(|&&l| l == c).count()))
        .collect();
    let mut per_sample = Vec::with_capacity(n);
    for i in 0..n {
        let own = labels[i];
        if sizes[&own] == 1 {
            per_sample.push(0.0);
            continue;
        }
        let mut own_sum = 0.0;
        let mut other: BTreeMap<usize, f64> = BTreeMap::new();
        for j in 0..n {
            if j == i {
                continue;
            }
            if labels[j] == own {
                own_sum += dist[(i, j)];
            } else {
                *other.entry(labels[j]).or_insert(0.0) += dist[(i, j)];
            }
        }
        let a = own_sum / (sizes[&own] - 1) as f64;
        let b = other
            .iter()
            .map(|(c, sum)| sum / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        per_sample.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
    }
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    Ok(SilhouetteReport { per_sample, mean })
}

/// Run PAM for every `k` in `k_min..=k_max` and keep the mean-silhouette
/// maximizer (ties go to the smallest `k`). Returns the winner and the full
/// `(k, mean silhouette)` table.
pub fn choose_k(
    points: &DMatrix<f64>,
    k_min: usize,
    k_max: usize,
) -> Result<(ClusterOutcome, usize, Vec<(usize, f64)>), MetricsError> {
    let n = points.nrows();
    if k_min < 2 || k_max < k_min || k_max > n.saturating_sub(1) {
        return Err(MetricsError::InvalidK {
            k: k_max,
            min: 2,
            max: n.saturating_sub(1),
        });
    }
    let mut table = Vec::new();
    let mut best: Option<(ClusterOutcome, usize, f64)> = None;
    for k in k_min..=k_max {
        let outcome = kmedoids(points, k)?;
        let score = silhouette(points, &outcome.labels)?.mean;
        table.push((k, score));
        let better = match &best {
            None => true,
            Some((_, _, current)) => score > *current,
        };
        if better {
            best = Some((outcome, k, score));
        }
    }
    let (outcome, k, _) = best.expect("k range is nonempty");
    Ok((outcome, k, table))
}

// ---------------------------------------------------------------------------
// Partition agreement indices
// ---------------------------------------------------------------------------

fn comb2(x: u128) -> u128 {
    x * x.saturating_sub(1) / 2
}

struct Contingency {
    joint: BTreeMap<(usize, usize), u128>,
    rows: BTreeMap<usize, u128>,
    cols: BTreeMap<usize, u128>,
    n: u128,
}

fn contingency(a: &[usize], b: &[usize]) -> Result<Contingency, MetricsError> {
    if a.is_empty() || a.len() != b.len() {
        return Err(MetricsError::LabelLength {
            a: a.len(),
            b: b.len(),
        });
    }
    let mut joint: BTreeMap<(usize, usize), u128> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u128> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u128> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    Ok(Contingency {
        joint,
        rows,
        cols,
        n: a.len() as u128,
    })
}

/// Hubert–Arabie adjusted Rand index. The pair counts are exact integers;
/// identical partitions give exactly 1.0 and the value is invariant under
/// relabeling to the bit. A degenerate permutation model (both partitions
/// trivial in the same way) returns 1.0.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64, MetricsError> {
    let table = contingency(a, b)?;
    let index: u128 = table.joint.values().map(|&c| comb2(c)).sum();
    let sum_a: u128 = table.rows.values().map(|&c| comb2(c)).sum();
    let sum_b: u128 = table.cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(table.n);
    if total == 0 {
        return Ok(1.0);
    }
    let expected = sum_a as f64 * sum_b as f64 / total as f64;
    let max_index = 0.5 * (sum_a as f64 + sum_b as f64);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index as f64 - expected) / denom)
}

/// Entropy of a count vector, summed in ascending count order so the result
/// does not depend on label names: `H = ln n − (Σ c ln c)/n`.
fn entropy(counts: impl Iterator<Item = u128>, n: u128) -> f64 {
    let mut sorted: Vec<u128> = counts.collect();
    sorted.sort_unstable();
    let weighted: f64 = sorted
        .iter()
        .map(|&c| {
            let c = c as f64;
            c * c.ln()
        })
        .sum();
    (n as f64).ln() - weighted / n as f64
}

/// Normalized mutual information with the arithmetic-mean normalizer,
/// `NMI = I(A; B) / ((H(A) + H(B))/2)`, clamped to `[0, 1]`. Two partitions
/// with zero entropy (both trivial) compare as 1.0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64, MetricsError> {
    let table = contingency(a, b)?;
    let h_a = entropy(table.rows.values().copied(), table.n);
    let h_b = entropy(table.cols.values().copied(), table.n);
    let h_ab = entropy(table.joint.values().copied(), table.n);
    let mean = 0.5 * (h_a + h_b);
    if mean <= 0.0 {
        return Ok(1.0);
    }
    let information = (h_a + h_b - h_ab).max(0.0);
    Ok((information / mean).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisSystem, Interval};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn unit() -> Interval {
        Interval::new(0.0, 1.0).unwrap()
    }

    fn sine_basis(dim: usize) -> MultiBasis {
        MultiBasis::new(vec![BasisSystem::sine(unit(), dim).unwrap()]).unwrap()
    }

    #[test]
    fn relative_eigenvalue_error() {
        assert_relative_eq!(err_lambda(1.2, 1.0).unwrap(), 0.2, epsilon = 1e-15);
        assert_relative_eq!(err_lambda(0.5, -1.0).unwrap(), 1.5, epsilon = 1e-15);
        assert!(matches!(err_lambda(1.0, 0.0), Err(MetricsError::ZeroTruth)));
    }

    #[test]
    fn component_error_vanishes_for_exact_representation() {
        // e₂ in the sine basis *is* √2·sin(2πt); sign misalignment must not
        // matter.
        let bases = sine_basis(3);
        let truth = |t: f64| std::f64::consts::SQRT_2 * (2.0 * std::f64::consts::PI * t).sin();
        for sign in [1.0, -1.0] {
            let component = DVector::from_column_slice(&[0.0, sign * 0.25, 0.0]);
            let err = err_psi(&bases, &component, &[&truth], 2001).unwrap();
            assert!(err < 1e-10, "err = {err}");
        }
    }

    #[test]
    fn component_error_for_orthogonal_functions_is_sqrt_two() {
        // Orthonormal estimate vs orthonormal truth with zero overlap:
        // ‖ψ̂ − ψ‖² = 1 + 1 − 0.
        let bases = sine_basis(3);
        let truth = |t: f64| std::f64::consts::SQRT_2 * (3.0 * std::f64::consts::PI * t).sin();
        let component = DVector::from_column_slice(&[0.0, 1.0, 0.0]);
        let err = err_psi(&bases, &component, &[&truth], 2001).unwrap();
        assert_relative_eq!(err, std::f64::consts::SQRT_2, epsilon = 1e-9);
    }

    #[test]
    fn component_error_validates_inputs() {
        let bases = sine_basis(3);
        let zero = DVector::zeros(3);
        let truth = |_: f64| 0.0;
        assert!(matches!(
            err_psi(&bases, &zero, &[&truth], 2001),
            Err(MetricsError::ZeroComponent)
        ));
        let ok = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            err_psi(&bases, &ok, &[&truth, &truth], 2001),
            Err(MetricsError::TruthCount { expected: 1, got: 2 })
        ));
        let short = DVector::from_column_slice(&[1.0]);
        assert!(matches!(
            err_psi(&bases, &short, &[&truth], 2001),
            Err(MetricsError::ComponentLength { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn mrae_matches_hand_computation() {
        // Orthonormal basis ⇒ H-norms are Euclidean: reference (3,4) has
        // norm 5; shrinking it by 10 % gives a relative error of exactly 0.1.
        let bases = Arc::new(sine_basis(2));
        let reference = MFDataset::new(
            Arc::clone(&bases),
            DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 1.0, 0.0]),
        )
        .unwrap();
        let reconstructed = MFDataset::new(
            Arc::clone(&bases),
            DMatrix::from_row_slice(2, 2, &[2.7, 3.6, 1.0, 0.0]),
        )
        .unwrap();
        let report = mrae(&reference, &reconstructed).unwrap();
        assert_relative_eq!(report.per_sample[0], 0.1, epsilon = 1e-12);
        assert_relative_eq!(report.per_sample[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(report.mean, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn mrae_rejects_zero_norm_reference() {
        let bases = Arc::new(sine_basis(2));
        let reference = MFDataset::new(Arc::clone(&bases), DMatrix::zeros(1, 2)).unwrap();
        let reconstructed =
            MFDataset::new(Arc::clone(&bases), DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
                .unwrap();
        assert!(matches!(
            mrae(&reference, &reconstructed),
            Err(MetricsError::ZeroNormSample { index: 0 })
        ));
    }

    #[test]
    fn kmedoids_separates_obvious_blobs() {
        let points = DMatrix::from_row_slice(5, 1, &[0.0, 0.1, 0.2, 10.0, 10.1]);
        let outcome = kmedoids(&points, 2).unwrap();
        assert_eq!(outcome.labels, vec![0, 0, 0, 1, 1]);
        assert_eq!(outcome.medoids, vec![1, 3]);
        assert_relative_eq!(outcome.total_cost, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn kmedoids_matches_exhaustive_search() {
        // Small instance where every medoid set can be enumerated.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2024);
        let points = DMatrix::from_fn(9, 2, |_, _| rng.random_range(-3.0..3.0));
        let dist = pairwise_distances(&points);
        let mut best = f64::INFINITY;
        for a in 0..9 {
            for b in (a + 1)..9 {
                for c in (b + 1)..9 {
                    best = best.min(cost_of(&dist, &[a, b, c]));
                }
            }
        }
        let outcome = kmedoids(&points, 3).unwrap();
        assert_relative_eq!(outcome.total_cost, best, epsilon = 1e-12);
    }

    #[test]
    fn kmedoids_validates_k() {
        let points = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(kmedoids(&points, 0).is_err());
        assert!(kmedoids(&points, 4).is_err());
        let all = kmedoids(&points, 3).unwrap();
        assert_eq!(all.labels, vec![0, 1, 2]);
        assert_eq!(all.total_cost, 0.0);
    }

    #[test]
    fn silhouette_matches_hand_computation() {
        let points = DMatrix::from_row_slice(4, 1, &[0.0, 0.2, 5.0, 5.2]);
        let labels = [0, 0, 1, 1];
        let report = silhouette(&points, &labels).unwrap();
        // a(0) = 0.2, b(0) = (5.0 + 5.2)/2 = 5.1.
        assert_relative_eq!(report.per_sample[0], (5.1 - 0.2) / 5.1, epsilon = 1e-12);
        // a(1) = 0.2, b(1) = (4.8 + 5.0)/2 = 4.9.
        assert_relative_eq!(report.per_sample[1], (4.9 - 0.2) / 4.9, epsilon = 1e-12);
        assert!(report.mean > 0.9);
    }

    #[test]
    fn silhouette_edge_cases() {
        // Singleton cluster scores zero.
        let points = DMatrix::from_row_slice(3, 1, &[0.0, 5.0, 5.1]);
        let report = silhouette(&points, &[0, 1, 1]).unwrap();
        assert_eq!(report.per_sample[0], 0.0);
        // Co-located clusters: max(a, b) = 0 ⇒ zero, not NaN.
        let same = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let report = silhouette(&same, &[0, 0, 1, 1]).unwrap();
        assert_eq!(report.per_sample, vec![0.0; 4]);
        // One cluster only: undefined.
        assert!(matches!(
            silhouette(&points, &[0, 0, 0]),
            Err(MetricsError::TooFewClusters(1))
        ));
    }

    #[test]
    fn choose_k_recovers_three_blobs() {
        let mut rows = Vec::new();
        for center in [0.0, 10.0, 20.0] {
            for offset in [-0.2, -0.1, 0.0, 0.1, 0.2] {
                rows.push(center + offset);
            }
        }
        let points = DMatrix::from_column_slice(15, 1, &rows);
        let (outcome, k, table) = choose_k(&points, 2, 6).unwrap();
        assert_eq!(k, 3);
        assert_eq!(table.len(), 5);
        assert_eq!(outcome.labels[0], outcome.labels[4]);
        assert_ne!(outcome.labels[0], outcome.labels[5]);
    }

    #[test]
    fn choose_k_validates_range() {
        let points = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        assert!(choose_k(&points, 1, 3).is_err());
        assert!(choose_k(&points, 2, 4).is_err());
        assert!(choose_k(&points, 2, 3).is_ok());
    }

    /// Brute-force pair counting: the textbook definition of the adjusted
    /// Rand index, used as an independent oracle.
    fn ari_by_pair_counting(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut n11, mut n00, mut n10, mut n01) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            for j in (i + 1)..n {
                let same_a = a[i] == a[j];
                let same_b = b[i] == b[j];
                match (same_a, same_b) {
                    (true, true) => n11 += 1,
                    (false, false) => n00 += 1,
                    (true, false) => n10 += 1,
                    (false, true) => n01 += 1,
                }
            }
        }
        let n11 = n11 as f64;
        let n00 = n00 as f64;
        let n10 = n10 as f64;
        let n01 = n01 as f64;
        2.0 * (n11 * n00 - n10 * n01)
            / ((n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00))
    }

    #[test]
    fn ari_crossed_pairs_fixture() {
        // Two two-cluster partitions that cross every pair: the adjusted
        // index is −1/2 (verified against brute-force pair counting).
        let a = [0, 0, 1, 1];
        let b = [0, 1, 0, 1];
        let value = ari(&a, &b).unwrap();
        assert_relative_eq!(value, ari_by_pair_counting(&a, &b), epsilon = 1e-15);
        assert_relative_eq!(value, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn ari_identity_and_degenerate_cases() {
        let a = [0, 1, 1, 2, 0];
        assert_eq!(ari(&a, &a).unwrap(), 1.0);
        // Identical up to renaming.
        let renamed = [5, 9, 9, 7, 5];
        assert_eq!(ari(&a, &renamed).unwrap(), 1.0);
        // Both trivial in the same way.
        assert_eq!(ari(&[0, 0, 0], &[4, 4, 4]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 1, 2], &[2, 0, 1]).unwrap(), 1.0);
        // One trivial, one informative: zero adjusted agreement.
        assert_eq!(ari(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(ari(&[0, 1], &[0]).is_err());
        assert!(ari(&[], &[]).is_err());
    }

    #[test]
    fn nmi_fixtures() {
        let a = [0, 0, 1, 1];
        // Independent partitions carry zero information.
        assert!(nmi(&a, &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
        assert_eq!(nmi(&a, &a).unwrap(), 1.0);
        assert_eq!(nmi(&a, &[7, 7, 3, 3]).unwrap(), 1.0);
        // Both trivial.
        assert_eq!(nmi(&[0, 0], &[1, 1]).unwrap(), 1.0);
        // One trivial, one not.
        assert_eq!(nmi(&[0, 0, 0, 0], &a).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn ari_and_nmi_are_exactly_permutation_invariant(
            labels_a in proptest::collection::vec(0usize..4, 6..30),
            labels_b in proptest::collection::vec(0usize..4, 6..30),
            offset in 1usize..5,
        ) {
            let n = labels_a.len().min(labels_b.len());
            let a = &labels_a[..n];
            let b = &labels_b[..n];
            // Relabel clusters by an arbitrary injective map.
            let remap = |l: usize| (l * 13 + offset * 7) % 97;
            let a2: Vec<usize> = a.iter().map(|&l| remap(l)).collect();
            let b2: Vec<usize> = b.iter().map(|&l| remap(l)).collect();
            prop_assert_eq!(ari(a, b).unwrap().to_bits(), ari(&a2, &b2).unwrap().to_bits());
            prop_assert_eq!(nmi(a, b).unwrap().to_bits(), nmi(&a2, &b2).unwrap().to_bits());
            let value = ari(a, b).unwrap();
            prop_assert!(value <= 1.0 + 1e-12);
            let info = nmi(a, b).unwrap();
            prop_assert!((0.0..=1.0).contains(&info));
        }

        #[test]
        fn silhouette_values_stay_in_range(
            raw in proptest::collection::vec(-5.0f64..5.0, 8..24),
            k in 2usize..4,
        ) {
            let n = raw.len();
            let points = DMatrix::from_column_slice(n, 1, &raw);
            let outcome = kmedoids(&points, k).unwrap();
            if outcome.labels.iter().collect::<std::collections::BTreeSet<_>>().len() >= 2 {
                let report = silhouette(&points, &outcome.labels).unwrap();
                for s in report.per_sample {
                    prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
                }
            }
        }
    }
}
