//! End-to-end flow: simulate → CSV round trip → smoothing → cross-validation
//! → fit → persistence → scoring, reconstruction, clustering and metrics.

use std::sync::Arc;

use remfpca::basis::{simpson_rule, BasisSystem, Interval, MultiBasis};
use remfpca::evalmetrics::{ari, kmedoids, mrae, nmi};
use remfpca::fundata::smooth_to_coeffs;
use remfpca::io::{
    read_model_json, read_observations_csv, write_model_json, write_observations_csv,
};
use remfpca::model::{fit, fit_weighted, AlphaVector};
use remfpca::simulate::{generate, SimConfig};
use remfpca::tuning::{cross_validate, CvConfig, SearchMode};

fn bspline_pair(dim: usize) -> Arc<MultiBasis> {
    let domain = Interval::new(0.0, 1.0).unwrap();
    Arc::new(
        MultiBasis::new(vec![
            BasisSystem::bspline(domain, dim, 4).unwrap(),
            BasisSystem::bspline(domain, dim, 4).unwrap(),
        ])
        .unwrap(),
    )
}

#[test]
fn simulated_clusters_survive_the_full_pipeline() {
    let config = SimConfig {
        n_samples: 30,
        truncation: 4,
        sigma1: 0.05,
        sigma2: 0.05,
        grid1: 40,
        grid2: 40,
        cluster_means: true,
        seed: 42,
        ..SimConfig::default()
    };
    let (obs, truth) = generate(&config).unwrap();

    // Disk round trip of the raw observations must be bitwise faithful.
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("observations.csv");
    write_observations_csv(&csv, &obs).unwrap();
    let reread = read_observations_csv(&csv).unwrap();
    assert_eq!(reread.n_samples(), obs.n_samples());
    for (a, b) in reread.variables().iter().zip(obs.variables()) {
        assert_eq!(a.grid, b.grid);
        assert_eq!(a.values, b.values);
    }

    // Smooth, pick α by cross-validation, fit.
    let data = smooth_to_coeffs(&reread, bspline_pair(12)).unwrap();
    let cv = cross_validate(
        &data,
        &CvConfig {
            folds: 3,
            truncation: 3,
            grid: vec![0.0, 1e-4, 1e-2],
            mode: SearchMode::SharedScalar,
            sweeps: 1,
            seed: 7,
        },
    )
    .unwrap();
    let model = fit(&data, &cv.alpha, 4).unwrap();
    assert!(model.alpha_orthonormality_error() < 1e-8);

    // The persisted model must behave identically to the in-memory one.
    let json = dir.path().join("model.json");
    write_model_json(&json, &model).unwrap();
    let reloaded = read_model_json(&json).unwrap();
    let scores = model.scores(&data).unwrap();
    assert_eq!(scores, reloaded.scores(&data).unwrap());

    // Four components capture the rank-4 truth plus mild noise.
    let recon = model.reconstruct(&data, 4).unwrap();
    let report = mrae(&data, &recon).unwrap();
    assert!(
        report.mean < 0.1,
        "reconstruction error too large: {}",
        report.mean
    );

    // The generating partition is far apart in score space.
    let points = scores.columns(0, 3).into_owned();
    let clusters = kmedoids(&points, 3).unwrap();
    let labels = truth.labels.as_deref().unwrap();
    assert_eq!(ari(&clusters.labels, labels).unwrap(), 1.0);
    assert_eq!(nmi(&clusters.labels, labels).unwrap(), 1.0);
}

#[test]
fn rescaled_fit_equalizes_variance_and_reloads_identically() {
    let config = SimConfig {
        n_samples: 25,
        truncation: 4,
        sigma1: 0.3,
        sigma2: 0.02,
        grid1: 45,
        grid2: 45,
        seed: 11,
        ..SimConfig::default()
    };
    let (obs, _) = generate(&config).unwrap();
    let data = smooth_to_coeffs(&obs, bspline_pair(12)).unwrap();

    let alpha = AlphaVector::uniform(1e-3, 2).unwrap();
    let model = fit_weighted(&data, &alpha, 3).unwrap();
    let weights = model.rescale_weights().expect("weights are stored").to_vec();
    assert_eq!(weights.len(), 2);

    // Independent check of the normalization: evaluate the rescaled curves on
    // a dense grid and integrate the pointwise sample variance by Simpson.
    let scaled = data.apply_weights(&weights).unwrap();
    for j in 0..2 {
        let system = scaled.bases().system(j);
        let (points, quad) = simpson_rule(system.domain(), 2001).unwrap();
        let values = scaled.eval_variable(j, &points).unwrap();
        let n = values.nrows();
        let mut integrated = 0.0;
        for (k, &w) in quad.iter().enumerate() {
            let col = values.column(k);
            let mean = col.sum() / n as f64;
            let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
            integrated += w * ss / (n - 1) as f64;
        }
        assert!(
            (integrated - 1.0).abs() < 1e-8,
            "variable {j}: integrated variance {integrated}"
        );
    }

    // Raw-scale scoring survives persistence bit for bit.
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("model.json");
    write_model_json(&json, &model).unwrap();
    let reloaded = read_model_json(&json).unwrap();
    assert_eq!(model.rescale_weights(), reloaded.rescale_weights());
    assert_eq!(
        model.scores(&data).unwrap(),
        reloaded.scores(&data).unwrap()
    );
    assert_eq!(model.eigenvalues(), reloaded.eigenvalues());
}
