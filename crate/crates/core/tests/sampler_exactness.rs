//! End-to-end statistical checks that the path samplers produce ensembles
//! with the exact covariance structure they claim, verified against closed
//! forms and against an independent dense-factorization route.

use supmin::gauss::validation::{check_fbm_sampler, check_stationary_sampler, CheckConfig};
use supmin::gauss::{
    empirical_covariance, fbm_covariance, CorrelationModel, FbmSampler, GridSpec, RoutePolicy,
    SamplingRoute, StationaryGpSampler,
};
use supmin::stats::{RandomStream, StreamFamily};

fn sample_many(n: u64, seed_idx: u64, f: impl Fn(&RandomStream) -> supmin::gauss::SamplePath) -> Vec<supmin::gauss::SamplePath> {
    (0..n)
        .map(|i| f(&RandomStream::new(777, seed_idx * 1_000_000 + i)))
        .collect()
}

#[test]
fn fbm_moments_match_closed_form_across_roughness() {
    // Var B(t) = t^alpha and the two-time covariance identity, for rough,
    // Brownian, smooth, and degenerate-smooth cases.
    let grid = GridSpec::from_points(1.0, 17).unwrap();
    for (idx, alpha) in [0.5, 1.0, 1.5, 2.0].into_iter().enumerate() {
        let sampler = FbmSampler::new(alpha, grid).unwrap();
        let paths = sample_many(30_000, idx as u64, |s| sampler.sample_path(s));
        // Indices 8 and 16 are times 0.5 and 1.0.
        let ests = empirical_covariance(&paths, &[(8, 8), (16, 16), (8, 16)]).unwrap();
        let targets = [
            fbm_covariance(alpha, 0.5, 0.5),
            fbm_covariance(alpha, 1.0, 1.0),
            fbm_covariance(alpha, 0.5, 1.0),
        ];
        for (e, t) in ests.iter().zip(targets) {
            let z = (e.mean - t) / e.stderr;
            assert!(
                z.abs() < 4.5,
                "alpha={alpha}: estimate {} vs exact {t} (z={z:.2})",
                e.mean
            );
        }
        for p in &paths {
            assert_eq!(p.values[0], 0.0, "fBm must start at zero");
        }
    }
}

#[test]
fn brownian_case_has_independent_increments() {
    let grid = GridSpec::from_points(1.0, 9).unwrap();
    let sampler = FbmSampler::new(1.0, grid).unwrap();
    let paths = sample_many(30_000, 17, |s| sampler.sample_path(s));
    // Disjoint increments B(1/4)-B(0) and B(1)-B(3/4).
    let incs: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| vec![p.values[2] - p.values[0], p.values[8] - p.values[6]])
        .collect();
    let n = incs.len() as f64;
    let mean: f64 = incs.iter().map(|v| v[0] * v[1]).sum::<f64>() / n;
    // Each increment has variance 1/4; the product has stderr ~ 1/4 sqrt(n).
    assert!(
        mean.abs() < 4.0 * 0.25 / n.sqrt(),
        "disjoint Brownian increments correlated: {mean}"
    );
}

#[test]
fn smoothest_case_is_exactly_linear_in_time() {
    // At the roughness endpoint alpha = 2 the process is B(t) = t Z; every
    // sampled path must be an exact straight line through the origin.
    let grid = GridSpec::from_points(2.0, 9).unwrap();
    let sampler = FbmSampler::new(2.0, grid).unwrap();
    for i in 0..200 {
        let p = sampler.sample_path(&RandomStream::new(3, i));
        let slope = p.values[8] / grid.time(8);
        for k in 0..9 {
            assert!(
                (p.values[k] - slope * grid.time(k)).abs() < 1e-10,
                "path not linear at k={k}"
            );
        }
    }
}

#[test]
fn stationary_sampler_matches_exact_correlations() {
    let grid = GridSpec::from_points(2.0, 33).unwrap();
    for (idx, model) in [
        CorrelationModel::powered_exponential(1.0, 1.0).unwrap(),
        CorrelationModel::powered_exponential(0.5, 1.8).unwrap(),
        CorrelationModel::generalized_cauchy(1.0, 1.0, 2.0).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        let sampler = StationaryGpSampler::new(model, grid).unwrap();
        assert!(matches!(sampler.route(), SamplingRoute::Circulant { .. }));
        let paths = sample_many(30_000, 100 + idx as u64, |s| sampler.sample_path(s));
        let pairs = [(0, 0), (0, 1), (0, 4), (0, 16), (5, 21)];
        let ests = empirical_covariance(&paths, &pairs).unwrap();
        for (&(i, j), e) in pairs.iter().zip(&ests) {
            let gap = grid.time(j) - grid.time(i);
            let target = model.correlation(gap);
            let z = (e.mean - target) / e.stderr;
            assert!(
                z.abs() < 4.5,
                "{model:?} lag {gap}: {} vs {target} (z={z:.2})",
                e.mean
            );
        }
    }
}

#[test]
fn dense_route_agrees_with_circulant_route() {
    let grid = GridSpec::from_points(1.0, 9).unwrap();
    let model = CorrelationModel::powered_exponential(2.0, 0.8).unwrap();
    let circ = StationaryGpSampler::with_route(model, grid, RoutePolicy::RequireCirculant).unwrap();
    let dense = StationaryGpSampler::with_route(model, grid, RoutePolicy::ForceDense).unwrap();
    assert_eq!(dense.route(), SamplingRoute::Dense);

    let paths_c = sample_many(25_000, 200, |s| circ.sample_path(s));
    let paths_d = sample_many(25_000, 300, |s| dense.sample_path(s));
    let pairs = [(0, 1), (0, 5), (2, 7)];
    let ec = empirical_covariance(&paths_c, &pairs).unwrap();
    let ed = empirical_covariance(&paths_d, &pairs).unwrap();
    for (c, d) in ec.iter().zip(&ed) {
        let z = (c.mean - d.mean) / c.combined_stderr(d);
        assert!(z.abs() < 4.5, "routes disagree: {} vs {} (z={z:.2})", c.mean, d.mean);
    }
}

#[test]
fn validation_harness_passes_on_honest_samplers() {
    let cfg = CheckConfig {
        replicas: 20_000,
        lags: vec![1, 4, 8],
        significance: 0.001,
    };
    let family = StreamFamily::new(424_242);

    let grid = GridSpec::from_points(2.0, 17).unwrap();
    let model = CorrelationModel::powered_exponential(1.0, 1.2).unwrap();
    let report = check_stationary_sampler(model, grid, &cfg, &family).unwrap();
    assert!(report.passed, "{report:#?}");

    let fgrid = GridSpec::from_points(1.0, 17).unwrap();
    let freport = check_fbm_sampler(0.8, fgrid, &cfg, &family.offset(1 << 30)).unwrap();
    assert!(freport.passed, "{freport:#?}");
    assert!(freport.starts_at_zero);
}

#[test]
fn variogram_slope_recovers_roughness() {
    // E (X(t+h) - X(t))^2 = 2 (1 - r(h)) ~ 2 c h^alpha: a log-log fit over
    // small lags recovers alpha from sampled paths alone.
    let alpha = 1.4;
    let model = CorrelationModel::powered_exponential(1.0, alpha).unwrap();
    let grid = GridSpec::from_points(0.125, 33).unwrap(); // step 1/256
    let sampler = StationaryGpSampler::new(model, grid).unwrap();
    let paths = sample_many(40_000, 400, |s| sampler.sample_path(s));
    let lags = [1usize, 2, 4, 8];
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &lag in &lags {
        let mean_sq: f64 = paths
            .iter()
            .map(|p| (p.values[lag] - p.values[0]).powi(2))
            .sum::<f64>()
            / paths.len() as f64;
        let x = (grid.time(lag)).ln();
        let y = mean_sq.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let n = lags.len() as f64;
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert!(
        (slope - alpha).abs() < 0.05,
        "variogram slope {slope} vs declared {alpha}"
    );
}
