//! Statistical validation of the exact samplers: does the sampled ensemble
//! actually have the covariance, marginals, and stationarity it claims?
//!
//! These checks are Monte Carlo, not proofs: each compares an empirical
//! quantity against its exact target with a z-score or a Kolmogorov-Smirnov
//! statistic at a configurable significance level. They back the CLI's
//! sampler-validation command and the crate's own integration tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{
    CorrelationModel, FbmSampler, GridSpec, SamplingRoute, StationaryGpSampler,
};
use crate::stats::{
    ks_critical_value, ks_statistic, ks_two_sample, normal_quantile, normal_survival,
    run_batches, Estimate, StreamFamily, DEFAULT_BATCH_SIZE,
};

use super::local_expansion_check;
use super::ExpansionFit;

/// Budget and thresholds for a validation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckConfig {
    pub replicas: u64,
    /// Lags (in grid steps) at which covariances are compared.
    pub lags: Vec<usize>,
    /// Per-check significance level for z and KS thresholds.
    pub significance: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            replicas: 20_000,
            lags: vec![1, 2, 4, 8],
            significance: 0.01,
        }
    }
}

impl CheckConfig {
    fn validate(&self) -> Result<()> {
        if self.replicas < 100 {
            return Err(Error::config(
                "sampler validation needs at least 100 replicas".to_string(),
            ));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::config(format!(
                "significance must lie in (0, 1), got {}",
                self.significance
            )));
        }
        Ok(())
    }

    fn z_threshold(&self) -> f64 {
        normal_quantile(1.0 - self.significance / 2.0).expect("validated significance")
    }
}

/// One empirical-vs-exact moment comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentCheck {
    /// What is being compared, e.g. `cov(X(0), X(0.25))`.
    pub label: String,
    pub expected: f64,
    pub estimate: Estimate,
    pub z_score: f64,
    pub passed: bool,
}

impl MomentCheck {
    fn new(label: String, expected: f64, estimate: Estimate, threshold: f64) -> Self {
        let z = (estimate.mean - expected) / estimate.stderr.max(f64::MIN_POSITIVE);
        Self {
            label,
            expected,
            estimate,
            z_score: z,
            passed: z.abs() <= threshold,
        }
    }
}

/// A Kolmogorov-Smirnov comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KsCheck {
    pub label: String,
    pub statistic: f64,
    pub critical: f64,
    pub passed: bool,
}

/// Full report for a stationary-process sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryReport {
    pub route: SamplingRoute,
    pub expansion: ExpansionFit,
    pub moment_checks: Vec<MomentCheck>,
    pub marginal_ks: KsCheck,
    pub stationarity_ks: KsCheck,
    pub passed: bool,
}

/// Full report for a fractional-Brownian-motion sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FbmReport {
    pub moment_checks: Vec<MomentCheck>,
    pub increment_stationarity_ks: KsCheck,
    pub starts_at_zero: bool,
    pub passed: bool,
}

struct MomentAcc {
    sums: Vec<f64>,
    sum_sqs: Vec<f64>,
    spot_a: Vec<f64>,
    spot_b: Vec<f64>,
}

/// Validate a stationary sampler: lag covariances, marginal law, and a
/// two-index stationarity comparison, plus the analytic small-gap check of
/// the model itself.
pub fn check_stationary_sampler(
    model: CorrelationModel,
    grid: GridSpec,
    cfg: &CheckConfig,
    family: &StreamFamily,
) -> Result<StationaryReport> {
    cfg.validate()?;
    let expansion = local_expansion_check(&model)?;
    let sampler = StationaryGpSampler::new(model, grid)?;
    let max_lag = cfg.lags.iter().copied().max().unwrap_or(0);
    if max_lag >= grid.points() {
        return Err(Error::config(format!(
            "lag {max_lag} outside grid of {} points",
            grid.points()
        )));
    }
    let mid = grid.points() / 2;
    let last = grid.points() - 1;
    let n_stats = cfg.lags.len() + 1; // covariances plus variance at mid

    let partials = run_batches(cfg.replicas, DEFAULT_BATCH_SIZE, family, |rng, count| {
        let mut ws = sampler.workspace();
        let mut x = vec![0.0; grid.points()];
        let mut acc = MomentAcc {
            sums: vec![0.0; n_stats],
            sum_sqs: vec![0.0; n_stats],
            spot_a: Vec::with_capacity(count as usize),
            spot_b: Vec::with_capacity(count as usize),
        };
        for _ in 0..count {
            sampler.sample_into(rng, &mut ws, &mut x);
            for (s, &lag) in cfg.lags.iter().enumerate() {
                let v = x[0] * x[lag];
                acc.sums[s] += v;
                acc.sum_sqs[s] += v * v;
            }
            let v = x[mid] * x[mid];
            acc.sums[n_stats - 1] += v;
            acc.sum_sqs[n_stats - 1] += v * v;
            acc.spot_a.push(x[mid]);
            acc.spot_b.push(x[last]);
        }
        acc
    });

    let mut sums = vec![0.0; n_stats];
    let mut sum_sqs = vec![0.0; n_stats];
    let mut spot_a = Vec::with_capacity(cfg.replicas as usize);
    let mut spot_b = Vec::with_capacity(cfg.replicas as usize);
    for p in partials {
        for s in 0..n_stats {
            sums[s] += p.sums[s];
            sum_sqs[s] += p.sum_sqs[s];
        }
        spot_a.extend(p.spot_a);
        spot_b.extend(p.spot_b);
    }

    let threshold = cfg.z_threshold();
    let mut moment_checks = Vec::with_capacity(n_stats);
    for (s, &lag) in cfg.lags.iter().enumerate() {
        let est = Estimate::from_moments(sums[s], sum_sqs[s], cfg.replicas)?;
        let t = grid.time(lag);
        moment_checks.push(MomentCheck::new(
            format!("cov(X(0), X({t}))"),
            model.correlation(t),
            est,
            threshold,
        ));
    }
    let est = Estimate::from_moments(sums[n_stats - 1], sum_sqs[n_stats - 1], cfg.replicas)?;
    moment_checks.push(MomentCheck::new(
        format!("var(X({}))", grid.time(mid)),
        1.0,
        est,
        threshold,
    ));

    let normal_cdf = |x: f64| 1.0 - normal_survival(x).expect("finite sample");
    let d = ks_statistic(&spot_a, normal_cdf)?;
    let marginal_ks = KsCheck {
        label: format!("X({}) vs standard normal", grid.time(mid)),
        statistic: d,
        critical: ks_critical_value(cfg.significance, cfg.replicas as f64)?,
        passed: d <= ks_critical_value(cfg.significance, cfg.replicas as f64)?,
    };
    let d2 = ks_two_sample(&spot_a, &spot_b)?;
    let n_eff = cfg.replicas as f64 / 2.0;
    let stationarity_ks = KsCheck {
        label: format!(
            "X({}) vs X({}) (two-sample)",
            grid.time(mid),
            grid.time(last)
        ),
        statistic: d2,
        critical: ks_critical_value(cfg.significance, n_eff)?,
        passed: d2 <= ks_critical_value(cfg.significance, n_eff)?,
    };

    let passed = moment_checks.iter().all(|c| c.passed)
        && marginal_ks.passed
        && stationarity_ks.passed;
    Ok(StationaryReport {
        route: sampler.route(),
        expansion,
        moment_checks,
        marginal_ks,
        stationarity_ks,
        passed,
    })
}

/// Validate a fractional-Brownian-motion sampler: `B(0) = 0`, variance
/// growth `t^alpha` at probe times, the covariance identity at a sample
/// pair, and increment stationarity across the grid.
pub fn check_fbm_sampler(
    alpha: f64,
    grid: GridSpec,
    cfg: &CheckConfig,
    family: &StreamFamily,
) -> Result<FbmReport> {
    cfg.validate()?;
    let sampler = FbmSampler::new(alpha, grid)?;
    let last = grid.points() - 1;
    let mid = grid.points() / 2;
    if mid == 0 || mid == last {
        return Err(Error::config(
            "fBm validation needs a grid of at least 3 points".to_string(),
        ));
    }
    let n_stats = 3; // var(mid), var(last), cov(mid, last)

    let partials = run_batches(cfg.replicas, DEFAULT_BATCH_SIZE, family, |rng, count| {
        let mut ws = sampler.workspace();
        let mut x = vec![0.0; grid.points()];
        let mut acc = MomentAcc {
            sums: vec![0.0; n_stats],
            sum_sqs: vec![0.0; n_stats],
            spot_a: Vec::with_capacity(count as usize),
            spot_b: Vec::with_capacity(count as usize),
        };
        let mut starts_ok = 0.0;
        for _ in 0..count {
            sampler.sample_into(rng, &mut ws, &mut x);
            if x[0] == 0.0 {
                starts_ok += 1.0;
            }
            for (s, v) in [x[mid] * x[mid], x[last] * x[last], x[mid] * x[last]]
                .into_iter()
                .enumerate()
            {
                acc.sums[s] += v;
                acc.sum_sqs[s] += v * v;
            }
            acc.spot_a.push(x[1] - x[0]);
            acc.spot_b.push(x[last] - x[last - 1]);
        }
        // Smuggle the exact-zero count through an unused slot.
        acc.sums.push(starts_ok);
        acc
    });

    let mut sums = vec![0.0; n_stats];
    let mut sum_sqs = vec![0.0; n_stats];
    let mut starts_ok = 0.0;
    let mut first_inc = Vec::with_capacity(cfg.replicas as usize);
    let mut last_inc = Vec::with_capacity(cfg.replicas as usize);
    for p in partials {
        for s in 0..n_stats {
            sums[s] += p.sums[s];
            sum_sqs[s] += p.sum_sqs[s];
        }
        starts_ok += p.sums[n_stats];
        first_inc.extend(p.spot_a);
        last_inc.extend(p.spot_b);
    }

    let threshold = cfg.z_threshold();
    let labels_targets = [
        (
            format!("var(B({}))", grid.time(mid)),
            grid.time(mid).powf(alpha),
        ),
        (
            format!("var(B({}))", grid.time(last)),
            grid.time(last).powf(alpha),
        ),
        (
            format!("cov(B({}), B({}))", grid.time(mid), grid.time(last)),
            super::fbm_covariance(alpha, grid.time(mid), grid.time(last)),
        ),
    ];
    let mut moment_checks = Vec::with_capacity(n_stats);
    for (s, (label, target)) in labels_targets.into_iter().enumerate() {
        let est = Estimate::from_moments(sums[s], sum_sqs[s], cfg.replicas)?;
        moment_checks.push(MomentCheck::new(label, target, est, threshold));
    }

    let d = ks_two_sample(&first_inc, &last_inc)?;
    let n_eff = cfg.replicas as f64 / 2.0;
    let increment_stationarity_ks = KsCheck {
        label: "first vs last grid increment (two-sample)".to_string(),
        statistic: d,
        critical: ks_critical_value(cfg.significance, n_eff)?,
        passed: d <= ks_critical_value(cfg.significance, n_eff)?,
    };

    let starts_at_zero = starts_ok == cfg.replicas as f64;
    let passed = moment_checks.iter().all(|c| c.passed)
        && increment_stationarity_ks.passed
        && starts_at_zero;
    Ok(FbmReport {
        moment_checks,
        increment_stationarity_ks,
        starts_at_zero,
        passed,
    })
}

/// Compare the circulant and dense routes of the same stationary model on a
/// small grid: each route's lag-covariance estimates must agree with the
/// exact values, using independent streams.
pub fn compare_routes(
    model: CorrelationModel,
    grid: GridSpec,
    cfg: &CheckConfig,
    family: &StreamFamily,
) -> Result<Vec<MomentCheck>> {
    use crate::gauss::RoutePolicy;
    cfg.validate()?;
    let threshold = cfg.z_threshold();
    let mut checks = Vec::new();
    for (name, policy, fam) in [
        ("circulant", RoutePolicy::RequireCirculant, family.offset(0)),
        ("dense", RoutePolicy::ForceDense, family.offset(1 << 20)),
    ] {
        let sampler = StationaryGpSampler::with_route(model, grid, policy)?;
        let lag = (grid.points() - 1).min(2);
        let partials = run_batches(cfg.replicas, DEFAULT_BATCH_SIZE, &fam, |rng, count| {
            let mut ws = sampler.workspace();
            let mut x = vec![0.0; grid.points()];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                sampler.sample_into(rng, &mut ws, &mut x);
                let v = x[0] * x[lag];
                s += v;
                s2 += v * v;
            }
            (s, s2)
        });
        let (sum, sum_sq) = partials
            .iter()
            .fold((0.0, 0.0), |(a, b), (s, s2)| (a + s, b + s2));
        let est = Estimate::from_moments(sum, sum_sq, cfg.replicas)?;
        let t = grid.time(lag);
        checks.push(MomentCheck::new(
            format!("{name} route: cov(X(0), X({t}))"),
            model.correlation(t),
            est,
            threshold,
        ));
    }
    Ok(checks)
}
