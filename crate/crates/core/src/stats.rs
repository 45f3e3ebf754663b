//! Scalar statistics, deterministic random streams, and estimates with
//! uncertainty.
//!
//! Everything downstream leans on three things defined here:
//!
//! * numerically careful normal-tail functions ([`normal_survival`],
//!   [`normal_survival_asymptotic`], [`normal_quantile`]);
//! * counter-based random streams ([`RandomStream`], [`StreamFamily`]) that
//!   make every Monte Carlo run reproducible independently of thread count;
//! * [`Estimate`], the universal "value with a standard error" carrier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// sqrt(2), to full double precision.
pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// sqrt(2*pi), to full double precision.
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Default number of replicas simulated per random stream.
///
/// Batches are the unit of parallel work *and* of stream assignment: batch
/// `b` always uses stream index `b`, so results are identical for any worker
/// count.
pub const DEFAULT_BATCH_SIZE: u64 = 4096;

/// Upper tail of the standard normal distribution,
/// `P(N(0,1) > u) = erfc(u / sqrt(2)) / 2`.
///
/// Accurate to a few ulp across the whole range, including far tails where a
/// naive `1 - cdf(u)` loses all precision (e.g. `u = 8` gives `6.22e-16`).
///
/// Errors if `u` is NaN or infinite.
pub fn normal_survival(u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::domain(format!(
            "normal_survival requires a finite argument, got {u}"
        )));
    }
    Ok(0.5 * libm::erfc(u / SQRT_2))
}

/// First-order tail approximation `exp(-u^2/2) / (u * sqrt(2*pi))`.
///
/// This is the leading term of the expansion of [`normal_survival`] for large
/// `u`; the relative error is below 2% once `u >= 8` and shrinks like
/// `1/u^2`. Requires `u > 0` (the expansion is one-sided).
pub fn normal_survival_asymptotic(u: f64) -> Result<f64> {
    if !(u.is_finite() && u > 0.0) {
        return Err(Error::domain(format!(
            "normal_survival_asymptotic requires u > 0, got {u}"
        )));
    }
    Ok((-0.5 * u * u).exp() / (u * SQRT_2PI))
}

/// Quantile function of the standard normal distribution.
///
/// Rational initial guess refined by one Halley step against the
/// complementary error function; absolute error is at the few-ulp level over
/// `p` in (0, 1). Errors for `p` outside the open interval.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p.is_finite() && p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "normal_quantile requires p in (0, 1), got {p}"
        )));
    }
    let x = acklam_quantile(p);
    // One Halley refinement using the exact CDF residual.
    let cdf = 0.5 * libm::erfc(-x / SQRT_2);
    let e = cdf - p;
    let u = e * SQRT_2PI * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Peter Acklam's rational approximation to the normal quantile
/// (relative error below 1.15e-9 before refinement).
fn acklam_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// A single reproducible generator: ChaCha8 keyed by a master seed, with a
/// 64-bit stream index selecting one of 2^64 non-overlapping substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RandomStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    /// Instantiate the generator. Two calls always yield identical output.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

/// A contiguous block of stream indices under one master seed.
///
/// Estimators take a `StreamFamily` and consume indices `0, 1, 2, ...`
/// relative to the family's base, one per batch of replicas. Callers that run
/// several estimators under one seed keep them disjoint with [`offset`],
/// using generously spaced blocks (the index space is 64-bit, so spacing by
/// e.g. `1 << 32` per task costs nothing).
///
/// [`offset`]: StreamFamily::offset
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamFamily {
    master_seed: u64,
    base_index: u64,
}

impl StreamFamily {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            base_index: 0,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// The stream at `index` relative to this family's base.
    pub fn stream(&self, index: u64) -> RandomStream {
        RandomStream::new(self.master_seed, self.base_index.wrapping_add(index))
    }

    /// A subfamily starting `delta` indices above this family's base.
    pub fn offset(&self, delta: u64) -> StreamFamily {
        StreamFamily {
            master_seed: self.master_seed,
            base_index: self.base_index.wrapping_add(delta),
        }
    }
}

/// Split `replicas` into batches of `batch_size` (last one ragged), run
/// `body` on each batch with its own stream, and fold the per-batch
/// accumulators **in batch order**.
///
/// The fold order — and therefore the result, bit for bit — does not depend
/// on how rayon schedules the batches.
pub fn run_batches<A, F>(
    replicas: u64,
    batch_size: u64,
    family: &StreamFamily,
    body: F,
) -> Vec<A>
where
    A: Send,
    F: Fn(&mut ChaCha8Rng, u64) -> A + Sync,
{
    assert!(batch_size > 0, "batch_size must be positive");
    let n_batches = replicas.div_ceil(batch_size);
    (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let count = batch_size.min(replicas - b * batch_size);
            let mut rng = family.stream(b).rng();
            body(&mut rng, count)
        })
        .collect()
}

/// A Monte Carlo (or otherwise noisy) scalar with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    /// Number of independent replicas behind the estimate.
    pub replicas: u64,
    /// Two-sided confidence level used by [`Estimate::ci`].
    pub ci_level: f64,
}

impl Estimate {
    pub const DEFAULT_CI_LEVEL: f64 = 0.95;

    pub fn new(mean: f64, stderr: f64, replicas: u64) -> Self {
        Self {
            mean,
            stderr,
            replicas,
            ci_level: Self::DEFAULT_CI_LEVEL,
        }
    }

    pub fn with_ci_level(mut self, level: f64) -> Result<Self> {
        if !(level.is_finite() && level > 0.0 && level < 1.0) {
            return Err(Error::domain(format!(
                "confidence level must lie in (0, 1), got {level}"
            )));
        }
        self.ci_level = level;
        Ok(self)
    }

    /// Proportion estimate from a Bernoulli count, with the binomial
    /// standard error `sqrt(p (1 - p) / trials)`.
    pub fn from_binomial(successes: u64, trials: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::domain(
                "binomial estimate requires at least one trial".to_string(),
            ));
        }
        if successes > trials {
            return Err(Error::domain(format!(
                "successes ({successes}) exceed trials ({trials})"
            )));
        }
        let p = successes as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        Ok(Self::new(p, se, trials))
    }

    /// Sample mean with standard error `s / sqrt(n)`.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        Self::from_moments(
            samples.iter().sum(),
            samples.iter().map(|x| x * x).sum(),
            samples.len() as u64,
        )
    }

    /// Mean/stderr from accumulated first and second moments.
    pub fn from_moments(sum: f64, sum_sq: f64, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain(
                "mean estimate requires at least one sample".to_string(),
            ));
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = ((sum_sq / nf) - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
        Ok(Self::new(mean, (var / nf).sqrt(), n))
    }

    /// Two-sided normal confidence interval at `ci_level`.
    pub fn ci(&self) -> (f64, f64) {
        let h = self.half_width();
        (self.mean - h, self.mean + h)
    }

    /// Half-width of [`Estimate::ci`].
    pub fn half_width(&self) -> f64 {
        let z = normal_quantile(0.5 * (1.0 + self.ci_level))
            .expect("ci_level validated at construction");
        z * self.stderr
    }

    /// Standard error of the difference of two independent estimates.
    pub fn combined_stderr(&self, other: &Estimate) -> f64 {
        (self.stderr * self.stderr + other.stderr * other.stderr).sqrt()
    }

    /// Scale the estimate (and its standard error) by a positive constant.
    pub fn scaled(&self, factor: f64) -> Estimate {
        Estimate {
            mean: self.mean * factor,
            stderr: self.stderr * factor.abs(),
            ..*self
        }
    }
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against the
/// continuous CDF `cdf`.
pub fn ks_statistic<F>(samples: &[f64], cdf: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if samples.is_empty() {
        return Err(Error::domain(
            "KS statistic requires at least one sample".to_string(),
        ));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("samples must not contain NaN"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    Ok(d)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::domain(
            "two-sample KS requires non-empty samples on both sides".to_string(),
        ));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).expect("samples must not contain NaN"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("samples must not contain NaN"));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        // Advance both sides past the next distinct value so ties are
        // compared after all equal observations are counted.
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// Asymptotic Kolmogorov-Smirnov critical value at significance `alpha` for
/// effective sample size `n_eff` (`n` for one sample, `n m / (n + m)` for
/// two): `sqrt(-ln(alpha/2) / 2) / sqrt(n_eff)`.
pub fn ks_critical_value(alpha: f64, n_eff: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    if !(n_eff.is_finite() && n_eff > 0.0) {
        return Err(Error::domain(format!(
            "effective sample size must be positive, got {n_eff}"
        )));
    }
    Ok((-(alpha / 2.0).ln() / 2.0).sqrt() / n_eff.sqrt())
}
