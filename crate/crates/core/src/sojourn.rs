//! Sojourn times of the conjunction above a level, and the two sides of the
//! sojourn limit: the normalized integrated sojourn tail of the original
//! processes on one side, the occupation-time tail `B(x)` of the limit field
//! on the other.
//!
//! The estimator of the sojourn time uses a left-endpoint rule whose last
//! cell is truncated at the window edge, so the identity
//! `E[L] = t * Psi(u)^n` holds exactly for every pitch — a zero-slack check
//! on the whole sampling stack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{GridSpec, StationaryGpSampler};
use crate::limit::{
    certify_truncation, occupation_time_from_origin, validate_variant, EnsembleSpec,
    LimitPathSampler, LimitVariant,
};
use crate::stats::{run_batches, Estimate, StreamFamily, DEFAULT_BATCH_SIZE};

/// One simulated sojourn time: the time in `[0, t]` that the pointwise
/// minimum of the ensemble spends above `u`, measured on a grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SojournSample {
    /// Sojourn time; lies in `[0, t]`.
    pub l: f64,
    pub u: f64,
    pub t: f64,
    /// Grid pitch the Riemann sum used.
    pub pitch: f64,
}

/// Simulate sojourn times of the conjunction above `u` on `[0, t]`.
///
/// The grid pitch is `gap * |u|^(-2/alpha_min)`. Cell `k` covers
/// `[k pitch, (k+1) pitch)` clipped to the window and is counted by its left
/// endpoint, so the cell weights sum to `t` exactly and the estimator's mean
/// is `t * Psi(u)^n` with no discretization slack.
pub fn mc_sojourn(
    spec: &EnsembleSpec,
    t: f64,
    u: f64,
    gap: f64,
    replicas: u64,
    family: &StreamFamily,
) -> Result<Vec<SojournSample>> {
    validate_variant(spec, LimitVariant::Standard)?;
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::config(format!(
            "window length must be positive and finite, got {t}"
        )));
    }
    if !(u.is_finite() && u != 0.0) {
        return Err(Error::config(format!(
            "level must be finite and nonzero, got {u}"
        )));
    }
    if !(gap.is_finite() && gap > 0.0) {
        return Err(Error::config(format!(
            "gap must be positive and finite, got {gap}"
        )));
    }
    if replicas == 0 {
        return Err(Error::config("need at least one replica".to_string()));
    }
    let pitch = gap * u.abs().powf(-2.0 / spec.alpha_min());
    let cells = ((t / pitch) - 1e-9).ceil().max(1.0) as usize;
    if cells > 2_000_000 {
        return Err(Error::config(format!(
            "grid of {cells} cells is too large; increase the gap"
        )));
    }
    // Left endpoints k * pitch for k < cells; the sampler needs at least two
    // points, extra points get zero weight.
    let points = cells.max(2);
    let weights: Vec<f64> = (0..points)
        .map(|k| (t - k as f64 * pitch).clamp(0.0, pitch))
        .collect();
    debug_assert!((weights.iter().sum::<f64>() - t).abs() < 1e-9 * t.max(1.0));
    let grid = GridSpec::from_points(pitch * (points - 1) as f64, points)?;
    let samplers: Vec<StationaryGpSampler> = spec
        .processes()
        .iter()
        .map(|p| StationaryGpSampler::new(p.model, grid))
        .collect::<Result<_>>()?;
    let n = samplers.len();

    let chunks = run_batches(replicas, DEFAULT_BATCH_SIZE, family, |rng, count| {
        let mut ws: Vec<_> = samplers.iter().map(|s| s.workspace()).collect();
        let mut above = vec![0u32; points];
        let mut path = vec![0.0; points];
        let mut out = Vec::with_capacity(count as usize);
        for _ in 0..count {
            above.fill(0);
            for (i, s) in samplers.iter().enumerate() {
                s.sample_into(rng, &mut ws[i], &mut path);
                for (c, &x) in above.iter_mut().zip(path.iter()) {
                    if x > u {
                        *c += 1;
                    }
                }
            }
            let l: f64 = weights
                .iter()
                .zip(above.iter())
                .filter(|(_, &c)| c as usize == n)
                .map(|(w, _)| w)
                .sum();
            out.push(SojournSample { l, u, t, pitch });
        }
        out
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Mean sojourn time with its standard error.
pub fn sojourn_mean(samples: &[SojournSample]) -> Result<Estimate> {
    if samples.is_empty() {
        return Err(Error::InsufficientData(
            "no sojourn samples".to_string(),
        ));
    }
    let ls: Vec<f64> = samples.iter().map(|s| s.l).collect();
    Estimate::from_samples(&ls)
}

/// Left-hand side of the sojourn limit at `x`:
///
/// `int_x^inf P(R > y) dy / E[R]  =  E[(R - x)^+] / E[R]`
///
/// with `R = u^(2/alpha_min) L` the rescaled sojourn time. The integral is
/// evaluated in closed form from the empirical distribution; the standard
/// error comes from the delta method for the correlated ratio.
pub fn berman_lhs(samples: &[SojournSample], x: f64, u: f64, alpha_min: f64) -> Result<Estimate> {
    if samples.is_empty() {
        return Err(Error::InsufficientData(
            "no sojourn samples".to_string(),
        ));
    }
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::domain(format!(
            "evaluation point must be nonnegative and finite, got {x}"
        )));
    }
    if !(u.is_finite() && u > 0.0) {
        return Err(Error::domain(format!(
            "level must be positive and finite, got {u}"
        )));
    }
    if !(alpha_min > 0.0 && alpha_min <= 2.0) {
        return Err(Error::domain(format!(
            "roughness exponent must lie in (0, 2], got {alpha_min}"
        )));
    }
    let scale = u.powf(2.0 / alpha_min);
    let m = samples.len() as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let r = scale * s.l;
        let a = (r - x).max(0.0);
        sa += a;
        sb += r;
        saa += a * a;
        sbb += r * r;
        sab += a * r;
    }
    if sb <= 0.0 {
        return Err(Error::DegenerateStatistic(
            "every rescaled sojourn time is zero; the normalized tail is undefined".to_string(),
        ));
    }
    let (abar, bbar) = (sa / m, sb / m);
    let theta = abar / bbar;
    let stderr = if samples.len() < 2 {
        0.0
    } else {
        let denom = m - 1.0;
        let var_a = (saa - m * abar * abar) / denom;
        let var_b = (sbb - m * bbar * bbar) / denom;
        let cov = (sab - m * abar * bbar) / denom;
        let v = (var_a - 2.0 * theta * cov + theta * theta * var_b).max(0.0) / (m * bbar * bbar);
        v.sqrt()
    };
    Ok(Estimate::new(theta, stderr, samples.len() as u64))
}

/// Tail of the occupation time of the limit field, estimated on a certified
/// finite horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BTable {
    pub x: Vec<f64>,
    pub b: Vec<Estimate>,
    pub gap: f64,
    pub steps: usize,
    pub replicas: u64,
    /// Certified bound on the probability mass beyond the horizon.
    pub truncation_bound: f64,
}

/// Estimate `B(x) = P(occupation time of the limit field > x)` on an x-grid.
///
/// Refuses to run unless the probability that the field is positive beyond
/// the simulated horizon certifies below `tolerance`. On a fixed sample the
/// estimate is exactly 1 at `x = 0` (the field starts positive), exactly 0
/// for `x >= steps * gap` (the horizon cap), and nonincreasing across the
/// grid.
pub fn estimate_b(
    spec: &EnsembleSpec,
    gap: f64,
    steps: usize,
    replicas: u64,
    x_grid: &[f64],
    family: &StreamFamily,
    tolerance: f64,
) -> Result<BTable> {
    if x_grid.is_empty() {
        return Err(Error::config("empty x-grid".to_string()));
    }
    if x_grid.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::config(
            "x-grid values must be nonnegative and finite".to_string(),
        ));
    }
    if x_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(
            "x-grid must be strictly increasing".to_string(),
        ));
    }
    if replicas == 0 {
        return Err(Error::config("need at least one replica".to_string()));
    }
    let bound = certify_truncation(spec, LimitVariant::Standard, gap, steps, tolerance)?;
    let sampler = LimitPathSampler::new(spec, LimitVariant::Standard, gap, steps)?;
    let partials = run_batches(replicas, DEFAULT_BATCH_SIZE, family, |rng, count| {
        let mut ws = sampler.workspace();
        let mut out = vec![0.0; steps];
        let mut hits = vec![0u64; x_grid.len()];
        for _ in 0..count {
            sampler.sample_min_path(rng, &mut ws, &mut out);
            let occ = occupation_time_from_origin(&out, gap).expect("finite field values");
            for (h, &x) in hits.iter_mut().zip(x_grid.iter()) {
                if occ > x {
                    *h += 1;
                }
            }
        }
        hits
    });
    let mut hits = vec![0u64; x_grid.len()];
    for p in partials {
        for (h, x) in hits.iter_mut().zip(p) {
            *h += x;
        }
    }
    let b = hits
        .iter()
        .map(|&h| Estimate::from_binomial(h, replicas))
        .collect::<Result<Vec<_>>>()?;
    Ok(BTable {
        x: x_grid.to_vec(),
        b,
        gap,
        steps,
        replicas,
        truncation_bound: bound,
    })
}

/// One `(u, x)` entry of the sojourn-limit comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BermanRow {
    pub u: f64,
    pub x: f64,
    pub lhs: Estimate,
    pub b_hat: Estimate,
    pub abs_diff: f64,
    pub combined_stderr: f64,
}

/// Whether the discrepancy at a fixed `x` shrank from the smallest to the
/// largest level, within error bars.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BermanImprovement {
    pub x: f64,
    pub diff_at_first_u: f64,
    pub diff_at_last_u: f64,
    pub improved_within_error: bool,
}

/// Budgets for [`berman_compare`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BermanConfig {
    /// Dimensionless grid gap for the process-side sojourn simulation.
    pub path_gap: f64,
    pub path_replicas: u64,
    /// Grid gap for the limit-field occupation simulation.
    pub limit_gap: f64,
    pub limit_steps: usize,
    pub limit_replicas: u64,
    pub truncation_tolerance: f64,
}

impl Default for BermanConfig {
    fn default() -> Self {
        Self {
            path_gap: 0.25,
            path_replicas: 200_000,
            limit_gap: 0.1,
            limit_steps: 600,
            limit_replicas: 200_000,
            truncation_tolerance: 1e-3,
        }
    }
}

/// Mean sojourn time at one level, kept alongside the comparison because
/// its exact value `t Psi(u)^n` makes it a free zero-slack check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SojournMeanRow {
    pub u: f64,
    pub mean: Estimate,
}

/// Side-by-side comparison of the two sides of the sojourn limit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BermanReport {
    pub t: f64,
    pub rows: Vec<BermanRow>,
    pub improvements: Vec<BermanImprovement>,
    /// Per-level mean sojourn times from the same samples as `rows`.
    pub sojourn_means: Vec<SojournMeanRow>,
    pub truncation_bound: f64,
}

impl BermanReport {
    /// CSV rendering with columns `u,x,lhs,lhs_err,B_hat,B_err,abs_diff`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,x,lhs,lhs_err,B_hat,B_err,abs_diff\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.u, r.x, r.lhs.mean, r.lhs.stderr, r.b_hat.mean, r.b_hat.stderr, r.abs_diff
            ));
        }
        out
    }
}

/// Estimate both sides of the sojourn limit on a `(u, x)` grid and report
/// per-cell discrepancies with combined error bars, plus a per-`x` flag for
/// whether the discrepancy shrank from the first level to the last.
pub fn berman_compare(
    spec: &EnsembleSpec,
    t: f64,
    u_list: &[f64],
    x_grid: &[f64],
    cfg: &BermanConfig,
    family: &StreamFamily,
) -> Result<BermanReport> {
    if u_list.is_empty() {
        return Err(Error::config("empty level list".to_string()));
    }
    if u_list.iter().any(|u| !(u.is_finite() && *u > 0.0)) {
        return Err(Error::config(
            "levels must be positive and finite".to_string(),
        ));
    }
    let b_table = estimate_b(
        spec,
        cfg.limit_gap,
        cfg.limit_steps,
        cfg.limit_replicas,
        x_grid,
        &family.offset(1 << 24),
        cfg.truncation_tolerance,
    )?;
    let alpha_min = spec.alpha_min();
    let mut rows = Vec::with_capacity(u_list.len() * x_grid.len());
    let mut sojourn_means = Vec::with_capacity(u_list.len());
    for (ui, &u) in u_list.iter().enumerate() {
        let samples = mc_sojourn(
            spec,
            t,
            u,
            cfg.path_gap,
            cfg.path_replicas,
            &family.offset(((ui + 1) as u64) << 16),
        )?;
        sojourn_means.push(SojournMeanRow {
            u,
            mean: sojourn_mean(&samples)?,
        });
        for (xi, &x) in x_grid.iter().enumerate() {
            let lhs = berman_lhs(&samples, x, u, alpha_min)?;
            let b_hat = b_table.b[xi];
            rows.push(BermanRow {
                u,
                x,
                abs_diff: (lhs.mean - b_hat.mean).abs(),
                combined_stderr: lhs.combined_stderr(&b_hat),
                lhs,
                b_hat,
            });
        }
    }
    let mut improvements = Vec::new();
    if u_list.len() >= 2 {
        let last_block = (u_list.len() - 1) * x_grid.len();
        for (xi, &x) in x_grid.iter().enumerate() {
            let first = &rows[xi];
            let last = &rows[last_block + xi];
            let slack =
                2.0 * (first.combined_stderr.powi(2) + last.combined_stderr.powi(2)).sqrt();
            improvements.push(BermanImprovement {
                x,
                diff_at_first_u: first.abs_diff,
                diff_at_last_u: last.abs_diff,
                improved_within_error: last.abs_diff <= first.abs_diff + slack,
            });
        }
    }
    Ok(BermanReport {
        t,
        rows,
        improvements,
        sojourn_means,
        truncation_bound: b_table.truncation_bound,
    })
}
