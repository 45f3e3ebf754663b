//! Threshold-crossing probabilities of the original processes: direct Monte
//! Carlo with grid-refinement diagnostics, closed-form high-threshold
//! approximations, ratio diagnostics between the two, and conditional
//! sampling of excursions above the threshold.
//!
//! The central scaling: near a high threshold `u` everything happens on the
//! local time scale `q(u) = u^(-2/alpha_min)`, so grids are specified by a
//! dimensionless gap `a` with physical pitch `a q(u)`, and Monte Carlo
//! estimates are compared against approximations of the form
//! `H * T * u^(2/alpha_min) * (per-process tail factors)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{DenseFactor, GridSpec, RoutePolicy, StationaryGpSampler};
use crate::limit::{
    validate_variant, EnsembleSpec, LimitTimesSampler, LimitVariant, TimeChangeLaw,
};
use crate::stats::{
    normal_quantile, normal_survival, normal_survival_asymptotic, run_batches, Estimate,
    StreamFamily, DEFAULT_BATCH_SIZE,
};

/// A threshold-crossing probability to estimate:
/// `P(sup_{t in [0, horizon]} statistic(t) > threshold)` where the statistic
/// is the variant's combination of the ensemble's processes (minimum, j-th
/// largest, scaled minimum, or minimum under random clocks).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailQuery {
    pub spec: EnsembleSpec,
    pub variant: LimitVariant,
    /// Observation window length `T`.
    pub horizon: f64,
    /// Threshold `u > 0`.
    pub threshold: f64,
    /// Dimensionless grid gap `a`; the physical pitch is `a u^(-2/alpha_min)`.
    pub gap: f64,
    pub replicas: u64,
}

impl TailQuery {
    pub fn validate(&self) -> Result<()> {
        validate_variant(&self.spec, self.variant)?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::config(format!(
                "threshold must be positive and finite, got {}",
                self.threshold
            )));
        }
        if !(self.gap.is_finite() && self.gap > 0.0) {
            return Err(Error::config(format!(
                "gap must be positive and finite, got {}",
                self.gap
            )));
        }
        if self.replicas == 0 {
            return Err(Error::config("need at least one replica".to_string()));
        }
        Ok(())
    }

    /// The local time scale `q(u) = u^(-2/alpha_min)`.
    pub fn local_scale(&self) -> f64 {
        self.threshold.powf(-2.0 / self.spec.alpha_min())
    }
}

/// Options for the grid-refinement ladder.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LadderOptions {
    /// How many times the pitch is halved below the requested gap.
    pub refinement_levels: u32,
    /// Gate multiplier: a refinement step "moves" if it exceeds this many
    /// combined standard errors.
    pub gate_z: f64,
}

impl Default for LadderOptions {
    fn default() -> Self {
        Self {
            refinement_levels: 2,
            gate_z: 2.0,
        }
    }
}

/// One rung-to-rung comparison of the refinement ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatePair {
    pub pitch_coarse: f64,
    pub pitch_fine: f64,
    /// `p_fine - p_hat_coarse`; nonnegative because the grids nest replica
    /// by replica.
    pub diff: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Discretization diagnostics for a ladder run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateReport {
    pub pairs: Vec<GatePair>,
    /// Whether the final halving step was statistically quiet.
    pub converged: bool,
}

/// Result of a ladder run. The finest rung is the headline estimate; the
/// coarser rungs and the gate report qualify it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailResult {
    /// Physical pitches, coarsest first.
    pub pitches: Vec<f64>,
    /// Estimated crossing probability per rung, same order.
    pub estimates: Vec<Estimate>,
    pub gate: GateReport,
    pub final_estimate: Estimate,
}

enum ProcessSampler {
    /// One fixed sampler (deterministic clock).
    Plain(StationaryGpSampler),
    /// One sampler per speed atom (discrete random clock); `weight` is the
    /// atom's probability and selection consumes exactly one uniform, in
    /// atom order.
    PerAtom(Vec<AtomSampler>),
    /// Build per replica (continuous random clock).
    Continuous {
        model: crate::gauss::CorrelationModel,
        law: TimeChangeLaw,
        pitch: f64,
        points: usize,
    },
}

struct AtomSampler {
    weight: f64,
    sampler: StationaryGpSampler,
}

struct TailEngine {
    samplers: Vec<ProcessSampler>,
    thresholds: Vec<f64>,
    /// Count of processes that must exceed simultaneously (`j` for the
    /// order-statistic variant, `n` otherwise).
    need: usize,
    fine_points: usize,
}

impl TailEngine {
    fn build(query: &TailQuery, fine_pitch: f64, fine_points: usize) -> Result<Self> {
        // Path-level statistics always involve the whole ensemble; for the
        // order-statistic variant the threshold-count below is what drops
        // from "all n" to "at least j". (Only the limit-field samplers
        // restrict to j processes.)
        let n_used = query.spec.n();
        let span = fine_pitch * (fine_points - 1) as f64;
        let grid = GridSpec::from_points(span, fine_points)?;
        let mut samplers = Vec::with_capacity(n_used);
        let mut thresholds = Vec::with_capacity(n_used);
        for p in &query.spec.processes()[..n_used] {
            let sampler = match (query.variant, &p.time_change) {
                (LimitVariant::TimeChanged, Some(TimeChangeLaw::Discrete { atoms })) => {
                    let mut per = Vec::with_capacity(atoms.len());
                    for a in atoms {
                        if a.value <= 0.0 {
                            return Err(Error::config(
                                "crossing-probability simulation needs strictly positive clock speeds"
                                    .to_string(),
                            ));
                        }
                        let g = GridSpec::from_points(span * a.value, fine_points)?;
                        per.push(AtomSampler {
                            weight: a.weight,
                            sampler: StationaryGpSampler::new(p.model, g)?,
                        });
                    }
                    ProcessSampler::PerAtom(per)
                }
                (LimitVariant::TimeChanged, Some(law @ TimeChangeLaw::Uniform { lo, .. })) => {
                    if *lo <= 0.0 {
                        return Err(Error::config(
                            "crossing-probability simulation needs strictly positive clock speeds"
                                .to_string(),
                        ));
                    }
                    ProcessSampler::Continuous {
                        model: p.model,
                        law: law.clone(),
                        pitch: fine_pitch,
                        points: fine_points,
                    }
                }
                _ => ProcessSampler::Plain(StationaryGpSampler::new(p.model, grid)?),
            };
            samplers.push(sampler);
            let scale = match query.variant {
                LimitVariant::NonStandard => p.scale,
                _ => 1.0,
            };
            thresholds.push(scale * query.threshold);
        }
        let need = match query.variant {
            LimitVariant::OrderStat { j } => j,
            _ => n_used,
        };
        Ok(Self {
            samplers,
            thresholds,
            need,
            fine_points,
        })
    }

    fn workspace(&self) -> TailWorkspace {
        let per_process = self
            .samplers
            .iter()
            .map(|s| match s {
                ProcessSampler::Plain(g) => ProcessWorkspace::Plain(g.workspace()),
                // Embedding sizes can differ between atoms, so each atom
                // keeps its own workspace.
                ProcessSampler::PerAtom(atoms) => ProcessWorkspace::PerAtom(
                    atoms.iter().map(|a| a.sampler.workspace()).collect(),
                ),
                ProcessSampler::Continuous { .. } => ProcessWorkspace::None,
            })
            .collect();
        TailWorkspace {
            per_process,
            exceed_count: vec![0u32; self.fine_points],
            path: vec![0.0; self.fine_points],
        }
    }

    /// Sample all processes for one replica and fill
    /// `ws.exceed_count[k] = #(processes above their threshold at point k)`.
    /// Draw order per process: clock speed (if random), then path normals.
    fn fill_replica(&self, rng: &mut ChaCha8Rng, ws: &mut TailWorkspace) {
        ws.exceed_count.fill(0);
        for (i, s) in self.samplers.iter().enumerate() {
            let thr = self.thresholds[i];
            match (s, &mut ws.per_process[i]) {
                (ProcessSampler::Plain(g), ProcessWorkspace::Plain(w)) => {
                    g.sample_into(rng, w, &mut ws.path);
                }
                (ProcessSampler::PerAtom(atoms), ProcessWorkspace::PerAtom(aws)) => {
                    // One uniform selects the atom, walking weights in order
                    // (the same walk as the law's own sampler).
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut idx = atoms.len() - 1;
                    for (k, a) in atoms.iter().enumerate() {
                        acc += a.weight;
                        if u < acc {
                            idx = k;
                            break;
                        }
                    }
                    atoms[idx].sampler.sample_into(rng, &mut aws[idx], &mut ws.path);
                }
                (
                    ProcessSampler::Continuous {
                        model,
                        law,
                        pitch,
                        points,
                    },
                    ProcessWorkspace::None,
                ) => {
                    let speed = law.sample(rng);
                    let g = GridSpec::from_points(pitch * speed * (*points - 1) as f64, *points)
                        .expect("positive span");
                    let sampler =
                        StationaryGpSampler::new(*model, g).expect("validated model and grid");
                    let mut w = sampler.workspace();
                    sampler.sample_into(rng, &mut w, &mut ws.path);
                }
                _ => unreachable!("workspace built from the same sampler list"),
            }
            for (c, &x) in ws.exceed_count.iter_mut().zip(ws.path.iter()) {
                if x > thr {
                    *c += 1;
                }
            }
        }
    }
}

enum ProcessWorkspace {
    Plain(crate::gauss::PathWorkspace),
    PerAtom(Vec<crate::gauss::PathWorkspace>),
    None,
}

struct TailWorkspace {
    per_process: Vec<ProcessWorkspace>,
    exceed_count: Vec<u32>,
    path: Vec<f64>,
}

/// Estimate a crossing probability on a ladder of nested grids.
///
/// One simulation at the finest pitch serves every rung: rung `l` reads the
/// shared paths on the stride-`2^(L-l)` subgrid, so coarser rungs are exact
/// subsamples and the rung-to-rung differences are resolved replica by
/// replica. The gate flags the run when the final halving still moves the
/// estimate by more than `gate_z` combined standard errors — a sign the
/// grid, not the sampler, limits accuracy. The result is still returned;
/// the flag is the warning.
pub fn mc_sup_tail(
    query: &TailQuery,
    opts: &LadderOptions,
    family: &StreamFamily,
) -> Result<TailResult> {
    query.validate()?;
    if opts.refinement_levels > 8 {
        return Err(Error::config(format!(
            "refinement_levels {} is unreasonably deep (max 8)",
            opts.refinement_levels
        )));
    }
    let q = query.local_scale();
    let pitch0 = query.gap * q;
    let base_points = (query.horizon / pitch0 + 1e-9).floor() as usize + 1;
    if base_points < 2 {
        return Err(Error::config(format!(
            "horizon {} is shorter than one grid step {pitch0}",
            query.horizon
        )));
    }
    let levels = opts.refinement_levels as usize;
    let factor = 1usize << levels;
    let fine_points = (base_points - 1) * factor + 1;
    if fine_points > 4_000_000 {
        return Err(Error::config(format!(
            "grid of {fine_points} points is too large; increase the gap or lower the refinement"
        )));
    }
    let fine_pitch = pitch0 / factor as f64;
    let engine = TailEngine::build(query, fine_pitch, fine_points)?;

    let n_rungs = levels + 1;
    let partials = run_batches(
        query.replicas,
        DEFAULT_BATCH_SIZE,
        family,
        |rng, count| {
            let mut ws = engine.workspace();
            let mut hits = vec![0u64; n_rungs];
            for _ in 0..count {
                engine.fill_replica(rng, &mut ws);
                for (l, h) in hits.iter_mut().enumerate() {
                    let stride = 1usize << (levels - l);
                    let crossed = ws
                        .exceed_count
                        .iter()
                        .step_by(stride)
                        .any(|&c| c as usize >= engine.need);
                    if crossed {
                        *h += 1;
                    }
                }
            }
            hits
        },
    );
    let mut hits = vec![0u64; n_rungs];
    for p in partials {
        for (h, x) in hits.iter_mut().zip(p) {
            *h += x;
        }
    }

    let estimates: Vec<Estimate> = hits
        .iter()
        .map(|&h| Estimate::from_binomial(h, query.replicas))
        .collect::<Result<_>>()?;
    let pitches: Vec<f64> = (0..n_rungs)
        .map(|l| pitch0 / (1u64 << l) as f64)
        .collect();

    let mut pairs = Vec::with_capacity(levels);
    for l in 0..levels {
        let diff = estimates[l + 1].mean - estimates[l].mean;
        let threshold = opts.gate_z * estimates[l].combined_stderr(&estimates[l + 1]);
        pairs.push(GatePair {
            pitch_coarse: pitches[l],
            pitch_fine: pitches[l + 1],
            diff,
            threshold,
            passed: diff <= threshold,
        });
    }
    let converged = pairs.last().map(|p| p.passed).unwrap_or(true);
    if !converged {
        log::warn!(
            "grid refinement has not settled: final halving moved the estimate by {:.3e} (threshold {:.3e})",
            pairs.last().unwrap().diff,
            pairs.last().unwrap().threshold
        );
    }
    let final_estimate = *estimates.last().expect("at least one rung");
    Ok(TailResult {
        pitches,
        estimates,
        gate: GateReport { pairs, converged },
        final_estimate,
    })
}

/// Raw per-replica suprema of the variant's statistic on a fixed grid
/// (coupling tool for threshold sweeps and tests).
pub fn sup_statistic_samples(
    spec: &EnsembleSpec,
    variant: LimitVariant,
    pitch: f64,
    points: usize,
    replicas: u64,
    family: &StreamFamily,
) -> Result<Vec<f64>> {
    validate_variant(spec, variant)?;
    if matches!(variant, LimitVariant::TimeChanged) {
        return Err(Error::config(
            "raw supremum sampling is not defined for random clocks (statistic depends on the threshold side)"
                .to_string(),
        ));
    }
    if points < 2 || !(pitch.is_finite() && pitch > 0.0) {
        return Err(Error::config(
            "need a positive pitch and at least two grid points".to_string(),
        ));
    }
    let n_used = spec.n();
    let grid = GridSpec::from_points(pitch * (points - 1) as f64, points)?;
    let mut samplers = Vec::with_capacity(n_used);
    for p in &spec.processes()[..n_used] {
        samplers.push(StationaryGpSampler::new(p.model, grid)?);
    }
    let scales: Vec<f64> = spec.processes()[..n_used]
        .iter()
        .map(|p| match variant {
            LimitVariant::NonStandard => p.scale,
            _ => 1.0,
        })
        .collect();
    let j_need = match variant {
        LimitVariant::OrderStat { j } => j,
        _ => n_used,
    };

    let chunks = run_batches(replicas, DEFAULT_BATCH_SIZE, family, |rng, count| {
        let mut ws: Vec<_> = samplers.iter().map(|s| s.workspace()).collect();
        let mut paths = vec![vec![0.0; points]; n_used];
        let mut sups = Vec::with_capacity(count as usize);
        let mut at_point = vec![0.0f64; n_used];
        for _ in 0..count {
            for (i, s) in samplers.iter().enumerate() {
                s.sample_into(rng, &mut ws[i], &mut paths[i]);
            }
            let mut sup = f64::NEG_INFINITY;
            for k in 0..points {
                for i in 0..n_used {
                    at_point[i] = paths[i][k] / scales[i];
                }
                // j-th largest = (n_used - j)-th smallest.
                at_point.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
                let stat = at_point[n_used - j_need];
                if stat > sup {
                    sup = stat;
                }
            }
            sups.push(sup);
        }
        sups
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Which closed-form approximation produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormulaTag {
    /// Conjunction of the whole ensemble.
    Conjunction,
    /// Classical single-process crossing formula.
    SingleProcess,
    /// `j`-th order statistic of an exchangeable ensemble.
    OrderStatistics,
    /// Per-process threshold scaling factors.
    ScaledThresholds,
    /// Independent random clock speeds.
    RandomTimeChange,
}

/// A closed-form approximation value, with the uncertainty inherited from
/// the constant estimate that entered it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AsymptoticValue {
    pub value: f64,
    pub stderr: f64,
    pub tag: FormulaTag,
}

fn check_tu(t: f64, u: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::domain(format!(
            "horizon must be positive and finite, got {t}"
        )));
    }
    if !(u.is_finite() && u > 0.0) {
        return Err(Error::domain(format!(
            "threshold must be positive and finite, got {u}"
        )));
    }
    Ok(())
}

fn check_h(h: &Estimate) -> Result<()> {
    if !(h.mean.is_finite() && h.mean > 0.0 && h.stderr >= 0.0) {
        return Err(Error::domain(format!(
            "constant estimate must be positive with nonnegative stderr, got {} +- {}",
            h.mean, h.stderr
        )));
    }
    Ok(())
}

/// High-threshold approximation for the conjunction of the ensemble:
///
/// `H * T * u^(2/alpha_min) * prod_i [exp(-u^2/2) / (u sqrt(2 pi))]`.
pub fn asymptotic_conjunction(
    spec: &EnsembleSpec,
    horizon: f64,
    u: f64,
    h: &Estimate,
) -> Result<AsymptoticValue> {
    validate_variant(spec, LimitVariant::Standard)?;
    check_tu(horizon, u)?;
    check_h(h)?;
    let n = spec.n() as i32;
    let value = h.mean
        * horizon
        * u.powf(2.0 / spec.alpha_min())
        * normal_survival_asymptotic(u)?.powi(n);
    Ok(AsymptoticValue {
        value,
        stderr: value * h.stderr / h.mean,
        tag: FormulaTag::Conjunction,
    })
}

/// Classical single-process crossing approximation:
/// `c^(1/alpha) * H_alpha * T * u^(2/alpha) * Psi(u)`.
///
/// `h_alpha` is the unit-scale constant for the process's roughness; the
/// local scale enters through `c^(1/alpha)`.
pub fn asymptotic_single_process(
    model: &crate::gauss::CorrelationModel,
    horizon: f64,
    u: f64,
    h_alpha: &Estimate,
) -> Result<AsymptoticValue> {
    model.validate()?;
    check_tu(horizon, u)?;
    check_h(h_alpha)?;
    let value = model.c().powf(1.0 / model.alpha())
        * h_alpha.mean
        * horizon
        * u.powf(2.0 / model.alpha())
        * normal_survival(u)?;
    Ok(AsymptoticValue {
        value,
        stderr: value * h_alpha.stderr / h_alpha.mean,
        tag: FormulaTag::SingleProcess,
    })
}

/// Order-statistic approximation for an exchangeable ensemble:
/// `H_j * binom(n, j) * T * u^(2/alpha) * Psi(u)^j`.
pub fn asymptotic_order_stat(
    spec: &EnsembleSpec,
    j: usize,
    horizon: f64,
    u: f64,
    h_j: &Estimate,
) -> Result<AsymptoticValue> {
    validate_variant(spec, LimitVariant::OrderStat { j })?;
    check_tu(horizon, u)?;
    check_h(h_j)?;
    let n = spec.n();
    let alpha = spec.alpha_min();
    let value = h_j.mean
        * binomial(n, j)
        * horizon
        * u.powf(2.0 / alpha)
        * normal_survival(u)?.powi(j as i32);
    Ok(AsymptoticValue {
        value,
        stderr: value * h_j.stderr / h_j.mean,
        tag: FormulaTag::OrderStatistics,
    })
}

/// Scaled-threshold approximation:
/// `H * T * u^(2/alpha_min) * prod_i Psi(b_i u)`.
pub fn asymptotic_nonstandard(
    spec: &EnsembleSpec,
    horizon: f64,
    u: f64,
    h: &Estimate,
) -> Result<AsymptoticValue> {
    validate_variant(spec, LimitVariant::NonStandard)?;
    check_tu(horizon, u)?;
    check_h(h)?;
    let mut prod = 1.0;
    for p in spec.processes() {
        prod *= normal_survival(p.scale * u)?;
    }
    let value = h.mean * horizon * u.powf(2.0 / spec.alpha_min()) * prod;
    Ok(AsymptoticValue {
        value,
        stderr: value * h.stderr / h.mean,
        tag: FormulaTag::ScaledThresholds,
    })
}

/// Random-clock approximation:
/// `H * T * u^(2/alpha_min) * Psi(u)^n`.
pub fn asymptotic_time_changed(
    spec: &EnsembleSpec,
    horizon: f64,
    u: f64,
    h: &Estimate,
) -> Result<AsymptoticValue> {
    validate_variant(spec, LimitVariant::TimeChanged)?;
    check_tu(horizon, u)?;
    check_h(h)?;
    let n = spec.n() as i32;
    let value = h.mean * horizon * u.powf(2.0 / spec.alpha_min()) * normal_survival(u)?.powi(n);
    Ok(AsymptoticValue {
        value,
        stderr: value * h.stderr / h.mean,
        tag: FormulaTag::RandomTimeChange,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut out = 1.0f64;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// Ratio of an empirical crossing probability to its closed-form
/// approximation, with an error bar combining both uncertainties.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RatioDiagnostic {
    pub ratio: f64,
    pub stderr: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

pub fn ratio_diagnostic(empirical: &Estimate, asymptotic: &AsymptoticValue) -> Result<RatioDiagnostic> {
    if !(asymptotic.value.is_finite() && asymptotic.value > 0.0) {
        return Err(Error::domain(format!(
            "approximation value must be positive, got {}",
            asymptotic.value
        )));
    }
    if !(empirical.mean.is_finite()) || empirical.mean <= 0.0 {
        return Err(Error::DegenerateStatistic(
            "empirical estimate is not positive (no crossings observed?); the ratio is undefined"
                .to_string(),
        ));
    }
    let ratio = empirical.mean / asymptotic.value;
    let rel = ((empirical.stderr / empirical.mean).powi(2)
        + (asymptotic.stderr / asymptotic.value).powi(2))
    .sqrt();
    let stderr = ratio * rel;
    let z = normal_quantile(0.975)?;
    Ok(RatioDiagnostic {
        ratio,
        stderr,
        ci_lower: ratio - z * stderr,
        ci_upper: ratio + z * stderr,
    })
}

/// Scaled excursions of the conjunction above a threshold, sampled by
/// rejection, for comparison against the limit field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcursionSample {
    /// Requested observation times on the local scale (multiples of
    /// `q(u)`). Rows carry one extra leading column for the conditioning
    /// time 0; see [`ExcursionSample::row_times`].
    pub rel_times: Vec<f64>,
    /// One row per accepted replica: `n u (min_i X_i(q(u) t_j) - u)` for
    /// `t_j` in `row_times()`. The leading entry (time 0) is strictly
    /// positive by the conditioning and converges in law to a unit
    /// exponential as the threshold grows.
    pub rows: Vec<Vec<f64>>,
    pub accepted: u64,
    pub raw_replicas: u64,
    /// `Psi(u)^n`, the exact acceptance probability.
    pub acceptance_probability: f64,
    pub threshold: f64,
}

impl ExcursionSample {
    /// The times the row columns correspond to: 0 followed by `rel_times`.
    pub fn row_times(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.rel_times.len() + 1);
        t.push(0.0);
        t.extend_from_slice(&self.rel_times);
        t
    }

    /// All values of one row column (one observation time).
    pub fn column(&self, index: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[index]).collect()
    }
}

/// Draw excursion rows conditioned on all processes exceeding `u` at time
/// zero, by literal rejection sampling on exact joint Gaussian vectors.
///
/// Refuses to run when the expected number of accepted replicas
/// (`raw_replicas * Psi(u)^n`) is below `min_accepted`, with advice on the
/// largest feasible threshold for the budget.
pub fn conditional_excursion_sample(
    spec: &EnsembleSpec,
    u: f64,
    rel_times: &[f64],
    raw_replicas: u64,
    min_accepted: u64,
    family: &StreamFamily,
) -> Result<ExcursionSample> {
    validate_variant(spec, LimitVariant::Standard)?;
    if !(u.is_finite() && u > 0.0) {
        return Err(Error::domain(format!(
            "threshold must be positive and finite, got {u}"
        )));
    }
    if rel_times.is_empty()
        || rel_times.iter().any(|t| !(t.is_finite() && *t > 0.0))
    {
        return Err(Error::config(
            "observation times must be strictly positive and finite".to_string(),
        ));
    }
    let n = spec.n();
    let accept_p = normal_survival(u)?.powi(n as i32);
    let predicted = raw_replicas as f64 * accept_p;
    if predicted < min_accepted as f64 {
        // Largest u with raw * Psi(u)^n >= min_accepted.
        let target = (min_accepted as f64 / raw_replicas as f64).powf(1.0 / n as f64);
        let advice = if target < 1.0 {
            let u_max = normal_quantile(1.0 - target)?;
            format!("; at this budget the threshold must stay below {u_max:.3}")
        } else {
            "; the raw budget is smaller than the required acceptance count".to_string()
        };
        return Err(Error::RejectionInfeasible {
            predicted,
            raw: raw_replicas,
            required: min_accepted,
            advice,
        });
    }

    let q = u.powf(-2.0 / spec.alpha_min());
    // Joint sampling times: the conditioning point 0, then the scaled times.
    let mut times = Vec::with_capacity(rel_times.len() + 1);
    times.push(0.0);
    times.extend(rel_times.iter().map(|t| q * t));
    let d = times.len();
    let mut factors = Vec::with_capacity(n);
    for p in spec.processes() {
        let m = nalgebra::DMatrix::from_fn(d, d, |r, s| p.model.correlation(times[r] - times[s]));
        factors.push(DenseFactor::build(m)?);
    }

    let w_scale = n as f64 * u;
    let chunks = run_batches(raw_replicas, DEFAULT_BATCH_SIZE, family, |rng, count| {
        let mut ws: Vec<_> = factors.iter().map(|f| f.workspace()).collect();
        let mut vals = vec![vec![0.0; d]; n];
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for _ in 0..count {
            let mut ok = true;
            for (i, f) in factors.iter().enumerate() {
                f.draw(rng, &mut ws[i], &mut vals[i]);
                // Note: all processes are drawn regardless of early exits so
                // the stream stays in lockstep across replicas.
                if vals[i][0] <= u {
                    ok = false;
                }
            }
            if ok {
                let row: Vec<f64> = (0..d)
                    .map(|j| {
                        let m = vals.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
                        w_scale * (m - u)
                    })
                    .collect();
                rows.push(row);
            }
        }
        rows
    });
    let rows: Vec<Vec<f64>> = chunks.into_iter().flatten().collect();
    let accepted = rows.len() as u64;
    Ok(ExcursionSample {
        rel_times: rel_times.to_vec(),
        rows,
        accepted,
        raw_replicas,
        acceptance_probability: accept_p,
        threshold: u,
    })
}

/// Companion draws of the scaled limit field `n Z(t)` at the same relative
/// times, for distributional comparison with [`conditional_excursion_sample`].
pub fn limit_companion_sample(
    spec: &EnsembleSpec,
    rel_times: &[f64],
    replicas: u64,
    family: &StreamFamily,
) -> Result<Vec<Vec<f64>>> {
    validate_variant(spec, LimitVariant::Standard)?;
    let sampler = LimitTimesSampler::new(spec, LimitVariant::Standard, rel_times)?;
    let n = spec.n() as f64;
    let d = rel_times.len();
    let chunks = run_batches(replicas, DEFAULT_BATCH_SIZE, family, |rng, count| {
        let mut ws = sampler.workspace();
        let mut out = vec![0.0; d];
        let mut rows = Vec::with_capacity(count as usize);
        for _ in 0..count {
            sampler.sample_min_into(rng, &mut ws, &mut out);
            rows.push(out.iter().map(|&z| n * z).collect::<Vec<f64>>());
        }
        rows
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Dense-grid brute force for small problems: estimate the crossing
/// probability by direct simulation on an explicitly factorized joint
/// covariance (no circulant machinery), as an independent cross-check of
/// [`mc_sup_tail`].
pub fn brute_force_sup_tail(query: &TailQuery, family: &StreamFamily) -> Result<Estimate> {
    query.validate()?;
    if !matches!(query.variant, LimitVariant::Standard) {
        return Err(Error::config(
            "the brute-force cross-check handles the plain conjunction only".to_string(),
        ));
    }
    let q = query.local_scale();
    let pitch = query.gap * q;
    let points = (query.horizon / pitch + 1e-9).floor() as usize + 1;
    if points < 2 || points > 512 {
        return Err(Error::config(format!(
            "brute force needs 2..=512 grid points, got {points}"
        )));
    }
    let grid = GridSpec::from_points(pitch * (points - 1) as f64, points)?;
    let mut samplers = Vec::new();
    for p in query.spec.processes() {
        samplers.push(StationaryGpSampler::with_route(
            p.model,
            grid,
            RoutePolicy::ForceDense,
        )?);
    }
    let n = samplers.len();
    let partials = run_batches(query.replicas, DEFAULT_BATCH_SIZE, family, |rng, count| {
        let mut ws: Vec<_> = samplers.iter().map(|s| s.workspace()).collect();
        let mut paths = vec![vec![0.0; points]; n];
        let mut hits = 0u64;
        for _ in 0..count {
            for (i, s) in samplers.iter().enumerate() {
                s.sample_into(rng, &mut ws[i], &mut paths[i]);
            }
            let crossed = (0..points)
                .any(|k| paths.iter().all(|p| p[k] > query.threshold));
            if crossed {
                hits += 1;
            }
        }
        hits
    });
    let hits: u64 = partials.iter().sum();
    Estimate::from_binomial(hits, query.replicas)
}
