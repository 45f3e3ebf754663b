//! The local limit ensembles that govern a conjunction of stationary
//! Gaussian processes just above a high threshold.
//!
//! The basic object is the drifted fractional field
//!
//! ```text
//! Z(t) = min_i [ (sqrt(2) B_i(c_i^(1/a_i) t) - c_i t^(a_i)) 1{a_i = a_min} + E_i ]
//! ```
//!
//! over the ensemble's processes, with independent fractional Brownian
//! motions `B_i` (roughness `a_i`), independent unit exponentials `E_i`, and
//! only the *locally roughest* processes (`a_i = a_min`) carrying a Gaussian
//! term. Three structured variants share the machinery:
//!
//! * order statistics — only the `j` participating processes appear;
//! * random time change — each process is run at an independent random
//!   speed drawn from a [`TimeChangeLaw`];
//! * unequal threshold scaling — process `i` is dilated by a factor `b_i`
//!   (`1/b_i` on the Gaussian term, `1/b_i^2` on the exponential).
//!
//! [`LimitPathSampler`] draws `Z` on the uniform grid `a, 2a, ..., Ka`;
//! [`tail_truncation_bound`] certifies that nothing beyond the horizon `Ka`
//! matters to a stated tolerance, which is what turns a finite simulation
//! into an estimate of an infinite-horizon functional.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{CorrelationModel, DenseFactor, DenseWorkspace, FbmIncrements};
use crate::stats::{normal_survival, SQRT_2};

/// One point mass of a discrete time-change law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub value: f64,
    pub weight: f64,
}

/// Law of the random speed factor applied to a process's clock.
///
/// Must be non-degenerate (genuinely random), nonnegative, and bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeChangeLaw {
    /// Finitely many atoms with positive weights summing to one.
    Discrete { atoms: Vec<Atom> },
    /// Uniform on `[lo, hi]`, `0 <= lo < hi`.
    Uniform { lo: f64, hi: f64 },
}

impl TimeChangeLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            TimeChangeLaw::Discrete { atoms } => {
                if atoms.len() < 2 {
                    return Err(Error::config(
                        "discrete time-change law must have at least two atoms (a degenerate speed is just a clock rescaling)"
                            .to_string(),
                    ));
                }
                let mut total = 0.0;
                for a in atoms {
                    if !(a.value.is_finite() && a.value >= 0.0) {
                        return Err(Error::config(format!(
                            "time-change atom value must be finite and nonnegative, got {}",
                            a.value
                        )));
                    }
                    if !(a.weight.is_finite() && a.weight > 0.0) {
                        return Err(Error::config(format!(
                            "time-change atom weight must be positive, got {}",
                            a.weight
                        )));
                    }
                    total += a.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!(
                        "time-change weights must sum to 1, got {total}"
                    )));
                }
                let v0 = atoms[0].value;
                if atoms.iter().all(|a| a.value == v0) {
                    return Err(Error::config(
                        "discrete time-change law is degenerate: all atoms share one value"
                            .to_string(),
                    ));
                }
                Ok(())
            }
            TimeChangeLaw::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo < hi) {
                    return Err(Error::config(format!(
                        "uniform time-change law needs 0 <= lo < hi, got [{lo}, {hi}]"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Smallest speed in the support (used for conservative certification).
    pub fn min_value(&self) -> f64 {
        match self {
            TimeChangeLaw::Discrete { atoms } => atoms
                .iter()
                .map(|a| a.value)
                .fold(f64::INFINITY, f64::min),
            TimeChangeLaw::Uniform { lo, .. } => *lo,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            TimeChangeLaw::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.weight;
                    if u < acc {
                        return a.value;
                    }
                }
                atoms.last().expect("validated non-empty").value
            }
            TimeChangeLaw::Uniform { lo, hi } => {
                let u: f64 = rng.random();
                lo + (hi - lo) * u
            }
        }
    }
}

/// One process of the ensemble: its correlation model plus the structural
/// decorations used by the variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ProcessSpec {
    pub model: CorrelationModel,
    /// Threshold dilation factor `b > 0`; 1 for the standard setting.
    #[serde(default = "unit_scale")]
    pub scale: f64,
    /// Random clock speed; `None` for a deterministic unit clock.
    #[serde(default)]
    pub time_change: Option<TimeChangeLaw>,
}

fn unit_scale() -> f64 {
    1.0
}

impl ProcessSpec {
    pub fn new(model: CorrelationModel) -> Self {
        Self {
            model,
            scale: 1.0,
            time_change: None,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_time_change(mut self, law: TimeChangeLaw) -> Self {
        self.time_change = Some(law);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::config(format!(
                "process scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if let Some(law) = &self.time_change {
            law.validate()?;
        }
        Ok(())
    }
}

/// A validated, non-empty collection of processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ProcessSpec>", into = "Vec<ProcessSpec>")]
pub struct EnsembleSpec {
    processes: Vec<ProcessSpec>,
}

impl TryFrom<Vec<ProcessSpec>> for EnsembleSpec {
    type Error = Error;
    fn try_from(v: Vec<ProcessSpec>) -> Result<Self> {
        EnsembleSpec::new(v)
    }
}

impl From<EnsembleSpec> for Vec<ProcessSpec> {
    fn from(e: EnsembleSpec) -> Self {
        e.processes
    }
}

impl EnsembleSpec {
    pub fn new(processes: Vec<ProcessSpec>) -> Result<Self> {
        if processes.is_empty() {
            return Err(Error::config(
                "ensemble needs at least one process".to_string(),
            ));
        }
        for p in &processes {
            p.validate()?;
        }
        Ok(Self { processes })
    }

    /// Shorthand for an ensemble of standard processes (unit scale, no time
    /// change) from bare models.
    pub fn from_models(models: Vec<CorrelationModel>) -> Result<Self> {
        Self::new(models.into_iter().map(ProcessSpec::new).collect())
    }

    pub fn n(&self) -> usize {
        self.processes.len()
    }

    pub fn processes(&self) -> &[ProcessSpec] {
        &self.processes
    }

    /// The smallest roughness exponent in the ensemble.
    pub fn alpha_min(&self) -> f64 {
        self.processes
            .iter()
            .map(|p| p.model.alpha())
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether process `i` carries a Gaussian term in the limit (its
    /// roughness attains the minimum).
    pub fn is_active(&self, i: usize) -> bool {
        self.processes[i].model.alpha() == self.alpha_min()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.is_active(i)).collect()
    }

    /// Append a process, returning a new ensemble.
    pub fn with_process(&self, p: ProcessSpec) -> Result<Self> {
        let mut v = self.processes.clone();
        v.push(p);
        Self::new(v)
    }
}

/// Which structural variant of the limit ensemble to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LimitVariant {
    /// Plain conjunction of all processes.
    Standard,
    /// Exactly `j` of the processes participate (all must share one
    /// roughness and have unit local scale).
    OrderStat { j: usize },
    /// Every process runs at an independent random speed.
    TimeChanged,
    /// Per-process threshold dilation factors.
    NonStandard,
}

/// Check that `spec` provides exactly the structure `variant` requires.
pub fn validate_variant(spec: &EnsembleSpec, variant: LimitVariant) -> Result<()> {
    let unit_scales = spec.processes().iter().all(|p| p.scale == 1.0);
    let no_time_change = spec.processes().iter().all(|p| p.time_change.is_none());
    match variant {
        LimitVariant::Standard => {
            if !unit_scales {
                return Err(Error::config(
                    "standard variant requires unit scale on every process".to_string(),
                ));
            }
            if !no_time_change {
                return Err(Error::config(
                    "standard variant does not admit time changes".to_string(),
                ));
            }
        }
        LimitVariant::OrderStat { j } => {
            if j == 0 || j > spec.n() {
                return Err(Error::config(format!(
                    "order statistic index j={j} out of range 1..={}",
                    spec.n()
                )));
            }
            let a0 = spec.processes()[0].model.alpha();
            if spec.processes().iter().any(|p| p.model.alpha() != a0) {
                return Err(Error::config(
                    "order-statistic variant requires all processes to share one roughness exponent"
                        .to_string(),
                ));
            }
            if spec.processes().iter().any(|p| p.model.c() != 1.0) {
                return Err(Error::config(
                    "order-statistic variant requires unit local scale c = 1 on every process"
                        .to_string(),
                ));
            }
            if !unit_scales || !no_time_change {
                return Err(Error::config(
                    "order-statistic variant requires plain processes (no scaling or time change)"
                        .to_string(),
                ));
            }
        }
        LimitVariant::TimeChanged => {
            if !unit_scales {
                return Err(Error::config(
                    "time-changed variant requires unit scale on every process".to_string(),
                ));
            }
            if spec.processes().iter().any(|p| p.time_change.is_none()) {
                return Err(Error::config(
                    "time-changed variant requires a time-change law on every process".to_string(),
                ));
            }
        }
        LimitVariant::NonStandard => {
            if !no_time_change {
                return Err(Error::config(
                    "scaled-threshold variant does not admit time changes".to_string(),
                ));
            }
        }
    }
    Ok(())
}

/// How many processes the *limit-field* simulation for a variant uses.
///
/// The constant attached to the j-th order statistic is the one of a j-fold
/// conjunction (the dominating events involve exactly j processes), so the
/// limit field keeps only j of them. Path-level crossing simulations are
/// different: there the j-th largest is a function of the whole ensemble.
pub fn used_process_count(spec: &EnsembleSpec, variant: LimitVariant) -> usize {
    match variant {
        LimitVariant::OrderStat { j } => j,
        _ => spec.n(),
    }
}

struct UsedProcess {
    alpha: f64,
    /// `1/b` applied to the Gaussian term.
    inv_scale: f64,
    /// `1/b^2` applied to the exponential.
    exp_scale: f64,
    time_change: Option<TimeChangeLaw>,
    /// Fractional-noise engine; present only for active processes.
    fgn: Option<FbmIncrements>,
    /// `c (gap k)^alpha`, `k = 1..=steps`; present only for active processes.
    drift: Vec<f64>,
}

/// Per-worker scratch for [`LimitPathSampler`].
pub struct LimitWorkspace {
    circ: Vec<crate::gauss::CirculantWorkspace>,
    incr: Vec<f64>,
    path: Vec<f64>,
}

/// Samples the limit field `Z` on the grid `gap, 2 gap, ..., steps * gap`.
///
/// Each draw consumes randomness per process in a fixed order (speed factor
/// if any, fractional noise if active, exponential always), process by
/// process. Appending a non-participating process to the ensemble therefore
/// leaves the values computed from an identical stream prefix unchanged.
pub struct LimitPathSampler {
    variant: LimitVariant,
    gap: f64,
    steps: usize,
    used: Vec<UsedProcess>,
}

impl LimitPathSampler {
    pub fn new(
        spec: &EnsembleSpec,
        variant: LimitVariant,
        gap: f64,
        steps: usize,
    ) -> Result<Self> {
        validate_variant(spec, variant)?;
        if !(gap.is_finite() && gap > 0.0) {
            return Err(Error::config(format!(
                "grid gap must be positive and finite, got {gap}"
            )));
        }
        if steps == 0 {
            return Err(Error::config("need at least one grid step".to_string()));
        }
        let alpha_min = spec.alpha_min();
        let n_used = used_process_count(spec, variant);
        let mut used = Vec::with_capacity(n_used);
        for (i, p) in spec.processes()[..n_used].iter().enumerate() {
            let alpha = p.model.alpha();
            let c = p.model.c();
            let active = spec.is_active(i);
            let (fgn, drift) = if active {
                let step = c.powf(1.0 / alpha) * gap;
                let fgn = FbmIncrements::build(alpha, step, steps)?;
                let drift = (1..=steps)
                    .map(|k| c * (gap * k as f64).powf(alpha))
                    .collect();
                (Some(fgn), drift)
            } else {
                (None, Vec::new())
            };
            let b = p.scale;
            used.push(UsedProcess {
                alpha,
                inv_scale: 1.0 / b,
                exp_scale: 1.0 / (b * b),
                time_change: p.time_change.clone(),
                fgn,
                drift,
            });
        }
        debug_assert!(used.iter().any(|u| u.fgn.is_some()), "alpha_min attained");
        let _ = alpha_min;
        Ok(Self {
            variant,
            gap,
            steps,
            used,
        })
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn variant(&self) -> LimitVariant {
        self.variant
    }

    pub fn workspace(&self) -> LimitWorkspace {
        LimitWorkspace {
            circ: self
                .used
                .iter()
                .filter_map(|u| u.fgn.as_ref().map(|f| f.workspace()))
                .collect(),
            incr: vec![0.0; self.steps.max(2)],
            path: vec![0.0; self.steps + 1],
        }
    }

    /// Draw one replica of `Z` at `k * gap`, `k = 1..=steps`, into
    /// `out[0..steps]`.
    pub fn sample_min_path(&self, rng: &mut ChaCha8Rng, ws: &mut LimitWorkspace, out: &mut [f64]) {
        let k_max = self.steps;
        out[..k_max].fill(f64::INFINITY);
        let mut slot = 0;
        for up in &self.used {
            if let Some(fgn) = &up.fgn {
                let (th_half, th_alpha) = match (&up.time_change, self.variant) {
                    (Some(law), LimitVariant::TimeChanged) => {
                        let th = law.sample(rng);
                        (th.powf(0.5 * up.alpha), th.powf(up.alpha))
                    }
                    _ => (1.0, 1.0),
                };
                fgn.draw_path(rng, &mut ws.circ[slot], &mut ws.incr, &mut ws.path);
                slot += 1;
                let e: f64 = rng.sample(Exp1);
                let e_term = up.exp_scale * e;
                let g = SQRT_2 * up.inv_scale * th_half;
                for k in 0..k_max {
                    let v = g * ws.path[k + 1] - th_alpha * up.drift[k] + e_term;
                    if v < out[k] {
                        out[k] = v;
                    }
                }
            } else {
                let e: f64 = rng.sample(Exp1);
                let v = up.exp_scale * e;
                for o in out[..k_max].iter_mut() {
                    if v < *o {
                        *o = v;
                    }
                }
            }
        }
    }
}

/// Time spent above zero by a grid path, right-rule: `gap` times the number
/// of strictly positive values.
pub fn occupation_time(values: &[f64], gap: f64) -> Result<f64> {
    if !(gap.is_finite() && gap > 0.0) {
        return Err(Error::domain(format!(
            "occupation time needs a positive finite gap, got {gap}"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain(
            "occupation time input contains NaN".to_string(),
        ));
    }
    Ok(gap * values.iter().filter(|&&v| v > 0.0).count() as f64)
}

/// Occupation time of the limit field on `[0, steps * gap]` from values at
/// `gap, ..., steps * gap`, counting each cell `[k gap, (k+1) gap)` by its
/// left endpoint.
///
/// The cell at the origin is always counted because the field starts
/// strictly positive (`Z(0) = min_i E_i > 0` almost surely), so the result
/// lies in `[gap, steps * gap]`.
pub fn occupation_time_from_origin(values: &[f64], gap: f64) -> Result<f64> {
    if !(gap.is_finite() && gap > 0.0) {
        return Err(Error::domain(format!(
            "occupation time needs a positive finite gap, got {gap}"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain(
            "occupation time input contains NaN".to_string(),
        ));
    }
    let interior = values[..values.len().saturating_sub(1)]
        .iter()
        .filter(|&&v| v > 0.0)
        .count();
    Ok(gap * (1 + interior) as f64)
}

/// Upper bound on the probability that the limit field is positive anywhere
/// beyond the simulated horizon:
///
/// ```text
/// P(sup_{k > steps} Z(k gap) > 0) <= sum_{k > steps} min_i P(term_i(k gap) > 0)
/// ```
///
/// where for an active process the per-point probability has the closed form
/// `2 Psi(b sqrt(c t^alpha / 2))` with `Psi` the standard normal survival
/// function (exact, by completing the square against the exponential), and
/// random speeds are handled by exact expectation over atoms or by the
/// slowest speed in the support.
///
/// Returns `f64::INFINITY` when no active process yields a convergent bound
/// (e.g. a time change whose support reaches zero speed).
pub fn tail_truncation_bound(
    spec: &EnsembleSpec,
    variant: LimitVariant,
    gap: f64,
    steps: usize,
) -> Result<f64> {
    validate_variant(spec, variant)?;
    if !(gap.is_finite() && gap > 0.0) {
        return Err(Error::config(format!(
            "grid gap must be positive and finite, got {gap}"
        )));
    }
    if steps == 0 {
        return Err(Error::config("need at least one grid step".to_string()));
    }
    let n_used = used_process_count(spec, variant);
    let mut best = f64::INFINITY;
    for (i, p) in spec.processes()[..n_used].iter().enumerate() {
        if !spec.is_active(i) {
            continue;
        }
        let b = tail_bound_single(p, variant, gap, steps);
        best = best.min(b);
    }
    Ok(best)
}

/// Per-point exceedance probability for one active process at time `t`:
/// `P(sqrt(2)/b B(c^(1/a) t) - c t^a + E / b^2 > 0) = 2 Psi(b sqrt(c t^a / 2))`.
fn point_term(c: f64, alpha: f64, b: f64, law: Option<&TimeChangeLaw>, t: f64) -> f64 {
    let base = |speed: f64| {
        let d = c * (speed * t).powf(alpha);
        2.0 * normal_survival(b * (0.5 * d).sqrt()).expect("finite argument")
    };
    match law {
        None => base(1.0),
        Some(TimeChangeLaw::Discrete { atoms }) => {
            atoms.iter().map(|a| a.weight * base(a.value)).sum()
        }
        // Conservative: the slowest speed gives the largest exceedance.
        Some(TimeChangeLaw::Uniform { lo, .. }) => base(*lo),
    }
}

/// Gaussian-tail envelope rate(s) for the same term: `point_term(t)` is
/// bounded by `sum_j w_j exp(-lambda_j t^alpha)`. Returns the (weight, rate)
/// pairs; a rate of zero makes the series divergent.
fn envelope_rates(c: f64, alpha: f64, b: f64, law: Option<&TimeChangeLaw>) -> Vec<(f64, f64)> {
    let rate = |speed: f64| b * b * c * speed.powf(alpha) / 4.0;
    match law {
        None => vec![(1.0, rate(1.0))],
        Some(TimeChangeLaw::Discrete { atoms }) => atoms
            .iter()
            .map(|a| (a.weight, rate(a.value)))
            .collect(),
        Some(TimeChangeLaw::Uniform { lo, .. }) => vec![(1.0, rate(*lo))],
    }
}

fn tail_bound_single(p: &ProcessSpec, variant: LimitVariant, gap: f64, steps: usize) -> f64 {
    let c = p.model.c();
    let alpha = p.model.alpha();
    let b = match variant {
        LimitVariant::NonStandard => p.scale,
        _ => 1.0,
    };
    let law = match variant {
        LimitVariant::TimeChanged => p.time_change.as_ref(),
        _ => None,
    };

    // Exact partial sum over grid points just past the horizon.
    const EXACT_CAP: usize = 200_000;
    const NEGLIGIBLE: f64 = 1e-250;
    let mut total = 0.0;
    let mut k = steps + 1;
    let mut scanned = 0;
    loop {
        let t = gap * k as f64;
        let term = point_term(c, alpha, b, law, t);
        total += term;
        k += 1;
        scanned += 1;
        if term < NEGLIGIBLE || scanned >= EXACT_CAP {
            break;
        }
    }

    // Remainder of the series past t0 = gap * k, bounded block-dyadically:
    // over [2^j t0, 2^(j+1) t0] there are at most (2^j t0 / gap + 1) grid
    // points, each bounded by the envelope at the block's left edge.
    let t0 = gap * k as f64;
    for (w, lambda) in envelope_rates(c, alpha, b, law) {
        if w == 0.0 {
            continue;
        }
        if lambda <= 0.0 {
            return f64::INFINITY;
        }
        let mut remainder = 0.0;
        let mut block_start = t0;
        let mut converged = false;
        for _ in 0..300 {
            let count = block_start / gap + 1.0;
            let block = count * (-lambda * block_start.powf(alpha)).exp();
            remainder += block;
            if block < 1e-300 {
                converged = true;
                break;
            }
            block_start *= 2.0;
        }
        if !converged {
            return f64::INFINITY;
        }
        total += w * remainder;
    }
    total
}

/// Check the truncation bound against a tolerance, returning it on success
/// and a [`Error::TruncationUncertified`] carrying advice otherwise.
pub fn certify_truncation(
    spec: &EnsembleSpec,
    variant: LimitVariant,
    gap: f64,
    steps: usize,
    tolerance: f64,
) -> Result<f64> {
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(Error::config(format!(
            "truncation tolerance must be positive and finite, got {tolerance}"
        )));
    }
    let bound = tail_truncation_bound(spec, variant, gap, steps)?;
    if bound <= tolerance {
        return Ok(bound);
    }
    // Doubling search for a horizon that would certify.
    let mut k = steps;
    let mut advice = String::from(
        "; no finite horizon certifies (is a zero speed in a time-change support?)",
    );
    for _ in 0..24 {
        k = k.saturating_mul(2);
        let b = tail_truncation_bound(spec, variant, gap, k)?;
        if b <= tolerance {
            advice = format!("; {k} steps at this gap would certify (bound {b:.3e})");
            break;
        }
    }
    Err(Error::TruncationUncertified {
        bound,
        tolerance,
        points: steps,
        advice,
    })
}

/// Per-worker scratch for [`LimitTimesSampler`].
pub struct LimitTimesWorkspace {
    dense: Vec<DenseWorkspace>,
    path: Vec<f64>,
}

/// Samples the limit field at an arbitrary finite set of strictly positive
/// times (dense factorization per active process).
///
/// Used for distributional comparisons against rescaled excursions of the
/// original processes, where the natural comparison times are not a uniform
/// grid.
pub struct LimitTimesSampler {
    variant: LimitVariant,
    times: Vec<f64>,
    used: Vec<TimesProcess>,
}

struct TimesProcess {
    alpha: f64,
    inv_scale: f64,
    exp_scale: f64,
    time_change: Option<TimeChangeLaw>,
    factor: Option<DenseFactor>,
    drift: Vec<f64>,
}

impl LimitTimesSampler {
    pub fn new(spec: &EnsembleSpec, variant: LimitVariant, times: &[f64]) -> Result<Self> {
        validate_variant(spec, variant)?;
        if times.is_empty() {
            return Err(Error::config("need at least one sample time".to_string()));
        }
        if times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::config(
                "sample times must be strictly positive and finite".to_string(),
            ));
        }
        let n_used = used_process_count(spec, variant);
        let mut used = Vec::with_capacity(n_used);
        for (i, p) in spec.processes()[..n_used].iter().enumerate() {
            let alpha = p.model.alpha();
            let c = p.model.c();
            let (factor, drift) = if spec.is_active(i) {
                let scale = c.powf(1.0 / alpha);
                let m = nalgebra::DMatrix::from_fn(times.len(), times.len(), |r, s| {
                    crate::gauss::fbm_covariance(alpha, scale * times[r], scale * times[s])
                });
                let drift = times.iter().map(|&t| c * t.powf(alpha)).collect();
                (Some(DenseFactor::build(m)?), drift)
            } else {
                (None, Vec::new())
            };
            used.push(TimesProcess {
                alpha,
                inv_scale: 1.0 / p.scale,
                exp_scale: 1.0 / (p.scale * p.scale),
                time_change: p.time_change.clone(),
                factor,
                drift,
            });
        }
        Ok(Self {
            variant,
            times: times.to_vec(),
            used,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn workspace(&self) -> LimitTimesWorkspace {
        LimitTimesWorkspace {
            dense: self
                .used
                .iter()
                .filter_map(|u| u.factor.as_ref().map(|f| f.workspace()))
                .collect(),
            path: vec![0.0; self.times.len()],
        }
    }

    /// Draw one replica of `Z` at the configured times into `out`.
    pub fn sample_min_into(
        &self,
        rng: &mut ChaCha8Rng,
        ws: &mut LimitTimesWorkspace,
        out: &mut [f64],
    ) {
        let d = self.times.len();
        out[..d].fill(f64::INFINITY);
        let mut slot = 0;
        for up in &self.used {
            if let Some(factor) = &up.factor {
                let (th_half, th_alpha) = match (&up.time_change, self.variant) {
                    (Some(law), LimitVariant::TimeChanged) => {
                        let th = law.sample(rng);
                        (th.powf(0.5 * up.alpha), th.powf(up.alpha))
                    }
                    _ => (1.0, 1.0),
                };
                factor.draw(rng, &mut ws.dense[slot], &mut ws.path);
                slot += 1;
                let e: f64 = rng.sample(Exp1);
                let e_term = up.exp_scale * e;
                let g = SQRT_2 * up.inv_scale * th_half;
                for k in 0..d {
                    let v = g * ws.path[k] - th_alpha * up.drift[k] + e_term;
                    if v < out[k] {
                        out[k] = v;
                    }
                }
            } else {
                let e: f64 = rng.sample(Exp1);
                let v = up.exp_scale * e;
                for o in out[..d].iter_mut() {
                    if v < *o {
                        *o = v;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RandomStream;
    use approx::assert_relative_eq;

    fn pe(c: f64, alpha: f64) -> CorrelationModel {
        CorrelationModel::powered_exponential(c, alpha).unwrap()
    }

    fn standard_spec(params: &[(f64, f64)]) -> EnsembleSpec {
        EnsembleSpec::from_models(params.iter().map(|&(c, a)| pe(c, a)).collect()).unwrap()
    }

    #[test]
    fn time_change_law_validation() {
        let ok = TimeChangeLaw::Discrete {
            atoms: vec![
                Atom { value: 0.5, weight: 0.5 },
                Atom { value: 1.5, weight: 0.5 },
            ],
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.min_value(), 0.5);

        // Degenerate: one atom, or all atoms equal.
        assert!(TimeChangeLaw::Discrete {
            atoms: vec![Atom { value: 1.0, weight: 1.0 }]
        }
        .validate()
        .is_err());
        assert!(TimeChangeLaw::Discrete {
            atoms: vec![
                Atom { value: 1.0, weight: 0.5 },
                Atom { value: 1.0, weight: 0.5 }
            ]
        }
        .validate()
        .is_err());
        // Weights must sum to one.
        assert!(TimeChangeLaw::Discrete {
            atoms: vec![
                Atom { value: 0.5, weight: 0.5 },
                Atom { value: 1.5, weight: 0.4 }
            ]
        }
        .validate()
        .is_err());
        // Uniform needs 0 <= lo < hi.
        assert!(TimeChangeLaw::Uniform { lo: 0.5, hi: 1.5 }.validate().is_ok());
        assert!(TimeChangeLaw::Uniform { lo: 1.5, hi: 1.5 }.validate().is_err());
        assert!(TimeChangeLaw::Uniform { lo: -0.1, hi: 1.0 }.validate().is_err());
    }

    #[test]
    fn discrete_law_sampling_matches_weights() {
        let law = TimeChangeLaw::Discrete {
            atoms: vec![
                Atom { value: 0.5, weight: 0.25 },
                Atom { value: 2.0, weight: 0.75 },
            ],
        };
        let mut rng = RandomStream::new(1, 0).rng();
        let n = 40_000;
        let hits = (0..n).filter(|_| law.sample(&mut rng) == 2.0).count();
        let p = hits as f64 / n as f64;
        assert!((p - 0.75).abs() < 4.0 * (0.75f64 * 0.25 / n as f64).sqrt(), "{p}");
    }

    #[test]
    fn variant_validation_matrix() {
        let eq = standard_spec(&[(1.0, 1.0), (1.0, 1.0)]);
        let uneq_alpha = standard_spec(&[(1.0, 1.0), (1.0, 2.0)]);
        let uneq_c = standard_spec(&[(2.0, 1.0), (1.0, 1.0)]);

        assert!(validate_variant(&eq, LimitVariant::Standard).is_ok());
        assert!(validate_variant(&uneq_alpha, LimitVariant::Standard).is_ok());

        assert!(validate_variant(&eq, LimitVariant::OrderStat { j: 1 }).is_ok());
        assert!(validate_variant(&eq, LimitVariant::OrderStat { j: 2 }).is_ok());
        assert!(validate_variant(&eq, LimitVariant::OrderStat { j: 0 }).is_err());
        assert!(validate_variant(&eq, LimitVariant::OrderStat { j: 3 }).is_err());
        assert!(validate_variant(&uneq_alpha, LimitVariant::OrderStat { j: 1 }).is_err());
        assert!(validate_variant(&uneq_c, LimitVariant::OrderStat { j: 1 }).is_err());

        // Scaled processes are only admitted by the non-standard variant.
        let scaled = EnsembleSpec::new(vec![
            ProcessSpec::new(pe(1.0, 1.0)).with_scale(1.0),
            ProcessSpec::new(pe(1.0, 1.0)).with_scale(2.0),
        ])
        .unwrap();
        assert!(validate_variant(&scaled, LimitVariant::Standard).is_err());
        assert!(validate_variant(&scaled, LimitVariant::NonStandard).is_ok());

        // Time-changed requires a law on every process.
        let law = TimeChangeLaw::Uniform { lo: 0.5, hi: 1.5 };
        let half_themed = EnsembleSpec::new(vec![
            ProcessSpec::new(pe(1.0, 1.0)).with_time_change(law.clone()),
            ProcessSpec::new(pe(1.0, 1.0)),
        ])
        .unwrap();
        assert!(validate_variant(&half_themed, LimitVariant::TimeChanged).is_err());
        let themed = EnsembleSpec::new(vec![
            ProcessSpec::new(pe(1.0, 1.0)).with_time_change(law.clone()),
            ProcessSpec::new(pe(1.0, 1.0)).with_time_change(law.clone()),
        ])
        .unwrap();
        assert!(validate_variant(&themed, LimitVariant::TimeChanged).is_ok());
        assert!(validate_variant(&themed, LimitVariant::Standard).is_err());
        assert!(validate_variant(&themed, LimitVariant::NonStandard).is_err());
    }

    #[test]
    fn ensemble_accessors() {
        let spec = standard_spec(&[(1.0, 1.0), (4.0, 2.0), (2.0, 1.0)]);
        assert_eq!(spec.n(), 3);
        assert_eq!(spec.alpha_min(), 1.0);
        assert_eq!(spec.active_indices(), vec![0, 2]);
        assert!(EnsembleSpec::new(vec![]).is_err());
    }

    #[test]
    fn smooth_case_paths_have_exact_parabolic_form() {
        // For a single process with alpha = 2, c = 1 the field is exactly
        // Z(t) = sqrt(2) t N - t^2 + E; check every sampled path fits it.
        let spec = standard_spec(&[(1.0, 2.0)]);
        let sampler = LimitPathSampler::new(&spec, LimitVariant::Standard, 0.25, 8).unwrap();
        let mut ws = sampler.workspace();
        let mut out = vec![0.0; 8];
        for i in 0..100 {
            let mut rng = RandomStream::new(50, i).rng();
            sampler.sample_min_path(&mut rng, &mut ws, &mut out);
            // Solve for (N, E) from the first two points, verify the rest.
            let (t1, t2) = (0.25, 0.5);
            let a1 = out[0] + t1 * t1;
            let a2 = out[1] + t2 * t2;
            let n = (a2 - a1) / (SQRT_2 * (t2 - t1));
            let e = a1 - SQRT_2 * t1 * n;
            assert!(e > 0.0, "exponential must be positive");
            for (k, &v) in out.iter().enumerate() {
                let t = 0.25 * (k + 1) as f64;
                let want = SQRT_2 * t * n - t * t + e;
                assert!((v - want).abs() < 1e-10, "k={k}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn appending_inactive_process_is_pathwise_invisible() {
        // A process with larger roughness exponent contributes only an
        // exponential, drawn after the existing prefix; the event
        // {max Z <= 0} is identical replica by replica.
        let base = standard_spec(&[(1.0, 1.0)]);
        let extended = base
            .with_process(ProcessSpec::new(pe(3.0, 1.7)))
            .unwrap();
        let s1 = LimitPathSampler::new(&base, LimitVariant::Standard, 0.2, 25).unwrap();
        let s2 = LimitPathSampler::new(&extended, LimitVariant::Standard, 0.2, 25).unwrap();
        let mut w1 = s1.workspace();
        let mut w2 = s2.workspace();
        let mut o1 = vec![0.0; 25];
        let mut o2 = vec![0.0; 25];
        for i in 0..500 {
            let mut r1 = RandomStream::new(60, i).rng();
            let mut r2 = RandomStream::new(60, i).rng();
            s1.sample_min_path(&mut r1, &mut w1, &mut o1);
            s2.sample_min_path(&mut r2, &mut w2, &mut o2);
            let e1 = o1.iter().cloned().fold(f64::NEG_INFINITY, f64::max) <= 0.0;
            let e2 = o2.iter().cloned().fold(f64::NEG_INFINITY, f64::max) <= 0.0;
            assert_eq!(e1, e2, "replica {i}");
            // And pointwise, the extended minimum is never above the base.
            for (a, b) in o1.iter().zip(&o2) {
                assert!(b <= a, "appending a process cannot raise the minimum");
            }
        }
    }

    #[test]
    fn sampler_is_deterministic_per_stream() {
        let spec = standard_spec(&[(1.0, 1.0), (2.0, 1.0)]);
        let sampler = LimitPathSampler::new(&spec, LimitVariant::Standard, 0.1, 50).unwrap();
        let mut ws = sampler.workspace();
        let mut a = vec![0.0; 50];
        let mut b = vec![0.0; 50];
        let mut r1 = RandomStream::new(77, 3).rng();
        sampler.sample_min_path(&mut r1, &mut ws, &mut a);
        let mut r2 = RandomStream::new(77, 3).rng();
        sampler.sample_min_path(&mut r2, &mut ws, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn occupation_time_right_rule() {
        assert_relative_eq!(occupation_time(&[1.0, -1.0, 2.0], 0.5).unwrap(), 1.0);
        assert_relative_eq!(occupation_time(&[-1.0, -2.0], 0.5).unwrap(), 0.0);
        // Zero does not count as "above".
        assert_relative_eq!(occupation_time(&[0.0, 1.0], 0.5).unwrap(), 0.5);
        assert!(occupation_time(&[1.0], 0.0).is_err());
        assert!(occupation_time(&[f64::NAN], 0.5).is_err());
    }

    #[test]
    fn occupation_from_origin_counts_the_first_cell() {
        // All-negative interior still yields one cell (the origin's).
        assert_relative_eq!(
            occupation_time_from_origin(&[-1.0, -1.0, -1.0], 0.5).unwrap(),
            0.5
        );
        // All-positive yields the full horizon.
        assert_relative_eq!(
            occupation_time_from_origin(&[1.0, 1.0, 1.0], 0.5).unwrap(),
            1.5
        );
        // The last grid value is a horizon endpoint, not a cell.
        assert_relative_eq!(
            occupation_time_from_origin(&[1.0, -1.0, 1.0], 0.5).unwrap(),
            1.0
        );
    }

    #[test]
    fn truncation_bound_reference_anchors() {
        // Single rough process (c = 1, alpha = 1), gap 0.1. At horizon 20 the
        // bound is still above 1e-2; at horizon 120 it is below 1e-12.
        let spec = standard_spec(&[(1.0, 1.0)]);
        let b20 = tail_truncation_bound(&spec, LimitVariant::Standard, 0.1, 200).unwrap();
        assert!(b20 > 1e-2 && b20 < 1e-1, "horizon 20: {b20}");
        let b120 = tail_truncation_bound(&spec, LimitVariant::Standard, 0.1, 1200).unwrap();
        assert!(b120 < 1e-12, "horizon 120: {b120}");
        // Smooth process: the same horizon 20 is astronomically safe.
        let smooth = standard_spec(&[(1.0, 2.0)]);
        let bs = tail_truncation_bound(&smooth, LimitVariant::Standard, 0.1, 200).unwrap();
        assert!(bs < 1e-40, "smooth horizon 20: {bs}");
    }

    #[test]
    fn truncation_bound_decreases_with_horizon() {
        let spec = standard_spec(&[(1.0, 0.8)]);
        let mut prev = f64::INFINITY;
        for steps in [50, 100, 200, 400] {
            let b = tail_truncation_bound(&spec, LimitVariant::Standard, 0.1, steps).unwrap();
            assert!(b < prev, "bound must shrink with the horizon");
            prev = b;
        }
    }

    #[test]
    fn truncation_bound_first_term_dominates_check() {
        // The bound must exceed its own first omitted term.
        let spec = standard_spec(&[(1.0, 1.0)]);
        let gap = 0.1;
        let steps = 300;
        let b = tail_truncation_bound(&spec, LimitVariant::Standard, gap, steps).unwrap();
        let t = gap * (steps + 1) as f64;
        let first = 2.0 * normal_survival((0.5 * t).sqrt()).unwrap();
        assert!(b > first && b < 1.0, "bound {b} vs first term {first}");
    }

    #[test]
    fn certification_errors_carry_advice() {
        let spec = standard_spec(&[(1.0, 1.0)]);
        match certify_truncation(&spec, LimitVariant::Standard, 0.1, 200, 1e-6) {
            Err(Error::TruncationUncertified { bound, advice, .. }) => {
                assert!(bound > 1e-6);
                assert!(advice.contains("steps"), "advice: {advice}");
            }
            other => panic!("expected certification failure, got {other:?}"),
        }
        // A generous tolerance certifies and returns the bound.
        let b = certify_truncation(&spec, LimitVariant::Standard, 0.1, 1200, 1e-6).unwrap();
        assert!(b < 1e-12);
    }

    #[test]
    fn zero_speed_time_change_cannot_be_certified() {
        let law = TimeChangeLaw::Discrete {
            atoms: vec![
                Atom { value: 0.0, weight: 0.5 },
                Atom { value: 1.0, weight: 0.5 },
            ],
        };
        let spec = EnsembleSpec::new(vec![
            ProcessSpec::new(pe(1.0, 1.0)).with_time_change(law.clone()),
            ProcessSpec::new(pe(1.0, 1.0)).with_time_change(
                TimeChangeLaw::Uniform { lo: 0.5, hi: 1.5 },
            ),
        ])
        .unwrap();
        // The second process still yields a finite bound, so the ensemble
        // bound is finite (min over active processes)...
        let b = tail_truncation_bound(&spec, LimitVariant::TimeChanged, 0.1, 400).unwrap();
        assert!(b.is_finite());
        // ...but an ensemble whose only active process can freeze does not.
        let frozen = EnsembleSpec::new(vec![
            ProcessSpec::new(pe(1.0, 1.0)).with_time_change(law),
            ProcessSpec::new(pe(1.0, 2.0)).with_time_change(
                TimeChangeLaw::Uniform { lo: 0.5, hi: 1.5 },
            ),
        ])
        .unwrap();
        let bf = tail_truncation_bound(&frozen, LimitVariant::TimeChanged, 0.1, 400).unwrap();
        assert!(bf.is_infinite());
        assert!(matches!(
            certify_truncation(&frozen, LimitVariant::TimeChanged, 0.1, 400, 0.5),
            Err(Error::TruncationUncertified { .. })
        ));
    }

    #[test]
    fn order_stat_uses_only_j_processes() {
        // With j = 1 the third process must not consume randomness: the
        // sampled path from one stream equals the single-process path.
        let spec = standard_spec(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]);
        let single = standard_spec(&[(1.0, 1.0)]);
        let s_j1 = LimitPathSampler::new(&spec, LimitVariant::OrderStat { j: 1 }, 0.2, 10).unwrap();
        let s_one = LimitPathSampler::new(&single, LimitVariant::Standard, 0.2, 10).unwrap();
        let mut w1 = s_j1.workspace();
        let mut w2 = s_one.workspace();
        let mut o1 = vec![0.0; 10];
        let mut o2 = vec![0.0; 10];
        for i in 0..50 {
            let mut r1 = RandomStream::new(90, i).rng();
            let mut r2 = RandomStream::new(90, i).rng();
            s_j1.sample_min_path(&mut r1, &mut w1, &mut o1);
            s_one.sample_min_path(&mut r2, &mut w2, &mut o2);
            assert_eq!(o1, o2);
        }
    }

    #[test]
    fn times_sampler_handles_smooth_degenerate_covariance() {
        // alpha = 2 gives a rank-one fBm covariance; the dense route must
        // cope and produce Z(t) = sqrt(2) t N - t^2 + E exactly.
        let spec = standard_spec(&[(1.0, 2.0)]);
        let times = [0.5, 1.0, 1.5];
        let s = LimitTimesSampler::new(&spec, LimitVariant::Standard, &times).unwrap();
        let mut ws = s.workspace();
        let mut out = [0.0; 3];
        for i in 0..100 {
            let mut rng = RandomStream::new(91, i).rng();
            s.sample_min_into(&mut rng, &mut ws, &mut out);
            let a1 = out[0] + 0.25;
            let a2 = out[1] + 1.0;
            let n = (a2 - a1) / (SQRT_2 * 0.5);
            let e = a1 - SQRT_2 * 0.5 * n;
            let want = SQRT_2 * 1.5 * n - 2.25 + e;
            assert!((out[2] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn times_sampler_rejects_bad_times() {
        let spec = standard_spec(&[(1.0, 1.0)]);
        assert!(LimitTimesSampler::new(&spec, LimitVariant::Standard, &[]).is_err());
        assert!(LimitTimesSampler::new(&spec, LimitVariant::Standard, &[0.0, 1.0]).is_err());
        assert!(LimitTimesSampler::new(&spec, LimitVariant::Standard, &[-1.0]).is_err());
    }

    #[test]
    fn spec_serde_round_trip() {
        let law = TimeChangeLaw::Discrete {
            atoms: vec![
                Atom { value: 0.5, weight: 0.5 },
                Atom { value: 1.5, weight: 0.5 },
            ],
        };
        let spec = EnsembleSpec::new(vec![
            ProcessSpec::new(pe(1.0, 1.0)).with_time_change(law),
            ProcessSpec::new(pe(2.0, 1.5)).with_scale(2.0),
        ])
        .unwrap();
        let s = serde_json::to_string(&spec).unwrap();
        let back: EnsembleSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);
        // Deserializing an empty ensemble fails through the validator.
        assert!(serde_json::from_str::<EnsembleSpec>("[]").is_err());
    }
}
