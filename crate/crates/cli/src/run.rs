//! Command pipelines: each one runs a module workflow, writes its JSON and
//! CSV results plus plot-data files, and reports the jobs it scheduled for
//! the manifest.
//!
//! Result files are pure functions of (config, master seed): no timings, no
//! hostnames, no ordering that depends on worker count.

use std::path::Path;

use serde::{Deserialize, Serialize};

use supmin::extremes::{
    asymptotic_conjunction, asymptotic_nonstandard, asymptotic_order_stat,
    asymptotic_time_changed, conditional_excursion_sample, limit_companion_sample, mc_sup_tail,
    ratio_diagnostic, AsymptoticValue, LadderOptions, RatioDiagnostic, TailQuery,
};
use supmin::gauss::validation::{check_fbm_sampler, check_stationary_sampler, CheckConfig};
use supmin::gauss::{CorrelationModel, GridSpec};
use supmin::limit::{EnsembleSpec, LimitVariant};
use supmin::pickands::{estimate_table, extrapolate_h, lower_bound_h, HExtrapolation, PickandsTable};
use supmin::sojourn::{berman_compare, BermanConfig, BermanReport};
use supmin::stats::{
    ks_critical_value, ks_statistic, ks_two_sample, normal_survival, Estimate, StreamFamily,
};

use crate::config::{
    LimitLawJob, OrderStatsJob, PickandsJob, RunConfig, SojournJob, TailJob, ValidateSamplerJob,
};
use crate::manifest::JobRecord;
use crate::{CliError, OutputFormat};

/// What a pipeline produced: files written (relative to the output
/// directory) and the stream blocks it consumed.
pub struct Artifacts {
    pub files: Vec<String>,
    pub jobs: Vec<JobRecord>,
}

pub struct RunContext<'a> {
    pub out_dir: &'a Path,
    pub format: OutputFormat,
    pub family: StreamFamily,
}

impl RunContext<'_> {
    fn write(&self, name: &str, text: &str, files: &mut Vec<String>) -> Result<(), CliError> {
        std::fs::create_dir_all(self.out_dir)
            .map_err(|e| CliError::Internal(format!("cannot create output directory: {e}")))?;
        std::fs::write(self.out_dir.join(name), text)
            .map_err(|e| CliError::Internal(format!("cannot write {name}: {e}")))?;
        files.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(
        &self,
        name: &str,
        value: &T,
        files: &mut Vec<String>,
    ) -> Result<(), CliError> {
        if matches!(self.format, OutputFormat::Json | OutputFormat::Both) {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| CliError::Internal(format!("cannot serialize {name}: {e}")))?;
            self.write(name, &(text + "\n"), files)?;
        }
        Ok(())
    }

    fn write_csv(&self, name: &str, text: &str, files: &mut Vec<String>) -> Result<(), CliError> {
        if matches!(self.format, OutputFormat::Csv | OutputFormat::Both) {
            self.write(name, text, files)?;
        }
        Ok(())
    }

    /// Plot-data files are written regardless of `--format`.
    fn write_plot(&self, name: &str, text: &str, files: &mut Vec<String>) -> Result<(), CliError> {
        self.write(name, text, files)
    }
}

// ---------------------------------------------------------------------------
// pickands

/// Certificate that the ensemble constant respects its single-process lower
/// bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerBoundCertificate {
    /// Classical unit-scale constant at the minimal roughness.
    pub reference_constant: Estimate,
    /// `max_i c_i^(1/alpha_min)` over processes at the minimal roughness.
    pub scale_factor: f64,
    pub bound: Estimate,
    pub ensemble_constant: Estimate,
    pub satisfied_within_3_stderr: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PickandsResult {
    pub table: PickandsTable,
    pub extrapolation: HExtrapolation,
    pub lower_bound: Option<LowerBoundCertificate>,
}

pub fn run_pickands(
    cfg: &RunConfig,
    job: &PickandsJob,
    ctx: &RunContext,
) -> Result<Artifacts, CliError> {
    let spec = &cfg.ensemble;
    let mut jobs = vec![JobRecord {
        name: "pickands-table".to_string(),
        stream_base: 0,
    }];
    let table = estimate_table(
        spec,
        job.variant,
        &job.gaps,
        job.span,
        job.replicas,
        &ctx.family,
        job.truncation_tolerance,
    )?;
    let extrapolation = extrapolate_h(&table)?;
    let lower_bound = if job.with_lower_bound {
        const REFERENCE_BASE: u64 = 1 << 48;
        jobs.push(JobRecord {
            name: "pickands-reference".to_string(),
            stream_base: REFERENCE_BASE,
        });
        let alpha_min = spec.alpha_min();
        let reference = EnsembleSpec::from_models(vec![CorrelationModel::powered_exponential(
            1.0, alpha_min,
        )?])?;
        let ref_table = estimate_table(
            &reference,
            LimitVariant::Standard,
            &job.gaps,
            job.span,
            job.replicas,
            &ctx.family.offset(REFERENCE_BASE),
            job.truncation_tolerance,
        )?;
        let ref_ex = extrapolate_h(&ref_table)?;
        let bound = lower_bound_h(spec, &ref_ex.estimate)?;
        let scale_factor = bound.mean / ref_ex.estimate.mean;
        let ensemble_constant = extrapolation.estimate;
        let satisfied = ensemble_constant.mean
            >= bound.mean - 3.0 * ensemble_constant.combined_stderr(&bound);
        Some(LowerBoundCertificate {
            reference_constant: ref_ex.estimate,
            scale_factor,
            bound,
            ensemble_constant,
            satisfied_within_3_stderr: satisfied,
        })
    } else {
        None
    };
    let result = PickandsResult {
        table,
        extrapolation,
        lower_bound,
    };
    let mut files = Vec::new();
    ctx.write_json("pickands.json", &result, &mut files)?;
    ctx.write_csv("pickands_table.csv", &result.table.to_csv(), &mut files)?;
    ctx.write_plot(
        "hhat_vs_gap.dat",
        &crate::plot::hhat_vs_gap(&result),
        &mut files,
    )?;
    Ok(Artifacts { files, jobs })
}

// ---------------------------------------------------------------------------
// tail

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailSweepRow {
    pub u: f64,
    pub p_hat: Estimate,
    /// Per-rung pitches and estimates of the refinement ladder.
    pub pitches: Vec<f64>,
    pub rung_estimates: Vec<Estimate>,
    pub gate_converged: bool,
    pub asymptotic: AsymptoticValue,
    pub ratio: RatioDiagnostic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailSweepResult {
    pub horizon: f64,
    pub rows: Vec<TailSweepRow>,
}

fn asymptotic_for_variant(
    spec: &EnsembleSpec,
    variant: LimitVariant,
    horizon: f64,
    u: f64,
    h: &Estimate,
) -> Result<AsymptoticValue, CliError> {
    let v = match variant {
        LimitVariant::Standard => asymptotic_conjunction(spec, horizon, u, h)?,
        LimitVariant::OrderStat { j } => asymptotic_order_stat(spec, j, horizon, u, h)?,
        LimitVariant::NonStandard => asymptotic_nonstandard(spec, horizon, u, h)?,
        LimitVariant::TimeChanged => asymptotic_time_changed(spec, horizon, u, h)?,
    };
    Ok(v)
}

pub fn run_tail(cfg: &RunConfig, job: &TailJob, ctx: &RunContext) -> Result<Artifacts, CliError> {
    if job.thresholds.is_empty() {
        return Err(CliError::Config("tail: no thresholds given".to_string()));
    }
    let spec = &cfg.ensemble;
    let constant = job.constant.estimate();
    let opts = LadderOptions {
        refinement_levels: job.refinement_levels,
        gate_z: job.gate_z,
    };
    let mut rows = Vec::with_capacity(job.thresholds.len());
    let mut jobs = Vec::new();
    for (i, &u) in job.thresholds.iter().enumerate() {
        let base = (i as u64) << 20;
        jobs.push(JobRecord {
            name: format!("tail-u{u}"),
            stream_base: base,
        });
        let query = TailQuery {
            spec: spec.clone(),
            variant: job.variant,
            horizon: job.horizon,
            threshold: u,
            gap: job.gap,
            replicas: job.replicas,
        };
        let res = mc_sup_tail(&query, &opts, &ctx.family.offset(base))?;
        let asymptotic = asymptotic_for_variant(spec, job.variant, job.horizon, u, &constant)?;
        let ratio = ratio_diagnostic(&res.final_estimate, &asymptotic)?;
        rows.push(TailSweepRow {
            u,
            p_hat: res.final_estimate,
            pitches: res.pitches,
            rung_estimates: res.estimates,
            gate_converged: res.gate.converged,
            asymptotic,
            ratio,
        });
    }
    let result = TailSweepResult {
        horizon: job.horizon,
        rows,
    };
    let mut files = Vec::new();
    ctx.write_json("tail.json", &result, &mut files)?;
    let mut csv = String::from("u,p_hat,p_err,asymptotic,asym_err,ratio,ratio_err,gate_converged\n");
    for r in &result.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.u,
            r.p_hat.mean,
            r.p_hat.stderr,
            r.asymptotic.value,
            r.asymptotic.stderr,
            r.ratio.ratio,
            r.ratio.stderr,
            r.gate_converged
        ));
    }
    ctx.write_csv("tail.csv", &csv, &mut files)?;
    ctx.write_plot(
        "ratio_vs_u.dat",
        &crate::plot::ratio_vs_u(&result),
        &mut files,
    )?;
    Ok(Artifacts { files, jobs })
}

// ---------------------------------------------------------------------------
// order-stats

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderRow {
    pub j: usize,
    pub p_hat: Estimate,
    pub gate_converged: bool,
}

/// The independence identity for the running maximum (`j = 1`):
/// `P(sup max > u) = 1 - prod_i (1 - p_i)` with `p_i` the single-process
/// crossing probabilities on the same grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaxIdentityCheck {
    pub product_complement: Estimate,
    pub max_estimate: Estimate,
    pub abs_diff: f64,
    pub combined_stderr: f64,
    pub within_3_stderr: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderStatsResult {
    pub horizon: f64,
    pub threshold: f64,
    pub orders: Vec<OrderRow>,
    /// Per-process single crossing probabilities on the same grid.
    pub singles: Vec<Estimate>,
    pub max_identity: Option<MaxIdentityCheck>,
}

pub fn run_order_stats(
    cfg: &RunConfig,
    job: &OrderStatsJob,
    ctx: &RunContext,
) -> Result<Artifacts, CliError> {
    let spec = &cfg.ensemble;
    let n = spec.n();
    let orders: Vec<usize> = job.orders.clone().unwrap_or_else(|| (1..=n).collect());
    if orders.is_empty() {
        return Err(CliError::Config("order-stats: no orders given".to_string()));
    }
    let opts = LadderOptions {
        refinement_levels: job.refinement_levels,
        gate_z: 2.0,
    };
    let mut jobs = Vec::new();
    let mut rows = Vec::with_capacity(orders.len());
    for &j in &orders {
        let base = (j as u64) << 20;
        jobs.push(JobRecord {
            name: format!("order-{j}"),
            stream_base: base,
        });
        let query = TailQuery {
            spec: spec.clone(),
            variant: LimitVariant::OrderStat { j },
            horizon: job.horizon,
            threshold: job.threshold,
            gap: job.gap,
            replicas: job.replicas,
        };
        let res = mc_sup_tail(&query, &opts, &ctx.family.offset(base))?;
        rows.push(OrderRow {
            j,
            p_hat: res.final_estimate,
            gate_converged: res.gate.converged,
        });
    }
    const SINGLES_BASE: u64 = 1 << 40;
    let mut singles = Vec::with_capacity(n);
    for (i, p) in spec.processes().iter().enumerate() {
        let base = SINGLES_BASE + ((i as u64) << 20);
        jobs.push(JobRecord {
            name: format!("single-{i}"),
            stream_base: base,
        });
        let single = EnsembleSpec::from_models(vec![p.model])?;
        let query = TailQuery {
            spec: single,
            variant: LimitVariant::Standard,
            horizon: job.horizon,
            threshold: job.threshold,
            gap: job.gap,
            replicas: job.replicas,
        };
        let res = mc_sup_tail(&query, &opts, &ctx.family.offset(base))?;
        singles.push(res.final_estimate);
    }
    let max_identity = rows.iter().find(|r| r.j == 1).map(|max_row| {
        // 1 - prod (1 - p_i), with the delta-method error from independent
        // single estimates.
        let mut prod = 1.0;
        for s in &singles {
            prod *= 1.0 - s.mean;
        }
        let mut var = 0.0;
        for s in &singles {
            let partial = prod / (1.0 - s.mean).max(f64::MIN_POSITIVE);
            var += (partial * s.stderr).powi(2);
        }
        let pc = Estimate::new(1.0 - prod, var.sqrt(), job.replicas);
        let abs_diff = (max_row.p_hat.mean - pc.mean).abs();
        let combined = max_row.p_hat.combined_stderr(&pc);
        MaxIdentityCheck {
            product_complement: pc,
            max_estimate: max_row.p_hat,
            abs_diff,
            combined_stderr: combined,
            within_3_stderr: abs_diff <= 3.0 * combined,
        }
    });
    let result = OrderStatsResult {
        horizon: job.horizon,
        threshold: job.threshold,
        orders: rows,
        singles,
        max_identity,
    };
    let mut files = Vec::new();
    ctx.write_json("order_stats.json", &result, &mut files)?;
    let mut csv = String::from("j,p_hat,stderr,gate_converged\n");
    for r in &result.orders {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.j, r.p_hat.mean, r.p_hat.stderr, r.gate_converged
        ));
    }
    ctx.write_csv("order_stats.csv", &csv, &mut files)?;
    Ok(Artifacts { files, jobs })
}

// ---------------------------------------------------------------------------
// sojourn

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanIdentityCheck {
    pub u: f64,
    pub mean: Estimate,
    /// The exact value `t Psi(u)^n`.
    pub exact: f64,
    pub z_score: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SojournWindowRun {
    pub t: f64,
    pub mean_checks: Vec<MeanIdentityCheck>,
    pub report: BermanReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SojournResult {
    pub runs: Vec<SojournWindowRun>,
}

pub fn run_sojourn(
    cfg: &RunConfig,
    job: &SojournJob,
    ctx: &RunContext,
) -> Result<Artifacts, CliError> {
    if job.windows.is_empty() {
        return Err(CliError::Config("sojourn: no windows given".to_string()));
    }
    let spec = &cfg.ensemble;
    let n = spec.n() as i32;
    let bcfg = BermanConfig {
        path_gap: job.path_gap,
        path_replicas: job.path_replicas,
        limit_gap: job.limit_gap,
        limit_steps: job.limit_steps,
        limit_replicas: job.limit_replicas,
        truncation_tolerance: job.truncation_tolerance,
    };
    let mut jobs = Vec::new();
    let mut runs = Vec::with_capacity(job.windows.len());
    for (wi, &t) in job.windows.iter().enumerate() {
        let base = (wi as u64) << 40;
        jobs.push(JobRecord {
            name: format!("sojourn-t{t}"),
            stream_base: base,
        });
        let report = berman_compare(
            spec,
            t,
            &job.levels,
            &job.x_grid,
            &bcfg,
            &ctx.family.offset(base),
        )?;
        let mean_checks = report
            .sojourn_means
            .iter()
            .map(|m| {
                let exact = t * normal_survival(m.u).expect("validated level").powi(n);
                let z = (m.mean.mean - exact) / m.mean.stderr.max(f64::MIN_POSITIVE);
                MeanIdentityCheck {
                    u: m.u,
                    mean: m.mean,
                    exact,
                    z_score: z,
                    passed: z.abs() <= 3.0,
                }
            })
            .collect();
        runs.push(SojournWindowRun {
            t,
            mean_checks,
            report,
        });
    }
    let result = SojournResult { runs };
    let mut files = Vec::new();
    ctx.write_json("sojourn.json", &result, &mut files)?;
    let mut csv = String::from("t,u,x,lhs,lhs_err,B_hat,B_err,abs_diff\n");
    for run in &result.runs {
        for r in &run.report.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                run.t, r.u, r.x, r.lhs.mean, r.lhs.stderr, r.b_hat.mean, r.b_hat.stderr, r.abs_diff
            ));
        }
    }
    ctx.write_csv("sojourn.csv", &csv, &mut files)?;
    if let Some(overlay) = crate::plot::berman_overlay(&result) {
        ctx.write_plot("berman_overlay.dat", &overlay, &mut files)?;
    }
    Ok(Artifacts { files, jobs })
}

// ---------------------------------------------------------------------------
// limit-law

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KsRow {
    /// Observation time on the local scale; 0 is the conditioning point.
    pub time: f64,
    /// The reference distribution: the exact unit exponential at time 0,
    /// simulated limit-field draws elsewhere.
    pub oracle: String,
    pub statistic: f64,
    pub critical: f64,
    pub effective_samples: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitLawRun {
    pub u: f64,
    pub accepted: u64,
    pub raw_replicas: u64,
    pub acceptance_probability: f64,
    pub checks: Vec<KsRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitLawResult {
    pub rel_times: Vec<f64>,
    pub runs: Vec<LimitLawRun>,
}

pub fn run_limit_law(
    cfg: &RunConfig,
    job: &LimitLawJob,
    ctx: &RunContext,
) -> Result<Artifacts, CliError> {
    if job.levels.is_empty() {
        return Err(CliError::Config("limit-law: no levels given".to_string()));
    }
    let spec = &cfg.ensemble;
    const COMPANION_BASE: u64 = 1 << 40;
    let mut jobs = Vec::new();
    let mut runs = Vec::with_capacity(job.levels.len());
    for (i, &u) in job.levels.iter().enumerate() {
        let base = (i as u64) << 20;
        jobs.push(JobRecord {
            name: format!("excursion-u{u}"),
            stream_base: base,
        });
        jobs.push(JobRecord {
            name: format!("companion-u{u}"),
            stream_base: COMPANION_BASE + base,
        });
        let sample = conditional_excursion_sample(
            spec,
            u,
            &job.rel_times,
            job.raw_replicas,
            job.min_accepted,
            &ctx.family.offset(base),
        )?;
        let companion = limit_companion_sample(
            spec,
            &job.rel_times,
            job.limit_replicas,
            &ctx.family.offset(COMPANION_BASE + base),
        )?;
        let mut checks = Vec::with_capacity(job.rel_times.len() + 1);
        // Time 0: the scaled overshoot against its exact limit law.
        let zero_col = sample.column(0);
        let stat = ks_statistic(&zero_col, |x| if x < 0.0 { 0.0 } else { 1.0 - (-x).exp() })?;
        let n_eff = zero_col.len() as f64;
        let critical = ks_critical_value(job.ks_significance, n_eff)?;
        checks.push(KsRow {
            time: 0.0,
            oracle: "unit-exponential".to_string(),
            statistic: stat,
            critical,
            effective_samples: n_eff,
            passed: stat <= critical,
        });
        for (j, &t) in job.rel_times.iter().enumerate() {
            let xs = sample.column(j + 1);
            let ys: Vec<f64> = companion.iter().map(|r| r[j]).collect();
            let stat = ks_two_sample(&xs, &ys)?;
            let n_eff =
                (xs.len() as f64 * ys.len() as f64) / (xs.len() as f64 + ys.len() as f64);
            let critical = ks_critical_value(job.ks_significance, n_eff)?;
            checks.push(KsRow {
                time: t,
                oracle: "limit-field".to_string(),
                statistic: stat,
                critical,
                effective_samples: n_eff,
                passed: stat <= critical,
            });
        }
        runs.push(LimitLawRun {
            u,
            accepted: sample.accepted,
            raw_replicas: sample.raw_replicas,
            acceptance_probability: sample.acceptance_probability,
            checks,
        });
    }
    let result = LimitLawResult {
        rel_times: job.rel_times.clone(),
        runs,
    };
    let mut files = Vec::new();
    ctx.write_json("limit_law.json", &result, &mut files)?;
    let mut csv = String::from("u,time,oracle,ks_statistic,critical,passed\n");
    for run in &result.runs {
        for c in &run.checks {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                run.u, c.time, c.oracle, c.statistic, c.critical, c.passed
            ));
        }
    }
    ctx.write_csv("limit_law.csv", &csv, &mut files)?;
    Ok(Artifacts { files, jobs })
}

// ---------------------------------------------------------------------------
// validate-sampler

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryEntry {
    pub model: CorrelationModel,
    pub report: supmin::gauss::validation::StationaryReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FbmEntry {
    pub alpha: f64,
    pub report: supmin::gauss::validation::FbmReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationResult {
    pub stationary: Vec<StationaryEntry>,
    pub fbm: Vec<FbmEntry>,
    pub passed: bool,
}

/// Quote a CSV field if it contains a delimiter, quote, or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn model_label(model: &CorrelationModel) -> String {
    match model {
        CorrelationModel::PoweredExponential { c, alpha } => {
            format!("powered-exponential c={c} alpha={alpha}")
        }
        CorrelationModel::GeneralizedCauchy { c, alpha, gamma } => {
            format!("generalized-cauchy c={c} alpha={alpha} gamma={gamma}")
        }
    }
}

pub fn run_validate_sampler(
    cfg: &RunConfig,
    job: &ValidateSamplerJob,
    ctx: &RunContext,
) -> Result<Artifacts, CliError> {
    let grid = GridSpec::from_points(job.grid_span, job.grid_points)?;
    let ccfg = CheckConfig {
        replicas: job.replicas,
        lags: job.lags.clone(),
        significance: job.significance,
    };
    const FBM_BASE: u64 = 1 << 40;
    let mut jobs = Vec::new();
    let mut stationary = Vec::new();
    for (i, p) in cfg.ensemble.processes().iter().enumerate() {
        let base = (i as u64) << 16;
        jobs.push(JobRecord {
            name: format!("stationary-{i}"),
            stream_base: base,
        });
        let report = check_stationary_sampler(p.model, grid, &ccfg, &ctx.family.offset(base))?;
        stationary.push(StationaryEntry {
            model: p.model,
            report,
        });
    }
    let mut fbm = Vec::new();
    for (i, &alpha) in job.fbm_alphas.iter().enumerate() {
        let base = FBM_BASE + ((i as u64) << 16);
        jobs.push(JobRecord {
            name: format!("self-similar-{alpha}"),
            stream_base: base,
        });
        let report = check_fbm_sampler(alpha, grid, &ccfg, &ctx.family.offset(base))?;
        fbm.push(FbmEntry { alpha, report });
    }
    let passed = stationary.iter().all(|e| e.report.passed) && fbm.iter().all(|e| e.report.passed);
    let result = ValidationResult {
        stationary,
        fbm,
        passed,
    };
    let mut files = Vec::new();
    ctx.write_json("validation.json", &result, &mut files)?;
    // For moment rows `value` is the z-score and `threshold` the two-sided
    // critical value implied by the significance level; for KS rows they are
    // the statistic and its critical value.
    let z_crit = supmin::stats::normal_quantile(1.0 - job.significance / 2.0)?;
    let mut csv = String::from("target,kind,label,value,threshold,passed\n");
    for e in &result.stationary {
        let target = csv_field(&model_label(&e.model));
        for m in &e.report.moment_checks {
            csv.push_str(&format!(
                "{target},moment,{},{},{z_crit},{}\n",
                csv_field(&m.label),
                m.z_score,
                m.passed
            ));
        }
        for k in [&e.report.marginal_ks, &e.report.stationarity_ks] {
            csv.push_str(&format!(
                "{target},ks,{},{},{},{}\n",
                csv_field(&k.label),
                k.statistic,
                k.critical,
                k.passed
            ));
        }
    }
    for e in &result.fbm {
        let target = format!("self-similar alpha={}", e.alpha);
        for m in &e.report.moment_checks {
            csv.push_str(&format!(
                "{target},moment,{},{},{z_crit},{}\n",
                csv_field(&m.label),
                m.z_score,
                m.passed
            ));
        }
        let k = &e.report.increment_stationarity_ks;
        csv.push_str(&format!(
            "{target},ks,{},{},{},{}\n",
            csv_field(&k.label),
            k.statistic,
            k.critical,
            k.passed
        ));
    }
    ctx.write_csv("validation.csv", &csv, &mut files)?;
    if !result.passed {
        return Err(CliError::Refusal(
            "sampler validation failed; see validation.json for the failing checks".to_string(),
        ));
    }
    Ok(Artifacts { files, jobs })
}
