//! Experiment configuration: one structured text file (TOML, with JSON
//! accepted as an alternative encoding) holding the process ensemble and
//! per-command parameter blocks. Unknown keys are rejected everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};
use supmin::limit::{EnsembleSpec, LimitVariant};
use supmin::stats::Estimate;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level configuration file. A single file may hold parameter blocks
/// for several commands; each run reads only the block it needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    /// Config schema version; must equal [`SCHEMA_VERSION`].
    pub schema: u32,
    /// Master seed; overridden by `--seed` or the `SUPMIN_SEED` variable.
    #[serde(default)]
    pub seed: Option<u64>,
    /// The process ensemble every command operates on.
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub pickands: Option<PickandsJob>,
    #[serde(default)]
    pub tail: Option<TailJob>,
    #[serde(default)]
    pub order_stats: Option<OrderStatsJob>,
    #[serde(default)]
    pub sojourn: Option<SojournJob>,
    #[serde(default)]
    pub limit_law: Option<LimitLawJob>,
    #[serde(default)]
    pub validate_sampler: Option<ValidateSamplerJob>,
}

impl RunConfig {
    /// Parse a config file; `.json` files are parsed as JSON, everything
    /// else as TOML.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid JSON config: {e}")))?
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid TOML config: {e}")))?
        };
        if cfg.schema != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config schema {} (this binary expects {SCHEMA_VERSION})",
                cfg.schema
            )));
        }
        Ok(cfg)
    }
}

fn default_variant() -> LimitVariant {
    LimitVariant::Standard
}

/// An externally supplied constant estimate (for the closed-form
/// approximations), as `value` with an optional standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantInput {
    pub value: f64,
    #[serde(default)]
    pub stderr: f64,
}

impl ConstantInput {
    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.value, self.stderr, 1)
    }
}

/// Parameters for the `pickands` command: the discrete-gap constant table
/// and its continuum extrapolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PickandsJob {
    #[serde(default = "default_variant")]
    pub variant: LimitVariant,
    #[serde(default = "PickandsJob::default_gaps")]
    pub gaps: Vec<f64>,
    #[serde(default = "PickandsJob::default_span")]
    pub span: f64,
    #[serde(default = "PickandsJob::default_replicas")]
    pub replicas: u64,
    #[serde(default = "PickandsJob::default_tolerance")]
    pub truncation_tolerance: f64,
    /// Also estimate the classical single-process constant at the minimal
    /// roughness and report the lower-bound certificate.
    #[serde(default)]
    pub with_lower_bound: bool,
}

impl PickandsJob {
    fn default_gaps() -> Vec<f64> {
        vec![0.2, 0.1, 0.05]
    }
    fn default_span() -> f64 {
        20.0
    }
    fn default_replicas() -> u64 {
        1_000_000
    }
    fn default_tolerance() -> f64 {
        0.2
    }
}

impl Default for PickandsJob {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            gaps: Self::default_gaps(),
            span: Self::default_span(),
            replicas: Self::default_replicas(),
            truncation_tolerance: Self::default_tolerance(),
            with_lower_bound: false,
        }
    }
}

/// Parameters for the `tail` command: a threshold sweep of crossing
/// probabilities with the matching closed-form values and ratios.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TailJob {
    #[serde(default = "default_variant")]
    pub variant: LimitVariant,
    #[serde(default = "TailJob::default_horizon")]
    pub horizon: f64,
    pub thresholds: Vec<f64>,
    #[serde(default = "TailJob::default_gap")]
    pub gap: f64,
    pub replicas: u64,
    #[serde(default = "TailJob::default_levels")]
    pub refinement_levels: u32,
    #[serde(default = "TailJob::default_gate_z")]
    pub gate_z: f64,
    /// Constant estimate entering the closed-form approximation.
    pub constant: ConstantInput,
}

impl TailJob {
    fn default_horizon() -> f64 {
        1.0
    }
    fn default_gap() -> f64 {
        0.25
    }
    fn default_levels() -> u32 {
        2
    }
    fn default_gate_z() -> f64 {
        2.0
    }
}

/// Parameters for the `order-stats` command: crossing probabilities of the
/// j-th largest process, plus per-process singles for the j = 1 product
/// identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct OrderStatsJob {
    #[serde(default = "TailJob::default_horizon")]
    pub horizon: f64,
    pub threshold: f64,
    #[serde(default = "TailJob::default_gap")]
    pub gap: f64,
    pub replicas: u64,
    #[serde(default = "TailJob::default_levels")]
    pub refinement_levels: u32,
    /// Orders to estimate; defaults to all of 1..=n.
    #[serde(default)]
    pub orders: Option<Vec<usize>>,
}

/// Parameters for the `sojourn` command: both sides of the sojourn limit on
/// a (window, level, x) grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SojournJob {
    /// Window lengths; the limit statement is local, so the default pairs
    /// the primary window with a halved sensitivity window.
    #[serde(default = "SojournJob::default_windows")]
    pub windows: Vec<f64>,
    #[serde(default = "SojournJob::default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "SojournJob::default_x_grid")]
    pub x_grid: Vec<f64>,
    #[serde(default = "SojournJob::default_path_gap")]
    pub path_gap: f64,
    pub path_replicas: u64,
    #[serde(default = "SojournJob::default_limit_gap")]
    pub limit_gap: f64,
    #[serde(default = "SojournJob::default_limit_steps")]
    pub limit_steps: usize,
    pub limit_replicas: u64,
    #[serde(default = "SojournJob::default_tolerance")]
    pub truncation_tolerance: f64,
}

impl SojournJob {
    fn default_windows() -> Vec<f64> {
        vec![1.0, 0.5]
    }
    fn default_levels() -> Vec<f64> {
        vec![1.5, 2.5]
    }
    fn default_x_grid() -> Vec<f64> {
        vec![0.5, 1.0, 2.0]
    }
    fn default_path_gap() -> f64 {
        0.25
    }
    fn default_limit_gap() -> f64 {
        0.1
    }
    fn default_limit_steps() -> usize {
        600
    }
    fn default_tolerance() -> f64 {
        1e-3
    }
}

/// Parameters for the `limit-law` command: conditional excursions above a
/// level versus the limit field, compared time by time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LimitLawJob {
    #[serde(default = "SojournJob::default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "LimitLawJob::default_rel_times")]
    pub rel_times: Vec<f64>,
    pub raw_replicas: u64,
    #[serde(default = "LimitLawJob::default_min_accepted")]
    pub min_accepted: u64,
    #[serde(default = "LimitLawJob::default_limit_replicas")]
    pub limit_replicas: u64,
    #[serde(default = "LimitLawJob::default_significance")]
    pub ks_significance: f64,
}

impl LimitLawJob {
    fn default_rel_times() -> Vec<f64> {
        vec![0.5, 1.0]
    }
    fn default_min_accepted() -> u64 {
        1_000
    }
    fn default_limit_replicas() -> u64 {
        20_000
    }
    fn default_significance() -> f64 {
        0.05
    }
}

/// Parameters for the `validate-sampler` command: distributional checks of
/// the path samplers underlying everything else.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ValidateSamplerJob {
    #[serde(default = "ValidateSamplerJob::default_replicas")]
    pub replicas: u64,
    #[serde(default = "ValidateSamplerJob::default_lags")]
    pub lags: Vec<usize>,
    #[serde(default = "ValidateSamplerJob::default_significance")]
    pub significance: f64,
    #[serde(default = "ValidateSamplerJob::default_span")]
    pub grid_span: f64,
    #[serde(default = "ValidateSamplerJob::default_points")]
    pub grid_points: usize,
    /// Roughness exponents for the self-similar sampler checks.
    #[serde(default = "ValidateSamplerJob::default_alphas")]
    pub fbm_alphas: Vec<f64>,
}

impl ValidateSamplerJob {
    fn default_replicas() -> u64 {
        20_000
    }
    fn default_lags() -> Vec<usize> {
        vec![1, 2, 4, 8]
    }
    fn default_significance() -> f64 {
        0.01
    }
    fn default_span() -> f64 {
        2.0
    }
    fn default_points() -> usize {
        256
    }
    fn default_alphas() -> Vec<f64> {
        vec![0.5, 1.0, 1.5, 2.0]
    }
}

impl Default for ValidateSamplerJob {
    fn default() -> Self {
        Self {
            replicas: Self::default_replicas(),
            lags: Self::default_lags(),
            significance: Self::default_significance(),
            grid_span: Self::default_span(),
            grid_points: Self::default_points(),
            fbm_alphas: Self::default_alphas(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_round_trip() {
        let text = r#"
schema = 1
seed = 42
ensemble = [
  { model = { family = "powered-exponential", c = 1.0, alpha = 1.0 } },
]

[pickands]
replicas = 1000
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.schema, 1);
        assert_eq!(cfg.seed, Some(42));
        assert_eq!(cfg.ensemble.n(), 1);
        let p = cfg.pickands.unwrap();
        assert_eq!(p.replicas, 1000);
        assert_eq!(p.gaps, vec![0.2, 0.1, 0.05]);
        assert_eq!(p.span, 20.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
schema = 1
ensemble = [ { model = { family = "powered-exponential", c = 1.0, alpha = 1.0 } } ]
surprise = true
"#;
        assert!(toml::from_str::<RunConfig>(text).is_err());
        let nested = r#"
schema = 1
ensemble = [ { model = { family = "powered-exponential", c = 1.0, alpha = 1.0 } } ]

[tail]
thresholds = [2.0]
replicas = 10
constant = { value = 1.0 }
typo_field = 3
"#;
        assert!(toml::from_str::<RunConfig>(nested).is_err());
    }

    #[test]
    fn json_config_parses_too() {
        let text = r#"{
  "schema": 1,
  "ensemble": [
    { "model": { "family": "generalized-cauchy", "c": 1.0, "alpha": 1.0, "gamma": 2.0 } }
  ],
  "sojourn": { "path-replicas": 100, "limit-replicas": 100 }
}"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        assert!(cfg.sojourn.is_some());
        assert_eq!(cfg.sojourn.unwrap().windows, vec![1.0, 0.5]);
    }

    #[test]
    fn invalid_model_parameters_fail_at_validation_not_parse() {
        // alpha = 2.5 violates the roughness range (0, 2]; parsing accepts
        // it structurally, ensemble validation rejects it.
        let text = r#"
schema = 1
ensemble = [ { model = { family = "powered-exponential", c = 1.0, alpha = 2.5 } } ]
"#;
        let parsed: Result<RunConfig, _> = toml::from_str(text);
        assert!(parsed.is_err(), "ensemble construction validates eagerly");
        let msg = format!("{}", parsed.unwrap_err());
        assert!(msg.contains("(0, 2]"), "message should cite the range: {msg}");
    }
}
