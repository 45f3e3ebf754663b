//! Whitespace-separated plot-data emitters (gnuplot-friendly `.dat` files).
//!
//! Each file starts with a `#` header naming the columns. These are written
//! by every run regardless of `--format`, and `emit-plot-data` can rebuild
//! them from a results directory's JSON files after the fact.

use std::path::Path;

use crate::run::{PickandsResult, SojournResult, TailSweepResult};
use crate::CliError;

/// Constant estimate against grid gap, one row per table row.
pub fn hhat_vs_gap(result: &PickandsResult) -> String {
    let mut out = String::from("# a H_hat stderr\n");
    for row in &result.table.rows {
        out.push_str(&format!("{} {} {}\n", row.gap, row.h_hat, row.stderr_h));
    }
    out
}

/// Empirical-to-approximation ratio against threshold, ascending in `u`.
pub fn ratio_vs_u(result: &TailSweepResult) -> String {
    let mut rows: Vec<_> = result.rows.iter().collect();
    rows.sort_by(|a, b| a.u.total_cmp(&b.u));
    let mut out = String::from("# u ratio stderr\n");
    for row in rows {
        out.push_str(&format!(
            "{} {} {}\n",
            row.u, row.ratio.ratio, row.ratio.stderr
        ));
    }
    out
}

/// Sojourn-tail overlay for the first window at its largest level: the
/// path-level statistic against the limit curve, one row per `x`.
pub fn berman_overlay(result: &SojournResult) -> Option<String> {
    let run = result.runs.first()?;
    let u_max = run
        .report
        .rows
        .iter()
        .map(|r| r.u)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = String::from("# x lhs lhs_err B_hat B_err\n");
    let mut any = false;
    for r in run.report.rows.iter().filter(|r| r.u == u_max) {
        any = true;
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            r.x, r.lhs.mean, r.lhs.stderr, r.b_hat.mean, r.b_hat.stderr
        ));
    }
    any.then_some(out)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", path.display())))?;
    Ok(Some(value))
}

/// Regenerate plot-data files from the JSON results in `results`, writing
/// them into `out`. Returns how many files were written.
pub fn emit_from_dir(results: &Path, out: &Path) -> Result<usize, CliError> {
    let mut written = 0usize;
    let mut emit = |name: &str, text: String| -> Result<(), CliError> {
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::Internal(format!("cannot create output directory: {e}")))?;
        std::fs::write(out.join(name), text)
            .map_err(|e| CliError::Internal(format!("cannot write {name}: {e}")))?;
        written += 1;
        Ok(())
    };
    if let Some(r) = load_json::<PickandsResult>(&results.join("pickands.json"))? {
        emit("hhat_vs_gap.dat", hhat_vs_gap(&r))?;
    }
    if let Some(r) = load_json::<TailSweepResult>(&results.join("tail.json"))? {
        emit("ratio_vs_u.dat", ratio_vs_u(&r))?;
    }
    if let Some(r) = load_json::<SojournResult>(&results.join("sojourn.json"))? {
        if let Some(text) = berman_overlay(&r) {
            emit("berman_overlay.dat", text)?;
        }
    }
    Ok(written)
}
