use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::summary::{Estimate, ExperimentSummary};

pub const SUMMARY_TEXT: &str = "summary.txt";
pub const ESTIMATES_CSV: &str = "estimates.csv";
pub const CHECKS_CSV: &str = "checks.csv";

/// Rendered report of a complete run.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub text: String,
    pub estimates_csv: String,
    pub checks_csv: String,
    pub checks: usize,
    pub failed: usize,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failed == 0
    }
}

/// Builds the report of the run in `dir` from the summaries listed in its
/// manifest, verifying their checksums, and writes the summary text and
/// CSV plot data next to the manifest.
pub fn emit_report(dir: &Path) -> Result<Report> {
    let manifest = RunManifest::load(dir)?;
    if manifest.incomplete {
        return Err(CliError::IncompleteManifest(dir.join(crate::manifest::MANIFEST_FILE)));
    }
    let summaries = manifest
        .experiments
        .iter()
        .map(|e| {
            let relative = e.summary.as_deref().ok_or_else(|| CliError::IncompleteManifest(dir.to_path_buf()))?;
            let bytes = manifest.read_verified(dir, relative)?;
            serde_json::from_slice::<ExperimentSummary>(&bytes).map_err(|err| CliError::Json { path: dir.join(relative), message: err.to_string() })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = render(&manifest, &summaries);
    for (name, contents) in [(SUMMARY_TEXT, &report.text), (ESTIMATES_CSV, &report.estimates_csv), (CHECKS_CSV, &report.checks_csv)] {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(path, e))?;
    }
    Ok(report)
}

fn format_estimate(e: &Estimate) -> String {
    match (e.value, e.stderr) {
        (None, _) => format!("{} = n/a", e.name),
        (Some(v), None) => format!("{} = {v:.6}", e.name),
        (Some(v), Some(se)) => {
            format!("{} = {v:.6} ± {se:.6} (95% CI [{:.6}, {:.6}])", e.name, v - 1.96 * se, v + 1.96 * se)
        }
    }
}

fn csv_field(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_text(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn render(manifest: &RunManifest, summaries: &[ExperimentSummary]) -> Report {
    let mut text = String::new();
    let mut estimates_csv = String::from("experiment,kind,name,value,stderr\n");
    let mut checks_csv = String::from("experiment,kind,check,passed,detail\n");
    let (mut checks, mut failed) = (0, 0);
    for s in summaries {
        let _ = writeln!(text, "[{:02} {}]", s.index, s.kind);
        for e in &s.estimates {
            let _ = writeln!(text, "  {}", format_estimate(e));
            let _ = writeln!(estimates_csv, "{},{},{},{},{}", s.index, s.kind, e.name, csv_field(e.value), csv_field(e.stderr));
        }
        for c in &s.checks {
            checks += 1;
            failed += !c.passed as usize;
            let _ = writeln!(text, "  check {}: {} ({})", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
            let _ = writeln!(checks_csv, "{},{},{},{},{}", s.index, s.kind, c.name, c.passed, csv_text(&c.detail));
        }
        text.push('\n');
    }
    if !summaries.is_empty() {
        text = format!(
            "{} {} | config {} | master seed {}\n\n{text}checks: {} passed, {failed} failed\n",
            manifest.tool,
            manifest.version,
            manifest.config_hash,
            manifest.master_seed,
            checks - failed
        );
    }
    Report { text, estimates_csv, checks_csv, checks, failed }
}
