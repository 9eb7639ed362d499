//! Summary tables and plot data from a finished run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, SweetError};
use crate::format::read_file;
use crate::harness::config::ExperimentConfig;
use crate::harness::experiment::ReportSummary;
use crate::runlog::{read_csv, EpisodeRecord};

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4e}"))
}

/// Fixed-width per-seed table followed by aggregate lines.
pub fn summary_table(summary: &ReportSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>10} {:>9} {:>10} {:>12} {:>12} {:>11} {:>8} {:>10}",
        "seed", "terminated", "n_eps", "episodes", "violations", "final_U", "max_gap", "plan", "err_bound"
    );
    for o in &summary.seeds {
        match &o.report {
            Some(r) => {
                let gap = r.tasks.iter().map(|t| t.gap).fold(None, |a: Option<f64>, g| Some(a.map_or(g, |a| a.max(g))));
                let _ = writeln!(
                    out,
                    "{:>6} {:>10} {:>9} {:>10} {:>12} {:>12.4e} {:>11} {:>8} {:>10}",
                    r.seed,
                    r.terminated,
                    r.n_epsilon.map_or_else(|| "-".into(), |n| n.to_string()),
                    r.episodes,
                    r.violations,
                    r.final_uncertainty,
                    opt(gap),
                    if r.planning_pass() { "pass" } else { "fail" },
                    format!("{}/{}", r.error_bound.violations, r.error_bound.checks),
                );
            }
            None => {
                let _ = writeln!(out, "{:>6} error: {}", o.seed, o.error.as_deref().unwrap_or("unknown"));
            }
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "mode                 {:?}", summary.mode);
    let _ = writeln!(out, "completed            {}/{}", summary.completed, summary.seeds.len());
    let _ = writeln!(out, "terminated           {}", summary.terminated);
    let _ = writeln!(out, "total violations     {}", summary.total_violations);
    let _ = writeln!(out, "max violations/seed  {}", summary.max_violations);
    let _ = writeln!(out, "median n_eps         {}", opt(summary.median_n_epsilon));
    let _ = writeln!(out, "max optimality gap   {}", opt(summary.max_gap));
    let _ = writeln!(out, "planning pass rate   {:.3}", summary.planning_pass_rate);
    let _ = writeln!(out, "error-bound failures {:.3} of seeds", summary.error_bound_seed_fraction);
    out
}

/// `episode U` lines.
pub fn uncertainty_curve(records: &[EpisodeRecord]) -> String {
    let mut out = String::from("# episode uncertainty\n");
    for r in records {
        let _ = writeln!(out, "{} {}", r.episode, r.uncertainty);
    }
    out
}

/// `episode τ−cost running_min` lines; records without an audit are skipped.
pub fn margin_curve(records: &[EpisodeRecord], tau: f64) -> String {
    let mut out = String::from("# episode margin running_min\n");
    let mut low = f64::INFINITY;
    for r in records {
        if let Some(c) = r.exact_cost {
            let m = tau - c;
            low = low.min(m);
            let _ = writeln!(out, "{} {} {}", r.episode, m, low);
        }
    }
    out
}

fn seed_csvs(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| SweetError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| SweetError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(seed) = name
            .strip_prefix("seed-")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((seed, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Reads a run directory, writes plot data next to it and returns the table.
pub fn report_dir(dir: &Path) -> Result<String> {
    let summary_path = dir.join("summary.json");
    if !summary_path.exists() {
        return Err(SweetError::Precondition(format!(
            "{} holds no run results (summary.json missing)",
            dir.display()
        )));
    }
    let summary: ReportSummary = read_file(&summary_path)?;
    let config = ExperimentConfig::load(dir.join("config.toml"))?;
    for (seed, path) in seed_csvs(dir)? {
        let records = read_csv(&path)?;
        let p = dir.join(format!("plot-uncertainty-seed-{seed}.dat"));
        fs::write(&p, uncertainty_curve(&records)).map_err(|e| SweetError::io(&p, e))?;
        let p = dir.join(format!("plot-margin-seed-{seed}.dat"));
        fs::write(&p, margin_curve(&records, config.algorithm.tau)).map_err(|e| SweetError::io(&p, e))?;
    }
    Ok(summary_table(&summary))
}
