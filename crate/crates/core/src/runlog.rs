//! Per-episode exploration records and their CSV form.
//!
//! The CSV starts with a `#schema=sweet-runlog-v1` comment line, then a header
//! row. Multi-valued cells (executed policy indices, per-step MLE choices and
//! covariance eigenvalues) are `;`-separated. Reals use shortest round-trip
//! formatting, so identical runs give identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::mdp::{MixturePolicy, StepTable, TabularMDP};
use crate::solver::{SafeSetMode, SolveStatus};
use crate::uncertainty::Uncertainty;

pub const SCHEMA: &str = "sweet-runlog-v1";

pub const COLUMNS: [&str; 12] = [
    "episode",
    "mode",
    "uncertainty",
    "baseline_load",
    "solver_status",
    "residual",
    "terminated",
    "policies",
    "exact_cost",
    "violation",
    "mle_index",
    "min_eig",
];

/// One exploration episode (tabular) or iteration (low-rank).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based episode / iteration counter `n`.
    pub episode: usize,
    pub mode: SafeSetMode,
    /// `U⁽ⁿ⁾(π⁽ⁿ⁾)`.
    pub uncertainty: f64,
    /// `V_{P̂,c}(π⁰) + U⁽ⁿ⁾(π⁰)`.
    pub baseline_load: f64,
    pub solver_status: SolveStatus,
    pub residual: f64,
    pub terminated: bool,
    /// Indices into [`RunLog::policies`] of the policies executed during this
    /// episode (one for tabular, `H` for low-rank).
    pub policies: Vec<usize>,
    /// Largest true constraint value among the executed policies; filled in by
    /// the auditor, never by the learner.
    pub exact_cost: Option<f64>,
    pub violation: Option<bool>,
    pub mle_index: Vec<usize>,
    pub min_eig: Vec<f64>,
}

impl EpisodeRecord {
    pub fn new(episode: usize, mode: SafeSetMode) -> Self {
        EpisodeRecord {
            episode,
            mode,
            uncertainty: f64::NAN,
            baseline_load: f64::NAN,
            solver_status: SolveStatus::BaselineOnly,
            residual: 0.0,
            terminated: false,
            policies: Vec::new(),
            exact_cost: None,
            violation: None,
            mle_index: Vec::new(),
            min_eig: Vec::new(),
        }
    }
}

/// Exploration log: records plus the distinct executed policies.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpisodeRecord>,
    pub policies: Vec<MixturePolicy>,
    /// Episode at which the termination test fired.
    pub n_epsilon: Option<usize>,
    /// Iteration bound from the theory, logged next to the practical cap.
    pub theoretical_n: f64,
    pub cap: usize,
}

impl RunLog {
    pub fn new(theoretical_n: f64, cap: usize) -> Self {
        RunLog {
            theoretical_n,
            cap,
            ..RunLog::default()
        }
    }

    /// Stores `policy` unless it equals the most recent entry; returns its index.
    pub fn push_policy(&mut self, policy: &MixturePolicy) -> usize {
        match self.policies.last() {
            Some(last) if last == policy => self.policies.len() - 1,
            _ => {
                self.policies.push(policy.clone());
                self.policies.len() - 1
            }
        }
    }

    pub fn terminated(&self) -> bool {
        self.n_epsilon.is_some()
    }

    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| r.violation == Some(true)).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        records_to_csv(&self.records)
    }
}

/// Result of an exploration run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Exploration {
    /// `P̂` at termination, or at the cap.
    pub model: TabularMDP,
    pub bonus: StepTable,
    pub uncertainty: Uncertainty,
    /// Last argmax policy `π⁽ⁿ⁾`.
    pub policy: MixturePolicy,
    pub log: RunLog,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

pub fn records_to_csv(records: &[EpisodeRecord]) -> Result<String> {
    let mut out = format!("#schema={SCHEMA}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let fail = |e: csv::Error| SweetError::Format(e.to_string());
        w.write_record(COLUMNS).map_err(fail)?;
        for r in records {
            w.write_record([
                r.episode.to_string(),
                r.mode.as_str().to_string(),
                r.uncertainty.to_string(),
                r.baseline_load.to_string(),
                r.solver_status.as_str().to_string(),
                r.residual.to_string(),
                u8::from(r.terminated).to_string(),
                join(&r.policies),
                r.exact_cost.map(|c| c.to_string()).unwrap_or_default(),
                r.violation.map(|v| u8::from(v).to_string()).unwrap_or_default(),
                join(&r.mle_index),
                join(&r.min_eig),
            ])
            .map_err(fail)?;
        }
        w.flush().map_err(|e| SweetError::Format(e.to_string()))?;
    }
    String::from_utf8(out).map_err(|e| SweetError::Format(e.to_string()))
}

pub fn write_csv(path: impl AsRef<Path>, records: &[EpisodeRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, records_to_csv(records)?).map_err(|e| SweetError::io(path, e))
}

/// Parses a run-log CSV; errors carry the file name and 1-based line.
pub fn parse_csv(text: &str, origin: &str) -> Result<Vec<EpisodeRecord>> {
    let err = |line: u64, message: String| SweetError::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.splitn(2, '\n');
    let first = lines.next().unwrap_or("");
    if first.trim_end() != format!("#schema={SCHEMA}") {
        return Err(err(1, format!("expected `#schema={SCHEMA}`, found `{first}`")));
    }
    let body = lines.next().unwrap_or("");
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let header = reader.headers().map_err(|e| err(2, e.to_string()))?;
    if header.iter().ne(COLUMNS) {
        return Err(err(2, "unexpected column header".into()));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 3;
        let row = row.map_err(|e| err(line, e.to_string()))?;
        let field = |k: usize| row.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k)
                .parse::<f64>()
                .map_err(|_| err(line, format!("column {}: bad number `{}`", COLUMNS[k], field(k))))
        };
        let list = |k: usize| -> Result<Vec<f64>> {
            if field(k).is_empty() {
                return Ok(Vec::new());
            }
            field(k)
                .split(';')
                .map(|x| x.parse::<f64>().map_err(|_| err(line, format!("column {}: bad entry `{x}`", COLUMNS[k]))))
                .collect()
        };
        let flag = |k: usize| -> Result<Option<bool>> {
            match field(k) {
                "" => Ok(None),
                "0" => Ok(Some(false)),
                "1" => Ok(Some(true)),
                other => Err(err(line, format!("column {}: bad flag `{other}`", COLUMNS[k]))),
            }
        };
        let mode = match field(1) {
            "baseline_only" => SafeSetMode::BaselineOnly,
            "relaxed" => SafeSetMode::Relaxed,
            other => return Err(err(line, format!("unknown mode `{other}`"))),
        };
        let solver_status = match field(4) {
            "optimal" => SolveStatus::Optimal,
            "baseline_only" => SolveStatus::BaselineOnly,
            "max_iterations" => SolveStatus::MaxIterations,
            "infeasible" => SolveStatus::Infeasible,
            other => return Err(err(line, format!("unknown solver status `{other}`"))),
        };
        let indices = |k: usize| -> Result<Vec<usize>> { Ok(list(k)?.into_iter().map(|x| x as usize).collect()) };
        out.push(EpisodeRecord {
            episode: num(0)? as usize,
            mode,
            uncertainty: num(2)?,
            baseline_load: num(3)?,
            solver_status,
            residual: num(5)?,
            terminated: flag(6)?.ok_or_else(|| err(line, "missing terminated flag".into()))?,
            policies: indices(7)?,
            exact_cost: if field(8).is_empty() { None } else { Some(num(8)?) },
            violation: flag(9)?,
            mle_index: indices(10)?,
            min_eig: list(11)?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SweetError::io(path, e))?;
    parse_csv(&text, &path.display().to_string())
}
