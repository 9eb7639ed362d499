//! Structured text format for models, utilities, policies and result bundles.
//!
//! Every document is a single JSON object with a `kind` tag, a `version`
//! number and an explicit `states`/`actions`/`horizon` header; tables are
//! nested arrays indexed `[h][s][a]` (kernels `[h][s][a][s']`). Reals are
//! written in shortest round-trip decimal form and parsed with correct
//! rounding, so a save/load cycle reproduces every `f64` bit for bit.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::mdp::{MarkovPolicy, MixturePolicy, StepTable, TabularMDP, Utility};

pub const FORMAT_VERSION: u32 = 1;

/// Serializes any format document to compact text.
pub fn to_text<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| SweetError::Format(e.to_string()))
}

/// Parses a format document; `origin` names the source in error messages.
pub fn from_text<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| SweetError::Parse {
        path: origin.to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

pub fn write_file<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = to_text(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| SweetError::io(path, e))
}

pub fn read_file<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SweetError::io(path, e))?;
    from_text(&text, &path.display().to_string())
}

pub(crate) fn check_header(kind: &str, expected: &str, version: u32) -> Result<()> {
    if kind != expected {
        return Err(SweetError::Format(format!("expected kind `{expected}`, found `{kind}`")));
    }
    if version != FORMAT_VERSION {
        return Err(SweetError::Format(format!(
            "unsupported {expected} version {version} (this build reads version {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

fn check_dims(table: &StepTable, horizon: usize, states: usize, actions: usize, what: &str) -> Result<()> {
    // an all-empty nested array cannot carry its own shape
    if table.as_slice().is_empty() && horizon * states * actions == 0 {
        return Ok(());
    }
    table.check_shape(horizon, states, actions, what)
}

#[derive(Serialize, Deserialize)]
pub struct TableWire {
    horizon: usize,
    states: usize,
    actions: usize,
    values: Vec<Vec<Vec<f64>>>,
}

impl From<StepTable> for TableWire {
    fn from(t: StepTable) -> Self {
        TableWire {
            horizon: t.horizon(),
            states: t.states(),
            actions: t.actions(),
            values: t.to_nested(),
        }
    }
}

impl TryFrom<TableWire> for StepTable {
    type Error = SweetError;

    fn try_from(w: TableWire) -> Result<Self> {
        let t = StepTable::from_nested(&w.values)?;
        check_dims(&t, w.horizon, w.states, w.actions, "table")?;
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
pub struct MdpWire {
    kind: String,
    version: u32,
    states: usize,
    actions: usize,
    horizon: usize,
    initial_state: usize,
    kernel: Vec<Vec<Vec<Vec<f64>>>>,
}

impl From<TabularMDP> for MdpWire {
    fn from(m: TabularMDP) -> Self {
        let kernel = (0..m.horizon())
            .map(|h| {
                (0..m.states())
                    .map(|s| (0..m.actions()).map(|a| m.next_dist(h, s, a).to_vec()).collect())
                    .collect()
            })
            .collect();
        MdpWire {
            kind: "tabular_mdp".into(),
            version: FORMAT_VERSION,
            states: m.states(),
            actions: m.actions(),
            horizon: m.horizon(),
            initial_state: m.initial_state(),
            kernel,
        }
    }
}

impl TryFrom<MdpWire> for TabularMDP {
    type Error = SweetError;

    fn try_from(w: MdpWire) -> Result<Self> {
        check_header(&w.kind, "tabular_mdp", w.version)?;
        let mut flat = Vec::with_capacity(w.horizon * w.states * w.actions * w.states);
        if w.kernel.len() != w.horizon {
            return Err(SweetError::Shape(format!("kernel has {} steps, header says {}", w.kernel.len(), w.horizon)));
        }
        for (h, layer) in w.kernel.iter().enumerate() {
            if layer.len() != w.states {
                return Err(SweetError::Shape(format!("kernel step {h} has {} states", layer.len())));
            }
            for (s, by_action) in layer.iter().enumerate() {
                if by_action.len() != w.actions {
                    return Err(SweetError::Shape(format!("kernel ({h},{s}) has {} actions", by_action.len())));
                }
                for (a, row) in by_action.iter().enumerate() {
                    if row.len() != w.states {
                        return Err(SweetError::Shape(format!("kernel row ({h},{s},{a}) has {} entries", row.len())));
                    }
                    flat.extend_from_slice(row);
                }
            }
        }
        TabularMDP::new(w.states, w.actions, w.horizon, w.initial_state, flat)
    }
}

#[derive(Serialize, Deserialize)]
pub struct UtilityWire {
    kind: String,
    version: u32,
    states: usize,
    actions: usize,
    horizon: usize,
    normalized: bool,
    values: Vec<Vec<Vec<f64>>>,
}

impl From<Utility> for UtilityWire {
    fn from(u: Utility) -> Self {
        UtilityWire {
            kind: "utility".into(),
            version: FORMAT_VERSION,
            states: u.states(),
            actions: u.actions(),
            horizon: u.horizon(),
            normalized: u.is_normalized(),
            values: u.to_nested(),
        }
    }
}

impl TryFrom<UtilityWire> for Utility {
    type Error = SweetError;

    fn try_from(w: UtilityWire) -> Result<Self> {
        check_header(&w.kind, "utility", w.version)?;
        let table = StepTable::from_nested(&w.values)?;
        check_dims(&table, w.horizon, w.states, w.actions, "utility")?;
        // range check; the normalization flag is trusted as written
        let u = Utility::new(table)?;
        Ok(Utility::from_parts(u.into_table(), w.normalized))
    }
}

#[derive(Serialize, Deserialize)]
pub struct PolicyWire {
    kind: String,
    version: u32,
    states: usize,
    actions: usize,
    horizon: usize,
    probs: Vec<Vec<Vec<f64>>>,
}

impl From<MarkovPolicy> for PolicyWire {
    fn from(p: MarkovPolicy) -> Self {
        PolicyWire {
            kind: "markov_policy".into(),
            version: FORMAT_VERSION,
            states: p.states(),
            actions: p.actions(),
            horizon: p.horizon(),
            probs: p.table().to_nested(),
        }
    }
}

impl TryFrom<PolicyWire> for MarkovPolicy {
    type Error = SweetError;

    fn try_from(w: PolicyWire) -> Result<Self> {
        check_header(&w.kind, "markov_policy", w.version)?;
        let table = StepTable::from_nested(&w.probs)?;
        check_dims(&table, w.horizon, w.states, w.actions, "policy")?;
        MarkovPolicy::new(table)
    }
}

#[derive(Serialize, Deserialize)]
pub struct MixtureWire {
    kind: String,
    version: u32,
    weights: Vec<f64>,
    vertices: Vec<MarkovPolicy>,
}

impl From<MixturePolicy> for MixtureWire {
    fn from(m: MixturePolicy) -> Self {
        MixtureWire {
            kind: "mixture_policy".into(),
            version: FORMAT_VERSION,
            weights: m.weights().to_vec(),
            vertices: m.vertices().to_vec(),
        }
    }
}

impl TryFrom<MixtureWire> for MixturePolicy {
    type Error = SweetError;

    fn try_from(w: MixtureWire) -> Result<Self> {
        check_header(&w.kind, "mixture_policy", w.version)?;
        MixturePolicy::new(w.vertices, w.weights)
    }
}
