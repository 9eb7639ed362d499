//! Clipped value recursion `Q̄ = u + α P V̄_{h+1}`, `V̄ = min{1, E_π Q̄}` and a
//! supergradient of `V̄_1(s_1)` with respect to the policy entries.
//!
//! Clipping acts on state values only, never on action values. A state whose
//! pre-clip expectation reaches `1 − 1e-12` counts as clipped and passes no
//! sensitivity upstream.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::mdp::{dot, MarkovPolicy, StepTable, TabularMDP};

/// Pre-clip expectations at or above this level are treated as clipped.
pub const CLIP_LEVEL: f64 = 1.0 - 1e-12;

/// Tables produced by [`truncated_evaluate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedEval {
    /// `(H + 1) × S`, terminal layer zero.
    vbar: Vec<Vec<f64>>,
    qbar: StepTable,
    /// `H × S`.
    clip_mask: Vec<Vec<bool>>,
    alpha: f64,
    initial_state: usize,
}

impl TruncatedEval {
    #[inline]
    pub fn vbar(&self, h: usize, s: usize) -> f64 {
        self.vbar[h][s]
    }

    #[inline]
    pub fn qbar(&self, h: usize, s: usize, a: usize) -> f64 {
        self.qbar.get(h, s, a)
    }

    pub fn qbar_table(&self) -> &StepTable {
        &self.qbar
    }

    #[inline]
    pub fn clipped(&self, h: usize, s: usize) -> bool {
        self.clip_mask[h][s]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `V̄_1(s_1)`.
    pub fn value(&self) -> f64 {
        self.vbar[0][self.initial_state]
    }
}

fn check_inputs(model: &TabularMDP, policy: &MarkovPolicy, utility: &StepTable, alpha: f64) -> Result<()> {
    model.check_policy(policy)?;
    model.check_table(utility, "utility")?;
    if let Some(x) = utility.as_slice().iter().find(|&&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(SweetError::Parameter(format!("utility entry {x} is negative or not finite")));
    }
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(SweetError::Parameter(format!("alpha must be a finite real ≥ 1, got {alpha}")));
    }
    Ok(())
}

/// Backward clipped recursion over `model` for a nonnegative (not necessarily
/// normalized) utility.
pub fn truncated_evaluate(
    model: &TabularMDP,
    policy: &MarkovPolicy,
    utility: &StepTable,
    alpha: f64,
) -> Result<TruncatedEval> {
    check_inputs(model, policy, utility, alpha)?;
    let (horizon, states, actions) = model.table_shape();
    let mut vbar = vec![vec![0.0; states]; horizon + 1];
    let mut qbar = StepTable::zeros(horizon, states, actions);
    let mut clip_mask = vec![vec![false; states]; horizon];
    for h in (0..horizon).rev() {
        let (head, tail) = vbar.split_at_mut(h + 1);
        let next = &tail[0];
        for s in 0..states {
            let mut expect = 0.0;
            for a in 0..actions {
                let q = utility.get(h, s, a) + alpha * dot(model.next_dist(h, s, a), next);
                qbar.set(h, s, a, q);
                expect += policy.prob(h, s, a) * q;
            }
            if expect >= CLIP_LEVEL {
                clip_mask[h][s] = true;
                head[h][s] = 1.0;
            } else {
                head[h][s] = expect;
            }
        }
    }
    Ok(TruncatedEval {
        vbar,
        qbar,
        clip_mask,
        alpha,
        initial_state: model.initial_state(),
    })
}

/// Supergradient of `V̄_1(s_1)` with respect to `π_h(a|s)`, treating each
/// policy entry as a free coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySubgradient {
    pub g: StepTable,
    /// Effective reach `m_h(s)`: probability mass arriving at `(h, s)` through
    /// unclipped states, weighted by `α^h`.
    pub reach: Vec<Vec<f64>>,
    pub eval: TruncatedEval,
}

/// Forward pass of effective reach combined with the backward `Q̄` table:
/// `g[h][s][a] = m_h(s)·Q̄_h(s,a)` on unclipped states, zero elsewhere.
pub fn truncated_subgradient(
    model: &TabularMDP,
    policy: &MarkovPolicy,
    utility: &StepTable,
    alpha: f64,
) -> Result<PolicySubgradient> {
    let eval = truncated_evaluate(model, policy, utility, alpha)?;
    let (horizon, states, actions) = model.table_shape();
    let mut g = StepTable::zeros(horizon, states, actions);
    let mut reach = vec![vec![0.0; states]; horizon];
    reach[0][model.initial_state()] = 1.0;
    for h in 0..horizon {
        for s in 0..states {
            let m = reach[h][s];
            if m == 0.0 || eval.clipped(h, s) {
                continue;
            }
            for a in 0..actions {
                g.set(h, s, a, m * eval.qbar(h, s, a));
                let flow = m * policy.prob(h, s, a) * alpha;
                if flow != 0.0 && h + 1 < horizon {
                    for (dst, p) in reach[h + 1].iter_mut().zip(model.next_dist(h, s, a)) {
                        *dst += flow * p;
                    }
                }
            }
        }
    }
    Ok(PolicySubgradient { g, reach, eval })
}
