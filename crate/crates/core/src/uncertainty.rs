//! Policy functionals used as objectives and constraint terms: plain linear
//! values and the truncated-value uncertainty shapes of the two exploration
//! algorithms.
//!
//! Besides its value, every functional exposes a linearization in occupancy
//! space: a table `G` with `Σ G·(ρ' − ρ)` approximating the change when the
//! occupancy moves from `ρ` toward `ρ'`. For linear values `G` is the utility
//! itself.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::mdp::{evaluate_value, MarkovPolicy, OccupancyMeasure, StepTable, TabularMDP};
use crate::truncated::{truncated_evaluate, truncated_subgradient};

/// Floor applied to `V̄` before differentiating `sqrt(V̄)`.
const SQRT_FLOOR: f64 = 1e-12;

pub trait PolicyFunctional: Sync {
    fn value(&self, model: &TabularMDP, policy: &MarkovPolicy) -> Result<f64>;

    /// Value together with an occupancy-space linearization at `policy`,
    /// whose occupancy is `occ`.
    fn linearize(&self, model: &TabularMDP, policy: &MarkovPolicy, occ: &OccupancyMeasure) -> Result<(f64, StepTable)>;

    /// True when the functional is identically zero.
    fn is_zero(&self) -> bool {
        false
    }

    /// Table `u` when the functional equals `V_u` at `α = 1`.
    fn as_linear(&self) -> Option<&StepTable> {
        None
    }
}

/// `π ↦ V_{P,u}^π` at `α = 1`, unclipped.
#[derive(Clone, Debug)]
pub struct LinearValue<'a> {
    pub utility: &'a StepTable,
}

impl PolicyFunctional for LinearValue<'_> {
    fn value(&self, model: &TabularMDP, policy: &MarkovPolicy) -> Result<f64> {
        Ok(evaluate_value(model, policy, self.utility, 1.0)?.value())
    }

    fn linearize(&self, _model: &TabularMDP, _policy: &MarkovPolicy, occ: &OccupancyMeasure) -> Result<(f64, StepTable)> {
        Ok((occ.dot(self.utility), self.utility.clone()))
    }

    fn is_zero(&self) -> bool {
        self.utility.is_zero()
    }

    fn as_linear(&self) -> Option<&StepTable> {
        Some(self.utility)
    }
}

/// Occupancy-space linearization of `V̄_1(s_1)`.
///
/// On an unclipped state `G_h(s,a) = k_h(s)·(Q̄_h(s,a) − Σ_b π(b|s) Q̄_h(s,b))`,
/// where `k_h(s)` is effective reach divided by occupancy; clipped states get
/// zero. States the current policy never visits use `k_h(s) = α^h`, the
/// value they would have with no clipping upstream.
pub fn truncated_linearization(
    model: &TabularMDP,
    policy: &MarkovPolicy,
    occ: &OccupancyMeasure,
    utility: &StepTable,
    alpha: f64,
) -> Result<(f64, StepTable)> {
    let sg = truncated_subgradient(model, policy, utility, alpha)?;
    let (horizon, states, actions) = model.table_shape();
    let mut g = StepTable::zeros(horizon, states, actions);
    for h in 0..horizon {
        for s in 0..states {
            if sg.eval.clipped(h, s) {
                continue;
            }
            let marginal = occ.state_marginal(h, s);
            let k = if marginal > 0.0 {
                sg.reach[h][s] / marginal
            } else {
                alpha.powi(h as i32)
            };
            if k == 0.0 {
                continue;
            }
            let mean: f64 = (0..actions).map(|a| policy.prob(h, s, a) * sg.eval.qbar(h, s, a)).sum();
            for a in 0..actions {
                g.set(h, s, a, k * (sg.eval.qbar(h, s, a) - mean));
            }
        }
    }
    Ok((sg.eval.value(), g))
}

/// Shape of an uncertainty functional over an estimated model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum UncertaintyForm {
    /// `U ≡ 0`.
    Zero,
    /// `U(π) = scale · sqrt(V̄(P̂, π, b̂, α))`.
    Sqrt { scale: f64 },
    /// `U(π) = V̄(P̂, π, b̂, α) + offset`.
    Shifted { offset: f64 },
}

/// Uncertainty functional `U(P̂, ·)`: a form applied to the truncated value
/// of a bonus table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub form: UncertaintyForm,
    pub bonus: StepTable,
    pub alpha: f64,
}

impl Uncertainty {
    pub fn zero(horizon: usize, states: usize, actions: usize) -> Self {
        Uncertainty {
            form: UncertaintyForm::Zero,
            bonus: StepTable::zeros(horizon, states, actions),
            alpha: 1.0,
        }
    }

    pub fn sqrt(scale: f64, bonus: StepTable, alpha: f64) -> Result<Self> {
        if !(scale >= 0.0) {
            return Err(SweetError::Parameter(format!("uncertainty scale {scale} is negative")));
        }
        Ok(Uncertainty {
            form: UncertaintyForm::Sqrt { scale },
            bonus,
            alpha,
        })
    }

    pub fn shifted(offset: f64, bonus: StepTable, alpha: f64) -> Result<Self> {
        if !(offset >= 0.0) {
            return Err(SweetError::Parameter(format!("uncertainty offset {offset} is negative")));
        }
        Ok(Uncertainty {
            form: UncertaintyForm::Shifted { offset },
            bonus,
            alpha,
        })
    }
}

impl PolicyFunctional for Uncertainty {
    fn value(&self, model: &TabularMDP, policy: &MarkovPolicy) -> Result<f64> {
        match self.form {
            UncertaintyForm::Zero => Ok(0.0),
            UncertaintyForm::Sqrt { scale } => {
                Ok(scale * truncated_evaluate(model, policy, &self.bonus, self.alpha)?.value().sqrt())
            }
            UncertaintyForm::Shifted { offset } => {
                Ok(truncated_evaluate(model, policy, &self.bonus, self.alpha)?.value() + offset)
            }
        }
    }

    fn linearize(&self, model: &TabularMDP, policy: &MarkovPolicy, occ: &OccupancyMeasure) -> Result<(f64, StepTable)> {
        match self.form {
            UncertaintyForm::Zero => {
                let (h, s, a) = model.table_shape();
                Ok((0.0, StepTable::zeros(h, s, a)))
            }
            UncertaintyForm::Sqrt { scale } => {
                let (v, mut g) = truncated_linearization(model, policy, occ, &self.bonus, self.alpha)?;
                g.scale(scale / (2.0 * v.max(SQRT_FLOOR).sqrt()));
                Ok((scale * v.sqrt(), g))
            }
            UncertaintyForm::Shifted { offset } => {
                let (v, g) = truncated_linearization(model, policy, occ, &self.bonus, self.alpha)?;
                Ok((v + offset, g))
            }
        }
    }

    fn is_zero(&self) -> bool {
        match self.form {
            UncertaintyForm::Zero => true,
            UncertaintyForm::Sqrt { scale } => scale == 0.0 || self.bonus.is_zero(),
            UncertaintyForm::Shifted { offset } => offset == 0.0 && self.bonus.is_zero(),
        }
    }
}
