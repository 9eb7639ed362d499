//! Random instances satisfying the baseline assumption.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::harness::config::{InstanceSpec, Mode};
use crate::lowrank::{LowRankModel, ModelClass};
use crate::mdp::{
    max_trajectory_utility, min_cost_value, mixture_to_markov, policy_value, MarkovPolicy, MixturePolicy, StepTable,
    TabularMDP,
};
use crate::rng::random_simplex;

pub const MAX_ATTEMPTS: usize = 100;
/// Required total-variation gap between each decoy and the truth at some step.
pub const DECOY_SEPARATION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    /// `Δ(c, τ) = τ − min_π V_c(π)`.
    pub margin: f64,
    /// Lower bound handed to the learner; equal to `margin` here.
    pub margin_min: f64,
    pub min_cost: f64,
    pub baseline_cost: f64,
    /// Weight of the uniform policy in the baseline mixture.
    pub baseline_weight: f64,
    pub attempts: usize,
}

/// Ground truth of one experiment seed. Only the harness holds this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub mdp: TabularMDP,
    pub cost: StepTable,
    pub baseline: MarkovPolicy,
    pub meta: InstanceMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ModelClass>,
}

/// Kernel with independent uniform-simplex rows.
pub fn random_kernel<R: Rng + ?Sized>(states: usize, actions: usize, horizon: usize, rng: &mut R) -> Result<TabularMDP> {
    TabularMDP::from_fn(states, actions, horizon, 0, |_, _, _| random_simplex(states, rng))
}

/// Uniform entries rescaled so the best trajectory under `mdp` sums to 1.
pub fn random_utility<R: Rng + ?Sized>(mdp: &TabularMDP, rng: &mut R) -> Result<StepTable> {
    let (horizon, states, actions) = mdp.table_shape();
    let mut u = StepTable::from_fn(horizon, states, actions, |_, _, _| rng.random::<f64>());
    let mut max = max_trajectory_utility(mdp, &u)?;
    if max > 0.0 {
        u.scale(1.0 / max);
        max = max_trajectory_utility(mdp, &u)?;
    }
    // rounding can leave the rescaled maximum one ulp above 1
    while max > 1.0 {
        u.scale(1.0 - f64::EPSILON);
        max = max_trajectory_utility(mdp, &u)?;
    }
    Ok(u)
}

/// Factorized model: `φ_h(s,a)` and each column `μ_h(·)_k` on their simplices.
pub fn random_lowrank<R: Rng + ?Sized>(
    states: usize,
    actions: usize,
    horizon: usize,
    dim: usize,
    rng: &mut R,
) -> Result<LowRankModel> {
    let mut phi = Vec::with_capacity(horizon * states * actions * dim);
    for _ in 0..horizon * states * actions {
        phi.extend(random_simplex(dim, rng));
    }
    let mut mu = vec![0.0; horizon * states * dim];
    for h in 0..horizon {
        for k in 0..dim {
            for (next, p) in random_simplex(states, rng).into_iter().enumerate() {
                mu[(h * states + next) * dim + k] = p;
            }
        }
    }
    LowRankModel::new(states, actions, horizon, dim, phi, mu)
}

/// Largest per-step total-variation distance, maximized over `(s, a)`.
pub fn step_separation(a: &LowRankModel, b: &LowRankModel) -> f64 {
    let mut best: f64 = 0.0;
    for h in 0..a.horizon() {
        for s in 0..a.states() {
            for act in 0..a.actions() {
                let tv: f64 = a.row(h, s, act).iter().zip(b.row(h, s, act)).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
                best = best.max(tv);
            }
        }
    }
    best
}

/// Baseline `(1 − w)·π_min ⊕ w·uniform` with the largest `w` keeping
/// `V_c ≤ τ − κ`, reduced to its equivalent Markov policy. Values are linear
/// in `w`, so the weight is closed form; it is nudged down if rounding
/// leaves the result above the limit.
pub fn baseline_policy(mdp: &TabularMDP, cost: &StepTable, limit: f64) -> Result<Option<(MarkovPolicy, f64, f64)>> {
    let (horizon, states, actions) = mdp.table_shape();
    let (min_cost, cheapest) = min_cost_value(mdp, cost)?;
    if min_cost > limit {
        return Ok(None);
    }
    let uniform = MarkovPolicy::uniform(horizon, states, actions);
    let uniform_cost = policy_value(mdp, &uniform, cost)?;
    let mut w = if uniform_cost <= limit {
        1.0
    } else {
        ((limit - min_cost) / (uniform_cost - min_cost)).clamp(0.0, 1.0)
    };
    for _ in 0..200 {
        let policy = if w == 1.0 {
            uniform.clone()
        } else if w == 0.0 {
            cheapest.clone()
        } else {
            mixture_to_markov(mdp, &MixturePolicy::pair(cheapest.clone(), uniform.clone(), 1.0 - w)?)?
        };
        let value = policy_value(mdp, &policy, cost)?;
        if value <= limit {
            return Ok(Some((policy, w, value)));
        }
        w *= 1.0 - 1e-9;
        if w < 1e-12 {
            w = 0.0;
        }
    }
    Err(SweetError::Numeric("baseline weight search did not settle".into()))
}

/// Draws an instance; resamples until a baseline with `V_c ≤ τ − κ` exists.
pub fn gen_env<R: Rng + ?Sized>(spec: &InstanceSpec, mode: Mode, tau: f64, kappa: f64, rng: &mut R) -> Result<Instance> {
    let (states, actions, horizon) = (spec.states, spec.actions, spec.horizon);
    let limit = tau - kappa;
    let mut worst_min = f64::INFINITY;
    for attempt in 1..=MAX_ATTEMPTS {
        let (mdp, truth) = match mode {
            Mode::Tabular => (random_kernel(states, actions, horizon, rng)?, None),
            Mode::Lowrank => {
                let truth = random_lowrank(states, actions, horizon, spec.dim, rng)?;
                (truth.to_mdp(0)?, Some(truth))
            }
        };
        let cost = if spec.zero_cost {
            StepTable::zeros(horizon, states, actions)
        } else {
            random_utility(&mdp, rng)?
        };
        let Some((baseline, weight, baseline_cost)) = baseline_policy(&mdp, &cost, limit)? else {
            worst_min = worst_min.min(min_cost_value(&mdp, &cost)?.0);
            continue;
        };
        let (min_cost, _) = min_cost_value(&mdp, &cost)?;
        let class = match truth {
            Some(truth) => Some(model_class(truth, spec.class_size, rng)?),
            None => None,
        };
        return Ok(Instance {
            mdp,
            cost,
            baseline,
            meta: InstanceMeta {
                margin: tau - min_cost,
                margin_min: tau - min_cost,
                min_cost,
                baseline_cost,
                baseline_weight: weight,
                attempts: attempt,
            },
            class,
        });
    }
    Err(SweetError::Generation(format!(
        "no instance with min cost ≤ τ − κ = {limit} in {MAX_ATTEMPTS} attempts (smallest min cost seen {worst_min})"
    )))
}

/// Truth at a random position among `size − 1` separated decoys.
fn model_class<R: Rng + ?Sized>(truth: LowRankModel, size: usize, rng: &mut R) -> Result<ModelClass> {
    let mut candidates = Vec::with_capacity(size);
    while candidates.len() + 1 < size {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let decoy = random_lowrank(truth.states(), truth.actions(), truth.horizon(), truth.dim(), rng)?;
            if step_separation(&truth, &decoy) >= DECOY_SEPARATION {
                accepted = Some(decoy);
                break;
            }
        }
        candidates.push(accepted.ok_or_else(|| {
            SweetError::Generation(format!("no decoy with separation ≥ {DECOY_SEPARATION} in {MAX_ATTEMPTS} draws"))
        })?);
    }
    let index = rng.random_range(0..size);
    candidates.insert(index, truth);
    ModelClass::new(candidates, Some(index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn spec() -> InstanceSpec {
        InstanceSpec {
            states: 3,
            actions: 2,
            horizon: 3,
            dim: 2,
            class_size: 3,
            generator_seed: 0,
            zero_cost: false,
        }
    }

    #[test]
    fn zero_cost_gives_uniform_baseline() {
        let s = InstanceSpec { zero_cost: true, ..spec() };
        let inst = gen_env(&s, Mode::Tabular, 0.5, 0.1, &mut seeded(3)).unwrap();
        assert_eq!(inst.baseline, MarkovPolicy::uniform(3, 3, 2));
        assert_eq!(inst.meta.margin, 0.5);
    }

    #[test]
    fn tight_limit_gives_min_cost_baseline() {
        let mut rng = seeded(4);
        let mdp = random_kernel(3, 2, 3, &mut rng).unwrap();
        let cost = random_utility(&mdp, &mut rng).unwrap();
        assert!((max_trajectory_utility(&mdp, &cost).unwrap() - 1.0).abs() < 1e-12);
        let (min, cheapest) = min_cost_value(&mdp, &cost).unwrap();
        let (pi, w, v) = baseline_policy(&mdp, &cost, min).unwrap().unwrap();
        assert_eq!(w, 0.0);
        assert!(v <= min);
        assert!(pi.max_abs_diff(&cheapest) < 1e-12);
        assert!(baseline_policy(&mdp, &cost, min - 1e-3).unwrap().is_none());
    }

    #[test]
    fn lowrank_class_contains_truth() {
        let inst = gen_env(&spec(), Mode::Lowrank, 0.5, 0.1, &mut seeded(6)).unwrap();
        let class = inst.class.unwrap();
        let truth = &class.candidates[class.truth_index.unwrap()];
        assert!(truth.to_mdp(0).unwrap().max_kernel_diff(&inst.mdp) == 0.0);
        for (i, c) in class.candidates.iter().enumerate() {
            if Some(i) != class.truth_index {
                assert!(step_separation(truth, c) >= DECOY_SEPARATION);
            }
        }
    }
}
