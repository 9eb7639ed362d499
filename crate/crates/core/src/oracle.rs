//! Ground-truth solvers kept independent of [`crate::solver`]: an exact
//! single-constraint CMDP optimum by Lagrangian bisection, and a sampling
//! plus local-search lower bound for constrained problems with concave parts.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::mdp::{min_cost_value, occupancy, MarkovPolicy, MixturePolicy, StepTable, TabularMDP};
use crate::rng::{random_policy, seeded};
use crate::solver::dp_best_response;
use crate::uncertainty::PolicyFunctional;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStatus {
    Optimal,
    /// Lower bound from sampling and local search.
    LowerBound,
    Infeasible,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub lambda: f64,
    pub duality_gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub constraint_value: f64,
    pub policy: MixturePolicy,
    pub status: OracleStatus,
    pub certificate: Option<Certificate>,
    /// Number of sampled starting policies for sampling-based results.
    pub sampling_budget: Option<usize>,
}

fn values(model: &TabularMDP, policy: &MarkovPolicy, reward: &StepTable, cost: &StepTable) -> Result<(f64, f64)> {
    let occ = occupancy(model, policy)?;
    Ok((occ.dot(reward), occ.dot(cost)))
}

fn lagrangian_policy(model: &TabularMDP, reward: &StepTable, cost: &StepTable, lambda: f64) -> Result<(MarkovPolicy, f64)> {
    let mut shaped = reward.clone();
    for (x, c) in shaped.as_mut_slice().iter_mut().zip(cost.as_slice()) {
        *x -= lambda * c;
    }
    dp_best_response(model, &shaped, 1.0)
}

/// Exact optimum of `max V_r s.t. V_c ≤ τ` under `model`.
pub fn cmdp_optimal(model: &TabularMDP, reward: &StepTable, cost: &StepTable, tau: f64) -> Result<OracleResult> {
    model.check_table(reward, "reward")?;
    model.check_table(cost, "cost")?;
    let (min_cost, cheapest) = min_cost_value(model, cost)?;
    if min_cost > tau {
        let (r, c) = values(model, &cheapest, reward, cost)?;
        return Ok(OracleResult {
            value: r,
            constraint_value: c,
            policy: MixturePolicy::single(cheapest),
            status: OracleStatus::Infeasible,
            certificate: None,
            sampling_budget: None,
        });
    }
    let (free, free_value) = lagrangian_policy(model, reward, cost, 0.0)?;
    let (free_r, free_c) = values(model, &free, reward, cost)?;
    if free_c <= tau {
        return Ok(OracleResult {
            value: free_r,
            constraint_value: free_c,
            policy: MixturePolicy::single(free),
            status: OracleStatus::Optimal,
            certificate: Some(Certificate {
                lambda: 0.0,
                duality_gap: free_value - free_r,
            }),
            sampling_budget: None,
        });
    }
    // bracket: cost above τ at λ_lo, at most τ at λ_hi
    let mut lo = (0.0, free, free_r, free_c);
    let mut lambda_hi = 1.0;
    let mut hi = loop {
        let (pi, _) = lagrangian_policy(model, reward, cost, lambda_hi)?;
        let (r, c) = values(model, &pi, reward, cost)?;
        if c <= tau {
            break (lambda_hi, pi, r, c);
        }
        lo = (lambda_hi, pi, r, c);
        if lambda_hi > 2f64.powi(60) {
            return Err(SweetError::Numeric(format!(
                "no multiplier up to {lambda_hi} meets the constraint; minimum cost {min_cost} sits at τ = {tau}"
            )));
        }
        lambda_hi *= 2.0;
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo.0 + hi.0);
        if mid <= lo.0 || mid >= hi.0 {
            break;
        }
        let (pi, _) = lagrangian_policy(model, reward, cost, mid)?;
        let (r, c) = values(model, &pi, reward, cost)?;
        if c <= tau {
            hi = (mid, pi, r, c);
        } else {
            lo = (mid, pi, r, c);
        }
    }
    let (_, pi_lo, r_lo, c_lo) = lo;
    let (lambda, pi_hi, r_hi, c_hi) = hi;
    // weight on the feasible side so the mixture meets τ with equality
    let w = ((c_lo - tau) / (c_lo - c_hi)).clamp(0.0, 1.0);
    let value = w * r_hi + (1.0 - w) * r_lo;
    let constraint_value = w * c_hi + (1.0 - w) * c_lo;
    let (_, dual_inner) = lagrangian_policy(model, reward, cost, lambda)?;
    let dual = dual_inner + lambda * tau;
    Ok(OracleResult {
        value,
        constraint_value,
        policy: MixturePolicy::pair(pi_hi, pi_lo, w)?,
        status: OracleStatus::Optimal,
        certificate: Some(Certificate {
            lambda,
            duality_gap: (dual - value).max(0.0),
        }),
        sampling_budget: None,
    })
}

/// Row-wise blend `(1 − t)·a + t·b` of two Markov policies.
fn blend(a: &MarkovPolicy, b: &MarkovPolicy, t: f64) -> MarkovPolicy {
    let (h, s, n) = a.table().shape();
    let table = StepTable::from_fn(h, s, n, |h, s, x| (1.0 - t) * a.prob(h, s, x) + t * b.prob(h, s, x));
    MarkovPolicy::from_table_unchecked(table)
}

struct Scored {
    policy: MarkovPolicy,
    objective: f64,
    constraint: f64,
}

/// Starting points kept for local refinement.
const REFINED_STARTS: usize = 64;
const ASCENT_SWEEPS: usize = 200;

/// Best feasible value found over random stochastic policies (plus every
/// deterministic policy when there are at most 4096), the most promising of
/// which are refined by projected coordinate ascent with feasibility repair.
/// The result is a lower bound on the constrained optimum.
pub fn brute_force_constrained(
    model: &TabularMDP,
    objective: &dyn PolicyFunctional,
    constraint: &dyn PolicyFunctional,
    budget: f64,
    sampling_budget: usize,
    seed: u64,
) -> Result<OracleResult> {
    let (horizon, states, actions) = model.table_shape();
    let score = |pi: MarkovPolicy| -> Result<Scored> {
        Ok(Scored {
            objective: objective.value(model, &pi)?,
            constraint: constraint.value(model, &pi)?,
            policy: pi,
        })
    };
    let mut rng = seeded(seed);
    let mut pool = Vec::new();
    let cells = horizon * states;
    if (actions as f64).powi(cells as i32) <= 4096.0 {
        let mut choice = vec![0usize; cells];
        loop {
            pool.push(score(MarkovPolicy::deterministic(horizon, states, actions, &choice)?)?);
            let mut i = 0;
            while i < cells {
                choice[i] += 1;
                if choice[i] < actions {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
            if i == cells {
                break;
            }
        }
    }
    for _ in 0..sampling_budget {
        pool.push(score(random_policy(horizon, states, actions, &mut rng))?);
    }
    let anchor_index = pool
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.constraint.total_cmp(&b.1.constraint))
        .map(|(i, _)| i)
        .ok_or_else(|| SweetError::Parameter("empty search pool".into()))?;
    if pool[anchor_index].constraint > budget {
        let best = pool.swap_remove(anchor_index);
        return Ok(OracleResult {
            value: best.objective,
            constraint_value: best.constraint,
            policy: MixturePolicy::single(best.policy),
            status: OracleStatus::Infeasible,
            certificate: None,
            sampling_budget: Some(sampling_budget),
        });
    }
    let anchor = pool[anchor_index].policy.clone();
    let penalized = |s: &Scored| s.objective - 10.0 * (s.constraint - budget).max(0.0);
    pool.sort_by(|a, b| penalized(b).total_cmp(&penalized(a)));
    pool.truncate(REFINED_STARTS);

    // pull an infeasible policy toward the anchor until it is feasible
    let repair = |pi: MarkovPolicy| -> Result<Scored> {
        let first = score(pi.clone())?;
        if first.constraint <= budget {
            return Ok(first);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if constraint.value(model, &blend(&pi, &anchor, mid))? <= budget {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        score(blend(&pi, &anchor, hi))
    };

    let mut best: Option<Scored> = None;
    for start in pool {
        let mut cur = repair(start.policy)?;
        let mut eta = 0.5;
        for _ in 0..ASCENT_SWEEPS {
            let mut improved = false;
            for h in 0..horizon {
                for s in 0..states {
                    for a in 0..actions {
                        let mut table = cur.policy.table().clone();
                        for (x, p) in table.row_mut(h, s).iter_mut().enumerate() {
                            *p = (1.0 - eta) * *p + if x == a { eta } else { 0.0 };
                        }
                        let cand = repair(MarkovPolicy::from_table_unchecked(table))?;
                        if cand.constraint <= budget && cand.objective > cur.objective + 1e-15 {
                            cur = cand;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                eta *= 0.5;
                if eta < 1e-9 {
                    break;
                }
            }
        }
        if best.as_ref().is_none_or(|b| cur.objective > b.objective) {
            best = Some(cur);
        }
    }
    let best = best.expect("anchor start is always feasible");
    Ok(OracleResult {
        value: best.objective,
        constraint_value: best.constraint,
        policy: MixturePolicy::single(best.policy),
        status: OracleStatus::LowerBound,
        certificate: None,
        sampling_budget: Some(sampling_budget),
    })
}
