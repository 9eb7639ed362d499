//! Instance generators shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use sweet_core::mdp::{max_trajectory_utility, MarkovPolicy, StepTable, TabularMDP, Utility};
use sweet_core::rng::{random_simplex, SweetRng};
use sweet_core::uncertainty::Uncertainty;

pub fn random_model(rng: &mut SweetRng, states: usize, actions: usize, horizon: usize) -> TabularMDP {
    TabularMDP::from_fn(states, actions, horizon, 0, |_, _, _| random_simplex(states, rng)).unwrap()
}

pub fn random_table(rng: &mut SweetRng, horizon: usize, states: usize, actions: usize, max: f64) -> StepTable {
    StepTable::from_fn(horizon, states, actions, |_, _, _| rng.random::<f64>() * max)
}

/// Uniform entries rescaled so that no trajectory of `model` exceeds 1.
pub fn normalized_utility(rng: &mut SweetRng, model: &TabularMDP) -> Utility {
    let (h, s, a) = model.table_shape();
    let mut t = random_table(rng, h, s, a, 1.0);
    let m = max_trajectory_utility(model, &t).unwrap();
    if m > 0.0 {
        t.scale(1.0 / m);
        for x in t.as_mut_slice() {
            *x = x.min(1.0);
        }
    }
    match Utility::normalized(t.clone(), model) {
        Ok(u) => u,
        Err(_) => {
            t.scale(1.0 - 1e-12);
            Utility::normalized(t, model).unwrap()
        }
    }
}

/// Small constrained instance: estimated model, cost, square-root uncertainty
/// over a random bonus, and a uniform baseline.
pub struct SolverInstance {
    pub model: TabularMDP,
    pub cost: Utility,
    pub reward: Utility,
    pub uncertainty: Uncertainty,
    pub baseline: MarkovPolicy,
}

pub fn solver_instance(rng: &mut SweetRng, states: usize, actions: usize, horizon: usize) -> SolverInstance {
    let model = random_model(rng, states, actions, horizon);
    let cost = normalized_utility(rng, &model);
    let reward = normalized_utility(rng, &model);
    let bonus = random_table(rng, horizon, states, actions, 0.4);
    let uncertainty = Uncertainty::sqrt(0.5, bonus, 1.0 + 1.0 / horizon as f64).unwrap();
    SolverInstance {
        model,
        cost,
        reward,
        uncertainty,
        baseline: MarkovPolicy::uniform(horizon, states, actions),
    }
}

/// Reference evaluators written against raw probabilities only, sharing no
/// code with the library's recursions.
pub mod reference {
    use sweet_core::mdp::{MarkovPolicy, StepTable, TabularMDP};

    /// Every length-`H` state/action path with its probability.
    pub fn paths(model: &TabularMDP, policy: &MarkovPolicy) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
        let mut out = vec![(vec![model.initial_state()], Vec::new(), 1.0)];
        for h in 0..model.horizon() {
            let mut grown = Vec::new();
            for (states, actions, p) in out {
                let s = *states.last().unwrap();
                for a in 0..model.actions() {
                    let pa = policy.prob(h, s, a);
                    for next in 0..model.states() {
                        let q = p * pa * model.next_dist(h, s, a)[next];
                        if q > 0.0 {
                            let mut st = states.clone();
                            st.push(next);
                            let mut ac = actions.clone();
                            ac.push(a);
                            grown.push((st, ac, q));
                        }
                    }
                }
            }
            out = grown;
        }
        out
    }

    pub fn value_by_paths(model: &TabularMDP, policy: &MarkovPolicy, u: &StepTable) -> f64 {
        paths(model, policy)
            .iter()
            .map(|(s, a, p)| p * (0..a.len()).map(|h| u.get(h, s[h], a[h])).sum::<f64>())
            .sum()
    }

    /// Forward visit probabilities `[h][s][a]`.
    pub fn occupancy(model: &TabularMDP, policy: &MarkovPolicy) -> Vec<Vec<Vec<f64>>> {
        let (horizon, states, actions) = (model.horizon(), model.states(), model.actions());
        let mut mass = vec![0.0; states];
        mass[model.initial_state()] = 1.0;
        let mut out = Vec::new();
        for h in 0..horizon {
            let layer: Vec<Vec<f64>> = (0..states)
                .map(|s| (0..actions).map(|a| mass[s] * policy.prob(h, s, a)).collect())
                .collect();
            let mut next = vec![0.0; states];
            for s in 0..states {
                for a in 0..actions {
                    for (n, p) in model.next_dist(h, s, a).iter().enumerate() {
                        next[n] += layer[s][a] * p;
                    }
                }
            }
            out.push(layer);
            mass = next;
        }
        out
    }

    /// Clipped recursion over raw (possibly unnormalized) action weights
    /// `w[h][s][a]`, used for free-coordinate finite differences.
    pub fn clipped_value(model: &TabularMDP, w: &[Vec<Vec<f64>>], u: &StepTable, alpha: f64) -> f64 {
        let mut v = vec![0.0; model.states()];
        for h in (0..model.horizon()).rev() {
            v = (0..model.states())
                .map(|s| {
                    let e: f64 = (0..model.actions())
                        .map(|a| {
                            let ev: f64 = model.next_dist(h, s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                            w[h][s][a] * (u.get(h, s, a) + alpha * ev)
                        })
                        .sum();
                    e.min(1.0)
                })
                .collect();
        }
        v[model.initial_state()]
    }

    /// All deterministic policies of a small model.
    pub fn deterministic_policies(horizon: usize, states: usize, actions: usize) -> Vec<MarkovPolicy> {
        let cells = horizon * states;
        let total = actions.pow(cells as u32);
        (0..total)
            .map(|mut code| {
                let choice: Vec<usize> = (0..cells)
                    .map(|_| {
                        let c = code % actions;
                        code /= actions;
                        c
                    })
                    .collect();
                MarkovPolicy::deterministic(horizon, states, actions, &choice).unwrap()
            })
            .collect()
    }
}
