//! Finite-horizon tabular MDPs, Markov and mixture policies, exact evaluation,
//! occupancy measures and trajectory sampling.
//!
//! Steps are zero-based throughout the crate: a horizon-`H` episode visits
//! steps `0..H` and ends in the virtual terminal state at step `H`, whose
//! value is zero.

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};

pub(crate) const ROW_TOL: f64 = 1e-12;

/// Dense table of reals indexed by `(step, state, action)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "crate::format::TableWire", into = "crate::format::TableWire")]
pub struct StepTable {
    horizon: usize,
    states: usize,
    actions: usize,
    data: Vec<f64>,
}

impl StepTable {
    pub fn zeros(horizon: usize, states: usize, actions: usize) -> Self {
        StepTable {
            horizon,
            states,
            actions,
            data: vec![0.0; horizon * states * actions],
        }
    }

    pub fn from_fn(
        horizon: usize,
        states: usize,
        actions: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(horizon * states * actions);
        for h in 0..horizon {
            for s in 0..states {
                for a in 0..actions {
                    data.push(f(h, s, a));
                }
            }
        }
        StepTable {
            horizon,
            states,
            actions,
            data,
        }
    }

    pub fn from_vec(horizon: usize, states: usize, actions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != horizon * states * actions {
            return Err(SweetError::Shape(format!(
                "table of length {} cannot have shape (H={horizon}, S={states}, A={actions})",
                data.len()
            )));
        }
        Ok(StepTable {
            horizon,
            states,
            actions,
            data,
        })
    }

    #[inline]
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn states(&self) -> usize {
        self.states
    }

    #[inline]
    pub fn actions(&self) -> usize {
        self.actions
    }

    /// `(H, S, A)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.horizon, self.states, self.actions)
    }

    #[inline]
    fn index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.data[self.index(h, s, a)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, a: usize, value: f64) {
        let i = self.index(h, s, a);
        self.data[i] = value;
    }

    /// The action-indexed slice at `(h, s)`.
    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = self.index(h, s, 0);
        &self.data[start..start + self.actions]
    }

    #[inline]
    pub fn row_mut(&mut self, h: usize, s: usize) -> &mut [f64] {
        let start = self.index(h, s, 0);
        &mut self.data[start..start + self.actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs_diff(&self, other: &StepTable) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// Nested `[h][s][a]` representation used by the text format.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.horizon)
            .map(|h| (0..self.states).map(|s| self.row(h, s).to_vec()).collect())
            .collect()
    }

    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let horizon = nested.len();
        let states = nested.first().map_or(0, Vec::len);
        let actions = nested.first().and_then(|x| x.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(horizon * states * actions);
        for (h, layer) in nested.iter().enumerate() {
            if layer.len() != states {
                return Err(SweetError::Shape(format!("step {h} has {} states, expected {states}", layer.len())));
            }
            for (s, row) in layer.iter().enumerate() {
                if row.len() != actions {
                    return Err(SweetError::Shape(format!(
                        "row ({h},{s}) has {} actions, expected {actions}",
                        row.len()
                    )));
                }
                data.extend_from_slice(row);
            }
        }
        StepTable::from_vec(horizon, states, actions, data)
    }

    pub(crate) fn check_shape(&self, horizon: usize, states: usize, actions: usize, what: &str) -> Result<()> {
        if self.shape() != (horizon, states, actions) {
            return Err(SweetError::Shape(format!(
                "{what} has shape {:?}, expected {:?}",
                self.shape(),
                (horizon, states, actions)
            )));
        }
        Ok(())
    }
}

/// Episodic MDP with step-indexed kernel `P[h][s][a][s']` and a fixed initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "crate::format::MdpWire", into = "crate::format::MdpWire")]
pub struct TabularMDP {
    states: usize,
    actions: usize,
    horizon: usize,
    initial_state: usize,
    kernel: Vec<f64>,
}

impl TabularMDP {
    /// Builds an MDP from a flat kernel laid out as `((h * S + s) * A + a) * S + s'`.
    pub fn new(states: usize, actions: usize, horizon: usize, initial_state: usize, kernel: Vec<f64>) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(SweetError::Parameter(format!(
                "S, A, H must be positive (got S={states}, A={actions}, H={horizon})"
            )));
        }
        if initial_state >= states {
            return Err(SweetError::Parameter(format!(
                "initial state {initial_state} out of range for S={states}"
            )));
        }
        if kernel.len() != horizon * states * actions * states {
            return Err(SweetError::Shape(format!(
                "kernel has {} entries, expected H*S*A*S = {}",
                kernel.len(),
                horizon * states * actions * states
            )));
        }
        let mdp = TabularMDP {
            states,
            actions,
            horizon,
            initial_state,
            kernel,
        };
        for h in 0..horizon {
            for s in 0..states {
                for a in 0..actions {
                    let row = mdp.next_dist(h, s, a);
                    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                        return Err(SweetError::Invariant(format!("negative or non-finite entry in P[{h}][{s}][{a}]")));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > ROW_TOL {
                        return Err(SweetError::Invariant(format!("P[{h}][{s}][{a}] sums to {total}")));
                    }
                }
            }
        }
        Ok(mdp)
    }

    pub fn from_fn(
        states: usize,
        actions: usize,
        horizon: usize,
        initial_state: usize,
        mut row: impl FnMut(usize, usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut kernel = Vec::with_capacity(horizon * states * actions * states);
        for h in 0..horizon {
            for s in 0..states {
                for a in 0..actions {
                    let r = row(h, s, a);
                    if r.len() != states {
                        return Err(SweetError::Shape(format!("row ({h},{s},{a}) has length {}", r.len())));
                    }
                    kernel.extend(r);
                }
            }
        }
        TabularMDP::new(states, actions, horizon, initial_state, kernel)
    }

    /// Kernel with every row uniform over next states.
    pub fn uniform(states: usize, actions: usize, horizon: usize, initial_state: usize) -> Result<Self> {
        let p = 1.0 / states as f64;
        TabularMDP::new(
            states,
            actions,
            horizon,
            initial_state,
            vec![p; horizon * states * actions * states],
        )
    }

    #[inline]
    pub fn states(&self) -> usize {
        self.states
    }

    #[inline]
    pub fn actions(&self) -> usize {
        self.actions
    }

    #[inline]
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Distribution over next states from `(h, s, a)`.
    #[inline]
    pub fn next_dist(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = ((h * self.states + s) * self.actions + a) * self.states;
        &self.kernel[start..start + self.states]
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// `(H, S, A)` shape shared by per-step tables over this MDP.
    pub fn table_shape(&self) -> (usize, usize, usize) {
        (self.horizon, self.states, self.actions)
    }

    pub(crate) fn check_table(&self, table: &StepTable, what: &str) -> Result<()> {
        table.check_shape(self.horizon, self.states, self.actions, what)
    }

    pub(crate) fn check_policy(&self, policy: &MarkovPolicy) -> Result<()> {
        policy.table().check_shape(self.horizon, self.states, self.actions, "policy")
    }

    /// Largest absolute kernel difference; both MDPs must share a shape.
    pub fn max_kernel_diff(&self, other: &TabularMDP) -> f64 {
        self.kernel
            .iter()
            .zip(&other.kernel)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-step utility (cost or reward) with entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "crate::format::UtilityWire", into = "crate::format::UtilityWire")]
pub struct Utility {
    table: StepTable,
    normalized: bool,
}

impl Utility {
    /// Wraps a table whose entries lie in `[0, 1]`; not flagged as normalized.
    pub fn new(table: StepTable) -> Result<Self> {
        if let Some(x) = table.as_slice().iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
            return Err(SweetError::Invariant(format!("utility entry {x} outside [0, 1]")));
        }
        Ok(Utility {
            table,
            normalized: false,
        })
    }

    /// Wraps a table and certifies that no trajectory of `mdp` accumulates more than 1.
    pub fn normalized(table: StepTable, mdp: &TabularMDP) -> Result<Self> {
        let mut u = Utility::new(table)?;
        let max = max_trajectory_utility(mdp, &u)?;
        if max > 1.0 + ROW_TOL {
            return Err(SweetError::Invariant(format!(
                "utility is not normalized: a trajectory accumulates {max}"
            )));
        }
        u.normalized = true;
        Ok(u)
    }

    pub(crate) fn from_parts(table: StepTable, normalized: bool) -> Self {
        Utility { table, normalized }
    }

    pub fn zeros(horizon: usize, states: usize, actions: usize) -> Self {
        Utility {
            table: StepTable::zeros(horizon, states, actions),
            normalized: true,
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn table(&self) -> &StepTable {
        &self.table
    }

    pub fn into_table(self) -> StepTable {
        self.table
    }
}

impl Deref for Utility {
    type Target = StepTable;

    fn deref(&self) -> &StepTable {
        &self.table
    }
}

/// Per-step stochastic action rule `π_h(a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "crate::format::PolicyWire", into = "crate::format::PolicyWire")]
pub struct MarkovPolicy {
    probs: StepTable,
}

impl MarkovPolicy {
    pub fn new(probs: StepTable) -> Result<Self> {
        let (horizon, states, _) = probs.shape();
        for h in 0..horizon {
            for s in 0..states {
                let row = probs.row(h, s);
                if row.iter().any(|&p| !(p >= 0.0)) {
                    return Err(SweetError::Invariant(format!("negative probability in π[{h}][{s}]")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_TOL {
                    return Err(SweetError::Invariant(format!("π[{h}][{s}] sums to {total}")));
                }
            }
        }
        Ok(MarkovPolicy { probs })
    }

    /// Skips validation; callers guarantee normalized rows.
    pub(crate) fn from_table_unchecked(probs: StepTable) -> Self {
        MarkovPolicy { probs }
    }

    pub fn uniform(horizon: usize, states: usize, actions: usize) -> Self {
        MarkovPolicy {
            probs: StepTable::from_fn(horizon, states, actions, |_, _, _| 1.0 / actions as f64),
        }
    }

    /// Deterministic policy from an action index per `(h, s)`, laid out `h * S + s`.
    pub fn deterministic(horizon: usize, states: usize, actions: usize, choice: &[usize]) -> Result<Self> {
        if choice.len() != horizon * states {
            return Err(SweetError::Shape(format!(
                "deterministic policy needs {} choices, got {}",
                horizon * states,
                choice.len()
            )));
        }
        if let Some(&a) = choice.iter().find(|&&a| a >= actions) {
            return Err(SweetError::Parameter(format!("action {a} out of range for A={actions}")));
        }
        let probs = StepTable::from_fn(horizon, states, actions, |h, s, a| {
            if choice[h * states + s] == a {
                1.0
            } else {
                0.0
            }
        });
        Ok(MarkovPolicy { probs })
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs.get(h, s, a)
    }

    #[inline]
    pub fn dist(&self, h: usize, s: usize) -> &[f64] {
        self.probs.row(h, s)
    }

    pub fn table(&self) -> &StepTable {
        &self.probs
    }

    pub fn horizon(&self) -> usize {
        self.probs.horizon()
    }

    pub fn states(&self) -> usize {
        self.probs.states()
    }

    pub fn actions(&self) -> usize {
        self.probs.actions()
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.as_slice().iter().all(|&p| p == 0.0 || p == 1.0)
    }

    pub fn max_abs_diff(&self, other: &MarkovPolicy) -> f64 {
        self.probs.max_abs_diff(&other.probs)
    }
}

/// Episode-level randomization over Markov policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "crate::format::MixtureWire", into = "crate::format::MixtureWire")]
pub struct MixturePolicy {
    vertices: Vec<MarkovPolicy>,
    weights: Vec<f64>,
}

impl MixturePolicy {
    pub fn new(vertices: Vec<MarkovPolicy>, weights: Vec<f64>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(SweetError::Invariant("mixture needs at least one vertex".into()));
        }
        if vertices.len() != weights.len() {
            return Err(SweetError::Shape(format!(
                "{} vertices but {} weights",
                vertices.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(SweetError::Invariant("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > ROW_TOL {
            return Err(SweetError::Invariant(format!("mixture weights sum to {total}")));
        }
        let shape = vertices[0].table().shape();
        if vertices.iter().any(|v| v.table().shape() != shape) {
            return Err(SweetError::Shape("mixture vertices disagree in shape".into()));
        }
        Ok(MixturePolicy { vertices, weights })
    }

    pub fn single(policy: MarkovPolicy) -> Self {
        MixturePolicy {
            vertices: vec![policy],
            weights: vec![1.0],
        }
    }

    /// `γ·first ⊕ (1 − γ)·second`.
    pub fn pair(first: MarkovPolicy, second: MarkovPolicy, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(SweetError::Parameter(format!("mixing weight {gamma} outside [0, 1]")));
        }
        MixturePolicy::new(vec![first, second], vec![gamma, 1.0 - gamma])
    }

    pub fn vertices(&self) -> &[MarkovPolicy] {
        &self.vertices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Drops vertices with weight below `threshold` and renormalizes.
    pub fn prune(&mut self, threshold: f64) {
        if self.weights.iter().all(|&w| w < threshold) {
            return;
        }
        let mut kept_v = Vec::with_capacity(self.vertices.len());
        let mut kept_w = Vec::with_capacity(self.vertices.len());
        for (v, &w) in self.vertices.drain(..).zip(&self.weights) {
            if w >= threshold {
                kept_v.push(v);
                kept_w.push(w);
            }
        }
        let total: f64 = kept_w.iter().sum();
        kept_w.iter_mut().for_each(|w| *w /= total);
        self.vertices = kept_v;
        self.weights = kept_w;
    }
}

/// Marginal visit probabilities `ρ_h(s, a)` of a policy under a kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyMeasure {
    rho: StepTable,
}

impl OccupancyMeasure {
    pub fn table(&self) -> &StepTable {
        &self.rho
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rho.get(h, s, a)
    }

    /// `ρ_h(s) = Σ_a ρ_h(s, a)`.
    #[inline]
    pub fn state_marginal(&self, h: usize, s: usize) -> f64 {
        self.rho.row(h, s).iter().sum()
    }

    pub fn max_abs_diff(&self, other: &OccupancyMeasure) -> f64 {
        self.rho.max_abs_diff(&other.rho)
    }

    /// `Σ ρ · u`, the unclipped value of `u` at `α = 1`.
    pub fn dot(&self, u: &StepTable) -> f64 {
        self.rho.as_slice().iter().zip(u.as_slice()).map(|(r, x)| r * x).sum()
    }

    /// Convex combination `Σ_i w_i ρ_i`.
    pub fn combine(parts: &[(&OccupancyMeasure, f64)]) -> OccupancyMeasure {
        let (h, s, a) = parts[0].0.rho.shape();
        let mut rho = StepTable::zeros(h, s, a);
        for (occ, w) in parts {
            for (dst, src) in rho.as_mut_slice().iter_mut().zip(occ.rho.as_slice()) {
                *dst += w * src;
            }
        }
        OccupancyMeasure { rho }
    }

    pub(crate) fn from_table(rho: StepTable) -> Self {
        OccupancyMeasure { rho }
    }
}

/// One episode: `states` has length `H + 1` (the last entry is the terminal
/// state), `actions` has length `H`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `(s_h, a_h, s_{h+1})` triples in step order.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        self.actions
            .iter()
            .enumerate()
            .map(move |(h, &a)| (h, self.states[h], a, self.states[h + 1]))
    }
}

/// Value tables from [`evaluate_value`].
#[derive(Clone, Debug)]
pub struct ValueTables {
    /// `(H + 1) × S`, with the terminal layer equal to zero.
    v: Vec<f64>,
    q: StepTable,
    initial_state: usize,
}

impl ValueTables {
    #[inline]
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.q.states() + s]
    }

    #[inline]
    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q.get(h, s, a)
    }

    pub fn q_table(&self) -> &StepTable {
        &self.q
    }

    /// `V_1(s_1)`.
    pub fn value(&self) -> f64 {
        self.v(0, self.initial_state)
    }
}

/// Policy evaluation `Q_h = u + α P_h V_{h+1}`, `V_h = E_π Q_h`, without clipping.
pub fn evaluate_value(mdp: &TabularMDP, policy: &MarkovPolicy, utility: &StepTable, alpha: f64) -> Result<ValueTables> {
    mdp.check_policy(policy)?;
    mdp.check_table(utility, "utility")?;
    if !(alpha >= 1.0) {
        return Err(SweetError::Parameter(format!("alpha must be at least 1, got {alpha}")));
    }
    let (horizon, states, actions) = mdp.table_shape();
    let mut v = vec![0.0; (horizon + 1) * states];
    let mut q = StepTable::zeros(horizon, states, actions);
    for h in (0..horizon).rev() {
        let (head, next) = v.split_at_mut((h + 1) * states);
        let next = &next[..states];
        for s in 0..states {
            let mut vs = 0.0;
            for a in 0..actions {
                let future: f64 = mdp.next_dist(h, s, a).iter().zip(next).map(|(p, x)| p * x).sum();
                let qa = utility.get(h, s, a) + alpha * future;
                q.set(h, s, a, qa);
                vs += policy.prob(h, s, a) * qa;
            }
            head[h * states + s] = vs;
        }
    }
    Ok(ValueTables {
        v,
        q,
        initial_state: mdp.initial_state(),
    })
}

/// Scalar `V_1(s_1)` at `α = 1`.
pub fn policy_value(mdp: &TabularMDP, policy: &MarkovPolicy, utility: &StepTable) -> Result<f64> {
    Ok(evaluate_value(mdp, policy, utility, 1.0)?.value())
}

/// Forward flow of state-action visit probabilities from `s_1`.
pub fn occupancy(mdp: &TabularMDP, policy: &MarkovPolicy) -> Result<OccupancyMeasure> {
    mdp.check_policy(policy)?;
    let (horizon, states, actions) = mdp.table_shape();
    let mut rho = StepTable::zeros(horizon, states, actions);
    let mut mass = vec![0.0; states];
    mass[mdp.initial_state()] = 1.0;
    let mut next = vec![0.0; states];
    for h in 0..horizon {
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..states {
            if mass[s] == 0.0 {
                continue;
            }
            for a in 0..actions {
                let r = mass[s] * policy.prob(h, s, a);
                rho.set(h, s, a, r);
                if r != 0.0 {
                    for (dst, p) in next.iter_mut().zip(mdp.next_dist(h, s, a)) {
                        *dst += r * p;
                    }
                }
            }
        }
        std::mem::swap(&mut mass, &mut next);
    }
    Ok(OccupancyMeasure { rho })
}

/// Markov policy `π(a|s) = ρ(s,a) / ρ(s)` for an occupancy measure; where the
/// state marginal is zero the row is copied from `fallback`.
pub fn policy_from_occupancy(occ: &OccupancyMeasure, fallback: &MarkovPolicy) -> MarkovPolicy {
    let (horizon, states, actions) = occ.table().shape();
    let mut probs = StepTable::zeros(horizon, states, actions);
    for h in 0..horizon {
        for s in 0..states {
            let row = occ.table().row(h, s);
            let marginal: f64 = row.iter().sum();
            let dst = probs.row_mut(h, s);
            if marginal > 0.0 {
                for (d, r) in dst.iter_mut().zip(row) {
                    *d = r / marginal;
                }
                // renormalize so rows sum to one to machine precision
                let total: f64 = dst.iter().sum();
                dst.iter_mut().for_each(|d| *d /= total);
            } else {
                dst.copy_from_slice(fallback.dist(h, s));
            }
        }
    }
    MarkovPolicy::from_table_unchecked(probs)
}

/// Occupancy-equivalent Markov policy of an episode-level mixture.
pub fn mixture_to_markov(mdp: &TabularMDP, mix: &MixturePolicy) -> Result<MarkovPolicy> {
    if mix.len() == 1 {
        mdp.check_policy(&mix.vertices()[0])?;
        return Ok(mix.vertices()[0].clone());
    }
    let occs = mix
        .vertices()
        .iter()
        .map(|v| occupancy(mdp, v))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<_> = occs.iter().zip(mix.weights().iter().copied()).collect();
    let combined = OccupancyMeasure::combine(&parts);
    Ok(policy_from_occupancy(&combined, &mix.vertices()[0]))
}

/// `(ε0, |steps|)`-greedy version: `π'_h = (1 − ε0) π_h + ε0 / A` on the listed steps.
pub fn greedy_version(policy: &MarkovPolicy, epsilon0: f64, steps: &[usize]) -> Result<MarkovPolicy> {
    if !(0.0..=1.0).contains(&epsilon0) {
        return Err(SweetError::Parameter(format!("epsilon0 = {epsilon0} outside [0, 1]")));
    }
    let (horizon, states, actions) = policy.table().shape();
    if let Some(&h) = steps.iter().find(|&&h| h >= horizon) {
        return Err(SweetError::Parameter(format!("step {h} outside horizon {horizon}")));
    }
    let mut probs = policy.table().clone();
    let floor = epsilon0 / actions as f64;
    let mut seen = vec![false; horizon];
    for &h in steps {
        if std::mem::replace(&mut seen[h], true) {
            continue;
        }
        for s in 0..states {
            for p in probs.row_mut(h, s) {
                *p = (1.0 - epsilon0) * *p + floor;
            }
        }
    }
    Ok(MarkovPolicy::from_table_unchecked(probs))
}

/// Draws an index from a probability vector by inverse CDF.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Anything that can pick the Markov policy followed for a whole episode.
pub trait ActingPolicy {
    fn episode_policy<R: Rng + ?Sized>(&self, rng: &mut R) -> &MarkovPolicy;
}

impl ActingPolicy for MarkovPolicy {
    fn episode_policy<R: Rng + ?Sized>(&self, _rng: &mut R) -> &MarkovPolicy {
        self
    }
}

impl ActingPolicy for MixturePolicy {
    /// Draws one vertex per episode and follows it throughout.
    fn episode_policy<R: Rng + ?Sized>(&self, rng: &mut R) -> &MarkovPolicy {
        if self.vertices.len() == 1 {
            return &self.vertices[0];
        }
        &self.vertices[sample_index(&self.weights, rng)]
    }
}

/// Rolls out one episode of `policy` in `mdp`.
pub fn sample_trajectory<P, R>(mdp: &TabularMDP, policy: &P, rng: &mut R) -> Trajectory
where
    P: ActingPolicy + ?Sized,
    R: Rng + ?Sized,
{
    let pi = policy.episode_policy(rng);
    let horizon = mdp.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut s = mdp.initial_state();
    states.push(s);
    for h in 0..horizon {
        let a = sample_index(pi.dist(h, s), rng);
        s = sample_index(mdp.next_dist(h, s, a), rng);
        actions.push(a);
        states.push(s);
    }
    Trajectory { states, actions }
}

/// `min_π V_c^π` by backward induction, with a minimizing deterministic policy
/// (ties to the lowest action index).
pub fn min_cost_value(mdp: &TabularMDP, cost: &StepTable) -> Result<(f64, MarkovPolicy)> {
    mdp.check_table(cost, "cost")?;
    let (horizon, states, actions) = mdp.table_shape();
    let mut next = vec![0.0; states];
    let mut cur = vec![0.0; states];
    let mut choice = vec![0usize; horizon * states];
    for h in (0..horizon).rev() {
        for s in 0..states {
            let mut best = f64::INFINITY;
            for a in 0..actions {
                let q = cost.get(h, s, a) + dot(mdp.next_dist(h, s, a), &next);
                if q < best {
                    best = q;
                    choice[h * states + s] = a;
                }
            }
            cur[s] = best;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let policy = MarkovPolicy::deterministic(horizon, states, actions, &choice)?;
    Ok((next[mdp.initial_state()], policy))
}

/// Largest cumulative utility over trajectories with positive probability
/// under `mdp`, starting at `s_1`.
pub fn max_trajectory_utility(mdp: &TabularMDP, utility: &StepTable) -> Result<f64> {
    mdp.check_table(utility, "utility")?;
    let (horizon, states, actions) = mdp.table_shape();
    let mut next = vec![0.0; states];
    let mut cur = vec![0.0; states];
    for h in (0..horizon).rev() {
        for s in 0..states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..actions {
                let future = mdp
                    .next_dist(h, s, a)
                    .iter()
                    .zip(&next)
                    .filter(|(p, _)| **p > 0.0)
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                best = best.max(utility.get(h, s, a) + future);
            }
            cur[s] = best;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(next[mdp.initial_state()])
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Learner-side access to an environment: the kernel stays hidden, only
/// episodes come out.
pub trait EpisodeSampler {
    fn states(&self) -> usize;
    fn actions(&self) -> usize;
    fn horizon(&self) -> usize;
    fn initial_state(&self) -> usize;
    fn run_episode(&mut self, policy: &MarkovPolicy) -> Trajectory;
}

/// Simulator over a known kernel with its own random stream.
pub struct SimulatedEnv<R> {
    mdp: TabularMDP,
    rng: R,
}

impl<R: Rng> SimulatedEnv<R> {
    pub fn new(mdp: TabularMDP, rng: R) -> Self {
        SimulatedEnv { mdp, rng }
    }
}

impl<R: Rng> EpisodeSampler for SimulatedEnv<R> {
    fn states(&self) -> usize {
        self.mdp.states()
    }

    fn actions(&self) -> usize {
        self.mdp.actions()
    }

    fn horizon(&self) -> usize {
        self.mdp.horizon()
    }

    fn initial_state(&self) -> usize {
        self.mdp.initial_state()
    }

    fn run_episode(&mut self, policy: &MarkovPolicy) -> Trajectory {
        sample_trajectory(&self.mdp, policy, &mut self.rng)
    }
}
