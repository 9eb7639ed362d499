//! Constrained policy optimization over mixtures: the safe-set gate, the
//! exploration argmax `max U s.t. V_c + U ≤ budget`, constrained planning
//! `max V_r s.t. V_c + U ≤ τ`, and the dynamic-programming linear oracle.
//!
//! Candidates are episode-level mixtures, handled through their occupancy
//! measures. `U` is concave in the occupancy, so the feasible set
//! `{V_c + U ≤ b}` is reverse-convex. The exploration argmax walks the
//! frontier of `max μ·U − V_c` (concave, solved by away-step Frank-Wolfe) and
//! bisects on `μ`. Planning repeatedly replaces the constraint by its tangent
//! halfspace, an inner approximation, and solves the resulting linear CMDP
//! exactly by column generation over deterministic policies. Results are
//! validated against the oracles rather than certified.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::mdp::{
    dot, min_cost_value, mixture_to_markov, occupancy, policy_from_occupancy, MarkovPolicy, MixturePolicy,
    OccupancyMeasure, StepTable, TabularMDP,
};
use crate::rng::{random_policy, SweetRng};
use crate::uncertainty::PolicyFunctional;

/// Largest admissible constraint residual for a returned solution.
pub const RESIDUAL_TOL: f64 = 1e-6;
const PRUNE_WEIGHT: f64 = 1e-9;
const IMPROVE_EPS: f64 = 1e-15;
const GAP_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    BaselineOnly,
    MaxIterations,
    /// No policy satisfies the empirical constraint.
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::BaselineOnly => "baseline_only",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub mixture: MixturePolicy,
    pub markov: MarkovPolicy,
    pub objective: f64,
    pub constraint_value: f64,
    pub budget: f64,
    pub status: SolveStatus,
    /// `max(0, constraint_value − budget)`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Frank-Wolfe iteration cap per inner solve; also caps tangent rounds.
    pub max_iterations: usize,
    /// Seeded random starts in addition to the anchor and uniform policies.
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 500,
            random_starts: 8,
            seed: 0,
        }
    }
}

/// Parameters of the empirical safe policy set.
#[derive(Clone, Debug)]
pub struct SafeSetSpec {
    pub tau: f64,
    pub epsilon0: f64,
    pub t: usize,
    pub kappa_tilde: f64,
    pub baseline: MarkovPolicy,
}

impl SafeSetSpec {
    /// Checks `ε0·t + κ̃ < κ` against the run's margin `kappa`.
    pub fn new(tau: f64, epsilon0: f64, t: usize, kappa_tilde: f64, kappa: f64, baseline: MarkovPolicy) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(SweetError::Parameter(format!("tau = {tau} outside (0, 1]")));
        }
        if !(epsilon0 >= 0.0) || !(kappa_tilde > 0.0) {
            return Err(SweetError::Parameter("epsilon0 must be ≥ 0 and kappa_tilde > 0".into()));
        }
        if !(epsilon0 * t as f64 + kappa_tilde < kappa) {
            return Err(SweetError::Parameter(format!(
                "epsilon0·t + kappa_tilde = {} must be below kappa = {kappa}",
                epsilon0 * t as f64 + kappa_tilde
            )));
        }
        Ok(SafeSetSpec {
            tau,
            epsilon0,
            t,
            kappa_tilde,
            baseline,
        })
    }

    /// `τ − ε0·t − κ̃`: the baseline-only threshold.
    pub fn gate_threshold(&self) -> f64 {
        self.tau - self.epsilon0 * self.t as f64 - self.kappa_tilde
    }

    /// `τ − ε0·t`: the budget of the relaxed set.
    pub fn relaxed_budget(&self) -> f64 {
        self.tau - self.epsilon0 * self.t as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeSetMode {
    BaselineOnly,
    Relaxed,
}

impl SafeSetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SafeSetMode::BaselineOnly => "baseline_only",
            SafeSetMode::Relaxed => "relaxed",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GateDecision {
    pub mode: SafeSetMode,
    /// `V_{P̂,c}(π⁰) + U(π⁰)`.
    pub baseline_load: f64,
    /// `U(π⁰)`.
    pub baseline_uncertainty: f64,
}

/// Baseline-only iff `V_{P̂,c}(π⁰) + U(π⁰) ≥ τ − ε0·t − κ̃`.
pub fn safe_set_gate(
    model: &TabularMDP,
    cost: &StepTable,
    uncertainty: &dyn PolicyFunctional,
    spec: &SafeSetSpec,
) -> Result<GateDecision> {
    let occ = occupancy(model, &spec.baseline)?;
    model.check_table(cost, "cost")?;
    let u = uncertainty.value(model, &spec.baseline)?;
    let load = occ.dot(cost) + u;
    let mode = if load >= spec.gate_threshold() {
        SafeSetMode::BaselineOnly
    } else {
        SafeSetMode::Relaxed
    };
    Ok(GateDecision {
        mode,
        baseline_load: load,
        baseline_uncertainty: u,
    })
}

/// Deterministic maximizer of the unclipped `α`-weighted value of an arbitrary
/// real reward; ties go to the lowest action index. Returns the policy and
/// its value at `s_1`.
pub fn dp_best_response(model: &TabularMDP, reward: &StepTable, alpha: f64) -> Result<(MarkovPolicy, f64)> {
    model.check_table(reward, "reward")?;
    if let Some(x) = reward.as_slice().iter().find(|x| !x.is_finite()) {
        return Err(SweetError::Parameter(format!("reward entry {x} is not finite")));
    }
    let (horizon, states, actions) = model.table_shape();
    let mut next = vec![0.0; states];
    let mut cur = vec![0.0; states];
    let mut choice = vec![0usize; horizon * states];
    for h in (0..horizon).rev() {
        for s in 0..states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..actions {
                let q = reward.get(h, s, a) + alpha * dot(model.next_dist(h, s, a), &next);
                if q > best {
                    best = q;
                    choice[h * states + s] = a;
                }
            }
            cur[s] = best;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let policy = MarkovPolicy::deterministic(horizon, states, actions, &choice)?;
    Ok((policy, next[model.initial_state()]))
}

/// Concave objective `weight·U(π(ρ)) + ⟨linear, ρ⟩` over occupancy measures.
struct Concave<'a> {
    model: &'a TabularMDP,
    uncertainty: &'a dyn PolicyFunctional,
    weight: f64,
    linear: StepTable,
}

impl Concave<'_> {
    fn value(&self, occ: &OccupancyMeasure, fallback: &MarkovPolicy) -> Result<f64> {
        let lin = occ.dot(&self.linear);
        if self.weight == 0.0 {
            return Ok(lin);
        }
        let pi = policy_from_occupancy(occ, fallback);
        Ok(self.weight * self.uncertainty.value(self.model, &pi)? + lin)
    }

    fn gradient(&self, policy: &MarkovPolicy, occ: &OccupancyMeasure) -> Result<StepTable> {
        if self.weight == 0.0 {
            return Ok(self.linear.clone());
        }
        let (_, mut g) = self.uncertainty.linearize(self.model, policy, occ)?;
        g.scale(self.weight);
        for (x, l) in g.as_mut_slice().iter_mut().zip(self.linear.as_slice()) {
            *x += l;
        }
        Ok(g)
    }
}

/// `V_c + U` and the objective of a candidate.
#[derive(Clone, Copy, Debug)]
struct Point {
    objective: f64,
    constraint: f64,
}

struct Problem<'a> {
    model: &'a TabularMDP,
    /// `None` maximizes the uncertainty itself.
    reward: Option<&'a StepTable>,
    cost: &'a StepTable,
    uncertainty: &'a dyn PolicyFunctional,
    budget: f64,
}

impl Problem<'_> {
    fn evaluate(&self, policy: &MarkovPolicy, occ: &OccupancyMeasure) -> Result<Point> {
        let u = self.uncertainty.value(self.model, policy)?;
        Ok(Point {
            objective: self.reward.map_or(u, |r| occ.dot(r)),
            constraint: occ.dot(self.cost) + u,
        })
    }

    fn evaluate_iterate(&self, it: &Iterate) -> Result<Point> {
        self.evaluate(&it.policy(), &it.occ)
    }

    /// Value and occupancy-space linearization of `V_c + U`.
    fn constraint_gradient(&self, policy: &MarkovPolicy, occ: &OccupancyMeasure) -> Result<(f64, StepTable)> {
        let (u, mut g) = self.uncertainty.linearize(self.model, policy, occ)?;
        for (x, c) in g.as_mut_slice().iter_mut().zip(self.cost.as_slice()) {
            *x += c;
        }
        Ok((occ.dot(self.cost) + u, g))
    }
}

/// Mixture weights over vertex policies with cached occupancies.
#[derive(Clone)]
struct Iterate {
    vertices: Vec<MarkovPolicy>,
    occs: Vec<OccupancyMeasure>,
    weights: Vec<f64>,
    occ: OccupancyMeasure,
}

impl Iterate {
    fn single(model: &TabularMDP, policy: MarkovPolicy) -> Result<Self> {
        let occ = occupancy(model, &policy)?;
        Ok(Iterate {
            vertices: vec![policy],
            occs: vec![occ.clone()],
            weights: vec![1.0],
            occ,
        })
    }

    fn from_mixture(model: &TabularMDP, mixture: &MixturePolicy) -> Result<Self> {
        let occs = mixture
            .vertices()
            .iter()
            .map(|v| occupancy(model, v))
            .collect::<Result<Vec<_>>>()?;
        let mut it = Iterate {
            vertices: mixture.vertices().to_vec(),
            occs,
            weights: mixture.weights().to_vec(),
            occ: OccupancyMeasure::from_table(StepTable::zeros(model.horizon(), model.states(), model.actions())),
        };
        it.recombine();
        Ok(it)
    }

    /// `(1 − γ)·a ⊕ γ·b`.
    fn mix(a: &Iterate, b: &Iterate, gamma: f64) -> Iterate {
        let mut out = a.clone();
        out.weights.iter_mut().for_each(|w| *w *= 1.0 - gamma);
        for ((v, o), &w) in b.vertices.iter().zip(&b.occs).zip(&b.weights) {
            if let Some(i) = out.vertices.iter().position(|x| x == v) {
                out.weights[i] += gamma * w;
            } else {
                out.vertices.push(v.clone());
                out.occs.push(o.clone());
                out.weights.push(gamma * w);
            }
        }
        out.normalize();
        out
    }

    fn policy(&self) -> MarkovPolicy {
        policy_from_occupancy(&self.occ, &self.vertices[0])
    }

    fn normalize(&mut self) {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter_mut().for_each(|w| *w /= total);
        self.prune();
        self.recombine();
    }

    fn recombine(&mut self) {
        let parts: Vec<_> = self.occs.iter().zip(self.weights.iter().copied()).collect();
        self.occ = OccupancyMeasure::combine(&parts);
    }

    fn prune(&mut self) {
        if self.weights.iter().all(|&w| w >= PRUNE_WEIGHT) || self.weights.iter().all(|&w| w < PRUNE_WEIGHT) {
            return;
        }
        let keep: Vec<bool> = self.weights.iter().map(|&w| w >= PRUNE_WEIGHT).collect();
        let mut k = keep.iter();
        self.vertices.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.occs.retain(|_| *k.next().unwrap());
        self.weights.retain(|&w| w >= PRUNE_WEIGHT);
        let total: f64 = self.weights.iter().sum();
        self.weights.iter_mut().for_each(|w| *w /= total);
    }

    fn to_mixture(&self) -> Result<MixturePolicy> {
        let total: f64 = self.weights.iter().sum();
        MixturePolicy::new(self.vertices.clone(), self.weights.iter().map(|w| w / total).collect())
    }

    fn moved_occ(&self, direction: &Direction, gamma: f64) -> OccupancyMeasure {
        match direction {
            Direction::Toward(_, occ) => OccupancyMeasure::combine(&[(&self.occ, 1.0 - gamma), (occ, gamma)]),
            Direction::Away(i) => OccupancyMeasure::combine(&[(&self.occ, 1.0 + gamma), (&self.occs[*i], -gamma)]),
        }
    }

    fn apply(&mut self, direction: Direction, gamma: f64) {
        match direction {
            Direction::Toward(v, occ) => {
                self.weights.iter_mut().for_each(|w| *w *= 1.0 - gamma);
                if let Some(i) = self.vertices.iter().position(|x| *x == v) {
                    self.weights[i] += gamma;
                } else {
                    self.vertices.push(v);
                    self.occs.push(occ);
                    self.weights.push(gamma);
                }
            }
            Direction::Away(i) => {
                self.weights.iter_mut().for_each(|w| *w *= 1.0 + gamma);
                self.weights[i] = (self.weights[i] - gamma).max(0.0);
            }
        }
        self.normalize();
    }
}

enum Direction {
    Toward(MarkovPolicy, OccupancyMeasure),
    Away(usize),
}

/// Golden-section maximization of a unimodal `phi` on `[0, gmax]`, also
/// checking the right endpoint.
fn line_search(mut phi: impl FnMut(f64) -> Result<f64>, gmax: f64) -> Result<(f64, f64)> {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut best = (gmax, phi(gmax)?);
    let (mut lo, mut hi) = (0.0, gmax);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = phi(x1)?;
    let mut f2 = phi(x2)?;
    for _ in 0..LINE_SEARCH_STEPS {
        if f1 > best.1 {
            best = (x1, f1);
        }
        if f2 > best.1 {
            best = (x2, f2);
        }
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = phi(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = phi(x2)?;
        }
    }
    Ok(best)
}

const LINE_SEARCH_STEPS: usize = 48;

/// Away-step Frank-Wolfe maximization of a concave objective, with
/// [`dp_best_response`] as linear oracle. Returns iterations used and whether
/// the duality gap closed before the cap.
fn frank_wolfe(f: &Concave, it: &mut Iterate, max_iterations: usize) -> Result<(usize, bool)> {
    let mut current = f.value(&it.occ, &it.vertices[0])?;
    for k in 0..max_iterations {
        let policy = it.policy();
        let g = f.gradient(&policy, &it.occ)?;
        let at = dot(g.as_slice(), it.occ.table().as_slice());
        let (vertex, _) = dp_best_response(f.model, &g, 1.0)?;
        let vocc = occupancy(f.model, &vertex)?;
        let fw_gap = dot(g.as_slice(), vocc.table().as_slice()) - at;
        let (away, away_score) = it
            .occs
            .iter()
            .enumerate()
            .map(|(i, o)| (i, dot(g.as_slice(), o.table().as_slice())))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        let away_gap = if it.vertices.len() > 1 { at - away_score } else { 0.0 };
        if fw_gap.max(away_gap) <= GAP_TOL {
            return Ok((k, true));
        }
        let fallback = it.vertices[0].clone();
        let mut candidates = Vec::with_capacity(2);
        let toward = (Direction::Toward(vertex, vocc), 1.0);
        let w = it.weights[away];
        let away_dir = (away_gap > 0.0 && w < 1.0).then(|| (Direction::Away(away), w / (1.0 - w)));
        if away_gap > fw_gap {
            candidates.extend(away_dir);
            candidates.push(toward);
        } else {
            candidates.push(toward);
            candidates.extend(away_dir);
        }
        let mut moved = false;
        for (dir, gmax) in candidates {
            let (gamma, value) = line_search(|gm| f.value(&it.moved_occ(&dir, gm), &fallback), gmax)?;
            if value > current + IMPROVE_EPS {
                it.apply(dir, gamma);
                current = f.value(&it.occ, &it.vertices[0])?;
                moved = true;
                break;
            }
        }
        if !moved {
            return Ok((k + 1, true));
        }
    }
    Ok((max_iterations, false))
}

/// Largest `γ ∈ [0, 1]` with `(1 − γ)·feasible ⊕ γ·other` inside the budget.
/// The constraint is concave along the segment and holds at `γ = 0`, so the
/// feasible part of the segment is an interval starting there.
fn repair(problem: &Problem, feasible: &Iterate, other: &Iterate) -> Result<Iterate> {
    let at = |gamma: f64| Iterate::mix(feasible, other, gamma);
    let end = at(1.0);
    if problem.evaluate_iterate(&end)?.constraint <= problem.budget {
        return Ok(end);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if problem.evaluate_iterate(&at(mid))?.constraint <= problem.budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(lo))
}

fn finish(problem: &Problem, it: &Iterate, status: SolveStatus, iterations: usize) -> Result<SolveResult> {
    let mixture = it.to_mixture()?;
    let markov = mixture_to_markov(problem.model, &mixture)?;
    let occ = occupancy(problem.model, &markov)?;
    let point = problem.evaluate(&markov, &occ)?;
    Ok(SolveResult {
        mixture,
        markov,
        objective: point.objective,
        constraint_value: point.constraint,
        budget: problem.budget,
        status,
        residual: (point.constraint - problem.budget).max(0.0),
        iterations,
    })
}

/// `max U(π)` subject to `V_{P̂,c}(π) + U(π) ≤ budget`, over mixtures.
///
/// The optimum lies on the frontier traded off by `max_ρ μ·U − V_c`, a concave
/// problem for every `μ ≥ 0`; along that frontier `V_c + U` grows with `μ`, so
/// the binding multiplier is found by bisection and the two bracketing
/// frontier points are mixed up to the budget.
pub fn max_uncertainty_safe(
    model: &TabularMDP,
    cost: &StepTable,
    uncertainty: &dyn PolicyFunctional,
    budget: f64,
    baseline: &MarkovPolicy,
    options: &SolverOptions,
) -> Result<SolveResult> {
    model.check_table(cost, "cost")?;
    let problem = Problem {
        model,
        reward: None,
        cost,
        uncertainty,
        budget,
    };
    let base = Iterate::single(model, baseline.clone())?;
    let base_point = problem.evaluate_iterate(&base)?;
    if !(base_point.constraint < budget) {
        return Err(SweetError::Precondition(format!(
            "baseline load {} is not strictly below the budget {budget}",
            base_point.constraint
        )));
    }
    if uncertainty.is_zero() {
        return finish(&problem, &base, SolveStatus::Optimal, 0);
    }
    let (horizon, states, actions) = model.table_shape();
    let frontier = |mu: f64, start: &Iterate| -> Result<(Iterate, bool, usize)> {
        let mut linear = cost.clone();
        linear.scale(-1.0);
        let f = Concave {
            model,
            uncertainty,
            weight: mu,
            linear,
        };
        let mut it = start.clone();
        let (n, converged) = frank_wolfe(&f, &mut it, options.max_iterations)?;
        Ok((it, converged, n))
    };
    let mut iterations = 0;

    // unconstrained maximum of U, from several starts
    let free = Concave {
        model,
        uncertainty,
        weight: 1.0,
        linear: StepTable::zeros(horizon, states, actions),
    };
    let mut rng = SweetRng::seed_from_u64(options.seed);
    let mut starts = vec![base.clone(), Iterate::single(model, MarkovPolicy::uniform(horizon, states, actions))?];
    for _ in 0..options.random_starts {
        starts.push(Iterate::single(model, random_policy(horizon, states, actions, &mut rng))?);
    }
    let mut best_free: Option<(Iterate, f64, bool)> = None;
    for mut it in starts {
        let (n, converged) = frank_wolfe(&free, &mut it, options.max_iterations)?;
        iterations += n;
        let v = free.value(&it.occ, &it.vertices[0])?;
        if best_free.as_ref().is_none_or(|b| v > b.1) {
            best_free = Some((it, v, converged));
        }
    }
    let (free_it, _, free_converged) = best_free.expect("at least two starts");
    if problem.evaluate_iterate(&free_it)?.constraint <= budget {
        let status = if free_converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIterations
        };
        return finish(&problem, &free_it, status, iterations);
    }

    // μ = 0 end of the frontier: minimum-cost policies
    let (_, cheapest) = min_cost_value(model, cost)?;
    let cheap_it = Iterate::single(model, cheapest)?;
    if problem.evaluate_iterate(&cheap_it)?.constraint > budget {
        // the frontier starts outside the budget; fall back to the segment
        // from the baseline toward the unconstrained maximizer
        let it = repair(&problem, &base, &free_it)?;
        return finish(&problem, &it, SolveStatus::MaxIterations, iterations);
    }
    let mut lo = (0.0, cheap_it, true);
    let mut hi = (f64::INFINITY, free_it, free_converged);
    let mut mu = 1.0;
    while mu <= MU_MAX {
        let (it, converged, n) = frontier(mu, &lo.1)?;
        iterations += n;
        if problem.evaluate_iterate(&it)?.constraint > budget {
            hi = (mu, it, converged);
            break;
        }
        lo = (mu, it, converged);
        mu *= 2.0;
    }
    if hi.0.is_finite() {
        for _ in 0..MU_BISECTIONS {
            let mid = 0.5 * (lo.0 + hi.0);
            if hi.0 - lo.0 <= 1e-9 * hi.0.max(1.0) {
                break;
            }
            let (it, converged, n) = frontier(mid, &lo.1)?;
            iterations += n;
            if problem.evaluate_iterate(&it)?.constraint > budget {
                hi = (mid, it, converged);
            } else {
                lo = (mid, it, converged);
            }
        }
    }
    let mixed = repair(&problem, &lo.1, &hi.1)?;
    let chosen = if problem.evaluate_iterate(&mixed)?.objective >= problem.evaluate_iterate(&lo.1)?.objective {
        mixed
    } else {
        lo.1.clone()
    };
    let status = if lo.2 && hi.2 {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIterations
    };
    let chosen = if problem.evaluate_iterate(&chosen)?.objective >= base_point.objective {
        chosen
    } else {
        base
    };
    finish(&problem, &chosen, status, iterations)
}

const MU_MAX: f64 = 1e12;
const MU_BISECTIONS: usize = 60;

/// Deterministic policy minimizing `V_c + U`: a concave function of the
/// occupancy, so its minimum sits at a vertex. Exhaustive when the number of
/// deterministic policies is at most 4096, otherwise a vertex descent plus
/// single-entry swaps from the minimum-cost policy.
fn min_load_vertex(problem: &Problem) -> Result<(MarkovPolicy, f64)> {
    let model = problem.model;
    let (horizon, states, actions) = model.table_shape();
    let cells = horizon * states;
    let load = |choice: &[usize]| -> Result<(MarkovPolicy, f64)> {
        let pi = MarkovPolicy::deterministic(horizon, states, actions, choice)?;
        let occ = occupancy(model, &pi)?;
        let c = problem.evaluate(&pi, &occ)?.constraint;
        Ok((pi, c))
    };
    let count = (actions as f64).powi(cells as i32);
    if count <= 4096.0 {
        let mut choice = vec![0usize; cells];
        let (mut best, mut best_c) = load(&choice)?;
        loop {
            // odometer increment
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
            let (pi, c) = load(&choice)?;
            if c < best_c {
                best = pi;
                best_c = c;
            }
        }
        return Ok((best, best_c));
    }
    let choice_of = |pi: &MarkovPolicy| -> Vec<usize> {
        (0..cells)
            .map(|i| {
                let row = pi.dist(i / states, i % states);
                row.iter().position(|&p| p == 1.0).unwrap_or(0)
            })
            .collect()
    };
    let (_, start) = min_cost_value(model, problem.cost)?;
    let mut choice = choice_of(&start);
    let (mut best, mut best_c) = load(&choice)?;
    loop {
        let mut improved = false;
        // linearized descent step
        let occ = occupancy(model, &best)?;
        let (_, mut g) = problem.constraint_gradient(&best, &occ)?;
        g.scale(-1.0);
        let (cand, _) = dp_best_response(model, &g, 1.0)?;
        let cand_choice = choice_of(&cand);
        let (pi, c) = load(&cand_choice)?;
        if c < best_c - IMPROVE_EPS {
            best = pi;
            best_c = c;
            choice = cand_choice;
            improved = true;
        }
        for i in 0..cells {
            let keep = choice[i];
            for a in 0..actions {
                if a == keep {
                    continue;
                }
                choice[i] = a;
                let (pi, c) = load(&choice)?;
                if c < best_c - IMPROVE_EPS {
                    best = pi;
                    best_c = c;
                    improved = true;
                    break;
                }
                choice[i] = keep;
            }
        }
        if !improved {
            return Ok((best, best_c));
        }
    }
}

/// `max V_{P̂,r}(π)` subject to `V_{P̂,c}(π) + U(π) ≤ τ`, over mixtures.
///
/// With `U ≡ 0` this is a linear CMDP, solved exactly by column generation.
/// Otherwise the concave constraint is replaced by its tangent halfspace at
/// the current feasible point, which lies inside the true feasible set; the
/// resulting linear CMDP is solved exactly and the step is cut back along the
/// segment if needed. Each round can only raise the reward; rounds start
/// from several feasible points.
pub fn plan(
    model: &TabularMDP,
    reward: &StepTable,
    cost: &StepTable,
    tau: f64,
    uncertainty: &dyn PolicyFunctional,
    options: &SolverOptions,
) -> Result<SolveResult> {
    model.check_table(reward, "reward")?;
    model.check_table(cost, "cost")?;
    let problem = Problem {
        model,
        reward: Some(reward),
        cost,
        uncertainty,
        budget: tau,
    };
    let (greedy, _) = dp_best_response(model, reward, 1.0)?;
    let greedy_it = Iterate::single(model, greedy.clone())?;
    if problem.evaluate_iterate(&greedy_it)?.constraint <= tau {
        return finish(&problem, &greedy_it, SolveStatus::Optimal, 0);
    }
    if uncertainty.is_zero() {
        let (mixture, status, iterations) = column_generation(model, reward, cost, tau)?;
        let it = Iterate::from_mixture(model, &mixture)?;
        return finish(&problem, &it, status, iterations);
    }
    let (anchor, load) = min_load_vertex(&problem)?;
    let anchor_it = Iterate::single(model, anchor)?;
    if load > tau {
        return finish(&problem, &anchor_it, SolveStatus::Infeasible, 0);
    }
    let (horizon, states, actions) = model.table_shape();
    let mut starts = vec![anchor_it.clone(), repair(&problem, &anchor_it, &greedy_it)?];
    let (lp, lp_status, _) = column_generation(model, reward, cost, tau)?;
    if lp_status != SolveStatus::Infeasible {
        starts.push(repair(&problem, &anchor_it, &Iterate::from_mixture(model, &lp)?)?);
    }
    let mut rng = SweetRng::seed_from_u64(options.seed);
    for _ in 0..options.random_starts {
        let pi = random_policy(horizon, states, actions, &mut rng);
        starts.push(repair(&problem, &anchor_it, &Iterate::single(model, pi)?)?);
    }
    let mut best: Option<(Iterate, f64, bool)> = None;
    let mut iterations = 0;
    for start in starts {
        let (it, n, converged) = tangent_rounds(&problem, start, options.max_iterations)?;
        iterations += n;
        let v = problem.evaluate_iterate(&it)?.objective;
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((it, v, converged));
        }
    }
    let (it, _, converged) = best.expect("anchor start always present");
    let status = if converged {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIterations
    };
    finish(&problem, &it, status, iterations)
}

fn tangent_rounds(problem: &Problem, start: Iterate, max_rounds: usize) -> Result<(Iterate, usize, bool)> {
    let reward = problem.reward.expect("planning problem");
    let mut x = start;
    let mut value = problem.evaluate_iterate(&x)?.objective;
    for k in 0..max_rounds {
        let policy = x.policy();
        let (load, g) = problem.constraint_gradient(&policy, &x.occ)?;
        let shifted = problem.budget - load + dot(g.as_slice(), x.occ.table().as_slice());
        let (mixture, status, _) = column_generation(problem.model, reward, &g, shifted)?;
        if status == SolveStatus::Infeasible {
            return Ok((x, k + 1, true));
        }
        let y = Iterate::from_mixture(problem.model, &mixture)?;
        let next = repair(problem, &x, &y)?;
        let next_value = problem.evaluate_iterate(&next)?.objective;
        if next_value <= value + 1e-12 {
            return Ok((x, k + 1, true));
        }
        x = next;
        value = next_value;
    }
    Ok((x, max_rounds, false))
}

/// Column `(policy, V_r, V_c)`.
struct Column {
    policy: MarkovPolicy,
    reward: f64,
    cost: f64,
}

/// Best mixture of at most two columns meeting `cost ≤ tau`.
fn restricted_master(columns: &[Column], tau: f64) -> Option<(usize, usize, f64, f64)> {
    let mut best: Option<(usize, usize, f64, f64)> = None;
    let mut consider = |i: usize, j: usize, w: f64, v: f64| {
        if best.is_none_or(|b| v > b.3) {
            best = Some((i, j, w, v));
        }
    };
    for (i, ci) in columns.iter().enumerate() {
        if ci.cost <= tau {
            consider(i, i, 1.0, ci.reward);
            for (j, cj) in columns.iter().enumerate() {
                if cj.cost > tau && cj.reward > ci.reward {
                    let w = (cj.cost - tau) / (cj.cost - ci.cost);
                    consider(i, j, w, w * ci.reward + (1.0 - w) * cj.reward);
                }
            }
        }
    }
    best
}

/// Multiplier minimizing the restricted dual `max_i (R_i − λ C_i) + λ τ`.
fn restricted_dual(columns: &[Column], tau: f64) -> (f64, f64) {
    let dual = |lambda: f64| {
        columns
            .iter()
            .map(|c| c.reward - lambda * c.cost)
            .fold(f64::NEG_INFINITY, f64::max)
            + lambda * tau
    };
    let mut best = (0.0, dual(0.0));
    for (i, a) in columns.iter().enumerate() {
        for b in &columns[i + 1..] {
            if a.cost != b.cost {
                let lambda = (a.reward - b.reward) / (a.cost - b.cost);
                if lambda > 0.0 {
                    let v = dual(lambda);
                    if v < best.1 {
                        best = (lambda, v);
                    }
                }
            }
        }
    }
    best
}

/// Exact `max V_r s.t. V_c ≤ τ` for arbitrary real tables: pricing by dynamic
/// programming on `r − λ c`, restricted master over pairs of columns.
fn column_generation(
    model: &TabularMDP,
    reward: &StepTable,
    cost: &StepTable,
    tau: f64,
) -> Result<(MixturePolicy, SolveStatus, usize)> {
    let make = |policy: MarkovPolicy| -> Result<Column> {
        let occ = occupancy(model, &policy)?;
        Ok(Column {
            reward: occ.dot(reward),
            cost: occ.dot(cost),
            policy,
        })
    };
    let (greedy, _) = dp_best_response(model, reward, 1.0)?;
    let (min_cost, cheapest) = min_cost_value(model, cost)?;
    if min_cost > tau {
        return Ok((MixturePolicy::single(cheapest), SolveStatus::Infeasible, 0));
    }
    let mut columns = vec![make(greedy)?, make(cheapest)?];
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let cap = 1000.max(model.horizon() * model.states() * model.actions());
    for k in 0..cap {
        iterations = k + 1;
        let (lambda, dual_value) = restricted_dual(&columns, tau);
        let mut priced = reward.clone();
        for (x, c) in priced.as_mut_slice().iter_mut().zip(cost.as_slice()) {
            *x -= lambda * c;
        }
        let (candidate, value) = dp_best_response(model, &priced, 1.0)?;
        if value + lambda * tau <= dual_value + 1e-13 || columns.iter().any(|c| c.policy == candidate) {
            status = SolveStatus::Optimal;
            break;
        }
        columns.push(make(candidate)?);
    }
    let (i, j, w, _) = match restricted_master(&columns, tau) {
        Some(x) => x,
        // rounding can leave the cheapest column a hair above τ
        None => {
            let i = columns
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost))
                .map(|(i, _)| i)
                .unwrap_or(0);
            (i, i, 1.0, 0.0)
        }
    };
    let mixture = if i == j {
        MixturePolicy::single(columns[i].policy.clone())
    } else {
        MixturePolicy::pair(columns[i].policy.clone(), columns[j].policy.clone(), w)?
    };
    Ok((mixture, status, iterations))
}
