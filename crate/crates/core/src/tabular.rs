//! Count-based safe exploration for tabular MDPs.
//!
//! Visitation counters give the empirical kernel `P̂` and the bonus
//! `b̂ = β0·H / N`; the uncertainty of a policy is `4·sqrt(V̄(P̂, π, b̂, 1 + 1/H))`.
//! Each episode executes the previous argmax, re-estimates, gates the safe
//! set and solves for the next policy, until the set is relaxed and the
//! uncertainty of the chosen policy drops below `T`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::mdp::{ActingPolicy, EpisodeSampler, MarkovPolicy, MixturePolicy, StepTable, TabularMDP, Trajectory};
use crate::runlog::{EpisodeRecord, Exploration, RunLog};
use crate::solver::{max_uncertainty_safe, safe_set_gate, SafeSetMode, SafeSetSpec, SolverOptions};
use crate::uncertainty::{PolicyFunctional, Uncertainty};

/// Visitation counters `N_h(s,a)` and `N_h(s,a,s')`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    states: usize,
    actions: usize,
    horizon: usize,
    n_sa: Vec<u64>,
    n_sas: Vec<u64>,
}

impl Counts {
    pub fn new(states: usize, actions: usize, horizon: usize) -> Self {
        Counts {
            states,
            actions,
            horizon,
            n_sa: vec![0; horizon * states * actions],
            n_sas: vec![0; horizon * states * actions * states],
        }
    }

    fn sa(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    pub fn n_sa(&self, h: usize, s: usize, a: usize) -> u64 {
        self.n_sa[self.sa(h, s, a)]
    }

    pub fn n_sas(&self, h: usize, s: usize, a: usize, next: usize) -> u64 {
        self.n_sas[self.sa(h, s, a) * self.states + next]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.horizon, self.states, self.actions)
    }

    /// Adds every transition of `traj` in place.
    pub fn record(&mut self, traj: &Trajectory) -> Result<()> {
        if traj.len() != self.horizon {
            return Err(SweetError::Shape(format!(
                "trajectory has {} steps, counters expect {}",
                traj.len(),
                self.horizon
            )));
        }
        for (h, s, a, next) in traj.transitions() {
            if s >= self.states || next >= self.states || a >= self.actions {
                return Err(SweetError::Shape(format!("transition ({s}, {a}, {next}) out of range")));
            }
            let i = self.sa(h, s, a);
            self.n_sa[i] += 1;
            self.n_sas[i * self.states + next] += 1;
        }
        Ok(())
    }
}

/// Counters after adding `traj`.
pub fn update_counts(counts: &Counts, traj: &Trajectory) -> Result<Counts> {
    let mut next = counts.clone();
    next.record(traj)?;
    Ok(next)
}

/// `P̂ = N(s,a,s')/N(s,a)` where `N(s,a) > 1`, uniform rows elsewhere.
pub fn estimate_model(counts: &Counts, initial_state: usize) -> Result<TabularMDP> {
    let (horizon, states, actions) = counts.shape();
    TabularMDP::from_fn(states, actions, horizon, initial_state, |h, s, a| {
        let n = counts.n_sa(h, s, a);
        if n > 1 {
            (0..states).map(|next| counts.n_sas(h, s, a, next) as f64 / n as f64).collect()
        } else {
            vec![1.0 / states as f64; states]
        }
    })
}

/// `b̂_h(s,a) = β0·H / max(N_h(s,a), 1)`.
pub fn bonus(counts: &Counts, beta0: f64) -> StepTable {
    let (horizon, states, actions) = counts.shape();
    StepTable::from_fn(horizon, states, actions, |h, s, a| {
        beta0 * horizon as f64 / counts.n_sa(h, s, a).max(1) as f64
    })
}

/// `β = ln(3SAH/δ) + S·ln(8e(1+n))`.
pub fn beta(states: usize, actions: usize, horizon: usize, delta: f64, n: f64) -> f64 {
    let sah = (states * actions * horizon) as f64;
    (3.0 * sah / delta).ln() + states as f64 * (8.0 * std::f64::consts::E * (1.0 + n)).ln()
}

/// Positive root of `n = c·ln(n + 1)`, by fixed-point iteration from `n = c`.
/// A positive root exists only for `c > 1`.
pub fn solve_log_fixed_point(c: f64) -> Result<f64> {
    if !(c > 1.0 && c.is_finite()) {
        return Err(SweetError::Parameter(format!("no positive root of n = {c}·ln(n+1)")));
    }
    let mut n = c;
    for _ in 0..100_000 {
        let next = c * (n + 1.0).ln();
        if (next - n).abs() <= 1e-10 * next {
            return Ok(next);
        }
        n = next;
    }
    Err(SweetError::Numeric(format!("fixed point of n = {c}·ln(n+1) did not converge")))
}

/// Inputs for [`TabularConfig::new`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularParams {
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    pub kappa: f64,
    /// Safety margin `Δ(c, τ)`.
    pub margin: f64,
    /// Known lower bound `Δ_min ≤ Δ(c, τ)`.
    pub margin_min: f64,
    pub episode_cap: usize,
    /// Multiplier on the constant 4 of the uncertainty; 1 is the analysed
    /// setting, other values are for diagnostics only.
    pub uncertainty_scale: f64,
}

impl TabularParams {
    pub fn new(epsilon: f64, delta: f64, tau: f64, kappa: f64, margin: f64, margin_min: f64) -> Self {
        TabularParams {
            epsilon,
            delta,
            tau,
            kappa,
            margin,
            margin_min,
            episode_cap: 5000,
            uncertainty_scale: 1.0,
        }
    }
}

/// Constants of a tabular run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularConfig {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub params: TabularParams,
    pub beta: f64,
    pub beta0: f64,
    pub frak_u: f64,
    pub termination: f64,
    pub n_max: f64,
    pub alpha_h: f64,
    pub kappa_tilde: f64,
    pub epsilon0: f64,
    pub t: usize,
}

impl TabularConfig {
    pub fn new(states: usize, actions: usize, horizon: usize, params: TabularParams) -> Result<Self> {
        let TabularParams {
            epsilon,
            delta,
            tau,
            kappa,
            margin,
            margin_min,
            ..
        } = params;
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(SweetError::Parameter("S, A and H must be positive".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(SweetError::Parameter(format!("epsilon = {epsilon} outside (0, 1)")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(SweetError::Parameter(format!("delta = {delta} outside (0, 1)")));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(SweetError::Parameter(format!("tau = {tau} outside (0, 1]")));
        }
        if !(kappa > 0.0 && kappa <= tau) {
            return Err(SweetError::Parameter(format!("kappa = {kappa} outside (0, tau]")));
        }
        if !(margin_min > 0.0 && margin >= margin_min) {
            return Err(SweetError::Parameter(format!(
                "need Δ ≥ Δ_min > 0, got Δ = {margin}, Δ_min = {margin_min}"
            )));
        }
        if params.episode_cap == 0 {
            return Err(SweetError::Parameter("episode cap must be positive".into()));
        }
        if !(params.uncertainty_scale >= 0.0) {
            return Err(SweetError::Parameter("uncertainty scale must be ≥ 0".into()));
        }
        let frak_u = (epsilon / 2.0)
            .min(margin_min / 2.0)
            .min(epsilon * margin_min / 5.0)
            .min(tau / 4.0)
            .min(kappa / 16.0);
        let termination = margin * frak_u / 2.0;
        let (n_max, beta) = iteration_bound(states, actions, horizon, delta, margin, frak_u, kappa)?;
        Ok(TabularConfig {
            states,
            actions,
            horizon,
            params,
            beta,
            beta0: 8.0 * beta,
            frak_u,
            termination,
            n_max,
            alpha_h: 1.0 + 1.0 / horizon as f64,
            kappa_tilde: kappa / 2.0,
            epsilon0: 0.0,
            t: 0,
        })
    }

    pub fn safe_set(&self, baseline: MarkovPolicy) -> Result<SafeSetSpec> {
        SafeSetSpec::new(
            self.params.tau,
            self.epsilon0,
            self.t,
            self.kappa_tilde,
            self.params.kappa,
            baseline,
        )
    }

    /// `U(P̂, ·)` for a bonus table.
    pub fn uncertainty(&self, bonus: StepTable) -> Result<Uncertainty> {
        Uncertainty::sqrt(4.0 * self.params.uncertainty_scale, bonus, self.alpha_h)
    }
}

/// Solves `N = C(β(N))·ln(N + 1)` where `C` collects both coefficients of the
/// iteration bound; `β` is re-evaluated at each new `N` until `N` settles.
fn iteration_bound(
    states: usize,
    actions: usize,
    horizon: usize,
    delta: f64,
    margin: f64,
    frak_u: f64,
    kappa: f64,
) -> Result<(f64, f64)> {
    let e3 = std::f64::consts::E.powi(3);
    let hsa = (horizon * states * actions) as f64;
    let coefficient = |beta: f64| {
        2f64.powi(10) * e3 * 900.0 * beta * hsa / (margin * frak_u).powi(2) + 2f64.powi(15) * e3 * beta * hsa / kappa.powi(2)
    };
    let mut n = solve_log_fixed_point(coefficient(beta(states, actions, horizon, delta, 1.0)))?;
    for _ in 0..1000 {
        let b = beta(states, actions, horizon, delta, n);
        let next = solve_log_fixed_point(coefficient(b))?;
        if (next - n).abs() <= 1e-10 * next {
            return Ok((next, beta(states, actions, horizon, delta, next)));
        }
        n = next;
    }
    Err(SweetError::Numeric("iteration bound did not settle".into()))
}

/// Runs the tabular exploration loop against a sampling-only environment.
/// `rng` draws mixture vertices; transitions come from `env`.
pub fn run_exploration<R: Rng>(
    env: &mut dyn EpisodeSampler,
    cost: &StepTable,
    baseline: &MarkovPolicy,
    config: &TabularConfig,
    rng: &mut R,
) -> Result<Exploration> {
    let (states, actions, horizon) = (env.states(), env.actions(), env.horizon());
    if (horizon, states, actions) != (config.horizon, config.states, config.actions) {
        return Err(SweetError::Shape("environment and configuration disagree on S, A or H".into()));
    }
    if cost.shape() != (horizon, states, actions) || baseline.table().shape() != (horizon, states, actions) {
        return Err(SweetError::Shape("cost or baseline shape does not match the environment".into()));
    }
    let spec = config.safe_set(baseline.clone())?;
    let initial = env.initial_state();
    let mut counts = Counts::new(states, actions, horizon);
    let mut log = RunLog::new(config.n_max, config.params.episode_cap);
    let baseline_mix = MixturePolicy::single(baseline.clone());
    let mut current = baseline_mix.clone();
    let mut last = None;
    for n in 1..=config.params.episode_cap {
        let index = log.push_policy(&current);
        let traj = env.run_episode(current.episode_policy(rng));
        counts.record(&traj)?;
        let model = estimate_model(&counts, initial)?;
        let b = bonus(&counts, config.beta0);
        let unc = config.uncertainty(b.clone())?;
        let gate = safe_set_gate(&model, cost, &unc, &spec)?;
        let mut record = EpisodeRecord::new(n, gate.mode);
        record.baseline_load = gate.baseline_load;
        record.policies = vec![index];
        match gate.mode {
            SafeSetMode::BaselineOnly => {
                current = baseline_mix.clone();
                record.uncertainty = gate.baseline_uncertainty;
            }
            SafeSetMode::Relaxed => {
                let options = SolverOptions {
                    seed: n as u64,
                    ..SolverOptions::default()
                };
                let result = max_uncertainty_safe(&model, cost, &unc, spec.relaxed_budget(), baseline, &options)?;
                record.uncertainty = unc.value(&model, &result.markov)?;
                record.solver_status = result.status;
                record.residual = result.residual;
                current = result.mixture;
                record.terminated = record.uncertainty <= config.termination;
            }
        }
        let done = record.terminated;
        log.records.push(record);
        last = Some((model, b, unc));
        if done {
            log.n_epsilon = Some(n);
            break;
        }
    }
    let (model, bonus, uncertainty) = last.expect("episode cap is positive");
    Ok(Exploration {
        model,
        bonus,
        uncertainty,
        policy: current,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::SimulatedEnv;
    use crate::rng::seeded;

    fn traj(states: Vec<usize>, actions: Vec<usize>) -> Trajectory {
        Trajectory { states, actions }
    }

    #[test]
    fn counts_update_and_conserve() {
        let c0 = Counts::new(2, 2, 2);
        let t = traj(vec![0, 1, 0], vec![1, 0]);
        let c1 = update_counts(&c0, &t).unwrap();
        assert_eq!(c1.n_sa(0, 0, 1), 1);
        assert_eq!(c1.n_sas(0, 0, 1, 1), 1);
        assert_eq!(c1.n_sa(1, 1, 0), 1);
        let c2 = update_counts(&c1, &t).unwrap();
        assert_eq!(c2.n_sa(0, 0, 1), 2);
        assert_eq!(c0.n_sa(0, 0, 1), 0);
    }

    #[test]
    fn estimate_uses_ratio_only_above_one_visit() {
        let mut c = Counts::new(2, 1, 1);
        assert_eq!(estimate_model(&c, 0).unwrap().next_dist(0, 0, 0), &[0.5, 0.5]);
        c.record(&traj(vec![0, 0], vec![0])).unwrap();
        assert_eq!(estimate_model(&c, 0).unwrap().next_dist(0, 0, 0), &[0.5, 0.5]);
        for _ in 0..2 {
            c.record(&traj(vec![0, 0], vec![0])).unwrap();
        }
        c.record(&traj(vec![0, 1], vec![0])).unwrap();
        assert_eq!(estimate_model(&c, 0).unwrap().next_dist(0, 0, 0), &[0.75, 0.25]);
    }

    #[test]
    fn bonus_floor_and_ratio() {
        let mut c = Counts::new(1, 1, 2);
        let b = bonus(&c, 3.0);
        assert_eq!(b.get(0, 0, 0), 6.0);
        for _ in 0..6 {
            c.record(&traj(vec![0, 0, 0], vec![0, 0])).unwrap();
        }
        assert_eq!(bonus(&c, 3.0).get(1, 0, 0), 1.0);
    }

    #[test]
    fn log_fixed_point() {
        let n = solve_log_fixed_point(10.0).unwrap();
        assert!((n - 10.0 * (n + 1.0).ln()).abs() < 1e-8);
        assert!(solve_log_fixed_point(1.0).is_err());
        assert!(solve_log_fixed_point(0.5).is_err());
    }

    #[test]
    fn constraint_free_constants() {
        let eps = 0.3;
        let cfg = TabularConfig::new(2, 2, 2, TabularParams::new(eps, 0.1, 1.0, 1.0, 1.0, 1.0)).unwrap();
        let expect = (eps / 2.0).min(0.5).min(eps / 5.0).min(0.25).min(1.0 / 16.0);
        assert_eq!(cfg.frak_u, expect);
        assert_eq!(cfg.termination, expect / 2.0);
        assert_eq!(cfg.alpha_h, 1.5);
        assert_eq!(cfg.kappa_tilde, 0.5);
        assert_eq!(cfg.beta0, 8.0 * cfg.beta);
        assert!(cfg.n_max > 1e6);
        assert!(TabularConfig::new(2, 2, 2, TabularParams::new(2.0, 0.1, 1.0, 1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn baseline_only_run_executes_baseline() {
        let mdp = TabularMDP::uniform(2, 2, 2, 0).unwrap();
        let cost = StepTable::from_fn(2, 2, 2, |_, _, _| 0.2);
        let baseline = MarkovPolicy::uniform(2, 2, 2);
        let mut params = TabularParams::new(0.1, 0.1, 0.5, 0.1, 0.1, 0.1);
        params.episode_cap = 30;
        let cfg = TabularConfig::new(2, 2, 2, params).unwrap();
        let mut env = SimulatedEnv::new(mdp, seeded(1));
        let out = run_exploration(&mut env, &cost, &baseline, &cfg, &mut seeded(2)).unwrap();
        assert_eq!(out.log.records.len(), 30);
        assert_eq!(out.log.policies.len(), 1);
        assert!(out.log.records.iter().all(|r| r.mode == SafeSetMode::BaselineOnly));
        assert!(!out.log.terminated());
    }
}
