//! Safe exploration with a finite class of factorized models
//! `P_h(s'|s,a) = ⟨φ_h(s,a), μ_h(s')⟩`.
//!
//! Each iteration runs `H` episodes, the `h`-th randomizing actions at steps
//! `h−1` and `h`; per-step maximum likelihood picks `(φ̂_h, μ̂_h)` from the
//! class, a feature covariance gives the elliptic bonus, and the uncertainty
//! of a policy is `V̄(P̂, π, b̂) + sqrt(Ã·ζ/n)`. States stay finite so that
//! every executed policy can be audited exactly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::format::{check_header, FORMAT_VERSION};
use crate::mdp::{greedy_version, ActingPolicy, EpisodeSampler, MarkovPolicy, MixturePolicy, StepTable, TabularMDP};
use crate::runlog::{EpisodeRecord, Exploration, RunLog};
use crate::solver::{max_uncertainty_safe, safe_set_gate, SafeSetMode, SafeSetSpec, SolverOptions};
use crate::uncertainty::{PolicyFunctional, Uncertainty};

const NORM_TOL: f64 = 1e-12;
const ROW_TOL: f64 = 1e-10;
/// Largest accepted condition number of a covariance matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Factorized kernel over finite states: `φ` indexed `[h][s][a][k]`, `μ`
/// indexed `[h][s'][k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LowRankWire", into = "LowRankWire")]
pub struct LowRankModel {
    states: usize,
    actions: usize,
    horizon: usize,
    dim: usize,
    phi: Vec<f64>,
    mu: Vec<f64>,
}

impl LowRankModel {
    pub fn new(states: usize, actions: usize, horizon: usize, dim: usize, phi: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 || dim == 0 {
            return Err(SweetError::Shape("S, A, H and d must be positive".into()));
        }
        if phi.len() != horizon * states * actions * dim || mu.len() != horizon * states * dim {
            return Err(SweetError::Shape(format!(
                "feature tables have {} and {} entries for S={states}, A={actions}, H={horizon}, d={dim}",
                phi.len(),
                mu.len()
            )));
        }
        let model = LowRankModel {
            states,
            actions,
            horizon,
            dim,
            phi,
            mu,
        };
        for h in 0..horizon {
            for s in 0..states {
                for a in 0..actions {
                    let f = model.phi(h, s, a);
                    let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if !(norm <= 1.0 + NORM_TOL) {
                        return Err(SweetError::Invariant(format!("‖φ_{h}({s},{a})‖ = {norm} exceeds 1")));
                    }
                    let row = model.raw_row(h, s, a);
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|&p| !(p >= -ROW_TOL)) || (sum - 1.0).abs() > ROW_TOL {
                        return Err(SweetError::Invariant(format!(
                            "⟨φ_{h}({s},{a}), μ_{h}⟩ is not a distribution (sum {sum})"
                        )));
                    }
                }
            }
        }
        Ok(model)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = ((h * self.states + s) * self.actions + a) * self.dim;
        &self.phi[i..i + self.dim]
    }

    pub fn mu(&self, h: usize, next: usize) -> &[f64] {
        let i = (h * self.states + next) * self.dim;
        &self.mu[i..i + self.dim]
    }

    /// `⟨φ_h(s,a), μ_h(s')⟩`.
    pub fn prob(&self, h: usize, s: usize, a: usize, next: usize) -> f64 {
        self.phi(h, s, a).iter().zip(self.mu(h, next)).map(|(x, y)| x * y).sum()
    }

    fn raw_row(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        (0..self.states).map(|next| self.prob(h, s, a, next)).collect()
    }

    /// Row of step `h`, with rounding noise removed (negatives clamped, then
    /// renormalized).
    pub fn row(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let mut row = self.raw_row(h, s, a);
        row.iter_mut().for_each(|p| *p = p.max(0.0));
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);
        row
    }

    /// Induced tabular kernel.
    pub fn to_mdp(&self, initial_state: usize) -> Result<TabularMDP> {
        TabularMDP::from_fn(self.states, self.actions, self.horizon, initial_state, |h, s, a| self.row(h, s, a))
    }

    /// Tabular kernel whose step `h` comes from `class[choice[h]]`.
    pub fn assemble(class: &[LowRankModel], choice: &[usize], initial_state: usize) -> Result<TabularMDP> {
        let first = class.first().ok_or_else(|| SweetError::Parameter("empty model class".into()))?;
        if choice.len() != first.horizon {
            return Err(SweetError::Shape("one class index per step is required".into()));
        }
        TabularMDP::from_fn(first.states, first.actions, first.horizon, initial_state, |h, s, a| {
            class[choice[h]].row(h, s, a)
        })
    }

    fn same_shape(&self, other: &LowRankModel) -> bool {
        (self.states, self.actions, self.horizon, self.dim) == (other.states, other.actions, other.horizon, other.dim)
    }
}

#[derive(Serialize, Deserialize)]
struct LowRankWire {
    kind: String,
    version: u32,
    states: usize,
    actions: usize,
    horizon: usize,
    dim: usize,
    /// `[h][s][a][k]`.
    phi: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[h][s'][k]`.
    mu: Vec<Vec<Vec<f64>>>,
}

impl From<LowRankModel> for LowRankWire {
    fn from(m: LowRankModel) -> Self {
        LowRankWire {
            kind: "lowrank_model".into(),
            version: FORMAT_VERSION,
            states: m.states,
            actions: m.actions,
            horizon: m.horizon,
            dim: m.dim,
            phi: (0..m.horizon)
                .map(|h| {
                    (0..m.states)
                        .map(|s| (0..m.actions).map(|a| m.phi(h, s, a).to_vec()).collect())
                        .collect()
                })
                .collect(),
            mu: (0..m.horizon)
                .map(|h| (0..m.states).map(|s| m.mu(h, s).to_vec()).collect())
                .collect(),
        }
    }
}

impl TryFrom<LowRankWire> for LowRankModel {
    type Error = SweetError;

    fn try_from(w: LowRankWire) -> Result<Self> {
        check_header(&w.kind, "lowrank_model", w.version)?;
        let phi: Vec<f64> = w.phi.into_iter().flatten().flatten().flatten().collect();
        let mu: Vec<f64> = w.mu.into_iter().flatten().flatten().collect();
        LowRankModel::new(w.states, w.actions, w.horizon, w.dim, phi, mu)
    }
}

/// Finite candidate set; `truth_index` is known to the harness only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelClass {
    pub candidates: Vec<LowRankModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_index: Option<usize>,
}

impl ModelClass {
    pub fn new(candidates: Vec<LowRankModel>, truth_index: Option<usize>) -> Result<Self> {
        let first = candidates.first().ok_or_else(|| SweetError::Parameter("empty model class".into()))?;
        if candidates.iter().any(|c| !c.same_shape(first)) {
            return Err(SweetError::Shape("class candidates differ in S, A, H or d".into()));
        }
        if truth_index.is_some_and(|i| i >= candidates.len()) {
            return Err(SweetError::Parameter("truth index out of range".into()));
        }
        Ok(ModelClass {
            candidates,
            truth_index,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Copy without the truth label, as handed to the learner.
    pub fn unlabeled(&self) -> ModelClass {
        ModelClass {
            candidates: self.candidates.clone(),
            truth_index: None,
        }
    }
}

/// `ln P_h(s'|s,a)` under one candidate; `−∞` for impossible transitions.
pub fn log_likelihood(model: &LowRankModel, h: usize, (s, a, next): (usize, usize, usize)) -> f64 {
    let p = model.prob(h, s, a, next);
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn select(scores: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in scores.iter().enumerate() {
        if v > f64::NEG_INFINITY && best.is_none_or(|b| v > b.1) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0).ok_or_else(|| {
        SweetError::DegenerateData("every candidate assigns zero likelihood to some transition".into())
    })
}

/// Maximum-likelihood candidate for step `h`; ties go to the lowest index.
pub fn mle(dataset: &[(usize, usize, usize)], class: &ModelClass, h: usize) -> Result<usize> {
    let scores: Vec<f64> = class
        .candidates
        .iter()
        .map(|m| dataset.iter().map(|&t| log_likelihood(m, h, t)).sum())
        .collect();
    select(&scores)
}

/// `Σ φφᵀ + λ I`, symmetric positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatrix {
    matrix: DMatrix<f64>,
}

impl CovMatrix {
    /// Accumulates `Σ_i f_i f_iᵀ + λ I` in the order given.
    pub fn from_features<'a>(dim: usize, features: impl IntoIterator<Item = &'a [f64]>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(SweetError::Parameter(format!("lambda = {lambda} must be positive")));
        }
        let mut matrix = DMatrix::<f64>::identity(dim, dim) * lambda;
        for f in features {
            if f.len() != dim {
                return Err(SweetError::Shape(format!("feature of length {} for d = {dim}", f.len())));
            }
            let v = DVector::from_column_slice(f);
            matrix += &v * v.transpose();
        }
        Ok(CovMatrix { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// `sqrt(xᵀ U⁻¹ x)` through a Cholesky solve.
    pub fn inverse_norm(&self, x: &[f64]) -> Result<f64> {
        let ev = self.eigenvalues();
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            return Err(SweetError::Numeric(format!(
                "covariance has eigenvalues in [{lo:e}, {hi:e}]; refusing condition number above {MAX_CONDITION:e}"
            )));
        }
        let chol = self
            .matrix
            .clone()
            .cholesky()
            .ok_or_else(|| SweetError::Numeric("covariance is not positive definite".into()))?;
        let v = DVector::from_column_slice(x);
        let y = chol.solve(&v);
        Ok(v.dot(&y).max(0.0).sqrt())
    }
}

/// `Û_h` from the current features evaluated on every stored `(s, a)`.
pub fn update_covariance(phi_hat: &LowRankModel, h: usize, samples: &[(usize, usize)], lambda: f64) -> Result<CovMatrix> {
    CovMatrix::from_features(phi_hat.dim(), samples.iter().map(|&(s, a)| phi_hat.phi(h, s, a)), lambda)
}

/// `min{α̂·‖φ̂_h(s,a)‖_{Û⁻¹}, 1}` for every `(s, a)`, row-major in `a`.
pub fn elliptic_bonus(phi_hat: &LowRankModel, h: usize, cov: &CovMatrix, alpha_hat: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(phi_hat.states() * phi_hat.actions());
    for s in 0..phi_hat.states() {
        for a in 0..phi_hat.actions() {
            out.push((alpha_hat * cov.inverse_norm(phi_hat.phi(h, s, a))?).min(1.0));
        }
    }
    Ok(out)
}

/// Inputs for [`LowRankConfig::new`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowRankParams {
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    pub kappa: f64,
    pub margin: f64,
    pub margin_min: f64,
    /// Unnamed universal constant of the concentration bounds.
    pub beta3: f64,
    pub iteration_cap: usize,
}

impl LowRankParams {
    pub fn new(epsilon: f64, delta: f64, tau: f64, kappa: f64, margin: f64, margin_min: f64) -> Self {
        LowRankParams {
            epsilon,
            delta,
            tau,
            kappa,
            margin,
            margin_min,
            beta3: 1.0,
            iteration_cap: 2000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowRankConfig {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub dim: usize,
    pub class_size: usize,
    pub params: LowRankParams,
    pub epsilon0: f64,
    pub t: usize,
    pub kappa_tilde: f64,
    pub a_tilde: f64,
    pub zeta: f64,
    pub alpha_hat: f64,
    pub lambda_n: f64,
    pub frak_u: f64,
    pub termination: f64,
    pub n_max: f64,
}

impl LowRankConfig {
    pub fn new(
        states: usize,
        actions: usize,
        horizon: usize,
        dim: usize,
        class_size: usize,
        params: LowRankParams,
    ) -> Result<Self> {
        let LowRankParams {
            epsilon,
            delta,
            tau,
            kappa,
            margin,
            margin_min,
            beta3,
            iteration_cap,
        } = params;
        if states == 0 || actions == 0 || horizon == 0 || dim == 0 || class_size == 0 {
            return Err(SweetError::Parameter("S, A, H, d and the class size must be positive".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0) {
            return Err(SweetError::Parameter("epsilon and delta must lie in (0, 1)".into()));
        }
        if !(tau > 0.0 && tau <= 1.0) || !(kappa > 0.0 && kappa <= tau) {
            return Err(SweetError::Parameter(format!("need 0 < kappa ≤ tau ≤ 1, got tau = {tau}, kappa = {kappa}")));
        }
        if !(margin_min > 0.0 && margin >= margin_min) || !(beta3 > 0.0) || iteration_cap == 0 {
            return Err(SweetError::Parameter("need Δ ≥ Δ_min > 0, beta3 > 0 and a positive cap".into()));
        }
        let epsilon0 = kappa / 6.0;
        let a_tilde = actions as f64 / epsilon0;
        let frak_u = (epsilon / 2.0)
            .min(margin_min / 2.0)
            .min(epsilon * margin_min / 5.0)
            .min(tau / 6.0)
            .min(kappa / 24.0);
        let termination = margin * frak_u / 3.0;
        let h = horizon as f64;
        let size = class_size as f64;
        let zeta_of = |n: f64| (2.0 * size * size * n * h / delta).ln();
        let d4 = (dim as f64).powi(4);
        let a2 = (actions as f64).powi(2);
        let k = 2f64.powi(10) * beta3 * h * h * d4 * a2 / (kappa * termination).powi(2)
            + 2f64.powi(12) * 9.0 * beta3 * h * h * d4 * a2 / kappa.powi(4);
        // N = k·ζ(N)²
        let mut n_max = k;
        let mut settled = false;
        for _ in 0..10_000 {
            let next = k * zeta_of(n_max).powi(2);
            if (next - n_max).abs() <= 1e-10 * next {
                n_max = next;
                settled = true;
                break;
            }
            n_max = next;
        }
        if !settled {
            return Err(SweetError::Numeric("iteration bound did not settle".into()));
        }
        let zeta = zeta_of(n_max);
        let alpha_hat = 5.0 * (beta3 * zeta * (a_tilde + (dim * dim) as f64)).sqrt();
        let lambda_n = beta3 * dim as f64 * (2.0 * n_max * h * size / delta).ln();
        Ok(LowRankConfig {
            states,
            actions,
            horizon,
            dim,
            class_size,
            params,
            epsilon0,
            t: 2,
            kappa_tilde: kappa / 3.0,
            a_tilde,
            zeta,
            alpha_hat,
            lambda_n,
            frak_u,
            termination,
            n_max,
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

    /// `U⁽ⁿ⁾ = V̄(P̂, ·, b̂) + sqrt(Ã·ζ/n)`.
    pub fn uncertainty(&self, bonus: StepTable, n: usize) -> Result<Uncertainty> {
        Uncertainty::shifted((self.a_tilde * self.zeta / n as f64).sqrt(), bonus, 1.0)
    }
}

/// Steps randomized in the `j`-th episode of an iteration (0-based): `j − 1`
/// and `j`, the former omitted at `j = 0`.
pub fn greedy_steps(j: usize) -> Vec<usize> {
    if j == 0 {
        vec![0]
    } else {
        vec![j - 1, j]
    }
}

fn greedy_mixture(mix: &MixturePolicy, epsilon0: f64, steps: &[usize]) -> Result<MixturePolicy> {
    let vertices = mix
        .vertices()
        .iter()
        .map(|v| greedy_version(v, epsilon0, steps))
        .collect::<Result<Vec<_>>>()?;
    MixturePolicy::new(vertices, mix.weights().to_vec())
}

/// Runs the low-rank exploration loop. The class must not carry the truth
/// label; `rng` draws mixture vertices.
pub fn run_exploration_lowrank<R: Rng>(
    env: &mut dyn EpisodeSampler,
    class: &ModelClass,
    cost: &StepTable,
    baseline: &MarkovPolicy,
    config: &LowRankConfig,
    rng: &mut R,
) -> Result<Exploration> {
    let (states, actions, horizon) = (env.states(), env.actions(), env.horizon());
    let first = class.candidates.first().ok_or_else(|| SweetError::Parameter("empty model class".into()))?;
    if (first.states(), first.actions(), first.horizon()) != (states, actions, horizon)
        || (config.states, config.actions, config.horizon) != (states, actions, horizon)
    {
        return Err(SweetError::Shape("environment, class and configuration disagree on S, A or H".into()));
    }
    if cost.shape() != (horizon, states, actions) || baseline.table().shape() != (horizon, states, actions) {
        return Err(SweetError::Shape("cost or baseline shape does not match the environment".into()));
    }
    let spec = config.safe_set(baseline.clone())?;
    let initial = env.initial_state();
    let mut log = RunLog::new(config.n_max, config.params.iteration_cap);
    let baseline_mix = MixturePolicy::single(baseline.clone());
    let mut current = baseline_mix.clone();
    // D_h and running log-likelihoods per (h, candidate)
    let mut loglik = vec![vec![0.0f64; class.len()]; horizon];
    let mut cov_samples: Vec<Vec<(usize, usize)>> = vec![Vec::new(); horizon];
    let mut last = None;
    for n in 1..=config.params.iteration_cap {
        let mut executed = Vec::with_capacity(horizon);
        for j in 0..horizon {
            let greedy = greedy_mixture(&current, config.epsilon0, &greedy_steps(j))?;
            executed.push(log.push_policy(&greedy));
            let traj = env.run_episode(greedy.episode_policy(rng));
            let t = (traj.states[j], traj.actions[j], traj.states[j + 1]);
            for (score, model) in loglik[j].iter_mut().zip(&class.candidates) {
                *score += log_likelihood(model, j, t);
            }
            // episode j randomizes step j−1: its (s, a) there feeds Û_{j−1}
            if j > 0 {
                cov_samples[j - 1].push((traj.states[j - 1], traj.actions[j - 1]));
            }
        }
        let choice = loglik.iter().map(|scores| select(scores)).collect::<Result<Vec<_>>>()?;
        let model = LowRankModel::assemble(&class.candidates, &choice, initial)?;
        let mut bonus = StepTable::zeros(horizon, states, actions);
        let mut min_eig = Vec::with_capacity(horizon);
        // the last step has no designated episode and keeps a zero bonus
        for h in 0..horizon.saturating_sub(1) {
            let phi_hat = &class.candidates[choice[h]];
            let cov = update_covariance(phi_hat, h, &cov_samples[h], config.lambda_n)?;
            min_eig.push(cov.min_eigenvalue());
            let b = elliptic_bonus(phi_hat, h, &cov, config.alpha_hat)?;
            for s in 0..states {
                for a in 0..actions {
                    bonus.set(h, s, a, b[s * actions + a]);
                }
            }
        }
        let unc = config.uncertainty(bonus.clone(), n)?;
        let gate = safe_set_gate(&model, cost, &unc, &spec)?;
        let mut record = EpisodeRecord::new(n, gate.mode);
        record.baseline_load = gate.baseline_load;
        record.policies = executed;
        record.mle_index = choice;
        record.min_eig = min_eig;
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
        last = Some((model, bonus, unc));
        if done {
            log.n_epsilon = Some(n);
            break;
        }
    }
    let (model, bonus, uncertainty) = last.expect("iteration cap is positive");
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
    use crate::format::{from_text, to_text};

    /// One-hot features over (s, a) with d = S·A.
    fn one_hot(states: usize, actions: usize, horizon: usize, kernel: &TabularMDP) -> LowRankModel {
        let dim = states * actions;
        let mut phi = vec![0.0; horizon * dim * dim];
        let mut mu = vec![0.0; horizon * states * dim];
        for h in 0..horizon {
            for s in 0..states {
                for a in 0..actions {
                    let k = s * actions + a;
                    phi[((h * states + s) * actions + a) * dim + k] = 1.0;
                    for (next, p) in kernel.next_dist(h, s, a).iter().enumerate() {
                        mu[(h * states + next) * dim + k] = *p;
                    }
                }
            }
        }
        LowRankModel::new(states, actions, horizon, dim, phi, mu).unwrap()
    }

    #[test]
    fn one_hot_reproduces_kernel() {
        let mdp = TabularMDP::from_fn(2, 2, 1, 0, |_, s, a| if s == a { vec![0.3, 0.7] } else { vec![1.0, 0.0] }).unwrap();
        let m = one_hot(2, 2, 1, &mdp);
        assert!(m.to_mdp(0).unwrap().max_kernel_diff(&mdp) < 1e-15);
        let text = to_text(&m).unwrap();
        assert_eq!(from_text::<LowRankModel>(&text, "mem").unwrap(), m);
    }

    #[test]
    fn rejects_invalid_factorization() {
        assert!(LowRankModel::new(2, 1, 1, 1, vec![1.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(LowRankModel::new(2, 1, 1, 1, vec![1.5, 1.0], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn mle_ties_and_degenerate_data() {
        let a = LowRankModel::new(2, 1, 1, 1, vec![1.0, 1.0], vec![1.0, 0.0]).unwrap();
        let b = LowRankModel::new(2, 1, 1, 1, vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let class = ModelClass::new(vec![a.clone(), b], None).unwrap();
        assert_eq!(mle(&[], &class, 0).unwrap(), 0);
        assert_eq!(mle(&[(0, 0, 1)], &class, 0).unwrap(), 1);
        assert_eq!(mle(&[(0, 0, 0); 3], &class, 0).unwrap(), 0);
        let only_a = ModelClass::new(vec![a], None).unwrap();
        assert!(matches!(mle(&[(0, 0, 1)], &only_a, 0), Err(SweetError::DegenerateData(_))));
    }

    #[test]
    fn covariance_and_bonus() {
        let cov = CovMatrix::from_features(3, std::iter::empty(), 2.0).unwrap();
        assert_eq!(cov.matrix(), &(DMatrix::identity(3, 3) * 2.0));
        let e1 = [1.0, 0.0, 0.0];
        let cov = CovMatrix::from_features(3, [&e1[..]], 1.0).unwrap();
        assert_eq!(cov.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 1.0])));
        let unit = CovMatrix::from_features(3, std::iter::empty(), 1.0).unwrap();
        assert_eq!(unit.inverse_norm(&e1).unwrap(), 1.0);
        assert!((0.25 * unit.inverse_norm(&e1).unwrap() - 0.25).abs() < 1e-15);
        let bad = CovMatrix::from_features(2, [&[1e7, 0.0][..]], 1e-6).unwrap();
        assert!(matches!(bad.inverse_norm(&[1.0, 0.0]), Err(SweetError::Numeric(_))));
    }

    #[test]
    fn constants_follow_definitions() {
        let cfg = LowRankConfig::new(5, 3, 3, 2, 4, LowRankParams::new(0.1, 0.1, 0.5, 0.1, 0.2, 0.2)).unwrap();
        assert!((cfg.epsilon0 - 0.1 / 6.0).abs() < 1e-15);
        assert!((cfg.a_tilde - 180.0).abs() < 1e-9);
        assert_eq!(cfg.t, 2);
        assert!((cfg.epsilon0 * 2.0 + cfg.kappa_tilde - 2.0 * 0.1 / 3.0).abs() < 1e-15);
        let spec = cfg.safe_set(MarkovPolicy::uniform(3, 5, 3)).unwrap();
        assert!((spec.gate_threshold() - (0.5 - 2.0 * 0.1 / 3.0)).abs() < 1e-15);
        assert!((spec.relaxed_budget() - (0.5 - 0.1 / 3.0)).abs() < 1e-15);
        let zeta = (2.0 * 16.0 * cfg.n_max * 3.0 / 0.1f64).ln();
        assert!((cfg.zeta - zeta).abs() < 1e-12);
    }

    #[test]
    fn greedy_step_boundary() {
        assert_eq!(greedy_steps(0), vec![0]);
        assert_eq!(greedy_steps(2), vec![1, 2]);
    }
}
