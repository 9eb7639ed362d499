//! End-to-end runs: instance generation, exploration against a simulator,
//! exact auditing with the true kernel, planning tasks compared with the CMDP
//! oracle, and the error-bound check.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SweetError};
use crate::format::write_file;
use crate::harness::config::{ExperimentConfig, Mode, PlanningTask, TaskCost};
use crate::harness::envgen::{gen_env, random_utility, Instance};
use crate::lowrank::{run_exploration_lowrank, LowRankConfig, LowRankParams};
use crate::mdp::{min_cost_value, policy_value, MixturePolicy, SimulatedEnv, StepTable, TabularMDP};
use crate::oracle::cmdp_optimal;
use crate::rng::{random_policy, stream};
use crate::runlog::{write_csv, EpisodeRecord, Exploration};
use crate::solver::{plan, SolveStatus, SolverOptions};
use crate::tabular::{run_exploration, TabularConfig, TabularParams};
use crate::uncertainty::{PolicyFunctional, Uncertainty};

/// Slack for floating-point noise in exact safety audits.
pub const AUDIT_TOL: f64 = 1e-12;
/// Constraint slack accepted for planned policies.
pub const PLAN_TOL: f64 = 1e-6;

// stream ids under the seed
const STREAM_ENV: u64 = 1;
const STREAM_LEARNER: u64 = 2;
const STREAM_TASKS: u64 = 3;
const STREAM_CHECK: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub name: String,
    pub tau: f64,
    pub status: SolveStatus,
    pub residual: f64,
    /// `V_{P̂,c*}(π̄) + U(π̄)`.
    pub empirical_constraint: f64,
    /// `V_{P*,c*}(π̄)`.
    pub true_constraint: f64,
    pub value: f64,
    pub optimal_value: f64,
    pub gap: f64,
    pub safe: bool,
    pub within_epsilon: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundCheck {
    pub checks: usize,
    pub violations: usize,
    /// Largest `|V_{P̂,u} − V_{P*,u}| − U` observed.
    pub worst_excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub terminated: bool,
    pub n_epsilon: Option<usize>,
    pub episodes: usize,
    pub violations: usize,
    pub max_exact_cost: f64,
    pub final_uncertainty: f64,
    pub termination_threshold: f64,
    pub theoretical_n: f64,
    pub cap: usize,
    pub margin: f64,
    pub tasks: Vec<TaskReport>,
    pub error_bound: ErrorBoundCheck,
    /// Low-rank only: fraction of steps whose final MLE choice is the truth.
    pub mle_truth_fraction: Option<f64>,
}

impl SeedReport {
    /// Planning criterion: terminated, and every task safe and ε-optimal.
    pub fn planning_pass(&self) -> bool {
        self.terminated
            && self
                .tasks
                .iter()
                .all(|t| t.safe && t.within_epsilon && t.status != SolveStatus::Infeasible)
    }
}

/// Final learner state handed to planning.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub model: TabularMDP,
    pub uncertainty: Uncertainty,
    pub policy: MixturePolicy,
}

pub struct SeedArtifacts {
    pub report: SeedReport,
    pub records: Vec<EpisodeRecord>,
    pub policies: Vec<MixturePolicy>,
    pub instance: Instance,
    pub estimate: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub report: Option<SeedReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub mode: Mode,
    pub seeds: Vec<SeedOutcome>,
    pub completed: usize,
    pub terminated: usize,
    pub total_violations: usize,
    pub max_violations: usize,
    pub max_gap: Option<f64>,
    pub median_n_epsilon: Option<f64>,
    pub planning_pass: usize,
    pub planning_pass_rate: f64,
    pub error_bound_seed_fraction: f64,
}

impl ReportSummary {
    /// Every seed finished and no executed policy violated the constraint.
    pub fn all_audits_pass(&self) -> bool {
        self.completed == self.seeds.len() && self.total_violations == 0
    }
}

/// True constraint value of a mixture.
pub fn mixture_value(mdp: &TabularMDP, mix: &MixturePolicy, utility: &StepTable) -> Result<f64> {
    let mut v = 0.0;
    for (p, w) in mix.vertices().iter().zip(mix.weights()) {
        v += w * policy_value(mdp, p, utility)?;
    }
    Ok(v)
}

/// Fills `exact_cost` and `violation` of every record from the true kernel.
/// Returns the number of violating records.
pub fn audit(
    records: &mut [EpisodeRecord],
    policies: &[MixturePolicy],
    mdp: &TabularMDP,
    cost: &StepTable,
    tau: f64,
) -> Result<usize> {
    let mut cache: HashMap<usize, f64> = HashMap::new();
    let mut violations = 0;
    for r in records.iter_mut() {
        let mut worst = f64::NEG_INFINITY;
        for &i in &r.policies {
            let mix = policies
                .get(i)
                .ok_or_else(|| SweetError::Invariant(format!("record {} names unknown policy {i}", r.episode)))?;
            let v = match cache.get(&i) {
                Some(&v) => v,
                None => {
                    let v = mixture_value(mdp, mix, cost)?;
                    cache.insert(i, v);
                    v
                }
            };
            worst = worst.max(v);
        }
        let bad = worst > tau + AUDIT_TOL;
        r.exact_cost = Some(worst);
        r.violation = Some(bad);
        violations += usize::from(bad);
    }
    Ok(violations)
}

/// Random task cost with `min_π V_{c*} < τ*`, or the exploration cost.
fn task_cost(task: &PlanningTask, instance: &Instance, rng: &mut crate::rng::SweetRng) -> Result<StepTable> {
    match task.cost {
        TaskCost::Exploration => Ok(instance.cost.clone()),
        TaskCost::Random => {
            for _ in 0..100 {
                let c = random_utility(&instance.mdp, rng)?;
                if min_cost_value(&instance.mdp, &c)?.0 < task.tau {
                    return Ok(c);
                }
            }
            Err(SweetError::Generation(format!("no feasible cost for task `{}`", task.name)))
        }
    }
}

fn run_task(
    task: &PlanningTask,
    instance: &Instance,
    estimate: &Estimate,
    epsilon: f64,
    rng: &mut crate::rng::SweetRng,
) -> Result<TaskReport> {
    let reward = random_utility(&instance.mdp, rng)?;
    let cost = task_cost(task, instance, rng)?;
    let result = plan(
        &estimate.model,
        &reward,
        &cost,
        task.tau,
        &estimate.uncertainty,
        &SolverOptions::default(),
    )?;
    let optimum = cmdp_optimal(&instance.mdp, &reward, &cost, task.tau)?;
    let value = mixture_value(&instance.mdp, &result.mixture, &reward)?;
    let true_constraint = mixture_value(&instance.mdp, &result.mixture, &cost)?;
    let gap = optimum.value - value;
    Ok(TaskReport {
        name: task.name.clone(),
        tau: task.tau,
        status: result.status,
        residual: result.residual,
        empirical_constraint: result.constraint_value,
        true_constraint,
        value,
        optimal_value: optimum.value,
        gap,
        safe: true_constraint <= task.tau + PLAN_TOL,
        within_epsilon: gap <= epsilon,
    })
}

/// `|V_{P̂,u}(π) − V_{P*,u}(π)| ≤ U(π)` over random normalized `u` and random `π`.
pub fn error_bound_check(
    truth: &TabularMDP,
    estimate: &TabularMDP,
    uncertainty: &dyn PolicyFunctional,
    utilities: usize,
    policies: usize,
    rng: &mut crate::rng::SweetRng,
) -> Result<ErrorBoundCheck> {
    let (horizon, states, actions) = truth.table_shape();
    let pis: Vec<_> = (0..policies).map(|_| random_policy(horizon, states, actions, rng)).collect();
    let bounds = pis.iter().map(|p| uncertainty.value(estimate, p)).collect::<Result<Vec<_>>>()?;
    let mut out = ErrorBoundCheck {
        checks: 0,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
    };
    for _ in 0..utilities {
        let u = random_utility(truth, rng)?;
        for (p, bound) in pis.iter().zip(&bounds) {
            let diff = (policy_value(estimate, p, &u)? - policy_value(truth, p, &u)?).abs();
            out.checks += 1;
            out.worst_excess = out.worst_excess.max(diff - bound);
            if diff > bound + AUDIT_TOL {
                out.violations += 1;
            }
        }
    }
    Ok(out)
}

/// Instance of one seed: a stream of the generator seed.
pub fn seed_instance(config: &ExperimentConfig, seed: u64) -> Result<Instance> {
    let mut rng = stream(config.instance.generator_seed, seed);
    gen_env(
        &config.instance,
        config.mode,
        config.algorithm.tau,
        config.algorithm.kappa,
        &mut rng,
    )
}

/// Runs one seed end to end. Deterministic in `(config, seed)`.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedArtifacts> {
    let alg = &config.algorithm;
    let instance = seed_instance(config, seed)?;
    let (horizon, states, actions) = instance.mdp.table_shape();
    if policy_value(&instance.mdp, &instance.baseline, &instance.cost)? > alg.tau - alg.kappa {
        return Err(SweetError::Precondition("baseline violates V_c ≤ τ − κ".into()));
    }
    let margin = instance.meta.margin;
    let mut env = SimulatedEnv::new(instance.mdp.clone(), stream(seed, STREAM_ENV));
    let mut learner_rng = stream(seed, STREAM_LEARNER);
    let (exploration, threshold, truth_index): (Exploration, f64, Option<usize>) = match config.mode {
        Mode::Tabular => {
            let mut params = TabularParams::new(alg.epsilon, alg.delta, alg.tau, alg.kappa, margin, margin);
            params.episode_cap = config.episode_cap();
            params.uncertainty_scale = alg.uncertainty_scale;
            let cfg = TabularConfig::new(states, actions, horizon, params)?;
            let out = run_exploration(&mut env, &instance.cost, &instance.baseline, &cfg, &mut learner_rng)?;
            (out, cfg.termination, None)
        }
        Mode::Lowrank => {
            let class = instance
                .class
                .as_ref()
                .ok_or_else(|| SweetError::Invariant("low-rank instance without a model class".into()))?;
            let mut params = LowRankParams::new(alg.epsilon, alg.delta, alg.tau, alg.kappa, margin, margin);
            params.iteration_cap = config.episode_cap();
            params.beta3 = alg.beta3;
            let cfg = LowRankConfig::new(states, actions, horizon, config.instance.dim, class.len(), params)?;
            let learner_class = class.unlabeled();
            let out = run_exploration_lowrank(
                &mut env,
                &learner_class,
                &instance.cost,
                &instance.baseline,
                &cfg,
                &mut learner_rng,
            )?;
            (out, cfg.termination, class.truth_index)
        }
    };
    let Exploration {
        model,
        uncertainty,
        policy,
        log,
        ..
    } = exploration;
    let mut records = log.records;
    let violations = audit(&mut records, &log.policies, &instance.mdp, &instance.cost, alg.tau)?;
    let estimate = Estimate {
        model,
        uncertainty,
        policy,
    };
    let mut task_rng = stream(seed, STREAM_TASKS);
    let tasks = config
        .planning
        .iter()
        .map(|t| run_task(t, &instance, &estimate, alg.epsilon, &mut task_rng))
        .collect::<Result<Vec<_>>>()?;
    let error_bound = error_bound_check(
        &instance.mdp,
        &estimate.model,
        &estimate.uncertainty,
        config.check_utilities,
        config.check_policies,
        &mut stream(seed, STREAM_CHECK),
    )?;
    let last = records.last().expect("at least one episode");
    let mle_truth_fraction = truth_index.map(|t| {
        let hits = last.mle_index.iter().filter(|&&i| i == t).count();
        hits as f64 / last.mle_index.len().max(1) as f64
    });
    let report = SeedReport {
        seed,
        terminated: log.n_epsilon.is_some(),
        n_epsilon: log.n_epsilon,
        episodes: records.len(),
        violations,
        max_exact_cost: records.iter().filter_map(|r| r.exact_cost).fold(f64::NEG_INFINITY, f64::max),
        final_uncertainty: last.uncertainty,
        termination_threshold: threshold,
        theoretical_n: log.theoretical_n,
        cap: log.cap,
        margin,
        tasks,
        error_bound,
        mle_truth_fraction,
    };
    Ok(SeedArtifacts {
        report,
        records,
        policies: log.policies,
        instance,
        estimate,
    })
}

/// Runs `seeds` on up to `workers` threads; results come back in seed order.
pub fn run_seeds(config: &ExperimentConfig, seeds: &[u64], workers: usize) -> Vec<Result<SeedArtifacts>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<SeedArtifacts>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, seeds.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let result = run_seed(config, seeds[i]);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every seed ran"))
        .collect()
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

pub fn summarize(config: &ExperimentConfig, seeds: &[u64], results: &[Result<SeedArtifacts>]) -> ReportSummary {
    let outcomes: Vec<SeedOutcome> = seeds
        .iter()
        .zip(results)
        .map(|(&seed, r)| match r {
            Ok(a) => SeedOutcome {
                seed,
                report: Some(a.report.clone()),
                error: None,
            },
            Err(e) => SeedOutcome {
                seed,
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let reports: Vec<&SeedReport> = outcomes.iter().filter_map(|o| o.report.as_ref()).collect();
    let planning_pass = reports.iter().filter(|r| r.planning_pass()).count();
    let max_gap = reports
        .iter()
        .flat_map(|r| r.tasks.iter().map(|t| t.gap))
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))));
    ReportSummary {
        mode: config.mode,
        completed: reports.len(),
        terminated: reports.iter().filter(|r| r.terminated).count(),
        total_violations: reports.iter().map(|r| r.violations).sum(),
        max_violations: reports.iter().map(|r| r.violations).max().unwrap_or(0),
        max_gap,
        median_n_epsilon: median(reports.iter().filter_map(|r| r.n_epsilon.map(|n| n as f64)).collect()),
        planning_pass,
        planning_pass_rate: planning_pass as f64 / seeds.len().max(1) as f64,
        error_bound_seed_fraction: reports.iter().filter(|r| r.error_bound.violations > 0).count() as f64
            / seeds.len().max(1) as f64,
        seeds: outcomes,
    }
}

/// Writes per-seed files, then the merged summary, single-threaded.
pub fn write_artifacts(
    dir: &Path,
    config: &ExperimentConfig,
    results: &[Result<SeedArtifacts>],
    summary: &ReportSummary,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SweetError::io(dir, e))?;
    let config_path = dir.join("config.toml");
    fs::write(&config_path, config.to_toml()?).map_err(|e| SweetError::io(&config_path, e))?;
    for a in results.iter().flatten() {
        let seed = a.report.seed;
        write_csv(dir.join(format!("seed-{seed}.csv")), &a.records)?;
        write_file(dir.join(format!("seed-{seed}.json")), &a.report)?;
        write_file(dir.join(format!("seed-{seed}-instance.json")), &a.instance)?;
        write_file(dir.join(format!("seed-{seed}-policies.json")), &a.policies)?;
        write_file(dir.join(format!("seed-{seed}-estimate.json")), &a.estimate)?;
    }
    write_file(dir.join("summary.json"), summary)?;
    let table = crate::harness::report::summary_table(summary);
    let path = dir.join("summary.txt");
    fs::write(&path, table).map_err(|e| SweetError::io(&path, e))
}

/// Runs every configured seed (or `seeds`), writing artifacts to `dir` when given.
pub fn run_experiment(
    config: &ExperimentConfig,
    seeds: Option<&[u64]>,
    workers: Option<usize>,
    dir: Option<&Path>,
) -> Result<ReportSummary> {
    config.validate()?;
    let seeds = seeds.unwrap_or(&config.seeds);
    let results = run_seeds(config, seeds, workers.unwrap_or(config.workers));
    let summary = summarize(config, seeds, &results);
    if let Some(dir) = dir {
        write_artifacts(dir, config, &results, &summary)?;
    }
    Ok(summary)
}
