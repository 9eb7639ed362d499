//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary so every line is printed; exits nonzero when any
//! criterion fails.

#![allow(clippy::needless_range_loop)]

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::reference;
use rand::Rng;
use sweet_core::harness::config::ExperimentConfig;
use sweet_core::harness::experiment::{run_experiment, ReportSummary};
use sweet_core::mdp::{
    greedy_version, mixture_to_markov, occupancy, policy_value, MarkovPolicy, MixturePolicy, OccupancyMeasure,
    StepTable, TabularMDP,
};
use sweet_core::oracle::{brute_force_constrained, cmdp_optimal};
use sweet_core::rng::{random_policy, random_simplex, seeded, SweetRng};
use sweet_core::solver::{max_uncertainty_safe, plan, SolverOptions};
use sweet_core::truncated::{truncated_evaluate, truncated_subgradient};
use sweet_core::uncertainty::{LinearValue, PolicyFunctional, Uncertainty};
use sweet_core::Result;

const DELTA: f64 = 0.1;

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(path).expect("acceptance config")
}

fn suite(name: &str, dir: &Path) -> (ReportSummary, Duration) {
    let c = config(name);
    let t = Instant::now();
    let summary = run_experiment(&c, None, None, Some(dir)).expect("suite runs");
    (summary, t.elapsed())
}

fn safety_line(id: usize, name: &'static str, s: &ReportSummary, took: Duration, limit: Duration) -> Line {
    let max_cost = s
        .seeds
        .iter()
        .filter_map(|o| o.report.as_ref())
        .map(|r| r.max_exact_cost)
        .fold(f64::NEG_INFINITY, f64::max);
    Line {
        id,
        name,
        pass: s.completed == s.seeds.len() && s.total_violations == 0 && took <= limit,
        detail: format!(
            "{}/{} seeds completed, {} violations, largest executed cost {max_cost:.6}, {:.1}s",
            s.completed,
            s.seeds.len(),
            s.total_violations,
            took.as_secs_f64()
        ),
    }
}

fn planning_detail(s: &ReportSummary) -> String {
    let tasks: Vec<_> = s.seeds.iter().filter_map(|o| o.report.as_ref()).flat_map(|r| &r.tasks).collect();
    format!(
        "{}/{} seeds terminated, pass rate {:.2} (need ≥ {:.2}); tasks safe {}/{}, within ε {}/{}",
        s.terminated,
        s.seeds.len(),
        s.planning_pass_rate,
        1.0 - DELTA,
        tasks.iter().filter(|t| t.safe).count(),
        tasks.len(),
        tasks.iter().filter(|t| t.within_epsilon).count(),
        tasks.len()
    )
}

fn sizes(rng: &mut SweetRng) -> (usize, usize, usize) {
    (rng.random_range(1..=5), rng.random_range(1..=4), rng.random_range(1..=5))
}

fn concavity() -> Line {
    let mut rng = seeded(400);
    let (mut fails, mut worst) = (0, 0.0f64);
    for _ in 0..1000 {
        let (s, a, h) = sizes(&mut rng);
        let m = common::random_model(&mut rng, s, a, h);
        let u = common::random_table(&mut rng, h, s, a, 1.0);
        let alpha = 1.0 + rng.random::<f64>() / h as f64;
        let (p, q, g) = (random_policy(h, s, a, &mut rng), random_policy(h, s, a, &mut rng), rng.random::<f64>());
        let mix = mixture_to_markov(&m, &MixturePolicy::pair(p.clone(), q.clone(), g).unwrap()).unwrap();
        let v = |pi: &MarkovPolicy| truncated_evaluate(&m, pi, &u, alpha).unwrap().value();
        let slack = v(&mix) - g * v(&p) - (1.0 - g) * v(&q);
        worst = worst.min(slack);
        fails += usize::from(slack < -1e-9);
    }
    let (mut eq_fails, mut eq_worst) = (0, 0.0f64);
    for _ in 0..200 {
        let (s, a, h) = sizes(&mut rng);
        let m = common::random_model(&mut rng, s, a, h);
        let u = common::normalized_utility(&mut rng, &m);
        let (p, q, g) = (random_policy(h, s, a, &mut rng), random_policy(h, s, a, &mut rng), rng.random::<f64>());
        let mix = mixture_to_markov(&m, &MixturePolicy::pair(p.clone(), q.clone(), g).unwrap()).unwrap();
        let v = |pi: &MarkovPolicy| truncated_evaluate(&m, pi, &u, 1.0).unwrap().value();
        let gap = (v(&mix) - g * v(&p) - (1.0 - g) * v(&q)).abs();
        eq_worst = eq_worst.max(gap);
        eq_fails += usize::from(gap > 1e-9);
    }
    Line {
        id: 4,
        name: "concavity of the clipped value",
        pass: fails == 0 && eq_fails == 0,
        detail: format!(
            "{fails}/1000 failures (min slack {worst:.2e}); {eq_fails}/200 equality failures (max {eq_worst:.2e})"
        ),
    }
}

fn greedy() -> Line {
    let mut rng = seeded(500);
    let (mut fails, mut worst) = (0, f64::NEG_INFINITY);
    for _ in 0..500 {
        let (s, a, h) = sizes(&mut rng);
        let m = common::random_model(&mut rng, s, a, h);
        let u = common::normalized_utility(&mut rng, &m);
        let pi = random_policy(h, s, a, &mut rng);
        let eps: f64 = rng.random();
        let steps: Vec<usize> = (0..h).filter(|_| rng.random_bool(0.5)).collect();
        let g = greedy_version(&pi, eps, &steps).unwrap();
        let diff = (policy_value(&m, &g, &u).unwrap() - policy_value(&m, &pi, &u).unwrap()).abs();
        let excess = diff - eps * steps.len() as f64;
        worst = worst.max(excess);
        fails += usize::from(excess > 1e-9);
    }
    Line {
        id: 5,
        name: "greedy-version deviation",
        pass: fails == 0,
        detail: format!("{fails}/500 failures (max |ΔV| − ε0·t = {worst:.2e})"),
    }
}

fn mixtures() -> Line {
    let mut rng = seeded(600);
    let (mut fails, mut worst) = (0, 0.0f64);
    for _ in 0..500 {
        let (s, a, h) = sizes(&mut rng);
        let m = common::random_model(&mut rng, s, a, h);
        let k = rng.random_range(1..=5);
        let vertices: Vec<MarkovPolicy> = (0..k).map(|_| random_policy(h, s, a, &mut rng)).collect();
        let weights = random_simplex(k, &mut rng);
        let occs: Vec<OccupancyMeasure> = vertices.iter().map(|p| occupancy(&m, p).unwrap()).collect();
        let parts: Vec<(&OccupancyMeasure, f64)> = occs.iter().zip(weights.iter().copied()).collect();
        let expect = OccupancyMeasure::combine(&parts);
        let markov = mixture_to_markov(&m, &MixturePolicy::new(vertices, weights).unwrap()).unwrap();
        let diff = occupancy(&m, &markov).unwrap().max_abs_diff(&expect);
        worst = worst.max(diff);
        fails += usize::from(diff > 1e-10);
    }
    Line {
        id: 6,
        name: "mixture equivalence",
        pass: fails == 0,
        detail: format!("{fails}/500 failures (max entry difference {worst:.2e})"),
    }
}

fn error_bound(summaries: &[&ReportSummary]) -> Line {
    let reports: Vec<_> = summaries.iter().flat_map(|s| &s.seeds).filter_map(|o| o.report.as_ref()).collect();
    let bad = reports.iter().filter(|r| r.error_bound.violations > 0).count();
    let seeds: usize = summaries.iter().map(|s| s.seeds.len()).sum();
    let fraction = bad as f64 / seeds.max(1) as f64;
    let checks: usize = reports.iter().map(|r| r.error_bound.checks).sum();
    Line {
        id: 7,
        name: "error-bound validity",
        pass: reports.len() == seeds && fraction <= DELTA,
        detail: format!("{bad}/{seeds} seeds with a violation over {checks} checks (fraction {fraction:.2}, need ≤ {DELTA})"),
    }
}

/// `V_c + U` as one functional for the sampling oracle.
struct Load<'a> {
    cost: &'a StepTable,
    u: &'a Uncertainty,
}

impl PolicyFunctional for Load<'_> {
    fn value(&self, m: &TabularMDP, p: &MarkovPolicy) -> Result<f64> {
        Ok(policy_value(m, p, self.cost)? + self.u.value(m, p)?)
    }

    fn linearize(&self, _: &TabularMDP, _: &MarkovPolicy, _: &OccupancyMeasure) -> Result<(f64, StepTable)> {
        unreachable!("the sampling oracle only evaluates")
    }
}

fn solver_vs_oracle() -> Line {
    let mut rng = seeded(800);
    let options = SolverOptions::default();
    let (mut max_gap, mut plan_gap, mut exact_gap) = (0.0f64, 0.0f64, 0.0f64);
    let mut over_budget = 0;
    for i in 0..50u64 {
        let inst = common::solver_instance(&mut rng, 2, 2, 2);
        let load = Load {
            cost: &inst.cost,
            u: &inst.uncertainty,
        };
        let budget = load.value(&inst.model, &inst.baseline).unwrap() + rng.random::<f64>() * 0.15 + 0.01;
        let r = max_uncertainty_safe(&inst.model, &inst.cost, &inst.uncertainty, budget, &inst.baseline, &options).unwrap();
        let o = brute_force_constrained(&inst.model, &inst.uncertainty, &load, budget, 100_000, i).unwrap();
        max_gap = max_gap.max((r.objective - o.value).abs());
        over_budget += usize::from(r.constraint_value > budget + 1e-6);

        let p = plan(&inst.model, &inst.reward, &inst.cost, budget, &inst.uncertainty, &options).unwrap();
        let reward = LinearValue { utility: &inst.reward };
        let op = brute_force_constrained(&inst.model, &reward, &load, budget, 100_000, i).unwrap();
        plan_gap = plan_gap.max((p.objective - op.value).abs());
        over_budget += usize::from(p.constraint_value > budget + 1e-6);

        let (h, s, a) = inst.model.table_shape();
        let zero = Uncertainty::zero(h, s, a);
        let (cmin, _) = sweet_core::min_cost_value(&inst.model, &inst.cost).unwrap();
        let tau = cmin + rng.random::<f64>() * (1.0 - cmin);
        let exact = plan(&inst.model, &inst.reward, &inst.cost, tau, &zero, &options).unwrap();
        let truth = cmdp_optimal(&inst.model, &inst.reward, &inst.cost, tau).unwrap();
        exact_gap = exact_gap.max((exact.objective - truth.value).abs());
    }
    Line {
        id: 8,
        name: "solver vs oracle",
        pass: max_gap <= 1e-3 && plan_gap <= 1e-3 && exact_gap <= 1e-6 && over_budget == 0,
        detail: format!(
            "max |Δ| uncertainty {max_gap:.2e}, plan {plan_gap:.2e} (≤ 1e-3); U ≡ 0 vs CMDP {exact_gap:.2e} (≤ 1e-6); {over_budget} over budget"
        ),
    }
}

fn subgradient() -> Line {
    let mut rng = seeded(900);
    let (mut points, mut fails, mut worst, mut clipped_points) = (0, 0, 0.0f64, 0);
    while points < 200 {
        let (s, a, h) = sizes(&mut rng);
        let m = common::random_model(&mut rng, s, a, h);
        let u = common::random_table(&mut rng, h, s, a, 0.6);
        let alpha = 1.0 + rng.random::<f64>() / h as f64;
        let pi = random_policy(h, s, a, &mut rng);
        let g = truncated_subgradient(&m, &pi, &u, alpha).unwrap();
        // keep points where no state's pre-clip value sits within 1e-4 of 1
        let near = (0..h).any(|step| {
            (0..s).any(|x| {
                let e: f64 = (0..a).map(|act| pi.prob(step, x, act) * g.eval.qbar(step, x, act)).sum();
                (e - 1.0).abs() < 1e-4
            })
        });
        if near {
            continue;
        }
        points += 1;
        clipped_points += usize::from((0..h).any(|step| (0..s).any(|x| g.eval.clipped(step, x))));
        let w: Vec<Vec<Vec<f64>>> = (0..h).map(|step| (0..s).map(|x| pi.dist(step, x).to_vec()).collect()).collect();
        let mut bad = false;
        for step in 0..h {
            for x in 0..s {
                for act in 0..a {
                    let (mut up, mut down) = (w.clone(), w.clone());
                    up[step][x][act] += 1e-6;
                    down[step][x][act] -= 1e-6;
                    let fd = (reference::clipped_value(&m, &up, &u, alpha) - reference::clipped_value(&m, &down, &u, alpha))
                        / 2e-6;
                    let err = (fd - g.g.get(step, x, act)).abs();
                    worst = worst.max(err);
                    bad |= err > 1e-5;
                }
            }
        }
        fails += usize::from(bad);
    }
    Line {
        id: 9,
        name: "supergradient vs finite differences",
        pass: fails == 0,
        detail: format!("{fails}/200 points fail ({clipped_points} with clipped states), max entry error {worst:.2e}"),
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p: PathBuf| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn determinism(pairs: &[(&Path, &Path)]) -> Line {
    let mut compared = 0;
    let mut differing = Vec::new();
    for (a, b) in pairs {
        let (fa, fb) = (files(a), files(b));
        if fa.len() != fb.len() {
            differing.push(format!("{} vs {} file count", a.display(), b.display()));
        }
        for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
            compared += 1;
            if na != nb || ba != bb {
                differing.push(na.clone());
            }
        }
    }
    let csvs = pairs.iter().map(|(a, _)| files(a).iter().filter(|(n, _)| n.ends_with(".csv")).count()).sum::<usize>();
    Line {
        id: 10,
        name: "determinism",
        pass: differing.is_empty() && compared > 0,
        detail: format!("{compared} artifacts ({csvs} CSV) compared, {} differ {:?}", differing.len(), differing),
    }
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().unwrap();
    let dir = |n: &str| root.path().join(n);
    let (tab, tab_time) = suite("tabular.toml", &dir("tabular"));
    let (low, low_time) = suite("lowrank.toml", &dir("lowrank"));

    let mut lines = vec![safety_line(
        1,
        "tabular exploration safety",
        &tab,
        tab_time,
        Duration::from_secs(300),
    )];
    lines.push(Line {
        id: 2,
        name: "tabular planning safety and ε-optimality",
        pass: tab.planning_pass_rate >= 1.0 - DELTA,
        detail: planning_detail(&tab),
    });
    let low_safe = safety_line(3, "low-rank safety and planning", &low, low_time, Duration::from_secs(600));
    let low_plan = low.planning_pass_rate >= 1.0 - DELTA;
    lines.push(Line {
        pass: low_safe.pass && low_plan,
        detail: format!("{}; {}", low_safe.detail, planning_detail(&low)),
        ..low_safe
    });
    lines.push(concavity());
    lines.push(greedy());
    lines.push(mixtures());
    lines.push(error_bound(&[&tab, &low]));
    lines.push(solver_vs_oracle());
    lines.push(subgradient());
    suite("tabular.toml", &dir("tabular-rerun"));
    suite("lowrank.toml", &dir("lowrank-rerun"));
    lines.push(determinism(&[
        (&dir("tabular"), &dir("tabular-rerun")),
        (&dir("lowrank"), &dir("lowrank-rerun")),
    ]));

    println!();
    for l in &lines {
        println!(
            "criterion {:>2} {} {}: {}",
            l.id,
            if l.pass { "PASS" } else { "FAIL" },
            l.name,
            l.detail
        );
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("\nacceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
