//! `sweet`: generate instances, run seeded exploration experiments, plan
//! from a learned model, audit run logs against the true kernel and report.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sweet_core::format::{read_file, write_file};
use sweet_core::harness::config::ExperimentConfig;
use sweet_core::harness::envgen::{random_utility, Instance};
use sweet_core::harness::experiment::{audit, mixture_value, run_experiment, seed_instance, Estimate, PLAN_TOL};
use sweet_core::harness::report::report_dir;
use sweet_core::mdp::{MixturePolicy, Utility};
use sweet_core::oracle::cmdp_optimal;
use sweet_core::rng::stream;
use sweet_core::runlog::read_csv;
use sweet_core::solver::{plan, SolverOptions};
use sweet_core::{Result, SweetError};

/// Stream id for the reward written next to generated instances.
const STREAM_REWARD: u64 = 5;

#[derive(Parser)]
#[command(name = "sweet", version, about = "Safe reward-free exploration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds, overriding the configuration.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads, overriding the configuration.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the instance of each seed, with its cost and a random reward.
    GenEnv(RunArgs),
    /// Run exploration, audits and planning tasks for every seed.
    Run(RunArgs),
    /// Plan on a learned model for a given reward, cost and budget.
    Plan {
        /// `seed-K-estimate.json` from a run directory.
        #[arg(long)]
        estimate: PathBuf,
        /// Reward utility document.
        #[arg(long)]
        reward: PathBuf,
        /// Cost utility document.
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        tau: f64,
        /// `seed-K-instance.json`; adds true values and the CMDP optimum.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Where to write the planned mixture policy.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recompute exact costs of every executed policy in a run directory.
    Audit {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Print the summary table and write plot data files.
    Report { dir: PathBuf },
}

fn output_dir(args: &RunArgs, config: &ExperimentConfig) -> PathBuf {
    args.output
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("runs/{:?}", config.mode).to_lowercase()))
}

fn gen_env(args: &RunArgs) -> Result<bool> {
    let config = ExperimentConfig::load(&args.config)?;
    config.validate()?;
    let dir = output_dir(args, &config);
    fs::create_dir_all(&dir).map_err(|e| SweetError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    for &seed in args.seeds.as_ref().unwrap_or(&config.seeds) {
        let inst = seed_instance(&config, seed)?;
        let reward = random_utility(&inst.mdp, &mut stream(seed, STREAM_REWARD))?;
        write_file(dir.join(format!("seed-{seed}-instance.json")), &inst)?;
        write_file(dir.join(format!("seed-{seed}-cost.json")), &Utility::normalized(inst.cost.clone(), &inst.mdp)?)?;
        write_file(dir.join(format!("seed-{seed}-reward.json")), &Utility::normalized(reward, &inst.mdp)?)?;
        println!(
            "seed {seed}: margin {:.6}, min cost {:.6}, baseline cost {:.6} (weight {:.6}), {} attempt(s)",
            inst.meta.margin, inst.meta.min_cost, inst.meta.baseline_cost, inst.meta.baseline_weight, inst.meta.attempts
        );
    }
    println!("instances written to {}", dir.display());
    Ok(true)
}

fn run(args: &RunArgs) -> Result<bool> {
    let config = ExperimentConfig::load(&args.config)?;
    let dir = output_dir(args, &config);
    let summary = run_experiment(&config, args.seeds.as_deref(), args.workers, Some(&dir))?;
    print!("{}", fs::read_to_string(dir.join("summary.txt")).unwrap_or_default());
    println!("artifacts written to {}", dir.display());
    Ok(summary.all_audits_pass())
}

fn plan_cmd(
    estimate: &Path,
    reward: &Path,
    cost: &Path,
    tau: f64,
    truth: Option<&Path>,
    output: Option<&Path>,
) -> Result<bool> {
    let est: Estimate = read_file(estimate)?;
    let reward: Utility = read_file(reward)?;
    let cost: Utility = read_file(cost)?;
    let result = plan(&est.model, &reward, &cost, tau, &est.uncertainty, &SolverOptions::default())?;
    println!(
        "status {}: value {:.6} on the learned model, cost + uncertainty {:.6} (budget {tau}), residual {:.2e}",
        result.status.as_str(),
        result.objective,
        result.constraint_value,
        result.residual
    );
    if let Some(path) = output {
        write_file(path, &result.mixture)?;
    }
    let Some(path) = truth else {
        return Ok(true);
    };
    let inst: Instance = read_file(path)?;
    let optimum = cmdp_optimal(&inst.mdp, &reward, &cost, tau)?;
    let value = mixture_value(&inst.mdp, &result.mixture, &reward)?;
    let true_cost = mixture_value(&inst.mdp, &result.mixture, &cost)?;
    let safe = true_cost <= tau + PLAN_TOL;
    println!(
        "true value {value:.6} (optimum {:.6}, gap {:.2e}), true cost {true_cost:.6}: {}",
        optimum.value,
        optimum.value - value,
        if safe { "safe" } else { "UNSAFE" }
    );
    Ok(safe)
}

fn seed_of(path: &Path) -> Option<u64> {
    path.file_name()?.to_str()?.strip_prefix("seed-")?.strip_suffix(".csv")?.parse().ok()
}

fn audit_cmd(dir: &Path, seeds: Option<&[u64]>) -> Result<bool> {
    let config = ExperimentConfig::load(dir.join("config.toml"))?;
    let mut found: Vec<u64> = fs::read_dir(dir)
        .map_err(|e| SweetError::Io {
            path: dir.display().to_string(),
            source: e,
        })?
        .filter_map(|e| e.ok().and_then(|e| seed_of(&e.path())))
        .collect();
    found.sort_unstable();
    let seeds = seeds.map(<[u64]>::to_vec).unwrap_or(found);
    if seeds.is_empty() {
        return Err(SweetError::Precondition(format!("{} holds no run logs", dir.display())));
    }
    let mut ok = true;
    for seed in seeds {
        let stored = read_csv(dir.join(format!("seed-{seed}.csv")))?;
        let inst: Instance = read_file(dir.join(format!("seed-{seed}-instance.json")))?;
        let policies: Vec<MixturePolicy> = read_file(dir.join(format!("seed-{seed}-policies.json")))?;
        let mut fresh = stored.clone();
        let violations = audit(&mut fresh, &policies, &inst.mdp, &inst.cost, config.algorithm.tau)?;
        let mismatched = stored
            .iter()
            .zip(&fresh)
            .filter(|(a, b)| a.exact_cost.map(f64::to_bits) != b.exact_cost.map(f64::to_bits) || a.violation != b.violation)
            .count();
        println!(
            "seed {seed}: {} episodes, {violations} violations, {mismatched} records disagree with the log",
            fresh.len()
        );
        ok &= violations == 0 && mismatched == 0;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenEnv(args) => gen_env(args),
        Command::Run(args) => run(args),
        Command::Plan {
            estimate,
            reward,
            cost,
            tau,
            truth,
            output,
        } => plan_cmd(estimate, reward, cost, *tau, truth.as_deref(), output.as_deref()),
        Command::Audit { dir, seeds } => audit_cmd(dir, seeds.as_deref()),
        Command::Report { dir } => report_dir(dir).map(|table| {
            print!("{table}");
            true
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
