mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spanner_cb::oracles::{ActionSet, Context, FiniteActionSet};
use spanner_cb::reweighted::{reweighted_iteration_guard, reweighted_spanner, ReweightingContext};
use spanner_cb::simulator::{bootstrap_ci, run_episode, sweep, write_round_log};
use spanner_cb::spanner::{barycentric_spanner, iteration_guard, local_search_init, SpannerState};
use spanner_cb::{Error, Execution, PolicySpec};

use config::{ExperimentConfig, Overrides};

/// Confidence level of every interval in `summary.json`.
pub const CI_LEVEL: f64 = 0.90;
pub const CI_RESAMPLES: usize = 1000;
/// Seed of the bootstrap resampling stream.
pub const CI_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(name = "spannercb", version, about = "Contextual bandit experiments over large linear action spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one seed of an experiment.
    Run(RunArgs),
    /// Run every seed listed in the config and summarize across seeds.
    Sweep(RunArgs),
    /// Compute a barycentric spanner of an embedding file and report it.
    Spanner(SpannerArgs),
}

const CONFIG_KEYS: &str = "\
Config file keys and defaults:
  [env]    dim, actions = 100, context_dim = 0, noise = \"bernoulli\" | \"gaussian\",
           sigma = 0.5, duplicates = 0, duplicate_action = <last id>,
           embeddings = <csv path>, seed = 0, pool_size = 512
  [policy] name = \"spanner-greedy\" | \"spanner-igw\" | \"spanner-igw-practical\" |
           \"squarecb\" | \"epsilon-greedy\", gamma = \"auto\" | <number>,
           epsilon = \"auto\" | <number>, factor = 2.0, delta = 0.05,
           regsq_bound = d ln T, regressor = \"auto\" | \"ridge\" | \"bilinear\",
           ridge = 1.0, step = 0.05
  [run]    T = 1000, seeds = [0] | <count>, out = \"out\"";

#[derive(Debug, Args)]
#[command(after_help = CONFIG_KEYS)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// Exploration parameter gamma (overrides the config and `auto`).
    #[arg(long)]
    gamma: Option<f64>,
    /// Exploration rate epsilon (overrides the config and `auto`).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Use the sampling rule without the lambda normalizer for spanner-igw.
    #[arg(long)]
    practical: bool,
    /// Number of exact copies of the duplicated action to append.
    #[arg(long)]
    duplicates: Option<usize>,
    /// Worker threads; defaults to available cores capped by the seed count.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SpannerArgs {
    /// Embedding CSV with header `action_id,dim_0,...,dim_{d-1}`.
    #[arg(long)]
    embeddings: PathBuf,
    /// Approximation factor C.
    #[arg(long, default_value_t = 2.0)]
    factor: f64,
    /// Report the reweighted spanner for a zero estimate with this eta.
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SeedSummary {
    seed: u64,
    progressive_reward: f64,
    final_pseudo_regret: f64,
    final_realized_regret: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    policy: &'static str,
    gamma: Option<f64>,
    epsilon: Option<f64>,
    factor: Option<f64>,
    horizon: usize,
    num_actions: usize,
    dim: usize,
    seeds: Vec<u64>,
    ci_level: f64,
    ci_resamples: usize,
    mean_progressive_reward: f64,
    progressive_reward_ci: Option<(f64, f64)>,
    mean_final_regret: f64,
    final_regret_ci: Option<(f64, f64)>,
    wall_clock_seconds: f64,
    per_seed: Vec<SeedSummary>,
}

fn policy_params(spec: &PolicySpec) -> (Option<f64>, Option<f64>, Option<f64>) {
    match *spec {
        PolicySpec::SpannerGreedy { epsilon, factor } => (None, Some(epsilon), Some(factor)),
        PolicySpec::SpannerIgw { gamma, factor, .. } => (Some(gamma), None, Some(factor)),
        PolicySpec::SquareCb { gamma } => (Some(gamma), None, None),
        PolicySpec::EpsilonGreedy { epsilon } => (None, Some(epsilon), None),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn configure_threads(jobs: Option<usize>, seeds: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        let threads = jobs.unwrap_or_else(|| cores.min(seeds)).max(1);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = (jobs, seeds);
    Ok(())
}

fn run_experiment(args: &RunArgs, single: bool) -> Result<()> {
    let started = Instant::now();
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        seed: args.seed,
        horizon: args.horizon,
        gamma: args.gamma,
        epsilon: args.epsilon,
        practical: args.practical,
        duplicates: args.duplicates,
        out: args.out.clone(),
    });
    if single {
        let first = cfg.run.seeds.to_vec()[0];
        cfg.run.seeds = config::Seeds::List(vec![first]);
    }
    cfg.validate()?;
    let seeds = cfg.run.seeds.to_vec();
    configure_threads(args.jobs, seeds.len())?;

    let env = cfg.build_env()?;
    let spec = cfg.policy_spec(&env)?;
    let out_dir = &cfg.run.out;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let horizon = cfg.run.horizon;

    let per_seed = sweep(&seeds, Execution::Parallel, |seed| {
        let mut policy = spec.build()?;
        let mut regressor = cfg.build_regressor(env.dim()).map_err(|e| Error::Config(e.to_string()))?;
        let tracker = run_episode(&env, policy.as_mut(), regressor.as_mut(), horizon, seed)?;
        let path = out_dir.join(format!("rounds_{seed}.csv"));
        write_round_log(&tracker.records, BufWriter::new(File::create(&path)?))?;
        Ok(SeedSummary {
            seed,
            progressive_reward: tracker.progressive_reward,
            final_pseudo_regret: tracker.cumulative_true_regret,
            final_realized_regret: tracker.cumulative_realized_regret,
        })
    })?;

    let rewards: Vec<f64> = per_seed.iter().map(|s| s.progressive_reward).collect();
    let regrets: Vec<f64> = per_seed.iter().map(|s| s.final_pseudo_regret).collect();
    let ci = |v: &[f64]| -> Result<Option<(f64, f64)>> {
        if v.len() < 2 {
            return Ok(None);
        }
        Ok(Some(bootstrap_ci(v, CI_LEVEL, CI_RESAMPLES, CI_SEED)?))
    };
    let (gamma, epsilon, factor) = policy_params(&spec);
    let summary = Summary {
        policy: spec.name(),
        gamma,
        epsilon,
        factor,
        horizon,
        num_actions: env.actions().len(),
        dim: env.dim(),
        seeds: seeds.clone(),
        ci_level: CI_LEVEL,
        ci_resamples: CI_RESAMPLES,
        mean_progressive_reward: mean(&rewards),
        progressive_reward_ci: ci(&rewards)?,
        mean_final_regret: mean(&regrets),
        final_regret_ci: ci(&regrets)?,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        per_seed,
    };
    let path = out_dir.join("summary.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &summary)?;
    println!(
        "{}: {} seed(s) x {} rounds, mean progressive reward {:.4}, mean regret {:.2}; wrote {}",
        summary.policy,
        seeds.len(),
        horizon,
        summary.mean_progressive_reward,
        summary.mean_final_regret,
        out_dir.display()
    );
    Ok(())
}

fn max_coefficient(sp: &SpannerState, columns: &[Vec<f64>]) -> f64 {
    columns.iter().map(|c| sp.coefficient_bound(c)).fold(0.0, f64::max)
}

fn spanner_report(args: &SpannerArgs) -> Result<()> {
    let set = FiniteActionSet::from_csv_path(&args.embeddings)
        .with_context(|| format!("loading embeddings {}", args.embeddings.display()))?;
    let x = Context::new(0, vec![]);
    let d = set.dim();
    let (sp, columns, guard) = match args.eta {
        None => {
            let sp = barycentric_spanner(&set, &x, args.factor)?;
            let columns = (0..set.len()).map(|i| set.row(i).to_vec()).collect();
            (sp, columns, iteration_guard(d, args.factor))
        }
        Some(eta) => {
            let rc = ReweightingContext::new(&set, &x, vec![0.0; d], eta)?;
            let (init, r) = local_search_init(&set, &x)?;
            let sp = reweighted_spanner(&rc, &set, &x, args.factor, &init, r, Execution::Parallel)?;
            let columns = (0..set.len())
                .map(|i| rc.reweight(set.row(i)))
                .collect::<spanner_cb::Result<Vec<_>>>()?;
            (sp, columns, reweighted_iteration_guard(d, eta, r))
        }
    };
    let ids: Vec<String> = sp.action_ids().iter().map(|id| id.to_string()).collect();
    println!("actions: {}", set.len());
    println!("dimension: {d}");
    println!("factor: {}", args.factor);
    if let Some(eta) = args.eta {
        println!("eta: {eta}");
    }
    println!("spanner_ids: {}", ids.join(","));
    println!("abs_det: {:e}", sp.det().abs());
    println!("max_coefficient: {}", max_coefficient(&sp, &columns));
    println!("iterations: {}", sp.stats().iterations);
    println!("iteration_guard: {guard}");
    println!("oracle_calls: {}", sp.stats().oracle_calls);
    Ok(())
}

/// One line naming the failing module (and round, when known).
fn diagnose(err: &anyhow::Error) -> String {
    match err.downcast_ref::<Error>() {
        Some(Error::RankDeficient(msg)) => format!(
            "error [spanner]: rank deficiency: {msg}\n  hint: the embeddings must span R^d; \
             remove redundant coordinates or project onto the span of the actions"
        ),
        Some(e @ Error::Round { .. }) => format!("error [{}]: {e}", e.module()),
        Some(e) => format!("error [{}]: {err:#}", e.module()),
        None => format!("error [cli]: {err:#}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_experiment(args, true),
        Command::Sweep(args) => run_experiment(args, false),
        Command::Spanner(args) => spanner_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", diagnose(&err));
            ExitCode::FAILURE
        }
    }
}
