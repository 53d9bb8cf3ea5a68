//! Command-line driver: seeded runs, parameter sweeps, MODCOD fitting and
//! re-verification of stored results.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use beamhop::config::ScenarioConfig;
use beamhop::experiment::{parse_seeds, run_experiment, verify_results, ExperimentSpec, Pipeline, ResultRow, SweepAxis};
use beamhop::modcod::{fit_xi, ModcodTable};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "beamhop", version, about = "Payload power planner for multibeam GEO satellites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one planner on a set of channel realizations.
    Run(RunArgs),
    /// Run one planner across values of the beam budget or the first demand.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Swept parameter: `kt` or `q1` (Mbit).
        #[arg(long)]
        axis: String,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Fit the Shannon surrogate to a MODCOD table and print ξ and the RMSE.
    FitModcod {
        /// Table CSV; the shipped DVB-S2X table when omitted.
        table: Option<PathBuf>,
    },
    /// Recompute feasibility and power of every run in a results file.
    Verify {
        results: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML; the shipped sample scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// MODCOD table CSV overriding the scenario's.
    #[arg(long)]
    modcod_table: Option<PathBuf>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.scenario {
            Some(p) => ScenarioConfig::from_path(p).with_context(|| format!("loading {}", p.display()))?,
            None => ScenarioConfig::sample(),
        };
        if let Some(p) = &self.modcod_table {
            cfg.table = ModcodTable::from_csv_path(p).with_context(|| format!("loading {}", p.display()))?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// One of window, heuristic, dnn-train, dnn-run.
    #[arg(long)]
    pipeline: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Policy file read by dnn-run and written by dnn-train.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Seed of the training data for dnn-train.
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
    /// Record wall-clock time per run in `wall_ms`.
    #[arg(long)]
    timing: bool,
}

fn execute(args: &RunArgs, axis: SweepAxis, values: Vec<f64>) -> Result<ExitCode> {
    let cfg = args.scenario.load()?;
    let spec = ExperimentSpec {
        seeds: parse_seeds(&args.seeds)?,
        pipeline: args.pipeline.parse::<Pipeline>()?,
        axis,
        values,
        out_dir: args.out.clone(),
        model: args.model.clone(),
        train_seed: args.train_seed,
        timing: args.timing,
    };
    let rows = run_experiment(&cfg, &spec)?;
    report(&rows, &args.out.join("results.csv"));
    Ok(if rows.iter().all(|r| r.feasible) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn report(rows: &[ResultRow], path: &Path) {
    for r in rows.iter().filter(|r| !r.feasible) {
        eprintln!("infeasible: {}", r.label());
    }
    println!("{} runs, {} feasible, results in {}", rows.len(), rows.iter().filter(|r| r.feasible).count(), path.display());
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => execute(&args, SweepAxis::None, Vec::new()),
        Command::Sweep { run, axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            if axis == SweepAxis::None {
                bail!("a sweep needs the kt or q1 axis");
            }
            execute(&run, axis, values)
        }
        Command::FitModcod { table } => {
            let table = match table {
                Some(p) => ModcodTable::from_csv_path(&p).with_context(|| format!("loading {}", p.display()))?,
                None => ModcodTable::shipped(),
            };
            let fit = fit_xi(&table)?;
            println!("xi_fit = {:.4}", fit.xi);
            println!("rmse = {:.5}", fit.rmse);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { results, scenario } => {
            let cfg = scenario.load()?;
            let outcomes = verify_results(&cfg, &results)?;
            let mut ok = true;
            for o in &outcomes {
                if !o.agrees {
                    ok = false;
                    eprintln!("mismatch: {} (recomputed feasible={}, power={:?})", o.label, o.feasible, o.power);
                }
            }
            println!("{} runs checked, {}", outcomes.len(), if ok { "all agree" } else { "mismatches found" });
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
