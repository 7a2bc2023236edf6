//! Command-line front end: experiment runs, route planning, bound
//! evaluation, aggregator sweeps, and canned recipe configs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dflsim::config::ExperimentConfig;
use dflsim::io;
use dflsim::recipes;
use dflsim::runner::{self, RunOptions};
use dflsim::SimError;
use dflsim_core::learning::Weights;
use dflsim_core::routing::{
    assign_slots, constrained_admission, min_per_routes, BandwidthBudget, ScheduleInput,
};

#[derive(Parser)]
#[command(name = "dflsim", version, about = "Decentralized FL simulator over lossy multi-hop networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Simulate {
        config_file: PathBuf,
        /// Output directory for metrics.csv, summary.json, bounds.json,
        /// routes.json (default: `out` alongside the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also write final aggregated models as binary checkpoints.
        #[arg(long)]
        save_final_models: bool,
        /// Tabulate aggregation-coefficient distributions over this many
        /// success-tensor draws and write histogram CSVs.
        #[arg(long)]
        coeff_trials: Option<u64>,
    },
    /// Compute min-E2E-PER routes (optionally under per-node budgets) for a
    /// graph file and emit routes.json (and a TDMA schedule CSV).
    Routes {
        graph_file: PathBuf,
        /// Per-node transmission budgets (JSON: {"default": 2, "per_node":
        /// {"3": 0}}).
        #[arg(long)]
        budget: Option<PathBuf>,
        /// Packet length in elements.
        #[arg(long, default_value_t = 256)]
        k: usize,
        #[arg(long, default_value = "routes.json")]
        out: PathBuf,
        /// Also write the TDMA schedule of the routed dissemination here.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Model size in bits for the schedule's traffic accounting.
        #[arg(long, default_value_t = 38_720_000)]
        model_size_bits: u64,
    },
    /// Evaluate the convergence-bound machinery on a bound-inputs file.
    Bounds {
        inputs_file: PathBuf,
        #[arg(long, default_value = "bounds.json")]
        out: PathBuf,
    },
    /// Run the centralized protocol once per candidate aggregator and rank
    /// candidates by final loss.
    SweepAggregator {
        config_file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print a canned experiment config.
    Recipe {
        name: String,
        /// Write to a file instead of stdout.
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct BudgetFile {
    #[serde(default)]
    default: Option<u64>,
    #[serde(default)]
    per_node: std::collections::BTreeMap<String, u64>,
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, SimError> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
}

fn run(cli: Cli) -> Result<(), SimError> {
    match cli.command {
        Command::Simulate { config_file, out, seed, jobs, save_final_models, coeff_trials } => {
            let config = load_config(&config_file)?;
            let out_dir = out.unwrap_or_else(|| {
                config_file.parent().unwrap_or(std::path::Path::new(".")).join("out")
            });
            let opts = RunOptions {
                out_dir: Some(out_dir.clone()),
                seed,
                jobs,
                save_final_models,
                coeff_trials,
            };
            let result = runner::run_experiment(&config, &opts)?;
            println!(
                "wrote {} cells to {} (config {} seed {})",
                result.cells.len(),
                out_dir.display(),
                &result.config_hash[..12],
                result.root_seed
            );
            Ok(())
        }
        Command::Routes { graph_file, budget, k, out, schedule, model_size_bits } => {
            let graph = io::read_graph(&graph_file)?;
            let plan = match budget {
                None => min_per_routes(&graph, k).map_err(|e| SimError::runtime("routing", e))?,
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    let file: BudgetFile = serde_json::from_str(&text)
                        .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
                    let mut budgets = match file.default {
                        Some(d) => BandwidthBudget::from_vec(vec![d; graph.n_nodes()]),
                        None => BandwidthBudget::unlimited(graph.n_nodes()),
                    };
                    for (node, value) in &file.per_node {
                        let id: usize = node
                            .parse()
                            .map_err(|_| SimError::Config(format!("bad node id {node}")))?;
                        if id >= graph.n_nodes() {
                            return Err(SimError::Config(format!("node id {id} out of range")));
                        }
                        budgets.set(id, *value);
                    }
                    // Priority order needs the data weights; uniform here
                    // since a bare graph file carries none.
                    let p = Weights::uniform(graph.n_participants());
                    let outcome = constrained_admission(&graph, k, &budgets, &p)
                        .map_err(|e| SimError::runtime("admission", e))?;
                    if !outcome.infeasible.is_empty() {
                        eprintln!("infeasible pairs under budgets: {:?}", outcome.infeasible);
                    }
                    outcome.plan
                }
            };
            io::write_routes(&out, &[&plan], None, None)?;
            if let Some(sched_path) = schedule {
                let sched = assign_slots(
                    ScheduleInput::RouteAndAggregate { plan: &plan },
                    &graph,
                    model_size_bits,
                );
                io::write_schedule(&sched_path, &sched, "dflsim-schedule v1 routed dissemination")?;
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Bounds { inputs_file, out } => {
            let report = io::evaluate_bounds_file(&inputs_file)?;
            io::write_json(&out, &report)?;
            println!(
                "zeta1={} objective={} -> {}",
                report.zetas.zeta1,
                report.objective,
                out.display()
            );
            Ok(())
        }
        Command::SweepAggregator { config_file, out, seed, jobs } => {
            let config = load_config(&config_file)?;
            let opts = RunOptions { out_dir: out, seed, jobs, ..Default::default() };
            let sweep = runner::sweep_aggregator(&config, &opts)?;
            for score in &sweep.ranking {
                println!("aggregator {}: final mean loss {}", score.aggregator, score.mean_final_loss);
            }
            Ok(())
        }
        Command::Recipe { name, write } => {
            let config = recipes::by_name(&name)?;
            let text = serde_json::to_string_pretty(&config)
                .map_err(|e| SimError::runtime("serialize", e))?;
            match write {
                Some(path) => {
                    std::fs::write(&path, text + "\n")?;
                    println!("wrote {}", path.display());
                }
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
