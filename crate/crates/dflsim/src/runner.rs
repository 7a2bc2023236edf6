//! Experiment orchestration: materialize task and graphs, run every
//! (protocol, packet length, replication) cell, emit metrics/summary/bounds
//! files, and rank aggregator candidates.
//!
//! Results are a pure function of `(config, root seed)`: cells may run in a
//! worker pool, but each cell owns a derived seed and results are merged in
//! a fixed order before anything is written.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use dflsim_core::analysis::{
    bound_report, default_tau_rho, BoundInputs, BoundReport,
};
use dflsim_core::learning::{task_constants, ModelVector, Task};
use dflsim_core::linalg::{self, Mat};
use dflsim_core::netmodel::NetworkGraph;
use dflsim_core::protocol::{
    run_round_aayg, run_round_cfl, run_round_raa, RoundOutcome, TrainState,
};
use dflsim_core::routing::{assign_slots, min_per_routes, RoutePlan, ScheduleInput};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ProtocolConfig};
use crate::io;
use crate::seeding::{config_hash, stage_seed};
use crate::SimError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write metrics/summary/bounds/routes files here when set.
    pub out_dir: Option<PathBuf>,
    /// Overrides the config's root seed.
    pub seed: Option<u64>,
    /// Worker threads (0 or 1 = sequential).
    pub jobs: usize,
    /// Additionally write each cell's final aggregated models as binary
    /// checkpoints.
    pub save_final_models: bool,
    /// When set, also tabulate the aggregation-coefficient distribution
    /// over this many success-tensor draws per packet length and write the
    /// histograms as CSV.
    pub coeff_trials: Option<u64>,
}

/// Per-round flat record (one metrics.csv row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: u32,
    pub per_client_loss: Vec<f64>,
    pub mean_loss: f64,
    pub max_pairwise_distance: f64,
    pub mean_lambda_sq: f64,
    pub dist_to_opt: Option<f64>,
    pub mean_accuracy: Option<f64>,
    /// `sum_l ||W_l||^2` of this round's training outputs.
    pub sum_w2: f64,
}

/// Everything recorded for one (protocol, packet length, replication) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub protocol: String,
    pub scheme: String,
    pub k_elements: usize,
    pub replication: u32,
    pub rounds: Vec<RoundRow>,
    pub final_mean_loss: f64,
    pub final_max_pairwise_distance: f64,
    pub final_dist_to_opt: Option<f64>,
    pub slots_per_round: u64,
    pub traffic_bits_per_round: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsRecord {
    pub k_elements: usize,
    pub report: BoundReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub root_seed: u64,
    pub n_clients: usize,
    pub cells: Vec<CellResult>,
    /// Bound reports per packet length (quadratic tasks, replication-0
    /// routes, observed trajectory bound for the asymptote).
    pub bounds: Vec<BoundsRecord>,
}

/// `sum_l ||W_l||^2`: squared spectral norms of the per-segment matrices
/// stacking all clients' training outputs.
pub fn sum_w2(models: &[ModelVector]) -> f64 {
    let n = models.len();
    let segments = models[0].num_segments();
    let mut acc = 0.0;
    for l in 0..segments {
        let width = models[0].elements_in_segment(l);
        let mut w = Mat::zeros(n, width);
        for (row, model) in models.iter().enumerate() {
            for (col, v) in model.segment(l).iter().enumerate() {
                w[(row, col)] = *v;
            }
        }
        acc += linalg::spectral_norm_sq(&w);
    }
    acc
}

struct CellSpec {
    protocol: ProtocolConfig,
    k: usize,
    replication: u32,
}

fn run_cell(
    config: &ExperimentConfig,
    root_seed: u64,
    task: &Task,
    graph: &NetworkGraph,
    plan: &RoutePlan,
    spec: &CellSpec,
) -> Result<(CellResult, Vec<ModelVector>), SimError> {
    let label = spec.protocol.label();
    let scheme = spec.protocol.scheme();
    let seed = stage_seed(
        root_seed,
        &format!("losses/{label}/{}/k={}/rep={}", spec.protocol.scheme_label(), spec.k, spec.replication),
    );
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let init = config.train.init.clone().unwrap_or_else(|| vec![0.0; task.dim()]);
    let mut state = TrainState::uniform_init(task, init, spec.k, config.train.eta, config.train.epochs)
        .map_err(|e| SimError::runtime("train-state", e))?
        .with_batch_size(config.train.batch_size);

    let model_bits = config.model_size_bits(task.dim());
    let schedule = match &spec.protocol {
        ProtocolConfig::Raa { .. } => {
            assign_slots(ScheduleInput::RouteAndAggregate { plan }, graph, model_bits)
        }
        ProtocolConfig::Aayg { j, .. } => {
            assign_slots(ScheduleInput::AggregateAsYouGo { j: *j }, graph, model_bits)
        }
        ProtocolConfig::Cfl { aggregator, .. } => assign_slots(
            ScheduleInput::Centralized { plan, aggregator: *aggregator, include_downlink: true },
            graph,
            model_bits,
        ),
    };

    let mut rounds = Vec::with_capacity(config.rounds as usize);
    let mut last_models: Vec<ModelVector> = state.models.clone();
    for _ in 0..config.rounds {
        let outcome: RoundOutcome = match &spec.protocol {
            ProtocolConfig::Raa { .. } => run_round_raa(&mut state, task, plan, scheme, &mut rng),
            ProtocolConfig::Aayg { j, .. } => {
                run_round_aayg(&mut state, task, graph, *j, scheme, &mut rng)
            }
            ProtocolConfig::Cfl { aggregator, .. } => {
                run_round_cfl(&mut state, task, plan, *aggregator, scheme, &mut rng)
            }
        }
        .map_err(|e| SimError::runtime("round", e))?;
        rounds.push(RoundRow {
            round: outcome.round,
            per_client_loss: outcome.metrics.per_client_loss.clone(),
            mean_loss: outcome.metrics.mean_loss,
            max_pairwise_distance: outcome.metrics.max_pairwise_distance,
            mean_lambda_sq: outcome.metrics.mean_lambda_sq,
            dist_to_opt: outcome.metrics.dist_to_opt,
            mean_accuracy: outcome.metrics.mean_accuracy,
            sum_w2: sum_w2(&outcome.local_models),
        });
        last_models = outcome.aggregated;
    }

    let last = rounds.last().expect("at least one round");
    Ok((
        CellResult {
            protocol: label,
            scheme: spec.protocol.scheme_label().into(),
            k_elements: spec.k,
            replication: spec.replication,
            rounds: rounds.clone(),
            final_mean_loss: last.mean_loss,
            final_max_pairwise_distance: last.max_pairwise_distance,
            final_dist_to_opt: last.dist_to_opt,
            slots_per_round: schedule.total_slots,
            traffic_bits_per_round: schedule.total_traffic_bits,
        },
        last_models,
    ))
}

/// Run the full sweep described by the config. Emits files when `out_dir`
/// is set; always returns the structured result.
pub fn run_experiment(
    config: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<ExperimentResult, SimError> {
    config.validate()?;
    let root_seed = opts.seed.unwrap_or(config.seed);
    let mut effective = config.clone();
    effective.seed = root_seed;
    let hash = config_hash(&effective.canonical_json());

    let task = effective.build_task(root_seed)?;
    let n_clients = task.n_clients();

    // Graphs per replication, plans per (replication, k).
    let reps = effective.replications;
    let mut graphs = Vec::with_capacity(reps as usize);
    for r in 0..reps {
        graphs.push(effective.build_graph(root_seed, r)?);
    }
    let ks = effective.packet_lengths.clone();
    let mut plans: Vec<Vec<RoutePlan>> = Vec::with_capacity(reps as usize);
    for g in &graphs {
        let per_k: Result<Vec<RoutePlan>, SimError> = ks
            .iter()
            .map(|&k| min_per_routes(g, k).map_err(|e| SimError::runtime("routing", e)))
            .collect();
        plans.push(per_k?);
    }

    let mut specs = Vec::new();
    for protocol in &effective.protocols {
        for (ki, &k) in ks.iter().enumerate() {
            for r in 0..reps {
                specs.push((CellSpec { protocol: protocol.clone(), k, replication: r }, ki));
            }
        }
    }

    let jobs = opts.jobs.max(1).min(specs.len().max(1));
    let results: Vec<Option<(CellResult, Vec<ModelVector>)>> = {
        let slots: Mutex<Vec<Option<(CellResult, Vec<ModelVector>)>>> =
            Mutex::new((0..specs.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let errors: Mutex<Vec<SimError>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= specs.len() {
                        break;
                    }
                    let (spec, ki) = &specs[idx];
                    let rep = spec.replication as usize;
                    match run_cell(
                        &effective,
                        root_seed,
                        &task,
                        &graphs[rep],
                        &plans[rep][*ki],
                        spec,
                    ) {
                        Ok(cell) => {
                            slots.lock().unwrap()[idx] = Some(cell);
                        }
                        Err(e) => {
                            errors.lock().unwrap().push(e);
                            break;
                        }
                    }
                });
            }
        });
        let mut errs = errors.into_inner().unwrap();
        if let Some(e) = errs.drain(..).next() {
            return Err(e);
        }
        slots.into_inner().unwrap()
    };

    let mut cells = Vec::with_capacity(specs.len());
    let mut final_models = Vec::with_capacity(specs.len());
    for r in results {
        let (cell, models) = r.expect("all cells ran");
        cells.push(cell);
        final_models.push(models);
    }

    // Bound reports per packet length for quadratic tasks, on the
    // replication-0 routes and the observed trajectory bound.
    let mut bounds = Vec::new();
    if let Task::Quadratic(_) = &task {
        let consts = task_constants(&task).map_err(|e| SimError::runtime("bounds", e))?;
        for (ki, &k) in ks.iter().enumerate() {
            let rho = plans[0][ki].e2e_matrix();
            let inputs = BoundInputs {
                l_smooth: consts.l_smooth,
                mu: consts.mu,
                eta: effective.train.eta,
                epochs: effective.train.epochs as u32,
                tau_rho: default_tau_rho(&rho),
                p: task.weights().clone(),
                rho,
                sigma_bar_sq: consts.sigma_bar_sq,
            };
            let lambda_max = cells
                .iter()
                .filter(|c| c.k_elements == k)
                .flat_map(|c| c.rounds.iter().map(|row| row.sum_w2))
                .fold(0.0f64, f64::max);
            let report = bound_report(&inputs, Some(lambda_max))
                .map_err(|e| SimError::runtime("bounds", e))?;
            bounds.push(BoundsRecord { k_elements: k, report });
        }
    }

    let result = ExperimentResult { config_hash: hash, root_seed, n_clients, cells, bounds };

    if let Some(dir) = &opts.out_dir {
        let cells = &result.cells;
        std::fs::create_dir_all(dir)?;
        write_metrics_csv(&dir.join("metrics.csv"), &result)?;
        io::write_json(&dir.join("summary.json"), &summary_of(&result))?;
        io::write_json(
            &dir.join("bounds.json"),
            &serde_json::json!({
                "config_hash": result.config_hash,
                "root_seed": result.root_seed,
                "bounds": result.bounds,
            }),
        )?;
        let plan_refs: Vec<&RoutePlan> = plans[0].iter().collect();
        io::write_routes(
            &dir.join("routes.json"),
            &plan_refs,
            Some(result.config_hash.clone()),
            Some(root_seed),
        )?;
        io::write_task(
            &dir.join("task.json"),
            &task,
            Some(result.config_hash.clone()),
            Some(root_seed),
        )?;
        if let Some(trials) = opts.coeff_trials {
            for (ki, &k) in ks.iter().enumerate() {
                let mut rng = ChaCha12Rng::seed_from_u64(stage_seed(
                    root_seed,
                    &format!("coeff-dist/k={k}"),
                ));
                let stats = dflsim_core::analysis::coefficient_distribution(
                    task.weights(),
                    &plans[0][ki],
                    task.dim(),
                    trials,
                    &mut rng,
                );
                io::write_coeff_histograms(
                    &dir.join(format!("coeff_histograms_k{k}.csv")),
                    &stats,
                    &format!(
                        "dflsim-coeff-histograms v1 config_hash={} root_seed={root_seed}",
                        result.config_hash
                    ),
                )?;
            }
        }
        if opts.save_final_models {
            for (spec_idx, models) in final_models.iter().enumerate() {
                let c = &cells[spec_idx];
                for (client, model) in models.iter().enumerate() {
                    let name = format!(
                        "model_{}_{}_k{}_rep{}_client{client}.bin",
                        c.protocol, c.scheme, c.k_elements, c.replication
                    );
                    io::write_checkpoint(&dir.join(name), model)?;
                }
            }
        }
    }

    Ok(result)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryCell {
    pub protocol: String,
    pub scheme: String,
    pub k_elements: usize,
    pub replication: u32,
    pub rounds: u32,
    pub final_mean_loss: f64,
    pub final_max_pairwise_distance: f64,
    pub final_dist_to_opt: Option<f64>,
    pub total_slots: u64,
    pub total_traffic_bits: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub root_seed: u64,
    pub cells: Vec<SummaryCell>,
}

pub fn summary_of(result: &ExperimentResult) -> Summary {
    Summary {
        config_hash: result.config_hash.clone(),
        root_seed: result.root_seed,
        cells: result
            .cells
            .iter()
            .map(|c| SummaryCell {
                protocol: c.protocol.clone(),
                scheme: c.scheme.clone(),
                k_elements: c.k_elements,
                replication: c.replication,
                rounds: c.rounds.len() as u32,
                final_mean_loss: c.final_mean_loss,
                final_max_pairwise_distance: c.final_max_pairwise_distance,
                final_dist_to_opt: c.final_dist_to_opt,
                total_slots: c.slots_per_round * c.rounds.len() as u64,
                total_traffic_bits: c.traffic_bits_per_round * c.rounds.len() as u64,
            })
            .collect(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Append-only flat rows, schema versioned by the header.
pub fn write_metrics_csv(path: &Path, result: &ExperimentResult) -> Result<(), SimError> {
    let mut out = String::new();
    out.push_str(&format!(
        "# dflsim-metrics v1 config_hash={} root_seed={}\n",
        result.config_hash, result.root_seed
    ));
    let loss_cols: Vec<String> = (0..result.n_clients).map(|i| format!("loss_{i}")).collect();
    out.push_str(&format!(
        "replication,round,protocol,scheme,k,mean_loss,max_pairwise_distance,mean_lambda_sq,dist_to_opt,mean_accuracy,sum_w2,cum_traffic_bits,cum_slots,{}\n",
        loss_cols.join(",")
    ));
    for cell in &result.cells {
        for row in &cell.rounds {
            let losses: Vec<String> = row.per_client_loss.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                cell.replication,
                row.round,
                cell.protocol,
                cell.scheme,
                cell.k_elements,
                row.mean_loss,
                row.max_pairwise_distance,
                row.mean_lambda_sq,
                fmt_opt(row.dist_to_opt),
                fmt_opt(row.mean_accuracy),
                row.sum_w2,
                cell.traffic_bits_per_round * row.round as u64,
                cell.slots_per_round * row.round as u64,
                losses.join(",")
            ));
        }
    }
    Ok(std::fs::write(path, out)?)
}

// ---------------------------------------------------------------------------
// Aggregator sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregatorScore {
    pub aggregator: usize,
    /// Mean over packet lengths and replications of the final mean loss.
    pub mean_final_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregatorSweep {
    pub config_hash: String,
    pub root_seed: u64,
    /// Ranked best (lowest final loss) first.
    pub ranking: Vec<AggregatorScore>,
}

/// Run the centralized protocol once per candidate aggregator and rank
/// candidates by final mean loss. The config must contain a `cfl` protocol
/// entry, whose scheme the sweep re-uses.
pub fn sweep_aggregator(
    config: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<AggregatorSweep, SimError> {
    config.validate()?;
    let scheme = config
        .protocols
        .iter()
        .find_map(|p| match p {
            ProtocolConfig::Cfl { scheme, .. } => Some(*scheme),
            _ => None,
        })
        .ok_or_else(|| SimError::Config("sweep-aggregator needs a cfl protocol entry".into()))?;

    let root_seed = opts.seed.unwrap_or(config.seed);
    let n = config.n_participants();
    let mut ranking = Vec::with_capacity(n);
    let mut hash = String::new();
    for candidate in 0..n {
        let mut candidate_cfg = config.clone();
        candidate_cfg.seed = root_seed;
        candidate_cfg.protocols = vec![ProtocolConfig::Cfl { aggregator: candidate, scheme }];
        let run_opts =
            RunOptions { out_dir: None, seed: Some(root_seed), jobs: opts.jobs, ..Default::default() };
        let result = run_experiment(&candidate_cfg, &run_opts)?;
        if candidate == 0 {
            hash = config_hash(&{
                let mut base = config.clone();
                base.seed = root_seed;
                base.canonical_json()
            });
        }
        let mean_final_loss = result.cells.iter().map(|c| c.final_mean_loss).sum::<f64>()
            / result.cells.len() as f64;
        ranking.push(AggregatorScore { aggregator: candidate, mean_final_loss });
    }
    ranking.sort_by(|a, b| a.mean_final_loss.total_cmp(&b.mean_final_loss).then(a.aggregator.cmp(&b.aggregator)));

    let sweep = AggregatorSweep { config_hash: hash, root_seed, ranking };
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
        io::write_json(&dir.join("aggregator_sweep.json"), &sweep)?;
    }
    Ok(sweep)
}
