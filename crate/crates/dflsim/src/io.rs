//! File formats: graph JSON, route-plan JSON, schedule CSV, bound
//! inputs/reports JSON, metrics CSV, and binary model checkpoints.
//!
//! All floating-point values go through `serde_json`'s shortest-round-trip
//! formatting, so exports are lossless at full binary64 precision.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use dflsim_core::analysis::{bound_report, default_tau_rho, BoundInputs, BoundReport};
use dflsim_core::learning::{ModelVector, Task, Weights};
use dflsim_core::linalg::Mat;
use dflsim_core::netmodel::{ChannelParams, Link, NetworkGraph, Node};
use dflsim_core::routing::{RoutePlan, SlotSchedule};
use serde::{Deserialize, Serialize};

use crate::SimError;

// ---------------------------------------------------------------------------
// Graph JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub channel: ChannelParams,
    pub edge_density: f64,
    pub nodes: Vec<Node>,
    pub links: Vec<GraphLink>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphLink {
    pub m: usize,
    pub n: usize,
    pub bit_success: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_loss_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_linear: Option<f64>,
}

pub fn graph_to_file(graph: &NetworkGraph) -> GraphFile {
    GraphFile {
        channel: graph.channel().clone(),
        edge_density: graph.edge_density(),
        nodes: graph.nodes().to_vec(),
        links: graph
            .links()
            .iter()
            .map(|l| GraphLink {
                m: l.m,
                n: l.n,
                bit_success: l.bit_success,
                distance_m: Some(l.distance_m),
                path_loss_db: Some(l.path_loss_db),
                snr_linear: Some(l.snr_linear),
            })
            .collect(),
    }
}

pub fn graph_from_file(file: GraphFile) -> Result<NetworkGraph, SimError> {
    let links: Vec<Link> = file
        .links
        .into_iter()
        .map(|l| Link {
            m: l.m,
            n: l.n,
            distance_m: l.distance_m.unwrap_or(0.0),
            path_loss_db: l.path_loss_db.unwrap_or(0.0),
            snr_linear: l.snr_linear.unwrap_or(0.0),
            bit_success: l.bit_success,
        })
        .collect();
    NetworkGraph::from_parts(file.nodes, links, file.edge_density, file.channel)
        .map_err(|e| SimError::runtime("graph", e))
}

pub fn write_graph(path: &Path, graph: &NetworkGraph) -> Result<(), SimError> {
    write_json(path, &graph_to_file(graph))
}

pub fn read_graph(path: &Path) -> Result<NetworkGraph, SimError> {
    let text = fs::read_to_string(path)?;
    let file: GraphFile = serde_json::from_str(&text)
        .map_err(|e| SimError::Config(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))?;
    graph_from_file(file)
}

// ---------------------------------------------------------------------------
// Route plan JSON and schedule CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutesFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_seed: Option<u64>,
    pub plans: Vec<PlanRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanRecord {
    pub k_elements: usize,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub src: usize,
    pub dst: usize,
    pub hops: Vec<usize>,
    pub e2e_success: f64,
}

pub fn plan_record(plan: &RoutePlan) -> PlanRecord {
    PlanRecord {
        k_elements: plan.k_elements(),
        pairs: plan
            .routes()
            .iter()
            .map(|r| PairRecord {
                src: r.src,
                dst: r.dst,
                hops: r.hops.clone(),
                e2e_success: r.e2e_success,
            })
            .collect(),
    }
}

pub fn write_routes(
    path: &Path,
    plans: &[&RoutePlan],
    config_hash: Option<String>,
    root_seed: Option<u64>,
) -> Result<(), SimError> {
    let file = RoutesFile {
        config_hash,
        root_seed,
        plans: plans.iter().map(|p| plan_record(p)).collect(),
    };
    write_json(path, &file)
}

/// Schedule rows as `slot,transmitter,payload_source,receivers`, receivers
/// separated by `;`.
pub fn write_schedule(path: &Path, schedule: &SlotSchedule, header: &str) -> Result<(), SimError> {
    let mut out = String::new();
    out.push_str(&format!("# {header}\n"));
    out.push_str(&format!(
        "# total_slots={} total_traffic_bits={}\n",
        schedule.total_slots, schedule.total_traffic_bits
    ));
    out.push_str("slot,transmitter,payload_source,receivers\n");
    for t in &schedule.transmissions {
        let receivers: Vec<String> = t.receivers.iter().map(|r| r.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.slot,
            t.transmitter,
            t.payload_source,
            receivers.join(";")
        ));
    }
    Ok(fs::write(path, out)?)
}

// ---------------------------------------------------------------------------
// Bound inputs / reports
// ---------------------------------------------------------------------------

/// On-disk form of [`BoundInputs`]; `tau_rho` falls back to the
/// `max(1 - rho)` calibration when omitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputsFile {
    pub l_smooth: f64,
    pub mu: f64,
    pub eta: f64,
    pub epochs: u32,
    #[serde(default)]
    pub tau_rho: Option<f64>,
    /// Raw weights, normalized on load.
    pub p: Vec<f64>,
    /// Row-major E2E success matrix.
    pub rho: Vec<Vec<f64>>,
    pub sigma_bar_sq: f64,
    /// Trajectory bound on `sum_l ||W_l||^2` enabling the asymptote.
    #[serde(default)]
    pub lambda_max: Option<f64>,
}

pub fn bound_inputs_from_file(file: BoundInputsFile) -> Result<(BoundInputs, Option<f64>), SimError> {
    let n = file.p.len();
    if file.rho.len() != n || file.rho.iter().any(|row| row.len() != n) {
        return Err(SimError::Config("rho must be an n x n matrix matching p".into()));
    }
    let mut rho = Mat::zeros(n, n);
    for (r, row) in file.rho.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            rho[(r, c)] = *v;
        }
    }
    let p = Weights::new(file.p).map_err(|e| SimError::Config(format!("weights: {e}")))?;
    let tau_rho = file.tau_rho.unwrap_or_else(|| default_tau_rho(&rho));
    let inputs = BoundInputs {
        l_smooth: file.l_smooth,
        mu: file.mu,
        eta: file.eta,
        epochs: file.epochs,
        tau_rho,
        p,
        rho,
        sigma_bar_sq: file.sigma_bar_sq,
    };
    inputs.validate().map_err(|e| SimError::Config(e.to_string()))?;
    Ok((inputs, file.lambda_max))
}

pub fn evaluate_bounds_file(path: &Path) -> Result<BoundReport, SimError> {
    let text = fs::read_to_string(path)?;
    let file: BoundInputsFile = serde_json::from_str(&text)
        .map_err(|e| SimError::Config(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))?;
    let (inputs, lambda_max) = bound_inputs_from_file(file)?;
    bound_report(&inputs, lambda_max).map_err(|e| SimError::runtime("bounds", e))
}

// ---------------------------------------------------------------------------
// Coefficient distribution histograms
// ---------------------------------------------------------------------------

/// Histogram CSV: one row per (ordered pair, bin) as
/// `src,dst,bin_lo,bin_hi,count`, preceded by per-pair summary comments.
pub fn write_coeff_histograms(
    path: &Path,
    stats: &dflsim_core::analysis::CoefficientStats,
    header: &str,
) -> Result<(), SimError> {
    use dflsim_core::analysis::COEFF_HISTOGRAM_BINS;
    let mut out = String::new();
    out.push_str(&format!("# {header}\n"));
    out.push_str(&format!(
        "# trials={} segments_per_trial={} clients={}\n",
        stats.trials, stats.segments_per_trial, stats.n_clients
    ));
    out.push_str("src,dst,bin_lo,bin_hi,count\n");
    let width = 1.0 / COEFF_HISTOGRAM_BINS as f64;
    for pair in &stats.pairs {
        for (bin, &count) in pair.histogram.iter().enumerate() {
            if count == 0 {
                continue;
            }
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                pair.src,
                pair.dst,
                bin as f64 * width,
                (bin + 1) as f64 * width,
                count
            ));
        }
    }
    Ok(fs::write(path, out)?)
}

// ---------------------------------------------------------------------------
// Model checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"DFLMODEL";

/// Binary checkpoint: 16-byte header (8-byte magic, u32 dimension M, u32
/// segment size K, both little-endian) followed by M little-endian binary64
/// parameters.
pub fn write_checkpoint(path: &Path, model: &ModelVector) -> Result<(), SimError> {
    let mut out = Vec::with_capacity(16 + model.dim() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.segment_size() as u32).to_le_bytes());
    for v in model.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(fs::write(path, out)?)
}

pub fn read_checkpoint(path: &Path) -> Result<ModelVector, SimError> {
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)?;
    if &header[..8] != CHECKPOINT_MAGIC {
        return Err(SimError::runtime("checkpoint", "bad magic"));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut body = vec![0u8; dim * 8];
    file.read_exact(&mut body)?;
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if k == 0 || params.len() != dim {
        return Err(SimError::runtime("checkpoint", "corrupt header"));
    }
    Ok(ModelVector::new(params, k))
}

// ---------------------------------------------------------------------------
// Task JSON and generic JSON helpers
// ---------------------------------------------------------------------------

/// Task file: the realized task plus the provenance header every emitted
/// file carries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_seed: Option<u64>,
    pub task: Task,
}

pub fn write_task(
    path: &Path,
    task: &Task,
    config_hash: Option<String>,
    root_seed: Option<u64>,
) -> Result<(), SimError> {
    write_json(path, &TaskFile { config_hash, root_seed, task: task.clone() })
}

pub fn read_task(path: &Path) -> Result<Task, SimError> {
    let text = fs::read_to_string(path)?;
    let file: TaskFile = serde_json::from_str(&text)
        .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
    Ok(file.task)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SimError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| SimError::runtime("serialize", e))?;
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
