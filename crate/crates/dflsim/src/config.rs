//! Experiment configuration: a single JSON document, strictly validated
//! (unknown keys rejected), from which every randomized stage derives its
//! seed through the root-seed fan-out.

use dflsim_core::learning::{LogisticTask, QuadraticTask, Task, TinyMlpTask, Weights};
use dflsim_core::netmodel::{ChannelParams, NetworkGraph};
use dflsim_core::protocol::AggregationScheme;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::stage_seed;
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every stage seed is derived from it.
    pub seed: u64,
    /// Training rounds per replication.
    pub rounds: u32,
    /// Monte Carlo replications (independent loss draws, and independent
    /// random topology parts where the topology is randomized).
    pub replications: u32,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub channel: ChannelParams,
    pub task: TaskConfig,
    pub train: TrainConfig,
    /// Protocols to run side by side on the same graphs and tasks.
    pub protocols: Vec<ProtocolConfig>,
    /// Packet lengths (elements per segment) to sweep.
    pub packet_lengths: Vec<usize>,
    /// Overrides the on-wire model size used for overhead accounting
    /// (defaults to `bits_per_element * model_dim`).
    #[serde(default)]
    pub model_size_bits: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// Fixed participant coordinates in meters; mutually exclusive with
    /// `n_participants`.
    #[serde(default)]
    pub coordinates: Option<Vec<[f64; 2]>>,
    /// Number of randomly placed participants.
    #[serde(default)]
    pub n_participants: Option<usize>,
    /// Randomly placed routing-only relays.
    #[serde(default)]
    pub n_relays: usize,
    /// Side of the square placement area in meters (required when anything
    /// is placed randomly).
    #[serde(default)]
    pub area_side_m: Option<f64>,
    pub edge_density: f64,
    /// Multiplies all coordinates before channel evaluation; lets one
    /// coordinate table serve both near-error-free and lossy regimes.
    #[serde(default = "default_scale")]
    pub coordinate_scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Quadratic {
        clients: usize,
        dim: usize,
        #[serde(default = "default_mu_floor")]
        mu_floor: f64,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_center_range")]
        center_range: f64,
        /// Raw per-client weights (normalized internally); uniform when
        /// omitted.
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Logistic {
        clients: usize,
        samples_per_client: usize,
        dim: usize,
        /// Spread of the per-client separator perturbation (how non-iid the
        /// clients are).
        #[serde(default = "default_heterogeneity")]
        heterogeneity: f64,
        /// One-class-per-client partition (extreme non-iid); overrides the
        /// separator perturbation.
        #[serde(default)]
        label_skew: bool,
    },
    TinyMlp {
        clients: usize,
        samples_per_client: usize,
        hidden: usize,
    },
}

fn default_mu_floor() -> f64 {
    0.5
}

fn default_spread() -> f64 {
    1.5
}

fn default_center_range() -> f64 {
    1.0
}

fn default_heterogeneity() -> f64 {
    1.0
}

impl TaskConfig {
    pub fn clients(&self) -> usize {
        match self {
            TaskConfig::Quadratic { clients, .. }
            | TaskConfig::Logistic { clients, .. }
            | TaskConfig::TinyMlp { clients, .. } => *clients,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub epochs: usize,
    /// Shared initial parameter vector; zeros when omitted.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    /// Mini-batch size for data-backed tasks (full-batch when omitted; the
    /// bound machinery assumes full-batch).
    #[serde(default)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolConfig {
    /// Route-and-aggregate over min-E2E-PER routes.
    Raa { scheme: AggregationScheme },
    /// Gossip flooding with `j` broadcast/aggregate iterations per round.
    Aayg { j: u32, scheme: AggregationScheme },
    /// Centralized aggregation at a designated participant.
    Cfl { aggregator: usize, scheme: AggregationScheme },
}

impl ProtocolConfig {
    pub fn label(&self) -> String {
        match self {
            ProtocolConfig::Raa { .. } => "raa".into(),
            ProtocolConfig::Aayg { j, .. } => format!("aayg-j{j}"),
            ProtocolConfig::Cfl { aggregator, .. } => format!("cfl-a{aggregator}"),
        }
    }

    pub fn scheme(&self) -> AggregationScheme {
        match self {
            ProtocolConfig::Raa { scheme }
            | ProtocolConfig::Aayg { scheme, .. }
            | ProtocolConfig::Cfl { scheme, .. } => *scheme,
        }
    }

    pub fn scheme_label(&self) -> &'static str {
        match self.scheme() {
            AggregationScheme::CoeffNormalization => "coeff_norm",
            AggregationScheme::ModelSubstitution => "model_subst",
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| SimError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization used for the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let t = &self.topology;
        let n_participants = match (&t.coordinates, t.n_participants) {
            (Some(c), None) => c.len(),
            (None, Some(n)) => n,
            _ => {
                return Err(SimError::Config(
                    "topology: exactly one of `coordinates` or `n_participants` must be set".into(),
                ))
            }
        };
        if n_participants < 2 {
            return Err(SimError::Config("topology: need at least two participants".into()));
        }
        if !(t.edge_density > 0.0 && t.edge_density <= 1.0) {
            return Err(SimError::Config("topology: edge_density must be in (0, 1]".into()));
        }
        if (t.n_participants.is_some() || t.n_relays > 0) && t.area_side_m.is_none() {
            return Err(SimError::Config(
                "topology: area_side_m is required for random placement".into(),
            ));
        }
        if !(t.coordinate_scale > 0.0) {
            return Err(SimError::Config("topology: coordinate_scale must be positive".into()));
        }
        if self.task.clients() != n_participants {
            return Err(SimError::Config(format!(
                "task has {} clients but the topology has {} participants",
                self.task.clients(),
                n_participants
            )));
        }
        if self.protocols.is_empty() {
            return Err(SimError::Config("at least one protocol required".into()));
        }
        for p in &self.protocols {
            if let ProtocolConfig::Cfl { aggregator, .. } = p {
                if *aggregator >= n_participants {
                    return Err(SimError::Config(format!(
                        "cfl aggregator {aggregator} is not a participant id"
                    )));
                }
            }
            if let ProtocolConfig::Aayg { j, .. } = p {
                if *j < 1 {
                    return Err(SimError::Config("aayg needs j >= 1".into()));
                }
            }
        }
        if self.packet_lengths.is_empty() || self.packet_lengths.iter().any(|&k| k == 0) {
            return Err(SimError::Config("packet_lengths must be non-empty positive".into()));
        }
        if self.rounds < 1 || self.replications < 1 {
            return Err(SimError::Config("rounds and replications must be at least 1".into()));
        }
        if !(self.train.eta > 0.0) || self.train.epochs < 1 {
            return Err(SimError::Config("train: eta > 0 and epochs >= 1 required".into()));
        }
        if self.train.batch_size.is_some() {
            if matches!(self.task, TaskConfig::Quadratic { .. }) {
                return Err(SimError::Config(
                    "train: batch_size requires a data-backed task (logistic or tiny_mlp)".into(),
                ));
            }
            if self.train.batch_size == Some(0) {
                return Err(SimError::Config("train: batch_size must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn n_participants(&self) -> usize {
        self.topology
            .coordinates
            .as_ref()
            .map(|c| c.len())
            .or(self.topology.n_participants)
            .expect("validated")
    }

    /// Materialize the task from its stage seed.
    pub fn build_task(&self, root_seed: u64) -> Result<Task, SimError> {
        let mut rng = ChaCha12Rng::seed_from_u64(stage_seed(root_seed, "task"));
        let task = match &self.task {
            TaskConfig::Quadratic { clients, dim, mu_floor, spread, center_range, weights } => {
                let p = match weights {
                    Some(w) => Weights::new(w.clone())
                        .map_err(|e| SimError::Config(format!("task weights: {e}")))?,
                    None => Weights::uniform(*clients),
                };
                Task::Quadratic(
                    QuadraticTask::random(*clients, *dim, *mu_floor, *spread, *center_range, p, &mut rng)
                        .map_err(|e| SimError::runtime("task", e))?,
                )
            }
            TaskConfig::Logistic { clients, samples_per_client, dim, heterogeneity, label_skew } => {
                let built = if *label_skew {
                    LogisticTask::synthetic_label_skew(*clients, *samples_per_client, *dim, &mut rng)
                } else {
                    LogisticTask::synthetic(*clients, *samples_per_client, *dim, *heterogeneity, &mut rng)
                };
                Task::Logistic(built.map_err(|e| SimError::runtime("task", e))?)
            }
            TaskConfig::TinyMlp { clients, samples_per_client, hidden } => Task::TinyMlp(
                TinyMlpTask::synthetic(*clients, *samples_per_client, *hidden, &mut rng)
                    .map_err(|e| SimError::runtime("task", e))?,
            ),
        };
        Ok(task)
    }

    /// Materialize the graph for one replication. Replications share fixed
    /// coordinates but draw independent random placements.
    pub fn build_graph(&self, root_seed: u64, replication: u32) -> Result<NetworkGraph, SimError> {
        self.build_graph_with_relays(root_seed, replication, self.topology.n_relays)
    }

    /// As [`build_graph`](Self::build_graph) with an explicit relay count
    /// (used by the relay-sweep recipes).
    pub fn build_graph_with_relays(
        &self,
        root_seed: u64,
        replication: u32,
        n_relays: usize,
    ) -> Result<NetworkGraph, SimError> {
        let t = &self.topology;
        let seed = stage_seed(root_seed, &format!("topology/relays={n_relays}/rep={replication}"));
        let scale = t.coordinate_scale;
        let area = t.area_side_m.map(|s| (s * scale) * (s * scale));
        let graph = match &t.coordinates {
            Some(coords) => {
                let scaled: Vec<(f64, f64)> =
                    coords.iter().map(|c| (c[0] * scale, c[1] * scale)).collect();
                if n_relays == 0 {
                    NetworkGraph::from_coordinates(&scaled, &[], t.edge_density, self.channel.clone())
                } else {
                    NetworkGraph::with_random_relays(
                        &scaled,
                        n_relays,
                        area.ok_or_else(|| SimError::Config("area_side_m required".into()))?,
                        t.edge_density,
                        seed,
                        self.channel.clone(),
                    )
                }
            }
            None => NetworkGraph::random_geometric(
                t.n_participants.expect("validated"),
                n_relays,
                area.ok_or_else(|| SimError::Config("area_side_m required".into()))?,
                t.edge_density,
                seed,
                self.channel.clone(),
            ),
        };
        graph.map_err(|e| SimError::runtime("topology", e))
    }

    /// On-wire model size in bits for overhead accounting.
    pub fn model_size_bits(&self, model_dim: usize) -> u64 {
        self.model_size_bits
            .unwrap_or(self.channel.bits_per_element as u64 * model_dim as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config() -> String {
        r#"{
            "seed": 7,
            "rounds": 3,
            "replications": 2,
            "topology": {"coordinates": [[0,0],[500,0],[0,500]], "edge_density": 1.0},
            "task": {"quadratic": {"clients": 3, "dim": 6}},
            "train": {"eta": 0.05, "epochs": 1},
            "protocols": [{"raa": {"scheme": "coeff_normalization"}}],
            "packet_lengths": [2]
        }"#
        .into()
    }

    #[test]
    fn minimal_config_parses_and_builds() {
        let cfg = ExperimentConfig::from_json(&minimal_config()).unwrap();
        assert_eq!(cfg.n_participants(), 3);
        let task = cfg.build_task(cfg.seed).unwrap();
        assert_eq!(task.n_clients(), 3);
        let g = cfg.build_graph(cfg.seed, 0).unwrap();
        assert_eq!(g.n_participants(), 3);
        // Deterministic rebuild.
        assert_eq!(format!("{:?}", cfg.build_graph(cfg.seed, 0).unwrap()), format!("{g:?}"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = minimal_config().replace("\"seed\": 7", "\"seed\": 7, \"sneaky\": 1");
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        assert!(matches!(err, SimError::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn mismatched_clients_are_rejected() {
        let bad = minimal_config().replace("\"clients\": 3", "\"clients\": 4");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn config_errors_carry_location() {
        let bad = minimal_config().replace("\"rounds\": 3,", "\"rounds\": \"three\",");
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("line"), "{msg}");
    }
}
