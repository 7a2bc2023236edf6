//! Canned experiment configurations for the comparison scenarios the tool
//! ships with. Each recipe is an ordinary [`ExperimentConfig`]; `dflsim
//! recipe <name>` prints it for editing or direct use.

use dflsim_core::netmodel::{ChannelParams, REFERENCE_TEN_CLIENTS};
use dflsim_core::protocol::AggregationScheme;

use crate::config::{ExperimentConfig, ProtocolConfig, TaskConfig, TopologyConfig, TrainConfig};
use crate::SimError;

/// Coordinate scale that puts the reference ten-client topology into the
/// lossy regime (per-link BERs up to ~8e-3 at half density, per-pair E2E
/// success from ~1.0 down to ~1e-4 across the packet-length sweep), so
/// packet length and routing quality matter.
pub const LOSSY_SCALE: f64 = 2000.0;

fn reference_coords() -> Vec<[f64; 2]> {
    REFERENCE_TEN_CLIENTS.iter().map(|&(x, y)| [x, y]).collect()
}

fn base_topology(edge_density: f64, scale: f64) -> TopologyConfig {
    TopologyConfig {
        coordinates: Some(reference_coords()),
        n_participants: None,
        n_relays: 0,
        area_side_m: None,
        edge_density,
        coordinate_scale: scale,
    }
}

/// Ten clients, unit scale (links effectively error-free), complete graph:
/// the routed, gossip, and centralized protocols must produce identical
/// trajectories.
pub fn errorfree_equivalence() -> ExperimentConfig {
    ExperimentConfig {
        seed: 7001,
        rounds: 50,
        replications: 1,
        topology: base_topology(1.0, 1.0),
        channel: ChannelParams::default(),
        task: TaskConfig::Quadratic {
            clients: 10,
            dim: 24,
            mu_floor: 0.5,
            spread: 1.5,
            center_range: 1.0,
            weights: None,
        },
        train: TrainConfig { eta: 0.05, epochs: 2, init: None, batch_size: None },
        protocols: vec![
            ProtocolConfig::Raa { scheme: AggregationScheme::CoeffNormalization },
            ProtocolConfig::Raa { scheme: AggregationScheme::ModelSubstitution },
            ProtocolConfig::Aayg { j: 1, scheme: AggregationScheme::CoeffNormalization },
            ProtocolConfig::Cfl { aggregator: 0, scheme: AggregationScheme::CoeffNormalization },
        ],
        packet_lengths: vec![8],
        model_size_bits: None,
    }
}

/// Overhead accounting for a 38.72 Mbit model on the half-density reference
/// topology: gossip traffic is `J * N * model_size` by construction.
pub fn overhead_table() -> ExperimentConfig {
    ExperimentConfig {
        seed: 7002,
        rounds: 1,
        replications: 1,
        topology: base_topology(0.5, 1.0),
        channel: ChannelParams::default(),
        task: TaskConfig::Quadratic {
            clients: 10,
            dim: 24,
            mu_floor: 0.5,
            spread: 1.5,
            center_range: 1.0,
            weights: None,
        },
        train: TrainConfig { eta: 0.05, epochs: 1, init: None, batch_size: None },
        protocols: vec![
            ProtocolConfig::Raa { scheme: AggregationScheme::CoeffNormalization },
            ProtocolConfig::Aayg { j: 1, scheme: AggregationScheme::CoeffNormalization },
            ProtocolConfig::Aayg { j: 5, scheme: AggregationScheme::CoeffNormalization },
            ProtocolConfig::Cfl { aggregator: 6, scheme: AggregationScheme::CoeffNormalization },
        ],
        packet_lengths: vec![8],
        model_size_bits: Some(38_720_000),
    }
}

/// Lossy-regime protocol comparison at one edge density: routed coefficient
/// normalization vs. model substitution vs. single-shot gossip, across a
/// packet-length sweep.
pub fn degradation_ordering(edge_density: f64, classifier: bool) -> ExperimentConfig {
    let (task, train, packet_lengths, rounds, scale) = if classifier {
        (
            TaskConfig::Logistic {
                clients: 10,
                samples_per_client: 32,
                dim: 12,
                heterogeneity: 1.0,
                label_skew: true,
            },
            TrainConfig { eta: 0.3, epochs: 1, init: None, batch_size: None },
            vec![1, 4, 12],
            60,
            // One-class clients need the severe-loss regime for aggregation
            // quality to dominate.
            1.5 * LOSSY_SCALE,
        )
    } else {
        (
            TaskConfig::Quadratic {
                clients: 10,
                dim: 48,
                mu_floor: 0.5,
                spread: 1.5,
                center_range: 1.0,
                weights: None,
            },
            TrainConfig { eta: 0.05, epochs: 1, init: None, batch_size: None },
            vec![4, 16, 48],
            30,
            LOSSY_SCALE,
        )
    };
    ExperimentConfig {
        seed: 7003,
        rounds,
        replications: 10,
        topology: base_topology(edge_density, scale),
        channel: ChannelParams::default(),
        task,
        train,
        protocols: vec![
            ProtocolConfig::Raa { scheme: AggregationScheme::CoeffNormalization },
            ProtocolConfig::Raa { scheme: AggregationScheme::ModelSubstitution },
            // The classical gossip baseline replaces erroneous receptions
            // with the receiver's own model.
            ProtocolConfig::Aayg { j: 1, scheme: AggregationScheme::ModelSubstitution },
        ],
        packet_lengths,
        model_size_bits: None,
    }
}

/// Doubled-area lossy topology with randomly placed routing-only relays:
/// more relays should recover the error-free centralized loss.
///
/// The scale is chosen so that the doubled geometry cuts off the most
/// distant client at zero relays, while a few dozen relays (typical raw
/// spacing ~2 km) form near-error-free multi-hop chains.
pub fn relay_sweep(n_relays: usize) -> ExperimentConfig {
    let coords: Vec<[f64; 2]> =
        REFERENCE_TEN_CLIENTS.iter().map(|&(x, y)| [2.0 * x, 2.0 * y]).collect();
    ExperimentConfig {
        seed: 7004,
        rounds: 60,
        replications: 10,
        topology: TopologyConfig {
            coordinates: Some(coords),
            n_participants: None,
            n_relays,
            area_side_m: Some(10_700.0),
            edge_density: 0.5,
            coordinate_scale: 0.65 * LOSSY_SCALE,
        },
        channel: ChannelParams::default(),
        task: TaskConfig::Quadratic {
            clients: 10,
            dim: 48,
            mu_floor: 0.5,
            spread: 1.5,
            center_range: 1.0,
            weights: None,
        },
        train: TrainConfig { eta: 0.1, epochs: 1, init: None, batch_size: None },
        protocols: vec![ProtocolConfig::Raa { scheme: AggregationScheme::CoeffNormalization }],
        packet_lengths: vec![16],
        model_size_bits: None,
    }
}

/// Resolve a recipe by name. Multi-variant recipes take a suffix, e.g.
/// `degradation-rho05`, `relay-sweep-28`.
pub fn by_name(name: &str) -> Result<ExperimentConfig, SimError> {
    match name {
        "errorfree-equivalence" => Ok(errorfree_equivalence()),
        "overhead-table" => Ok(overhead_table()),
        "degradation-rho05" => Ok(degradation_ordering(0.5, false)),
        "degradation-rho09" => Ok(degradation_ordering(0.9, false)),
        "degradation-classifier-rho05" => Ok(degradation_ordering(0.5, true)),
        "degradation-classifier-rho09" => Ok(degradation_ordering(0.9, true)),
        _ => {
            if let Some(count) = name.strip_prefix("relay-sweep-") {
                let n: usize = count
                    .parse()
                    .map_err(|_| SimError::Config(format!("bad relay count in recipe {name}")))?;
                return Ok(relay_sweep(n));
            }
            Err(SimError::Config(format!(
                "unknown recipe {name}; known: errorfree-equivalence, overhead-table, \
                 degradation-rho05, degradation-rho09, degradation-classifier-rho05, \
                 degradation-classifier-rho09, relay-sweep-<N>"
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_recipes_validate() {
        for name in [
            "errorfree-equivalence",
            "overhead-table",
            "degradation-rho05",
            "degradation-rho09",
            "degradation-classifier-rho05",
            "relay-sweep-0",
            "relay-sweep-28",
        ] {
            let cfg = by_name(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(by_name("nope").is_err());
    }
}
