//! Network topologies and the channel chain that turns geometry into
//! per-link bit/packet success rates.
//!
//! A link's quality is derived as: distance -> path loss (dB) -> SNR ->
//! bit success rate `eps` (via the Gaussian Q-function) -> packet success
//! rate `eps^(bits_per_element * K)` for a K-element segment.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::math;

/// Maximum topology regeneration attempts before giving up on connectivity.
const MAX_BUILD_ATTEMPTS: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum NetError {
    /// No connected topology found within the attempt budget.
    ConnectivityFailure { attempts: u32 },
    /// The requested edge density yields fewer links than a spanning tree.
    InvalidDensity { requested_links: usize, minimum: usize },
    /// Nonpositive or non-finite input to a channel formula.
    DomainError(&'static str),
    /// Structural validation failure when assembling a graph from parts.
    InvalidGraph(&'static str),
}

impl core::fmt::Display for NetError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NetError::ConnectivityFailure { attempts } => {
                write!(f, "no connected topology found in {attempts} attempts")
            }
            NetError::InvalidDensity { requested_links, minimum } => write!(
                f,
                "edge density yields {requested_links} links, below the {minimum} needed to connect"
            ),
            NetError::DomainError(what) => write!(f, "domain error: {what}"),
            NetError::InvalidGraph(what) => write!(f, "invalid graph: {what}"),
        }
    }
}

impl core::error::Error for NetError {}

/// Whether a node trains models or only forwards traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    /// Holds data, trains, and aggregates.
    Participant,
    /// Routing-only: relays packets, holds no data, never aggregates.
    Relay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub kind: NodeKind,
}

/// An undirected link with its channel quality. `m < n` by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub m: usize,
    pub n: usize,
    pub distance_m: f64,
    pub path_loss_db: f64,
    pub snr_linear: f64,
    /// Per-bit success probability, strictly in (0, 1].
    pub bit_success: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

/// Radio parameters shared by all links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub carrier_ghz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub modulation: Modulation,
    /// Bits per model element on the wire (32 for float32 encoding).
    pub bits_per_element: u32,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            carrier_ghz: 2.5,
            bandwidth_hz: 30e6,
            tx_power_dbm: 20.0,
            noise_psd_dbm_hz: -174.0,
            modulation: Modulation::Bpsk,
            bits_per_element: 32,
        }
    }
}

impl ChannelParams {
    /// Noise floor `N0 * B` in dBm.
    pub fn noise_floor_dbm(&self) -> f64 {
        self.noise_psd_dbm_hz + 10.0 * math::log10(self.bandwidth_hz)
    }
}

/// Free-space-style path loss `20 log10(f_c) + 20 log10(d) + 32.4` in dB,
/// with the carrier in GHz and the distance in km.
pub fn path_loss_db(distance_km: f64, carrier_ghz: f64) -> Result<f64, NetError> {
    if !(distance_km > 0.0) || !distance_km.is_finite() {
        return Err(NetError::DomainError("distance must be positive and finite"));
    }
    if !(carrier_ghz > 0.0) || !carrier_ghz.is_finite() {
        return Err(NetError::DomainError("carrier frequency must be positive"));
    }
    Ok(20.0 * math::log10(carrier_ghz) + 20.0 * math::log10(distance_km) + 32.4)
}

/// Linear SNR `gamma = 10^((P - L - (N0 + 10 log10 B)) / 10)`.
pub fn snr_linear(params: &ChannelParams, path_loss_db: f64) -> f64 {
    let snr_db = params.tx_power_dbm - path_loss_db - params.noise_floor_dbm();
    math::pow(10.0, snr_db / 10.0)
}

/// Bit success rate `eps = 1 - Q(sqrt(2 gamma))`.
///
/// BPSK and QPSK share the same per-bit error rate, so the modulation only
/// exists to document intent.
pub fn bit_success_rate(snr: f64, _modulation: Modulation) -> f64 {
    debug_assert!(snr >= 0.0);
    1.0 - math::q_function(math::sqrt(2.0 * snr))
}

/// Packet success rate `eps^(bits_per_element * K)` for a K-element segment.
pub fn packet_success_rate(bit_success: f64, elements_per_packet: usize, bits_per_element: u32) -> f64 {
    debug_assert!(bit_success > 0.0 && bit_success <= 1.0);
    debug_assert!(elements_per_packet >= 1);
    math::powu(bit_success, bits_per_element as u64 * elements_per_packet as u64)
}

/// An immutable, connected network: participants first, then relays, ids
/// contiguous from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    links: Vec<Link>,
    /// Per node: sorted `(neighbor, link index)` pairs.
    adjacency: Vec<Vec<(usize, usize)>>,
    n_participants: usize,
    edge_density: f64,
    channel: ChannelParams,
}

impl NetworkGraph {
    /// Random geometric graph: nodes placed uniformly in a square of the
    /// given area, the `round(rho * N(N-1)/2)` closest participant pairs
    /// connected, and relay-incident links added within the radius of the
    /// longest selected participant link. Regenerates positions with derived
    /// sub-seeds until the graph is connected.
    pub fn random_geometric(
        n_participants: usize,
        n_relays: usize,
        area_m2: f64,
        edge_density: f64,
        seed: u64,
        channel: ChannelParams,
    ) -> Result<Self, NetError> {
        if !(area_m2 > 0.0) {
            return Err(NetError::DomainError("area must be positive"));
        }
        let side = math::sqrt(area_m2);
        let mut last_err = NetError::ConnectivityFailure { attempts: 0 };
        for attempt in 0..MAX_BUILD_ATTEMPTS {
            let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(seed, attempt));
            let participants: Vec<(f64, f64)> =
                (0..n_participants).map(|_| (rng.gen::<f64>() * side, rng.gen::<f64>() * side)).collect();
            let relays: Vec<(f64, f64)> =
                (0..n_relays).map(|_| (rng.gen::<f64>() * side, rng.gen::<f64>() * side)).collect();
            match Self::from_coordinates(&participants, &relays, edge_density, channel.clone()) {
                Ok(g) => return Ok(g),
                Err(e @ NetError::InvalidDensity { .. }) => return Err(e),
                Err(e) => last_err = e,
            }
        }
        match last_err {
            NetError::ConnectivityFailure { .. } => {
                Err(NetError::ConnectivityFailure { attempts: MAX_BUILD_ATTEMPTS })
            }
            other => Err(other),
        }
    }

    /// Fixed participant coordinates with randomly placed relays; relay
    /// placement is retried with derived sub-seeds until connected.
    pub fn with_random_relays(
        participants: &[(f64, f64)],
        n_relays: usize,
        area_m2: f64,
        edge_density: f64,
        seed: u64,
        channel: ChannelParams,
    ) -> Result<Self, NetError> {
        if !(area_m2 > 0.0) {
            return Err(NetError::DomainError("area must be positive"));
        }
        let side = math::sqrt(area_m2);
        let mut last_err = NetError::ConnectivityFailure { attempts: 0 };
        for attempt in 0..MAX_BUILD_ATTEMPTS {
            let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(seed, attempt));
            let relays: Vec<(f64, f64)> =
                (0..n_relays).map(|_| (rng.gen::<f64>() * side, rng.gen::<f64>() * side)).collect();
            match Self::from_coordinates(participants, &relays, edge_density, channel.clone()) {
                Ok(g) => return Ok(g),
                Err(e @ NetError::InvalidDensity { .. }) => return Err(e),
                Err(e) => last_err = e,
            }
        }
        match last_err {
            NetError::ConnectivityFailure { .. } => {
                Err(NetError::ConnectivityFailure { attempts: MAX_BUILD_ATTEMPTS })
            }
            other => Err(other),
        }
    }

    /// Deterministic build from explicit coordinates (meters).
    ///
    /// Participant links: the `round(rho * N(N-1)/2)` closest pairs, ties
    /// broken by lexicographic id pair. Relay-incident links: every pair
    /// within the longest selected participant-link distance. Fails with
    /// `ConnectivityFailure` if the result is disconnected.
    pub fn from_coordinates(
        participants: &[(f64, f64)],
        relays: &[(f64, f64)],
        edge_density: f64,
        channel: ChannelParams,
    ) -> Result<Self, NetError> {
        let n = participants.len();
        if n < 2 {
            return Err(NetError::InvalidGraph("at least two participants required"));
        }
        if !(edge_density > 0.0 && edge_density <= 1.0) {
            return Err(NetError::DomainError("edge density must be in (0, 1]"));
        }
        for &(x, y) in participants.iter().chain(relays.iter()) {
            if !x.is_finite() || !y.is_finite() {
                return Err(NetError::InvalidGraph("coordinates must be finite"));
            }
        }

        let total = n + relays.len();
        let nodes: Vec<Node> = participants
            .iter()
            .enumerate()
            .map(|(id, &(x_m, y_m))| Node { id, x_m, y_m, kind: NodeKind::Participant })
            .chain(relays.iter().enumerate().map(|(i, &(x_m, y_m))| Node {
                id: n + i,
                x_m,
                y_m,
                kind: NodeKind::Relay,
            }))
            .collect();

        let dist = |a: usize, b: usize| -> f64 {
            let dx = nodes[a].x_m - nodes[b].x_m;
            let dy = nodes[a].y_m - nodes[b].y_m;
            math::sqrt(dx * dx + dy * dy)
        };

        // Participant pairs sorted by distance, then id pair.
        let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(n * (n - 1) / 2);
        for m in 0..n {
            for q in (m + 1)..n {
                pairs.push((m, q, dist(m, q)));
            }
        }
        pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

        let want = math::round_ties_even(edge_density * (n * (n - 1) / 2) as f64) as usize;
        if want < n - 1 {
            return Err(NetError::InvalidDensity { requested_links: want, minimum: n - 1 });
        }
        let selected = &pairs[..want];
        let radius = selected.last().map(|p| p.2).unwrap_or(0.0);

        let mut raw: Vec<(usize, usize, f64)> = selected.to_vec();
        // Relay-incident links within the participant connection radius.
        for r in n..total {
            for other in 0..r {
                let d = dist(other, r);
                if d <= radius {
                    raw.push((other, r, d));
                }
            }
        }
        raw.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.cmp(&y.1)));

        let mut links = Vec::with_capacity(raw.len());
        for (m, q, d) in raw {
            if d <= 0.0 {
                return Err(NetError::DomainError("coincident nodes produce a zero-length link"));
            }
            // The free-space formula goes negative below ~10 m; links never
            // amplify.
            let loss = path_loss_db(d / 1000.0, channel.carrier_ghz)?.max(0.0);
            let snr = snr_linear(&channel, loss);
            let eps = bit_success_rate(snr, channel.modulation);
            links.push(Link {
                m,
                n: q,
                distance_m: d,
                path_loss_db: loss,
                snr_linear: snr,
                bit_success: eps,
            });
        }

        Self::assemble(nodes, links, n, edge_density, channel)
    }

    /// Assemble a graph from explicit nodes and links (the JSON import path).
    /// Channel-chain fields on the links are trusted as given.
    pub fn from_parts(
        nodes: Vec<Node>,
        links: Vec<Link>,
        edge_density: f64,
        channel: ChannelParams,
    ) -> Result<Self, NetError> {
        let n_participants = nodes.iter().filter(|v| v.kind == NodeKind::Participant).count();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(NetError::InvalidGraph("node ids must be contiguous from zero"));
            }
            if i < n_participants && node.kind != NodeKind::Participant {
                return Err(NetError::InvalidGraph("participants must precede relays"));
            }
            if !node.x_m.is_finite() || !node.y_m.is_finite() {
                return Err(NetError::InvalidGraph("coordinates must be finite"));
            }
        }
        if n_participants < 2 {
            return Err(NetError::InvalidGraph("at least two participants required"));
        }
        let mut links = links;
        for link in links.iter_mut() {
            if link.m > link.n {
                core::mem::swap(&mut link.m, &mut link.n);
            }
        }
        links.sort_by(|a, b| a.m.cmp(&b.m).then(a.n.cmp(&b.n)));
        Self::assemble(nodes, links, n_participants, edge_density, channel)
    }

    fn assemble(
        nodes: Vec<Node>,
        links: Vec<Link>,
        n_participants: usize,
        edge_density: f64,
        channel: ChannelParams,
    ) -> Result<Self, NetError> {
        let total = nodes.len();
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); total];
        for (idx, link) in links.iter().enumerate() {
            if link.m == link.n {
                return Err(NetError::InvalidGraph("self-loops are not allowed"));
            }
            if link.n >= total {
                return Err(NetError::InvalidGraph("link endpoint out of range"));
            }
            if !(link.bit_success > 0.0 && link.bit_success <= 1.0) {
                return Err(NetError::InvalidGraph("bit_success must lie in (0, 1]"));
            }
            adjacency[link.m].push((link.n, idx));
            adjacency[link.n].push((link.m, idx));
        }
        for nbrs in adjacency.iter_mut() {
            nbrs.sort_unstable();
            if nbrs.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(NetError::InvalidGraph("duplicate link"));
            }
        }
        let graph =
            NetworkGraph { nodes, links, adjacency, n_participants, edge_density, channel };
        if !graph.is_connected() {
            return Err(NetError::ConnectivityFailure { attempts: 1 });
        }
        Ok(graph)
    }

    pub fn n_participants(&self) -> usize {
        self.n_participants
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn edge_density(&self) -> f64 {
        self.edge_density
    }

    pub fn channel(&self) -> &ChannelParams {
        &self.channel
    }

    /// Sorted `(neighbor, link index)` pairs for a node.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    /// Bit success rate of the direct link `(u, v)`, if one exists.
    pub fn bit_success(&self, u: usize, v: usize) -> Option<f64> {
        self.adjacency[u]
            .iter()
            .find(|&&(nbr, _)| nbr == v)
            .map(|&(_, idx)| self.links[idx].bit_success)
    }

    /// Single-hop packet success rate for a `k_elements`-element segment.
    pub fn packet_success(&self, u: usize, v: usize, k_elements: usize) -> Option<f64> {
        self.bit_success(u, v)
            .map(|eps| packet_success_rate(eps, k_elements, self.channel.bits_per_element))
    }

    /// Maximum degree of the participant-induced subgraph (gossip floods
    /// only between participants).
    pub fn max_participant_degree(&self) -> usize {
        (0..self.n_participants)
            .map(|u| self.adjacency[u].iter().filter(|&&(v, _)| v < self.n_participants).count())
            .max()
            .unwrap_or(0)
    }

    /// True when an edge connects `u` and `v`.
    pub fn has_link(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].iter().any(|&(nbr, _)| nbr == v)
    }

    pub fn is_connected(&self) -> bool {
        let total = self.nodes.len();
        if total == 0 {
            return false;
        }
        let mut seen = vec![false; total];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == total
    }
}

/// Derived sub-seed for topology regeneration attempts.
fn sub_seed(seed: u64, attempt: u32) -> u64 {
    seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Ten-node evaluation topology (coordinates in meters) used by the bundled
/// experiment recipes and tests.
pub const REFERENCE_TEN_CLIENTS: [(f64, f64); 10] = [
    (2196.0, 1351.0),
    (3637.0, 3127.0),
    (2642.0, 284.0),
    (2884.0, 848.0),
    (5254.0, 596.0),
    (1730.0, 1923.0),
    (3572.0, 2668.0),
    (4546.0, 5326.0),
    (4328.0, 4001.0),
    (2534.0, 5171.0),
];

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    #[test]
    fn path_loss_hand_values() {
        // 1 km at 2.5 GHz: 32.4 + 20 log10(2.5) = 40.3588 dB.
        let loss = path_loss_db(1.0, 2.5).unwrap();
        assert!((loss - 40.3588).abs() < 5e-5, "{loss}");
        // Both log terms vanish at 1 km / 1 GHz.
        assert_eq!(path_loss_db(1.0, 1.0).unwrap(), 32.4);
        // 20 log10(0.1) = -20.
        assert!((path_loss_db(0.1, 1.0).unwrap() - 12.4).abs() < 1e-12);
        assert!(path_loss_db(0.0, 1.0).is_err());
        assert!(path_loss_db(-2.0, 1.0).is_err());
    }

    #[test]
    fn snr_hand_values() {
        let params = ChannelParams::default();
        // Noise floor -174 + 10 log10(30e6) = -99.2288 dBm.
        let floor = params.noise_floor_dbm();
        assert!((floor - (-99.22878745280337)).abs() < 1e-10);
        // 20 dBm Tx, 100 dB loss -> 19.229 dB -> ~83.73 linear.
        let gamma = snr_linear(&params, 100.0);
        assert!((gamma - 83.74).abs() < 0.02, "{gamma}");
        // Loss equal to Tx minus noise floor gives exactly 0 dB.
        let gamma_unit = snr_linear(&params, params.tx_power_dbm - floor);
        assert!((gamma_unit - 1.0).abs() < 1e-12);
        // Enormous loss drives the SNR to zero.
        assert!(snr_linear(&params, 1e6) == 0.0);
    }

    #[test]
    fn bit_success_hand_values() {
        // gamma = 0 -> eps = 1 - Q(0) = 0.5.
        assert_eq!(bit_success_rate(0.0, Modulation::Bpsk), 0.5);
        // gamma -> inf -> eps -> 1.
        assert_eq!(bit_success_rate(1e9, Modulation::Qpsk), 1.0);
        // gamma = 1 -> 1 - Q(sqrt 2), checked against the tail integral
        // oracle in math::tests.
        let eps = bit_success_rate(1.0, Modulation::Bpsk);
        assert!((eps - 0.9213503964748574).abs() < 1e-12);
        // BPSK and QPSK share the footnote formula.
        assert_eq!(bit_success_rate(2.0, Modulation::Bpsk), bit_success_rate(2.0, Modulation::Qpsk));
    }

    #[test]
    fn packet_success_hand_values() {
        assert_eq!(packet_success_rate(1.0, 123, 32), 1.0);
        // 0.999^32 by exponentiation-by-squaring as the oracle.
        let mut oracle = 0.999f64;
        let mut acc = 1.0f64;
        let mut e = 32u32;
        while e > 0 {
            if e & 1 == 1 {
                acc *= oracle;
            }
            oracle *= oracle;
            e >>= 1;
        }
        let got = packet_success_rate(0.999, 1, 32);
        assert!((got - acc).abs() < 1e-13, "{got} vs {acc}");
        assert!((got - 0.96849).abs() < 1e-5, "{got}");
        // Doubling K squares the success rate (up to a few ulp of pow).
        let k1 = packet_success_rate(0.9995, 10, 32);
        let k2 = packet_success_rate(0.9995, 20, 32);
        assert!((k2 - k1 * k1).abs() < 1e-12);
    }

    #[test]
    fn packet_success_monotonicity() {
        let mut prev = 1.0;
        for k in 1..=64 {
            let v = packet_success_rate(0.999, k, 32);
            assert!(v < prev, "not strictly decreasing in K at k={k}");
            prev = v;
        }
        let lo = packet_success_rate(0.990, 7, 32);
        let hi = packet_success_rate(0.999, 7, 32);
        assert!(hi > lo);
    }

    #[test]
    fn reference_topology_has_22_links_at_half_density() {
        let g = NetworkGraph::from_coordinates(
            &REFERENCE_TEN_CLIENTS,
            &[],
            0.5,
            ChannelParams::default(),
        )
        .unwrap();
        assert_eq!(g.links().len(), 22); // round_ties_even(0.5 * 45) = 22
        assert!(g.is_connected());
        assert_eq!(g.n_participants(), 10);
    }

    #[test]
    fn link_path_loss_never_negative() {
        // 5 m apart: the raw formula is negative, the link clamps to 0 dB.
        let g = NetworkGraph::from_coordinates(
            &[(0.0, 0.0), (5.0, 0.0)],
            &[],
            1.0,
            ChannelParams::default(),
        )
        .unwrap();
        assert_eq!(g.links()[0].path_loss_db, 0.0);
        assert_eq!(g.links()[0].bit_success, 1.0);
    }

    #[test]
    fn tiny_complete_graphs() {
        let g2 = NetworkGraph::from_coordinates(
            &[(0.0, 0.0), (100.0, 0.0)],
            &[],
            1.0,
            ChannelParams::default(),
        )
        .unwrap();
        assert_eq!(g2.links().len(), 1);

        let g4 = NetworkGraph::random_geometric(4, 0, 1e6, 1.0, 99, ChannelParams::default()).unwrap();
        assert_eq!(g4.links().len(), 6);
    }

    #[test]
    fn density_below_spanning_tree_is_rejected() {
        let err = NetworkGraph::random_geometric(6, 0, 1e6, 0.1, 1, ChannelParams::default())
            .unwrap_err();
        assert!(matches!(err, NetError::InvalidDensity { .. }), "{err}");
    }

    #[test]
    fn density_law_on_random_builds() {
        for seed in 0..20u64 {
            for &(n, rho) in &[(5usize, 0.8f64), (8, 0.6), (10, 0.5), (7, 1.0)] {
                let g = NetworkGraph::random_geometric(n, 0, 4e6, rho, seed, ChannelParams::default())
                    .unwrap();
                let want = math::round_ties_even(rho * (n * (n - 1) / 2) as f64) as usize;
                assert_eq!(g.links().len(), want);
            }
        }
    }

    #[test]
    fn builds_are_deterministic_per_seed() {
        let a = NetworkGraph::random_geometric(8, 2, 9e6, 0.7, 1234, ChannelParams::default()).unwrap();
        let b = NetworkGraph::random_geometric(8, 2, 9e6, 0.7, 1234, ChannelParams::default()).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let c = NetworkGraph::random_geometric(8, 2, 9e6, 0.7, 1235, ChannelParams::default()).unwrap();
        assert_ne!(format!("{a:?}"), format!("{c:?}"));
    }

    #[test]
    fn link_symmetry() {
        let g = NetworkGraph::random_geometric(8, 2, 9e6, 0.7, 5, ChannelParams::default()).unwrap();
        for link in g.links() {
            assert_eq!(g.bit_success(link.m, link.n), g.bit_success(link.n, link.m));
            assert_eq!(g.packet_success(link.m, link.n, 9), g.packet_success(link.n, link.m, 9));
        }
    }

    #[test]
    fn relays_attach_within_participant_radius() {
        // One relay sitting between two distant clusters.
        let participants = [(0.0, 0.0), (1000.0, 0.0), (5000.0, 0.0), (6000.0, 0.0)];
        let relays = [(3000.0, 0.0)];
        let g =
            NetworkGraph::from_coordinates(&participants, &relays, 0.5, ChannelParams::default())
                .unwrap();
        // 0.5 * 6 = 3 participant links; the relay must attach to both sides
        // for connectivity.
        assert_eq!(g.n_nodes(), 5);
        assert!(g.has_link(1, 4) || g.has_link(0, 4));
        assert!(g.has_link(2, 4) || g.has_link(3, 4));
        assert!(g.is_connected());
        // The density law counts participant pairs only.
        let participant_links =
            g.links().iter().filter(|l| l.m < 4 && l.n < 4).count();
        assert_eq!(participant_links, 3);
    }
}
