//! Synchronized D-FL round execution for the routed (R&A), gossip (AaYG),
//! and centralized (C-FL) protocols, with segment-level packet-loss sampling
//! and both aggregation mechanisms.
//!
//! Determinism contract: all Bernoulli draws happen in a documented fixed
//! order (source ascending, receiver ascending, segment ascending), and all
//! aggregation sums run in ascending client id, so a fixed `(config, seed)`
//! reproduces trajectories bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::learning::{
    local_train, local_train_minibatch, task_constants, ModelVector, Task, TaskError, Weights,
};
use crate::linalg::{self, Mat};
use crate::netmodel::NetworkGraph;
use crate::routing::RoutePlan;

/// Success indicators `e[m][n][l]`: 1 iff segment `l` from source `m`
/// arrived intact at receiver `n`. The diagonal `e[n][n][l]` is always 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessTensor {
    n: usize,
    segments: usize,
    bits: Vec<bool>,
}

impl SuccessTensor {
    pub fn all_ok(n: usize, segments: usize) -> Self {
        SuccessTensor { n, segments, bits: vec![true; n * n * segments] }
    }

    #[inline]
    fn idx(&self, m: usize, n: usize, l: usize) -> usize {
        (m * self.n + n) * self.segments + l
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, l: usize) -> bool {
        self.bits[self.idx(m, n, l)]
    }

    pub fn set(&mut self, m: usize, n: usize, l: usize, ok: bool) {
        assert!(m != n || ok, "a client always holds its own segments");
        let i = self.idx(m, n, l);
        self.bits[i] = ok;
    }

    pub fn n_clients(&self) -> usize {
        self.n
    }

    pub fn n_segments(&self) -> usize {
        self.segments
    }
}

/// Independent Bernoulli success draws for every `(source, receiver,
/// segment)` triple, with `Pr(e = 1)` equal to the route's per-segment E2E
/// success rate. The tail segment uses its true bit length. Draw order:
/// source ascending, receiver ascending, segment ascending; the diagonal is
/// forced to 1 without consuming randomness.
pub fn sample_successes<R: Rng>(plan: &RoutePlan, m_dim: usize, rng: &mut R) -> SuccessTensor {
    let n = plan.n_participants();
    let k = plan.k_elements();
    let segments = m_dim.div_ceil(k);
    let mut t = SuccessTensor::all_ok(n, segments);
    for src in 0..n {
        for dst in 0..n {
            if src == dst {
                continue;
            }
            for l in 0..segments {
                let p = plan.segment_success_for(src, dst, m_dim, l);
                let ok = rng.gen::<f64>() < p;
                let i = t.idx(src, dst, l);
                t.bits[i] = ok;
            }
        }
    }
    t
}

/// How a receiver handles segments it did not get intact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationScheme {
    /// Renormalize the ideal weights over the sources whose segment arrived.
    CoeffNormalization,
    /// Replace a lost segment with the receiver's own segment, keeping the
    /// ideal weights.
    ModelSubstitution,
}

/// Realized aggregation coefficients `c[receiver][segment][source]`: the
/// weight each source's training output got in each receiver's aggregate.
/// Rows sum to 1 by construction for both schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffTensor {
    n: usize,
    segments: usize,
    c: Vec<f64>,
}

impl CoeffTensor {
    fn zeros(n: usize, segments: usize) -> Self {
        CoeffTensor { n, segments, c: vec![0.0; n * segments * n] }
    }

    #[inline]
    fn idx(&self, receiver: usize, l: usize, source: usize) -> usize {
        (receiver * self.segments + l) * self.n + source
    }

    #[inline]
    pub fn get(&self, receiver: usize, l: usize, source: usize) -> f64 {
        self.c[self.idx(receiver, l, source)]
    }

    fn set(&mut self, receiver: usize, l: usize, source: usize, v: f64) {
        let i = self.idx(receiver, l, source);
        self.c[i] = v;
    }

    pub fn n_segments(&self) -> usize {
        self.segments
    }

    /// Bias matrix `Lambda_l` with entries `lambda[m][n] = p_m - c[n][l][m]`.
    pub fn bias_matrix(&self, p: &Weights, l: usize) -> Mat {
        let mut lam = Mat::zeros(self.n, self.n);
        for m in 0..self.n {
            for r in 0..self.n {
                lam[(m, r)] = p.get(m) - self.get(r, l, m);
            }
        }
        lam
    }
}

/// Locally aggregated models plus the realized coefficients that produced
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationResult {
    pub models: Vec<ModelVector>,
    pub coefficients: CoeffTensor,
}

/// One local aggregation at every receiver (the R&A rule): per segment,
/// either adaptively renormalized coefficients or model substitution.
pub fn aggregate_raa(
    models: &[ModelVector],
    p: &Weights,
    e: &SuccessTensor,
    scheme: AggregationScheme,
) -> AggregationResult {
    let n = models.len();
    assert_eq!(p.len(), n);
    assert_eq!(e.n_clients(), n);
    let segments = models[0].num_segments();
    assert_eq!(e.n_segments(), segments);
    let mut coeffs = CoeffTensor::zeros(n, segments);
    let mut out: Vec<ModelVector> = models.to_vec();

    for receiver in 0..n {
        for l in 0..segments {
            match scheme {
                AggregationScheme::CoeffNormalization => {
                    let mut denom = 0.0;
                    for m in 0..n {
                        if e.get(m, receiver, l) {
                            denom += p.get(m);
                        }
                    }
                    // The receiver's own segment always succeeds, so the
                    // normalizer is at least p_receiver > 0.
                    debug_assert!(denom >= p.get(receiver));
                    for m in 0..n {
                        if e.get(m, receiver, l) {
                            coeffs.set(receiver, l, m, p.get(m) / denom);
                        }
                    }
                }
                AggregationScheme::ModelSubstitution => {
                    let mut own = p.get(receiver);
                    for m in 0..n {
                        if m == receiver {
                            continue;
                        }
                        if e.get(m, receiver, l) {
                            coeffs.set(receiver, l, m, p.get(m));
                        } else {
                            own += p.get(m);
                        }
                    }
                    coeffs.set(receiver, l, receiver, own);
                }
            }
            // Weighted sum in ascending source order.
            let range = models[receiver].segment_range(l);
            let width = range.len();
            let mut acc = vec![0.0; width];
            for m in 0..n {
                let c = coeffs.get(receiver, l, m);
                if c == 0.0 {
                    continue;
                }
                for (a, v) in acc.iter_mut().zip(models[m].segment(l)) {
                    *a += c * v;
                }
            }
            out[receiver].segment_mut(l).copy_from_slice(&acc);
        }
    }
    AggregationResult { models: out, coefficients: coeffs }
}

// ---------------------------------------------------------------------------
// Round state and outcome
// ---------------------------------------------------------------------------

/// Mutable per-round training state: the current locally aggregated model of
/// every client plus the training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub round: u32,
    pub models: Vec<ModelVector>,
    pub eta: f64,
    pub epochs: usize,
    /// Mini-batch size for data-backed tasks; `None` trains full-batch
    /// (the mode the convergence bounds assume).
    pub batch_size: Option<usize>,
}

impl TrainState {
    /// All clients start from the same initial parameter vector.
    ///
    /// For quadratic tasks the learning rate must satisfy
    /// `0 < eta < 1/(2L)`.
    pub fn uniform_init(
        task: &Task,
        init: Vec<f64>,
        k_elements: usize,
        eta: f64,
        epochs: usize,
    ) -> Result<Self, TaskError> {
        if epochs < 1 {
            return Err(TaskError::InvalidTask("at least one local epoch"));
        }
        if !(eta > 0.0) {
            return Err(TaskError::InvalidTask("learning rate must be positive"));
        }
        if init.len() != task.dim() {
            return Err(TaskError::InvalidTask("initial model dimension mismatch"));
        }
        if let Task::Quadratic(_) = task {
            let consts = task_constants(task)?;
            if eta >= 1.0 / (2.0 * consts.l_smooth) {
                return Err(TaskError::InvalidTask("learning rate must be below 1/(2L)"));
            }
        }
        let model = ModelVector::new(init, k_elements);
        Ok(TrainState {
            round: 0,
            models: vec![model; task.n_clients()],
            eta,
            epochs,
            batch_size: None,
        })
    }

    pub fn with_batch_size(mut self, batch_size: Option<usize>) -> Self {
        self.batch_size = batch_size;
        self
    }
}

/// Everything observable about one training round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// Round index (1-based) this outcome belongs to.
    pub round: u32,
    /// Local training outputs `omega_{n,I}` before any communication.
    pub local_models: Vec<ModelVector>,
    /// Locally aggregated models `w_n` after communication.
    pub aggregated: Vec<ModelVector>,
    /// The virtual global average `sum_n p_n omega_{n,I}`.
    pub virtual_global: ModelVector,
    /// Route-level success indicators (R&A and C-FL; all-ones for AaYG,
    /// whose losses happen per one-hop broadcast).
    pub success: SuccessTensor,
    /// Realized aggregation coefficients.
    pub coefficients: CoeffTensor,
    /// Per-segment bias matrices `p_m - c[n][l][m]`.
    pub lambda: Vec<Mat>,
    pub metrics: RoundMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// Global loss evaluated at each client's aggregated model.
    pub per_client_loss: Vec<f64>,
    pub mean_loss: f64,
    /// `max_{m,n} ||w_m - w_n||`.
    pub max_pairwise_distance: f64,
    /// Mean over segments of the squared spectral norm of `Lambda_l`.
    pub mean_lambda_sq: f64,
    /// `||virtual_global - w*||` for tasks with a closed-form optimum.
    pub dist_to_opt: Option<f64>,
    /// Mean per-client training accuracy of the aggregated models, for
    /// classification tasks.
    pub mean_accuracy: Option<f64>,
}

fn virtual_global(locals: &[ModelVector], p: &Weights) -> ModelVector {
    let dim = locals[0].dim();
    let mut acc = vec![0.0; dim];
    for (n, model) in locals.iter().enumerate() {
        let pn = p.get(n);
        for (a, v) in acc.iter_mut().zip(model.params()) {
            *a += pn * v;
        }
    }
    ModelVector::new(acc, locals[0].segment_size())
}

/// Local training for every client, ascending id; mini-batch shuffles (when
/// enabled) consume the round's RNG stream before any loss sampling.
fn train_all<R: Rng>(
    task: &Task,
    state: &TrainState,
    rng: &mut R,
) -> Result<Vec<ModelVector>, TaskError> {
    (0..task.n_clients())
        .map(|n| match state.batch_size {
            None => local_train(task, n, &state.models[n], state.epochs, state.eta),
            Some(b) => {
                local_train_minibatch(task, n, &state.models[n], state.epochs, state.eta, b, rng)
            }
        })
        .collect()
}

fn round_metrics(
    task: &Task,
    aggregated: &[ModelVector],
    global: &ModelVector,
    lambda: &[Mat],
) -> RoundMetrics {
    let n = aggregated.len();
    let per_client_loss: Vec<f64> =
        aggregated.iter().map(|w| task.global_loss(w.params())).collect();
    let mean_loss = per_client_loss.iter().sum::<f64>() / n as f64;
    let mut max_pairwise_distance: f64 = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            max_pairwise_distance = max_pairwise_distance
                .max(linalg::dist2(aggregated[a].params(), aggregated[b].params()));
        }
    }
    let mean_lambda_sq = if lambda.is_empty() {
        0.0
    } else {
        lambda.iter().map(linalg::spectral_norm_sq).sum::<f64>() / lambda.len() as f64
    };
    let dist_to_opt = task.optimum().map(|w| linalg::dist2(global.params(), &w));
    let accs: Vec<f64> = (0..n)
        .filter_map(|c| task.local_accuracy(c, aggregated[c].params()))
        .collect();
    let mean_accuracy =
        if accs.len() == n { Some(accs.iter().sum::<f64>() / n as f64) } else { None };
    RoundMetrics {
        per_client_loss,
        mean_loss,
        max_pairwise_distance,
        mean_lambda_sq,
        dist_to_opt,
        mean_accuracy,
    }
}

fn lambda_matrices(coeffs: &CoeffTensor, p: &Weights) -> Vec<Mat> {
    (0..coeffs.n_segments()).map(|l| coeffs.bias_matrix(p, l)).collect()
}

fn finish_round(
    task: &Task,
    state: &mut TrainState,
    locals: Vec<ModelVector>,
    agg: AggregationResult,
    success: SuccessTensor,
) -> RoundOutcome {
    let p = task.weights();
    let global = virtual_global(&locals, p);
    let lambda = lambda_matrices(&agg.coefficients, p);
    let metrics = round_metrics(task, &agg.models, &global, &lambda);
    state.round += 1;
    state.models = agg.models.clone();
    RoundOutcome {
        round: state.round,
        local_models: locals,
        aggregated: agg.models,
        virtual_global: global,
        success,
        coefficients: agg.coefficients,
        lambda,
        metrics,
    }
}

/// One route-and-aggregate round: local training, route-level loss sampling,
/// adaptive local aggregation at every client.
pub fn run_round_raa<R: Rng>(
    state: &mut TrainState,
    task: &Task,
    plan: &RoutePlan,
    scheme: AggregationScheme,
    rng: &mut R,
) -> Result<RoundOutcome, TaskError> {
    let locals = train_all(task, state, rng)?;
    let success = sample_successes(plan, locals[0].dim(), rng);
    let agg = aggregate_raa(&locals, task.weights(), &success, scheme);
    Ok(finish_round(task, state, locals, agg, success))
}

/// One gossip (aggregate-as-you-go) round: local training, then `j`
/// iterations of broadcast-to-neighbors plus local aggregation over
/// `{self} + received`. Each broadcast redraws per-segment one-hop losses.
pub fn run_round_aayg<R: Rng>(
    state: &mut TrainState,
    task: &Task,
    graph: &NetworkGraph,
    j: u32,
    scheme: AggregationScheme,
    rng: &mut R,
) -> Result<RoundOutcome, TaskError> {
    assert!(j >= 1);
    let n = task.n_clients();
    assert_eq!(graph.n_participants(), n, "task clients must match graph participants");
    let p = task.weights();
    let locals = train_all(task, state, rng)?;
    let dim = locals[0].dim();
    let k = locals[0].segment_size();
    let segments = locals[0].num_segments();
    let bits = graph.channel().bits_per_element;

    // Participant neighbors per client, ascending.
    let nbrs: Vec<Vec<usize>> = (0..n)
        .map(|u| graph.neighbors(u).iter().map(|&(v, _)| v).filter(|&v| v < n).collect())
        .collect();

    // Per-segment coefficient matrices mapping training outputs to current
    // gossip state; starts as the identity.
    let mut coeff: Vec<Mat> = (0..segments).map(|_| Mat::identity(n)).collect();
    let mut x: Vec<ModelVector> = locals.clone();

    for _iter in 0..j {
        // One-hop per-segment losses: transmitter ascending, receiver
        // ascending, segment ascending.
        let mut ok = vec![true; n * n * segments];
        for tx in 0..n {
            for &rx in &nbrs[tx] {
                for l in 0..segments {
                    let elements = k.min(dim - l * k);
                    let eps = graph.bit_success(tx, rx).expect("neighbor without link");
                    let p_ok = crate::math::powu(eps, bits as u64 * elements as u64);
                    ok[(tx * n + rx) * segments + l] = rng.gen::<f64>() < p_ok;
                }
            }
        }

        let mut next = x.clone();
        let mut next_coeff = coeff.clone();
        for r in 0..n {
            for l in 0..segments {
                // Contributing set: self plus neighbors whose segment
                // arrived (coefficient normalization) or the fixed
                // neighborhood with substitution.
                let range = x[r].segment_range(l);
                let width = range.len();
                let mut acc = vec![0.0; width];
                let mut row = vec![0.0; n];
                match scheme {
                    AggregationScheme::CoeffNormalization => {
                        let mut denom = p.get(r);
                        for &u in &nbrs[r] {
                            if ok[(u * n + r) * segments + l] {
                                denom += p.get(u);
                            }
                        }
                        for u in 0..n {
                            let w = if u == r {
                                p.get(r) / denom
                            } else if nbrs[r].contains(&u) && ok[(u * n + r) * segments + l] {
                                p.get(u) / denom
                            } else {
                                continue;
                            };
                            row[u] = w;
                            for (a, v) in acc.iter_mut().zip(x[u].segment(l)) {
                                *a += w * v;
                            }
                        }
                    }
                    AggregationScheme::ModelSubstitution => {
                        let set_sum: f64 =
                            p.get(r) + nbrs[r].iter().map(|&u| p.get(u)).sum::<f64>();
                        let mut own = p.get(r) / set_sum;
                        for &u in &nbrs[r] {
                            if ok[(u * n + r) * segments + l] {
                                row[u] = p.get(u) / set_sum;
                            } else {
                                own += p.get(u) / set_sum;
                            }
                        }
                        row[r] = own;
                        for u in 0..n {
                            if row[u] != 0.0 {
                                for (a, v) in acc.iter_mut().zip(x[u].segment(l)) {
                                    *a += row[u] * v;
                                }
                            }
                        }
                    }
                }
                next[r].segment_mut(l).copy_from_slice(&acc);
                // next_coeff[l] row r = row * coeff[l]
                for m in 0..n {
                    let mut s = 0.0;
                    for u in 0..n {
                        if row[u] != 0.0 {
                            s += row[u] * coeff[l][(u, m)];
                        }
                    }
                    next_coeff[l][(r, m)] = s;
                }
            }
        }
        x = next;
        coeff = next_coeff;
    }

    let mut coefficients = CoeffTensor::zeros(n, segments);
    for r in 0..n {
        for l in 0..segments {
            for m in 0..n {
                coefficients.set(r, l, m, coeff[l][(r, m)]);
            }
        }
    }
    let agg = AggregationResult { models: x, coefficients };
    let success = SuccessTensor::all_ok(n, segments);
    Ok(finish_round(task, state, locals, agg, success))
}

/// One centralized round: uplink along planned routes to the aggregator,
/// aggregation there, downlink of the global model; erroneous downlink
/// segments are replaced by the receiver's own trained segments.
pub fn run_round_cfl<R: Rng>(
    state: &mut TrainState,
    task: &Task,
    plan: &RoutePlan,
    aggregator: usize,
    scheme: AggregationScheme,
    rng: &mut R,
) -> Result<RoundOutcome, TaskError> {
    let n = task.n_clients();
    assert!(aggregator < n, "aggregator must be a participant");
    let p = task.weights();
    let locals = train_all(task, state, rng)?;
    let dim = locals[0].dim();
    let segments = locals[0].num_segments();

    // Uplink losses: source ascending, segment ascending.
    let mut success = SuccessTensor::all_ok(n, segments);
    for src in 0..n {
        if src == aggregator {
            continue;
        }
        for l in 0..segments {
            let p_ok = plan.segment_success_for(src, aggregator, dim, l);
            let ok = rng.gen::<f64>() < p_ok;
            let i = success.idx(src, aggregator, l);
            success.bits[i] = ok;
        }
    }

    // Aggregate at the hub only; per-segment realized coefficients.
    let mut hub_row: Vec<Vec<f64>> = vec![vec![0.0; n]; segments];
    let mut global = locals[aggregator].clone();
    for l in 0..segments {
        let range = global.segment_range(l);
        let width = range.len();
        let mut acc = vec![0.0; width];
        match scheme {
            AggregationScheme::CoeffNormalization => {
                let mut denom = 0.0;
                for m in 0..n {
                    if success.get(m, aggregator, l) {
                        denom += p.get(m);
                    }
                }
                for m in 0..n {
                    if success.get(m, aggregator, l) {
                        hub_row[l][m] = p.get(m) / denom;
                    }
                }
            }
            AggregationScheme::ModelSubstitution => {
                let mut own = p.get(aggregator);
                for m in 0..n {
                    if m == aggregator {
                        continue;
                    }
                    if success.get(m, aggregator, l) {
                        hub_row[l][m] = p.get(m);
                    } else {
                        own += p.get(m);
                    }
                }
                hub_row[l][aggregator] = own;
            }
        }
        for m in 0..n {
            let c = hub_row[l][m];
            if c != 0.0 {
                for (a, v) in acc.iter_mut().zip(locals[m].segment(l)) {
                    *a += c * v;
                }
            }
        }
        global.segment_mut(l).copy_from_slice(&acc);
    }

    // Downlink: receiver ascending, segment ascending; a failed segment
    // keeps the receiver's own trained segment.
    let mut aggregated = locals.clone();
    let mut coefficients = CoeffTensor::zeros(n, segments);
    for r in 0..n {
        for l in 0..segments {
            let got = if r == aggregator {
                true
            } else {
                let p_ok = plan.segment_success_for(aggregator, r, dim, l);
                rng.gen::<f64>() < p_ok
            };
            if got {
                aggregated[r].segment_mut(l).copy_from_slice(global.segment(l));
                for m in 0..n {
                    coefficients.set(r, l, m, hub_row[l][m]);
                }
            } else {
                coefficients.set(r, l, r, 1.0);
            }
        }
    }

    let agg = AggregationResult { models: aggregated, coefficients };
    Ok(finish_round(task, state, locals, agg, success))
}
