//! Aggregation-bias statistics and convergence-bound machinery: per-segment
//! bias matrices, their expectation bounds, the one-round bound constants
//! `zeta_1..zeta_4`, the one-round and asymptotic bound evaluations, and the
//! Monte Carlo coefficient-distribution statistics.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::learning::Weights;
use crate::linalg::{self, Mat};
use crate::math;
use crate::protocol::{sample_successes, SuccessTensor};
use crate::routing::RoutePlan;

#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    InvalidInputs(&'static str),
}

impl core::fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AnalysisError::InvalidInputs(what) => write!(f, "invalid bound inputs: {what}"),
        }
    }
}

impl core::error::Error for AnalysisError {}

/// Bias matrix `Lambda_l` of one success-tensor slice under the adaptive
/// coefficient-normalization rule: `lambda[m][n] = p_m - p_{m,n,l}` where a
/// failed segment contributes coefficient zero.
pub fn bias_matrix(p: &Weights, e: &SuccessTensor, l: usize) -> Mat {
    let n = p.len();
    assert_eq!(e.n_clients(), n);
    let mut lam = Mat::zeros(n, n);
    for receiver in 0..n {
        let mut denom = 0.0;
        for m in 0..n {
            if e.get(m, receiver, l) {
                denom += p.get(m);
            }
        }
        for m in 0..n {
            let coeff = if e.get(m, receiver, l) { p.get(m) / denom } else { 0.0 };
            lam[(m, receiver)] = p.get(m) - coeff;
        }
    }
    lam
}

/// Squared spectral norm of a bias matrix (the 2-norm of the notation).
pub fn lambda_norm_sq(lam: &Mat) -> f64 {
    linalg::spectral_norm_sq(lam)
}

// ---------------------------------------------------------------------------
// Bias expectation bounds
// ---------------------------------------------------------------------------

/// How the per-entry bound was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryBoundMethod {
    /// Exact subset enumeration (client counts up to 12).
    Exact,
    /// Stratified Monte Carlo over success subsets, with reported standard
    /// errors.
    MonteCarlo { samples: u32 },
}

/// Upper bounds on the bias-matrix second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasMomentBounds {
    /// Per-(source, receiver) bound on `E[lambda_{m,n,l}^2]`.
    pub entry_bounds: Mat,
    /// Standard errors of the entry bounds when Monte Carlo was used.
    pub entry_standard_error: Option<Mat>,
    /// Bound on `E||Lambda_l||^2`:
    /// `sum_n sum_m (1 - rho_{m,n})(p_m^2 + p_m)`. Always exact.
    pub norm_bound: f64,
    pub method: EntryBoundMethod,
}

/// Largest client count for exact subset enumeration (2^(N-2) subsets per
/// inner term).
pub const EXACT_ENTRY_BOUND_LIMIT: usize = 12;

fn validate_rho(p: &Weights, rho: &Mat) -> Result<(), AnalysisError> {
    let n = p.len();
    if rho.rows() != n || rho.cols() != n {
        return Err(AnalysisError::InvalidInputs("rho matrix must be n_clients square"));
    }
    for m in 0..n {
        for r in 0..n {
            let v = rho[(m, r)];
            if !(0.0..=1.0).contains(&v) {
                return Err(AnalysisError::InvalidInputs("rho entries must lie in [0, 1]"));
            }
        }
        if rho[(m, m)] != 1.0 {
            return Err(AnalysisError::InvalidInputs("rho diagonal must be 1"));
        }
    }
    Ok(())
}

/// Entry and norm bounds on the bias second moments, exact for up to
/// [`EXACT_ENTRY_BOUND_LIMIT`] clients and Monte Carlo beyond (2^15 subset
/// samples per term, seeded internally for determinism).
pub fn bias_moment_bounds(p: &Weights, rho: &Mat) -> Result<BiasMomentBounds, AnalysisError> {
    bias_moment_bounds_with(p, rho, 1 << 15, 0x1e33a3)
}

/// As [`bias_moment_bounds`], with explicit Monte Carlo sample count and seed for
/// the beyond-exact-limit path.
pub fn bias_moment_bounds_with(
    p: &Weights,
    rho: &Mat,
    mc_samples: u32,
    mc_seed: u64,
) -> Result<BiasMomentBounds, AnalysisError> {
    validate_rho(p, rho)?;
    let n = p.len();

    let norm_bound = norm_bound_from_rho(p, rho);

    let exact = n <= EXACT_ENTRY_BOUND_LIMIT;
    let mut entries = Mat::zeros(n, n);
    let mut se = Mat::zeros(n, n);
    for m in 0..n {
        for r in 0..n {
            let (bound, err) = if exact {
                (entry_bound_exact(p, rho, m, r), 0.0)
            } else {
                entry_bound_monte_carlo(p, rho, m, r, mc_samples, mc_seed)
            };
            entries[(m, r)] = bound;
            se[(m, r)] = err;
        }
    }
    Ok(BiasMomentBounds {
        entry_bounds: entries,
        entry_standard_error: if exact { None } else { Some(se) },
        norm_bound,
        method: if exact {
            EntryBoundMethod::Exact
        } else {
            EntryBoundMethod::MonteCarlo { samples: mc_samples }
        },
    })
}

/// `sum_n sum_m (1 - rho_{m,n})(p_m^2 + p_m)` from an explicit rho matrix.
pub fn norm_bound_from_rho(p: &Weights, rho: &Mat) -> f64 {
    let n = p.len();
    let mut acc = 0.0;
    for m in 0..n {
        let pm = p.get(m);
        for r in 0..n {
            acc += (1.0 - rho[(m, r)]) * (pm * pm + pm);
        }
    }
    acc
}

/// Exact entry bound: `(1 - rho_{m,n}) p_m^2` plus, for every `j != m`,
/// `p_j (1 - rho_{j,n})` times the expectation of `p_m / sum_{k in S} p_k`
/// over success subsets `S` of `V \ {j}` containing `m`.
fn entry_bound_exact(p: &Weights, rho: &Mat, m: usize, receiver: usize) -> f64 {
    let n = p.len();
    let mut bound = (1.0 - rho[(m, receiver)]) * p.get(m) * p.get(m);
    for j in 0..n {
        if j == m {
            continue;
        }
        let weight = p.get(j) * (1.0 - rho[(j, receiver)]);
        if weight == 0.0 {
            continue;
        }
        // Others in V_j besides m.
        let others: Vec<usize> = (0..n).filter(|&k| k != j && k != m).collect();
        let mut expectation = 0.0;
        for mask in 0..(1u32 << others.len()) {
            let mut sum_p = p.get(m);
            let mut prob = rho[(m, receiver)];
            for (bit, &k) in others.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    sum_p += p.get(k);
                    prob *= rho[(k, receiver)];
                } else {
                    prob *= 1.0 - rho[(k, receiver)];
                }
            }
            expectation += prob * p.get(m) / sum_p;
        }
        bound += weight * expectation;
    }
    bound
}

/// Monte Carlo version of the inner subset expectation, with a pooled
/// standard error for the `(m, receiver)` entry.
fn entry_bound_monte_carlo(
    p: &Weights,
    rho: &Mat,
    m: usize,
    receiver: usize,
    samples: u32,
    seed: u64,
) -> (f64, f64) {
    use rand::SeedableRng;
    let n = p.len();
    let mut bound = (1.0 - rho[(m, receiver)]) * p.get(m) * p.get(m);
    let mut var_acc = 0.0;
    for j in 0..n {
        if j == m {
            continue;
        }
        let weight = p.get(j) * (1.0 - rho[(j, receiver)]);
        if weight == 0.0 {
            continue;
        }
        let mix = seed
            ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (receiver as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ (j as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(mix);
        let mut acc = 0.0;
        let mut acc_sq = 0.0;
        for _ in 0..samples {
            let mut sum_p = 0.0;
            let mut m_in = false;
            for k in 0..n {
                if k == j {
                    continue;
                }
                if rng.gen::<f64>() < rho[(k, receiver)] {
                    sum_p += p.get(k);
                    if k == m {
                        m_in = true;
                    }
                }
            }
            let v = if m_in { p.get(m) / sum_p } else { 0.0 };
            acc += v;
            acc_sq += v * v;
        }
        let mean = acc / samples as f64;
        let var = (acc_sq / samples as f64 - mean * mean).max(0.0) / samples as f64;
        bound += weight * mean;
        var_acc += weight * weight * var;
    }
    (bound, math::sqrt(var_acc))
}

// ---------------------------------------------------------------------------
// One-round bound constants and evaluations
// ---------------------------------------------------------------------------

/// Everything the bound machinery needs about one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub l_smooth: f64,
    pub mu: f64,
    pub eta: f64,
    pub epochs: u32,
    /// Noise-level parameter of the one-round bound. Vanishes in the
    /// error-free limit; see [`default_tau_rho`] for the calibration used
    /// when no explicit value is supplied.
    pub tau_rho: f64,
    pub p: Weights,
    /// E2E success matrix (diagonal 1).
    pub rho: Mat,
    pub sigma_bar_sq: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.l_smooth > 0.0) || !(self.mu > 0.0) || self.mu > self.l_smooth {
            return Err(AnalysisError::InvalidInputs("need 0 < mu <= L"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0 / (2.0 * self.l_smooth)) {
            return Err(AnalysisError::InvalidInputs("need 0 < eta < 1/(2L)"));
        }
        if self.epochs < 1 {
            return Err(AnalysisError::InvalidInputs("need at least one epoch"));
        }
        if !(self.tau_rho > 0.0) {
            return Err(AnalysisError::InvalidInputs("tau_rho must be positive"));
        }
        if self.sigma_bar_sq < 0.0 {
            return Err(AnalysisError::InvalidInputs("sigma_bar_sq must be nonnegative"));
        }
        validate_rho(&self.p, &self.rho)
    }

    /// The routing-objective value of this configuration's rho matrix.
    pub fn objective(&self) -> f64 {
        norm_bound_from_rho(&self.p, &self.rho)
    }
}

/// Calibration used when no noise level is supplied:
/// `tau = max_{m,n} (1 - rho_{m,n})`, floored at `1e-9` so the error-free
/// limit stays evaluable.
pub fn default_tau_rho(rho: &Mat) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..rho.rows() {
        for c in 0..rho.cols() {
            worst = worst.max(1.0 - rho[(r, c)]);
        }
    }
    worst.max(1e-9)
}

/// The four constants of the one-round convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaConstants {
    pub zeta1: f64,
    pub zeta2: f64,
    pub zeta3: f64,
    pub zeta4: f64,
}

/// Evaluate the `zeta` constants.
///
/// With `a = 1 - 3 mu eta / 2 + 2 L mu eta^2`, `b = (1+eta)(1+4L^2 eta)`,
/// and `I` local epochs:
///
/// * `zeta1 = a^(I-1) (1 + tau) (1 - 2 mu eta + eta^2 L^2)`
/// * `zeta2 = 2 (1+eta) (2 eta^2 L^2 + (L+mu) eta) b^2 / (1 + 4L^2 + 4L^2 eta)
///            * [ (b^(I-1) - a^(I-1))/(b - a) - (b^(I-1) - 1)/(b - 1) ]`
/// * `zeta3 = a^(I-1) (1 + 1/tau) (1 + eta L)`
/// * `zeta4 = (2 eta^2 L^2 + (L+mu) eta) b^2 (b^(I-1) - a^(I-1))/(b - a)`
///
/// The divided differences are evaluated as the geometric sums
/// `sum_i a^i b^(I-2-i)` and `sum_i b^i`, which are exact at the `b == a`
/// and `b == 1` degeneracies (the limit form of the ratio) and suffer no
/// cancellation.
pub fn zeta_constants(l_smooth: f64, mu: f64, eta: f64, epochs: u32, tau_rho: f64) -> ZetaConstants {
    let a = 1.0 - 1.5 * mu * eta + 2.0 * l_smooth * mu * eta * eta;
    let b = (1.0 + eta) * (1.0 + 4.0 * l_smooth * l_smooth * eta);
    let contraction = 1.0 - 2.0 * mu * eta + eta * eta * l_smooth * l_smooth;
    let i1 = epochs - 1;
    let a_pow_i1 = math::powu(a, i1 as u64);

    // (b^(I-1) - a^(I-1)) / (b - a) and (b^(I-1) - 1) / (b - 1) as sums.
    let mut ratio_ba = 0.0;
    let mut ratio_b1 = 0.0;
    for i in 0..i1 {
        ratio_ba += math::powu(a, i as u64) * math::powu(b, (i1 - 1 - i) as u64);
        ratio_b1 += math::powu(b, i as u64);
    }

    let pre = 2.0 * eta * eta * l_smooth * l_smooth + (l_smooth + mu) * eta;
    let b_sq = b * b;
    let zeta1 = a_pow_i1 * (1.0 + tau_rho) * contraction;
    let zeta2 = 2.0 * (1.0 + eta) * pre * b_sq
        / (1.0 + 4.0 * l_smooth * l_smooth + 4.0 * l_smooth * l_smooth * eta)
        * (ratio_ba - ratio_b1);
    let zeta3 = a_pow_i1 * (1.0 + 1.0 / tau_rho) * (1.0 + eta * l_smooth);
    let zeta4 = pre * b_sq * ratio_ba;
    ZetaConstants { zeta1, zeta2, zeta3, zeta4 }
}

/// The weight-dependent factor multiplying the bias term of the bound:
/// `zeta3 N ||diag(p)||^2 + zeta3 eta L ||diag(p)|| + zeta4 ||diag(sqrt(p)-p)||^2`,
/// with diagonal spectral norms (max entry magnitudes).
pub fn spectral_factor(z: &ZetaConstants, p: &Weights, eta: f64, l_smooth: f64) -> f64 {
    let n = p.len() as f64;
    let max_p = p.as_slice().iter().cloned().fold(0.0f64, f64::max);
    let max_gap = p
        .as_slice()
        .iter()
        .map(|&w| math::sqrt(w) - w)
        .fold(0.0f64, f64::max);
    z.zeta3 * n * max_p * max_p + z.zeta3 * eta * l_smooth * max_p + z.zeta4 * max_gap * max_gap
}

/// One-round upper bound on `E ||omega_bar - w*||^2`:
/// `zeta1 delta_prev + zeta2 sigma_bar_sq + factor * sum_w2 * objective`.
///
/// `sum_w2` is `sum_l ||W_l||^2` of the previous round's training outputs
/// and `objective` the routing objective of the round's rho matrix. In the
/// error-free limit the objective vanishes and the bound reduces exactly to
/// the first two terms.
pub fn one_round_bound(
    z: &ZetaConstants,
    factor: f64,
    delta_prev: f64,
    sigma_bar_sq: f64,
    sum_w2: f64,
    objective: f64,
) -> f64 {
    z.zeta1 * delta_prev + z.zeta2 * sigma_bar_sq + factor * sum_w2 * objective
}

/// Asymptotic bound under a stationary rho matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsymptoticBound {
    /// `zeta2 sigma_bar^2 / (1 - zeta1) + zeta1/(1 - zeta1) * objective
    ///  * lambda_max * factor`.
    Finite(f64),
    /// `zeta1 >= 1`: the geometric series diverges.
    Divergent,
}

/// Evaluate the asymptotic bound; `lambda_max` must upper-bound
/// `sum_l ||W_l^t||^2` over the trajectory.
pub fn asymptotic_bound(
    z: &ZetaConstants,
    factor: f64,
    sigma_bar_sq: f64,
    objective: f64,
    lambda_max: f64,
) -> AsymptoticBound {
    if z.zeta1 >= 1.0 {
        return AsymptoticBound::Divergent;
    }
    let series = z.zeta1 / (1.0 - z.zeta1);
    AsymptoticBound::Finite(
        z.zeta2 * sigma_bar_sq / (1.0 - z.zeta1) + series * objective * lambda_max * factor,
    )
}

/// Bound evaluation bundle for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub tau_rho: f64,
    pub zetas: ZetaConstants,
    pub bias_moments: BiasMomentBounds,
    pub spectral_factor: f64,
    /// Routing objective `sum sum (1-rho)(p^2+p)` of the input rho matrix.
    pub objective: f64,
    pub sigma_bar_sq: f64,
    /// Asymptote when a trajectory bound `lambda_max` was supplied.
    pub asymptote: Option<AsymptoticBound>,
}

/// Assemble the full report for a validated input set.
pub fn bound_report(
    inputs: &BoundInputs,
    lambda_max: Option<f64>,
) -> Result<BoundReport, AnalysisError> {
    inputs.validate()?;
    let z = zeta_constants(inputs.l_smooth, inputs.mu, inputs.eta, inputs.epochs, inputs.tau_rho);
    let factor = spectral_factor(&z, &inputs.p, inputs.eta, inputs.l_smooth);
    let objective = inputs.objective();
    let bias_moments = bias_moment_bounds(&inputs.p, &inputs.rho)?;
    let asymptote =
        lambda_max.map(|lm| asymptotic_bound(&z, factor, inputs.sigma_bar_sq, objective, lm));
    Ok(BoundReport {
        tau_rho: inputs.tau_rho,
        zetas: z,
        bias_moments,
        spectral_factor: factor,
        objective,
        sigma_bar_sq: inputs.sigma_bar_sq,
        asymptote,
    })
}

// ---------------------------------------------------------------------------
// Coefficient distribution statistics
// ---------------------------------------------------------------------------

pub const COEFF_HISTOGRAM_BINS: usize = 64;

/// Streaming statistics of the aggregation coefficient of one ordered pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCoeffStats {
    pub src: usize,
    pub dst: usize,
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    /// Approximate quantiles from the histogram (bin upper edges).
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// Counts over `COEFF_HISTOGRAM_BINS` equal bins of [0, 1].
    pub histogram: Vec<u64>,
}

/// Coefficient distribution over repeated success-tensor draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientStats {
    pub n_clients: usize,
    pub trials: u64,
    pub segments_per_trial: usize,
    pub pairs: Vec<PairCoeffStats>,
}

struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
    hist: Vec<u64>,
}

impl Welford {
    fn new() -> Self {
        Welford {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            hist: vec![0; COEFF_HISTOGRAM_BINS],
        }
    }

    fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        let bin = ((v * COEFF_HISTOGRAM_BINS as f64) as usize).min(COEFF_HISTOGRAM_BINS - 1);
        self.hist[bin] += 1;
    }

    fn quantile(&self, q: f64) -> f64 {
        let target = (q * self.count as f64) as u64;
        let mut seen = 0u64;
        for (i, &c) in self.hist.iter().enumerate() {
            seen += c;
            if seen > target {
                return (i + 1) as f64 / COEFF_HISTOGRAM_BINS as f64;
            }
        }
        1.0
    }
}

/// Tabulate the renormalized aggregation coefficients `p_{m,n,l}` over
/// `trials` independent success tensors drawn from the plan's E2E rates.
/// Every segment of every tensor contributes one sample per ordered pair.
pub fn coefficient_distribution<R: Rng>(
    p: &Weights,
    plan: &RoutePlan,
    m_dim: usize,
    trials: u64,
    rng: &mut R,
) -> CoefficientStats {
    let n = p.len();
    assert_eq!(plan.n_participants(), n);
    let mut acc: Vec<Welford> = (0..n * n).map(|_| Welford::new()).collect();
    let segments = m_dim.div_ceil(plan.k_elements());
    for _ in 0..trials {
        let e = sample_successes(plan, m_dim, rng);
        for receiver in 0..n {
            for l in 0..segments {
                let mut denom = 0.0;
                for m in 0..n {
                    if e.get(m, receiver, l) {
                        denom += p.get(m);
                    }
                }
                for m in 0..n {
                    let coeff = if e.get(m, receiver, l) { p.get(m) / denom } else { 0.0 };
                    acc[m * n + receiver].push(coeff);
                }
            }
        }
    }
    let pairs = acc
        .into_iter()
        .enumerate()
        .map(|(idx, w)| {
            let variance =
                if w.count > 1 { w.m2 / w.count as f64 } else { 0.0 };
            PairCoeffStats {
                src: idx / n,
                dst: idx % n,
                count: w.count,
                mean: w.mean,
                variance,
                min: if w.count > 0 { w.min } else { 0.0 },
                max: if w.count > 0 { w.max } else { 0.0 },
                q05: w.quantile(0.05),
                q50: w.quantile(0.50),
                q95: w.quantile(0.95),
                histogram: w.hist,
            }
        })
        .collect();
    CoefficientStats { n_clients: n, trials, segments_per_trial: segments, pairs }
}
