//! Training tasks with known smoothness/convexity constants, deterministic
//! full-batch gradient descent, and model vectors segmentable into packets.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, Mat};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub enum TaskError {
    /// A gradient step produced NaN or infinity.
    NonFiniteGradient { client: usize, epoch: usize },
    /// Operation only defined for a different task variant.
    UnsupportedTask(&'static str),
    /// Structural validation failure at construction.
    InvalidTask(&'static str),
}

impl core::fmt::Display for TaskError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TaskError::NonFiniteGradient { client, epoch } => {
                write!(f, "non-finite gradient for client {client} at epoch {epoch}")
            }
            TaskError::UnsupportedTask(what) => write!(f, "unsupported task variant: {what}"),
            TaskError::InvalidTask(what) => write!(f, "invalid task: {what}"),
        }
    }
}

impl core::error::Error for TaskError {}

/// Ideal aggregation weights `p_n = D_n / sum(D)`: strictly positive and
/// normalized to sum to one at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(raw: Vec<f64>) -> Result<Self, TaskError> {
        if raw.is_empty() {
            return Err(TaskError::InvalidTask("weights must be non-empty"));
        }
        if raw.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(TaskError::InvalidTask("weights must be positive and finite"));
        }
        let sum: f64 = raw.iter().sum();
        Ok(Weights(raw.iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        Weights(vec![1.0 / n as f64; n])
    }

    /// `p_n = D_n / sum(D)` from per-client data-point counts.
    pub fn from_data_sizes(sizes: &[usize]) -> Result<Self, TaskError> {
        if sizes.iter().any(|&d| d == 0) {
            return Err(TaskError::InvalidTask("client with zero data points"));
        }
        Weights::new(sizes.iter().map(|&d| d as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, n: usize) -> f64 {
        self.0[n]
    }
}

/// A flat parameter vector partitioned into fixed-size segments, the unit of
/// packet loss and aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    params: Vec<f64>,
    segment_size: usize,
}

impl ModelVector {
    /// Panics if `segment_size == 0` or `params` is empty.
    pub fn new(params: Vec<f64>, segment_size: usize) -> Self {
        assert!(segment_size >= 1, "segment size must be at least one element");
        assert!(!params.is_empty(), "model must have at least one parameter");
        ModelVector { params, segment_size }
    }

    pub fn zeros(dim: usize, segment_size: usize) -> Self {
        ModelVector::new(vec![0.0; dim], segment_size)
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn segment_size(&self) -> usize {
        self.segment_size
    }

    /// `ceil(M / K)` segments.
    pub fn num_segments(&self) -> usize {
        self.params.len().div_ceil(self.segment_size)
    }

    /// Index range `[l*K, min((l+1)*K, M))` of segment `l`.
    pub fn segment_range(&self, l: usize) -> core::ops::Range<usize> {
        let start = l * self.segment_size;
        let end = (start + self.segment_size).min(self.params.len());
        start..end
    }

    /// Number of elements in segment `l` (the tail may be ragged).
    pub fn elements_in_segment(&self, l: usize) -> usize {
        self.segment_range(l).len()
    }

    pub fn segment(&self, l: usize) -> &[f64] {
        let r = self.segment_range(l);
        &self.params[r]
    }

    pub fn segment_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.segment_range(l);
        &mut self.params[r]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Re-segment the same parameters with a different packet size.
    pub fn with_segment_size(&self, segment_size: usize) -> Self {
        ModelVector::new(self.params.clone(), segment_size)
    }
}

// ---------------------------------------------------------------------------
// Task variants
// ---------------------------------------------------------------------------

/// Per-client quadratic objective `F_n(w) = 0.5 w'A_n w - b_n'w + c_n` with
/// SPD `A_n`, so smoothness and strong-convexity constants are exact
/// eigenvalue extrema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTask {
    pub a: Vec<Mat>,
    pub b: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub p: Weights,
}

impl QuadraticTask {
    pub fn new(a: Vec<Mat>, b: Vec<Vec<f64>>, offsets: Vec<f64>, p: Weights) -> Result<Self, TaskError> {
        let n = a.len();
        if n < 2 || b.len() != n || offsets.len() != n || p.len() != n {
            return Err(TaskError::InvalidTask("need matching A, b, offset, p for >= 2 clients"));
        }
        let dim = b[0].len();
        for (an, bn) in a.iter().zip(&b) {
            if an.rows() != dim || an.cols() != dim || bn.len() != dim {
                return Err(TaskError::InvalidTask("inconsistent quadratic dimensions"));
            }
            if !an.is_finite() || bn.iter().any(|v| !v.is_finite()) {
                return Err(TaskError::InvalidTask("non-finite quadratic coefficients"));
            }
        }
        Ok(QuadraticTask { a, b, offsets, p })
    }

    /// Build from per-client curvatures and centers:
    /// `F_n(w) = 0.5 (w - c_n)' A_n (w - c_n)`, so every local minimum is 0.
    pub fn centered(a: Vec<Mat>, centers: Vec<Vec<f64>>, p: Weights) -> Result<Self, TaskError> {
        let mut b = Vec::with_capacity(a.len());
        let mut offsets = Vec::with_capacity(a.len());
        for (an, cn) in a.iter().zip(&centers) {
            let bn = an.mul_vec(cn);
            let off = 0.5 * bn.iter().zip(cn).map(|(x, y)| x * y).sum::<f64>();
            b.push(bn);
            offsets.push(off);
        }
        QuadraticTask::new(a, b, offsets, p)
    }

    /// Random SPD curvatures (eigenvalues in `[mu_floor, mu_floor + spread]`)
    /// and random centers in `[-center_range, center_range]^dim`.
    pub fn random<R: Rng>(
        clients: usize,
        dim: usize,
        mu_floor: f64,
        spread: f64,
        center_range: f64,
        p: Weights,
        rng: &mut R,
    ) -> Result<Self, TaskError> {
        let mut a = Vec::with_capacity(clients);
        let mut centers = Vec::with_capacity(clients);
        for _ in 0..clients {
            // A = B'B scaled into [mu_floor, mu_floor + spread] plus a floor.
            let mut b = Mat::zeros(dim, dim);
            for r in 0..dim {
                for c in 0..dim {
                    b[(r, c)] = rng.gen::<f64>() * 2.0 - 1.0;
                }
            }
            let mut g = b.gram();
            let (hi, _) = linalg::sym_eig_extrema(&g);
            let scale = spread / hi.max(1e-12);
            for r in 0..dim {
                for c in 0..dim {
                    g[(r, c)] *= scale;
                }
                g[(r, r)] += mu_floor;
            }
            a.push(g);
            centers.push((0..dim).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * center_range).collect());
        }
        QuadraticTask::centered(a, centers, p)
    }

    fn local_loss(&self, n: usize, w: &[f64]) -> f64 {
        let aw = self.a[n].mul_vec(w);
        let quad: f64 = aw.iter().zip(w).map(|(x, y)| x * y).sum();
        let lin: f64 = self.b[n].iter().zip(w).map(|(x, y)| x * y).sum();
        0.5 * quad - lin + self.offsets[n]
    }

    fn local_gradient(&self, n: usize, w: &[f64]) -> Vec<f64> {
        let mut g = self.a[n].mul_vec(w);
        for (gi, bi) in g.iter_mut().zip(&self.b[n]) {
            *gi -= bi;
        }
        g
    }

    /// Closed-form global minimizer `w* = (sum p A)^-1 sum p b`.
    pub fn optimum(&self) -> Option<Vec<f64>> {
        let dim = self.b[0].len();
        let mut abar = Mat::zeros(dim, dim);
        let mut bbar = vec![0.0; dim];
        for n in 0..self.a.len() {
            let pn = self.p.get(n);
            for r in 0..dim {
                for c in 0..dim {
                    abar[(r, c)] += pn * self.a[n][(r, c)];
                }
                bbar[r] += pn * self.b[n][r];
            }
        }
        linalg::cholesky_solve(&abar, &bbar)
    }
}

/// Binary logistic regression on per-client feature matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticTask {
    /// Per client: `D_n x dim` design matrix.
    pub features: Vec<Mat>,
    /// Per client: labels in {0, 1}.
    pub labels: Vec<Vec<f64>>,
    pub p: Weights,
}

impl LogisticTask {
    pub fn new(features: Vec<Mat>, labels: Vec<Vec<f64>>, p: Weights) -> Result<Self, TaskError> {
        let n = features.len();
        if n < 2 || labels.len() != n || p.len() != n {
            return Err(TaskError::InvalidTask("need matching features, labels, p for >= 2 clients"));
        }
        let dim = features[0].cols();
        for (x, y) in features.iter().zip(&labels) {
            if x.rows() == 0 {
                return Err(TaskError::InvalidTask("client with zero data points"));
            }
            if x.cols() != dim || y.len() != x.rows() {
                return Err(TaskError::InvalidTask("inconsistent logistic dimensions"));
            }
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(TaskError::InvalidTask("labels must be 0 or 1"));
            }
        }
        Ok(LogisticTask { features, labels, p })
    }

    /// Synthetic non-iid data: per-client feature mean shifts and a
    /// per-client separator `w_true + heterogeneity * delta_n`, so local
    /// optima genuinely disagree and aggregation quality matters. The last
    /// feature column is the constant 1 (bias).
    pub fn synthetic<R: Rng>(
        clients: usize,
        samples_per_client: usize,
        dim: usize,
        heterogeneity: f64,
        rng: &mut R,
    ) -> Result<Self, TaskError> {
        let w_true: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let mut features = Vec::with_capacity(clients);
        let mut labels = Vec::with_capacity(clients);
        let mut sizes = Vec::with_capacity(clients);
        for _ in 0..clients {
            let shift: Vec<f64> = (0..dim - 1).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let w_client: Vec<f64> = w_true
                .iter()
                .map(|w| w + heterogeneity * (rng.gen::<f64>() * 2.0 - 1.0))
                .collect();
            let rows = samples_per_client;
            let mut x = Mat::zeros(rows, dim);
            let mut y = Vec::with_capacity(rows);
            for r in 0..rows {
                let mut z = 0.0;
                for c in 0..dim - 1 {
                    let v = gaussian(rng) + shift[c];
                    x[(r, c)] = v;
                    z += v * w_client[c];
                }
                x[(r, dim - 1)] = 1.0;
                z += w_client[dim - 1];
                let prob = sigmoid(z);
                y.push(if rng.gen::<f64>() < prob { 1.0 } else { 0.0 });
            }
            features.push(x);
            labels.push(y);
            sizes.push(rows);
        }
        let p = Weights::from_data_sizes(&sizes)?;
        LogisticTask::new(features, labels, p)
    }

    /// Extreme non-iid split in the spirit of one-class-per-client
    /// partitions: class-conditional Gaussian blobs along a shared
    /// direction, with client `i` holding samples of class `i % 2` only.
    /// A client training alone drifts to a degenerate one-class predictor,
    /// so aggregation consistency is decisive.
    pub fn synthetic_label_skew<R: Rng>(
        clients: usize,
        samples_per_client: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self, TaskError> {
        if dim < 2 {
            return Err(TaskError::InvalidTask("label-skew task needs dim >= 2"));
        }
        let mut direction: Vec<f64> = (0..dim - 1).map(|_| gaussian(rng)).collect();
        let norm = math::sqrt(direction.iter().map(|v| v * v).sum());
        for d in direction.iter_mut() {
            *d /= norm.max(1e-12);
        }
        let margin = 1.5;
        let mut features = Vec::with_capacity(clients);
        let mut labels = Vec::with_capacity(clients);
        let mut sizes = Vec::with_capacity(clients);
        for client in 0..clients {
            let label = (client % 2) as f64;
            let sign = 2.0 * label - 1.0;
            let rows = samples_per_client;
            let mut x = Mat::zeros(rows, dim);
            let mut y = Vec::with_capacity(rows);
            for r in 0..rows {
                for c in 0..dim - 1 {
                    x[(r, c)] = gaussian(rng) + sign * margin * direction[c];
                }
                x[(r, dim - 1)] = 1.0;
                y.push(label);
            }
            features.push(x);
            labels.push(y);
            sizes.push(rows);
        }
        let p = Weights::from_data_sizes(&sizes)?;
        LogisticTask::new(features, labels, p)
    }

    fn local_loss(&self, n: usize, w: &[f64]) -> f64 {
        let x = &self.features[n];
        let rows = x.rows();
        let mut acc = 0.0;
        for r in 0..rows {
            let z: f64 = x.row(r).iter().zip(w).map(|(a, b)| a * b).sum();
            acc += softplus(z) - self.labels[n][r] * z;
        }
        acc / rows as f64
    }

    fn local_gradient(&self, n: usize, w: &[f64]) -> Vec<f64> {
        let x = &self.features[n];
        let rows = x.rows();
        let mut g = vec![0.0; w.len()];
        for r in 0..rows {
            let z: f64 = x.row(r).iter().zip(w).map(|(a, b)| a * b).sum();
            let d = sigmoid(z) - self.labels[n][r];
            for (gi, xi) in g.iter_mut().zip(x.row(r)) {
                *gi += d * xi;
            }
        }
        for gi in g.iter_mut() {
            *gi /= rows as f64;
        }
        g
    }

    fn gradient_over(&self, n: usize, w: &[f64], rows: &[usize]) -> Vec<f64> {
        let x = &self.features[n];
        let mut g = vec![0.0; w.len()];
        for &r in rows {
            let z: f64 = x.row(r).iter().zip(w).map(|(a, b)| a * b).sum();
            let d = sigmoid(z) - self.labels[n][r];
            for (gi, xi) in g.iter_mut().zip(x.row(r)) {
                *gi += d * xi;
            }
        }
        for gi in g.iter_mut() {
            *gi /= rows.len() as f64;
        }
        g
    }

    fn local_accuracy(&self, n: usize, w: &[f64]) -> f64 {
        let x = &self.features[n];
        let mut correct = 0usize;
        for r in 0..x.rows() {
            let z: f64 = x.row(r).iter().zip(w).map(|(a, b)| a * b).sum();
            let pred = if z > 0.0 { 1.0 } else { 0.0 };
            if pred == self.labels[n][r] {
                correct += 1;
            }
        }
        correct as f64 / x.rows() as f64
    }
}

/// One-hidden-layer tanh MLP with a logistic output, for exercising the
/// protocol engine on a nonconvex objective. The bound machinery refuses it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyMlpTask {
    pub features: Vec<Mat>,
    pub labels: Vec<Vec<f64>>,
    pub hidden: usize,
    pub p: Weights,
}

impl TinyMlpTask {
    pub fn new(
        features: Vec<Mat>,
        labels: Vec<Vec<f64>>,
        hidden: usize,
        p: Weights,
    ) -> Result<Self, TaskError> {
        if hidden == 0 {
            return Err(TaskError::InvalidTask("hidden width must be positive"));
        }
        let base = LogisticTask::new(features, labels, p)?;
        Ok(TinyMlpTask { features: base.features, labels: base.labels, hidden, p: base.p })
    }

    /// XOR-style blobs that a linear model cannot separate.
    pub fn synthetic<R: Rng>(
        clients: usize,
        samples_per_client: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, TaskError> {
        let mut features = Vec::with_capacity(clients);
        let mut labels = Vec::with_capacity(clients);
        let mut sizes = Vec::with_capacity(clients);
        for _ in 0..clients {
            let rows = samples_per_client;
            let mut x = Mat::zeros(rows, 2);
            let mut y = Vec::with_capacity(rows);
            for r in 0..rows {
                let qx = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let qy = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                x[(r, 0)] = qx + 0.35 * gaussian(rng);
                x[(r, 1)] = qy + 0.35 * gaussian(rng);
                y.push(if qx * qy > 0.0 { 1.0 } else { 0.0 });
            }
            features.push(x);
            labels.push(y);
            sizes.push(rows);
        }
        let p = Weights::from_data_sizes(&sizes)?;
        TinyMlpTask::new(features, labels, hidden, p)
    }

    pub fn input_dim(&self) -> usize {
        self.features[0].cols()
    }

    /// Flattened parameter count: `W1 (h x d) + b1 (h) + W2 (h) + b2 (1)`.
    pub fn param_dim(&self) -> usize {
        let d = self.input_dim();
        self.hidden * d + self.hidden + self.hidden + 1
    }

    fn forward(&self, w: &[f64], x: &[f64]) -> (Vec<f64>, f64) {
        let (h, d) = (self.hidden, x.len());
        let w1 = &w[..h * d];
        let b1 = &w[h * d..h * d + h];
        let w2 = &w[h * d + h..h * d + 2 * h];
        let b2 = w[h * d + 2 * h];
        let mut act = Vec::with_capacity(h);
        for j in 0..h {
            let mut z = b1[j];
            for (c, xv) in x.iter().enumerate() {
                z += w1[j * d + c] * xv;
            }
            act.push(libm::tanh(z));
        }
        let z_out = b2 + w2.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();
        (act, z_out)
    }

    fn local_loss(&self, n: usize, w: &[f64]) -> f64 {
        let x = &self.features[n];
        let mut acc = 0.0;
        for r in 0..x.rows() {
            let (_, z) = self.forward(w, x.row(r));
            acc += softplus(z) - self.labels[n][r] * z;
        }
        acc / x.rows() as f64
    }

    fn local_gradient(&self, n: usize, w: &[f64]) -> Vec<f64> {
        let all: Vec<usize> = (0..self.features[n].rows()).collect();
        self.gradient_over(n, w, &all)
    }

    fn gradient_over(&self, n: usize, w: &[f64], rows: &[usize]) -> Vec<f64> {
        let x = &self.features[n];
        let (h, d) = (self.hidden, self.input_dim());
        let w2 = &w[h * d + h..h * d + 2 * h];
        let mut g = vec![0.0; w.len()];
        for &r in rows {
            let row = x.row(r);
            let (act, z) = self.forward(w, row);
            let dz = sigmoid(z) - self.labels[n][r];
            for j in 0..h {
                // d/dW2 and d/db2
                g[h * d + h + j] += dz * act[j];
                let dpre = dz * w2[j] * (1.0 - act[j] * act[j]);
                g[h * d + j] += dpre; // b1
                for (c, xv) in row.iter().enumerate() {
                    g[j * d + c] += dpre * xv; // W1
                }
            }
            g[h * d + 2 * h] += dz; // b2
        }
        let inv = 1.0 / rows.len() as f64;
        for gi in g.iter_mut() {
            *gi *= inv;
        }
        g
    }

    fn local_accuracy(&self, n: usize, w: &[f64]) -> f64 {
        let x = &self.features[n];
        let mut correct = 0usize;
        for r in 0..x.rows() {
            let (_, z) = self.forward(w, x.row(r));
            let pred = if z > 0.0 { 1.0 } else { 0.0 };
            if pred == self.labels[n][r] {
                correct += 1;
            }
        }
        correct as f64 / x.rows() as f64
    }
}

/// A federated training task: per-client objectives plus aggregation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Quadratic(QuadraticTask),
    Logistic(LogisticTask),
    TinyMlp(TinyMlpTask),
}

impl Task {
    pub fn n_clients(&self) -> usize {
        self.weights().len()
    }

    pub fn weights(&self) -> &Weights {
        match self {
            Task::Quadratic(t) => &t.p,
            Task::Logistic(t) => &t.p,
            Task::TinyMlp(t) => &t.p,
        }
    }

    /// Model dimension `M`.
    pub fn dim(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.b[0].len(),
            Task::Logistic(t) => t.features[0].cols(),
            Task::TinyMlp(t) => t.param_dim(),
        }
    }

    pub fn local_loss(&self, n: usize, w: &[f64]) -> f64 {
        match self {
            Task::Quadratic(t) => t.local_loss(n, w),
            Task::Logistic(t) => t.local_loss(n, w),
            Task::TinyMlp(t) => t.local_loss(n, w),
        }
    }

    pub fn local_gradient(&self, n: usize, w: &[f64]) -> Vec<f64> {
        match self {
            Task::Quadratic(t) => t.local_gradient(n, w),
            Task::Logistic(t) => t.local_gradient(n, w),
            Task::TinyMlp(t) => t.local_gradient(n, w),
        }
    }

    /// Weighted global loss `F(w) = sum_n p_n F_n(w)`.
    pub fn global_loss(&self, w: &[f64]) -> f64 {
        let p = self.weights();
        (0..self.n_clients()).map(|n| p.get(n) * self.local_loss(n, w)).sum()
    }

    /// Number of data points held by a client (`None` for the quadratic
    /// variant, which has no sample set).
    pub fn samples(&self, n: usize) -> Option<usize> {
        match self {
            Task::Quadratic(_) => None,
            Task::Logistic(t) => Some(t.features[n].rows()),
            Task::TinyMlp(t) => Some(t.features[n].rows()),
        }
    }

    /// Gradient of the mean loss over a subset of a client's samples.
    pub fn local_gradient_over(&self, n: usize, w: &[f64], rows: &[usize]) -> Result<Vec<f64>, TaskError> {
        match self {
            Task::Quadratic(_) => {
                Err(TaskError::UnsupportedTask("quadratic objectives are full-batch only"))
            }
            Task::Logistic(t) => Ok(t.gradient_over(n, w, rows)),
            Task::TinyMlp(t) => Ok(t.gradient_over(n, w, rows)),
        }
    }

    /// Classification accuracy at `w`, when the task has one.
    pub fn local_accuracy(&self, n: usize, w: &[f64]) -> Option<f64> {
        match self {
            Task::Quadratic(_) => None,
            Task::Logistic(t) => Some(t.local_accuracy(n, w)),
            Task::TinyMlp(t) => Some(t.local_accuracy(n, w)),
        }
    }

    /// Closed-form global minimizer, when the task has one.
    pub fn optimum(&self) -> Option<Vec<f64>> {
        match self {
            Task::Quadratic(t) => t.optimum(),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Local training and task constants
// ---------------------------------------------------------------------------

/// Full-batch gradient descent: `w_i = w_{i-1} - eta * grad F_n(w_{i-1})`,
/// `I` epochs. Deterministic for fixed inputs.
pub fn local_train(
    task: &Task,
    client: usize,
    start: &ModelVector,
    epochs: usize,
    eta: f64,
) -> Result<ModelVector, TaskError> {
    assert!(eta > 0.0, "learning rate must be positive");
    assert!(epochs >= 1, "at least one local epoch");
    let mut w = start.clone();
    for epoch in 1..=epochs {
        let g = task.local_gradient(client, w.params());
        for (wi, gi) in w.params_mut().iter_mut().zip(&g) {
            *wi -= eta * gi;
        }
        if w.params().iter().any(|v| !v.is_finite()) {
            return Err(TaskError::NonFiniteGradient { client, epoch });
        }
    }
    Ok(w)
}

/// Mini-batch variant of [`local_train`] for data-backed tasks: each epoch
/// shuffles the client's samples and applies one descent step per batch.
///
/// Stochastic gradients only change the gradient-divergence term of the
/// convergence analysis, so this knob carries no bound guarantees; the
/// bound machinery assumes full-batch training. Quadratic objectives have
/// no sample set and are rejected.
pub fn local_train_minibatch<R: Rng>(
    task: &Task,
    client: usize,
    start: &ModelVector,
    epochs: usize,
    eta: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<ModelVector, TaskError> {
    assert!(eta > 0.0, "learning rate must be positive");
    assert!(epochs >= 1, "at least one local epoch");
    if batch_size == 0 {
        return Err(TaskError::InvalidTask("batch size must be positive"));
    }
    let samples = task
        .samples(client)
        .ok_or(TaskError::UnsupportedTask("quadratic objectives are full-batch only"))?;
    let mut w = start.clone();
    let mut order: Vec<usize> = (0..samples).collect();
    for epoch in 1..=epochs {
        // Fisher-Yates shuffle from the caller's stream.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(batch_size.min(samples)) {
            let g = task.local_gradient_over(client, w.params(), batch)?;
            for (wi, gi) in w.params_mut().iter_mut().zip(&g) {
                *wi -= eta * gi;
            }
        }
        if w.params().iter().any(|v| !v.is_finite()) {
            return Err(TaskError::NonFiniteGradient { client, epoch });
        }
    }
    Ok(w)
}

/// Exact smoothness/convexity constants plus measured gradient-divergence
/// bounds for the quadratic variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConstants {
    /// `L = max_n lambda_max(A_n)`.
    pub l_smooth: f64,
    /// `mu = min_n lambda_min(A_n)`.
    pub mu: f64,
    /// Per-client divergence bound `sigma_n` over the measurement ball.
    pub sigma: Vec<f64>,
    /// `sigma_bar^2 = sum_n p_n sigma_n^2`.
    pub sigma_bar_sq: f64,
    /// Radius of the ball around `w*` on which `sigma_n` was measured
    /// (`10 ||w*|| + 1`).
    pub domain_radius: f64,
}

/// Compute `(L, mu, sigma_n, sigma_bar^2)` for a quadratic task.
///
/// The gradient-divergence bound is measured on the ball of radius
/// `10 ||w*|| + 1` around the global optimum: with `M_n = A_n - sum_m p_m A_m`
/// and `v_n = M_n w* - (b_n - sum_m p_m b_m)`, the divergence on the ball is
/// at most `||M_n|| r + ||v_n||` (exact whenever all `A_n` coincide).
pub fn task_constants(task: &Task) -> Result<TaskConstants, TaskError> {
    let quad = match task {
        Task::Quadratic(t) => t,
        _ => return Err(TaskError::UnsupportedTask("task constants require the quadratic variant")),
    };
    let dim = quad.b[0].len();
    let clients = quad.a.len();

    let mut l_smooth = f64::MIN;
    let mut mu = f64::MAX;
    for a in &quad.a {
        let (hi, lo) = linalg::sym_eig_extrema(a);
        l_smooth = l_smooth.max(hi);
        mu = mu.min(lo);
    }
    if !(mu > 0.0) {
        return Err(TaskError::InvalidTask("client objective is not strongly convex"));
    }

    let wstar = quad.optimum().ok_or(TaskError::InvalidTask("global curvature not SPD"))?;
    let radius = 10.0 * linalg::norm2(&wstar) + 1.0;

    let mut abar = Mat::zeros(dim, dim);
    let mut bbar = vec![0.0; dim];
    for n in 0..clients {
        let pn = quad.p.get(n);
        for r in 0..dim {
            for c in 0..dim {
                abar[(r, c)] += pn * quad.a[n][(r, c)];
            }
            bbar[r] += pn * quad.b[n][r];
        }
    }

    let mut sigma = Vec::with_capacity(clients);
    let mut sigma_bar_sq = 0.0;
    for n in 0..clients {
        let mut m = Mat::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                m[(r, c)] = quad.a[n][(r, c)] - abar[(r, c)];
            }
        }
        let mw = m.mul_vec(&wstar);
        let v: Vec<f64> =
            (0..dim).map(|i| mw[i] - (quad.b[n][i] - bbar[i])).collect();
        let s = math::sqrt(linalg::spectral_norm_sq(&m)) * radius + linalg::norm2(&v);
        sigma_bar_sq += quad.p.get(n) * s * s;
        sigma.push(s);
    }

    Ok(TaskConstants { l_smooth, mu, sigma, sigma_bar_sq, domain_radius: radius })
}

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + math::exp(-z))
    } else {
        let e = math::exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(math::exp(-z))
    } else {
        libm::log1p(math::exp(z))
    }
}

/// Standard normal via Box-Muller.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    math::sqrt(-2.0 * math::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn scalar_quadratic(a: f64, center: f64) -> (Mat, Vec<f64>) {
        (Mat::from_rows(1, 1, vec![a]), vec![center])
    }

    fn two_client_quadratic() -> Task {
        // F_1 = 0.5 w^2 (center 0), F_2 = 0.5 (w-1)^2.
        let (a1, c1) = scalar_quadratic(1.0, 0.0);
        let (a2, c2) = scalar_quadratic(1.0, 1.0);
        Task::Quadratic(
            QuadraticTask::centered(vec![a1, a2], vec![c1, c2], Weights::uniform(2)).unwrap(),
        )
    }

    #[test]
    fn segmentation_round_trip() {
        for m in 1..=17usize {
            let params: Vec<f64> = (0..m).map(|i| i as f64 + 0.5).collect();
            for k in 1..=m + 3 {
                let mv = ModelVector::new(params.clone(), k);
                assert_eq!(mv.num_segments(), m.div_ceil(k));
                let mut rebuilt = Vec::new();
                for l in 0..mv.num_segments() {
                    rebuilt.extend_from_slice(mv.segment(l));
                }
                assert_eq!(rebuilt, params);
            }
        }
    }

    #[test]
    fn stationary_point_stays_put() {
        let task = two_client_quadratic();
        let out = local_train(&task, 0, &ModelVector::zeros(1, 1), 7, 0.1).unwrap();
        assert_eq!(out.params()[0], 0.0);
    }

    #[test]
    fn one_step_hand_value() {
        // F_2 = 0.5 (w-1)^2, eta = 0.5, one epoch from 0 -> 0.5.
        let task = two_client_quadratic();
        let out = local_train(&task, 1, &ModelVector::zeros(1, 1), 1, 0.5).unwrap();
        assert_eq!(out.params()[0], 0.5);
    }

    #[test]
    fn descent_is_monotone_below_critical_rate() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let quad =
            QuadraticTask::random(3, 4, 0.5, 2.0, 1.0, Weights::uniform(3), &mut rng).unwrap();
        let task = Task::Quadratic(quad);
        let consts = task_constants(&task).unwrap();
        let eta = 0.9 / (2.0 * consts.l_smooth);
        for n in 0..3 {
            let mut w = ModelVector::new(vec![0.7; 4], 2);
            let mut prev = task.local_loss(n, w.params());
            for _ in 0..30 {
                w = local_train(&task, n, &w, 1, eta).unwrap();
                let cur = task.local_loss(n, w.params());
                assert!(cur <= prev + 1e-12, "loss increased: {prev} -> {cur}");
                prev = cur;
            }
        }
    }

    #[test]
    fn global_loss_of_identical_clients_ignores_weights() {
        let (a, c) = scalar_quadratic(2.0, 0.3);
        let quad = QuadraticTask::centered(
            vec![a.clone(), a.clone(), a],
            vec![c.clone(), c.clone(), c],
            Weights::new(vec![0.6, 0.3, 0.1]).unwrap(),
        )
        .unwrap();
        let task = Task::Quadratic(quad);
        for &w in &[-1.0, 0.0, 0.4, 2.0] {
            let f = task.global_loss(&[w]);
            let f1 = task.local_loss(0, &[w]);
            assert!((f - f1).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_optimum_matches_long_descent() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let quad =
            QuadraticTask::random(4, 5, 0.8, 1.5, 1.0, Weights::uniform(4), &mut rng).unwrap();
        let task = Task::Quadratic(quad);
        let wstar = task.optimum().unwrap();
        // Numerical minimization oracle: plain GD on the global objective.
        let consts = task_constants(&task).unwrap();
        let eta = 0.9 / consts.l_smooth;
        let mut w = vec![0.0; 5];
        for _ in 0..20_000 {
            let p = task.weights().clone();
            let mut g = vec![0.0; 5];
            for n in 0..4 {
                let gn = task.local_gradient(n, &w);
                for (gi, gni) in g.iter_mut().zip(&gn) {
                    *gi += p.get(n) * gni;
                }
            }
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= eta * gi;
            }
        }
        let f_closed = task.global_loss(&wstar);
        let f_gd = task.global_loss(&w);
        assert!((f_closed - f_gd).abs() < 1e-8, "{f_closed} vs {f_gd}");
        assert!(f_gd + 1e-10 >= f_closed, "closed form must be the minimum");
    }

    #[test]
    fn zero_data_client_is_rejected() {
        let x = Mat::zeros(0, 2);
        let err = LogisticTask::new(
            vec![x, Mat::zeros(3, 2)],
            vec![vec![], vec![0.0, 1.0, 0.0]],
            Weights::uniform(2),
        )
        .unwrap_err();
        assert!(matches!(err, TaskError::InvalidTask(_)));
        assert!(Weights::from_data_sizes(&[3, 0]).is_err());
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let tasks = [
            Task::Quadratic(
                QuadraticTask::random(3, 4, 0.5, 2.0, 1.0, Weights::uniform(3), &mut rng).unwrap(),
            ),
            Task::Logistic(LogisticTask::synthetic(3, 12, 4, 1.0, &mut rng).unwrap()),
            Task::TinyMlp(TinyMlpTask::synthetic(3, 10, 3, &mut rng).unwrap()),
        ];
        let h = 1e-5;
        for task in &tasks {
            let dim = task.dim();
            for _ in 0..10 {
                let w: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                for n in 0..task.n_clients() {
                    let g = task.local_gradient(n, &w);
                    let mut fd = vec![0.0; dim];
                    for i in 0..dim {
                        let mut wp = w.clone();
                        let mut wm = w.clone();
                        wp[i] += h;
                        wm[i] -= h;
                        fd[i] = (task.local_loss(n, &wp) - task.local_loss(n, &wm)) / (2.0 * h);
                    }
                    let err = linalg::dist2(&g, &fd);
                    let scale = linalg::norm2(&fd).max(1e-8);
                    assert!(err / scale < 1e-5, "rel grad err {} on {:?}", err / scale, task.dim());
                }
            }
        }
    }

    #[test]
    fn constants_for_identical_clients_have_zero_divergence() {
        let (a, c) = scalar_quadratic(1.5, 0.7);
        let quad = QuadraticTask::centered(
            vec![a.clone(), a],
            vec![c.clone(), c],
            Weights::new(vec![0.25, 0.75]).unwrap(),
        )
        .unwrap();
        let consts = task_constants(&Task::Quadratic(quad)).unwrap();
        assert!(consts.sigma.iter().all(|&s| s.abs() < 1e-12));
        assert!(consts.sigma_bar_sq.abs() < 1e-24);
    }

    #[test]
    fn constants_for_identity_curvature_reduce_to_center_gaps() {
        // A_n = I: gradient difference is constant, sigma_n = ||b_n - sum p b||.
        let i2 = Mat::identity(2);
        let b = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let p = Weights::new(vec![0.5, 0.25, 0.25]).unwrap();
        let quad = QuadraticTask::new(
            vec![i2.clone(), i2.clone(), i2],
            b.clone(),
            vec![0.0; 3],
            p.clone(),
        )
        .unwrap();
        let consts = task_constants(&Task::Quadratic(quad)).unwrap();
        let bbar = [
            0.5 * b[0][0] + 0.25 * b[1][0] + 0.25 * b[2][0],
            0.5 * b[0][1] + 0.25 * b[1][1] + 0.25 * b[2][1],
        ];
        for n in 0..3 {
            let expect = linalg::dist2(&b[n], &bbar);
            assert!((consts.sigma[n] - expect).abs() < 1e-12);
        }
        assert_eq!(consts.l_smooth, 1.0);
        assert_eq!(consts.mu, 1.0);
    }

    #[test]
    fn constants_track_eigenvalue_extrema() {
        let a1 = Mat::identity(3);
        let mut a2 = Mat::identity(3);
        for i in 0..3 {
            a2[(i, i)] = 2.0;
        }
        let quad = QuadraticTask::centered(
            vec![a1, a2],
            vec![vec![0.0; 3], vec![0.0; 3]],
            Weights::uniform(2),
        )
        .unwrap();
        let consts = task_constants(&Task::Quadratic(quad)).unwrap();
        assert!((consts.l_smooth - 2.0).abs() < 1e-12);
        assert!((consts.mu - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constants_refuse_nonquadratic_tasks() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let task = Task::Logistic(LogisticTask::synthetic(2, 5, 3, 1.0, &mut rng).unwrap());
        assert!(matches!(task_constants(&task), Err(TaskError::UnsupportedTask(_))));
    }

    #[test]
    fn minibatch_with_full_batch_size_matches_full_batch_epochs() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let task = Task::Logistic(LogisticTask::synthetic(2, 9, 3, 1.0, &mut rng).unwrap());
        let start = ModelVector::new(vec![0.1, -0.2, 0.3], 2);
        let full = local_train(&task, 0, &start, 4, 0.2).unwrap();
        // Batch size covering the whole client dataset: identical steps.
        let mut shuffle_rng = ChaCha12Rng::seed_from_u64(5);
        let mini = local_train_minibatch(&task, 0, &start, 4, 0.2, 9, &mut shuffle_rng).unwrap();
        for (a, b) in full.params().iter().zip(mini.params()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn minibatch_descends_and_rejects_quadratics() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let task = Task::Logistic(LogisticTask::synthetic(2, 24, 4, 1.0, &mut rng).unwrap());
        let start = ModelVector::new(vec![0.0; 4], 2);
        let before = task.local_loss(0, start.params());
        let out = local_train_minibatch(&task, 0, &start, 10, 0.1, 4, &mut rng).unwrap();
        assert!(task.local_loss(0, out.params()) < before);

        let quad = two_client_quadratic();
        let err = local_train_minibatch(&quad, 0, &ModelVector::zeros(1, 1), 1, 0.1, 2, &mut rng)
            .unwrap_err();
        assert!(matches!(err, TaskError::UnsupportedTask(_)));
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let (a, c) = scalar_quadratic(1.0, 0.0);
        let (a2, c2) = scalar_quadratic(1.0, 1.0);
        let task = Task::Quadratic(
            QuadraticTask::centered(vec![a, a2], vec![c, c2], Weights::uniform(2)).unwrap(),
        );
        let start = ModelVector::new(vec![f64::MAX / 2.0], 1);
        let err = local_train(&task, 0, &start, 50, 1e300).unwrap_err();
        assert!(matches!(err, TaskError::NonFiniteGradient { .. }));
    }
}
