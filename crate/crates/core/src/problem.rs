//! Synthetic federated problems: data generation, non-IID partitioning,
//! gradient oracles and smoothness estimation.
//!
//! Each client `i` holds a local objective `f_i`; the global smooth part is
//! the uniform average `f = (1/N) sum_i f_i`. Sample-based losses average a
//! per-sample loss over the client's shard, while the heterogeneous quadratic
//! testbed gives every client `f_i(x) = 0.5 * sum_j H_ij (x_j - m_ij)^2`.

use std::io::{Read, Write};

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::regularizer::Regularizer;
use crate::rng::{derive_stream, RngStream};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `0.5 (a^T x - b)^2`
    SquaredError,
    /// `log(1 + exp(-y a^T x))`, labels in {-1, +1}
    Logistic,
    /// `sigmoid(-y a^T x)`: smooth and non-convex
    SigmoidNonconvex,
    /// Per-client diagonal quadratics, no samples.
    HeteroQuadratic,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::SquaredError => "squared_error",
            LossKind::Logistic => "logistic",
            LossKind::SigmoidNonconvex => "sigmoid_nonconvex",
            LossKind::HeteroQuadratic => "hetero_quadratic",
        }
    }
}

/// Sampling range for the heterogeneous quadratic testbed: centers uniform in
/// `[-center_range, center_range]`, curvatures log-uniform in
/// `[curvature_min, curvature_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroSpread {
    pub center_range: f64,
    pub curvature_min: f64,
    pub curvature_max: f64,
}

impl Default for HeteroSpread {
    fn default() -> Self {
        HeteroSpread {
            center_range: 10.0,
            curvature_min: 0.1,
            curvature_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionSpec {
    Iid,
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Samples(usize),
}

/// Row-major sample shard.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl Shard {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::invalid("shard rows and labels differ in length"));
        }
        if rows.is_empty() {
            return Err(Error::invalid("shard must hold at least one sample"));
        }
        let mut features = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    op: "shard",
                    left: r.len(),
                    right: dim,
                });
            }
            features.extend(r);
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "shard" });
        }
        Ok(Shard {
            dim,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientData {
    Samples(Shard),
    Quadratic {
        curvature: ParamVector,
        center: ParamVector,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    pub value: f64,
    /// False when power iteration hit its cap before the tolerance.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedProblem {
    loss: LossKind,
    dim: usize,
    clients: Vec<ClientData>,
    smoothness: Smoothness,
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub loss: LossKind,
    pub dim: usize,
    pub samples: usize,
    pub clients: usize,
    pub partition: PartitionSpec,
    pub spread: HeteroSpread,
}

const PARTITION_ATTEMPTS: usize = 100;
const POWER_ITERATIONS: usize = 100;
const POWER_TOLERANCE: f64 = 1e-9;
const LABEL_NOISE: f64 = 0.1;

/// Largest `|sigma''(u)|`, attained at `u = ln(2 +- sqrt 3)`.
pub const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_63; // 1 / (6 sqrt 3)

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(u))` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

impl FederatedProblem {
    /// Sample-based problem from explicit shards.
    pub fn from_shards(loss: LossKind, dim: usize, shards: Vec<Shard>) -> Result<Self> {
        if loss == LossKind::HeteroQuadratic {
            return Err(Error::invalid("hetero quadratic problems carry no samples"));
        }
        if shards.is_empty() {
            return Err(Error::invalid("problem needs at least one client"));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        for s in &shards {
            if s.dim != dim {
                return Err(Error::DimensionMismatch {
                    op: "from_shards",
                    left: s.dim,
                    right: dim,
                });
            }
            if s.is_empty() {
                return Err(Error::invalid("every shard must be nonempty"));
            }
        }
        Self::with_smoothness(
            loss,
            dim,
            shards.into_iter().map(ClientData::Samples).collect(),
        )
    }

    /// Heterogeneous quadratic problem from per-client curvatures and centers.
    pub fn hetero_quadratic(
        curvatures: Vec<ParamVector>,
        centers: Vec<ParamVector>,
    ) -> Result<Self> {
        if curvatures.is_empty() || curvatures.len() != centers.len() {
            return Err(Error::invalid(
                "need one curvature and one center per client",
            ));
        }
        let dim = curvatures[0].len();
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let mut clients = Vec::with_capacity(curvatures.len());
        for (h, m) in curvatures.into_iter().zip(centers) {
            if h.len() != dim || m.len() != dim {
                return Err(Error::DimensionMismatch {
                    op: "hetero_quadratic",
                    left: h.len().max(m.len()),
                    right: dim,
                });
            }
            if h.iter().any(|v| *v <= 0.0) {
                return Err(Error::invalid("curvatures must be strictly positive"));
            }
            clients.push(ClientData::Quadratic {
                curvature: h,
                center: m,
            });
        }
        Self::with_smoothness(LossKind::HeteroQuadratic, dim, clients)
    }

    fn with_smoothness(loss: LossKind, dim: usize, clients: Vec<ClientData>) -> Result<Self> {
        let mut prob = FederatedProblem {
            loss,
            dim,
            clients,
            smoothness: Smoothness {
                value: 0.0,
                converged: true,
            },
        };
        prob.smoothness = prob.estimate_smoothness();
        if !prob.smoothness.converged {
            warn!(
                "power iteration did not reach tolerance {POWER_TOLERANCE} in {POWER_ITERATIONS} steps; L = {}",
                prob.smoothness.value
            );
        }
        Ok(prob)
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, i: usize) -> &ClientData {
        &self.clients[i]
    }

    /// Cached smoothness estimate.
    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    fn check_point(&self, x: &ParamVector) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                op: "gradient",
                left: x.len(),
                right: self.dim,
            });
        }
        Ok(())
    }

    fn check_client(&self, client: usize) -> Result<()> {
        if client >= self.clients.len() {
            return Err(Error::invalid(format!(
                "client {client} out of range for {} clients",
                self.clients.len()
            )));
        }
        Ok(())
    }

    fn sample_loss(&self, row: &[f64], label: f64, x: &[f64]) -> f64 {
        let ax = dot(row, x);
        match self.loss {
            LossKind::SquaredError => 0.5 * (ax - label).powi(2),
            LossKind::Logistic => softplus(-label * ax),
            LossKind::SigmoidNonconvex => sigmoid(-label * ax),
            LossKind::HeteroQuadratic => unreachable!("quadratic clients have no samples"),
        }
    }

    /// Adds `weight * grad f(x; sample)` into `out`.
    fn add_sample_gradient(&self, row: &[f64], label: f64, x: &[f64], out: &mut [f64]) {
        let ax = dot(row, x);
        let coeff = match self.loss {
            LossKind::SquaredError => ax - label,
            LossKind::Logistic => -label * sigmoid(-label * ax),
            LossKind::SigmoidNonconvex => {
                let s = sigmoid(-label * ax);
                -label * s * (1.0 - s)
            }
            LossKind::HeteroQuadratic => unreachable!("quadratic clients have no samples"),
        };
        for (o, a) in out.iter_mut().zip(row) {
            *o += coeff * a;
        }
    }

    /// Exact `grad f_i(x)`.
    pub fn client_gradient(&self, client: usize, x: &ParamVector) -> Result<ParamVector> {
        self.check_client(client)?;
        self.check_point(x)?;
        match &self.clients[client] {
            ClientData::Quadratic { curvature, center } => {
                let g = curvature
                    .iter()
                    .zip(center)
                    .zip(x)
                    .map(|((h, m), v)| h * (v - m))
                    .collect();
                ParamVector::new(g)
            }
            ClientData::Samples(shard) => {
                let mut acc = vec![0.0; self.dim];
                for s in 0..shard.len() {
                    self.add_sample_gradient(shard.row(s), shard.label(s), x.as_slice(), &mut acc);
                }
                let n = shard.len() as f64;
                ParamVector::new(acc.into_iter().map(|v| v / n).collect())
            }
        }
    }

    /// Mini-batch estimator `g_i(x)`: mean of `B` per-sample gradients drawn
    /// uniformly with replacement, or the exact gradient for `Full`.
    pub fn stochastic_gradient(
        &self,
        client: usize,
        x: &ParamVector,
        batch: BatchSize,
        rng: &mut RngStream,
    ) -> Result<ParamVector> {
        let b = match batch {
            BatchSize::Full => return self.client_gradient(client, x),
            BatchSize::Samples(0) => return Err(Error::invalid("batch size must be at least 1")),
            BatchSize::Samples(b) => b,
        };
        self.check_client(client)?;
        self.check_point(x)?;
        match &self.clients[client] {
            ClientData::Quadratic { .. } => self.client_gradient(client, x),
            ClientData::Samples(shard) => {
                let mut acc = vec![0.0; self.dim];
                for _ in 0..b {
                    let s = rng.random_range(0..shard.len());
                    self.add_sample_gradient(shard.row(s), shard.label(s), x.as_slice(), &mut acc);
                }
                let n = b as f64;
                ParamVector::new(acc.into_iter().map(|v| v / n).collect())
            }
        }
    }

    /// `grad f(x) = (1/N) sum_i grad f_i(x)`, summed in client order.
    pub fn full_global_gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        let grads = (0..self.clients.len())
            .map(|i| self.client_gradient(i, x))
            .collect::<Result<Vec<_>>>()?;
        ParamVector::mean(&grads)
    }

    pub fn client_loss(&self, client: usize, x: &ParamVector) -> Result<f64> {
        self.check_client(client)?;
        self.check_point(x)?;
        let v = match &self.clients[client] {
            ClientData::Quadratic { curvature, center } => {
                let mut acc = 0.0;
                for ((h, m), v) in curvature.iter().zip(center).zip(x) {
                    acc += h * (v - m) * (v - m);
                }
                0.5 * acc
            }
            ClientData::Samples(shard) => {
                let mut acc = 0.0;
                for s in 0..shard.len() {
                    acc += self.sample_loss(shard.row(s), shard.label(s), x.as_slice());
                }
                acc / shard.len() as f64
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "loss" })
        }
    }

    /// Smooth part `f(x)`.
    pub fn smooth_value(&self, x: &ParamVector) -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..self.clients.len() {
            acc += self.client_loss(i, x)?;
        }
        Ok(acc / self.clients.len() as f64)
    }

    /// `F(x) = f(x) + h(x)`.
    pub fn objective_value(&self, reg: &Regularizer, x: &ParamVector) -> Result<f64> {
        Ok(self.smooth_value(x)? + reg.evaluate(x))
    }

    /// Largest per-client variance of a single-sample gradient at `x`:
    /// `max_i (1/n_i) sum_s ||grad f(x; s) - grad f_i(x)||^2`. Zero for the
    /// deterministic quadratic testbed.
    pub fn gradient_variance(&self, x: &ParamVector) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, c) in self.clients.iter().enumerate() {
            let ClientData::Samples(shard) = c else {
                continue;
            };
            let mean = self.client_gradient(i, x)?;
            let mut acc = 0.0;
            let mut g = vec![0.0; self.dim];
            for s in 0..shard.len() {
                g.iter_mut().for_each(|v| *v = 0.0);
                self.add_sample_gradient(shard.row(s), shard.label(s), x.as_slice(), &mut g);
                for (a, b) in g.iter().zip(&mean) {
                    acc += (a - b) * (a - b);
                }
            }
            worst = worst.max(acc / shard.len() as f64);
        }
        Ok(worst)
    }

    /// Upper bound `L` on the gradient Lipschitz constant of every `f_i`.
    ///
    /// Sample losses use `c * lambda_max(A_i^T A_i / n_i)` with the curvature
    /// factor `c` = 1 (squared error), 1/4 (logistic) or `1/(6 sqrt 3)`
    /// (sigmoid); `lambda_max` comes from power iteration. Quadratics use the
    /// largest diagonal curvature.
    pub fn estimate_smoothness(&self) -> Smoothness {
        let factor = match self.loss {
            LossKind::SquaredError => 1.0,
            LossKind::Logistic => 0.25,
            LossKind::SigmoidNonconvex => SIGMOID_CURVATURE,
            LossKind::HeteroQuadratic => 1.0,
        };
        let mut value: f64 = 0.0;
        let mut converged = true;
        for c in &self.clients {
            match c {
                ClientData::Quadratic { curvature, .. } => {
                    value = value.max(curvature.inf_norm());
                }
                ClientData::Samples(shard) => {
                    let (lmax, ok) = gram_lambda_max(shard);
                    converged &= ok;
                    value = value.max(factor * lmax);
                }
            }
        }
        Smoothness { value, converged }
    }

    /// Write `client,label,x_1..x_p` rows. Quadratic problems have no samples.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["client".to_string(), "label".to_string()];
        header.extend((0..self.dim).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for (i, c) in self.clients.iter().enumerate() {
            let ClientData::Samples(shard) = c else {
                return Err(Error::invalid(
                    "hetero quadratic problems have no samples to dump",
                ));
            };
            for s in 0..shard.len() {
                let mut rec = vec![i.to_string(), format!("{:.17e}", shard.label(s))];
                rec.extend(shard.row(s).iter().map(|v| format!("{v:.17e}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv). Clients are numbered densely
    /// from zero; rows may appear in any order.
    pub fn read_csv<R: Read>(loss: LossKind, input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let dim = rdr
            .headers()?
            .len()
            .checked_sub(2)
            .filter(|d| *d > 0)
            .ok_or_else(|| Error::Csv("need client, label and at least one feature".into()))?;
        let mut rows: Vec<(Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::Csv(format!("line {:?}: {e}", rec.position().map(|p| p.line())))
                })
            };
            let client: usize = rec[0]
                .trim()
                .parse()
                .map_err(|e| Error::Csv(format!("bad client index: {e}")))?;
            if client >= rows.len() {
                rows.resize_with(client + 1, Default::default);
            }
            let feats = (2..rec.len())
                .map(|j| parse(&rec[j]))
                .collect::<Result<Vec<_>>>()?;
            rows[client].0.push(feats);
            rows[client].1.push(parse(&rec[1])?);
        }
        let shards = rows
            .into_iter()
            .map(|(f, l)| Shard::new(dim, f, l))
            .collect::<Result<Vec<_>>>()?;
        Self::from_shards(loss, dim, shards)
    }
}

/// Power iteration for the top eigenvalue of `A^T A / n`.
fn gram_lambda_max(shard: &Shard) -> (f64, bool) {
    let dim = shard.dim;
    let n = shard.len() as f64;
    let mut rng = derive_stream(0, "smoothness/power-start").expect("static label");
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let mut w = vec![0.0; dim];
        for s in 0..shard.len() {
            let row = shard.row(s);
            let av = dot(row, &v);
            for (o, a) in w.iter_mut().zip(row) {
                *o += av * a;
            }
        }
        w.iter_mut().for_each(|a| *a /= n);
        let next = dot(&v, &w);
        let wn = dot(&w, &w).sqrt();
        if wn == 0.0 {
            return (0.0, true);
        }
        v = w.into_iter().map(|a| a / wn).collect();
        if (next - lambda).abs() <= POWER_TOLERANCE * next.abs() {
            return (next, true);
        }
        lambda = next;
    }
    (lambda, false)
}

/// Assign each sample to a client by per-class Dirichlet proportions.
///
/// For every class, client shares are drawn from `Dir(alpha * 1_N)` and the
/// class's samples (in shuffled order) are split by largest-remainder
/// rounding. The draw is repeated until every client holds at least one
/// sample, up to 100 attempts.
pub fn dirichlet_partition(
    classes: &[usize],
    clients: usize,
    alpha: f64,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    if clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "dirichlet concentration must be positive, got {alpha}"
        )));
    }
    if classes.len() < clients {
        return Err(Error::invalid("fewer samples than clients"));
    }
    let num_classes = classes.iter().max().map_or(0, |c| c + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, c) in classes.iter().enumerate() {
        by_class[*c].push(i);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    for _ in 0..PARTITION_ATTEMPTS {
        let mut owner = vec![0usize; classes.len()];
        let mut held = vec![0usize; clients];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let shares = dirichlet_draw(&gamma, clients, rng);
            let counts = largest_remainder(&shares, members.len());
            let mut shuffled = members.clone();
            shuffle(&mut shuffled, rng);
            let mut cursor = 0;
            for (client, count) in counts.iter().enumerate() {
                for &s in &shuffled[cursor..cursor + count] {
                    owner[s] = client;
                }
                cursor += count;
                held[client] += count;
            }
        }
        if held.iter().all(|h| *h > 0) {
            return Ok(owner);
        }
    }
    Err(Error::EmptyShard {
        attempts: PARTITION_ATTEMPTS,
    })
}

fn dirichlet_draw(gamma: &Gamma<f64>, n: usize, rng: &mut RngStream) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.into_iter().map(|d| d / total).collect()
    } else {
        // every gamma draw underflowed: the limit is a vertex of the simplex
        let mut v = vec![0.0; n];
        v[rng.random_range(0..n)] = 1.0;
        v
    }
}

/// Integer counts summing to `total`, closest to `shares * total`; leftover
/// units go to the largest fractional parts, lowest index first on ties.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|a, b| {
        let fa = exact[*a] - exact[*a].floor();
        let fb = exact[*b] - exact[*b].floor();
        fb.total_cmp(&fa).then(a.cmp(b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn shuffle(v: &mut [usize], rng: &mut RngStream) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

fn iid_partition(samples: usize, clients: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples).collect();
    shuffle(&mut order, rng);
    let mut owner = vec![0; samples];
    for (pos, s) in order.into_iter().enumerate() {
        owner[s] = pos * clients / samples;
    }
    owner
}

/// Build a synthetic federated problem.
///
/// Features are standard normal. Logistic and sigmoid labels are Bernoulli
/// draws from a planted sparse model; squared-error targets are the planted
/// response plus Gaussian noise. The quadratic testbed ignores `samples`.
pub fn generate_synthetic(spec: &SyntheticSpec, rng: &RngStream) -> Result<FederatedProblem> {
    let SyntheticSpec {
        loss,
        dim,
        samples,
        clients,
        partition,
        spread,
    } = *spec;
    if dim == 0 || clients == 0 {
        return Err(Error::invalid(
            "dimension and client count must be positive",
        ));
    }
    if loss == LossKind::HeteroQuadratic {
        return hetero_testbed(dim, clients, spread, &mut rng.child("quadratic"));
    }
    if samples < clients {
        return Err(Error::invalid(format!(
            "{samples} samples cannot cover {clients} clients"
        )));
    }
    let truth = planted_model(dim, &mut rng.child("truth"));
    let mut data_rng = rng.child("data");
    let mut rows = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let row: Vec<f64> = (0..dim)
            .map(|_| StandardNormal.sample(&mut data_rng))
            .collect();
        let response = dot(&row, truth.as_slice());
        let label = match loss {
            LossKind::SquaredError => {
                let noise: f64 = StandardNormal.sample(&mut data_rng);
                response + LABEL_NOISE * noise
            }
            _ => {
                if data_rng.random::<f64>() < sigmoid(response) {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        rows.push(row);
        labels.push(label);
    }
    let mut part_rng = rng.child("partition");
    let owner = match partition {
        PartitionSpec::Iid => iid_partition(samples, clients, &mut part_rng),
        PartitionSpec::Dirichlet { alpha } => {
            let classes: Vec<usize> = labels.iter().map(|l| usize::from(*l >= 0.0)).collect();
            dirichlet_partition(&classes, clients, alpha, &mut part_rng)?
        }
    };
    let mut split: Vec<(Vec<Vec<f64>>, Vec<f64>)> = vec![Default::default(); clients];
    for ((row, label), c) in rows.into_iter().zip(labels).zip(owner) {
        split[c].0.push(row);
        split[c].1.push(label);
    }
    let shards = split
        .into_iter()
        .map(|(r, l)| Shard::new(dim, r, l))
        .collect::<Result<Vec<_>>>()?;
    FederatedProblem::from_shards(loss, dim, shards)
}

/// Planted sparse ground truth: a quarter of the coordinates (at least one)
/// carry magnitudes in `[1, 2]` with random signs.
pub fn planted_model(dim: usize, rng: &mut RngStream) -> ParamVector {
    let support = (dim / 4).max(1);
    let mut idx: Vec<usize> = (0..dim).collect();
    shuffle(&mut idx, rng);
    let mut w = vec![0.0; dim];
    for &j in &idx[..support] {
        let mag = rng.random_range(1.0..=2.0);
        w[j] = if rng.random::<bool>() { mag } else { -mag };
    }
    ParamVector::new(w).expect("finite")
}

fn hetero_testbed(
    dim: usize,
    clients: usize,
    spread: HeteroSpread,
    rng: &mut RngStream,
) -> Result<FederatedProblem> {
    let HeteroSpread {
        center_range,
        curvature_min,
        curvature_max,
    } = spread;
    if !(curvature_min > 0.0 && curvature_max >= curvature_min && center_range >= 0.0) {
        return Err(Error::invalid("invalid hetero quadratic spread"));
    }
    let (lo, hi) = (curvature_min.ln(), curvature_max.ln());
    let mut curvatures = Vec::with_capacity(clients);
    let mut centers = Vec::with_capacity(clients);
    for _ in 0..clients {
        let h: Vec<f64> = (0..dim)
            .map(|_| {
                if hi > lo {
                    rng.random_range(lo..hi).exp()
                } else {
                    curvature_min
                }
            })
            .collect();
        let m: Vec<f64> = (0..dim)
            .map(|_| {
                if center_range > 0.0 {
                    rng.random_range(-center_range..center_range)
                } else {
                    0.0
                }
            })
            .collect();
        curvatures.push(ParamVector::new(h)?);
        centers.push(ParamVector::new(m)?);
    }
    FederatedProblem::hetero_quadratic(curvatures, centers)
}
