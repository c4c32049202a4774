//! A small fully connected ReLU network with hand-written backpropagation,
//! and the two training experiments that track `S_rel` on it.
//!
//! Parameters live in one flat buffer, layer by layer: the weight matrix
//! (`fan_out x fan_in`, row-major) followed by the bias.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{derive_seed, gaussian_blobs, l1_label, l1_norm_regression, seeded_rng, standard_normal, Rng};
use crate::elasticity::{kl_divergence, mean_defined, srel_generic, SRelSample, SmoothSRel, SRelSeries, DENOM_REL_TOL};
use crate::error::{param_err, Error, Result};
use crate::linalg::Vector;
use crate::stats::spearman_defined;

/// `[time][pair]` values of one run.
type SRelGrid = Vec<Vec<Option<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Identity,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// `½(f − y)²` on a single output.
    Squared,
    /// `−log p_y` on softmax probabilities.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Real(f64),
    Class(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    widths: Vec<usize>,
    head: Head,
    layers: Vec<Layer>,
    pub params: Vec<f64>,
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl MlpNet {
    /// All-zero network with the given layer widths `(input, hidden..., output)`.
    pub fn zeros(widths: &[usize], head: Head) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return param_err(format!("need at least input and output widths, all positive (got {widths:?})"));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            layers.push(Layer { w: off, b: off + fan_in * fan_out, fan_in, fan_out });
            off += fan_in * fan_out + fan_out;
        }
        Ok(Self { widths: widths.to_vec(), head, layers, params: vec![0.0; off] })
    }

    /// Weights `N(0, 2/fan_in)`, zero biases.
    pub fn he_init(widths: &[usize], head: Head, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(widths, head)?;
        for l in net.layers.clone() {
            let sd = (2.0 / l.fan_in as f64).sqrt();
            for p in &mut net.params[l.w..l.b] {
                let z: f64 = StandardNormal.sample(rng);
                *p = z * sd;
            }
        }
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    fn check_input(&self, params: &[f64], x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!("input has dimension {}, network expects {}", x.len(), self.input_dim())));
        }
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!("{} parameters, network has {}", params.len(), self.num_params())));
        }
        Ok(())
    }

    /// Runs the affine/ReLU stack; `acts[0] = x`, `acts[l]` is the output of
    /// layer `l` (post-ReLU for hidden layers, raw for the last).
    fn forward_cached(&self, params: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let input = &acts[li];
            let w = &params[l.w..l.b];
            let b = &params[l.b..l.b + l.fan_out];
            let mut out: Vec<f64> = (0..l.fan_out)
                .map(|o| {
                    let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                    b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if li < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
    }

    /// Pre-head outputs (logits for the softmax head).
    pub fn logits_with(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(params, x)?;
        let mut acts = Vec::with_capacity(self.widths.len());
        self.forward_cached(params, x, &mut acts);
        Ok(acts.pop().expect("output layer"))
    }

    pub fn forward_with(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits_with(params, x)?;
        Ok(match self.head {
            Head::Identity => z,
            Head::Softmax => softmax(&z),
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_with(&self.params, x)
    }

    fn check_loss(&self, target: Target, loss: Loss) -> Result<()> {
        match (self.head, loss, target) {
            (Head::Identity, Loss::Squared, Target::Real(_)) if self.output_dim() == 1 => Ok(()),
            (Head::Softmax, Loss::CrossEntropy, Target::Class(c)) if c < self.output_dim() => Ok(()),
            _ => Err(Error::Contract(format!(
                "{loss:?} loss with target {target:?} does not fit a {:?} head with {} outputs",
                self.head,
                self.output_dim()
            ))),
        }
    }

    pub fn loss_with(&self, params: &[f64], x: &[f64], target: Target, loss: Loss) -> Result<f64> {
        self.check_loss(target, loss)?;
        let z = self.logits_with(params, x)?;
        Ok(match target {
            Target::Real(y) => 0.5 * (z[0] - y) * (z[0] - y),
            Target::Class(c) => log_sum_exp(&z) - z[c],
        })
    }

    /// Adds `scale · ∇ℓ` into `grad` and returns `ℓ`.
    pub fn accumulate_grad(
        &self,
        params: &[f64],
        x: &[f64],
        target: Target,
        loss: Loss,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_loss(target, loss)?;
        self.check_input(params, x)?;
        if grad.len() != params.len() {
            return Err(Error::Shape("gradient buffer has the wrong length".into()));
        }
        let mut acts = Vec::with_capacity(self.widths.len());
        self.forward_cached(params, x, &mut acts);
        let z = acts.last().expect("output layer");
        let (value, mut delta) = match target {
            Target::Real(y) => (0.5 * (z[0] - y) * (z[0] - y), vec![z[0] - y]),
            Target::Class(c) => {
                let mut p = softmax(z);
                let value = log_sum_exp(z) - z[c];
                p[c] -= 1.0;
                (value, p)
            }
        };
        for li in (0..self.layers.len()).rev() {
            let l = self.layers[li];
            let input = &acts[li];
            for o in 0..l.fan_out {
                let d = delta[o] * scale;
                if d == 0.0 {
                    continue;
                }
                grad[l.b + o] += d;
                let row = &mut grad[l.w + o * l.fan_in..l.w + (o + 1) * l.fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if li == 0 {
                break;
            }
            let w = &params[l.w..l.b];
            let mut prev = vec![0.0; l.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                for (p, wv) in prev.iter_mut().zip(row) {
                    *p += d * wv;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(value)
    }

    pub fn grad_with(&self, params: &[f64], x: &[f64], target: Target, loss: Loss) -> Result<Vec<f64>> {
        let mut g = vec![0.0; params.len()];
        self.accumulate_grad(params, x, target, loss, 1.0, &mut g)?;
        Ok(g)
    }

    pub fn grad(&self, x: &[f64], target: Target, loss: Loss) -> Result<Vec<f64>> {
        self.grad_with(&self.params, x, target, loss)
    }
}

pub fn mlp_forward(net: &MlpNet, x: &Vector) -> Result<Vector> {
    Ok(Vector::from_vec(net.forward(x.as_slice())?))
}

pub fn mlp_grad(net: &MlpNet, x: &Vector, target: Target, loss: Loss) -> Result<Vec<f64>> {
    net.grad(x.as_slice(), target, loss)
}

/// Largest per-coordinate disagreement between backpropagation and
/// central differences, measured as `|g − fd| / max(|g|, |fd|, floor)`.
pub fn gradient_check(net: &MlpNet, x: &[f64], target: Target, loss: Loss, h: f64, floor: f64) -> Result<f64> {
    let g = net.grad(x, target, loss)?;
    let mut params = net.params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        let up = net.loss_with(&params, x, target, loss)?;
        params[i] = orig - h;
        let down = net.loss_with(&params, x, target, loss)?;
        params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let denom = g[i].abs().max(fd.abs()).max(floor);
        worst = worst.max((g[i] - fd).abs() / denom);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Plain SGD or Adam (`β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`, bias-corrected).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        let n = if kind == OptimizerKind::Adam { num_params } else { 0 };
        Self { kind, lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] -= self.lr * mhat / (vhat.sqrt() + EPS);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    /// Learning rate; also the step of the fictitious `S_rel` update.
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    /// Steps (before the update of that step) at which `S_rel` is measured.
    pub srel_steps: Vec<usize>,
    /// Probe points per class for the smoothed classification `S_rel`.
    pub k: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return param_err(format!("eta must be positive, got {}", self.eta));
        }
        if self.batch_size == 0 {
            return param_err("batch_size must be >= 1");
        }
        if self.k == 0 {
            return param_err("k must be >= 1");
        }
        if self.seeds.is_empty() {
            return param_err("at least one seed is required");
        }
        if self.srel_steps.windows(2).any(|w| w[0] >= w[1]) {
            return param_err("srel_steps must be strictly increasing");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        (n / self.batch_size).max(1)
    }
}

/// One pass of minibatch training over a shuffled index order.
fn train_epoch_steps<F>(
    net: &mut MlpNet,
    opt: &mut Optimizer,
    order: &[usize],
    batch: usize,
    step0: usize,
    mut sample: impl FnMut(usize) -> (Vec<f64>, Target),
    loss: Loss,
    mut before_step: F,
) -> Result<usize>
where
    F: FnMut(usize, &MlpNet) -> Result<()>,
{
    let mut grad = vec![0.0; net.num_params()];
    let mut step = step0;
    for chunk in order.chunks_exact(batch) {
        before_step(step, net)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / chunk.len() as f64;
        for &i in chunk {
            let (x, t) = sample(i);
            net.accumulate_grad(&net.params, &x, t, loss, scale, &mut grad)?;
        }
        opt.step(&mut net.params, &grad);
        if net.params.iter().any(|p| !p.is_finite()) {
            let norm = net.params.iter().map(|p| p * p).sum::<f64>().sqrt();
            return Err(Error::Divergence { step: step + 1, norm });
        }
        step += 1;
    }
    Ok(step)
}

/// `x'` plus a fan of points `x_i = x' + d_i u_i` at evenly spaced distances
/// `d_i` along random unit directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGeometry {
    pub x_prime: Vector,
    pub points: Vec<Vector>,
    pub distances: Vec<f64>,
}

pub fn probe_fan(dims: usize, count: usize, min_dist: f64, max_dist: f64, seed: u64) -> Result<ProbeGeometry> {
    if count == 0 {
        return param_err("probe count must be >= 1");
    }
    if !(min_dist >= 0.0 && max_dist >= min_dist) {
        return param_err(format!("need 0 <= min_dist <= max_dist (got {min_dist}, {max_dist})"));
    }
    let mut rng = seeded_rng(seed);
    let x_prime = standard_normal(&mut rng, dims);
    let mut points = Vec::with_capacity(count);
    let mut distances = Vec::with_capacity(count);
    for i in 0..count {
        let d = if count == 1 { min_dist } else { min_dist + (max_dist - min_dist) * i as f64 / (count - 1) as f64 };
        let u = standard_normal(&mut rng, dims);
        let u = &u / u.norm();
        points.push(&x_prime + u * d);
        distances.push(d);
    }
    Ok(ProbeGeometry { x_prime, points, distances })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionExperiment {
    pub dims: usize,
    pub hidden: Vec<usize>,
    pub n_train: usize,
    pub train: TrainConfig,
    pub probe_count: usize,
    pub probe_min_dist: f64,
    pub probe_max_dist: f64,
    pub probe_seed: u64,
    /// Distances of the near and far points of the two tracked pairs.
    pub pair_distances: [f64; 2],
    pub series_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionOutcome {
    pub probes: ProbeGeometry,
    /// Snapshot steps x probes.
    pub profiles: SRelSeries,
    /// Time series of the near and far pairs.
    pub pairs: SRelSeries,
    pub final_loss: Vec<f64>,
}

fn srel_regression(net: &MlpNet, x: &Vector, x_prime: &Vector, eta: f64) -> Result<Option<f64>> {
    let y = l1_label(x);
    let w = Vector::from_column_slice(&net.params);
    let s = srel_generic(
        |w: &Vector, x: &Vector| net.logits_with(w.as_slice(), x.as_slice()).map_or(f64::NAN, |z| z[0]),
        |w: &Vector, x: &Vector, y: &f64| {
            Vector::from_vec(net.grad_with(w.as_slice(), x.as_slice(), Target::Real(*y), Loss::Squared).unwrap_or_default())
        },
        &w,
        x,
        x_prime,
        &y,
        eta,
    )?;
    Ok(s.value)
}

/// Trains a regression MLP on `y = ‖x‖₁` and measures `S_rel(x', x_i)` for
/// a fan of probes around a fixed `x'`, plus two tracked pairs over time.
pub fn train_regression_srel(exp: &RegressionExperiment) -> Result<RegressionOutcome> {
    exp.train.validate()?;
    if exp.series_every == 0 {
        return param_err("series_every must be >= 1");
    }
    if exp.n_train < exp.train.batch_size {
        return param_err("n_train must be at least one minibatch");
    }
    let probes = probe_fan(exp.dims, exp.probe_count, exp.probe_min_dist, exp.probe_max_dist, exp.probe_seed)?;
    let pair_fan = probe_fan(exp.dims, 2, exp.pair_distances[0], exp.pair_distances[1], derive_seed(exp.probe_seed, 1))?;
    let pair_points = [
        &probes.x_prime + (&pair_fan.points[0] - &pair_fan.x_prime),
        &probes.x_prime + (&pair_fan.points[1] - &pair_fan.x_prime),
    ];
    let spe = exp.train.steps_per_epoch(exp.n_train);
    let total = spe * exp.train.epochs;
    let series_steps: Vec<usize> = (0..=total).step_by(exp.series_every).collect();
    let mut widths = vec![exp.dims];
    widths.extend(&exp.hidden);
    widths.push(1);

    struct RunOut {
        seed: u64,
        profiles: Vec<Vec<Option<f64>>>,
        pairs: Vec<Vec<Option<f64>>>,
        final_loss: f64,
    }

    let run = |seed: u64| -> Result<RunOut> {
        let data = l1_norm_regression(exp.dims, exp.n_train, derive_seed(seed, 10))?;
        let mut net = MlpNet::he_init(&widths, Head::Identity, &mut seeded_rng(derive_seed(seed, 11)))?;
        let mut shuffle = seeded_rng(derive_seed(seed, 12));
        let mut opt = Optimizer::new(exp.train.optimizer, exp.train.eta, net.num_params());
        let mut profiles = Vec::new();
        let mut pairs = Vec::new();
        let eta = exp.train.eta;
        let mut measure = |step: usize, net: &MlpNet| -> Result<()> {
            if exp.train.srel_steps.binary_search(&step).is_ok() {
                let row = probes.points.iter().map(|x| srel_regression(net, x, &probes.x_prime, eta)).collect::<Result<_>>()?;
                profiles.push(row);
            }
            if step.is_multiple_of(exp.series_every) {
                let row = pair_points.iter().map(|x| srel_regression(net, x, &probes.x_prime, eta)).collect::<Result<_>>()?;
                pairs.push(row);
            }
            Ok(())
        };
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut step = 0;
        for _ in 0..exp.train.epochs {
            order.shuffle(&mut shuffle);
            step = train_epoch_steps(
                &mut net,
                &mut opt,
                &order[..spe * exp.train.batch_size],
                exp.train.batch_size,
                step,
                |i| (data.xs[i].as_slice().to_vec(), Target::Real(data.ys[i])),
                Loss::Squared,
                &mut measure,
            )?;
        }
        measure(step, &net)?;
        let final_loss = data
            .iter()
            .map(|(x, y)| net.loss_with(&net.params, x.as_slice(), Target::Real(y), Loss::Squared))
            .sum::<Result<f64>>()?
            / data.len() as f64;
        Ok(RunOut { seed, profiles, pairs, final_loss })
    };

    let mut outs: Vec<RunOut> = exp.train.seeds.par_iter().map(|&s| run(s)).collect::<Result<_>>()?;
    outs.sort_by_key(|o| o.seed);
    let snap_times: Vec<f64> = exp.train.srel_steps.iter().filter(|&&s| s <= total).map(|&s| s as f64).collect();
    let probe_ids: Vec<String> = (0..probes.points.len()).map(|i| format!("probe{i:02}")).collect();
    let profiles = SRelSeries::from_runs(
        snap_times,
        probe_ids,
        outs.iter().map(|o| (o.seed, o.profiles.clone())).collect(),
    )?;
    let pairs = SRelSeries::from_runs(
        series_steps.iter().map(|&s| s as f64).collect(),
        vec!["near".into(), "far".into()],
        outs.iter().map(|o| (o.seed, o.pairs.clone())).collect(),
    )?;
    Ok(RegressionOutcome { probes, profiles, pairs, final_loss: outs.iter().map(|o| o.final_loss).collect() })
}

/// Means on a regular polygon of the given radius in the first two coordinates.
pub fn polygon_means(dims: usize, classes: usize, radius: f64) -> Result<Vec<Vector>> {
    if dims < 2 && classes > 2 {
        return param_err("polygon means need at least two dimensions");
    }
    Ok((0..classes)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            let mut m = Vector::zeros(dims);
            m[0] = radius * angle.cos();
            if dims > 1 {
                m[1] = radius * angle.sin();
            }
            m
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyExperiment {
    pub dims: usize,
    pub means: Vec<Vector>,
    pub variance: f64,
    pub n_per_class: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOutcome {
    pub num_classes: usize,
    pub steps_per_epoch: usize,
    /// Pair `c1 * C + c2` holds probes from `c1` against sampled points from `c2`.
    pub series: SRelSeries,
    pub accuracy: Vec<f64>,
}

impl ClassifyOutcome {
    pub fn pair_index(&self, c1: usize, c2: usize) -> usize {
        c1 * self.num_classes + c2
    }
}

/// Smoothed KL `S_rel` for every ordered class pair; entry `[c1][c2]` uses
/// probes from `c1` and sampled points from `c2`.
///
/// Each fictitious step is computed once per sampled point and reused for
/// every probe, which is equivalent to calling the pairwise definition
/// `k²` times per class pair.
pub fn smoothed_srel_matrix(net: &MlpNet, probes: &[Vec<Vector>], eta: f64) -> Result<Vec<Vec<SmoothSRel>>> {
    if net.head() != Head::Softmax {
        return Err(Error::Contract("smoothed KL S_rel needs a softmax head".into()));
    }
    let c = probes.len();
    let k = probes.first().map_or(0, Vec::len);
    if k == 0 || probes.iter().any(|p| p.len() != k) {
        return param_err("every class needs the same number k >= 1 of probes");
    }
    let flat: Vec<(&Vector, usize)> = probes.iter().enumerate().flat_map(|(ci, ps)| ps.iter().map(move |x| (x, ci))).collect();
    let base: Vec<Vec<f64>> = flat.iter().map(|(x, _)| net.forward(x.as_slice())).collect::<Result<_>>()?;
    // ratio[sampled j][probe i]
    let mut ratio = vec![vec![None; flat.len()]; flat.len()];
    let mut w_plus = net.params.clone();
    for (j, (x, cj)) in flat.iter().enumerate() {
        let g = net.grad(x.as_slice(), Target::Class(*cj), Loss::CrossEntropy)?;
        for ((wp, w), g) in w_plus.iter_mut().zip(&net.params).zip(&g) {
            *wp = w - eta * g;
        }
        let moved: Vec<Vec<f64>> = flat.iter().map(|(xi, _)| net.forward_with(&w_plus, xi.as_slice())).collect::<Result<_>>()?;
        let Some(den) = kl_divergence(&moved[j], &base[j]) else { continue };
        for i in 0..flat.len() {
            ratio[j][i] = kl_divergence(&moved[i], &base[i])
                .and_then(|num| SRelSample::from_changes(num.max(0.0), den, DENOM_REL_TOL).value);
        }
    }
    let mut out = vec![vec![mean_defined(std::iter::empty()); c]; c];
    for (c1, row) in out.iter_mut().enumerate() {
        for (c2, cell) in row.iter_mut().enumerate() {
            let vals = (c2 * k..(c2 + 1) * k).flat_map(|j| (c1 * k..(c1 + 1) * k).map(move |i| (j, i)));
            *cell = mean_defined(vals.map(|(j, i)| ratio[j][i]));
        }
    }
    Ok(out)
}

/// Trains a softmax MLP on Gaussian classes and records the smoothed KL
/// `S_rel` for every ordered class pair at the scheduled steps. The first
/// `k` training points of each class serve as its probe set.
pub fn train_classify_srel(exp: &ClassifyExperiment) -> Result<ClassifyOutcome> {
    exp.train.validate()?;
    let c = exp.means.len();
    if c == 0 {
        return param_err("need at least one class");
    }
    if exp.n_per_class < exp.train.k {
        return param_err(format!("each class has {} points, fewer than k = {}", exp.n_per_class, exp.train.k));
    }
    let n = c * exp.n_per_class;
    if n < exp.train.batch_size {
        return param_err("dataset is smaller than one minibatch");
    }
    let spe = exp.train.steps_per_epoch(n);
    let total = spe * exp.train.epochs;
    let mut widths = vec![exp.dims];
    widths.extend(&exp.hidden);
    widths.push(c);
    let variances = vec![exp.variance; c];

    let run = |seed: u64| -> Result<(u64, SRelGrid, f64)> {
        let data = gaussian_blobs(exp.dims, &exp.means, &variances, exp.n_per_class, derive_seed(seed, 20))?;
        let probes: Vec<Vec<Vector>> = (0..c).map(|ci| data.class_points(ci).into_iter().take(exp.train.k).cloned().collect()).collect();
        let mut net = MlpNet::he_init(&widths, Head::Softmax, &mut seeded_rng(derive_seed(seed, 21)))?;
        let mut shuffle = seeded_rng(derive_seed(seed, 22));
        let mut opt = Optimizer::new(exp.train.optimizer, exp.train.eta, net.num_params());
        let mut rows = Vec::new();
        let mut measure = |step: usize, net: &MlpNet| -> Result<()> {
            if exp.train.srel_steps.binary_search(&step).is_ok() {
                let m = smoothed_srel_matrix(net, &probes, exp.train.eta)?;
                rows.push(m.iter().flatten().map(|s| s.value).collect());
            }
            Ok(())
        };
        let mut order: Vec<usize> = (0..n).collect();
        let mut step = 0;
        for _ in 0..exp.train.epochs {
            order.shuffle(&mut shuffle);
            step = train_epoch_steps(
                &mut net,
                &mut opt,
                &order[..spe * exp.train.batch_size],
                exp.train.batch_size,
                step,
                |i| (data.xs[i].as_slice().to_vec(), Target::Class(data.labels[i])),
                Loss::CrossEntropy,
                &mut measure,
            )?;
        }
        measure(step, &net)?;
        let correct = data
            .xs
            .iter()
            .zip(&data.labels)
            .filter(|(x, &l)| {
                net.logits_with(&net.params, x.as_slice())
                    .map(|z| z.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|m| m.0) == Some(l))
                    .unwrap_or(false)
            })
            .count();
        Ok((seed, rows, correct as f64 / n as f64))
    };

    let mut outs: Vec<_> = exp.train.seeds.par_iter().map(|&s| run(s)).collect::<Result<_>>()?;
    outs.sort_by_key(|o| o.0);
    let times = exp.train.srel_steps.iter().filter(|&&s| s <= total).map(|&s| s as f64).collect();
    let pairs = (0..c).flat_map(|c1| (0..c).map(move |c2| format!("{c1}→{c2}"))).collect();
    let accuracy = outs.iter().map(|o| o.2).collect();
    let series = SRelSeries::from_runs(times, pairs, outs.into_iter().map(|(s, r, _)| (s, r)).collect())?;
    Ok(ClassifyOutcome { num_classes: c, steps_per_epoch: spe, series, accuracy })
}

/// Intra- versus inter-class comparison for one inter-class series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTrend {
    /// Probe class.
    pub c1: usize,
    /// Sampled class.
    pub c2: usize,
    /// Fraction of records after the first epoch where `S(c2→c2) > S(c1→c2)`.
    pub intra_above: f64,
    /// Spearman correlation of `S(c1→c2)` with time over the whole run.
    pub spearman: Option<f64>,
}

/// Trend statistics on the seed-mean series of a classification run.
pub fn classification_trends(out: &ClassifyOutcome) -> Vec<PairTrend> {
    trends_with(out, |pair| out.series.mean_of(pair))
}

/// Trend statistics on a single seed's series; `run` indexes the runs in
/// seed order.
pub fn classification_trends_run(out: &ClassifyOutcome, run: usize) -> Vec<PairTrend> {
    trends_with(out, |pair| out.series.values[run].iter().map(|row| row[pair]).collect())
}

fn trends_with(out: &ClassifyOutcome, series: impl Fn(usize) -> Vec<Option<f64>>) -> Vec<PairTrend> {
    let s = &out.series;
    let after: Vec<usize> = (0..s.times.len()).filter(|&i| s.times[i] >= out.steps_per_epoch as f64).collect();
    let mut trends = Vec::new();
    for c2 in 0..out.num_classes {
        let intra = series(out.pair_index(c2, c2));
        for c1 in (0..out.num_classes).filter(|&c1| c1 != c2) {
            let inter = series(out.pair_index(c1, c2));
            let above = after
                .iter()
                .filter(|&&i| matches!((intra[i], inter[i]), (Some(a), Some(b)) if a > b))
                .count();
            trends.push(PairTrend {
                c1,
                c2,
                intra_above: if after.is_empty() { 0.0 } else { above as f64 / after.len() as f64 },
                spearman: spearman_defined(&s.times, &inter),
            });
        }
    }
    trends
}
