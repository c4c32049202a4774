//! Seeded synthetic datasets and Monte-Carlo moment estimates.
//!
//! All randomness flows through [`Rng`] (ChaCha8), seeded from a `u64`, and
//! normal variates come from `rand_distr::StandardNormal`. Identical seeds
//! give bit-identical datasets on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{param_err, Error, Result};
use crate::linalg::{Matrix, Vector};

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream id for `(seed, stream)` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal(rng: &mut Rng, dim: usize) -> Vector {
    Vector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// Regression samples `(x, y)` with scalar labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReal {
    pub xs: Vec<Vector>,
    pub ys: Vec<f64>,
    pub seed: u64,
}

impl DatasetReal {
    pub fn new(xs: Vec<Vector>, ys: Vec<f64>, seed: u64) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Shape(format!("{} inputs but {} labels", xs.len(), ys.len())));
        }
        check_common_dim(&xs)?;
        if ys.iter().any(|y| !y.is_finite()) {
            return param_err("labels must be finite");
        }
        Ok(Self { xs, ys, seed })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, |x| x.len())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vector, f64)> {
        self.xs.iter().zip(self.ys.iter().copied())
    }
}

/// Classification samples with labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetClass {
    pub xs: Vec<Vector>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl DatasetClass {
    pub fn new(xs: Vec<Vector>, labels: Vec<usize>, num_classes: usize, seed: u64) -> Result<Self> {
        if xs.len() != labels.len() {
            return Err(Error::Shape(format!("{} inputs but {} labels", xs.len(), labels.len())));
        }
        check_common_dim(&xs)?;
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return param_err(format!("class index {bad} out of range for {num_classes} classes"));
        }
        Ok(Self { xs, labels, num_classes, seed })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, |x| x.len())
    }

    /// Points of one class, in dataset order.
    pub fn class_points(&self, class: usize) -> Vec<&Vector> {
        self.xs
            .iter()
            .zip(&self.labels)
            .filter(|(_, &c)| c == class)
            .map(|(x, _)| x)
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }
}

fn check_common_dim(xs: &[Vector]) -> Result<()> {
    if let Some(first) = xs.first() {
        let d = first.len();
        if let Some(bad) = xs.iter().find(|x| x.len() != d) {
            return Err(Error::Shape(format!(
                "inputs have mixed dimensions {d} and {}",
                bad.len()
            )));
        }
    }
    if xs.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return param_err("inputs must be finite");
    }
    Ok(())
}

/// Per-class feature vectors `h_{k,i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub features: Vec<Vec<Vector>>,
}

impl FeatureBank {
    pub fn new(features: Vec<Vec<Vector>>) -> Result<Self> {
        let all: Vec<Vector> = features.iter().flatten().cloned().collect();
        check_common_dim(&all)?;
        Ok(Self { features })
    }

    pub fn num_classes(&self) -> usize {
        self.features.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.features.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.features.iter().map(Vec::len).sum()
    }

    pub fn dim(&self) -> usize {
        self.features.iter().flatten().next().map_or(0, |h| h.len())
    }

    pub fn get(&self, class: usize, index: usize) -> Result<&Vector> {
        self.features
            .get(class)
            .and_then(|c| c.get(index))
            .ok_or_else(|| Error::Parameter(format!("no feature vector h[{class}][{index}]")))
    }
}

/// The additive input-only term `α(x)` of the quadratic-feature model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaSpec {
    #[default]
    Zero,
    L1Norm,
}

impl AlphaSpec {
    pub fn eval(self, x: &Vector) -> f64 {
        match self {
            AlphaSpec::Zero => 0.0,
            AlphaSpec::L1Norm => x.iter().map(|v| v.abs()).sum(),
        }
    }
}

/// Diagonal feature families `β_{p,p}(x)`; only coordinate features are built in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaSpec {
    #[default]
    Coordinate,
}

impl BetaSpec {
    pub fn eval(self, x: &Vector) -> Vector {
        match self {
            BetaSpec::Coordinate => x.clone(),
        }
    }
}

pub fn l1_label(x: &Vector) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

pub fn relu_label(w_star: &Vector, x: &Vector) -> f64 {
    w_star.dot(x).max(0.0)
}

/// `α(x) + Σ_p x_p w*_p²`.
pub fn quad_label(w_star: &Vector, alpha: AlphaSpec, x: &Vector) -> f64 {
    alpha.eval(x) + x.iter().zip(w_star.iter()).map(|(xp, w)| xp * w * w).sum::<f64>()
}

pub fn gaussian_blobs(
    dims: usize,
    means: &[Vector],
    variances: &[f64],
    n_per_class: usize,
    seed: u64,
) -> Result<DatasetClass> {
    if means.len() != variances.len() {
        return Err(Error::Shape(format!(
            "{} class means but {} variances",
            means.len(),
            variances.len()
        )));
    }
    if means.is_empty() || n_per_class == 0 {
        return param_err("need at least one class and one point per class");
    }
    if let Some(m) = means.iter().find(|m| m.len() != dims) {
        return Err(Error::Shape(format!("class mean has dimension {}, expected {dims}", m.len())));
    }
    if let Some(v) = variances.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return param_err(format!("variance must be positive, got {v}"));
    }
    let mut rng = seeded_rng(seed);
    let mut xs = Vec::with_capacity(means.len() * n_per_class);
    let mut labels = Vec::with_capacity(xs.capacity());
    for (class, (mean, var)) in means.iter().zip(variances).enumerate() {
        let sd = var.sqrt();
        for _ in 0..n_per_class {
            xs.push(mean + standard_normal(&mut rng, dims) * sd);
            labels.push(class);
        }
    }
    DatasetClass::new(xs, labels, means.len(), seed)
}

/// `x ~ N(0, I)`, `y = ‖x‖₁`.
pub fn l1_norm_regression(dims: usize, n: usize, seed: u64) -> Result<DatasetReal> {
    if dims == 0 {
        return param_err("dims must be >= 1");
    }
    let mut rng = seeded_rng(seed);
    let xs: Vec<Vector> = (0..n).map(|_| standard_normal(&mut rng, dims)).collect();
    let ys = xs.iter().map(l1_label).collect();
    DatasetReal::new(xs, ys, seed)
}

/// `x ~ N(0, I)`, `y = max(0, ⟨w*, x⟩)`.
pub fn relu_realizable(w_star: &Vector, n: usize, seed: u64) -> Result<DatasetReal> {
    let mut rng = seeded_rng(seed);
    let xs: Vec<Vector> = (0..n).map(|_| standard_normal(&mut rng, w_star.len())).collect();
    let ys = xs.iter().map(|x| relu_label(w_star, x)).collect();
    DatasetReal::new(xs, ys, seed)
}

/// `x ~ N(0, I)`, `y = α(x) + ⟨x, w*²⟩`.
pub fn quad_feature_labels(
    w_star: &Vector,
    alpha: AlphaSpec,
    n: usize,
    seed: u64,
) -> Result<DatasetReal> {
    let mut rng = seeded_rng(seed);
    let xs: Vec<Vector> = (0..n).map(|_| standard_normal(&mut rng, w_star.len())).collect();
    let ys = xs.iter().map(|x| quad_label(w_star, alpha, x)).collect();
    DatasetReal::new(xs, ys, seed)
}

/// Hidden-layer features `h = ReLU(W_r x)` with `W_r[i][j] ~ N(0, 1/input_dim)`.
pub fn random_relu_features(
    input_dim: usize,
    feature_dim: usize,
    dataset: &DatasetClass,
    seed: u64,
) -> Result<FeatureBank> {
    if dataset.is_empty() {
        return param_err("dataset is empty");
    }
    if dataset.dim() != input_dim {
        return Err(Error::Shape(format!(
            "dataset dimension {} does not match input_dim {input_dim}",
            dataset.dim()
        )));
    }
    let mut rng = seeded_rng(seed);
    let scale = 1.0 / (input_dim as f64).sqrt();
    let w_r = Matrix::from_fn(feature_dim, input_dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    });
    relu_features_with(&w_r, dataset)
}

/// Same as [`random_relu_features`] with caller-supplied weights.
pub fn relu_features_with(w_r: &Matrix, dataset: &DatasetClass) -> Result<FeatureBank> {
    if w_r.ncols() != dataset.dim() {
        return Err(Error::Shape(format!(
            "feature weights have {} columns, inputs have dimension {}",
            w_r.ncols(),
            dataset.dim()
        )));
    }
    let mut features = vec![Vec::new(); dataset.num_classes];
    for (x, &c) in dataset.xs.iter().zip(&dataset.labels) {
        features[c].push((w_r * x).map(|v| v.max(0.0)));
    }
    FeatureBank::new(features)
}

/// Sample estimates of `a_q = E[(y − α(x)) β_q(x)]` and `b_{pq} = E[β_p(x) β_q(x)]`.
///
/// `b` is returned in full so the diagonal assumption can be inspected.
pub fn estimate_moments(
    dataset: &DatasetReal,
    beta: BetaSpec,
    alpha: AlphaSpec,
) -> Result<(Vector, Matrix)> {
    if dataset.is_empty() {
        return param_err("dataset is empty");
    }
    let d = dataset.dim();
    let mut a = Vector::zeros(d);
    let mut b = Matrix::zeros(d, d);
    for (x, y) in dataset.iter() {
        let feat = beta.eval(x);
        a.axpy(y - alpha.eval(x), &feat, 1.0);
        b.ger(1.0, &feat, &feat, 1.0);
    }
    let n = dataset.len() as f64;
    Ok((a / n, b / n))
}
