//! Stochastic and full-batch gradient loops for the solvable models, with
//! `S_rel` tracked along the way.

use rayon::prelude::*;

use crate::data::{derive_seed, quad_label, relu_label, seeded_rng, standard_normal, AlphaSpec, Rng};
use crate::elasticity::{relu_fictitious_update, srel_generic, srel_last_layer_closed_form, SRelSample, SRelSeries, DENOM_REL_TOL};
use crate::error::{param_err, Error, Result};
use crate::flows::LinearFlow;
use crate::linalg::{Matrix, Vector};

/// Weight norm beyond which a run is abandoned.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Consecutive loss increases (between records) that flag full-batch GD as unstable.
pub const UNSTABLE_RECORDS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub eta: f64,
    pub steps: usize,
    pub seeds: Vec<u64>,
    /// `(x, x')`: the fictitious step is taken at `x`, the probe is `x'`.
    pub track_pairs: Vec<(Vector, Vector)>,
    pub record_every: usize,
    /// Distance to the teacher counted as converged.
    pub target_tol: f64,
    /// Size of a held-out sample for population-loss estimates, if wanted.
    pub holdout: Option<usize>,
}

impl SgdConfig {
    pub fn new(eta: f64, steps: usize, seeds: Vec<u64>, track_pairs: Vec<(Vector, Vector)>, record_every: usize) -> Self {
        Self { eta, steps, seeds, track_pairs, record_every, target_tol: 1e-6, holdout: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return param_err(format!("eta must be positive, got {}", self.eta));
        }
        if self.seeds.is_empty() {
            return param_err("at least one seed is required");
        }
        if self.record_every == 0 {
            return param_err("record_every must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { step: usize, norm: f64 },
    Unstable { step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub steps: Vec<usize>,
    /// `srel[record][pair]`.
    pub srel: Vec<Vec<Option<f64>>>,
    pub emp_loss: Vec<f64>,
    pub pop_loss: Vec<Option<f64>>,
    /// Distance of the weights to the known optimum at each record.
    pub weight_error: Vec<f64>,
    /// First step at which the distance to the optimum fell below the tolerance.
    pub first_within_tol: Option<usize>,
    pub final_weights: Vec<f64>,
    pub status: RunStatus,
}

impl RunRecord {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            steps: Vec::new(),
            srel: Vec::new(),
            emp_loss: Vec::new(),
            pop_loss: Vec::new(),
            weight_error: Vec::new(),
            first_within_tol: None,
            final_weights: Vec::new(),
            status: RunStatus::Completed,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    /// Values of one tracked pair over the recorded steps.
    pub fn pair_series(&self, pair: usize) -> Vec<Option<f64>> {
        self.srel.iter().map(|row| row[pair]).collect()
    }
}

/// How the initial weights of a run are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Fixed(Vector),
    /// `N(0, scale² I)` drawn from the run's own generator.
    Gaussian { scale: f64 },
}

impl InitSpec {
    fn draw(&self, dim: usize, rng: &mut Rng) -> Result<Vector> {
        match self {
            InitSpec::Fixed(w) if w.len() == dim => Ok(w.clone()),
            InitSpec::Fixed(w) => Err(Error::Shape(format!("initial weights have length {}, expected {dim}", w.len()))),
            InitSpec::Gaussian { scale } => Ok(standard_normal(rng, dim) * *scale),
        }
    }
}

/// Quadratic-feature student `f(w, x) = α(x) + Σ_p x_p w_p²` fitting the
/// teacher `w*` on fresh standard-normal inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSgdSpec {
    pub w_star: Vector,
    pub w0: Vector,
    pub alpha: AlphaSpec,
}

fn quad_predict(alpha: AlphaSpec, w: &Vector, x: &Vector) -> f64 {
    alpha.eval(x) + x.iter().zip(w.iter()).map(|(x, w)| x * w * w).sum::<f64>()
}

/// Gradient of `½(y − f)²`: `−2(y − f) x ⊙ w`.
fn quad_grad(alpha: AlphaSpec, w: &Vector, x: &Vector, y: f64) -> Vector {
    let resid = y - quad_predict(alpha, w, x);
    x.component_mul(w) * (-2.0 * resid)
}

fn check_pairs(pairs: &[(Vector, Vector)], dim: usize) -> Result<()> {
    if pairs.iter().any(|(x, xp)| x.len() != dim || xp.len() != dim) {
        return Err(Error::Shape(format!("tracked points must have dimension {dim}")));
    }
    Ok(())
}

fn diverged(w: &Vector) -> bool {
    !w.iter().all(|v| v.is_finite()) || w.norm() > DIVERGENCE_NORM
}

/// Plain SGD `w ← w + 2η (Σ_p x_p (w*_p² − w_p²)) x ⊙ w` with `x ~ N(0, I)`
/// drawn afresh every step.
pub fn sgd_quad(spec: &QuadSgdSpec, cfg: &SgdConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let dim = spec.w_star.len();
    if spec.w0.len() != dim {
        return Err(Error::Shape("w0 and w* lengths differ".into()));
    }
    check_pairs(&cfg.track_pairs, dim)?;
    Ok(cfg.seeds.par_iter().map(|&seed| quad_run(spec, cfg, seed)).collect())
}

fn quad_run(spec: &QuadSgdSpec, cfg: &SgdConfig, seed: u64) -> RunRecord {
    let alpha = spec.alpha;
    let mut rng = seeded_rng(seed);
    let mut rec = RunRecord::new(seed);
    let mut w = spec.w0.clone();
    let target_sq = spec.w_star.map(|v| v * v);
    for step in 0..=cfg.steps {
        let x = standard_normal(&mut rng, spec.w_star.len());
        let y = quad_label(&spec.w_star, alpha, &x);
        let err = (&w - &spec.w_star).norm();
        if rec.first_within_tol.is_none() && err < cfg.target_tol {
            rec.first_within_tol = Some(step);
        }
        if step % cfg.record_every == 0 {
            let resid = y - quad_predict(alpha, &w, &x);
            rec.steps.push(step);
            rec.emp_loss.push(0.5 * resid * resid);
            // E[(Σ_p x_p d_p)²] = ‖d‖² for standard-normal inputs.
            rec.pop_loss.push(Some(0.5 * (&target_sq - w.map(|v| v * v)).norm_squared()));
            rec.weight_error.push(err);
            let row = cfg
                .track_pairs
                .iter()
                .map(|(xs, xp)| {
                    let ys = quad_label(&spec.w_star, alpha, xs);
                    srel_generic(
                        |w, x| quad_predict(alpha, w, x),
                        |w, x, y: &f64| quad_grad(alpha, w, x, *y),
                        &w,
                        xs,
                        xp,
                        &ys,
                        cfg.eta,
                    )
                    .ok().and_then(|s| s.value)
                })
                .collect();
            rec.srel.push(row);
        }
        if step == cfg.steps {
            break;
        }
        w -= quad_grad(alpha, &w, &x, y) * cfg.eta;
        if diverged(&w) {
            rec.status = RunStatus::Diverged { step: step + 1, norm: w.norm() };
            break;
        }
    }
    rec.final_weights = w.as_slice().to_vec();
    rec
}

/// Teacher-student ReLU gate trained with the proxy gradient
/// `g = −1{y>0}(y − ⟨w,x⟩) x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluSgdSpec {
    pub w_star: Vector,
    pub init: InitSpec,
}

fn relu_srel(w: &Vector, w_star: &Vector, eta: f64, x: &Vector, x_prime: &Vector) -> SRelSample {
    let w_plus = relu_fictitious_update(w, w_star, 1.0, eta, x);
    let f = |w: &Vector, x: &Vector| w.dot(x).max(0.0);
    let fx = f(w, x);
    let num = (f(&w_plus, x_prime) - f(w, x_prime)).abs();
    let den = (f(&w_plus, x) - fx).abs();
    SRelSample::from_changes(num, den, DENOM_REL_TOL * (1.0 + fx.abs()))
}

pub fn sgd_relu(spec: &ReluSgdSpec, cfg: &SgdConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let dim = spec.w_star.len();
    check_pairs(&cfg.track_pairs, dim)?;
    if let InitSpec::Fixed(w) = &spec.init {
        if w.len() != dim {
            return Err(Error::Shape("w0 and w* lengths differ".into()));
        }
    }
    cfg.seeds.par_iter().map(|&seed| relu_run(spec, cfg, seed)).collect()
}

fn relu_run(spec: &ReluSgdSpec, cfg: &SgdConfig, seed: u64) -> Result<RunRecord> {
    let dim = spec.w_star.len();
    let mut rng = seeded_rng(seed);
    let mut w = spec.init.draw(dim, &mut rng)?;
    let holdout: Vec<(Vector, f64)> = match cfg.holdout {
        Some(n) => {
            let mut hrng = seeded_rng(derive_seed(seed, 1));
            (0..n)
                .map(|_| {
                    let x = standard_normal(&mut hrng, dim);
                    let y = relu_label(&spec.w_star, &x);
                    (x, y)
                })
                .collect()
        }
        None => Vec::new(),
    };
    let sample_loss = |w: &Vector, x: &Vector, y: f64| {
        let r = y - w.dot(x).max(0.0);
        0.5 * r * r
    };
    let mut rec = RunRecord::new(seed);
    for step in 0..=cfg.steps {
        let x = standard_normal(&mut rng, dim);
        let y = relu_label(&spec.w_star, &x);
        let err = (&w - &spec.w_star).norm();
        if rec.first_within_tol.is_none() && err < cfg.target_tol {
            rec.first_within_tol = Some(step);
        }
        if step % cfg.record_every == 0 {
            rec.steps.push(step);
            rec.emp_loss.push(sample_loss(&w, &x, y));
            rec.pop_loss.push((!holdout.is_empty()).then(|| {
                holdout.iter().map(|(x, y)| sample_loss(&w, x, *y)).sum::<f64>() / holdout.len() as f64
            }));
            rec.weight_error.push(err);
            let row = cfg.track_pairs.iter().map(|(xs, xp)| relu_srel(&w, &spec.w_star, cfg.eta, xs, xp).value).collect();
            rec.srel.push(row);
        }
        if step == cfg.steps {
            break;
        }
        if y > 0.0 {
            w += &x * (cfg.eta * (y - w.dot(&x)));
        }
        if diverged(&w) {
            rec.status = RunStatus::Diverged { step: step + 1, norm: w.norm() };
            break;
        }
    }
    rec.final_weights = w.as_slice().to_vec();
    Ok(rec)
}

/// Feature-vector pair `(h_{k,i}, h_{c,j})` tracked by [`gd_last_layer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeaturePair {
    pub class_k: usize,
    pub index_i: usize,
    pub class_c: usize,
    pub index_j: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdConfig {
    pub steps: usize,
    pub record_every: usize,
    pub track: Vec<FeaturePair>,
}

/// Full-batch gradient descent with step `θ²` on the last-layer loss,
/// starting from the flow's initial weights.
pub fn gd_last_layer(flow: &LinearFlow, cfg: &GdConfig) -> Result<RunRecord> {
    if cfg.record_every == 0 {
        return param_err("record_every must be >= 1");
    }
    let bank = &flow.spec.features;
    let pairs: Vec<(usize, &Vector, &Vector)> = cfg
        .track
        .iter()
        .map(|p| Ok((p.class_k, bank.get(p.class_k, p.index_i)?, bank.get(p.class_c, p.index_j)?)))
        .collect::<Result<_>>()?;
    let step_size = flow.spec.theta * flow.spec.theta;
    let (n, k, lambda1) = (bank.total(), bank.num_classes(), flow.spec.lambda1);
    let mut w: Matrix = flow.spec.w0.clone();
    let mut rec = RunRecord::new(0);
    let mut rises = 0;
    for step in 0..=cfg.steps {
        if step % cfg.record_every == 0 {
            let loss = flow.loss(&w);
            if let Some(&prev) = rec.emp_loss.last() {
                rises = if loss > prev { rises + 1 } else { 0 };
            }
            rec.steps.push(step);
            rec.emp_loss.push(loss);
            rec.pop_loss.push(None);
            rec.weight_error.push((&w - &flow.fixed_point).norm());
            let row = pairs
                .iter()
                .map(|(ck, h, hp)| srel_last_layer_closed_form(&w, h, *ck, hp, lambda1, n, k))
                .collect::<Result<Vec<_>>>()?;
            rec.srel.push(row);
            if rises >= UNSTABLE_RECORDS {
                rec.status = RunStatus::Unstable { step };
                break;
            }
        }
        if step == cfg.steps {
            break;
        }
        w -= flow.loss_grad(&w) * step_size;
        if !w.iter().all(|v| v.is_finite()) {
            rec.status = RunStatus::Diverged { step: step + 1, norm: w.norm() };
            break;
        }
    }
    rec.final_weights = crate::flows::flatten_rows(&w).as_slice().to_vec();
    Ok(rec)
}

/// Early-versus-late summary of one `S_rel` series against its loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhase {
    /// Last record index of the first loss-halving window.
    pub halving_end: usize,
    pub early_max: f64,
    pub late_min: f64,
}

impl TwoPhase {
    pub fn separated(&self) -> bool {
        self.early_max < self.late_min
    }
}

/// The loss-halving window runs from the first record up to the first
/// record with `L ≤ L_final + (L_0 − L_final)/2`; the late window is the
/// final 20% of records. Undefined `S_rel` values are ignored.
pub fn two_phase(record: &RunRecord, pair: usize) -> Option<TwoPhase> {
    let losses = &record.emp_loss;
    let (&l0, &lf) = (losses.first()?, losses.last()?);
    let half = lf + 0.5 * (l0 - lf);
    let halving_end = losses.iter().position(|&l| l <= half)?;
    let series = record.pair_series(pair);
    let early_max = series[..=halving_end].iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail_start = (series.len() as f64 * 0.8) as usize;
    let late_min = series[tail_start..].iter().flatten().copied().fold(f64::INFINITY, f64::min);
    (early_max.is_finite() && late_min.is_finite()).then_some(TwoPhase { halving_end, early_max, late_min })
}

/// Mean/std of tracked `S_rel` across runs that share a step grid.
pub fn aggregate_runs(records: &[RunRecord], pair_ids: &[String]) -> Result<SRelSeries> {
    let first = records.first().ok_or_else(|| Error::Parameter("no runs to aggregate".into()))?;
    if records.iter().any(|r| r.steps != first.steps) {
        return Err(Error::Shape("runs do not share a step grid".into()));
    }
    let times = first.steps.iter().map(|&s| s as f64).collect();
    let runs = records.iter().map(|r| (r.seed, r.srel.clone())).collect();
    SRelSeries::from_runs(times, pair_ids.to_vec(), runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_blobs, random_relu_features, FeatureBank};
    use crate::elasticity::srel_diag_quad_time;
    use crate::flows::{DiagQuadFlowSpec, LinearFlowSpec};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn paper_quad_spec() -> QuadSgdSpec {
        QuadSgdSpec {
            w_star: v(&[1.0, 2.0, 3.0]),
            w0: v(&[0.5f64.sqrt(), 2f64.sqrt(), 2.0]),
            alpha: AlphaSpec::Zero,
        }
    }

    #[test]
    fn quad_fixed_at_teacher() {
        let spec = QuadSgdSpec { w0: v(&[1.0, 2.0, 3.0]), ..paper_quad_spec() };
        let pair = (v(&[1.0, -1.0, 1.0]), v(&[1.01, 0.999, 1.2]));
        let cfg = SgdConfig::new(1e-3, 50, vec![1], vec![pair], 10);
        let runs = sgd_quad(&spec, &cfg).unwrap();
        assert_eq!(runs[0].final_weights, vec![1.0, 2.0, 3.0]);
        assert!(runs[0].srel.iter().all(|row| row[0].is_none()));
        assert_eq!(runs[0].first_within_tol, Some(0));
    }

    #[test]
    fn quad_converges_and_tracks_closed_form() {
        let spec = paper_quad_spec();
        let pair = (v(&[1.0, -1.0, 1.0]), v(&[1.01, 0.999, 1.2]));
        let mut cfg = SgdConfig::new(1e-3, 20_000, (0..4).collect(), vec![pair.clone()], 100);
        let runs = sgd_quad(&spec, &cfg).unwrap();
        for r in &runs {
            assert!(r.is_completed());
            assert!(*r.weight_error.last().unwrap() < 1e-6);
        }
        cfg.steps = 2000;
        let runs = sgd_quad(&spec, &cfg).unwrap();
        let series = aggregate_runs(&runs, &["p".into()]).unwrap();
        let flow = DiagQuadFlowSpec::new(v(&[1.0, 4.0, 9.0]), v(&[1.0; 3]), 1e-3, v(&[0.5, 2.0, 4.0])).unwrap();
        // loose here; the acceptance suite pins the 20-seed, 10% version
        for (i, &t) in series.times.iter().enumerate().skip(1) {
            let exact = srel_diag_quad_time(&flow, &pair.0, &pair.1, t).unwrap().unwrap();
            let mean = series.mean[i][0].unwrap();
            assert!((mean - exact).abs() < 0.25 * exact, "t = {t}: {mean} vs {exact}");
        }
    }

    #[test]
    fn runs_are_deterministic_and_order_free() {
        let spec = paper_quad_spec();
        let pair = (v(&[1.0, -1.0, 1.0]), v(&[1.01, 0.999, 1.2]));
        let cfg = SgdConfig::new(1e-3, 300, vec![3, 1, 2], vec![pair], 7);
        let a = sgd_quad(&spec, &cfg).unwrap();
        let b = sgd_quad(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        let mut cfg2 = cfg.clone();
        cfg2.seeds = vec![2, 3, 1];
        let c = sgd_quad(&spec, &cfg2).unwrap();
        let ids = ["p".to_string()];
        assert_eq!(aggregate_runs(&a, &ids).unwrap(), aggregate_runs(&c, &ids).unwrap());
    }

    #[test]
    fn config_validation() {
        let spec = paper_quad_spec();
        let mut cfg = SgdConfig::new(1e-3, 10, vec![], vec![], 1);
        assert!(sgd_quad(&spec, &cfg).is_err());
        cfg.seeds = vec![0];
        cfg.record_every = 0;
        assert!(sgd_quad(&spec, &cfg).is_err());
        cfg.record_every = 1;
        cfg.eta = -1.0;
        assert!(sgd_quad(&spec, &cfg).is_err());
        cfg.eta = 1e-3;
        cfg.track_pairs = vec![(v(&[1.0]), v(&[1.0]))];
        assert!(sgd_quad(&spec, &cfg).is_err());
    }

    #[test]
    fn quad_divergence_is_marked() {
        let spec = paper_quad_spec();
        let cfg = SgdConfig::new(5.0, 1000, vec![0], vec![], 1);
        let runs = sgd_quad(&spec, &cfg).unwrap();
        assert!(matches!(runs[0].status, RunStatus::Diverged { .. }));
    }

    #[test]
    fn relu_fixed_at_teacher() {
        let w_star = Vector::from_element(4, 1.0);
        let spec = ReluSgdSpec { w_star: w_star.clone(), init: InitSpec::Fixed(w_star.clone()) };
        let cfg = SgdConfig::new(1e-3, 200, vec![0], vec![], 50);
        let run = &sgd_relu(&spec, &cfg).unwrap()[0];
        assert_eq!(run.final_weights, w_star.as_slice().to_vec());
    }

    #[test]
    fn relu_converges_with_paper_step() {
        let w_star = Vector::from_element(10, 1.0);
        let spec = ReluSgdSpec { w_star, init: InitSpec::Gaussian { scale: 1.0 } };
        let cfg = SgdConfig::new(1e-3, 100_000, vec![0, 1, 2], vec![], 1000);
        let runs = sgd_relu(&spec, &cfg).unwrap();
        let n = runs[0].weight_error.len();
        let mean_err = |i: usize| runs.iter().map(|r| r.weight_error[i]).sum::<f64>() / runs.len() as f64;
        assert!(mean_err(n - 1) < 1e-3);
        assert!(mean_err(n / 2) < mean_err(0));
    }

    #[test]
    fn relu_holdout_loss_recorded() {
        let w_star = Vector::from_element(3, 1.0);
        let spec = ReluSgdSpec { w_star, init: InitSpec::Fixed(Vector::zeros(3)) };
        let mut cfg = SgdConfig::new(1e-2, 100, vec![5], vec![], 50);
        cfg.holdout = Some(200);
        let run = &sgd_relu(&spec, &cfg).unwrap()[0];
        let pops: Vec<f64> = run.pop_loss.iter().map(|p| p.unwrap()).collect();
        assert_eq!(pops.len(), 3);
        assert!(pops[2] < pops[0]);
    }

    fn blob_flow(w0_scale: f64) -> LinearFlow {
        let ds = gaussian_blobs(20, &[Vector::from_element(20, 1.0), Vector::from_element(20, 9.0)], &[2.0, 1.0], 100, 3).unwrap();
        let features = random_relu_features(20, 10, &ds, 4).unwrap();
        let w0 = Matrix::from_fn(2, 10, |i, j| w0_scale * ((i * 10 + j) as f64).cos());
        LinearFlow::new(LinearFlowSpec { features, lambda1: 1.0, theta: 1e-2, beta_sq: 1.0, w0 }).unwrap()
    }

    #[test]
    fn gd_zero_features_loss_half() {
        let features = FeatureBank::new(vec![vec![Vector::zeros(3); 5], vec![Vector::zeros(3); 5]]).unwrap();
        let flow = LinearFlow::new(LinearFlowSpec { features, lambda1: 1.0, theta: 0.1, beta_sq: 1.0, w0: Matrix::from_element(2, 3, 0.4) }).unwrap();
        let rec = gd_last_layer(&flow, &GdConfig { steps: 2000, record_every: 100, track: vec![] }).unwrap();
        assert!((rec.emp_loss.last().unwrap() - 0.5).abs() < 1e-10);
        assert!(rec.final_weights.iter().all(|w| w.abs() < 1e-10));
    }

    #[test]
    fn gd_loss_non_increasing_and_matches_flow() {
        let flow = blob_flow(0.1);
        let track = vec![FeaturePair { class_k: 0, index_i: 0, class_c: 1, index_j: 0 }];
        let steps = 2000;
        let rec = gd_last_layer(&flow, &GdConfig { steps, record_every: 50, track }).unwrap();
        for w in rec.emp_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        let exact = flow.state_matrix(steps as f64).unwrap();
        let discrete = Matrix::from_row_slice(2, 10, &rec.final_weights);
        assert!((discrete - &exact).norm() / exact.norm() < 0.01);
        assert!(rec.srel.iter().all(|row| row[0].is_some()));
    }

    #[test]
    fn gd_unstable_step_is_flagged() {
        let mut flow = blob_flow(0.1);
        flow.spec.theta = 1.0;
        let rec = gd_last_layer(&flow, &GdConfig { steps: 500, record_every: 1, track: vec![] }).unwrap();
        assert!(matches!(rec.status, RunStatus::Unstable { .. }));
    }

    #[test]
    fn aggregate_basics() {
        let mk = |seed, val: f64| RunRecord {
            steps: vec![0, 10],
            srel: vec![vec![Some(val)], vec![Some(val * 2.0)]],
            ..RunRecord::new(seed)
        };
        let ids = ["p".to_string()];
        let one = aggregate_runs(&[mk(1, 1.0)], &ids).unwrap();
        assert_eq!(one.mean[1][0], Some(2.0));
        assert_eq!(one.std[1][0], Some(0.0));
        let two = aggregate_runs(&[mk(1, 1.0), mk(2, 3.0)], &ids).unwrap();
        assert_eq!((two.mean[0][0], two.std[0][0]), (Some(2.0), Some(1.0)));
        let mut other = mk(3, 1.0);
        other.steps = vec![0, 5];
        assert!(aggregate_runs(&[mk(1, 1.0), other], &ids).is_err());
    }

    #[test]
    fn two_phase_window() {
        let rec = RunRecord {
            steps: (0..10).collect(),
            emp_loss: vec![10.0, 8.0, 5.0, 3.0, 2.0, 1.5, 1.2, 1.1, 1.0, 1.0],
            srel: [0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.8, 0.9, 0.9].iter().map(|&s| vec![Some(s)]).collect(),
            ..RunRecord::new(0)
        };
        let tp = two_phase(&rec, 0).unwrap();
        assert_eq!(tp.halving_end, 2);
        assert_eq!((tp.early_max, tp.late_min), (0.3, 0.9));
        assert!(tp.separated());
    }
}
