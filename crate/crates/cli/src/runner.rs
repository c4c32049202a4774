//! Executes a validated config and writes CSV tables, plots and a manifest.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use elastlab::data::{derive_seed, gaussian_blobs, random_relu_features, AlphaSpec};
use elastlab::elasticity::{relu_srel_lower_bound, srel_diag_quad_time, SRelSeries};
use elastlab::flows::{DiagQuadFlowSpec, LinearFlow, LinearFlowSpec};
use elastlab::io::{create_file, fmt_f64, fmt_opt, write_run_records, write_series, write_table, write_trajectory};
use elastlab::mlp::{
    classification_trends, polygon_means, train_classify_srel, train_regression_srel, ClassifyExperiment,
    OptimizerKind, RegressionExperiment, TrainConfig,
};
use elastlab::sgd::{
    aggregate_runs, gd_last_layer, sgd_quad, sgd_relu, two_phase, FeaturePair, GdConfig, InitSpec, QuadSgdSpec,
    ReluSgdSpec, RunRecord, SgdConfig,
};
use elastlab::stats::spearman_defined;
use elastlab::verify::{override_tolerances, run_suite, Effort};
use elastlab::{Matrix, Vector};
use serde::Serialize;

use crate::config::{Config, ConfigError, Kind, OptimizerName, Probe};
use crate::plot::{Chart, Line};

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    /// Some checks failed.
    Verify { failed: Vec<String>, report: Vec<String> },
    /// Divergence, or nothing measurable came out of the run.
    Numeric(String),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Verify { .. } => 1,
            RunError::Config(_) => 2,
            RunError::Numeric(_) | RunError::Io(_) => 3,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Verify { failed, .. } => write!(f, "verification failed: {}", failed.join(", ")),
            RunError::Numeric(m) => write!(f, "numerical failure: {m}"),
            RunError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<elastlab::Error> for RunError {
    fn from(e: elastlab::Error) -> Self {
        use elastlab::Error as E;
        match e {
            E::Shape(_) | E::Parameter(_) => RunError::Config(ConfigError { field: String::new(), message: e.to_string() }),
            E::Io(_) | E::Csv(_) => RunError::Io(e.to_string()),
            E::Singular { .. } | E::Contract(_) | E::Divergence { .. } => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

type Res<T> = std::result::Result<T, RunError>;

pub struct RunOptions {
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<(String, f64)>,
}

/// Collects the files written by a run and its one-line summaries.
struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
    notes: Vec<String>,
    plots: bool,
    log_y: bool,
}

impl Outputs<'_> {
    fn csv(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> elastlab::Result<()>) -> Res<()> {
        let mut f = create_file(&self.dir.join(name))?;
        write(&mut f)?;
        f.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn svg(&mut self, name: &str, chart: Chart) -> Res<()> {
        if !self.plots {
            return Ok(());
        }
        std::fs::write(self.dir.join(name), chart.log_y(self.log_y).render())?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn note(&mut self, s: String) {
        self.notes.push(s);
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    created_unix: u64,
    config_path: Option<String>,
    seeds: &'a [u64],
    files: &'a [String],
    config: &'a Config,
}

/// Runs `cfg` into `opts.out_dir` and returns the summary lines.
pub fn run(cfg: &Config, opts: &RunOptions) -> Res<Vec<String>> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let mut out = Outputs {
        dir: &opts.out_dir,
        files: Vec::new(),
        notes: Vec::new(),
        plots: cfg.plot.enabled,
        log_y: cfg.plot.log_y,
    };
    match cfg.kind {
        Kind::Dhom => run_dhom(cfg, &opts.seeds, &mut out)?,
        Kind::Relu => run_relu(cfg, &opts.seeds, &mut out)?,
        Kind::Lastlayer => run_lastlayer(cfg, &opts.seeds, &mut out)?,
        Kind::MlpRegress => run_mlp_regress(cfg, &opts.seeds, &mut out)?,
        Kind::MlpClassify => run_mlp_classify(cfg, &opts.seeds, &mut out)?,
        Kind::Verify => {
            let full = cfg.verify.as_ref().is_some_and(|v| v.full);
            run_verify(full, &opts.overrides, &mut out)?;
        }
    }
    let mut resolved = cfg.clone();
    resolved.seeds = Some(opts.seeds.clone());
    let manifest = Manifest {
        tool: "elastlab",
        version: env!("CARGO_PKG_VERSION"),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        config_path: opts.config_path.as_ref().map(|p| p.display().to_string()),
        seeds: &opts.seeds,
        files: &out.files,
        config: &resolved,
    };
    let text = toml::to_string(&manifest).map_err(|e| RunError::Io(format!("manifest: {e}")))?;
    std::fs::write(opts.out_dir.join("manifest.toml"), text)?;
    Ok(out.notes)
}

/// Runs the verification suite on its own, writing `report.txt`.
pub fn verify(full: bool, overrides: &[(String, f64)], out_dir: &Path) -> Res<Vec<String>> {
    std::fs::create_dir_all(out_dir)?;
    let mut out = Outputs { dir: out_dir, files: Vec::new(), notes: Vec::new(), plots: false, log_y: false };
    run_verify(full, overrides, &mut out)?;
    Ok(out.notes)
}

fn run_verify(full: bool, overrides: &[(String, f64)], out: &mut Outputs) -> Res<()> {
    let effort = if full { Effort::Full } else { Effort::Quick };
    let mut checks = run_suite(effort)?;
    let unknown = override_tolerances(&mut checks, overrides);
    if !unknown.is_empty() {
        return Err(ConfigError { field: "override-tolerance".into(), message: format!("unknown check(s): {}", unknown.join(", ")) }.into());
    }
    let report: String = checks.iter().map(|c| format!("{c}\n")).collect();
    std::fs::write(out.dir.join("report.txt"), &report)?;
    out.files.push("report.txt".into());
    let lines: Vec<String> = checks.iter().map(ToString::to_string).collect();
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.clone()).collect();
    if failed.is_empty() {
        out.notes.extend(lines);
        Ok(())
    } else {
        Err(RunError::Verify { failed, report: lines })
    }
}

fn vec_of(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

fn probe_pairs(probes: &[Probe]) -> Vec<(Vector, Vector)> {
    probes.iter().map(|p| (vec_of(&p.x), vec_of(&p.x_prime))).collect()
}

fn probe_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("probe{i}")).collect()
}

fn completed(records: Vec<RunRecord>, what: &str, out: &mut Outputs) -> Res<Vec<RunRecord>> {
    let total = records.len();
    let done: Vec<RunRecord> = records.into_iter().filter(RunRecord::is_completed).collect();
    if done.is_empty() {
        return Err(RunError::Numeric(format!("all {total} {what} runs diverged")));
    }
    if done.len() < total {
        out.note(format!("{} of {total} {what} runs diverged and were dropped from the aggregate", total - done.len()));
    }
    Ok(done)
}

fn require_defined(series: &SRelSeries, what: &str) -> Res<()> {
    if series.defined.iter().flatten().all(|&n| n == 0) {
        return Err(RunError::Numeric(format!("{what}: S_rel undefined at every record")));
    }
    Ok(())
}

fn mean_lines(series: &SRelSeries, scale: f64) -> Vec<Line> {
    let xs: Vec<f64> = series.times.iter().map(|t| t * scale).collect();
    (0..series.pairs.len()).map(|p| Line::from_optional(series.pairs[p].clone(), &xs, &series.mean_of(p))).collect()
}

fn run_dhom(cfg: &Config, seeds: &[u64], out: &mut Outputs) -> Res<()> {
    let s = cfg.dhom.as_ref().expect("validated");
    let flow = DiagQuadFlowSpec::new(vec_of(&s.a), vec_of(&s.b), s.theta, vec_of(&s.w0_sq))?;
    let pairs = probe_pairs(&cfg.probes);
    let ids = probe_ids(pairs.len());
    let n = (s.t_end / s.t_step).round() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * s.t_step).collect();

    let mut values = Vec::with_capacity(times.len());
    let mut states = Vec::with_capacity(times.len());
    for &t in &times {
        states.push(flow.weights(t)?);
        let row = pairs.iter().map(|(x, xp)| srel_diag_quad_time(&flow, x, xp, t)).collect::<elastlab::Result<Vec<_>>>()?;
        values.push(row);
    }
    if values.iter().flatten().all(Option::is_none) {
        return Err(RunError::Numeric("closed-form S_rel undefined at every time".into()));
    }
    let header = ["t", "pair_id", "srel"].map(String::from);
    let rows = times.iter().zip(&values).flat_map(|(t, row)| {
        ids.iter().zip(row).map(move |(id, v)| vec![fmt_f64(*t), id.clone(), fmt_opt(*v)])
    });
    out.csv("closed_form.csv", |w| write_table(w, "srel_closed_form", "", &header, rows))?;
    out.csv("trajectory.csv", |w| write_trajectory(w, &times, &states))?;

    let mut chart = Chart::new("S_rel, diagonal quadratic flow", "t", "S_rel");
    for (p, id) in ids.iter().enumerate() {
        let ys: Vec<Option<f64>> = values.iter().map(|row| row[p]).collect();
        chart = chart.line(Line::from_optional(format!("{id} closed form"), &times, &ys));
        if let Some(v) = ys.last().copied().flatten() {
            out.note(format!("{id}: S_rel(t={}) = {v:.6}", s.t_end));
        }
    }

    if let Some(sgd) = &s.sgd {
        let spec = QuadSgdSpec { w_star: vec_of(&sgd.w_star), w0: flow.w0_sq.map(f64::sqrt), alpha: AlphaSpec::Zero };
        let runs = sgd_quad(&spec, &SgdConfig::new(sgd.eta, sgd.steps, seeds.to_vec(), pairs.clone(), sgd.record_every))?;
        out.csv("sgd_runs.csv", |w| write_run_records(w, &runs, &ids))?;
        let runs = completed(runs, "SGD", out)?;
        let series = aggregate_runs(&runs, &ids)?;
        require_defined(&series, "SGD")?;
        out.csv("sgd_series.csv", |w| write_series(w, &series))?;
        // one SGD step advances the flow clock by eta / theta
        for line in mean_lines(&series, sgd.eta / s.theta) {
            chart = chart.line(Line { label: format!("{} SGD mean", line.label), ..line }.dashed());
        }
        out.note(format!("SGD: {} runs of {} steps", runs.len(), sgd.steps));
    }
    out.svg("srel.svg", chart)
}

fn run_relu(cfg: &Config, seeds: &[u64], out: &mut Outputs) -> Res<()> {
    let s = cfg.relu.as_ref().expect("validated");
    let pairs = probe_pairs(&cfg.probes);
    let ids = probe_ids(pairs.len());
    let spec = ReluSgdSpec { w_star: vec_of(&s.w_star), init: InitSpec::Gaussian { scale: s.init_scale } };
    let runs = sgd_relu(&spec, &SgdConfig::new(s.eta, s.steps, seeds.to_vec(), pairs.clone(), s.record_every))?;
    out.csv("runs.csv", |w| write_run_records(w, &runs, &ids))?;
    let runs = completed(runs, "SGD", out)?;
    let series = aggregate_runs(&runs, &ids)?;
    require_defined(&series, "relu SGD")?;
    out.csv("series.csv", |w| write_series(w, &series))?;

    let start = s.steps as f64 * (1.0 - s.tail_fraction);
    let mut rows = Vec::new();
    let mut chart = Chart::new("S_rel, ReLU teacher-student SGD", "step", "S_rel");
    for (p, ((x, xp), id)) in pairs.iter().zip(&ids).enumerate() {
        let bound = relu_srel_lower_bound(x, xp)?;
        let tail: Vec<f64> = runs
            .iter()
            .flat_map(|r| r.steps.iter().zip(&r.srel).filter(|(st, _)| **st as f64 >= start).filter_map(|(_, row)| row[p]))
            .collect();
        let late = (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
        rows.push(vec![id.clone(), fmt_f64(bound), fmt_opt(late), tail.len().to_string()]);
        out.note(format!("{id}: lower bound {bound:.6}, late mean {}", late.map_or("undefined".into(), |v| format!("{v:.6}"))));
        chart = chart.line(Line::new(format!("{id} bound"), vec![(0.0, bound), (s.steps as f64, bound)]).dashed());
    }
    for line in mean_lines(&series, 1.0) {
        chart = chart.line(Line { label: format!("{} mean", line.label), ..line });
    }
    let header = ["pair_id", "lower_bound", "late_mean", "late_defined"].map(String::from);
    let extra = format!("tail_fraction={}", fmt_f64(s.tail_fraction));
    out.csv("summary.csv", |w| write_table(w, "relu_summary", &extra, &header, rows))?;
    out.svg("srel.svg", chart)
}

fn run_lastlayer(cfg: &Config, seeds: &[u64], out: &mut Outputs) -> Res<()> {
    let s = cfg.lastlayer.as_ref().expect("validated");
    let track: Vec<FeaturePair> = if s.track.is_empty() {
        vec![FeaturePair { class_k: 0, index_i: 0, class_c: 1, index_j: 0 }]
    } else {
        s.track.iter().map(|t| FeaturePair { class_k: t.class_k, index_i: t.index_i, class_c: t.class_c, index_j: t.index_j }).collect()
    };
    let ids: Vec<String> = track.iter().map(|p| format!("h{}_{}->h{}_{}", p.class_k, p.index_i, p.class_c, p.index_j)).collect();
    let means: Vec<Vector> = s.means.iter().map(|&m| Vector::from_element(s.dim, m)).collect();
    let mut records = Vec::new();
    for &seed in seeds {
        let ds = gaussian_blobs(s.dim, &means, &s.variances, s.n_per_class, derive_seed(seed, 0))?;
        let features = random_relu_features(s.dim, s.p, &ds, derive_seed(seed, 1))?;
        let flow = LinearFlow::new(LinearFlowSpec {
            features,
            lambda1: s.lambda1,
            theta: s.theta,
            beta_sq: 1.0,
            w0: Matrix::zeros(means.len(), s.p),
        })?;
        let mut rec = gd_last_layer(&flow, &GdConfig { steps: s.steps, record_every: s.record_every, track: track.clone() })?;
        rec.seed = seed;
        records.push(rec);
    }
    out.csv("runs.csv", |w| write_run_records(w, &records, &ids))?;

    let mut rows = Vec::new();
    for rec in &records {
        for (p, id) in ids.iter().enumerate() {
            let tp = two_phase(rec, p);
            rows.push(vec![
                rec.seed.to_string(),
                id.clone(),
                tp.map_or(String::new(), |t| t.halving_end.to_string()),
                fmt_opt(tp.map(|t| t.early_max)),
                fmt_opt(tp.map(|t| t.late_min)),
                tp.map_or(String::new(), |t| t.separated().to_string()),
            ]);
        }
    }
    let separated = rows.iter().filter(|r| r[5] == "true").count();
    out.note(format!("two-phase separation in {separated} of {} run/pair combinations", rows.len()));
    let header = ["run_id", "pair_id", "halving_end", "early_max", "late_min", "separated"].map(String::from);
    out.csv("two_phase.csv", |w| write_table(w, "two_phase", "", &header, rows))?;

    let records = completed(records, "gradient descent", out)?;
    let series = aggregate_runs(&records, &ids)?;
    require_defined(&series, "last layer")?;
    out.csv("series.csv", |w| write_series(w, &series))?;
    let mut chart = Chart::new("S_rel, last-layer gradient descent", "step", "S_rel");
    for line in mean_lines(&series, 1.0) {
        chart = chart.line(line);
    }
    out.svg("srel.svg", chart)
}

fn optimizer(name: &OptimizerName) -> OptimizerKind {
    match name {
        OptimizerName::Sgd => OptimizerKind::Sgd,
        OptimizerName::Adam => OptimizerKind::Adam,
    }
}

fn run_mlp_regress(cfg: &Config, seeds: &[u64], out: &mut Outputs) -> Res<()> {
    let s = cfg.mlp_regress.as_ref().expect("validated");
    let exp = RegressionExperiment {
        dims: s.dims,
        hidden: s.hidden.clone(),
        n_train: s.n_train,
        train: TrainConfig {
            optimizer: optimizer(&s.optimizer),
            eta: s.eta,
            batch_size: s.batch_size,
            epochs: s.epochs,
            seeds: seeds.to_vec(),
            srel_steps: s.srel_steps.clone(),
            k: 1,
        },
        probe_count: s.probe_count,
        probe_min_dist: s.probe_min_dist,
        probe_max_dist: s.probe_max_dist,
        probe_seed: s.probe_seed,
        pair_distances: s.pair_distances,
        series_every: s.series_every,
    };
    let res = train_regression_srel(&exp)?;
    if res.final_loss.iter().any(|l| !l.is_finite()) {
        return Err(RunError::Numeric("training loss is not finite".into()));
    }
    require_defined(&res.profiles, "distance profiles")?;
    let d = &res.probes.distances;
    let rows = d.iter().enumerate().map(|(i, dist)| vec![format!("probe{i:02}"), fmt_f64(*dist)]);
    out.csv("probes.csv", |w| write_table(w, "probe_distances", "", &["pair_id".into(), "distance".into()], rows))?;
    out.csv("profiles.csv", |w| write_series(w, &res.profiles))?;
    out.csv("pairs.csv", |w| write_series(w, &res.pairs))?;

    let mut trend_rows = Vec::new();
    let mut profile_chart = Chart::new("S_rel against probe distance", "distance", "mean S_rel");
    for (ti, t) in res.profiles.times.iter().enumerate() {
        let rho = spearman_defined(d, &res.profiles.mean[ti]);
        trend_rows.push(vec![fmt_f64(*t), fmt_opt(rho)]);
        let mut pts: Vec<(f64, f64)> = d.iter().zip(&res.profiles.mean[ti]).filter_map(|(x, y)| y.map(|y| (*x, y))).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        profile_chart = profile_chart.line(Line::new(format!("step {t}"), pts));
        out.note(format!("step {t}: Spearman(distance, S_rel) = {}", rho.map_or("undefined".into(), |r| format!("{r:.3}"))));
    }
    out.csv("profile_trend.csv", |w| write_table(w, "profile_trend", "", &["t".into(), "spearman".into()], trend_rows))?;
    let losses = res.final_loss.iter().zip(seeds).map(|(l, s)| vec![s.to_string(), fmt_f64(*l)]);
    out.csv("final_loss.csv", |w| write_table(w, "final_loss", "", &["run_id".into(), "loss".into()], losses))?;

    out.svg("profiles.svg", profile_chart)?;
    let mut pair_chart = Chart::new("Near and far probe S_rel", "step", "mean S_rel");
    for line in mean_lines(&res.pairs, 1.0) {
        pair_chart = pair_chart.line(line);
    }
    out.svg("pairs.svg", pair_chart)
}

fn run_mlp_classify(cfg: &Config, seeds: &[u64], out: &mut Outputs) -> Res<()> {
    let s = cfg.mlp_classify.as_ref().expect("validated");
    let n = s.classes * s.n_per_class;
    let total = (n / s.batch_size).max(1) * s.epochs;
    let mut srel_steps: Vec<usize> = (0..=total).step_by(s.record_every).collect();
    if srel_steps.last() != Some(&total) {
        srel_steps.push(total);
    }
    let exp = ClassifyExperiment {
        dims: s.dims,
        means: polygon_means(s.dims, s.classes, s.radius)?,
        variance: s.variance,
        n_per_class: s.n_per_class,
        hidden: s.hidden.clone(),
        train: TrainConfig {
            optimizer: optimizer(&s.optimizer),
            eta: s.eta,
            batch_size: s.batch_size,
            epochs: s.epochs,
            seeds: seeds.to_vec(),
            srel_steps,
            k: s.k,
        },
    };
    let res = train_classify_srel(&exp)?;
    require_defined(&res.series, "classification")?;
    out.csv("series.csv", |w| write_series(w, &res.series))?;
    let acc = res.accuracy.iter().zip(seeds).map(|(a, s)| vec![s.to_string(), fmt_f64(*a)]);
    out.csv("accuracy.csv", |w| write_table(w, "train_accuracy", "", &["run_id".into(), "accuracy".into()], acc))?;

    let trends = classification_trends(&res);
    let rows: Vec<Vec<String>> = trends
        .iter()
        .map(|t| vec![t.c1.to_string(), t.c2.to_string(), fmt_f64(t.intra_above), fmt_opt(t.spearman)])
        .collect();
    for t in &trends {
        out.note(format!(
            "class {} vs {}: intra above {:.3}, Spearman {}",
            t.c1,
            t.c2,
            t.intra_above,
            t.spearman.map_or("undefined".into(), |r| format!("{r:.3}"))
        ));
    }
    let header = ["c1", "c2", "intra_above", "spearman"].map(String::from);
    out.csv("trends.csv", |w| write_table(w, "class_trends", "", &header, rows))?;

    let xs = &res.series.times;
    for c1 in 0..res.num_classes {
        let mut chart = Chart::new(format!("Smoothed S_rel from class {c1}"), "step", "S_rel");
        for c2 in 0..res.num_classes {
            let p = res.pair_index(c1, c2);
            chart = chart.line(Line::from_optional(res.series.pairs[p].clone(), xs, &res.series.mean_of(p)));
        }
        out.svg(&format!("class{c1}.svg"), chart)?;
    }
    Ok(())
}
