//! Experiment configuration files (TOML) and their validation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const DEFAULT_RUNS: u64 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted path of the offending field; empty for file-level problems.
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn at(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "config error: {}", self.message)
        } else {
            write!(f, "config error at `{}`: {}", self.field, self.message)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Dhom,
    Relu,
    Lastlayer,
    MlpRegress,
    MlpClassify,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub kind: Kind,
    pub name: Option<String>,
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub plot: PlotOptions,
    #[serde(default)]
    pub probes: Vec<Probe>,
    pub dhom: Option<DhomSection>,
    pub relu: Option<ReluSection>,
    pub lastlayer: Option<LastLayerSection>,
    pub mlp_regress: Option<MlpRegressSection>,
    pub mlp_classify: Option<MlpClassifySection>,
    pub verify: Option<VerifySection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PlotOptions {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub log_y: bool,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self { enabled: true, log_y: false }
    }
}

fn yes() -> bool {
    true
}

/// A tracked pair: `x` is the sampled point, `x_prime` the probe.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DhomSection {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub theta: f64,
    pub w0_sq: Vec<f64>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "one")]
    pub t_step: f64,
    pub sgd: Option<DhomSgd>,
}

fn default_t_end() -> f64 {
    1000.0
}

fn one() -> f64 {
    1.0
}

/// SGD on `y = ⟨x, w*²⟩` with standard-normal inputs, for which
/// `a = w*²` and `b = 1`.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DhomSgd {
    pub w_star: Vec<f64>,
    pub eta: f64,
    pub steps: usize,
    #[serde(default = "one_usize")]
    pub record_every: usize,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReluSection {
    pub w_star: Vec<f64>,
    pub eta: f64,
    pub steps: usize,
    #[serde(default = "hundred")]
    pub record_every: usize,
    #[serde(default = "one")]
    pub init_scale: f64,
    #[serde(default = "tail")]
    pub tail_fraction: f64,
}

fn hundred() -> usize {
    100
}

fn tail() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrackPair {
    pub class_k: usize,
    pub index_i: usize,
    pub class_c: usize,
    pub index_j: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LastLayerSection {
    pub dim: usize,
    pub p: usize,
    pub n_per_class: usize,
    /// Per-class mean, broadcast to every coordinate.
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub lambda1: f64,
    pub theta: f64,
    pub steps: usize,
    #[serde(default = "hundred")]
    pub record_every: usize,
    #[serde(default)]
    pub track: Vec<TrackPair>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MlpRegressSection {
    pub dims: usize,
    pub hidden: Vec<usize>,
    pub n_train: usize,
    pub optimizer: OptimizerName,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub srel_steps: Vec<usize>,
    pub probe_count: usize,
    pub probe_min_dist: f64,
    pub probe_max_dist: f64,
    #[serde(default)]
    pub probe_seed: u64,
    pub pair_distances: [f64; 2],
    pub series_every: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MlpClassifySection {
    pub dims: usize,
    pub classes: usize,
    /// Distance of each class mean from the origin.
    pub radius: f64,
    pub variance: f64,
    pub n_per_class: usize,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerName,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub record_every: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default)]
    pub full: bool,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at("", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let loc = e.span().map(|s| line_col(text, s.start));
            match loc {
                Some((l, c)) => ConfigError::at("", format!("line {l}, column {c}: {msg}")),
                None => ConfigError::at("", msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Seeds to run: the override, then the file, then `0..DEFAULT_RUNS`.
    pub fn resolved_seeds(&self, overrides: Option<&[u64]>) -> Vec<u64> {
        overrides
            .map(<[u64]>::to_vec)
            .or_else(|| self.seeds.clone())
            .unwrap_or_else(|| (0..DEFAULT_RUNS).collect())
    }

    fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T, ConfigError> {
        value.as_ref().ok_or_else(|| ConfigError::at(name, format!("section [{name}] is required for kind {:?}", self.kind)))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(ConfigError::at("seeds", "must list at least one seed"));
            }
            let mut sorted = seeds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != seeds.len() {
                return Err(ConfigError::at("seeds", "seeds must be distinct"));
            }
        }
        match self.kind {
            Kind::Dhom => {
                let s = self.section(&self.dhom, "dhom")?;
                let n = s.a.len();
                nonempty("dhom.a", n)?;
                same_len("dhom.b", s.b.len(), n)?;
                same_len("dhom.w0_sq", s.w0_sq.len(), n)?;
                each_positive("dhom.a", &s.a)?;
                each_positive("dhom.b", &s.b)?;
                each_positive("dhom.w0_sq", &s.w0_sq)?;
                for q in 0..n {
                    if s.w0_sq[q] >= s.a[q] / s.b[q] {
                        return Err(ConfigError::at(format!("dhom.w0_sq[{q}]"), "must be below a/b"));
                    }
                }
                positive("dhom.theta", s.theta)?;
                positive("dhom.t_end", s.t_end)?;
                positive("dhom.t_step", s.t_step)?;
                self.check_probes(n)?;
                if let Some(sgd) = &s.sgd {
                    same_len("dhom.sgd.w_star", sgd.w_star.len(), n)?;
                    positive("dhom.sgd.eta", sgd.eta)?;
                    at_least("dhom.sgd.steps", sgd.steps, 1)?;
                    at_least("dhom.sgd.record_every", sgd.record_every, 1)?;
                    for (q, w) in sgd.w_star.iter().enumerate() {
                        if (w * w - s.a[q]).abs() > 1e-9 * s.a[q].max(1.0) || s.b[q] != 1.0 {
                            return Err(ConfigError::at(
                                "dhom.sgd.w_star",
                                format!("standard-normal SGD needs a = w*^2 and b = 1 (coordinate {q})"),
                            ));
                        }
                    }
                }
            }
            Kind::Relu => {
                let s = self.section(&self.relu, "relu")?;
                nonempty("relu.w_star", s.w_star.len())?;
                positive("relu.eta", s.eta)?;
                at_least("relu.steps", s.steps, 1)?;
                at_least("relu.record_every", s.record_every, 1)?;
                positive("relu.init_scale", s.init_scale)?;
                if !(s.tail_fraction > 0.0 && s.tail_fraction <= 1.0) {
                    return Err(ConfigError::at("relu.tail_fraction", "must lie in (0, 1]"));
                }
                self.check_probes(s.w_star.len())?;
            }
            Kind::Lastlayer => {
                let s = self.section(&self.lastlayer, "lastlayer")?;
                at_least("lastlayer.dim", s.dim, 1)?;
                at_least("lastlayer.p", s.p, 1)?;
                at_least("lastlayer.n_per_class", s.n_per_class, 1)?;
                if s.means.len() < 2 {
                    return Err(ConfigError::at("lastlayer.means", "need at least two classes"));
                }
                same_len("lastlayer.variances", s.variances.len(), s.means.len())?;
                each_positive("lastlayer.variances", &s.variances)?;
                positive("lastlayer.lambda1", s.lambda1)?;
                positive("lastlayer.theta", s.theta)?;
                at_least("lastlayer.steps", s.steps, 1)?;
                at_least("lastlayer.record_every", s.record_every, 1)?;
                for (i, t) in s.track.iter().enumerate() {
                    let field = format!("lastlayer.track[{i}]");
                    if t.class_k >= s.means.len() || t.class_c >= s.means.len() {
                        return Err(ConfigError::at(field, "class index out of range"));
                    }
                    if t.index_i >= s.n_per_class || t.index_j >= s.n_per_class {
                        return Err(ConfigError::at(field, "point index out of range"));
                    }
                }
            }
            Kind::MlpRegress => {
                let s = self.section(&self.mlp_regress, "mlp_regress")?;
                at_least("mlp_regress.dims", s.dims, 1)?;
                if s.hidden.contains(&0) {
                    return Err(ConfigError::at("mlp_regress.hidden", "widths must be positive"));
                }
                positive("mlp_regress.eta", s.eta)?;
                at_least("mlp_regress.batch_size", s.batch_size, 1)?;
                at_least("mlp_regress.n_train", s.n_train, s.batch_size)?;
                at_least("mlp_regress.epochs", s.epochs, 1)?;
                at_least("mlp_regress.probe_count", s.probe_count, 1)?;
                at_least("mlp_regress.series_every", s.series_every, 1)?;
                increasing("mlp_regress.srel_steps", &s.srel_steps)?;
                if !(s.probe_min_dist >= 0.0 && s.probe_max_dist >= s.probe_min_dist) {
                    return Err(ConfigError::at("mlp_regress.probe_max_dist", "need 0 <= probe_min_dist <= probe_max_dist"));
                }
                if !(s.pair_distances[0] >= 0.0 && s.pair_distances[1] >= s.pair_distances[0]) {
                    return Err(ConfigError::at("mlp_regress.pair_distances", "need 0 <= near <= far"));
                }
            }
            Kind::MlpClassify => {
                let s = self.section(&self.mlp_classify, "mlp_classify")?;
                at_least("mlp_classify.dims", s.dims, 2)?;
                at_least("mlp_classify.classes", s.classes, 1)?;
                if s.hidden.contains(&0) {
                    return Err(ConfigError::at("mlp_classify.hidden", "widths must be positive"));
                }
                positive("mlp_classify.radius", s.radius)?;
                positive("mlp_classify.variance", s.variance)?;
                positive("mlp_classify.eta", s.eta)?;
                at_least("mlp_classify.k", s.k, 1)?;
                at_least("mlp_classify.n_per_class", s.n_per_class, s.k)?;
                at_least("mlp_classify.batch_size", s.batch_size, 1)?;
                at_least("mlp_classify.epochs", s.epochs, 1)?;
                at_least("mlp_classify.record_every", s.record_every, 1)?;
                if s.classes * s.n_per_class < s.batch_size {
                    return Err(ConfigError::at("mlp_classify.batch_size", "larger than the dataset"));
                }
            }
            Kind::Verify => {}
        }
        Ok(())
    }

    fn check_probes(&self, dim: usize) -> Result<(), ConfigError> {
        if self.probes.is_empty() {
            return Err(ConfigError::at("probes", "at least one [[probes]] entry is required"));
        }
        for (i, p) in self.probes.iter().enumerate() {
            same_len(&format!("probes[{i}].x"), p.x.len(), dim)?;
            same_len(&format!("probes[{i}].x_prime"), p.x_prime.len(), dim)?;
            if p.x.iter().chain(&p.x_prime).any(|v| !v.is_finite()) {
                return Err(ConfigError::at(format!("probes[{i}]"), "coordinates must be finite"));
            }
        }
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::at(field, format!("must be positive and finite (got {v})")))
    }
}

fn each_positive(field: &str, vs: &[f64]) -> Result<(), ConfigError> {
    for (i, v) in vs.iter().enumerate() {
        positive(&format!("{field}[{i}]"), *v)?;
    }
    Ok(())
}

fn at_least(field: &str, v: usize, min: usize) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(ConfigError::at(field, format!("must be at least {min} (got {v})")))
    }
}

fn nonempty(field: &str, len: usize) -> Result<(), ConfigError> {
    at_least(field, len, 1).map_err(|_| ConfigError::at(field, "must not be empty"))
}

fn same_len(field: &str, len: usize, expected: usize) -> Result<(), ConfigError> {
    if len == expected {
        Ok(())
    } else {
        Err(ConfigError::at(field, format!("has length {len}, expected {expected}")))
    }
}

fn increasing(field: &str, vs: &[usize]) -> Result<(), ConfigError> {
    if vs.is_empty() {
        return Err(ConfigError::at(field, "must not be empty"));
    }
    if vs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConfigError::at(field, "must be strictly increasing"));
    }
    Ok(())
}
