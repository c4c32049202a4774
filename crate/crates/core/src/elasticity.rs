//! Relative elasticity `S_rel` in its generic, KL and class-smoothed forms,
//! with the closed-form expressions and bounds for the solvable models.
//!
//! `S_rel(x', x)` compares how much one fictitious gradient step taken at
//! the sampled point `x` moves the prediction at a probe `x'` against how
//! much it moves the prediction at `x` itself. When the change at `x`
//! vanishes the ratio is left undefined (`None`) rather than treated as an
//! error.

use std::fmt;
use std::sync::Arc;

use crate::data::AlphaSpec;
use crate::error::{param_err, Error, Result};
use crate::flows::{DiagQuadFlowSpec, GradientFlow, ReluFlow};
use crate::linalg::{Matrix, Vector};

/// Relative size below which a denominator change counts as zero.
pub const DENOM_REL_TOL: f64 = 1e-14;

/// Tolerance on `Σ p_i = 1` for probability outputs.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SRelSample {
    /// Change at the probe `x'`.
    pub numerator: f64,
    /// Change at the sampled point `x`.
    pub denominator: f64,
    pub value: Option<f64>,
}

impl SRelSample {
    /// Ratio `numerator / denominator`, undefined when the denominator is
    /// below `threshold`.
    pub fn from_changes(numerator: f64, denominator: f64, threshold: f64) -> Self {
        let value = (denominator > 0.0 && denominator >= threshold).then(|| numerator / denominator);
        Self { numerator, denominator, value }
    }

    pub fn undefined() -> Self {
        Self { numerator: 0.0, denominator: 0.0, value: None }
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return param_err(format!("eta must be positive, got {eta}"));
    }
    Ok(())
}

/// One fictitious step `w⁺ = w − η ∇ℓ(w, (x, y))`.
pub fn fictitious_step<L, G>(grad_loss: G, w: &Vector, x: &Vector, y: &L, eta: f64) -> Result<Vector>
where
    G: Fn(&Vector, &Vector, &L) -> Vector,
{
    let g = grad_loss(w, x, y);
    if g.len() != w.len() {
        return Err(Error::Shape(format!(
            "gradient has length {}, weights have length {}",
            g.len(),
            w.len()
        )));
    }
    Ok(w - g * eta)
}

/// `|f(x', w⁺) − f(x', w)| / |f(x, w⁺) − f(x, w)|` for a scalar predictor.
pub fn srel_generic<L, P, G>(
    predict: P,
    grad_loss: G,
    w: &Vector,
    x: &Vector,
    x_prime: &Vector,
    y: &L,
    eta: f64,
) -> Result<SRelSample>
where
    P: Fn(&Vector, &Vector) -> f64,
    G: Fn(&Vector, &Vector, &L) -> Vector,
{
    check_eta(eta)?;
    let w_plus = fictitious_step(grad_loss, w, x, y, eta)?;
    let fx = predict(w, x);
    let num = (predict(&w_plus, x_prime) - predict(w, x_prime)).abs();
    let den = (predict(&w_plus, x) - fx).abs();
    Ok(SRelSample::from_changes(num, den, DENOM_REL_TOL * (1.0 + fx.abs())))
}

/// Vector-output version of [`srel_generic`] with Euclidean norms of the
/// prediction changes.
pub fn srel_generic_vector<L, P, G>(
    predict: P,
    grad_loss: G,
    w: &Vector,
    x: &Vector,
    x_prime: &Vector,
    y: &L,
    eta: f64,
) -> Result<SRelSample>
where
    P: Fn(&Vector, &Vector) -> Vector,
    G: Fn(&Vector, &Vector, &L) -> Vector,
{
    check_eta(eta)?;
    let w_plus = fictitious_step(grad_loss, w, x, y, eta)?;
    let fx = predict(w, x);
    let num = (predict(&w_plus, x_prime) - predict(w, x_prime)).norm();
    let den = (predict(&w_plus, x) - &fx).norm();
    Ok(SRelSample::from_changes(num, den, DENOM_REL_TOL * (1.0 + fx.norm())))
}

/// `KL(p ‖ q)` in nats with `0 log 0 = 0`; `None` when some `q_i = 0 < p_i`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Option<f64> {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return None;
        }
        total += pi * (pi / qi).ln();
    }
    Some(total)
}

pub fn check_probability(p: &Vector) -> Result<()> {
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Contract(format!("output is not a probability vector: {:?}", p.as_slice())));
    }
    let sum = p.sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Contract(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// `KL(g(x', w⁺), g(x', w)) / KL(g(x, w⁺), g(x, w))` for a probability-valued
/// predictor trained with cross-entropy.
pub fn srel_kl<P, G>(
    predict_proba: P,
    grad_loss: G,
    w: &Vector,
    x: &Vector,
    x_prime: &Vector,
    y: usize,
    eta: f64,
) -> Result<SRelSample>
where
    P: Fn(&Vector, &Vector) -> Vector,
    G: Fn(&Vector, &Vector, &usize) -> Vector,
{
    check_eta(eta)?;
    let w_plus = fictitious_step(grad_loss, w, x, &y, eta)?;
    let probs = [
        predict_proba(&w_plus, x_prime),
        predict_proba(w, x_prime),
        predict_proba(&w_plus, x),
        predict_proba(w, x),
    ];
    for p in &probs {
        check_probability(p)?;
    }
    Ok(kl_ratio(&probs[0], &probs[1], &probs[2], &probs[3]))
}

/// `KL(a ‖ b) / KL(c ‖ d)` with the undefined conventions of [`srel_kl`].
pub fn kl_ratio(a: &Vector, b: &Vector, c: &Vector, d: &Vector) -> SRelSample {
    let (Some(num), Some(den)) = (
        kl_divergence(a.as_slice(), b.as_slice()),
        kl_divergence(c.as_slice(), d.as_slice()),
    ) else {
        return SRelSample::undefined();
    };
    SRelSample::from_changes(num.max(0.0), den, DENOM_REL_TOL)
}

/// Average of the defined entries among a set of `S_rel` values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothSRel {
    pub value: Option<f64>,
    pub defined: usize,
    pub total: usize,
}

pub fn mean_defined<I: IntoIterator<Item = Option<f64>>>(values: I) -> SmoothSRel {
    let (mut sum, mut defined, mut total) = (0.0, 0, 0);
    for v in values {
        total += 1;
        if let Some(v) = v {
            sum += v;
            defined += 1;
        }
    }
    SmoothSRel { value: (defined > 0).then(|| sum / defined as f64), defined, total }
}

/// `Σ_i Σ_j S_rel(x_{c1,i}, x_{c2,j}) / k²`, with probes from `class1` and
/// sampled points from `class2`. Undefined pairs are dropped from both the
/// sum and the divisor.
pub fn srel_k_smooth<F>(class1: &[Vector], class2: &[Vector], mut srel: F) -> Result<SmoothSRel>
where
    F: FnMut(&Vector, &Vector) -> Result<SRelSample>,
{
    if class1.is_empty() || class1.len() != class2.len() {
        return param_err(format!(
            "need k >= 1 points from each class (got {} and {})",
            class1.len(),
            class2.len()
        ));
    }
    let mut values = Vec::with_capacity(class1.len() * class2.len());
    for x_prime in class1 {
        for x in class2 {
            values.push(srel(x_prime, x)?.value);
        }
    }
    Ok(mean_defined(values))
}

/// Closed form of `S_rel` for the ridge-regularized last layer.
///
/// `h` is the sampled feature vector with class `class_k`, `h_prime` the
/// probe. With `T = (Nλ₁/K) I + h hᵀ` and `h̃ = Nλ₁/K + ‖h‖²`,
///
/// `S_rel² = (⟨h,h'⟩² − 2⟨h,h'⟩⟨Th', w_k⟩ + Σ_q ⟨Th', w_q⟩²)
///         / (‖h‖⁴ − 2 h̃ ‖h‖² ⟨h, w_k⟩ + h̃² Σ_q ⟨h, w_q⟩²)`.
pub fn srel_last_layer_closed_form(
    w: &Matrix,
    h: &Vector,
    class_k: usize,
    h_prime: &Vector,
    lambda1: f64,
    n: usize,
    k: usize,
) -> Result<Option<f64>> {
    if w.nrows() != k || w.ncols() != h.len() || h.len() != h_prime.len() {
        return Err(Error::Shape(format!(
            "W is {:?}, h has length {}, h' has length {}, K = {k}",
            w.shape(),
            h.len(),
            h_prime.len()
        )));
    }
    if class_k >= k {
        return param_err(format!("class {class_k} out of range for K = {k}"));
    }
    let c = n as f64 * lambda1 / k as f64;
    let hh = h.norm_squared();
    let hhp = h.dot(h_prime);
    let h_tilde = c + hh;
    let wh = w * h;
    let whp = w * h_prime;
    // ⟨T h', w_q⟩ = c ⟨h', w_q⟩ + ⟨h, h'⟩⟨h, w_q⟩
    let t_hp = &whp * c + &wh * hhp;
    let num = hhp * hhp - 2.0 * hhp * t_hp[class_k] + t_hp.norm_squared();
    let den = hh * hh - 2.0 * h_tilde * hh * wh[class_k] + h_tilde * h_tilde * wh.norm_squared();
    let scale = hh * hh + h_tilde * h_tilde * wh.norm_squared();
    if !(den > DENOM_REL_TOL * DENOM_REL_TOL * scale) || den <= 0.0 {
        return Ok(None);
    }
    Ok(Some((num.max(0.0) / den).sqrt()))
}

/// Fictitious ReLU-gate step `w⁺ = w + ηβ 1{⟨w*,x⟩>0} (max(0,⟨w*,x⟩) − ⟨w,x⟩) x`.
pub fn relu_fictitious_update(w: &Vector, w_star: &Vector, beta: f64, eta: f64, x: &Vector) -> Vector {
    let teacher = w_star.dot(x);
    if teacher > 0.0 {
        w + x * (eta * beta * (teacher - w.dot(x)))
    } else {
        w.clone()
    }
}

/// `|max(0,⟨w⁺,x'⟩) − max(0,⟨w,x'⟩)|` along the closed-form flow at time `t`.
pub fn relu_actual_change(flow: &ReluFlow, t: f64, eta: f64, x: &Vector, x_prime: &Vector) -> Result<f64> {
    check_eta(eta)?;
    let w = flow.state(t)?;
    let w_plus = relu_fictitious_update(&w, &flow.spec.w_star, flow.spec.beta, eta, x);
    Ok((w_plus.dot(x_prime).max(0.0) - w.dot(x_prime).max(0.0)).abs())
}

/// `ηβ 1{⟨w*,x⟩>0} |⟨x,x'⟩| |⟨e^{−βMt}(w(0) − w*), x⟩|`.
pub fn relu_change_upper_bound(flow: &ReluFlow, t: f64, eta: f64, x: &Vector, x_prime: &Vector) -> Result<f64> {
    check_eta(eta)?;
    if !(t >= 0.0) {
        return param_err(format!("time must be >= 0, got {t}"));
    }
    if flow.spec.w_star.dot(x) <= 0.0 {
        return Ok(0.0);
    }
    let offset = flow.decay(t, &(&flow.spec.w0 - &flow.spec.w_star));
    Ok(eta * flow.spec.beta * x.dot(x_prime).abs() * offset.dot(x).abs())
}

/// `|⟨x,x'⟩| / ‖x‖²`.
pub fn relu_srel_lower_bound(x: &Vector, x_prime: &Vector) -> Result<f64> {
    let nx = x.norm_squared();
    if nx == 0.0 {
        return param_err("x must be nonzero");
    }
    Ok(x.dot(x_prime).abs() / nx)
}

pub type FeatureFn = Arc<dyn Fn(usize, &Vector) -> Vector + Send + Sync>;

/// Feature maps `β_r` of a weight-homogeneous model.
#[derive(Clone)]
pub enum FeatureMap {
    /// A single unit with `β_1(x) = x`.
    Coordinate,
    /// `β_r(x) = A_r x`.
    Linear(Vec<Matrix>),
    /// Arbitrary `β_r(x)`; called as `f(r, x)`.
    Custom(FeatureFn),
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMap::Coordinate => f.write_str("Coordinate"),
            FeatureMap::Linear(a) => f.debug_tuple("Linear").field(&a.len()).finish(),
            FeatureMap::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// `f(W, x) = α(x) + Σ_r ⟨β_r(x), w_r^d⟩` with coordinatewise powers.
///
/// Row `r` of `weights` is `w_r`; weights are flattened row-major when
/// passed through the generic `S_rel` machinery.
#[derive(Debug, Clone)]
pub struct DHomModel {
    pub degree: u32,
    pub weights: Matrix,
    pub alpha: AlphaSpec,
    pub features: FeatureMap,
    pub input_dim: usize,
}

impl DHomModel {
    pub fn new(degree: u32, weights: Matrix, alpha: AlphaSpec, features: FeatureMap, input_dim: usize) -> Result<Self> {
        if degree == 0 {
            return param_err("degree must be >= 1");
        }
        match &features {
            FeatureMap::Coordinate => {
                if weights.nrows() != 1 || weights.ncols() != input_dim {
                    return Err(Error::Shape(format!(
                        "coordinate features need 1x{input_dim} weights, got {:?}",
                        weights.shape()
                    )));
                }
            }
            FeatureMap::Linear(maps) => {
                if maps.len() != weights.nrows() {
                    return Err(Error::Shape(format!(
                        "{} feature maps for {} weight rows",
                        maps.len(),
                        weights.nrows()
                    )));
                }
                if let Some(a) = maps.iter().find(|a| a.shape() != (weights.ncols(), input_dim)) {
                    return Err(Error::Shape(format!(
                        "feature map is {:?}, expected ({}, {input_dim})",
                        a.shape(),
                        weights.ncols()
                    )));
                }
            }
            FeatureMap::Custom(_) => {}
        }
        Ok(Self { degree, weights, alpha, features, input_dim })
    }

    pub fn width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature(&self, r: usize, x: &Vector) -> Vector {
        match &self.features {
            FeatureMap::Coordinate => x.clone(),
            FeatureMap::Linear(maps) => &maps[r] * x,
            FeatureMap::Custom(f) => f(r, x),
        }
    }

    pub fn flat_weights(&self) -> Vector {
        crate::flows::flatten_rows(&self.weights)
    }

    fn rows<'a>(&'a self, flat: &'a Vector) -> impl Iterator<Item = &'a [f64]> {
        flat.as_slice().chunks(self.weights.ncols())
    }

    pub fn predict_flat(&self, flat: &Vector, x: &Vector) -> f64 {
        let d = self.degree as i32;
        let mut f = self.alpha.eval(x);
        for (r, w) in self.rows(flat).enumerate() {
            let beta = self.feature(r, x);
            f += beta.iter().zip(w).map(|(b, w)| b * w.powi(d)).sum::<f64>();
        }
        f
    }

    pub fn predict(&self, x: &Vector) -> f64 {
        self.predict_flat(&self.flat_weights(), x)
    }

    /// Gradient of `½(y − f)²` in flattened weights.
    pub fn loss_grad_flat(&self, flat: &Vector, x: &Vector, y: f64) -> Vector {
        let d = self.degree as i32;
        let resid = y - self.predict_flat(flat, x);
        let mut g = Vec::with_capacity(flat.len());
        for (r, w) in self.rows(flat).enumerate() {
            let beta = self.feature(r, x);
            g.extend(beta.iter().zip(w).map(|(b, w)| -resid * self.degree as f64 * b * w.powi(d - 1)));
        }
        Vector::from_vec(g)
    }

    /// `Σ_r ⟨u_r ⊙ v_r, w_r^{2(d−1)}⟩` for `u_r = β_r(x)`, `v_r = β_r(x')`,
    /// together with the pieces of the upper bound.
    fn kernel_terms(&self, x: &Vector, x_prime: &Vector) -> KernelTerms {
        let e = 2 * (self.degree as i32 - 1);
        let mut t = KernelTerms::default();
        for r in 0..self.width() {
            let bx = self.feature(r, x);
            let bxp = self.feature(r, x_prime);
            let wpow = self.weights.row(r).map(|w| w.powi(e));
            let cross = bx.component_mul(&bxp);
            t.cross += cross.iter().zip(wpow.iter()).map(|(a, b)| a * b).sum::<f64>();
            t.diag += bx.iter().zip(wpow.iter()).map(|(a, b)| a * a * b).sum::<f64>();
            t.max_cross_norm = t.max_cross_norm.max(cross.norm());
            t.weight_norm_sum += wpow.norm();
        }
        t
    }
}

#[derive(Default)]
struct KernelTerms {
    cross: f64,
    diag: f64,
    max_cross_norm: f64,
    weight_norm_sum: f64,
}

/// η → 0 limit `|Σ_r ⟨β_r(x')⊙β_r(x), w_r^{2(d−1)}⟩| / |Σ_r ⟨β_r(x)², w_r^{2(d−1)}⟩|`.
pub fn srel_dhom_limit_general(model: &DHomModel, x: &Vector, x_prime: &Vector) -> Option<f64> {
    let t = model.kernel_terms(x, x_prime);
    (t.diag.abs() > f64::MIN_POSITIVE).then(|| t.cross.abs() / t.diag.abs())
}

/// `max_r ‖β_r(x')⊙β_r(x)‖ · Σ_r ‖w_r^{2(d−1)}‖ / |Σ_r ⟨β_r(x)², w_r^{2(d−1)}⟩|`.
pub fn srel_dhom_upper_bound(model: &DHomModel, x: &Vector, x_prime: &Vector) -> Option<f64> {
    let t = model.kernel_terms(x, x_prime);
    (t.diag.abs() > f64::MIN_POSITIVE).then(|| t.max_cross_norm * t.weight_norm_sum / t.diag.abs())
}

/// [`srel_generic`] on the squared loss of a [`DHomModel`] at its current weights.
pub fn srel_dhom_generic(model: &DHomModel, x: &Vector, x_prime: &Vector, y: f64, eta: f64) -> Result<SRelSample> {
    srel_generic(
        |w, x| model.predict_flat(w, x),
        |w, x, y: &f64| model.loss_grad_flat(w, x, *y),
        &model.flat_weights(),
        x,
        x_prime,
        &y,
        eta,
    )
}

/// Exact `η → 0` elasticity of the diagonal quadratic model at flow time `t`:
/// `|Σ_r a_r β_r(x')β_r(x) / D_r(t)| / |Σ_r a_r β_r(x)² / D_r(t)|`.
pub fn srel_diag_quad_time(spec: &DiagQuadFlowSpec, beta_x: &Vector, beta_x_prime: &Vector, t: f64) -> Result<Option<f64>> {
    spec.validate()?;
    if beta_x.len() != spec.dim() || beta_x_prime.len() != spec.dim() {
        return Err(Error::Shape(format!(
            "feature vectors must have length {}",
            spec.dim()
        )));
    }
    if !(t >= 0.0) {
        return param_err(format!("time must be >= 0, got {t}"));
    }
    let d = spec.denominators(t);
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..spec.dim() {
        let coef = spec.a[r] / d[r];
        num += coef * beta_x_prime[r] * beta_x[r];
        den += coef * beta_x[r] * beta_x[r];
    }
    Ok((den.abs() > f64::MIN_POSITIVE).then(|| num.abs() / den.abs()))
}

/// Parameters of `f(t) = |α² + b₁e^{−p²t} + c₁e^{−q²t}| / |α² + b₂e^{−p²t} + c₂e^{−q²t}|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaParams {
    pub alpha_sq: f64,
    pub b1: f64,
    pub c1: f64,
    pub b2: f64,
    pub c2: f64,
    pub p_sq: f64,
    pub q_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaEval {
    pub f_value: f64,
    pub lower_bound: f64,
    pub t1_star: f64,
    pub t2_star: f64,
}

const BISECT_ITERS: usize = 200;

impl LemmaParams {
    /// `β² = b₁ + c₁ = b₂ + c₂`.
    pub fn beta_sq(&self) -> f64 {
        self.b1 + self.c1
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_sq, self.b1, self.c1, self.b2, self.c2, self.p_sq, self.q_sq];
        if all.iter().any(|v| !v.is_finite()) {
            return param_err("parameters must be finite");
        }
        if !(self.alpha_sq > 0.0) {
            return param_err(format!("alpha_sq must be positive, got {}", self.alpha_sq));
        }
        if self.b1 < 0.0 || self.b2 < 0.0 {
            return param_err(format!("b1, b2 must be >= 0 (got {}, {})", self.b1, self.b2));
        }
        if !(self.p_sq > 0.0) || !(self.q_sq > 0.0) {
            return param_err("p_sq and q_sq must be positive");
        }
        let (s1, s2) = (self.b1 + self.c1, self.b2 + self.c2);
        let tol = 1e-12 * (1.0 + s1.abs().max(s2.abs()));
        if (s1 - s2).abs() > tol {
            return param_err(format!("b1 + c1 = {s1} differs from b2 + c2 = {s2}"));
        }
        if s1 < -tol {
            return param_err(format!("b1 + c1 = {s1} is not the square of a real number"));
        }
        Ok(())
    }

    pub fn numerator(&self, t: f64) -> f64 {
        self.alpha_sq + self.b1 * (-self.p_sq * t).exp() + self.c1 * (-self.q_sq * t).exp()
    }

    pub fn denominator(&self, t: f64) -> f64 {
        self.alpha_sq + self.b2 * (-self.p_sq * t).exp() + self.c2 * (-self.q_sq * t).exp()
    }

    pub fn f(&self, t: f64) -> f64 {
        self.numerator(t).abs() / self.denominator(t).abs()
    }

    /// Smallest `t₁*` with a positive denominator on `(t₁*, ∞)`.
    ///
    /// The denominator has at most one critical point, so it is monotone on
    /// the two pieces around it and bisection on each piece finds the last
    /// zero.
    pub fn t1_star(&self) -> f64 {
        let g = |t: f64| self.denominator(t);
        if self.c2 >= 0.0 {
            return 0.0;
        }
        // Beyond this time |c₂|e^{−q²t} < α², so g > 0.
        let t_hi = ((-self.c2) / self.alpha_sq).ln().max(0.0) / self.q_sq + 1.0;
        // g'(t) = −p²b₂e^{−p²t} + q²|c₂|e^{−q²t}
        let crit = if self.b2 > 0.0 && self.p_sq != self.q_sq {
            let ratio = self.q_sq * (-self.c2) / (self.p_sq * self.b2);
            let t = ratio.ln() / (self.q_sq - self.p_sq);
            (t > 0.0 && t < t_hi).then_some(t)
        } else {
            None
        };
        let pieces: Vec<(f64, f64)> = match crit {
            Some(c) => vec![(c, t_hi), (0.0, c)],
            None => vec![(0.0, t_hi)],
        };
        for (lo, hi) in pieces {
            let (glo, ghi) = (g(lo), g(hi));
            if glo > 0.0 && ghi > 0.0 {
                continue;
            }
            if ghi <= 0.0 {
                return hi;
            }
            return bisect_last_nonpositive(g, lo, hi);
        }
        0.0
    }

    /// Smallest `t₂*` with `α² − b₁ e^{−q² t₂*} > 0`.
    pub fn t2_star(&self) -> f64 {
        let h = |t: f64| self.alpha_sq - self.b1 * (-self.q_sq * t).exp();
        if h(0.0) > 0.0 {
            return 0.0;
        }
        let mut hi = 1.0 / self.q_sq;
        while h(hi) <= 0.0 {
            hi *= 2.0;
        }
        bisect_last_nonpositive(h, 0.0, hi)
    }

    /// `(α² − |b₁|e^{−q²t₂*}) / (α² + |b₂|e^{−p²t} + β²e^{−q²t})`.
    pub fn lower_bound(&self, t: f64, t2_star: f64) -> f64 {
        let num = self.alpha_sq - self.b1.abs() * (-self.q_sq * t2_star).exp();
        let den = self.alpha_sq + self.b2.abs() * (-self.p_sq * t).exp() + self.beta_sq() * (-self.q_sq * t).exp();
        num / den
    }
}

/// For `g` non-positive at `lo` and positive at `hi` and monotone in
/// between, returns a point just above the last non-positive value.
fn bisect_last_nonpositive(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub fn lemma_bound_eval(params: &LemmaParams, t: f64) -> Result<LemmaEval> {
    params.validate()?;
    if !(t >= 0.0) {
        return param_err(format!("time must be >= 0, got {t}"));
    }
    let t1_star = params.t1_star();
    let t2_star = params.t2_star();
    Ok(LemmaEval {
        f_value: params.f(t),
        lower_bound: params.lower_bound(t, t2_star),
        t1_star,
        t2_star,
    })
}

/// Per-run `S_rel` values on a shared time grid with mean/std across runs.
///
/// `values[run][time][pair]`; runs are stored sorted by id so that the
/// aggregate does not depend on the order in which runs finished.
#[derive(Debug, Clone, PartialEq)]
pub struct SRelSeries {
    pub times: Vec<f64>,
    pub pairs: Vec<String>,
    pub run_ids: Vec<u64>,
    pub values: Vec<Vec<Vec<Option<f64>>>>,
    pub mean: Vec<Vec<Option<f64>>>,
    /// Population standard deviation over the defined runs.
    pub std: Vec<Vec<Option<f64>>>,
    pub defined: Vec<Vec<usize>>,
}

impl SRelSeries {
    pub fn from_runs(
        times: Vec<f64>,
        pairs: Vec<String>,
        mut runs: Vec<(u64, Vec<Vec<Option<f64>>>)>,
    ) -> Result<Self> {
        for (id, run) in &runs {
            if run.len() != times.len() || run.iter().any(|row| row.len() != pairs.len()) {
                return Err(Error::Shape(format!(
                    "run {id} does not match the {}x{} time/pair grid",
                    times.len(),
                    pairs.len()
                )));
            }
        }
        runs.sort_by_key(|(id, _)| *id);
        if runs.windows(2).any(|w| w[0].0 == w[1].0) {
            return param_err("duplicate run ids");
        }
        let mut mean = vec![vec![None; pairs.len()]; times.len()];
        let mut std = mean.clone();
        let mut defined = vec![vec![0; pairs.len()]; times.len()];
        for ti in 0..times.len() {
            for pi in 0..pairs.len() {
                let vals: Vec<f64> = runs.iter().filter_map(|(_, r)| r[ti][pi]).collect();
                defined[ti][pi] = vals.len();
                if let Some((m, s)) = crate::stats::mean_std(&vals) {
                    mean[ti][pi] = Some(m);
                    std[ti][pi] = Some(s);
                }
            }
        }
        let (run_ids, values) = runs.into_iter().unzip();
        Ok(Self { times, pairs, run_ids, values, mean, std, defined })
    }

    /// Mean series of one pair.
    pub fn mean_of(&self, pair: usize) -> Vec<Option<f64>> {
        self.mean.iter().map(|row| row[pair]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{relu_realizable, seeded_rng, standard_normal};
    use crate::flows::ReluFlowSpec;
    use rand::Rng as _;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn linear_predict(w: &Vector, x: &Vector) -> f64 {
        w.dot(x)
    }

    fn linear_grad(w: &Vector, x: &Vector, y: &f64) -> Vector {
        x * (w.dot(x) - y)
    }

    #[test]
    fn generic_reflexive_and_zero_gradient() {
        let w = v(&[0.3, -1.0]);
        let x = v(&[1.0, 2.0]);
        let s = srel_generic(linear_predict, linear_grad, &w, &x, &x, &4.0, 0.1).unwrap();
        assert_eq!(s.value, Some(1.0));
        let y = w.dot(&x);
        let s = srel_generic(linear_predict, linear_grad, &w, &x, &v(&[5.0, 1.0]), &y, 0.1).unwrap();
        assert_eq!(s.value, None);
        assert!(srel_generic(linear_predict, linear_grad, &w, &x, &x, &4.0, 0.0).is_err());
    }

    #[test]
    fn generic_linear_matches_hand_expansion() {
        let mut rng = seeded_rng(3);
        for _ in 0..20 {
            let w = standard_normal(&mut rng, 4);
            let x = standard_normal(&mut rng, 4);
            let xp = standard_normal(&mut rng, 4);
            let y: f64 = rng.random_range(-3.0..3.0);
            let expected = x.dot(&xp).abs() / x.norm_squared();
            for eta in [1e-1, 1e-3, 1e-5] {
                let got = srel_generic(linear_predict, linear_grad, &w, &x, &xp, &y, eta).unwrap();
                let got = got.value.unwrap();
                assert!((got - expected).abs() < 1e-8 * (1.0 + expected), "{got} vs {expected}");
            }
        }
    }

    #[test]
    fn kl_by_hand() {
        let kl = kl_divergence(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        let expected = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.3681).abs() < 1e-4);
        assert_eq!(kl_divergence(&[0.0, 1.0], &[0.5, 0.5]), Some(0.5f64.ln().abs()));
        assert_eq!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), None);
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]), Some(0.0));
    }

    fn softmax_linear(w: &Vector, x: &Vector) -> Vector {
        // two classes, logits (⟨w_0, x⟩, ⟨w_1, x⟩)
        let d = x.len();
        let z0 = w.rows(0, d).dot(x);
        let z1 = w.rows(d, d).dot(x);
        let m = z0.max(z1);
        let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
        v(&[e0 / (e0 + e1), e1 / (e0 + e1)])
    }

    fn softmax_linear_grad(w: &Vector, x: &Vector, y: &usize) -> Vector {
        let p = softmax_linear(w, x);
        let d = x.len();
        let mut g = Vector::zeros(2 * d);
        for c in 0..2 {
            let coef = p[c] - if c == *y { 1.0 } else { 0.0 };
            g.rows_mut(c * d, d).copy_from(&(x * coef));
        }
        g
    }

    #[test]
    fn kl_variant_reflexive_and_undefined() {
        let w = v(&[0.2, -0.1, 0.4, 0.3]);
        let x = v(&[1.0, -0.5]);
        let s = srel_kl(softmax_linear, softmax_linear_grad, &w, &x, &x, 1, 0.5).unwrap();
        assert_eq!(s.value, Some(1.0));
        let zero = |w: &Vector, _: &Vector, _: &usize| Vector::zeros(w.len());
        let s = srel_kl(softmax_linear, zero, &w, &x, &v(&[2.0, 0.0]), 1, 0.5).unwrap();
        assert_eq!(s.value, None);
    }

    #[test]
    fn kl_variant_rejects_non_probabilities() {
        let w = v(&[0.2, -0.1]);
        let x = v(&[1.0, -0.5]);
        let bad = |_: &Vector, _: &Vector| v(&[0.7, 0.7]);
        let g = |w: &Vector, _: &Vector, _: &usize| w * 0.1;
        assert!(matches!(srel_kl(bad, g, &w, &x, &x, 0, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn smooth_single_pair_and_stub() {
        let w = v(&[0.2, -0.1, 0.4, 0.3]);
        let a = [v(&[1.0, 0.5])];
        let b = [v(&[-0.3, 2.0])];
        let direct = srel_kl(softmax_linear, softmax_linear_grad, &w, &b[0], &a[0], 1, 0.1).unwrap();
        let smooth = srel_k_smooth(&a, &b, |xp, x| srel_kl(softmax_linear, softmax_linear_grad, &w, x, xp, 1, 0.1)).unwrap();
        assert_eq!(smooth.value, direct.value);

        let pts = [v(&[0.0]), v(&[1.0])];
        let stub = |xp: &Vector, x: &Vector| {
            let value = 1.0 + 2.0 * xp[0] + x[0];
            Ok(SRelSample { numerator: value, denominator: 1.0, value: Some(value) })
        };
        let s = srel_k_smooth(&pts, &pts, stub).unwrap();
        assert_eq!(s.value, Some(2.5));
        assert_eq!((s.defined, s.total), (4, 4));
    }

    #[test]
    fn smooth_skips_undefined_and_brute_force() {
        let pts = [v(&[0.0]), v(&[1.0])];
        let stub = |xp: &Vector, x: &Vector| {
            Ok(if xp[0] == x[0] { SRelSample::undefined() } else { SRelSample::from_changes(3.0, 1.0, 0.0) })
        };
        let s = srel_k_smooth(&pts, &pts, stub).unwrap();
        assert_eq!((s.value, s.defined, s.total), (Some(3.0), 2, 4));
        let none = srel_k_smooth(&pts, &pts, |_, _| Ok(SRelSample::undefined())).unwrap();
        assert_eq!(none.value, None);
        assert!(srel_k_smooth(&[], &[], |_, _| Ok(SRelSample::undefined())).is_err());

        // Identical point sets under a symmetric model: explicit k x k enumeration.
        let w = v(&[0.5, -0.5, -0.5, 0.5]);
        let set = [v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])];
        let f = |xp: &Vector, x: &Vector| srel_kl(softmax_linear, softmax_linear_grad, &w, x, xp, 0, 0.2);
        let mut manual = Vec::new();
        for xp in &set {
            for x in &set {
                manual.push(f(xp, x).unwrap().value);
            }
        }
        let expected = mean_defined(manual);
        assert_eq!(srel_k_smooth(&set, &set, f).unwrap(), expected);
    }

    fn last_layer_oracle(w: &Matrix, h: &Vector, k: usize, hp: &Vector, lambda1: f64, n: usize, classes: usize, eta: f64) -> Option<f64> {
        let c = n as f64 * lambda1 / classes as f64;
        let (rows, cols) = w.shape();
        let predict = |w: &Vector, h: &Vector| Matrix::from_row_slice(rows, cols, w.as_slice()) * h;
        let grad = |w: &Vector, h: &Vector, k: &usize| {
            let wm = Matrix::from_row_slice(rows, cols, w.as_slice());
            let mut r = &wm * h;
            r[*k] -= 1.0;
            crate::flows::flatten_rows(&(r * h.transpose() + wm * c))
        };
        srel_generic_vector(predict, grad, &crate::flows::flatten_rows(w), h, hp, &k, eta).unwrap().value
    }

    #[test]
    fn last_layer_reflexive_and_zero_weights() {
        let h = v(&[0.5, 1.0, 0.0]);
        let hp = v(&[2.0, -1.0, 3.0]);
        let w = Matrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64 * 0.1);
        assert!((srel_last_layer_closed_form(&w, &h, 1, &h, 0.3, 40, 2).unwrap().unwrap() - 1.0).abs() < 1e-14);
        let zero = Matrix::zeros(2, 3);
        let got = srel_last_layer_closed_form(&zero, &h, 0, &hp, 0.3, 40, 2).unwrap().unwrap();
        assert!((got - h.dot(&hp).abs() / h.norm_squared()).abs() < 1e-15);
    }

    #[test]
    fn last_layer_matches_generic_oracle() {
        let mut rng = seeded_rng(21);
        for _ in 0..10 {
            let w = Matrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
            let h = standard_normal(&mut rng, 4);
            let hp = standard_normal(&mut rng, 4);
            let closed = srel_last_layer_closed_form(&w, &h, 2, &hp, 0.7, 90, 3).unwrap().unwrap();
            for eta in [1e-1, 1e-3] {
                let oracle = last_layer_oracle(&w, &h, 2, &hp, 0.7, 90, 3, eta).unwrap();
                assert!((closed - oracle).abs() < 1e-10 * closed, "{closed} vs {oracle}");
            }
        }
    }

    fn relu_flow() -> ReluFlow {
        let w_star = v(&[1.0, 0.5, -0.5]);
        let dataset = relu_realizable(&w_star, 500, 4).unwrap();
        ReluFlow::new(ReluFlowSpec { dataset, beta: 1.0, w_star, w0: v(&[-0.3, 0.2, 0.9]) }).unwrap()
    }

    #[test]
    fn relu_bound_trivial_cases() {
        let flow = relu_flow();
        let neg = v(&[-1.0, 0.0, 0.0]);
        assert_eq!(relu_change_upper_bound(&flow, 0.5, 0.1, &neg, &v(&[1.0, 1.0, 1.0])).unwrap(), 0.0);
        assert_eq!(relu_actual_change(&flow, 0.5, 0.1, &neg, &v(&[1.0, 1.0, 1.0])).unwrap(), 0.0);
        let x = v(&[1.0, 0.0, 0.0]);
        assert_eq!(relu_change_upper_bound(&flow, 0.5, 0.1, &x, &v(&[0.0, 2.0, -1.0])).unwrap(), 0.0);
    }

    #[test]
    fn relu_actual_change_below_bound() {
        let flow = relu_flow();
        let mut rng = seeded_rng(12);
        for _ in 0..200 {
            let x = standard_normal(&mut rng, 3);
            let xp = standard_normal(&mut rng, 3);
            let t = rng.random_range(0.0..3.0);
            let actual = relu_actual_change(&flow, t, 0.05, &x, &xp).unwrap();
            let bound = relu_change_upper_bound(&flow, t, 0.05, &x, &xp).unwrap();
            assert!(actual <= bound * (1.0 + 1e-9) + 1e-15, "{actual} > {bound}");
        }
    }

    #[test]
    fn relu_lower_bound_values() {
        let x = Vector::from_element(10, 10.0);
        let xp = Vector::from_element(10, 200f64.sqrt());
        let b = relu_srel_lower_bound(&x, &xp).unwrap();
        assert!((b - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(relu_srel_lower_bound(&x, &x).unwrap(), 1.0);
        assert_eq!(relu_srel_lower_bound(&v(&[1.0, 0.0]), &v(&[0.0, 3.0])).unwrap(), 0.0);
        assert!(relu_srel_lower_bound(&v(&[0.0, 0.0]), &x).is_err());
    }

    fn random_dhom(rng: &mut crate::data::Rng, degree: u32, width: usize, m: usize, n: usize) -> DHomModel {
        let maps = (0..width).map(|_| Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))).collect();
        let w = Matrix::from_fn(width, m, |_, _| rng.random_range(-1.5..1.5));
        DHomModel::new(degree, w, AlphaSpec::Zero, FeatureMap::Linear(maps), n).unwrap()
    }

    #[test]
    fn dhom_limit_cases() {
        let mut rng = seeded_rng(5);
        let model = random_dhom(&mut rng, 2, 2, 2, 2);
        let x = v(&[0.3, -1.2]);
        assert!((srel_dhom_limit_general(&model, &x, &x).unwrap() - 1.0).abs() < 1e-15);

        // d = 1: weights drop out.
        let m1 = random_dhom(&mut rng, 1, 2, 3, 2);
        let mut m1b = m1.clone();
        m1b.weights *= 7.0;
        let xp = v(&[1.0, 0.4]);
        assert_eq!(srel_dhom_limit_general(&m1, &x, &xp), srel_dhom_limit_general(&m1b, &x, &xp));
    }

    #[test]
    fn dhom_limit_matches_small_eta() {
        let mut rng = seeded_rng(8);
        let model = random_dhom(&mut rng, 2, 2, 2, 2);
        let x = v(&[0.7, -0.4]);
        let xp = v(&[0.2, 1.1]);
        let limit = srel_dhom_limit_general(&model, &x, &xp).unwrap();
        let s = srel_dhom_generic(&model, &x, &xp, 2.0, 1e-7).unwrap().value.unwrap();
        assert!((s - limit).abs() < 1e-4 * limit);
        // First-order convergence in η.
        let e1 = (srel_dhom_generic(&model, &x, &xp, 2.0, 1e-3).unwrap().value.unwrap() - limit).abs();
        let e2 = (srel_dhom_generic(&model, &x, &xp, 2.0, 5e-4).unwrap().value.unwrap() - limit).abs();
        assert!((e1 / e2 - 2.0).abs() < 0.1, "ratio {}", e1 / e2);
    }

    #[test]
    fn dhom_bound_cases() {
        let w = Matrix::from_element(1, 1, 0.8);
        let model = DHomModel::new(3, w, AlphaSpec::Zero, FeatureMap::Coordinate, 1).unwrap();
        let (x, xp) = (v(&[1.3]), v(&[-0.4]));
        let lim = srel_dhom_limit_general(&model, &x, &xp).unwrap();
        let ub = srel_dhom_upper_bound(&model, &x, &xp).unwrap();
        assert!((lim - ub).abs() < 1e-15 * ub);

        let w = Matrix::from_row_slice(1, 4, &[1.0, 0.5, 2.0, 1.5]);
        let model = DHomModel::new(2, w, AlphaSpec::Zero, FeatureMap::Coordinate, 4).unwrap();
        let (x, xp) = (v(&[1.0, 2.0, 0.0, 0.0]), v(&[0.0, 0.0, 3.0, 1.0]));
        assert_eq!(srel_dhom_upper_bound(&model, &x, &xp), Some(0.0));
        assert_eq!(srel_dhom_limit_general(&model, &x, &xp), Some(0.0));
    }

    #[test]
    fn dhom_custom_features_match_linear() {
        let mut rng = seeded_rng(30);
        let model = random_dhom(&mut rng, 3, 3, 2, 2);
        let FeatureMap::Linear(maps) = model.features.clone() else { unreachable!() };
        let custom: FeatureFn = Arc::new(move |r, x| &maps[r] * x);
        let twin = DHomModel::new(3, model.weights.clone(), AlphaSpec::Zero, FeatureMap::Custom(custom), 2).unwrap();
        let (x, xp) = (v(&[0.1, 0.9]), v(&[-0.5, 0.5]));
        assert_eq!(model.predict(&x), twin.predict(&x));
        assert_eq!(srel_dhom_limit_general(&model, &x, &xp), srel_dhom_limit_general(&twin, &x, &xp));
    }

    fn paper_quad() -> DiagQuadFlowSpec {
        DiagQuadFlowSpec::new(v(&[1.0, 4.0, 9.0]), v(&[1.0; 3]), 1e-3, v(&[0.5, 2.0, 4.0])).unwrap()
    }

    #[test]
    fn diag_quad_paper_values() {
        let spec = paper_quad();
        let (x, xp) = (v(&[1.0, -1.0, 1.0]), v(&[1.01, 0.999, 1.2]));
        let late = srel_diag_quad_time(&spec, &x, &xp, 1e6).unwrap().unwrap();
        assert!((late - (1.01 - 3.996 + 10.8) / 14.0).abs() < 1e-12);
        assert!((late - 0.5581).abs() < 1e-4);
        let start = srel_diag_quad_time(&spec, &x, &xp, 0.0).unwrap().unwrap();
        assert!((start - (0.505 - 1.998 + 4.8) / 6.5).abs() < 1e-12);
        assert!((start - 0.5088).abs() < 1e-4);
        assert_eq!(srel_diag_quad_time(&spec, &x, &x, 37.0).unwrap(), Some(1.0));
    }

    #[test]
    fn diag_quad_time_matches_limit_on_flow() {
        let spec = paper_quad();
        let (x, xp) = (v(&[1.0, -11.0, 1.0]), v(&[1.01, 0.999, 1.2]));
        for t in [0.0, 10.0, 250.0, 1000.0] {
            let w = spec.weights(t).unwrap();
            let model = DHomModel::new(2, Matrix::from_row_slice(1, 3, w.as_slice()), AlphaSpec::Zero, FeatureMap::Coordinate, 3).unwrap();
            let a = srel_diag_quad_time(&spec, &x, &xp, t).unwrap().unwrap();
            let b = srel_dhom_limit_general(&model, &x, &xp).unwrap();
            assert!((a - b).abs() < 1e-12 * b, "t = {t}: {a} vs {b}");
        }
    }

    #[test]
    fn lemma_degenerate_and_validation() {
        let p = LemmaParams { alpha_sq: 2.0, b1: 0.0, c1: 0.0, b2: 0.0, c2: 0.0, p_sq: 1.0, q_sq: 0.5 };
        for t in [0.0, 1.0, 10.0] {
            let e = lemma_bound_eval(&p, t).unwrap();
            assert_eq!((e.f_value, e.lower_bound), (1.0, 1.0));
        }
        let bad = LemmaParams { b1: -1.0, c1: 1.0, ..p };
        assert!(lemma_bound_eval(&bad, 0.0).is_err());
        let bad = LemmaParams { b1: 1.0, c1: 0.0, b2: 0.5, c2: 0.0, ..p };
        assert!(lemma_bound_eval(&bad, 0.0).is_err());
        let bad = LemmaParams { b1: 1.0, c1: -2.0, b2: 0.0, c2: -1.0, ..p };
        assert!(lemma_bound_eval(&bad, 0.0).is_err());
    }

    #[test]
    fn lemma_thresholds_and_late_limit() {
        let p = LemmaParams { alpha_sq: 0.5, b1: 2.0, c1: -1.0, b2: 0.2, c2: 0.8, p_sq: 2.0, q_sq: 0.3 };
        let e = lemma_bound_eval(&p, 100.0).unwrap();
        assert_eq!(e.t1_star, 0.0);
        let root = (p.b1 / p.alpha_sq).ln() / p.q_sq;
        assert!(e.t2_star >= root && e.t2_star - root < 1e-9);
        assert!((e.f_value - 1.0).abs() < 1e-9);
        let limit = (p.alpha_sq - p.b1 * (-p.q_sq * e.t2_star).exp()) / p.alpha_sq;
        assert!((e.lower_bound - limit).abs() < 1e-9);
        assert!(e.lower_bound <= e.f_value);

        let q = LemmaParams { alpha_sq: 0.1, b1: 0.0, c1: 1.0, b2: 0.0, c2: 1.0, p_sq: 1.0, q_sq: 1.0 };
        let q = LemmaParams { b2: 3.0, c2: -2.0, ..q };
        let t1 = q.t1_star();
        assert!(q.denominator(t1 * (1.0 - 1e-6)) <= 0.0 || t1 == 0.0);
        for i in 1..100 {
            assert!(q.denominator(t1 + i as f64 * 0.1) > 0.0);
        }
    }

    #[test]
    fn series_aggregation() {
        let pairs = vec!["a".to_string()];
        let single = SRelSeries::from_runs(vec![0.0, 1.0], pairs.clone(), vec![(4, vec![vec![Some(2.0)], vec![None]])]).unwrap();
        assert_eq!(single.mean, vec![vec![Some(2.0)], vec![None]]);
        assert_eq!(single.std[0][0], Some(0.0));
        assert_eq!(single.defined, vec![vec![1], vec![0]]);

        let runs = vec![(1, vec![vec![Some(1.0)]]), (2, vec![vec![Some(3.0)]])];
        let s = SRelSeries::from_runs(vec![0.0], pairs.clone(), runs.clone()).unwrap();
        assert_eq!((s.mean[0][0], s.std[0][0]), (Some(2.0), Some(1.0)));
        let flipped = SRelSeries::from_runs(vec![0.0], pairs.clone(), runs.into_iter().rev().collect()).unwrap();
        assert_eq!(s, flipped);
        assert!(SRelSeries::from_runs(vec![0.0], pairs, vec![(1, vec![vec![]])]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn bound_dominates_limit(seed in 0u64..100_000, degree in 1u32..4, width in 1usize..4) {
                let mut rng = seeded_rng(seed);
                let model = random_dhom(&mut rng, degree, width, 3, 3);
                let x = standard_normal(&mut rng, 3);
                let xp = standard_normal(&mut rng, 3);
                if let (Some(l), Some(u)) = (srel_dhom_limit_general(&model, &x, &xp), srel_dhom_upper_bound(&model, &x, &xp)) {
                    prop_assert!(l <= u * (1.0 + 1e-12));
                }
            }

            #[test]
            fn reflexivity(seed in 0u64..100_000) {
                let mut rng = seeded_rng(seed);
                let model = random_dhom(&mut rng, 2, 2, 3, 3);
                let x = standard_normal(&mut rng, 3);
                if let Some(l) = srel_dhom_limit_general(&model, &x, &x) {
                    prop_assert_eq!(l, 1.0);
                }
                let s = srel_dhom_generic(&model, &x, &x, 1.0, 1e-3).unwrap();
                if let Some(val) = s.value {
                    prop_assert_eq!(val, 1.0);
                }
                let w = Matrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
                if let Some(val) = srel_last_layer_closed_form(&w, &x, 0, &x, 0.5, 10, 2).unwrap() {
                    prop_assert!((val - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
