//! Closed-form gradient-flow trajectories for the three solvable models,
//! plus a fixed-step RK4 integrator used to check them.

use crate::data::{DatasetReal, FeatureBank};
use crate::error::{param_err, Error, Result};
use crate::linalg::{Matrix, SymEigen, Vector};

/// A flow `dw/dt = rhs(w)` with a closed-form solution.
///
/// States are flattened into a single [`Vector`]; see each implementor for
/// the layout.
pub trait GradientFlow: Sized {
    fn initial(&self) -> Vector;
    fn state(&self, t: f64) -> Result<Vector>;
    fn rhs(&self, w: &Vector) -> Vector;
    /// The same flow restarted from `w0`.
    fn with_initial(&self, w0: &Vector) -> Result<Self>;
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return param_err(format!("time must be finite and >= 0, got {t}"));
    }
    Ok(())
}

/// Row-major flattening of a `K x p` weight matrix (row `q` is `w_q`).
pub fn flatten_rows(w: &Matrix) -> Vector {
    Vector::from_iterator(w.len(), w.transpose().iter().copied())
}

pub fn unflatten_rows(v: &Vector, rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::Shape(format!(
            "flat state has length {}, expected {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Matrix::from_row_slice(rows, cols, v.as_slice()))
}

#[derive(Debug, Clone)]
pub struct LinearFlowSpec {
    pub features: FeatureBank,
    pub lambda1: f64,
    pub theta: f64,
    pub beta_sq: f64,
    /// `K x p`, row `q` is `w_q(0)`.
    pub w0: Matrix,
}

/// Ridge-regularized last-layer flow `dw_q/dt = θ²(β² u_q − M w_q)` with
/// `M = (Nλ₁/K) I + (1/N) Σ h hᵀ` and `u_q = (1/N) Σ_{i ∈ class q} h_{q,i}`.
#[derive(Debug, Clone)]
pub struct LinearFlow {
    pub spec: LinearFlowSpec,
    pub m: Matrix,
    /// `K x p`, row `q` is `u_q`.
    pub u: Matrix,
    eig: SymEigen,
    /// `K x p`, row `q` is `β² M⁻¹ u_q`.
    pub fixed_point: Matrix,
}

impl LinearFlow {
    pub fn new(spec: LinearFlowSpec) -> Result<Self> {
        let k = spec.features.num_classes();
        let p = spec.features.dim();
        let n = spec.features.total();
        if k == 0 || n == 0 {
            return param_err("feature bank is empty");
        }
        if !(spec.lambda1 > 0.0) {
            return param_err(format!("lambda1 must be positive, got {}", spec.lambda1));
        }
        if !spec.theta.is_finite() || !spec.beta_sq.is_finite() {
            return param_err("theta and beta_sq must be finite");
        }
        if spec.w0.shape() != (k, p) {
            return Err(Error::Shape(format!(
                "w0 is {:?}, expected ({k}, {p})",
                spec.w0.shape()
            )));
        }
        let nf = n as f64;
        let mut m = Matrix::identity(p, p) * (nf * spec.lambda1 / k as f64);
        let mut u = Matrix::zeros(k, p);
        for (q, class) in spec.features.features.iter().enumerate() {
            for h in class {
                m.ger(1.0 / nf, h, h, 1.0);
                let mut row = u.row_mut(q);
                row += h.transpose() / nf;
            }
        }
        let eig = SymEigen::new(&m)?;
        if !eig.is_pd() {
            return Err(Error::Singular { min_eigenvalue: eig.min_eigenvalue() });
        }
        let mut fixed_point = Matrix::zeros(k, p);
        for q in 0..k {
            let sol = eig.solve(&(u.row(q).transpose() * spec.beta_sq))?;
            fixed_point.set_row(q, &sol.transpose());
        }
        Ok(Self { spec, m, u, eig, fixed_point })
    }

    pub fn num_classes(&self) -> usize {
        self.u.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.u.ncols()
    }

    /// `Nλ₁/K`.
    pub fn ridge(&self) -> f64 {
        let f = &self.spec.features;
        f.total() as f64 * self.spec.lambda1 / f.num_classes() as f64
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eig
    }

    /// `W(t)` with rows `w_q(t) = e^{−θ²Mt}(w_q(0) − β²M⁻¹u_q) + β²M⁻¹u_q`.
    pub fn state_matrix(&self, t: f64) -> Result<Matrix> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(self.spec.w0.clone());
        }
        let rate = self.spec.theta * self.spec.theta * t;
        let mut out = self.fixed_point.clone();
        for q in 0..self.num_classes() {
            let offset = (self.spec.w0.row(q) - self.fixed_point.row(q)).transpose();
            let decayed = self.eig.apply_spectrum(|l| (-l * rate).exp(), &offset);
            let mut row = out.row_mut(q);
            row += decayed.transpose();
        }
        Ok(out)
    }

    /// Empirical loss `(1/N) Σ ½‖β² e_k − W h‖² + (Nλ₁/2K) ‖W‖²_F`.
    pub fn loss(&self, w: &Matrix) -> f64 {
        // Expanded form: ½β⁴ − β² Σ_q ⟨w_q, u_q⟩ + ½ tr(W M Wᵀ).
        let b2 = self.spec.beta_sq;
        let cross: f64 = w.component_mul(&self.u).sum();
        let quad = (w * &self.m).component_mul(w).sum();
        0.5 * b2 * b2 - b2 * cross + 0.5 * quad
    }

    /// `∇_W` of [`Self::loss`], i.e. `W M − β² U`.
    pub fn loss_grad(&self, w: &Matrix) -> Matrix {
        w * &self.m - &self.u * self.spec.beta_sq
    }
}

impl GradientFlow for LinearFlow {
    fn initial(&self) -> Vector {
        flatten_rows(&self.spec.w0)
    }

    fn state(&self, t: f64) -> Result<Vector> {
        Ok(flatten_rows(&self.state_matrix(t)?))
    }

    fn rhs(&self, w: &Vector) -> Vector {
        let w = Matrix::from_row_slice(self.num_classes(), self.feature_dim(), w.as_slice());
        let th2 = self.spec.theta * self.spec.theta;
        flatten_rows(&(-self.loss_grad(&w) * th2))
    }

    fn with_initial(&self, w0: &Vector) -> Result<Self> {
        let mut out = self.clone();
        out.spec.w0 = unflatten_rows(w0, self.num_classes(), self.feature_dim())?;
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ReluFlowSpec {
    pub dataset: DatasetReal,
    pub beta: f64,
    pub w_star: Vector,
    pub w0: Vector,
}

/// Teacher-student ReLU flow `dw/dt = β(z − M w)` with
/// `M = E[1{⟨w*,x⟩>0} x xᵀ]` and `z = E[1{⟨w*,x⟩>0} y x]` taken over the
/// dataset.
#[derive(Debug, Clone)]
pub struct ReluFlow {
    pub spec: ReluFlowSpec,
    pub m: Matrix,
    pub z: Vector,
    eig: SymEigen,
    /// `M⁻¹ z`; equals `w*` for exactly realizable labels.
    pub fixed_point: Vector,
}

impl ReluFlow {
    pub fn new(spec: ReluFlowSpec) -> Result<Self> {
        let d = spec.w_star.len();
        if spec.dataset.is_empty() {
            return param_err("dataset is empty");
        }
        if spec.dataset.dim() != d || spec.w0.len() != d {
            return Err(Error::Shape(format!(
                "w*, w0 and inputs must share a dimension (got {d}, {}, {})",
                spec.w0.len(),
                spec.dataset.dim()
            )));
        }
        if !(spec.beta > 0.0) {
            return param_err(format!("beta must be positive, got {}", spec.beta));
        }
        let n = spec.dataset.len() as f64;
        let mut m = Matrix::zeros(d, d);
        let mut z = Vector::zeros(d);
        for (x, y) in spec.dataset.iter() {
            if spec.w_star.dot(x) > 0.0 {
                m.ger(1.0 / n, x, x, 1.0);
                z.axpy(y / n, x, 1.0);
            }
        }
        let eig = SymEigen::new(&m)?;
        let fixed_point = eig.solve(&z)?;
        Ok(Self { spec, m, z, eig, fixed_point })
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eig
    }

    /// `e^{−βMt} v`.
    pub fn decay(&self, t: f64, v: &Vector) -> Vector {
        let rate = self.spec.beta * t;
        self.eig.apply_spectrum(|l| (-l * rate).exp(), v)
    }
}

impl GradientFlow for ReluFlow {
    fn initial(&self) -> Vector {
        self.spec.w0.clone()
    }

    /// `e^{−βMt} w(0) + M⁻¹(I − e^{−βMt}) z`, evaluated as
    /// `M⁻¹z + e^{−βMt}(w(0) − M⁻¹z)`.
    fn state(&self, t: f64) -> Result<Vector> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(self.spec.w0.clone());
        }
        Ok(&self.fixed_point + self.decay(t, &(&self.spec.w0 - &self.fixed_point)))
    }

    fn rhs(&self, w: &Vector) -> Vector {
        (&self.z - &self.m * w) * self.spec.beta
    }

    fn with_initial(&self, w0: &Vector) -> Result<Self> {
        if w0.len() != self.spec.w0.len() {
            return Err(Error::Shape("initial state has the wrong length".into()));
        }
        let mut out = self.clone();
        out.spec.w0 = w0.clone();
        Ok(out)
    }
}

/// Diagonal quadratic-feature flow `dw_q/dt = 2θ(a_q w_q − b_q w_q³)`.
///
/// The state is tracked in squared coordinates `u_q = w_q²`, which obey the
/// logistic equation `du_q/dt = 4θ(a_q u_q − b_q u_q²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagQuadFlowSpec {
    pub a: Vector,
    pub b: Vector,
    pub theta: f64,
    pub w0_sq: Vector,
}

impl DiagQuadFlowSpec {
    pub fn new(a: Vector, b: Vector, theta: f64, w0_sq: Vector) -> Result<Self> {
        let spec = Self { a, b, theta, w0_sq };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        if self.b.len() != n || self.w0_sq.len() != n {
            return Err(Error::Shape(format!(
                "a, b, w0_sq lengths differ ({n}, {}, {})",
                self.b.len(),
                self.w0_sq.len()
            )));
        }
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return param_err(format!("theta must be positive, got {}", self.theta));
        }
        for q in 0..n {
            let (a, b, w) = (self.a[q], self.b[q], self.w0_sq[q]);
            if !(a > 0.0) || !(b > 0.0) {
                return param_err(format!("a[{q}] and b[{q}] must be positive (got {a}, {b})"));
            }
            if !(w > 0.0 && w < a / b) {
                return param_err(format!("w0_sq[{q}] = {w} must lie in (0, a/b = {})", a / b));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `D_q(t) = b_q + (a_q/w_q(0)² − b_q) e^{−4θ a_q t}`.
    pub fn denominators(&self, t: f64) -> Vector {
        Vector::from_fn(self.dim(), |q, _| {
            let (a, b) = (self.a[q], self.b[q]);
            b + (a / self.w0_sq[q] - b) * (-4.0 * self.theta * a * t).exp()
        })
    }

    /// `w_q(t)² = a_q / D_q(t)`.
    pub fn squared_weights(&self, t: f64) -> Result<Vector> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(self.w0_sq.clone());
        }
        Ok(self.a.component_div(&self.denominators(t)))
    }

    /// Positive square roots of [`Self::squared_weights`].
    pub fn weights(&self, t: f64) -> Result<Vector> {
        Ok(self.squared_weights(t)?.map(f64::sqrt))
    }

    pub fn limit(&self) -> Vector {
        self.a.component_div(&self.b)
    }
}

impl GradientFlow for DiagQuadFlowSpec {
    fn initial(&self) -> Vector {
        self.w0_sq.clone()
    }

    fn state(&self, t: f64) -> Result<Vector> {
        self.squared_weights(t)
    }

    fn rhs(&self, u: &Vector) -> Vector {
        Vector::from_fn(self.dim(), |q, _| {
            4.0 * self.theta * (self.a[q] * u[q] - self.b[q] * u[q] * u[q])
        })
    }

    fn with_initial(&self, w0: &Vector) -> Result<Self> {
        DiagQuadFlowSpec::new(self.a.clone(), self.b.clone(), self.theta, w0.clone())
    }
}

pub fn linear_flow_state(flow: &LinearFlow, t: f64) -> Result<Matrix> {
    flow.state_matrix(t)
}

pub fn relu_flow_state(flow: &ReluFlow, t: f64) -> Result<Vector> {
    flow.state(t)
}

pub fn diag_quad_flow_state(spec: &DiagQuadFlowSpec, t: f64) -> Result<Vector> {
    spec.squared_weights(t)
}

/// Classical fourth-order Runge-Kutta with `steps` equal steps on `[0, t_end]`.
pub fn rk4_integrate<F>(rhs: F, w0: &Vector, t_end: f64, steps: usize) -> Result<Vector>
where
    F: Fn(f64, &Vector) -> Vector,
{
    if steps == 0 {
        return param_err("steps must be >= 1");
    }
    let h = t_end / steps as f64;
    let mut w = w0.clone();
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = rhs(t, &w);
        let k2 = rhs(t + 0.5 * h, &(&w + &k1 * (0.5 * h)));
        let k3 = rhs(t + 0.5 * h, &(&w + &k2 * (0.5 * h)));
        let k4 = rhs(t + h, &(&w + &k3 * h));
        w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(w)
}

/// Integrates `flow` numerically from its initial state to `t_end`.
pub fn rk4_flow<F: GradientFlow>(flow: &F, t_end: f64, steps: usize) -> Result<Vector> {
    rk4_integrate(|_, w| flow.rhs(w), &flow.initial(), t_end, steps)
}

/// `‖dw/dt − rhs(w(t))‖` with the derivative of the closed form taken by
/// central differences (second-order one-sided differences when `t < h`).
pub fn ode_residual<F: GradientFlow>(flow: &F, t: f64, h: f64) -> Result<f64> {
    check_time(t)?;
    if !(h > 0.0) {
        return param_err(format!("finite-difference step must be positive, got {h}"));
    }
    let deriv = if t >= h {
        (flow.state(t + h)? - flow.state(t - h)?) / (2.0 * h)
    } else {
        (flow.state(t)? * -3.0 + flow.state(t + h)? * 4.0 - flow.state(t + 2.0 * h)?) / (2.0 * h)
    };
    Ok((deriv - flow.rhs(&flow.state(t)?)).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_blobs, random_relu_features, relu_realizable};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn rel_err(a: &Vector, b: &Vector) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    fn paper_quad() -> DiagQuadFlowSpec {
        DiagQuadFlowSpec::new(v(&[1.0, 4.0, 9.0]), v(&[1.0; 3]), 1e-3, v(&[0.5, 2.0, 4.0])).unwrap()
    }

    fn small_linear(theta: f64) -> LinearFlow {
        let ds = gaussian_blobs(4, &[v(&[1.0; 4]), v(&[3.0; 4])], &[2.0, 1.0], 15, 1).unwrap();
        let features = random_relu_features(4, 5, &ds, 2).unwrap();
        let w0 = Matrix::from_fn(2, 5, |i, j| ((i * 5 + j) as f64 * 0.37).sin());
        LinearFlow::new(LinearFlowSpec { features, lambda1: 0.05, theta, beta_sq: 1.0, w0 }).unwrap()
    }

    fn small_relu() -> ReluFlow {
        let w_star = v(&[1.0, -0.5, 0.25]);
        let dataset = relu_realizable(&w_star, 400, 6).unwrap();
        ReluFlow::new(ReluFlowSpec { dataset, beta: 0.8, w_star, w0: v(&[0.1, 0.2, -0.3]) }).unwrap()
    }

    #[test]
    fn linear_flow_endpoints() {
        let flow = small_linear(0.5);
        assert_eq!(flow.state_matrix(0.0).unwrap(), flow.spec.w0);
        let th2 = 0.25;
        let t = 41.0 / (th2 * flow.eigen().min_eigenvalue());
        let late = flow.state_matrix(t).unwrap();
        assert!((late - &flow.fixed_point).amax() < 1e-12);
    }

    #[test]
    fn linear_flow_matches_rk4() {
        let flow = small_linear(0.5);
        let t = 1.0 / (0.25 * flow.eigen().max_eigenvalue());
        let exact = flow.state(t).unwrap();
        let numeric = rk4_flow(&flow, t, 2000).unwrap();
        assert!(rel_err(&numeric, &exact) < 1e-7);
        let resid = ode_residual(&flow, t, 1e-5).unwrap();
        assert!(resid < 1e-6 * (1.0 + flow.rhs(&exact).norm()));
    }

    #[test]
    fn zero_features_decay_to_zero() {
        let features = FeatureBank::new(vec![vec![Vector::zeros(3); 4], vec![Vector::zeros(3); 4]]).unwrap();
        let w0 = Matrix::from_element(2, 3, 0.7);
        let flow = LinearFlow::new(LinearFlowSpec { features, lambda1: 1.0, theta: 1.0, beta_sq: 1.0, w0 }).unwrap();
        assert_eq!(flow.fixed_point, Matrix::zeros(2, 3));
        assert_eq!(flow.loss(&Matrix::zeros(2, 3)), 0.5);
        assert!(flow.state_matrix(10.0).unwrap().amax() < 1e-15);
    }

    #[test]
    fn linear_loss_matches_direct_sum() {
        let flow = small_linear(1.0);
        let w = &flow.spec.w0;
        let c = flow.ridge();
        let n = flow.spec.features.total() as f64;
        let mut direct = 0.5 * c * w.norm_squared();
        for (k, class) in flow.spec.features.features.iter().enumerate() {
            for h in class {
                let mut r = -(w * h);
                r[k] += 1.0;
                direct += 0.5 * r.norm_squared() / n;
            }
        }
        assert!((flow.loss(w) - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn linear_rejects_nonpositive_ridge() {
        let flow = small_linear(1.0);
        let mut spec = flow.spec.clone();
        spec.lambda1 = 0.0;
        assert!(LinearFlow::new(spec).is_err());
    }

    #[test]
    fn relu_flow_limit_and_consistency() {
        let flow = small_relu();
        assert_eq!(flow.state(0.0).unwrap(), flow.spec.w0);
        let mw = &flow.m * &flow.spec.w_star;
        assert!((mw - &flow.z).norm() / flow.z.norm() < 1e-12);
        let t = 40.0 / (flow.spec.beta * flow.eigen().min_eigenvalue());
        assert!((flow.state(t).unwrap() - &flow.spec.w_star).norm() < 1e-10);
    }

    #[test]
    fn relu_flow_matches_rk4_and_residual() {
        let flow = small_relu();
        let t = 1.3;
        let exact = flow.state(t).unwrap();
        assert!(rel_err(&rk4_flow(&flow, t, 1000).unwrap(), &exact) < 1e-7);
        for i in 0..10 {
            let t = 0.25 * i as f64;
            assert!(ode_residual(&flow, t, 1e-5).unwrap() < 1e-6);
        }
    }

    #[test]
    fn relu_rejects_degenerate_moment_matrix() {
        // All inputs on the negative side of w*: M = 0.
        let w_star = v(&[1.0, 0.0]);
        let dataset = DatasetReal::new(vec![v(&[-1.0, 0.3]), v(&[-2.0, 1.0])], vec![0.0, 0.0], 0).unwrap();
        let err = ReluFlow::new(ReluFlowSpec { dataset, beta: 1.0, w_star, w0: v(&[0.0, 0.0]) });
        assert!(matches!(err, Err(Error::Singular { .. })));
    }

    #[test]
    fn diag_quad_endpoints() {
        let spec = paper_quad();
        assert_eq!(spec.squared_weights(0.0).unwrap(), spec.w0_sq);
        let late = spec.squared_weights(1e5).unwrap();
        assert!((late - v(&[1.0, 4.0, 9.0])).amax() < 1e-12);
    }

    #[test]
    fn diag_quad_matches_rk4() {
        let spec = paper_quad();
        for t in [1.0, 100.0, 500.0, 2000.0] {
            let exact = spec.state(t).unwrap();
            let numeric = rk4_flow(&spec, t, 10_000).unwrap();
            assert!(rel_err(&numeric, &exact) < 1e-7, "t = {t}");
        }
        assert!(ode_residual(&spec, 0.0, 1e-3).unwrap() < 1e-6);
    }

    #[test]
    fn diag_quad_monotone_and_bounded() {
        let spec = paper_quad();
        let mut prev = spec.squared_weights(0.0).unwrap();
        for i in 1..200 {
            let cur = spec.squared_weights(i as f64).unwrap();
            for q in 0..3 {
                assert!(cur[q] > prev[q]);
                assert!(cur[q] < spec.a[q] / spec.b[q]);
            }
            prev = cur;
        }
    }

    #[test]
    fn diag_quad_validation() {
        let ok = paper_quad();
        assert!(DiagQuadFlowSpec::new(ok.a.clone(), v(&[1.0, 0.0, 1.0]), 1e-3, ok.w0_sq.clone()).is_err());
        assert!(DiagQuadFlowSpec::new(ok.a.clone(), ok.b.clone(), 1e-3, v(&[0.5, 5.0, 4.0])).is_err());
        assert!(DiagQuadFlowSpec::new(ok.a.clone(), ok.b.clone(), 1e-3, v(&[0.0, 2.0, 4.0])).is_err());
        assert!(DiagQuadFlowSpec::new(ok.a, ok.b, 0.0, ok.w0_sq).is_err());
    }

    #[test]
    fn semigroup_for_all_flows() {
        fn check<F: GradientFlow>(flow: &F, t: f64) {
            let direct = flow.state(2.0 * t).unwrap();
            let restarted = flow.with_initial(&flow.state(t).unwrap()).unwrap();
            let two_leg = restarted.state(t).unwrap();
            assert!(rel_err(&two_leg, &direct) < 1e-8);
        }
        check(&small_linear(0.5), 0.3);
        check(&small_relu(), 0.7);
        check(&paper_quad(), 300.0);
    }

    #[test]
    fn rk4_basics() {
        let w0 = v(&[1.0, -2.0]);
        assert_eq!(rk4_integrate(|_, w| w * 0.0, &w0, 3.0, 10).unwrap(), w0);
        let one = v(&[1.0]);
        let got = rk4_integrate(|_, w| -w, &one, 1.0, 1000).unwrap();
        assert!((got[0] - (-1f64).exp()).abs() < 1e-8);
        assert!(rk4_integrate(|_, w| -w, &one, 1.0, 0).is_err());
    }

    #[test]
    fn rk4_fourth_order() {
        let rhs = |t: f64, w: &Vector| w.map(|x| -x * t.cos());
        let exact = (-(2f64).sin()).exp();
        let e1 = (rk4_integrate(rhs, &v(&[1.0]), 2.0, 20).unwrap()[0] - exact).abs();
        let e2 = (rk4_integrate(rhs, &v(&[1.0]), 2.0, 40).unwrap()[0] - exact).abs();
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn negative_time_rejected() {
        assert!(paper_quad().state(-1.0).is_err());
        assert!(ode_residual(&paper_quad(), 1.0, 0.0).is_err());
    }
}
