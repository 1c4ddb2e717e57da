//! Physical configuration and the nonlinear operators of the semidiscrete system
//! `M a'' + K a + g(|a'|_0) M a' = F(a)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretization::{
    build_basis, quadrature_grid, Basis, DiscreteOperators, DiscretizationError, DomainSpec, ModalBasis,
    QuadGrid,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error("non-finite source value at node (x={x}, y={y}) for u={u}")]
    NonFinite { x: f64, y: f64, u: f64 },
    #[error("negative speed norm {0}")]
    NegativeSpeed(f64),
    #[error("Newton iteration stalled after {iterations} iterations with residual {residual:e}")]
    NewtonFailure { iterations: usize, residual: f64 },
}

/// Polynomial damping gain `g(s) = sum_j b_j s^j`; the degree `q` is `coeffs.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Damping {
    pub coeffs: Vec<f64>,
}

impl Damping {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Damping { coeffs }
    }

    pub fn q(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn b0(&self) -> f64 {
        self.coeffs.first().copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&b| b == 0.0)
    }

    pub fn is_linear(&self) -> bool {
        self.coeffs.iter().skip(1).all(|&b| b == 0.0)
    }

    pub fn g(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &b| acc * s + b)
    }

    pub fn dg(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (j, &b)| acc * s + j as f64 * b)
    }
}

/// Natural cubic spline through tabulated `(s, f0(s))`, extended linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineTable", into = "SplineTable")]
pub struct SplineSource {
    s: Vec<f64>,
    f: Vec<f64>,
    m: Vec<f64>,
    /// Integral of the spline from `s[0]` to each knot.
    cum: Vec<f64>,
    anti_at_zero: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineTable {
    pub s: Vec<f64>,
    pub f: Vec<f64>,
}

impl From<SplineSource> for SplineTable {
    fn from(src: SplineSource) -> Self {
        SplineTable { s: src.s, f: src.f }
    }
}

impl TryFrom<SplineTable> for SplineSource {
    type Error = String;
    fn try_from(t: SplineTable) -> Result<Self, String> {
        SplineSource::new(t.s, t.f)
    }
}

impl SplineSource {
    pub fn new(s: Vec<f64>, f: Vec<f64>) -> Result<Self, String> {
        let n = s.len();
        if n < 3 || f.len() != n {
            return Err(format!("source table needs at least 3 matching points (got {} and {})", n, f.len()));
        }
        if s.iter().chain(&f).any(|v| !v.is_finite()) {
            return Err("source table contains non-finite values".into());
        }
        if s.windows(2).any(|w| w[1] <= w[0]) {
            return Err("source table abscissae must be strictly increasing".into());
        }
        // Second derivatives by the tridiagonal (Thomas) solve with natural ends.
        let mut m = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = s[i] - s[i - 1];
            let h1 = s[i + 1] - s[i];
            let rhs = 6.0 * ((f[i + 1] - f[i]) / h1 - (f[i] - f[i - 1]) / h0);
            let diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
            c[i] = h1 / diag;
            d[i] = (rhs - h0 * d[i - 1]) / diag;
        }
        for i in (1..n - 1).rev() {
            m[i] = d[i] - c[i] * m[i + 1];
        }
        let mut src = SplineSource { s, f, m, cum: vec![0.0; n], anti_at_zero: 0.0 };
        for i in 1..n {
            let seg = src.segment_integral(i - 1, src.s[i]);
            src.cum[i] = src.cum[i - 1] + seg;
        }
        src.anti_at_zero = src.raw_antiderivative(0.0);
        Ok(src)
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.s.len();
        match self.s.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    fn end_slopes(&self) -> (f64, f64) {
        let n = self.s.len();
        let h0 = self.s[1] - self.s[0];
        let left = (self.f[1] - self.f[0]) / h0 - h0 * (2.0 * self.m[0] + self.m[1]) / 6.0;
        let h1 = self.s[n - 1] - self.s[n - 2];
        let right = (self.f[n - 1] - self.f[n - 2]) / h1 + h1 * (self.m[n - 2] + 2.0 * self.m[n - 1]) / 6.0;
        (left, right)
    }

    fn eval_all(&self, x: f64) -> (f64, f64) {
        let n = self.s.len();
        let (sl, sr) = self.end_slopes();
        if x < self.s[0] {
            return (self.f[0] + sl * (x - self.s[0]), sl);
        }
        if x > self.s[n - 1] {
            return (self.f[n - 1] + sr * (x - self.s[n - 1]), sr);
        }
        let i = self.segment(x);
        let h = self.s[i + 1] - self.s[i];
        let a = (self.s[i + 1] - x) / h;
        let b = (x - self.s[i]) / h;
        let val = a * self.f[i] + b * self.f[i + 1] + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0;
        let der = (self.f[i + 1] - self.f[i]) / h - (3.0 * a * a - 1.0) * h * self.m[i] / 6.0
            + (3.0 * b * b - 1.0) * h * self.m[i + 1] / 6.0;
        (val, der)
    }

    /// Integral of the cubic on segment `i` from `s[i]` to `x`.
    fn segment_integral(&self, i: usize, x: f64) -> f64 {
        let h = self.s[i + 1] - self.s[i];
        let a = |x: f64| (self.s[i + 1] - x) / h;
        let b = |x: f64| (x - self.s[i]) / h;
        // Antiderivative in terms of a, b (da/dx = -1/h, db/dx = 1/h).
        let prim = |x: f64| {
            let (a, b) = (a(x), b(x));
            -h * self.f[i] * a * a / 2.0 + h * self.f[i + 1] * b * b / 2.0
                - self.m[i] * h * h * h / 6.0 * (a.powi(4) / 4.0 - a * a / 2.0)
                + self.m[i + 1] * h * h * h / 6.0 * (b.powi(4) / 4.0 - b * b / 2.0)
        };
        prim(x) - prim(self.s[i])
    }

    fn raw_antiderivative(&self, x: f64) -> f64 {
        let n = self.s.len();
        let (sl, sr) = self.end_slopes();
        if x < self.s[0] {
            let d = x - self.s[0];
            return self.f[0] * d + 0.5 * sl * d * d;
        }
        if x > self.s[n - 1] {
            let d = x - self.s[n - 1];
            return self.cum[n - 1] + self.f[n - 1] * d + 0.5 * sr * d * d;
        }
        let i = self.segment(x);
        self.cum[i] + self.segment_integral(i, x)
    }
}

/// Choice of the nonlinear source `f0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Zero,
    /// `f0(s) = s^3 - load`.
    CubicMinusLoad { load: f64 },
    Table(SplineSource),
}

impl Source {
    pub fn f(&self, s: f64) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::CubicMinusLoad { load } => s * s * s - load,
            Source::Table(t) => t.eval_all(s).0,
        }
    }

    pub fn df(&self, s: f64) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::CubicMinusLoad { .. } => 3.0 * s * s,
            Source::Table(t) => t.eval_all(s).1,
        }
    }

    /// `F0(s) = int_0^s f0`.
    pub fn antiderivative(&self, s: f64) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::CubicMinusLoad { load } => 0.25 * s.powi(4) - load * s,
            Source::Table(t) => t.raw_antiderivative(s) - t.anti_at_zero,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Source::Zero)
    }

    /// Average of `f0` over the segment between `a` and `b`.
    pub fn mean_value(&self, a: f64, b: f64) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::CubicMinusLoad { load } => 0.25 * (a * a * a + a * a * b + a * b * b + b * b * b) - load,
            Source::Table(_) => {
                let h = b - a;
                if h.abs() > 1e-3 * (1.0 + a.abs().max(b.abs())) {
                    (self.antiderivative(b) - self.antiderivative(a)) / h
                } else {
                    // Three-point Gauss rule, exact on each cubic piece.
                    let m = 0.5 * (a + b);
                    let r = 0.5 * h * (0.6_f64).sqrt();
                    (5.0 * self.f(m - r) + 8.0 * self.f(m) + 5.0 * self.f(m + r)) / 18.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateConfig {
    pub alpha: f64,
    pub delta: f64,
    pub beta: f64,
    pub kappa: f64,
    pub damping: Damping,
    pub source: Source,
    pub dom: DomainSpec,
    /// Permits an all-zero damping polynomial (conservative runs only).
    #[serde(default)]
    pub allow_undamped: bool,
}

impl PlateConfig {
    /// Every invariant violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("alpha", self.alpha), ("delta", self.delta), ("beta", self.beta), ("kappa", self.kappa)] {
            if !v.is_finite() {
                out.push(format!("{name} must be finite (got {v})"));
            }
        }
        if self.delta < 0.0 {
            out.push(format!("delta must be >= 0 (got {})", self.delta));
        }
        if self.kappa < 0.0 {
            out.push(format!("kappa must be >= 0 (got {})", self.kappa));
        }
        if self.damping.coeffs.len() < 2 {
            out.push(format!(
                "damping needs coefficients b_0..b_q with q >= 1 (got {} coefficient(s))",
                self.damping.coeffs.len()
            ));
        }
        for (j, &b) in self.damping.coeffs.iter().enumerate() {
            if !(b.is_finite() && b >= 0.0) {
                out.push(format!("damping coefficient b_{j} must be finite and >= 0 (got {b})"));
            }
        }
        if self.damping.is_zero() && !self.allow_undamped {
            out.push("Assumption (g): some damping coefficient must be positive (b_0 + b_q > 0)".into());
        }
        if let Err(e) = self.dom.validate() {
            out.push(e.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(v))
        }
    }

    pub fn g_eval(&self, s: f64) -> Result<f64, ModelError> {
        if s < 0.0 {
            return Err(ModelError::NegativeSpeed(s));
        }
        Ok(self.damping.g(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub t: f64,
}

impl State {
    pub fn zeros(n: usize) -> Self {
        State { u: DVector::zeros(n), v: DVector::zeros(n), t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Immutable bundle of a configuration and its discretization.
#[derive(Debug, Clone)]
pub struct PlateSystem {
    pub cfg: PlateConfig,
    pub basis: Basis,
    pub grid: QuadGrid,
    pub ops: DiscreteOperators,
    pub modal: ModalBasis,
    dy_t: DMatrix<f64>,
}

impl PlateSystem {
    pub fn new(cfg: PlateConfig, mx: usize, ny: usize, oversample: usize) -> Result<Self, ModelError> {
        cfg.validate()?;
        let basis = build_basis(mx, ny, &cfg.dom)?;
        let grid = quadrature_grid(&basis, &cfg.dom, oversample)?;
        let ops = DiscreteOperators::assemble(&grid, &cfg.dom)?;
        let modal = ModalBasis::new(&ops)?;
        let dy_t = ops.dy.transpose();
        Ok(PlateSystem { cfg, basis, grid, ops, modal, dy_t })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn mass_norm_sq(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.ops.m * v))
    }

    pub fn a_form(&self, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        u.dot(&(&self.ops.k * w))
    }

    /// `|u_x|_0^2`.
    pub fn ux_norm_sq(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.ops.gx * u))
    }

    /// `(u_y, w)`.
    pub fn uy_pairing(&self, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        u.dot(&(&self.ops.dy * w))
    }

    /// Squared phase-space norm `a(u,u) + |v|_0^2`.
    pub fn h_norm_sq(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.a_form(u, u) + self.mass_norm_sq(v)
    }

    pub fn g_eval(&self, s: f64) -> Result<f64, ModelError> {
        self.cfg.g_eval(s)
    }

    /// `D(v) = g(|v|_0) M v`.
    pub fn apply_damping(&self, v: &DVector<f64>) -> DVector<f64> {
        let mv = &self.ops.m * v;
        let s = v.dot(&mv).max(0.0).sqrt();
        mv * self.cfg.damping.g(s)
    }

    /// `alpha - delta |u_x|_0^2`.
    pub fn berger_coefficient(&self, u: &DVector<f64>) -> f64 {
        self.cfg.alpha - self.cfg.delta * self.ux_norm_sq(u)
    }

    fn pointwise_needed(&self) -> bool {
        self.cfg.kappa != 0.0 || !self.cfg.source.is_zero()
    }

    /// Tested pointwise load `(kappa u^+ + f0(u), phi_i)`.
    pub fn pointwise_load(&self, u: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        if !self.pointwise_needed() {
            return Ok(DVector::zeros(self.dim()));
        }
        let nodal = self.grid.nodal(u, 0, 0);
        let kappa = self.cfg.kappa;
        let src = &self.cfg.source;
        let mut field = nodal.clone();
        for (val, &uu) in field.iter_mut().zip(nodal.iter()) {
            *val = kappa * uu.max(0.0) + src.f(uu);
        }
        if let Some(pos) = field.iter().position(|x| !x.is_finite()) {
            let (i, j) = (pos % nodal.nrows(), pos / nodal.nrows());
            return Err(ModelError::NonFinite { x: self.grid.xs[i], y: self.grid.ys[j], u: nodal[(i, j)] });
        }
        Ok(self.grid.project(&field))
    }

    /// Averaged pointwise load `(int_0^1 kappa w^+ + f0(w) dθ, phi_i)` with `w = u0 + θ(u1 - u0)`.
    ///
    /// Its pairing with `u1 - u0` equals the change of the pointwise potential exactly.
    pub fn averaged_pointwise_load(&self, u0: &DVector<f64>, u1: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        if !self.pointwise_needed() {
            return Ok(DVector::zeros(self.dim()));
        }
        let n0 = self.grid.nodal(u0, 0, 0);
        let n1 = self.grid.nodal(u1, 0, 0);
        let kappa = self.cfg.kappa;
        let src = &self.cfg.source;
        let mut field = n0.clone();
        for ((val, &a), &b) in field.iter_mut().zip(n0.iter()).zip(n1.iter()) {
            let pos = if a >= 0.0 && b >= 0.0 {
                0.5 * (a + b)
            } else if a <= 0.0 && b <= 0.0 {
                0.0
            } else {
                let (p, q) = if a > 0.0 { (a, b) } else { (b, a) };
                0.5 * p * p / (p - q)
            };
            *val = kappa * pos + src.mean_value(a, b);
        }
        if let Some(pos) = field.iter().position(|x| !x.is_finite()) {
            let (i, j) = (pos % n1.nrows(), pos / n1.nrows());
            return Err(ModelError::NonFinite { x: self.grid.xs[i], y: self.grid.ys[j], u: n1[(i, j)] });
        }
        Ok(self.grid.project(&field))
    }

    /// Discrete-gradient form of `F` between `u0` and `u1`, evaluated so that
    /// `(u1 - u0) . averaged_f(u0, u1)` is exactly minus the change of the conservative
    /// potential, plus the flow term at the midpoint.
    pub fn averaged_f(&self, u0: &DVector<f64>, u1: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        let um = (u0 + u1) * 0.5;
        let stretch = 0.5 * (self.ux_norm_sq(u0) + self.ux_norm_sq(u1));
        let mut out = &self.ops.gx * &um * (self.cfg.alpha - self.cfg.delta * stretch);
        out -= self.averaged_pointwise_load(u0, u1)?;
        if self.cfg.beta != 0.0 {
            out += self.flow_load(&um);
        }
        Ok(out)
    }

    /// Tested non-conservative load `-beta (u_y, phi_i)`.
    pub fn flow_load(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.dy_t * u * (-self.cfg.beta)
    }

    /// Galerkin load `F(u) = (alpha - delta |u_x|^2)(u_x, phi_x) - (kappa u^+ + f0(u), phi) - beta (u_y, phi)`.
    pub fn apply_f(&self, u: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        let gu = &self.ops.gx * u;
        let coef = self.cfg.alpha - self.cfg.delta * u.dot(&gu);
        let mut out = gu * coef;
        out -= self.pointwise_load(u)?;
        if self.cfg.beta != 0.0 {
            out += self.flow_load(u);
        }
        Ok(out)
    }

    /// Jacobian of `apply_f`; the `u^+` kink uses the Heaviside generalized derivative.
    pub fn jacobian_f(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let gu = &self.ops.gx * u;
        let coef = self.cfg.alpha - self.cfg.delta * u.dot(&gu);
        let mut jac = &self.ops.gx * coef - (&gu * gu.transpose()) * (2.0 * self.cfg.delta);
        if self.pointwise_needed() {
            let nodal = self.grid.nodal(u, 0, 0);
            let mut wts = nodal.clone();
            for (w, &uu) in wts.iter_mut().zip(nodal.iter()) {
                let h = if uu > 0.0 { self.cfg.kappa } else { 0.0 };
                *w = h + self.cfg.source.df(uu);
            }
            jac -= self.weighted_gram(&wts);
        }
        if self.cfg.beta != 0.0 {
            jac -= &self.dy_t * self.cfg.beta;
        }
        jac
    }

    /// `(w phi_j, phi_i)` for a nodal weight field `w`.
    pub fn weighted_gram(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let (nx, nyq) = (self.grid.nx(), self.grid.ny());
        let mut table = DMatrix::zeros(nx * nyq, n);
        let mut scaled = DMatrix::zeros(nx * nyq, n);
        let ny = self.basis.ny;
        for i in 0..n {
            let (m, k) = (i / ny, i % ny);
            for a in 0..nx {
                for b in 0..nyq {
                    let p = a * nyq + b;
                    let val = self.grid.sx[0][(a, m)] * self.grid.py[0][(b, k)];
                    table[(p, i)] = val;
                    scaled[(p, i)] = val * w[(a, b)] * self.grid.w[(a, b)];
                }
            }
        }
        table.transpose() * scaled
    }

    /// Residual `K u - F(u)` of the stationary problem.
    pub fn stationary_residual(&self, u: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        Ok(&self.ops.k * u - self.apply_f(u)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct StationaryPoint {
    pub u: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton (Armijo backtracking on `|r|^2`) for `K u = F(u)`.
pub fn stationary_solve(
    sys: &PlateSystem,
    guess: &DVector<f64>,
    opts: NewtonOptions,
) -> Result<StationaryPoint, ModelError> {
    let mut u = guess.clone();
    let mut r = sys.stationary_residual(&u)?;
    let mut rn = r.norm();
    for it in 0..opts.max_iter {
        if rn <= opts.tol {
            return Ok(StationaryPoint { u, residual: rn, iterations: it });
        }
        let jac = &sys.ops.k - sys.jacobian_f(&u);
        let Some(step) = jac.lu().solve(&(-&r)) else {
            return Err(ModelError::NewtonFailure { iterations: it, residual: rn });
        };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial = &u + &step * t;
            if let Ok(rt) = sys.stationary_residual(&trial) {
                let rtn = rt.norm();
                if rtn * rtn <= (1.0 - 1e-4 * t) * rn * rn || rtn <= opts.tol {
                    u = trial;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(ModelError::NewtonFailure { iterations: it, residual: rn });
        }
    }
    if rn <= opts.tol {
        Ok(StationaryPoint { u, residual: rn, iterations: opts.max_iter })
    } else {
        Err(ModelError::NewtonFailure { iterations: opts.max_iter, residual: rn })
    }
}

/// Certified dissipativity constants: `F0(s) >= -c s^2 - b` on the sampled range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceBound {
    pub c: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AssumptionF {
    Accepted(SourceBound),
    /// `F0(witness) + c s^2 + b < 0` for the constants fitted on the inner half.
    Rejected { witness: f64, deficit: f64, c: f64, b: f64 },
}

fn sample_points(range: (f64, f64), samples: usize) -> Vec<f64> {
    let (lo, hi) = range;
    let n = samples.max(3);
    let mut pts: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    for extra in [0.0, 1.0, -1.0] {
        if extra >= lo && extra <= hi {
            pts.push(extra);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Minimum of `F0(s) + c s^2` over the points, refined locally around the best sample.
fn refined_min(src: &Source, c: f64, pts: &[f64]) -> (f64, f64) {
    let h = |s: f64| src.antiderivative(s) + c * s * s;
    let (imin, _) = pts
        .iter()
        .enumerate()
        .min_by(|a, b| h(*a.1).total_cmp(&h(*b.1)))
        .expect("non-empty sample set");
    let a = pts[imin.saturating_sub(1)];
    let b = pts[(imin + 1).min(pts.len() - 1)];
    let (s_ref, v_ref) = golden_min(h, a, b);
    if v_ref < h(pts[imin]) {
        (s_ref, v_ref)
    } else {
        (pts[imin], h(pts[imin]))
    }
}

/// Fits `(c, b)` with `F0(s) >= -c s^2 - b` over `range`.
///
/// `c = L/2` with `L = max(0, -inf f0(s)/s)` over `1 <= |s| <= R/2`, then `b` is
/// the smallest constant making `F0 + c s^2 + b >= 0` on the same inner half.
/// The outer shell `R/2 < |s| <= R` is a holdout: any deficit there means the
/// growth of `-f0(s)/s` is not captured by a finite `c`.
pub fn validate_assumption_f(src: &Source, range: (f64, f64), samples: usize) -> AssumptionF {
    if src.is_zero() {
        return AssumptionF::Accepted(SourceBound { c: 0.0, b: 0.0 });
    }
    let pts = sample_points(range, samples);
    let big_r = range.0.abs().max(range.1.abs());
    let inner: Vec<f64> = pts.iter().copied().filter(|s| s.abs() <= 0.5 * big_r).collect();
    let lmax = inner
        .iter()
        .filter(|s| s.abs() >= 1.0)
        .map(|&s| -src.f(s) / s)
        .fold(0.0_f64, f64::max);
    let c = 0.5 * lmax;
    let (_, inner_min) = refined_min(src, c, &inner);
    let b_inner = (-inner_min).max(0.0);
    let (s_all, all_min) = refined_min(src, c, &pts);
    let scale = 1.0 + b_inner + src.antiderivative(s_all).abs();
    let deficit = all_min + b_inner;
    if deficit < -1e-12 * scale {
        return AssumptionF::Rejected { witness: s_all, deficit, c, b: b_inner };
    }
    let b = (-all_min).max(0.0);
    AssumptionF::Accepted(SourceBound { c, b: b * (1.0 + 1e-12) })
}

/// Checks a proposed `(c, b)` on the sample range; returns the worst point if it fails.
pub fn check_source_bound(src: &Source, bound: SourceBound, range: (f64, f64), samples: usize) -> Option<(f64, f64)> {
    let pts = sample_points(range, samples);
    let (s, v) = refined_min(src, bound.c, &pts);
    let slack = v + bound.b;
    (slack < 0.0).then_some((s, slack))
}
