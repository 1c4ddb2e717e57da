//! Galerkin basis on `(0, pi) x (-l, l)` and assembly of the discrete forms.
//!
//! Basis functions are `sin(m x) * P_k(y / l)` for `m = 1..=mx`, `k = 0..ny`,
//! stored at flat index `(m - 1) * ny + k`. Every assembled operator is a sum of
//! Kronecker products of one-dimensional Gram matrices, which are computed by
//! quadrature on the same tensor grid used for the nonlinear terms.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizationError {
    #[error("mode counts must be at least 1 (got mx={mx}, ny={ny})")]
    ZeroModes { mx: usize, ny: usize },
    #[error("half-width l must be positive and finite (got {0})")]
    BadHalfWidth(f64),
    #[error("Poisson ratio must lie in (0, 1/2) (got {0})")]
    BadPoisson(f64),
    #[error("oversample factor must be at least 2 (got {0})")]
    BadOversample(usize),
    #[error("{0} matrix is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("inverse iteration did not converge after {iterations} iterations (last change {change:e})")]
    EigenFailure { iterations: usize, change: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub l: f64,
    pub sigma: f64,
}

impl DomainSpec {
    pub fn new(l: f64, sigma: f64) -> Result<Self, DiscretizationError> {
        let dom = DomainSpec { l, sigma };
        dom.validate()?;
        Ok(dom)
    }

    pub fn validate(&self) -> Result<(), DiscretizationError> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(DiscretizationError::BadHalfWidth(self.l));
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return Err(DiscretizationError::BadPoisson(self.sigma));
        }
        Ok(())
    }

    /// Measure of the domain, `2 pi l`.
    pub fn area(&self) -> f64 {
        2.0 * PI * self.l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Basis {
    pub mx: usize,
    pub ny: usize,
}

pub fn build_basis(mx: usize, ny: usize, dom: &DomainSpec) -> Result<Basis, DiscretizationError> {
    dom.validate()?;
    if mx == 0 || ny == 0 {
        return Err(DiscretizationError::ZeroModes { mx, ny });
    }
    Ok(Basis { mx, ny })
}

impl Basis {
    pub fn dim(&self) -> usize {
        self.mx * self.ny
    }

    /// Flat index of `sin(m x) P_k(y/l)`; `m` is 1-based, `k` 0-based.
    pub fn index(&self, m: usize, k: usize) -> usize {
        debug_assert!(m >= 1 && m <= self.mx && k < self.ny);
        (m - 1) * self.ny + k
    }

    pub fn mode(&self, i: usize) -> (usize, usize) {
        (i / self.ny + 1, i % self.ny)
    }

    /// Pointwise value of a basis function or one of its partial derivatives.
    pub fn eval(&self, i: usize, dx: usize, dy: usize, x: f64, y: f64, dom: &DomainSpec) -> f64 {
        let (m, k) = self.mode(i);
        let sx = sine_derivative(m, dx, x);
        let (p, dp, ddp) = legendre_with_derivatives(k, y / dom.l);
        let py = match dy {
            0 => p[k],
            1 => dp[k] / dom.l,
            2 => ddp[k] / (dom.l * dom.l),
            _ => panic!("derivative order {dy} not supported"),
        };
        sx * py
    }
}

fn sine_derivative(m: usize, d: usize, x: f64) -> f64 {
    let mf = m as f64;
    match d {
        0 => (mf * x).sin(),
        1 => mf * (mf * x).cos(),
        2 => -mf * mf * (mf * x).sin(),
        _ => panic!("derivative order {d} not supported"),
    }
}

/// Values of `P_0..=P_n` and their first two derivatives at `xi`.
pub fn legendre_with_derivatives(n: usize, xi: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; n + 1];
    let mut dp = vec![0.0; n + 1];
    let mut ddp = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = xi;
        dp[1] = 1.0;
    }
    for k in 1..n {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * xi * p[k] - kf * p[k - 1]) / (kf + 1.0);
        dp[k + 1] = dp[k - 1] + (2.0 * kf + 1.0) * p[k];
        ddp[k + 1] = ddp[k - 1] + (2.0 * kf + 1.0) * dp[k];
    }
    (p, dp, ddp)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (pn, dpn) = legendre_pair(n, x);
            let dx = pn / dpn;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_pair(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (x * p1 - p0) / (x * x - 1.0))
}

/// Tensor quadrature grid with one-dimensional basis tables.
///
/// `sx[d]` is `nx x mx` holding `d`-th x-derivatives of `sin(m x)`;
/// `py[d]` is `ny_nodes x ny` holding `d`-th y-derivatives of `P_k(y/l)`.
#[derive(Debug, Clone)]
pub struct QuadGrid {
    pub xs: Vec<f64>,
    pub wx: Vec<f64>,
    pub ys: Vec<f64>,
    pub wy: Vec<f64>,
    pub sx: [DMatrix<f64>; 3],
    pub py: [DMatrix<f64>; 3],
    /// `w_x[i] * w_y[j]` laid out as an `nx x ny` matrix.
    pub w: DMatrix<f64>,
}

pub fn quadrature_grid(
    basis: &Basis,
    dom: &DomainSpec,
    oversample: usize,
) -> Result<QuadGrid, DiscretizationError> {
    if oversample < 2 {
        return Err(DiscretizationError::BadOversample(oversample));
    }
    // Gauss nodes in x resolve trig products up to frequency 4 mx (quartic
    // terms) to rounding; the +16 margin was measured, not derived.
    let nx = (oversample * basis.mx).max(4 * basis.mx + 16);
    let nyq = (oversample * basis.ny).max(2 * (basis.ny + 2));

    let (gx, gwx) = gauss_legendre(nx);
    let xs: Vec<f64> = gx.iter().map(|&t| 0.5 * PI * (t + 1.0)).collect();
    let wx: Vec<f64> = gwx.iter().map(|&w| 0.5 * PI * w).collect();
    let (gy, gwy) = gauss_legendre(nyq);
    let ys: Vec<f64> = gy.iter().map(|&t| dom.l * t).collect();
    let wy: Vec<f64> = gwy.iter().map(|&w| dom.l * w).collect();

    let sx = [0, 1, 2].map(|d| {
        DMatrix::from_fn(nx, basis.mx, |i, j| sine_derivative(j + 1, d, xs[i]))
    });
    let mut py = [0, 1, 2].map(|_| DMatrix::zeros(nyq, basis.ny));
    for (i, &t) in gy.iter().enumerate() {
        let (p, dp, ddp) = legendre_with_derivatives(basis.ny - 1, t);
        for k in 0..basis.ny {
            py[0][(i, k)] = p[k];
            py[1][(i, k)] = dp[k] / dom.l;
            py[2][(i, k)] = ddp[k] / (dom.l * dom.l);
        }
    }
    let w = DMatrix::from_fn(nx, nyq, |i, j| wx[i] * wy[j]);
    Ok(QuadGrid { xs, wx, ys, wy, sx, py, w })
}

impl QuadGrid {
    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn ny(&self) -> usize {
        self.ys.len()
    }

    pub fn weight_sum(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Integral of a nodal field.
    pub fn integrate(&self, field: &DMatrix<f64>) -> f64 {
        self.w.component_mul(field).sum()
    }

    /// Nodal values of `d^dx/dx d^dy/dy u` for coefficient vector `u`.
    pub fn nodal(&self, u: &DVector<f64>, dx: usize, dy: usize) -> DMatrix<f64> {
        let (mx, ny) = (self.sx[0].ncols(), self.py[0].ncols());
        let c = DMatrix::from_row_slice(mx, ny, u.as_slice());
        let t = &self.sx[dx] * c;
        t * self.py[dy].transpose()
    }

    /// Tested coefficients `(f, phi_i)` of a nodal field `f`.
    pub fn project(&self, field: &DMatrix<f64>) -> DVector<f64> {
        let weighted = self.w.component_mul(field);
        let c = self.sx[0].transpose() * weighted * &self.py[0];
        let mut out = DVector::zeros(c.nrows() * c.ncols());
        for m in 0..c.nrows() {
            for k in 0..c.ncols() {
                out[m * c.ncols() + k] = c[(m, k)];
            }
        }
        out
    }

    /// Nodal table of a single basis function (or derivative).
    pub fn phi(&self, i: usize, dx: usize, dy: usize) -> DMatrix<f64> {
        let ny = self.py[0].ncols();
        let (m, k) = (i / ny, i % ny);
        DMatrix::from_fn(self.nx(), self.ny(), |a, b| self.sx[dx][(a, m)] * self.py[dy][(b, k)])
    }

    fn gram_x(&self, a: usize, b: usize) -> DMatrix<f64> {
        let wa = DMatrix::from_fn(self.nx(), self.sx[a].ncols(), |i, j| self.wx[i] * self.sx[a][(i, j)]);
        wa.transpose() * &self.sx[b]
    }

    fn gram_y(&self, a: usize, b: usize) -> DMatrix<f64> {
        let wa = DMatrix::from_fn(self.ny(), self.py[a].ncols(), |i, j| self.wy[i] * self.py[a][(i, j)]);
        wa.transpose() * &self.py[b]
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

pub fn assemble_mass(grid: &QuadGrid) -> Result<DMatrix<f64>, DiscretizationError> {
    let mut m = grid.gram_x(0, 0).kronecker(&grid.gram_y(0, 0));
    symmetrize(&mut m);
    if Cholesky::new(m.clone()).is_none() {
        return Err(DiscretizationError::NotPositiveDefinite("mass"));
    }
    Ok(m)
}

pub fn assemble_stiffness(grid: &QuadGrid, dom: &DomainSpec) -> Result<DMatrix<f64>, DiscretizationError> {
    dom.validate()?;
    let s = dom.sigma;
    let (x00, x11, x22, x20) = (grid.gram_x(0, 0), grid.gram_x(1, 1), grid.gram_x(2, 2), grid.gram_x(2, 0));
    let (y00, y11, y22, y02) = (grid.gram_y(0, 0), grid.gram_y(1, 1), grid.gram_y(2, 2), grid.gram_y(0, 2));
    let mut k = x22.kronecker(&y00) + x00.kronecker(&y22);
    k += (x20.kronecker(&y02) + x20.transpose().kronecker(&y02.transpose())) * s;
    k += x11.kronecker(&y11) * (2.0 * (1.0 - s));
    symmetrize(&mut k);
    if Cholesky::new(k.clone()).is_none() {
        return Err(DiscretizationError::NotPositiveDefinite("stiffness"));
    }
    Ok(k)
}

/// Returns `(Gx, Dy)` with `Gx[i][j] = (phi_i,x, phi_j,x)` and `Dy[i][j] = (phi_i,y, phi_j)`.
pub fn assemble_derivative_grams(grid: &QuadGrid) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut gx = grid.gram_x(1, 1).kronecker(&grid.gram_y(0, 0));
    symmetrize(&mut gx);
    let dy = grid.gram_x(0, 0).kronecker(&grid.gram_y(1, 0));
    (gx, dy)
}

#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub m: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    pub dy: DMatrix<f64>,
    pub lambda_min: f64,
}

impl DiscreteOperators {
    pub fn assemble(grid: &QuadGrid, dom: &DomainSpec) -> Result<Self, DiscretizationError> {
        let m = assemble_mass(grid)?;
        let k = assemble_stiffness(grid, dom)?;
        let (gx, dy) = assemble_derivative_grams(grid);
        let mut ops = DiscreteOperators { m, k, gx, dy, lambda_min: f64::NAN };
        let (lambda, _) = embedding_constant(&ops)?;
        ops.lambda_min = 1.0 / lambda;
        Ok(ops)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }
}

/// `lambda = sup |u|_0^2 / a(u, u)`, by inverse iteration on `(K, M)`.
///
/// Returns `lambda` and an M-normalized maximizer.
pub fn embedding_constant(ops: &DiscreteOperators) -> Result<(f64, DVector<f64>), DiscretizationError> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 20_000;
    let n = ops.dim();
    let chol = Cholesky::new(ops.k.clone()).ok_or(DiscretizationError::NotPositiveDefinite("stiffness"))?;
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64) * 1e-3);
    let mnorm = |v: &DVector<f64>| v.dot(&(&ops.m * v)).sqrt();
    x /= mnorm(&x);
    let mut mu_old = f64::INFINITY;
    let mut change = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let mut y = chol.solve(&(&ops.m * &x));
        y /= mnorm(&y);
        let ky = &ops.k * &y;
        let mu = y.dot(&ky);
        let resid = (&ky - (&ops.m * &y) * mu).norm() / ky.norm().max(f64::MIN_POSITIVE);
        change = ((mu - mu_old) / mu).abs();
        x = y;
        mu_old = mu;
        if change < TOL && resid < 1e-6 {
            return Ok((1.0 / mu, x));
        }
    }
    Err(DiscretizationError::EigenFailure { iterations: MAX_ITER, change })
}

/// M-orthonormal generalized eigenbasis of `(K, M)`, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    /// Columns are eigenvectors `phi_i` with `phi_i^T M phi_j = delta_ij`.
    pub phi: DMatrix<f64>,
    pub mu: DVector<f64>,
    /// `phi^T M`, maps coefficients to modal coordinates.
    pub to_modal: DMatrix<f64>,
}

impl ModalBasis {
    pub fn new(ops: &DiscreteOperators) -> Result<Self, DiscretizationError> {
        let chol = Cholesky::new(ops.m.clone()).ok_or(DiscretizationError::NotPositiveDefinite("mass"))?;
        let l = chol.l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or(DiscretizationError::NotPositiveDefinite("mass"))?;
        let mut c = &linv * &ops.k * linv.transpose();
        symmetrize(&mut c);
        let eig = SymmetricEigen::new(c);
        let n = ops.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mu = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
        if mu[0] <= 0.0 {
            return Err(DiscretizationError::NotPositiveDefinite("stiffness"));
        }
        let q = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        let mut phi = linv.transpose() * q;
        // Fix the sign so the largest-magnitude component is positive.
        for j in 0..n {
            let col = phi.column(j);
            let imax = col.iamax();
            if col[imax] < 0.0 {
                phi.column_mut(j).neg_mut();
            }
        }
        let to_modal = phi.transpose() * &ops.m;
        Ok(ModalBasis { phi, mu, to_modal })
    }

    pub fn modal(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.to_modal * u
    }

    pub fn coefficients(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.phi * z
    }

    /// Spectral surrogate `sum mu_i^{(2-s)/2} z_i^2` for the squared `H^{2-s}` norm.
    pub fn surrogate_norm_sq(&self, u: &DVector<f64>, s: f64) -> f64 {
        let z = self.modal(u);
        let p = 0.5 * (2.0 - s);
        z.iter().zip(self.mu.iter()).map(|(zi, mi)| mi.powf(p) * zi * zi).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup(mx: usize, ny: usize, l: f64, sigma: f64) -> (Basis, DomainSpec, QuadGrid, DiscreteOperators) {
        let dom = DomainSpec::new(l, sigma).unwrap();
        let basis = build_basis(mx, ny, &dom).unwrap();
        let grid = quadrature_grid(&basis, &dom, 3).unwrap();
        let ops = DiscreteOperators::assemble(&grid, &dom).unwrap();
        (basis, dom, grid, ops)
    }

    #[test]
    fn zero_counts_rejected() {
        let dom = DomainSpec::new(1.0, 0.3).unwrap();
        assert!(build_basis(0, 1, &dom).is_err());
        assert!(build_basis(1, 0, &dom).is_err());
        assert!(DomainSpec::new(1.0, 0.7).is_err());
        assert!(DomainSpec::new(-1.0, 0.3).is_err());
    }

    #[test]
    fn basis_vanishes_on_short_edges() {
        let dom = DomainSpec::new(1.0, 0.3).unwrap();
        let b = build_basis(2, 1, &dom).unwrap();
        assert_eq!(b.dim(), 2);
        for i in 0..b.dim() {
            for &y in &[-1.0, 0.0, 0.4] {
                assert!(b.eval(i, 0, 0, 0.0, y, &dom).abs() < 1e-15);
                assert!(b.eval(i, 0, 0, PI, y, &dom).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gauss_legendre_matches_known_rule() {
        let (x, w) = gauss_legendre(3);
        assert_relative_eq!(x[2], (0.6f64).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(w[0], 5.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(w[1], 8.0 / 9.0, epsilon = 1e-15);
        let (x, w) = gauss_legendre(20);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(38)).sum();
        assert_relative_eq!(integral, 2.0 / 39.0, max_relative = 1e-13);
    }

    #[test]
    fn legendre_derivatives_match_closed_form() {
        let xi = 0.37;
        let (p, dp, ddp) = legendre_with_derivatives(3, xi);
        assert_relative_eq!(p[3], 0.5 * (5.0 * xi.powi(3) - 3.0 * xi), epsilon = 1e-15);
        assert_relative_eq!(dp[3], 0.5 * (15.0 * xi * xi - 3.0), epsilon = 1e-15);
        assert_relative_eq!(ddp[3], 15.0 * xi, epsilon = 1e-14);
    }

    #[test]
    fn grid_integrates_measure_and_products() {
        for &l in &[1.0, 0.5] {
            let (_, dom, grid, _) = setup(3, 4, l, 0.3);
            assert_relative_eq!(grid.weight_sum(), dom.area(), max_relative = 1e-12);
            assert!(grid.wx.iter().chain(&grid.wy).all(|&w| w > 0.0));
            let s2 = DMatrix::from_fn(grid.nx(), grid.ny(), |i, _| grid.xs[i].sin().powi(2));
            assert_relative_eq!(grid.integrate(&s2), PI * l, max_relative = 1e-12);
            let p1 = DMatrix::from_fn(grid.nx(), grid.ny(), |i, j| {
                (grid.xs[i].sin() * grid.ys[j] / l).powi(2)
            });
            assert_relative_eq!(grid.integrate(&p1), 0.5 * PI * 2.0 * l / 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_mode_forms() {
        let (_, _, _, ops) = setup(1, 1, 1.0, 0.3);
        assert_relative_eq!(ops.m[(0, 0)], PI, max_relative = 1e-13);
        assert_relative_eq!(ops.k[(0, 0)], PI, max_relative = 1e-13);
        assert_relative_eq!(ops.gx[(0, 0)], PI, max_relative = 1e-13);
        let (lambda, _) = embedding_constant(&ops).unwrap();
        assert_relative_eq!(lambda, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn mass_is_diagonal_with_legendre_norms() {
        let (basis, dom, _, ops) = setup(3, 4, 0.5, 0.3);
        let n = basis.dim();
        for i in 0..n {
            let (_, k) = basis.mode(i);
            let expected = 0.5 * PI * 2.0 * dom.l / (2.0 * k as f64 + 1.0);
            assert_relative_eq!(ops.m[(i, i)], expected, max_relative = 1e-12);
            for j in 0..n {
                if i != j {
                    assert!(ops.m[(i, j)].abs() < 1e-12);
                }
            }
        }
        assert!(ops.m.determinant() > 0.0);
    }

    #[test]
    fn assembled_matrices_symmetric_and_positive() {
        let (_, _, _, ops) = setup(4, 4, 1.0, 0.3);
        let asym = |a: &DMatrix<f64>| (a - a.transpose()).amax();
        assert!(asym(&ops.m) < 1e-12);
        assert!(asym(&ops.k) < 1e-12);
        assert!(asym(&ops.gx) < 1e-12);
        assert!(ops.lambda_min > 0.0);
        let modal = ModalBasis::new(&ops).unwrap();
        assert_relative_eq!(modal.mu[0], ops.lambda_min, max_relative = 1e-9);
        let id = modal.phi.transpose() * &ops.m * &modal.phi;
        assert!((id - DMatrix::identity(16, 16)).amax() < 1e-10);
    }

    #[test]
    fn stiffness_matches_direct_quadrature() {
        let (basis, dom, grid, ops) = setup(3, 3, 0.7, 0.25);
        let u = DVector::from_fn(basis.dim(), |i, _| ((i * 7 + 3) % 5) as f64 - 2.0);
        let f = |dx, dy| grid.nodal(&u, dx, dy);
        let (uxx, uyy, uxy) = (f(2, 0), f(0, 2), f(1, 1));
        let lap = &uxx + &uyy;
        let s = dom.sigma;
        let integrand = lap.component_mul(&lap)
            - (uxx.component_mul(&uyy) * 2.0 - uxy.component_mul(&uxy) * 2.0) * (1.0 - s);
        let direct = grid.integrate(&integrand);
        let assembled = u.dot(&(&ops.k * &u));
        assert_relative_eq!(assembled, direct, max_relative = 1e-10);
    }

    #[test]
    fn y_derivative_pairing_is_boundary_term() {
        let (basis, dom, grid, ops) = setup(2, 4, 0.5, 0.3);
        for i in 0..basis.dim() {
            for j in 0..basis.dim() {
                let sum = ops.dy[(i, j)] + ops.dy[(j, i)];
                // (phi_i,y, phi_j) + (phi_i, phi_j,y) = int_0^pi [phi_i phi_j]_{y=-l}^{y=l} dx
                let boundary: f64 = grid
                    .xs
                    .iter()
                    .zip(&grid.wx)
                    .map(|(&x, &w)| {
                        w * (basis.eval(i, 0, 0, x, dom.l, &dom) * basis.eval(j, 0, 0, x, dom.l, &dom)
                            - basis.eval(i, 0, 0, x, -dom.l, &dom) * basis.eval(j, 0, 0, x, -dom.l, &dom))
                    })
                    .sum();
                assert!((sum - boundary).abs() < 1e-12, "{i} {j}: {sum} vs {boundary}");
            }
        }
        // y-independent fields pair to zero.
        let u = DVector::from_fn(basis.dim(), |i, _| if basis.mode(i).1 == 0 { 1.0 } else { 0.0 });
        let v = DVector::from_fn(basis.dim(), |i, _| (i as f64).cos());
        assert!(u.dot(&(&ops.dy * &v)).abs() < 1e-13);
    }

    #[test]
    fn lambda_nondecreasing_under_refinement() {
        let mut prev = 0.0;
        for ny in 1..=3 {
            let (_, _, _, ops) = setup(3, ny, 1.0, 0.3);
            let (lambda, _) = embedding_constant(&ops).unwrap();
            assert!(lambda >= prev - 1e-12, "ny={ny}: {lambda} < {prev}");
            prev = lambda;
        }
    }

    #[test]
    fn nested_assemblies_share_entries() {
        let (b1, _, _, o1) = setup(3, 3, 0.5, 0.3);
        let (b2, _, _, o2) = setup(4, 4, 0.5, 0.3);
        for i in 0..b1.dim() {
            for j in 0..b1.dim() {
                let (mi, ki) = b1.mode(i);
                let (mj, kj) = b1.mode(j);
                let (i2, j2) = (b2.index(mi, ki), b2.index(mj, kj));
                let scale = o1.k.amax();
                assert!((o1.k[(i, j)] - o2.k[(i2, j2)]).abs() <= 1e-13 * scale);
                assert!((o1.m[(i, j)] - o2.m[(i2, j2)]).abs() <= 1e-13 * o1.m.amax());
            }
        }
    }
}
