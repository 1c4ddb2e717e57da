//! Scalar barrier machinery for ultimate dissipativity: the `sigma` equation,
//! `V_eps = Etot + eps (u_t, u)`, the trajectory decay audit and the
//! `R`-independent bound `V*`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{damping_rate, flux_rate, total_energy, EnergyError, SplitConstants};
use crate::integrator::Trajectory;
use crate::model::{ModelError, PlateSystem, State};

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("b(s) requires s > 0 (got {0})")]
    NonPositiveScale(f64),
    #[error("sigma bracket expansion failed at E={level} (constants inconsistent)")]
    Bracket { level: f64 },
    #[error("gamma must lie in [0, 1) (got {0})")]
    BadGamma(f64),
    #[error("W_R iteration did not settle after {iterations} iterations (last value {last:e})")]
    Divergence { iterations: usize, last: f64 },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

pub fn gamma_of_q(q: usize) -> f64 {
    let q = q as f64;
    q / (2.0 * (q + 1.0))
}

/// Exponent of the balancing function, `(q+2)/(7q+6) * (1 + 16(q+1)/(5q+2))`.
pub fn b_exponent(q: usize) -> f64 {
    let q = q as f64;
    (q + 2.0) / (7.0 * q + 6.0) * (1.0 + 16.0 * (q + 1.0) / (5.0 * q + 2.0))
}

/// Power-law balancing function `b(s) = c_eta s^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BFunction {
    pub c_eta: f64,
    pub exponent: f64,
}

impl BFunction {
    pub fn for_q(q: usize, c_eta: f64) -> Self {
        BFunction { c_eta, exponent: b_exponent(q) }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.c_eta * s.powf(self.exponent)
    }
}

pub fn b_growth(s: f64, q: usize, c_eta: f64) -> Result<f64, BarrierError> {
    if !(s > 0.0) {
        return Err(BarrierError::NonPositiveScale(s));
    }
    Ok(BFunction::for_q(q, c_eta).eval(s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingReport {
    pub gamma: f64,
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub skipped: bool,
    pub verdict: Verdict,
}

/// Samples `x^(1 - 1/gamma) b(x)` at ten points per decade over `[1, 10^decades]`.
///
/// PASS iff the tail is strictly decreasing from some index in the first half on
/// and the final value is below `1e-6` times the first. `gamma = 0` is skipped.
pub fn balancing_check(gamma: f64, b: impl Fn(f64) -> f64, decades: usize) -> BalancingReport {
    if gamma == 0.0 {
        return BalancingReport { gamma, xs: vec![], values: vec![], skipped: true, verdict: Verdict::Pass };
    }
    let count = 10 * decades + 1;
    let xs: Vec<f64> = (0..count).map(|i| 10f64.powf(i as f64 / 10.0)).collect();
    let values: Vec<f64> = xs.iter().map(|&x| x.powf(1.0 - 1.0 / gamma) * b(x)).collect();
    let mut start = values.len() - 1;
    while start > 0 && values[start] < values[start - 1] {
        start -= 1;
    }
    let eventually_decreasing = start <= values.len() / 2;
    let decays = values.last().copied().unwrap_or(f64::NAN) < values[0] * 1e-6;
    BalancingReport { gamma, xs, values, skipped: false, verdict: Verdict::from_bool(eventually_decreasing && decays) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Manual,
    Fitted,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierConstants {
    pub c0: f64,
    pub c1: f64,
    pub eta: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub gamma: f64,
    pub kappa_damp: f64,
    pub d0: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub b: BFunction,
    #[serde(rename = "C1")]
    pub big_c1: f64,
    #[serde(rename = "C2")]
    pub big_c2: f64,
    pub c: f64,
    /// Largest admissible `eps`; `C1`, `C2` and `d3` are valid for `eps <= eps_max`.
    pub eps_max: f64,
    pub lambda: f64,
    pub mode: FitMode,
}

impl BarrierConstants {
    /// `C2/C1 = 1, c = 0, d0 = d1 = 1, d3 = 2, gamma = 1/2, b(x) = sqrt(x)`.
    pub fn toy() -> Self {
        BarrierConstants {
            c0: 0.0,
            c1: 1.0,
            eta: 0.5,
            c2: 1.0,
            c3: 0.0,
            c4: 1.0,
            gamma: 0.5,
            kappa_damp: 1.0,
            d0: 1.0,
            d1: 1.0,
            d2: 1.0,
            d3: 2.0,
            b: BFunction { c_eta: 1.0, exponent: 0.5 },
            big_c1: 1.0,
            big_c2: 1.0,
            c: 0.0,
            eps_max: f64::INFINITY,
            lambda: 1.0,
            mode: FitMode::Toy,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..1.0).contains(&self.gamma) {
            v.push(format!("gamma must lie in [0,1) (got {})", self.gamma));
        }
        if !(self.d3 > 0.0) {
            v.push(format!("d3 must be positive (got {})", self.d3));
        }
        if !(0.0..1.0).contains(&self.eta) {
            v.push(format!("eta must lie in [0,1) (got {})", self.eta));
        }
        if !(self.big_c1 > 0.0 && self.big_c2 > 0.0) {
            v.push(format!("C1, C2 must be positive (got {}, {})", self.big_c1, self.big_c2));
        }
        v
    }

    /// Left side minus right side of the sigma equation.
    fn sigma_defect(&self, level: f64, sigma: f64) -> f64 {
        let inner = 1.0
            + self.big_c2 / self.big_c1 * level
            + 2.0 * self.c / self.big_c1
            + self.d0 * (1.0 + sigma * self.b.eval(self.d1 * sigma));
        inner.powf(self.gamma) - 0.5 * self.d3 * sigma
    }
}

/// Positive root of `[1 + (C2/C1)E + 2c/C1 + d0(1 + sigma b(d1 sigma))]^gamma = d3 sigma / 2`.
pub fn solve_sigma(level: f64, bc: &BarrierConstants, tol: f64) -> Result<f64, BarrierError> {
    if !(0.0..1.0).contains(&bc.gamma) {
        return Err(BarrierError::BadGamma(bc.gamma));
    }
    if bc.gamma == 0.0 {
        return Ok(2.0 / bc.d3);
    }
    let f = |s: f64| bc.sigma_defect(level, s);
    let mut lo = 1e-8;
    let mut hi = 1.0;
    while f(lo) <= 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(BarrierError::Bracket { level });
        }
    }
    let mut doublings = 0;
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 2000 || !hi.is_finite() {
            return Err(BarrierError::Bracket { level });
        }
    }
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn epsilon_of_e(level: f64, bc: &BarrierConstants) -> Result<f64, BarrierError> {
    Ok(1.0 / solve_sigma(level, bc, 1e-12)?)
}

/// `V_eps = Etot + eps (v, u)`.
pub fn lyapunov_v(sys: &PlateSystem, split: &SplitConstants, state: &State, eps: f64) -> Result<f64, BarrierError> {
    let e = total_energy(sys, split, state)?;
    Ok(e.etot + eps * state.v.dot(&(&sys.ops.m * &state.u)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub eps: f64,
    pub times: Vec<f64>,
    /// `RHS - (dV/dt + eps V)` at each snapshot.
    pub margins: Vec<f64>,
    /// Difference between second- and fourth-order derivative stencils.
    pub fd_allowance: Vec<f64>,
    /// `eps [1 + E]^gamma - d3` at each snapshot.
    pub bracket: Vec<f64>,
    pub inequality_violations: usize,
    pub bracket_violations: usize,
    pub max_bracket: f64,
    pub bracket_verdict: Verdict,
}

fn derivative_stencils(t: &[f64], v: &[f64], k: usize) -> (f64, f64) {
    let n = v.len();
    let h = if n > 1 { (t[n - 1] - t[0]) / (n - 1) as f64 } else { 1.0 };
    if n < 3 {
        return (if n == 2 { (v[1] - v[0]) / h } else { 0.0 }, 0.0);
    }
    let second = if k == 0 {
        (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    } else if k == n - 1 {
        (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
    } else {
        (v[k + 1] - v[k - 1]) / (2.0 * h)
    };
    let fourth = if k >= 2 && k + 2 < n {
        (v[k - 2] - 8.0 * v[k - 1] + 8.0 * v[k + 1] - v[k + 2]) / (12.0 * h)
    } else {
        second
    };
    (second, (second - fourth).abs())
}

/// Checks `dV/dt + eps V <= d0{eps + b(d1/eps)} + d2{eps[1+E]^gamma - d3}(D u_t, u_t)`
/// along equally spaced snapshots, and the barrier bracket sign.
pub fn decay_audit(
    sys: &PlateSystem,
    split: &SplitConstants,
    traj: &Trajectory,
    bc: &BarrierConstants,
    eps: f64,
) -> Result<AuditReport, BarrierError> {
    let times = traj.times();
    let mut vs = Vec::with_capacity(times.len());
    let mut es = Vec::with_capacity(times.len());
    let mut dd = Vec::with_capacity(times.len());
    for s in &traj.snapshots {
        let e = total_energy(sys, split, s)?;
        vs.push(e.etot + eps * s.v.dot(&(&sys.ops.m * &s.u)));
        es.push(e.e);
        dd.push(damping_rate(sys, &s.v));
    }
    let source = bc.d0 * (eps + bc.b.eval(bc.d1 / eps));
    let mut margins = Vec::new();
    let mut allowance = Vec::new();
    let mut bracket = Vec::new();
    let mut ineq = 0;
    for k in 0..vs.len() {
        let (dv, allow) = derivative_stencils(&times, &vs, k);
        let br = eps * (1.0 + es[k]).powf(bc.gamma) - bc.d3;
        let margin = source + bc.d2 * br * dd[k] - (dv + eps * vs[k]);
        if margin < -allow {
            ineq += 1;
        }
        margins.push(margin);
        allowance.push(allow);
        bracket.push(br);
    }
    let bracket_violations = bracket.iter().filter(|&&b| b > 0.0).count();
    let max_bracket = bracket.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(AuditReport {
        eps,
        times,
        margins,
        fd_allowance: allowance,
        bracket,
        inequality_violations: ineq,
        bracket_violations,
        max_bracket,
        bracket_verdict: Verdict::from_bool(bracket_violations == 0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VStar {
    pub radius: f64,
    pub k_r: f64,
    pub vstar: f64,
    pub iterations: usize,
}

/// `K_R = R + d0{1 + sigma(R) b(d1 sigma(R))}`, then `s -> d0{1 + sigma(s) b(d1 sigma(s))}`
/// from `K_R` until it settles.
pub fn vstar_bound(bc: &BarrierConstants, radius: f64) -> Result<VStar, BarrierError> {
    let map = |s: f64| -> Result<f64, BarrierError> {
        let sig = solve_sigma(s, bc, 1e-14)?;
        Ok(bc.d0 * (1.0 + sig * bc.b.eval(bc.d1 * sig)))
    };
    let k_r = radius + map(radius)?;
    let mut s = k_r;
    for it in 1..=100 {
        let next = map(s)?;
        if !next.is_finite() {
            return Err(BarrierError::Divergence { iterations: it, last: next });
        }
        if (next - s).abs() <= 1e-13 * next.abs().max(1.0) {
            return Ok(VStar { radius, k_r, vstar: next, iterations: it });
        }
        s = next;
    }
    Err(BarrierError::Divergence { iterations: 100, last: s })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub eta: f64,
    pub c2: f64,
    pub eta_tilde: f64,
    pub kappa_damp: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { eta: 0.5, c2: 1.0, eta_tilde: 0.5, kappa_damp: 1.0 }
    }
}

/// Fits the barrier constants for `sys` by max-violation over `samples`.
///
/// `c0, c1` come from the damping polynomial directly; `c3, c4` bound the
/// equipartition residual; `c_eta` bounds the flux term over a `delta` grid.
pub fn fit_constants(
    sys: &PlateSystem,
    split: &SplitConstants,
    samples: &[State],
    opts: FitOptions,
) -> Result<BarrierConstants, BarrierError> {
    let damping = &sys.cfg.damping;
    let q = damping.q().max(1);
    let gamma = gamma_of_q(q);
    let k = opts.kappa_damp;

    let (c0, c1) = if damping.b0() > 0.0 {
        (0.0, 1.0 / damping.b0())
    } else {
        let c1 = 1.0 / damping.g(1.0);
        let c0 = (0..=1000)
            .map(|i| {
                let s = i as f64 / 1000.0;
                s * s * (1.0 - c1 * damping.g(s))
            })
            .fold(0.0, f64::max);
        (c0, c1)
    };

    let lambda = 1.0 / sys.ops.lambda_min;
    let m = lambda.max(1.0);
    let eps_max = (0.25 / m).min(k * (1.0 - opts.eta) / (4.0 * c1));
    let big_c1 = 0.5 - eps_max * m;
    let big_c2 = 2.0 + eps_max * m;

    let mut records = Vec::with_capacity(2 * samples.len());
    for s in samples {
        records.push(sample_record(sys, split, &s.u, &s.v, opts)?);
        records.push(sample_record(sys, split, &s.u, &DVector::zeros(sys.dim()), opts)?);
    }

    let c = match split.lower_sandwich_constant(sys.cfg.delta, lambda) {
        Some(c) => c,
        None => records.iter().map(|r| r.sandwich_need).fold(0.0, f64::max),
    };

    let tiny = |r: &SampleRecord| r.dissipation <= 1e-12 * (1.0 + r.e);
    let c3 = records.iter().filter(|r| tiny(r)).map(|r| r.equipartition).fold(0.0, f64::max);
    let c4 = records
        .iter()
        .filter(|r| !tiny(r))
        .map(|r| (r.equipartition - c3).max(0.0) / ((1.0 + r.e).powf(gamma) * r.dissipation))
        .fold(1e-6, f64::max);

    let p = b_exponent(q);
    let deltas: Vec<f64> = (0..=24).map(|i| 10f64.powf(-4.0 + i as f64 / 6.0)).collect();
    let c_eta = records
        .iter()
        .flat_map(|r| {
            deltas
                .iter()
                .map(move |&d| (r.flux - opts.eta_tilde * k * r.dissipation - d * r.e).max(0.0) * d.powf(p))
        })
        .fold(1e-12, f64::max);

    let d_prime = (1.0 - opts.eta).min(opts.c2);
    let d0 = c + 2.0 * c0 + c3;
    let d1 = if d0 > 0.0 { 2.0 / d_prime * d0.powf(-1.0 / p) } else { 1.0 };
    let d2 = c4;
    let d3 = (k * (1.0 - opts.eta) - 2.0 * eps_max * c1) / c4;

    Ok(BarrierConstants {
        c0,
        c1,
        eta: opts.eta,
        c2: opts.c2,
        c3,
        c4,
        gamma,
        kappa_damp: k,
        d0,
        d1,
        d2,
        d3,
        b: BFunction { c_eta, exponent: p },
        big_c1,
        big_c2,
        c,
        eps_max,
        lambda,
        mode: FitMode::Fitted,
    })
}

struct SampleRecord {
    e: f64,
    dissipation: f64,
    flux: f64,
    equipartition: f64,
    sandwich_need: f64,
}

fn sample_record(
    sys: &PlateSystem,
    split: &SplitConstants,
    u: &DVector<f64>,
    v: &DVector<f64>,
    opts: FitOptions,
) -> Result<SampleRecord, BarrierError> {
    let state = State { u: u.clone(), v: v.clone(), t: 0.0 };
    let en = total_energy(sys, split, &state)?;
    let dissipation = damping_rate(sys, v);
    let flux = flux_rate(sys, u, v);
    let load = sys.apply_f(u)?;
    let du = sys.apply_damping(v).dot(u);
    // -(Dv, u) + (N(u), u) - (Pi'(u), u) = -(Dv, u) + (F(u), u).
    let equipartition = -du + load.dot(u) - opts.eta * sys.a_form(u, u) + opts.c2 * en.pi0;
    Ok(SampleRecord { e: en.e, dissipation, flux, equipartition, sandwich_need: -0.5 * en.e - en.pi1 })
}
