//! Implicit-midpoint time stepping.
//!
//! With `w = u_m - u0` the step reduces to
//! `[(4/dt^2 + 2 g(rho)/dt) M + K] w = F(u0 + w) - K u0 + (2/dt) M v0`, `rho = |v_m|_0 = 2|w|_0/dt`.
//! In the M-orthonormal eigenbasis of `(K, M)` the matrix is diagonal, so each
//! fixed-point sweep costs one load evaluation plus a scalar solve for `rho`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{damping_rate, flux_rate, total_energy, EnergyError, LedgerRow, SplitConstants};
use crate::model::{stationary_solve, Damping, ModelError, NewtonOptions, PlateSystem, State};

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("fixed-point iteration did not converge at t={t} after {iterations} iterations (last change {change:e}); reduce dt")]
    FixedPoint { t: f64, iterations: usize, change: f64 },
    #[error("damping magnitude solve failed to bracket (h(lo)={lo:e}, h(hi)={hi:e})")]
    Bracket { lo: f64, hi: f64 },
    #[error("state became non-finite at t={0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimPlan {
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_every: usize,
    pub fp_tol: f64,
    pub fp_maxiter: usize,
    pub seed: u64,
}

impl SimPlan {
    pub fn new(dt: f64, t_final: f64) -> Self {
        SimPlan { dt, t_final, snapshot_every: 1, fp_tol: 1e-11, fp_maxiter: 60, seed: 0 }
    }

    pub fn with_snapshot_every(mut self, every: usize) -> Self {
        self.snapshot_every = every;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            v.push(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            v.push(format!("t_final must be >= 0 (got {})", self.t_final));
        }
        if self.snapshot_every == 0 {
            v.push("snapshot_every must be >= 1".into());
        }
        if !(self.fp_tol > 0.0) {
            v.push(format!("fp_tol must be positive (got {})", self.fp_tol));
        }
        if self.fp_maxiter == 0 {
            v.push("fp_maxiter must be >= 1".into());
        }
        v
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Zero,
    /// `u = amplitude * sin(m x) P_k(y/l)`, `v = 0`.
    Mode { m: usize, k: usize, amplitude: f64 },
    /// `u = amplitude * Phi_index`, the `index`-th eigenvector of `(K, M)` (0-based), `v = 0`.
    Eigenmode { index: usize, amplitude: f64 },
    /// Random smooth state with phase-space norm `radius`.
    Random { radius: f64 },
    /// Newton-refined equilibrium from `guess_amplitude * sin(x)`, plus a random kick of norm `kick`.
    StationaryPlusKick { guess_amplitude: f64, kick: f64 },
}

/// Random state with `|(u, v)|_H = radius`; modal amplitudes decay like `mu_1 / mu_i`.
pub fn random_state(sys: &PlateSystem, radius: f64, seed: u64) -> State {
    let n = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = &sys.modal.mu;
    let mut zu = DVector::zeros(n);
    let mut zv = DVector::zeros(n);
    for i in 0..n {
        let w = mu[0] / mu[i];
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        zu[i] = a * w / mu[i].sqrt();
        zv[i] = b * w;
    }
    let norm = (0..n).map(|i| mu[i] * zu[i] * zu[i] + zv[i] * zv[i]).sum::<f64>().sqrt();
    let scale = if norm > 0.0 { radius / norm } else { 0.0 };
    State { u: sys.modal.coefficients(&zu) * scale, v: sys.modal.coefficients(&zv) * scale, t: 0.0 }
}

pub fn initial_state(sys: &PlateSystem, ic: &InitialCondition, seed: u64) -> Result<State, IntegratorError> {
    let n = sys.dim();
    match *ic {
        InitialCondition::Zero => Ok(State::zeros(n)),
        InitialCondition::Mode { m, k, amplitude } => {
            if m < 1 || m > sys.basis.mx || k >= sys.basis.ny {
                return Err(IntegratorError::InvalidPlan(format!("mode ({m},{k}) outside the basis")));
            }
            let mut s = State::zeros(n);
            s.u[sys.basis.index(m, k)] = amplitude;
            Ok(s)
        }
        InitialCondition::Eigenmode { index, amplitude } => {
            if index >= n {
                return Err(IntegratorError::InvalidPlan(format!("eigenmode {index} outside the basis (dim {n})")));
            }
            let mut s = State::zeros(n);
            s.u = sys.modal.phi.column(index) * amplitude;
            Ok(s)
        }
        InitialCondition::Random { radius } => Ok(random_state(sys, radius, seed)),
        InitialCondition::StationaryPlusKick { guess_amplitude, kick } => {
            let mut guess = DVector::zeros(n);
            guess[sys.basis.index(1, 0)] = guess_amplitude;
            let eq = stationary_solve(sys, &guess, NewtonOptions::default())?;
            let k = random_state(sys, kick, seed);
            Ok(State { u: eq.u + k.u, v: k.v, t: 0.0 })
        }
    }
}

/// Closed form of `rho = |v_m|_0` for zero or linear damping, else safeguarded Newton.
///
/// `b` is the modal right-hand side; `rho` solves `rho = (2/dt) |b / (a(rho) + mu)|`
/// with `a(rho) = 4/dt^2 + 2 g(rho)/dt`.
pub fn solve_damping_magnitude(
    b: &DVector<f64>,
    mu: &DVector<f64>,
    dt: f64,
    damping: &Damping,
    tol: f64,
) -> Result<f64, IntegratorError> {
    if damping.is_linear() {
        let a = 4.0 / (dt * dt) + 2.0 * damping.b0() / dt;
        return Ok(modal_speed(b, mu, dt, a));
    }
    damping_magnitude_newton(b, mu, dt, damping, tol)
}

fn modal_speed(b: &DVector<f64>, mu: &DVector<f64>, dt: f64, a: f64) -> f64 {
    let s: f64 = b.iter().zip(mu.iter()).map(|(bi, mi)| (bi / (a + mi)).powi(2)).sum();
    2.0 / dt * s.sqrt()
}

/// Generic scalar solve of `h(rho) = rho - (2/dt)|y(rho)| = 0`, `h` increasing.
pub fn damping_magnitude_newton(
    b: &DVector<f64>,
    mu: &DVector<f64>,
    dt: f64,
    damping: &Damping,
    tol: f64,
) -> Result<f64, IntegratorError> {
    let a_of = |rho: f64| 4.0 / (dt * dt) + 2.0 * damping.g(rho) / dt;
    let hi0 = modal_speed(b, mu, dt, a_of(0.0));
    if hi0 == 0.0 {
        return Ok(0.0);
    }
    let h = |rho: f64| {
        let a = a_of(rho);
        let da = 2.0 * damping.dg(rho) / dt;
        let mut s = 0.0;
        let mut ds = 0.0;
        for (bi, mi) in b.iter().zip(mu.iter()) {
            let d = a + mi;
            s += (bi / d).powi(2);
            ds += -2.0 * bi * bi / (d * d * d) * da;
        }
        let norm = s.sqrt();
        let val = rho - 2.0 / dt * norm;
        let der = 1.0 - 2.0 / dt * if norm > 0.0 { 0.5 * ds / norm } else { 0.0 };
        (val, der)
    };
    let (mut lo, mut hi) = (0.0, hi0);
    let (hlo, hhi) = (h(lo).0, h(hi).0);
    if hlo > 0.0 || hhi < 0.0 {
        return Err(IntegratorError::Bracket { lo: hlo, hi: hhi });
    }
    if hhi == 0.0 {
        return Ok(hi);
    }
    let mut rho = hi;
    for _ in 0..200 {
        let (val, der) = h(rho);
        if val.abs() <= tol * rho.max(f64::MIN_POSITIVE) {
            return Ok(rho);
        }
        if val > 0.0 {
            hi = rho;
        } else {
            lo = rho;
        }
        let newton = rho - val / der;
        rho = if der > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= tol * hi {
            return Ok(0.5 * (lo + hi));
        }
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepInfo {
    pub iterations: usize,
    pub rho: f64,
    pub relaxed: bool,
}

/// One midpoint step. Conservative nonlinear terms enter through `averaged_f`, so the
/// discrete energy changes only by damping and flow work.
pub fn step(sys: &PlateSystem, state: &State, plan: &SimPlan) -> Result<(State, StepInfo), IntegratorError> {
    let dt = plan.dt;
    let mu = &sys.modal.mu;
    let n = sys.dim();
    let p0 = sys.modal.modal(&state.u);
    let q0 = sys.modal.modal(&state.v);
    let base = DVector::from_fn(n, |i, _| -mu[i] * p0[i] + 2.0 / dt * q0[i]);
    let hweights = DVector::from_fn(n, |i, _| 4.0 * mu[i] + 16.0 / (dt * dt));
    let scale = 1.0 + (0..n).map(|i| mu[i] * p0[i] * p0[i] + q0[i] * q0[i]).sum::<f64>().sqrt();
    let linear_only = sys.cfg.alpha == 0.0
        && sys.cfg.delta == 0.0
        && sys.cfg.kappa == 0.0
        && sys.cfg.beta == 0.0
        && sys.cfg.source.is_zero();

    let mut y = &q0 * (0.5 * dt);
    let mut omega = 1.0;
    let mut last_change = f64::INFINITY;
    let mut info = StepInfo::default();
    for it in 1..=plan.fp_maxiter {
        let rhs = if linear_only {
            base.clone()
        } else {
            let u1 = &state.u + sys.modal.coefficients(&y) * 2.0;
            let load = sys.averaged_f(&state.u, &u1)?;
            sys.modal.phi.tr_mul(&load) + &base
        };
        let rho = solve_damping_magnitude(&rhs, mu, dt, &sys.cfg.damping, 1e-15)?;
        let a = 4.0 / (dt * dt) + 2.0 * sys.cfg.damping.g(rho) / dt;
        let y_new = DVector::from_fn(n, |i, _| rhs[i] / (a + mu[i]));
        let delta = &y_new - &y;
        let change = delta.iter().zip(hweights.iter()).map(|(d, w)| w * d * d).sum::<f64>().sqrt();
        if !change.is_finite() {
            return Err(IntegratorError::NonFinite(state.t));
        }
        if change >= last_change && omega == 1.0 {
            omega = 0.8;
            info.relaxed = true;
        }
        y = if omega == 1.0 { y_new } else { &y + delta * omega };
        info.iterations = it;
        info.rho = rho;
        if linear_only || change <= plan.fp_tol * scale {
            let w = sys.modal.coefficients(&y);
            let u1 = &state.u + &w * 2.0;
            let v1 = &w * (4.0 / dt) - &state.v;
            let next = State { u: u1, v: v1, t: state.t + dt };
            if !next.is_finite() {
                return Err(IntegratorError::NonFinite(next.t));
            }
            return Ok((next, info));
        }
        last_change = change;
    }
    Err(IntegratorError::FixedPoint { t: state.t, iterations: plan.fp_maxiter, change: last_change })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub plan: SimPlan,
    pub mx: usize,
    pub ny: usize,
    pub split: SplitConstants,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<State>,
    pub ledger: Vec<LedgerRow>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &State {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }

    /// Largest `|identity_residual| / t_final` over the ledger.
    pub fn residual_per_unit_time(&self) -> f64 {
        let t = self.ledger.last().map(|r| r.t).unwrap_or(0.0);
        let m = self.ledger.iter().map(|r| r.identity_residual.abs()).fold(0.0, f64::max);
        if t > 0.0 {
            m / t
        } else {
            m
        }
    }
}

/// A failed run keeps everything computed before the failure.
#[derive(Debug, Error)]
#[error("{source} (partial trajectory kept with {} snapshots)", partial.snapshots.len())]
pub struct RunFailure {
    #[source]
    pub source: IntegratorError,
    pub partial: Box<Trajectory>,
}

fn ledger_row(
    sys: &PlateSystem,
    split: &SplitConstants,
    state: &State,
    damping_integral: f64,
    flux_integral: f64,
    etot0: f64,
) -> Result<LedgerRow, IntegratorError> {
    let e = total_energy(sys, split, state)?;
    Ok(LedgerRow {
        t: state.t,
        kinetic: e.kinetic,
        bending: e.bending,
        pi: e.pi,
        pi0: e.pi0,
        pi1: e.pi1,
        e: e.e,
        etot: e.etot,
        damping_integral,
        flux_integral,
        identity_residual: (e.etot - etot0) + damping_integral - flux_integral,
    })
}

/// Advances `initial` to `plan.t_final`, recording every `snapshot_every`-th step and the last one.
pub fn run(
    sys: &PlateSystem,
    split: &SplitConstants,
    plan: &SimPlan,
    initial: &State,
) -> Result<Trajectory, RunFailure> {
    let meta = TrajectoryMeta { plan: *plan, mx: sys.basis.mx, ny: sys.basis.ny, split: *split };
    let mut traj = Trajectory { snapshots: Vec::new(), ledger: Vec::new(), meta };
    let fail = |source: IntegratorError, traj: Trajectory| RunFailure { source, partial: Box::new(traj) };

    let problems = plan.violations();
    if !problems.is_empty() {
        return Err(fail(IntegratorError::InvalidPlan(problems.join("; ")), traj));
    }
    let mut state = initial.clone();
    let etot0 = match total_energy(sys, split, &state) {
        Ok(e) => e.etot,
        Err(e) => return Err(fail(e.into(), traj)),
    };
    let (mut damp, mut flux) = (0.0, 0.0);
    match ledger_row(sys, split, &state, damp, flux, etot0) {
        Ok(row) => traj.ledger.push(row),
        Err(e) => return Err(fail(e, traj)),
    }
    traj.snapshots.push(state.clone());

    let steps = plan.steps();
    let mut dr0 = damping_rate(sys, &state.v);
    let mut fr0 = flux_rate(sys, &state.u, &state.v);
    for k in 1..=steps {
        let next = match step(sys, &state, plan) {
            Ok((s, _)) => s,
            Err(e) => return Err(fail(e, traj)),
        };
        let dr1 = damping_rate(sys, &next.v);
        let fr1 = flux_rate(sys, &next.u, &next.v);
        damp += 0.5 * plan.dt * (dr0 + dr1);
        flux += 0.5 * plan.dt * (fr0 + fr1);
        dr0 = dr1;
        fr0 = fr1;
        state = next;
        // Use the exact grid time to avoid accumulated rounding in t.
        state.t = initial.t + k as f64 * plan.dt;
        if k % plan.snapshot_every == 0 || k == steps {
            match ledger_row(sys, split, &state, damp, flux, etot0) {
                Ok(row) => traj.ledger.push(row),
                Err(e) => return Err(fail(e, traj)),
            }
            traj.snapshots.push(state.clone());
        }
    }
    Ok(traj)
}
