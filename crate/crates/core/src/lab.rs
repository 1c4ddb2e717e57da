//! Experiment drivers for long-time behavior: dissipativity sweeps, absorbing
//! times, trajectory-pair quasi-stability, correlation dimension, regularity of
//! tails and convergence to equilibria in the gradient case.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::Verdict;
use crate::energy::{total_energy, EnergyError, SplitConstants};
use crate::integrator::{random_state, run, SimPlan, Trajectory};
use crate::model::{stationary_solve, ModelError, NewtonOptions, PlateSystem, State};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid sweep plan: {0}")]
    InvalidPlan(String),
    #[error("correlation dimension needs at least {needed} tail snapshots (got {got})")]
    InsufficientSnapshots { needed: usize, got: usize },
    #[error("run failed: {0}")]
    Run(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Deterministic per-task seed.
pub fn task_seed(base: u64, a: usize, b: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(((a as u64) << 32) ^ (b as u64 + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub radii: Vec<f64>,
    pub samples_per_radius: usize,
    pub t_final: f64,
    pub tail_fraction: f64,
    pub seed: u64,
}

impl SweepPlan {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0)) {
            v.push("radii must be positive".into());
        }
        if self.radii.windows(2).any(|w| w[1] <= w[0]) {
            v.push("radii must be strictly increasing".into());
        }
        if self.samples_per_radius == 0 {
            v.push("samples_per_radius must be >= 1".into());
        }
        if !(self.t_final > 0.0) {
            v.push("t_final must be positive".into());
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            v.push("tail_fraction must lie in (0, 1)".into());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub radius: f64,
    pub sample: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    pub h_norms: Vec<f64>,
    /// `None` when the run blew up or failed.
    pub tail_sup: Option<f64>,
    pub failure: Option<String>,
    pub absorbing_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSummary {
    pub radius: f64,
    pub tail_sup: Option<f64>,
    pub absorbing_time: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub plan: SweepPlan,
    pub per_radius: Vec<RadiusSummary>,
    pub relative_spread: Option<f64>,
    /// Radius of the empirical absorbing ball, `1.1 x` the largest tail sup.
    pub r0: Option<f64>,
    pub blowups: usize,
    pub verdict: Verdict,
    pub samples: Vec<SweepSample>,
}

/// Phase-space norms `|(u, v)|_H` at every snapshot.
pub fn h_norm_series(sys: &PlateSystem, traj: &Trajectory) -> Vec<f64> {
    traj.snapshots.iter().map(|s| sys.h_norm_sq(&s.u, &s.v).sqrt()).collect()
}

fn tail_start(times: &[f64], t_final: f64, tail_fraction: f64) -> usize {
    let t0 = t_final * (1.0 - tail_fraction);
    times.iter().position(|&t| t >= t0 - 1e-12).unwrap_or(times.len())
}

/// First recorded time after which the series stays `<= r0`; `None` if it never settles.
pub fn absorbing_time(times: &[f64], norms: &[f64], r0: f64) -> Option<f64> {
    let last_out = norms.iter().rposition(|&x| !(x <= r0));
    match last_out {
        None => times.first().copied(),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

pub fn dissipativity_sweep(
    sys: &PlateSystem,
    split: &SplitConstants,
    sweep: &SweepPlan,
    sim: &SimPlan,
) -> Result<SweepReport, LabError> {
    let problems = sweep.violations();
    if !problems.is_empty() {
        return Err(LabError::InvalidPlan(problems.join("; ")));
    }
    let mut plan = *sim;
    plan.t_final = sweep.t_final;
    let tasks: Vec<(usize, usize)> = (0..sweep.radii.len())
        .flat_map(|r| (0..sweep.samples_per_radius).map(move |s| (r, s)))
        .collect();
    let mut samples: Vec<SweepSample> = tasks
        .par_iter()
        .map(|&(ri, si)| {
            let radius = sweep.radii[ri];
            let seed = task_seed(sweep.seed, ri, si);
            let init = random_state(sys, radius, seed);
            let (traj, failure) = match run(sys, split, &plan, &init) {
                Ok(t) => (t, None),
                Err(f) => (*f.partial, Some(f.source.to_string())),
            };
            let times = traj.times();
            let h_norms = h_norm_series(sys, &traj);
            let tail_sup = if failure.is_none() {
                let k0 = tail_start(&times, plan.t_final, sweep.tail_fraction);
                Some(h_norms[k0..].iter().copied().fold(0.0, f64::max))
            } else {
                None
            };
            SweepSample { radius, sample: si, seed, times, h_norms, tail_sup, failure, absorbing_time: None }
        })
        .collect();

    let blowups = samples.iter().filter(|s| s.failure.is_some()).count();
    let max_tail = samples.iter().filter_map(|s| s.tail_sup).fold(f64::NAN, f64::max);
    let r0 = max_tail.is_finite().then_some(1.1 * max_tail);
    if let Some(r0) = r0 {
        for s in samples.iter_mut().filter(|s| s.failure.is_none()) {
            s.absorbing_time = absorbing_time(&s.times, &s.h_norms, r0);
        }
    }
    let per_radius: Vec<RadiusSummary> = sweep
        .radii
        .iter()
        .map(|&radius| {
            let group: Vec<&SweepSample> = samples.iter().filter(|s| s.radius == radius).collect();
            let failures = group.iter().filter(|s| s.failure.is_some()).count();
            let tail_sup = if failures == 0 {
                Some(group.iter().filter_map(|s| s.tail_sup).fold(0.0, f64::max))
            } else {
                None
            };
            let absorbing_time = if failures == 0 && group.iter().all(|s| s.absorbing_time.is_some()) {
                Some(group.iter().filter_map(|s| s.absorbing_time).fold(0.0, f64::max))
            } else {
                None
            };
            RadiusSummary { radius, tail_sup, absorbing_time, failures }
        })
        .collect();
    let sups: Option<Vec<f64>> = per_radius.iter().map(|r| r.tail_sup).collect();
    let relative_spread = sups.map(|v| {
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        if hi > 0.0 {
            (hi - lo) / hi
        } else {
            0.0
        }
    });
    let ok = blowups == 0 && relative_spread.is_some_and(|s| s <= 0.25);
    Ok(SweepReport {
        plan: sweep.clone(),
        per_radius,
        relative_spread,
        r0,
        blowups,
        verdict: Verdict::from_bool(ok),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub times: Vec<f64>,
    pub separation: Vec<f64>,
    pub lower_order: Vec<f64>,
    /// Decay rate `omega` of `g0(t) = C exp(-omega t)`; `None` for identical data.
    pub fitted_rate: Option<f64>,
    pub fitted_c: Option<f64>,
    pub fitted_d: Option<f64>,
    pub violations: usize,
    pub certified: bool,
    pub verdict: Verdict,
}

/// Least-squares line `y = a + b x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Fits `|S_t y1 - S_t y2|^2 <= C e^{-omega t} |y1 - y2|^2 + d sup_{s<=t} |z(s)|_0^2`.
///
/// `omega` and `C` come from a log-linear fit of the running-max upper envelope;
/// `d` is the smallest value giving zero violations for that `(C, omega)`.
pub fn pair_quasistability(
    sys: &PlateSystem,
    split: &SplitConstants,
    y1: &State,
    y2: &State,
    plan: &SimPlan,
) -> Result<PairStats, LabError> {
    let t1 = run(sys, split, plan, y1).map_err(|e| LabError::Run(e.to_string()))?;
    let t2 = run(sys, split, plan, y2).map_err(|e| LabError::Run(e.to_string()))?;
    let times = t1.times();
    let mut separation = Vec::with_capacity(times.len());
    let mut lower_order = Vec::with_capacity(times.len());
    let mut running = 0.0_f64;
    for (a, b) in t1.snapshots.iter().zip(&t2.snapshots) {
        let du = &a.u - &b.u;
        let dv = &a.v - &b.v;
        separation.push(sys.h_norm_sq(&du, &dv));
        running = running.max(sys.modal.surrogate_norm_sq(&du, 2.0));
        lower_order.push(running);
    }
    let certified = sys.cfg.damping.b0() > 0.0;
    let s0 = separation[0];
    if s0 == 0.0 {
        let identical = separation.iter().all(|&s| s == 0.0);
        return Ok(PairStats {
            times,
            separation,
            lower_order,
            fitted_rate: None,
            fitted_c: None,
            fitted_d: None,
            violations: 0,
            certified,
            verdict: Verdict::from_bool(identical && certified),
        });
    }
    let mut envelope = separation.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&envelope)
        .filter(|(_, &e)| e > f64::MIN_POSITIVE)
        .map(|(&t, &e)| (t, e.ln()))
        .unzip();
    let (intercept, slope) = linear_fit(&xs, &ys);
    let omega = -slope;
    let c = intercept.exp() / s0;
    let g0 = |t: f64| c * (-omega * t).exp() * s0;
    let d = times
        .iter()
        .zip(&separation)
        .zip(&lower_order)
        .filter(|(_, &l)| l > 0.0)
        .map(|((&t, &s), &l)| (s - g0(t)).max(0.0) / l)
        .fold(0.0, f64::max);
    let violations = times
        .iter()
        .zip(&separation)
        .zip(&lower_order)
        .filter(|((&t, &s), &l)| s > (g0(t) + d * l) * (1.0 + 1e-12) + 1e-300)
        .count();
    let ok = omega > 0.0 && violations == 0 && certified;
    Ok(PairStats {
        times,
        separation,
        lower_order,
        fitted_rate: Some(omega),
        fitted_c: Some(c),
        fitted_d: Some(d),
        violations,
        certified,
        verdict: Verdict::from_bool(ok),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub embed_dim: usize,
    pub radii: Vec<f64>,
    pub correlation_sums: Vec<f64>,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub snapshots: usize,
    pub theiler: usize,
    pub estimates: Vec<DimensionEstimate>,
    pub spread: f64,
    pub saturation: Verdict,
}

pub const MIN_DIMENSION_SNAPSHOTS: usize = 2000;

/// Grassberger-Procaccia slope on the leading `embed_dim` modes, using the
/// coordinates `(sqrt(mu_i) z_u,i, z_v,i)` so distances are phase-space distances.
pub fn correlation_dimension(
    sys: &PlateSystem,
    tail: &[State],
    embed_dims: &[usize],
    theiler: usize,
) -> Result<DimensionReport, LabError> {
    if tail.len() < MIN_DIMENSION_SNAPSHOTS {
        return Err(LabError::InsufficientSnapshots { needed: MIN_DIMENSION_SNAPSHOTS, got: tail.len() });
    }
    let n = sys.dim();
    let coords: Vec<(DVector<f64>, DVector<f64>)> =
        tail.iter().map(|s| (sys.modal.modal(&s.u), sys.modal.modal(&s.v))).collect();
    let mut estimates = Vec::new();
    for &d in embed_dims {
        let d = d.clamp(1, n);
        let pts: Vec<Vec<f64>> = coords
            .iter()
            .map(|(zu, zv)| {
                (0..d).map(|i| sys.modal.mu[i].sqrt() * zu[i]).chain((0..d).map(|i| zv[i])).collect()
            })
            .collect();
        let mut dists: Vec<f64> = (0..pts.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let pts = &pts;
                ((i + theiler + 1)..pts.len()).map(move |j| {
                    pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                })
            })
            .collect();
        dists.par_sort_unstable_by(f64::total_cmp);
        let quantile = |q: f64| dists[((dists.len() - 1) as f64 * q).round() as usize];
        let (r_lo, r_hi) = (quantile(0.05), quantile(0.5));
        let mut radii = Vec::new();
        let mut sums = Vec::new();
        let slope = if r_lo > 0.0 && r_hi > r_lo {
            for k in 0..10 {
                let r = r_lo * (r_hi / r_lo).powf(k as f64 / 9.0);
                let count = dists.partition_point(|&x| x < r);
                radii.push(r);
                sums.push(count as f64 / dists.len() as f64);
            }
            let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
            let ly: Vec<f64> = sums.iter().map(|c| c.ln()).collect();
            linear_fit(&lx, &ly).1
        } else {
            0.0
        };
        estimates.push(DimensionEstimate { embed_dim: d, radii, correlation_sums: sums, slope });
    }
    let hi = estimates.iter().map(|e| e.slope).fold(f64::NEG_INFINITY, f64::max);
    let lo = estimates.iter().map(|e| e.slope).fold(f64::INFINITY, f64::min);
    let spread = hi - lo;
    Ok(DimensionReport {
        snapshots: tail.len(),
        theiler,
        estimates,
        spread,
        saturation: Verdict::from_bool(spread < 0.5),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub times: Vec<f64>,
    /// `|u_t|_{2,*}^2` per snapshot.
    pub velocity_norm_sq: Vec<f64>,
    /// `|u_tt|_0^2` per snapshot.
    pub acceleration_norm_sq: Vec<f64>,
    pub sup_velocity: f64,
    pub sup_acceleration: f64,
    /// Sups of `|u_t|_{2,*}^2 + |u_tt|_0^2` over `[T/2, 3T/4)` and `[3T/4, T]`.
    pub sup_middle: f64,
    pub sup_late: f64,
    pub verdict: Verdict,
}

/// Tail regularity: `u_tt = M^{-1}(F(u) - K u - D(u_t))` reconstructed at snapshots.
pub fn regularity_probe(sys: &PlateSystem, traj: &Trajectory) -> Result<RegularityReport, LabError> {
    let chol = Cholesky::new(sys.ops.m.clone()).expect("mass matrix is positive definite");
    let times = traj.times();
    let t_end = *times.last().unwrap_or(&0.0);
    let t_start = times.first().copied().unwrap_or(0.0);
    let mut vel = Vec::new();
    let mut acc = Vec::new();
    for s in &traj.snapshots {
        let load = sys.apply_f(&s.u)? - &sys.ops.k * &s.u - sys.apply_damping(&s.v);
        let a = chol.solve(&load);
        vel.push(sys.a_form(&s.v, &s.v));
        acc.push(sys.mass_norm_sq(&a));
    }
    let span = t_end - t_start;
    let (t_half, t_three) = (t_start + 0.5 * span, t_start + 0.75 * span);
    let window_sup = |lo: f64, hi: f64, inclusive: bool| {
        times
            .iter()
            .enumerate()
            .filter(|(_, &t)| t >= lo - 1e-12 && (t < hi - 1e-12 || (inclusive && t <= hi + 1e-12)))
            .map(|(k, _)| vel[k] + acc[k])
            .fold(0.0, f64::max)
    };
    let sup_middle = window_sup(t_half, t_three, false);
    let sup_late = window_sup(t_three, t_end, true);
    let tail_from = times.iter().position(|&t| t >= t_half - 1e-12).unwrap_or(0);
    let sup_velocity = vel[tail_from..].iter().copied().fold(0.0, f64::max);
    let sup_acceleration = acc[tail_from..].iter().copied().fold(0.0, f64::max);
    let finite = sup_velocity.is_finite() && sup_acceleration.is_finite();
    let ok = finite && sup_late <= 1.2 * sup_middle;
    Ok(RegularityReport {
        times,
        velocity_norm_sq: vel,
        acceleration_norm_sq: acc,
        sup_velocity,
        sup_acceleration,
        sup_middle,
        sup_late,
        verdict: Verdict::from_bool(ok),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySample {
    pub seed: u64,
    pub final_speed: f64,
    pub distance: Option<f64>,
    pub newton_residual: Option<f64>,
    /// Index into `StationaryReport::equilibria`.
    pub equilibrium: Option<usize>,
    pub ok: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub coefficients: Vec<f64>,
    pub residual: f64,
    pub energy_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub skipped: Option<String>,
    pub samples: Vec<StationarySample>,
    pub equilibria: Vec<Equilibrium>,
    pub verdict: Verdict,
}

pub const STATIONARY_SPEED_TOL: f64 = 1e-4;
pub const STATIONARY_DISTANCE_TOL: f64 = 1e-3;

/// Gradient case only: each sample must come to rest near a Newton-certified equilibrium.
pub fn stationary_convergence(
    sys: &PlateSystem,
    split: &SplitConstants,
    samples: usize,
    radius: f64,
    plan: &SimPlan,
) -> Result<StationaryReport, LabError> {
    if sys.cfg.beta != 0.0 {
        return Ok(StationaryReport {
            skipped: Some("beta != 0: no gradient structure, convergence to equilibria is not expected".into()),
            samples: vec![],
            equilibria: vec![],
            verdict: Verdict::Pass,
        });
    }
    let results: Vec<(StationarySample, Option<DVector<f64>>)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let seed = task_seed(plan.seed, 7, i);
            let init = random_state(sys, radius, seed);
            let traj = match run(sys, split, plan, &init) {
                Ok(t) => t,
                Err(e) => {
                    let note = Some(e.to_string());
                    let s = StationarySample {
                        seed,
                        final_speed: f64::NAN,
                        distance: None,
                        newton_residual: None,
                        equilibrium: None,
                        ok: false,
                        note,
                    };
                    return (s, None);
                }
            };
            let last = traj.last();
            let final_speed = sys.mass_norm_sq(&last.v).sqrt();
            match stationary_solve(sys, &last.u, NewtonOptions::default()) {
                Ok(eq) => {
                    let diff = &last.u - &eq.u;
                    let distance = sys.a_form(&diff, &diff).sqrt();
                    let ok = final_speed <= STATIONARY_SPEED_TOL && distance <= STATIONARY_DISTANCE_TOL;
                    let s = StationarySample {
                        seed,
                        final_speed,
                        distance: Some(distance),
                        newton_residual: Some(eq.residual),
                        equilibrium: None,
                        ok,
                        note: None,
                    };
                    (s, Some(eq.u))
                }
                Err(e) => {
                    let s = StationarySample {
                        seed,
                        final_speed,
                        distance: None,
                        newton_residual: None,
                        equilibrium: None,
                        ok: false,
                        note: Some(e.to_string()),
                    };
                    (s, None)
                }
            }
        })
        .collect();

    let mut equilibria: Vec<(DVector<f64>, Equilibrium)> = Vec::new();
    let mut out = Vec::new();
    for (mut s, eq) in results {
        if let Some(u) = eq {
            let found = equilibria.iter().position(|(v, _)| {
                let d = &u - v;
                sys.a_form(&d, &d).sqrt() <= 1e-6 * (1.0 + sys.a_form(v, v).sqrt())
            });
            let idx = match found {
                Some(i) => i,
                None => {
                    let residual = sys.stationary_residual(&u)?.norm();
                    let energy_norm = sys.a_form(&u, &u).sqrt();
                    equilibria.push((u.clone(), Equilibrium { coefficients: u.iter().copied().collect(), residual, energy_norm }));
                    equilibria.len() - 1
                }
            };
            s.equilibrium = Some(idx);
        }
        out.push(s);
    }
    let ok = out.iter().all(|s| s.ok);
    Ok(StationaryReport {
        skipped: None,
        samples: out,
        equilibria: equilibria.into_iter().map(|(_, e)| e).collect(),
        verdict: Verdict::from_bool(ok),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    #[serde(rename = "C1")]
    pub big_c1: f64,
    #[serde(rename = "C2")]
    pub big_c2: f64,
    pub snapshots: usize,
    pub violations: usize,
    pub min_lower_margin: f64,
    pub min_upper_margin: f64,
    pub verdict: Verdict,
}

/// Constants `(C1, C2)` of `E/2 - C1 <= Etot <= 2E + C2`. `C2 = 0` since `Pi1 <= 0`;
/// `C1` is closed-form when available, otherwise the largest `E/2 - Etot` over `samples`.
pub fn sandwich_constants(sys: &PlateSystem, split: &SplitConstants, samples: &[State]) -> Result<(f64, f64), LabError> {
    let lambda = 1.0 / sys.ops.lambda_min;
    let c1 = match split.lower_sandwich_constant(sys.cfg.delta, lambda) {
        Some(c) => c,
        None => {
            let mut worst = 0.0_f64;
            for s in samples {
                let e = total_energy(sys, split, s)?;
                worst = worst.max(0.5 * e.e - e.etot);
            }
            worst
        }
    };
    Ok((c1, 0.0))
}

/// Checks `E/2 - C1 <= Etot <= 2E + C2` on every ledger row.
pub fn sandwich_audit(traj: &Trajectory, big_c1: f64, big_c2: f64) -> SandwichReport {
    let mut violations = 0;
    let mut min_lower = f64::INFINITY;
    let mut min_upper = f64::INFINITY;
    for row in &traj.ledger {
        let lower = row.etot - (0.5 * row.e - big_c1);
        let upper = 2.0 * row.e + big_c2 - row.etot;
        let tol = 1e-12 * (1.0 + row.e.abs());
        if lower < -tol || upper < -tol {
            violations += 1;
        }
        min_lower = min_lower.min(lower);
        min_upper = min_upper.min(upper);
    }
    SandwichReport {
        big_c1,
        big_c2,
        snapshots: traj.ledger.len(),
        violations,
        min_lower_margin: min_lower,
        min_upper_margin: min_upper,
        verdict: Verdict::from_bool(violations == 0),
    }
}

/// Nodes `x` such that the energy ledger is nonincreasing within `tol` per step.
pub fn monotone_violations(values: &[f64], tol: f64) -> usize {
    values.windows(2).filter(|w| w[1] > w[0] + tol * (1.0 + w[0].abs())).count()
}

/// Phase-space distance matrix is not needed elsewhere; exposed for tests.
pub fn pairwise_h_distances(sys: &PlateSystem, states: &[State]) -> DMatrix<f64> {
    let n = states.len();
    DMatrix::from_fn(n, n, |i, j| {
        let du = &states[i].u - &states[j].u;
        let dv = &states[i].v - &states[j].v;
        sys.h_norm_sq(&du, &dv).sqrt()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absorbing_time_cases() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(absorbing_time(&t, &[0.5, 0.4, 0.3, 0.2], 1.0), Some(0.0));
        assert_eq!(absorbing_time(&t, &[3.0, 2.0, 0.3, 0.2], 1.0), Some(2.0));
        assert_eq!(absorbing_time(&t, &[3.0, 2.0, 0.3, 2.0], 1.0), None);
    }

    #[test]
    fn linear_fit_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (a, b) = linear_fit(&x, &y);
        assert!((a - 2.0).abs() < 1e-14 && (b + 0.5).abs() < 1e-14);
    }

    #[test]
    fn monotone_counter() {
        assert_eq!(monotone_violations(&[3.0, 2.0, 2.0, 1.0], 0.0), 0);
        assert_eq!(monotone_violations(&[3.0, 2.0, 2.5, 1.0], 0.0), 1);
    }

    #[test]
    fn sweep_plan_validation() {
        let p = SweepPlan { radii: vec![5.0, 1.0], samples_per_radius: 0, t_final: 1.0, tail_fraction: 1.5, seed: 0 };
        assert_eq!(p.violations().len(), 3);
    }
}
