//! Subcommand drivers. Each writes its reports through an `OutputDir` and
//! returns the verdict that decides the exit code.

use std::f64::consts::PI;

use plate_core::barrier::{
    balancing_check, decay_audit, epsilon_of_e, gamma_of_q, solve_sigma, vstar_bound, AuditReport, BalancingReport,
    BFunction, BarrierConstants, BarrierError, VStar, Verdict,
};
use plate_core::discretization::{gauss_legendre, DomainSpec};
use plate_core::energy::{poincare_ratio, total_energy, Energies, EnergyError, SplitConstants, LEDGER_COLUMNS};
use plate_core::integrator::{initial_state, random_state, run, IntegratorError, SimPlan, Trajectory};
use plate_core::lab::{
    correlation_dimension, dissipativity_sweep, monotone_violations, pair_quasistability, regularity_probe,
    sandwich_audit, sandwich_constants, stationary_convergence, task_seed, DimensionEstimate, LabError,
    RadiusSummary, SandwichReport, StationaryReport,
};
use plate_core::model::{
    validate_assumption_f, AssumptionF, Damping, ModelError, PlateConfig, PlateSystem, Source, SplineSource, State,
};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{BarrierMode, ConfigError, LoadedConfig};
use crate::io::{Cell, OutputDir, OutputError, Plot, Series};

/// Relative round-off allowance for "nonincreasing" energy checks.
pub const MONOTONE_TOL: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output(OutputError::Exists(_)) => 2,
            CliError::Numeric(_) => 3,
            CliError::Output(_) => 1,
        }
    }
}

macro_rules! numeric_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Numeric(e.to_string())
            }
        }
    )*};
}
numeric_from!(ModelError, EnergyError, IntegratorError, BarrierError);

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::InsufficientSnapshots { .. } | LabError::InvalidPlan(_) => {
                CliError::Config(ConfigError::Invalid(vec![e.to_string()]))
            }
            other => CliError::Numeric(other.to_string()),
        }
    }
}

pub struct Context {
    pub loaded: LoadedConfig,
    pub out: OutputDir,
    pub plots: bool,
}

pub struct Outcome {
    pub verdict: Option<Verdict>,
    pub lines: Vec<String>,
}

fn build(loaded: &LoadedConfig) -> Result<(PlateSystem, SplitConstants), CliError> {
    let c = &loaded.config;
    let sys = PlateSystem::new(c.plate.clone(), c.mx, c.ny, c.oversample)?;
    let split = SplitConstants::new(&c.plate, loaded.certificates.source_bound());
    Ok((sys, split))
}

fn simulate_trajectory(
    ctx: &mut Context,
    sys: &PlateSystem,
    split: &SplitConstants,
    plan: &SimPlan,
) -> Result<Trajectory, CliError> {
    let init = initial_state(sys, &ctx.loaded.config.initial, plan.seed)?;
    match run(sys, split, plan, &init) {
        Ok(t) => Ok(t),
        Err(fail) => {
            write_ledger(&mut ctx.out, "ledger_partial.csv", &fail.partial)?;
            Err(CliError::Numeric(fail.to_string()))
        }
    }
}

fn write_ledger(out: &mut OutputDir, name: &str, traj: &Trajectory) -> Result<(), CliError> {
    let rows: Vec<Vec<Cell>> = traj.ledger.iter().map(|r| r.values().iter().map(|&x| Cell::F(x)).collect()).collect();
    out.csv(name, &LEDGER_COLUMNS, &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct MonotoneReport {
    tolerance: f64,
    violations: usize,
    verdict: Verdict,
}

#[derive(Serialize)]
struct RegularitySummary {
    sup_velocity: f64,
    sup_acceleration: f64,
    sup_middle: f64,
    sup_late: f64,
    verdict: Verdict,
}

#[derive(Serialize)]
struct SimulateReport {
    steps: usize,
    snapshots: usize,
    residual_per_unit_time: f64,
    max_abs_identity_residual: f64,
    relative_energy_drift: f64,
    initial: Energies,
    last: Energies,
    sandwich: SandwichReport,
    gradient_monotone: Option<MonotoneReport>,
    regularity: RegularitySummary,
    verdict: Verdict,
}

pub fn simulate(ctx: &mut Context) -> Result<Outcome, CliError> {
    let (sys, split) = build(&ctx.loaded)?;
    let plan = ctx.loaded.config.plan;
    let traj = simulate_trajectory(ctx, &sys, &split, &plan)?;
    write_ledger(&mut ctx.out, "ledger.csv", &traj)?;
    let snapshots = crate::io::render_snapshots(&ctx.out.hash, &traj)?;
    ctx.out.write_text("snapshots.json", &snapshots)?;

    let (c1, c2) = sandwich_constants(&sys, &split, &traj.snapshots)?;
    let sandwich = sandwich_audit(&traj, c1, c2);
    let etot: Vec<f64> = traj.ledger.iter().map(|r| r.etot).collect();
    let gradient_monotone = (sys.cfg.beta == 0.0).then(|| {
        let violations = monotone_violations(&etot, MONOTONE_TOL);
        MonotoneReport { tolerance: MONOTONE_TOL, violations, verdict: Verdict::from_bool(violations == 0) }
    });
    let reg = regularity_probe(&sys, &traj)?;
    let e0 = etot[0];
    let report = SimulateReport {
        steps: plan.steps(),
        snapshots: traj.snapshots.len(),
        residual_per_unit_time: traj.residual_per_unit_time(),
        max_abs_identity_residual: traj.ledger.iter().map(|r| r.identity_residual.abs()).fold(0.0, f64::max),
        relative_energy_drift: etot.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE),
        initial: total_energy(&sys, &split, &traj.snapshots[0])?,
        last: total_energy(&sys, &split, traj.last())?,
        verdict: Verdict::from_bool(
            sandwich.verdict.passed() && gradient_monotone.as_ref().is_none_or(|m| m.verdict.passed()),
        ),
        sandwich,
        gradient_monotone,
        regularity: RegularitySummary {
            sup_velocity: reg.sup_velocity,
            sup_acceleration: reg.sup_acceleration,
            sup_middle: reg.sup_middle,
            sup_late: reg.sup_late,
            verdict: reg.verdict,
        },
    };
    ctx.out.json("report.json", "simulate", &report)?;
    if ctx.plots {
        let t = traj.times();
        let col = |f: fn(&plate_core::energy::LedgerRow) -> f64| traj.ledger.iter().map(f).collect::<Vec<_>>();
        ctx.out.svg(
            "energy.svg",
            &Plot {
                title: "Energy ledger".into(),
                x_label: "t".into(),
                y_label: "energy".into(),
                log_y: false,
                series: vec![
                    Series { label: "Etot".into(), xs: t.clone(), ys: col(|r| r.etot) },
                    Series { label: "E".into(), xs: t.clone(), ys: col(|r| r.e) },
                ],
            },
        )?;
        ctx.out.svg(
            "identity_residual.svg",
            &Plot {
                title: "Energy identity residual".into(),
                x_label: "t".into(),
                y_label: "|residual|".into(),
                log_y: true,
                series: vec![Series { label: "|res|".into(), xs: t, ys: col(|r| r.identity_residual.abs()) }],
            },
        )?;
    }
    let lines = vec![
        format!("identity residual per unit time: {:.3e}", report.residual_per_unit_time),
        format!("relative energy drift: {:.3e}", report.relative_energy_drift),
        format!("sandwich violations: {}", report.sandwich.violations),
    ];
    Ok(Outcome { verdict: Some(report.verdict), lines })
}

#[derive(Serialize)]
struct SweepSampleSummary {
    radius: f64,
    sample: usize,
    seed: u64,
    tail_sup: Option<f64>,
    absorbing_time: Option<f64>,
    failure: Option<String>,
}

#[derive(Serialize)]
struct SweepSummary {
    radii: Vec<f64>,
    samples_per_radius: usize,
    t_final: f64,
    tail_fraction: f64,
    per_radius: Vec<RadiusSummary>,
    relative_spread: Option<f64>,
    r0: Option<f64>,
    blowups: usize,
    samples: Vec<SweepSampleSummary>,
    verdict: Verdict,
}

pub fn sweep(ctx: &mut Context) -> Result<Outcome, CliError> {
    let (sys, split) = build(&ctx.loaded)?;
    let cfg = &ctx.loaded.config;
    let report = dissipativity_sweep(&sys, &split, &cfg.sweep_plan(), &cfg.plan)?;
    let rows: Vec<Vec<Cell>> = report
        .samples
        .iter()
        .map(|s| {
            vec![
                s.radius.into(),
                s.sample.into(),
                s.seed.into(),
                s.tail_sup.into(),
                s.absorbing_time.into(),
                s.failure.as_deref().unwrap_or("").into(),
            ]
        })
        .collect();
    ctx.out.csv("sweep.csv", &["radius", "sample", "seed", "tail_sup", "absorbing_time", "failure"], &rows)?;
    let series: Vec<Vec<Cell>> = report
        .samples
        .iter()
        .flat_map(|s| {
            s.times.iter().zip(&s.h_norms).map(move |(&t, &h)| vec![s.radius.into(), s.sample.into(), t.into(), h.into()])
        })
        .collect();
    ctx.out.csv("sweep_series.csv", &["radius", "sample", "t", "h_norm"], &series)?;
    let summary = SweepSummary {
        radii: report.plan.radii.clone(),
        samples_per_radius: report.plan.samples_per_radius,
        t_final: report.plan.t_final,
        tail_fraction: report.plan.tail_fraction,
        per_radius: report.per_radius.clone(),
        relative_spread: report.relative_spread,
        r0: report.r0,
        blowups: report.blowups,
        samples: report
            .samples
            .iter()
            .map(|s| SweepSampleSummary {
                radius: s.radius,
                sample: s.sample,
                seed: s.seed,
                tail_sup: s.tail_sup,
                absorbing_time: s.absorbing_time,
                failure: s.failure.clone(),
            })
            .collect(),
        verdict: report.verdict,
    };
    ctx.out.json("sweep.json", "sweep", &summary)?;
    if ctx.plots {
        let series = report
            .samples
            .iter()
            .filter(|s| s.sample == 0)
            .map(|s| Series { label: format!("R = {}", s.radius), xs: s.times.clone(), ys: s.h_norms.clone() })
            .collect();
        ctx.out.svg(
            "sweep.svg",
            &Plot { title: "Phase-space norm".into(), x_label: "t".into(), y_label: "|S_t y|_H".into(), log_y: true, series },
        )?;
    }
    let mut lines: Vec<String> = report
        .per_radius
        .iter()
        .map(|r| format!("R = {}: tail sup {:?}, absorbing time {:?}, failures {}", r.radius, r.tail_sup, r.absorbing_time, r.failures))
        .collect();
    lines.push(format!("relative spread: {:?}, blow-ups: {}", report.relative_spread, report.blowups));
    Ok(Outcome { verdict: Some(report.verdict), lines })
}

#[derive(Serialize)]
struct AuditSummary {
    eps: f64,
    snapshots: usize,
    max_bracket: f64,
    bracket_violations: usize,
    inequality_violations: usize,
    bracket_verdict: Verdict,
}

impl From<&AuditReport> for AuditSummary {
    fn from(a: &AuditReport) -> Self {
        AuditSummary {
            eps: a.eps,
            snapshots: a.times.len(),
            max_bracket: a.max_bracket,
            bracket_violations: a.bracket_violations,
            inequality_violations: a.inequality_violations,
            bracket_verdict: a.bracket_verdict,
        }
    }
}

#[derive(Serialize)]
struct BarrierReport {
    constants: BarrierConstants,
    initial_energy: Option<f64>,
    sigma: f64,
    eps: f64,
    sigma_at_zero: f64,
    balancing: BalancingReport,
    vstar: Vec<VStar>,
    vstar_spread: f64,
    audit: Option<AuditSummary>,
    verdict: Verdict,
}

pub fn barrier(ctx: &mut Context, toy: bool) -> Result<Outcome, CliError> {
    let section = ctx.loaded.config.barrier.clone();
    let toy = toy || section.mode == BarrierMode::Toy;
    let mut audit = None;
    let (bc, level) = if toy {
        (BarrierConstants::toy(), 1.0)
    } else {
        let (sys, split) = build(&ctx.loaded)?;
        let plan = ctx.loaded.config.plan;
        let traj = simulate_trajectory(ctx, &sys, &split, &plan)?;
        let bc = match section.mode {
            BarrierMode::Manual => section.constants.expect("validated at parse time"),
            _ => plate_core::barrier::fit_constants(&sys, &split, &traj.snapshots, section.fit_options())?,
        };
        let e0 = traj.ledger[0].e;
        let eps = epsilon_of_e(e0, &bc)?;
        let a = decay_audit(&sys, &split, &traj, &bc, eps)?;
        let rows: Vec<Vec<Cell>> = (0..a.times.len())
            .map(|k| vec![a.times[k].into(), a.margins[k].into(), a.fd_allowance[k].into(), a.bracket[k].into()])
            .collect();
        ctx.out.csv("audit.csv", &["t", "margin", "fd_allowance", "bracket"], &rows)?;
        if ctx.plots {
            ctx.out.svg(
                "bracket.svg",
                &Plot {
                    title: "Barrier bracket".into(),
                    x_label: "t".into(),
                    y_label: "eps[1+E]^gamma - d3".into(),
                    log_y: false,
                    series: vec![Series { label: "bracket".into(), xs: a.times.clone(), ys: a.bracket.clone() }],
                },
            )?;
        }
        audit = Some(a);
        (bc, e0)
    };
    let sigma = solve_sigma(level, &bc, 1e-12)?;
    let sigma_at_zero = solve_sigma(0.0, &bc, 1e-12)?;
    let b = bc.b;
    let balancing = balancing_check(bc.gamma, |x| b.eval(x), section.decades);
    let vstar: Vec<VStar> = section.radii.iter().map(|&r| vstar_bound(&bc, r)).collect::<Result<_, _>>()?;
    let vs: Vec<f64> = vstar.iter().map(|v| v.vstar).collect();
    let vstar_spread = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - vs.iter().copied().fold(f64::INFINITY, f64::min);
    let audit_ok = audit.as_ref().is_none_or(|a| a.bracket_verdict.passed());
    let verdict = Verdict::from_bool(balancing.verdict.passed() && audit_ok && vstar_spread <= 1e-8);
    let report = BarrierReport {
        constants: bc,
        initial_energy: (!toy).then_some(level),
        sigma,
        eps: 1.0 / sigma,
        sigma_at_zero,
        balancing,
        vstar,
        vstar_spread,
        audit: audit.as_ref().map(AuditSummary::from),
        verdict,
    };
    ctx.out.json("barrier.json", "barrier", &report)?;
    let mut lines = vec![
        format!("sigma = {sigma:.10} (E = {level})"),
        format!("sigma(E=0) = {sigma_at_zero:.10}"),
        format!("eps = {:.10}", 1.0 / sigma),
        format!("balancing: {:?}", report.balancing.verdict),
        format!("V* = {:.10e} (spread {:.1e} over R in {:?})", vs[0], vstar_spread, section.radii),
    ];
    if let Some(a) = &audit {
        lines.push(format!("audit: max bracket {:.4e}, bracket violations {}", a.max_bracket, a.bracket_violations));
    }
    Ok(Outcome { verdict: Some(verdict), lines })
}

#[derive(Serialize)]
struct PairSummary {
    pair: usize,
    seed: u64,
    initial_separation: f64,
    fitted_rate: Option<f64>,
    fitted_c: Option<f64>,
    fitted_d: Option<f64>,
    violations: usize,
    certified: bool,
    verdict: Verdict,
}

#[derive(Serialize)]
struct PairsReport {
    perturbation: f64,
    pairs: Vec<PairSummary>,
    verdict: Verdict,
}

pub fn pairs(ctx: &mut Context) -> Result<Outcome, CliError> {
    let (sys, split) = build(&ctx.loaded)?;
    let cfg = &ctx.loaded.config;
    let plan = cfg.plan;
    let section = cfg.pairs.clone();
    let ic = cfg.initial.clone();
    let results: Vec<_> = (0..section.count)
        .into_par_iter()
        .map(|i| -> Result<_, CliError> {
            let seed = task_seed(plan.seed, 10, i);
            let y1 = initial_state(&sys, &ic, seed)?;
            let kick = random_state(&sys, section.perturbation, task_seed(plan.seed, 11, i));
            let y2 = State { u: &y1.u + &kick.u, v: &y1.v + &kick.v, t: y1.t };
            Ok((seed, pair_quasistability(&sys, &split, &y1, &y2, &plan)?))
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<Cell>> = results
        .iter()
        .enumerate()
        .flat_map(|(i, (_, s))| {
            (0..s.times.len()).map(move |k| vec![i.into(), s.times[k].into(), s.separation[k].into(), s.lower_order[k].into()])
        })
        .collect();
    ctx.out.csv("pairs.csv", &["pair", "t", "separation", "lower_order"], &rows)?;
    let summaries: Vec<PairSummary> = results
        .iter()
        .enumerate()
        .map(|(i, (seed, s))| PairSummary {
            pair: i,
            seed: *seed,
            initial_separation: s.separation[0],
            fitted_rate: s.fitted_rate,
            fitted_c: s.fitted_c,
            fitted_d: s.fitted_d,
            violations: s.violations,
            certified: s.certified,
            verdict: s.verdict,
        })
        .collect();
    let verdict = Verdict::from_bool(summaries.iter().all(|p| p.verdict.passed()));
    if ctx.plots {
        let series = results
            .iter()
            .enumerate()
            .map(|(i, (_, s))| Series { label: format!("pair {i}"), xs: s.times.clone(), ys: s.separation.clone() })
            .collect();
        ctx.out.svg(
            "pairs.svg",
            &Plot { title: "Pair separation".into(), x_label: "t".into(), y_label: "|z|_H^2".into(), log_y: true, series },
        )?;
    }
    let lines = summaries
        .iter()
        .map(|p| format!("pair {}: omega {:?}, violations {}, {:?}", p.pair, p.fitted_rate, p.violations, p.verdict))
        .collect();
    ctx.out.json("pairs.json", "pairs", &PairsReport { perturbation: section.perturbation, pairs: summaries, verdict })?;
    Ok(Outcome { verdict: Some(verdict), lines })
}

#[derive(Serialize)]
struct DimensionSummary {
    snapshots: usize,
    theiler: usize,
    tail_start: f64,
    estimates: Vec<DimensionEstimate>,
    spread: f64,
    saturation: Verdict,
}

pub fn dimension(ctx: &mut Context) -> Result<Outcome, CliError> {
    let (sys, split) = build(&ctx.loaded)?;
    let plan = ctx.loaded.config.plan;
    let section = ctx.loaded.config.dimension.clone();
    let traj = simulate_trajectory(ctx, &sys, &split, &plan)?;
    let t_end = traj.last().t;
    let tail_start = t_end * (1.0 - section.tail_fraction);
    let k0 = traj.snapshots.iter().position(|s| s.t >= tail_start - 1e-12).unwrap_or(0);
    let report = correlation_dimension(&sys, &traj.snapshots[k0..], &section.embed_dims, section.theiler)?;
    let rows: Vec<Vec<Cell>> = report
        .estimates
        .iter()
        .flat_map(|e| e.radii.iter().zip(&e.correlation_sums).map(move |(&r, &c)| vec![e.embed_dim.into(), r.into(), c.into()]))
        .collect();
    ctx.out.csv("dimension.csv", &["embed_dim", "r", "correlation_sum"], &rows)?;
    if ctx.plots {
        let series = report
            .estimates
            .iter()
            .map(|e| Series {
                label: format!("d = {}", e.embed_dim),
                xs: e.radii.iter().map(|r| r.ln()).collect(),
                ys: e.correlation_sums.clone(),
            })
            .collect();
        ctx.out.svg(
            "dimension.svg",
            &Plot { title: "Correlation sums".into(), x_label: "ln r".into(), y_label: "C(r)".into(), log_y: true, series },
        )?;
    }
    let lines = report
        .estimates
        .iter()
        .map(|e| format!("embed {}: slope {:.4}", e.embed_dim, e.slope))
        .chain(std::iter::once(format!("spread {:.4}", report.spread)))
        .collect();
    let verdict = report.saturation;
    let summary = DimensionSummary {
        snapshots: report.snapshots,
        theiler: report.theiler,
        tail_start,
        estimates: report.estimates,
        spread: report.spread,
        saturation: report.saturation,
    };
    ctx.out.json("dimension.json", "dimension", &summary)?;
    Ok(Outcome { verdict: Some(verdict), lines })
}

pub fn stationary(ctx: &mut Context) -> Result<Outcome, CliError> {
    let (sys, split) = build(&ctx.loaded)?;
    let cfg = &ctx.loaded.config;
    let report: StationaryReport = stationary_convergence(&sys, &split, cfg.stationary.samples, cfg.stationary.radius, &cfg.plan)?;
    let rows: Vec<Vec<Cell>> = report
        .samples
        .iter()
        .map(|s| {
            vec![
                s.seed.into(),
                s.final_speed.into(),
                s.distance.into(),
                s.newton_residual.into(),
                s.equilibrium.map_or(Cell::S(String::new()), Cell::from),
                if s.ok { "true" } else { "false" }.into(),
            ]
        })
        .collect();
    ctx.out.csv("stationary.csv", &["seed", "final_speed", "distance", "newton_residual", "equilibrium", "ok"], &rows)?;
    ctx.out.json("stationary.json", "stationary", &report)?;
    let mut lines = Vec::new();
    if let Some(note) = &report.skipped {
        lines.push(format!("skipped: {note}"));
    }
    for (i, e) in report.equilibria.iter().enumerate() {
        lines.push(format!("equilibrium {i}: |u|_a = {:.6e}, Newton residual {:.3e}", e.energy_norm, e.residual));
    }
    for s in report.samples.iter().filter(|s| !s.ok) {
        lines.push(format!("sample seed {} did not settle: |u_t(T)| = {:.3e}", s.seed, s.final_speed));
    }
    Ok(Outcome { verdict: Some(report.verdict), lines })
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn check(name: &str, value: f64, tolerance: f64) -> Check {
    Check { name: name.into(), value, tolerance, passed: value.is_finite() && value <= tolerance }
}

/// Plain bisection for `sigma^2 - sigma^{3/2} = rhs`, independent of the library solver.
pub fn toy_sigma_oracle(rhs: f64) -> f64 {
    let f = |s: f64| s * s - s.powf(1.5) - rhs;
    let (mut lo, mut hi) = (1.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn plain_config(alpha: f64, l: f64, damping: Vec<f64>) -> PlateConfig {
    PlateConfig {
        alpha,
        delta: 0.0,
        beta: 0.0,
        kappa: 0.0,
        damping: Damping::new(damping),
        source: Source::Zero,
        dom: DomainSpec { l, sigma: 0.3 },
        allow_undamped: true,
    }
}

/// Analytic-oracle suite.
pub fn selftest_checks() -> Result<Vec<Check>, CliError> {
    let mut out = Vec::new();
    for l in [0.25, 0.5, 1.0] {
        let sys = PlateSystem::new(plain_config(0.0, l, vec![0.0, 0.0]), 1, 1, 3)?;
        out.push(check(&format!("a(sin x, sin x) = pi l, l = {l}"), (sys.ops.k[(0, 0)] - PI * l).abs(), 1e-12));
        out.push(check(&format!("|sin x|^2 = pi l, l = {l}"), (sys.ops.m[(0, 0)] - PI * l).abs(), 1e-12));
    }
    let sys = PlateSystem::new(plain_config(0.0, 0.5, vec![0.0, 0.0]), 4, 4, 3)?;
    let (m, k) = (&sys.ops.m, &sys.ops.k);
    let off = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|ij| m[ij].abs())
        .fold(0.0, f64::max);
    out.push(check("mass matrix off-diagonal", off / m.amax(), 1e-12));
    out.push(check("M symmetric", (m - m.transpose()).amax() / m.amax(), 1e-12));
    out.push(check("K symmetric", (k - k.transpose()).amax() / k.amax(), 1e-12));
    out.push(check("M positive definite", if m.clone().cholesky().is_some() { 0.0 } else { 1.0 }, 0.0));
    out.push(check("K positive definite", if k.clone().cholesky().is_some() { 0.0 } else { 1.0 }, 0.0));
    let worst = (0..200u64)
        .map(|s| poincare_ratio(&sys, &random_state(&sys, 1.0, s).u))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    out.push(check("Poincare ratio |u|^2/|u_x|^2 - 1", worst - 1.0, 1e-12));

    for n in [2usize, 5, 12] {
        let (x, w) = gauss_legendre(n);
        let p = 2 * n - 2;
        let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p as i32)).sum();
        out.push(check(&format!("Gauss-Legendre n={n} exact on x^{p}"), (q - 2.0 / (p as f64 + 1.0)).abs(), 1e-13));
    }

    // One mode of the undamped linear plate is a harmonic oscillator; the midpoint
    // rule advances its phase by exactly 2 atan(omega dt / 2) per step.
    let osc = PlateSystem::new(plain_config(0.0, 0.5, vec![0.0, 0.0]), 3, 3, 3)?;
    let split = SplitConstants::new(&osc.cfg, plate_core::model::SourceBound { c: 0.0, b: 0.0 });
    let omega = osc.modal.mu[0].sqrt();
    let dt = 0.05;
    let plan = SimPlan::new(dt, 20.0).with_snapshot_every(400);
    let init = State { u: osc.modal.phi.column(0).into_owned(), v: osc.modal.phi.column(0) * 0.0, t: 0.0 };
    let traj = run(&osc, &split, &plan, &init).map_err(|e| CliError::Numeric(e.to_string()))?;
    let theta = 2.0 * (omega * dt / 2.0).atan();
    let expected = (plan.steps() as f64 * theta).cos();
    let got = osc.modal.modal(&traj.last().u)[0];
    out.push(check("1-DOF oscillator phase", (got - expected).abs(), 1e-9));
    let e0 = traj.ledger[0].etot;
    out.push(check("1-DOF oscillator energy", (traj.ledger.last().unwrap().etot - e0).abs() / e0, 1e-12));

    let toy = BarrierConstants::toy();
    for (level, rhs) in [(1.0, 3.0), (0.0, 2.0)] {
        let s = solve_sigma(level, &toy, 1e-13)?;
        out.push(check(&format!("toy sigma at E = {level}"), (s - toy_sigma_oracle(rhs)).abs(), 1e-9));
    }
    let s1 = solve_sigma(1.0, &toy, 1e-13)?;
    out.push(check("toy sigma near 2.750", (s1 - 2.750).abs(), 1e-3));
    for q in 1..=10 {
        let g = gamma_of_q(q);
        out.push(check(&format!("gamma({q}) = q/(2(q+1))"), (g - q as f64 / (2.0 * (q as f64 + 1.0))).abs(), 0.0));
        let b = BFunction::for_q(q, 1.0);
        let rep = balancing_check(g, |x| b.eval(x), 20);
        out.push(check(&format!("balancing passes for q = {q}"), if rep.verdict.passed() { 0.0 } else { 1.0 }, 0.0));
    }
    let cubic = validate_assumption_f(&Source::CubicMinusLoad { load: 1.0 }, (-10.0, 10.0), 2001);
    out.push(check("Assumption (f) accepts s^3 - 1", if matches!(cubic, AssumptionF::Accepted(_)) { 0.0 } else { 1.0 }, 0.0));
    let s: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.5).collect();
    let f: Vec<f64> = s.iter().map(|x| -x * x * x).collect();
    let neg = Source::Table(SplineSource::new(s, f).map_err(CliError::Numeric)?);
    let rej = validate_assumption_f(&neg, (-10.0, 10.0), 2001);
    out.push(check("Assumption (f) rejects -s^3", if matches!(rej, AssumptionF::Rejected { .. }) { 0.0 } else { 1.0 }, 0.0));
    Ok(out)
}

#[derive(Serialize)]
struct SelftestReport {
    checks: Vec<Check>,
    failed: usize,
    verdict: Verdict,
}

pub fn selftest(ctx: &mut Context) -> Result<Outcome, CliError> {
    let checks = selftest_checks()?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    let verdict = Verdict::from_bool(failed == 0);
    let lines = checks
        .iter()
        .map(|c| format!("{} {} ({:.3e} <= {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance))
        .collect();
    ctx.out.json("selftest.json", "selftest", &SelftestReport { checks, failed, verdict })?;
    Ok(Outcome { verdict: Some(verdict), lines })
}
