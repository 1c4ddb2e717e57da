use plate_core::barrier::Verdict;
use plate_core::energy::SplitConstants;
use plate_core::integrator::{initial_state, random_state, run, SimPlan};
use plate_core::lab::{
    correlation_dimension, dissipativity_sweep, pair_quasistability, regularity_probe, stationary_convergence,
    SweepPlan,
};
use plate_core::model::{PlateSystem, SourceBound, State};
use plate_core::presets;

fn build(p: &presets::Preset) -> (PlateSystem, SplitConstants) {
    let sys = PlateSystem::new(p.cfg.clone(), p.mx, p.ny, p.oversample).unwrap();
    let split = SplitConstants::new(&p.cfg, SourceBound { c: 0.0, b: 0.75 });
    (sys, split)
}

#[test]
fn more_samples_never_lower_the_sup() {
    let mut p = presets::general();
    p.mx = 3;
    p.ny = 3;
    let (sys, split) = build(&p);
    let plan = SimPlan::new(1e-2, 4.0).with_snapshot_every(5);
    let mut sweep = SweepPlan { radii: vec![1.0, 3.0], samples_per_radius: 1, t_final: 4.0, tail_fraction: 0.5, seed: 2 };
    let few = dissipativity_sweep(&sys, &split, &sweep, &plan).unwrap();
    sweep.samples_per_radius = 3;
    let many = dissipativity_sweep(&sys, &split, &sweep, &plan).unwrap();
    for (a, b) in few.per_radius.iter().zip(&many.per_radius) {
        assert!(b.tail_sup.unwrap() >= a.tail_sup.unwrap());
    }
    assert_eq!(many.blowups, 0);
}

#[test]
fn sweep_is_deterministic() {
    let mut p = presets::general();
    p.mx = 2;
    p.ny = 2;
    let (sys, split) = build(&p);
    let plan = SimPlan::new(1e-2, 1.0).with_snapshot_every(5);
    let sweep = SweepPlan { radii: vec![1.0, 2.0], samples_per_radius: 2, t_final: 1.0, tail_fraction: 0.5, seed: 9 };
    let a = dissipativity_sweep(&sys, &split, &sweep, &plan).unwrap();
    let b = dissipativity_sweep(&sys, &split, &sweep, &plan).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn pair_separation_starts_at_phase_distance() {
    let p = presets::point_attractor();
    let (sys, split) = build(&p);
    let y1 = random_state(&sys, 1.0, 1);
    let kick = random_state(&sys, 1e-3, 2);
    let y2 = State { u: &y1.u + &kick.u, v: &y1.v + &kick.v, t: 0.0 };
    let plan = SimPlan::new(1e-2, 10.0).with_snapshot_every(10);
    let stats = pair_quasistability(&sys, &split, &y1, &y2, &plan).unwrap();
    let du = &y1.u - &y2.u;
    let dv = &y1.v - &y2.v;
    assert_eq!(stats.separation[0], sys.h_norm_sq(&du, &dv));
    assert!(stats.fitted_rate.unwrap() > 0.0);
    assert_eq!(stats.violations, 0);
    assert_eq!(stats.verdict, Verdict::Pass);

    let same = pair_quasistability(&sys, &split, &y1, &y1, &plan).unwrap();
    assert!(same.separation.iter().all(|&s| s == 0.0));
    assert_eq!(same.fitted_rate, None);
}

#[test]
fn undamped_pairs_are_not_certified() {
    let p = presets::periodic();
    let (sys, split) = build(&p);
    let y1 = random_state(&sys, 1.0, 1);
    let y2 = random_state(&sys, 1.0, 2);
    let stats = pair_quasistability(&sys, &split, &y1, &y2, &SimPlan::new(1e-2, 2.0)).unwrap();
    assert!(!stats.certified);
    assert_eq!(stats.verdict, Verdict::Fail);
}

#[test]
fn point_attractor_dimension_is_small() {
    let p = presets::point_attractor();
    let (sys, split) = build(&p);
    let init = initial_state(&sys, &p.initial, p.plan.seed).unwrap();
    let traj = run(&sys, &split, &p.plan, &init).unwrap();
    let tail = &traj.snapshots[traj.snapshots.len() / 2..];
    let report = correlation_dimension(&sys, tail, &[1, 2, 4, 9], 20).unwrap();
    for e in &report.estimates {
        assert!(e.slope < 0.2, "embed {} slope {}", e.embed_dim, e.slope);
    }
    assert!(correlation_dimension(&sys, &tail[..100], &[1], 20).is_err());
}

#[test]
fn regularity_of_an_equilibrium_is_zero() {
    let p = presets::point_attractor();
    let (sys, split) = build(&p);
    let traj = run(&sys, &split, &SimPlan::new(1e-2, 2.0), &State::zeros(sys.dim())).unwrap();
    let r = regularity_probe(&sys, &traj).unwrap();
    assert_eq!(r.sup_velocity, 0.0);
    assert_eq!(r.sup_acceleration, 0.0);
}

#[test]
fn regularity_sup_stable_under_stride_refinement() {
    let p = presets::general();
    let mut small = p.clone();
    small.mx = 3;
    small.ny = 3;
    let (sys, split) = build(&small);
    let init = random_state(&sys, 1.0, 5);
    let coarse = run(&sys, &split, &SimPlan::new(5e-3, 6.0).with_snapshot_every(20), &init).unwrap();
    let fine = run(&sys, &split, &SimPlan::new(5e-3, 6.0).with_snapshot_every(5), &init).unwrap();
    let a = regularity_probe(&sys, &coarse).unwrap();
    let b = regularity_probe(&sys, &fine).unwrap();
    let rel = |x: f64, y: f64| (x - y).abs() / y.max(1e-300);
    assert!(rel(a.sup_velocity, b.sup_velocity) < 0.05);
    assert!(rel(a.sup_acceleration, b.sup_acceleration) < 0.05);
}

#[test]
fn trivial_gradient_config_converges_to_zero() {
    let p = presets::point_attractor();
    let (sys, split) = build(&p);
    let plan = SimPlan::new(1e-2, 30.0).with_snapshot_every(100).with_seed(3);
    let r = stationary_convergence(&sys, &split, 3, 1.0, &plan).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert_eq!(r.equilibria.len(), 1);
    assert!(r.equilibria[0].energy_norm < 1e-8);
}

#[test]
fn flow_disables_stationary_test() {
    let p = presets::general();
    let (sys, split) = build(&p);
    let r = stationary_convergence(&sys, &split, 3, 1.0, &SimPlan::new(1e-2, 1.0)).unwrap();
    assert!(r.skipped.is_some());
    assert!(r.samples.is_empty());
}
