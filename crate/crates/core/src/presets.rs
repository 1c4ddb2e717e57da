//! Named parameter sets used by the CLI, the tests and the documentation.

use crate::discretization::DomainSpec;
use crate::integrator::{InitialCondition, SimPlan};
use crate::model::{Damping, PlateConfig, Source};

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub cfg: PlateConfig,
    pub mx: usize,
    pub ny: usize,
    pub oversample: usize,
    pub plan: SimPlan,
    pub initial: InitialCondition,
}

pub const NAMES: [&str; 6] = ["general", "conservative", "buckled", "point-attractor", "periodic", "chaotic"];

fn domain() -> DomainSpec {
    DomainSpec { l: 0.5, sigma: 0.3 }
}

/// Flow, nonlinear damping and a cubic source all active.
pub fn general() -> Preset {
    Preset {
        name: "general",
        summary: "beta=1, damping 0.5 + s^2, kappa=2, cubic source",
        cfg: PlateConfig {
            alpha: 0.5,
            delta: 1.0,
            beta: 1.0,
            kappa: 2.0,
            damping: Damping::new(vec![0.5, 0.0, 1.0]),
            source: Source::CubicMinusLoad { load: 1.0 },
            dom: domain(),
            allow_undamped: false,
        },
        mx: 8,
        ny: 8,
        oversample: 3,
        plan: SimPlan::new(1e-3, 10.0).with_snapshot_every(10).with_seed(1),
        initial: InitialCondition::Random { radius: 1.0 },
    }
}

/// Undamped linear plate; energy is a conserved quadratic form.
pub fn conservative() -> Preset {
    Preset {
        name: "conservative",
        summary: "no damping, no flow, no source; linear conservative dynamics",
        cfg: PlateConfig {
            alpha: 0.5,
            delta: 0.0,
            beta: 0.0,
            kappa: 0.0,
            damping: Damping::new(vec![0.0, 0.0]),
            source: Source::Zero,
            dom: domain(),
            allow_undamped: true,
        },
        mx: 4,
        ny: 4,
        oversample: 3,
        plan: SimPlan::new(1e-2, 1000.0).with_snapshot_every(100).with_seed(1),
        initial: InitialCondition::Random { radius: 1.0 },
    }
}

/// Gradient case with supercritical in-plane compression: zero is unstable
/// and trajectories settle on one of two buckled states.
pub fn buckled() -> Preset {
    Preset {
        name: "buckled",
        summary: "beta=0, alpha=2 > 1, linear damping; buckled equilibria",
        cfg: PlateConfig {
            alpha: 2.0,
            delta: 1.0,
            beta: 0.0,
            kappa: 0.0,
            damping: Damping::new(vec![1.0, 0.0]),
            source: Source::Zero,
            dom: domain(),
            allow_undamped: false,
        },
        mx: 4,
        ny: 4,
        oversample: 3,
        plan: SimPlan::new(1e-2, 80.0).with_snapshot_every(10).with_seed(1),
        initial: InitialCondition::Random { radius: 1.0 },
    }
}

/// Strong linear damping and no forcing; every trajectory decays to zero.
pub fn point_attractor() -> Preset {
    Preset {
        name: "point-attractor",
        summary: "beta=0, alpha=0, damping 2; global attractor is {0}",
        cfg: PlateConfig {
            alpha: 0.0,
            delta: 1.0,
            beta: 0.0,
            kappa: 0.0,
            damping: Damping::new(vec![2.0, 0.0]),
            source: Source::Zero,
            dom: domain(),
            allow_undamped: false,
        },
        mx: 3,
        ny: 3,
        oversample: 3,
        plan: SimPlan::new(1e-2, 200.0).with_snapshot_every(5).with_seed(1),
        initial: InitialCondition::Random { radius: 1.0 },
    }
}

/// Single excited eigenmode of the undamped linear plate: a closed orbit.
pub fn periodic() -> Preset {
    Preset {
        name: "periodic",
        summary: "undamped linear plate started on the first eigenmode",
        cfg: PlateConfig {
            alpha: 0.0,
            delta: 0.0,
            beta: 0.0,
            kappa: 0.0,
            damping: Damping::new(vec![0.0, 0.0]),
            source: Source::Zero,
            dom: domain(),
            allow_undamped: true,
        },
        mx: 3,
        ny: 3,
        oversample: 3,
        plan: SimPlan::new(1e-2, 200.0).with_snapshot_every(5).with_seed(1),
        initial: InitialCondition::Eigenmode { index: 0, amplitude: 1.0 },
    }
}

/// Strong flow against weak damping and a cubic restoring source; exploratory.
pub fn chaotic() -> Preset {
    Preset {
        name: "chaotic",
        summary: "alpha=8, beta=30, damping 0.05 + 0.05 s^2, cubic source; irregular flutter regime",
        cfg: PlateConfig {
            alpha: 8.0,
            delta: 1.0,
            beta: 30.0,
            kappa: 0.0,
            damping: Damping::new(vec![0.05, 0.0, 0.05]),
            source: Source::CubicMinusLoad { load: 0.0 },
            dom: domain(),
            allow_undamped: false,
        },
        mx: 4,
        ny: 4,
        oversample: 3,
        plan: SimPlan::new(2e-3, 300.0).with_snapshot_every(25).with_seed(1),
        initial: InitialCondition::Random { radius: 1.0 },
    }
}

pub fn by_name(name: &str) -> Option<Preset> {
    match name {
        "general" => Some(general()),
        "conservative" => Some(conservative()),
        "buckled" => Some(buckled()),
        "point-attractor" => Some(point_attractor()),
        "periodic" => Some(periodic()),
        "chaotic" => Some(chaotic()),
        _ => None,
    }
}
