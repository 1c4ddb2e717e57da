//! Energy functionals, the `Pi = Pi0 + Pi1` split and the energy-identity ledger.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, PlateConfig, PlateSystem, SourceBound, State};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("Poincare ratio undefined: |u_x|_0 = 0")]
    ZeroGradient,
    #[error("Pi0 = {value:e} < 0; the split constants are insufficient")]
    NegativePi0 { value: f64 },
}

/// Which additive constant was used in `Pi1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditiveRule {
    /// `alpha^2 / delta`, used for `0 < delta < 4`.
    AlphaSqOverDelta,
    /// `alpha^2 / 4`, used for `delta >= 4` and `delta = 0`.
    AlphaSqOverFour,
}

/// `Pi1(u) = -c |u|_0^2 - (b |Omega| + A)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConstants {
    pub c: f64,
    pub b: f64,
    pub additive: f64,
    pub rule: AdditiveRule,
    pub area: f64,
}

impl SplitConstants {
    pub fn new(cfg: &PlateConfig, bound: SourceBound) -> Self {
        let a2 = cfg.alpha * cfg.alpha;
        let (additive, rule) = if cfg.delta > 0.0 && cfg.delta < 4.0 {
            (a2 / cfg.delta, AdditiveRule::AlphaSqOverDelta)
        } else {
            (a2 / 4.0, AdditiveRule::AlphaSqOverFour)
        };
        SplitConstants { c: bound.c, b: bound.b, additive, rule, area: cfg.dom.area() }
    }

    pub fn constant_part(&self) -> f64 {
        self.b * self.area + self.additive
    }

    /// `C` with `E/2 - C <= Etot`, from Poincare and `Pi0 >= delta/8 |u_x|^4`; `None`
    /// when no closed-form certificate applies (`delta = 0` and `c lambda > 1/4`).
    pub fn lower_sandwich_constant(&self, delta: f64, lambda: f64) -> Option<f64> {
        if self.c == 0.0 {
            Some(self.constant_part())
        } else if delta > 0.0 {
            Some(self.constant_part() + 4.0 * self.c * self.c * PI.powi(4) / delta)
        } else if self.c * lambda <= 0.25 {
            Some(self.constant_part())
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParts {
    pub pi: f64,
    pub pi0: f64,
    pub pi1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    pub kinetic: f64,
    pub bending: f64,
    pub pi: f64,
    pub pi0: f64,
    pub pi1: f64,
    /// Positive energy `E = kinetic + bending + Pi0`.
    pub e: f64,
    /// Total energy `Etot = kinetic + bending + Pi`.
    pub etot: f64,
}

/// One ledger row; serialized in this column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: f64,
    pub kinetic: f64,
    pub bending: f64,
    #[serde(rename = "Pi")]
    pub pi: f64,
    #[serde(rename = "Pi0")]
    pub pi0: f64,
    #[serde(rename = "Pi1")]
    pub pi1: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "Etot")]
    pub etot: f64,
    pub damping_integral: f64,
    pub flux_integral: f64,
    pub identity_residual: f64,
}

pub const LEDGER_COLUMNS: [&str; 11] = [
    "t", "kinetic", "bending", "Pi", "Pi0", "Pi1", "E", "Etot", "damping_integral", "flux_integral",
    "identity_residual",
];

impl LedgerRow {
    pub fn values(&self) -> [f64; 11] {
        [
            self.t, self.kinetic, self.bending, self.pi, self.pi0, self.pi1, self.e, self.etot,
            self.damping_integral, self.flux_integral, self.identity_residual,
        ]
    }
}

/// `Pi(u) = kappa/2 |u+|^2 - alpha/2 |u_x|^2 + delta/4 |u_x|^4 + int F0(u)`.
pub fn potential_pi(sys: &PlateSystem, u: &DVector<f64>) -> Result<f64, EnergyError> {
    let cfg = &sys.cfg;
    let x = sys.ux_norm_sq(u);
    let mut pi = -0.5 * cfg.alpha * x + 0.25 * cfg.delta * x * x;
    if cfg.kappa != 0.0 || !cfg.source.is_zero() {
        let mut field = sys.grid.nodal(u, 0, 0);
        for val in field.iter_mut() {
            let s = *val;
            let pos = s.max(0.0);
            *val = 0.5 * cfg.kappa * pos * pos + cfg.source.antiderivative(s);
        }
        let integral = sys.grid.integrate(&field);
        if !integral.is_finite() {
            return Err(ModelError::NonFinite { x: f64::NAN, y: f64::NAN, u: f64::NAN }.into());
        }
        pi += integral;
    }
    Ok(pi)
}

pub fn split_pi(sys: &PlateSystem, split: &SplitConstants, u: &DVector<f64>) -> Result<PotentialParts, EnergyError> {
    let pi = potential_pi(sys, u)?;
    let pi1 = -split.c * sys.mass_norm_sq(u) - split.constant_part();
    Ok(PotentialParts { pi, pi0: pi - pi1, pi1 })
}

/// Like [`split_pi`] but fails when `Pi0 < 0`.
pub fn split_pi_checked(
    sys: &PlateSystem,
    split: &SplitConstants,
    u: &DVector<f64>,
) -> Result<PotentialParts, EnergyError> {
    let parts = split_pi(sys, split, u)?;
    let tol = 1e-12 * (1.0 + parts.pi.abs() + parts.pi1.abs());
    if parts.pi0 < -tol {
        return Err(EnergyError::NegativePi0 { value: parts.pi0 });
    }
    Ok(parts)
}

pub fn total_energy(sys: &PlateSystem, split: &SplitConstants, state: &State) -> Result<Energies, EnergyError> {
    let parts = split_pi(sys, split, &state.u)?;
    let kinetic = 0.5 * sys.mass_norm_sq(&state.v);
    let bending = 0.5 * sys.a_form(&state.u, &state.u);
    Ok(Energies {
        kinetic,
        bending,
        pi: parts.pi,
        pi0: parts.pi0,
        pi1: parts.pi1,
        e: kinetic + bending + parts.pi0,
        etot: kinetic + bending + parts.pi,
    })
}

/// Instantaneous dissipation `g(|v|) |v|^2`.
pub fn damping_rate(sys: &PlateSystem, v: &DVector<f64>) -> f64 {
    let s2 = sys.mass_norm_sq(v).max(0.0);
    sys.cfg.damping.g(s2.sqrt()) * s2
}

/// Instantaneous flux `-beta (u_y, v)`.
pub fn flux_rate(sys: &PlateSystem, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    if sys.cfg.beta == 0.0 {
        0.0
    } else {
        -sys.cfg.beta * sys.uy_pairing(u, v)
    }
}

/// Signed defect of `Etot(t) + int_s^t g|u_t|^2 - Etot(s) + beta int_s^t (u_y, u_t)`.
pub fn energy_identity_residual(ledger: &[LedgerRow], s_index: usize, t_index: usize) -> f64 {
    let (s, t) = (&ledger[s_index], &ledger[t_index]);
    (t.etot - s.etot) + (t.damping_integral - s.damping_integral) - (t.flux_integral - s.flux_integral)
}

/// `|u|_0^2 / |u_x|_0^2`.
pub fn poincare_ratio(sys: &PlateSystem, u: &DVector<f64>) -> Result<f64, EnergyError> {
    let ux = sys.ux_norm_sq(u);
    if ux <= 0.0 {
        return Err(EnergyError::ZeroGradient);
    }
    Ok(sys.mass_norm_sq(u) / ux)
}

/// `|u|_{2-s}^2 - eta (a(u,u) + |u_x|^4)` with the spectral surrogate norm.
pub fn interpolation_gap(sys: &PlateSystem, u: &DVector<f64>, s: f64, eta: f64) -> f64 {
    let x = sys.ux_norm_sq(u);
    sys.modal.surrogate_norm_sq(u, s) - eta * (sys.a_form(u, u) + x * x)
}

/// `a(u,u) + |v|^2` by direct quadrature of the bilinear form.
pub fn h_norm_sq_direct(sys: &PlateSystem, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let g = &sys.grid;
    let (uxx, uyy, uxy) = (g.nodal(u, 2, 0), g.nodal(u, 0, 2), g.nodal(u, 1, 1));
    let vv = g.nodal(v, 0, 0);
    let lap = &uxx + &uyy;
    let sig = sys.cfg.dom.sigma;
    let integrand = lap.component_mul(&lap) - (uxx.component_mul(&uyy) - uxy.component_mul(&uxy)) * (2.0 * (1.0 - sig))
        + vv.component_mul(&vv);
    g.integrate(&integrand)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::DomainSpec;
    use crate::model::{Damping, Source};
    use approx::assert_relative_eq;

    fn system(alpha: f64, delta: f64, kappa: f64, source: Source, l: f64) -> PlateSystem {
        let cfg = PlateConfig {
            alpha,
            delta,
            beta: 0.0,
            kappa,
            damping: Damping::new(vec![1.0, 0.0]),
            source,
            dom: DomainSpec::new(l, 0.3).unwrap(),
            allow_undamped: false,
        };
        PlateSystem::new(cfg, 3, 4, 3).unwrap()
    }

    fn sin_x(sys: &PlateSystem) -> DVector<f64> {
        let mut u = DVector::zeros(sys.dim());
        u[sys.basis.index(1, 0)] = 1.0;
        u
    }

    #[test]
    fn potential_examples() {
        let sys = system(1.0, 2.0, 0.0, Source::Zero, 1.0);
        assert_eq!(potential_pi(&sys, &DVector::zeros(12)).unwrap(), 0.0);
        let pi = potential_pi(&sys, &sin_x(&sys)).unwrap();
        assert_relative_eq!(pi, -PI / 2.0 + 0.5 * PI * PI, max_relative = 1e-12);

        let sys = system(0.0, 0.0, 3.0, Source::Zero, 1.0);
        let u = sin_x(&sys) * 0.7;
        let pi = potential_pi(&sys, &u).unwrap();
        assert_relative_eq!(pi, 1.5 * sys.mass_norm_sq(&u), max_relative = 1e-12);
    }

    #[test]
    fn split_rules_and_trivial_case() {
        let sys = system(0.0, 1.0, 0.0, Source::Zero, 1.0);
        let split = SplitConstants::new(&sys.cfg, SourceBound { c: 0.0, b: 0.0 });
        let u = sin_x(&sys) * 0.5;
        let parts = split_pi(&sys, &split, &u).unwrap();
        assert_eq!(parts.pi1, 0.0);
        let x = sys.ux_norm_sq(&u);
        assert_relative_eq!(parts.pi0, 0.25 * x * x, max_relative = 1e-14);

        let mut cfg = sys.cfg.clone();
        cfg.alpha = 2.0;
        assert_eq!(SplitConstants::new(&cfg, SourceBound { c: 0.0, b: 0.0 }).additive, 4.0);
        cfg.delta = 8.0;
        let s = SplitConstants::new(&cfg, SourceBound { c: 0.0, b: 0.0 });
        assert_eq!((s.additive, s.rule), (1.0, AdditiveRule::AlphaSqOverFour));
    }

    #[test]
    fn poincare_for_simple_modes() {
        let sys = system(0.0, 0.0, 0.0, Source::Zero, 0.5);
        assert_relative_eq!(poincare_ratio(&sys, &sin_x(&sys)).unwrap(), 1.0, max_relative = 1e-12);
        let mut u = DVector::zeros(sys.dim());
        u[sys.basis.index(1, 1)] = 1.0;
        assert_relative_eq!(poincare_ratio(&sys, &u).unwrap(), 1.0, max_relative = 1e-12);
        assert!(poincare_ratio(&sys, &DVector::zeros(sys.dim())).is_err());
    }

    #[test]
    fn h_norm_two_ways() {
        let sys = system(0.0, 0.0, 0.0, Source::Zero, 0.5);
        let u = DVector::from_fn(12, |i, _| (1.0 + i as f64).recip());
        let v = DVector::from_fn(12, |i, _| (i as f64).sin());
        assert_relative_eq!(sys.h_norm_sq(&u, &v), h_norm_sq_direct(&sys, &u, &v), max_relative = 1e-10);
    }

    #[test]
    fn ledger_identity_zero_at_same_index() {
        let row = LedgerRow {
            t: 1.0,
            kinetic: 1.0,
            bending: 2.0,
            pi: 0.5,
            pi0: 1.0,
            pi1: -0.5,
            e: 4.0,
            etot: 3.5,
            damping_integral: 0.3,
            flux_integral: -0.1,
            identity_residual: 0.0,
        };
        assert_eq!(energy_identity_residual(&[row], 0, 0), 0.0);
    }

    #[test]
    fn interpolation_gap_decreases_along_ray() {
        let sys = system(0.0, 0.0, 0.0, Source::Zero, 0.5);
        let u = sin_x(&sys);
        assert_eq!(interpolation_gap(&sys, &DVector::zeros(12), 2.0, 0.5), 0.0);
        let gaps: Vec<f64> = [1.0, 10.0, 100.0].iter().map(|r| interpolation_gap(&sys, &(&u * *r), 1.0, 0.5)).collect();
        assert!(gaps[2] < gaps[1] && gaps[1] < gaps[0] && gaps[2] < -1e6);
    }
}
