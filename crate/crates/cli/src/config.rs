//! TOML run configuration: strict schema, explicit physical parameters,
//! exhaustive validation and the assumption certificates.

use std::path::Path;

use plate_core::barrier::{BarrierConstants, FitOptions};
use plate_core::discretization::DomainSpec;
use plate_core::integrator::{InitialCondition, SimPlan};
use plate_core::lab::SweepPlan;
use plate_core::model::{validate_assumption_f, AssumptionF, Damping, PlateConfig, Source, SourceBound};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

/// Allowed keys per table; `*` marks a free-form table (checked by the typed parser).
const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["plate", "domain", "discretization", "simulation", "initial", "sweep", "barrier", "pairs", "dimension", "stationary", "assumptions"]),
    ("plate", &["alpha", "delta", "beta", "kappa", "damping", "allow_undamped", "source"]),
    ("plate.source", &["kind", "load", "s", "f"]),
    ("domain", &["l", "sigma"]),
    ("discretization", &["mx", "ny", "oversample"]),
    ("simulation", &["dt", "t_final", "snapshot_every", "fp_tol", "fp_maxiter", "seed"]),
    ("initial", &["kind", "m", "k", "amplitude", "index", "radius", "guess_amplitude", "kick"]),
    ("sweep", &["radii", "samples_per_radius", "t_final", "tail_fraction"]),
    ("barrier", &["mode", "eta", "c2", "eta_tilde", "kappa_damp", "decades", "radii", "constants"]),
    ("barrier.constants", &["*"]),
    ("pairs", &["count", "perturbation"]),
    ("dimension", &["embed_dims", "theiler", "tail_fraction"]),
    ("stationary", &["samples", "radius"]),
    ("assumptions", &["source_range", "samples"]),
];

/// Reports and removes keys outside `SCHEMA`, so the typed pass can still
/// report missing or invalid values in the same run.
fn strip_unknown_keys(table: &mut toml::Table, prefix: &str, out: &mut Vec<String>) {
    let Some((_, allowed)) = SCHEMA.iter().find(|(name, _)| *name == prefix) else {
        return;
    };
    if allowed.contains(&"*") {
        return;
    }
    table.retain(|key, _| {
        let known = allowed.contains(&key);
        if !known {
            let path = if prefix.is_empty() { key.to_string() } else { format!("{prefix}.{key}") };
            out.push(format!("unknown key `{path}`"));
        }
        known
    });
    for (key, value) in table.iter_mut() {
        if let toml::Value::Table(t) = value {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            strip_unknown_keys(t, &path, out);
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
struct RawPlate {
    alpha: Option<f64>,
    delta: Option<f64>,
    beta: Option<f64>,
    kappa: Option<f64>,
    damping: Option<Vec<f64>>,
    #[serde(default)]
    allow_undamped: bool,
    source: Option<Source>,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct RawDomain {
    l: Option<f64>,
    sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct RawDiscretization {
    mx: Option<usize>,
    ny: Option<usize>,
    oversample: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct RawSimulation {
    dt: Option<f64>,
    t_final: Option<f64>,
    snapshot_every: Option<usize>,
    fp_tol: Option<f64>,
    fp_maxiter: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_samples_per_radius")]
    pub samples_per_radius: usize,
    #[serde(default = "default_sweep_t")]
    pub t_final: f64,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
}

fn default_radii() -> Vec<f64> {
    vec![1.0, 5.0, 25.0]
}
fn default_samples_per_radius() -> usize {
    3
}
fn default_sweep_t() -> f64 {
    60.0
}
fn default_tail() -> f64 {
    0.5
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            radii: default_radii(),
            samples_per_radius: default_samples_per_radius(),
            t_final: default_sweep_t(),
            tail_fraction: default_tail(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BarrierMode {
    Fitted,
    Manual,
    Toy,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BarrierSection {
    #[serde(default = "default_barrier_mode")]
    pub mode: BarrierMode,
    #[serde(default = "default_half")]
    pub eta: f64,
    #[serde(default = "default_one")]
    pub c2: f64,
    #[serde(default = "default_half")]
    pub eta_tilde: f64,
    #[serde(default = "default_one")]
    pub kappa_damp: f64,
    #[serde(default = "default_decades")]
    pub decades: usize,
    #[serde(default = "default_vstar_radii")]
    pub radii: Vec<f64>,
    pub constants: Option<BarrierConstants>,
}

fn default_barrier_mode() -> BarrierMode {
    BarrierMode::Fitted
}
fn default_half() -> f64 {
    0.5
}
fn default_one() -> f64 {
    1.0
}
fn default_decades() -> usize {
    20
}
fn default_vstar_radii() -> Vec<f64> {
    vec![1.0, 10.0, 100.0]
}

impl Default for BarrierSection {
    fn default() -> Self {
        BarrierSection {
            mode: default_barrier_mode(),
            eta: 0.5,
            c2: 1.0,
            eta_tilde: 0.5,
            kappa_damp: 1.0,
            decades: default_decades(),
            radii: default_vstar_radii(),
            constants: None,
        }
    }
}

impl BarrierSection {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions { eta: self.eta, c2: self.c2, eta_tilde: self.eta_tilde, kappa_damp: self.kappa_damp }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PairsSection {
    #[serde(default = "default_pairs")]
    pub count: usize,
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
}

fn default_pairs() -> usize {
    5
}
fn default_perturbation() -> f64 {
    1e-3
}

impl Default for PairsSection {
    fn default() -> Self {
        PairsSection { count: default_pairs(), perturbation: default_perturbation() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DimensionSection {
    #[serde(default = "default_embed")]
    pub embed_dims: Vec<usize>,
    #[serde(default = "default_theiler")]
    pub theiler: usize,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
}

fn default_embed() -> Vec<usize> {
    vec![2, 4, 8]
}
fn default_theiler() -> usize {
    20
}

impl Default for DimensionSection {
    fn default() -> Self {
        DimensionSection { embed_dims: default_embed(), theiler: default_theiler(), tail_fraction: default_tail() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StationarySection {
    #[serde(default = "default_stationary_samples")]
    pub samples: usize,
    #[serde(default = "default_one")]
    pub radius: f64,
}

fn default_stationary_samples() -> usize {
    10
}

impl Default for StationarySection {
    fn default() -> Self {
        StationarySection { samples: default_stationary_samples(), radius: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AssumptionsSection {
    #[serde(default = "default_source_range")]
    pub source_range: [f64; 2],
    #[serde(default = "default_source_samples")]
    pub samples: usize,
}

fn default_source_range() -> [f64; 2] {
    [-10.0, 10.0]
}
fn default_source_samples() -> usize {
    2001
}

impl Default for AssumptionsSection {
    fn default() -> Self {
        AssumptionsSection { source_range: default_source_range(), samples: default_source_samples() }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
struct RawConfig {
    plate: Option<RawPlate>,
    #[serde(default)]
    domain: RawDomain,
    #[serde(default)]
    discretization: RawDiscretization,
    #[serde(default)]
    simulation: RawSimulation,
    initial: Option<InitialCondition>,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    barrier: BarrierSection,
    #[serde(default)]
    pairs: PairsSection,
    #[serde(default)]
    dimension: DimensionSection,
    #[serde(default)]
    stationary: StationarySection,
    #[serde(default)]
    assumptions: AssumptionsSection,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunConfig {
    pub plate: PlateConfig,
    pub mx: usize,
    pub ny: usize,
    pub oversample: usize,
    pub plan: SimPlan,
    pub initial: InitialCondition,
    pub sweep: SweepSection,
    pub barrier: BarrierSection,
    pub pairs: PairsSection,
    pub dimension: DimensionSection,
    pub stationary: StationarySection,
    pub assumptions: AssumptionsSection,
}

impl RunConfig {
    pub fn sweep_plan(&self) -> SweepPlan {
        SweepPlan {
            radii: self.sweep.radii.clone(),
            samples_per_radius: self.sweep.samples_per_radius,
            t_final: self.sweep.t_final,
            tail_fraction: self.sweep.tail_fraction,
            seed: self.plan.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SourceCertificate {
    Accepted { c: f64, b: f64, range: [f64; 2], samples: usize },
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DampingCertificate {
    pub b0: f64,
    pub bq: f64,
    pub q: usize,
    pub satisfied: bool,
    pub undamped_opt_in: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Certificates {
    pub assumption_f: SourceCertificate,
    pub assumption_g: DampingCertificate,
}

impl Certificates {
    pub fn source_bound(&self) -> SourceBound {
        let SourceCertificate::Accepted { c, b, .. } = self.assumption_f;
        SourceBound { c, b }
    }
}

/// Parsed configuration plus the provenance needed by the manifest.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub certificates: Certificates,
    pub origin: String,
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn required<T: Copy>(value: Option<T>, name: &str, errors: &mut Vec<String>) -> Option<T> {
    if value.is_none() {
        errors.push(format!("`plate.{name}` is required (physical parameters have no defaults)"));
    }
    value
}

/// Parses and validates configuration text; every problem is reported at once.
pub fn parse_config_str(text: &str, origin: &str) -> Result<LoadedConfig, ConfigError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut errors = Vec::new();
    strip_unknown_keys(&mut table, "", &mut errors);
    let raw: RawConfig = match table.try_into() {
        Ok(raw) => raw,
        Err(e) if errors.is_empty() => return Err(ConfigError::Parse(e.to_string())),
        Err(e) => {
            errors.push(e.to_string().trim().to_string());
            return Err(ConfigError::Invalid(errors));
        }
    };

    let plate = raw.plate.unwrap_or_default();
    let alpha = required(plate.alpha, "alpha", &mut errors);
    let delta = required(plate.delta, "delta", &mut errors);
    let beta = required(plate.beta, "beta", &mut errors);
    let kappa = required(plate.kappa, "kappa", &mut errors);
    if plate.damping.is_none() {
        errors.push("`plate.damping` is required (physical parameters have no defaults)".into());
    }
    let dom = DomainSpec { l: raw.domain.l.unwrap_or(0.5), sigma: raw.domain.sigma.unwrap_or(0.3) };
    let cfg = PlateConfig {
        alpha: alpha.unwrap_or(0.0),
        delta: delta.unwrap_or(0.0),
        beta: beta.unwrap_or(0.0),
        kappa: kappa.unwrap_or(0.0),
        damping: Damping::new(plate.damping.clone().unwrap_or_else(|| vec![1.0, 0.0])),
        source: plate.source.clone().unwrap_or(Source::Zero),
        dom,
        allow_undamped: plate.allow_undamped,
    };
    errors.extend(cfg.violations());

    let d = &raw.discretization;
    let (mx, ny, oversample) = (d.mx.unwrap_or(8), d.ny.unwrap_or(8), d.oversample.unwrap_or(3));
    if mx == 0 || ny == 0 {
        errors.push(format!("discretization needs mx, ny >= 1 (got {mx}, {ny})"));
    }
    if oversample == 0 {
        errors.push("discretization.oversample must be >= 1".into());
    }
    let s = &raw.simulation;
    let defaults = SimPlan::new(1e-3, 10.0).with_snapshot_every(10);
    let plan = SimPlan {
        dt: s.dt.unwrap_or(defaults.dt),
        t_final: s.t_final.unwrap_or(defaults.t_final),
        snapshot_every: s.snapshot_every.unwrap_or(defaults.snapshot_every),
        fp_tol: s.fp_tol.unwrap_or(defaults.fp_tol),
        fp_maxiter: s.fp_maxiter.unwrap_or(defaults.fp_maxiter),
        seed: s.seed.unwrap_or(0),
    };
    errors.extend(plan.violations().into_iter().map(|v| format!("simulation: {v}")));
    let initial = raw.initial.unwrap_or(InitialCondition::Random { radius: 1.0 });
    match initial {
        InitialCondition::Mode { m, k, .. } if m < 1 || m > mx || k >= ny => {
            errors.push(format!("initial mode ({m},{k}) is outside the {mx}x{ny} basis"));
        }
        InitialCondition::Eigenmode { index, .. } if index >= mx * ny => {
            errors.push(format!("initial eigenmode {index} is outside the basis (dim {})", mx * ny));
        }
        InitialCondition::Random { radius } if !(radius >= 0.0) => {
            errors.push(format!("initial radius must be >= 0 (got {radius})"));
        }
        _ => {}
    }

    let config = RunConfig {
        plate: cfg.clone(),
        mx,
        ny,
        oversample,
        plan,
        initial,
        sweep: raw.sweep,
        barrier: raw.barrier,
        pairs: raw.pairs,
        dimension: raw.dimension,
        stationary: raw.stationary,
        assumptions: raw.assumptions,
    };
    errors.extend(config.sweep_plan().violations().into_iter().map(|v| format!("sweep: {v}")));
    if config.barrier.mode == BarrierMode::Manual {
        match &config.barrier.constants {
            None => errors.push("barrier.mode = \"manual\" requires a [barrier.constants] table".into()),
            Some(bc) => errors.extend(bc.violations().into_iter().map(|v| format!("barrier.constants: {v}"))),
        }
    }
    if config.pairs.count == 0 || !(config.pairs.perturbation > 0.0) {
        errors.push("pairs: count >= 1 and perturbation > 0 required".into());
    }
    if config.dimension.embed_dims.is_empty() || config.dimension.embed_dims.contains(&0) {
        errors.push("dimension.embed_dims must be a non-empty list of positive integers".into());
    }
    if !(config.dimension.tail_fraction > 0.0 && config.dimension.tail_fraction <= 1.0) {
        errors.push("dimension.tail_fraction must lie in (0, 1]".into());
    }
    let [lo, hi] = config.assumptions.source_range;
    if !(lo < 0.0 && hi > 0.0) || config.assumptions.samples < 3 {
        errors.push("assumptions: source_range must straddle 0 and samples >= 3".into());
    }

    let b0 = cfg.damping.b0();
    let bq = cfg.damping.coeffs.last().copied().unwrap_or(0.0);
    let assumption_g = DampingCertificate {
        b0,
        bq,
        q: cfg.damping.q(),
        satisfied: b0 + bq > 0.0,
        undamped_opt_in: cfg.allow_undamped,
    };
    let mut assumption_f = None;
    if errors.is_empty() {
        match validate_assumption_f(&cfg.source, (lo, hi), config.assumptions.samples) {
            AssumptionF::Accepted(bound) => {
                assumption_f = Some(SourceCertificate::Accepted {
                    c: if bound.c == 0.0 { 0.0 } else { bound.c },
                    b: bound.b,
                    range: config.assumptions.source_range,
                    samples: config.assumptions.samples,
                });
            }
            AssumptionF::Rejected { witness, deficit, c, b } => errors.push(format!(
                "Assumption (f) fails: best fit c={c}, b={b} is violated at s={witness} by {deficit}"
            )),
        }
    }
    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors));
    }
    Ok(LoadedConfig {
        config,
        certificates: Certificates { assumption_f: assumption_f.expect("set when valid"), assumption_g },
        origin: origin.to_string(),
        hash: sha256_hex(text.as_bytes()),
    })
}

pub fn parse_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config_str(&text, &path.display().to_string())
}

pub const PRESET_FILES: [(&str, &str); 6] = [
    ("general", include_str!("../presets/general.toml")),
    ("conservative", include_str!("../presets/conservative.toml")),
    ("buckled", include_str!("../presets/buckled.toml")),
    ("point-attractor", include_str!("../presets/point-attractor.toml")),
    ("periodic", include_str!("../presets/periodic.toml")),
    ("chaotic", include_str!("../presets/chaotic.toml")),
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESET_FILES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn load_preset(name: &str) -> Result<LoadedConfig, ConfigError> {
    let text = preset_text(name).ok_or_else(|| {
        let names: Vec<&str> = PRESET_FILES.iter().map(|(n, _)| *n).collect();
        ConfigError::Parse(format!("unknown preset `{name}` (available: {})", names.join(", ")))
    })?;
    parse_config_str(text, &format!("preset:{name}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[plate]\nalpha = 0.5\ndelta = 1.0\nbeta = 1.0\nkappa = 2.0\ndamping = [0.5, 0.0, 1.0]\n";

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let c = parse_config_str(MINIMAL, "t").unwrap();
        assert_eq!((c.config.mx, c.config.ny, c.config.oversample), (8, 8, 3));
        assert_eq!(c.config.plan.dt, 1e-3);
        assert_eq!(c.config.plate.source, Source::Zero);
        assert_eq!(c.config.initial, InitialCondition::Random { radius: 1.0 });
        assert_eq!(c.config.plate.dom, DomainSpec { l: 0.5, sigma: 0.3 });
        assert_eq!(c.hash.len(), 64);
        assert!(c.certificates.assumption_g.satisfied);
    }

    #[test]
    fn missing_physics_listed_together() {
        let Err(ConfigError::Invalid(errs)) = parse_config_str("[plate]\nalpha = 1.0\n", "t") else {
            panic!("expected rejection");
        };
        for key in ["delta", "beta", "kappa", "damping"] {
            assert!(errs.iter().any(|e| e.contains(key)), "{key} missing from {errs:?}");
        }
    }

    #[test]
    fn zero_damping_cites_assumption_g() {
        let text = MINIMAL.replace("[0.5, 0.0, 1.0]", "[0.0, 0.0]");
        let Err(ConfigError::Invalid(errs)) = parse_config_str(&text, "t") else { panic!() };
        assert!(errs.iter().any(|e| e.contains("Assumption (g)")), "{errs:?}");
    }

    #[test]
    fn poisson_ratio_out_of_range() {
        let text = format!("{MINIMAL}[domain]\nsigma = 0.7\n");
        let Err(ConfigError::Invalid(errs)) = parse_config_str(&text, "t") else { panic!() };
        assert!(errs.iter().any(|e| e.to_lowercase().contains("poisson")), "{errs:?}");
    }

    #[test]
    fn unknown_keys_all_reported() {
        let text = format!("{MINIMAL}gamma = 1\n[simulation]\nstep = 2\n[extra]\n");
        let Err(ConfigError::Invalid(errs)) = parse_config_str(&text, "t") else { panic!() };
        assert_eq!(errs.len(), 3, "{errs:?}");
    }

    #[test]
    fn wrong_sign_source_rejected() {
        let text = format!("{MINIMAL}[plate.source]\nkind = \"table\"\ns = [-3.0, -1.0, 0.0, 1.0, 3.0]\nf = [27.0, 1.0, 0.0, -1.0, -27.0]\n");
        let Err(ConfigError::Invalid(errs)) = parse_config_str(&text, "t") else { panic!() };
        assert!(errs.iter().any(|e| e.contains("Assumption (f)")), "{errs:?}");
    }

    #[test]
    fn presets_match_core_definitions() {
        for (name, _) in PRESET_FILES {
            let loaded = load_preset(name).unwrap();
            let core = plate_core::presets::by_name(name).unwrap();
            assert_eq!(loaded.config.plate, core.cfg, "{name}");
            assert_eq!((loaded.config.mx, loaded.config.ny, loaded.config.oversample), (core.mx, core.ny, core.oversample));
            assert_eq!(loaded.config.plan, core.plan, "{name}");
            assert_eq!(loaded.config.initial, core.initial, "{name}");
        }
    }
}
