//! Run configuration.
//!
//! A config is a TOML document with a few top-level keys and two tables,
//! `[scenario]` and `[engine]`:
//!
//! ```toml
//! grid = 64
//! expect = "long_time"
//!
//! [scenario]
//! kind = "so3_dumbbell"
//! neck_depth = 0.5
//!
//! [engine]
//! kind = "pde"
//! t_end = 0.01
//! ```

use std::path::{Path, PathBuf};

use l2flow_core::flow::{FlowConfig, Integrator};
use l2flow_core::geometry::{CurvatureNorm, MIN_NODES};
use l2flow_core::reduced_ode::{RhsMode, Tolerances};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}", validation_text(.line, .message))]
    Validation { line: Option<usize>, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn validation_text(line: &Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("invalid config at line {l}: {message}"),
        None => format!("invalid config: {message}"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expect {
    Any,
    LongTime,
    Singular,
}

impl Expect {
    pub fn name(self) -> &'static str {
        match self {
            Expect::Any => "any",
            Expect::LongTime => "long_time",
            Expect::Singular => "singular",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PsiSource {
    /// Expression in `x` (and `pi`, `period`), e.g. `1 + 0.1*math::cos(2*pi*x/period)`.
    Expr(String),
    /// One value per grid node.
    Samples(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    RoundSphere { n: usize, a0: f64 },
    ProductS5S1 { a0: f64, b0: f64 },
    ProductS2S1 { a0: f64 },
    WarpedTube {
        psi: PsiSource,
        k_sigma: f64,
        period: f64,
        phi: f64,
        genus: u32,
        fiber_mu1: Option<f64>,
        fiber_inj: Option<f64>,
    },
    So3Dumbbell { neck_depth: f64 },
    Custom { snapshot: PathBuf },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::RoundSphere { .. } => "round_sphere",
            Scenario::ProductS5S1 { .. } => "product_s5_s1",
            Scenario::ProductS2S1 { .. } => "product_s2_s1",
            Scenario::WarpedTube { .. } => "warped_tube",
            Scenario::So3Dumbbell { .. } => "so3_dumbbell",
            Scenario::Custom { .. } => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Engine {
    Ode { mode: RhsMode, t_end: f64, tol: Tolerances },
    Pde(FlowConfig),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenDecayConfig {
    pub sobolev_a: f64,
    pub dtau_safety: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub engine: Engine,
    pub grid: usize,
    pub seed: u64,
    /// Relative amplitude of the seeded random perturbation of `ψ`; 0 disables it.
    pub perturbation: f64,
    pub output: PathBuf,
    /// Write every this many stored samples to the trajectory CSV.
    pub diagnostics_every: usize,
    /// Compute `lambda1` on every this many CSV rows; 0 disables.
    pub spectral_every: usize,
    /// Write a metric snapshot every this many CSV rows; 0 keeps only the
    /// initial and final snapshots.
    pub snapshot_every: usize,
    pub curvature_norm: CurvatureNorm,
    pub expect: Expect,
    /// Columns to chart as SVG after the run.
    pub plot: Vec<String>,
    pub eigen_decay: Option<EigenDecayConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    grid: Option<i64>,
    seed: Option<u64>,
    perturbation: Option<f64>,
    output: Option<String>,
    diagnostics_every: Option<i64>,
    spectral_every: Option<i64>,
    snapshot_every: Option<i64>,
    curvature_norm: Option<String>,
    expect: Option<String>,
    plot: Option<Vec<String>>,
    eigen_decay: Option<bool>,
    sobolev_a: Option<f64>,
    dtau_safety: Option<f64>,
    scenario: RawScenario,
    engine: RawEngine,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    kind: String,
    n: Option<i64>,
    a0: Option<f64>,
    b0: Option<f64>,
    psi: Option<String>,
    psi_samples: Option<Vec<f64>>,
    k_sigma: Option<f64>,
    period: Option<f64>,
    phi: Option<f64>,
    genus: Option<u32>,
    fiber_mu1: Option<f64>,
    fiber_inj: Option<f64>,
    neck_depth: Option<f64>,
    snapshot: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEngine {
    kind: String,
    t_end: f64,
    mode: Option<String>,
    rtol: Option<f64>,
    atol: Option<f64>,
    normalized: Option<bool>,
    dt_safety: Option<f64>,
    energy_guard: Option<bool>,
    volume_guard: Option<f64>,
    regrid_every: Option<i64>,
    store_every: Option<i64>,
    riem_ceiling: Option<f64>,
    psi_floor: Option<f64>,
    max_steps: Option<i64>,
    integrator: Option<String>,
}

/// Parse and validate config text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    validate(raw, Some(text))
}

/// Validate an already parsed TOML table (used by sweeps); errors carry no line.
pub fn config_from_table(table: toml::Table) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        ConfigError::Parse {
            line: 0,
            message: e.message().to_string(),
        }
    })?;
    validate(raw, None)
}

/// Read a config file; a relative snapshot path is taken relative to the file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut cfg = parse_config(&text)?;
    rebase(&mut cfg, path);
    Ok(cfg)
}

pub(crate) fn rebase(cfg: &mut ScenarioConfig, config_path: &Path) {
    if let Scenario::Custom { snapshot } = &mut cfg.scenario {
        if snapshot.is_relative() {
            if let Some(dir) = config_path.parent() {
                *snapshot = dir.join(&*snapshot);
            }
        }
    }
}

fn parse_error(text: &str, e: &toml::de::Error) -> ConfigError {
    let message = e.message().to_string();
    // Unknown keys are located by name, the span sometimes covers the table.
    let line = unknown_key(&message)
        .and_then(|k| key_line(text, k))
        .or_else(|| e.span().map(|s| line_at(text, s.start)))
        .unwrap_or(1);
    ConfigError::Parse { line, message }
}

fn unknown_key(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line assigning `key`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|r| r.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn validate(raw: RawConfig, text: Option<&str>) -> Result<ScenarioConfig, ConfigError> {
    let bad = |key: &str, message: String| ConfigError::Validation {
        line: text.and_then(|t| key_line(t, key)),
        message,
    };
    let count = |key: &str, v: Option<i64>, default: usize, min: i64| -> Result<usize, ConfigError> {
        match v {
            None => Ok(default),
            Some(v) if v >= min => Ok(v as usize),
            Some(v) => Err(bad(key, format!("{key} = {v} must be at least {min}"))),
        }
    };
    let positive = |key: &str, v: Option<f64>| -> Result<Option<f64>, ConfigError> {
        match v {
            Some(v) if !(v > 0.0 && v.is_finite()) => {
                Err(bad(key, format!("{key} = {v} must be positive")))
            }
            _ => Ok(v),
        }
    };

    let grid = count("grid", raw.grid, 64, MIN_NODES as i64)?;
    let curvature_norm = match raw.curvature_norm.as_deref() {
        None => CurvatureNorm::Paper,
        Some(s) => CurvatureNorm::from_name(s)
            .ok_or_else(|| bad("curvature_norm", format!("unknown curvature_norm `{s}` (paper | full)")))?,
    };
    let expect = match raw.expect.as_deref() {
        None | Some("any") => Expect::Any,
        Some("long_time") => Expect::LongTime,
        Some("singular") => Expect::Singular,
        Some(s) => return Err(bad("expect", format!("unknown expect `{s}` (any | long_time | singular)"))),
    };
    let perturbation = raw.perturbation.unwrap_or(0.0);
    if !(0.0..0.5).contains(&perturbation) {
        return Err(bad("perturbation", "perturbation must lie in [0, 0.5)".into()));
    }

    let s = raw.scenario;
    let need = |key: &str, v: Option<f64>| -> Result<f64, ConfigError> {
        positive(key, v)?.ok_or_else(|| bad("kind", format!("scenario `{}` needs `{key}`", s.kind)))
    };
    let scenario = match s.kind.as_str() {
        "round_sphere" => {
            let n = s.n.ok_or_else(|| bad("kind", "round_sphere needs `n`".into()))?;
            if n < 2 {
                return Err(bad("n", format!("n = {n} must be at least 2")));
            }
            Scenario::RoundSphere {
                n: n as usize,
                a0: need("a0", s.a0)?,
            }
        }
        "product_s5_s1" => Scenario::ProductS5S1 {
            a0: need("a0", s.a0)?,
            b0: need("b0", s.b0)?,
        },
        "product_s2_s1" => Scenario::ProductS2S1 { a0: need("a0", s.a0)? },
        "warped_tube" => {
            let psi = match (s.psi, s.psi_samples) {
                (Some(e), None) => PsiSource::Expr(e),
                (None, Some(v)) => PsiSource::Samples(v),
                _ => return Err(bad("kind", "warped_tube needs exactly one of `psi` and `psi_samples`".into())),
            };
            let k_sigma = s.k_sigma.unwrap_or(1.0);
            if k_sigma != 1.0 && k_sigma != -1.0 {
                return Err(bad("k_sigma", "k_sigma must be 1 or -1".into()));
            }
            let genus = s.genus.unwrap_or(if k_sigma > 0.0 { 0 } else { 2 });
            if k_sigma < 0.0 && genus < 2 {
                return Err(bad("genus", "hyperbolic fibers need genus >= 2".into()));
            }
            if k_sigma < 0.0 && (s.fiber_mu1.is_none() || s.fiber_inj.is_none()) {
                return Err(bad("k_sigma", "hyperbolic fibers need `fiber_mu1` and `fiber_inj`".into()));
            }
            Scenario::WarpedTube {
                psi,
                k_sigma,
                period: positive("period", s.period)?.unwrap_or(1.0),
                phi: positive("phi", s.phi)?.unwrap_or(1.0),
                genus,
                fiber_mu1: s.fiber_mu1,
                fiber_inj: positive("fiber_inj", s.fiber_inj)?,
            }
        }
        "so3_dumbbell" => {
            let d = s.neck_depth.unwrap_or(0.5);
            if !(0.0..1.0).contains(&d) {
                return Err(bad("neck_depth", "neck_depth must lie in [0, 1)".into()));
            }
            Scenario::So3Dumbbell { neck_depth: d }
        }
        "custom" => Scenario::Custom {
            snapshot: s
                .snapshot
                .ok_or_else(|| bad("kind", "custom needs `snapshot`".into()))?
                .into(),
        },
        other => return Err(bad("kind", format!("unknown scenario kind `{other}`"))),
    };

    let e = raw.engine;
    if !(e.t_end > 0.0 && e.t_end.is_finite()) {
        return Err(bad("t_end", "t_end must be positive".into()));
    }
    let engine = match e.kind.as_str() {
        "ode" => {
            let mode = match e.mode.as_deref() {
                None => RhsMode::GradientDerived,
                Some(m) => RhsMode::from_name(m)
                    .ok_or_else(|| bad("mode", format!("unknown mode `{m}` (paper_literal | gradient_derived)")))?,
            };
            let mut tol = Tolerances::default();
            if let Some(r) = positive("rtol", e.rtol)? {
                tol.rtol = r;
            }
            if let Some(a) = positive("atol", e.atol)? {
                tol.atol = a;
            }
            Engine::Ode {
                mode,
                t_end: e.t_end,
                tol,
            }
        }
        "pde" => {
            let d = FlowConfig::default();
            let integrator = match e.integrator.as_deref() {
                None | Some("euler") => Integrator::Euler,
                Some("heun") => Integrator::Heun,
                Some(s) => return Err(bad("integrator", format!("unknown integrator `{s}` (euler | heun)"))),
            };
            Engine::Pde(FlowConfig {
                normalized: e.normalized.unwrap_or(d.normalized),
                dt_safety: positive("dt_safety", e.dt_safety)?.unwrap_or(d.dt_safety),
                energy_guard: e.energy_guard.unwrap_or(d.energy_guard),
                volume_guard: positive("volume_guard", e.volume_guard)?.unwrap_or(d.volume_guard),
                regrid_every: count("regrid_every", e.regrid_every, d.regrid_every, 0)?,
                store_every: count("store_every", e.store_every, d.store_every, 1)?,
                t_end: e.t_end,
                riem_ceiling: positive("riem_ceiling", e.riem_ceiling)?.unwrap_or(d.riem_ceiling),
                psi_floor: positive("psi_floor", e.psi_floor)?.unwrap_or(d.psi_floor),
                max_steps: count("max_steps", e.max_steps, d.max_steps, 1)?,
                integrator,
                curvature_norm,
            })
        }
        other => return Err(bad("kind", format!("unknown engine kind `{other}` (ode | pde)"))),
    };

    match (&scenario, &engine) {
        (Scenario::RoundSphere { n, .. }, Engine::Pde(_)) if *n != 3 => {
            return Err(bad("kind", format!("the pde engine supports round_sphere only for n = 3, got n = {n}")));
        }
        (Scenario::ProductS2S1 { .. }, Engine::Ode { mode: RhsMode::PaperLiteral, .. }) => {
            return Err(bad("mode", "paper_literal has no displayed right-hand side for product_s2_s1".into()));
        }
        (Scenario::ProductS5S1 { .. }, Engine::Pde(_)) => {
            return Err(bad("kind", "product_s5_s1 runs only on the ode engine".into()));
        }
        (Scenario::WarpedTube { .. } | Scenario::So3Dumbbell { .. } | Scenario::Custom { .. }, Engine::Ode { .. }) => {
            return Err(bad("kind", format!("scenario `{}` runs only on the pde engine", scenario.name())));
        }
        _ => {}
    }
    if let (Scenario::WarpedTube { psi: PsiSource::Samples(v), .. }, _) = (&scenario, &engine) {
        if v.len() < MIN_NODES {
            return Err(bad("psi_samples", format!("psi_samples has {} values, at least {MIN_NODES} are required", v.len())));
        }
    }

    let eigen_decay = if raw.eigen_decay.unwrap_or(false) {
        if !matches!(engine, Engine::Pde(_)) {
            return Err(bad("eigen_decay", "eigen_decay needs the pde engine".into()));
        }
        Some(EigenDecayConfig {
            sobolev_a: positive("sobolev_a", raw.sobolev_a)?.unwrap_or(1.0),
            dtau_safety: positive("dtau_safety", raw.dtau_safety)?.unwrap_or(0.5),
        })
    } else {
        None
    };

    Ok(ScenarioConfig {
        scenario,
        engine,
        grid,
        seed: raw.seed.unwrap_or(0),
        perturbation,
        output: raw.output.unwrap_or_else(|| "l2flow_out".into()).into(),
        diagnostics_every: count("diagnostics_every", raw.diagnostics_every, 1, 1)?,
        spectral_every: count("spectral_every", raw.spectral_every, 0, 0)?,
        snapshot_every: count("snapshot_every", raw.snapshot_every, 0, 0)?,
        curvature_norm,
        expect,
        plot: raw.plot.unwrap_or_default(),
        eigen_decay,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[scenario]\nkind = \"round_sphere\"\nn = 5\na0 = 1.0\n\n[engine]\nkind = \"ode\"\nt_end = 0.1\n";

    #[test]
    fn minimal_round_sphere() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.scenario, Scenario::RoundSphere { n: 5, a0: 1.0 });
        assert!(matches!(cfg.engine, Engine::Ode { mode: RhsMode::GradientDerived, .. }));
        assert_eq!(cfg.expect, Expect::Any);
    }

    #[test]
    fn key_lines() {
        assert_eq!(key_line("a = 1\n  grid = 8\n", "grid"), Some(2));
        assert_eq!(key_line("gridx = 1\n", "grid"), None);
        assert_eq!(line_at("ab\ncd\nef", 4), 2);
    }
}
