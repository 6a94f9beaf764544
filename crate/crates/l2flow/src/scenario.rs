//! Initial states for each scenario.

use std::f64::consts::PI;

use evalexpr::{ContextWithMutableVariables, HashMapContext, Value};
use l2flow_core::geometry::{presets, FiberSpec, Topology, WarpedMetric};
use l2flow_core::reduced_ode::ProductState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{PsiSource, Scenario, ScenarioConfig};
use crate::snapshot::{read_snapshot, SnapshotError};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Core(#[from] l2flow_core::Error),
    #[error("psi expression: {0}")]
    Expr(String),
    #[error("cannot read snapshot {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("scenario `{0}` has no {1} form")]
    Unsupported(&'static str, &'static str),
}

/// The homogeneous initial state of an ODE scenario.
pub fn initial_product(s: &Scenario) -> Result<ProductState, ScenarioError> {
    Ok(match *s {
        Scenario::RoundSphere { n, a0 } => ProductState::round_sphere(n, a0)?,
        Scenario::ProductS5S1 { a0, b0 } => ProductState::s5_s1(a0, b0)?,
        Scenario::ProductS2S1 { a0 } => ProductState::s2_s1(a0)?,
        _ => return Err(ScenarioError::Unsupported(s.name(), "ode")),
    })
}

/// The warped-product initial metric of a PDE scenario, perturbed when the
/// config asks for it.
pub fn initial_metric(cfg: &ScenarioConfig) -> Result<WarpedMetric, ScenarioError> {
    let n = cfg.grid;
    let m = match &cfg.scenario {
        Scenario::RoundSphere { n: 3, a0 } => presets::round_s3(n, a0.sqrt())?,
        // A g_{S²} ⊕ A⁻² dθ² on θ ∈ [0, 2π).
        Scenario::ProductS2S1 { a0 } => {
            let a = *a0;
            presets::tube(n, 2.0 * PI, 1.0 / a, FiberSpec::round_sphere(), |_| a.sqrt())?
        }
        Scenario::So3Dumbbell { neck_depth } => presets::dumbbell(n, *neck_depth)?,
        Scenario::WarpedTube {
            psi,
            k_sigma,
            period,
            phi,
            genus,
            fiber_mu1,
            fiber_inj,
        } => {
            let fiber = if *k_sigma > 0.0 {
                let r = FiberSpec::round_sphere();
                FiberSpec::new(1.0, r.fiber_area, fiber_mu1.unwrap_or(r.fiber_mu1), fiber_inj.unwrap_or(r.fiber_inj))?
            } else {
                FiberSpec::hyperbolic(*genus, fiber_mu1.unwrap_or(0.0), fiber_inj.unwrap_or(1.0))?
            };
            let values = match psi {
                PsiSource::Samples(v) => v.clone(),
                PsiSource::Expr(e) => {
                    let x = presets::uniform_grid(Topology::CircleProduct, n, *period);
                    eval_psi(e, &x, *period)?
                }
            };
            let grid = values.len();
            presets::tube(grid, *period, *phi, fiber, |x| {
                values[((x / period * grid as f64).round() as usize).min(grid - 1)]
            })?
        }
        Scenario::Custom { snapshot } => {
            let text = std::fs::read_to_string(snapshot).map_err(|e| ScenarioError::Io {
                path: snapshot.display().to_string(),
                message: e.to_string(),
            })?;
            read_snapshot(&text)?.metric
        }
        other => return Err(ScenarioError::Unsupported(other.name(), "pde")),
    };
    if cfg.perturbation > 0.0 {
        perturb(&m, cfg.perturbation, cfg.seed)
    } else {
        Ok(m)
    }
}

fn eval_psi(expr: &str, x: &[f64], period: f64) -> Result<Vec<f64>, ScenarioError> {
    let tree = evalexpr::build_operator_tree(expr).map_err(|e| ScenarioError::Expr(e.to_string()))?;
    let mut ctx = HashMapContext::new();
    let set = |ctx: &mut HashMapContext, k: &str, v: f64| {
        ctx.set_value(k.into(), Value::Float(v))
            .map_err(|e| ScenarioError::Expr(e.to_string()))
    };
    set(&mut ctx, "pi", PI)?;
    set(&mut ctx, "period", period)?;
    x.iter()
        .map(|&xi| {
            set(&mut ctx, "x", xi)?;
            tree.eval_number_with_context(&ctx)
                .map_err(|e| ScenarioError::Expr(e.to_string()))
        })
        .collect()
}

/// Multiply `ψ` by `1 + amp·Σ_k c_k b_k(u)` with three seeded low modes.
/// On spheres the modes are `sin²(kπu)`, which leave the poles and their
/// slopes untouched.
pub fn perturb(m: &WarpedMetric, amp: f64, seed: u64) -> Result<WarpedMetric, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<(f64, f64)> = (1..=3)
        .map(|k| {
            let w = 1.0 / (k * k) as f64;
            (w * rng.gen_range(-1.0..1.0), w * rng.gen_range(-1.0..1.0))
        })
        .collect();
    let x0 = m.x()[0];
    let span = m.coordinate_span();
    let periodic = m.is_periodic();
    let psi = m
        .x()
        .iter()
        .zip(m.psi())
        .map(|(&x, &p)| {
            let u = (x - x0) / span;
            let bump: f64 = coef
                .iter()
                .enumerate()
                .map(|(i, (a, b))| {
                    let k = (i + 1) as f64;
                    if periodic {
                        a * (2.0 * PI * k * u).cos() + b * (2.0 * PI * k * u).sin()
                    } else {
                        a * (PI * k * u).sin().powi(2)
                    }
                })
                .sum();
            p * (1.0 + amp * bump)
        })
        .collect();
    Ok(WarpedMetric::from_profile(
        m.topology(),
        *m.fiber(),
        m.x().to_vec(),
        m.phi().to_vec(),
        psi,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn expression_tube() {
        let cfg = parse_config(
            "grid = 32\n[scenario]\nkind = \"warped_tube\"\npsi = \"1 + 0.1*math::cos(2*pi*x/period)\"\nperiod = 2.0\n[engine]\nkind = \"pde\"\nt_end = 0.1\n",
        )
        .unwrap();
        let m = initial_metric(&cfg).unwrap();
        assert_eq!(m.len(), 32);
        assert!((m.psi()[0] - 1.1).abs() < 1e-15);
        assert!((m.psi()[16] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn perturbation_is_seeded() {
        let m = presets::dumbbell(48, 0.3).unwrap();
        let a = perturb(&m, 0.05, 7).unwrap();
        let b = perturb(&m, 0.05, 7).unwrap();
        let c = perturb(&m, 0.05, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
