//! The L² flow on warped products as the Riesz gradient flow of the
//! discrete energy.
//!
//! The gradient is taken with respect to the L² metric on symmetric
//! 2-tensors restricted to the class, with variations
//! `h = 2φ·dphi dx² + 2ψ·dpsi g_Σ`. On the sphere the pole values are not
//! free: `ψ = 0` is pinned and the pole `φ` follows its neighbours through
//! `φ₀ = (4φ₁ − φ₂)/3`, the quadratic even extension.
//!
//! [`grad_energy`] is the exact Riesz gradient of the discrete energy. The
//! flow moves circle metrics along it; on sphere metrics the `dx²`
//! component is rebuilt from the fiber component (see [`flow_gradient`]),
//! because dividing by the `ψ²`-weighted mass amplifies truncation error
//! next to the poles.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{
    curvature_profile_with, energy_with, pole_terms, resample_arclength, volume, CurvatureNorm, Quadrature,
    Topology, WarpedMetric, DEFAULT_PSI_FLOOR,
};

/// A variation `(dphi, dpsi)` of the warped profile.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentField {
    pub dphi: Vec<f64>,
    pub dpsi: Vec<f64>,
}

impl TangentField {
    pub fn zeros(n: usize) -> Self {
        TangentField {
            dphi: alloc::vec![0.0; n],
            dpsi: alloc::vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.dphi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dphi.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        TangentField {
            dphi: self.dphi.iter().map(|v| v * c).collect(),
            dpsi: self.dpsi.iter().map(|v| v * c).collect(),
        }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &TangentField) -> Self {
        TangentField {
            dphi: self.dphi.iter().zip(&other.dphi).map(|(a, b)| a + c * b).collect(),
            dpsi: self.dpsi.iter().zip(&other.dpsi).map(|(a, b)| a + c * b).collect(),
        }
    }

    /// The field `c·g`, i.e. `dphi = cφ/2`, `dpsi = cψ/2`.
    pub fn conformal(m: &WarpedMetric, c: f64) -> Self {
        TangentField {
            dphi: m.phi().iter().map(|p| 0.5 * c * p).collect(),
            dpsi: m.psi().iter().map(|p| 0.5 * c * p).collect(),
        }
    }

    /// Project onto the admissible variations of a sphere metric: zero `dpsi`
    /// at the poles and the pole `dphi` slaved to its neighbours.
    pub fn make_admissible(&mut self, m: &WarpedMetric) {
        if m.topology() == Topology::SphereSO3 {
            let n = self.len();
            self.dpsi[0] = 0.0;
            self.dpsi[n - 1] = 0.0;
            self.dphi[0] = (4.0 * self.dphi[1] - self.dphi[2]) / 3.0;
            self.dphi[n - 1] = (4.0 * self.dphi[n - 2] - self.dphi[n - 3]) / 3.0;
        }
    }

    /// `tr_g E = 2·dphi/φ + 4·dpsi/ψ`; at sphere poles the limit is taken
    /// by extrapolation in `x²` from the first two interior nodes.
    pub fn trace(&self, m: &WarpedMetric) -> Vec<f64> {
        let n = m.len();
        let mut tr: Vec<f64> = (0..n)
            .map(|i| {
                let a = 2.0 * self.dphi[i] / m.phi()[i];
                if m.psi()[i] > 0.0 {
                    a + 4.0 * self.dpsi[i] / m.psi()[i]
                } else {
                    a
                }
            })
            .collect();
        if m.topology() == Topology::SphereSO3 {
            // Nodes 1 and 2 sit at distances h and 2h from the pole.
            tr[0] = (4.0 * tr[1] - tr[2]) / 3.0;
            tr[n - 1] = (4.0 * tr[n - 2] - tr[n - 3]) / 3.0;
        }
        tr
    }
}

/// `∫ [4 h_φ k_φ/φ² + 8 h_ψ k_ψ/ψ²] dV`, the L² pairing of the tensors
/// `2φ h_φ dx² + 2ψ h_ψ g_Σ` and `2φ k_φ dx² + 2ψ k_ψ g_Σ`.
pub fn l2_inner(h: &TangentField, k: &TangentField, m: &WarpedMetric) -> Result<f64> {
    let n = m.len();
    if h.dphi.len() != n || h.dpsi.len() != n || k.dphi.len() != n || k.dpsi.len() != n {
        return Err(Error::ShapeMismatch("tangent fields must live on the metric's grid"));
    }
    let fa = m.fiber().fiber_area;
    let mut acc = 0.0;
    for i in 0..n {
        let (p, q) = (m.phi()[i], m.psi()[i]);
        let w = fa * m.weight(i);
        acc += w * (4.0 * q * q / p * h.dphi[i] * k.dphi[i] + 8.0 * p * h.dpsi[i] * k.dpsi[i]);
    }
    Ok(acc)
}

/// Partial derivatives of the discrete energy with respect to the free
/// samples. Pole entries of sphere metrics are zero; their dependence is
/// folded into the neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyPartials {
    pub energy: f64,
    pub d_phi: Vec<f64>,
    pub d_psi: Vec<f64>,
}

pub fn energy_partials(m: &WarpedMetric, norm: CurvatureNorm) -> Result<EnergyPartials> {
    m.check_fiber(DEFAULT_PSI_FLOOR)?;
    let n = m.len();
    let h = m.spacing();
    let fa = m.fiber().fiber_area;
    let k_sigma = m.fiber().k_sigma;
    let phi = m.phi();
    let mut d_phi = alloc::vec![0.0; n];
    let mut d_psi = alloc::vec![0.0; n];
    let mut energy = 0.0;
    for i in m.interior() {
        let local = m.local(i);
        let dens = local.density_with_partials(h, k_sigma);
        let c = fa * m.weight(i);
        energy += c * phi[i] * dens.value;
        d_phi[i] += c * dens.value;
        let cp = c * phi[i];
        for k in 0..3 {
            d_phi[local.phi_nodes[k]] += cp * dens.d_phi[k];
        }
        for k in 0..5 {
            let (j, sign) = local.psi_nodes[k];
            d_psi[j] += cp * sign * dens.d_psi[k];
        }
    }
    let weights: Vec<f64> = (0..n).map(|i| m.weight(i)).collect();
    for term in pole_terms(m, &weights) {
        energy += term.value;
        for (j, d) in term.d_phi {
            d_phi[j] += d;
        }
        for (j, d) in term.d_psi {
            d_psi[j] += d;
        }
    }
    if m.topology() == Topology::SphereSO3 {
        for (pole, a, b) in [(0usize, 1usize, 2usize), (n - 1, n - 2, n - 3)] {
            let g = d_phi[pole];
            d_phi[a] += 4.0 / 3.0 * g;
            d_phi[b] -= g / 3.0;
            d_phi[pole] = 0.0;
            d_psi[pole] = 0.0;
        }
    }
    let f = norm.factor();
    if f != 1.0 {
        energy *= f;
        d_phi.iter_mut().for_each(|v| *v *= f);
        d_psi.iter_mut().for_each(|v| *v *= f);
    }
    Ok(EnergyPartials {
        energy,
        d_phi,
        d_psi,
    })
}

/// Directional derivative of the discrete energy along an admissible `h`.
pub fn energy_derivative(m: &WarpedMetric, h: &TangentField, norm: CurvatureNorm) -> Result<f64> {
    let p = energy_partials(m, norm)?;
    Ok(p.d_phi.iter().zip(&h.dphi).map(|(a, b)| a * b).sum::<f64>()
        + p.d_psi.iter().zip(&h.dpsi).map(|(a, b)| a * b).sum::<f64>())
}

/// Smallest admissible mass-matrix diagonal.
pub const MASS_FLOOR: f64 = 1e-14;

fn riesz(m: &WarpedMetric, p: &EnergyPartials) -> Result<TangentField> {
    let n = m.len();
    let fa = m.fiber().fiber_area;
    let mut g = TangentField::zeros(n);
    for i in m.interior() {
        let (phi, psi) = (m.phi()[i], m.psi()[i]);
        let w = fa * m.weight(i);
        let m_phi = 4.0 * w * psi * psi / phi;
        let m_psi = 8.0 * w * phi;
        for (value, mass) in [(m_phi, m_phi), (m_psi, m_psi)] {
            if !(mass >= MASS_FLOOR) {
                return Err(Error::SingularMass { index: i, value });
            }
        }
        g.dphi[i] = p.d_phi[i] / m_phi;
        g.dpsi[i] = p.d_psi[i] / m_psi;
    }
    g.make_admissible(m);
    Ok(g)
}

/// Riesz representative of the first variation of the energy.
pub fn grad_energy(m: &WarpedMetric) -> Result<TangentField> {
    grad_energy_with(m, CurvatureNorm::Paper)
}

pub fn grad_energy_with(m: &WarpedMetric, norm: CurvatureNorm) -> Result<TangentField> {
    riesz(m, &energy_partials(m, norm)?)
}

/// Gradient used to move sphere metrics. The fiber component is the exact
/// Riesz one; the `dx²` component is rebuilt from it through the identity
/// `E_ss = ψ⁻² ∫ E_ff d(ψ²)`, which follows from invariance of the energy
/// under reparametrization and stays regular at the poles. On circle
/// metrics this is the plain Riesz gradient.
pub fn flow_gradient(m: &WarpedMetric, p: &EnergyPartials) -> Result<TangentField> {
    let mut g = riesz(m, p)?;
    if m.topology() != Topology::SphereSO3 {
        return Ok(g);
    }
    let n = m.len();
    let (phi, psi, h) = (m.phi(), m.psi(), m.spacing());
    let mut e: Vec<f64> = (0..n)
        .map(|i| if psi[i] > 0.0 { 2.0 * g.dpsi[i] / psi[i] } else { 0.0 })
        .collect();
    e[0] = (4.0 * e[1] - e[2]) / 3.0;
    e[n - 1] = (4.0 * e[n - 2] - e[n - 3]) / 3.0;
    let q: Vec<f64> = (0..n).map(|i| if i == 0 || i == n - 1 { 0.0 } else { psi[i] * psi[i] }).collect();
    let mut a = alloc::vec![0.0; n];
    let mut c = alloc::vec![0.0; n];
    for j in 0..n - 1 {
        a[j + 1] = a[j] + 0.5 * (e[j] + e[j + 1]) * (q[j + 1] - q[j]);
        c[j + 1] = c[j] + 0.5 * (q[j] + q[j + 1]) * h;
    }
    // Both poles must see a vanishing flux; spread the mismatch with weight ψ².
    let defect = a[n - 1];
    for i in 1..n - 1 {
        let ess = (a[i] - defect * c[i] / c[n - 1]) / q[i];
        g.dphi[i] = 0.5 * ess * phi[i];
    }
    g.dphi[0] = 0.5 * e[0] * phi[0];
    g.dphi[n - 1] = 0.5 * e[n - 1] * phi[n - 1];
    Ok(g)
}

/// `m + τ·h`, without validation.
pub fn displaced(m: &WarpedMetric, h: &TangentField, tau: f64) -> WarpedMetric {
    m.with_samples(
        m.phi().iter().zip(&h.dphi).map(|(a, b)| a + tau * b).collect(),
        m.psi().iter().zip(&h.dpsi).map(|(a, b)| a + tau * b).collect(),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Integrator {
    #[default]
    Euler,
    /// Two-stage Heun (explicit trapezoid) method.
    Heun,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    /// Add the volume-normalizing term `−F/(6 Vol)·g`.
    pub normalized: bool,
    /// `dt = dt_safety · (min Δs)⁴ / max(1, max |Rm|²)`.
    pub dt_safety: f64,
    /// Reject steps that increase `F` (unnormalized) or `F̃` (normalized).
    pub energy_guard: bool,
    /// Maximum relative volume change per step on normalized runs.
    pub volume_guard: f64,
    /// Resample to uniform arclength every this many steps; 0 disables.
    pub regrid_every: usize,
    /// Keep every this many steps in the trajectory (regrids are always kept).
    pub store_every: usize,
    pub t_end: f64,
    pub riem_ceiling: f64,
    pub psi_floor: f64,
    pub max_steps: usize,
    pub integrator: Integrator,
    pub curvature_norm: CurvatureNorm,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            normalized: false,
            dt_safety: 0.1,
            energy_guard: true,
            volume_guard: 1e-8,
            regrid_every: 50,
            store_every: 1,
            t_end: 1.0,
            riem_ceiling: 1e6,
            psi_floor: DEFAULT_PSI_FLOOR,
            max_steps: 50_000_000,
            integrator: Integrator::Euler,
            curvature_norm: CurvatureNorm::Paper,
        }
    }
}

/// The right-hand side at one state.
#[derive(Clone, Debug)]
struct Velocity {
    field: TangentField,
    energy: f64,
    volume: f64,
    grad_norm_sq: f64,
    alpha: f64,
}

fn velocity(m: &WarpedMetric, cfg: &FlowConfig) -> Result<Velocity> {
    m.check_fiber(cfg.psi_floor)?;
    let p = energy_partials(m, cfg.curvature_norm)?;
    let g = flow_gradient(m, &p)?;
    let grad_norm_sq = l2_inner(&g, &g, m)?;
    let vol = volume(m);
    let alpha = if cfg.normalized {
        -p.energy / (6.0 * vol)
    } else {
        0.0
    };
    let mut field = g.scaled(-1.0);
    if cfg.normalized {
        field = field.axpy(1.0, &TangentField::conformal(m, alpha));
    }
    Ok(Velocity {
        field,
        energy: p.energy,
        volume: vol,
        grad_norm_sq,
        alpha,
    })
}

fn flow_energy(m: &WarpedMetric, cfg: &FlowConfig) -> Result<f64> {
    energy_with(m, cfg.curvature_norm, Quadrature::Trapezoid)
}

/// Stable step size for the current state.
pub fn step_size(m: &WarpedMetric, cfg: &FlowConfig) -> Result<f64> {
    let prof = curvature_profile_with(m, cfg.curvature_norm, cfg.psi_floor)?;
    let ds = m.phi().iter().fold(f64::INFINITY, |a, &p| a.min(p)) * m.spacing();
    Ok(cfg.dt_safety * ds.powi(4) / prof.max_riem_sq().max(1.0))
}

/// One accepted step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub metric: WarpedMetric,
    /// Realized `E = (g_next − g)/dt` in tangent coordinates.
    pub velocity: TangentField,
    pub dt: f64,
    /// `F`, `Vol` and `‖grad F‖²` at the start of the step.
    pub energy: f64,
    pub volume: f64,
    pub grad_norm_sq: f64,
    /// Normalization coefficient at the start of the step.
    pub alpha: f64,
    pub energy_next: f64,
    pub halvings: u32,
}

const DT_MIN: f64 = 1e-16;

fn admissible_samples(m: &WarpedMetric) -> bool {
    m.phi().iter().all(|p| *p > 0.0 && p.is_finite())
        && m.interior().all(|i| m.psi()[i] > 0.0 && m.psi()[i].is_finite())
}

/// Advance by one explicit step from `m`. `dt_max` caps the step (used to
/// land on `t_end`).
pub fn step(m: &WarpedMetric, cfg: &FlowConfig) -> Result<StepResult> {
    step_capped(m, cfg, f64::INFINITY)
}

fn step_capped(m: &WarpedMetric, cfg: &FlowConfig, dt_max: f64) -> Result<StepResult> {
    let v0 = velocity(m, cfg)?;
    let mut dt = step_size(m, cfg)?.min(dt_max);
    let f_tilde = v0.volume.cbrt() * v0.energy;
    let mut halvings = 0u32;
    loop {
        if dt < DT_MIN {
            return Err(Error::StepUnderflow { dt });
        }
        let mut next = displaced(m, &v0.field, dt);
        let mut ok = admissible_samples(&next);
        if ok && cfg.integrator == Integrator::Heun {
            match velocity(&next, cfg) {
                Ok(v1) => {
                    let avg = v0.field.scaled(0.5).axpy(0.5, &v1.field);
                    next = displaced(m, &avg, dt);
                    ok = admissible_samples(&next);
                }
                Err(Error::DegenerateFiber { .. }) => ok = false,
                Err(e) => return Err(e),
            }
        }
        if ok && next.check_fiber(cfg.psi_floor).is_ok() {
            let f_next = flow_energy(&next, cfg)?;
            let accept = if cfg.normalized {
                let vol_next = volume(&next);
                let drift = ((vol_next - v0.volume) / v0.volume).abs();
                drift <= cfg.volume_guard
                    && (!cfg.energy_guard || vol_next.cbrt() * f_next <= f_tilde * (1.0 + 1e-12))
            } else {
                !cfg.energy_guard || f_next <= v0.energy
            };
            if accept && f_next.is_finite() {
                let n = m.len();
                let mut e = TangentField::zeros(n);
                for i in 0..n {
                    e.dphi[i] = (next.phi()[i] - m.phi()[i]) / dt;
                    e.dpsi[i] = (next.psi()[i] - m.psi()[i]) / dt;
                }
                return Ok(StepResult {
                    metric: next,
                    velocity: e,
                    dt,
                    energy: v0.energy,
                    volume: v0.volume,
                    grad_norm_sq: v0.grad_norm_sq,
                    alpha: v0.alpha,
                    energy_next: f_next,
                    halvings,
                });
            }
        }
        dt *= 0.5;
        halvings += 1;
    }
}

/// Impose the dependent pole values of a sphere metric.
pub fn with_slaved_poles(m: &WarpedMetric) -> WarpedMetric {
    if m.topology() != Topology::SphereSO3 {
        return m.clone();
    }
    let n = m.len();
    let mut phi = m.phi().to_vec();
    phi[0] = (4.0 * phi[1] - phi[2]) / 3.0;
    phi[n - 1] = (4.0 * phi[n - 2] - phi[n - 3]) / 3.0;
    let mut psi = m.psi().to_vec();
    psi[0] = 0.0;
    psi[n - 1] = 0.0;
    m.with_samples(phi, psi)
}

#[derive(Clone, Debug)]
pub struct FlowSample {
    pub t: f64,
    /// Step size taken from this sample (the last step for the final sample).
    pub dt: f64,
    pub metric: WarpedMetric,
    /// `E = ∂_t g` leaving this sample.
    pub velocity: Option<TangentField>,
    /// `F` in the active curvature norm.
    pub energy: f64,
    pub volume: f64,
    pub max_riem: f64,
    pub grad_norm_sq: f64,
    pub alpha: f64,
    /// The state at time `t` before it was resampled, if a regrid happened here.
    pub pre_regrid: Option<WarpedMetric>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Termination {
    ReachedEnd,
    SingularityDetected { t: f64, max_riem: f64 },
    StepUnderflow { t: f64, dt: f64 },
    StepLimit { t: f64 },
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub samples: Vec<FlowSample>,
    pub termination: Termination,
    pub config: FlowConfig,
    pub steps: usize,
    pub regrids: usize,
    /// Largest `||ψ_s| − 1|` seen at a pole after a regrid.
    pub max_pole_slope_deviation: f64,
}

impl FlowTrajectory {
    /// A trajectory that sits at `m` for `t ∈ [0, t_end]`, sampled `count + 1`
    /// times with zero velocity.
    pub fn stationary(m: &WarpedMetric, t_end: f64, count: usize, norm: CurvatureNorm) -> Result<Self> {
        if count == 0 || !(t_end > 0.0) {
            return Err(Error::UnsupportedState);
        }
        let energy = energy_with(m, norm, Quadrature::Trapezoid)?;
        let vol = volume(m);
        let config = FlowConfig {
            t_end,
            curvature_norm: norm,
            ..FlowConfig::default()
        };
        let dt = t_end / count as f64;
        let samples = (0..=count)
            .map(|k| {
                let mut s = make_sample(
                    k as f64 * dt,
                    dt,
                    m,
                    Some(TangentField::zeros(m.len())),
                    energy,
                    vol,
                    0.0,
                    0.0,
                    &config,
                    None,
                );
                if k == count {
                    s.velocity = Some(TangentField::zeros(m.len()));
                }
                s
            })
            .collect();
        Ok(FlowTrajectory {
            samples,
            termination: Termination::ReachedEnd,
            config,
            steps: count,
            regrids: 0,
            max_pole_slope_deviation: 0.0,
        })
    }

    pub fn last(&self) -> &FlowSample {
        self.samples.last().expect("trajectories hold the initial sample")
    }
}

fn make_sample(
    t: f64,
    dt: f64,
    m: &WarpedMetric,
    v: Option<TangentField>,
    energy: f64,
    vol: f64,
    gn: f64,
    alpha: f64,
    cfg: &FlowConfig,
    pre: Option<WarpedMetric>,
) -> FlowSample {
    let max_riem = curvature_profile_with(m, cfg.curvature_norm, cfg.psi_floor)
        .map(|c| c.max_riem_sq())
        .unwrap_or(f64::INFINITY);
    FlowSample {
        t,
        dt,
        metric: m.clone(),
        velocity: v,
        energy,
        volume: vol,
        max_riem,
        grad_norm_sq: gn,
        alpha,
        pre_regrid: pre,
    }
}

/// Run the flow from `m0` until a stop condition.
pub fn run(m0: &WarpedMetric, cfg: &FlowConfig) -> Result<FlowTrajectory> {
    if !(cfg.dt_safety > 0.0) || !(cfg.t_end > 0.0) || cfg.store_every == 0 {
        return Err(Error::UnsupportedState);
    }
    let mut m = with_slaved_poles(m0);
    let mut t = 0.0;
    let mut samples = Vec::new();
    let mut steps = 0usize;
    let mut regrids = 0usize;
    let mut pole_dev = 0.0f64;
    let mut pending_pre: Option<WarpedMetric> = None;
    let n = m.len();

    let singular_now = |m: &WarpedMetric| -> Option<f64> {
        match curvature_profile_with(m, cfg.curvature_norm, cfg.psi_floor) {
            Ok(c) if c.max_riem_sq() > cfg.riem_ceiling => Some(c.max_riem_sq()),
            Ok(_) => None,
            Err(_) => Some(f64::INFINITY),
        }
    };
    let finish = |samples: Vec<FlowSample>, termination, steps, regrids, pole_dev| FlowTrajectory {
        samples,
        termination,
        config: *cfg,
        steps,
        regrids,
        max_pole_slope_deviation: pole_dev,
    };
    let final_sample = |t: f64, dt: f64, m: &WarpedMetric, pre: Option<WarpedMetric>| -> FlowSample {
        match velocity(m, cfg) {
            Ok(v) => make_sample(t, dt, m, Some(v.field), v.energy, v.volume, v.grad_norm_sq, v.alpha, cfg, pre),
            Err(_) => make_sample(
                t,
                dt,
                m,
                None,
                flow_energy(m, cfg).unwrap_or(f64::NAN),
                volume(m),
                f64::NAN,
                0.0,
                cfg,
                pre,
            ),
        }
    };

    if let Some(r) = singular_now(&m) {
        samples.push(final_sample(0.0, 0.0, &m, None));
        return Ok(finish(
            samples,
            Termination::SingularityDetected { t: 0.0, max_riem: r },
            0,
            0,
            0.0,
        ));
    }

    let mut last_dt = 0.0;
    loop {
        if t >= cfg.t_end * (1.0 - 1e-14) {
            samples.push(final_sample(t, last_dt, &m, pending_pre.take()));
            return Ok(finish(samples, Termination::ReachedEnd, steps, regrids, pole_dev));
        }
        if steps >= cfg.max_steps {
            samples.push(final_sample(t, last_dt, &m, pending_pre.take()));
            return Ok(finish(samples, Termination::StepLimit { t }, steps, regrids, pole_dev));
        }
        if cfg.regrid_every > 0 && steps > 0 && steps % cfg.regrid_every == 0 {
            match resample_arclength(&m, n) {
                Ok(r) => {
                    let r = with_slaved_poles(&r);
                    if m.topology() == Topology::SphereSO3 {
                        pole_dev = pole_dev
                            .max((r.psi_s_at(0) - 1.0).abs())
                            .max((r.psi_s_at(n - 1) + 1.0).abs());
                    }
                    pending_pre = Some(core::mem::replace(&mut m, r));
                    regrids += 1;
                }
                Err(_) => {
                    samples.push(final_sample(t, last_dt, &m, pending_pre.take()));
                    return Ok(finish(
                        samples,
                        Termination::SingularityDetected { t, max_riem: f64::INFINITY },
                        steps,
                        regrids,
                        pole_dev,
                    ));
                }
            }
        }
        let res = match step_capped(&m, cfg, cfg.t_end - t) {
            Ok(r) => r,
            Err(Error::StepUnderflow { dt }) => {
                samples.push(final_sample(t, last_dt, &m, pending_pre.take()));
                return Ok(finish(samples, Termination::StepUnderflow { t, dt }, steps, regrids, pole_dev));
            }
            Err(Error::DegenerateFiber { .. }) => {
                samples.push(final_sample(t, last_dt, &m, pending_pre.take()));
                return Ok(finish(
                    samples,
                    Termination::SingularityDetected { t, max_riem: f64::INFINITY },
                    steps,
                    regrids,
                    pole_dev,
                ));
            }
            Err(e) => return Err(e),
        };
        if steps % cfg.store_every == 0 || pending_pre.is_some() {
            samples.push(make_sample(
                t,
                res.dt,
                &m,
                Some(res.velocity.clone()),
                res.energy,
                res.volume,
                res.grad_norm_sq,
                res.alpha,
                cfg,
                pending_pre.take(),
            ));
        }
        t += res.dt;
        last_dt = res.dt;
        steps += 1;
        m = res.metric;
        if let Some(r) = singular_now(&m) {
            samples.push(final_sample(t, last_dt, &m, None));
            return Ok(finish(
                samples,
                Termination::SingularityDetected { t, max_riem: r },
                steps,
                regrids,
                pole_dev,
            ));
        }
    }
}

/// Per-interval consistency of the stored samples with the semi-discrete
/// identities `dVol/dt = F/4 + (3/2)α Vol` and
/// `dF/dt = −‖grad F‖² − αF/2` (`α = 0` unless normalized).
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    /// One entry per sample; NaN where the forward interval is missing or
    /// crosses a regrid.
    pub vol_residual: Vec<f64>,
    pub dissipation_residual: Vec<f64>,
    pub median_vol_residual: f64,
    pub median_dissipation_residual: f64,
    /// Sample pairs where `F̃ = Vol^{1/3} F` increased by more than `1e-10` relative.
    pub f_tilde_violations: usize,
    /// Sample pairs where `F` increased.
    pub energy_increases: usize,
    /// `|Vol(T) − Vol(0)| / (Vol(0)·T)`.
    pub vol_drift_per_time: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

pub fn monitor_residuals(traj: &FlowTrajectory) -> ResidualReport {
    let s = &traj.samples;
    let n = s.len();
    let mut vol_res = alloc::vec![f64::NAN; n];
    let mut diss_res = alloc::vec![f64::NAN; n];
    let mut f_tilde_violations = 0;
    let mut energy_increases = 0;
    for i in 0..n.saturating_sub(1) {
        let (a, b) = (&s[i], &s[i + 1]);
        let f_tilde_a = a.volume.cbrt() * a.energy;
        let f_tilde_b = b.volume.cbrt() * b.energy;
        if f_tilde_b > f_tilde_a * (1.0 + 1e-10) {
            f_tilde_violations += 1;
        }
        if b.energy > a.energy {
            energy_increases += 1;
        }
        if b.pre_regrid.is_some() {
            continue;
        }
        let dt = b.t - a.t;
        if !(dt > 0.0) {
            continue;
        }
        let vol_rate = (b.volume - a.volume) / dt;
        let vol_pred = 0.25 * a.energy + 1.5 * a.alpha * a.volume;
        vol_res[i] = (vol_rate - vol_pred).abs() / a.energy.max(1e-300);
        let f_rate = (b.energy - a.energy) / dt;
        let f_pred = -a.grad_norm_sq - 0.5 * a.alpha * a.energy;
        diss_res[i] = (f_rate - f_pred).abs() / f_pred.abs().max(1e-300);
    }
    let (first, last) = (&s[0], &s[n - 1]);
    let span = last.t - first.t;
    let vol_drift_per_time = if span > 0.0 {
        (last.volume - first.volume).abs() / (first.volume * span)
    } else {
        0.0
    };
    ResidualReport {
        median_vol_residual: median(&vol_res),
        median_dissipation_residual: median(&diss_res),
        vol_residual: vol_res,
        dissipation_residual: diss_res,
        f_tilde_violations,
        energy_increases,
        vol_drift_per_time,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::presets::*;
    use crate::geometry::{energy, FiberSpec};
    use core::f64::consts::PI;

    fn random_field(n: usize, seed: u64) -> TangentField {
        // Small deterministic LCG; enough for unit tests.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        TangentField {
            dphi: (0..n).map(|_| next()).collect(),
            dpsi: (0..n).map(|_| next()).collect(),
        }
    }

    #[test]
    fn inner_product_examples() {
        let m = tube(32, 1.0, 1.0, FiberSpec::round_sphere(), |_| 1.0).unwrap();
        let h = TangentField {
            dphi: m.phi().to_vec(),
            dpsi: alloc::vec![0.0; 32],
        };
        assert!((l2_inner(&h, &h, &m).unwrap() - 4.0 * volume(&m)).abs() < 1e-12);
        let k = TangentField {
            dphi: alloc::vec![0.0; 32],
            dpsi: alloc::vec![1.0; 32],
        };
        assert_eq!(l2_inner(&h, &k, &m).unwrap(), 0.0);
        let r = random_field(32, 3);
        let a = l2_inner(&h.scaled(2.0), &r, &m).unwrap();
        assert!((a - 2.0 * l2_inner(&h, &r, &m).unwrap()).abs() < 1e-12);
        assert!(l2_inner(&TangentField::zeros(4), &k, &m).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = tube(64, 1.0, 1.1, FiberSpec::round_sphere(), |x| {
            1.0 + 0.2 * (2.0 * PI * x).cos() + 0.05 * (6.0 * PI * x).sin()
        })
        .unwrap();
        let g = grad_energy(&m).unwrap();
        for seed in 0..5 {
            let h = random_field(64, seed);
            let an = l2_inner(&g, &h, &m).unwrap();
            let eps = 1e-6;
            let fp = energy(&displaced(&m, &h, eps)).unwrap();
            let fm = energy(&displaced(&m, &h, -eps)).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            assert!((an - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{an} vs {fd}");
        }
    }

    #[test]
    fn sphere_gradient_matches_finite_differences() {
        let m = dumbbell(48, 0.5).unwrap();
        let g = grad_energy(&m).unwrap();
        for seed in 0..5 {
            let mut h = random_field(48, seed);
            h.make_admissible(&m);
            let an = l2_inner(&g, &h, &m).unwrap();
            let eps = 1e-6;
            let fp = energy(&displaced(&m, &h, eps)).unwrap();
            let fm = energy(&displaced(&m, &h, -eps)).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            assert!((an - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{an} vs {fd}");
        }
    }

    #[test]
    fn euler_identity_for_scaling() {
        // Σ φ ∂F/∂φ + ψ ∂F/∂ψ = −F for n = 3.
        let m = dumbbell(40, 0.3).unwrap();
        let p = energy_partials(&m, CurvatureNorm::Paper).unwrap();
        let s: f64 = (0..40).map(|i| m.phi()[i] * p.d_phi[i] + m.psi()[i] * p.d_psi[i]).sum();
        assert!((s + p.energy).abs() < 1e-9 * p.energy);
    }

    #[test]
    fn tube_expands() {
        let m = tube(32, 1.0, 1.0, FiberSpec::round_sphere(), |_| 1.5).unwrap();
        let g = grad_energy(&m).unwrap();
        assert!(g.dpsi.iter().all(|v| *v < 0.0));
    }

    #[test]
    fn ceiling_stops_immediately() {
        let m = dumbbell(32, 0.5).unwrap();
        let cfg = FlowConfig {
            riem_ceiling: 1e-6,
            ..FlowConfig::default()
        };
        let tr = run(&m, &cfg).unwrap();
        assert!(matches!(tr.termination, Termination::SingularityDetected { .. }));
        assert_eq!(tr.samples.len(), 1);
    }
}
