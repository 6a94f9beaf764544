//! Cohomogeneity-one warped products `g = φ(x)² dx² + ψ(x)² g_Σ`.
//!
//! Two topologies are supported. [`Topology::CircleProduct`] is `Σ × S¹` with
//! a periodic uniform grid in `x`. [`Topology::SphereSO3`] is `S³` with
//! `x ∈ [−1, 1]`, `ψ = 0` at both endpoints and `ψ_s → ±1` there, which
//! makes the metric a smooth `SO(3)`-invariant metric.
//!
//! All reductions use the reduced pointwise norm ([`CurvatureNorm::Paper`]) `|Rm|² = 4K₁² + 2K₂²`
//! unless a [`CurvatureNorm::Full`] is requested, which doubles curvature
//! norms and energies.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::interp::hermite;
use crate::stencil::Local;

pub const MIN_NODES: usize = 16;
/// Interior `ψ` below this value is treated as a pinched fiber.
pub const DEFAULT_PSI_FLOOR: f64 = 1e-10;
/// Allowed deviation of the discrete pole slope `|ψ_s|` from 1.
pub const POLE_SLOPE_TOL: f64 = 0.05;
/// Dimension of every warped product handled here.
pub const DIM: f64 = 3.0;

/// The constant-curvature surface `(Σ, g_Σ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiberSpec {
    /// Curvature of `g_Σ`, either `+1` or `−1`.
    pub k_sigma: f64,
    pub fiber_area: f64,
    /// First nonzero Laplace eigenvalue of `g_Σ`.
    pub fiber_mu1: f64,
    /// Injectivity radius of `g_Σ`.
    pub fiber_inj: f64,
}

impl FiberSpec {
    pub fn new(k_sigma: f64, fiber_area: f64, fiber_mu1: f64, fiber_inj: f64) -> Result<Self> {
        if k_sigma != 1.0 && k_sigma != -1.0 {
            return Err(Error::InvalidFiber("k_sigma must be +1 or -1"));
        }
        if !(fiber_area > 0.0) || !fiber_area.is_finite() {
            return Err(Error::InvalidFiber("fiber_area must be positive"));
        }
        if !(fiber_mu1 >= 0.0) {
            return Err(Error::InvalidFiber("fiber_mu1 must be nonnegative"));
        }
        if !(fiber_inj > 0.0) {
            return Err(Error::InvalidFiber("fiber_inj must be positive"));
        }
        Ok(FiberSpec {
            k_sigma,
            fiber_area,
            fiber_mu1,
            fiber_inj,
        })
    }

    /// Unit round 2-sphere.
    pub fn round_sphere() -> Self {
        FiberSpec {
            k_sigma: 1.0,
            fiber_area: 4.0 * PI,
            fiber_mu1: 2.0,
            fiber_inj: PI,
        }
    }

    /// Hyperbolic surface of the given genus; the area follows from
    /// Gauss–Bonnet, the spectral gap and injectivity radius depend on the
    /// conformal structure and must be supplied.
    pub fn hyperbolic(genus: u32, mu1: f64, inj: f64) -> Result<Self> {
        if genus < 2 {
            return Err(Error::InvalidFiber("hyperbolic fibers need genus >= 2"));
        }
        Self::new(-1.0, 4.0 * PI * (genus as f64 - 1.0), mu1, inj)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    /// `Σ × S¹`, periodic in `x`.
    CircleProduct,
    /// `S³`, `x ∈ [−1, 1]` with pole conditions.
    SphereSO3,
}

impl Topology {
    pub fn is_periodic(self) -> bool {
        matches!(self, Topology::CircleProduct)
    }

    pub fn name(self) -> &'static str {
        match self {
            Topology::CircleProduct => "circle_product",
            Topology::SphereSO3 => "sphere_so3",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "circle_product" => Some(Topology::CircleProduct),
            "sphere_so3" => Some(Topology::SphereSO3),
            _ => None,
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which pointwise `|Rm|²` the reductions report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum CurvatureNorm {
    /// `4K₁² + 2K₂²`, the integrand of the reduced energy formula.
    #[default]
    Paper,
    /// `Σ R_ijkl² = 8K₁² + 4K₂²`.
    Full,
}

impl CurvatureNorm {
    pub fn factor(self) -> f64 {
        match self {
            CurvatureNorm::Paper => 1.0,
            CurvatureNorm::Full => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CurvatureNorm::Paper => "paper",
            CurvatureNorm::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(CurvatureNorm::Paper),
            "full" => Some(CurvatureNorm::Full),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Quadrature {
    #[default]
    Trapezoid,
    /// Composite Simpson in `x` on pole topologies (3/8 rule on the last
    /// three intervals when their count is odd). Periodic grids always use
    /// the trapezoid rule, which is already spectrally accurate there.
    Simpson,
}

/// A validated warped-product metric sampled on a uniform `x` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedMetric {
    topology: Topology,
    fiber: FiberSpec,
    x: Vec<f64>,
    phi: Vec<f64>,
    psi: Vec<f64>,
    h: f64,
}

impl WarpedMetric {
    /// Validate samples and build a metric.
    pub fn from_profile(
        topology: Topology,
        fiber: FiberSpec,
        x: Vec<f64>,
        phi: Vec<f64>,
        psi: Vec<f64>,
    ) -> Result<Self> {
        let n = x.len();
        if n < MIN_NODES {
            return Err(Error::GridError("at least 16 nodes are required"));
        }
        if phi.len() != n || psi.len() != n {
            return Err(Error::GridError("x, phi and psi must have equal length"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridError("x must be strictly increasing"));
        }
        let h = (x[n - 1] - x[0]) / (n - 1) as f64;
        if x
            .windows(2)
            .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0))
        {
            return Err(Error::GridError("x must be uniformly spaced"));
        }
        if topology == Topology::SphereSO3
            && ((x[0] + 1.0).abs() > 1e-12 || (x[n - 1] - 1.0).abs() > 1e-12)
        {
            return Err(Error::GridError("sphere grids must span [-1, 1]"));
        }
        for (i, &p) in phi.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::NonPositiveDensity {
                    index: i,
                    what: "phi",
                    value: p,
                });
            }
        }
        let interior = match topology {
            Topology::CircleProduct => 0..n,
            Topology::SphereSO3 => 1..n - 1,
        };
        for i in interior {
            if !(psi[i] > 0.0) || !psi[i].is_finite() {
                return Err(Error::NonPositiveDensity {
                    index: i,
                    what: "psi",
                    value: psi[i],
                });
            }
        }
        let metric = WarpedMetric {
            topology,
            fiber,
            x,
            phi,
            psi,
            h,
        };
        if topology == Topology::SphereSO3 {
            metric.check_poles()?;
        }
        Ok(metric)
    }

    fn check_poles(&self) -> Result<()> {
        let n = self.len();
        let scale = self.psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (idx, expected) in [(0usize, 1.0), (n - 1, -1.0)] {
            if self.psi[idx].abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::BoundaryViolation {
                    x: self.x[idx],
                    reason: "psi must vanish at the poles",
                });
            }
            let slope = self.psi_s_at(idx);
            if (slope - expected).abs() > POLE_SLOPE_TOL {
                return Err(Error::BoundaryViolation {
                    x: self.x[idx],
                    reason: "psi_s must tend to +1 / -1 at the poles",
                });
            }
        }
        Ok(())
    }

    /// Build without validation; callers guarantee the invariants.
    pub(crate) fn from_parts(
        topology: Topology,
        fiber: FiberSpec,
        x: Vec<f64>,
        phi: Vec<f64>,
        psi: Vec<f64>,
    ) -> Self {
        let n = x.len();
        let h = (x[n - 1] - x[0]) / (n - 1) as f64;
        WarpedMetric {
            topology,
            fiber,
            x,
            phi,
            psi,
            h,
        }
    }

    /// Same grid, new samples, no validation.
    pub(crate) fn with_samples(&self, phi: Vec<f64>, psi: Vec<f64>) -> Self {
        WarpedMetric {
            topology: self.topology,
            fiber: self.fiber,
            x: self.x.clone(),
            phi,
            psi,
            h: self.h,
        }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn fiber(&self) -> &FiberSpec {
        &self.fiber
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Uniform coordinate spacing.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn is_periodic(&self) -> bool {
        self.topology.is_periodic()
    }

    /// Coordinate length of the base: the period for circles, 2 for spheres.
    pub fn coordinate_span(&self) -> f64 {
        match self.topology {
            Topology::CircleProduct => self.h * self.len() as f64,
            Topology::SphereSO3 => self.x[self.len() - 1] - self.x[0],
        }
    }

    /// The metric `λ²g`, i.e. `φ → λφ`, `ψ → λψ`.
    pub fn scaled(&self, lambda: f64) -> Self {
        self.with_samples(
            self.phi.iter().map(|p| p * lambda).collect(),
            self.psi.iter().map(|p| p * lambda).collect(),
        )
    }

    /// Nodes carrying curvature and energy: every node on a circle, all but
    /// the two poles on a sphere.
    pub fn interior(&self) -> core::ops::Range<usize> {
        match self.topology {
            Topology::CircleProduct => 0..self.len(),
            Topology::SphereSO3 => 1..self.len() - 1,
        }
    }

    /// Trapezoid weight of node `i` in `x`.
    pub(crate) fn weight(&self, i: usize) -> f64 {
        match self.topology {
            Topology::CircleProduct => self.h,
            Topology::SphereSO3 => {
                if i == 0 || i == self.len() - 1 {
                    0.5 * self.h
                } else {
                    self.h
                }
            }
        }
    }

    pub(crate) fn weights(&self, quadrature: Quadrature) -> Vec<f64> {
        let n = self.len();
        match (self.topology, quadrature) {
            (Topology::SphereSO3, Quadrature::Simpson) => simpson_weights(n, self.h),
            _ => (0..n).map(|i| self.weight(i)).collect(),
        }
    }

    pub(crate) fn local(&self, i: usize) -> Local {
        Local::gather(&self.phi, &self.psi, i, self.is_periodic())
    }

    /// Fourth-order `ψ_s` at node `i`, using the ghost extension at poles.
    pub(crate) fn psi_s_at(&self, i: usize) -> f64 {
        self.local(i).derivatives(self.h).0
    }

    pub(crate) fn check_fiber(&self, floor: f64) -> Result<()> {
        for i in self.interior() {
            if self.psi[i] < floor {
                return Err(Error::DegenerateFiber {
                    index: i,
                    psi: self.psi[i],
                });
            }
        }
        Ok(())
    }
}

fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = alloc::vec![0.0; n];
    let intervals = n - 1;
    let simpson_intervals = if intervals % 2 == 0 {
        intervals
    } else {
        intervals - 3
    };
    for k in (0..simpson_intervals).step_by(2) {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
    }
    if simpson_intervals < intervals {
        let k = simpson_intervals;
        let c = 3.0 * h / 8.0;
        w[k] += c;
        w[k + 1] += 3.0 * c;
        w[k + 2] += 3.0 * c;
        w[k + 3] += c;
    }
    w
}

/// Arclength coordinate at the nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Arclength {
    /// `s` at each node, measured from the first node.
    pub s: Vec<f64>,
    /// Total lateral length (circumference of the base circle, or the
    /// pole-to-pole distance).
    pub length: f64,
}

/// Cumulative `∫ φ dx` by the trapezoid rule with the endpoint-derivative
/// correction, which is fourth-order accurate and telescopes to the plain
/// trapezoid total on both topologies.
pub fn arclength(m: &WarpedMetric) -> Arclength {
    let n = m.len();
    let h = m.h;
    let periodic = m.is_periodic();
    let dphi = |i: usize| -> f64 {
        let l = crate::stencil::phi_node(i as isize - 1, n, periodic);
        let r = crate::stencil::phi_node(i as isize + 1, n, periodic);
        (m.phi[r] - m.phi[l]) / (2.0 * h)
    };
    let mut s = Vec::with_capacity(n);
    s.push(0.0);
    let segments = if periodic { n } else { n - 1 };
    let mut acc = 0.0;
    for i in 0..segments {
        let j = (i + 1) % n;
        acc += 0.5 * h * (m.phi[i] + m.phi[j]) - h * h / 12.0 * (dphi(j) - dphi(i));
        if s.len() < n {
            s.push(acc);
        }
    }
    Arclength { s, length: acc }
}

/// Sectional, Ricci and scalar curvature at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureProfile {
    /// Mixed sectional curvature `K₁ = −ψ_ss/ψ`.
    pub k1: Vec<f64>,
    /// Fiber sectional curvature `K₂ = (K_Σ − ψ_s²)/ψ²`.
    pub k2: Vec<f64>,
    /// Pointwise `|Rm|²` in the requested norm.
    pub riem_sq: Vec<f64>,
    /// Lowest Ricci eigenvalue, `min(2K₁, K₁ + K₂)`.
    pub ricci_min: Vec<f64>,
    pub scalar: Vec<f64>,
    pub norm: CurvatureNorm,
}

impl CurvatureProfile {
    pub fn max_riem_sq(&self) -> f64 {
        self.riem_sq.iter().fold(0.0f64, |m, &v| m.max(v))
    }
}

pub fn curvature_profile(m: &WarpedMetric) -> Result<CurvatureProfile> {
    curvature_profile_with(m, CurvatureNorm::Paper, DEFAULT_PSI_FLOOR)
}

pub fn curvature_profile_with(
    m: &WarpedMetric,
    norm: CurvatureNorm,
    psi_floor: f64,
) -> Result<CurvatureProfile> {
    m.check_fiber(psi_floor)?;
    let n = m.len();
    let k_sigma = m.fiber.k_sigma;
    let mut k1 = alloc::vec![0.0; n];
    let mut k2 = alloc::vec![0.0; n];
    for i in m.interior() {
        let (t, s) = m.local(i).derivatives(m.h);
        let q = m.psi[i];
        k1[i] = -s / q;
        k2[i] = (k_sigma - t * t) / (q * q);
    }
    if m.topology == Topology::SphereSO3 {
        // K₁ is even in s about a pole; extrapolate in s² and take K₂ equal
        // to its smoothness limit K₁.
        let arc = arclength(m);
        for (pole, a, b) in [(0usize, 1usize, 2usize), (n - 1, n - 2, n - 3)] {
            let sa = (arc.s[a] - arc.s[pole]).powi(2);
            let sb = (arc.s[b] - arc.s[pole]).powi(2);
            let limit = (sb * k1[a] - sa * k1[b]) / (sb - sa);
            k1[pole] = limit;
            k2[pole] = limit;
        }
    }
    let factor = norm.factor();
    let riem_sq = k1
        .iter()
        .zip(&k2)
        .map(|(a, b)| factor * (4.0 * a * a + 2.0 * b * b))
        .collect();
    let ricci_min = k1
        .iter()
        .zip(&k2)
        .map(|(&a, &b)| (2.0 * a).min(a + b))
        .collect();
    let scalar = k1
        .iter()
        .zip(&k2)
        .map(|(a, b)| 2.0 * (2.0 * a + b))
        .collect();
    Ok(CurvatureProfile {
        k1,
        k2,
        riem_sq,
        ricci_min,
        scalar,
        norm,
    })
}

pub fn volume(m: &WarpedMetric) -> f64 {
    volume_with(m, Quadrature::Trapezoid)
}

pub fn volume_with(m: &WarpedMetric, quadrature: Quadrature) -> f64 {
    let w = m.weights(quadrature);
    m.fiber.fiber_area
        * (0..m.len())
            .map(|i| w[i] * m.phi[i] * m.psi[i] * m.psi[i])
            .sum::<f64>()
}

/// `F(g) = ∫|Rm|² dV` from the reduced integrand
/// `Vol(g_Σ) ∫ (4ψ_ss² + 2(K_Σ − ψ_s²)²/ψ²) ds`.
pub fn energy(m: &WarpedMetric) -> Result<f64> {
    energy_with(m, CurvatureNorm::Paper, Quadrature::Trapezoid)
}

pub fn energy_with(m: &WarpedMetric, norm: CurvatureNorm, quadrature: Quadrature) -> Result<f64> {
    m.check_fiber(DEFAULT_PSI_FLOOR)?;
    let w = m.weights(quadrature);
    let k_sigma = m.fiber.k_sigma;
    let mut total = 0.0;
    for i in m.interior() {
        let (t, s) = m.local(i).derivatives(m.h);
        let q = m.psi[i];
        let defect = k_sigma - t * t;
        total += w[i] * m.phi[i] * (4.0 * s * s + 2.0 * defect * defect / (q * q));
    }
    let poles: f64 = pole_terms(m, &w).iter().map(|t| t.value).sum();
    Ok(norm.factor() * (m.fiber.fiber_area * total + poles))
}

/// Contribution of a sphere pole to the discrete energy, with partials.
pub(crate) struct PoleTerm {
    pub value: f64,
    pub d_phi: Vec<(usize, f64)>,
    pub d_psi: Vec<(usize, f64)>,
}

/// Pole terms `w·Vol(g_Σ)·φ·4(K_Σ − ψ_s²)·K̂` of the fiber part of the
/// integrand, with `K̂` the pole curvature extrapolated from the first two
/// interior nodes. The value is `O(h⁵)` on smooth data, but the derivative
/// in `ψ_s` carries the flux `−8ψ_s K₂` of the fiber term through the pole,
/// which keeps the discrete first variation consistent next to it.
pub(crate) fn pole_terms(m: &WarpedMetric, weights: &[f64]) -> Vec<PoleTerm> {
    if m.topology != Topology::SphereSO3 {
        return Vec::new();
    }
    let n = m.len();
    let h = m.h;
    let k_sigma = m.fiber.k_sigma;
    let fa = m.fiber.fiber_area;
    let mut out = Vec::with_capacity(2);
    for (p, a, b) in [(0usize, 1usize, 2usize), (n - 1, n - 2, n - 3)] {
        let lp = m.local(p);
        let la = m.local(a);
        let lb = m.local(b);
        let t = lp.slope_with_partials(h);
        let ka = la.k1_with_partials(h);
        let kb = lb.k1_with_partials(h);
        let khat = (4.0 * ka.value - kb.value) / 3.0;
        let defect = k_sigma - t.value * t.value;
        let c = fa * weights[p] * m.phi[p];
        let mut d_phi = Vec::with_capacity(10);
        let mut d_psi = Vec::with_capacity(15);
        d_phi.push((p, fa * weights[p] * 4.0 * defect * khat));
        let dt = -8.0 * c * t.value * khat;
        let dk = 4.0 * c * defect;
        for (local, dens, coef) in [(&lp, &t, dt), (&la, &ka, dk * 4.0 / 3.0), (&lb, &kb, -dk / 3.0)] {
            for k in 0..3 {
                d_phi.push((local.phi_nodes[k], coef * dens.d_phi[k]));
            }
            for k in 0..5 {
                let (j, sign) = local.psi_nodes[k];
                d_psi.push((j, coef * sign * dens.d_psi[k]));
            }
        }
        out.push(PoleTerm {
            value: 4.0 * c * defect * khat,
            d_phi,
            d_psi,
        });
    }
    out
}

/// The same energy as the `dV`-weighted quadrature of a curvature profile.
pub fn energy_from_profile(m: &WarpedMetric, profile: &CurvatureProfile, quadrature: Quadrature) -> f64 {
    let w = m.weights(quadrature);
    let poles: f64 = pole_terms(m, &w).iter().map(|t| t.value).sum();
    m.fiber.fiber_area
        * m.interior()
            .map(|i| w[i] * m.phi[i] * m.psi[i] * m.psi[i] * profile.riem_sq[i])
            .sum::<f64>()
        + profile.norm.factor() * poles
}

/// Re-grid to uniform arclength spacing with `n_new` nodes. `φ` becomes the
/// constant `L / span`; `ψ` is interpolated by cubic Hermite in `s` using the
/// fourth-order slopes.
pub fn resample_arclength(m: &WarpedMetric, n_new: usize) -> Result<WarpedMetric> {
    if n_new < MIN_NODES {
        return Err(Error::GridError("at least 16 nodes are required"));
    }
    let arc = arclength(m);
    let n = m.len();
    let slopes: Vec<f64> = (0..n).map(|i| m.psi_s_at(i)).collect();
    let span = m.coordinate_span();
    let phi_new = arc.length / span;
    let (x_new, s_new): (Vec<f64>, Vec<f64>) = match m.topology {
        Topology::CircleProduct => {
            let dx = span / n_new as f64;
            let ds = arc.length / n_new as f64;
            (0..n_new)
                .map(|j| (m.x[0] + j as f64 * dx, j as f64 * ds))
                .unzip()
        }
        Topology::SphereSO3 => {
            let dx = span / (n_new - 1) as f64;
            let ds = arc.length / (n_new - 1) as f64;
            (0..n_new)
                .map(|j| {
                    if j == n_new - 1 {
                        (m.x[n - 1], arc.length)
                    } else {
                        (m.x[0] + j as f64 * dx, j as f64 * ds)
                    }
                })
                .unzip()
        }
    };
    let period = m.is_periodic().then_some(arc.length);
    let mut psi_new: Vec<f64> = s_new
        .iter()
        .map(|&s| hermite(&arc.s, &m.psi, &slopes, period, s))
        .collect();
    if m.topology == Topology::SphereSO3 {
        psi_new[0] = 0.0;
        psi_new[n_new - 1] = 0.0;
    }
    let out = WarpedMetric::from_parts(
        m.topology,
        m.fiber,
        x_new,
        alloc::vec![phi_new; n_new],
        psi_new,
    );
    for i in out.interior() {
        if !(out.psi[i] > 0.0) {
            return Err(Error::NonPositiveDensity {
                index: i,
                what: "psi",
                value: out.psi[i],
            });
        }
    }
    Ok(out)
}

/// Quantities that control collapse of a warped product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoncollapseQuantities {
    pub length: f64,
    /// Smallest fiber radius away from the poles: the minimum over all
    /// nodes on a circle; on a sphere the smallest interior local minimum of
    /// `ψ` (a neck), or the largest `ψ` when there is none.
    pub min_psi: f64,
    /// Heuristic injectivity-radius surrogate
    /// `min(L/2, min_psi · inj(g_Σ))`. Not a certified bound.
    pub inj_proxy: f64,
}

pub fn noncollapse_quantities(m: &WarpedMetric) -> NoncollapseQuantities {
    let length = arclength(m).length;
    let min_psi = neck_radius(m);
    NoncollapseQuantities {
        length,
        min_psi,
        inj_proxy: (0.5 * length).min(min_psi * m.fiber.fiber_inj),
    }
}

fn neck_radius(m: &WarpedMetric) -> f64 {
    match m.topology {
        Topology::CircleProduct => m.psi.iter().fold(f64::INFINITY, |a, &b| a.min(b)),
        Topology::SphereSO3 => {
            let n = m.len();
            let mut neck = f64::INFINITY;
            for i in 2..n - 2 {
                if m.psi[i] <= m.psi[i - 1] && m.psi[i] <= m.psi[i + 1] {
                    neck = neck.min(m.psi[i]);
                }
            }
            if neck.is_finite() {
                neck
            } else {
                m.psi.iter().fold(0.0f64, |a, &b| a.max(b))
            }
        }
    }
}

/// Lower and upper bounds for the diameter. The lower bound is
/// `max(L/2, π·min ψ)` for round fibers (the projection to `Σ` scales
/// distances by at least `min ψ`) and `L/2` otherwise; the upper bound is
/// `L/2 + π·max ψ`.
pub fn diameter_bounds(m: &WarpedMetric) -> (f64, f64) {
    let length = arclength(m).length;
    let max_psi = m.psi.iter().fold(0.0f64, |a, &b| a.max(b));
    let lateral = match m.topology {
        Topology::CircleProduct => 0.5 * length,
        Topology::SphereSO3 => length,
    };
    let mut lower = lateral;
    if m.fiber.k_sigma > 0.0 && m.topology == Topology::CircleProduct {
        let min_psi = m.psi.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        lower = lower.max(PI * min_psi);
    }
    (lower, lateral + PI * max_psi)
}

/// Ready-made metrics used by tests, scenarios and the acceptance suite.
pub mod presets {
    use super::*;

    pub fn uniform_grid(topology: Topology, n: usize, period: f64) -> Vec<f64> {
        match topology {
            Topology::CircleProduct => (0..n).map(|i| i as f64 * period / n as f64).collect(),
            Topology::SphereSO3 => (0..n)
                .map(|i| {
                    if i == n - 1 {
                        1.0
                    } else {
                        -1.0 + 2.0 * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }

    /// Round `S³` of the given radius with `ψ(s) = r sin(s/r)`, `φ ≡ πr/2`.
    pub fn round_s3(n: usize, radius: f64) -> Result<WarpedMetric> {
        sphere_from_shape(n, radius, |s| s.sin())
    }

    /// An `SO(3)`-invariant metric on `S³` with `ψ(s) = r·f(s/r)` for
    /// `s/r ∈ [0, π]` and `φ ≡ πr/2`. `f` must vanish at 0 and π with unit slope.
    pub fn sphere_from_shape(
        n: usize,
        radius: f64,
        shape: impl Fn(f64) -> f64,
    ) -> Result<WarpedMetric> {
        let x = uniform_grid(Topology::SphereSO3, n, 2.0);
        let psi = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                if i == 0 || i == n - 1 {
                    0.0
                } else {
                    radius * shape(0.5 * PI * (xi + 1.0))
                }
            })
            .collect();
        WarpedMetric::from_profile(
            Topology::SphereSO3,
            FiberSpec::round_sphere(),
            x,
            alloc::vec![0.5 * PI * radius; n],
            psi,
        )
    }

    /// Dumbbell on `S³`: `ψ = sin s (1 − d sin² s)`, neck radius `1 − d`.
    pub fn dumbbell(n: usize, neck_depth: f64) -> Result<WarpedMetric> {
        sphere_from_shape(n, 1.0, move |s| {
            let sn = s.sin();
            sn * (1.0 - neck_depth * sn * sn)
        })
    }

    /// Tube over a circle of coordinate length `period` with `φ ≡ phi`.
    pub fn tube(
        n: usize,
        period: f64,
        phi: f64,
        fiber: FiberSpec,
        psi: impl Fn(f64) -> f64,
    ) -> Result<WarpedMetric> {
        let x = uniform_grid(Topology::CircleProduct, n, period);
        let psi = x.iter().map(|&xi| psi(xi)).collect();
        WarpedMetric::from_profile(Topology::CircleProduct, fiber, x, alloc::vec![phi; n], psi)
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;
    use alloc::vec;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn round_sphere_is_valid() {
        let m = round_s3(64, 1.0).unwrap();
        assert_eq!(m.topology(), Topology::SphereSO3);
        assert!((m.psi_s_at(0) - 1.0).abs() < 1e-4);
        assert!((m.psi_s_at(63) + 1.0).abs() < 1e-4);
    }

    #[test]
    fn constant_tube_is_valid() {
        let m = tube(32, 1.0, 1.0, FiberSpec::round_sphere(), |_| 2.0).unwrap();
        assert_eq!(m.len(), 32);
        assert!((m.coordinate_span() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn open_poles_are_rejected() {
        let n = 32;
        let x = uniform_grid(Topology::SphereSO3, n, 2.0);
        let psi: Vec<f64> = x.iter().map(|&t| 0.1 + (0.5 * PI * t).cos()).collect();
        let err = WarpedMetric::from_profile(
            Topology::SphereSO3,
            FiberSpec::round_sphere(),
            x,
            vec![0.5 * PI; n],
            psi,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BoundaryViolation { .. }));
    }

    #[test]
    fn wrong_pole_slope_is_rejected() {
        // ψ = 2 sin s has ψ_s = 2 at the poles.
        let err = sphere_from_shape(32, 1.0, |s| 2.0 * s.sin()).unwrap_err();
        assert!(matches!(err, Error::BoundaryViolation { .. }));
    }

    #[test]
    fn grid_errors() {
        let f = FiberSpec::round_sphere();
        let x: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        assert!(matches!(
            WarpedMetric::from_profile(Topology::CircleProduct, f, x, vec![1.0; 8], vec![1.0; 8]),
            Err(Error::GridError(_))
        ));
        let mut x: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        x.swap(3, 4);
        assert!(matches!(
            WarpedMetric::from_profile(Topology::CircleProduct, f, x, vec![1.0; 20], vec![1.0; 20]),
            Err(Error::GridError(_))
        ));
    }

    #[test]
    fn non_positive_density() {
        let f = FiberSpec::round_sphere();
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let mut phi = vec![1.0; 20];
        phi[5] = 0.0;
        assert!(matches!(
            WarpedMetric::from_profile(Topology::CircleProduct, f, x.clone(), phi, vec![1.0; 20]),
            Err(Error::NonPositiveDensity { index: 5, .. })
        ));
        let mut psi = vec![1.0; 20];
        psi[7] = -0.1;
        assert!(matches!(
            WarpedMetric::from_profile(Topology::CircleProduct, f, x, vec![1.0; 20], psi),
            Err(Error::NonPositiveDensity { index: 7, .. })
        ));
    }

    #[test]
    fn arclength_examples() {
        // φ ≡ 1 on [−1, 1].
        let m = sphere_from_shape(41, 2.0 / PI, |s| s.sin()).unwrap();
        let arc = arclength(&m);
        assert!((arc.length - 2.0).abs() < 1e-13);
        for (s, x) in arc.s.iter().zip(m.x()) {
            assert!((s - (x + 1.0)).abs() < 1e-13);
        }
        let m = round_s3(100, 1.0).unwrap();
        assert!((arclength(&m).length - PI).abs() < 1e-13);
        let m = tube(50, 1.0, 0.7, FiberSpec::round_sphere(), |_| 1.0).unwrap();
        assert!((arclength(&m).length - 0.7).abs() < 1e-14);
    }

    #[test]
    fn round_sphere_curvature() {
        let m = round_s3(200, 1.0).unwrap();
        let c = curvature_profile(&m).unwrap();
        for i in 0..m.len() {
            assert!((c.k1[i] - 1.0).abs() < 1e-3, "k1[{i}] = {}", c.k1[i]);
            assert!((c.k2[i] - 1.0).abs() < 1e-3, "k2[{i}] = {}", c.k2[i]);
            assert!((c.scalar[i] - 6.0).abs() < 6e-3);
            assert!((c.riem_sq[i] - 6.0).abs() < 6e-3);
        }
        let full = curvature_profile_with(&m, CurvatureNorm::Full, DEFAULT_PSI_FLOOR).unwrap();
        assert!((full.riem_sq[50] - 12.0).abs() < 1e-2);
    }

    #[test]
    fn flat_and_hyperbolic_tubes() {
        let m = tube(32, 1.0, 1.0, FiberSpec::round_sphere(), |_| 2.0).unwrap();
        let c = curvature_profile(&m).unwrap();
        assert!(c.k1.iter().all(|k| k.abs() < 1e-14));
        assert!(c.k2.iter().all(|k| (k - 0.25).abs() < 1e-14));

        let hyp = FiberSpec::hyperbolic(2, 0.5, 1.0).unwrap();
        let m = tube(32, 1.0, 1.0, hyp, |_| 1.0).unwrap();
        let c = curvature_profile(&m).unwrap();
        assert!(c.k2.iter().all(|k| (k + 1.0).abs() < 1e-14));
        assert!(c.ricci_min.iter().all(|k| (k + 1.0).abs() < 1e-14));
    }

    #[test]
    fn ricci_below_average() {
        let m = dumbbell(64, 0.5).unwrap();
        let c = curvature_profile(&m).unwrap();
        for i in 0..m.len() {
            assert!(c.ricci_min[i] <= c.scalar[i] / 3.0 + 1e-12);
            assert!(c.riem_sq[i] >= 0.0);
        }
    }

    #[test]
    fn volume_and_energy_oracles() {
        let m = round_s3(400, 1.0).unwrap();
        assert!(rel(volume(&m), 2.0 * PI * PI) < 1e-10);
        assert!(rel(energy(&m).unwrap(), 12.0 * PI * PI) < 1e-4);
        let t = tube(64, 1.0, 1.0, FiberSpec::round_sphere(), |_| 2.0).unwrap();
        assert!(rel(volume(&t), 16.0 * PI) < 1e-14);
        assert!(rel(energy(&t).unwrap(), 2.0 * PI) < 1e-14);
        let e_full = energy_with(&t, CurvatureNorm::Full, Quadrature::Trapezoid).unwrap();
        assert!(rel(e_full, 4.0 * PI) < 1e-14);
    }

    #[test]
    fn simpson_weights_integrate_cubics() {
        for n in [17usize, 18] {
            let h = 2.0 / (n - 1) as f64;
            let w = simpson_weights(n, h);
            let integral: f64 = (0..n)
                .map(|i| {
                    let x = -1.0 + i as f64 * h;
                    w[i] * (x * x * x + x * x)
                })
                .sum();
            assert!((integral - 2.0 / 3.0).abs() < 1e-13, "n = {n}");
        }
        let m = round_s3(101, 1.0).unwrap();
        assert!(rel(volume_with(&m, Quadrature::Simpson), 2.0 * PI * PI) < 1e-10);
    }

    #[test]
    fn scaling_laws() {
        let m = dumbbell(64, 0.5).unwrap();
        let v = volume(&m);
        let f = energy(&m).unwrap();
        let c = curvature_profile(&m).unwrap();
        for lambda in [0.5f64, 2.0] {
            let s = m.scaled(lambda);
            assert!(rel(volume(&s), lambda.powi(3) * v) < 1e-13);
            assert!(rel(energy(&s).unwrap(), f / lambda) < 1e-13);
            let cs = curvature_profile(&s).unwrap();
            for i in 1..m.len() - 1 {
                assert!((cs.k1[i] * lambda * lambda - c.k1[i]).abs() < 1e-10 * (1.0 + c.k1[i].abs()));
                assert!((cs.k2[i] * lambda * lambda - c.k2[i]).abs() < 1e-10 * (1.0 + c.k2[i].abs()));
            }
        }
    }

    #[test]
    fn two_energy_paths_agree() {
        for m in [
            dumbbell(80, 0.7).unwrap(),
            tube(48, 1.0, 1.3, FiberSpec::round_sphere(), |x| 1.0 + 0.3 * (2.0 * PI * x).cos()).unwrap(),
        ] {
            let c = curvature_profile(&m).unwrap();
            let a = energy(&m).unwrap();
            let b = energy_from_profile(&m, &c, Quadrature::Trapezoid);
            assert!(rel(a, b) < 1e-10);
        }
    }

    #[test]
    fn second_order_convergence_on_round_sphere() {
        let mut prev: Option<(f64, f64, f64)> = None;
        for n in [50usize, 100, 200, 400] {
            let m = round_s3(n, 1.0).unwrap();
            let c = curvature_profile(&m).unwrap();
            let e_f = rel(energy(&m).unwrap(), 12.0 * PI * PI);
            let e_k1 = c.k1.iter().fold(0.0f64, |a, k| a.max((k - 1.0).abs()));
            let e_k2 = c.k2.iter().fold(0.0f64, |a, k| a.max((k - 1.0).abs()));
            if let Some((pf, p1, p2)) = prev {
                assert!(pf / e_f >= 3.5, "energy ratio {}", pf / e_f);
                assert!(p1 / e_k1 >= 3.5, "k1 ratio {}", p1 / e_k1);
                assert!(p2 / e_k2 >= 3.5, "k2 ratio {}", p2 / e_k2);
            }
            prev = Some((e_f, e_k1, e_k2));
        }
    }

    #[test]
    fn pole_consistency_improves() {
        let gap = |n: usize| {
            let m = dumbbell(n, 0.5).unwrap();
            let c = curvature_profile(&m).unwrap();
            (c.k2[1] - c.k1[1]).abs()
        };
        let (a, b, c) = (gap(50), gap(100), gap(200));
        assert!(b < a && c < b && c < 1e-2, "{a} {b} {c}");
    }

    #[test]
    fn degenerate_fiber_is_reported() {
        let m = tube(32, 1.0, 1.0, FiberSpec::round_sphere(), |x| {
            if (x - 0.5).abs() < 1e-9 { 1e-12 } else { 1.0 }
        })
        .unwrap();
        assert!(matches!(curvature_profile(&m), Err(Error::DegenerateFiber { index: 16, .. })));
        assert!(matches!(energy(&m), Err(Error::DegenerateFiber { .. })));
    }

    #[test]
    fn resample_examples() {
        let m = round_s3(64, 1.0).unwrap();
        let r = resample_arclength(&m, 64).unwrap();
        for (a, b) in r.psi().iter().zip(m.psi()) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!(matches!(resample_arclength(&m, 8), Err(Error::GridError(_))));

        // Non-uniformly sampled round sphere: s(x) = π(x+1)/2 + 0.2 sin(π(x+1)).
        let n = 200;
        let x = uniform_grid(Topology::SphereSO3, n, 2.0);
        let s_of = |x: f64| 0.5 * PI * (x + 1.0) + 0.2 * (PI * (x + 1.0)).sin();
        let ds_of = |x: f64| 0.5 * PI + 0.2 * PI * (PI * (x + 1.0)).cos();
        let phi: Vec<f64> = x.iter().map(|&t| ds_of(t)).collect();
        let psi: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &t)| if i == 0 || i == n - 1 { 0.0 } else { s_of(t).sin() })
            .collect();
        let m = WarpedMetric::from_profile(Topology::SphereSO3, FiberSpec::round_sphere(), x, phi, psi)
            .unwrap();
        let v0 = volume(&m);
        let r = resample_arclength(&m, 2 * n).unwrap();
        assert!(rel(volume(&r), v0) < 1e-6, "{}", rel(volume(&r), v0));
        assert!(rel(arclength(&r).length, PI) < 1e-8);
        assert!(rel(energy(&r).unwrap(), 12.0 * PI * PI) < 1e-4);
    }

    #[test]
    fn resample_preserves_curvature() {
        let m = tube(64, 1.0, 1.0, FiberSpec::round_sphere(), |x| 1.0 + 0.2 * (2.0 * PI * x).cos())
            .unwrap();
        // Distort the parameterization, then resample back to uniform.
        let n = 64;
        let x = m.x().to_vec();
        let s_of = |x: f64| x + 0.05 * (2.0 * PI * x).sin();
        let phi: Vec<f64> = x.iter().map(|&t| 1.0 + 0.1 * PI * (2.0 * PI * t).cos()).collect();
        let psi: Vec<f64> = x.iter().map(|&t| 1.0 + 0.2 * (2.0 * PI * s_of(t)).cos()).collect();
        let d = WarpedMetric::from_profile(Topology::CircleProduct, FiberSpec::round_sphere(), x, phi, psi)
            .unwrap();
        let r = resample_arclength(&d, n).unwrap();
        let cr = curvature_profile(&r).unwrap();
        let cm = curvature_profile(&m).unwrap();
        for i in 0..n {
            assert!((cr.k1[i] - cm.k1[i]).abs() < 5e-3, "{i}: {} vs {}", cr.k1[i], cm.k1[i]);
            assert!((cr.k2[i] - cm.k2[i]).abs() < 5e-3);
        }
    }

    #[test]
    fn noncollapse_examples() {
        let m = tube(32, 2.0, 1.0, FiberSpec::round_sphere(), |_| 1.0).unwrap();
        let q = noncollapse_quantities(&m);
        assert!((q.length - 2.0).abs() < 1e-14);
        assert!((q.min_psi - 1.0).abs() < 1e-14);
        assert!((q.inj_proxy - 1.0).abs() < 1e-14);
        let s = noncollapse_quantities(&m.scaled(3.0));
        assert!((s.length - 6.0).abs() < 1e-13);
        assert!((s.min_psi - 3.0).abs() < 1e-13);
        assert!((s.inj_proxy - 3.0).abs() < 1e-13);

        let d = dumbbell(201, 0.95).unwrap();
        let q = noncollapse_quantities(&d);
        assert!((q.min_psi - 0.05).abs() < 1e-12);
        assert!((q.inj_proxy - 0.05 * PI).abs() < 1e-12);
    }
}
