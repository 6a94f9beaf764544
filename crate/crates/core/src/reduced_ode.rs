//! Homogeneous reductions: products of round spheres and flat factors.
//!
//! For `g = ⊕ A_j g_j` with `g_j` a unit round sphere or a flat metric, the
//! curvature tensor is parallel, so `δd Rc = 0` and the flow reduces to the
//! ODE system `∂_t g = 2Ř − ½|Rm|² g` in the scales `A_j`.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Curvature {
    /// Unit round sphere, sectional curvature `+1`.
    Sphere,
    Flat,
}

/// One factor `A · g_unit` of a product metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factor {
    pub dim: usize,
    pub curv: Curvature,
    pub scale: f64,
}

impl Factor {
    pub fn sphere(dim: usize, scale: f64) -> Self {
        Factor {
            dim,
            curv: Curvature::Sphere,
            scale,
        }
    }

    pub fn flat(dim: usize, scale: f64) -> Self {
        Factor {
            dim,
            curv: Curvature::Flat,
            scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProductState {
    pub factors: Vec<Factor>,
    pub t: f64,
}

impl ProductState {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        let s = ProductState { factors, t: 0.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn round_sphere(n: usize, a0: f64) -> Result<Self> {
        Self::new(alloc::vec![Factor::sphere(n, a0)])
    }

    /// `A g_{S⁵} ⊕ B g_{S¹}`.
    pub fn s5_s1(a0: f64, b0: f64) -> Result<Self> {
        Self::new(alloc::vec![Factor::sphere(5, a0), Factor::flat(1, b0)])
    }

    /// `A g_{S²} ⊕ A⁻² g_{S¹}`.
    pub fn s2_s1(a0: f64) -> Result<Self> {
        Self::new(alloc::vec![Factor::sphere(2, a0), Factor::flat(1, 1.0 / (a0 * a0))])
    }

    fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::ShapeMismatch("a product needs at least one factor"));
        }
        for f in &self.factors {
            if f.dim == 0 || (f.curv == Curvature::Sphere && f.dim < 2) {
                return Err(Error::ShapeMismatch("sphere factors need dim >= 2, flat factors dim >= 1"));
            }
            if !(f.scale > 0.0) || !f.scale.is_finite() {
                return Err(Error::ShapeMismatch("factor scales must be positive"));
            }
        }
        if self.dim() < 2 {
            return Err(Error::ShapeMismatch("total dimension must be at least 2"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim).sum()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.factors.iter().map(|f| f.scale).collect()
    }

    fn with_scales(&self, scales: &[f64], t: f64) -> Self {
        ProductState {
            factors: self
                .factors
                .iter()
                .zip(scales)
                .map(|(f, &a)| Factor { scale: a, ..*f })
                .collect(),
            t,
        }
    }
}

/// `(|Rm|², Ř coefficient)` of the unit round `S^m`, contracted by brute
/// force in an orthonormal frame from `R_ijkl = δ_ik δ_jl − δ_il δ_jk`.
/// The Ř coefficient is the (constant) diagonal entry of `Ř_ij = R_ipqr R_jpqr`.
pub fn unit_sphere_contractions(m: usize) -> (f64, f64) {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let r = |i: usize, j: usize, k: usize, l: usize| d(i, k) * d(j, l) - d(i, l) * d(j, k);
    let mut norm = 0.0;
    let mut check = 0.0;
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    let v = r(i, j, k, l);
                    norm += v * v;
                    if i == 0 {
                        check += v * v;
                    }
                }
            }
        }
    }
    (norm, check)
}

/// `c_m = |Rm(g_{S^m})|²` in the full tensor norm.
pub fn sphere_constant(m: usize) -> f64 {
    unit_sphere_contractions(m).0
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProductInvariants {
    pub riem_sq: f64,
    /// Per factor, the coefficient `a_j` with `Ř = a_j g_unit` on that block.
    pub check_r: Vec<f64>,
    pub dim: usize,
}

pub fn product_invariants(s: &ProductState) -> ProductInvariants {
    let mut riem_sq = 0.0;
    let mut check_r = Vec::with_capacity(s.factors.len());
    for f in &s.factors {
        match f.curv {
            Curvature::Sphere => {
                let (c, a) = unit_sphere_contractions(f.dim);
                riem_sq += c / (f.scale * f.scale);
                check_r.push(a / f.scale);
            }
            Curvature::Flat => check_r.push(0.0),
        }
    }
    ProductInvariants {
        riem_sq,
        check_r,
        dim: s.dim(),
    }
}

/// Volume of a unit factor: the round sphere, or the flat torus
/// `(ℝ/2πℤ)^dim`.
pub fn unit_volume(f: &Factor) -> f64 {
    match f.curv {
        Curvature::Flat => (2.0 * PI).powi(f.dim as i32),
        Curvature::Sphere => {
            // |S^m| = 2π/(m−1)·|S^{m−2}|, from |S⁰| = 2 and |S¹| = 2π.
            let mut v = if f.dim % 2 == 0 { 2.0 } else { 2.0 * PI };
            let mut m = if f.dim % 2 == 0 { 0 } else { 1 };
            while m < f.dim {
                m += 2;
                v *= 2.0 * PI / (m - 1) as f64;
            }
            v
        }
    }
}

pub fn product_volume(s: &ProductState) -> f64 {
    s.factors
        .iter()
        .map(|f| unit_volume(f) * f.scale.powf(0.5 * f.dim as f64))
        .product()
}

/// `F = |Rm|²·Vol`, exact for these parallel-curvature metrics.
pub fn product_energy(s: &ProductState) -> f64 {
    product_invariants(s).riem_sq * product_volume(s)
}

/// Diameter of the product, `√(Σ diam_j²)` with `π√A` for a sphere and
/// `π√(dim·A)` for a flat torus.
pub fn product_diameter(s: &ProductState) -> f64 {
    s.factors
        .iter()
        .map(|f| {
            let d = match f.curv {
                Curvature::Sphere => PI * f.scale.sqrt(),
                Curvature::Flat => PI * (f.dim as f64 * f.scale).sqrt(),
            };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum RhsMode {
    /// The displayed coefficients for round spheres and `S⁵ × S¹`.
    PaperLiteral,
    /// Direct block evaluation of `−(−2Ř + ½|Rm|² g)`.
    #[default]
    GradientDerived,
}

impl RhsMode {
    pub fn name(self) -> &'static str {
        match self {
            RhsMode::PaperLiteral => "paper_literal",
            RhsMode::GradientDerived => "gradient_derived",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "paper_literal" => Some(RhsMode::PaperLiteral),
            "gradient_derived" => Some(RhsMode::GradientDerived),
            _ => None,
        }
    }
}

/// `dA_j/dt` for every factor.
pub fn product_rhs(s: &ProductState, mode: RhsMode) -> Result<Vec<f64>> {
    let scales = s.scales();
    let mut out = alloc::vec![0.0; scales.len()];
    rhs_into(s, mode, &scales, &mut out)?;
    Ok(out)
}

fn rhs_into(s: &ProductState, mode: RhsMode, a: &[f64], out: &mut [f64]) -> Result<()> {
    match mode {
        RhsMode::GradientDerived => {
            for (j, fj) in s.factors.iter().enumerate() {
                // A_j · dA_j/dt = 2 a_j − ½ Σ_k c_k (A_j/A_k)², with a_j the
                // unit Ř coefficient; written so a single factor cancels exactly.
                let mut acc = 0.0;
                if fj.curv == Curvature::Sphere {
                    acc += 2.0 * unit_sphere_contractions(fj.dim).1;
                }
                for (k, fk) in s.factors.iter().enumerate() {
                    if fk.curv == Curvature::Sphere {
                        let ratio = a[j] / a[k];
                        acc -= 0.5 * sphere_constant(fk.dim) * ratio * ratio;
                    }
                }
                out[j] = acc / a[j];
            }
            Ok(())
        }
        RhsMode::PaperLiteral => match s.factors.as_slice() {
            [f] if f.curv == Curvature::Sphere => {
                let n = f.dim as f64;
                out[0] = (1.0 / n - 0.25) * 2.0 * n * (n - 1.0) / a[0];
                Ok(())
            }
            [f, g] if f.curv == Curvature::Sphere && f.dim == 5 && g.curv == Curvature::Flat && g.dim == 1 => {
                let c5 = sphere_constant(5);
                out[0] = -c5 / (20.0 * a[0]);
                out[1] = -c5 * a[1] / (4.0 * a[0] * a[0]);
                Ok(())
            }
            _ => Err(Error::UnsupportedState),
        },
    }
}

/// The constant `κ` with `GradientDerived = κ · PaperLiteral` on this state,
/// or `None` when both vanish (static spheres) or the state is unsupported.
pub fn mode_ratio(s: &ProductState) -> Option<f64> {
    let p = product_rhs(s, RhsMode::PaperLiteral).ok()?;
    let g = product_rhs(s, RhsMode::GradientDerived).ok()?;
    let mut ratio = None;
    for (a, b) in g.iter().zip(&p) {
        if b.abs() > 1e-300 {
            let r = a / b;
            match ratio {
                None => ratio = Some(r),
                Some(q) if (q - r).abs() > 1e-12 * q.abs() => return None,
                _ => {}
            }
        }
    }
    ratio
}

/// `β` in `dA/dt = β/A` for the round `Sⁿ`.
pub fn sphere_rate(n: usize, mode: RhsMode) -> f64 {
    let s = ProductState {
        factors: alloc::vec![Factor::sphere(n, 1.0)],
        t: 0.0,
    };
    // Both modes are supported on single spheres.
    product_rhs(&s, mode).map(|v| v[0]).unwrap_or(0.0)
}

/// Time at which `A(t)` reaches 0, if it does.
pub fn sphere_lifespan(n: usize, a0: f64, mode: RhsMode) -> Option<f64> {
    let beta = sphere_rate(n, mode);
    (beta < 0.0).then(|| a0 * a0 / (-2.0 * beta))
}

/// Exact solution `A(t) = √(A₀² + 2βt)` of the round-sphere ODE.
pub fn analytic_sphere(n: usize, a0: f64, t: f64, mode: RhsMode) -> Result<f64> {
    let beta = sphere_rate(n, mode);
    let sq = a0 * a0 + 2.0 * beta * t;
    if let Some(t_sing) = sphere_lifespan(n, a0, mode) {
        if t >= t_sing {
            return Err(Error::PastSingularTime { t, t_sing });
        }
    }
    Ok(sq.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// A scale below this signals a singularity.
    pub scale_floor: f64,
    /// `|Rm|` above this signals a singularity.
    pub riem_ceiling: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-10,
            atol: 1e-14,
            scale_floor: 1e-8,
            riem_ceiling: 1e12,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSample {
    pub t: f64,
    pub scales: Vec<f64>,
    pub riem_sq: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OdeTermination {
    ReachedEnd,
    SingularityDetected { t_sing: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeTrajectory {
    pub template: ProductState,
    pub mode: RhsMode,
    pub samples: Vec<OdeSample>,
    pub termination: OdeTermination,
    pub accepted: usize,
    pub rejected: usize,
}

impl OdeTrajectory {
    pub fn state(&self, i: usize) -> ProductState {
        self.template.with_scales(&self.samples[i].scales, self.samples[i].t)
    }

    pub fn last(&self) -> &OdeSample {
        self.samples.last().expect("trajectories hold the initial sample")
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration from `s0.t` to `t_end`. Every
/// accepted step is stored.
pub fn integrate(s0: &ProductState, mode: RhsMode, t_end: f64, tol: &Tolerances) -> Result<OdeTrajectory> {
    s0.validate()?;
    let m = s0.factors.len();
    let riem = |a: &[f64]| product_invariants(&s0.with_scales(a, 0.0)).riem_sq;
    let mut y = s0.scales();
    let mut t = s0.t;
    let riem0 = riem(&y);
    let mut samples = alloc::vec![OdeSample {
        t,
        scales: y.clone(),
        riem_sq: riem0,
    }];
    let mut k = [(); 7].map(|_| alloc::vec![0.0; m]);
    let mut stage = alloc::vec![0.0; m];
    let mut y5 = alloc::vec![0.0; m];
    rhs_into(s0, mode, &y, &mut k[0])?;
    let scale0 = y.iter().fold(0.0f64, |a, &b| a.max(b));
    let rate0 = k[0].iter().zip(&y).fold(0.0f64, |acc, (d, a)| acc.max((d / a).abs()));
    let mut h = if rate0 > 0.0 { 1e-3 / rate0 } else { 1e-2 * scale0.max(1.0) };
    h = h.min(t_end - t).max(1e-16);
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let singular = |a: &[f64], r: f64| {
        a.iter().any(|&v| !(v > tol.scale_floor)) || !(r.sqrt() <= tol.riem_ceiling)
    };

    while t < t_end {
        if accepted + rejected >= tol.max_steps {
            return Err(Error::StepSizeUnderflow { t });
        }
        h = h.min(t_end - t);
        for s in 1..7 {
            for i in 0..m {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                stage[i] = acc;
            }
            if stage.iter().any(|v| !(*v > 0.0)) {
                // Step overshoots a collapsing factor; treat as rejection.
                break;
            }
            rhs_into(s0, mode, &stage, &mut k[s])?;
        }
        let mut err = 0.0f64;
        let mut ok = stage.iter().all(|v| *v > 0.0);
        if ok {
            for i in 0..m {
                let mut hi5 = y[i];
                let mut hi4 = y[i];
                for s in 0..7 {
                    hi5 += h * B5[s] * k[s][i];
                    hi4 += h * B4[s] * k[s][i];
                }
                y5[i] = hi5;
                let sc = tol.atol + tol.rtol * y[i].abs().max(hi5.abs());
                let e = (hi5 - hi4) / sc;
                err += e * e;
            }
            err = (err / m as f64).sqrt();
            ok = err.is_finite() && y5.iter().all(|v| *v > 0.0);
        }
        if ok && err <= 1.0 {
            t += h;
            y.copy_from_slice(&y5);
            // FSAL: the last stage is the derivative at the new point.
            let last = k[6].clone();
            k[0] = last;
            accepted += 1;
            let r = riem(&y);
            samples.push(OdeSample {
                t,
                scales: y.clone(),
                riem_sq: r,
            });
            if singular(&y, r) {
                return Ok(OdeTrajectory {
                    template: s0.clone(),
                    mode,
                    samples,
                    termination: OdeTermination::SingularityDetected { t_sing: t },
                    accepted,
                    rejected,
                });
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            rejected += 1;
            let fac = if ok { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.25 };
            h *= fac;
        }
        if h < 1e-14 * t.abs().max(1e-300) {
            let r = riem(&y);
            // The step collapsing while curvature has blown up is the
            // signature of a finite-time singularity.
            if r >= 1e4 * riem0 {
                return Ok(OdeTrajectory {
                    template: s0.clone(),
                    mode,
                    samples,
                    termination: OdeTermination::SingularityDetected { t_sing: t },
                    accepted,
                    rejected,
                });
            }
            return Err(Error::StepSizeUnderflow { t });
        }
    }
    Ok(OdeTrajectory {
        template: s0.clone(),
        mode,
        samples,
        termination: OdeTermination::ReachedEnd,
        accepted,
        rejected,
    })
}

/// Index pair `(sphere, flat)` of a two-factor product with one flat factor.
fn sphere_and_flat(s: &ProductState) -> Result<(usize, usize)> {
    match s.factors.as_slice() {
        [a, b] if a.curv == Curvature::Sphere && b.curv == Curvature::Flat => Ok((0, 1)),
        [a, b] if a.curv == Curvature::Flat && b.curv == Curvature::Sphere => Ok((1, 0)),
        _ => Err(Error::ShapeMismatch("expected one sphere factor and one flat factor")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftReport {
    pub exponent: f64,
    /// `max |r(t)/r(0) − 1|` for `r = B/A^p`.
    pub max_rel_drift: f64,
    /// `max |ln r(t) − ln r(0)|`.
    pub max_log_drift: f64,
}

/// `B/A^p` at every sample.
pub fn ratio_series(traj: &OdeTrajectory, p: f64) -> Result<Vec<f64>> {
    let (a, b) = sphere_and_flat(&traj.template)?;
    Ok(traj
        .samples
        .iter()
        .map(|s| s.scales[b] / s.scales[a].powf(p))
        .collect())
}

pub fn conserved_ratio(traj: &OdeTrajectory, p: f64) -> Result<DriftReport> {
    let r = ratio_series(traj, p)?;
    let r0 = r[0];
    let mut rel = 0.0f64;
    let mut log = 0.0f64;
    for v in &r {
        rel = rel.max((v / r0 - 1.0).abs());
        log = log.max((v / r0).ln().abs());
    }
    Ok(DriftReport {
        exponent: p,
        max_rel_drift: rel,
        max_log_drift: log,
    })
}

/// Least-squares slope of `ln B` against `ln A` over the trajectory: the
/// exponent `p` that makes `B/A^p` most nearly constant.
pub fn best_exponent(traj: &OdeTrajectory) -> Result<f64> {
    let (a, b) = sphere_and_flat(&traj.template)?;
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .map(|s| (s.scales[a].ln(), s.scales[b].ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::ShapeMismatch("sphere scale is constant along the trajectory"));
    }
    Ok(sxy / sxx)
}

/// `|Rm| · inj²` with `inj ≤ π√B` from the flat circle factor of scale `B`.
pub fn collapse_scalar_at(s: &ProductState) -> Result<f64> {
    let (_, b) = sphere_and_flat(s)?;
    let riem = product_invariants(s).riem_sq;
    Ok(riem.sqrt() * PI * PI * s.factors[b].scale)
}

/// `(t, |Rm|·inj²)` along the trajectory.
pub fn collapse_scalar(traj: &OdeTrajectory) -> Result<Vec<(f64, f64)>> {
    sphere_and_flat(&traj.template)?;
    (0..traj.samples.len())
        .map(|i| Ok((traj.samples[i].t, collapse_scalar_at(&traj.state(i))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contraction_constants() {
        for m in 2..=7 {
            let (c, a) = unit_sphere_contractions(m);
            let mf = m as f64;
            assert_eq!(c, 2.0 * mf * (mf - 1.0));
            assert_eq!(a, c / mf);
        }
        let inv = product_invariants(&ProductState::s5_s1(1.0, 1.0).unwrap());
        assert_eq!(inv.riem_sq, 40.0);
        assert_eq!(inv.check_r, alloc::vec![8.0, 0.0]);
        assert_eq!(inv.dim, 6);
        let inv = product_invariants(&ProductState::new(alloc::vec![Factor::sphere(2, 3.0), Factor::flat(1, 7.0)]).unwrap());
        assert!((inv.riem_sq - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn volumes_and_energy() {
        assert!((unit_volume(&Factor::sphere(2, 1.0)) - 4.0 * PI).abs() < 1e-13);
        assert!((unit_volume(&Factor::sphere(3, 1.0)) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((unit_volume(&Factor::sphere(5, 1.0)) - PI.powi(3)).abs() < 1e-12);
        let s3 = ProductState::round_sphere(3, 1.0).unwrap();
        assert!((product_energy(&s3) - 24.0 * PI * PI).abs() < 1e-11);
        for a in [4.0, 8.0, 16.0] {
            let s = ProductState::s2_s1(a).unwrap();
            assert!((product_energy(&s) * a * a - 32.0 * PI * PI).abs() < 1e-9);
        }
    }

    #[test]
    fn rhs_examples() {
        let s4 = ProductState::round_sphere(4, 1.7).unwrap();
        assert_eq!(product_rhs(&s4, RhsMode::PaperLiteral).unwrap()[0], 0.0);
        assert_eq!(product_rhs(&s4, RhsMode::GradientDerived).unwrap()[0], 0.0);
        let s3 = ProductState::round_sphere(3, 1.0).unwrap();
        assert!((product_rhs(&s3, RhsMode::PaperLiteral).unwrap()[0] - 1.0).abs() < 1e-14);
        let p = ProductState::s5_s1(1.0, 1.0).unwrap();
        let g = product_rhs(&p, RhsMode::GradientDerived).unwrap();
        assert!((g[0] + 4.0).abs() < 1e-13 && (g[1] + 20.0).abs() < 1e-13);
        let l = product_rhs(&p, RhsMode::PaperLiteral).unwrap();
        assert!((l[0] + 2.0).abs() < 1e-13 && (l[1] + 10.0).abs() < 1e-13);
        assert!((mode_ratio(&p).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(mode_ratio(&s4), None);
        let bad = ProductState::new(alloc::vec![Factor::sphere(3, 1.0), Factor::flat(2, 1.0)]).unwrap();
        assert_eq!(product_rhs(&bad, RhsMode::PaperLiteral), Err(Error::UnsupportedState));
    }

    #[test]
    fn invalid_factors() {
        assert!(ProductState::new(alloc::vec![Factor::sphere(1, 1.0)]).is_err());
        assert!(ProductState::new(alloc::vec![Factor::sphere(2, -1.0)]).is_err());
        assert!(ProductState::new(alloc::vec![]).is_err());
    }

    #[test]
    fn analytic_examples() {
        assert_eq!(analytic_sphere(4, 1.3, 100.0, RhsMode::PaperLiteral).unwrap(), 1.3);
        let a = analytic_sphere(2, 1.0, 0.7, RhsMode::PaperLiteral).unwrap();
        assert!((a - (1.0f64 + 1.4).sqrt()).abs() < 1e-15);
        let t = sphere_lifespan(5, 2.0, RhsMode::PaperLiteral).unwrap();
        assert!((t - 10.0 * 4.0 / sphere_constant(5)).abs() < 1e-14);
        assert!(matches!(
            analytic_sphere(5, 2.0, 1.5, RhsMode::PaperLiteral),
            Err(Error::PastSingularTime { .. })
        ));
    }

    #[test]
    fn dopri_matches_closed_form() {
        let s = ProductState::round_sphere(5, 1.0).unwrap();
        let life = sphere_lifespan(5, 1.0, RhsMode::GradientDerived).unwrap();
        let tr = integrate(&s, RhsMode::GradientDerived, 0.9 * life, &Tolerances::default()).unwrap();
        assert_eq!(tr.termination, OdeTermination::ReachedEnd);
        for smp in &tr.samples {
            let exact = analytic_sphere(5, 1.0, smp.t, RhsMode::GradientDerived).unwrap();
            assert!((smp.scales[0] / exact - 1.0).abs() < 1e-8);
        }
    }
}
