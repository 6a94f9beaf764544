//! Comparison-geometry monitors and per-sample diagnostic rows.
//!
//! Isoperimetric and Cheeger quantities are searched over lateral domains
//! only (slabs `{s₀ < s < s₁}` and, on a sphere, caps), so every value
//! reported here is an upper bound for the true infimum over all domains.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::flow::{monitor_residuals, FlowTrajectory};
use crate::geometry::{
    arclength, curvature_profile, curvature_profile_with, energy_with, noncollapse_quantities, volume, CurvatureNorm,
    Quadrature, Topology, WarpedMetric, DEFAULT_PSI_FLOOR,
};
use crate::spectral::{dirichlet_energy, lambda1, ScalarProfile};

/// Cumulative trapezoid volume at each node; the last entry of the second
/// value is the total (on a circle it includes the wrap-around segment).
fn cumulative_volume(m: &WarpedMetric) -> (Vec<f64>, f64) {
    let n = m.len();
    let fa = m.fiber().fiber_area;
    let h = m.spacing();
    let dens: Vec<f64> = (0..n).map(|i| fa * m.phi()[i] * m.psi()[i] * m.psi()[i]).collect();
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    cum.push(0.0);
    for i in 0..n - 1 {
        acc += 0.5 * h * (dens[i] + dens[i + 1]);
        cum.push(acc);
    }
    if m.is_periodic() {
        acc += 0.5 * h * (dens[n - 1] + dens[0]);
    }
    (cum, acc)
}

/// Minimum of `Area(∂Ω) / min(Vol Ω, Vol M∖Ω)^exponent` over lateral slabs
/// between grid nodes. Caps are the slabs that start at a pole.
fn lateral_minimum(m: &WarpedMetric, exponent: f64) -> (f64, usize, usize) {
    let n = m.len();
    let fa = m.fiber().fiber_area;
    let (cum, total) = cumulative_volume(m);
    let area: Vec<f64> = m.psi().iter().map(|p| fa * p * p).collect();
    let mut best = (f64::INFINITY, 0, 0);
    for i in 0..n {
        for j in i + 1..n {
            let v = cum[j] - cum[i];
            let small = v.min(total - v);
            if !(small > 0.0) {
                continue;
            }
            let a = area[i] + area[j];
            let ratio = a / small.powf(exponent);
            if ratio < best.0 {
                best = (ratio, i, j);
            }
        }
    }
    best
}

/// Lateral isoperimetric ratio, `Area(∂Ω)/min(Vol Ω, Vol M∖Ω)^{2/3}`
/// minimized over slabs and caps.
pub fn lateral_isoperimetric(m: &WarpedMetric) -> f64 {
    lateral_minimum(m, 2.0 / 3.0).0
}

/// `∫ max(0, 2λ − Rc₋)^p dV` with `Rc₋` the lowest Ricci eigenvalue.
pub fn kpw(m: &WarpedMetric, lam: f64, p: f64) -> f64 {
    let Ok(prof) = curvature_profile(m) else {
        return f64::NAN;
    };
    let fa = m.fiber().fiber_area;
    let h = m.spacing();
    let n = m.len();
    (0..n)
        .map(|i| {
            let w = if !m.is_periodic() && (i == 0 || i == n - 1) { 0.5 * h } else { h };
            let dv = fa * w * m.phi()[i] * m.psi()[i] * m.psi()[i];
            let x = (2.0 * lam - prof.ricci_min[i]).max(0.0);
            if x == 0.0 {
                0.0
            } else {
                x.powf(p) * dv
            }
        })
        .sum()
}

/// Ramp from 1 to 0 across `[c − w/2, c + w/2]` in the coordinate.
fn ramp(x: f64, c: f64, w: f64) -> f64 {
    (0.5 - (x - c) / w).clamp(0.0, 1.0)
}

/// `(h_upper, lambda_upper)`: the lateral Cheeger ratio and the Rayleigh
/// quotient of the best two-lobe plateau test function. Both are upper
/// bounds, for the Cheeger constant and for `λ₁` respectively.
pub fn cheeger_witness(m: &WarpedMetric) -> (f64, f64) {
    let h_upper = lateral_minimum(m, 1.0).0;
    let n = m.len();
    let h = m.spacing();
    let x = m.x();
    let mut widths = Vec::new();
    let mut w = 1usize;
    while w <= n / 4 {
        widths.push(w as f64 * h);
        w *= 2;
    }
    let quotient = |values: Vec<f64>| -> f64 {
        let f = ScalarProfile::new(values, 0);
        let Ok(op_mean) = crate::spectral::integral(&f, m) else {
            return f64::INFINITY;
        };
        let ones = ScalarProfile::new(alloc::vec![1.0; n], 0);
        let Ok(vol) = crate::spectral::integral(&ones, m) else {
            return f64::INFINITY;
        };
        let mean = op_mean / vol;
        let g = ScalarProfile::new(f.values.iter().map(|v| v - mean).collect(), 0);
        dirichlet_energy(&g, m).unwrap_or(f64::INFINITY)
    };
    let mut lambda_upper = f64::INFINITY;
    match m.topology() {
        Topology::SphereSO3 => {
            for c in 1..n - 1 {
                for &w in &widths {
                    let q = quotient(x.iter().map(|&xi| ramp(xi, x[c], w)).collect());
                    lambda_upper = lambda_upper.min(q);
                }
            }
        }
        Topology::CircleProduct => {
            let period = m.coordinate_span();
            let stride = (n / 40).max(1);
            for i in (0..n).step_by(stride) {
                for j in (i + stride..n).step_by(stride) {
                    for &w in &widths {
                        // Plateau on the arc from x_i to x_j, with ramps at both ends.
                        let values = x
                            .iter()
                            .map(|&xi| {
                                let up = |y: f64, c: f64| 1.0 - ramp(y, c, w);
                                let a = x[i];
                                let b = x[j];
                                let y = if xi < a - 0.5 * period { xi + period } else { xi };
                                let lo = up(y, a).max(up(y + period, a)).min(1.0);
                                let hi = ramp(y, b, w).max(ramp(y - period, b, w)).min(1.0);
                                lo.min(hi)
                            })
                            .collect();
                        lambda_upper = lambda_upper.min(quotient(values));
                    }
                }
            }
        }
    }
    (h_upper, lambda_upper)
}

/// One diagnostics row. Columns that could not be computed are NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub vol: f64,
    pub f: f64,
    /// `Vol^{1/3}·F`.
    pub f_tilde: f64,
    pub max_riem: f64,
    pub min_psi: f64,
    pub length: f64,
    pub lambda1: Option<f64>,
    pub inj_proxy: f64,
    /// `inj_proxy²·|Rm|` with `|Rm| = √max_riem`.
    pub collapse_scalar: f64,
    pub iso_lateral: f64,
    pub kpw_value: f64,
    pub vol_residual: f64,
    pub dissipation_residual: f64,
    /// Set when the fiber degenerated and curvature columns are NaN.
    pub degenerate: bool,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 14] = [
        "t",
        "Vol",
        "F",
        "F_tilde",
        "max_riem",
        "min_psi",
        "L",
        "lambda1",
        "inj_proxy",
        "collapse_scalar",
        "iso_lateral",
        "kpw_value",
        "vol_residual",
        "dissipation_residual",
    ];

    /// Values in column order; a missing `lambda1` is NaN.
    pub fn values(&self) -> [f64; 14] {
        [
            self.t,
            self.vol,
            self.f,
            self.f_tilde,
            self.max_riem,
            self.min_psi,
            self.length,
            self.lambda1.unwrap_or(f64::NAN),
            self.inj_proxy,
            self.collapse_scalar,
            self.iso_lateral,
            self.kpw_value,
            self.vol_residual,
            self.dissipation_residual,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecordContext {
    pub curvature_norm: CurvatureNorm,
    pub with_lambda1: bool,
    pub kpw_lambda: f64,
    pub kpw_p: f64,
    pub vol_residual: f64,
    pub dissipation_residual: f64,
}

impl Default for RecordContext {
    fn default() -> Self {
        RecordContext {
            curvature_norm: CurvatureNorm::Paper,
            with_lambda1: false,
            kpw_lambda: 0.0,
            kpw_p: 2.0,
            vol_residual: f64::NAN,
            dissipation_residual: f64::NAN,
        }
    }
}

pub fn record(t: f64, m: &WarpedMetric, ctx: &RecordContext) -> DiagnosticsRecord {
    let vol = volume(m);
    let nc = noncollapse_quantities(m);
    let curv = curvature_profile_with(m, ctx.curvature_norm, DEFAULT_PSI_FLOOR).ok();
    let degenerate = curv.is_none();
    let f = energy_with(m, ctx.curvature_norm, Quadrature::Trapezoid).unwrap_or(f64::NAN);
    let max_riem = curv.as_ref().map_or(f64::NAN, |c| c.max_riem_sq());
    let lambda1 = if ctx.with_lambda1 {
        Some(lambda1(m).map_or(f64::NAN, |r| r.lambda1))
    } else {
        None
    };
    DiagnosticsRecord {
        t,
        vol,
        f,
        f_tilde: vol.cbrt() * f,
        max_riem,
        min_psi: nc.min_psi,
        length: arclength(m).length,
        lambda1,
        inj_proxy: nc.inj_proxy,
        collapse_scalar: nc.inj_proxy * nc.inj_proxy * max_riem.sqrt(),
        iso_lateral: lateral_isoperimetric(m),
        kpw_value: if degenerate { f64::NAN } else { kpw(m, ctx.kpw_lambda, ctx.kpw_p) },
        vol_residual: ctx.vol_residual,
        dissipation_residual: ctx.dissipation_residual,
        degenerate,
    }
}

/// Rows for every stored sample of a flow run; `lambda1` is computed on
/// every `spectral_every`-th sample (never when 0).
pub fn record_trajectory(traj: &FlowTrajectory, spectral_every: usize) -> Vec<DiagnosticsRecord> {
    let res = monitor_residuals(traj);
    traj.samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ctx = RecordContext {
                curvature_norm: traj.config.curvature_norm,
                with_lambda1: spectral_every > 0 && i % spectral_every == 0,
                vol_residual: res.vol_residual[i],
                dissipation_residual: res.dissipation_residual[i],
                ..RecordContext::default()
            };
            record(s.t, &s.metric, &ctx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::presets::*;
    use crate::geometry::FiberSpec;
    use core::f64::consts::PI;

    #[test]
    fn hemisphere_isoperimetric_ratio() {
        let m = round_s3(201, 1.0).unwrap();
        let want = 4.0 * PI / (PI * PI).powf(2.0 / 3.0);
        assert!((lateral_isoperimetric(&m) / want - 1.0).abs() < 1e-2);
    }

    #[test]
    fn thin_tube_ratio() {
        let m = tube(64, 10.0, 1.0, FiberSpec::round_sphere(), |_| 0.1).unwrap();
        let area = 2.0 * 0.01 * 4.0 * PI;
        let half = 0.5 * 4.0 * PI * 0.01 * 10.0;
        let want = area / half.powf(2.0 / 3.0);
        assert!((lateral_isoperimetric(&m) / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kpw_examples() {
        let m = round_s3(64, 1.0).unwrap();
        assert_eq!(kpw(&m, 0.0, 2.0), 0.0);
        let fiber = FiberSpec::hyperbolic(2, 0.5, 0.3).unwrap();
        let t = tube(32, 3.0, 1.0, fiber, |_| 1.0).unwrap();
        assert!((kpw(&t, 0.0, 2.0) / volume(&t) - 1.0).abs() < 1e-12);
        assert_eq!(kpw(&t, -1.0, 2.0), 0.0);
    }

    #[test]
    fn cheeger_on_round_sphere() {
        let m = round_s3(121, 1.0).unwrap();
        let (h, l) = cheeger_witness(&m);
        assert!((h / (4.0 / PI) - 1.0).abs() < 0.05);
        assert!(lambda1(&m).unwrap().lambda1 <= l);
    }

    #[test]
    fn dumbbell_witness_is_small() {
        let m = dumbbell(160, 0.95).unwrap();
        let (_, l) = cheeger_witness(&m);
        assert!(lambda1(&m).unwrap().lambda1 <= l);
        assert!(l < 0.1 * 3.0);
    }

    #[test]
    fn round_sphere_record() {
        let m = round_s3(400, 1.0).unwrap();
        let r = record(0.0, &m, &RecordContext::default());
        assert!((r.vol / (2.0 * PI * PI) - 1.0).abs() < 1e-4);
        assert!((r.f / (12.0 * PI * PI) - 1.0).abs() < 1e-4);
        assert!((r.collapse_scalar / (r.inj_proxy * r.inj_proxy * 6f64.sqrt()) - 1.0).abs() < 1e-4);
        let s = record(0.0, &m.scaled(2.5), &RecordContext::default());
        assert!((s.collapse_scalar / r.collapse_scalar - 1.0).abs() < 1e-10);
        assert!((s.iso_lateral / r.iso_lateral - 1.0).abs() < 1e-10);
    }
}
