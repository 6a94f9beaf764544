//! Acceptance suites. Each criterion runs its own computation against a
//! closed form or an independent oracle and reports what it measured.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use l2flow_core::flow::{self, grad_energy, l2_inner, displaced, FlowConfig, FlowTrajectory, TangentField, Termination};
use l2flow_core::geometry::{
    curvature_profile, energy, presets, volume, CurvatureNorm, FiberSpec, WarpedMetric,
};
use l2flow_core::reduced_ode::{
    analytic_sphere, collapse_scalar, conserved_ratio, integrate, sphere_lifespan, sphere_rate,
    unit_sphere_contractions, OdeTermination, ProductState, RhsMode, Tolerances,
};
use l2flow_core::spectral::{self, BackwardOptions, ScalarProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Engine, Scenario};
use crate::sweep::{parse_template, read_grid, run_sweep};

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub seconds: f64,
    pub budget: f64,
    pub measured: Vec<(String, f64)>,
    /// Failed checks and remarks.
    pub notes: Vec<String>,
}

impl CriterionResult {
    /// `PASS 3 geometry_oracles seconds=0.01 budget=1 key=value ...`
    pub fn line(&self) -> String {
        let mut s = format!(
            "{} {} {} seconds={:.3} budget={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.budget
        );
        for (k, v) in &self.measured {
            let _ = write!(s, " {k}={v:.6e}");
        }
        for n in &self.notes {
            let _ = write!(s, " note=\"{n}\"");
        }
        s
    }
}

/// Collects checks for one criterion.
struct Probe {
    measured: Vec<(String, f64)>,
    notes: Vec<String>,
    ok: bool,
}

impl Probe {
    fn new() -> Self {
        Probe {
            measured: Vec::new(),
            notes: Vec::new(),
            ok: true,
        }
    }

    fn record(&mut self, key: impl Into<String>, v: f64) {
        self.measured.push((key.into(), v));
    }

    fn check(&mut self, cond: bool, what: impl Into<String>) {
        if !cond {
            self.ok = false;
            self.notes.push(what.into());
        }
    }

    /// Turn an error into a failed check.
    fn attempt<T, E: std::fmt::Display>(&mut self, what: &str, r: Result<T, E>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.check(false, format!("{what}: {e}"));
                None
            }
        }
    }
}

const CRITERIA: [(u8, &str, f64); 11] = [
    (1, "sphere_ode_table", 1.0),
    (2, "s5_s1_collapse", 1.0),
    (3, "geometry_oracles", 1.0),
    (4, "gradient_finite_differences", 10.0),
    (5, "flow_identities", 60.0),
    (6, "normalized_flow", 60.0),
    (7, "biharmonic_back_run", 60.0),
    (8, "eigenvalue_oracle", 10.0),
    (9, "eigen_decay_property", 300.0),
    (10, "s2_s1_family", 10.0),
    (11, "so3_smoke", 300.0),
];

/// Criterion ids of a suite, or `None` for an unknown suite.
pub fn suite(name: &str) -> Option<Vec<u8>> {
    Some(match name {
        "geometry" => vec![3, 4],
        "ode" => vec![1, 2, 10],
        "flow" => vec![5, 6, 11],
        "spectral" => vec![7, 8, 9],
        "all" => (1..=11).collect(),
        _ => return None,
    })
}

pub fn run_criterion(id: u8) -> CriterionResult {
    let (_, name, budget) = CRITERIA[(id - 1) as usize];
    let start = Instant::now();
    let mut p = Probe::new();
    match id {
        1 => sphere_ode_table(&mut p),
        2 => s5_s1_collapse(&mut p),
        3 => geometry_oracles(&mut p),
        4 => gradient_fd(&mut p),
        5 => flow_identities(&mut p),
        6 => normalized_flow(&mut p),
        7 => biharmonic(&mut p),
        8 => eigenvalues(&mut p),
        9 => eigen_decay(&mut p),
        10 => s2_s1_family(&mut p),
        11 => so3_smoke(&mut p),
        _ => p.check(false, "unknown criterion"),
    }
    let seconds = start.elapsed().as_secs_f64();
    p.check(seconds <= budget, format!("runtime {seconds:.2} s over budget {budget} s"));
    CriterionResult {
        id,
        name,
        passed: p.ok,
        seconds,
        budget,
        measured: p.measured,
        notes: p.notes,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sphere_ode_table(p: &mut Probe) {
    let expected_sign = [1.0, 1.0, 0.0, -1.0, -1.0, -1.0];
    let mut worst = 0.0f64;
    let mut static_drift = 0.0f64;
    for mode in [RhsMode::PaperLiteral, RhsMode::GradientDerived] {
        for n in 2..=7usize {
            let beta = sphere_rate(n, mode);
            let sign = if beta.abs() < 1e-14 { 0.0 } else { beta.signum() };
            p.check(sign == expected_sign[n - 2], format!("n={n} {}: sign of dA/dt is {sign}", mode.name()));
            let t_end = sphere_lifespan(n, 1.0, mode).map_or(1.0, |t| 0.9 * t);
            let Some(s0) = p.attempt("state", ProductState::round_sphere(n, 1.0)) else { continue };
            let Some(traj) = p.attempt("integrate", integrate(&s0, mode, t_end, &Tolerances::default())) else {
                continue;
            };
            p.check(traj.termination == OdeTermination::ReachedEnd, format!("n={n} stopped early"));
            for s in &traj.samples {
                let Ok(exact) = analytic_sphere(n, 1.0, s.t, mode) else { continue };
                worst = worst.max(rel(s.scales[0], exact));
                if n == 4 {
                    static_drift = static_drift.max((s.scales[0] - 1.0).abs());
                }
            }
        }
    }
    p.record("max_rel_err", worst);
    p.record("n4_drift", static_drift);
    p.check(worst <= 1e-8, "integrate deviates from the exact solution by more than 1e-8");
    p.check(static_drift <= 1e-12, "n = 4 drifts by more than 1e-12");
}

fn s5_s1_collapse(p: &mut Probe) {
    let (a0, b0) = (1.0, 1.0);
    let c5 = unit_sphere_contractions(5).0;
    let t_bound = 10.0 * a0 * a0 / c5;
    p.record("c5", c5);
    p.record("t_bound", t_bound);
    let Some(s0) = p.attempt("state", ProductState::s5_s1(a0, b0)) else { return };
    let tol = Tolerances::default();
    if let Some(traj) = p.attempt("integrate", integrate(&s0, RhsMode::PaperLiteral, 0.99 * t_bound, &tol)) {
        if let Some(d) = p.attempt("ratio", conserved_ratio(&traj, 5.0)) {
            p.record("ratio_drift_p5", d.max_rel_drift);
            p.check(d.max_rel_drift <= 1e-8, "B/A^5 drifts by more than 1e-8");
        }
        if let Some(c) = p.attempt("collapse scalar", collapse_scalar(&traj)) {
            let monotone = c.windows(2).all(|w| w[1].1 <= w[0].1);
            let ratio = c[c.len() - 1].1 / c[0].1;
            p.record("collapse_final_over_initial", ratio);
            p.check(monotone, "collapse scalar is not decreasing");
            p.check(ratio <= 1e-2, "collapse scalar did not fall to 1e-2 of its initial value");
        }
    }
    if let Some(traj) = p.attempt("integrate", integrate(&s0, RhsMode::PaperLiteral, 2.0 * t_bound, &tol)) {
        match traj.termination {
            OdeTermination::SingularityDetected { t_sing } => {
                p.record("t_sing", t_sing);
                p.check(rel(t_sing, t_bound) <= 0.01, "t_sing is not within 1% of 10 A0^2 / c5");
            }
            OdeTermination::ReachedEnd => p.check(false, "no singularity detected"),
        }
    }
}

fn geometry_oracles(p: &mut Probe) {
    let (vol_exact, f_exact) = (2.0 * PI * PI, 12.0 * PI * PI);
    let mut errs = Vec::new();
    for n in [50, 100, 200, 400] {
        let Some(m) = p.attempt("round S3", presets::round_s3(n, 1.0)) else { return };
        let Some(f) = p.attempt("energy", energy(&m)) else { return };
        errs.push((n, rel(volume(&m), vol_exact), rel(f, f_exact)));
    }
    let (_, ev, ef) = errs[errs.len() - 1];
    p.record("vol_rel_err_400", ev);
    p.record("energy_rel_err_400", ef);
    p.check(ev <= 1e-4, "volume error above 1e-4");
    p.check(ef <= 1e-4, "energy error above 1e-4");
    // Below 1e-12 the error is round-off and has no rate.
    let floor = 1e-12;
    for w in errs.windows(2) {
        let (n, v0, f0) = w[0];
        let (_, v1, f1) = w[1];
        for (what, e0, e1) in [("vol", v0, v1), ("energy", f0, f1)] {
            if e1 > floor {
                let r = e0 / e1;
                p.record(format!("{what}_ratio_{n}"), r);
                p.check(r >= 3.5, format!("{what} error ratio {r:.2} below 3.5 at N = {n}"));
            } else {
                p.record(format!("{what}_err_at_roundoff_{}", 2 * n), e1);
            }
        }
    }
}

fn smooth_direction(m: &WarpedMetric, rng: &mut ChaCha8Rng) -> TangentField {
    let coef: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x0 = m.x()[0];
    let span = m.coordinate_span();
    let periodic = m.is_periodic();
    // A constant part plus four low modes.
    let shape = |u: f64, c: &[f64]| -> f64 {
        c[8] + (0..4)
            .map(|k| {
                let kf = (k + 1) as f64;
                if periodic {
                    (c[2 * k] * (2.0 * PI * kf * u).cos() + c[2 * k + 1] * (2.0 * PI * kf * u).sin()) / kf
                } else {
                    (c[2 * k] * (PI * kf * u).cos() + c[2 * k + 1] * (PI * kf * u).sin().powi(2)) / kf
                }
            })
            .sum::<f64>()
    };
    let mut h = TangentField {
        dphi: m.x().iter().zip(m.phi()).map(|(&x, &f)| 0.1 * f * shape((x - x0) / span, &coef[..9])).collect(),
        dpsi: m.x().iter().zip(m.psi()).map(|(&x, &f)| 0.1 * f * shape((x - x0) / span, &coef[9..])).collect(),
    };
    h.make_admissible(m);
    h
}

fn gradient_fd(p: &mut Probe) {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in [64, 128] {
        let presets: Vec<(&str, l2flow_core::Result<WarpedMetric>)> = vec![
            ("round_s3", presets::round_s3(n, 1.0)),
            ("dumbbell", presets::dumbbell(n, 0.4)),
            (
                "tube",
                presets::tube(n, 4.0, 1.0, FiberSpec::round_sphere(), |x| 1.0 + 0.2 * (PI * x / 2.0).cos()),
            ),
            (
                "hyperbolic_tube",
                FiberSpec::hyperbolic(2, 0.5, 0.5).and_then(|f| {
                    presets::tube(n, 3.0, 1.2, f, |x| 1.0 + 0.3 * (2.0 * PI * x / 3.0).sin())
                }),
            ),
            (
                "s2_s1",
                presets::tube(n, 2.0 * PI, 0.25, FiberSpec::round_sphere(), |_| 2.0),
            ),
        ];
        for (name, m) in presets {
            let Some(m) = p.attempt(name, m) else { continue };
            let Some(g) = p.attempt("gradient", grad_energy(&m)) else { continue };
            let mut preset_worst = 0.0f64;
            for _ in 0..20 {
                let h = smooth_direction(&m, &mut rng);
                let Some(an) = p.attempt("pairing", l2_inner(&g, &h, &m)) else { continue };
                // Fourth-order central stencil.
                let tau = 1e-4;
                let mut f = [0.0; 4];
                for (slot, t) in f.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
                    let Some(v) = p.attempt("energy", energy(&displaced(&m, &h, t * tau))) else { continue };
                    *slot = v;
                }
                let fd = (8.0 * (f[2] - f[1]) - (f[3] - f[0])) / (12.0 * tau);
                preset_worst = preset_worst.max(rel(an, fd));
                count += 1;
            }
            p.record(format!("{name}_{n}"), preset_worst);
            worst = worst.max(preset_worst);
        }
    }
    p.record("max_rel_err", worst);
    p.record("directions", count as f64);
    p.check(count == 200, "not every direction was evaluated");
    p.check(worst <= 1e-6, "gradient and finite differences disagree beyond 1e-6");
}

/// The warped tube used by the flow criteria.
fn flow_tube() -> l2flow_core::Result<WarpedMetric> {
    presets::tube(32, 4.0, 1.0, FiberSpec::round_sphere(), |x| 1.0 + 0.2 * (PI * x / 2.0).cos())
}

fn tube_run(p: &mut Probe, normalized: bool, dt_safety: f64) -> Option<FlowTrajectory> {
    let m = p.attempt("tube", flow_tube())?;
    let cfg = FlowConfig {
        normalized,
        dt_safety,
        regrid_every: 0,
        t_end: 0.02,
        ..FlowConfig::default()
    };
    let traj = p.attempt("flow", flow::run(&m, &cfg))?;
    p.check(traj.termination == Termination::ReachedEnd, format!("run stopped: {:?}", traj.termination));
    Some(traj)
}

fn flow_identities(p: &mut Probe) {
    let mut meds = Vec::new();
    for s in [0.1, 0.05] {
        let Some(traj) = tube_run(p, false, s) else { return };
        let r = flow::monitor_residuals(&traj);
        p.record(format!("median_vol_residual_{s}"), r.median_vol_residual);
        p.record(format!("median_dissipation_residual_{s}"), r.median_dissipation_residual);
        p.record(format!("energy_increases_{s}"), r.energy_increases as f64);
        p.check(r.median_vol_residual <= 1e-2, "median volume residual above 1e-2");
        p.check(r.median_dissipation_residual <= 1e-2, "median dissipation residual above 1e-2");
        p.check(r.energy_increases == 0, "F increased under the energy guard");
        meds.push((r.median_vol_residual, r.median_dissipation_residual));
    }
    let rv = meds[0].0 / meds[1].0;
    let rd = meds[0].1 / meds[1].1;
    p.record("vol_residual_halving_ratio", rv);
    p.record("dissipation_residual_halving_ratio", rd);
    p.check((1.0..=3.0).contains(&rv), "volume residual does not halve with dt_safety");
    p.check((1.0..=3.0).contains(&rd), "dissipation residual does not halve with dt_safety");
}

fn normalized_flow(p: &mut Probe) {
    let Some(traj) = tube_run(p, true, 0.1) else { return };
    let r = flow::monitor_residuals(&traj);
    p.record("vol_drift_per_time", r.vol_drift_per_time);
    p.record("f_tilde_violations", r.f_tilde_violations as f64);
    p.check(r.vol_drift_per_time <= 1e-6, "volume drift above 1e-6 per unit time");
    p.check(r.f_tilde_violations == 0, "F_tilde increased beyond 1e-10");
}

fn biharmonic(p: &mut Probe) {
    let Some(m) = p.attempt("dumbbell", presets::dumbbell(48, 0.4)) else { return };
    // Stored intervals span several flow steps so that dτ, not the flow
    // step, limits the back-run.
    let cfg = FlowConfig {
        t_end: 2e-3,
        regrid_every: 200,
        store_every: 200,
        ..FlowConfig::default()
    };
    let Some(traj) = p.attempt("flow", flow::run(&m, &cfg)) else { return };
    p.record("regrids", traj.regrids as f64);
    let m_t = &traj.last().metric;
    let f_t = ScalarProfile::from_arclength(m_t, 0, |s| 1.0 + 0.5 * s.cos());
    let mut errs = Vec::new();
    for safety in [0.5, 0.25] {
        let opts = BackwardOptions {
            dtau_safety: safety,
            ..BackwardOptions::default()
        };
        let Some(r) = p.attempt("back-run", spectral::run_backward_with(&traj, &f_t, 1.0, &opts)) else { return };
        let (l2, h1) = (r.max_l2_identity_error(), r.max_h1_identity_error());
        p.record(format!("mass_drift_{safety}"), r.mass_drift);
        p.record(format!("l2_identity_err_{safety}"), l2);
        p.record(format!("h1_identity_err_{safety}"), h1);
        p.record(format!("h1_opposite_sign_err_{safety}"), r.min_h1_flipped_error());
        p.check(r.mass_drift <= 1e-8, "mass drift above 1e-8");
        p.check(l2 <= 1e-3 && h1 <= 1e-3, "evolution identity error above 1e-3");
        errs.push((l2, h1));
    }
    let rl = errs[1].0 / errs[0].0;
    let rh = errs[1].1 / errs[0].1;
    p.record("l2_err_ratio_half_dtau", rl);
    p.record("h1_err_ratio_half_dtau", rh);
    p.check((0.3..=0.7).contains(&rl), "L2 identity error is not first order in dtau");
    p.check((0.3..=0.7).contains(&rh), "H1 identity error is not first order in dtau");
}

fn eigenvalues(p: &mut Probe) {
    let mut errs = Vec::new();
    for n in [100, 200, 400, 800] {
        let Some(m) = p.attempt("round S3", presets::round_s3(n, 1.0)) else { return };
        let Some(r) = p.attempt("lambda1", spectral::lambda1(&m)) else { return };
        errs.push((n, (r.lambda1 - 3.0).abs()));
        if n == 800 {
            p.record("lambda1_800", r.lambda1);
            p.check((r.lambda1 - 3.0).abs() <= 1e-3, "lambda1 of the unit 3-sphere is off by more than 1e-3");
            let scaled = m.scaled(2.0);
            if let Some(rs) = p.attempt("lambda1", spectral::lambda1(&scaled)) {
                let e = rel(rs.lambda1, r.lambda1 / 4.0);
                p.record("scaling_rel_err", e);
                p.check(e <= 1e-10, "lambda1 does not scale as lambda^-2");
            }
        }
    }
    for w in errs.windows(2) {
        let r = w[0].1 / w[1].1;
        p.record(format!("err_ratio_{}", w[0].0), r);
        p.check(r >= 3.5, format!("lambda1 error ratio {r:.2} below 3.5 at N = {}", w[0].0));
    }
}

fn back_run_from_lambda1(p: &mut Probe, traj: &FlowTrajectory) -> Option<spectral::EigenDecayReport> {
    let eig = p.attempt("lambda1", spectral::lambda1(&traj.last().metric))?;
    p.attempt("back-run", spectral::run_backward(traj, &eig.eigenprofile, 1.0))
}

fn eigen_decay(p: &mut Probe) {
    let mut slacks = Vec::new();
    for eps in [0.2, 0.1, 0.05, 0.025] {
        let m = presets::tube(32, 4.0, 1.0, FiberSpec::round_sphere(), |x| 1.0 + eps * (PI * x / 2.0).cos());
        let Some(m) = p.attempt("tube", m) else { return };
        let cfg = FlowConfig {
            t_end: 0.01,
            regrid_every: 0,
            ..FlowConfig::default()
        };
        let Some(traj) = p.attempt("flow", flow::run(&m, &cfg)) else { return };
        let Some(r) = back_run_from_lambda1(p, &traj) else { return };
        p.record(format!("slack_eps_{eps}"), r.slack);
        p.record(format!("bound_minus_true_eps_{eps}"), r.lambda_0_bound - r.lambda_0_true);
        p.check(r.lambda_0_bound >= r.lambda_0_true - 1e-8, format!("bound below lambda1(g0) at eps = {eps}"));
        p.check(r.slack.is_finite(), format!("slack is not finite at eps = {eps}"));
        slacks.push(r.slack);
    }
    for w in slacks.windows(2) {
        p.check(w[1] <= w[0] + 1e-9 * w[0].abs(), "slack increases as eps decreases");
    }
    // A necked sphere as well, with regrids.
    let Some(m) = p.attempt("dumbbell", presets::dumbbell(48, 0.3)) else { return };
    let cfg = FlowConfig {
        t_end: 2e-3,
        regrid_every: 20,
        ..FlowConfig::default()
    };
    let Some(traj) = p.attempt("flow", flow::run(&m, &cfg)) else { return };
    if let Some(r) = back_run_from_lambda1(p, &traj) {
        p.record("dumbbell_bound_minus_true", r.lambda_0_bound - r.lambda_0_true);
        p.check(r.lambda_0_bound >= r.lambda_0_true - 1e-8, "bound below lambda1(g0) on the dumbbell");
    }
}

const S2_S1_TEMPLATE: &str = r#"
expect = "long_time"

[scenario]
kind = "product_s2_s1"
a0 = 4.0

[engine]
kind = "ode"
mode = "gradient_derived"
t_end = 0.1
"#;

fn s2_s1_family(p: &mut Probe) {
    let (Some(t), Some(g)) = (
        p.attempt("template", parse_template(S2_S1_TEMPLATE)),
        p.attempt("grid", read_grid("scenario.a0\n4\n8\n16\n")),
    ) else {
        return;
    };
    let rows = run_sweep(&t, &g, None, None);
    let mut fa2 = Vec::new();
    let mut diam = Vec::new();
    for (row, a) in rows.iter().zip([4.0, 8.0, 16.0]) {
        let Some(s) = &row.summary else {
            p.check(false, format!("A = {a}: {}", row.detail));
            return;
        };
        p.check(row.status.code() == 0, format!("A = {a}: status {}", row.status.name()));
        let v = s.last.energy * s.last.scale_a * s.last.scale_a;
        p.record(format!("energy_a2_{a}"), v);
        fa2.push(v);
        diam.push((s.last.scale_a, s.last.diam_lower));
    }
    let (lo, hi) = fa2.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    p.record("energy_a2_spread", hi / lo - 1.0);
    p.check(hi / lo - 1.0 <= 0.05, "F A^2 varies by more than 5%");
    for &(a, d) in &diam[1..] {
        let growth = (d / diam[0].1) / (a / diam[0].0).sqrt();
        p.record(format!("diam_growth_vs_sqrt_{a:.3}"), growth);
        p.check((growth - 1.0).abs() <= 0.1, "diameter lower bound does not grow like A^(1/2)");
    }

    // The reduced flow and the warped-product flow of the same metric.
    let Some(s0) = p.attempt("state", ProductState::s2_s1(4.0)) else { return };
    let Some(traj) = p.attempt("integrate", integrate(&s0, RhsMode::GradientDerived, 10.0, &Tolerances::default())) else {
        return;
    };
    let increasing = traj.samples.windows(2).all(|w| w[1].scales[0] > w[0].scales[0]);
    p.record("ode_a_final_t10", traj.last().scales[0]);
    p.check(increasing, "A is not increasing along the reduced flow");

    let pde = Scenario::ProductS2S1 { a0: 4.0 };
    let t_end = 0.1;
    let cfg = crate::config::ScenarioConfig {
        scenario: pde,
        engine: Engine::Pde(FlowConfig {
            t_end,
            regrid_every: 0,
            store_every: 1000,
            curvature_norm: CurvatureNorm::Full,
            ..FlowConfig::default()
        }),
        grid: 32,
        seed: 0,
        perturbation: 0.0,
        output: "".into(),
        diagnostics_every: 1,
        spectral_every: 0,
        snapshot_every: 0,
        curvature_norm: CurvatureNorm::Full,
        expect: crate::config::Expect::LongTime,
        plot: Vec::new(),
        eigen_decay: None,
    };
    let Some(m0) = p.attempt("tube", crate::scenario::initial_metric(&cfg)) else { return };
    let Engine::Pde(fc) = cfg.engine else { return };
    let Some(run) = p.attempt("flow", flow::run(&m0, &fc)) else { return };
    let psi: Vec<f64> = run.samples.iter().map(|s| s.metric.psi()[0]).collect();
    let a_pde = psi[psi.len() - 1].powi(2);
    let a_ode = integrate(&s0, RhsMode::GradientDerived, run.last().t, &Tolerances::default())
        .map(|t| t.last().scales[0])
        .unwrap_or(f64::NAN);
    p.record("pde_a_final", a_pde);
    p.record("pde_vs_ode_rel_err", rel(a_pde, a_ode));
    p.check(psi.windows(2).all(|w| w[1] > w[0]), "psi is not increasing along the warped flow");
    p.check(rel(a_pde, a_ode) <= 1e-3, "warped flow and reduced flow disagree");
}

fn so3_smoke(p: &mut Probe) {
    let Some(m) = p.attempt("dumbbell", presets::dumbbell(48, 0.5)) else { return };
    let Some(c) = p.attempt("curvature", curvature_profile(&m)) else { return };
    let t_end = 5.0 / c.max_riem_sq();
    p.record("t_end", t_end);
    let cfg = FlowConfig {
        t_end,
        store_every: 100,
        ..FlowConfig::default()
    };
    let Some(traj) = p.attempt("flow", flow::run(&m, &cfg)) else { return };
    p.check(traj.termination == Termination::ReachedEnd, format!("run stopped: {:?}", traj.termination));
    let strictly = traj.samples.windows(2).all(|w| w[1].energy < w[0].energy);
    p.record("energy_initial", traj.samples[0].energy);
    p.record("energy_final", traj.last().energy);
    p.check(strictly, "F is not strictly decreasing");
    let k = traj.samples.len();
    let picks: Vec<usize> = (0..=10).map(|j| j * (k - 1) / 10).collect();
    let mut lams = Vec::new();
    for i in picks {
        let Some(r) = p.attempt("lambda1", spectral::lambda1(&traj.samples[i].metric)) else { return };
        lams.push(r.lambda1);
    }
    let min = lams.iter().cloned().fold(f64::INFINITY, f64::min);
    p.record("lambda1_initial", lams[0]);
    p.record("lambda1_final", lams[lams.len() - 1]);
    p.record("lambda1_min_over_initial", min / lams[0]);
    p.check(min >= 0.5 * lams[0], "lambda1 fell below half its initial value");
}
