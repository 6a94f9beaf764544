//! Executes a scenario and writes its output files.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use l2flow_core::diagnostics::{cheeger_witness, record, DiagnosticsRecord, RecordContext};
use l2flow_core::flow::{self, FlowConfig, FlowTrajectory, Termination};
use l2flow_core::geometry::{diameter_bounds, CurvatureNorm, WarpedMetric};
use l2flow_core::reduced_ode::{
    self, collapse_scalar_at, conserved_ratio, integrate, product_diameter, product_energy, product_volume,
    ratio_series, Curvature, OdeTermination, RhsMode, Tolerances,
};
use l2flow_core::spectral::{self, BackwardOptions};

use crate::config::{Engine, Expect, Scenario, ScenarioConfig};
use crate::plot::line_chart;
use crate::scenario::{initial_metric, initial_product};
use crate::snapshot::{fmt_f64, write_snapshot};

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    InvalidConfig,
    /// A singularity on a run declared `expect = long_time`.
    Singularity,
    /// A certified inequality or a declared expectation failed.
    Violation,
    NumericalFailure,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::InvalidConfig => 2,
            ExitStatus::Singularity => 3,
            ExitStatus::Violation => 4,
            ExitStatus::NumericalFailure => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExitStatus::Success => "ok",
            ExitStatus::InvalidConfig => "invalid_config",
            ExitStatus::Singularity => "singularity",
            ExitStatus::Violation => "violation",
            ExitStatus::NumericalFailure => "numerical_failure",
        }
    }
}

/// Final state of a run in engine-independent terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinalState {
    pub t: f64,
    pub volume: f64,
    pub energy: f64,
    pub max_riem: f64,
    /// Scale of the first sphere factor (ODE runs), NaN otherwise.
    pub scale_a: f64,
    pub diam_lower: f64,
    pub diam_upper: f64,
}

impl FinalState {
    fn missing() -> Self {
        FinalState {
            t: f64::NAN,
            volume: f64::NAN,
            energy: f64::NAN,
            max_riem: f64::NAN,
            scale_a: f64::NAN,
            diam_lower: f64::NAN,
            diam_upper: f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub status: ExitStatus,
    pub termination: String,
    pub t_sing: Option<f64>,
    pub last: FinalState,
    pub violations: Vec<String>,
    /// Everything written to `summary.txt`, in order.
    pub entries: Vec<(String, String)>,
}

impl RunSummary {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

struct Builder {
    entries: Vec<(String, String)>,
}

impl Builder {
    fn put(&mut self, k: &str, v: impl ToString) {
        self.entries.push((k.to_string(), v.to_string()));
    }

    fn num(&mut self, k: &str, v: f64) {
        self.put(k, fmt_f64(v));
    }
}

/// Run `cfg`; files go to `out` when given. IO errors abort, numerical
/// errors are reported through the summary.
pub fn run_scenario(cfg: &ScenarioConfig, out: Option<&Path>) -> io::Result<RunSummary> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut b = Builder { entries: Vec::new() };
    b.put("scenario", cfg.scenario.name());
    b.put("expect", cfg.expect.name());
    b.put("seed", cfg.seed);
    let summary = match &cfg.engine {
        Engine::Ode { mode, t_end, tol } => run_ode(cfg, *mode, *t_end, tol, out, b)?,
        Engine::Pde(fc) => run_pde(cfg, fc, out, b)?,
    };
    if let Some(dir) = out {
        fs::write(dir.join("summary.txt"), summary.to_text())?;
    }
    Ok(summary)
}

fn finish(
    mut b: Builder,
    singular: Option<f64>,
    termination: String,
    last: FinalState,
    mut violations: Vec<String>,
    expect: Expect,
    failure: Option<String>,
) -> RunSummary {
    if expect == Expect::Singular && singular.is_none() && failure.is_none() {
        violations.push("expected a singularity, none was detected".into());
    }
    let status = if failure.is_some() {
        ExitStatus::NumericalFailure
    } else if expect == Expect::LongTime && singular.is_some() {
        ExitStatus::Singularity
    } else if !violations.is_empty() {
        ExitStatus::Violation
    } else {
        ExitStatus::Success
    };
    if let Some(f) = &failure {
        b.put("failure", f);
    }
    b.put("violations", violations.len());
    for (i, v) in violations.iter().enumerate() {
        b.put(&format!("violation.{i}"), v);
    }
    b.put("status", status.name());
    b.put("exit_code", status.code());
    RunSummary {
        status,
        termination,
        t_sing: singular,
        last,
        violations,
        entries: b.entries,
    }
}

fn write_csv(path: &Path, comments: &[String], header: &[String], rows: &[Vec<String>]) -> io::Result<()> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    for c in comments {
        writeln!(file, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(io::Error::other)?;
    for r in rows {
        w.write_record(r).map_err(io::Error::other)?;
    }
    w.flush()
}

fn write_plots(cfg: &ScenarioConfig, dir: &Path, header: &[String], rows: &[Vec<String>], b: &mut Builder) -> io::Result<()> {
    let col = |name: &str| header.iter().position(|h| h == name);
    let parse = |j: usize| -> Vec<f64> { rows.iter().map(|r| r[j].parse().unwrap_or(f64::NAN)).collect() };
    let Some(tc) = col("t") else { return Ok(()) };
    let ts = parse(tc);
    for name in &cfg.plot {
        match col(name) {
            Some(j) => fs::write(dir.join(format!("plot_{name}.svg")), line_chart(name, "t", &ts, &parse(j)))?,
            None => b.put("plot_skipped", name),
        }
    }
    Ok(())
}

fn run_ode(
    cfg: &ScenarioConfig,
    mode: RhsMode,
    t_end: f64,
    tol: &Tolerances,
    out: Option<&Path>,
    mut b: Builder,
) -> io::Result<RunSummary> {
    b.put("engine", "ode");
    b.put("rhs_mode", mode.name());
    // The reductions use the full tensor norm Σ R_ijkl².
    b.put("curvature_norm", CurvatureNorm::Full.name());
    let result = initial_product(&cfg.scenario)
        .map_err(|e| e.to_string())
        .and_then(|s0| integrate(&s0, mode, t_end, tol).map_err(|e| e.to_string()));
    let traj = match result {
        Ok(t) => t,
        Err(e) => {
            return Ok(finish(b, None, "failed".into(), FinalState::missing(), Vec::new(), cfg.expect, Some(e)));
        }
    };
    let sphere_dim = traj
        .template
        .factors
        .iter()
        .find(|f| f.curv == Curvature::Sphere)
        .map_or(0, |f| f.dim);
    let sphere_idx = traj.template.factors.iter().position(|f| f.curv == Curvature::Sphere);
    let ratios = ratio_series(&traj, sphere_dim as f64).ok();

    if let Some(dir) = out {
        let k = traj.template.factors.len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=k).map(|j| format!("scale_{j}")));
        header.extend(["riem_sq", "ratio_p", "collapse_scalar", "mode"].map(String::from));
        let rows: Vec<Vec<String>> = thin(traj.samples.len(), cfg.diagnostics_every)
            .map(|i| {
                let s = &traj.samples[i];
                let mut r = vec![fmt_f64(s.t)];
                r.extend(s.scales.iter().map(|&v| fmt_f64(v)));
                r.push(fmt_f64(s.riem_sq));
                r.push(fmt_f64(ratios.as_ref().map_or(f64::NAN, |v| v[i])));
                r.push(fmt_f64(collapse_scalar_at(&traj.state(i)).unwrap_or(f64::NAN)));
                r.push(mode.name().into());
                r
            })
            .collect();
        let comments = vec![
            "curvature_norm=full".to_string(),
            format!("rhs_mode={}", mode.name()),
            format!("ratio_p={sphere_dim}"),
        ];
        write_csv(&dir.join("trajectory.csv"), &comments, &header, &rows)?;
        write_plots(cfg, dir, &header, &rows, &mut b)?;
    }

    let (termination, t_sing) = match traj.termination {
        OdeTermination::ReachedEnd => ("reached_end".to_string(), None),
        OdeTermination::SingularityDetected { t_sing } => ("singularity_detected".to_string(), Some(t_sing)),
    };
    let last_state = traj.state(traj.samples.len() - 1);
    let last = traj.last();
    let diam = product_diameter(&last_state);
    let fin = FinalState {
        t: last.t,
        volume: product_volume(&last_state),
        energy: product_energy(&last_state),
        max_riem: last.riem_sq,
        scale_a: sphere_idx.map_or(f64::NAN, |j| last.scales[j]),
        diam_lower: diam,
        diam_upper: diam,
    };
    b.put("termination", &termination);
    b.num("t_final", fin.t);
    b.num("t_sing", t_sing.unwrap_or(f64::NAN));
    b.num("t_sing_expected", expected_lifespan(&cfg.scenario, mode).unwrap_or(f64::NAN));
    b.put("steps_accepted", traj.accepted);
    b.put("steps_rejected", traj.rejected);
    b.put("final_scales", last.scales.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" "));
    b.num("riem_sq", fin.max_riem);
    b.num("energy", fin.energy);
    b.num("volume", fin.volume);
    b.num("diameter", diam);
    b.num("energy_a2", fin.energy * fin.scale_a * fin.scale_a);
    if let Ok(d) = conserved_ratio(&traj, sphere_dim as f64) {
        b.put("ratio_p", sphere_dim);
        b.num("ratio_max_rel_drift", d.max_rel_drift);
    }
    if let Ok(c) = reduced_ode::collapse_scalar(&traj) {
        b.num("collapse_scalar_initial", c[0].1);
        b.num("collapse_scalar_final", c[c.len() - 1].1);
    }
    Ok(finish(b, t_sing, termination, fin, Vec::new(), cfg.expect, None))
}

/// Closed-form singular time where one is known: round spheres, and
/// `S⁵×S¹` whose sphere factor obeys the round-`S⁵` law.
pub fn expected_lifespan(s: &Scenario, mode: RhsMode) -> Option<f64> {
    match *s {
        Scenario::RoundSphere { n, a0 } => reduced_ode::sphere_lifespan(n, a0, mode),
        Scenario::ProductS5S1 { a0, .. } => reduced_ode::sphere_lifespan(5, a0, mode),
        _ => None,
    }
}

/// Indices `0, k, 2k, …` plus the last one.
fn thin(len: usize, every: usize) -> impl Iterator<Item = usize> {
    (0..len).filter(move |&i| i % every == 0 || i + 1 == len)
}

fn run_pde(cfg: &ScenarioConfig, fc: &FlowConfig, out: Option<&Path>, mut b: Builder) -> io::Result<RunSummary> {
    b.put("engine", "pde");
    b.put("rhs_mode", if fc.normalized { "normalized" } else { "unnormalized" });
    b.put("curvature_norm", fc.curvature_norm.name());
    let m0 = match initial_metric(cfg) {
        Ok(m) => m,
        Err(e) => {
            return Ok(finish(b, None, "failed".into(), FinalState::missing(), Vec::new(), cfg.expect, Some(e.to_string())));
        }
    };
    b.put("grid", m0.len());
    b.put("topology", m0.topology().name());
    let snap_dir = out.map(|d| d.join("snapshots"));
    if let Some(sd) = &snap_dir {
        fs::create_dir_all(sd)?;
        fs::write(sd.join("initial.snap"), write_snapshot(&m0, 0.0, fc.curvature_norm))?;
    }
    let traj = match flow::run(&m0, fc) {
        Ok(t) => t,
        Err(e) => {
            return Ok(finish(b, None, "failed".into(), FinalState::missing(), Vec::new(), cfg.expect, Some(e.to_string())));
        }
    };
    let res = flow::monitor_residuals(&traj);
    let idx: Vec<usize> = thin(traj.samples.len(), cfg.diagnostics_every).collect();
    let records: Vec<DiagnosticsRecord> = idx
        .iter()
        .enumerate()
        .map(|(row, &i)| {
            let ctx = RecordContext {
                curvature_norm: fc.curvature_norm,
                with_lambda1: cfg.spectral_every > 0 && row % cfg.spectral_every == 0,
                vol_residual: res.vol_residual[i],
                dissipation_residual: res.dissipation_residual[i],
                ..RecordContext::default()
            };
            record(traj.samples[i].t, &traj.samples[i].metric, &ctx)
        })
        .collect();

    if let Some(dir) = out {
        let mut header: Vec<String> = DiagnosticsRecord::COLUMNS.iter().map(|s| s.to_string()).collect();
        header.push("dt".into());
        let rows: Vec<Vec<String>> = records
            .iter()
            .zip(&idx)
            .map(|(r, &i)| {
                let mut v: Vec<String> = r.values().iter().map(|&x| fmt_f64(x)).collect();
                v.push(fmt_f64(traj.samples[i].dt));
                v
            })
            .collect();
        let comments = vec![
            format!("curvature_norm={}", fc.curvature_norm.name()),
            format!("rhs_mode={}", if fc.normalized { "normalized" } else { "unnormalized" }),
            format!("topology={}", m0.topology().name()),
        ];
        write_csv(&dir.join("trajectory.csv"), &comments, &header, &rows)?;
        write_plots(cfg, dir, &header, &rows, &mut b)?;
        if let Some(sd) = &snap_dir {
            if cfg.snapshot_every > 0 {
                for (row, &i) in idx.iter().enumerate().filter(|(row, _)| row % cfg.snapshot_every == 0) {
                    let s = &traj.samples[i];
                    fs::write(sd.join(format!("row_{row:06}.snap")), write_snapshot(&s.metric, s.t, fc.curvature_norm))?;
                }
            }
            let s = traj.last();
            fs::write(sd.join("final.snap"), write_snapshot(&s.metric, s.t, fc.curvature_norm))?;
        }
    }

    let (termination, t_sing, failure) = match traj.termination {
        Termination::ReachedEnd => ("reached_end".to_string(), None, None),
        Termination::SingularityDetected { t, max_riem } => {
            b.num("singular_max_riem", max_riem);
            ("singularity_detected".to_string(), Some(t), None)
        }
        Termination::StepUnderflow { t, dt } => (
            "step_underflow".to_string(),
            None,
            Some(format!("flow step underflow at t = {t} (dt = {dt:e})")),
        ),
        Termination::StepLimit { t } => ("step_limit".to_string(), None, Some(format!("step limit reached at t = {t}"))),
    };

    let last = traj.last();
    let mut violations = Vec::new();
    if !fc.normalized && res.energy_increases > 0 {
        violations.push(format!("F increased on {} stored intervals", res.energy_increases));
    }
    if fc.normalized && res.f_tilde_violations > 0 {
        violations.push(format!("F_tilde increased on {} stored intervals", res.f_tilde_violations));
    }
    let fin_rec = record(
        last.t,
        &last.metric,
        &RecordContext {
            curvature_norm: fc.curvature_norm,
            with_lambda1: true,
            ..RecordContext::default()
        },
    );
    if fin_rec.degenerate {
        violations.push("final metric has a degenerate fiber".into());
    }
    let (h_upper, lambda_upper) = cheeger_witness(&last.metric);
    let lam = fin_rec.lambda1.unwrap_or(f64::NAN);
    if lam.is_finite() && lam > lambda_upper * (1.0 + 1e-9) {
        violations.push(format!("lambda1 = {lam} exceeds the test-function bound {lambda_upper}"));
    }
    let (diam_lower, diam_upper) = diameter_bounds(&last.metric);
    let fin = FinalState {
        t: last.t,
        volume: last.volume,
        energy: last.energy,
        max_riem: last.max_riem,
        scale_a: f64::NAN,
        diam_lower,
        diam_upper,
    };
    b.put("termination", &termination);
    b.num("t_final", last.t);
    b.num("t_sing", t_sing.unwrap_or(f64::NAN));
    b.put("steps", traj.steps);
    b.put("regrids", traj.regrids);
    b.put("stored_samples", traj.samples.len());
    b.num("max_pole_slope_deviation", traj.max_pole_slope_deviation);
    for (name, v) in DiagnosticsRecord::COLUMNS.iter().zip(fin_rec.values()) {
        if !name.ends_with("residual") {
            b.num(&format!("final.{name}"), v);
        }
    }
    b.num("final.diam_lower", diam_lower);
    b.num("final.diam_upper", diam_upper);
    b.num("final.h_upper", h_upper);
    b.num("final.lambda_upper", lambda_upper);
    b.num("median_vol_residual", res.median_vol_residual);
    b.num("median_dissipation_residual", res.median_dissipation_residual);
    b.put("energy_increases", res.energy_increases);
    b.put("f_tilde_violations", res.f_tilde_violations);
    b.num("vol_drift_per_time", res.vol_drift_per_time);

    let mut failure = failure;
    if let (Some(ed), true) = (cfg.eigen_decay, failure.is_none()) {
        match eigen_decay(&traj, &last.metric, ed.sobolev_a, ed.dtau_safety) {
            Ok(r) => {
                if r.lambda_0_bound < r.lambda_0_true - 1e-8 * r.lambda_0_true.abs().max(1.0) {
                    violations.push(format!(
                        "eigen-decay bound {} is below lambda1(g0) = {}",
                        r.lambda_0_bound, r.lambda_0_true
                    ));
                }
                b.num("eigen_decay.lambda_t", r.lambda_t);
                b.num("eigen_decay.lambda_0_bound", r.lambda_0_bound);
                b.num("eigen_decay.lambda_0_true", r.lambda_0_true);
                b.num("eigen_decay.mass_drift", r.mass_drift);
                b.num("eigen_decay.sobolev_a", r.sobolev_a);
                b.num("eigen_decay.epsilon", r.epsilon);
                b.num("eigen_decay.slack", r.slack);
                b.put("eigen_decay.substeps", r.substeps);
                b.num("eigen_decay.max_l2_identity_error", r.max_l2_identity_error());
                b.num("eigen_decay.max_h1_identity_error", r.max_h1_identity_error());
            }
            Err(e) => failure = Some(format!("eigen-decay back-run: {e}")),
        }
    }
    Ok(finish(b, t_sing, termination, fin, violations, cfg.expect, failure))
}

fn eigen_decay(
    traj: &FlowTrajectory,
    m_t: &WarpedMetric,
    sobolev_a: f64,
    dtau_safety: f64,
) -> l2flow_core::Result<spectral::EigenDecayReport> {
    let eig = spectral::lambda1(m_t)?;
    let opts = BackwardOptions {
        dtau_safety,
        ..BackwardOptions::default()
    };
    spectral::run_backward_with(traj, &eig.eigenprofile, sobolev_a, &opts)
}
