use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use l2flow::config::{load_config, ConfigError, Engine, Expect, Scenario, ScenarioConfig};
use l2flow::runner::{run_scenario, ExitStatus};
use l2flow::snapshot::{fmt_f64, read_snapshot};
use l2flow::sweep::{parse_template, read_grid, run_sweep, sweep_csv};
use l2flow::verify;
use l2flow_core::diagnostics::{cheeger_witness, lateral_isoperimetric};
use l2flow_core::geometry::{energy_with, volume, CurvatureNorm, Quadrature};
use l2flow_core::reduced_ode::{RhsMode, Tolerances};
use l2flow_core::spectral;

const EXIT_CODES: &str = "Exit codes:
  0  success
  2  invalid configuration or arguments
  3  singularity detected on a run declared expect = long_time
  4  invariant violation (certified inequality, expectation, or failed verify criterion)
  5  numerical failure

The L2FLOW_OUT environment variable overrides the output directory.";

#[derive(Parser)]
#[command(name = "l2flow", version, about = "Symmetry-reduced L2 curvature flow laboratory", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario config.
    Run { config: PathBuf },
    /// Run a config template once per row of a parameter grid.
    Sweep {
        config: PathBuf,
        /// CSV whose header names dotted config keys.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Integrate a homogeneous product ODE.
    Ode {
        /// round_sphere, product_s5_s1 or product_s2_s1.
        #[arg(long, default_value = "round_sphere")]
        scenario: String,
        /// Sphere dimension for round_sphere.
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        a0: f64,
        #[arg(long, default_value_t = 1.0)]
        b0: f64,
        /// paper_literal or gradient_derived.
        #[arg(long, default_value = "gradient_derived")]
        mode: String,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        /// any, long_time or singular.
        #[arg(long, default_value = "any")]
        expect: String,
        #[arg(long, default_value = "l2flow_out")]
        output: PathBuf,
    },
    /// Spectral and isoperimetric monitors of a metric snapshot.
    Spectral { snapshot: PathBuf },
    /// Run an acceptance suite: geometry, ode, flow, spectral or all.
    Verify { suite: String },
}

fn output_dir(cfg: &ScenarioConfig) -> PathBuf {
    std::env::var_os("L2FLOW_OUT").map_or_else(|| cfg.output.clone(), PathBuf::from)
}

fn config_failure(e: &ConfigError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(ExitStatus::InvalidConfig.code() as u8)
}

fn code(s: ExitStatus) -> ExitCode {
    ExitCode::from(s.code() as u8)
}

fn run(path: &Path) -> ExitCode {
    let cfg = match load_config(path) {
        Ok(c) => c,
        Err(e) => return config_failure(&e),
    };
    execute(&cfg)
}

fn execute(cfg: &ScenarioConfig) -> ExitCode {
    let out = output_dir(cfg);
    match run_scenario(cfg, Some(&out)) {
        Ok(s) => {
            print!("{}", s.to_text());
            code(s.status)
        }
        Err(e) => {
            eprintln!("error: writing {}: {e}", out.display());
            code(ExitStatus::NumericalFailure)
        }
    }
}

fn sweep(config: &Path, grid: &Path) -> ExitCode {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()));
    let parsed = read(config)
        .and_then(|t| {
            // Validate the template itself first so a broken one fails fast.
            l2flow::parse_config(&t).map_err(|e| e.to_string())?;
            parse_template(&t).map_err(|e| e.to_string())
        })
        .and_then(|t| Ok((t, read_grid(&read(grid)?).map_err(|e| e.to_string())?)));
    let (template, g) = match parsed {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return code(ExitStatus::InvalidConfig);
        }
    };
    let base = l2flow::load_config(config).map(|c| output_dir(&c)).unwrap_or_else(|_| "l2flow_out".into());
    let rows = run_sweep(&template, &g, Some(config), Some(&base));
    let csv = match sweep_csv(&g, &rows) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return code(ExitStatus::NumericalFailure);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&base).and_then(|_| std::fs::write(base.join("sweep.csv"), &csv)) {
        eprintln!("error: writing sweep.csv: {e}");
        return code(ExitStatus::NumericalFailure);
    }
    print!("{csv}");
    ExitCode::SUCCESS
}

#[allow(clippy::too_many_arguments)]
fn ode(scenario: &str, n: usize, a0: f64, b0: f64, mode: &str, t_end: f64, expect: &str, output: PathBuf) -> ExitCode {
    let bad = |m: String| {
        eprintln!("error: {m}");
        code(ExitStatus::InvalidConfig)
    };
    let scenario = match scenario {
        "round_sphere" => Scenario::RoundSphere { n, a0 },
        "product_s5_s1" => Scenario::ProductS5S1 { a0, b0 },
        "product_s2_s1" => Scenario::ProductS2S1 { a0 },
        s => return bad(format!("unknown ode scenario `{s}`")),
    };
    let Some(mode) = RhsMode::from_name(mode) else {
        return bad(format!("unknown mode `{mode}`"));
    };
    let expect = match expect {
        "any" => Expect::Any,
        "long_time" => Expect::LongTime,
        "singular" => Expect::Singular,
        e => return bad(format!("unknown expect `{e}`")),
    };
    if !(t_end > 0.0) || !(a0 > 0.0) || !(b0 > 0.0) {
        return bad("t_end, a0 and b0 must be positive".into());
    }
    let cfg = ScenarioConfig {
        scenario,
        engine: Engine::Ode {
            mode,
            t_end,
            tol: Tolerances::default(),
        },
        grid: 64,
        seed: 0,
        perturbation: 0.0,
        output,
        diagnostics_every: 1,
        spectral_every: 0,
        snapshot_every: 0,
        curvature_norm: CurvatureNorm::Full,
        expect,
        plot: Vec::new(),
        eigen_decay: None,
    };
    execute(&cfg)
}

fn spectral_report(path: &Path) -> ExitCode {
    let snap = match std::fs::read_to_string(path)
        .map_err(|e| e.to_string())
        .and_then(|t| read_snapshot(&t).map_err(|e| e.to_string()))
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return code(ExitStatus::InvalidConfig);
        }
    };
    let m = &snap.metric;
    let eig = match spectral::lambda1(m) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return code(ExitStatus::NumericalFailure);
        }
    };
    let (h_upper, lambda_upper) = cheeger_witness(m);
    println!("topology = {}", m.topology().name());
    println!("curvature_norm = {}", snap.curvature_norm.name());
    println!("t = {}", fmt_f64(snap.t));
    println!("grid = {}", m.len());
    println!("volume = {}", fmt_f64(volume(m)));
    let f = energy_with(m, snap.curvature_norm, Quadrature::Trapezoid).unwrap_or(f64::NAN);
    println!("energy = {}", fmt_f64(f));
    println!("lambda1 = {}", fmt_f64(eig.lambda1));
    println!("lambda1_branch = {}", eig.branch);
    for (k, l) in &eig.branches {
        println!("lambda1_mode_{k} = {}", fmt_f64(*l));
    }
    println!("eigen_residual = {}", fmt_f64(eig.residual));
    println!("h_upper = {}", fmt_f64(h_upper));
    println!("lambda_upper = {}", fmt_f64(lambda_upper));
    println!("iso_lateral = {}", fmt_f64(lateral_isoperimetric(m)));
    if eig.lambda1 > lambda_upper * (1.0 + 1e-9) {
        eprintln!("violation: lambda1 exceeds the test-function bound");
        return code(ExitStatus::Violation);
    }
    ExitCode::SUCCESS
}

fn verify_suite(name: &str) -> ExitCode {
    let Some(ids) = verify::suite(name) else {
        eprintln!("error: unknown suite `{name}` (geometry | ode | flow | spectral | all)");
        return code(ExitStatus::InvalidConfig);
    };
    let mut ok = true;
    for id in ids {
        let r = verify::run_criterion(id);
        println!("{}", r.line());
        ok &= r.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        code(ExitStatus::Violation)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => run(&config),
        Command::Sweep { config, grid } => sweep(&config, &grid),
        Command::Ode {
            scenario,
            n,
            a0,
            b0,
            mode,
            t_end,
            expect,
            output,
        } => ode(&scenario, n, a0, b0, &mode, t_end, &expect, output),
        Command::Spectral { snapshot } => spectral_report(&snapshot),
        Command::Verify { suite } => verify_suite(&suite),
    }
}
