use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn l2flow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l2flow"))
        .args(args)
        .current_dir(dir)
        .env_remove("L2FLOW_OUT")
        .output()
        .expect("binary runs")
}

fn summary_value(out: &Output, key: &str) -> String {
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(String::from))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const DUMBBELL: &str = r#"
grid = 24
seed = 3
perturbation = 0.01
expect = "long_time"
output = "out"
spectral_every = 5
snapshot_every = 10
plot = ["F"]

[scenario]
kind = "so3_dumbbell"
neck_depth = 0.4

[engine]
kind = "pde"
t_end = 1e-4
"#;

#[test]
fn invalid_grid_exits_2() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.toml", &DUMBBELL.replace("grid = 24", "grid = 8"));
    let o = l2flow(&["run", "c.toml"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("grid"), "{err}");
}

#[test]
fn unknown_key_exits_2_with_location() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.toml", &DUMBBELL.replace("neck_depth = 0.4", "neck_depth = 0.4\nneck = 1"));
    let o = l2flow(&["run", "c.toml"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("neck") && err.contains("line 14"), "{err}");
}

#[test]
fn s5_s1_expected_singular_succeeds() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"
expect = "singular"
output = "s5"
[scenario]
kind = "product_s5_s1"
a0 = 1.0
b0 = 1.0
[engine]
kind = "ode"
mode = "paper_literal"
t_end = 1.0
"#;
    write(d.path(), "c.toml", cfg);
    let o = l2flow(&["run", "c.toml"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t: f64 = summary_value(&o, "t_sing").parse().unwrap();
    let expected: f64 = summary_value(&o, "t_sing_expected").parse().unwrap();
    assert!((t - expected).abs() <= 1e-3 * expected, "{t} vs {expected}");
    let csv = fs::read_to_string(d.path().join("s5/trajectory.csv")).unwrap();
    assert!(csv.starts_with("# curvature_norm=full"));
    assert!(d.path().join("s5/summary.txt").exists());
}

#[test]
fn long_time_sphere_that_collapses_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let o = l2flow(
        &["ode", "--scenario", "round_sphere", "--n", "5", "--expect", "long_time", "--t-end", "2", "--output", "o"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(summary_value(&o, "termination"), "singularity_detected");
}

#[test]
fn singular_expectation_without_singularity_exits_4() {
    let d = tempfile::tempdir().unwrap();
    let o = l2flow(
        &["ode", "--scenario", "product_s2_s1", "--a0", "4", "--expect", "singular", "--t-end", "0.1", "--output", "o"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn dumbbell_run_writes_outputs_and_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.toml", DUMBBELL);
    write(d.path(), "c2.toml", &DUMBBELL.replace("output = \"out\"", "output = \"out2\""));
    let o = l2flow(&["run", "c.toml"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary_value(&o, "termination"), "reached_end");
    let out = d.path().join("out");
    for f in ["trajectory.csv", "summary.txt", "plot_F.svg", "snapshots/initial.snap", "snapshots/final.snap"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let o2 = l2flow(&["run", "c2.toml"], d.path());
    assert_eq!(o2.status.code(), Some(0));
    let a = fs::read(out.join("trajectory.csv")).unwrap();
    let b = fs::read(d.path().join("out2/trajectory.csv")).unwrap();
    assert_eq!(a, b);

    let s = l2flow(&["spectral", "out/snapshots/final.snap"], d.path());
    assert_eq!(s.status.code(), Some(0), "{}", String::from_utf8_lossy(&s.stderr));
    assert_eq!(summary_value(&s, "topology"), "sphere_so3");
    let lambda: f64 = summary_value(&s, "lambda1").parse().unwrap();
    let upper: f64 = summary_value(&s, "lambda_upper").parse().unwrap();
    assert!(lambda > 0.0 && lambda <= upper);
}

#[test]
fn env_overrides_output_dir() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_l2flow"))
        .args(["ode", "--t-end", "0.01", "--output", "ignored"])
        .current_dir(d.path())
        .env("L2FLOW_OUT", "elsewhere")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(d.path().join("elsewhere/trajectory.csv").exists());
    assert!(!d.path().join("ignored").exists());
}

const S2_TEMPLATE: &str = r#"
output = "sweep"
[scenario]
kind = "product_s2_s1"
a0 = 1.0
[engine]
kind = "ode"
mode = "gradient_derived"
t_end = 0.05
"#;

#[test]
fn sweep_rows_keep_order_and_record_failures() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "t.toml", S2_TEMPLATE);
    write(d.path(), "g.csv", "scenario.a0\n4\n-1\n16\n");
    let o = l2flow(&["sweep", "t.toml", "--grid", "g.csv"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.path().join("sweep/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("scenario.a0,status,exit_code"));
    assert!(lines[1].starts_with("4,ok,0"));
    assert!(lines[2].starts_with("-1,invalid_config,2"));
    assert!(lines[3].starts_with("16,ok,0"));
    assert!(d.path().join("sweep/run_0000/trajectory.csv").exists());
    assert!(d.path().join("sweep/run_0002/trajectory.csv").exists());
}

#[test]
fn empty_sweep_grid_writes_header_only() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "t.toml", S2_TEMPLATE);
    write(d.path(), "g.csv", "scenario.a0\n");
    let o = l2flow(&["sweep", "t.toml", "--grid", "g.csv"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(d.path().join("sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn verify_suites() {
    let d = tempfile::tempdir().unwrap();
    let o = l2flow(&["verify", "bogus"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let o = l2flow(&["verify", "geometry"], d.path());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
    assert_eq!(o.status.code(), Some(0));
}
