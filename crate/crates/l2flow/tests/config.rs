use l2flow::config::{parse_config, ConfigError, Engine, Expect, Scenario};
use l2flow_core::geometry::CurvatureNorm;
use l2flow_core::reduced_ode::RhsMode;

const ROUND: &str = r#"
[scenario]
kind = "round_sphere"
n = 5
a0 = 1.0

[engine]
kind = "ode"
mode = "paper_literal"
t_end = 0.1
"#;

#[test]
fn minimal_round_sphere_is_valid() {
    let cfg = parse_config(ROUND).unwrap();
    assert_eq!(cfg.scenario, Scenario::RoundSphere { n: 5, a0: 1.0 });
    match cfg.engine {
        Engine::Ode { mode, t_end, .. } => {
            assert_eq!(mode, RhsMode::PaperLiteral);
            assert_eq!(t_end, 0.1);
        }
        Engine::Pde(_) => panic!("expected the ode engine"),
    }
    assert_eq!(cfg.grid, 64);
    assert_eq!(cfg.curvature_norm, CurvatureNorm::Paper);
}

#[test]
fn small_grid_is_a_validation_error() {
    let text = format!("grid = 8\n{ROUND}");
    match parse_config(&text).unwrap_err() {
        ConfigError::Validation { line, message } => {
            assert_eq!(line, Some(1));
            assert!(message.contains("grid"), "{message}");
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn unknown_key_names_key_and_line() {
    let text = ROUND.replace("a0 = 1.0", "a0 = 1.0\nradius = 2.0");
    match parse_config(&text).unwrap_err() {
        ConfigError::Parse { line, message } => {
            assert_eq!(line, 6);
            assert!(message.contains("radius"), "{message}");
        }
        e => panic!("unexpected {e:?}"),
    }
    let top = format!("colour = \"red\"\n{ROUND}");
    match parse_config(&top).unwrap_err() {
        ConfigError::Parse { line, message } => {
            assert_eq!(line, 1);
            assert!(message.contains("colour"));
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn syntax_error_reports_line() {
    let err = parse_config("grid = 32\nseed = = 3\n").unwrap_err();
    assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err:?}");
}

#[test]
fn engine_scenario_mismatches() {
    let pde_s5 = r#"
[scenario]
kind = "product_s5_s1"
a0 = 1.0
b0 = 1.0
[engine]
kind = "pde"
t_end = 0.1
"#;
    assert!(matches!(parse_config(pde_s5), Err(ConfigError::Validation { .. })));
    let ode_dumbbell = "[scenario]\nkind = \"so3_dumbbell\"\n[engine]\nkind = \"ode\"\nt_end = 1.0\n";
    assert!(matches!(parse_config(ode_dumbbell), Err(ConfigError::Validation { .. })));
    let literal_s2 = "[scenario]\nkind = \"product_s2_s1\"\na0 = 4.0\n[engine]\nkind = \"ode\"\nmode = \"paper_literal\"\nt_end = 1.0\n";
    assert!(matches!(parse_config(literal_s2), Err(ConfigError::Validation { .. })));
    let pde_s4 = ROUND.replace("n = 5", "n = 4").replace("kind = \"ode\"", "kind = \"pde\"").replace("mode = \"paper_literal\"\n", "");
    assert!(matches!(parse_config(&pde_s4), Err(ConfigError::Validation { .. })));
}

#[test]
fn pde_options_and_top_level_keys() {
    let text = r#"
grid = 48
seed = 11
perturbation = 0.02
expect = "long_time"
curvature_norm = "full"
diagnostics_every = 5
spectral_every = 2
plot = ["F", "lambda1"]
eigen_decay = true
sobolev_a = 2.5

[scenario]
kind = "so3_dumbbell"
neck_depth = 0.3

[engine]
kind = "pde"
t_end = 0.001
normalized = true
dt_safety = 0.05
regrid_every = 0
integrator = "heun"
"#;
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.grid, 48);
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.expect, Expect::LongTime);
    assert_eq!(cfg.plot, vec!["F".to_string(), "lambda1".to_string()]);
    assert_eq!(cfg.eigen_decay.unwrap().sobolev_a, 2.5);
    let Engine::Pde(fc) = cfg.engine else { panic!("expected pde") };
    assert!(fc.normalized);
    assert_eq!(fc.dt_safety, 0.05);
    assert_eq!(fc.regrid_every, 0);
    assert_eq!(fc.curvature_norm, CurvatureNorm::Full);
}

#[test]
fn tube_needs_one_psi_source() {
    let both = "[scenario]\nkind = \"warped_tube\"\npsi = \"1\"\npsi_samples = [1.0]\n[engine]\nkind = \"pde\"\nt_end = 1.0\n";
    assert!(matches!(parse_config(both), Err(ConfigError::Validation { .. })));
    let short = "[scenario]\nkind = \"warped_tube\"\npsi_samples = [1.0, 1.0]\n[engine]\nkind = \"pde\"\nt_end = 1.0\n";
    assert!(matches!(parse_config(short), Err(ConfigError::Validation { .. })));
}
