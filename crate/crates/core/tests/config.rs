use roughcontrol::experiment::{parse_config, ExperimentError, OptimizeMethod};
use roughcontrol::optim::Regime;

const BASE: &str = "[driver]\nkind = \"fbm\"\nhurst = 0.7\nn_steps = 256\n";

fn line_of(err: ExperimentError) -> Option<usize> {
    match err {
        ExperimentError::Config { line, .. } => line,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn defaults_are_resolved() {
    let cfg = parse_config(BASE, "t.toml").unwrap();
    assert_eq!(cfg.problem.name, "sine-diffusion");
    assert_eq!(cfg.problem.regime, Some(Regime::Relaxed));
    assert!((cfg.driver.index.unwrap() - 0.65).abs() < 1e-15);
    assert_eq!(cfg.verify.seeds, vec![1, 2, 3]);
}

#[test]
fn unknown_keys_are_rejected_at_their_line() {
    let text = format!("{BASE}\n[solve]\nmode = \"rk4\"\nstep = 3\n");
    assert_eq!(line_of(parse_config(&text, "t.toml").unwrap_err()), Some(8));
}

#[test]
fn relaxed_regime_needs_control_free_diffusion() {
    let text = format!("{BASE}[problem]\nname = \"tracking\"\nregime = \"relaxed\"\n");
    assert_eq!(line_of(parse_config(&text, "t.toml").unwrap_err()), Some(7));
    let text = format!("{BASE}[problem]\nname = \"tracking\"\n");
    assert_eq!(parse_config(&text, "t.toml").unwrap().problem.regime, Some(Regime::Parametric));
}

#[test]
fn optimizer_must_fit_the_regime() {
    let text = format!("{BASE}[optimize]\nmethod = \"nelder_mead\"\n");
    assert_eq!(line_of(parse_config(&text, "t.toml").unwrap_err()), Some(6));
    let text = format!("{BASE}[optimize]\nmethod = \"exhaustive\"\n");
    assert_eq!(parse_config(&text, "t.toml").unwrap().optimize.method, Some(OptimizeMethod::Exhaustive));
}

#[test]
fn control_must_stay_in_the_control_set() {
    let text = format!("{BASE}[solve.control]\namplitude = 1.5\n");
    assert_eq!(line_of(parse_config(&text, "t.toml").unwrap_err()), Some(6));
}

#[test]
fn hurst_out_of_range_points_at_hurst() {
    let text = BASE.replace("0.7", "0.3");
    assert_eq!(line_of(parse_config(&text, "t.toml").unwrap_err()), Some(3));
}
