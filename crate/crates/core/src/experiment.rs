//! Config-driven experiment runs behind the `roughctl` front end.
//!
//! A TOML file selects a driver, a named built-in problem and the settings of
//! each stage. [`run`] executes one stage and writes its CSV/JSON outputs and
//! a `manifest.json` echoing the resolved configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::doss::{solve_controlled, Control, SolveMode};
use crate::error::Error;
use crate::optim::{
    optimize_parametric, optimize_relaxed, Basis, ControlProblem, OptimReport, ParametricFamily, ParametricMethod,
    ParametricOptions, Regime, RelaxedMethod, RelaxedOptions,
};
use crate::problems::{builtin, BuiltinProblem};
use crate::rde::{young_solve, ControlPath, Driver, YoungScheme};
use crate::relaxed::{chatter, default_dictionary, uniform_cells, vague_distance, StepRelaxedControl};
use crate::signal::{estimate_holder_index, fbm_generate, test_path, FbmSpec, GridPath, TestPathKind};
use crate::verify::{Check, Suite, VerifySettings};
use crate::young::{young_fractional, young_riemann_with, RiemannRule, YoungIntegrand};

pub const TOOL: &str = "roughctl";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// Invalid configuration, anchored at a line of the file when known.
    #[error("{origin}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Config { origin: String, line: Option<usize>, message: String },

    #[error(transparent)]
    Numerics(#[from] Error),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config { .. })
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Gen,
    Integrate,
    Solve,
    Chatter,
    Optimize,
    Verify,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [
        Subcommand::Gen,
        Subcommand::Integrate,
        Subcommand::Solve,
        Subcommand::Chatter,
        Subcommand::Optimize,
        Subcommand::Verify,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Subcommand::Gen => "gen",
            Subcommand::Integrate => "integrate",
            Subcommand::Solve => "solve",
            Subcommand::Chatter => "chatter",
            Subcommand::Optimize => "optimize",
            Subcommand::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    Fbm,
    PowerBeta,
    Sine,
    Weierstrass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub kind: DriverKind,
    #[serde(default = "one")]
    pub horizon: f64,
    pub n_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    /// Declared Hölder index; defaults to `hurst - 0.05` for fBm and to the
    /// known index of a test path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "default_problem")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { name: default_problem(), regime: None, x0: None, atoms: None, cells: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrand {
    One,
    Sin,
    #[default]
    Driver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrateConfig {
    #[serde(default)]
    pub integrand: Integrand,
    #[serde(default = "default_alphas")]
    pub alphas: usize,
}

impl Default for IntegrateConfig {
    fn default() -> Self {
        Self { integrand: Integrand::default(), alphas: default_alphas() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Doss–Sussmann when the diffusion is control-free, the scheme otherwise.
    #[default]
    Auto,
    Doss,
    Rde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OdeMode {
    #[default]
    Rk4,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControlShape {
    Constant,
    #[default]
    Sine,
}

/// `offset + amplitude sin(2π frequency t / T)`, or `offset` when constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub shape: ControlShape,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub frequency: f64,
    #[serde(default)]
    pub offset: f64,
    /// Declared Hölder index for the direct scheme.
    #[serde(default = "one")]
    pub index: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { shape: ControlShape::Sine, amplitude: 1.0, frequency: 1.0, offset: 0.0, index: 1.0 }
    }
}

impl ControlConfig {
    fn range(&self) -> (f64, f64) {
        match self.shape {
            ControlShape::Constant => (self.offset, self.offset),
            ControlShape::Sine => (self.offset - self.amplitude.abs(), self.offset + self.amplitude.abs()),
        }
    }

    fn grid(&self, horizon: f64, n: usize) -> crate::Result<GridPath> {
        match self.shape {
            ControlShape::Constant => GridPath::constant(horizon, n, self.offset),
            ControlShape::Sine => GridPath::from_fn(horizon, n, |t| {
                self.offset + self.amplitude * (2.0 * std::f64::consts::PI * self.frequency * t / horizon).sin()
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(default)]
    pub method: SolveMethod,
    #[serde(default)]
    pub mode: OdeMode,
    #[serde(default = "default_scheme")]
    pub scheme: YoungScheme,
    #[serde(default)]
    pub control: ControlConfig,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            method: SolveMethod::Auto,
            mode: OdeMode::Rk4,
            scheme: default_scheme(),
            control: ControlConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatterConfig {
    #[serde(default = "default_level")]
    pub level: usize,
    /// One weight row per cell; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

impl Default for ChatterConfig {
    fn default() -> Self {
        Self { level: default_level(), weights: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeMethod {
    ProjectedGradient,
    Exhaustive,
    NelderMead,
    Grid,
}

impl OptimizeMethod {
    fn regime(&self) -> Regime {
        match self {
            OptimizeMethod::ProjectedGradient | OptimizeMethod::Exhaustive => Regime::Relaxed,
            OptimizeMethod::NelderMead | OptimizeMethod::Grid => Regime::Parametric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    /// Defaults to projected gradient (relaxed) or Nelder–Mead (parametric).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<OptimizeMethod>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_budget")]
    pub max_grid_points: usize,
    #[serde(default = "default_starts")]
    pub random_starts: usize,
    #[serde(default = "default_basis")]
    pub basis: Basis,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "one")]
    pub c_max: f64,
    #[serde(default = "default_control_index")]
    pub index: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            method: None,
            resolution: default_resolution(),
            max_grid_points: default_budget(),
            random_starts: default_starts(),
            basis: default_basis(),
            dim: default_dim(),
            c_max: 1.0,
            index: default_control_index(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub driver: DriverConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub integrate: IntegrateConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub chatter: ChatterConfig,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub verify: VerifySettings,
}

fn one() -> f64 {
    1.0
}
fn default_problem() -> String {
    "sine-diffusion".into()
}
fn default_alphas() -> usize {
    5
}
fn default_scheme() -> YoungScheme {
    YoungScheme::Taylor
}
fn default_level() -> usize {
    16
}
fn default_resolution() -> usize {
    5
}
fn default_budget() -> usize {
    100_000
}
fn default_starts() -> usize {
    5
}
fn default_basis() -> Basis {
    Basis::Poly
}
fn default_dim() -> usize {
    2
}
fn default_control_index() -> f64 {
    0.65
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Line of `key = ...` inside `[section]` (top level when `section` is
/// empty), 1-based.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_owned();
            if current == section {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

/// Parses and validates a configuration; `origin` names the source in
/// error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        ExperimentError::Config { origin: origin.to_owned(), line, message: e.message().trim().to_owned() }
    })?;
    cfg.validate(text, origin)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config {
        origin: path.display().to_string(),
        line: None,
        message: format!("cannot read config: {e}"),
    })?;
    parse_config(&text, &path.display().to_string())
}

impl ExperimentConfig {
    fn validate(&mut self, text: &str, origin: &str) -> Result<()> {
        let err = |section: &str, key: &str, message: String| ExperimentError::Config {
            origin: origin.to_owned(),
            line: locate(text, section, key),
            message,
        };
        let d = &mut self.driver;
        if !(d.horizon > 0.0 && d.horizon.is_finite()) {
            return Err(err("driver", "horizon", format!("horizon must be positive, got {}", d.horizon)));
        }
        if d.n_steps < 8 {
            return Err(err("driver", "n_steps", format!("n_steps must be at least 8, got {}", d.n_steps)));
        }
        let known = match d.kind {
            DriverKind::Fbm => {
                let h = d.hurst.ok_or_else(|| err("driver", "kind", "fbm driver needs `hurst`".into()))?;
                if !(h > 0.5 && h < 1.0) {
                    return Err(err("driver", "hurst", format!("hurst must lie in (1/2, 1), got {h}")));
                }
                h - 0.05
            }
            _ => self.test_kind().map_err(|m| err("driver", "kind", m))?.holder_index(),
        };
        let index = *self.driver.index.get_or_insert(known);
        if !(index > 0.5 && index <= 1.0) {
            return Err(err("driver", "index", format!("declared driver index {index} must lie in (1/2, 1]")));
        }

        let p = builtin(&self.problem.name).map_err(|e| err("problem", "name", e.to_string()))?;
        let regime = *self.problem.regime.get_or_insert(p.regime);
        if regime == Regime::Relaxed && p.sigma.depends_on_control() {
            return Err(err(
                "problem",
                "regime",
                format!("problem `{}` has a control-dependent diffusion and cannot use the relaxed regime", p.name),
            ));
        }
        if let Some(atoms) = &self.problem.atoms {
            if atoms.is_empty() || atoms.iter().any(|a| !p.control_set.contains(*a)) {
                return Err(err("problem", "atoms", format!("atoms must be nonempty and inside {:?}", p.control_set)));
            }
        }
        if self.problem.cells == Some(0) {
            return Err(err("problem", "cells", "cells must be at least 1".into()));
        }
        if self.integrate.alphas == 0 {
            return Err(err("integrate", "alphas", "alphas must be at least 1".into()));
        }
        let (lo, hi) = self.solve.control.range();
        if !(p.control_set.contains(lo) && p.control_set.contains(hi)) {
            return Err(err(
                "solve.control",
                "amplitude",
                format!("control range [{lo}, {hi}] leaves U = [{}, {}]", p.control_set.min, p.control_set.max),
            ));
        }
        if self.solve.method == SolveMethod::Doss && p.sigma.depends_on_control() {
            return Err(err("solve", "method", "doss needs a control-free diffusion".into()));
        }
        if self.chatter.level == 0 {
            return Err(err("chatter", "level", "level must be at least 1".into()));
        }
        if let Some(m) = self.optimize.method {
            if m.regime() != regime {
                return Err(err("optimize", "method", format!("method {m:?} does not fit the {regime:?} regime")));
            }
        }
        if self.optimize.dim == 0 || !(self.optimize.c_max > 0.0) {
            return Err(err("optimize", "dim", "dim must be ≥ 1 and c_max > 0".into()));
        }
        self.verify.validate().map_err(|e| err("verify", "seeds", e.to_string()))?;
        Ok(())
    }

    fn test_kind(&self) -> std::result::Result<TestPathKind, String> {
        let d = &self.driver;
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("{:?} driver needs `{name}`", d.kind));
        Ok(match d.kind {
            DriverKind::PowerBeta => TestPathKind::PowerBeta { beta: need(d.beta, "beta")? },
            DriverKind::Sine => {
                TestPathKind::Sine { amplitude: d.amplitude.unwrap_or(1.0), frequency: d.frequency.unwrap_or(1.0) }
            }
            DriverKind::Weierstrass => TestPathKind::Weierstrass {
                a: need(d.a, "a")?,
                b: need(d.b, "b")?,
                amplitude: d.amplitude.unwrap_or(1.0),
            },
            DriverKind::Fbm => return Err("fbm is not a test path".into()),
        })
    }

    pub fn driver(&self) -> crate::Result<Driver> {
        let d = &self.driver;
        let path = match d.kind {
            DriverKind::Fbm => fbm_generate(&FbmSpec::new(d.hurst.unwrap_or(0.7), d.horizon, d.n_steps, self.seed))?,
            _ => test_path(self.test_kind().map_err(Error::InvalidParameter)?, d.horizon, d.n_steps)?.path,
        };
        Driver::new(path, d.index.unwrap_or(0.65))
    }

    fn builtin(&self) -> crate::Result<BuiltinProblem> {
        let mut p = builtin(&self.problem.name)?;
        if let Some(x0) = self.problem.x0 {
            p.x0 = x0;
        }
        if let Some(a) = &self.problem.atoms {
            p.atoms = a.clone();
        }
        if let Some(m) = self.problem.cells {
            p.cells = m;
        }
        Ok(p)
    }
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub success: bool,
    /// Human-readable summary lines.
    pub lines: Vec<String>,
    /// Files written, relative to the output directory, in write order.
    pub files: Vec<String>,
}

struct Out<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Out<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| ExperimentError::Io { path, source })?;
        self.files.push(name.to_owned());
        Ok(())
    }

    fn json(&mut self, name: &str, v: &Value) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|source| ExperimentError::Io { path: self.dir.join(name), source })?;
        self.write(name, &buf)
    }
}

/// Runs one stage, writing into `out` (created if needed).
pub fn run(sub: Subcommand, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out).map_err(|source| ExperimentError::Io { path: out.to_owned(), source })?;
    let mut o = Out { dir: out, files: Vec::new() };
    let manifest = json!({
        "tool": TOOL,
        "version": VERSION,
        "subcommand": sub.as_str(),
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    o.json("manifest.json", &manifest)?;
    let (success, lines) = match sub {
        Subcommand::Gen => gen(cfg, &mut o)?,
        Subcommand::Integrate => integrate(cfg, &mut o)?,
        Subcommand::Solve => solve(cfg, &mut o)?,
        Subcommand::Chatter => chatter_stage(cfg, &mut o)?,
        Subcommand::Optimize => optimize(cfg, &mut o)?,
        Subcommand::Verify => verify(cfg, &mut o)?,
    };
    Ok(Outcome { success, lines, files: o.files })
}

/// Writes `error.json` after a failed run.
pub fn write_error(out: &Path, sub: Subcommand, err: &ExperimentError) -> std::io::Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = out.join("error.json");
    let v = json!({ "tool": TOOL, "version": VERSION, "subcommand": sub.as_str(), "error": err.to_string() });
    let mut f = fs::File::create(&path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(&v).expect("json values serialize"))?;
    Ok(path)
}

type Stage = (bool, Vec<String>);

fn gen(cfg: &ExperimentConfig, o: &mut Out<'_>) -> Result<Stage> {
    let d = cfg.driver()?;
    o.csv("driver.csv", |w| d.path.write_csv(w))?;
    let summary = json!({
        "kind": cfg.driver.kind,
        "n_steps": d.path.n_steps(),
        "horizon": d.path.horizon(),
        "seed": cfg.seed,
        "declared_index": d.index,
        "estimated_index": estimate_holder_index(&d.path),
        "increment": d.path.last() - d.path.first(),
        "sup_norm": d.path.sup_norm(),
    });
    o.json("summary.json", &summary)?;
    Ok((true, vec![format!("driver with {} steps written to driver.csv", d.path.n_steps())]))
}

fn integrate(cfg: &ExperimentConfig, o: &mut Out<'_>) -> Result<Stage> {
    let d = cfg.driver()?;
    let (t, n) = (d.path.horizon(), d.path.n_steps());
    let (f, lambda) = match cfg.integrate.integrand {
        Integrand::One => (GridPath::constant(t, n, 1.0)?, 1.0),
        Integrand::Sin => (GridPath::from_fn(t, n, |s| (2.0 * std::f64::consts::PI * s / t).sin())?, 1.0),
        Integrand::Driver => (d.path.clone(), d.index),
    };
    let yi = YoungIntegrand::full(f, d.path.clone(), lambda, d.index)?;
    let left = young_riemann_with(&yi, RiemannRule::Left);
    let trap = young_riemann_with(&yi, RiemannRule::Trapezoid);
    let frac: Vec<(f64, f64)> = yi
        .alpha_grid(cfg.integrate.alphas)
        .into_iter()
        .map(|a| Ok((a, young_fractional(&yi, a)?)))
        .collect::<crate::Result<_>>()?;
    let max_diff = frac.iter().map(|(_, v)| (v - trap).abs()).fold(0.0, f64::max);
    let summary = json!({
        "integrand": cfg.integrate.integrand,
        "riemann_left": left,
        "riemann_trapezoid": trap,
        "fractional": frac.iter().map(|(a, v)| json!({"alpha": a, "value": v})).collect::<Vec<_>>(),
        "max_difference": max_diff,
        "increment": d.path.last() - d.path.first(),
    });
    o.json("summary.json", &summary)?;
    Ok((true, vec![format!("riemann {trap:.10e}, fractional routes within {max_diff:.3e}")]))
}

fn problem(cfg: &ExperimentConfig, p: &BuiltinProblem, d: Driver) -> crate::Result<ControlProblem> {
    let mode = match cfg.solve.mode {
        OdeMode::Rk4 => SolveMode::Rk4,
        OdeMode::Picard => SolveMode::picard(),
    };
    Ok(p.instantiate(d)?.with_mode(mode).with_scheme(cfg.solve.scheme))
}

fn solve(cfg: &ExperimentConfig, o: &mut Out<'_>) -> Result<Stage> {
    let p = cfg.builtin()?;
    let d = cfg.driver()?;
    let (t, n) = (d.path.horizon(), d.path.n_steps());
    let u = cfg.solve.control.grid(t, n)?;
    let doss = match cfg.solve.method {
        SolveMethod::Auto => !p.sigma.depends_on_control(),
        SolveMethod::Doss => true,
        SolveMethod::Rde => false,
    };
    let prob = problem(cfg, &p, d.clone())?;
    let (x, diagnostics) = if doss {
        let s = solve_controlled(prob.flow()?, &p.drift, &d.path, Control::Ordinary(&u), p.x0, prob.mode)?;
        (s.x, serde_json::to_value(s.diagnostics).expect("diagnostics serialize"))
    } else {
        let up = ControlPath::measured(u.clone(), cfg.solve.control.index)?;
        (young_solve(&p.sigma, &p.drift, &d, &up, p.x0, cfg.solve.scheme)?, Value::Null)
    };
    o.csv("trajectory.csv", |w| x.write_csv(w))?;
    o.csv("control.csv", |w| u.write_csv(w))?;
    let mut summary = json!({
        "problem": p.name,
        "method": if doss { "doss" } else { "rde" },
        "initial_value": p.x0,
        "final_value": x.last(),
        "sup_norm": x.sup_norm(),
        "cost": prob.cost_ordinary(&u)?,
        "diagnostics": diagnostics,
    });
    let mut lines =
        vec![format!("{} solve of `{}`: x(T) = {:.10e}", if doss { "doss" } else { "rde" }, p.name, x.last())];
    if p.name == "linear" {
        let exact = p.x0 * (d.path.last() - d.path.first()).exp();
        let rel = (x.last() - exact).abs() / exact.abs();
        summary["closed_form_final"] = json!(exact);
        summary["closed_form_rel_error"] = json!(rel);
        lines.push(format!("closed form x0 exp(g_T - g_0) = {exact:.10e}, relative error {rel:.3e}"));
    }
    o.json("summary.json", &summary)?;
    Ok((true, lines))
}

fn relaxed_control(cfg: &ExperimentConfig, p: &BuiltinProblem, horizon: f64) -> crate::Result<StepRelaxedControl> {
    let cells = uniform_cells(horizon, p.cells);
    let k = p.atoms.len();
    let weights = cfg.chatter.weights.clone().unwrap_or_else(|| vec![vec![1.0 / k as f64; k]; p.cells]);
    StepRelaxedControl::new(cells, p.atoms.clone(), weights, p.control_set)
}

fn chatter_stage(cfg: &ExperimentConfig, o: &mut Out<'_>) -> Result<Stage> {
    let p = cfg.builtin()?;
    if p.atoms.is_empty() {
        return Err(Error::UnsupportedRegime(format!("problem `{}` has no relaxed atoms", p.name)).into());
    }
    let d = cfg.driver()?;
    let (t, n) = (d.path.horizon(), d.path.n_steps());
    let q = relaxed_control(cfg, &p, t)?;
    let ch = chatter(&q, cfg.chatter.level, n)?;
    let prob = problem(cfg, &p, d)?;
    let j_rel = prob.cost_relaxed(&q)?;
    let j_ord = prob.cost_ordinary(&ch.control)?;
    let dist = vague_distance(&q, &ch.to_relaxed(&q)?, &default_dictionary())?;
    o.csv("partition.csv", |w| ch.partition.write_csv(w))?;
    o.csv("control.csv", |w| ch.control.write_csv(w))?;
    o.json(
        "summary.json",
        &json!({
            "problem": p.name,
            "refinement": cfg.chatter.level,
            "relaxed": q,
            "cost_relaxed": j_rel,
            "cost_chattered": j_ord,
            "cost_gap": (j_rel - j_ord).abs(),
            "vague_distance": dist,
        }),
    )?;
    Ok((true, vec![format!("chattered at m = {}: |J(q) - J(u)| = {:.3e}", cfg.chatter.level, (j_rel - j_ord).abs())]))
}

fn optimize(cfg: &ExperimentConfig, o: &mut Out<'_>) -> Result<Stage> {
    let p = cfg.builtin()?;
    let d = cfg.driver()?;
    let t = d.path.horizon();
    let prob = problem(cfg, &p, d)?;
    let oc = &cfg.optimize;
    let regime = cfg.problem.regime.unwrap_or(p.regime);
    let report: OptimReport = match regime {
        Regime::Relaxed => {
            let method = match oc.method.unwrap_or(OptimizeMethod::ProjectedGradient) {
                OptimizeMethod::Exhaustive => RelaxedMethod::Exhaustive,
                _ => RelaxedMethod::ProjectedGradient,
            };
            let opts = RelaxedOptions {
                seed: cfg.seed,
                resolution: oc.resolution,
                max_grid_points: oc.max_grid_points,
                random_starts: oc.random_starts,
                chatter_level: cfg.chatter.level,
                ..RelaxedOptions::default()
            };
            optimize_relaxed(&prob, &p.atoms, &uniform_cells(t, p.cells), method, &opts)?
        }
        Regime::Parametric => {
            let method = match oc.method.unwrap_or(OptimizeMethod::NelderMead) {
                OptimizeMethod::Grid => ParametricMethod::Grid,
                _ => ParametricMethod::NelderMead,
            };
            let fam = ParametricFamily::new(oc.basis, oc.dim, oc.c_max, t, oc.index)?;
            optimize_parametric(&prob, &fam, method, &ParametricOptions::default())?
        }
    };
    let mut s = report.to_json();
    s.push('\n');
    o.write("report.json", s.as_bytes())?;
    o.csv("trace.csv", |w| report.write_trace_csv(w))?;
    Ok((true, vec![format!("{} on `{}`: best cost {:.10e}", report.method, p.name, report.best_cost)]))
}

fn verify(cfg: &ExperimentConfig, o: &mut Out<'_>) -> Result<Stage> {
    let suite = Suite::new(cfg.verify.clone())?;
    let mut checks = suite.run_all();
    checks.push(determinism_check(cfg));
    o.csv("checks.csv", |w| {
        let mut t = csv::Writer::from_writer(w);
        t.write_record(["id", "name", "status", "detail"])?;
        for c in &checks {
            let status = if c.passed { "pass" } else { "fail" };
            t.write_record([c.id.to_string().as_str(), &c.name, status, &c.summary()])?;
        }
        t.flush()
    })?;
    let metrics: Vec<Value> = checks
        .iter()
        .map(|c| {
            let m: serde_json::Map<String, Value> = c.metrics.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
            json!({"id": c.id, "name": c.name, "passed": c.passed, "detail": c.detail, "metrics": m})
        })
        .collect();
    let all = checks.iter().all(|c| c.passed);
    o.json("verify.json", &json!({"passed": all, "checks": metrics}))?;
    Ok((all, checks.iter().map(Check::line).collect()))
}

/// Runs every other stage twice into scratch directories and compares the
/// written files byte for byte.
fn determinism_check(cfg: &ExperimentConfig) -> Check {
    let mut check = Check::new(12, "end-to-end determinism");
    let relaxed_ok = cfg.builtin().map(|p| !p.atoms.is_empty() && !p.sigma.depends_on_control()).unwrap_or(false);
    let mut compared = 0usize;
    for sub in Subcommand::ALL {
        if sub == Subcommand::Verify || (sub == Subcommand::Chatter && !relaxed_ok) {
            continue;
        }
        let runs: Vec<std::result::Result<(tempfile::TempDir, Outcome), String>> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
                let out = run(sub, cfg, dir.path()).map_err(|e| e.to_string())?;
                Ok((dir, out))
            })
            .collect();
        match (&runs[0], &runs[1]) {
            (Ok((d1, o1)), Ok((d2, _))) => {
                for f in &o1.files {
                    let a = fs::read(d1.path().join(f));
                    let b = fs::read(d2.path().join(f));
                    match (a, b) {
                        (Ok(a), Ok(b)) if a == b => compared += 1,
                        _ => check.require(false, format!("{}: {f} differs between runs", sub.as_str())),
                    }
                }
            }
            (Err(e), _) | (_, Err(e)) => check.require(false, format!("{} failed: {e}", sub.as_str())),
        }
    }
    check.metric("files_compared", compared as f64);
    check
}
