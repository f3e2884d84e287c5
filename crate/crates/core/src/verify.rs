//! The acceptance suite: each check recomputes a property of the solvers
//! against an independent oracle and reports pass or fail with its numbers.
//!
//! Sizes and tolerances are pinned here. [`VerifySettings`] only selects the
//! driver seeds, the optimizer grid and the Monte-Carlo sample counts.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doss::{solve_controlled, Control, FlowSolver, SolveMode};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use statrs::function::gamma::gamma;

use crate::fraccalc::{frac_derivative_grid, frac_integral_grid, FracOrder};
use crate::optim::{
    inf_comparison, max_resolution, optimize_parametric, optimize_relaxed, Basis, ParametricFamily, ParametricMethod,
    ParametricOptions, Regime, RelaxedMethod, RelaxedOptions, CHATTER_LEVELS,
};
use crate::problems::{builtin, NAMES};
use crate::rde::{continuity_probe, scheme_path, ControlPath, Driver, YoungScheme};
use crate::relaxed::embed_grid_control;
use crate::signal::{fbm_generate, test_path, FbmSpec, GridPath, TestPathKind};
use crate::young::{young_fractional, young_riemann_with, RiemannRule, YoungIntegrand};

/// Hurst index of every fBm driver in the suite.
pub const HURST: f64 = 0.7;
/// Hölder index declared for fBm(0.7) paths.
pub const DRIVER_INDEX: f64 = 0.65;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    pub seeds: Vec<u64>,
    /// Grid size of the optimization checks.
    pub optimizer_steps: usize,
    /// Largest exhaustive-oracle grid.
    pub oracle_budget: usize,
    pub brownian_paths: usize,
    pub fractional_paths: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            optimizer_steps: 1 << 10,
            oracle_budget: 100_000,
            brownian_paths: 1_000,
            fractional_paths: 10_000,
        }
    }
}

impl VerifySettings {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("verify needs at least one seed".into()));
        }
        if self.optimizer_steps < 16 || !self.optimizer_steps.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "optimizer_steps must be a power of two ≥ 16, got {}",
                self.optimizer_steps
            )));
        }
        if self.oracle_budget == 0 || self.brownian_paths < 2 || self.fractional_paths < 2 {
            return Err(Error::InvalidParameter("oracle budget and path counts must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one acceptance check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub metrics: BTreeMap<String, f64>,
}

impl Check {
    pub(crate) fn new(id: usize, name: &str) -> Self {
        Self { id, name: name.to_owned(), passed: true, detail: String::new(), metrics: BTreeMap::new() }
    }

    pub(crate) fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.passed = false;
            if !self.detail.is_empty() {
                self.detail.push_str("; ");
            }
            self.detail.push_str(&what.into());
        }
    }

    pub(crate) fn metric(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    fn failed(id: usize, name: &str, err: &Error) -> Self {
        let mut c = Self::new(id, name);
        c.require(false, format!("error: {err}"));
        c
    }

    /// `PASS  3 doss closed form: ...`
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!("{status} {:>2} {}: {}", self.id, self.name, self.summary())
    }

    /// The failure reasons, or the leading metrics when the check passed.
    pub fn summary(&self) -> String {
        if !self.detail.is_empty() {
            return self.detail.clone();
        }
        self.metrics.iter().take(6).map(|(k, v)| format!("{k}={v:.3e}")).collect::<Vec<_>>().join(" ")
    }
}

fn fbm(seed: u64, n: usize) -> Result<GridPath> {
    fbm_generate(&FbmSpec::new(HURST, 1.0, n, seed))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

/// Runs the checks in order, sharing the expensive cross-oracle solves.
pub struct Suite {
    settings: VerifySettings,
    cross: OnceLock<Result<CrossOracle>>,
}

impl Suite {
    pub fn new(settings: VerifySettings) -> Result<Self> {
        settings.validate()?;
        Ok(Self { settings, cross: OnceLock::new() })
    }

    pub fn settings(&self) -> &VerifySettings {
        &self.settings
    }

    /// Checks 1 to 11.
    pub fn run_all(&self) -> Vec<Check> {
        (1..=11).map(|id| self.run(id)).collect()
    }

    pub fn run(&self, id: usize) -> Check {
        let (name, out) = match id {
            1 => ("young identity", self.young_identity()),
            2 => ("fractional closed forms", self.fractional_closed_forms()),
            3 => ("doss closed form", self.doss_closed_form()),
            4 => ("doss vs young scheme", self.doss_vs_scheme()),
            5 => ("picard vs rk4", self.picard_vs_rk4()),
            6 => ("dirac embedding", self.dirac_embedding()),
            7 => ("chattering convergence", self.chattering()),
            8 => ("relaxed and ordinary infima", self.inf_equality()),
            9 => ("optimizer certification", self.certification()),
            10 => ("control-dependent diffusion", self.parametric_regime()),
            11 => ("fbm generator", self.fbm_statistics()),
            _ => ("unknown", Err(Error::InvalidParameter(format!("no check {id}")))),
        };
        match out {
            Ok(mut c) => {
                c.id = id;
                c.name = name.to_owned();
                c
            }
            Err(e) => Check::failed(id, name, &e),
        }
    }

    fn young_identity(&self) -> Result<Check> {
        let n = 1 << 12;
        let mut c = Check::new(1, "");
        let mut drivers: Vec<(String, GridPath, f64)> = vec![
            ("power".into(), test_path(TestPathKind::PowerBeta { beta: 0.75 }, 1.0, n)?.path, 0.75),
            ("sine".into(), test_path(TestPathKind::Sine { amplitude: 1.0, frequency: 1.0 }, 1.0, n)?.path, 1.0),
        ];
        for &s in &self.settings.seeds {
            drivers.push((format!("fbm{s}"), fbm(s, n)?, DRIVER_INDEX));
        }
        let sin_f = test_path(TestPathKind::Sine { amplitude: 1.0, frequency: 1.0 }, 1.0, n)?.path;
        let mut worst_err: f64 = 0.0;
        let mut worst_spread: f64 = 0.0;
        for (gname, g, mu) in &drivers {
            let integrands =
                [("1", GridPath::constant(1.0, n, 1.0)?, 1.0), ("sin", sin_f.clone(), 1.0), ("g", g.clone(), *mu)];
            for (fname, f, lambda) in integrands {
                let f_sup = f.sup_norm();
                let yi = YoungIntegrand::full(f, g.clone(), lambda, *mu)?;
                let reference = young_riemann_with(&yi, RiemannRule::Trapezoid);
                let vals: Vec<f64> =
                    yi.alpha_grid(5).par_iter().map(|&a| young_fractional(&yi, a)).collect::<Result<_>>()?;
                let osc = g.values().iter().cloned().fold(f64::MIN, f64::max)
                    - g.values().iter().cloned().fold(f64::MAX, f64::min);
                let scale = reference.abs().max(f_sup * osc);
                let tol = (1e-2 * reference.abs()).max(1e-4);
                let err = max_of(vals.iter().map(|v| (v - reference).abs()));
                let spread =
                    vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
                worst_err = worst_err.max(err / tol);
                worst_spread = worst_spread.max(spread / (1e-2 * scale));
                c.require(err <= tol, format!("f={fname} g={gname}: route gap {err:.3e} > {tol:.3e}"));
                c.require(spread <= 1e-2 * scale, format!("f={fname} g={gname}: α-spread {spread:.3e}"));
            }
        }
        c.metric("worst_gap_over_tol", worst_err);
        c.metric("worst_spread_over_tol", worst_spread);
        Ok(c)
    }

    fn fractional_closed_forms(&self) -> Result<Check> {
        let n = 1 << 12;
        let mut c = Check::new(2, "");
        for alpha in [0.3, 0.5, 0.7] {
            let order = FracOrder::left(alpha, 0.0, 1.0)?;
            let one = GridPath::constant(1.0, n, 1.0)?;
            let int = frac_integral_grid(&one, &order)?;
            let e_int = max_of((1..=n).map(|i| {
                let x = one.time(i);
                (int.at(i) / (x.powf(alpha) / gamma(alpha + 1.0)) - 1.0).abs()
            }));

            // D^α[y^α] at x = j/16.
            let pow = GridPath::from_fn(1.0, n, |t| t.powf(alpha))?;
            let der = frac_derivative_grid(&pow, &order)?;
            let want = gamma(alpha + 1.0);
            let e_der = max_of((1..16).map(|j| (der.at(j * n / 16) / want - 1.0).abs()));

            let f = GridPath::from_fn(1.0, n, |t| (2.0 * t).sin())?;
            let i_f = GridPath::new(1.0, frac_integral_grid(&f, &order)?.values)?;
            let d_i_f = frac_derivative_grid(&i_f, &order)?;
            let e_inv = max_of((1..n).map(|i| (d_i_f.at(i) - f.value(i)).abs()));

            c.metric(format!("a{alpha}_integral_rel"), e_int);
            c.metric(format!("a{alpha}_derivative_rel"), e_der);
            c.metric(format!("a{alpha}_inversion_sup"), e_inv);
            c.require(e_int <= 1e-3, format!("α={alpha}: I[1] rel error {e_int:.3e}"));
            c.require(e_der <= 1e-2, format!("α={alpha}: D[y^α] rel error {e_der:.3e}"));
            c.require(e_inv <= 1e-2, format!("α={alpha}: D∘I sup error {e_inv:.3e}"));
        }
        Ok(c)
    }

    /// Error of the composed solution for `σ(x) = x` read in continuous time:
    /// the grid solution is interpolated onto a finer nested grid and
    /// compared with `exp(g - g_0)` there.
    fn doss_closed_form(&self) -> Result<Check> {
        let fine_n = 1 << 14;
        let mut c = Check::new(3, "");
        let sigma = ScalarField::sigma("x", |_, x| x).autonomous();
        let b = ScalarField::drift("0", |_, _, _| 0.0).autonomous();
        let mut errs = BTreeMap::<usize, Vec<f64>>::new();
        for &s in &self.settings.seeds {
            let fine = fbm(s, fine_n)?;
            let g0 = fine.first();
            for n in [1usize << 12, 1 << 13] {
                let g = fine.subsample(fine_n / n)?;
                let fs = FlowSolver::for_driver(sigma.clone(), &g)?;
                let zero = GridPath::constant(1.0, n, 0.0)?;
                let x = solve_controlled(&fs, &b, &g, Control::Ordinary(&zero), 1.0, SolveMode::Rk4)?.x;
                let err = max_of((0..=fine_n).map(|i| {
                    let exact = (fine.value(i) - g0).exp();
                    (x.interpolate(fine.time(i)) - exact).abs() / exact
                }));
                c.metric(format!("seed{s}_n{n}"), err);
                c.require(n != 1 << 12 || err <= 1e-2, format!("seed {s}: error {err:.3e} at N={n}"));
                errs.entry(n).or_default().push(err);
            }
        }
        let m12 = median(errs[&(1 << 12)].clone());
        let m13 = median(errs[&(1 << 13)].clone());
        c.metric("median_n4096", m12);
        c.metric("median_n8192", m13);
        c.require(m13 < m12, format!("median error does not drop: {m12:.3e} -> {m13:.3e}"));
        Ok(c)
    }

    fn cross(&self) -> Result<&CrossOracle> {
        self.cross.get_or_init(|| CrossOracle::compute(&self.settings.seeds)).as_ref().map_err(|e| e.clone())
    }

    fn doss_vs_scheme(&self) -> Result<Check> {
        let cross = self.cross()?;
        let mut c = Check::new(4, "");
        cross.judge(&mut c);
        Ok(c)
    }

    fn picard_vs_rk4(&self) -> Result<Check> {
        let n = 1 << 10;
        let mut c = Check::new(5, "");
        let p = builtin("sine-diffusion")?;
        let u = sine_control(n)?;
        for &s in &self.settings.seeds {
            let g = fbm(s, n)?;
            let fs = FlowSolver::for_driver(p.sigma.clone(), &g)?;
            let rk = solve_controlled(&fs, &p.drift, &g, Control::Ordinary(&u), CROSS_X0, SolveMode::Rk4)?;
            let pic = solve_controlled(&fs, &p.drift, &g, Control::Ordinary(&u), CROSS_X0, SolveMode::picard())?;
            let diff = rk.x.sub(&pic.x)?.sup_norm();
            let d = pic.diagnostics;
            c.metric(format!("seed{s}_sup_diff"), diff);
            c.metric(format!("seed{s}_iterations"), d.picard_iterations as f64);
            c.metric(format!("seed{s}_contraction"), d.final_contraction);
            c.require(diff <= 1e-5, format!("seed {s}: sup difference {diff:.3e}"));
            c.require(d.picard_iterations <= 50, format!("seed {s}: {} iterations", d.picard_iterations));
            c.require(d.final_contraction < 1.0, format!("seed {s}: contraction {:.3e}", d.final_contraction));
        }
        Ok(c)
    }

    fn dirac_embedding(&self) -> Result<Check> {
        let n = self.settings.optimizer_steps;
        let mut c = Check::new(6, "");
        let driver = Driver::new(fbm(self.settings.seeds[0], n)?, DRIVER_INDEX)?;
        for name in NAMES {
            let p = builtin(name)?;
            let problem = p.instantiate(driver.clone())?;
            if p.sigma.depends_on_control() {
                // Relaxed controls are only defined for a control-free diffusion.
                let q = embed_grid_control(&GridPath::constant(1.0, n, 0.0)?, p.control_set)?;
                c.require(
                    matches!(problem.solve_relaxed(&q), Err(Error::UnsupportedRegime(_))),
                    format!("{name}: relaxed solve accepted a control-dependent diffusion"),
                );
                continue;
            }
            let (lo, hi) = (p.control_set.min, p.control_set.max);
            let atoms = if p.atoms.is_empty() { vec![lo, hi] } else { p.atoms.clone() };
            let controls = [
                GridPath::constant(1.0, n, atoms[0])?,
                GridPath::new(1.0, (0..=n).map(|i| atoms[(8 * i / n.max(1)) % atoms.len()]).collect())?,
                GridPath::from_fn(1.0, n, |t| 0.5 * (lo + hi) + 0.5 * (hi - lo) * (2.0 * PI * t).sin())?,
            ];
            let mut worst_x: f64 = 0.0;
            let mut worst_j: f64 = 0.0;
            for u in &controls {
                let q = embed_grid_control(u, p.control_set)?;
                let x_ord = problem.solve_ordinary(u)?;
                let x_rel = problem.solve_relaxed(&q)?.x;
                let j_ord = problem.cost_ordinary(u)?;
                let j_rel = problem.cost_relaxed(&q)?;
                worst_x = worst_x.max(x_ord.sub(&x_rel)?.sup_norm());
                worst_j = worst_j.max((j_ord - j_rel).abs());
            }
            c.metric(format!("{name}_state"), worst_x);
            c.metric(format!("{name}_cost"), worst_j);
            c.require(worst_x <= 1e-12 && worst_j <= 1e-12, format!("{name}: gaps {worst_x:.3e}, {worst_j:.3e}"));
        }
        Ok(c)
    }

    fn relaxed_opts(&self, seed: u64) -> RelaxedOptions {
        RelaxedOptions { seed, max_grid_points: self.settings.oracle_budget, ..RelaxedOptions::default() }
    }

    fn chattering(&self) -> Result<Check> {
        let mut c = Check::new(7, "");
        let p = builtin("convex")?;
        for &s in &self.settings.seeds {
            let driver = Driver::new(fbm(s, self.settings.optimizer_steps)?, DRIVER_INDEX)?;
            let problem = p.instantiate(driver)?;
            let cmp = inf_comparison(&problem, &p.atoms, &p.cell_boundaries(1.0), &self.relaxed_opts(s))?;
            let scale = cmp.relaxed_inf.abs();
            let gaps: Vec<f64> = cmp.chattered.iter().map(|(_, j)| (j - cmp.relaxed_inf).abs()).collect();
            for ((m, _), gap) in cmp.chattered.iter().zip(&gaps) {
                c.metric(format!("seed{s}_m{m:02}"), *gap);
            }
            c.require(gaps.windows(2).all(|w| w[1] <= w[0]), format!("seed {s}: gaps not monotone {gaps:?}"));
            let last = gaps[gaps.len() - 1];
            c.require(
                last <= 1e-2 * scale,
                format!("seed {s}: gap {last:.3e} at m={} exceeds 1e-2 x {scale:.3e}", CHATTER_LEVELS[4]),
            );
        }
        Ok(c)
    }

    fn inf_equality(&self) -> Result<Check> {
        let mut c = Check::new(8, "");
        for name in ["steering", "convex"] {
            let p = builtin(name)?;
            for &s in &self.settings.seeds {
                let driver = Driver::new(fbm(s, self.settings.optimizer_steps)?, DRIVER_INDEX)?;
                let problem = p.instantiate(driver)?;
                let cmp = inf_comparison(&problem, &p.atoms, &p.cell_boundaries(1.0), &self.relaxed_opts(s))?;
                let scale = cmp.relaxed_inf.abs();
                c.metric(format!("{name}_seed{s}_gap"), cmp.gap);
                c.require(
                    cmp.relaxed_inf <= cmp.ordinary_inf + 1e-10,
                    format!(
                        "{name} seed {s}: relaxed {:.10e} above ordinary {:.10e}",
                        cmp.relaxed_inf, cmp.ordinary_inf
                    ),
                );
                c.require(
                    cmp.gap <= 1e-2 * scale,
                    format!("{name} seed {s}: gap {:.3e} vs scale {scale:.3e}", cmp.gap),
                );
            }
        }
        Ok(c)
    }

    fn certification(&self) -> Result<Check> {
        let mut c = Check::new(9, "");
        let seed = self.settings.seeds[0];
        let driver = Driver::new(fbm(seed, self.settings.optimizer_steps)?, DRIVER_INDEX)?;
        for name in NAMES {
            let p = builtin(name)?;
            if p.regime != Regime::Relaxed {
                continue;
            }
            let m = p.cells;
            let k = p.atoms.len();
            let cap = if p.has_closed_form_flow() { ORACLE_RESOLUTION_CAP } else { NUMERIC_FLOW_RESOLUTION };
            let resolution = max_resolution(k, m, self.settings.oracle_budget).min(cap);
            if resolution == 0 {
                continue;
            }
            let opts = RelaxedOptions { resolution, ..self.relaxed_opts(seed) };
            let problem = p.instantiate(driver.clone())?;
            let cells = p.cell_boundaries(1.0);
            let pg = optimize_relaxed(&problem, &p.atoms, &cells, RelaxedMethod::ProjectedGradient, &opts)?;
            let ex = optimize_relaxed(&problem, &p.atoms, &cells, RelaxedMethod::Exhaustive, &opts)?;
            let rel = (pg.best_cost - ex.best_cost).abs() / ex.best_cost.abs().max(1e-12);
            c.metric(format!("{name}_rel_gap"), rel);
            c.metric(format!("{name}_resolution"), resolution as f64);
            c.require(
                rel <= 1e-3,
                format!("{name}: projected gradient {:.6e} vs oracle {:.6e}", pg.best_cost, ex.best_cost),
            );
        }
        Ok(c)
    }

    fn parametric_regime(&self) -> Result<Check> {
        let mut c = Check::new(10, "");
        self.cross()?.judge(&mut c);

        let n = self.settings.optimizer_steps;
        let seed = self.settings.seeds[0];
        let g = Driver::new(fbm(seed, n)?, DRIVER_INDEX)?;
        let (mu_u, mu_prime) = (0.65, 0.5);
        let base = ControlPath::measured(GridPath::from_fn(1.0, n, |t| 0.5 * (2.0 * PI * t).sin())?, mu_u)?;
        let bump = GridPath::from_fn(1.0, n, |t| (2.0 * PI * t).sin())?;
        let perturbed: Vec<ControlPath> = [4.0, 8.0, 16.0]
            .iter()
            .map(|k| ControlPath::measured(base.path().zip_with(&bump, |a, s| a + s / k)?, mu_u))
            .collect::<Result<_>>()?;
        for (label, sigma, b, x0) in probe_problems()? {
            let rows = continuity_probe(&sigma, &b, &g, &base, &perturbed, x0, mu_prime, YoungScheme::Taylor)?;
            for (r, n) in rows.iter().zip([4, 8, 16]) {
                c.metric(format!("probe_{label}_n{n:02}"), r.output_dist);
            }
            c.require(
                rows.windows(2).all(|w| w[1].output_dist < w[0].output_dist),
                format!("probe {label}: distances not decreasing"),
            );
        }

        let opts = ParametricOptions::default();
        let tracking = builtin("tracking")?.instantiate(g.clone())?;
        let fam = ParametricFamily::new(Basis::Poly, 1, 2.0, 1.0, mu_u)?;
        let nm = optimize_parametric(&tracking, &fam, ParametricMethod::NelderMead, &opts)?;
        let grid = optimize_parametric(&tracking, &fam, ParametricMethod::Grid, &opts)?;
        let rel = (nm.best_cost - grid.best_cost).abs() / grid.best_cost.abs().max(1e-12);
        c.metric("d1_rel_gap", rel);
        c.require(rel <= 1e-3, format!("d=1: Nelder-Mead {:.6e} vs grid {:.6e}", nm.best_cost, grid.best_cost));

        let energy = builtin("control-energy")?.instantiate(g)?;
        let fam = ParametricFamily::new(Basis::Poly, 3, 2.0, 1.0, mu_u)?;
        let rep = optimize_parametric(&energy, &fam, ParametricMethod::NelderMead, &opts)?;
        let coef = max_of(rep.coefficients.unwrap_or_default().iter().map(|v| v.abs()));
        c.metric("energy_max_coefficient", coef);
        c.require(coef <= 1e-3, format!("ℓ = u²: largest coefficient {coef:.3e}"));
        Ok(c)
    }

    fn fbm_statistics(&self) -> Result<Check> {
        let mut c = Check::new(11, "");
        let n = 64;
        let base = self.settings.seeds[0].wrapping_mul(1_000_003);

        let paths = self.settings.brownian_paths;
        let bm: Vec<GridPath> = (0..paths as u64)
            .into_par_iter()
            .map(|i| fbm_generate(&FbmSpec::new(0.5, 1.0, n, base.wrapping_add(i))))
            .collect::<Result<_>>()?;
        let dt = 1.0 / n as f64;
        // Sample variance of one increment across paths has sd dt·sqrt(2/(P-1)).
        let band = 5.0 * dt * (2.0 / (paths as f64 - 1.0)).sqrt();
        let mut worst: f64 = 0.0;
        for step in [0, n / 2, n - 1] {
            let inc: Vec<f64> = bm.iter().map(|p| p.value(step + 1) - p.value(step)).collect();
            let mean = inc.iter().sum::<f64>() / paths as f64;
            let var = inc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths as f64 - 1.0);
            worst = worst.max((var - dt).abs() / band);
            c.require((var - dt).abs() <= band, format!("H=0.5 step {step}: variance {var:.4e} vs {dt:.4e}"));
        }
        c.metric("h05_deviation_over_band", worst);

        let paths = self.settings.fractional_paths;
        let fb: Vec<GridPath> = (0..paths as u64)
            .into_par_iter()
            .map(|i| fbm_generate(&FbmSpec::new(HURST, 1.0, n, base.wrapping_add(7_919).wrapping_add(i))))
            .collect::<Result<_>>()?;
        for j in [n / 4, n / 2, n] {
            let t = fb[0].time(j);
            let m2 = fb.iter().map(|p| (p.value(j) - p.first()).powi(2)).sum::<f64>() / paths as f64;
            let want = t.powf(2.0 * HURST);
            let rel = (m2 / want - 1.0).abs();
            c.metric(format!("h07_rel_t{t}"), rel);
            c.require(rel <= 0.05, format!("H=0.7 t={t}: E[B²] {m2:.4e} vs {want:.4e}"));
        }

        let spec = FbmSpec::new(HURST, 1.0, 1 << 12, self.settings.seeds[0]);
        let a = fbm_generate(&spec)?;
        let b = fbm_generate(&spec)?;
        let same = a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits());
        c.require(same, "regenerated path differs");
        Ok(c)
    }
}

/// Upper limit on the exhaustive-oracle resolution per simplex.
pub const ORACLE_RESOLUTION_CAP: usize = 64;
/// The cap when every cost evaluation integrates the flow numerically.
pub const NUMERIC_FLOW_RESOLUTION: usize = 16;

const CROSS_X0: f64 = 0.5;

fn sine_control(n: usize) -> Result<GridPath> {
    GridPath::from_fn(1.0, n, |t| (2.0 * PI * t).sin())
}

type ProbeProblem = (&'static str, ScalarField, ScalarField, f64);

fn probe_problems() -> Result<Vec<ProbeProblem>> {
    let sine = builtin("sine-diffusion")?;
    let tracking = builtin("tracking")?;
    let mixed =
        ScalarField::sigma_u("2+sin(x+u)", |_, x, u| 2.0 + (x + u).sin()).autonomous().with_dx(|_, x, u| (x + u).cos());
    let decay = ScalarField::drift("-x", |_, x, _| -x).autonomous();
    Ok(vec![
        ("sine-diffusion", sine.sigma, sine.drift, CROSS_X0),
        ("tracking", tracking.sigma, tracking.drift, tracking.x0),
        ("mixed", mixed, decay, 0.2),
    ])
}

/// Doss–Sussmann (rk4, numeric flow) against the direct scheme on the
/// sine-diffusion state equation with `u = sin 2πt`, at nested grids.
#[derive(Debug, Clone)]
struct CrossOracle {
    /// `(seed, N, sup|x_doss - x_taylor|, sup|x_doss - x_euler|, sup|x_doss|)`.
    rows: Vec<(u64, usize, f64, f64, f64)>,
}

const CROSS_SIZES: [usize; 3] = [1 << 10, 1 << 11, 1 << 12];

impl CrossOracle {
    fn compute(seeds: &[u64]) -> Result<Self> {
        let p = builtin("sine-diffusion")?;
        let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| CROSS_SIZES.iter().map(move |&n| (s, n))).collect();
        let rows = jobs
            .par_iter()
            .map(|&(s, n)| {
                let fine = fbm(s, CROSS_SIZES[2])?;
                let g = fine.subsample(CROSS_SIZES[2] / n)?;
                let u = sine_control(n)?;
                let fs = FlowSolver::for_driver(p.sigma.clone(), &g)?;
                let x = solve_controlled(&fs, &p.drift, &g, Control::Ordinary(&u), CROSS_X0, SolveMode::Rk4)?.x;
                let taylor = scheme_path(&p.sigma, &p.drift, &g, &u, CROSS_X0, YoungScheme::Taylor)?;
                let euler = scheme_path(&p.sigma, &p.drift, &g, &u, CROSS_X0, YoungScheme::Euler)?;
                Ok((s, n, x.sub(&taylor)?.sup_norm(), x.sub(&euler)?.sup_norm(), x.sup_norm()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    /// Tolerance `1e-2 (1 + sup|x|)` at the finest grid and a ratio of at
    /// most 0.6 per doubling (first-order halving).
    fn judge(&self, c: &mut Check) {
        for chunk in self.rows.chunks(CROSS_SIZES.len()) {
            let s = chunk[0].0;
            for &(_, n, e, eu, _) in chunk {
                c.metric(format!("taylor_seed{s}_n{n}"), e);
                c.metric(format!("euler_seed{s}_n{n}"), eu);
            }
            let (_, n, e, _, sup) = chunk[chunk.len() - 1];
            c.require(e <= 1e-2 * (1.0 + sup), format!("seed {s}: gap {e:.3e} at N={n}"));
            for w in chunk.windows(2) {
                let ratio = w[1].2 / w[0].2;
                c.require(ratio <= 0.6, format!("seed {s}: ratio {ratio:.3} from N={} to N={}", w[0].1, w[1].1));
            }
        }
    }
}

/// Checks 1 to 11 with the given settings.
pub fn run_checks(settings: &VerifySettings) -> Result<Vec<Check>> {
    Ok(Suite::new(settings.clone())?.run_all())
}
