//! Integral costs and their minimization.
//!
//! Two regimes: when `σ` does not depend on the control, the cost is
//! minimized over step relaxed controls (projected gradient on the weight
//! simplices, certified by exhaustive search on small instances) and
//! projected back by chattering. When `σ` depends on the control, the cost
//! is minimized over a coefficient box of a smooth basis, which is a
//! bounded set in a Hölder space.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doss::{solve_controlled, Control, DossSolution, FlowFn, FlowSolver, SolveMode};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::rde::{scheme_path, young_solve, ControlPath, Driver, YoungScheme};
use crate::relaxed::{chatter, project_simplex, ControlSet, StepRelaxedControl};
use crate::signal::{fmt_f64, GridPath};

/// Running cost `ℓ(t, x, u)` with its declared constants.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub ell: ScalarField,
    /// Declared `sup |ℓ|`.
    pub bound: Option<f64>,
    /// Declared `cst` in `|ℓ(r,x,u) - ℓ(r,y,v)| ≤ cst (|x - y| + |u - v|)`.
    pub lipschitz: Option<f64>,
}

impl CostSpec {
    pub fn new(ell: ScalarField) -> Self {
        Self { ell, bound: None, lipschitz: None }
    }

    pub fn with_constants(mut self, bound: f64, lipschitz: f64) -> Self {
        self.bound = Some(bound);
        self.lipschitz = Some(lipschitz);
        self
    }

    /// Checks the declared Lipschitz constant on sample pairs.
    pub fn check_lipschitz(&self, pairs: &[((f64, f64, f64), (f64, f64, f64))]) -> Result<f64> {
        let observed = self.ell.lipschitz_ratio(pairs);
        match self.lipschitz {
            Some(c) if observed > c * (1.0 + 1e-9) => Err(Error::InvalidParameter(format!(
                "cost `{}` has Lipschitz ratio {observed} above declared {c}",
                self.ell.name()
            ))),
            _ => Ok(observed),
        }
    }
}

/// State equation, cost, driver and initial value of one control problem.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub sigma: ScalarField,
    pub drift: ScalarField,
    pub cost: CostSpec,
    pub driver: Driver,
    pub x0: f64,
    pub control_set: ControlSet,
    pub mode: SolveMode,
    pub scheme: YoungScheme,
    flow: Option<Arc<FlowSolver>>,
}

impl ControlProblem {
    pub fn new(
        sigma: ScalarField,
        drift: ScalarField,
        cost: CostSpec,
        driver: Driver,
        x0: f64,
        control_set: ControlSet,
    ) -> Result<Self> {
        let flow = if sigma.depends_on_control() {
            None
        } else {
            Some(Arc::new(FlowSolver::for_driver(sigma.clone(), &driver.path)?))
        };
        Ok(Self {
            sigma,
            drift,
            cost,
            driver,
            x0,
            control_set,
            mode: SolveMode::Rk4,
            scheme: YoungScheme::Taylor,
            flow,
        })
    }

    /// Uses an exact flow for `σ` in the Doss–Sussmann route.
    pub fn with_closed_form_flow(mut self, f: FlowFn) -> Result<Self> {
        let fs = FlowSolver::for_driver(self.sigma.clone(), &self.driver.path)?.with_closed_form(f);
        self.flow = Some(Arc::new(fs));
        Ok(self)
    }

    pub fn with_mode(mut self, mode: SolveMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_scheme(mut self, scheme: YoungScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.driver.path.horizon()
    }

    pub fn n_steps(&self) -> usize {
        self.driver.path.n_steps()
    }

    /// The flow solver, available when `σ` does not depend on the control.
    pub fn flow(&self) -> Result<&FlowSolver> {
        self.flow.as_deref().ok_or_else(|| {
            Error::UnsupportedRegime(format!(
                "diffusion `{}` depends on the control; relaxed controls need a control-free diffusion",
                self.sigma.name()
            ))
        })
    }

    /// State under an ordinary grid control: Doss–Sussmann when `σ` is
    /// control-free, the direct Young scheme otherwise.
    pub fn solve_ordinary(&self, u: &GridPath) -> Result<GridPath> {
        match &self.flow {
            Some(fs) => {
                Ok(solve_controlled(fs, &self.drift, &self.driver.path, Control::Ordinary(u), self.x0, self.mode)?.x)
            }
            None => scheme_path(&self.sigma, &self.drift, &self.driver.path, u, self.x0, self.scheme),
        }
    }

    pub fn solve_relaxed(&self, q: &StepRelaxedControl) -> Result<DossSolution> {
        solve_controlled(self.flow()?, &self.drift, &self.driver.path, Control::Relaxed(q), self.x0, self.mode)
    }

    /// `J(u) = ∫ ℓ(r, x_r, u_r) dr` by the trapezoid rule, the control held
    /// on each step.
    pub fn cost_ordinary(&self, u: &GridPath) -> Result<f64> {
        u.ensure_same_grid(&self.driver.path)?;
        let x = self.solve_ordinary(u)?;
        Ok(trapezoid_cost(&self.cost.ell, &x, |i| u.value(i)))
    }

    /// `J(q) = ∫∫ ℓ(r, x_r, a) q_r(da) dr` by the trapezoid rule.
    pub fn cost_relaxed(&self, q: &StepRelaxedControl) -> Result<f64> {
        let x = self.solve_relaxed(q)?.x;
        let ell = &self.cost.ell;
        let dt = x.dt();
        let mut acc = 0.0;
        for i in 0..x.n_steps() {
            let row = q.row_for_step(i, dt);
            let (t0, t1) = (x.time(i), x.time(i + 1));
            let (x0, x1) = (x.value(i), x.value(i + 1));
            acc += 0.5 * dt * (q.mix(row, |a| ell.eval(t0, x0, a)) + q.mix(row, |a| ell.eval(t1, x1, a)));
        }
        Ok(acc)
    }
}

fn trapezoid_cost(ell: &ScalarField, x: &GridPath, u_step: impl Fn(usize) -> f64) -> f64 {
    let dt = x.dt();
    let mut acc = 0.0;
    for i in 0..x.n_steps() {
        let u = u_step(i);
        acc += 0.5 * dt * (ell.eval(x.time(i), x.value(i), u) + ell.eval(x.time(i + 1), x.value(i + 1), u));
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Relaxed,
    Parametric,
}

/// Optimizer output.
#[derive(Debug, Clone, Serialize)]
pub struct OptimReport {
    pub regime: Regime,
    pub method: String,
    pub best_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relaxed: Option<StepRelaxedControl>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    /// Best cost after each iteration of the winning run.
    pub trace: Vec<f64>,
    /// Final cost of every start, in start order.
    pub start_costs: Vec<f64>,
    pub evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chattered_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_gap: Option<f64>,
}

impl OptimReport {
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,cost")?;
        for (i, c) in self.trace.iter().enumerate() {
            writeln!(w, "{i},{}", fmt_f64(*c))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxedMethod {
    ProjectedGradient,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedOptions {
    pub fd_step: f64,
    pub max_iter: usize,
    pub step_tol: f64,
    /// Random simplex starts in addition to uniform weights.
    pub random_starts: usize,
    pub seed: u64,
    /// Exhaustive search uses weights in multiples of `1 / resolution`.
    pub resolution: usize,
    pub max_grid_points: usize,
    /// Refinement level of the chattered control in the report.
    pub chatter_level: usize,
}

impl Default for RelaxedOptions {
    fn default() -> Self {
        Self {
            fd_step: 1e-4,
            max_iter: 200,
            step_tol: 1e-6,
            random_starts: 5,
            seed: 0,
            resolution: 5,
            max_grid_points: 100_000,
            chatter_level: 16,
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// All weight vectors on the `k`-simplex with entries in multiples of `1/r`,
/// in lexicographic order of the integer compositions.
pub fn simplex_lattice(k: usize, r: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in (0..=left).rev() {
            cur.push(v);
            rec(k - 1, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, r, &mut Vec::new(), &mut out);
    out.into_iter().map(|c| c.into_iter().map(|v| v as f64 / r as f64).collect()).collect()
}

/// Number of points of the exhaustive grid: `C(r + k - 1, k - 1)^M`.
pub fn exhaustive_size(k: usize, m: usize, r: usize) -> usize {
    binomial(r + k - 1, k - 1).saturating_pow(m as u32)
}

/// Largest resolution whose exhaustive grid stays within `budget` points.
pub fn max_resolution(k: usize, m: usize, budget: usize) -> usize {
    let mut r = 1;
    while exhaustive_size(k, m, r + 1) <= budget && r < 10_000 {
        r += 1;
    }
    r
}

struct RelaxedObjective<'a> {
    problem: &'a ControlProblem,
    template: StepRelaxedControl,
    evaluations: AtomicUsize,
}

impl RelaxedObjective<'_> {
    fn eval(&self, w: &[f64]) -> Result<f64> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.problem.cost_relaxed(&self.template.with_raw_weights(w))
    }

    fn gradient(&self, w: &[f64], h: f64) -> Result<Vec<f64>> {
        (0..w.len())
            .into_par_iter()
            .map(|i| {
                let mut p = w.to_vec();
                p[i] = w[i] + h;
                let fp = self.eval(&p)?;
                p[i] = w[i] - h;
                let fm = self.eval(&p)?;
                Ok((fp - fm) / (2.0 * h))
            })
            .collect()
    }
}

fn project_rows(v: &[f64], k: usize) -> Vec<f64> {
    v.chunks(k).flat_map(project_simplex).collect()
}

struct PgRun {
    weights: Vec<f64>,
    cost: f64,
    trace: Vec<f64>,
}

fn projected_gradient(obj: &RelaxedObjective<'_>, start: Vec<f64>, k: usize, opts: &RelaxedOptions) -> Result<PgRun> {
    let mut w = start;
    let mut f = obj.eval(&w)?;
    let mut trace = vec![f];
    let mut step = 1.0;
    let abort = |e: Error, trace: &[f64]| {
        Error::Optimization(format!(
            "projected gradient aborted after {} iterations (last cost {:?}): {e}",
            trace.len() - 1,
            trace.last()
        ))
    };
    for _ in 0..opts.max_iter {
        let grad = obj.gradient(&w, opts.fd_step).map_err(|e| abort(e, &trace))?;
        let mut accepted = None;
        while step >= 1e-12 {
            let trial: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect();
            let cand = project_rows(&trial, k);
            let decrease: f64 = grad.iter().zip(cand.iter().zip(&w)).map(|(g, (c, wi))| g * (c - wi)).sum();
            let fc = obj.eval(&cand).map_err(|e| abort(e, &trace))?;
            if fc <= f + 1e-4 * decrease {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let moved = cand.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = cand;
        f = fc;
        trace.push(f);
        step = (step * 2.0).min(1e3);
        if moved < opts.step_tol {
            break;
        }
    }
    Ok(PgRun { weights: w, cost: f, trace })
}

/// Minimizes `J(q)` over step relaxed controls on the given cells and atoms.
pub fn optimize_relaxed(
    problem: &ControlProblem,
    atoms: &[f64],
    cells: &[f64],
    method: RelaxedMethod,
    opts: &RelaxedOptions,
) -> Result<OptimReport> {
    problem.flow()?;
    let k = atoms.len();
    let m = cells.len().saturating_sub(1);
    let uniform = vec![1.0 / k as f64; k];
    let template =
        StepRelaxedControl::new(cells.to_vec(), atoms.to_vec(), vec![uniform.clone(); m], problem.control_set)?;
    let obj = RelaxedObjective { problem, template, evaluations: AtomicUsize::new(0) };

    let (weights, cost, trace, start_costs, name) = match method {
        RelaxedMethod::ProjectedGradient => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut starts = vec![uniform.repeat(m)];
            for _ in 0..opts.random_starts {
                let mut s = Vec::with_capacity(m * k);
                for _ in 0..m {
                    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
                    let sum: f64 = e.iter().sum();
                    s.extend(e.iter().map(|v: &f64| v / sum));
                }
                starts.push(project_rows(&s, k));
            }
            let runs: Vec<PgRun> =
                starts.into_par_iter().map(|s| projected_gradient(&obj, s, k, opts)).collect::<Result<_>>()?;
            let start_costs: Vec<f64> = runs.iter().map(|r| r.cost).collect();
            let best = runs.into_iter().reduce(|a, b| if b.cost < a.cost { b } else { a }).expect("at least one start");
            (best.weights, best.cost, best.trace, start_costs, "projected_gradient")
        }
        RelaxedMethod::Exhaustive => {
            let size = exhaustive_size(k, m, opts.resolution);
            if size > opts.max_grid_points {
                return Err(Error::InstanceSize(format!(
                    "exhaustive grid has {size} points (k = {k}, M = {m}, resolution 1/{}), limit {}",
                    opts.resolution, opts.max_grid_points
                )));
            }
            let lattice = simplex_lattice(k, opts.resolution);
            let per_cell = lattice.len();
            let costs: Vec<f64> = (0..size)
                .into_par_iter()
                .map(|idx| {
                    let mut rest = idx;
                    let mut w = Vec::with_capacity(m * k);
                    for _ in 0..m {
                        w.extend_from_slice(&lattice[rest % per_cell]);
                        rest /= per_cell;
                    }
                    obj.eval(&w)
                })
                .collect::<Result<_>>()?;
            let (best, &cost) =
                costs.iter().enumerate().reduce(|a, b| if b.1 < a.1 { b } else { a }).expect("nonempty grid");
            let mut w = Vec::with_capacity(m * k);
            let mut rest = best;
            for _ in 0..m {
                w.extend_from_slice(&lattice[rest % per_cell]);
                rest /= per_cell;
            }
            (w, cost, vec![cost], vec![cost], "exhaustive")
        }
    };
    let q = obj.template.with_flat_weights(&project_rows(&weights, k))?;
    let chattered = chatter(&q, opts.chatter_level, problem.n_steps())?;
    let chattered_cost = problem.cost_ordinary(&chattered.control)?;
    Ok(OptimReport {
        regime: Regime::Relaxed,
        method: name.to_owned(),
        best_cost: cost,
        relaxed: Some(q),
        coefficients: None,
        trace,
        start_costs,
        evaluations: obj.evaluations.load(Ordering::Relaxed),
        chattered_cost: Some(chattered_cost),
        oracle_gap: None,
    })
}

/// Relaxed versus ordinary infimum on a small instance.
#[derive(Debug, Clone, Serialize)]
pub struct InfComparison {
    pub relaxed_inf: f64,
    pub ordinary_inf: f64,
    pub gap: f64,
    /// Best atom-valued control constant on each cell.
    pub enumeration_inf: f64,
    /// `(m, J(chatter_m(q*)))` for the relaxed optimum `q*`.
    pub chattered: Vec<(usize, f64)>,
}

pub const CHATTER_LEVELS: [usize; 5] = [1, 2, 4, 8, 16];

/// Compares the relaxed optimum with the best ordinary controls found by
/// enumerating all `k^M` atom-valued cell controls and by chattering the
/// relaxed optimum at `m ∈ {1, 2, 4, 8, 16}`.
pub fn inf_comparison(
    problem: &ControlProblem,
    atoms: &[f64],
    cells: &[f64],
    opts: &RelaxedOptions,
) -> Result<InfComparison> {
    let k = atoms.len();
    let m = cells.len() - 1;
    let count = (k as f64).powi(m as i32);
    if count > opts.max_grid_points as f64 {
        return Err(Error::InstanceSize(format!("{k}^{m} ordinary controls exceed {}", opts.max_grid_points)));
    }
    let count = count as usize;
    let report = optimize_relaxed(problem, atoms, cells, RelaxedMethod::ProjectedGradient, opts)?;
    let q = report.relaxed.expect("relaxed report carries its control");
    let n = problem.n_steps();
    let enumerated: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let mut rest = idx;
            let mut rows = Vec::with_capacity(m);
            for _ in 0..m {
                let mut row = vec![0.0; k];
                row[rest % k] = 1.0;
                rest /= k;
                rows.push(row);
            }
            let dirac = StepRelaxedControl::new(cells.to_vec(), atoms.to_vec(), rows, problem.control_set)?;
            problem.cost_ordinary(&chatter(&dirac, 1, n)?.control)
        })
        .collect::<Result<_>>()?;
    let enumeration_inf = enumerated.iter().copied().fold(f64::INFINITY, f64::min);
    let chattered: Vec<(usize, f64)> = CHATTER_LEVELS
        .par_iter()
        .map(|&lvl| Ok((lvl, problem.cost_ordinary(&chatter(&q, lvl, n)?.control)?)))
        .collect::<Result<_>>()?;
    let ordinary_inf = chattered.iter().map(|c| c.1).fold(enumeration_inf, f64::min);
    Ok(InfComparison {
        relaxed_inf: report.best_cost,
        ordinary_inf,
        gap: ordinary_inf - report.best_cost,
        enumeration_inf,
        chattered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `(t/T)^k`, `k = 0..d-1`.
    Poly,
    /// `1, sin(2πt/T), cos(2πt/T), sin(4πt/T), ...`.
    Fourier,
}

/// Controls `u = Σ c_k φ_k` with coefficients in `[-c_max, c_max]^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParametricFamily {
    pub basis: Basis,
    pub dim: usize,
    pub c_max: f64,
    pub horizon: f64,
    /// Declared Hölder index of the members.
    pub index: f64,
}

impl ParametricFamily {
    pub fn new(basis: Basis, dim: usize, c_max: f64, horizon: f64, index: f64) -> Result<Self> {
        if dim == 0 || !(c_max > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidParameter("family needs d ≥ 1, c_max > 0 and T > 0".into()));
        }
        if !(index > 0.0 && index <= 1.0) {
            return Err(Error::InvalidParameter(format!("family Hölder index {index} outside (0, 1]")));
        }
        Ok(Self { basis, dim, c_max, horizon, index })
    }

    fn phi(&self, k: usize, t: f64) -> f64 {
        let s = t / self.horizon;
        match self.basis {
            Basis::Poly => s.powi(k as i32),
            Basis::Fourier => {
                if k == 0 {
                    return 1.0;
                }
                let j = k.div_ceil(2) as f64;
                let arg = 2.0 * std::f64::consts::PI * j * s;
                if k % 2 == 1 {
                    arg.sin()
                } else {
                    arg.cos()
                }
            }
        }
    }

    fn phi_lipschitz(&self, k: usize) -> f64 {
        match self.basis {
            Basis::Poly => k as f64 / self.horizon,
            Basis::Fourier => 2.0 * std::f64::consts::PI * k.div_ceil(2) as f64 / self.horizon,
        }
    }

    pub fn eval(&self, c: &[f64], t: f64) -> f64 {
        c.iter().enumerate().map(|(k, ck)| ck * self.phi(k, t)).sum()
    }

    /// Lipschitz bound `c_max Σ_k sup|φ_k'|` over the whole box.
    pub fn lipschitz_bound(&self) -> f64 {
        self.c_max * (0..self.dim).map(|k| self.phi_lipschitz(k)).sum::<f64>()
    }

    /// `M = L T^{1-µ}` bounds the µ-seminorm of every member.
    pub fn seminorm_bound(&self) -> f64 {
        self.lipschitz_bound() * self.horizon.powf(1.0 - self.index)
    }

    pub fn clip(&self, c: &[f64]) -> Vec<f64> {
        c.iter().map(|v| v.clamp(-self.c_max, self.c_max)).collect()
    }

    pub fn control(&self, c: &[f64], n_steps: usize) -> Result<ControlPath> {
        if c.len() != self.dim {
            return Err(Error::InvalidParameter(format!("{} coefficients for dimension {}", c.len(), self.dim)));
        }
        let path = GridPath::from_fn(self.horizon, n_steps, |t| self.eval(c, t))?;
        ControlPath::new(path, self.index, self.seminorm_bound())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParametricMethod {
    NelderMead,
    /// Tensor grid with 11 points per axis, then golden-section refinement
    /// along each axis around the best grid point.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametricOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub grid_points: usize,
    pub refine_tol: f64,
}

impl Default for ParametricOptions {
    fn default() -> Self {
        Self { restarts: 3, max_iter: 2000, grid_points: 11, refine_tol: 1e-7 }
    }
}

/// `J(c)` for a member of the family, via the direct Young scheme.
pub fn parametric_cost(problem: &ControlProblem, family: &ParametricFamily, c: &[f64]) -> Result<f64> {
    let u = family.control(c, problem.n_steps())?;
    let x = young_solve(&problem.sigma, &problem.drift, &problem.driver, &u, problem.x0, problem.scheme)?;
    Ok(trapezoid_cost(&problem.cost.ell, &x, |i| u.path().value(i)))
}

struct ParamObjective<'a> {
    problem: &'a ControlProblem,
    family: &'a ParametricFamily,
    evaluations: AtomicUsize,
    failures: AtomicUsize,
}

impl ParamObjective<'_> {
    /// Failed solves count as `+∞`.
    fn eval(&self, c: &[f64]) -> f64 {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        match parametric_cost(self.problem, self.family, &self.family.clip(c)) {
            Ok(v) if v.is_finite() => v,
            _ => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                f64::INFINITY
            }
        }
    }
}

fn nelder_mead(
    obj: &ParamObjective<'_>,
    start: &[f64],
    opts: &ParametricOptions,
    trace: &mut Vec<f64>,
) -> (Vec<f64>, f64) {
    let fam = obj.family;
    let d = start.len();
    let edge = 0.1 * 2.0 * fam.c_max;
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..d {
        let mut p = start.to_vec();
        p[i] = if p[i] + edge <= fam.c_max { p[i] + edge } else { p[i] - edge };
        simplex.push(p);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|p| obj.eval(p)).collect();
    let clip = |p: Vec<f64>| fam.clip(&p);
    for _ in 0..opts.max_iter {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();
        trace.push(fv[0]);
        let diameter = simplex[1..]
            .iter()
            .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < 1e-10 || (fv[d] - fv[0]).abs() <= 1e-15 * (1.0 + fv[0].abs()) && diameter < 1e-6 {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|p| p[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| clip(centroid.iter().zip(&simplex[d]).map(|(c, w)| c + t * (c - w)).collect());
        let xr = along(1.0);
        let fr = obj.eval(&xr);
        if fr < fv[0] {
            let xe = along(2.0);
            let fe = obj.eval(&xe);
            if fe < fr {
                simplex[d] = xe;
                fv[d] = fe;
            } else {
                simplex[d] = xr;
                fv[d] = fr;
            }
        } else if fr < fv[d - 1] {
            simplex[d] = xr;
            fv[d] = fr;
        } else {
            let (xc, fc) = if fr < fv[d] {
                let xc = along(0.5);
                let fc = obj.eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = obj.eval(&xc);
                (xc, fc)
            };
            if fc < fv[d].min(fr) {
                simplex[d] = xc;
                fv[d] = fc;
            } else {
                for i in 1..=d {
                    simplex[i] = clip(simplex[i].iter().zip(&simplex[0]).map(|(p, b)| b + 0.5 * (p - b)).collect());
                    fv[i] = obj.eval(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).expect("nonempty simplex");
    (simplex[best].clone(), fv[best])
}

/// Golden-section minimization of `f` on `[a, b]`.
fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Minimizes `J` over the coefficient box of `family`.
pub fn optimize_parametric(
    problem: &ControlProblem,
    family: &ParametricFamily,
    method: ParametricMethod,
    opts: &ParametricOptions,
) -> Result<OptimReport> {
    let obj = ParamObjective { problem, family, evaluations: AtomicUsize::new(0), failures: AtomicUsize::new(0) };
    let d = family.dim;
    let mut trace = Vec::new();
    let mut start_costs = Vec::new();
    let (best, cost, name) = match method {
        ParametricMethod::NelderMead => {
            let (mut best, mut cost) = nelder_mead(&obj, &vec![0.0; d], opts, &mut trace);
            start_costs.push(cost);
            for _ in 0..opts.restarts {
                let (c, f) = nelder_mead(&obj, &best, opts, &mut trace);
                start_costs.push(f);
                let improved = f < cost;
                if improved {
                    best = c;
                    cost = f;
                }
                if !improved {
                    break;
                }
            }
            (best, cost, "nelder_mead")
        }
        ParametricMethod::Grid => {
            if d > 3 {
                return Err(Error::InstanceSize(format!("grid oracle supports d ≤ 3, got {d}")));
            }
            let p = opts.grid_points;
            let axis: Vec<f64> =
                (0..p).map(|i| -family.c_max + 2.0 * family.c_max * i as f64 / (p - 1) as f64).collect();
            let total = p.pow(d as u32);
            let point = |idx: usize| -> Vec<f64> {
                let mut rest = idx;
                (0..d)
                    .map(|_| {
                        let v = axis[rest % p];
                        rest /= p;
                        v
                    })
                    .collect()
            };
            let costs: Vec<f64> = (0..total).into_par_iter().map(|i| obj.eval(&point(i))).collect();
            let (bi, &bf) =
                costs.iter().enumerate().reduce(|a, b| if b.1 < a.1 { b } else { a }).expect("nonempty grid");
            let mut best = point(bi);
            let mut cost = bf;
            trace.push(cost);
            start_costs.push(cost);
            let h = axis[1] - axis[0];
            for _sweep in 0..2 {
                for j in 0..d {
                    let lo = (best[j] - h).max(-family.c_max);
                    let hi = (best[j] + h).min(family.c_max);
                    let (x, f) = golden(
                        |v| {
                            let mut c = best.clone();
                            c[j] = v;
                            obj.eval(&c)
                        },
                        lo,
                        hi,
                        opts.refine_tol,
                    );
                    if f < cost {
                        best[j] = x;
                        cost = f;
                    }
                    trace.push(cost);
                }
            }
            (best, cost, "grid")
        }
    };
    if !cost.is_finite() {
        return Err(Error::Optimization(format!(
            "all {} cost evaluations failed",
            obj.evaluations.load(Ordering::Relaxed)
        )));
    }
    Ok(OptimReport {
        regime: Regime::Parametric,
        method: name.to_owned(),
        best_cost: cost,
        relaxed: None,
        coefficients: Some(family.clip(&best)),
        trace,
        start_costs,
        evaluations: obj.evaluations.load(Ordering::Relaxed),
        chattered_cost: None,
        oracle_gap: None,
    })
}
