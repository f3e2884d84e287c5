//! Doss–Sussmann solver for `x_t = x_0 + ∫σ(r, x_r) dg_r + ∫b(r, x_r, u_r) dr`.
//!
//! The flow `φ(r, g, y)` solves `∂φ/∂g = σ(r, φ)`, `φ(r, 0, y) = y`. With
//! `y` the solution of the ordinary equation `y' = h(r, g_r, u_r, y)` where
//! `h = (b(r, φ, u) - ∂φ/∂r) / (∂φ/∂y)`, the state is `x_t = φ(t, g_t, y_t)`.
//! The driver enters through its increment `g_t - g_0`, so `y_0 = x_0`.
//!
//! Grid controls are held constant on each grid step: step `i` uses `u_i`,
//! and a relaxed control uses the weight row of the cell containing the
//! step midpoint.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::relaxed::StepRelaxedControl;
use crate::signal::GridPath;

const CACHE_LIMIT: usize = 1 << 20;
const MAX_FLOW_STEPS: usize = 100_000;

/// `φ`, `∂φ/∂y` and `∂φ/∂r` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowValue {
    pub phi: f64,
    pub dphi_dy: f64,
    pub dphi_dr: f64,
}

/// How `∂φ/∂y` is obtained from the inner integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sensitivity {
    /// `exp(∫σ_x(φ) ds)` when σ is autonomous, the variational equation otherwise.
    #[default]
    Auto,
    ClosedForm,
    Variational,
}

pub type FlowFn = Arc<dyn Fn(f64, f64, f64) -> FlowValue + Send + Sync>;

/// The flow `φ(r, g, y)` of `σ`, computed by adaptive Dormand–Prince
/// integration in `g` unless a closed form is attached.
pub struct FlowSolver {
    sigma: ScalarField,
    g_range: (f64, f64),
    tol: f64,
    h_fd: f64,
    sensitivity: Sensitivity,
    closed_form: Option<FlowFn>,
    cache: RwLock<HashMap<[u64; 3], FlowValue>>,
}

impl std::fmt::Debug for FlowSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowSolver")
            .field("sigma", &self.sigma)
            .field("g_range", &self.g_range)
            .field("tol", &self.tol)
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

impl FlowSolver {
    pub fn new(sigma: ScalarField, g_range: (f64, f64)) -> Result<Self> {
        if sigma.depends_on_control() {
            return Err(Error::UnsupportedRegime(format!(
                "diffusion `{}` depends on the control; use the direct Young-Euler solver",
                sigma.name()
            )));
        }
        if !(g_range.0 <= 0.0 && 0.0 <= g_range.1) {
            return Err(Error::InvalidParameter(format!("driver range {g_range:?} must contain 0")));
        }
        Ok(Self {
            h_fd: sigma.fd_step(),
            sigma,
            g_range,
            tol: 1e-10,
            sensitivity: Sensitivity::Auto,
            closed_form: None,
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// Range covering the increments `g_t - g_0` of `g`, padded by 10%.
    pub fn for_driver(sigma: ScalarField, g: &GridPath) -> Result<Self> {
        let g0 = g.first();
        let (lo, hi) = g.values().iter().fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v - g0), hi.max(v - g0)));
        let pad = 0.1 * (hi - lo) + 1e-12;
        Self::new(sigma, (lo - pad, hi + pad))
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_sensitivity(mut self, s: Sensitivity) -> Self {
        self.sensitivity = s;
        self
    }

    /// Replaces the inner integration by an exact flow.
    pub fn with_closed_form(mut self, f: FlowFn) -> Self {
        self.closed_form = Some(f);
        self
    }

    pub fn sigma(&self) -> &ScalarField {
        &self.sigma
    }

    pub fn g_range(&self) -> (f64, f64) {
        self.g_range
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }

    /// `φ(r, g, y)` with its partial derivatives.
    pub fn eval(&self, r: f64, g: f64, y: f64) -> Result<FlowValue> {
        let (lo, hi) = self.g_range;
        if !(g >= lo && g <= hi) {
            return Err(Error::Domain { x: g, a: lo, b: hi });
        }
        if let Some(cf) = &self.closed_form {
            return Ok(cf(r, g, y));
        }
        let key = [r.to_bits(), g.to_bits(), y.to_bits()];
        if let Some(v) = self.cache.read().ok().and_then(|c| c.get(&key).copied()) {
            return Ok(v);
        }
        let (phi, dphi_dy) = self.integrate(r, g, y)?;
        let dphi_dr = if self.sigma.is_time_dependent() {
            let h = self.h_fd;
            (self.integrate(r + h, g, y)?.0 - self.integrate(r - h, g, y)?.0) / (2.0 * h)
        } else {
            0.0
        };
        let v = FlowValue { phi, dphi_dy, dphi_dr };
        if let Ok(mut c) = self.cache.write() {
            if c.len() >= CACHE_LIMIT {
                c.clear();
            }
            c.insert(key, v);
        }
        Ok(v)
    }

    /// Integrates `(φ, ∫σ_x, J)` from `s = 0` to `s = g` with DOPRI5.
    fn integrate(&self, r: f64, g: f64, y: f64) -> Result<(f64, f64)> {
        let sigma = &self.sigma;
        let rhs = |z: &[f64; 3]| -> [f64; 3] {
            let sx = sigma.dx(r, z[0], 0.0);
            [sigma.eval(r, z[0], 0.0), sx, sx * z[2]]
        };
        let mut z = [y, 0.0, 1.0];
        let closed = match self.sensitivity {
            Sensitivity::Auto => !sigma.is_time_dependent(),
            Sensitivity::ClosedForm => true,
            Sensitivity::Variational => false,
        };
        if g == 0.0 {
            return Ok((y, 1.0));
        }
        let dir = g.signum();
        let total = g.abs();
        let mut s = 0.0;
        let mut h = total.min(0.05);
        let mut k1 = rhs(&z);
        let mut steps = 0;
        while s < total {
            if steps >= MAX_FLOW_STEPS || h < 1e-14 * total.max(1.0) {
                return Err(Error::Numerical(format!(
                    "flow integration stalled at s = {} of {g} (r = {r}, y = {y})",
                    dir * s
                )));
            }
            steps += 1;
            let last = s + h >= total;
            let hh = if last { total - s } else { h };
            let (z_new, err, k7) = dopri_step(&rhs, &z, &k1, dir * hh);
            let scale = |i: usize| self.tol * (1.0 + z[i].abs().max(z_new[i].abs()));
            let e = (0..3).map(|i| (err[i] / scale(i)).powi(2)).sum::<f64>() / 3.0;
            let e = e.sqrt();
            if !e.is_finite() {
                h *= 0.2;
                continue;
            }
            if e <= 1.0 {
                s = if last { total } else { s + hh };
                z = z_new;
                k1 = k7;
            }
            h = hh * (0.9 * e.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("flow blew up for r = {r}, g = {g}, y = {y}")));
        }
        Ok((z[0], if closed { z[1].exp() } else { z[2] }))
    }
}

/// One Dormand–Prince 5(4) step; returns the new state, the embedded error
/// estimate and the derivative at the new point (FSAL).
fn dopri_step(
    f: &impl Fn(&[f64; 3]) -> [f64; 3],
    z: &[f64; 3],
    k1: &[f64; 3],
    h: f64,
) -> ([f64; 3], [f64; 3], [f64; 3]) {
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    const E1: f64 = 71.0 / 57600.0;
    const E3: f64 = -71.0 / 16695.0;
    const E4: f64 = 71.0 / 1920.0;
    const E5: f64 = -17253.0 / 339200.0;
    const E6: f64 = 22.0 / 525.0;
    const E7: f64 = -1.0 / 40.0;

    let comb = |c: &[(f64, &[f64; 3])]| -> [f64; 3] {
        let mut out = *z;
        for (w, k) in c {
            for i in 0..3 {
                out[i] += h * w * k[i];
            }
        }
        out
    };
    let k2 = f(&comb(&[(A21, k1)]));
    let k3 = f(&comb(&[(A31, k1), (A32, &k2)]));
    let k4 = f(&comb(&[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = f(&comb(&[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = f(&comb(&[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
    let z_new = comb(&[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = f(&z_new);
    let mut err = [0.0; 3];
    for i in 0..3 {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (z_new, err, k7)
}

/// Exact flow of `σ ≡ c`: `φ = y + c g`.
pub fn constant_flow(c: f64) -> FlowFn {
    Arc::new(move |_, g, y| FlowValue { phi: y + c * g, dphi_dy: 1.0, dphi_dr: 0.0 })
}

/// Exact flow of `σ(x) = k x`: `φ = y e^{k g}`.
pub fn linear_flow(k: f64) -> FlowFn {
    Arc::new(move |_, g, y| {
        let e = (k * g).exp();
        FlowValue { phi: y * e, dphi_dy: e, dphi_dr: 0.0 }
    })
}

/// The control active on a step: an ordinary value or a relaxed weight row.
#[derive(Debug, Clone, Copy)]
pub enum ControlValue<'a> {
    Atom(f64),
    Mixture { atoms: &'a [f64], weights: &'a [f64] },
}

impl ControlValue<'_> {
    /// `b(r, x, u)` or `Σ_i w_i b(r, x, a_i)`.
    #[inline]
    pub fn average(&self, f: impl Fn(f64) -> f64) -> f64 {
        match *self {
            ControlValue::Atom(u) => f(u),
            ControlValue::Mixture { atoms, weights } => {
                let mut acc = 0.0;
                for (&w, &a) in weights.iter().zip(atoms) {
                    if w != 0.0 {
                        acc += w * f(a);
                    }
                }
                acc
            }
        }
    }
}

/// A control on the solver grid.
#[derive(Debug, Clone, Copy)]
pub enum Control<'a> {
    Ordinary(&'a GridPath),
    Relaxed(&'a StepRelaxedControl),
}

impl<'a> Control<'a> {
    fn check(&self, g: &GridPath) -> Result<()> {
        match self {
            Control::Ordinary(u) => g.ensure_same_grid(u),
            Control::Relaxed(q) => {
                if (q.horizon() - g.horizon()).abs() > 1e-12 * g.horizon() {
                    return Err(Error::Incompatible(format!(
                        "relaxed control horizon {} differs from driver horizon {}",
                        q.horizon(),
                        g.horizon()
                    )));
                }
                Ok(())
            }
        }
    }

    /// Control held on grid step `i`.
    pub fn on_step(&self, i: usize, dt: f64) -> ControlValue<'a> {
        match *self {
            Control::Ordinary(u) => ControlValue::Atom(u.value(i)),
            Control::Relaxed(q) => ControlValue::Mixture { atoms: q.atoms(), weights: q.row_for_step(i, dt) },
        }
    }
}

/// `h = (B - ∂φ/∂r) / (∂φ/∂y)` with `B` the (averaged) drift at `φ(r, g, y)`.
pub fn transformed_drift(fs: &FlowSolver, b: &ScalarField, r: f64, g: f64, u: ControlValue<'_>, y: f64) -> Result<f64> {
    let v = fs.eval(r, g, y)?;
    let drift = u.average(|a| b.eval(r, v.phi, a));
    Ok((drift - v.dphi_dr) / v.dphi_dy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMode {
    Rk4,
    /// Fixed-point iteration on the integral equation for `y`, with Simpson
    /// quadrature on the half-step grid.
    Picard {
        tol: f64,
        max_iter: usize,
    },
}

impl Default for SolveMode {
    fn default() -> Self {
        SolveMode::Rk4
    }
}

impl SolveMode {
    pub fn picard() -> Self {
        SolveMode::Picard { tol: 1e-12, max_iter: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SolveDiagnostics {
    pub picard_iterations: usize,
    /// Ratio of the last two sup-norm Picard updates.
    pub final_contraction: f64,
    pub max_y_step: f64,
    pub composed_sup_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DossSolution {
    pub x: GridPath,
    pub y: GridPath,
    pub diagnostics: SolveDiagnostics,
}

/// Solves `y_t = y_0 + ∫_0^t h(r, g_r - g_0, u_r, y_r) dr` on the grid of `g`.
pub fn solve_y(
    fs: &FlowSolver,
    b: &ScalarField,
    g: &GridPath,
    control: Control<'_>,
    y0: f64,
    mode: SolveMode,
) -> Result<(GridPath, SolveDiagnostics)> {
    if !y0.is_finite() {
        return Err(Error::InvalidParameter(format!("initial value {y0} is not finite")));
    }
    control.check(g)?;
    let n = g.n_steps();
    let dt = g.dt();
    let g0 = g.first();
    let gs: Vec<f64> = g.values().iter().map(|v| v - g0).collect();
    let h = |r: f64, gv: f64, u: ControlValue<'_>, y: f64| transformed_drift(fs, b, r, gv, u, y);

    let mut diag = SolveDiagnostics::default();
    let ys = match mode {
        SolveMode::Rk4 => {
            let mut ys = Vec::with_capacity(n + 1);
            ys.push(y0);
            let mut y = y0;
            for i in 0..n {
                let t = g.time(i);
                let gm = 0.5 * (gs[i] + gs[i + 1]);
                let u = control.on_step(i, dt);
                let k1 = h(t, gs[i], u, y)?;
                let k2 = h(t + 0.5 * dt, gm, u, y + 0.5 * dt * k1)?;
                let k3 = h(t + 0.5 * dt, gm, u, y + 0.5 * dt * k2)?;
                let k4 = h(t + dt, gs[i + 1], u, y + dt * k3)?;
                y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                if !y.is_finite() {
                    return Err(Error::Divergence { index: i + 1 });
                }
                ys.push(y);
            }
            ys
        }
        SolveMode::Picard { tol, max_iter } => {
            // Iterate on nodes t_0, t_{1/2}, t_1, ..., t_N.
            let m = 2 * n;
            let mut cur = vec![y0; m + 1];
            let mut prev_update = f64::NAN;
            let mut converged = false;
            for it in 1..=max_iter {
                let mut next = vec![y0; m + 1];
                let mut acc = y0;
                for i in 0..n {
                    // The control jumps at nodes, so both ends use step i's value.
                    let u = control.on_step(i, dt);
                    let t = g.time(i);
                    let f0 = h(t, gs[i], u, cur[2 * i])?;
                    let fm = h(t + 0.5 * dt, 0.5 * (gs[i] + gs[i + 1]), u, cur[2 * i + 1])?;
                    let f1 = h(t + dt, gs[i + 1], u, cur[2 * i + 2])?;
                    next[2 * i + 1] = acc + dt * (5.0 * f0 + 8.0 * fm - f1) / 24.0;
                    acc += dt * (f0 + 4.0 * fm + f1) / 6.0;
                    next[2 * i + 2] = acc;
                }
                if let Some(k) = next.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Divergence { index: k / 2 });
                }
                let update = cur.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                diag.picard_iterations = it;
                if prev_update.is_finite() && prev_update > 0.0 {
                    diag.final_contraction = update / prev_update;
                }
                prev_update = update;
                cur = next;
                if update <= tol * (1.0 + y0.abs()) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Convergence { iterations: max_iter, contraction: diag.final_contraction });
            }
            cur.into_iter().step_by(2).collect()
        }
    };
    diag.max_y_step = ys.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    Ok((GridPath::new(g.horizon(), ys)?, diag))
}

/// Solves the controlled equation and composes `x_t = φ(t, g_t - g_0, y_t)`.
pub fn solve_controlled(
    fs: &FlowSolver,
    b: &ScalarField,
    g: &GridPath,
    control: Control<'_>,
    x0: f64,
    mode: SolveMode,
) -> Result<DossSolution> {
    let (y, mut diagnostics) = solve_y(fs, b, g, control, x0, mode)?;
    let g0 = g.first();
    let x = (0..=g.n_steps())
        .map(|i| fs.eval(g.time(i), g.value(i) - g0, y.value(i)).map(|v| v.phi))
        .collect::<Result<Vec<_>>>()?;
    let x = GridPath::new(g.horizon(), x)?;
    diagnostics.composed_sup_norm = x.sup_norm();
    Ok(DossSolution { x, y, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relaxed::{embed_grid_control, ControlSet, StepRelaxedControl};
    use crate::signal::{fbm_generate, FbmSpec};

    fn sine_sigma() -> ScalarField {
        ScalarField::sigma("sin+2", |_, x| x.sin() + 2.0).autonomous().with_dx(|_, x, _| x.cos())
    }

    fn linear_sigma() -> ScalarField {
        ScalarField::sigma("x", |_, x| x).autonomous().with_dx(|_, _, _| 1.0)
    }

    fn zero_sigma() -> ScalarField {
        ScalarField::sigma("0", |_, _| 0.0).autonomous().with_dx(|_, _, _| 0.0)
    }

    #[test]
    fn linear_flow_matches_exponential() {
        let fs = FlowSolver::new(linear_sigma(), (-3.0, 3.0)).unwrap();
        for (g, y) in [(0.7, 1.0), (-1.3, 2.5), (2.9, -0.4)] {
            let v = fs.eval(0.0, g, y).unwrap();
            let e = f64::exp(g);
            assert!((v.phi - y * e).abs() <= 1e-9 * (y * e).abs(), "{g} {y}: {}", v.phi);
            assert!((v.dphi_dy - e).abs() <= 1e-9 * e);
            assert_eq!(v.dphi_dr, 0.0);
        }
    }

    #[test]
    fn constant_flow_is_translation() {
        let fs = FlowSolver::new(ScalarField::sigma("c", |_, _| 1.5).autonomous(), (-2.0, 2.0)).unwrap();
        let v = fs.eval(0.3, -1.2, 0.4).unwrap();
        assert!((v.phi - (0.4 - 1.8)).abs() < 1e-14);
        assert_eq!(fs.eval(0.3, 0.0, 0.4).unwrap().phi, 0.4);
    }

    #[test]
    fn closed_form_and_variational_sensitivities_agree() {
        let closed = FlowSolver::new(sine_sigma(), (-2.0, 2.0)).unwrap().with_sensitivity(Sensitivity::ClosedForm);
        let varia = FlowSolver::new(sine_sigma(), (-2.0, 2.0)).unwrap().with_sensitivity(Sensitivity::Variational);
        for (g, y) in [(0.5, 0.1), (-1.7, 2.0), (1.9, -3.0)] {
            let a = closed.eval(0.0, g, y).unwrap();
            let b = varia.eval(0.0, g, y).unwrap();
            assert!(a.dphi_dy > 0.0);
            assert!((a.dphi_dy - b.dphi_dy).abs() < 1e-6 * a.dphi_dy);
        }
    }

    #[test]
    fn flow_group_property() {
        let fs = FlowSolver::new(sine_sigma(), (-3.0, 3.0)).unwrap();
        for (g1, g2, y) in [(0.4, 0.9, 0.2), (-1.1, 0.6, 1.7), (1.2, -1.5, -0.5)] {
            let lhs = fs.eval(0.0, g1 + g2, y).unwrap().phi;
            let mid = fs.eval(0.0, g1, y).unwrap().phi;
            let rhs = fs.eval(0.0, g2, mid).unwrap().phi;
            assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn time_derivative_of_flow() {
        // σ(t, x) = (1 + t) x: φ = y e^{(1+t) g}, ∂φ/∂r = y g e^{(1+t) g}.
        let sigma = ScalarField::sigma("(1+t)x", |t, x| (1.0 + t) * x).with_dx(|t, _, _| 1.0 + t);
        let fs = FlowSolver::new(sigma, (-2.0, 2.0)).unwrap();
        let (r, g, y) = (0.3, 0.8, 1.4);
        let v = fs.eval(r, g, y).unwrap();
        let e = ((1.0 + r) * g).exp();
        assert!((v.phi - y * e).abs() < 1e-9 * y * e);
        assert!((v.dphi_dy - e).abs() < 1e-9 * e);
        assert!((v.dphi_dr - y * g * e).abs() < 1e-5 * y * g * e);
    }

    #[test]
    fn driver_outside_range_rejected() {
        let fs = FlowSolver::new(linear_sigma(), (-1.0, 1.0)).unwrap();
        assert!(matches!(fs.eval(0.0, 1.5, 1.0), Err(Error::Domain { .. })));
        let sig_u = ScalarField::sigma_u("u", |_, _, u| u);
        assert!(matches!(FlowSolver::new(sig_u, (-1.0, 1.0)), Err(Error::UnsupportedRegime(_))));
    }

    #[test]
    fn transformed_drift_examples() {
        let b = ScalarField::drift("u-x", |_, x, u| u - x);
        let fs0 = FlowSolver::new(zero_sigma(), (-1.0, 1.0)).unwrap();
        assert_eq!(transformed_drift(&fs0, &b, 0.2, 0.5, ControlValue::Atom(0.3), 1.1).unwrap(), 0.3 - 1.1);
        let atoms = [0.0, 1.0];
        let mix = ControlValue::Mixture { atoms: &atoms, weights: &[0.5, 0.5] };
        let v = transformed_drift(&fs0, &b, 0.2, 0.5, mix, 1.1).unwrap();
        assert!((v - 0.5 * ((0.0 - 1.1) + (1.0 - 1.1))).abs() < 1e-15);

        let bu = ScalarField::drift("u", |_, _, u| u);
        let fs1 = FlowSolver::new(linear_sigma(), (-2.0, 2.0)).unwrap();
        for (g, u) in [(0.7, 0.4), (-1.2, 2.0)] {
            let h = transformed_drift(&fs1, &bu, 0.0, g, ControlValue::Atom(u), 0.9).unwrap();
            assert!((h - u * f64::exp(-g)).abs() < 1e-9 * h.abs());
        }
    }

    fn fbm(seed: u64, n: usize) -> GridPath {
        fbm_generate(&FbmSpec::new(0.7, 1.0, n, seed)).unwrap()
    }

    #[test]
    fn zero_drift_keeps_y_constant() {
        let g = fbm(1, 256);
        let fs = FlowSolver::for_driver(sine_sigma(), &g).unwrap();
        let b = ScalarField::drift("0", |_, _, _| 0.0);
        let u = GridPath::constant(1.0, 256, 0.0).unwrap();
        let (y, _) = solve_y(&fs, &b, &g, Control::Ordinary(&u), 0.7, SolveMode::Rk4).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn linear_ode_by_rk4() {
        let n = 1 << 10;
        let g = GridPath::constant(1.0, n, 0.0).unwrap();
        let fs = FlowSolver::for_driver(zero_sigma(), &g).unwrap();
        let b = ScalarField::drift("-x", |_, x, _| -x);
        let u = GridPath::constant(1.0, n, 0.0).unwrap();
        let (y, _) = solve_y(&fs, &b, &g, Control::Ordinary(&u), 1.0, SolveMode::Rk4).unwrap();
        let err = (0..=n).map(|i| (y.value(i) - (-g.time(i)).exp()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn picard_agrees_with_rk4() {
        let n = 1 << 10;
        let g = fbm(7, n);
        let fs = FlowSolver::for_driver(sine_sigma(), &g).unwrap();
        let b = ScalarField::drift("u-x", |_, x, u| u - x);
        let u = GridPath::from_fn(1.0, n, |t| (2.0 * std::f64::consts::PI * t).sin()).unwrap();
        let (a, _) = solve_y(&fs, &b, &g, Control::Ordinary(&u), 0.5, SolveMode::Rk4).unwrap();
        let (p, d) = solve_y(&fs, &b, &g, Control::Ordinary(&u), 0.5, SolveMode::picard()).unwrap();
        let diff = a.sub(&p).unwrap().sup_norm();
        assert!(diff < 1e-5, "{diff}");
        assert!(d.picard_iterations >= 1 && d.picard_iterations <= 50);
        assert!(d.final_contraction < 1.0);
    }

    #[test]
    fn linear_equation_closed_form() {
        let n = 1 << 12;
        let g = fbm(3, n);
        let fs = FlowSolver::for_driver(linear_sigma(), &g).unwrap();
        let b = ScalarField::drift("0", |_, _, _| 0.0);
        let u = GridPath::constant(1.0, n, 0.0).unwrap();
        let sol = solve_controlled(&fs, &b, &g, Control::Ordinary(&u), 1.0, SolveMode::Rk4).unwrap();
        let err = (0..=n)
            .map(|i| {
                let exact = (g.value(i) - g.first()).exp();
                (sol.x.value(i) - exact).abs() / exact
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_driver_reduces_to_ode() {
        let n = 1 << 10;
        let g = GridPath::constant(1.0, n, 0.3).unwrap();
        let fs = FlowSolver::for_driver(sine_sigma(), &g).unwrap();
        let b = ScalarField::drift("u-x", |_, x, u| u - x);
        let u = GridPath::constant(1.0, n, 2.0).unwrap();
        let sol = solve_controlled(&fs, &b, &g, Control::Ordinary(&u), 0.0, SolveMode::Rk4).unwrap();
        // x' = 2 - x, x(0) = 0.
        let err = (0..=n).map(|i| (sol.x.value(i) - 2.0 * (1.0 - (-g.time(i)).exp())).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn dirac_relaxed_equals_ordinary() {
        let n = 512;
        let g = fbm(11, n);
        let fs = FlowSolver::for_driver(sine_sigma(), &g).unwrap();
        let b = ScalarField::drift("u-x", |_, x, u| u - x);
        let set = ControlSet::new(-1.0, 1.0).unwrap();
        let u = GridPath::constant(1.0, n, 0.6).unwrap();
        let q = StepRelaxedControl::constant(1.0, 4, vec![-0.2, 0.6], vec![0.0, 1.0], set).unwrap();
        let a = solve_controlled(&fs, &b, &g, Control::Ordinary(&u), 0.1, SolveMode::Rk4).unwrap();
        let r = solve_controlled(&fs, &b, &g, Control::Relaxed(&q), 0.1, SolveMode::Rk4).unwrap();
        assert!(a.x.sub(&r.x).unwrap().sup_norm() <= 1e-12);

        let bang = GridPath::from_fn(1.0, n, |t| if t < 0.4 { -1.0 } else { 1.0 }).unwrap();
        let e = embed_grid_control(&bang, set).unwrap();
        let a = solve_controlled(&fs, &b, &g, Control::Ordinary(&bang), 0.1, SolveMode::Rk4).unwrap();
        let r = solve_controlled(&fs, &b, &g, Control::Relaxed(&e), 0.1, SolveMode::Rk4).unwrap();
        assert!(a.x.sub(&r.x).unwrap().sup_norm() <= 1e-12);
    }

    #[test]
    fn relaxed_solution_continuous_in_weights() {
        let n = 512;
        let g = fbm(5, n);
        let fs = FlowSolver::for_driver(sine_sigma(), &g).unwrap();
        let b = ScalarField::drift("u-x", |_, x, u| u - x);
        let set = ControlSet::new(-1.0, 1.0).unwrap();
        let base = StepRelaxedControl::constant(1.0, 4, vec![-1.0, 1.0], vec![0.5, 0.5], set).unwrap();
        let x0 = solve_controlled(&fs, &b, &g, Control::Relaxed(&base), 0.2, SolveMode::Rk4).unwrap().x;
        let mut dists = Vec::new();
        for eps in [0.2, 0.1, 0.05] {
            let mut flat = base.flat_weights();
            flat[2] += eps / 2.0;
            flat[3] -= eps / 2.0;
            let q = base.with_flat_weights(&flat).unwrap();
            let x = solve_controlled(&fs, &b, &g, Control::Relaxed(&q), 0.2, SolveMode::Rk4).unwrap().x;
            dists.push(x.sub(&x0).unwrap().sup_norm());
        }
        assert!(dists[0] > dists[1] && dists[1] > dists[2], "{dists:?}");
    }

    #[test]
    fn closed_form_flows_match_integration() {
        let g = fbm(2, 256);
        let b = ScalarField::drift("u-x", |_, x, u| u - x);
        let u = GridPath::constant(1.0, 256, 0.3).unwrap();
        let num = FlowSolver::for_driver(linear_sigma(), &g).unwrap();
        let exact = FlowSolver::for_driver(linear_sigma(), &g).unwrap().with_closed_form(linear_flow(1.0));
        let a = solve_controlled(&num, &b, &g, Control::Ordinary(&u), 1.0, SolveMode::Rk4).unwrap();
        let c = solve_controlled(&exact, &b, &g, Control::Ordinary(&u), 1.0, SolveMode::Rk4).unwrap();
        assert!(a.x.sub(&c.x).unwrap().sup_norm() < 1e-8);
        assert!(num.cache_len() > 0 && exact.cache_len() == 0);
    }
}
