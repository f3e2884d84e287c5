//! Direct Young–Euler scheme for `x_t = x_0 + ∫σ(r, x_r, u_r) dg_r + ∫b(r, x_r, u_r) dr`
//! with a diffusion that may depend on the control, and the continuity probe
//! of the control-to-state map in Hölder norms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::signal::{holder_norm, holder_seminorm, GridPath};

/// A grid control with a declared Hölder index and seminorm bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    path: GridPath,
    index: f64,
    bound: f64,
}

impl ControlPath {
    /// Validates the declaration against the exact discrete seminorm.
    pub fn new(path: GridPath, index: f64, bound: f64) -> Result<Self> {
        if !(index > 0.0 && index <= 1.0) {
            return Err(Error::InvalidParameter(format!("control Hölder index {index} outside (0, 1]")));
        }
        let measured = holder_seminorm(&path, index, 0.0, path.horizon())?.seminorm;
        if measured > bound * (1.0 + 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "control {index}-seminorm {measured} exceeds declared bound {bound}"
            )));
        }
        Ok(Self { path, index, bound })
    }

    /// Declares the measured seminorm as the bound.
    pub fn measured(path: GridPath, index: f64) -> Result<Self> {
        let bound = holder_seminorm(&path, index, 0.0, path.horizon())?.seminorm;
        Self::new(path, index, bound)
    }

    pub fn path(&self) -> &GridPath {
        &self.path
    }

    pub fn index(&self) -> f64 {
        self.index
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

/// A driver with its declared Hölder index `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct Driver {
    pub path: GridPath,
    pub index: f64,
}

impl Driver {
    pub fn new(path: GridPath, index: f64) -> Result<Self> {
        if !(index > 0.5 && index <= 1.0) {
            return Err(Error::InvalidParameter(format!("driver Hölder index {index} must lie in (1/2, 1]")));
        }
        Ok(Self { path, index })
    }
}

/// One-step scheme for the Young equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YoungScheme {
    /// `x_{i+1} = x_i + σ(t_i, x_i, u_i)(g_{i+1} - g_i) + b(t_i, x_i, u_i) Δt`.
    #[default]
    Euler,
    /// Euler plus the scalar second-order term `½ σ ∂σ/∂x (g_{i+1} - g_i)²`
    /// (the iterated integral of a scalar path is exactly half the squared
    /// increment). Controls are held on each step.
    Taylor,
}

/// Explicit left-point Euler scheme for the controlled Young equation.
pub fn young_euler_solve(
    sigma: &ScalarField,
    b: &ScalarField,
    g: &Driver,
    u: &ControlPath,
    x0: f64,
) -> Result<GridPath> {
    young_solve(sigma, b, g, u, x0, YoungScheme::Euler)
}

pub fn young_solve(
    sigma: &ScalarField,
    b: &ScalarField,
    g: &Driver,
    u: &ControlPath,
    x0: f64,
    scheme: YoungScheme,
) -> Result<GridPath> {
    if g.index + u.index <= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "control index {} and driver index {} do not sum above 1",
            u.index, g.index
        )));
    }
    scheme_path(sigma, b, &g.path, u.path(), x0, scheme)
}

/// The scheme without Hölder bookkeeping.
pub fn scheme_path(
    sigma: &ScalarField,
    b: &ScalarField,
    g: &GridPath,
    u: &GridPath,
    x0: f64,
    scheme: YoungScheme,
) -> Result<GridPath> {
    g.ensure_same_grid(u)?;
    if !x0.is_finite() {
        return Err(Error::InvalidParameter(format!("initial value {x0} is not finite")));
    }
    let n = g.n_steps();
    let dt = g.dt();
    let gv = g.values();
    let uv = u.values();
    let mut xs = Vec::with_capacity(n + 1);
    let mut x = x0;
    xs.push(x);
    for i in 0..n {
        let t = g.time(i);
        let dg = gv[i + 1] - gv[i];
        let s = sigma.eval(t, x, uv[i]);
        let mut step = s * dg + b.eval(t, x, uv[i]) * dt;
        if scheme == YoungScheme::Taylor {
            step += 0.5 * s * sigma.dx(t, x, uv[i]) * dg * dg;
        }
        x += step;
        if !x.is_finite() {
            return Err(Error::Divergence { index: i + 1 });
        }
        xs.push(x);
    }
    GridPath::new(g.horizon(), xs)
}

/// One row of [`continuity_probe`]: `(|u - u_n|_{∞,µ'}, |x^u - x^{u_n}|_{∞,µ'})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeRow {
    pub input_dist: f64,
    pub output_dist: f64,
}

/// Distances between the state under `u` and under each perturbation, in
/// the norm `sup + µ'-seminorm`.
pub fn continuity_probe(
    sigma: &ScalarField,
    b: &ScalarField,
    g: &Driver,
    u: &ControlPath,
    perturbations: &[ControlPath],
    x0: f64,
    mu_prime: f64,
    scheme: YoungScheme,
) -> Result<Vec<ProbeRow>> {
    if !(mu_prime > 1.0 - g.index && mu_prime < u.index) {
        return Err(Error::InvalidParameter(format!(
            "probe index {mu_prime} outside ({}, {})",
            1.0 - g.index,
            u.index
        )));
    }
    let base = young_solve(sigma, b, g, u, x0, scheme)?;
    perturbations
        .par_iter()
        .map(|un| {
            let xn = young_solve(sigma, b, g, un, x0, scheme)?;
            Ok(ProbeRow {
                input_dist: holder_norm(&u.path().sub(un.path())?, mu_prime)?,
                output_dist: holder_norm(&base.sub(&xn)?, mu_prime)?,
            })
        })
        .collect()
}
