//! Named built-in control problems.
//!
//! Each entry fixes the coefficients, initial value, control set and, for
//! the relaxed regime, the atoms and number of cells. The driver is
//! supplied at instantiation.

use crate::doss::{constant_flow, linear_flow, FlowFn};
use crate::error::{Error, Result};
use crate::field::{FieldBounds, ScalarField};
use crate::optim::{ControlProblem, CostSpec, Regime};
use crate::rde::Driver;
use crate::relaxed::{uniform_cells, ControlSet};

#[derive(Clone)]
pub struct BuiltinProblem {
    pub name: &'static str,
    pub description: &'static str,
    pub regime: Regime,
    pub sigma: ScalarField,
    pub drift: ScalarField,
    pub cost: CostSpec,
    pub x0: f64,
    pub control_set: ControlSet,
    /// Atoms of the relaxed regime.
    pub atoms: Vec<f64>,
    /// Number of relaxed-control cells.
    pub cells: usize,
    closed_form: Option<FlowFn>,
}

impl std::fmt::Debug for BuiltinProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltinProblem").field("name", &self.name).field("regime", &self.regime).finish()
    }
}

impl BuiltinProblem {
    pub fn instantiate(&self, driver: Driver) -> Result<ControlProblem> {
        let p = ControlProblem::new(
            self.sigma.clone(),
            self.drift.clone(),
            self.cost.clone(),
            driver,
            self.x0,
            self.control_set,
        )?;
        match &self.closed_form {
            Some(f) => p.with_closed_form_flow(f.clone()),
            None => Ok(p),
        }
    }

    pub fn cell_boundaries(&self, horizon: f64) -> Vec<f64> {
        uniform_cells(horizon, self.cells)
    }

    pub fn has_closed_form_flow(&self) -> bool {
        self.closed_form.is_some()
    }
}

pub const NAMES: [&str; 7] =
    ["linear", "sine-diffusion", "steering", "convex", "mean-square", "tracking", "control-energy"];

fn constant_sigma(c: f64) -> ScalarField {
    ScalarField::sigma(&format!("{c}"), move |_, _| c)
        .autonomous()
        .with_dx(|_, _, _| 0.0)
        .with_dxx(|_, _, _| 0.0)
        .with_bounds(FieldBounds { sup: Some(c.abs()), lipschitz: Some(0.0) })
}

fn sine_sigma() -> ScalarField {
    ScalarField::sigma("sin(x)+2", |_, x| x.sin() + 2.0)
        .autonomous()
        .with_dx(|_, x, _| x.cos())
        .with_dxx(|_, x, _| -x.sin())
        .with_bounds(FieldBounds { sup: Some(3.0), lipschitz: Some(1.0) })
}

fn zero_drift() -> ScalarField {
    ScalarField::drift("0", |_, _, _| 0.0).autonomous()
}

fn set(min: f64, max: f64) -> ControlSet {
    ControlSet { min, max }
}

pub fn builtin(name: &str) -> Result<BuiltinProblem> {
    let p = match name {
        "linear" => BuiltinProblem {
            name: "linear",
            description: "σ(x) = x, b = 0: x_t = x_0 exp(g_t - g_0)",
            regime: Regime::Relaxed,
            sigma: ScalarField::sigma("x", |_, x| x).autonomous().with_dx(|_, _, _| 1.0).with_dxx(|_, _, _| 0.0),
            drift: zero_drift(),
            cost: CostSpec::new(ScalarField::cost("x^2", |_, x, _| x * x)),
            x0: 1.0,
            control_set: set(-1.0, 1.0),
            atoms: vec![-1.0, 1.0],
            cells: 2,
            closed_form: Some(linear_flow(1.0)),
        },
        "sine-diffusion" => BuiltinProblem {
            name: "sine-diffusion",
            description: "σ(x) = sin x + 2, b(x, u) = u - x, ℓ = x² + 0.1 u²",
            regime: Regime::Relaxed,
            sigma: sine_sigma(),
            drift: ScalarField::drift("u-x", |_, x, u| u - x)
                .autonomous()
                .with_bounds(FieldBounds { sup: None, lipschitz: Some(1.0) }),
            cost: CostSpec::new(ScalarField::cost("x^2+0.1u^2", |_, x, u| x * x + 0.1 * u * u)),
            x0: 0.5,
            control_set: set(-1.0, 1.0),
            atoms: vec![-1.0, 1.0],
            cells: 2,
            closed_form: None,
        },
        "steering" => BuiltinProblem {
            name: "steering",
            description: "σ = 0, b = u, ℓ = x², x_0 = 1, U = [-1, 0]: drive the state to 0",
            regime: Regime::Relaxed,
            sigma: constant_sigma(0.0),
            drift: ScalarField::drift("u", |_, _, u| u).autonomous(),
            cost: CostSpec::new(ScalarField::cost("x^2", |_, x, _| x * x)),
            x0: 1.0,
            control_set: set(-1.0, 0.0),
            atoms: vec![-1.0, 0.0],
            cells: 2,
            closed_form: Some(constant_flow(0.0)),
        },
        "convex" => BuiltinProblem {
            name: "convex",
            description: "σ = 0.002, b = u, ℓ = x² + 0.1 u², atoms ±1, two cells: relaxation pays off",
            regime: Regime::Relaxed,
            sigma: constant_sigma(0.002),
            drift: ScalarField::drift("u", |_, _, u| u).autonomous(),
            cost: CostSpec::new(ScalarField::cost("x^2+0.1u^2", |_, x, u| x * x + 0.1 * u * u)),
            x0: 0.5,
            control_set: set(-1.0, 1.0),
            atoms: vec![-1.0, 1.0],
            cells: 2,
            closed_form: Some(constant_flow(0.002)),
        },
        "mean-square" => BuiltinProblem {
            name: "mean-square",
            description: "state-free ℓ = (a - 0.3)² over atoms {0, 0.5, 1}",
            regime: Regime::Relaxed,
            sigma: constant_sigma(0.0),
            drift: zero_drift(),
            cost: CostSpec::new(ScalarField::cost("(a-0.3)^2", |_, _, a| (a - 0.3) * (a - 0.3))),
            x0: 0.0,
            control_set: set(0.0, 1.0),
            atoms: vec![0.0, 0.5, 1.0],
            cells: 2,
            closed_form: Some(constant_flow(0.0)),
        },
        "tracking" => BuiltinProblem {
            name: "tracking",
            description: "σ(t, x, u) = 0.1 u, b = 0, ℓ = (x - 1)²: steer through the noise",
            regime: Regime::Parametric,
            sigma: ScalarField::sigma_u("0.1u", |_, _, u| 0.1 * u).autonomous().with_dx(|_, _, _| 0.0),
            drift: zero_drift(),
            cost: CostSpec::new(ScalarField::cost("(x-1)^2", |_, x, _| (x - 1.0) * (x - 1.0))),
            x0: 0.0,
            control_set: set(-2.0, 2.0),
            atoms: vec![],
            cells: 1,
            closed_form: None,
        },
        "control-energy" => BuiltinProblem {
            name: "control-energy",
            description: "σ(x) = sin x + 2, b = 0, ℓ = u²: zero control is optimal",
            regime: Regime::Parametric,
            sigma: sine_sigma(),
            drift: zero_drift(),
            cost: CostSpec::new(ScalarField::cost("u^2", |_, _, u| u * u)),
            x0: 0.0,
            control_set: set(-2.0, 2.0),
            atoms: vec![],
            cells: 1,
            closed_form: None,
        },
        other => {
            return Err(Error::InvalidParameter(format!("unknown problem `{other}` (known: {})", NAMES.join(", "))))
        }
    };
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves() {
        for name in NAMES {
            let p = builtin(name).unwrap();
            assert_eq!(p.name, name);
            if p.regime == Regime::Relaxed {
                assert!(!p.sigma.depends_on_control());
            }
            for a in &p.atoms {
                assert!(p.control_set.contains(*a));
            }
        }
        assert!(builtin("nope").is_err());
    }
}
