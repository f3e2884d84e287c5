//! Scalar coefficient fields `σ`, `b` and `ℓ`.
//!
//! Every field is stored with the uniform signature `(t, x, u) -> f64`; the
//! [`Arity`] records which arguments are meaningful. Partial derivatives use
//! the analytic closure when one was supplied and a central finite
//! difference with step `h_fd` otherwise.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub type Fn3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    /// Diffusion coefficient `σ(t, x)`.
    SigmaTx,
    /// Drift `b(t, x, u)`.
    BTxu,
    /// Control-dependent diffusion `σ(t, x, u)`.
    SigmaTxu,
    /// Running cost `ℓ(t, x, u)`.
    EllTxu,
}

#[derive(Clone, Default)]
struct Partials {
    dt: Option<Fn3>,
    dx: Option<Fn3>,
    du: Option<Fn3>,
    dxx: Option<Fn3>,
    duu: Option<Fn3>,
    dxu: Option<Fn3>,
}

/// Declared constants, kept for diagnostics and validation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldBounds {
    /// `sup |f|`.
    pub sup: Option<f64>,
    /// Lipschitz constant in `(x, u)`.
    pub lipschitz: Option<f64>,
}

#[derive(Clone)]
pub struct ScalarField {
    name: String,
    arity: Arity,
    eval: Fn3,
    partials: Partials,
    time_dependent: bool,
    control_dependent: bool,
    h_fd: f64,
    bounds: FieldBounds,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("time_dependent", &self.time_dependent)
            .field("control_dependent", &self.control_dependent)
            .finish()
    }
}

impl ScalarField {
    fn with_arity(name: &str, arity: Arity, eval: Fn3) -> Self {
        Self {
            name: name.to_owned(),
            arity,
            eval,
            partials: Partials::default(),
            time_dependent: true,
            control_dependent: arity != Arity::SigmaTx,
            h_fd: 1e-5,
            bounds: FieldBounds::default(),
        }
    }

    /// `σ(t, x)`, independent of the control.
    pub fn sigma(name: &str, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::with_arity(name, Arity::SigmaTx, Arc::new(move |t, x, _| f(t, x)))
    }

    /// `σ(t, x, u)`.
    pub fn sigma_u(name: &str, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::with_arity(name, Arity::SigmaTxu, Arc::new(f))
    }

    /// `b(t, x, u)`.
    pub fn drift(name: &str, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::with_arity(name, Arity::BTxu, Arc::new(f))
    }

    /// `ℓ(t, x, u)`.
    pub fn cost(name: &str, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::with_arity(name, Arity::EllTxu, Arc::new(f))
    }

    /// Marks the field as independent of `t`; `∂/∂t` becomes exactly zero.
    pub fn autonomous(mut self) -> Self {
        self.time_dependent = false;
        self
    }

    /// Marks the field as independent of `u`.
    pub fn control_free(mut self) -> Self {
        self.control_dependent = false;
        self
    }

    pub fn with_dt(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.partials.dt = Some(Arc::new(f));
        self
    }

    pub fn with_dx(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.partials.dx = Some(Arc::new(f));
        self
    }

    pub fn with_du(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.partials.du = Some(Arc::new(f));
        self
    }

    pub fn with_dxx(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.partials.dxx = Some(Arc::new(f));
        self
    }

    pub fn with_duu(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.partials.duu = Some(Arc::new(f));
        self
    }

    pub fn with_dxu(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.partials.dxu = Some(Arc::new(f));
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.h_fd = h;
        self
    }

    pub fn with_bounds(mut self, bounds: FieldBounds) -> Self {
        self.bounds = bounds;
        self
    }

    /// Drops analytic partials, forcing finite differences.
    pub fn without_partials(mut self) -> Self {
        self.partials = Partials::default();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn depends_on_control(&self) -> bool {
        self.control_dependent
    }

    pub fn fd_step(&self) -> f64 {
        self.h_fd
    }

    pub fn bounds(&self) -> FieldBounds {
        self.bounds
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, u: f64) -> f64 {
        (self.eval)(t, x, u)
    }

    pub fn dt(&self, t: f64, x: f64, u: f64) -> f64 {
        if !self.time_dependent {
            return 0.0;
        }
        match &self.partials.dt {
            Some(d) => d(t, x, u),
            None => {
                let h = self.h_fd;
                (self.eval(t + h, x, u) - self.eval(t - h, x, u)) / (2.0 * h)
            }
        }
    }

    pub fn dx(&self, t: f64, x: f64, u: f64) -> f64 {
        match &self.partials.dx {
            Some(d) => d(t, x, u),
            None => {
                let h = self.h_fd;
                (self.eval(t, x + h, u) - self.eval(t, x - h, u)) / (2.0 * h)
            }
        }
    }

    pub fn du(&self, t: f64, x: f64, u: f64) -> f64 {
        if !self.control_dependent {
            return 0.0;
        }
        match &self.partials.du {
            Some(d) => d(t, x, u),
            None => {
                let h = self.h_fd;
                (self.eval(t, x, u + h) - self.eval(t, x, u - h)) / (2.0 * h)
            }
        }
    }

    pub fn dxx(&self, t: f64, x: f64, u: f64) -> f64 {
        match &self.partials.dxx {
            Some(d) => d(t, x, u),
            None => {
                let h = self.h_fd.sqrt().max(self.h_fd) * 1e-1;
                (self.eval(t, x + h, u) - 2.0 * self.eval(t, x, u) + self.eval(t, x - h, u)) / (h * h)
            }
        }
    }

    pub fn duu(&self, t: f64, x: f64, u: f64) -> f64 {
        if !self.control_dependent {
            return 0.0;
        }
        match &self.partials.duu {
            Some(d) => d(t, x, u),
            None => {
                let h = self.h_fd.sqrt().max(self.h_fd) * 1e-1;
                (self.eval(t, x, u + h) - 2.0 * self.eval(t, x, u) + self.eval(t, x, u - h)) / (h * h)
            }
        }
    }

    pub fn dxu(&self, t: f64, x: f64, u: f64) -> f64 {
        if !self.control_dependent {
            return 0.0;
        }
        match &self.partials.dxu {
            Some(d) => d(t, x, u),
            None => {
                let h = self.h_fd.sqrt().max(self.h_fd) * 1e-1;
                (self.eval(t, x + h, u + h) - self.eval(t, x + h, u - h) - self.eval(t, x - h, u + h)
                    + self.eval(t, x - h, u - h))
                    / (4.0 * h * h)
            }
        }
    }

    /// Largest observed Lipschitz ratio `|f(p) - f(q)| / (|x_p - x_q| + |u_p - u_q|)`
    /// over the given `(t, x, u)` sample pairs.
    pub fn lipschitz_ratio(&self, pairs: &[((f64, f64, f64), (f64, f64, f64))]) -> f64 {
        pairs
            .iter()
            .filter_map(|&((t1, x1, u1), (t2, x2, u2))| {
                let d = (x1 - x2).abs() + (u1 - u2).abs();
                (d > 0.0).then(|| (self.eval(t1, x1, u1) - self.eval(t2, x2, u2)).abs() / d)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_diffusion() -> ScalarField {
        ScalarField::sigma("sin+2", |_, x| x.sin() + 2.0)
            .autonomous()
            .with_dx(|_, x, _| x.cos())
            .with_dxx(|_, x, _| -x.sin())
    }

    #[test]
    fn finite_differences_agree_with_analytic_partials() {
        let analytic = sine_diffusion();
        let numeric = analytic.clone().without_partials().with_fd_step(1e-4);
        for x in [-1.3, 0.0, 0.4, 2.2] {
            // Central differences: O(h²) error.
            assert!((analytic.dx(0.0, x, 0.0) - numeric.dx(0.0, x, 0.0)).abs() < 1e-8);
            assert!((analytic.dxx(0.0, x, 0.0) - numeric.dxx(0.0, x, 0.0)).abs() < 1e-4);
        }
        let fd_error = |h: f64| {
            let f = analytic.clone().without_partials().with_fd_step(h);
            (f.dx(0.0, 0.7, 0.0) - 0.7_f64.cos()).abs()
        };
        let ratio = fd_error(1e-2) / fd_error(5e-3);
        assert!((ratio - 4.0).abs() < 0.1, "FD error ratio {ratio}");
    }

    #[test]
    fn mixed_partials_by_finite_differences() {
        let f = ScalarField::sigma_u("xu", |t, x, u| t * x * x * u + u * u);
        assert!((f.dx(1.0, 2.0, 3.0) - 12.0).abs() < 1e-6);
        assert!((f.du(1.0, 2.0, 3.0) - 10.0).abs() < 1e-6);
        assert!((f.dxu(1.0, 2.0, 3.0) - 4.0).abs() < 1e-4);
        assert!((f.duu(1.0, 2.0, 3.0) - 2.0).abs() < 1e-4);
        assert!((f.dt(1.0, 2.0, 3.0) - 12.0).abs() < 1e-6);
    }

    #[test]
    fn flags_zero_out_partials() {
        let s = sine_diffusion();
        assert_eq!(s.dt(0.3, 1.0, 5.0), 0.0);
        assert_eq!(s.du(0.3, 1.0, 5.0), 0.0);
        assert!(!s.depends_on_control());
        let b = ScalarField::drift("u-x", |_, x, u| u - x);
        assert!(b.depends_on_control());
    }

    #[test]
    fn lipschitz_ratio_on_samples() {
        let ell = ScalarField::cost("x+2u", |_, x, u| x + 2.0 * u);
        let pairs = [((0.0, 0.0, 0.0), (0.0, 1.0, 0.0)), ((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))];
        assert!((ell.lipschitz_ratio(&pairs) - 2.0).abs() < 1e-15);
    }
}
