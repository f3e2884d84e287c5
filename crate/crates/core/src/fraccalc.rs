//! Riemann–Liouville fractional integrals and derivatives of sampled paths.
//!
//! All quadratures are product rules: on each grid cell the path is taken
//! piecewise linear and the singular kernel `(x - y)^{α-1}` (integrals) or
//! `(x - y)^{-α-1}` (derivative difference term) is integrated against it in
//! closed form. Right-sided operators are evaluated by reflecting the window,
//! `y ↦ a + b - y`, which maps them onto left-sided ones.
//!
//! The right-sided integral carries the complex factor `(-1)^{-α} = e^{-iπα}`.
//! Derivatives are returned without any phase factor; callers that need the
//! phased right-sided derivative (the Young integral) attach it themselves.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::signal::GridPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `I^α_{a+}`, `D^α_{a+}`.
    Left,
    /// `I^α_{b-}`, `D^α_{b-}`.
    Right,
}

/// Order, side and window of a fractional operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracOrder {
    pub alpha: f64,
    pub side: Side,
    pub a: f64,
    pub b: f64,
}

impl FracOrder {
    pub fn new(alpha: f64, side: Side, a: f64, b: f64) -> Result<Self> {
        let order = Self { alpha, side, a, b };
        order.validate()?;
        Ok(order)
    }

    pub fn left(alpha: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(alpha, Side::Left, a, b)
    }

    pub fn right(alpha: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(alpha, Side::Right, a, b)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("order must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.a < self.b) {
            return Err(Error::InvalidWindow { a: self.a, b: self.b });
        }
        Ok(())
    }
}

/// Value of a fractional integral. Left-sided values are real; right-sided
/// ones carry the phase `e^{-iπα}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracIntegral {
    quadrature: f64,
    phase: Complex64,
}

impl FracIntegral {
    /// The real quadrature value, without the phase factor (signed).
    pub fn modulus(&self) -> f64 {
        self.quadrature
    }

    pub fn value(&self) -> Complex64 {
        self.phase * self.quadrature
    }

    pub fn phase(&self) -> Complex64 {
        self.phase
    }
}

/// `(-1)^{-α} = e^{-iπα}`.
pub fn right_integral_phase(alpha: f64) -> Complex64 {
    Complex64::from_polar(1.0, -std::f64::consts::PI * alpha)
}

/// Samples of the window `[a, b]` (grid-aligned, snapped outward) in the
/// orientation of the requested side, and the grid start index.
struct Window {
    values: Vec<f64>,
    dt: f64,
    lo: usize,
    hi: usize,
}

impl Window {
    fn new(f: &GridPath, order: &FracOrder) -> Result<Self> {
        order.validate()?;
        let dt = f.dt();
        let n = f.n_steps();
        if order.a < -1e-12 || order.b > f.horizon() * (1.0 + 1e-12) {
            return Err(Error::InvalidWindow { a: order.a, b: order.b });
        }
        let lo = ((order.a / dt) + 1e-9).floor().max(0.0) as usize;
        let hi = (((order.b / dt) - 1e-9).ceil() as usize).min(n);
        if lo >= hi {
            return Err(Error::InvalidWindow { a: order.a, b: order.b });
        }
        let mut values = f.values()[lo..=hi].to_vec();
        if order.side == Side::Right {
            values.reverse();
        }
        Ok(Self { values, dt, lo, hi })
    }

    fn a(&self) -> f64 {
        self.lo as f64 * self.dt
    }

    fn b(&self) -> f64 {
        self.hi as f64 * self.dt
    }

    /// Distance of `x` from the window's starting end, in cells, after
    /// orienting by side. Fails unless `x` is strictly inside.
    fn position(&self, x: f64, side: Side) -> Result<f64> {
        let (a, b) = (self.a(), self.b());
        if !(x > a && x < b) {
            return Err(Error::Domain { x, a, b });
        }
        Ok(match side {
            Side::Left => (x - a) / self.dt,
            Side::Right => (b - x) / self.dt,
        })
    }

    /// Linear interpolant at fractional position `s` (cells from the start).
    fn interpolate(&self, s: f64) -> f64 {
        let m = (s.floor() as usize).min(self.values.len() - 2);
        let frac = s - m as f64;
        self.values[m] + frac * (self.values[m + 1] - self.values[m])
    }
}

/// `∫_0^x (x - y)^{α-1} f(y) dy` for the piecewise-linear `f` sampled in
/// `v` with spacing `dt`, where `x = s·dt`.
fn left_integral_kernel(v: &[f64], dt: f64, alpha: f64, s: f64) -> f64 {
    let x = s * dt;
    let full = (s.floor() as usize).min(v.len() - 1);
    let mut acc = 0.0;
    let mut cell = |k: usize, y_end: f64| {
        let slope = (v[k + 1] - v[k]) / dt;
        let z0 = x - k as f64 * dt;
        let z1 = (x - y_end).max(0.0);
        let at_x = v[k] + slope * z0;
        acc += at_x * (z0.powf(alpha) - z1.powf(alpha)) / alpha
            - slope * (z0.powf(alpha + 1.0) - z1.powf(alpha + 1.0)) / (alpha + 1.0);
    };
    for k in 0..full.min(v.len() - 1) {
        cell(k, (k + 1) as f64 * dt);
    }
    if (full as f64) < s && full < v.len() - 1 {
        cell(full, x);
    }
    acc
}

/// `f(x)/x^α + α ∫_0^x (f(x) - f(y)) / (x - y)^{α+1} dy` for piecewise-linear
/// `f`, `x = s·dt`.
fn left_derivative_kernel(v: &[f64], dt: f64, alpha: f64, s: f64, fx: f64) -> f64 {
    let x = s * dt;
    let full = (s.floor() as usize).min(v.len() - 1);
    let mut acc = 0.0;
    let mut cell = |k: usize, y_end: f64| {
        let slope = (v[k + 1] - v[k]) / dt;
        let z0 = x - k as f64 * dt;
        let z1 = (x - y_end).max(0.0);
        let gap = fx - (v[k] + slope * z0);
        if z1 > 0.0 {
            acc += gap * (z1.powf(-alpha) - z0.powf(-alpha));
        }
        acc += alpha * slope * (z0.powf(1.0 - alpha) - z1.powf(1.0 - alpha)) / (1.0 - alpha);
    };
    for k in 0..full.min(v.len() - 1) {
        cell(k, (k + 1) as f64 * dt);
    }
    if (full as f64) < s && full < v.len() - 1 {
        cell(full, x);
    }
    fx / x.powf(alpha) + acc
}

/// Fractional Riemann–Liouville integral of order `α` at `x ∈ (a, b)`.
pub fn frac_integral(f: &GridPath, order: &FracOrder, x: f64) -> Result<FracIntegral> {
    let w = Window::new(f, order)?;
    let s = w.position(x, order.side)?;
    let q = left_integral_kernel(&w.values, w.dt, order.alpha, s) / gamma(order.alpha);
    let phase = match order.side {
        Side::Left => Complex64::new(1.0, 0.0),
        Side::Right => right_integral_phase(order.alpha),
    };
    Ok(FracIntegral { quadrature: q, phase })
}

/// Fractional Riemann–Liouville derivative of order `α` at `x ∈ (a, b)`,
/// phase-free on both sides.
///
/// The path must be Hölder of index above `α` on the window for the
/// singular integral to converge; this is the caller's responsibility.
pub fn frac_derivative(f: &GridPath, order: &FracOrder, x: f64) -> Result<f64> {
    let w = Window::new(f, order)?;
    let s = w.position(x, order.side)?;
    let fx = w.interpolate(s);
    let d = left_derivative_kernel(&w.values, w.dt, order.alpha, s, fx) / gamma(1.0 - order.alpha);
    if !d.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite fractional derivative at x = {x} (α = {}, dt = {}); grid too coarse near the singularity",
            order.alpha, w.dt
        )));
    }
    Ok(d)
}

/// Values of a fractional operator at grid nodes of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValues {
    /// Grid index of the window start `a`.
    pub lo: usize,
    /// Grid index of the window end `b`.
    pub hi: usize,
    /// Values at grid indices `lo..=hi`; entries where the operator is not
    /// defined are NaN.
    pub values: Vec<f64>,
}

impl GridValues {
    pub fn at(&self, index: usize) -> f64 {
        self.values[index - self.lo]
    }

    /// Values at the strictly interior nodes `lo+1..hi`.
    pub fn interior(&self) -> &[f64] {
        &self.values[1..self.values.len() - 1]
    }
}

fn power_table(n: usize, dt: f64, p: f64) -> Vec<f64> {
    (0..=n).map(|j| (j as f64 * dt).powf(p)).collect()
}

fn orient(mut out: Vec<f64>, side: Side) -> Vec<f64> {
    if side == Side::Right {
        out.reverse();
    }
    out
}

/// Phase-free fractional integral at every node of the window. The node at
/// the starting end (`a` for left, `b` for right) is zero; the closing end
/// is included since the integral converges there.
pub fn frac_integral_grid(f: &GridPath, order: &FracOrder) -> Result<GridValues> {
    let w = Window::new(f, order)?;
    let n = w.values.len() - 1;
    let alpha = order.alpha;
    let a_pow = power_table(n, w.dt, alpha);
    let b_pow = power_table(n, w.dt, alpha + 1.0);
    let v = &w.values;
    let norm = 1.0 / gamma(alpha);
    let out: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for k in 0..i {
                let m = i - k;
                let d = v[k + 1] - v[k];
                let at_x = v[k] + d * m as f64;
                acc +=
                    at_x * (a_pow[m] - a_pow[m - 1]) / alpha - (d / w.dt) * (b_pow[m] - b_pow[m - 1]) / (alpha + 1.0);
            }
            norm * acc
        })
        .collect();
    Ok(GridValues { lo: w.lo, hi: w.hi, values: orient(out, order.side) })
}

/// Phase-free fractional derivative at every strictly interior node of the
/// window; both end nodes are NaN.
pub fn frac_derivative_grid(f: &GridPath, order: &FracOrder) -> Result<GridValues> {
    derivative_nodes(f, order, false)
}

/// As [`frac_derivative_grid`], but also evaluated at the closing end of the
/// window (`b` for left, `a` for right), where the integral converges.
pub(crate) fn frac_derivative_grid_closed(f: &GridPath, order: &FracOrder) -> Result<GridValues> {
    derivative_nodes(f, order, true)
}

fn derivative_nodes(f: &GridPath, order: &FracOrder, closing_end: bool) -> Result<GridValues> {
    let w = Window::new(f, order)?;
    let n = w.values.len() - 1;
    let alpha = order.alpha;
    let neg = power_table(n, w.dt, -alpha);
    let pos = power_table(n, w.dt, 1.0 - alpha);
    let v = &w.values;
    let norm = 1.0 / gamma(1.0 - alpha);
    let out: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|i| {
            if i == 0 || (i == n && !closing_end) {
                return f64::NAN;
            }
            let fx = v[i];
            let mut acc = 0.0;
            for k in 0..i {
                let m = i - k;
                let d = v[k + 1] - v[k];
                if m > 1 {
                    let gap = fx - v[k] - d * m as f64;
                    acc += gap * (neg[m - 1] - neg[m]);
                }
                acc += alpha * (d / w.dt) * (pos[m] - pos[m - 1]) / (1.0 - alpha);
            }
            norm * (fx * neg[i] + acc)
        })
        .collect();
    let last = if closing_end { n + 1 } else { n };
    if let Some(i) = (1..last).find(|&i| !out[i].is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite fractional derivative at grid index {} (α = {alpha})",
            w.lo + i
        )));
    }
    Ok(GridValues { lo: w.lo, hi: w.hi, values: orient(out, order.side) })
}

/// Weights `w_i` with `Σ w_i G_i = ∫_0^{n·dt} z^e G(z) dz` for the
/// piecewise-linear `G` through nodes `0..=n`; requires `e > -1`.
pub fn singular_product_weights(n: usize, dt: f64, e: f64) -> Vec<f64> {
    let p1 = power_table(n, dt, e + 1.0);
    let p2 = power_table(n, dt, e + 2.0);
    let mut w = vec![0.0; n + 1];
    for k in 0..n {
        let zk = k as f64 * dt;
        let zk1 = (k + 1) as f64 * dt;
        let m0 = (p1[k + 1] - p1[k]) / (e + 1.0);
        let m1 = (p2[k + 1] - p2[k]) / (e + 2.0);
        w[k] += (zk1 * m0 - m1) / dt;
        w[k + 1] += (m1 - zk * m0) / dt;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma_ref(x: f64) -> f64 {
        gamma(x)
    }

    #[test]
    fn gamma_is_accurate_on_unit_interval() {
        // Γ(1/2) = √π, Γ(3/2) = √π/2, Γ(1) = Γ(2) = 1.
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert!((gamma_ref(0.5) / sqrt_pi - 1.0).abs() < 1e-13);
        assert!((gamma_ref(1.5) / (0.5 * sqrt_pi) - 1.0).abs() < 1e-13);
        assert!((gamma_ref(1.0) - 1.0).abs() < 1e-13);
        assert!((gamma_ref(2.0) - 1.0).abs() < 1e-13);
        // Reflection Γ(x)Γ(1-x) = π / sin(πx).
        for x in [0.1, 0.3, 0.7, 0.9] {
            let lhs = gamma_ref(x) * gamma_ref(1.0 - x);
            let rhs = std::f64::consts::PI / (std::f64::consts::PI * x).sin();
            assert!((lhs / rhs - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn integral_of_one() {
        let f = GridPath::constant(1.0, 256, 1.0).unwrap();
        for alpha in [0.3, 0.5, 0.7] {
            let order = FracOrder::left(alpha, 0.0, 1.0).unwrap();
            for x in [0.1, 0.37, 0.5, 0.99] {
                let got = frac_integral(&f, &order, x).unwrap().modulus();
                let want = x.powf(alpha) / gamma(alpha + 1.0);
                assert!((got / want - 1.0).abs() < 1e-12, "α={alpha} x={x}");
            }
        }
    }

    /// Adaptive Simpson on `∫_0^x (x-y)^{α-1} y dy` after the substitution
    /// `y = x - u^{1/α}` that removes the singularity.
    fn substituted_oracle(alpha: f64, x: f64) -> f64 {
        let top = x.powf(alpha);
        let g = |u: f64| (x - u.powf(1.0 / alpha)) / alpha;
        fn simpson(g: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64, whole: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let left = (m - a) / 6.0 * (g(a) + 4.0 * g(lm) + g(m));
            let right = (b - m) / 6.0 * (g(m) + 4.0 * g(rm) + g(b));
            if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
                left + right + (left + right - whole) / 15.0
            } else {
                simpson(g, a, m, eps / 2.0, left, depth - 1) + simpson(g, m, b, eps / 2.0, right, depth - 1)
            }
        }
        let whole = top / 6.0 * (g(0.0) + 4.0 * g(0.5 * top) + g(top));
        simpson(&g, 0.0, top, 1e-13, whole, 40) / gamma(alpha)
    }

    #[test]
    fn integral_of_identity_matches_power_rule_and_oracle() {
        let f = GridPath::from_fn(1.0, 128, |t| t).unwrap();
        let order = FracOrder::left(0.5, 0.0, 1.0).unwrap();
        for x in [0.2, 0.5, 0.8] {
            let got = frac_integral(&f, &order, x).unwrap().modulus();
            let closed = x.powf(1.5) * 4.0 / (3.0 * std::f64::consts::PI.sqrt());
            let oracle = substituted_oracle(0.5, x);
            assert!((closed - oracle).abs() < 1e-10);
            assert!((got - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_function_gives_zero() {
        let f = GridPath::constant(1.0, 64, 0.0).unwrap();
        for side in [Side::Left, Side::Right] {
            let order = FracOrder::new(0.4, side, 0.0, 1.0).unwrap();
            assert_eq!(frac_integral(&f, &order, 0.3).unwrap().modulus(), 0.0);
            assert_eq!(frac_derivative(&f, &order, 0.3).unwrap(), 0.0);
        }
    }

    #[test]
    fn right_integral_carries_phase() {
        let f = GridPath::from_fn(1.0, 64, |t| 1.0 + t).unwrap();
        let alpha = 0.3;
        let order = FracOrder::right(alpha, 0.0, 1.0).unwrap();
        let v = frac_integral(&f, &order, 0.4).unwrap();
        let expected = right_integral_phase(alpha) * v.modulus();
        assert!((v.value() - expected).norm() < 1e-15);
        assert!((v.phase().arg() + std::f64::consts::PI * alpha).abs() < 1e-15);
        // Reflection: for f ≡ 1, ∫_x^b (y-x)^{α-1} dy = (b-x)^α/α.
        let one = GridPath::constant(1.0, 64, 1.0).unwrap();
        let q = frac_integral(&one, &order, 0.4).unwrap().modulus();
        assert!((q - 0.6_f64.powf(alpha) / gamma(1.0 + alpha)).abs() < 1e-12);
    }

    #[test]
    fn derivative_of_constant() {
        let c = 2.5;
        let f = GridPath::constant(1.0, 128, c).unwrap();
        for alpha in [0.3, 0.5, 0.7] {
            let order = FracOrder::left(alpha, 0.0, 1.0).unwrap();
            for x in [0.1, 0.5, 0.9] {
                let got = frac_derivative(&f, &order, x).unwrap();
                let want = c * x.powf(-alpha) / gamma(1.0 - alpha);
                assert!((got / want - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivative_of_power_is_constant() {
        let n = 1 << 12;
        for alpha in [0.3, 0.5, 0.7] {
            let f = GridPath::from_fn(1.0, n, |t| t.powf(alpha)).unwrap();
            let order = FracOrder::left(alpha, 0.0, 1.0).unwrap();
            for x in [0.25, 0.5, 0.75] {
                let got = frac_derivative(&f, &order, x).unwrap();
                let want = gamma(alpha + 1.0);
                assert!((got / want - 1.0).abs() < 1e-2, "α={alpha} x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn grid_and_pointwise_routes_agree() {
        let f = GridPath::from_fn(1.0, 200, |t| (3.0 * t).sin() + t * t).unwrap();
        for side in [Side::Left, Side::Right] {
            let order = FracOrder::new(0.45, side, 0.2, 0.9).unwrap();
            let dg = frac_derivative_grid(&f, &order).unwrap();
            let ig = frac_integral_grid(&f, &order).unwrap();
            for idx in [45, 100, 170] {
                let x = f.time(idx);
                let d = frac_derivative(&f, &order, x).unwrap();
                let i = frac_integral(&f, &order, x).unwrap().modulus();
                assert!((dg.at(idx) - d).abs() < 1e-9 * d.abs().max(1.0), "{side:?} D at {idx}");
                assert!((ig.at(idx) - i).abs() < 1e-9 * i.abs().max(1.0), "{side:?} I at {idx}");
            }
            assert!(dg.values[0].is_nan() && dg.values[dg.values.len() - 1].is_nan());
        }
    }

    #[test]
    fn endpoints_and_bad_orders_rejected() {
        let f = GridPath::constant(1.0, 16, 1.0).unwrap();
        let order = FracOrder::left(0.5, 0.0, 1.0).unwrap();
        assert!(matches!(frac_integral(&f, &order, 0.0), Err(Error::Domain { .. })));
        assert!(matches!(frac_derivative(&f, &order, 1.0), Err(Error::Domain { .. })));
        assert!(FracOrder::left(1.0, 0.0, 1.0).is_err());
        assert!(FracOrder::left(0.0, 0.0, 1.0).is_err());
        assert!(FracOrder::left(0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn inversion_on_sine() {
        let n = 1 << 12;
        let f = GridPath::from_fn(1.0, n, |t| (2.0 * t).sin()).unwrap();
        for alpha in [0.3, 0.5, 0.7] {
            let order = FracOrder::left(alpha, 0.0, 1.0).unwrap();
            let i = frac_integral_grid(&f, &order).unwrap();
            let ipath = GridPath::new(1.0, i.values.clone()).unwrap();
            let d = frac_derivative_grid(&ipath, &order).unwrap();
            let lo = (0.05 * n as f64) as usize;
            let err = (lo..=n - lo).map(|k| (d.at(k) - f.value(k)).abs()).fold(0.0, f64::max);
            assert!(err < 1e-2, "α={alpha}: inversion error {err}");
        }
    }

    #[test]
    fn product_weights_integrate_powers_exactly() {
        let n = 50;
        let dt = 0.02;
        let e = -0.4;
        let w = singular_product_weights(n, dt, e);
        // Linear G is reproduced exactly: ∫_0^1 z^e (1 + z) dz.
        let s: f64 = w.iter().enumerate().map(|(i, wi)| wi * (1.0 + i as f64 * dt)).sum();
        let exact = 1.0 / (e + 1.0) + 1.0 / (e + 2.0);
        assert!((s - exact).abs() < 1e-12);
    }
}
