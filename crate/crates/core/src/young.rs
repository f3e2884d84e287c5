//! Young integrals `∫_a^b f dg` for Hölder paths with `λ + µ > 1`.
//!
//! Two independent routes are provided: Riemann–Stieltjes sums on the grid
//! and the fractional-derivative representation
//!
//! ```text
//! ∫_a^b f dg = (-1)^α ∫_a^b D^α_{a+} f(x) · D^{1-α}_{b-} g_{b-}(x) dx,   g_{b-} = g - g(b),
//! ```
//!
//! valid for every `α ∈ (1 - µ, λ)`. The right-sided derivative carries the
//! phase `(-1)^{1-α}`, so the product of phases is `-1` and the result is real.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::fraccalc::{frac_derivative_grid_closed, FracOrder};
use crate::signal::GridPath;

/// Integrand `f`, integrator `g` and window, with declared Hölder indices.
#[derive(Debug, Clone)]
pub struct YoungIntegrand {
    pub f: GridPath,
    pub g: GridPath,
    /// Declared Hölder index of `f`.
    pub lambda: f64,
    /// Declared Hölder index of `g`.
    pub mu: f64,
    pub a: f64,
    pub b: f64,
}

impl YoungIntegrand {
    pub fn new(f: GridPath, g: GridPath, lambda: f64, mu: f64, a: f64, b: f64) -> Result<Self> {
        f.ensure_same_grid(&g)?;
        for (name, idx) in [("lambda", lambda), ("mu", mu)] {
            if !(idx > 0.0 && idx <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {idx}")));
            }
        }
        if lambda + mu <= 1.0 {
            return Err(Error::InvalidParameter(format!("Young condition fails: lambda + mu = {} <= 1", lambda + mu)));
        }
        if !(a >= 0.0 && a < b && b <= f.horizon() * (1.0 + 1e-12)) {
            return Err(Error::InvalidWindow { a, b });
        }
        Ok(Self { f, g, lambda, mu, a, b })
    }

    /// Whole horizon.
    pub fn full(f: GridPath, g: GridPath, lambda: f64, mu: f64) -> Result<Self> {
        let t = f.horizon();
        Self::new(f, g, lambda, mu, 0.0, t)
    }

    /// Open interval of admissible fractional orders, `(1 - µ, λ)`.
    pub fn alpha_range(&self) -> (f64, f64) {
        (1.0 - self.mu, self.lambda)
    }

    /// `k` equispaced orders strictly inside the admissible interval.
    pub fn alpha_grid(&self, k: usize) -> Vec<f64> {
        let (lo, hi) = self.alpha_range();
        (1..=k).map(|i| lo + (hi - lo) * i as f64 / (k + 1) as f64).collect()
    }

    fn indices(&self) -> (usize, usize) {
        let dt = self.f.dt();
        let lo = ((self.a / dt) + 1e-9).floor().max(0.0) as usize;
        let hi = (((self.b / dt) - 1e-9).ceil() as usize).min(self.f.n_steps());
        (lo, hi)
    }
}

/// Evaluation point of the Riemann–Stieltjes sum on each cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RiemannRule {
    /// `Σ f(t_i) (g(t_{i+1}) - g(t_i))`.
    #[default]
    Left,
    /// `Σ ½(f(t_i) + f(t_{i+1})) (g(t_{i+1}) - g(t_i))`: the exact Young
    /// integral of the piecewise-linear interpolants.
    Trapezoid,
}

/// Left-point Riemann–Stieltjes sum over the grid cells of the window.
pub fn young_riemann(yi: &YoungIntegrand) -> f64 {
    young_riemann_with(yi, RiemannRule::Left)
}

pub fn young_riemann_with(yi: &YoungIntegrand, rule: RiemannRule) -> f64 {
    let (lo, hi) = yi.indices();
    let f = yi.f.values();
    let g = yi.g.values();
    (lo..hi)
        .map(|i| {
            let fi = match rule {
                RiemannRule::Left => f[i],
                RiemannRule::Trapezoid => 0.5 * (f[i] + f[i + 1]),
            };
            fi * (g[i + 1] - g[i])
        })
        .sum()
}

/// The Young integral through fractional derivatives of order `alpha`.
///
/// Both derivatives are evaluated exactly at grid nodes for the
/// piecewise-linear interpolants of `f` and `g`. Between nodes they carry
/// terms `A_j (x - x_j)^{1-α}` and `B_j (x_j - x)^α` from the slope jumps,
/// which vanish at the node they sit on and so are invisible to node
/// interpolation. On each cell the outer integral splits off the terms of
/// the nearest nodes, interpolates the remainders linearly, integrates the
/// singular products in closed form and the rest by Gauss–Legendre.
pub fn young_fractional(yi: &YoungIntegrand, alpha: f64) -> Result<f64> {
    let (lo_a, hi_a) = yi.alpha_range();
    if !(alpha > lo_a && alpha < hi_a) {
        return Err(Error::InvalidParameter(format!("order {alpha} outside the admissible interval ({lo_a}, {hi_a})")));
    }
    let (lo, hi) = yi.indices();
    let n = hi - lo;
    if n < 3 {
        return Err(Error::InvalidWindow { a: yi.a, b: yi.b });
    }
    let h = yi.f.dt();
    let (a, b) = (lo as f64 * h, hi as f64 * h);

    let g_end = yi.g.value(hi);
    let g_shift = yi.g.map(|v| v - g_end)?;
    let left = frac_derivative_grid_closed(&yi.f, &FracOrder::left(alpha, a, b)?)?;
    let right = frac_derivative_grid_closed(&g_shift, &FracOrder::right(1.0 - alpha, a, b)?)?;

    let fv = &yi.f.values()[lo..=hi];
    let gv = &yi.g.values()[lo..=hi];
    let slope = |v: &[f64], k: isize| {
        if k < 0 || k as usize >= n {
            0.0
        } else {
            (v[k as usize + 1] - v[k as usize]) / h
        }
    };
    // For piecewise-linear paths each slope jump at x_j adds
    // A_j (x - x_j)_+^{1-α} to D^α f and B_j (x_j - x)_+^α to D^{1-α} g_{b-}.
    let e = fv[0] / gamma(1.0 - alpha);
    let ca = 1.0 / ((1.0 - alpha) * gamma(1.0 - alpha));
    let cb = 1.0 / (alpha * gamma(alpha));
    let big_a: Vec<f64> = (0..=n).map(|j| ca * (slope(fv, j as isize) - slope(fv, j as isize - 1))).collect();
    let big_b: Vec<f64> = (0..=n).map(|j| cb * (slope(gv, j as isize) - slope(gv, j as isize - 1))).collect();
    let beta = |p: f64, q: f64| gamma(p) * gamma(q) / gamma(p + q);
    let b_local = beta(2.0 - alpha, 1.0 + alpha);
    let b_first = beta(1.0 - alpha, 1.0 + alpha);
    let (h_a, h_1a) = (h.powf(alpha), h.powf(1.0 - alpha));

    // Left derivative without the f(a)(x - a)^{-α} term, zero at a; the
    // right derivative vanishes at b.
    let lhat: Vec<f64> =
        (0..=n).map(|j| if j == 0 { 0.0 } else { left.values[j] - e * (j as f64 * h).powf(-alpha) }).collect();
    let rv: Vec<f64> = (0..=n).map(|j| if j == n { 0.0 } else { right.values[j] }).collect();

    let cells: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| {
            let (ak, bk) = (big_a[k], big_b[k + 1]);
            let near_l = k.saturating_sub(NEIGHBORS)..k;
            let near_r = k + 2..(k + 2 + NEIGHBORS).min(n + 1);
            // Neighbor terms as functions of z = x - x_k on the cell.
            let ls =
                |z: f64| near_l.clone().map(|j| big_a[j] * ((k - j) as f64 * h + z).powf(1.0 - alpha)).sum::<f64>();
            let rs = |z: f64| near_r.clone().map(|j| big_b[j] * ((j - k) as f64 * h - z).powf(alpha)).sum::<f64>();
            let (l0, l1) = (lhat[k] - ls(0.0), lhat[k + 1] - ak * h_1a - ls(h));
            let (r0, r1) = (rv[k] - bk * h_a - rs(0.0), rv[k + 1] - rs(h));
            let (ql, qr) = ((l1 - l0) / h, (r1 - r0) / h);
            let mut acc = h * ((l0 * r0 + l1 * r1) / 3.0 + (l0 * r1 + l1 * r0) / 6.0);
            acc +=
                bk * ((l0 + ql * h) * h.powf(alpha + 1.0) / (alpha + 1.0) - ql * h.powf(alpha + 2.0) / (alpha + 2.0));
            acc += ak * (r0 * h.powf(2.0 - alpha) / (2.0 - alpha) + qr * h.powf(3.0 - alpha) / (3.0 - alpha));
            acc += ak * bk * h * h * b_local;
            acc += gauss_legendre(h, |z| {
                let (lz, rz) = (ls(z), rs(z));
                lz * (r0 + qr * z + bk * (h - z).powf(alpha) + rz) + (l0 + ql * z + ak * z.powf(1.0 - alpha)) * rz
            });
            if e != 0.0 {
                acc += e * if k == 0 {
                    // rs is smooth on the first cell; take it linear.
                    let (p, q) = (r0 + rs(0.0), qr + (rs(h) - rs(0.0)) / h);
                    p * h_1a / (1.0 - alpha) + q * h.powf(2.0 - alpha) / (2.0 - alpha) + bk * h * b_first
                } else {
                    let c = k as f64 * h;
                    gauss_legendre(h, |z| (c + z).powf(-alpha) * (r0 + qr * z + bk * (h - z).powf(alpha) + rs(z)))
                };
            }
            acc
        })
        .collect();
    let inner: f64 = cells.iter().sum();

    let pi = std::f64::consts::PI;
    let outer_phase = Complex64::from_polar(1.0, pi * alpha);
    let right_phase = Complex64::from_polar(1.0, pi * (1.0 - alpha));
    let value = outer_phase * right_phase * inner;
    if value.im.abs() > 1e-8 * value.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!("fractional Young integral has imaginary residual {:.3e}", value.im)));
    }
    Ok(value.re)
}

/// Slope-jump terms subtracted exactly on each side of a cell.
const NEIGHBORS: usize = 4;

/// Eight-point Gauss–Legendre rule on `[0, h]`.
fn gauss_legendre(h: f64, f: impl Fn(f64) -> f64) -> f64 {
    const NODES: [(f64, f64); 4] = [
        (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
        (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
        (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
        (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
    ];
    let half = 0.5 * h;
    NODES.iter().map(|&(x, w)| w * (f(half * (1.0 - x)) + f(half * (1.0 + x)))).sum::<f64>() * half
}
