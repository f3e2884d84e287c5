//! Driving signals and controls sampled on uniform grids.
//!
//! A [`GridPath`] holds `N + 1` samples of a function on `[0, T]` at the
//! times `i T / N`. This module generates the drivers used throughout the
//! crate (fractional Brownian motion and a few deterministic Hölder paths)
//! and measures them with discrete Hölder seminorms.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real function on `[0, T]` sampled at `N + 1` equispaced points.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    horizon: f64,
    values: Arc<[f64]>,
}

impl GridPath {
    pub fn new(horizon: f64, values: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidParameter("a grid path needs at least two samples".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample at index {i}")));
        }
        Ok(Self { horizon, values: values.into() })
    }

    /// Samples `f` at `i T / N` for `i = 0..=N`.
    pub fn from_fn(horizon: f64, n_steps: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be positive".into()));
        }
        let dt = horizon / n_steps as f64;
        Self::new(horizon, (0..=n_steps).map(|i| f(i as f64 * dt)).collect())
    }

    pub fn constant(horizon: f64, n_steps: usize, c: f64) -> Result<Self> {
        Self::from_fn(horizon, n_steps, |_| c)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.horizon / self.n_steps() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Linear interpolation at an arbitrary time in `[0, T]`.
    pub fn interpolate(&self, t: f64) -> f64 {
        let n = self.n_steps();
        let s = (t / self.dt()).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let frac = s - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    pub fn same_grid(&self, other: &GridPath) -> bool {
        self.n_steps() == other.n_steps() && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }

    pub fn ensure_same_grid(&self, other: &GridPath) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Incompatible(format!(
                "grid (T={}, N={}) vs (T={}, N={})",
                self.horizon,
                self.n_steps(),
                other.horizon,
                other.n_steps()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridPath> {
        GridPath::new(self.horizon, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &GridPath, f: impl Fn(f64, f64) -> f64) -> Result<GridPath> {
        self.ensure_same_grid(other)?;
        GridPath::new(self.horizon, self.values.iter().zip(other.values.iter()).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn add(&self, other: &GridPath) -> Result<GridPath> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridPath) -> Result<GridPath> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Result<GridPath> {
        self.map(|v| c * v)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Restriction to every `stride`-th sample (coarser grid, same horizon).
    pub fn subsample(&self, stride: usize) -> Result<GridPath> {
        if stride == 0 || self.n_steps() % stride != 0 {
            return Err(Error::InvalidParameter(format!("stride {stride} does not divide N = {}", self.n_steps())));
        }
        GridPath::new(self.horizon, self.values.iter().step_by(stride).copied().collect())
    }

    /// Writes `t,value` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", fmt_f64(self.time(i)), fmt_f64(*v))?;
        }
        Ok(())
    }
}

/// Formats a double with 17 significant digits, stable across platforms.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Discrete Hölder measurements of a path on a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub index: f64,
    pub seminorm: f64,
    pub sup_norm: f64,
    pub window: (f64, f64),
}

impl HolderEstimate {
    /// The norm `sup |f| + seminorm` on the window.
    pub fn norm(&self) -> f64 {
        self.sup_norm + self.seminorm
    }
}

/// Grid indices of the window, snapped outward to grid points.
fn window_indices(path: &GridPath, a: f64, b: f64) -> Result<(usize, usize)> {
    let t = path.horizon();
    if !(a >= 0.0 && b <= t * (1.0 + 1e-12) && a < b) {
        return Err(Error::InvalidWindow { a, b });
    }
    let dt = path.dt();
    let n = path.n_steps();
    // Outward snapping, tolerant to round-off when a or b already sit on the grid.
    let lo = ((a / dt) + 1e-9).floor().max(0.0) as usize;
    let hi = (((b / dt) - 1e-9).ceil() as usize).min(n);
    if lo >= hi {
        return Err(Error::InvalidWindow { a, b });
    }
    Ok((lo, hi))
}

fn check_index(mu: f64) -> Result<()> {
    if mu > 0.0 && mu <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("Hölder index must lie in (0, 1], got {mu}")))
    }
}

/// Exact discrete µ-Hölder seminorm over all grid pairs in `[a, b]`.
///
/// Window endpoints that are not grid points are snapped outward.
pub fn holder_seminorm(path: &GridPath, mu: f64, a: f64, b: f64) -> Result<HolderEstimate> {
    let (lo, hi) = window_indices(path, a, b)?;
    holder_over_lags(path, mu, lo, hi, hi - lo)
}

/// Restricted-lag approximation of [`holder_seminorm`]: only pairs with
/// index distance `1..=max_lag` are scanned.
pub fn holder_seminorm_fast(path: &GridPath, mu: f64, a: f64, b: f64, max_lag: usize) -> Result<HolderEstimate> {
    let (lo, hi) = window_indices(path, a, b)?;
    holder_over_lags(path, mu, lo, hi, max_lag.clamp(1, hi - lo))
}

fn holder_over_lags(path: &GridPath, mu: f64, lo: usize, hi: usize, max_lag: usize) -> Result<HolderEstimate> {
    check_index(mu)?;
    let v = &path.values()[lo..=hi];
    let dt = path.dt();
    let mut seminorm = 0.0_f64;
    for lag in 1..=max_lag {
        let denom = (lag as f64 * dt).powf(mu);
        let max_inc = v.windows(lag + 1).fold(0.0_f64, |m, w| m.max((w[lag] - w[0]).abs()));
        seminorm = seminorm.max(max_inc / denom);
    }
    let sup_norm = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    Ok(HolderEstimate { index: mu, seminorm, sup_norm, window: (path.time(lo), path.time(hi)) })
}

/// `|f|_{∞,µ}` on the whole horizon: sup norm plus µ-seminorm.
pub fn holder_norm(path: &GridPath, mu: f64) -> Result<f64> {
    Ok(holder_seminorm(path, mu, 0.0, path.horizon())?.norm())
}

/// Log-log regression slope of the maximal increment against the lag, over
/// dyadic lags `1, 2, 4, …` up to `N / 16`. Estimates the Hölder index.
pub fn estimate_holder_index(path: &GridPath) -> f64 {
    let v = path.values();
    let n = path.n_steps();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut lag = 1;
    while lag <= (n / 16).max(1) {
        let m = v.windows(lag + 1).fold(0.0_f64, |m, w| m.max((w[lag] - w[0]).abs()));
        if m > 0.0 {
            xs.push((lag as f64 * path.dt()).ln());
            ys.push(m.ln());
        }
        lag *= 2;
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// Algorithm used by [`fbm_generate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FbmMethod {
    /// Circulant embedding when `N` is a power of two and the embedding is
    /// nonnegative definite; dense Cholesky otherwise.
    #[default]
    Auto,
    Circulant,
    Cholesky,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbmSpec {
    pub hurst: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub method: FbmMethod,
}

impl FbmSpec {
    pub fn new(hurst: f64, horizon: f64, n_steps: usize, seed: u64) -> Self {
        Self { hurst, horizon, n_steps, seed, method: FbmMethod::Auto }
    }
}

/// Autocovariance of unit-spaced fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) + (k - 1.0).abs().powf(h2) - 2.0 * k.powf(h2))
}

/// Exact-in-distribution fractional Brownian motion on a uniform grid.
pub fn fbm_generate(spec: &FbmSpec) -> Result<GridPath> {
    let FbmSpec { hurst, horizon, n_steps: n, seed, method } = *spec;
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidParameter(format!("Hurst index must lie in (0, 1), got {hurst}")));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("fBm needs N >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = match method {
        FbmMethod::Cholesky => fgn_cholesky(hurst, n, &mut rng)?,
        FbmMethod::Circulant => {
            if !n.is_power_of_two() {
                return Err(Error::InvalidParameter(format!("circulant mode needs N a power of two, got {n}")));
            }
            fgn_circulant(hurst, n, &mut rng)
                .ok_or_else(|| Error::Numerical("circulant embedding is not nonnegative definite".into()))?
        }
        FbmMethod::Auto => {
            let circ = if n.is_power_of_two() { fgn_circulant(hurst, n, &mut rng) } else { None };
            match circ {
                Some(z) => z,
                None => fgn_cholesky(hurst, n, &mut ChaCha8Rng::seed_from_u64(seed))?,
            }
        }
    };
    let scale = (horizon / n as f64).powf(hurst);
    let mut values = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    values.push(0.0);
    for z in noise {
        acc += scale * z;
        values.push(acc);
    }
    GridPath::new(horizon, values)
}

/// Unit-spaced fGn via circulant embedding of size `2N`. Returns `None` when
/// the embedding has a significantly negative eigenvalue.
fn fgn_circulant(hurst: f64, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let m = 2 * n;
    let mut row: Vec<Complex64> = (0..m)
        .map(|j| {
            let k = if j <= n { j } else { m - j };
            Complex64::new(fgn_autocovariance(hurst, k), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let scale = row.iter().fold(0.0_f64, |s, l| s.max(l.re.abs()));
    let mut sqrt_eig = Vec::with_capacity(m);
    for l in &row {
        if l.re < -1e-10 * scale {
            return None;
        }
        sqrt_eig.push((l.re.max(0.0) / m as f64).sqrt());
    }
    let mut w: Vec<Complex64> = sqrt_eig
        .iter()
        .map(|&s| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(s * re, s * im)
        })
        .collect();
    fft.process(&mut w);
    Some(w[..n].iter().map(|c| c.re).collect())
}

fn fgn_cholesky(hurst: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(hurst, i.abs_diff(j)));
    let chol = cov.cholesky().ok_or_else(|| Error::Numerical("fGn covariance is not positive definite".into()))?;
    let z = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    Ok((chol.l() * z).iter().copied().collect())
}

/// Deterministic Hölder test paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestPathKind {
    /// `t^beta`.
    PowerBeta { beta: f64 },
    /// `amplitude * sin(2π frequency t)`.
    Sine { amplitude: f64, frequency: f64 },
    /// `amplitude * Σ_n a^n cos(b^n π t)`, with `0 < a < 1 < b`.
    Weierstrass { a: f64, b: f64, amplitude: f64 },
}

impl TestPathKind {
    /// The Hölder index the path is known to have.
    pub fn holder_index(&self) -> f64 {
        match *self {
            TestPathKind::PowerBeta { beta } => beta,
            TestPathKind::Sine { .. } => 1.0,
            TestPathKind::Weierstrass { a, b, .. } => ((1.0 / a).ln() / b.ln()).min(1.0),
        }
    }
}

/// A deterministic path together with its declared Hölder index.
#[derive(Debug, Clone, PartialEq)]
pub struct TestPath {
    pub path: GridPath,
    pub holder_index: f64,
}

pub fn test_path(kind: TestPathKind, horizon: f64, n_steps: usize) -> Result<TestPath> {
    let invalid = |msg: String| Err(Error::InvalidParameter(msg));
    let path = match kind {
        TestPathKind::PowerBeta { beta } => {
            if !(beta > 0.5 && beta <= 1.0) {
                return invalid(format!("power path index must lie in (1/2, 1], got {beta}"));
            }
            GridPath::from_fn(horizon, n_steps, |t| t.powf(beta))?
        }
        TestPathKind::Sine { amplitude, frequency } => {
            if !(amplitude.is_finite() && frequency.is_finite()) {
                return invalid("sine parameters must be finite".into());
            }
            GridPath::from_fn(horizon, n_steps, |t| amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin())?
        }
        TestPathKind::Weierstrass { a, b, amplitude } => {
            if !(a > 0.0 && a < 1.0 && b > 1.0) {
                return invalid(format!("Weierstrass needs 0 < a < 1 < b, got a={a}, b={b}"));
            }
            if kind.holder_index() <= 0.5 {
                return invalid(format!("Weierstrass index {} is not above 1/2", kind.holder_index()));
            }
            // Terms below 1e-12 relative are under double resolution.
            let n_terms = ((1e-12_f64).ln() / a.ln()).ceil() as i32;
            GridPath::from_fn(horizon, n_steps, |t| {
                let mut s = 0.0;
                for k in 0..n_terms {
                    s += a.powi(k) * (b.powi(k) * std::f64::consts::PI * t).cos();
                }
                amplitude * s
            })?
        }
    };
    Ok(TestPath { path, holder_index: kind.holder_index() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_seminorm(v: &[f64], dt: f64, mu: f64) -> f64 {
        let mut best = 0.0_f64;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                best = best.max((v[j] - v[i]).abs() / ((j - i) as f64 * dt).powf(mu));
            }
        }
        best
    }

    #[test]
    fn linear_path_seminorm_is_slope() {
        let p = GridPath::from_fn(1.0, 64, |t| 3.0 * t).unwrap();
        for mu in [0.3, 0.6, 0.9] {
            let h = holder_seminorm(&p, mu, 0.0, 1.0).unwrap();
            assert!((h.seminorm - 3.0).abs() < 1e-12);
            assert!((h.sup_norm - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_path_has_zero_seminorm() {
        let p = GridPath::constant(1.0, 32, -2.5).unwrap();
        let h = holder_seminorm(&p, 0.7, 0.0, 1.0).unwrap();
        assert_eq!(h.seminorm, 0.0);
        assert_eq!(h.sup_norm, 2.5);
    }

    #[test]
    fn power_path_seminorm_matches_brute_force() {
        let n = 1 << 10;
        let p = GridPath::from_fn(1.0, n, |t| t.powf(0.6)).unwrap();
        let h = holder_seminorm(&p, 0.6, 0.0, 1.0).unwrap();
        let oracle = brute_force_seminorm(p.values(), p.dt(), 0.6);
        assert!((h.seminorm - oracle).abs() < 1e-12);
        assert!((h.seminorm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_window_is_rejected() {
        let p = GridPath::constant(1.0, 8, 0.0).unwrap();
        assert!(matches!(holder_seminorm(&p, 0.5, 0.5, 0.5), Err(Error::InvalidWindow { .. })));
        assert!(holder_seminorm(&p, 0.5, 0.6, 0.2).is_err());
    }

    #[test]
    fn window_snaps_outward() {
        let p = GridPath::from_fn(1.0, 10, |t| t).unwrap();
        let h = holder_seminorm(&p, 1.0, 0.25, 0.55).unwrap();
        assert!((h.window.0 - 0.2).abs() < 1e-12);
        assert!((h.window.1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn fast_mode_underestimates_reference() {
        let p = fbm_generate(&FbmSpec::new(0.7, 1.0, 512, 3)).unwrap();
        let exact = holder_seminorm(&p, 0.6, 0.0, 1.0).unwrap().seminorm;
        let fast = holder_seminorm_fast(&p, 0.6, 0.0, 1.0, 16).unwrap().seminorm;
        assert!(fast <= exact + 1e-15);
        let full = holder_seminorm_fast(&p, 0.6, 0.0, 1.0, 512).unwrap().seminorm;
        assert_eq!(full, exact);
    }

    #[test]
    fn fbm_is_deterministic_and_starts_at_zero() {
        let spec = FbmSpec::new(0.7, 1.0, 256, 42);
        let a = fbm_generate(&spec).unwrap();
        let b = fbm_generate(&spec).unwrap();
        assert_eq!(a.first(), 0.0);
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = fbm_generate(&FbmSpec::new(0.7, 1.0, 256, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fbm_rejects_bad_hurst() {
        for h in [0.0, 1.0, -0.2, 1.5] {
            assert!(matches!(fbm_generate(&FbmSpec::new(h, 1.0, 64, 1)), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn fbm_cholesky_fallback_for_odd_sizes() {
        let p = fbm_generate(&FbmSpec::new(0.7, 1.0, 100, 9)).unwrap();
        assert_eq!(p.n_steps(), 100);
        let mut spec = FbmSpec::new(0.7, 1.0, 100, 9);
        spec.method = FbmMethod::Circulant;
        assert!(fbm_generate(&spec).is_err());
    }

    #[test]
    fn fbm_hurst_07_has_index_below_hurst() {
        let p = fbm_generate(&FbmSpec::new(0.7, 1.0, 1 << 14, 11)).unwrap();
        let est = estimate_holder_index(&p);
        assert!(est > 0.55 && est < 0.7, "estimated index {est}");
    }

    #[test]
    fn power_path_values() {
        let tp = test_path(TestPathKind::PowerBeta { beta: 0.75 }, 1.0, 16).unwrap();
        for i in 0..=16 {
            assert_eq!(tp.path.value(i), (i as f64 / 16.0).powf(0.75));
        }
        assert_eq!(tp.holder_index, 0.75);
    }

    #[test]
    fn sine_path_is_lipschitz() {
        let tp = test_path(TestPathKind::Sine { amplitude: 1.0, frequency: 1.0 }, 1.0, 1024).unwrap();
        let lip = holder_seminorm(&tp.path, 1.0, 0.0, 1.0).unwrap().seminorm;
        assert!(lip <= 2.0 * std::f64::consts::PI + 1e-9);
    }

    #[test]
    fn weierstrass_index_estimate() {
        let kind = TestPathKind::Weierstrass { a: 0.4, b: 3.0, amplitude: 1.0 };
        let tp = test_path(kind, 1.0, 1 << 14).unwrap();
        let est = estimate_holder_index(&tp.path);
        let expected = (1.0_f64 / 0.4).ln() / 3.0_f64.ln();
        assert!((est - expected).abs() < 0.1, "estimated {est}, expected {expected}");
    }

    #[test]
    fn rough_parameters_rejected() {
        assert!(test_path(TestPathKind::PowerBeta { beta: 0.5 }, 1.0, 8).is_err());
        assert!(test_path(TestPathKind::Weierstrass { a: 0.8, b: 2.0, amplitude: 1.0 }, 1.0, 8).is_err());
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let p = GridPath::from_fn(1.0, 2, |t| t / 3.0).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], "t,value");
        assert_eq!(lines.len(), 4);
        let v: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.5 / 3.0);
    }

    #[test]
    fn interpolation_is_linear_between_nodes() {
        let p = GridPath::from_fn(2.0, 4, |t| t * t).unwrap();
        assert_eq!(p.interpolate(0.5), 0.25);
        assert!((p.interpolate(0.75) - 0.625).abs() < 1e-15);
        assert_eq!(p.interpolate(2.0), 4.0);
    }
}
