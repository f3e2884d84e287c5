//! Step relaxed controls and their projection onto ordinary controls.
//!
//! A [`StepRelaxedControl`] is piecewise constant in time: on cell
//! `[t_j, t_{j+1})` it is the probability measure `Σ_i w[j][i] δ_{a_i}` over
//! a finite atom set in the control interval `U`. Ordinary controls embed as
//! Dirac rows; [`chatter`] goes the other way by switching rapidly between
//! atoms in proportion to their weights.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{fmt_f64, GridPath};

const SIMPLEX_TOL: f64 = 1e-12;

/// Compact control interval `U = [min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    pub min: f64,
    pub max: f64,
}

impl ControlSet {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min <= max && min.is_finite() && max.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid control set [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.min - 1e-12 && u <= self.max + 1e-12
    }

    pub fn check(&self, u: f64) -> Result<()> {
        if self.contains(u) {
            Ok(())
        } else {
            Err(Error::ControlDomain { value: u, min: self.min, max: self.max })
        }
    }

    /// `k` equispaced atoms covering `U` (the midpoint when `k = 1`).
    pub fn uniform_atoms(&self, k: usize) -> Vec<f64> {
        match k {
            0 => Vec::new(),
            1 => vec![0.5 * (self.min + self.max)],
            _ => (0..k).map(|i| self.min + (self.max - self.min) * i as f64 / (k - 1) as f64).collect(),
        }
    }
}

/// `M + 1` equispaced cell boundaries on `[0, T]`.
pub fn uniform_cells(horizon: f64, m: usize) -> Vec<f64> {
    (0..=m).map(|j| horizon * j as f64 / m as f64).collect()
}

fn grid_index(t: f64, dt: f64) -> Option<usize> {
    let s = t / dt;
    let r = s.round();
    ((s - r).abs() <= 1e-9 * s.abs().max(1.0)).then_some(r as usize)
}

fn check_boundaries(cells: &[f64]) -> Result<()> {
    if cells.len() < 2 {
        return Err(Error::InvalidParameter("need at least one cell".into()));
    }
    if cells[0] != 0.0 {
        return Err(Error::InvalidParameter(format!("first cell must start at 0, got {}", cells[0])));
    }
    if cells.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("cell boundaries must increase strictly".into()));
    }
    Ok(())
}

/// Euclidean projection of `v` onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Piecewise-constant-in-time probability weights over a finite atom set.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRelaxedControl {
    cells: Vec<f64>,
    atoms: Vec<f64>,
    weights: Vec<Vec<f64>>,
    set: ControlSet,
}

#[derive(Serialize, Deserialize)]
struct StepRelaxedJson {
    cells: Vec<f64>,
    atoms: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

impl StepRelaxedControl {
    pub fn new(cells: Vec<f64>, atoms: Vec<f64>, weights: Vec<Vec<f64>>, set: ControlSet) -> Result<Self> {
        check_boundaries(&cells)?;
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("need at least one atom".into()));
        }
        for &a in &atoms {
            set.check(a)?;
        }
        if weights.len() != cells.len() - 1 {
            return Err(Error::InvalidParameter(format!(
                "{} weight rows for {} cells",
                weights.len(),
                cells.len() - 1
            )));
        }
        for (j, row) in weights.iter().enumerate() {
            if row.len() != atoms.len() {
                return Err(Error::InvalidParameter(format!("weight row {j} has wrong length")));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidParameter(format!("weight row {j} is not on the simplex (sum {sum})")));
            }
        }
        Ok(Self { cells, atoms, weights, set })
    }

    /// The same weights everywhere.
    pub fn constant(horizon: f64, m: usize, atoms: Vec<f64>, row: Vec<f64>, set: ControlSet) -> Result<Self> {
        Self::new(uniform_cells(horizon, m), atoms, vec![row; m], set)
    }

    /// Rebuilds with new weights (row-major, `M × k`), same cells and atoms.
    pub fn with_flat_weights(&self, flat: &[f64]) -> Result<Self> {
        let k = self.atoms.len();
        let rows = flat.chunks(k).map(<[f64]>::to_vec).collect();
        Self::new(self.cells.clone(), self.atoms.clone(), rows, self.set)
    }

    /// Same cells and atoms with weights that need not lie on the simplex.
    /// The mixture integrals extend linearly, which is what finite-difference
    /// gradients in the weights evaluate.
    pub(crate) fn with_raw_weights(&self, flat: &[f64]) -> Self {
        let k = self.atoms.len();
        Self {
            cells: self.cells.clone(),
            atoms: self.atoms.clone(),
            weights: flat.chunks(k).map(<[f64]>::to_vec).collect(),
            set: self.set,
        }
    }

    pub fn flat_weights(&self) -> Vec<f64> {
        self.weights.iter().flatten().copied().collect()
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn control_set(&self) -> ControlSet {
        self.set
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.cells[self.cells.len() - 1]
    }

    /// Cell `j` with `t_j ≤ t < t_{j+1}` (the last cell includes `T`).
    pub fn cell_index(&self, t: f64) -> usize {
        let j = self.cells.partition_point(|&c| c <= t);
        j.saturating_sub(1).min(self.n_cells() - 1)
    }

    /// Weight row active on grid step `[i dt, (i+1) dt)`.
    pub fn row_for_step(&self, i: usize, dt: f64) -> &[f64] {
        &self.weights[self.cell_index((i as f64 + 0.5) * dt)]
    }

    /// `Σ_i w[j][i] f(a_i)` for cell `j`, skipping zero weights.
    #[inline]
    pub fn mix(&self, row: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (&w, &a) in row.iter().zip(&self.atoms) {
            if w != 0.0 {
                acc += w * f(a);
            }
        }
        acc
    }

    /// Fails unless every cell boundary is a node of the `n_steps` grid.
    pub fn ensure_grid_aligned(&self, n_steps: usize) -> Result<Vec<usize>> {
        let dt = self.horizon() / n_steps as f64;
        self.cells
            .iter()
            .map(|&c| {
                grid_index(c, dt).ok_or_else(|| {
                    Error::Incompatible(format!("cell boundary {c} is not on the grid with N = {n_steps}"))
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&StepRelaxedJson {
            cells: self.cells.clone(),
            atoms: self.atoms.clone(),
            weights: self.weights.clone(),
        })
        .expect("plain numeric data serializes")
    }

    pub fn from_json(s: &str, set: ControlSet) -> Result<Self> {
        let raw: StepRelaxedJson =
            serde_json::from_str(s).map_err(|e| Error::InvalidParameter(format!("bad relaxed-control JSON: {e}")))?;
        Self::new(raw.cells, raw.atoms, raw.weights, set)
    }
}

impl Serialize for StepRelaxedControl {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StepRelaxedJson { cells: self.cells.clone(), atoms: self.atoms.clone(), weights: self.weights.clone() }
            .serialize(s)
    }
}

/// An ordinary control that is constant on each piece `[t_j, t_{j+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    pub boundaries: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(boundaries: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_boundaries(&boundaries)?;
        if values.len() != boundaries.len() - 1 {
            return Err(Error::InvalidParameter("one value per piece required".into()));
        }
        Ok(Self { boundaries, values })
    }

    /// Samples on a grid: node `i < N` takes the value of the piece
    /// containing step `i`, node `N` repeats the last value.
    pub fn to_grid_path(&self, n_steps: usize) -> Result<GridPath> {
        let horizon = self.boundaries[self.boundaries.len() - 1];
        let dt = horizon / n_steps as f64;
        let mut vals = Vec::with_capacity(n_steps + 1);
        for i in 0..n_steps {
            let t = (i as f64 + 0.5) * dt;
            let j = self.boundaries.partition_point(|&c| c <= t).saturating_sub(1).min(self.values.len() - 1);
            vals.push(self.values[j]);
        }
        vals.push(self.values[self.values.len() - 1]);
        GridPath::new(horizon, vals)
    }

    /// Pieces of a grid control, merging runs of equal step values.
    pub fn from_grid_steps(u: &GridPath) -> Self {
        let v = u.values();
        let mut boundaries = vec![0.0];
        let mut values = vec![v[0]];
        for i in 1..u.n_steps() {
            if v[i] != v[i - 1] {
                boundaries.push(u.time(i));
                values.push(v[i]);
            }
        }
        boundaries.push(u.horizon());
        Self { boundaries, values }
    }
}

/// Dirac embedding `u ↦ δ_{u_t} dt` of a piecewise-constant control.
pub fn embed_ordinary(u: &PiecewiseConstant, set: ControlSet) -> Result<StepRelaxedControl> {
    for &v in &u.values {
        set.check(v)?;
    }
    let mut atoms = u.values.clone();
    atoms.sort_by(f64::total_cmp);
    atoms.dedup();
    let weights = u.values.iter().map(|v| atoms.iter().map(|a| if a == v { 1.0 } else { 0.0 }).collect()).collect();
    StepRelaxedControl::new(u.boundaries.clone(), atoms, weights, set)
}

/// Dirac embedding of a grid control read as constant on each grid step.
pub fn embed_grid_control(u: &GridPath, set: ControlSet) -> Result<StepRelaxedControl> {
    embed_ordinary(&PiecewiseConstant::from_grid_steps(u), set)
}

/// One piece of a chattering partition: `[start, end)` carries atom `atom`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChatterPiece {
    pub start: f64,
    pub end: f64,
    pub atom: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatterPartition {
    pub refinement: usize,
    pub pieces: Vec<ChatterPiece>,
}

impl ChatterPartition {
    /// Total time assigned to `atom` inside `[a, b)`.
    pub fn occupation(&self, atom: usize, a: f64, b: f64) -> f64 {
        self.pieces.iter().filter(|p| p.atom == atom).map(|p| (p.end.min(b) - p.start.max(a)).max(0.0)).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_start,t_end,atom")?;
        for p in &self.pieces {
            writeln!(w, "{},{},{}", fmt_f64(p.start), fmt_f64(p.end), p.atom)?;
        }
        Ok(())
    }
}

/// Output of [`chatter`].
#[derive(Debug, Clone, PartialEq)]
pub struct Chattered {
    /// Ordinary control on the grid, constant on each grid step.
    pub control: GridPath,
    pub pieces: PiecewiseConstant,
    pub partition: ChatterPartition,
}

impl Chattered {
    /// The chattered control as a Dirac-valued relaxed control over the
    /// original atoms.
    pub fn to_relaxed(&self, original: &StepRelaxedControl) -> Result<StepRelaxedControl> {
        let k = original.atoms().len();
        let mut cells = vec![0.0];
        let mut rows = Vec::new();
        for p in &self.partition.pieces {
            cells.push(p.end);
            let mut row = vec![0.0; k];
            row[p.atom] = 1.0;
            rows.push(row);
        }
        StepRelaxedControl::new(cells, original.atoms().to_vec(), rows, original.control_set())
    }
}

/// Integer apportionment of `size` steps among atoms so that the running
/// totals `assigned` track the continuous targets within one step.
fn apportion(targets: &[f64], assigned: &[usize], size: usize) -> Vec<usize> {
    let want: Vec<f64> = targets.iter().zip(assigned).map(|(t, &a)| t - a as f64).collect();
    let mut n: Vec<usize> = want.iter().map(|d| d.max(0.0).floor() as usize).collect();
    let mut total: usize = n.iter().sum();
    while total > size {
        // Over-allocation can only come from rows already ahead of target.
        let i = (0..n.len())
            .filter(|&i| n[i] > 0)
            .min_by(|&i, &j| (want[i] - n[i] as f64).total_cmp(&(want[j] - n[j] as f64)))
            .expect("positive allocation exists");
        n[i] -= 1;
        total -= 1;
    }
    while total < size {
        let i = (0..n.len())
            .max_by(|&i, &j| (want[i] - n[i] as f64).total_cmp(&(want[j] - n[j] as f64)).then(j.cmp(&i)))
            .expect("at least one atom");
        n[i] += 1;
        total += 1;
    }
    n
}

/// Chattering projection of a step relaxed control onto an ordinary control
/// on the `n_steps` grid.
///
/// Each cell is split into `m` equal subcells (boundaries snapped to the
/// grid). Inside every subcell the atoms are laid out consecutively in
/// ascending index order, each for a number of grid steps proportional to
/// its weight; the integer step counts are apportioned so that the time each
/// atom occupies per cell is within one grid step of `w[j][i]` times the
/// cell length.
pub fn chatter(q: &StepRelaxedControl, m: usize, n_steps: usize) -> Result<Chattered> {
    if m == 0 {
        return Err(Error::InvalidParameter("chattering refinement must be at least 1".into()));
    }
    let idx = q.ensure_grid_aligned(n_steps)?;
    let dt = q.horizon() / n_steps as f64;
    let k = q.atoms().len();
    let mut step_atom = Vec::with_capacity(n_steps);
    for j in 0..q.n_cells() {
        let (s0, s1) = (idx[j], idx[j + 1]);
        let len = s1 - s0;
        let w = &q.weights()[j];
        let mut assigned = vec![0usize; k];
        let mut prev = 0usize;
        for s in 1..=m {
            let end = ((s as f64) * len as f64 / m as f64).round() as usize;
            let size = end - prev;
            let targets: Vec<f64> = w.iter().map(|wi| wi * end as f64).collect();
            let counts = apportion(&targets, &assigned, size);
            for (i, &c) in counts.iter().enumerate() {
                step_atom.extend(std::iter::repeat_n(i, c));
                assigned[i] += c;
            }
            prev = end;
        }
    }
    debug_assert_eq!(step_atom.len(), n_steps);

    let mut pieces: Vec<ChatterPiece> = Vec::new();
    for (i, &a) in step_atom.iter().enumerate() {
        let (start, end) = (i as f64 * dt, (i + 1) as f64 * dt);
        match pieces.last_mut() {
            Some(p) if p.atom == a && !idx.contains(&i) => p.end = end,
            _ => pieces.push(ChatterPiece { start, end, atom: a }),
        }
    }
    if let Some(p) = pieces.last_mut() {
        p.end = q.horizon();
    }
    let mut values: Vec<f64> = step_atom.iter().map(|&a| q.atoms()[a]).collect();
    values.push(q.atoms()[step_atom[n_steps - 1]]);
    let control = GridPath::new(q.horizon(), values)?;
    Ok(Chattered {
        pieces: PiecewiseConstant::from_grid_steps(&control),
        control,
        partition: ChatterPartition { refinement: m, pieces },
    })
}

/// Test function `f(r, a) = r^p cos(ω a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub power: i32,
    pub omega: f64,
}

impl TestFunction {
    /// `∫∫ f dq`, exact: closed-form time integrals per cell times the
    /// weighted atom sum.
    pub fn integrate(&self, q: &StepRelaxedControl) -> f64 {
        let p = self.power as f64 + 1.0;
        q.cells()
            .windows(2)
            .zip(q.weights())
            .map(|(c, row)| {
                let time = (c[1].powf(p) - c[0].powf(p)) / p;
                time * q.mix(row, |a| (self.omega * a).cos())
            })
            .sum()
    }
}

/// `r^p cos(ω a)` for `p ∈ {0, 1}`, `ω ∈ {1, 2, 3}`.
pub fn default_dictionary() -> Vec<TestFunction> {
    let mut d = Vec::new();
    for power in [0, 1] {
        for omega in [1.0, 2.0, 3.0] {
            d.push(TestFunction { power, omega });
        }
    }
    d
}

/// Dictionary pseudometric `max_f |∫∫ f dq1 - ∫∫ f dq2|`.
pub fn vague_distance(q1: &StepRelaxedControl, q2: &StepRelaxedControl, dictionary: &[TestFunction]) -> Result<f64> {
    if dictionary.is_empty() {
        return Err(Error::InvalidParameter("empty test-function dictionary".into()));
    }
    if q1.control_set() != q2.control_set() {
        return Err(Error::InvalidParameter("relaxed controls live on different control sets".into()));
    }
    Ok(dictionary.iter().map(|f| (f.integrate(q1) - f.integrate(q2)).abs()).fold(0.0, f64::max))
}

/// Step approximation of a general relaxed control given by its kernel
/// `r ↦ q_r`, a probability vector over `fine_atoms`.
///
/// The kernel is sampled at the midpoint of each of `m` uniform cells and its
/// mass collapsed onto the nearest of `k` uniform atoms on `U`. Rows off the
/// simplex by less than `1e-6` are renormalized with a warning.
pub fn step_approximate(
    kernel: &dyn Fn(f64) -> Vec<f64>,
    fine_atoms: &[f64],
    horizon: f64,
    m: usize,
    k: usize,
    set: ControlSet,
) -> Result<StepRelaxedControl> {
    if m == 0 || k == 0 {
        return Err(Error::InvalidParameter("need at least one cell and one atom".into()));
    }
    let atoms = set.uniform_atoms(k);
    let cells = uniform_cells(horizon, m);
    let nearest =
        |x: f64| (0..k).min_by(|&i, &j| (atoms[i] - x).abs().total_cmp(&(atoms[j] - x).abs())).expect("k > 0");
    let fine_to_coarse: Vec<usize> = fine_atoms.iter().map(|&x| nearest(x)).collect();
    let mut weights = Vec::with_capacity(m);
    for j in 0..m {
        let mid = 0.5 * (cells[j] + cells[j + 1]);
        let raw = kernel(mid);
        if raw.len() != fine_atoms.len() {
            return Err(Error::InvalidParameter(format!(
                "kernel returned {} weights for {} atoms",
                raw.len(),
                fine_atoms.len()
            )));
        }
        if raw.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidParameter(format!("kernel weights at r = {mid} are not nonnegative")));
        }
        let sum: f64 = raw.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!("kernel weights at r = {mid} sum to {sum}")));
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            log::warn!("renormalizing kernel weights at r = {mid} (sum {sum})");
        }
        let mut row = vec![0.0; k];
        for (w, &c) in raw.iter().zip(&fine_to_coarse) {
            row[c] += w / sum;
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= s);
        weights.push(row);
    }
    StepRelaxedControl::new(cells, atoms, weights, set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> ControlSet {
        ControlSet::new(0.0, 1.0).unwrap()
    }

    fn half_half() -> StepRelaxedControl {
        StepRelaxedControl::constant(1.0, 1, vec![0.0, 1.0], vec![0.5, 0.5], unit()).unwrap()
    }

    #[test]
    fn rejects_off_simplex_and_out_of_set() {
        assert!(StepRelaxedControl::constant(1.0, 1, vec![0.0, 1.0], vec![0.6, 0.5], unit()).is_err());
        assert!(StepRelaxedControl::constant(1.0, 1, vec![0.0, 1.0], vec![1.2, -0.2], unit()).is_err());
        assert!(matches!(
            StepRelaxedControl::constant(1.0, 1, vec![0.0, 2.0], vec![0.5, 0.5], unit()),
            Err(Error::ControlDomain { .. })
        ));
    }

    #[test]
    fn embed_constant_control() {
        let pc = PiecewiseConstant::new(vec![0.0, 0.5, 1.0], vec![0.3, 0.3]).unwrap();
        let q = embed_ordinary(&pc, unit()).unwrap();
        assert_eq!(q.atoms(), &[0.3]);
        assert!(q.weights().iter().all(|r| r == &vec![1.0]));
    }

    #[test]
    fn embed_bang_bang() {
        let pc = PiecewiseConstant::new(vec![0.0, 0.5, 1.0], vec![1.0, 0.0]).unwrap();
        let q = embed_ordinary(&pc, unit()).unwrap();
        assert_eq!(q.atoms(), &[0.0, 1.0]);
        assert_eq!(q.weights(), &[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(embed_ordinary(&PiecewiseConstant::new(vec![0.0, 1.0], vec![3.0]).unwrap(), unit()).is_err());
    }

    #[test]
    fn embed_grid_control_merges_equal_steps() {
        let pc = PiecewiseConstant::new(vec![0.0, 0.25, 1.0], vec![0.2, 0.9]).unwrap();
        let u = pc.to_grid_path(16).unwrap();
        assert_eq!(PiecewiseConstant::from_grid_steps(&u), pc);
        let q = embed_grid_control(&u, unit()).unwrap();
        assert_eq!(q.n_cells(), 2);
    }

    #[test]
    fn chatter_of_dirac_rows_is_identity() {
        let pc = PiecewiseConstant::new(vec![0.0, 0.5, 1.0], vec![1.0, 0.0]).unwrap();
        let q = embed_ordinary(&pc, unit()).unwrap();
        for m in [1, 3, 8] {
            let c = chatter(&q, m, 64).unwrap();
            assert_eq!(c.control, pc.to_grid_path(64).unwrap());
            assert_eq!(c.pieces, pc);
        }
    }

    #[test]
    fn chatter_splits_proportionally() {
        let c = chatter(&half_half(), 1, 16).unwrap();
        assert_eq!(
            c.partition.pieces,
            vec![ChatterPiece { start: 0.0, end: 0.5, atom: 0 }, ChatterPiece { start: 0.5, end: 1.0, atom: 1 }]
        );
        assert_eq!(c.pieces.values, vec![0.0, 1.0]);
    }

    #[test]
    fn chattering_error_halves_with_refinement() {
        // f(r, a) = r a against q = ½δ_0 + ½δ_1 on [0, 1]: ∫∫ f dq = 1/4,
        // the chattered control gives 1/4 + 1/(8m).
        let q = half_half();
        let n = 1 << 10;
        let exact = 0.25;
        let mut gaps = Vec::new();
        for m in [1, 2, 4, 8] {
            let c = chatter(&q, m, n).unwrap();
            let chattered: f64 =
                c.partition.pieces.iter().map(|p| q.atoms()[p.atom] * 0.5 * (p.end * p.end - p.start * p.start)).sum();
            let gap = (chattered - exact).abs();
            assert!((gap - 1.0 / (8.0 * m as f64)).abs() < 1e-12);
            gaps.push(gap);
        }
        for w in gaps.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn vague_distance_basics() {
        let q = half_half();
        let d = default_dictionary();
        assert_eq!(vague_distance(&q, &q, &d).unwrap(), 0.0);
        assert!(vague_distance(&q, &q, &[]).is_err());
        let p = StepRelaxedControl::constant(1.0, 2, vec![0.0, 1.0], vec![0.9, 0.1], unit()).unwrap();
        assert_eq!(vague_distance(&p, &q, &d).unwrap(), vague_distance(&q, &p, &d).unwrap());
    }

    #[test]
    fn chatter_reembedded_distance_halves() {
        let q = half_half();
        let d = default_dictionary();
        let dist: Vec<f64> = [1, 2, 4, 8, 16]
            .iter()
            .map(|&m| vague_distance(&q, &chatter(&q, m, 1 << 10).unwrap().to_relaxed(&q).unwrap(), &d).unwrap())
            .collect();
        for w in dist.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-6, "{dist:?}");
        }
    }

    #[test]
    fn step_approximation_of_constant_kernel() {
        let fine: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let kernel = |_r: f64| {
            let mut w = vec![0.0; 11];
            w[2] = 0.25;
            w[9] = 0.75;
            w
        };
        let q = step_approximate(&kernel, &fine, 1.0, 4, 3, unit()).unwrap();
        assert!(q.weights().iter().all(|r| r == &q.weights()[0]));
        assert_eq!(q.weights()[0], vec![0.25, 0.0, 0.75]);
    }

    #[test]
    fn step_approximation_of_dirac_path_recovers_embedding() {
        let set = unit();
        let fine = set.uniform_atoms(5);
        let u = |r: f64| if r < 0.5 { 0.25 } else { 1.0 };
        let kernel = |r: f64| fine.iter().map(|&a| if a == u(r) { 1.0 } else { 0.0 }).collect::<Vec<_>>();
        let q = step_approximate(&kernel, &fine, 1.0, 4, 5, set).unwrap();
        let pc = PiecewiseConstant::new(uniform_cells(1.0, 4), vec![0.25, 0.25, 1.0, 1.0]).unwrap();
        let embedded = embed_ordinary(&pc, set).unwrap();
        let d = default_dictionary();
        assert!(vague_distance(&q, &embedded, &d).unwrap() < 1e-15);
    }

    #[test]
    fn step_approximation_refines() {
        let set = unit();
        let fine = set.uniform_atoms(201);
        let kernel = |r: f64| {
            // Discretized Gaussian bump moving with r.
            let c = 0.2 + 0.6 * r;
            let raw: Vec<f64> = fine.iter().map(|&a| (-(a - c).powi(2) / 0.02).exp()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / s).collect::<Vec<_>>()
        };
        let reference = step_approximate(&kernel, &fine, 1.0, 64, 129, set).unwrap();
        let d = default_dictionary();
        let dist: Vec<f64> = [(2, 3), (4, 5), (8, 9), (16, 17)]
            .iter()
            .map(|&(m, k)| {
                vague_distance(&step_approximate(&kernel, &fine, 1.0, m, k, set).unwrap(), &reference, &d).unwrap()
            })
            .collect();
        for w in dist.windows(2) {
            assert!(w[1] < w[0], "{dist:?}");
        }
    }

    #[test]
    fn step_approximation_rejects_bad_kernels() {
        let fine = vec![0.0, 1.0];
        assert!(step_approximate(&|_| vec![0.7, 0.7], &fine, 1.0, 2, 2, unit()).is_err());
        assert!(step_approximate(&|_| vec![1.5, -0.5], &fine, 1.0, 2, 2, unit()).is_err());
        let q = step_approximate(&|_| vec![0.5, 0.5 + 5e-7], &fine, 1.0, 2, 2, unit()).unwrap();
        assert!((q.weights()[0].iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let q = StepRelaxedControl::constant(1.0, 2, vec![0.0, 1.0], vec![0.25, 0.75], unit()).unwrap();
        let s = q.to_json();
        assert!(s.contains("\"cells\"") && s.contains("\"atoms\"") && s.contains("\"weights\""));
        assert_eq!(StepRelaxedControl::from_json(&s, unit()).unwrap(), q);
    }

    #[test]
    fn partition_csv() {
        let c = chatter(&half_half(), 2, 8).unwrap();
        let mut buf = Vec::new();
        c.partition.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "t_start,t_end,atom");
        assert_eq!(s.lines().count(), 5);
    }

    /// Reference projection by bisection on the threshold.
    fn bisection_projection(v: &[f64]) -> Vec<f64> {
        let (mut lo, mut hi) =
            (v.iter().cloned().fold(f64::MAX, f64::min) - 1.0, v.iter().cloned().fold(f64::MIN, f64::max));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = v.iter().map(|x| (x - mid).max(0.0)).sum();
            if s > 1.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        v.iter().map(|x| (x - 0.5 * (lo + hi)).max(0.0)).collect()
    }

    fn simplex_row(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            let mut row: Vec<f64> = v.iter().map(|x| (x + 1e-9 / v.len() as f64) / s).collect();
            let tot: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= tot);
            row
        })
    }

    proptest! {
        #[test]
        fn projection_is_nearest_simplex_point(v in prop::collection::vec(-3.0f64..3.0, 1..8)) {
            let p = project_simplex(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            let r = bisection_projection(&v);
            for (a, b) in p.iter().zip(&r) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn chattering_matches_measure(rows in prop::collection::vec(simplex_row(3), 1..4), m in 1usize..9) {
            let n = 240;
            let set = ControlSet::new(-1.0, 1.0).unwrap();
            let cells = uniform_cells(1.0, rows.len());
            let cells: Vec<f64> = cells.iter().map(|c| (c * n as f64).round() / n as f64).collect();
            let q = StepRelaxedControl::new(cells.clone(), vec![-1.0, 0.2, 1.0], rows.clone(), set).unwrap();
            let c = chatter(&q, m, n).unwrap();
            let dt = 1.0 / n as f64;
            for (j, row) in rows.iter().enumerate() {
                let len = cells[j + 1] - cells[j];
                for (i, w) in row.iter().enumerate() {
                    let occ = c.partition.occupation(i, cells[j], cells[j + 1]);
                    prop_assert!((occ - w * len).abs() <= dt + 1e-12, "cell {} atom {}: {} vs {}", j, i, occ, w * len);
                }
            }
        }

        #[test]
        fn vague_distance_triangle(a in simplex_row(2), b in simplex_row(2), c in simplex_row(2)) {
            let set = unit();
            let mk = |r: &Vec<f64>| StepRelaxedControl::constant(1.0, 2, vec![0.0, 1.0], r.clone(), set).unwrap();
            let d = default_dictionary();
            let (qa, qb, qc) = (mk(&a), mk(&b), mk(&c));
            let ab = vague_distance(&qa, &qb, &d).unwrap();
            let bc = vague_distance(&qb, &qc, &d).unwrap();
            let ac = vague_distance(&qa, &qc, &d).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!(ac <= ab + bc + 1e-14);
        }
    }
}
