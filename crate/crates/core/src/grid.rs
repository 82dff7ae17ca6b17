//! Age mesh with interior interfaces, and nodal functions living on it.
//!
//! Nodes sit at multiples of `1 / cells_per_unit_age`. The time step equals the
//! cell width, so a unit-speed characteristic moves exactly one node per step.
//! Interface ages are nodes stored twice: as the last entry of the segment on
//! the left and as the first entry of the segment on the right.

use crate::error::{Error, Result};

/// Relative tolerance for deciding that an age or time lies on the mesh.
pub const ALIGN_TOL: f64 = 1e-9;

/// Composite trapezoid rule on equally spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

/// Index `n` with `x == n / k` up to [`ALIGN_TOL`], if any.
pub fn mesh_index(x: f64, k: usize) -> Option<usize> {
    if !x.is_finite() || x < -ALIGN_TOL {
        return None;
    }
    let r = x * k as f64;
    let n = r.round();
    ((r - n).abs() <= ALIGN_TOL * r.abs().max(1.0)).then_some(n.max(0.0) as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    marks: Vec<usize>,
    cells_per_unit_age: usize,
    steps: usize,
}

impl Grid {
    /// Mesh on `[0, age_max]` with interfaces at `interfaces` and a time
    /// horizon of `horizon`. All of them must be mesh-aligned.
    pub fn new(
        age_max: f64,
        interfaces: &[f64],
        cells_per_unit_age: usize,
        horizon: f64,
    ) -> Result<Self> {
        if cells_per_unit_age == 0 {
            return Err(Error::Grid("cells_per_unit_age must be positive".into()));
        }
        if !(age_max > 0.0) || !age_max.is_finite() {
            return Err(Error::Grid(format!("age_max must be positive, got {age_max}")));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::Grid(format!("horizon must be nonnegative, got {horizon}")));
        }
        let k = cells_per_unit_age;
        let align = |what: &str, x: f64| {
            mesh_index(x, k).ok_or_else(|| {
                Error::Grid(format!("{what} {x} is not a multiple of 1/{k}"))
            })
        };
        let mut marks = vec![0];
        for &a in interfaces {
            let m = align("interface age", a)?;
            if m <= *marks.last().unwrap() {
                return Err(Error::Grid(format!(
                    "interface ages must be strictly increasing and positive, got {a}"
                )));
            }
            marks.push(m);
        }
        let end = align("age_max", age_max)?;
        if end <= *marks.last().unwrap() {
            return Err(Error::Grid(format!(
                "interface ages must lie below age_max = {age_max}"
            )));
        }
        marks.push(end);
        let steps = align("horizon", horizon)?;
        Ok(Grid { marks, cells_per_unit_age: k, steps })
    }

    pub fn uniform(length: f64, cells_per_unit_age: usize, horizon: f64) -> Result<Self> {
        Grid::new(length, &[], cells_per_unit_age, horizon)
    }

    fn age_of(&self, mark: usize) -> f64 {
        mark as f64 / self.cells_per_unit_age as f64
    }

    pub fn cells_per_unit_age(&self) -> usize {
        self.cells_per_unit_age
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.cells_per_unit_age as f64
    }

    pub fn dt(&self) -> f64 {
        self.spacing()
    }

    pub fn age_max(&self) -> f64 {
        self.age_of(*self.marks.last().unwrap())
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 / self.cells_per_unit_age as f64
    }

    pub fn segment_count(&self) -> usize {
        self.marks.len() - 1
    }

    /// Interior interface ages, excluding 0 and `age_max`.
    pub fn interfaces(&self) -> Vec<f64> {
        self.marks[1..self.marks.len() - 1].iter().map(|&m| self.age_of(m)).collect()
    }

    pub fn segment_start(&self, j: usize) -> f64 {
        self.age_of(self.marks[j])
    }

    pub fn segment_end(&self, j: usize) -> f64 {
        self.age_of(self.marks[j + 1])
    }

    pub fn segment_cells(&self, j: usize) -> usize {
        self.marks[j + 1] - self.marks[j]
    }

    pub fn segment_nodes(&self, j: usize) -> usize {
        self.segment_cells(j) + 1
    }

    pub fn node_age(&self, j: usize, m: usize) -> f64 {
        self.age_of(self.marks[j] + m)
    }

    pub fn total_cells(&self) -> usize {
        *self.marks.last().unwrap()
    }

    /// The same mesh with `factor` times as many cells per unit age.
    pub fn refine(&self, factor: usize) -> Result<Grid> {
        if factor == 0 {
            return Err(Error::Grid("refinement factor must be positive".into()));
        }
        Ok(Grid {
            marks: self.marks.iter().map(|m| m * factor).collect(),
            cells_per_unit_age: self.cells_per_unit_age * factor,
            steps: self.steps * factor,
        })
    }

    /// Single-segment mesh `[0, L_j]` carrying the local coordinate of segment `j`.
    pub fn segment_grid(&self, j: usize) -> Grid {
        Grid {
            marks: vec![0, self.segment_cells(j)],
            cells_per_unit_age: self.cells_per_unit_age,
            steps: self.steps,
        }
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Grid> {
        let steps = mesh_index(horizon, self.cells_per_unit_age).ok_or_else(|| {
            Error::Grid(format!("horizon {horizon} is not a multiple of the time step"))
        })?;
        Ok(Grid { steps, ..self.clone() })
    }
}

/// Nodal values per segment; interface nodes appear in both neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    spacing: f64,
    segments: Vec<Vec<f64>>,
}

impl GridFunction {
    pub fn zeros(grid: &Grid) -> Self {
        Self::from_segment_fn(grid, |_, _| 0.0)
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Self::from_segment_fn(grid, |_, a| f(a))
    }

    /// Samples `f(j, a)` on segment `j`; lets the two sides of an interface differ.
    pub fn from_segment_fn(grid: &Grid, f: impl Fn(usize, f64) -> f64) -> Self {
        let segments = (0..grid.segment_count())
            .map(|j| (0..grid.segment_nodes(j)).map(|m| f(j, grid.node_age(j, m))).collect())
            .collect();
        GridFunction { spacing: grid.spacing(), segments }
    }

    pub fn from_segments(grid: &Grid, segments: Vec<Vec<f64>>) -> Result<Self> {
        if segments.len() != grid.segment_count() {
            return Err(Error::Shape(format!(
                "expected {} segments, got {}",
                grid.segment_count(),
                segments.len()
            )));
        }
        for (j, s) in segments.iter().enumerate() {
            if s.len() != grid.segment_nodes(j) {
                return Err(Error::Shape(format!(
                    "segment {j} needs {} nodes, got {}",
                    grid.segment_nodes(j),
                    s.len()
                )));
            }
        }
        Ok(GridFunction { spacing: grid.spacing(), segments })
    }

    pub fn single(spacing: f64, values: Vec<f64>) -> Self {
        GridFunction { spacing, segments: vec![values] }
    }

    /// Wraps segments without checking them against a [`Grid`].
    pub fn from_raw(spacing: f64, segments: Vec<Vec<f64>>) -> Self {
        GridFunction { spacing, segments }
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn segments(&self) -> &[Vec<f64>] {
        &self.segments
    }

    pub fn segment(&self, j: usize) -> &[f64] {
        &self.segments[j]
    }

    pub fn segment_mut(&mut self, j: usize) -> &mut Vec<f64> {
        &mut self.segments[j]
    }

    pub fn into_segments(self) -> Vec<Vec<f64>> {
        self.segments
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().flatten().copied()
    }

    /// `(left, right)` values at the interface between segments `j - 1` and `j`.
    pub fn interface_traces(&self, j: usize) -> (f64, f64) {
        (*self.segments[j - 1].last().unwrap(), self.segments[j][0])
    }

    pub fn l1_norm(&self) -> f64 {
        self.segments.iter().map(|s| trapezoid(&self.abs_of(s), self.spacing)).sum()
    }

    fn abs_of(&self, s: &[f64]) -> Vec<f64> {
        s.iter().map(|v| v.abs()).collect()
    }

    pub fn integral(&self) -> f64 {
        self.segments.iter().map(|s| trapezoid(s, self.spacing)).sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values().fold(f64::INFINITY, f64::min)
    }

    /// Variation inside each segment plus the jumps across interfaces.
    pub fn total_variation(&self) -> f64 {
        let inner: f64 = self
            .segments
            .iter()
            .map(|s| s.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>())
            .sum();
        let jumps: f64 = (1..self.segments.len())
            .map(|j| {
                let (l, r) = self.interface_traces(j);
                (r - l).abs()
            })
            .sum();
        inner + jumps
    }

    /// Piecewise-linear evaluation, right-continuous at interfaces, zero outside.
    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let mut start = 0.0;
        for (j, s) in self.segments.iter().enumerate() {
            let len = (s.len() - 1) as f64 * self.spacing;
            let last = j + 1 == self.segments.len();
            if x < start + len || (last && x <= start + len + ALIGN_TOL * self.spacing) {
                return interpolate(s, (x - start) / self.spacing);
            }
            start += len;
        }
        0.0
    }

    fn check_shape(&self, other: &GridFunction) -> Result<()> {
        let same = self.segments.len() == other.segments.len()
            && self.segments.iter().zip(&other.segments).all(|(a, b)| a.len() == b.len())
            && (self.spacing - other.spacing).abs() <= ALIGN_TOL * self.spacing;
        if same {
            Ok(())
        } else {
            Err(Error::Shape("grid functions live on different meshes".into()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            spacing: self.spacing,
            segments: self.segments.iter().map(|s| s.iter().map(|&v| f(v)).collect()).collect(),
        }
    }

    pub fn zip_with(
        &self,
        other: &GridFunction,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<GridFunction> {
        self.check_shape(other)?;
        Ok(GridFunction {
            spacing: self.spacing,
            segments: self
                .segments
                .iter()
                .zip(&other.segments)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        })
    }

    pub fn l1_distance(&self, other: &GridFunction) -> Result<f64> {
        Ok(self.zip_with(other, |a, b| a - b)?.l1_norm())
    }

    /// Samples of `self` at the nodes of a mesh `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<GridFunction> {
        if factor == 0 || self.segments.iter().any(|s| (s.len() - 1) % factor != 0) {
            return Err(Error::Shape(format!("cannot coarsen by {factor}")));
        }
        Ok(GridFunction {
            spacing: self.spacing * factor as f64,
            segments: self
                .segments
                .iter()
                .map(|s| s.iter().step_by(factor).copied().collect())
                .collect(),
        })
    }
}

/// Linear interpolation of equally spaced samples at fractional index `p`.
pub fn interpolate(values: &[f64], p: f64) -> f64 {
    let last = values.len() - 1;
    if p <= 0.0 {
        return values[0];
    }
    if p >= last as f64 {
        return values[last];
    }
    let i = p.floor() as usize;
    let w = p - i as f64;
    if w == 0.0 {
        values[i]
    } else {
        values[i] * (1.0 - w) + values[i + 1] * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_one_on_two_units() {
        let g = Grid::uniform(2.0, 10, 0.0).unwrap();
        assert_relative_eq!(GridFunction::from_fn(&g, |_| 1.0).l1_norm(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn exponential_mass() {
        let g = Grid::uniform(10.0, 100, 0.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| (-x).exp());
        assert!((u.l1_norm() - (1.0 - (-10f64).exp())).abs() < 1e-4);
    }

    #[test]
    fn interface_jump_counts_in_tv() {
        let g = Grid::new(2.0, &[1.0], 4, 0.0).unwrap();
        let u = GridFunction::from_segment_fn(&g, |j, _| if j == 0 { 1.0 } else { 0.0 });
        assert_eq!(u.interface_traces(1), (1.0, 0.0));
        assert_eq!(u.total_variation(), 1.0);
    }

    #[test]
    fn misaligned_interface_rejected() {
        assert!(matches!(Grid::new(10.0, &[2.05], 10, 1.0), Err(Error::Grid(_))));
        assert!(Grid::new(10.0, &[2.1], 10, 1.0).is_ok());
    }

    #[test]
    fn eval_is_right_continuous() {
        let g = Grid::new(2.0, &[1.0], 2, 0.0).unwrap();
        let u = GridFunction::from_segment_fn(&g, |j, a| if j == 0 { a } else { 5.0 });
        assert_eq!(u.eval(0.25), 0.25);
        assert_eq!(u.eval(1.0), 5.0);
        assert_eq!(u.eval(2.0), 5.0);
        assert_eq!(u.eval(2.5), 0.0);
    }

    #[test]
    fn refine_keeps_interfaces() {
        let g = Grid::new(3.0, &[1.5], 2, 1.0).unwrap().refine(4).unwrap();
        assert_eq!(g.interfaces(), vec![1.5]);
        assert_eq!(g.cells_per_unit_age(), 8);
        assert_eq!(g.steps(), 8);
    }
}
