//! Discrete total-variation inequalities.
//!
//! Each checker evaluates both sides on nodal data. The discrete versions hold
//! exactly, so a failure means a bug or rounding far beyond `1e-12`.

use crate::error::{Error, Result};
use crate::grid::{trapezoid, GridFunction};

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub name: String,
    /// Output time the report refers to, if any.
    pub at: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl InequalityReport {
    /// `lhs <= rhs` up to a relative slack of `rel` and an absolute slack of `abs`.
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, rel: f64, abs: f64) -> Self {
        let holds = lhs <= rhs + rel * rhs.abs() + abs;
        InequalityReport { name: name.into(), at: None, lhs, rhs, holds }
    }

    pub fn at(mut self, t: f64) -> Self {
        self.at = Some(t);
        self
    }

    fn exact(name: &str, lhs: f64, rhs: f64) -> Self {
        Self::new(name, lhs, rhs, 1e-12, 1e-14)
    }
}

/// `TV(u w) <= TV(u) |w|_inf + |u|_inf TV(w)`.
pub fn tv_product(u: &GridFunction, w: &GridFunction) -> Result<InequalityReport> {
    let uw = u.zip_with(w, |a, b| a * b)?;
    let rhs = u.total_variation() * w.sup_norm() + u.sup_norm() * w.total_variation();
    Ok(InequalityReport::exact("tv_product", uw.total_variation(), rhs))
}

/// `TV(phi(u)) <= Lip(phi) TV(u)` for vector-valued `u`, with the l1 norm on R^n.
pub fn tv_composition(
    components: &[GridFunction],
    phi: impl Fn(&[f64]) -> f64,
    lipschitz: f64,
) -> Result<InequalityReport> {
    let first = components
        .first()
        .ok_or_else(|| Error::Shape("composition needs at least one component".into()))?;
    let stacked: Vec<GridFunction> =
        components.iter().map(|c| c.zip_with(first, |a, _| a)).collect::<Result<_>>()?;
    let mut point = vec![0.0; stacked.len()];
    let mut segments = Vec::new();
    for j in 0..first.segment_count() {
        let seg: Vec<f64> = (0..first.segment(j).len())
            .map(|m| {
                for (p, c) in point.iter_mut().zip(&stacked) {
                    *p = c.segment(j)[m];
                }
                phi(&point)
            })
            .collect();
        segments.push(seg);
    }
    let composed = GridFunction::from_raw(first.spacing(), segments);
    let vector_tv = vector_total_variation(&stacked);
    Ok(InequalityReport::exact(
        "tv_composition",
        composed.total_variation(),
        lipschitz * vector_tv,
    ))
}

fn vector_total_variation(components: &[GridFunction]) -> f64 {
    let first = &components[0];
    let mut tv = 0.0;
    for j in 0..first.segment_count() {
        for m in 1..first.segment(j).len() {
            tv += components.iter().map(|c| (c.segment(j)[m] - c.segment(j)[m - 1]).abs()).sum::<f64>();
        }
        if j > 0 {
            tv += components
                .iter()
                .map(|c| {
                    let (l, r) = c.interface_traces(j);
                    (r - l).abs()
                })
                .sum::<f64>();
        }
    }
    tv
}

/// `TV(u / w) <= TV(u) / w_min + TV(w) |u|_inf / w_min^2` for `w >= w_min > 0`.
pub fn tv_quotient(u: &GridFunction, w: &GridFunction) -> Result<InequalityReport> {
    let w_min = w.min_value();
    if !(w_min > 0.0) {
        return Err(Error::Precondition(format!(
            "quotient denominator must be positive, minimum is {w_min}"
        )));
    }
    let q = u.zip_with(w, |a, b| a / b)?;
    let rhs = u.total_variation() / w_min + w.total_variation() * u.sup_norm() / (w_min * w_min);
    Ok(InequalityReport::exact("tv_quotient", q.total_variation(), rhs))
}

/// `TV(int_0^t u(s) ds) <= int_0^t TV(u(s)) ds` for samples at step `dt`.
pub fn tv_time_integral(family: &[GridFunction], dt: f64) -> Result<InequalityReport> {
    let first = family
        .first()
        .ok_or_else(|| Error::Shape("time integral needs at least one sample".into()))?;
    let mut acc = first.map(|_| 0.0);
    for pair in family.windows(2) {
        let mid = pair[0].zip_with(&pair[1], |a, b| 0.5 * dt * (a + b))?;
        acc = acc.zip_with(&mid, |a, b| a + b)?;
    }
    let tvs: Vec<f64> = family.iter().map(|u| u.total_variation()).collect();
    Ok(InequalityReport::exact(
        "tv_time_integral",
        acc.total_variation(),
        trapezoid(&tvs, dt),
    ))
}

/// `int |u(x + delta(x)) - u(x)| dx <= TV(u) |delta|_inf` on a single segment,
/// with `delta(x_m) = shifts[m] * h` and `u` held constant past the right end.
pub fn shift_l1(u: &[f64], h: f64, shifts: &[usize]) -> Result<InequalityReport> {
    if u.len() != shifts.len() {
        return Err(Error::Shape("one shift per node is required".into()));
    }
    let last = u.len() - 1;
    let diffs: Vec<f64> = shifts
        .iter()
        .enumerate()
        .map(|(m, &k)| (u[(m + k).min(last)] - u[m]).abs())
        .collect();
    let tv: f64 = u.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let delta = shifts.iter().copied().max().unwrap_or(0) as f64 * h;
    Ok(InequalityReport::exact("shift_l1", trapezoid(&diffs, h), tv * delta))
}

/// For `U(t) = int_0^t u(s, t) ds` on `[0, t_max]`:
/// `TV(U) <= |u|_inf t_max + int_0^t_max TV(u(s, .)) ds`.
/// `u[i][k]` is the sample at `s = i dt`, `t = k dt`.
pub fn tv_running_integral(u: &[Vec<f64>], dt: f64) -> Result<InequalityReport> {
    let n = u.len();
    if n == 0 || u.iter().any(|row| row.len() != n) {
        return Err(Error::Shape("running integral needs a square sample table".into()));
    }
    let big_u: Vec<f64> = (0..n)
        .map(|k| trapezoid(&(0..=k).map(|i| u[i][k]).collect::<Vec<_>>(), dt))
        .collect();
    let lhs: f64 = big_u.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let sup = u.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let tv_rows: Vec<f64> =
        u.iter().map(|row| row.windows(2).map(|w| (w[1] - w[0]).abs()).sum()).collect();
    let t_max = (n - 1) as f64 * dt;
    Ok(InequalityReport::exact(
        "tv_running_integral",
        lhs,
        sup * t_max + trapezoid(&tv_rows, dt),
    ))
}
