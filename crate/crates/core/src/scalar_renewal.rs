//! Scalar renewal problem `u_t + (g u)_x + m u = f` on `x > 0` with inflow
//! flux `g(t, 0) u(t, 0+) = b(t)`, solved along characteristics.
//!
//! The solver marches the characteristic representation one step at a time:
//! each node at `t + dt` is traced back to `t` (or to the boundary, when the
//! characteristic enters during the step) and the exponential weight and the
//! source integral are taken by the trapezoid rule along the trace. Over many
//! steps this is the same quadrature as evaluating the representation formula
//! on the full trace, which [`evaluate_representation`] does independently.
//!
//! Points on `x = sigma(t)`, the characteristic leaving the corner, take the
//! initial-datum branch.

use std::sync::Arc;

use crate::bv::InequalityReport;
use crate::error::{Error, Result};
use crate::grid::{interpolate, mesh_index, trapezoid, Grid, GridFunction, ALIGN_TOL};

pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Tolerance of the entry-time bisection.
pub const BISECTION_TOL: f64 = 1e-12;

#[derive(Clone)]
pub enum Speed {
    /// `g = 1`: characteristics move one node per step.
    Unit,
    Variable { g: ScalarFn, dg_dx: ScalarFn },
}

impl Speed {
    pub fn value(&self, t: f64, x: f64) -> f64 {
        match self {
            Speed::Unit => 1.0,
            Speed::Variable { g, .. } => g(t, x),
        }
    }

    pub fn slope(&self, t: f64, x: f64) -> f64 {
        match self {
            Speed::Unit => 0.0,
            Speed::Variable { dg_dx, .. } => dg_dx(t, x),
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, Speed::Unit)
    }

    /// One classical RK4 step of `x' = g(t, x)` with signed step `dt`.
    pub fn rk4_step(&self, t: f64, x: f64, dt: f64) -> f64 {
        match self {
            Speed::Unit => x + dt,
            Speed::Variable { g, .. } => {
                let k1 = g(t, x);
                let k2 = g(t + 0.5 * dt, x + 0.5 * dt * k1);
                let k3 = g(t + 0.5 * dt, x + 0.5 * dt * k2);
                let k4 = g(t + dt, x + dt * k3);
                x + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            }
        }
    }

    /// `X(t_end; t_o, x_o)` using equal substeps no longer than `step`.
    pub fn flow(&self, t_o: f64, x_o: f64, t_end: f64, step: f64) -> f64 {
        let span = t_end - t_o;
        if span == 0.0 {
            return x_o;
        }
        let n = substeps(span.abs(), step);
        let dt = span / n as f64;
        (0..n).fold(x_o, |x, k| self.rk4_step(t_o + k as f64 * dt, x, dt))
    }
}

fn substeps(span: f64, step: f64) -> usize {
    ((span / step) * (1.0 - 1e-9)).ceil().max(1.0) as usize
}

/// Rows of nodal samples on the solver's own time and space nodes.
#[derive(Debug, Clone)]
pub struct SampledField {
    pub t0: f64,
    pub dt: f64,
    pub h: f64,
    pub rows: Vec<Vec<f64>>,
}

impl SampledField {
    pub fn at(&self, t: f64, x: f64) -> f64 {
        let p = ((t - self.t0) / self.dt).clamp(0.0, (self.rows.len() - 1) as f64);
        let n = p.floor() as usize;
        let w = p - n as f64;
        let a = interpolate(&self.rows[n], x / self.h);
        if w == 0.0 || n + 1 == self.rows.len() {
            a
        } else {
            a * (1.0 - w) + interpolate(&self.rows[n + 1], x / self.h) * w
        }
    }
}

#[derive(Clone)]
pub enum Field {
    Zero,
    Constant(f64),
    Function(ScalarFn),
    Sampled(Arc<SampledField>),
}

impl Field {
    pub fn function(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Field::Function(Arc::new(f))
    }

    pub fn at(&self, t: f64, x: f64) -> f64 {
        match self {
            Field::Zero => 0.0,
            Field::Constant(c) => *c,
            Field::Function(f) => f(t, x),
            Field::Sampled(s) => s.at(t, x),
        }
    }

    /// Value at solver node `(n, m)`; sampled fields are read without interpolation.
    fn at_node(&self, n: usize, m: usize, t: f64, x: f64) -> f64 {
        match self {
            Field::Sampled(s) => s.rows[n][m],
            _ => self.at(t, x),
        }
    }
}

/// Inflow flux `b`, piecewise linear between samples at `t0 + k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFlux {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl BoundaryFlux {
    pub fn from_fn(t0: f64, dt: f64, steps: usize, f: impl Fn(f64) -> f64) -> Self {
        BoundaryFlux { t0, dt, values: (0..=steps).map(|k| f(t0 + k as f64 * dt)).collect() }
    }

    pub fn constant(t0: f64, dt: f64, steps: usize, c: f64) -> Self {
        BoundaryFlux { t0, dt, values: vec![c; steps + 1] }
    }

    pub fn at(&self, t: f64) -> f64 {
        interpolate(&self.values, (t - self.t0) / self.dt)
    }

    /// Samples up to and including time index `n`.
    fn upto(&self, n: usize) -> &[f64] {
        &self.values[..(n + 1).min(self.values.len())]
    }

    pub fn l1_upto(&self, n: usize) -> f64 {
        trapezoid(&self.upto(n).iter().map(|v| v.abs()).collect::<Vec<_>>(), self.dt)
    }

    pub fn sup_upto(&self, n: usize) -> f64 {
        self.upto(n).iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn tv_upto(&self, n: usize) -> f64 {
        self.upto(n).windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// Declared bounds on the coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarConstants {
    /// Lower bound of `g`.
    pub g_lower: f64,
    pub g_upper: f64,
    /// Bound on `|dg/dx|_inf + TV(dg/dx)`.
    pub g1: f64,
    /// Bound on the total variation of `g` in `x` and in `t`.
    pub g_inf: f64,
    /// Bound on `|m|_inf + TV(m)`.
    pub m: f64,
    /// Bound on `|f(t)|_1`.
    pub f1: f64,
    /// Bound on `|f(t)|_inf + TV(f(t))`.
    pub f_inf: f64,
}

#[derive(Clone)]
pub struct Coefficients {
    pub speed: Speed,
    pub rate: Field,
    pub source: Field,
    pub boundary: BoundaryFlux,
    /// When present, the coefficients are spot-checked against these bounds.
    pub constants: Option<ScalarConstants>,
}

impl Coefficients {
    fn kappa(&self, t: f64, x: f64) -> f64 {
        self.rate.at(t, x) + self.speed.slope(t, x)
    }
}

#[derive(Debug, Clone)]
pub struct ScalarSolution {
    pub t_start: f64,
    pub dt: f64,
    pub profiles: Vec<GridFunction>,
}

impl ScalarSolution {
    pub fn time(&self, n: usize) -> f64 {
        self.t_start + n as f64 * self.dt
    }

    pub fn steps(&self) -> usize {
        self.profiles.len() - 1
    }

    pub fn last(&self) -> &GridFunction {
        self.profiles.last().unwrap()
    }

    /// Values at node `m` over all output times.
    pub fn trace(&self, m: usize) -> Vec<f64> {
        self.profiles.iter().map(|p| p.segment(0)[m]).collect()
    }
}

fn single_segment(grid: &Grid, u: &GridFunction) -> Result<()> {
    if grid.segment_count() != 1 {
        return Err(Error::Grid("the scalar problem lives on a single segment".into()));
    }
    if u.segment_count() != 1 || u.segment(0).len() != grid.segment_nodes(0) {
        return Err(Error::Shape("initial datum does not match the grid".into()));
    }
    Ok(())
}

fn step_count(grid: &Grid, t_start: f64, t_end: f64) -> Result<usize> {
    mesh_index(t_end - t_start, grid.cells_per_unit_age()).ok_or_else(|| {
        Error::Grid(format!("[{t_start}, {t_end}] is not a whole number of time steps"))
    })
}

/// March from `t_start` to `t_end` on `grid` (single segment, `dt = h`).
pub fn solve_scalar(
    coeffs: &Coefficients,
    u_o: &GridFunction,
    grid: &Grid,
    t_start: f64,
    t_end: f64,
) -> Result<ScalarSolution> {
    single_segment(grid, u_o)?;
    let steps = step_count(grid, t_start, t_end)?;
    let h = grid.spacing();
    let dt = grid.dt();
    let nodes = grid.segment_nodes(0);
    for field in [&coeffs.rate, &coeffs.source] {
        if let Field::Sampled(s) = field {
            let aligned = (s.t0 - t_start).abs() <= ALIGN_TOL * dt
                && (s.dt - dt).abs() <= ALIGN_TOL * dt
                && (s.h - h).abs() <= ALIGN_TOL * h
                && s.rows.len() > steps
                && s.rows.iter().all(|r| r.len() == nodes);
            if !aligned {
                return Err(Error::Shape("sampled coefficient is not on the solver mesh".into()));
            }
        }
    }
    if let Some(c) = &coeffs.constants {
        spot_check(coeffs, c, grid, t_start, steps)?;
    }

    let mut profiles = Vec::with_capacity(steps + 1);
    let mut prev = u_o.segment(0).to_vec();
    profiles.push(u_o.clone());
    for n in 0..steps {
        let t0 = t_start + n as f64 * dt;
        let t1 = t0 + dt;
        let mut next = vec![0.0; nodes];
        next[0] = coeffs.boundary.at(t1) / coeffs.speed.value(t1, 0.0);
        if coeffs.speed.is_unit() {
            for m in 1..nodes {
                let x0 = (m - 1) as f64 * h;
                let x1 = m as f64 * h;
                let k0 = coeffs.rate.at_node(n, m - 1, t0, x0);
                let k1 = coeffs.rate.at_node(n + 1, m, t1, x1);
                let e = (-0.5 * dt * (k0 + k1)).exp();
                let f0 = coeffs.source.at_node(n, m - 1, t0, x0);
                let f1 = coeffs.source.at_node(n + 1, m, t1, x1);
                next[m] = prev[m - 1] * e + 0.5 * dt * (f0 * e + f1);
            }
        } else {
            for (m, slot) in next.iter_mut().enumerate().skip(1) {
                *slot = variable_step(coeffs, &prev, h, t0, t1, m as f64 * h);
            }
        }
        profiles.push(GridFunction::single(h, next.clone()));
        prev = next;
    }
    Ok(ScalarSolution { t_start, dt, profiles })
}

fn variable_step(c: &Coefficients, prev: &[f64], h: f64, t0: f64, t1: f64, x: f64) -> f64 {
    let dt = t1 - t0;
    let foot = c.speed.rk4_step(t1, x, -dt);
    if foot >= 0.0 {
        let e = (-0.5 * dt * (c.kappa(t0, foot) + c.kappa(t1, x))).exp();
        interpolate(prev, foot / h) * e
            + 0.5 * dt * (c.source.at(t0, foot) * e + c.source.at(t1, x))
    } else {
        let s = bisect(t0, t1, |s| c.speed.rk4_step(s, 0.0, t1 - s) - x);
        let len = t1 - s;
        let e = (-0.5 * len * (c.kappa(s, 0.0) + c.kappa(t1, x))).exp();
        c.boundary.at(s) / c.speed.value(s, 0.0) * e
            + 0.5 * len * (c.source.at(s, 0.0) * e + c.source.at(t1, x))
    }
}

/// Root of a function positive at `lo` and negative at `hi`.
fn bisect(mut lo: f64, mut hi: f64, phi: impl Fn(f64) -> f64) -> f64 {
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicTrace {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    /// The trace left `[0, x_max]` and was cut at the last inside point.
    pub truncated: bool,
}

/// Forward characteristic from `(t_o, x_o)` to `t_end`, sampled every `step`.
pub fn trace_forward(
    speed: &Speed,
    t_o: f64,
    x_o: f64,
    t_end: f64,
    step: f64,
    x_max: Option<f64>,
) -> CharacteristicTrace {
    let n = substeps((t_end - t_o).abs(), step);
    let dt = (t_end - t_o) / n as f64;
    let mut times = vec![t_o];
    let mut positions = vec![x_o];
    let mut truncated = false;
    for k in 0..n {
        let t = t_o + k as f64 * dt;
        let x = speed.rk4_step(t, *positions.last().unwrap(), dt);
        if x < 0.0 || x_max.is_some_and(|xm| x > xm) {
            truncated = true;
            break;
        }
        times.push(t + dt);
        positions.push(x);
    }
    CharacteristicTrace { times, positions, truncated }
}

/// `sigma(t) = X(t; t_start, 0)`.
pub fn corner_characteristic(speed: &Speed, t_start: f64, t: f64, step: f64) -> f64 {
    speed.flow(t_start, 0.0, t, step)
}

/// Time `T` at which the characteristic through `(t, x)` leaves the boundary.
/// Requires `x < sigma(t)`.
pub fn entry_time(speed: &Speed, t_start: f64, t: f64, x: f64, step: f64) -> Result<f64> {
    let sigma = corner_characteristic(speed, t_start, t, step);
    if !(x < sigma - ALIGN_TOL * step) || x <= 0.0 {
        return Err(Error::Domain(format!(
            "({t}, {x}) is not reached from the boundary (sigma = {sigma})"
        )));
    }
    Ok(bisect(t_start, t, |s| speed.flow(s, 0.0, t, step) - x))
}

/// Samples of the backward characteristic from `(t, x)` down to `tau`.
fn trace_back(speed: &Speed, tau: f64, t: f64, x: f64, step: f64) -> (Vec<f64>, Vec<f64>) {
    let n = substeps(t - tau, step);
    let dt = (t - tau) / n as f64;
    let mut times = vec![t];
    let mut xs = vec![x];
    for k in 0..n {
        let s = t - k as f64 * dt;
        xs.push(speed.rk4_step(s, *xs.last().unwrap(), -dt));
        times.push(s - dt);
    }
    times.reverse();
    xs.reverse();
    (times, xs)
}

/// `E(tau, t, x) = exp(-int_tau^t (m + dg/dx)(s, X(s; t, x)) ds)`.
pub fn exponential_weight(c: &Coefficients, tau: f64, t: f64, x: f64, step: f64) -> Result<f64> {
    if tau > t {
        return Err(Error::Domain(format!("weight needs tau <= t, got {tau} > {t}")));
    }
    if tau == t {
        return Ok(1.0);
    }
    let (times, xs) = trace_back(&c.speed, tau, t, x, step);
    if xs[0] < -ALIGN_TOL * step {
        return Err(Error::Domain(format!(
            "characteristic through ({t}, {x}) reaches the boundary after {tau}"
        )));
    }
    let k: Vec<f64> = times.iter().zip(&xs).map(|(&s, &y)| c.kappa(s, y.max(0.0))).collect();
    Ok((-trapezoid(&k, (t - tau) / (times.len() - 1) as f64)).exp())
}

/// Representation formula along a sampled trace: datum (or boundary) value
/// times the total weight plus the trapezoid integral of `f E`.
fn along_trace(c: &Coefficients, times: &[f64], xs: &[f64], start_value: f64) -> f64 {
    let n = times.len() - 1;
    let ds = if n == 0 { 0.0 } else { (times[n] - times[0]) / n as f64 };
    let k: Vec<f64> = times.iter().zip(xs).map(|(&s, &y)| c.kappa(s, y)).collect();
    // weights[i] = E(times[i], t, x)
    let mut weights = vec![1.0; n + 1];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        acc += 0.5 * ds * (k[i] + k[i + 1]);
        weights[i] = (-acc).exp();
    }
    let fe: Vec<f64> =
        (0..=n).map(|i| c.source.at(times[i], xs[i]) * weights[i]).collect();
    start_value * weights[0] + trapezoid(&fe, ds)
}

/// Evaluates the characteristic representation at `(t, x)` directly, without
/// marching. `u_o` is the datum at `t_start`.
pub fn evaluate_representation(
    c: &Coefficients,
    u_o: &GridFunction,
    t_start: f64,
    t: f64,
    x: f64,
    step: f64,
) -> Result<f64> {
    if t < t_start || x < 0.0 {
        return Err(Error::Domain(format!("({t}, {x}) is outside the problem domain")));
    }
    if t == t_start {
        return Ok(u_o.eval(x));
    }
    let sigma = corner_characteristic(&c.speed, t_start, t, step);
    if x >= sigma - ALIGN_TOL * step {
        let (times, xs) = trace_back(&c.speed, t_start, t, x, step);
        let xs: Vec<f64> = xs.into_iter().map(|y| y.max(0.0)).collect();
        Ok(along_trace(c, &times, &xs, u_o.eval(xs[0])))
    } else {
        let entry = entry_time(&c.speed, t_start, t, x, step)?;
        let trace = trace_forward(&c.speed, entry, 0.0, t, step, None);
        let mut xs = trace.positions;
        *xs.last_mut().unwrap() = x;
        let inflow = c.boundary.at(entry) / c.speed.value(entry, 0.0);
        Ok(along_trace(c, &trace.times, &xs, inflow))
    }
}

/// Sampled sup, total variation and L1 of `f(t, .)` on the grid nodes.
fn profile_stats(f: impl Fn(f64) -> f64, xs: &[f64], h: f64) -> (f64, f64, f64) {
    let v: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let sup = v.iter().fold(0.0f64, |a, y| a.max(y.abs()));
    let tv = v.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let l1 = trapezoid(&v.iter().map(|y| y.abs()).collect::<Vec<_>>(), h);
    (sup, tv, l1)
}

fn spot_check(
    c: &Coefficients,
    k: &ScalarConstants,
    grid: &Grid,
    t_start: f64,
    steps: usize,
) -> Result<()> {
    let h = grid.spacing();
    let xs: Vec<f64> = (0..grid.segment_nodes(0)).map(|m| m as f64 * h).collect();
    let time_stride = (steps / 32).max(1);
    let fail = |name: &str, detail: String| {
        Err(Error::Hypothesis { constant: name.into(), detail })
    };
    let slack = |bound: f64| bound * (1.0 + 1e-9) + 1e-12;
    for n in (0..=steps).step_by(time_stride) {
        let t = t_start + n as f64 * grid.dt();
        let (m_sup, m_tv, _) = profile_stats(|x| c.rate.at(t, x), &xs, h);
        if m_sup + m_tv > slack(k.m) {
            return fail("M", format!("|m|_inf + TV(m) = {} at t = {t}", m_sup + m_tv));
        }
        let (f_sup, f_tv, f_l1) = profile_stats(|x| c.source.at(t, x), &xs, h);
        if f_l1 > slack(k.f1) {
            return fail("F1", format!("|f|_1 = {f_l1} at t = {t}"));
        }
        if f_sup + f_tv > slack(k.f_inf) {
            return fail("F_inf", format!("|f|_inf + TV(f) = {} at t = {t}", f_sup + f_tv));
        }
        for &x in &xs {
            let g = c.speed.value(t, x);
            if g < k.g_lower * (1.0 - 1e-9) || g > slack(k.g_upper) {
                return fail("g bounds", format!("g({t}, {x}) = {g}"));
            }
        }
        let (s_sup, s_tv, _) = profile_stats(|x| c.speed.slope(t, x), &xs, h);
        if s_sup + s_tv > slack(k.g1) {
            return fail("G1", format!("|g_x|_inf + TV(g_x) = {} at t = {t}", s_sup + s_tv));
        }
        let (_, g_tv, _) = profile_stats(|x| c.speed.value(t, x), &xs, h);
        if g_tv > slack(k.g_inf) {
            return fail("G_inf", format!("TV(g(t, .)) = {g_tv} at t = {t}"));
        }
    }
    Ok(())
}

/// L-infinity, L1 and total-variation a priori bounds at every output time.
pub fn check_apriori_bounds(
    c: &Coefficients,
    u_o: &GridFunction,
    sol: &ScalarSolution,
) -> Result<Vec<InequalityReport>> {
    let k = c
        .constants
        .ok_or_else(|| Error::Precondition("a priori bounds need declared constants".into()))?;
    let growth = k.g1 + k.m;
    let (u_sup, u_l1, u_tv) = (u_o.sup_norm(), u_o.l1_norm(), u_o.total_variation());
    let mut out = Vec::new();
    for (n, p) in sol.profiles.iter().enumerate() {
        let t = n as f64 * sol.dt;
        let at = sol.time(n);
        let b_sup = c.boundary.sup_upto(n);
        let linf = (u_sup + b_sup / k.g_lower + k.f_inf * t) * (growth * t).exp();
        out.push(InequalityReport::new("apriori_linf", p.sup_norm(), linf, 1e-9, 1e-12).at(at));
        let l1 = (u_l1 + c.boundary.l1_upto(n) + k.f1 * t) * (k.m * t).exp();
        out.push(InequalityReport::new("apriori_l1", p.l1_norm(), l1, 1e-9, 1e-12).at(at));
        let gl = k.g_lower;
        let tv = ((2.0 + k.g_inf / gl + growth * t) * b_sup / gl
            + c.boundary.tv_upto(n) / gl
            + (growth * t + 5.0) * k.f_inf * t
            + (2.0 + growth * t) * u_sup
            + u_tv)
            * (growth * t).exp();
        out.push(InequalityReport::new("apriori_tv", p.total_variation(), tv, 1e-9, 1e-12).at(at));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    /// Smallest `u'' - u'` over all nodes and output times.
    pub min_gap: f64,
    pub holds: bool,
}

/// Solves two problems with ordered data and compares the solutions.
/// Both must share speed and rate; `lower` must have `f`, `u_o`, `b` below `upper`.
pub fn check_monotonicity(
    lower: (&Coefficients, &GridFunction),
    upper: (&Coefficients, &GridFunction),
    grid: &Grid,
    t_start: f64,
    t_end: f64,
    tol: f64,
) -> Result<MonotonicityReport> {
    let steps = step_count(grid, t_start, t_end)?;
    let h = grid.spacing();
    for (m, (a, b)) in lower.1.values().zip(upper.1.values()).enumerate() {
        if a > b {
            return Err(Error::Precondition(format!("initial data not ordered at node {m}")));
        }
    }
    for n in 0..=steps {
        let t = t_start + n as f64 * grid.dt();
        if lower.0.boundary.at(t) > upper.0.boundary.at(t) {
            return Err(Error::Precondition(format!("boundary data not ordered at t = {t}")));
        }
        for m in 0..grid.segment_nodes(0) {
            let x = m as f64 * h;
            if lower.0.source.at(t, x) > upper.0.source.at(t, x) {
                return Err(Error::Precondition(format!("sources not ordered at ({t}, {x})")));
            }
        }
    }
    let a = solve_scalar(lower.0, lower.1, grid, t_start, t_end)?;
    let b = solve_scalar(upper.0, upper.1, grid, t_start, t_end)?;
    let min_gap = a
        .profiles
        .iter()
        .zip(&b.profiles)
        .flat_map(|(p, q)| p.values().zip(q.values()).map(|(x, y)| y - x).collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min);
    Ok(MonotonicityReport { min_gap, holds: min_gap >= -tol })
}

/// Two problems on the same grid and speed, differing in data and rate.
pub struct StabilityPair<'a> {
    pub first: (&'a Coefficients, &'a GridFunction),
    pub second: (&'a Coefficients, &'a GridFunction),
}

struct Differences {
    /// Running `|f' - f''|_{L1([t_start, t] x R+)}` per time index.
    source_l1: Vec<f64>,
    /// Running `|b' - b''|_{L1}` per time index.
    boundary_l1: Vec<f64>,
    rate_sup: f64,
    datum_l1: f64,
}

fn differences(pair: &StabilityPair, grid: &Grid, t_start: f64, steps: usize) -> Result<Differences> {
    let h = grid.spacing();
    let dt = grid.dt();
    let xs: Vec<f64> = (0..grid.segment_nodes(0)).map(|m| m as f64 * h).collect();
    let (c1, c2) = (pair.first.0, pair.second.0);
    let mut rate_sup = 0.0f64;
    let mut f_rows = Vec::with_capacity(steps + 1);
    let mut b_rows = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let t = t_start + n as f64 * dt;
        let row: Vec<f64> =
            xs.iter().map(|&x| (c1.source.at(t, x) - c2.source.at(t, x)).abs()).collect();
        f_rows.push(trapezoid(&row, h));
        for &x in &xs {
            rate_sup = rate_sup.max((c1.rate.at(t, x) - c2.rate.at(t, x)).abs());
        }
        b_rows.push((c1.boundary.at(t) - c2.boundary.at(t)).abs());
    }
    let running = |rows: &[f64]| (0..=steps).map(|n| trapezoid(&rows[..=n], dt)).collect();
    Ok(Differences {
        source_l1: running(&f_rows),
        boundary_l1: running(&b_rows),
        rate_sup,
        datum_l1: pair.first.1.l1_distance(pair.second.1)?,
    })
}

fn pair_constants(pair: &StabilityPair) -> Result<ScalarConstants> {
    let (a, b) = match (pair.first.0.constants, pair.second.0.constants) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Precondition("stability needs declared constants".into())),
    };
    Ok(ScalarConstants {
        g_lower: a.g_lower.min(b.g_lower),
        g_upper: a.g_upper.max(b.g_upper),
        g1: a.g1.max(b.g1),
        g_inf: a.g_inf.max(b.g_inf),
        m: a.m.max(b.m),
        f1: a.f1.max(b.f1),
        f_inf: a.f_inf.max(b.f_inf),
    })
}

/// L1 stability with respect to data, source, boundary flux and rate, at every
/// output time.
pub fn check_data_stability(
    pair: &StabilityPair,
    grid: &Grid,
    t_start: f64,
    t_end: f64,
) -> Result<Vec<InequalityReport>> {
    let k = pair_constants(pair)?;
    let steps = step_count(grid, t_start, t_end)?;
    let d = differences(pair, grid, t_start, steps)?;
    let s1 = solve_scalar(pair.first.0, pair.first.1, grid, t_start, t_end)?;
    let s2 = solve_scalar(pair.second.0, pair.second.1, grid, t_start, t_end)?;
    let b2 = &pair.second.0.boundary;
    let u2_l1 = pair.second.1.l1_norm();
    let mut out = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let t = n as f64 * grid.dt();
        let lhs = s1.profiles[n].l1_distance(&s2.profiles[n])?;
        let rhs = (k.m * t).exp() * d.datum_l1
            + (2.0 * (k.g1 + k.m) * t).exp() * (2.0 * d.source_l1[n] + d.boundary_l1[n])
            + ((2.0 * k.g1 + k.m) * t).exp()
                * (u2_l1 + 2.0 * t * k.f1 + b2.l1_upto(n))
                * t
                * d.rate_sup;
        out.push(InequalityReport::new("stability_l1", lhs, rhs, 1e-9, 1e-12).at(s1.time(n)));
    }
    Ok(out)
}

/// Stability of the trace at `x_bar` in `L1(t_start, t)`, for every output
/// time with `sigma(t) < x_bar`. Both problems must have the same boundary flux.
pub fn check_vertical_stability(
    pair: &StabilityPair,
    grid: &Grid,
    t_start: f64,
    t_end: f64,
    x_bar: f64,
) -> Result<Vec<InequalityReport>> {
    let k = pair_constants(pair)?;
    let steps = step_count(grid, t_start, t_end)?;
    let node = mesh_index(x_bar, grid.cells_per_unit_age())
        .filter(|&m| m < grid.segment_nodes(0))
        .ok_or_else(|| Error::Domain(format!("x_bar = {x_bar} is not a grid node")))?;
    let d = differences(pair, grid, t_start, steps)?;
    let s1 = solve_scalar(pair.first.0, pair.first.1, grid, t_start, t_end)?;
    let s2 = solve_scalar(pair.second.0, pair.second.1, grid, t_start, t_end)?;
    let diff: Vec<f64> =
        s1.trace(node).iter().zip(s2.trace(node)).map(|(a, b)| (a - b).abs()).collect();
    let u1_l1 = pair.first.1.l1_norm();
    let mut out = Vec::new();
    for n in 0..=steps {
        let t = n as f64 * grid.dt();
        if corner_characteristic(&pair.first.0.speed, t_start, s1.time(n), grid.dt()) >= x_bar {
            break;
        }
        let lhs = trapezoid(&diff[..=n], grid.dt());
        let rhs = ((k.g1 + k.m) * t).exp() * t * ((k.g1 * t).exp() * u1_l1 + t * t * k.f_inf)
            * d.rate_sup
            + (k.m * t).exp() * d.datum_l1
            + ((2.0 * k.g1 + k.m) * t).exp() * d.source_l1[n];
        out.push(InequalityReport::new("stability_trace", lhs, rhs, 1e-9, 1e-12).at(s1.time(n)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit(rate: Field, source: Field, b: BoundaryFlux) -> Coefficients {
        Coefficients { speed: Speed::Unit, rate, source, boundary: b, constants: None }
    }

    #[test]
    fn weight_for_linear_rate() {
        let c = unit(Field::function(|_, x| x), Field::Zero, BoundaryFlux::constant(0.0, 0.1, 20, 0.0));
        let e = exponential_weight(&c, 0.0, 1.0, 2.0, 0.1).unwrap();
        assert_relative_eq!(e, (-1.5f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn entry_time_on_sigma_is_domain_error() {
        assert!(matches!(entry_time(&Speed::Unit, 0.0, 1.0, 1.0, 0.01), Err(Error::Domain(_))));
        assert_relative_eq!(
            entry_time(&Speed::Unit, 0.0, 1.0, 0.25, 0.01).unwrap(),
            0.75,
            epsilon = 1e-11
        );
    }

    #[test]
    fn linear_speed_trace() {
        let speed = Speed::Variable {
            g: Arc::new(|_, x| 1.0 + x / 10.0),
            dg_dx: Arc::new(|_, _| 0.1),
        };
        let x = speed.flow(0.0, 0.0, 0.5, 0.01);
        assert_relative_eq!(x, 10.0 * ((0.05f64).exp() - 1.0), max_relative = 1e-10);
        let tr = trace_forward(&speed, 0.0, 0.0, 0.5, 0.01, None);
        assert_eq!(tr.times.len(), 51);
        assert!(!tr.truncated);
    }

    #[test]
    fn boundary_value_is_flux_over_speed() {
        let g = Grid::uniform(2.0, 10, 1.0).unwrap();
        let c = unit(Field::Zero, Field::Zero, BoundaryFlux::constant(0.0, 0.1, 10, 3.0));
        let s = solve_scalar(&c, &GridFunction::zeros(&g), &g, 0.0, 1.0).unwrap();
        for p in &s.profiles[1..] {
            assert_eq!(p.segment(0)[0], 3.0);
        }
    }

    #[test]
    fn misaligned_end_time() {
        let g = Grid::uniform(2.0, 10, 1.0).unwrap();
        let c = unit(Field::Zero, Field::Zero, BoundaryFlux::constant(0.0, 0.1, 10, 0.0));
        assert!(solve_scalar(&c, &GridFunction::zeros(&g), &g, 0.0, 0.55).is_err());
    }

    #[test]
    fn declared_rate_bound_is_enforced() {
        let g = Grid::uniform(2.0, 10, 1.0).unwrap();
        let mut c = unit(Field::Constant(2.0), Field::Zero, BoundaryFlux::constant(0.0, 0.1, 10, 0.0));
        c.constants = Some(ScalarConstants {
            g_lower: 1.0,
            g_upper: 1.0,
            g1: 0.0,
            g_inf: 1.0,
            m: 1.0,
            f1: 1.0,
            f_inf: 1.0,
        });
        let err = solve_scalar(&c, &GridFunction::zeros(&g), &g, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Hypothesis { ref constant, .. } if constant == "M"));
    }
}
