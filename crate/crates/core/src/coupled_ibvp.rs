//! Coupled nonlocal system
//! `d_t u_i + d_x(g_i u_i) = (alpha_i[u] + gamma_i) . u` with inflow
//! `g_i u_i(t, 0+) = beta_i(t, traces)`, solved by Picard iteration.
//!
//! The map `T` freezes an iterate `w`, turns component `i` into a scalar
//! problem with rate `-(alpha_i[w])_i - (gamma_i)_i` and source
//! `sum_{j != i} ((alpha_i[w])_j + (gamma_i)_j) w_j`, and solves the components
//! in index order. Boundary rules only read traces of lower-indexed components,
//! so each inflow uses the traces already updated in the same sweep.
//!
//! Components may live on domains of different lengths, but every component
//! shares the same cell width, and the time step equals it.

use std::sync::Arc;

use rayon::prelude::*;

use crate::bv::InequalityReport;
use crate::error::{Error, Result};
use crate::grid::{mesh_index, trapezoid, Grid, GridFunction};
use crate::scalar_renewal::{
    solve_scalar, BoundaryFlux, Coefficients, Field, SampledField, ScalarFn, Speed,
};

pub trait NonlocalOperator: Send + Sync {
    /// Writes the field on the target component's nodes. `w[c]` holds the
    /// nodal values of component `c` at one time.
    fn apply(&self, w: &[&[f64]], out: &mut [f64]);
}

pub trait BoundaryRule: Send + Sync {
    /// Components whose traces the rule reads; all below the rule's own index.
    fn dependencies(&self) -> &[usize];
    /// `traces[k]` is the trace of component `dependencies()[k]`.
    fn eval(&self, t: f64, traces: &[f64]) -> f64;
}

/// Inflow that ignores the traces.
pub struct DataInflow(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl BoundaryRule for DataInflow {
    fn dependencies(&self) -> &[usize] {
        &[]
    }

    fn eval(&self, t: f64, _: &[f64]) -> f64 {
        (self.0)(t)
    }
}

pub type TraceFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Inflow computed from the traces of `deps`.
pub struct TraceRule {
    pub deps: Vec<usize>,
    pub f: TraceFn,
}

impl BoundaryRule for TraceRule {
    fn dependencies(&self) -> &[usize] {
        &self.deps
    }

    fn eval(&self, t: f64, traces: &[f64]) -> f64 {
        (self.f)(t, traces)
    }
}

#[derive(Clone)]
pub struct ComponentSpec {
    pub name: String,
    /// Cells of the component's domain `[0, cells * h]`.
    pub cells: usize,
    pub speed: Speed,
    /// Node whose value is the trace handed to boundary rules.
    pub trace_node: usize,
}

/// `(alpha_row[w])_col += scale * operators[operator](w)`.
#[derive(Debug, Clone, Copy)]
pub struct CouplingTerm {
    pub row: usize,
    pub col: usize,
    pub scale: f64,
    pub operator: usize,
}

/// `(gamma_row)_col += rate(t, x)`.
#[derive(Clone)]
pub struct ReactionTerm {
    pub row: usize,
    pub col: usize,
    pub rate: ScalarFn,
}

/// Declared bounds of the system data. Subscripts follow the usual naming:
/// `_l` Lipschitz, `_1` L1, `_inf` sup plus total variation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConstants {
    pub a_l: f64,
    pub a_1: f64,
    pub a_2: f64,
    pub b_l: f64,
    pub b_1: f64,
    pub b_inf: f64,
    pub c_l: f64,
    pub c_inf: f64,
    pub g_lower: f64,
    pub g1: f64,
    pub g_inf: f64,
}

/// Declared structural properties: positivity, dissipativity, equal speeds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Structure {
    pub pos: bool,
    pub neg: bool,
    pub eq: bool,
}

#[derive(Clone)]
pub struct SystemSpec {
    pub cells_per_unit_age: usize,
    pub components: Vec<ComponentSpec>,
    pub operators: Vec<Arc<dyn NonlocalOperator>>,
    pub couplings: Vec<CouplingTerm>,
    pub reactions: Vec<ReactionTerm>,
    pub boundaries: Vec<Arc<dyn BoundaryRule>>,
    pub constants: SystemConstants,
    pub declared: Structure,
}

impl SystemSpec {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.cells_per_unit_age as f64
    }

    pub fn nodes(&self, c: usize) -> usize {
        self.components[c].cells + 1
    }

    pub fn component_grid(&self, c: usize) -> Grid {
        Grid::uniform(
            self.components[c].cells as f64 / self.cells_per_unit_age as f64,
            self.cells_per_unit_age,
            0.0,
        )
        .expect("component grid is aligned by construction")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 || self.cells_per_unit_age == 0 {
            return Err(Error::Precondition("system needs components and a mesh".into()));
        }
        if self.boundaries.len() != n {
            return Err(Error::Precondition("one boundary rule per component".into()));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.cells == 0 || c.trace_node > c.cells {
                return Err(Error::Precondition(format!("component {i} has a bad mesh")));
            }
        }
        for (i, b) in self.boundaries.iter().enumerate() {
            if let Some(&j) = b.dependencies().iter().find(|&&j| j >= i) {
                return Err(Error::Precondition(format!(
                    "boundary rule {i} reads component {j}; inflows must be triangular"
                )));
            }
        }
        for t in &self.couplings {
            if t.row >= n || t.col >= n || t.operator >= self.operators.len() {
                return Err(Error::Precondition("coupling term out of range".into()));
            }
            if self.nodes(t.row) != self.nodes(t.col) {
                return Err(Error::Precondition(format!(
                    "coupling ({}, {}) joins components on different domains",
                    t.row, t.col
                )));
            }
        }
        for t in &self.reactions {
            if t.row >= n || t.col >= n || self.nodes(t.row) != self.nodes(t.col) {
                return Err(Error::Precondition("reaction term out of range".into()));
            }
        }
        Ok(())
    }

    /// True when every speed is the unit speed.
    pub fn equal_speeds(&self) -> bool {
        self.components.iter().all(|c| c.speed.is_unit())
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub fp_tol: f64,
    pub max_iter: usize,
    pub initial_window: f64,
    pub blowup_factor: f64,
    /// Windows whose contraction ratio exceeds this are halved.
    pub max_ratio: f64,
    pub parallel: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            fp_tol: 1e-10,
            max_iter: 100,
            initial_window: 0.5,
            blowup_factor: 1e8,
            max_ratio: 0.5,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    pub t_start: f64,
    pub t_end: f64,
    /// Applications of `T`, including the one that confirmed convergence.
    pub applications: usize,
    /// `d_X` between successive iterates.
    pub distances: Vec<f64>,
    pub tolerance: f64,
    pub converged: bool,
    pub accepted: bool,
}

impl FixedPointReport {
    /// Iterations until the iterate stopped changing.
    pub fn iterations(&self) -> usize {
        self.applications.saturating_sub(1)
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.distances
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }

    pub fn max_ratio(&self) -> f64 {
        self.ratios().into_iter().fold(0.0, f64::max)
    }
}

/// Iterate over one window: `values[c][n][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    pub t_start: f64,
    pub dt: f64,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl WindowSolution {
    pub fn constant(start: &[Vec<f64>], t_start: f64, dt: f64, steps: usize) -> Self {
        WindowSolution {
            t_start,
            dt,
            values: start.iter().map(|u| vec![u.clone(); steps + 1]).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.values[0].len() - 1
    }

    fn slices(&self, n: usize) -> Vec<&[f64]> {
        self.values.iter().map(|c| c[n].as_slice()).collect()
    }

    fn sup(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |a, v| if v.is_finite() { a.max(v.abs()) } else { f64::INFINITY })
    }
}

/// `d_X`: largest L1 distance over components and times.
pub fn window_distance(a: &WindowSolution, b: &WindowSolution, h: f64) -> f64 {
    let mut d = 0.0f64;
    let mut buf = Vec::new();
    for (ca, cb) in a.values.iter().zip(&b.values) {
        for (ra, rb) in ca.iter().zip(cb) {
            buf.clear();
            buf.extend(ra.iter().zip(rb).map(|(x, y)| (x - y).abs()));
            d = d.max(trapezoid(&buf, h));
        }
    }
    d
}

struct WindowContext {
    t_start: f64,
    steps: usize,
    /// `reactions[r][n][m]`, sampled once per window.
    reactions: Vec<Vec<Vec<f64>>>,
}

impl WindowContext {
    fn new(spec: &SystemSpec, t_start: f64, steps: usize) -> Self {
        let dt = spec.dt();
        let h = dt;
        let reactions = spec
            .reactions
            .iter()
            .map(|r| {
                (0..=steps)
                    .map(|n| {
                        let t = t_start + n as f64 * dt;
                        (0..spec.nodes(r.row)).map(|m| (r.rate)(t, m as f64 * h)).collect()
                    })
                    .collect()
            })
            .collect();
        WindowContext { t_start, steps, reactions }
    }
}

fn operator_values(
    spec: &SystemSpec,
    w: &WindowSolution,
    parallel: bool,
) -> Vec<Option<Vec<Vec<f64>>>> {
    let used: Vec<bool> = (0..spec.operators.len())
        .map(|k| spec.couplings.iter().any(|c| c.operator == k))
        .collect();
    let steps = w.steps();
    let target_len = |k: usize| {
        spec.couplings.iter().find(|c| c.operator == k).map(|c| spec.nodes(c.row)).unwrap_or(0)
    };
    (0..spec.operators.len())
        .map(|k| {
            if !used[k] {
                return None;
            }
            let len = target_len(k);
            let eval = |n: usize| {
                let mut out = vec![0.0; len];
                spec.operators[k].apply(&w.slices(n), &mut out);
                out
            };
            Some(if parallel {
                (0..=steps).into_par_iter().map(eval).collect()
            } else {
                (0..=steps).map(eval).collect()
            })
        })
        .collect()
}

fn apply_in(
    spec: &SystemSpec,
    ctx: &WindowContext,
    w: &WindowSolution,
    parallel: bool,
) -> Result<WindowSolution> {
    let dt = spec.dt();
    let steps = ctx.steps;
    let ops = operator_values(spec, w, parallel);
    let mut out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(spec.len());
    for i in 0..spec.len() {
        let nodes = spec.nodes(i);
        let mut rate = vec![vec![0.0; nodes]; steps + 1];
        let mut source = vec![vec![0.0; nodes]; steps + 1];
        for c in spec.couplings.iter().filter(|c| c.row == i) {
            let vals = ops[c.operator].as_ref().unwrap();
            for n in 0..=steps {
                let field = &vals[n];
                if c.col == i {
                    for m in 0..nodes {
                        rate[n][m] -= c.scale * field[m];
                    }
                } else {
                    let wj = &w.values[c.col][n];
                    for m in 0..nodes {
                        source[n][m] += c.scale * field[m] * wj[m];
                    }
                }
            }
        }
        for (r, term) in spec.reactions.iter().enumerate().filter(|(_, r)| r.row == i) {
            for n in 0..=steps {
                let field = &ctx.reactions[r][n];
                if term.col == i {
                    for m in 0..nodes {
                        rate[n][m] -= field[m];
                    }
                } else {
                    let wj = &w.values[term.col][n];
                    for m in 0..nodes {
                        source[n][m] += field[m] * wj[m];
                    }
                }
            }
        }
        let rule = &spec.boundaries[i];
        let deps = rule.dependencies();
        let mut traces = vec![0.0; deps.len()];
        let inflow: Vec<f64> = (0..=steps)
            .map(|n| {
                for (slot, &j) in traces.iter_mut().zip(deps) {
                    *slot = out[j][n][spec.components[j].trace_node];
                }
                rule.eval(ctx.t_start + n as f64 * dt, &traces)
            })
            .collect();
        let sampled = |rows| {
            Field::Sampled(Arc::new(SampledField { t0: ctx.t_start, dt, h: dt, rows }))
        };
        let coeffs = Coefficients {
            speed: spec.components[i].speed.clone(),
            rate: sampled(rate),
            source: sampled(source),
            boundary: BoundaryFlux { t0: ctx.t_start, dt, values: inflow },
            constants: None,
        };
        let grid = spec.component_grid(i);
        let start = GridFunction::single(dt, w.values[i][0].clone());
        let t_end = ctx.t_start + steps as f64 * dt;
        let sol = solve_scalar(&coeffs, &start, &grid, ctx.t_start, t_end)?;
        out.push(sol.profiles.into_iter().map(|p| p.into_segments().remove(0)).collect());
    }
    Ok(WindowSolution { t_start: ctx.t_start, dt, values: out })
}

/// One application of the fixed-point map.
pub fn apply_t(spec: &SystemSpec, w: &WindowSolution) -> Result<WindowSolution> {
    spec.validate()?;
    let ctx = WindowContext::new(spec, w.t_start, w.steps());
    apply_in(spec, &ctx, w, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowFailure {
    /// Ran out of iterations.
    NotConverged,
    /// A contraction ratio above the limit on a window that can still shrink.
    NotContracting,
    /// Distances grew three times in a row.
    Diverging,
    /// An iterate exceeded the blow-up threshold or stopped being finite.
    Overflow,
}

#[derive(Debug, Clone)]
pub enum WindowOutcome {
    Converged(WindowSolution, FixedPointReport),
    Failed(WindowFailure, FixedPointReport),
}

fn l1_total(start: &[Vec<f64>], h: f64) -> f64 {
    start.iter().map(|u| trapezoid(&u.iter().map(|v| v.abs()).collect::<Vec<_>>(), h)).sum()
}

/// Picard iteration on `[t_start, t_start + steps dt]` from the constant-in-time
/// extension of `start`. The tolerance is `fp_tol * max(1, K1)`.
pub fn solve_window(
    spec: &SystemSpec,
    start: &[Vec<f64>],
    t_start: f64,
    steps: usize,
    opts: &SolverOptions,
    threshold: f64,
) -> Result<WindowOutcome> {
    let dt = spec.dt();
    let k1 = 2.0 * (l1_total(start, dt) + spec.constants.b_1);
    let tolerance = opts.fp_tol * k1.max(1.0);
    let ctx = WindowContext::new(spec, t_start, steps);
    let mut w = WindowSolution::constant(start, t_start, dt, steps);
    let mut report = FixedPointReport {
        t_start,
        t_end: t_start + steps as f64 * dt,
        applications: 0,
        distances: Vec::new(),
        tolerance,
        converged: false,
        accepted: false,
    };
    for _ in 0..opts.max_iter {
        let u = apply_in(spec, &ctx, &w, opts.parallel)?;
        report.applications += 1;
        if !(u.sup() <= threshold) {
            return Ok(WindowOutcome::Failed(WindowFailure::Overflow, report));
        }
        let d = window_distance(&u, &w, dt);
        report.distances.push(d);
        w = u;
        if d <= tolerance {
            report.converged = true;
            return Ok(WindowOutcome::Converged(w, report));
        }
        let ds = &report.distances;
        let k = ds.len();
        if k >= 2 && steps > 1 && ds[k - 1] > opts.max_ratio * ds[k - 2] {
            return Ok(WindowOutcome::Failed(WindowFailure::NotContracting, report));
        }
        if k >= 4 && ds[k - 1] > ds[k - 2] && ds[k - 2] > ds[k - 3] && ds[k - 3] > ds[k - 4] {
            return Ok(WindowOutcome::Failed(WindowFailure::Diverging, report));
        }
    }
    Ok(WindowOutcome::Failed(WindowFailure::NotConverged, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Completed,
    /// The solution could not be continued past `time`.
    BlowUp { time: f64, cause: WindowFailure },
}

#[derive(Debug, Clone)]
pub struct GlobalSolution {
    pub t_start: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    /// `states[n][c][m]`.
    pub states: Vec<Vec<Vec<f64>>>,
    pub reports: Vec<FixedPointReport>,
    pub outcome: Outcome,
}

impl GlobalSolution {
    pub fn accepted_reports(&self) -> impl Iterator<Item = &FixedPointReport> {
        self.reports.iter().filter(|r| r.accepted)
    }

    pub fn total_applications(&self) -> usize {
        self.reports.iter().map(|r| r.applications).sum()
    }

    pub fn component(&self, n: usize, c: usize) -> GridFunction {
        GridFunction::single(self.dt, self.states[n][c].clone())
    }
}

fn check_start(spec: &SystemSpec, u_o: &[Vec<f64>]) -> Result<()> {
    if u_o.len() != spec.len() || u_o.iter().enumerate().any(|(c, u)| u.len() != spec.nodes(c)) {
        return Err(Error::Shape("initial data do not match the system".into()));
    }
    Ok(())
}

/// Chains windows over `[t_start, t_end]`. Windows halve on failure or slow
/// contraction and double again after two consecutive windows that needed at
/// most two iterations.
pub fn solve_global(
    spec: &SystemSpec,
    u_o: &[Vec<f64>],
    t_start: f64,
    t_end: f64,
    opts: &SolverOptions,
) -> Result<GlobalSolution> {
    spec.validate()?;
    check_start(spec, u_o)?;
    let dt = spec.dt();
    let total = mesh_index(t_end - t_start, spec.cells_per_unit_age).ok_or_else(|| {
        Error::Grid(format!("[{t_start}, {t_end}] is not a whole number of time steps"))
    })?;
    let sup0 = u_o.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let threshold = opts.blowup_factor * (sup0 + 1.0);
    let dissipative = spec.declared.pos
        && spec.declared.neg
        && spec.declared.eq
        && spec.equal_speeds()
        && check_neg_condition(spec, u_o, t_start).holds
        && check_pos_condition(spec, u_o, t_start).holds;

    let max_window = ((opts.initial_window / dt).round() as usize).max(1);
    let mut window = max_window;
    let mut easy = 0;
    let mut n = 0;
    let mut sol = GlobalSolution {
        t_start,
        dt,
        times: vec![t_start],
        states: vec![u_o.to_vec()],
        reports: Vec::new(),
        outcome: Outcome::Completed,
    };
    while n < total {
        let steps = window.min(total - n);
        let t0 = t_start + n as f64 * dt;
        let state = sol.states.last().unwrap().clone();
        match solve_window(spec, &state, t0, steps, opts, threshold)? {
            WindowOutcome::Converged(w, mut report) => {
                report.accepted = true;
                easy = if report.iterations() <= 2 { easy + 1 } else { 0 };
                sol.reports.push(report);
                for k in 1..=steps {
                    sol.times.push(t_start + (n + k) as f64 * dt);
                    sol.states.push(w.values.iter().map(|c| c[k].clone()).collect());
                }
                n += steps;
                if easy >= 2 {
                    window = (window * 2).min(max_window);
                    easy = 0;
                }
            }
            WindowOutcome::Failed(cause, report) => {
                let growing = report.distances.len() >= 2
                    && report.distances.last() > report.distances.first();
                sol.reports.push(report);
                easy = 0;
                if steps > 1 {
                    window = steps / 2;
                    continue;
                }
                let blowup = matches!(cause, WindowFailure::Overflow | WindowFailure::Diverging)
                    || growing;
                if !blowup {
                    return Err(Error::WindowCollapse { time: t0 });
                }
                if dissipative {
                    return Err(Error::DissipativeBlowup { time: t0 });
                }
                sol.outcome = Outcome::BlowUp { time: t0, cause };
                break;
            }
        }
    }
    Ok(sol)
}

fn operator_fields(spec: &SystemSpec, state: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let slices: Vec<&[f64]> = state.iter().map(|u| u.as_slice()).collect();
    (0..spec.operators.len())
        .map(|k| {
            let len = spec
                .couplings
                .iter()
                .find(|c| c.operator == k)
                .map(|c| spec.nodes(c.row))
                .unwrap_or(0);
            let mut out = vec![0.0; len];
            if len > 0 {
                spec.operators[k].apply(&slices, &mut out);
            }
            out
        })
        .collect()
}

/// `sum_i (alpha_i[u] + gamma_i(t)) . u <= 0` at every node.
pub fn check_neg_condition(spec: &SystemSpec, state: &[Vec<f64>], t: f64) -> InequalityReport {
    let fields = operator_fields(spec, state);
    let len = (0..spec.len()).map(|c| spec.nodes(c)).max().unwrap_or(0);
    let h = spec.dt();
    let mut sums = vec![0.0; len];
    for c in &spec.couplings {
        for m in 0..spec.nodes(c.row) {
            sums[m] += c.scale * fields[c.operator][m] * state[c.col][m];
        }
    }
    for r in &spec.reactions {
        for m in 0..spec.nodes(r.row) {
            sums[m] += (r.rate)(t, m as f64 * h) * state[r.col][m];
        }
    }
    let scale = state.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()));
    let worst = sums.into_iter().fold(f64::NEG_INFINITY, f64::max);
    InequalityReport::new("neg", worst, 0.0, 0.0, 1e-12 * scale * scale).at(t)
}

/// Off-diagonal coefficients and inflows are nonnegative at `state`.
pub fn check_pos_condition(spec: &SystemSpec, state: &[Vec<f64>], t: f64) -> InequalityReport {
    let fields = operator_fields(spec, state);
    let h = spec.dt();
    let mut worst = 0.0f64;
    let mut pairs: Vec<(usize, usize)> = spec
        .couplings
        .iter()
        .map(|c| (c.row, c.col))
        .chain(spec.reactions.iter().map(|r| (r.row, r.col)))
        .filter(|(r, c)| r != c)
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    for (row, col) in pairs {
        for m in 0..spec.nodes(row) {
            let mut v = 0.0;
            for c in spec.couplings.iter().filter(|c| c.row == row && c.col == col) {
                v += c.scale * fields[c.operator][m];
            }
            for r in spec.reactions.iter().filter(|r| r.row == row && r.col == col) {
                v += (r.rate)(t, m as f64 * h);
            }
            worst = worst.min(v);
        }
    }
    for b in &spec.boundaries {
        let traces: Vec<f64> = b
            .dependencies()
            .iter()
            .map(|&j| state[j][spec.components[j].trace_node].max(0.0))
            .collect();
        worst = worst.min(b.eval(t, &traces));
    }
    InequalityReport::new("pos", -worst, 0.0, 0.0, 1e-14).at(t)
}

/// Constants built from the data: the ball radii use twice their lower bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub k1: f64,
    pub k_inf: f64,
    pub m: f64,
    pub f1: f64,
    pub f_inf: f64,
}

fn data_norms(spec: &SystemSpec, u_o: &[Vec<f64>]) -> (f64, f64, f64) {
    let h = spec.dt();
    let l1 = l1_total(u_o, h);
    let sup: f64 = u_o.iter().map(|u| u.iter().fold(0.0f64, |a, v| a.max(v.abs()))).sum();
    let tv: f64 =
        u_o.iter().map(|u| u.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>()).sum();
    (l1, sup, tv)
}

pub fn derived_constants(spec: &SystemSpec, u_o: &[Vec<f64>]) -> DerivedConstants {
    let c = &spec.constants;
    let n = spec.len() as f64;
    let (l1, sup, tv) = data_norms(spec, u_o);
    let k1 = 2.0 * (l1 + c.b_1);
    let lift = 1.0 + n * c.b_l / c.g_lower;
    let kinf_low = (lift * sup + c.b_inf / c.g_lower).max(
        (5.0 + c.g_inf / c.g_lower) * (2.0 * c.b_inf / c.g_lower + lift * (sup + tv)),
    );
    let k_inf = 2.0 * kinf_low;
    DerivedConstants {
        k1,
        k_inf,
        m: c.a_l * k1 + c.c_inf,
        f1: (c.a_l * k1 * k1 + c.c_inf * k1) * n,
        f_inf: 2.0 * n * k_inf * (c.c_inf + c.a_l * k1),
    }
}

/// `(H1(t), H2(t))` of the stability estimate. `sup_first` and `sup_second`
/// are the sup norms of the two initial data.
pub fn stability_rates(
    spec: &SystemSpec,
    d: &DerivedConstants,
    sup_first: f64,
    sup_second: f64,
    t: f64,
) -> (f64, f64) {
    let c = &spec.constants;
    let n = spec.len() as f64;
    let e = ((c.g1 + d.m) * t).exp();
    let inv_g = (1.0 / c.g_inf).max(1.0 / c.g_lower);
    let h1 = n * e * e * (2.0 * c.a_l * d.k1 + 2.0 * n * c.a_1 * d.k_inf + 2.0 * c.c_inf)
        + n * n * e.powi(3) * c.b_l * c.a_1 * inv_g * ((c.g1 * t).exp() * sup_first + t * d.f_inf)
        + n * n
            * ((4.0 * c.g1 + 3.0 * d.m) * t).exp()
            * c.b_l
            * (c.a_l * d.k1 + n * c.a_1 * d.k_inf + c.c_inf)
        + n * n
            * e
            * e
            * c.a_1
            * (sup_second
                + 2.0 * n * t * d.f_inf
                + (n / c.g_lower) * (c.b_inf + n * c.b_l * d.k_inf));
    let h2 = n * (d.m * t).exp() * (1.0 + c.b_l * e * e);
    (h1, h2)
}

/// Sup of `|beta_a - beta_b|` over the window's time nodes and over the
/// vertices of the trace box `[0, k_inf]^deps`.
fn boundary_gap(a: &SystemSpec, b: &SystemSpec, t_start: f64, steps: usize, k_inf: f64) -> f64 {
    let dt = a.dt();
    let mut gap = 0.0f64;
    for (ra, rb) in a.boundaries.iter().zip(&b.boundaries) {
        let deps = ra.dependencies().len().max(rb.dependencies().len()).min(12);
        for n in 0..=steps {
            let t = t_start + n as f64 * dt;
            for mask in 0..(1usize << deps) {
                let traces: Vec<f64> =
                    (0..deps).map(|k| if mask >> k & 1 == 1 { k_inf } else { 0.0 }).collect();
                let ta = &traces[..ra.dependencies().len()];
                let tb = &traces[..rb.dependencies().len()];
                gap = gap.max((ra.eval(t, ta) - rb.eval(t, tb)).abs());
            }
        }
    }
    gap
}

/// Solves both systems and checks
/// `|u'(t) - u''(t)|_1 <= (H2 |u_o' - u_o''|_1 + e^{2(G1+M)t} t |beta' - beta''|) e^{H1 t}`
/// at every output time reached by both.
pub fn check_solution_stability(
    first: (&SystemSpec, &[Vec<f64>]),
    second: (&SystemSpec, &[Vec<f64>]),
    t_start: f64,
    t_end: f64,
    opts: &SolverOptions,
) -> Result<Vec<InequalityReport>> {
    let s1 = solve_global(first.0, first.1, t_start, t_end, opts)?;
    let s2 = solve_global(second.0, second.1, t_start, t_end, opts)?;
    let h = first.0.dt();
    let d1 = derived_constants(first.0, first.1);
    let d2 = derived_constants(second.0, second.1);
    let d = DerivedConstants {
        k1: d1.k1.max(d2.k1),
        k_inf: d1.k_inf.max(d2.k_inf),
        m: d1.m.max(d2.m),
        f1: d1.f1.max(d2.f1),
        f_inf: d1.f_inf.max(d2.f_inf),
    };
    let (_, sup1, _) = data_norms(first.0, first.1);
    let (_, sup2, _) = data_norms(second.0, second.1);
    let datum_gap: f64 = first
        .1
        .iter()
        .zip(second.1)
        .map(|(a, b)| trapezoid(&a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>(), h))
        .sum();
    let steps = s1.states.len().min(s2.states.len()) - 1;
    let beta_gap = boundary_gap(first.0, second.0, t_start, steps, d.k_inf);
    let c = &first.0.constants;
    let mut out = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let t = n as f64 * h;
        let lhs: f64 = s1.states[n]
            .iter()
            .zip(&s2.states[n])
            .map(|(a, b)| {
                trapezoid(&a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>(), h)
            })
            .sum();
        let (h1, h2) = stability_rates(first.0, &d, sup1, sup2, t);
        let e2 = (2.0 * (c.g1 + d.m) * t).exp();
        let rhs = (h2 * datum_gap + e2 * t * beta_gap) * (h1 * t).exp();
        out.push(InequalityReport::new("stability_system", lhs, rhs, 1e-9, 1e-12).at(s1.times[n]));
    }
    Ok(out)
}

/// Membership of the solution in the ball of the existence argument; reported only.
pub fn check_ball(
    spec: &SystemSpec,
    d: &DerivedConstants,
    sol: &GlobalSolution,
) -> Vec<InequalityReport> {
    let mut out = Vec::new();
    for (t, state) in sol.times.iter().zip(&sol.states) {
        let (l1, sup, tv) = data_norms(spec, state);
        out.push(InequalityReport::new("ball_l1", l1, d.k1, 0.0, 0.0).at(*t));
        out.push(InequalityReport::new("ball_linf_tv", sup + tv, d.k_inf, 0.0, 0.0).at(*t));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Mass;

    impl NonlocalOperator for Mass {
        fn apply(&self, w: &[&[f64]], out: &mut [f64]) {
            let total = trapezoid(w[0], 0.1);
            out.iter_mut().for_each(|o| *o = total);
        }
    }

    fn constants() -> SystemConstants {
        SystemConstants {
            a_l: 1.0,
            a_1: 1.0,
            a_2: 1.0,
            b_l: 1.0,
            b_1: 0.0,
            b_inf: 0.0,
            c_l: 0.0,
            c_inf: 0.0,
            g_lower: 1.0,
            g1: 0.0,
            g_inf: 1.0,
        }
    }

    fn decoupled() -> SystemSpec {
        SystemSpec {
            cells_per_unit_age: 10,
            components: vec![ComponentSpec {
                name: "u".into(),
                cells: 20,
                speed: Speed::Unit,
                trace_node: 20,
            }],
            operators: vec![],
            couplings: vec![],
            reactions: vec![ReactionTerm { row: 0, col: 0, rate: Arc::new(|_, _| -0.5) }],
            boundaries: vec![Arc::new(DataInflow(Arc::new(|_| 1.0)))],
            constants: constants(),
            declared: Structure::default(),
        }
    }

    #[test]
    fn decoupled_converges_in_one_iteration() {
        let spec = decoupled();
        let start = vec![vec![1.0; 21]];
        let out = solve_window(&spec, &start, 0.0, 5, &SolverOptions::default(), 1e9).unwrap();
        match out {
            WindowOutcome::Converged(_, r) => assert_eq!(r.iterations(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn triangularity_is_enforced() {
        let mut spec = decoupled();
        struct Loop;
        impl BoundaryRule for Loop {
            fn dependencies(&self) -> &[usize] {
                &[0]
            }
            fn eval(&self, _: f64, tr: &[f64]) -> f64 {
                tr[0]
            }
        }
        spec.boundaries = vec![Arc::new(Loop)];
        assert!(matches!(spec.validate(), Err(Error::Precondition(_))));
    }

    #[test]
    fn growth_operator_violates_neg() {
        let mut spec = decoupled();
        spec.reactions.clear();
        spec.operators = vec![Arc::new(Mass)];
        spec.couplings = vec![CouplingTerm { row: 0, col: 0, scale: 1.0, operator: 0 }];
        let state = vec![vec![1.0; 21]];
        assert!(!check_neg_condition(&spec, &state, 0.0).holds);
    }
}
