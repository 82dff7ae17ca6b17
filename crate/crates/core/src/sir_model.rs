//! Age-structured SIR model with age- or time-triggered vaccination.
//!
//! With vaccination ages `a_1 < ... < a_N` the age axis is cut into segments
//! and each segment carries its own `(S, I, R)` triple in local age
//! coordinates, so the vaccination jumps become boundary conditions:
//! `S_j(0) = (1 - eta_j) S_{j-1}(end)`, `I_j(0) = I_{j-1}(end)`,
//! `R_j(0) = R_{j-1}(end) + eta_j S_{j-1}(end)`. Time-triggered campaigns restart
//! the plain system after applying the jump to the state.

use std::sync::Arc;

use rayon::prelude::*;

use crate::bv::InequalityReport;
use crate::coupled_ibvp::{
    solve_global, ComponentSpec, CouplingTerm, DataInflow, FixedPointReport, NonlocalOperator,
    Outcome, ReactionTerm, SolverOptions, Structure, SystemConstants, SystemSpec, TraceRule,
};
use crate::error::{Error, Result};
use crate::grid::{mesh_index, trapezoid, Grid, GridFunction};
use crate::scalar_renewal::{ScalarFn, Speed};

/// Piecewise linear through its points, constant beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Curve {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::Scenario("a curve needs matching, nonempty x and y lists".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Scenario("curve abscissae must be strictly increasing".into()));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Scenario("curve values must be finite".into()));
        }
        Ok(Curve { xs, ys })
    }

    pub fn constant(c: f64) -> Self {
        Curve { xs: vec![0.0], ys: vec![c] }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn at(&self, x: f64) -> f64 {
        let k = self.xs.partition_point(|&p| p <= x);
        if k == 0 {
            return self.ys[0];
        }
        if k == self.xs.len() {
            return self.ys[k - 1];
        }
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let w = (x - x0) / (x1 - x0);
        self.ys[k - 1] * (1.0 - w) + self.ys[k] * w
    }

    pub fn min_value(&self) -> f64 {
        self.ys.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_zero(&self) -> bool {
        self.ys.iter().all(|&y| y == 0.0)
    }
}

/// Right-continuous step function: `values[k]` holds on `[breaks[k-1], breaks[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::Control("a step function needs one more value than breaks".into()));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Control("breaks must be strictly increasing".into()));
        }
        Ok(PiecewiseConstant { breaks, values })
    }

    pub fn constant(c: f64) -> Self {
        PiecewiseConstant { breaks: vec![], values: vec![c] }
    }

    /// `values.len()` equal bins on `[start, end]`.
    pub fn bins(start: f64, end: f64, values: Vec<f64>) -> Result<Self> {
        let b = values.len();
        if b == 0 {
            return Err(Error::Control("at least one bin is required".into()));
        }
        let width = (end - start) / b as f64;
        Self::new((1..b).map(|k| start + k as f64 * width).collect(), values)
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, t: f64) -> f64 {
        self.values[self.breaks.partition_point(|&b| b <= t)]
    }

    /// Limit from the left.
    pub fn value_left(&self, t: f64) -> f64 {
        self.values[self.breaks.partition_point(|&b| b < t)]
    }

    fn in_unit_box(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Clone)]
pub enum RateFn {
    Constant(f64),
    Age(Curve),
    /// `time(t) * age(a)`.
    Separable { time: Curve, age: Curve },
    Function(ScalarFn),
}

impl RateFn {
    pub fn at(&self, t: f64, a: f64) -> f64 {
        match self {
            RateFn::Constant(c) => *c,
            RateFn::Age(c) => c.at(a),
            RateFn::Separable { time, age } => time.at(t) * age.at(a),
            RateFn::Function(f) => f(t, a),
        }
    }
}

impl std::fmt::Debug for RateFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RateFn::Constant(c) => write!(f, "Constant({c})"),
            RateFn::Age(c) => write!(f, "Age({c:?})"),
            RateFn::Separable { time, age } => write!(f, "Separable({time:?}, {age:?})"),
            RateFn::Function(_) => write!(f, "Function"),
        }
    }
}

#[derive(Clone)]
pub enum KernelForm {
    Constant(f64),
    /// `p(a) q(a')`.
    Separable { p: Curve, q: Curve },
    /// Bilinear interpolation of `values[i][k] = lambda(ages[i], ages[k])`.
    Tabulated { ages: Vec<f64>, values: Vec<Vec<f64>> },
    Function(ScalarFn),
}

#[derive(Clone)]
pub struct Kernel {
    pub form: KernelForm,
    /// Declared bound on sup plus first-argument variation; sampled when absent.
    pub lambda_inf: Option<f64>,
    /// Declared first-argument Lipschitz constant; sampled when absent.
    pub lambda_l: Option<f64>,
}

fn bracket(ages: &[f64], a: f64) -> (usize, f64) {
    let last = ages.len() - 1;
    if last == 0 || a <= ages[0] {
        return (0, 0.0);
    }
    if a >= ages[last] {
        return (last - 1, 1.0);
    }
    let k = ages.partition_point(|&x| x <= a) - 1;
    (k, (a - ages[k]) / (ages[k + 1] - ages[k]))
}

impl Kernel {
    pub fn constant(c: f64) -> Self {
        Kernel { form: KernelForm::Constant(c), lambda_inf: None, lambda_l: None }
    }

    pub fn at(&self, a: f64, a2: f64) -> f64 {
        match &self.form {
            KernelForm::Constant(c) => *c,
            KernelForm::Separable { p, q } => p.at(a) * q.at(a2),
            KernelForm::Tabulated { ages, values } => {
                if ages.len() == 1 {
                    return values[0][0];
                }
                let (i, u) = bracket(ages, a);
                let (k, v) = bracket(ages, a2);
                let row = |i: usize| values[i][k] * (1.0 - v) + values[i][k + 1] * v;
                row(i) * (1.0 - u) + row(i + 1) * u
            }
            KernelForm::Function(f) => f(a, a2),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Rates {
    pub d_s: RateFn,
    pub d_i: RateFn,
    pub d_r: RateFn,
    pub r_i: RateFn,
    pub r_l: Option<f64>,
    pub r_1: Option<f64>,
    pub r_inf: Option<f64>,
}

impl Rates {
    pub fn zero() -> Self {
        Rates {
            d_s: RateFn::Constant(0.0),
            d_i: RateFn::Constant(0.0),
            d_r: RateFn::Constant(0.0),
            r_i: RateFn::Constant(0.0),
            r_l: None,
            r_1: None,
            r_inf: None,
        }
    }

    fn named(&self) -> [(&'static str, &RateFn); 4] {
        [("d_S", &self.d_s), ("d_I", &self.d_i), ("d_R", &self.d_r), ("r_I", &self.r_i)]
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum Policy {
    #[default]
    None,
    /// `eta[j]` acts at `ages[j]`, as a function of time.
    AgeTriggered { ages: Vec<f64>, eta: Vec<PiecewiseConstant> },
    /// `nu[k]` acts at `times[k]`, as a function of age.
    TimeTriggered { times: Vec<f64>, nu: Vec<PiecewiseConstant> },
}

#[derive(Clone)]
pub struct Scenario {
    pub age_max: f64,
    pub cells_per_unit_age: usize,
    pub horizon: f64,
    pub kernel: Kernel,
    pub rates: Rates,
    pub s_o: Curve,
    pub i_o: Curve,
    pub r_o: Curve,
    pub s_b: Curve,
    pub i_b: Curve,
    pub r_b: Curve,
    pub policy: Policy,
    pub allow_signed_rates: bool,
    pub solver: SolverOptions,
}

impl Scenario {
    /// No infection, no demography, no data.
    pub fn zero(age_max: f64, cells_per_unit_age: usize, horizon: f64) -> Self {
        Scenario {
            age_max,
            cells_per_unit_age,
            horizon,
            kernel: Kernel::constant(0.0),
            rates: Rates::zero(),
            s_o: Curve::constant(0.0),
            i_o: Curve::constant(0.0),
            r_o: Curve::constant(0.0),
            s_b: Curve::constant(0.0),
            i_b: Curve::constant(0.0),
            r_b: Curve::constant(0.0),
            policy: Policy::None,
            allow_signed_rates: false,
            solver: SolverOptions::default(),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        let interfaces = match &self.policy {
            Policy::AgeTriggered { ages, .. } => ages.as_slice(),
            _ => &[],
        };
        Grid::new(self.age_max, interfaces, self.cells_per_unit_age, self.horizon)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn with_resolution(&self, cells_per_unit_age: usize) -> Self {
        Scenario { cells_per_unit_age, ..self.clone() }
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        Scenario { policy, ..self.clone() }
    }

    fn initial(&self, grid: &Grid) -> [GridFunction; 3] {
        [&self.s_o, &self.i_o, &self.r_o].map(|c| GridFunction::from_fn(grid, |a| c.at(a)))
    }

    fn inflow_mass(&self, t: f64, dt: f64) -> f64 {
        let n = mesh_index(t, self.cells_per_unit_age).unwrap_or(0);
        let total: Vec<f64> = (0..=n)
            .map(|k| {
                let s = k as f64 * dt;
                self.s_b.at(s) + self.i_b.at(s) + self.r_b.at(s)
            })
            .collect();
        trapezoid(&total, dt)
    }
}

/// Force of infection on one target segment:
/// `sum_l int lambda(a, a') I_l(a') da'` over all source segments.
struct InfectionPressure {
    /// Component index of each `I_l`.
    sources: Vec<usize>,
    h: f64,
    kind: PressureKind,
}

enum PressureKind {
    Constant(f64),
    /// `p` on target nodes; `q` times trapezoid weights on source nodes.
    Separable { p: Vec<f64>, q: Vec<Vec<f64>> },
    /// `weights[m][l][m']`.
    Dense(Vec<Vec<Vec<f64>>>),
}

impl NonlocalOperator for InfectionPressure {
    fn apply(&self, w: &[&[f64]], out: &mut [f64]) {
        match &self.kind {
            PressureKind::Constant(c) => {
                let total: f64 = self.sources.iter().map(|&l| trapezoid(w[l], self.h)).sum();
                out.iter_mut().for_each(|o| *o = c * total);
            }
            PressureKind::Separable { p, q } => {
                let s: f64 = self
                    .sources
                    .iter()
                    .zip(q)
                    .map(|(&l, q)| q.iter().zip(w[l]).map(|(a, b)| a * b).sum::<f64>())
                    .sum();
                out.iter_mut().zip(p).for_each(|(o, p)| *o = p * s);
            }
            PressureKind::Dense(weights) => {
                for (o, row) in out.iter_mut().zip(weights) {
                    *o = self
                        .sources
                        .iter()
                        .zip(row)
                        .map(|(&l, r)| r.iter().zip(w[l]).map(|(a, b)| a * b).sum::<f64>())
                        .sum();
                }
            }
        }
    }
}

fn trapezoid_weights(nodes: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; nodes];
    w[0] *= 0.5;
    w[nodes - 1] *= 0.5;
    w
}

fn pressure(kernel: &Kernel, grid: &Grid, target: usize) -> InfectionPressure {
    let h = grid.spacing();
    let segs = grid.segment_count();
    let sources = (0..segs).map(|l| 3 * l + 1).collect();
    let target_ages: Vec<f64> =
        (0..grid.segment_nodes(target)).map(|m| grid.node_age(target, m)).collect();
    let source_weights = |f: &dyn Fn(f64) -> f64| -> Vec<Vec<f64>> {
        (0..segs)
            .map(|l| {
                trapezoid_weights(grid.segment_nodes(l), h)
                    .into_iter()
                    .enumerate()
                    .map(|(m, w)| w * f(grid.node_age(l, m)))
                    .collect()
            })
            .collect()
    };
    let kind = match &kernel.form {
        KernelForm::Constant(c) => PressureKind::Constant(*c),
        KernelForm::Separable { p, q } => PressureKind::Separable {
            p: target_ages.iter().map(|&a| p.at(a)).collect(),
            q: source_weights(&|a| q.at(a)),
        },
        _ => PressureKind::Dense(
            target_ages
                .par_iter()
                .map(|&a| source_weights(&|a2| kernel.at(a, a2)))
                .collect(),
        ),
    };
    InfectionPressure { sources, h, kind }
}

/// Sampled counterparts of the declared constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledConstants {
    pub lambda_inf: f64,
    pub lambda_l: f64,
    pub r_l: f64,
    pub r_1: f64,
    pub r_inf: f64,
}

fn time_samples(sc: &Scenario) -> Vec<f64> {
    let n = 50usize;
    (0..=n).map(|k| sc.horizon * k as f64 / n as f64).collect()
}

fn age_samples(sc: &Scenario) -> Vec<f64> {
    let cells = (sc.age_max * sc.cells_per_unit_age as f64).round().max(1.0) as usize;
    let stride = cells.div_ceil(400).max(1);
    let h = 1.0 / sc.cells_per_unit_age as f64;
    let mut out: Vec<f64> = (0..=cells).step_by(stride).map(|m| m as f64 * h).collect();
    if *out.last().unwrap() < sc.age_max {
        out.push(sc.age_max);
    }
    out
}

/// Largest `|f(x_{k+1}) - f(x_k)| / (x_{k+1} - x_k)` and the variation.
fn variation_and_slope(xs: &[f64], f: impl Fn(f64) -> f64) -> (f64, f64, f64, f64) {
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut tv = 0.0;
    let mut slope = 0.0f64;
    let mut at = xs[0];
    for k in 1..xs.len() {
        let d = (vals[k] - vals[k - 1]).abs();
        tv += d;
        let s = d / (xs[k] - xs[k - 1]);
        if s > slope {
            slope = s;
            at = xs[k - 1];
        }
    }
    let sup = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (sup, tv, slope, at)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub what: String,
    pub location: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
    /// All rates nonnegative: the dissipativity guarantee applies.
    pub neg_eligible: bool,
    pub sampled: SampledConstants,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn exceeds(value: f64, declared: Option<f64>) -> bool {
    declared.is_some_and(|d| value > d * (1.0 + 1e-6) + 1e-12)
}

/// Samples every declared constant and checks data, controls and alignment.
pub fn validate_scenario(sc: &Scenario) -> ValidationReport {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    let mut push = |what: &str, location: String, detail: String| {
        violations.push(Violation { what: what.into(), location, detail })
    };

    if let Err(e) = sc.grid() {
        push("grid", "[grid]".into(), e.to_string());
    }
    let ages = age_samples(sc);
    let times = time_samples(sc);

    // kernel
    let mut lam_inf = 0.0f64;
    let mut lam_l = 0.0f64;
    let mut worst_inf = (0.0, 0.0);
    let mut worst_l = (0.0, 0.0);
    let mut kernel_negative = false;
    for &a2 in &ages {
        let (sup, tv, slope, at) = variation_and_slope(&ages, |a| sc.kernel.at(a, a2));
        kernel_negative |= ages.iter().any(|&a| sc.kernel.at(a, a2) < 0.0);
        if sup + tv > lam_inf {
            lam_inf = sup + tv;
            worst_inf = (at, a2);
        }
        if slope > lam_l {
            lam_l = slope;
            worst_l = (at, a2);
        }
    }
    if exceeds(lam_inf, sc.kernel.lambda_inf) {
        push(
            "Lambda_inf",
            format!("(a, a') = ({}, {})", worst_inf.0, worst_inf.1),
            format!("sampled {lam_inf} > declared {}", sc.kernel.lambda_inf.unwrap()),
        );
    }
    if exceeds(lam_l, sc.kernel.lambda_l) {
        push(
            "Lambda_L",
            format!("(a, a') = ({}, {})", worst_l.0, worst_l.1),
            format!("sampled {lam_l} > declared {}", sc.kernel.lambda_l.unwrap()),
        );
    }

    // rates
    let (mut r_inf, mut r_l, mut r_1) = (0.0f64, 0.0f64, 0.0f64);
    let mut r_l_at = String::new();
    let mut signed = Vec::new();
    for (name, rate) in sc.rates.named() {
        let mut sup = 0.0f64;
        let mut tv_max = 0.0f64;
        let mut min = f64::INFINITY;
        let mut min_at = (0.0, 0.0);
        for &t in &times {
            let (s, tv, slope, at) = variation_and_slope(&ages, |a| rate.at(t, a));
            sup = sup.max(s);
            tv_max = tv_max.max(tv);
            if slope > r_l {
                r_l = slope;
                r_l_at = format!("{name} at (t, a) = ({t}, {at})");
            }
            let abs: Vec<f64> = ages.iter().map(|&a| rate.at(t, a).abs()).collect();
            let l1: f64 = abs.windows(2).zip(ages.windows(2)).map(|(v, x)| 0.5 * (v[0] + v[1]) * (x[1] - x[0])).sum();
            r_1 = r_1.max(l1);
            for &a in &ages {
                let v = rate.at(t, a);
                if v < min {
                    min = v;
                    min_at = (t, a);
                }
            }
        }
        r_inf = r_inf.max(sup + tv_max);
        if min < 0.0 {
            signed.push(name);
            warnings.push(format!(
                "{name} is negative ({min}) at (t, a) = ({}, {}); the dissipativity guarantee does not apply",
                min_at.0, min_at.1
            ));
        }
    }
    if exceeds(r_inf, sc.rates.r_inf) {
        push("R_inf", "[rates]".into(), format!("sampled {r_inf} > declared {}", sc.rates.r_inf.unwrap()));
    }
    if exceeds(r_1, sc.rates.r_1) {
        push("R_1", "[rates]".into(), format!("sampled {r_1} > declared {}", sc.rates.r_1.unwrap()));
    }
    if exceeds(r_l, sc.rates.r_l) {
        push("R_L", r_l_at, format!("sampled {r_l} > declared {}", sc.rates.r_l.unwrap()));
    }

    // data
    for (name, c) in [("S_o", &sc.s_o), ("I_o", &sc.i_o), ("R_o", &sc.r_o), ("S_b", &sc.s_b), ("I_b", &sc.i_b), ("R_b", &sc.r_b)] {
        if c.min_value() < 0.0 {
            let k = c.ys().iter().position(|&y| y < 0.0).unwrap();
            push("data", format!("{name} at {}", c.xs()[k]), format!("negative value {}", c.ys()[k]));
        }
    }
    let cut = 0.95 * sc.age_max;
    let total: f64 = [&sc.s_o, &sc.i_o, &sc.r_o]
        .iter()
        .map(|c| {
            let v: Vec<f64> = ages.iter().map(|&a| c.at(a).abs()).collect();
            v.windows(2).zip(ages.windows(2)).map(|(v, x)| 0.5 * (v[0] + v[1]) * (x[1] - x[0])).sum::<f64>()
        })
        .sum();
    let tail: f64 = [&sc.s_o, &sc.i_o, &sc.r_o]
        .iter()
        .map(|c| {
            let xs: Vec<f64> = ages.iter().copied().filter(|&a| a >= cut).collect();
            let v: Vec<f64> = xs.iter().map(|&a| c.at(a).abs()).collect();
            v.windows(2).zip(xs.windows(2)).map(|(v, x)| 0.5 * (v[0] + v[1]) * (x[1] - x[0])).sum::<f64>()
        })
        .sum();
    if total > 0.0 && tail > 1e-6 * total {
        warnings.push(format!(
            "initial mass in the last 5% of the age domain is {tail:.3e} of {total:.3e}; transport may leak through a_max"
        ));
    }

    // policy
    let k = sc.cells_per_unit_age;
    match &sc.policy {
        Policy::None => {}
        Policy::AgeTriggered { ages, eta } => {
            if ages.len() != eta.len() {
                push("policy", "[policy]".into(), "one control per vaccination age".into());
            }
            for (j, e) in eta.iter().enumerate() {
                if !e.in_unit_box() {
                    push("policy", format!("eta[{j}]"), "control values must lie in [0, 1]".into());
                }
            }
        }
        Policy::TimeTriggered { times, nu } => {
            if times.len() != nu.len() {
                push("policy", "[policy]".into(), "one control per vaccination time".into());
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                push("policy", "[policy]".into(), "vaccination times must increase".into());
            }
            for &t in times {
                if mesh_index(t, k).is_none() || t < 0.0 || t >= sc.horizon {
                    push("policy", format!("t = {t}"), "vaccination time must be a mesh node in [0, horizon)".into());
                }
            }
            for (j, n) in nu.iter().enumerate() {
                if !n.in_unit_box() {
                    push("policy", format!("nu[{j}]"), "control values must lie in [0, 1]".into());
                }
            }
        }
    }
    if !signed.is_empty() && !sc.allow_signed_rates {
        push(
            "rates",
            "[rates]".into(),
            "negative rates require allow_signed_rates = true".into(),
        );
    }
    if kernel_negative {
        warnings.push("the kernel takes negative values; positivity is not guaranteed".into());
    }

    ValidationReport {
        violations,
        warnings,
        neg_eligible: signed.is_empty(),
        sampled: SampledConstants { lambda_inf: lam_inf, lambda_l: lam_l, r_l, r_1, r_inf },
    }
}

fn system_constants(sc: &Scenario, sampled: &SampledConstants, grid: &Grid) -> SystemConstants {
    let dt = grid.dt();
    let steps = grid.steps();
    let b: Vec<f64> = (0..=steps)
        .map(|n| {
            let t = n as f64 * dt;
            sc.s_b.at(t) + sc.i_b.at(t) + sc.r_b.at(t)
        })
        .collect();
    let b_sup = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let b_tv: f64 = b.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let lam = sc.kernel.lambda_inf.unwrap_or(sampled.lambda_inf);
    let r_inf = sc.rates.r_inf.unwrap_or(sampled.r_inf);
    SystemConstants {
        a_l: sc.kernel.lambda_l.unwrap_or(sampled.lambda_l) + lam,
        a_1: lam,
        a_2: lam,
        b_l: 1.0,
        b_1: trapezoid(&b, dt),
        b_inf: b_sup + b_tv,
        c_l: sc.rates.r_l.unwrap_or(sampled.r_l),
        c_inf: 2.0 * r_inf,
        g_lower: 1.0,
        g1: 0.0,
        g_inf: 1.0,
    }
}

fn shifted(rate: &RateFn, offset: f64) -> ScalarFn {
    let rate = rate.clone();
    Arc::new(move |t, x| rate.at(t, offset + x))
}

fn check_ready(sc: &Scenario) -> Result<ValidationReport> {
    let report = validate_scenario(sc);
    if !report.is_valid() {
        let list: Vec<String> = report
            .violations
            .iter()
            .map(|v| format!("{} at {}: {}", v.what, v.location, v.detail))
            .collect();
        return Err(Error::Scenario(list.join("; ")));
    }
    Ok(report)
}

fn build(sc: &Scenario, grid: &Grid, report: &ValidationReport) -> SystemSpec {
    let segs = grid.segment_count();
    let eta = match &sc.policy {
        Policy::AgeTriggered { eta, .. } => eta.clone(),
        _ => Vec::new(),
    };
    let mut components = Vec::with_capacity(3 * segs);
    let mut operators: Vec<Arc<dyn NonlocalOperator>> = Vec::with_capacity(segs);
    let mut couplings = Vec::new();
    let mut reactions = Vec::new();
    let mut boundaries: Vec<Arc<dyn crate::coupled_ibvp::BoundaryRule>> = Vec::new();
    for j in 0..segs {
        let cells = grid.segment_cells(j);
        for name in ["S", "I", "R"] {
            components.push(ComponentSpec {
                name: format!("{name}{j}"),
                cells,
                speed: Speed::Unit,
                trace_node: cells,
            });
        }
        operators.push(Arc::new(pressure(&sc.kernel, grid, j)));
        let (s, i, r) = (3 * j, 3 * j + 1, 3 * j + 2);
        couplings.push(CouplingTerm { row: s, col: s, scale: -1.0, operator: j });
        couplings.push(CouplingTerm { row: i, col: s, scale: 1.0, operator: j });
        let off = grid.segment_start(j);
        let neg = |f: ScalarFn| -> ScalarFn { Arc::new(move |t, x| -f(t, x)) };
        let d_s = shifted(&sc.rates.d_s, off);
        let d_i = shifted(&sc.rates.d_i, off);
        let r_i = shifted(&sc.rates.r_i, off);
        let d_r = shifted(&sc.rates.d_r, off);
        let r_i2 = r_i.clone();
        reactions.push(ReactionTerm { row: s, col: s, rate: neg(d_s) });
        reactions.push(ReactionTerm {
            row: i,
            col: i,
            rate: Arc::new(move |t, x| -(d_i(t, x) + r_i2(t, x))),
        });
        reactions.push(ReactionTerm { row: r, col: r, rate: neg(d_r) });
        reactions.push(ReactionTerm { row: r, col: i, rate: r_i });
        if j == 0 {
            for c in [&sc.s_b, &sc.i_b, &sc.r_b] {
                let c = c.clone();
                boundaries.push(Arc::new(DataInflow(Arc::new(move |t| c.at(t)))));
            }
        } else {
            let e1 = eta[j - 1].clone();
            let e2 = eta[j - 1].clone();
            let (ps, pi, pr) = (s - 3, i - 3, r - 3);
            boundaries.push(Arc::new(TraceRule {
                deps: vec![ps],
                f: Arc::new(move |t, tr| (1.0 - e1.value(t)) * tr[0]),
            }));
            boundaries.push(Arc::new(TraceRule { deps: vec![pi], f: Arc::new(|_, tr| tr[0]) }));
            boundaries.push(Arc::new(TraceRule {
                deps: vec![ps, pr],
                f: Arc::new(move |t, tr| e2.value(t) * tr[0] + tr[1]),
            }));
        }
    }
    let kernel_nonneg = !validate_kernel_sign(sc);
    SystemSpec {
        cells_per_unit_age: grid.cells_per_unit_age(),
        components,
        operators,
        couplings,
        reactions,
        boundaries,
        constants: system_constants(sc, &report.sampled, grid),
        declared: Structure { pos: kernel_nonneg, neg: report.neg_eligible, eq: true },
    }
}

fn validate_kernel_sign(sc: &Scenario) -> bool {
    let ages = age_samples(sc);
    ages.iter().any(|&a| ages.iter().any(|&a2| sc.kernel.at(a, a2) < 0.0))
}

/// Coupled system for the age-triggered policy (also used without a policy).
pub fn build_system_age_triggered(sc: &Scenario) -> Result<SystemSpec> {
    if matches!(sc.policy, Policy::TimeTriggered { .. }) {
        return Err(Error::Config("time-triggered policy given to the age-triggered builder".into()));
    }
    let report = check_ready(sc)?;
    Ok(build(sc, &sc.grid()?, &report))
}

/// Inter-jump intervals of a time-triggered campaign.
pub struct TimeTriggeredPlan {
    pub spec: SystemSpec,
    /// `(t_start, t_end)` per interval.
    pub stages: Vec<(f64, f64)>,
    /// `(time, nu)` applied at the start of stage `k + 1`.
    pub restarts: Vec<(f64, PiecewiseConstant)>,
}

pub fn build_system_time_triggered(sc: &Scenario) -> Result<TimeTriggeredPlan> {
    let Policy::TimeTriggered { times, nu } = &sc.policy else {
        return Err(Error::Config("time-triggered builder needs a time-triggered policy".into()));
    };
    let report = check_ready(sc)?;
    let plain = sc.with_policy(Policy::None);
    let spec = build(&plain, &plain.grid()?, &report);
    let mut bounds = vec![0.0];
    bounds.extend(times.iter().copied());
    bounds.push(sc.horizon);
    Ok(TimeTriggeredPlan {
        spec,
        stages: bounds.windows(2).map(|w| (w[0], w[1])).collect(),
        restarts: times.iter().copied().zip(nu.iter().cloned()).collect(),
    })
}

/// Applies `S <- (1 - nu) S`, `R <- R + nu S` nodewise.
pub fn apply_time_jump(state: &SirState, nu: &PiecewiseConstant, grid: &Grid) -> SirState {
    let mut out = state.clone();
    for j in 0..grid.segment_count() {
        for m in 0..grid.segment_nodes(j) {
            let v = nu.value(grid.node_age(j, m));
            let s = state.s.segment(j)[m];
            out.s.segment_mut(j)[m] = (1.0 - v) * s;
            out.r.segment_mut(j)[m] = state.r.segment(j)[m] + v * s;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirState {
    pub t: f64,
    pub s: GridFunction,
    pub i: GridFunction,
    pub r: GridFunction,
}

impl SirState {
    /// `int (S + I + R) da`.
    pub fn population(&self) -> f64 {
        self.s.integral() + self.i.integral() + self.r.integral()
    }

    pub fn min_value(&self) -> f64 {
        self.s.min_value().min(self.i.min_value()).min(self.r.min_value())
    }

    pub fn fields(&self) -> [&GridFunction; 3] {
        [&self.s, &self.i, &self.r]
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    /// One state per time step; at a vaccination time the post-jump state.
    pub states: Vec<SirState>,
    /// States just before each vaccination time.
    pub pre_jump: Vec<SirState>,
    pub reports: Vec<FixedPointReport>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    pub fn last(&self) -> &SirState {
        self.states.last().unwrap()
    }

    pub fn min_value(&self) -> f64 {
        self.states.iter().map(SirState::min_value).fold(f64::INFINITY, f64::min)
    }
}

fn split_state(grid: &Grid, t: f64, components: &[Vec<f64>]) -> SirState {
    let segs = grid.segment_count();
    let h = grid.spacing();
    let pick = |c: usize| {
        GridFunction::from_raw(h, (0..segs).map(|j| components[3 * j + c].clone()).collect())
    };
    SirState { t, s: pick(0), i: pick(1), r: pick(2) }
}

fn join_state(state: &SirState) -> Vec<Vec<f64>> {
    let segs = state.s.segment_count();
    let mut out = Vec::with_capacity(3 * segs);
    for j in 0..segs {
        out.push(state.s.segment(j).to_vec());
        out.push(state.i.segment(j).to_vec());
        out.push(state.r.segment(j).to_vec());
    }
    out
}

/// Initial state in solver component order `3j + {S, I, R}`.
pub fn initial_components(sc: &Scenario) -> Result<Vec<Vec<f64>>> {
    Ok(join_state(&initial_state(sc, &sc.grid()?)))
}

/// Initial state; right traces at vaccination ages obey the jump relations.
fn initial_state(sc: &Scenario, grid: &Grid) -> SirState {
    let [s, i, r] = sc.initial(grid);
    let mut state = SirState { t: 0.0, s, i, r };
    if let Policy::AgeTriggered { eta, .. } = &sc.policy {
        for j in 1..grid.segment_count() {
            let e = eta[j - 1].value(0.0);
            let sl = *state.s.segment(j - 1).last().unwrap();
            let il = *state.i.segment(j - 1).last().unwrap();
            let rl = *state.r.segment(j - 1).last().unwrap();
            state.s.segment_mut(j)[0] = (1.0 - e) * sl;
            state.i.segment_mut(j)[0] = il;
            state.r.segment_mut(j)[0] = rl + e * sl;
        }
    }
    state
}

/// Runs the scenario over `[0, horizon]`.
pub fn simulate(sc: &Scenario) -> Result<Trajectory> {
    let grid = sc.grid()?;
    match &sc.policy {
        Policy::TimeTriggered { .. } => simulate_time_triggered(sc, grid),
        _ => {
            let spec = build_system_age_triggered(sc)?;
            let start = initial_state(sc, &grid);
            let sol = solve_global(&spec, &join_state(&start), 0.0, sc.horizon, &sc.solver)?;
            let states =
                sol.times.iter().zip(&sol.states).map(|(&t, c)| split_state(&grid, t, c)).collect();
            Ok(Trajectory {
                grid,
                states,
                pre_jump: Vec::new(),
                reports: sol.reports,
                outcome: sol.outcome,
            })
        }
    }
}

fn simulate_time_triggered(sc: &Scenario, grid: Grid) -> Result<Trajectory> {
    let plan = build_system_time_triggered(sc)?;
    let mut traj = Trajectory {
        states: vec![initial_state(sc, &grid)],
        grid,
        pre_jump: Vec::new(),
        reports: Vec::new(),
        outcome: Outcome::Completed,
    };
    for (k, &(t0, t1)) in plan.stages.iter().enumerate() {
        if k > 0 {
            let (_, nu) = &plan.restarts[k - 1];
            let pre = traj.states.pop().unwrap();
            let post = apply_time_jump(&pre, nu, &traj.grid);
            traj.pre_jump.push(pre);
            traj.states.push(post);
        }
        if t1 <= t0 {
            continue;
        }
        let start = join_state(traj.last());
        let sol = solve_global(&plan.spec, &start, t0, t1, &sc.solver)?;
        traj.reports.extend(sol.reports);
        for (&t, c) in sol.times.iter().zip(&sol.states).skip(1) {
            traj.states.push(split_state(&traj.grid, t, c));
        }
        if sol.outcome != Outcome::Completed {
            traj.outcome = sol.outcome;
            break;
        }
    }
    Ok(traj)
}

/// Largest violation of each jump relation over all output times.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JumpViolation {
    pub s: f64,
    pub i: f64,
    pub r: f64,
    pub total: f64,
}

impl JumpViolation {
    pub fn max(&self) -> f64 {
        self.s.max(self.i).max(self.r).max(self.total)
    }
}

/// Interface relations of an age-triggered run.
pub fn age_jump_violation(traj: &Trajectory, policy: &Policy) -> Result<JumpViolation> {
    let Policy::AgeTriggered { eta, .. } = policy else {
        return Err(Error::Control("age-triggered policy required".into()));
    };
    if traj.grid.segment_count() != eta.len() + 1 {
        return Err(Error::Control("policy does not match the trajectory".into()));
    }
    let mut v = JumpViolation::default();
    for st in &traj.states {
        for j in 1..traj.grid.segment_count() {
            let e = eta[j - 1].value(st.t);
            let (sl, sr) = st.s.interface_traces(j);
            let (il, ir) = st.i.interface_traces(j);
            let (rl, rr) = st.r.interface_traces(j);
            v.s = v.s.max((sr - (1.0 - e) * sl).abs());
            v.i = v.i.max((ir - il).abs());
            v.r = v.r.max((rr - (rl + e * sl)).abs());
            v.total = v.total.max(((sr + ir + rr) - (sl + il + rl)).abs());
        }
    }
    Ok(v)
}

/// Restart relations of a time-triggered run, nodewise.
pub fn time_jump_violation(traj: &Trajectory, policy: &Policy) -> Result<JumpViolation> {
    let Policy::TimeTriggered { times, nu } = policy else {
        return Err(Error::Control("time-triggered policy required".into()));
    };
    if traj.pre_jump.len() != times.len() {
        return Err(Error::Control("missing pre-jump snapshot".into()));
    }
    let g = &traj.grid;
    let mut v = JumpViolation::default();
    for (k, pre) in traj.pre_jump.iter().enumerate() {
        let n = mesh_index(times[k], g.cells_per_unit_age()).unwrap();
        let post = &traj.states[n];
        for j in 0..g.segment_count() {
            for m in 0..g.segment_nodes(j) {
                let c = nu[k].value(g.node_age(j, m));
                let (s0, i0, r0) = (pre.s.segment(j)[m], pre.i.segment(j)[m], pre.r.segment(j)[m]);
                let (s1, i1, r1) =
                    (post.s.segment(j)[m], post.i.segment(j)[m], post.r.segment(j)[m]);
                v.s = v.s.max((s1 - (1.0 - c) * s0).abs());
                v.i = v.i.max((i1 - i0).abs());
                v.r = v.r.max((r1 - (r0 + c * s0)).abs());
                v.total = v.total.max(((s1 + i1 + r1) - (s0 + i0 + r0)).abs());
            }
        }
    }
    Ok(v)
}

/// `int (S+I+R)(t) <= int (S+I+R)(0) + int_0^t (S_b+I_b+R_b) + slack * n` at step `n`.
pub fn check_population_bound(
    sc: &Scenario,
    traj: &Trajectory,
    slack_per_step: f64,
) -> Vec<InequalityReport> {
    let dt = traj.grid.dt();
    let m0 = traj.states[0].population();
    traj.states
        .iter()
        .enumerate()
        .map(|(n, st)| {
            let rhs = m0 + sc.inflow_mass(st.t, dt) + slack_per_step * n as f64;
            InequalityReport::new("population", st.population(), rhs, 0.0, 0.0).at(st.t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub resolutions: Vec<usize>,
    pub reference: usize,
    /// Largest summed L1 error over the coarse output times.
    pub errors: Vec<f64>,
    /// `errors[l] / errors[l + 1]`.
    pub ratios: Vec<f64>,
}

fn state_distance(a: &SirState, b: &SirState, factor: usize) -> Result<f64> {
    let mut d = 0.0;
    for (x, y) in a.fields().into_iter().zip(b.fields()) {
        d += x.l1_distance(&y.coarsen(factor)?)?;
    }
    Ok(d)
}

/// Runs `levels` meshes starting at `sc.cells_per_unit_age`, each twice as fine
/// as the previous, against a reference `reference_factor` times finer than
/// the finest.
pub fn convergence_study(
    sc: &Scenario,
    levels: usize,
    reference_factor: usize,
) -> Result<ConvergenceStudy> {
    let k0 = sc.cells_per_unit_age;
    let resolutions: Vec<usize> = (0..levels).map(|l| k0 << l).collect();
    let reference = resolutions.last().copied().unwrap_or(k0) * reference_factor;
    let fine = simulate(&sc.with_resolution(reference))?;
    if !fine.is_complete() {
        return Err(Error::Precondition("reference run did not reach the horizon".into()));
    }
    let mut errors = Vec::with_capacity(levels);
    for &k in &resolutions {
        let run = simulate(&sc.with_resolution(k))?;
        let factor = reference / k;
        let mut e = 0.0f64;
        for (n, st) in run.states.iter().enumerate() {
            e = e.max(state_distance(st, &fine.states[n * factor], factor)?);
        }
        errors.push(e);
    }
    let ratios = errors.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(ConvergenceStudy { resolutions, reference, errors, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_sides() {
        let p = PiecewiseConstant::bins(0.0, 2.0, vec![0.1, 0.7]).unwrap();
        assert_eq!(p.value(1.0), 0.7);
        assert_eq!(p.value_left(1.0), 0.1);
        assert_eq!(p.value(5.0), 0.7);
    }

    #[test]
    fn curve_interpolates_and_clamps() {
        let c = Curve::new(vec![0.0, 2.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(c.at(1.0), 2.0);
        assert_eq!(c.at(-1.0), 1.0);
        assert_eq!(c.at(9.0), 3.0);
    }

    #[test]
    fn tabulated_kernel_is_bilinear() {
        let k = Kernel {
            form: KernelForm::Tabulated {
                ages: vec![0.0, 1.0],
                values: vec![vec![0.0, 1.0], vec![2.0, 3.0]],
            },
            lambda_inf: None,
            lambda_l: None,
        };
        assert!((k.at(0.5, 0.5) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn jump_arithmetic() {
        let grid = Grid::uniform(4.0, 2, 0.0).unwrap();
        let st = SirState {
            t: 0.0,
            s: GridFunction::from_fn(&grid, |_| 4.0),
            i: GridFunction::from_fn(&grid, |_| 1.0),
            r: GridFunction::from_fn(&grid, |_| 0.5),
        };
        let nu = PiecewiseConstant::new(vec![2.0, 3.0], vec![0.0, 1.0, 0.0]).unwrap();
        let out = apply_time_jump(&st, &nu, &grid);
        assert_eq!(out.s.segment(0)[4], 0.0);
        assert_eq!(out.r.segment(0)[5], 4.5);
        assert_eq!(out.s.segment(0)[6], 4.0);
    }

    #[test]
    fn negative_rate_flags_eligibility() {
        let mut sc = Scenario::zero(4.0, 4, 1.0);
        sc.rates.d_s = RateFn::Constant(-0.1);
        let r = validate_scenario(&sc);
        assert!(!r.is_valid());
        assert!(!r.neg_eligible);
        assert!(!r.warnings.is_empty());
        assert!(matches!(simulate(&sc), Err(Error::Scenario(_))));
        sc.allow_signed_rates = true;
        assert!(validate_scenario(&sc).is_valid());
        assert!(simulate(&sc).is_ok());
    }

    #[test]
    fn oversized_kernel_is_located() {
        let mut sc = Scenario::zero(4.0, 4, 1.0);
        sc.kernel = Kernel { form: KernelForm::Constant(1.2), lambda_inf: Some(1.0), lambda_l: None };
        let r = validate_scenario(&sc);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].what, "Lambda_inf");
    }
}
