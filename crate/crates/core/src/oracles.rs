//! Closed-form reference problems.

use std::sync::Arc;

use crate::coupled_ibvp::{
    solve_global, ComponentSpec, CouplingTerm, DataInflow, NonlocalOperator, Outcome,
    SolverOptions, Structure, SystemConstants, SystemSpec,
};
use crate::error::Result;
use crate::grid::{mesh_index, trapezoid, Grid, GridFunction};
use crate::scalar_renewal::{solve_scalar, BoundaryFlux, Coefficients, Field, ScalarFn, Speed};

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Problem {
    Scalar { speed: Speed, rate: Field, source: Field, inflow: TimeFn },
    /// One component, `d_t u + d_x u = (int u) u`.
    SelfExciting { inflow: TimeFn },
}

#[derive(Clone)]
pub struct AnalyticCase {
    pub name: String,
    pub exact: ScalarFn,
    /// The closed form is valid for `t < valid_until`.
    pub valid_until: f64,
    pub problem: Problem,
}

/// `d_X`-free total mass, used as the nonlocal operator of the self-exciting case.
pub struct TotalMass {
    pub h: f64,
}

impl NonlocalOperator for TotalMass {
    fn apply(&self, w: &[&[f64]], out: &mut [f64]) {
        let m = trapezoid(w[0], self.h);
        out.iter_mut().for_each(|o| *o = m);
    }
}

fn datum_fn(exact: &ScalarFn) -> impl Fn(f64) -> f64 + '_ {
    move |x| exact(0.0, x)
}

impl AnalyticCase {
    pub fn datum(&self, grid: &Grid) -> GridFunction {
        GridFunction::from_fn(grid, datum_fn(&self.exact))
    }

    pub fn exact_profile(&self, grid: &Grid, t: f64) -> GridFunction {
        GridFunction::from_fn(grid, |x| (self.exact)(t, x))
    }

    /// Coupled spec on `[0, age_max]` for the self-exciting problem.
    pub fn system(&self, age_max: f64, cells_per_unit_age: usize) -> Option<SystemSpec> {
        let Problem::SelfExciting { inflow } = &self.problem else {
            return None;
        };
        let cells = mesh_index(age_max, cells_per_unit_age)?;
        let h = 1.0 / cells_per_unit_age as f64;
        Some(SystemSpec {
            cells_per_unit_age,
            components: vec![ComponentSpec {
                name: "u".into(),
                cells,
                speed: Speed::Unit,
                trace_node: cells,
            }],
            operators: vec![Arc::new(TotalMass { h })],
            couplings: vec![CouplingTerm { row: 0, col: 0, scale: 1.0, operator: 0 }],
            reactions: vec![],
            boundaries: vec![Arc::new(DataInflow(inflow.clone()))],
            constants: SystemConstants {
                a_l: 1.0,
                a_1: 1.0,
                a_2: 1.0,
                b_l: 0.0,
                b_1: 0.0,
                b_inf: 0.0,
                c_l: 0.0,
                c_inf: 0.0,
                g_lower: 1.0,
                g1: 0.0,
                g_inf: 1.0,
            },
            declared: Structure { pos: true, neg: false, eq: true },
        })
    }

    /// Runs the case on `[0, age_max]` up to `t_end` and returns the profiles.
    pub fn run(
        &self,
        age_max: f64,
        cells_per_unit_age: usize,
        t_end: f64,
        opts: &SolverOptions,
    ) -> Result<OracleRun> {
        let grid = Grid::uniform(age_max, cells_per_unit_age, t_end)?;
        let u_o = self.datum(&grid);
        let dt = grid.dt();
        match &self.problem {
            Problem::Scalar { speed, rate, source, inflow } => {
                let steps = grid.steps();
                let c = Coefficients {
                    speed: speed.clone(),
                    rate: rate.clone(),
                    source: source.clone(),
                    boundary: BoundaryFlux::from_fn(0.0, dt, steps, |t| inflow(t)),
                    constants: None,
                };
                let sol = solve_scalar(&c, &u_o, &grid, 0.0, t_end)?;
                Ok(OracleRun {
                    times: (0..=steps).map(|n| sol.time(n)).collect(),
                    profiles: sol.profiles,
                    outcome: Outcome::Completed,
                    grid,
                })
            }
            Problem::SelfExciting { .. } => {
                let spec = self.system(age_max, cells_per_unit_age).unwrap();
                let start = vec![u_o.into_segments().remove(0)];
                let sol = solve_global(&spec, &start, 0.0, t_end, opts)?;
                let profiles =
                    sol.states.iter().map(|s| GridFunction::single(dt, s[0].clone())).collect();
                Ok(OracleRun { times: sol.times, profiles, outcome: sol.outcome, grid })
            }
        }
    }
}

pub struct OracleRun {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub profiles: Vec<GridFunction>,
    pub outcome: Outcome,
}

impl OracleRun {
    pub fn at(&self, t: f64) -> Option<&GridFunction> {
        let n = mesh_index(t - self.times[0], self.grid.cells_per_unit_age())?;
        self.profiles.get(n)
    }

    /// Largest nodal error against the closed form over all stored times.
    pub fn max_error(&self, case: &AnalyticCase) -> f64 {
        self.times
            .iter()
            .zip(&self.profiles)
            .map(|(&t, p)| {
                p.segment(0)
                    .iter()
                    .enumerate()
                    .map(|(m, v)| (v - (case.exact)(t, m as f64 * p.spacing())).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

fn scalar(
    name: &str,
    exact: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    speed: Speed,
    rate: Field,
    source: Field,
    inflow: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> AnalyticCase {
    AnalyticCase {
        name: name.into(),
        exact: Arc::new(exact),
        valid_until: f64::INFINITY,
        problem: Problem::Scalar { speed, rate, source, inflow: Arc::new(inflow) },
    }
}

/// `u(t, x) = u_o(x - t)` for `x >= t`, zero behind the front.
pub fn transport_case(u_o: TimeFn) -> AnalyticCase {
    decay_case(0.0, u_o)
}

/// `u(t, x) = u_o(x - t) e^{-mu t}` for `x >= t`.
pub fn decay_case(mu: f64, u_o: TimeFn) -> AnalyticCase {
    let name = if mu == 0.0 { "transport" } else { "decay" };
    scalar(
        name,
        move |t, x| if x >= t { u_o(x - t) * (-mu * t).exp() } else { 0.0 },
        Speed::Unit,
        Field::Constant(mu),
        Field::Zero,
        |_| 0.0,
    )
}

/// Stationary profile `c e^{-mu x}` fed by the constant inflow `c`.
pub fn constant_inflow_case(c: f64, mu: f64) -> AnalyticCase {
    scalar(
        "constant_inflow",
        move |_, x| c * (-mu * x).exp(),
        Speed::Unit,
        Field::Constant(mu),
        Field::Zero,
        move |_| c,
    )
}

/// Constant source from zero data: `u(t, x) = c min(t, x)`.
pub fn constant_source_case(c: f64) -> AnalyticCase {
    scalar(
        "constant_source",
        move |t, x| c * t.min(x),
        Speed::Unit,
        Field::Zero,
        Field::Constant(c),
        |_| 0.0,
    )
}

/// Speed `g = 1 + x/10`, zero inflow. Along characteristics
/// `x + 10 = (x_o + 10) e^{t/10}` and `u g` is transported.
pub fn variable_speed_case(u_o: TimeFn) -> AnalyticCase {
    let speed = Speed::Variable {
        g: Arc::new(|_, x| 1.0 + x / 10.0),
        dg_dx: Arc::new(|_, _| 0.1),
    };
    scalar(
        "variable_speed",
        move |t, x| {
            let foot = (x + 10.0) * (-t / 10.0).exp() - 10.0;
            if foot >= 0.0 {
                u_o(foot) * (-t / 10.0).exp()
            } else {
                0.0
            }
        },
        speed,
        Field::Zero,
        Field::Zero,
        |_| 0.0,
    )
}

/// `d_t u + d_x u = (int u) u`, `u_o = e^{-x}`, exact solution
/// `e^{t-x} / (2 - e^t)` up to `ln 2`. The inflow is the closed form's own
/// boundary value `e^t / (2 - e^t)`, infinite from `ln 2` on.
pub fn blowup_case() -> AnalyticCase {
    let exact = |t: f64, x: f64| (t - x).exp() / (2.0 - t.exp());
    AnalyticCase {
        name: "blowup".into(),
        exact: Arc::new(exact),
        valid_until: std::f64::consts::LN_2,
        problem: Problem::SelfExciting {
            inflow: Arc::new(|t| {
                if t < std::f64::consts::LN_2 {
                    t.exp() / (2.0 - t.exp())
                } else {
                    f64::INFINITY
                }
            }),
        },
    }
}

/// Same equation and datum with zero inflow: `u = e^{t-x} / (1 - t)` ahead of
/// the front, zero behind it; the mass `1 / (1 - t)` blows up at `t = 1`.
pub fn blowup_zero_inflow_case() -> AnalyticCase {
    AnalyticCase {
        name: "blowup_zero_inflow".into(),
        exact: Arc::new(|t, x| if x >= t { (t - x).exp() / (1.0 - t) } else { 0.0 }),
        valid_until: 1.0,
        problem: Problem::SelfExciting { inflow: Arc::new(|_| 0.0) },
    }
}

/// Mass of [`blowup_case`] on `[0, inf)`.
pub fn blowup_mass(t: f64) -> f64 {
    t.exp() / (2.0 - t.exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn check(name: &str, error: f64, tolerance: f64) -> OracleCheck {
    OracleCheck { name: name.into(), error, tolerance, passed: error <= tolerance }
}

fn indicator(lo: f64, hi: f64) -> TimeFn {
    let slack = 1e-9;
    Arc::new(move |x| if (lo - slack..=hi + slack).contains(&x) { 1.0 } else { 0.0 })
}

fn relative_error(computed: &GridFunction, exact: &GridFunction) -> f64 {
    let scale = exact.sup_norm().max(f64::MIN_POSITIVE);
    computed.zip_with(exact, |a, b| a - b).map(|d| d.sup_norm() / scale).unwrap_or(f64::INFINITY)
}

/// Runs every oracle at a moderate resolution.
pub fn validate(opts: &SolverOptions) -> Result<Vec<OracleCheck>> {
    let mut out = Vec::new();

    let c = transport_case(indicator(1.0, 2.0));
    out.push(check("transport", c.run(6.0, 40, 2.0, opts)?.max_error(&c), 1e-12));

    let bump: TimeFn = Arc::new(|x| {
        if (1.0..=3.0).contains(&x) {
            (std::f64::consts::FRAC_PI_2 * (x - 1.0)).sin().powi(2)
        } else {
            0.0
        }
    });
    let c = decay_case(1.0, bump.clone());
    out.push(check("decay", c.run(8.0, 200, 2.0, opts)?.max_error(&c), 1e-6));

    let c = constant_inflow_case(2.0, 0.5);
    out.push(check("constant_inflow", c.run(6.0, 100, 2.0, opts)?.max_error(&c), 1e-6));

    let c = constant_source_case(1.5);
    out.push(check("constant_source", c.run(4.0, 50, 2.0, opts)?.max_error(&c), 1e-12));

    let c = variable_speed_case(bump);
    out.push(check("variable_speed", c.run(8.0, 100, 2.0, opts)?.max_error(&c), 1e-2));

    let c = blowup_case();
    let run = c.run(20.0, 100, 0.5, opts)?;
    let g = &run.grid;
    out.push(check(
        "blowup_accuracy",
        relative_error(run.at(0.5).unwrap(), &c.exact_profile(g, 0.5)),
        1e-3,
    ));
    let run = c.run(20.0, 100, 0.75, opts)?;
    let time = match run.outcome {
        Outcome::BlowUp { time, .. } => time,
        Outcome::Completed => f64::INFINITY,
    };
    out.push(check("blowup_detection", (time - 0.68).abs(), 0.02));

    let c = blowup_zero_inflow_case();
    let run = c.run(20.0, 100, 0.5, opts)?;
    out.push(check(
        "blowup_zero_inflow",
        relative_error(run.at(0.5).unwrap(), &c.exact_profile(&run.grid, 0.5)),
        1e-2,
    ));
    Ok(out)
}
