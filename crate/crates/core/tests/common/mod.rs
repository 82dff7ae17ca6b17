#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use renewal_sir::cli_io::ScenarioFile;
use renewal_sir::functionals::{CostVariant, EffectWeight};
use renewal_sir::grid::{Grid, GridFunction};
use renewal_sir::optimizer::{evaluate, Direction, OptimizationProblem};
use renewal_sir::scalar_renewal::{BoundaryFlux, Coefficients, Field, ScalarConstants, Speed};
use renewal_sir::sir_model::{
    Curve, Kernel, KernelForm, PiecewiseConstant, Policy, RateFn, Scenario,
};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn reference_scenario() -> Scenario {
    ScenarioFile::load(&scenario_path("reference.toml")).unwrap().resolve().unwrap().scenario
}

pub fn curve(xs: &[f64], ys: &[f64]) -> Curve {
    Curve::new(xs.to_vec(), ys.to_vec()).unwrap()
}

/// One vaccination age, two time bins.
pub fn toy_scenario() -> Scenario {
    let mut sc = Scenario::zero(6.0, 10, 2.0);
    sc.kernel = Kernel::constant(0.4);
    sc.rates.d_s = RateFn::Constant(0.02);
    sc.rates.d_i = RateFn::Constant(0.05);
    sc.rates.d_r = RateFn::Constant(0.02);
    sc.rates.r_i = RateFn::Constant(0.5);
    sc.s_o = curve(&[0.0, 4.0, 5.5], &[1.0, 1.0, 0.0]);
    sc.i_o = curve(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.0, 0.2, 0.0]);
    sc.s_b = Curve::constant(1.0);
    sc.policy =
        Policy::AgeTriggered { ages: vec![1.0], eta: vec![PiecewiseConstant::constant(0.0)] };
    sc
}

pub fn toy_problem(min_cost: bool) -> OptimizationProblem {
    let mut p = OptimizationProblem {
        scenario: toy_scenario(),
        direction: Direction::MinCost { effect_cap: 0.0 },
        cost: CostVariant::AgeSusceptible,
        weight: EffectWeight::Uniform,
        bins: 2,
    };
    let none = evaluate(&p, &[0.0, 0.0]).unwrap();
    let full = evaluate(&p, &[1.0, 1.0]).unwrap();
    p.direction = if min_cost {
        Direction::MinCost { effect_cap: 0.5 * (none.effect + full.effect) }
    } else {
        Direction::MinEffect { cost_cap: 0.4 * full.cost }
    };
    p
}

fn positive_curve(rng: &mut ChaCha8Rng, xs: &[f64], lo: f64, hi: f64) -> Curve {
    let ys: Vec<f64> = xs.iter().map(|_| rng.gen_range(lo..hi)).collect();
    Curve::new(xs.to_vec(), ys).unwrap()
}

/// Random SIR scenario with nonnegative rates (all mortalities at least 0.01)
/// and data compatible at the corner.
pub fn random_scenario(seed: u64, horizon: f64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sc = Scenario::zero(10.0, 10, horizon);
    let knots = [0.0, 5.0, 10.0];
    sc.kernel = match rng.gen_range(0..3) {
        0 => Kernel::constant(rng.gen_range(0.05..0.4)),
        1 => Kernel {
            form: KernelForm::Separable {
                p: positive_curve(&mut rng, &knots, 0.02, 0.3),
                q: positive_curve(&mut rng, &knots, 0.2, 1.0),
            },
            lambda_inf: None,
            lambda_l: None,
        },
        _ => Kernel {
            form: KernelForm::Tabulated {
                ages: knots.to_vec(),
                values: (0..3).map(|_| (0..3).map(|_| rng.gen_range(0.0..0.3)).collect()).collect(),
            },
            lambda_inf: None,
            lambda_l: None,
        },
    };
    let mortality = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.5) {
            RateFn::Constant(rng.gen_range(0.01..0.1))
        } else {
            RateFn::Age(positive_curve(rng, &knots, 0.01, 0.1))
        }
    };
    sc.rates.d_s = mortality(&mut rng);
    sc.rates.d_i = mortality(&mut rng);
    sc.rates.d_r = mortality(&mut rng);
    sc.rates.r_i = RateFn::Age(positive_curve(&mut rng, &knots, 0.1, 1.0));

    let sb = rng.gen_range(0.5..1.5);
    sc.s_b = Curve::constant(sb);
    sc.s_o = curve(&[0.0, 3.0, 6.0, 8.0], &[sb, rng.gen_range(0.3..1.5), rng.gen_range(0.1..1.0), 0.0]);
    let c = rng.gen_range(1.5..5.0);
    sc.i_o = curve(&[c - 1.0, c, c + 1.0], &[0.0, rng.gen_range(0.05..0.5), 0.0]);
    sc.r_o = curve(&[0.0, 4.0, 7.0], &[0.0, rng.gen_range(0.0..0.3), 0.0]);

    sc.policy = match rng.gen_range(0..3) {
        0 => Policy::None,
        1 => {
            let n = rng.gen_range(1..=2);
            let ages: Vec<f64> = (0..n).map(|j| (2 + 3 * j + rng.gen_range(0..2)) as f64).collect();
            let eta = ages
                .iter()
                .map(|_| {
                    PiecewiseConstant::bins(0.0, horizon, vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
                        .unwrap()
                })
                .collect();
            Policy::AgeTriggered { ages, eta }
        }
        _ => {
            let times = vec![1.0, (horizon * 6.0).round() / 10.0];
            let nu = times
                .iter()
                .map(|_| {
                    PiecewiseConstant::bins(0.0, 10.0, vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.5)])
                        .unwrap()
                })
                .collect();
            Policy::TimeTriggered { times, nu }
        }
    };
    sc
}

/// A scalar problem with its declared constants.
pub struct ScalarProblem {
    pub coeffs: Coefficients,
    pub datum: GridFunction,
}

pub struct ScalarParams {
    pub variable_speed: f64,
    pub m0: f64,
    pub m1: f64,
    pub f0: f64,
    pub b0: f64,
    pub b1: f64,
    pub datum: [f64; 3],
}

impl ScalarParams {
    pub fn random(rng: &mut ChaCha8Rng, variable: bool) -> Self {
        ScalarParams {
            variable_speed: if variable { rng.gen_range(0.1..0.5) } else { 0.0 },
            m0: rng.gen_range(0.0..0.5),
            m1: rng.gen_range(0.0..0.5),
            f0: rng.gen_range(0.0..0.5),
            b0: rng.gen_range(0.2..1.0),
            b1: rng.gen_range(0.0..0.2),
            datum: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
        }
    }
}

pub const SCALAR_AGE_MAX: f64 = 8.0;

pub fn scalar_grid(t_end: f64) -> Grid {
    Grid::uniform(SCALAR_AGE_MAX, 20, t_end).unwrap()
}

fn bump(x: f64) -> f64 {
    if (1.0..=3.0).contains(&x) {
        (std::f64::consts::FRAC_PI_2 * (x - 1.0)).sin().powi(2)
    } else {
        0.0
    }
}

/// Rate `(m0 + m1 e^-x)(1 + sin(t)/2)`, source `f0 (1 + cos(t)/2) bump(x)`,
/// inflow `b0 + b1 sin(3t)`, speed `1 + s x / age_max`.
pub fn scalar_problem(p: &ScalarParams, grid: &Grid, speed_override: Option<Speed>) -> ScalarProblem {
    let s = p.variable_speed;
    let speed = speed_override.unwrap_or_else(|| {
        if s == 0.0 {
            Speed::Unit
        } else {
            Speed::Variable {
                g: Arc::new(move |_, x| 1.0 + s * x / SCALAR_AGE_MAX),
                dg_dx: Arc::new(move |_, _| s / SCALAR_AGE_MAX),
            }
        }
    });
    let (m0, m1, f0) = (p.m0, p.m1, p.f0);
    let (b0, b1) = (p.b0, p.b1);
    let constants = ScalarConstants {
        g_lower: 1.0,
        g_upper: 1.0 + s,
        g1: s / SCALAR_AGE_MAX,
        g_inf: s,
        m: 1.5 * (m0 + 2.0 * m1),
        f1: 1.5 * f0 * 1.01,
        f_inf: 1.5 * f0 * 3.0,
    };
    let d = p.datum;
    let datum = GridFunction::from_fn(grid, |x| {
        let knots = [(0.0, b0), (2.0, d[0]), (4.0, d[1]), (5.0, d[2]), (6.0, 0.0)];
        piecewise(&knots, x)
    });
    ScalarProblem {
        coeffs: Coefficients {
            speed,
            rate: Field::function(move |t, x| (m0 + m1 * (-x).exp()) * (1.0 + 0.5 * t.sin())),
            source: Field::function(move |t, x| f0 * (1.0 + 0.5 * t.cos()) * bump(x)),
            boundary: BoundaryFlux::from_fn(0.0, grid.dt(), grid.steps(), |t| b0 + b1 * (3.0 * t).sin()),
            constants: Some(constants),
        },
        datum,
    }
}

fn piecewise(knots: &[(f64, f64)], x: f64) -> f64 {
    if x <= knots[0].0 {
        return knots[0].1;
    }
    for w in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    knots.last().unwrap().1
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
