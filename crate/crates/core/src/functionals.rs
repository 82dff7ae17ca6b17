//! Campaign cost and infection effect evaluated on a trajectory.
//!
//! Controls are step functions, so each quadrature interval uses the one-sided
//! control values on that interval rather than the values at the nodes.

use crate::error::{Error, Result};
use crate::grid::{mesh_index, trapezoid, GridFunction};
use crate::scalar_renewal::ScalarFn;
use crate::sir_model::{PiecewiseConstant, Policy, SirState, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostVariant {
    /// `sum_i int eta_i(t) S(t, a_i-) dt`.
    AgeSusceptible,
    /// `sum_i int eta_i(t) (S + I + R)(t, a_i-) dt`.
    AgeWhole,
    /// `sum_k int nu_k(a) S(t_k-, a) da`.
    TimeSusceptible,
    /// `sum_k int nu_k(a) (S + I + R)(t_k-, a) da`.
    TimeWhole,
}

impl CostVariant {
    pub fn evaluate(self, traj: &Trajectory, policy: &Policy) -> Result<f64> {
        match self {
            CostVariant::AgeSusceptible => cost_age_susceptible(traj, policy),
            CostVariant::AgeWhole => cost_age_whole(traj, policy),
            CostVariant::TimeSusceptible => cost_time_susceptible(traj, policy),
            CostVariant::TimeWhole => cost_time_whole(traj, policy),
        }
    }

    pub fn is_age_triggered(self) -> bool {
        matches!(self, CostVariant::AgeSusceptible | CostVariant::AgeWhole)
    }

    pub fn name(self) -> &'static str {
        match self {
            CostVariant::AgeSusceptible => "age_susceptible",
            CostVariant::AgeWhole => "age_whole",
            CostVariant::TimeSusceptible => "time_susceptible",
            CostVariant::TimeWhole => "time_whole",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Self::AgeSusceptible, Self::AgeWhole, Self::TimeSusceptible, Self::TimeWhole]
            .into_iter()
            .find(|v| v.name() == s)
    }
}

/// `int_I eta(t) y(t) dt` for nodal `y`, with one-sided `eta` per interval.
fn controlled_time_integral(eta: &PiecewiseConstant, t0: f64, dt: f64, y: &[f64]) -> f64 {
    (1..y.len())
        .map(|n| {
            let a = t0 + (n - 1) as f64 * dt;
            let b = t0 + n as f64 * dt;
            0.5 * dt * (eta.value(a) * y[n - 1] + eta.value_left(b) * y[n])
        })
        .sum()
}

fn age_cost(traj: &Trajectory, policy: &Policy, whole: bool) -> Result<f64> {
    let Policy::AgeTriggered { eta, .. } = policy else {
        return Err(Error::Control("age-triggered cost needs an age-triggered policy".into()));
    };
    if traj.grid.segment_count() != eta.len() + 1 {
        return Err(Error::Control(format!(
            "policy has {} vaccination ages, trajectory has {} interfaces",
            eta.len(),
            traj.grid.segment_count() - 1
        )));
    }
    let dt = traj.grid.dt();
    let t0 = traj.states[0].t;
    let mut total = 0.0;
    for (j, e) in eta.iter().enumerate() {
        let trace: Vec<f64> = traj
            .states
            .iter()
            .map(|st| {
                let left = |f: &GridFunction| f.interface_traces(j + 1).0;
                if whole {
                    left(&st.s) + left(&st.i) + left(&st.r)
                } else {
                    left(&st.s)
                }
            })
            .collect();
        total += controlled_time_integral(e, t0, dt, &trace);
    }
    Ok(total)
}

pub fn cost_age_susceptible(traj: &Trajectory, policy: &Policy) -> Result<f64> {
    age_cost(traj, policy, false)
}

pub fn cost_age_whole(traj: &Trajectory, policy: &Policy) -> Result<f64> {
    age_cost(traj, policy, true)
}

/// `int nu(a) y(a) da` per segment, with one-sided `nu` per cell.
fn controlled_age_integral(nu: &PiecewiseConstant, state: &SirState, whole: bool) -> f64 {
    let h = state.s.spacing();
    let mut total = 0.0;
    let mut start = 0.0;
    for j in 0..state.s.segment_count() {
        let s = state.s.segment(j);
        let y: Vec<f64> = if whole {
            (0..s.len()).map(|m| s[m] + state.i.segment(j)[m] + state.r.segment(j)[m]).collect()
        } else {
            s.to_vec()
        };
        for m in 1..y.len() {
            let a = start + (m - 1) as f64 * h;
            let b = start + m as f64 * h;
            total += 0.5 * h * (nu.value(a) * y[m - 1] + nu.value_left(b) * y[m]);
        }
        start += (y.len() - 1) as f64 * h;
    }
    total
}

fn time_cost(traj: &Trajectory, policy: &Policy, whole: bool) -> Result<f64> {
    let Policy::TimeTriggered { times, nu } = policy else {
        return Err(Error::Control("time-triggered cost needs a time-triggered policy".into()));
    };
    if traj.pre_jump.len() != times.len() {
        return Err(Error::Control(format!(
            "missing pre-jump snapshot: {} of {} vaccination times recorded",
            traj.pre_jump.len(),
            times.len()
        )));
    }
    Ok(nu.iter().zip(&traj.pre_jump).map(|(v, st)| controlled_age_integral(v, st, whole)).sum())
}

pub fn cost_time_susceptible(traj: &Trajectory, policy: &Policy) -> Result<f64> {
    time_cost(traj, policy, false)
}

pub fn cost_time_whole(traj: &Trajectory, policy: &Policy) -> Result<f64> {
    time_cost(traj, policy, true)
}

#[derive(Clone, Default)]
pub enum EffectWeight {
    #[default]
    Uniform,
    /// Indicator of `start <= t <= end`, integrated exactly against the
    /// piecewise linear time interpolant.
    TimeWindow { start: f64, end: f64 },
    Function(ScalarFn),
}

impl std::fmt::Debug for EffectWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EffectWeight::Uniform => write!(f, "Uniform"),
            EffectWeight::TimeWindow { start, end } => write!(f, "TimeWindow({start}, {end})"),
            EffectWeight::Function(_) => write!(f, "Function"),
        }
    }
}

fn infected_mass(st: &SirState) -> f64 {
    st.i.integral()
}

/// Integral over `[a, b]` of the linear interpolant of `y` on nodes `t0 + n dt`.
fn clipped_integral(y: &[f64], t0: f64, dt: f64, a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    for n in 1..y.len() {
        let lo = t0 + (n - 1) as f64 * dt;
        let hi = lo + dt;
        let (l, r) = (a.max(lo), b.min(hi));
        if r <= l {
            continue;
        }
        let at = |t: f64| y[n - 1] + (y[n] - y[n - 1]) * (t - lo) / dt;
        total += 0.5 * (r - l) * (at(l) + at(r));
    }
    total
}

/// `int int phi(t, a) I(t, a) da dt`.
pub fn effect(traj: &Trajectory, weight: &EffectWeight) -> Result<f64> {
    if !traj.is_complete() {
        return Err(Error::Precondition("effect needs a trajectory reaching the horizon".into()));
    }
    let dt = traj.grid.dt();
    let t0 = traj.states[0].t;
    match weight {
        EffectWeight::Uniform => {
            let y: Vec<f64> = traj.states.iter().map(infected_mass).collect();
            Ok(trapezoid(&y, dt))
        }
        EffectWeight::TimeWindow { start, end } => {
            let y: Vec<f64> = traj.states.iter().map(infected_mass).collect();
            Ok(clipped_integral(&y, t0, dt, *start, *end))
        }
        EffectWeight::Function(phi) => {
            let g = &traj.grid;
            let y: Vec<f64> = traj
                .states
                .iter()
                .map(|st| {
                    let w = GridFunction::from_segment_fn(g, |_, a| phi(st.t, a));
                    w.zip_with(&st.i, |p, i| p * i).map(|f| f.integral()).unwrap_or(f64::NAN)
                })
                .collect();
            Ok(trapezoid(&y, dt))
        }
    }
}

/// Index of the output time `t`, if it is one.
pub fn time_index(traj: &Trajectory, t: f64) -> Option<usize> {
    mesh_index(t - traj.states[0].t, traj.grid.cells_per_unit_age())
        .filter(|&n| n < traj.states.len())
}
