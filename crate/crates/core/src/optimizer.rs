//! Constrained campaign design by box-projected pattern search on an exact
//! penalty.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functionals::{effect, CostVariant, EffectWeight};
use crate::sir_model::{simulate, PiecewiseConstant, Policy, Scenario};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    /// Minimize cost subject to `effect <= cap`.
    MinCost { effect_cap: f64 },
    /// Minimize effect subject to `cost <= cap`.
    MinEffect { cost_cap: f64 },
}

/// Controls are `bins` equal steps per vaccination age (over `[0, horizon]`)
/// or per vaccination time (over `[0, age_max]`), stored age- or time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLayout {
    pub age_triggered: bool,
    pub anchors: Vec<f64>,
    pub bins: usize,
    pub span: f64,
}

impl ControlLayout {
    pub fn from_scenario(sc: &Scenario, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Control("at least one control bin is required".into()));
        }
        match &sc.policy {
            Policy::AgeTriggered { ages, .. } => Ok(ControlLayout {
                age_triggered: true,
                anchors: ages.clone(),
                bins,
                span: sc.horizon,
            }),
            Policy::TimeTriggered { times, .. } => Ok(ControlLayout {
                age_triggered: false,
                anchors: times.clone(),
                bins,
                span: sc.age_max,
            }),
            Policy::None => Err(Error::Control("optimization needs vaccination ages or times".into())),
        }
    }

    pub fn dim(&self) -> usize {
        self.anchors.len() * self.bins
    }

    pub fn policy(&self, x: &[f64]) -> Result<Policy> {
        if x.len() != self.dim() {
            return Err(Error::Control(format!("expected {} controls, got {}", self.dim(), x.len())));
        }
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Control(format!("control value {v} outside [0, 1]")));
        }
        let steps = x
            .chunks(self.bins)
            .map(|c| PiecewiseConstant::bins(0.0, self.span, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(if self.age_triggered {
            Policy::AgeTriggered { ages: self.anchors.clone(), eta: steps }
        } else {
            Policy::TimeTriggered { times: self.anchors.clone(), nu: steps }
        })
    }
}

#[derive(Clone)]
pub struct OptimizationProblem {
    /// Template; its policy fixes the vaccination ages or times.
    pub scenario: Scenario,
    pub direction: Direction,
    pub cost: CostVariant,
    pub weight: EffectWeight,
    pub bins: usize,
}

impl OptimizationProblem {
    pub fn layout(&self) -> Result<ControlLayout> {
        let layout = ControlLayout::from_scenario(&self.scenario, self.bins)?;
        if layout.age_triggered != self.cost.is_age_triggered() {
            return Err(Error::Control(format!(
                "cost {} does not match the policy variant",
                self.cost.name()
            )));
        }
        let cap = match self.direction {
            Direction::MinCost { effect_cap } => effect_cap,
            Direction::MinEffect { cost_cap } => cost_cap,
        };
        if !(cap >= 0.0) {
            return Err(Error::Control(format!("cap must be nonnegative, got {cap}")));
        }
        Ok(layout)
    }

    fn primary(&self, cost: f64, effect: f64) -> f64 {
        match self.direction {
            Direction::MinCost { .. } => cost,
            Direction::MinEffect { .. } => effect,
        }
    }

    fn violation(&self, cost: f64, effect: f64) -> f64 {
        match self.direction {
            Direction::MinCost { effect_cap } => (effect - effect_cap).max(0.0),
            Direction::MinEffect { cost_cap } => (cost - cost_cap).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cost: f64,
    pub effect: f64,
}

/// Simulates with control `x` and evaluates the chosen cost and the effect.
pub fn evaluate(problem: &OptimizationProblem, x: &[f64]) -> Result<Evaluation> {
    let layout = problem.layout()?;
    let sc = problem.scenario.with_policy(layout.policy(x)?);
    let traj = simulate(&sc)?;
    if !traj.is_complete() {
        return Err(Error::Precondition("simulation stopped before the horizon".into()));
    }
    Ok(Evaluation {
        cost: problem.cost.evaluate(&traj, &sc.policy)?,
        effect: effect(&traj, &problem.weight)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub budget: usize,
    pub seed: u64,
    pub initial_step: f64,
    pub min_step: f64,
    pub restarts: usize,
    pub parallel: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            budget: 500,
            seed: 0,
            initial_step: 0.25,
            min_step: 1e-3,
            restarts: 2,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub x: Vec<f64>,
    /// `None` when the simulation failed.
    pub value: Option<Evaluation>,
    pub primary: f64,
    pub violation: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub x: Vec<f64>,
    pub value: Evaluation,
    pub feasible: bool,
    pub history: Vec<HistoryEntry>,
}

struct Search<'a> {
    problem: &'a OptimizationProblem,
    opts: &'a SearchOptions,
    cache: HashMap<Vec<u64>, usize>,
    history: Vec<HistoryEntry>,
    rho: f64,
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl<'a> Search<'a> {
    fn remaining(&self) -> usize {
        self.opts.budget.saturating_sub(self.history.len())
    }

    fn penalized(&self, i: usize) -> f64 {
        let e = &self.history[i];
        if e.value.is_none() {
            f64::INFINITY
        } else {
            e.primary + self.rho * e.violation
        }
    }

    /// Evaluates the uncached points in order, within the budget. Returns the
    /// history index of every point that has one.
    fn batch(&mut self, points: &[Vec<f64>]) -> Vec<Option<usize>> {
        let mut fresh: Vec<Vec<f64>> = Vec::new();
        for p in points {
            let k = key(p);
            if !self.cache.contains_key(&k) && !fresh.iter().any(|f| key(f) == k) {
                fresh.push(p.clone());
            }
        }
        fresh.truncate(self.remaining());
        let run = |x: &Vec<f64>| evaluate(self.problem, x).ok();
        let values: Vec<Option<Evaluation>> = if self.opts.parallel {
            fresh.par_iter().map(run).collect()
        } else {
            fresh.iter().map(run).collect()
        };
        for (x, value) in fresh.into_iter().zip(values) {
            let (primary, violation) = match value {
                Some(v) => (self.problem.primary(v.cost, v.effect), self.problem.violation(v.cost, v.effect)),
                None => (f64::INFINITY, f64::INFINITY),
            };
            self.cache.insert(key(&x), self.history.len());
            self.history.push(HistoryEntry {
                x,
                value,
                primary,
                violation,
                feasible: value.is_some() && violation <= 0.0,
            });
        }
        points.iter().map(|p| self.cache.get(&key(p)).copied()).collect()
    }

    fn one(&mut self, x: &[f64]) -> Option<usize> {
        self.batch(&[x.to_vec()])[0]
    }

    /// Best strictly improving candidate, in index order on ties.
    fn improve(&mut self, current: usize, points: &[Vec<f64>]) -> Option<usize> {
        let ids = self.batch(points);
        let mut best = current;
        let mut best_f = self.penalized(current);
        for i in ids.into_iter().flatten() {
            let f = self.penalized(i);
            if f < best_f {
                best = i;
                best_f = f;
            }
        }
        (best != current).then_some(best)
    }

    fn best_feasible(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, e) in self.history.iter().enumerate() {
            if e.feasible && best.is_none_or(|b| e.primary < self.history[b].primary) {
                best = Some(i);
            }
        }
        best
    }

    fn least_violating(&self) -> usize {
        let mut best = 0;
        for (i, e) in self.history.iter().enumerate() {
            let b = &self.history[best];
            if (e.violation, e.primary) < (b.violation, b.primary) {
                best = i;
            }
        }
        best
    }

    fn pattern(&mut self, start: usize, mut step: f64, rng: &mut ChaCha8Rng) -> usize {
        let d = self.history[start].x.len();
        let mut current = start;
        while step >= self.opts.min_step && self.remaining() > 0 {
            let x = self.history[current].x.clone();
            let mut order: Vec<usize> = (0..d).collect();
            order.shuffle(rng);
            let mut poll = Vec::with_capacity(2 * d);
            for &i in &order {
                for s in [step, -step] {
                    let mut y = x.clone();
                    y[i] = (y[i] + s).clamp(0.0, 1.0);
                    if y[i] != x[i] {
                        poll.push(y);
                    }
                }
            }
            if let Some(next) = self.improve(current, &poll) {
                current = next;
                continue;
            }
            let mut pairs = Vec::new();
            for a in 0..d {
                for b in a + 1..d {
                    for (sa, sb) in [(step, step), (step, -step), (-step, step), (-step, -step)] {
                        let mut y = x.clone();
                        y[order[a]] = (y[order[a]] + sa).clamp(0.0, 1.0);
                        y[order[b]] = (y[order[b]] + sb).clamp(0.0, 1.0);
                        if y != x {
                            pairs.push(y);
                        }
                    }
                }
            }
            if let Some(next) = self.improve(current, &pairs) {
                current = next;
                continue;
            }
            if self.history[current].violation > 0.0 && self.rho < 1e8 {
                self.rho *= 10.0;
                continue;
            }
            step *= 0.5;
        }
        current
    }

    /// Pushes each coordinate of the best feasible point toward the bound that
    /// lowers the objective, bisecting on feasibility when the bound itself is
    /// infeasible.
    fn polish(&mut self, start: usize) -> usize {
        let mut best = start;
        let d = self.history[start].x.len();
        for i in 0..d {
            for target in [0.0, 1.0] {
                if self.remaining() == 0 {
                    return best;
                }
                let x = self.history[best].x.clone();
                if x[i] == target {
                    continue;
                }
                let mut y = x.clone();
                y[i] = target;
                let Some(end) = self.one(&y) else { return best };
                if self.history[end].primary >= self.history[best].primary
                    || self.history[end].value.is_none()
                {
                    continue;
                }
                if self.history[end].feasible {
                    best = end;
                    continue;
                }
                let (mut lo, mut hi) = (x[i], target);
                while (hi - lo).abs() > 1e-10 && self.remaining() > 0 {
                    let mid = 0.5 * (lo + hi);
                    let mut z = x.clone();
                    z[i] = mid;
                    let Some(k) = self.one(&z) else { break };
                    if self.history[k].feasible {
                        lo = mid;
                        if self.history[k].primary < self.history[best].primary {
                            best = k;
                        }
                    } else {
                        hi = mid;
                    }
                }
            }
        }
        best
    }
}

/// Minimizes the penalized objective from the zero control; see [`SearchOptions`].
pub fn solve(problem: &OptimizationProblem, opts: &SearchOptions) -> Result<SearchResult> {
    let d = problem.layout()?.dim();
    if opts.budget < d + 1 {
        return Err(Error::Control(format!("budget {} is below d + 1 = {}", opts.budget, d + 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut s = Search { problem, opts, cache: HashMap::new(), history: Vec::new(), rho: 1.0 };
    let start = s.one(&vec![0.0; d]).expect("budget admits the first point");
    let mut current = s.pattern(start, opts.initial_step, &mut rng);
    if let Some(f) = s.best_feasible() {
        current = s.polish(f);
    }
    for r in 0..opts.restarts {
        if s.remaining() == 0 {
            break;
        }
        let base = s.best_feasible().unwrap_or(current);
        let radius = opts.initial_step / (2 << r) as f64;
        let y: Vec<f64> = s.history[base]
            .x
            .iter()
            .map(|v| (v + rng.gen_range(-radius..=radius)).clamp(0.0, 1.0))
            .collect();
        let Some(from) = s.one(&y) else { break };
        current = s.pattern(from, radius, &mut rng);
        if let Some(f) = s.best_feasible() {
            current = s.polish(f);
        }
    }
    let pick = s.best_feasible().unwrap_or_else(|| s.least_violating());
    let e = &s.history[pick];
    let value = e
        .value
        .ok_or_else(|| Error::Precondition("every candidate simulation failed".into()))?;
    Ok(SearchResult { x: e.x.clone(), value, feasible: e.feasible, history: s.history })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub x: Vec<f64>,
    pub value: Evaluation,
    pub primary: f64,
    pub evaluations: usize,
}

/// Exhaustive search over `points_per_axis^d` controls; best feasible point.
pub fn grid_search(
    problem: &OptimizationProblem,
    points_per_axis: usize,
) -> Result<Option<GridSearchResult>> {
    let d = problem.layout()?.dim();
    let n = points_per_axis.max(2);
    let total = n.pow(d as u32);
    let point = |mut idx: usize| -> Vec<f64> {
        let mut x = vec![0.0; d];
        for v in x.iter_mut() {
            *v = (idx % n) as f64 / (n - 1) as f64;
            idx /= n;
        }
        x
    };
    let results: Vec<(Vec<f64>, Option<Evaluation>)> = (0..total)
        .into_par_iter()
        .map(|i| {
            let x = point(i);
            let v = evaluate(problem, &x).ok();
            (x, v)
        })
        .collect();
    let mut best: Option<GridSearchResult> = None;
    for (x, v) in results {
        let Some(v) = v else { continue };
        if problem.violation(v.cost, v.effect) > 0.0 {
            continue;
        }
        let p = problem.primary(v.cost, v.effect);
        if best.as_ref().is_none_or(|b| p < b.primary) {
            best = Some(GridSearchResult { x, value: v, primary: p, evaluations: total });
        }
    }
    Ok(best)
}

/// Running minimum of the feasible objective along the history.
pub fn best_feasible_trace(history: &[HistoryEntry]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    history
        .iter()
        .map(|e| {
            if e.feasible {
                best = best.min(e.primary);
            }
            best
        })
        .collect()
}
