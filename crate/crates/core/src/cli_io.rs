//! Scenario files (TOML) and CSV output.
//!
//! A file is parsed into [`ScenarioFile`], then [`ScenarioFile::resolved`]
//! fills every default explicitly. The resolved file is what gets echoed next
//! to the outputs, and re-reading it resolves to itself.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coupled_ibvp::SolverOptions;
use crate::error::{Error, Result};
use crate::functionals::{CostVariant, EffectWeight};
use crate::optimizer::{ControlLayout, Direction, HistoryEntry, OptimizationProblem, SearchOptions};
use crate::sir_model::{
    Curve, Kernel, KernelForm, PiecewiseConstant, Policy, RateFn, Rates, Scenario, Trajectory,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Defaults to the support of the initial data plus the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_max: Option<f64>,
    pub cells_per_unit_age: usize,
    pub horizon: f64,
}

/// A number, or points of a piecewise linear curve held constant past the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveSpec {
    Constant(f64),
    Points(Points),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Points {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl CurveSpec {
    fn to_curve(&self, what: &str) -> Result<Curve> {
        match self {
            CurveSpec::Constant(c) => Ok(Curve::constant(*c)),
            CurveSpec::Points(p) => Curve::new(p.x.clone(), p.y.clone())
                .map_err(|e| Error::Scenario(format!("{what}: {e}"))),
        }
    }

    /// End of the support, `None` if the curve does not vanish at the far end.
    fn support_end(&self) -> Option<f64> {
        match self {
            CurveSpec::Constant(c) => (*c == 0.0).then_some(0.0),
            CurveSpec::Points(p) => {
                if p.y.last().is_some_and(|&y| y != 0.0) {
                    return None;
                }
                let k = p.y.iter().rposition(|&y| y != 0.0);
                Some(k.map_or(0.0, |k| p.x[(k + 1).min(p.x.len() - 1)]))
            }
        }
    }
}

fn zero_curve() -> CurveSpec {
    CurveSpec::Constant(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// `constant`, `separable` or `tabulated`.
    pub form: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<CurveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<CurveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ages: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_inf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_l: Option<f64>,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            form: "constant".into(),
            value: Some(0.0),
            p: None,
            q: None,
            ages: None,
            values: None,
            lambda_inf: None,
            lambda_l: None,
        }
    }
}

/// A number, or `{ age = .. }`, or `{ time = .., age = .. }` for `time(t) age(a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    Constant(f64),
    Table(RateTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateTable {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<CurveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<CurveSpec>,
}

impl Default for RateSpec {
    fn default() -> Self {
        RateSpec::Constant(0.0)
    }
}

impl RateSpec {
    fn to_rate(&self, what: &str) -> Result<RateFn> {
        Ok(match self {
            RateSpec::Constant(c) => RateFn::Constant(*c),
            RateSpec::Table(RateTable { time: None, age: None }) => {
                return Err(Error::Scenario(format!("{what}: needs `time` or `age`")))
            }
            RateSpec::Table(RateTable { time: None, age: Some(a) }) => RateFn::Age(a.to_curve(what)?),
            RateSpec::Table(RateTable { time: Some(t), age }) => RateFn::Separable {
                time: t.to_curve(what)?,
                age: age.as_ref().map_or(Ok(Curve::constant(1.0)), |a| a.to_curve(what))?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    #[serde(default)]
    pub d_s: RateSpec,
    #[serde(default)]
    pub d_i: RateSpec,
    #[serde(default)]
    pub d_r: RateSpec,
    #[serde(default)]
    pub r_i: RateSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_inf: Option<f64>,
    /// Accept rates of either sign.
    #[serde(default)]
    pub allow_signed_rates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "zero_curve")]
    pub s_o: CurveSpec,
    #[serde(default = "zero_curve")]
    pub i_o: CurveSpec,
    #[serde(default = "zero_curve")]
    pub r_o: CurveSpec,
    #[serde(default = "zero_curve")]
    pub s_b: CurveSpec,
    #[serde(default = "zero_curve")]
    pub i_b: CurveSpec,
    #[serde(default = "zero_curve")]
    pub r_b: CurveSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            s_o: zero_curve(),
            i_o: zero_curve(),
            r_o: zero_curve(),
            s_b: zero_curve(),
            i_b: zero_curve(),
            r_b: zero_curve(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    /// `none`, `age` or `time`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ages: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<f64>,
    /// One step function per vaccination age or time.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub controls: Vec<ControlSpec>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection { kind: "none".into(), ages: vec![], times: vec![], controls: vec![] }
    }
}

/// Step function; without `breaks` the values fill equal bins over `[0, horizon]`
/// (age-triggered) or `[0, age_max]` (time-triggered).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breaks: Option<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    /// `min_cost` (cap on the effect) or `min_effect` (cap on the cost).
    pub direction: String,
    pub cap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Restrict the effect to `start <= t <= end`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
}

/// Everything a run needs.
#[derive(Clone)]
pub struct Resolved {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    pub optimize: Option<(OptimizationProblem, SearchOptions)>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with every default written out.
    pub fn resolved(&self) -> Result<ScenarioFile> {
        let mut f = self.clone();
        let k = f.grid.cells_per_unit_age;
        if k == 0 {
            return Err(Error::Scenario("grid.cells_per_unit_age must be positive".into()));
        }
        if !(f.grid.horizon > 0.0) {
            return Err(Error::Scenario("grid.horizon must be positive".into()));
        }
        if f.grid.age_max.is_none() {
            let mut support = 0.0_f64;
            for (name, c) in [("s_o", &f.data.s_o), ("i_o", &f.data.i_o), ("r_o", &f.data.r_o)] {
                let end = c.support_end().ok_or_else(|| {
                    Error::Scenario(format!(
                        "grid.age_max is required: data.{name} does not vanish at large ages"
                    ))
                })?;
                support = support.max(end);
            }
            let cells = ((support + f.grid.horizon) * k as f64 - 1e-9).ceil().max(1.0);
            f.grid.age_max = Some(cells / k as f64);
        }
        let age_max = f.grid.age_max.unwrap_or_default();

        let s = &mut f.solver;
        let d = SolverOptions::default();
        s.fp_tol.get_or_insert(d.fp_tol);
        s.max_iter.get_or_insert(d.max_iter);
        s.initial_window.get_or_insert(d.initial_window);
        s.blowup_factor.get_or_insert(d.blowup_factor);
        s.max_ratio.get_or_insert(d.max_ratio);

        let span = match f.policy.kind.as_str() {
            "none" => None,
            "age" => Some((f.policy.ages.len(), f.grid.horizon)),
            "time" => Some((f.policy.times.len(), age_max)),
            other => {
                return Err(Error::Scenario(format!(
                    "policy.kind must be none, age or time, got `{other}`"
                )))
            }
        };
        if let Some((count, span)) = span {
            if f.policy.controls.is_empty() {
                f.policy.controls = vec![ControlSpec { breaks: None, values: vec![0.0] }; count];
            }
            for c in &mut f.policy.controls {
                if c.breaks.is_none() {
                    let pc = PiecewiseConstant::bins(0.0, span, c.values.clone())
                        .map_err(|e| Error::Scenario(format!("policy.controls: {e}")))?;
                    c.breaks = Some(pc.breaks().to_vec());
                }
            }
        }

        if let Some(o) = &mut f.optimize {
            let default_cost = if f.policy.kind == "time" { "time_susceptible" } else { "age_susceptible" };
            o.cost.get_or_insert_with(|| default_cost.into());
            o.bins.get_or_insert(1);
            let d = SearchOptions::default();
            o.budget.get_or_insert(d.budget);
            o.seed.get_or_insert(d.seed);
            o.initial_step.get_or_insert(d.initial_step);
            o.min_step.get_or_insert(d.min_step);
            o.restarts.get_or_insert(d.restarts);
        }
        Ok(f)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let file = self.resolved()?;
        let scenario = file.build_scenario()?;
        let optimize = match &file.optimize {
            None => None,
            Some(o) => Some(file.build_problem(o, &scenario)?),
        };
        Ok(Resolved { file, scenario, optimize })
    }

    fn build_scenario(&self) -> Result<Scenario> {
        let g = &self.grid;
        let k = &self.kernel;
        let need = |v: bool, what: &str| {
            if v {
                Ok(())
            } else {
                Err(Error::Scenario(format!("kernel.form = {}: {what}", k.form)))
            }
        };
        let form = match k.form.as_str() {
            "constant" => {
                need(k.value.is_some(), "needs `value`")?;
                KernelForm::Constant(k.value.unwrap_or_default())
            }
            "separable" => {
                need(k.p.is_some() && k.q.is_some(), "needs `p` and `q`")?;
                KernelForm::Separable {
                    p: k.p.as_ref().map(|c| c.to_curve("kernel.p")).transpose()?.unwrap_or(Curve::constant(0.0)),
                    q: k.q.as_ref().map(|c| c.to_curve("kernel.q")).transpose()?.unwrap_or(Curve::constant(0.0)),
                }
            }
            "tabulated" => {
                need(k.ages.is_some() && k.values.is_some(), "needs `ages` and `values`")?;
                let (ages, values) = (k.ages.clone().unwrap_or_default(), k.values.clone().unwrap_or_default());
                let n = ages.len();
                need(n > 0, "`ages` is empty")?;
                need(ages.windows(2).all(|w| w[1] > w[0]), "`ages` must increase strictly")?;
                need(
                    values.len() == n && values.iter().all(|r| r.len() == n),
                    "`values` must be a square table matching `ages`",
                )?;
                KernelForm::Tabulated { ages, values }
            }
            other => {
                return Err(Error::Scenario(format!(
                    "kernel.form must be constant, separable or tabulated, got `{other}`"
                )))
            }
        };
        let r = &self.rates;
        let rates = Rates {
            d_s: r.d_s.to_rate("rates.d_s")?,
            d_i: r.d_i.to_rate("rates.d_i")?,
            d_r: r.d_r.to_rate("rates.d_r")?,
            r_i: r.r_i.to_rate("rates.r_i")?,
            r_l: r.r_l,
            r_1: r.r_1,
            r_inf: r.r_inf,
        };
        let d = &self.data;
        let policy = match self.policy.kind.as_str() {
            "none" => Policy::None,
            kind => {
                let anchors = if kind == "age" { &self.policy.ages } else { &self.policy.times };
                if self.policy.controls.len() != anchors.len() {
                    return Err(Error::Scenario(format!(
                        "policy: {} controls for {} vaccination {}s",
                        self.policy.controls.len(),
                        anchors.len(),
                        kind
                    )));
                }
                let steps = self
                    .policy
                    .controls
                    .iter()
                    .map(|c| {
                        PiecewiseConstant::new(c.breaks.clone().unwrap_or_default(), c.values.clone())
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Scenario(format!("policy.controls: {e}")))?;
                if kind == "age" {
                    Policy::AgeTriggered { ages: anchors.clone(), eta: steps }
                } else {
                    Policy::TimeTriggered { times: anchors.clone(), nu: steps }
                }
            }
        };
        let s = &self.solver;
        let dflt = SolverOptions::default();
        Ok(Scenario {
            age_max: g.age_max.unwrap_or_default(),
            cells_per_unit_age: g.cells_per_unit_age,
            horizon: g.horizon,
            kernel: Kernel { form, lambda_inf: k.lambda_inf, lambda_l: k.lambda_l },
            rates,
            s_o: d.s_o.to_curve("data.s_o")?,
            i_o: d.i_o.to_curve("data.i_o")?,
            r_o: d.r_o.to_curve("data.r_o")?,
            s_b: d.s_b.to_curve("data.s_b")?,
            i_b: d.i_b.to_curve("data.i_b")?,
            r_b: d.r_b.to_curve("data.r_b")?,
            policy,
            allow_signed_rates: r.allow_signed_rates,
            solver: SolverOptions {
                fp_tol: s.fp_tol.unwrap_or(dflt.fp_tol),
                max_iter: s.max_iter.unwrap_or(dflt.max_iter),
                initial_window: s.initial_window.unwrap_or(dflt.initial_window),
                blowup_factor: s.blowup_factor.unwrap_or(dflt.blowup_factor),
                max_ratio: s.max_ratio.unwrap_or(dflt.max_ratio),
                parallel: true,
            },
        })
    }

    fn build_problem(
        &self,
        o: &OptimizeSection,
        scenario: &Scenario,
    ) -> Result<(OptimizationProblem, SearchOptions)> {
        let direction = match o.direction.as_str() {
            "min_cost" => Direction::MinCost { effect_cap: o.cap },
            "min_effect" => Direction::MinEffect { cost_cap: o.cap },
            other => {
                return Err(Error::Scenario(format!(
                    "optimize.direction must be min_cost or min_effect, got `{other}`"
                )))
            }
        };
        let name = o.cost.as_deref().unwrap_or("age_susceptible");
        let cost = CostVariant::from_name(name)
            .ok_or_else(|| Error::Scenario(format!("optimize.cost: unknown variant `{name}`")))?;
        let weight = match o.effect_window {
            None => EffectWeight::Uniform,
            Some([start, end]) => EffectWeight::TimeWindow { start, end },
        };
        let problem = OptimizationProblem {
            scenario: scenario.clone(),
            direction,
            cost,
            weight,
            bins: o.bins.unwrap_or(1),
        };
        problem.layout().map_err(|e| Error::Scenario(format!("optimize: {e}")))?;
        let d = SearchOptions::default();
        let opts = SearchOptions {
            budget: o.budget.unwrap_or(d.budget),
            seed: o.seed.unwrap_or(d.seed),
            initial_step: o.initial_step.unwrap_or(d.initial_step),
            min_step: o.min_step.unwrap_or(d.min_step),
            restarts: o.restarts.unwrap_or(d.restarts),
            parallel: true,
        };
        Ok((problem, opts))
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `t,a,S,I,R,side`; interface nodes appear twice with side `-` and `+`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,a,S,I,R,side")?;
    let g = &traj.grid;
    let last = g.segment_count() - 1;
    for st in &traj.states {
        for j in 0..=last {
            let nodes = g.segment_nodes(j);
            for m in 0..nodes {
                let side = match (j > 0 && m == 0, j < last && m + 1 == nodes) {
                    (true, _) => "+",
                    (_, true) => "-",
                    _ => "",
                };
                writeln!(
                    w,
                    "{},{},{},{},{},{side}",
                    num(st.t),
                    num(g.node_age(j, m)),
                    num(st.s.segment(j)[m]),
                    num(st.i.segment(j)[m]),
                    num(st.r.segment(j)[m]),
                )?;
            }
        }
    }
    Ok(w.flush()?)
}

/// `t,L1_S,L1_I,L1_R,TV_S,TV_I,TV_R,mass_total` per output time.
pub fn write_summary_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,L1_S,L1_I,L1_R,TV_S,TV_I,TV_R,mass_total")?;
    for st in &traj.states {
        let f = st.fields();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            num(st.t),
            num(f[0].l1_norm()),
            num(f[1].l1_norm()),
            num(f[2].l1_norm()),
            num(f[0].total_variation()),
            num(f[1].total_variation()),
            num(f[2].total_variation()),
            num(st.population()),
        )?;
    }
    Ok(w.flush()?)
}

/// One row per evaluation: controls, cost, effect, constraint violation.
pub fn write_history_csv(path: &Path, history: &[HistoryEntry]) -> Result<()> {
    let mut w = create(path)?;
    let dim = history.first().map_or(0, |h| h.x.len());
    let head: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    writeln!(w, "eval,{},cost,effect,violation,feasible", head.join(","))?;
    for (n, h) in history.iter().enumerate() {
        let xs: Vec<String> = h.x.iter().map(|&v| num(v)).collect();
        let (c, e) = h.value.map_or((f64::NAN, f64::NAN), |v| (v.cost, v.effect));
        writeln!(
            w,
            "{n},{},{},{},{},{}",
            xs.join(","),
            num(c),
            num(e),
            num(h.violation),
            h.feasible
        )?;
    }
    Ok(w.flush()?)
}

/// `anchor,start,end,value` for each bin of the best control.
pub fn write_control_csv(path: &Path, layout: &ControlLayout, x: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "anchor,start,end,value")?;
    let width = layout.span / layout.bins as f64;
    for (i, &anchor) in layout.anchors.iter().enumerate() {
        for b in 0..layout.bins {
            writeln!(
                w,
                "{},{},{},{}",
                num(anchor),
                num(b as f64 * width),
                num((b + 1) as f64 * width),
                num(x[i * layout.bins + b])
            )?;
        }
    }
    Ok(w.flush()?)
}

/// Writes the resolved scenario as TOML.
pub fn write_resolved(path: &Path, file: &ScenarioFile) -> Result<()> {
    Ok(std::fs::write(path, file.resolved()?.to_toml()?)?)
}
