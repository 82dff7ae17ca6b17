mod common;

use proptest::prelude::*;

use common::scenario_path;
use renewal_sir::cli_io::*;
use renewal_sir::sir_model::simulate;
use renewal_sir::Error;

fn points(x: Vec<f64>, y: Vec<f64>) -> CurveSpec {
    CurveSpec::Points(Points { x, y })
}

prop_compose! {
    fn scenario_file()(
        k in 5usize..20,
        horizon in 1u32..4,
        lambda in 0.0..0.5f64,
        separable in any::<bool>(),
        d in prop::collection::vec(0.01..0.1f64, 3),
        r in 0.1..0.8f64,
        top in 0.5..1.5f64,
        peak in 0.05..0.3f64,
        kind in 0usize..3,
        eta in prop::collection::vec(0.0..1.0f64, 1..4),
        optimize in any::<bool>(),
        seed in any::<u32>(),
    ) -> ScenarioFile {
        let kernel = if separable {
            KernelSection {
                form: "separable".into(),
                value: None,
                p: Some(points(vec![0.0, 8.0], vec![lambda, 0.5 * lambda])),
                q: Some(CurveSpec::Constant(1.0)),
                ..KernelSection::default()
            }
        } else {
            KernelSection { value: Some(lambda), ..KernelSection::default() }
        };
        let policy = match kind {
            0 => PolicySection::default(),
            1 => PolicySection {
                kind: "age".into(),
                ages: vec![1.0],
                controls: vec![ControlSpec { breaks: None, values: eta.clone() }],
                ..PolicySection::default()
            },
            _ => PolicySection {
                kind: "time".into(),
                times: vec![0.5],
                controls: vec![ControlSpec { breaks: None, values: eta.clone() }],
                ..PolicySection::default()
            },
        };
        let optimize = (optimize && kind != 0).then(|| OptimizeSection {
            direction: "min_effect".into(),
            cap: 0.5,
            cost: Some(if kind == 1 { "age_whole" } else { "time_susceptible" }.into()),
            bins: Some(eta.len()),
            effect_window: None,
            budget: Some(40),
            seed: Some(seed as u64),
            initial_step: None,
            min_step: None,
            restarts: None,
        });
        ScenarioFile {
            grid: GridSection { age_max: None, cells_per_unit_age: k, horizon: horizon as f64 },
            kernel,
            rates: RatesSection {
                d_s: RateSpec::Constant(d[0]),
                d_i: RateSpec::Constant(d[1]),
                d_r: RateSpec::Constant(d[2]),
                r_i: RateSpec::Table(RateTable { time: None, age: Some(points(vec![0.0, 6.0], vec![r, 0.5 * r])) }),
                ..RatesSection::default()
            },
            data: DataSection {
                s_o: points(vec![0.0, 3.0, 5.0], vec![top, top, 0.0]),
                i_o: points(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 0.0, peak, 0.0]),
                s_b: CurveSpec::Constant(top),
                ..DataSection::default()
            },
            policy,
            solver: SolverSection::default(),
            optimize,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn toml_round_trip_is_lossless(file in scenario_file()) {
        let text = file.to_toml().unwrap();
        prop_assert_eq!(&ScenarioFile::parse(&text).unwrap(), &file);
    }

    #[test]
    fn resolving_is_idempotent(file in scenario_file()) {
        let once = file.resolved().unwrap();
        prop_assert!(once.grid.age_max.is_some());
        let twice = once.resolved().unwrap();
        prop_assert_eq!(&twice, &once);
        let echoed = ScenarioFile::parse(&once.to_toml().unwrap()).unwrap();
        prop_assert_eq!(&echoed, &once);
        prop_assert_eq!(once.resolve().unwrap().optimize.is_some(), file.optimize.is_some());
    }
}

#[test]
fn echoed_scenario_reproduces_the_run() {
    let file = ScenarioFile::load(&scenario_path("reference.toml")).unwrap();
    let first = file.resolve().unwrap();
    let echo = ScenarioFile::parse(&first.file.to_toml().unwrap()).unwrap().resolve().unwrap();
    let a = simulate(&first.scenario).unwrap();
    let b = simulate(&echo.scenario).unwrap();
    assert_eq!(a.states.len(), b.states.len());
    for (x, y) in a.states.iter().zip(&b.states) {
        for (f, g) in x.fields().into_iter().zip(y.fields()) {
            assert!(f.values().zip(g.values()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}

#[test]
fn unknown_keys_are_named_in_every_section() {
    let base = std::fs::read_to_string(scenario_path("toy_optimize.toml")).unwrap();
    for (section, key) in [
        ("[grid]", "cells"),
        ("[kernel]", "shape"),
        ("[rates]", "d_x"),
        ("[data]", "s_0"),
        ("[policy]", "age"),
        ("[optimize]", "iterations"),
    ] {
        let text = base.replacen(section, &format!("{section}\n{key} = 1"), 1);
        let err = ScenarioFile::parse(&text).unwrap_err();
        assert!(matches!(err, Error::Scenario(_)));
        assert!(err.to_string().contains(key), "{section}: {err}");
    }
    let text = format!("{base}\n[solver]\ntolerance = 1e-9\n");
    assert!(ScenarioFile::parse(&text).unwrap_err().to_string().contains("tolerance"));
    let text = format!("[extras]\nx = 1\n{base}");
    assert!(ScenarioFile::parse(&text).unwrap_err().to_string().contains("extras"));
}

#[test]
fn bad_values_are_scenario_errors() {
    let base = std::fs::read_to_string(scenario_path("toy_optimize.toml")).unwrap();
    for (from, to) in [
        ("form = \"constant\"", "form = \"cubic\""),
        ("kind = \"age\"", "kind = \"sometimes\""),
        ("direction = \"min_effect\"", "direction = \"max_fun\""),
        ("cost = \"age_susceptible\"", "cost = \"everything\""),
        ("s_b = 1.0", "s_b = { x = [1.0, 0.0], y = [1.0, 1.0] }"),
    ] {
        let text = base.replacen(from, to, 1);
        let err = ScenarioFile::parse(&text).and_then(|f| f.resolve().map(|_| ())).unwrap_err();
        assert!(err.is_validation(), "{to}: {err}");
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = ScenarioFile::load(std::path::Path::new("/nonexistent/scenario.toml")).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}
