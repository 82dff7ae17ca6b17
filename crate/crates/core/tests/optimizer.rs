mod common;

use common::*;
use renewal_sir::optimizer::*;
use renewal_sir::sir_model::*;
use renewal_sir::Error;

fn opts(seed: u64, parallel: bool) -> SearchOptions {
    SearchOptions { budget: 60, seed, restarts: 1, parallel, ..SearchOptions::default() }
}

#[test]
fn same_seed_gives_the_same_history() {
    let p = toy_problem(true);
    let a = solve(&p, &opts(7, true)).unwrap();
    let b = solve(&p, &opts(7, true)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn parallel_and_sequential_searches_agree() {
    let p = toy_problem(false);
    let a = solve(&p, &opts(3, true)).unwrap();
    let b = solve(&p, &opts(3, false)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn budget_is_respected_and_result_is_feasible() {
    for min_cost in [true, false] {
        let p = toy_problem(min_cost);
        let r = solve(&p, &opts(11, true)).unwrap();
        assert!(r.history.len() <= 60);
        assert!(r.feasible);
        assert!(r.x.iter().all(|v| (0.0..=1.0).contains(v)));
        let again = evaluate(&p, &r.x).unwrap();
        assert_eq!(again, r.value);
        let trace = best_feasible_trace(&r.history);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn search_is_not_worse_than_a_coarse_grid() {
    let p = toy_problem(false);
    let r = solve(&p, &SearchOptions { budget: 200, ..SearchOptions::default() }).unwrap();
    let g = grid_search(&p, 5).unwrap().unwrap();
    assert_eq!(g.evaluations, 25);
    assert!(r.value.effect <= g.value.effect + 1e-12);
}

#[test]
fn tiny_budget_is_refused() {
    let p = toy_problem(true);
    let err = solve(&p, &SearchOptions { budget: 2, ..SearchOptions::default() }).unwrap_err();
    assert!(matches!(err, Error::Control(_)));
}

#[test]
fn layout_maps_controls_to_policies() {
    let mut sc = toy_scenario();
    sc.policy = Policy::AgeTriggered {
        ages: vec![1.0, 2.0],
        eta: vec![PiecewiseConstant::constant(0.0); 2],
    };
    let layout = ControlLayout::from_scenario(&sc, 2).unwrap();
    assert_eq!(layout.dim(), 4);
    let Policy::AgeTriggered { ages, eta } = layout.policy(&[0.1, 0.2, 0.3, 0.4]).unwrap() else {
        panic!("expected an age-triggered policy");
    };
    assert_eq!(ages, vec![1.0, 2.0]);
    assert_eq!(eta[0].value(0.5), 0.1);
    assert_eq!(eta[0].value(1.5), 0.2);
    assert_eq!(eta[1].value(0.0), 0.3);
    assert_eq!(eta[1].value(1.9), 0.4);

    sc.policy = Policy::TimeTriggered { times: vec![0.5], nu: vec![PiecewiseConstant::constant(0.0)] };
    let layout = ControlLayout::from_scenario(&sc, 3).unwrap();
    assert!(!layout.age_triggered);
    assert_eq!(layout.span, sc.age_max);
    let Policy::TimeTriggered { nu, .. } = layout.policy(&[0.0, 0.5, 1.0]).unwrap() else {
        panic!("expected a time-triggered policy");
    };
    assert_eq!(nu[0].value(5.0), 1.0);
}

#[test]
fn invalid_controls_are_rejected() {
    let layout = ControlLayout::from_scenario(&toy_scenario(), 2).unwrap();
    assert!(matches!(layout.policy(&[0.5]), Err(Error::Control(_))));
    assert!(matches!(layout.policy(&[0.5, 1.5]), Err(Error::Control(_))));
    assert!(matches!(layout.policy(&[-0.1, 0.5]), Err(Error::Control(_))));
    assert!(ControlLayout::from_scenario(&toy_scenario(), 0).is_err());
    let mut sc = toy_scenario();
    sc.policy = Policy::None;
    assert!(ControlLayout::from_scenario(&sc, 2).is_err());
}

#[test]
fn problem_checks_cost_variant_and_cap() {
    let mut p = toy_problem(true);
    p.cost = renewal_sir::functionals::CostVariant::TimeSusceptible;
    assert!(matches!(p.layout(), Err(Error::Control(_))));
    let mut p = toy_problem(true);
    p.direction = Direction::MinEffect { cost_cap: -1.0 };
    assert!(matches!(p.layout(), Err(Error::Control(_))));
}
