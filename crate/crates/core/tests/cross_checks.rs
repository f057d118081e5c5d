use jumpreg::bsde::{solve_bsde_regression, BsdeConfig, ForwardEnsemble};
use jumpreg::hjb::{solve_ipde, SpaceTimeGrid};
use jumpreg::model::{lookup_model, ControlSet};
use jumpreg::regularity::{closed_form_counterexample, estimate_lipschitz, GridOracle, ProbePlan, ValueOracle};
use jumpreg::sde::ControlPolicy;
use jumpreg::stochastics::{PathGrid, RngSeed};

fn hjb_at_origin(name: &str, x0: f64, dx: f64) -> f64 {
    let m = lookup_model(name).unwrap();
    let (lo, hi) = m.bounds().state_box;
    let g = SpaceTimeGrid::with_cfl(&m, lo, hi, dx, 0.0, 0.5).unwrap();
    solve_ipde(&m, &g).unwrap().evaluate(0.0, x0).unwrap()
}

fn bsde_y0(name: &str, x0: f64, paths: usize) -> f64 {
    let m = lookup_model(name).unwrap();
    let grid = PathGrid::new(0.0, m.horizon(), 50).unwrap();
    let e = ForwardEnsemble::simulate(&m, &ControlPolicy::Constant(0), x0, &grid, paths, RngSeed(21)).unwrap();
    solve_bsde_regression(&m, &e, &BsdeConfig::binning(25)).unwrap().y0()
}

#[test]
fn grid_and_regression_solvers_agree_on_singleton_models() {
    for (name, x0) in [("counterexample", 0.0), ("heat_quadratic", 0.0), ("pure_jump", 1.0)] {
        let v = hjb_at_origin(name, x0, 0.05);
        let y = bsde_y0(name, x0, 20_000);
        assert!((v - y).abs() <= 0.05 * v.abs(), "{name}: {v} vs {y}");
    }
}

#[test]
fn grid_refinement_approaches_the_closed_form() {
    let exact = closed_form_counterexample(0.0, 0.0, 1.0).unwrap();
    let coarse = (hjb_at_origin("counterexample", 0.0, 0.1) - exact).abs();
    let fine = (hjb_at_origin("counterexample", 0.0, 0.05) - exact).abs();
    assert!(fine < coarse, "{fine} vs {coarse}");
    assert!(fine < 2e-3 * exact.abs());
}

#[test]
fn more_controls_never_raise_the_value() {
    let full = lookup_model("lq_jump").unwrap();
    let single = full.with_controls(ControlSet::scalar(&[0.0]).unwrap());
    let g = SpaceTimeGrid::with_cfl(&full, -8.0, 8.0, 0.1, 0.0, 0.5).unwrap();
    let vf = solve_ipde(&full, &g).unwrap();
    let vs = solve_ipde(&single, &g).unwrap();
    for i in 0..=g.n_x() {
        assert!(vf.value(0, i) <= vs.value(0, i) + 1e-12);
    }
    let oracle = GridOracle::new(&vf, &full);
    let (a, b) = oracle.safe_x();
    assert!(a < 0.0 && b > 0.0, "{a} {b}");
    let lip = estimate_lipschitz(&oracle, &ProbePlan::new(0.2, (a, b)).with_counts(300, 300), RngSeed(2)).unwrap();
    assert!(lip.is_finite() && lip > 0.0);
}
