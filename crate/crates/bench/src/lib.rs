//! Fixtures shared by the criterion benches.

use jumpreg::bsde::ForwardEnsemble;
use jumpreg::model::{lookup_model, ModelSpec};
use jumpreg::sde::ControlPolicy;
use jumpreg::stochastics::{PathGrid, RngSeed};

pub fn lq_jump() -> ModelSpec {
    lookup_model("lq_jump").expect("registry model")
}

/// `n_paths` forward paths of `lq_jump` from the origin, 50 steps, middle control.
pub fn lq_ensemble(n_paths: usize) -> ForwardEnsemble {
    let m = lq_jump();
    let grid = PathGrid::new(0.0, m.horizon(), 50).expect("grid");
    let mid = m.controls().len() / 2;
    ForwardEnsemble::simulate(&m, &ControlPolicy::Constant(mid), 0.0, &grid, n_paths, RngSeed(1)).expect("ensemble")
}
