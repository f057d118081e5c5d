//! Numerical toolkit for controlled jump-diffusions with a finite atomic Lévy
//! measure: forward Euler–Maruyama simulation, regression BSDE solver with
//! jumps, explicit monotone HJB integro-PDE solver, the linear time change and
//! its action on Poisson random measures, and probes of the value function's
//! Lipschitz and semiconcavity constants near the terminal time.

// `!(a < b)` is deliberate: it rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod error;
pub mod hjb;
pub mod model;
pub mod regularity;
pub mod report;
pub mod sde;
pub mod stats;
pub mod stochastics;
pub mod timechange;

pub use bsde::{
    martingale_residual_means, martingale_residuals, solve_bsde_regression, solve_bsde_with_fits,
    solve_timechanged_bsde, transform_bsde_solution, BsdeConfig, BsdeSolution, ForwardEnsemble,
    RegressionBasisConfig,
};
pub use error::{Error, Result};
pub use hjb::{cfl_max_dt, evaluate_value, solve_ipde, SpaceTimeGrid, ValueGrid};
pub use model::{
    levy_total_mass, lookup_model, lookup_model_with, validate_model, ControlSet, DeclaredBounds,
    LevyMeasureAtomic, ModelSpec,
};
pub use regularity::{
    blowup_profile, closed_form_counterexample, estimate_lipschitz, estimate_semiconcavity, ProbeMode,
    ProbePlan, RegularityReport, ValueOracle,
};
pub use report::CsvTable;
pub use sde::{simulate_forward, simulate_timechanged_forward, timechange_consistency, ControlPolicy, SdePath};
pub use stochastics::{
    count_jumps, sample_brownian, sample_poisson_measure, BrownianPath, PathGrid, PoissonPath, RngSeed,
};
pub use timechange::{
    double_timechange_identities, kulik_transform, verify_kulik_family, verify_kulik_identity, CheckReport,
    CheckRow, KulikWindow, LinearTimeChange, TestFunction,
};
