//! Numerical checks of the error-accumulation, autoregressive convergence,
//! LAD-Lasso, alternating-SGD and information-complementarity results.
//!
//! Every experiment is deterministic given its seed: trials draw from
//! independent ChaCha streams and are reduced in trial order.

mod altopt;
mod ar;
mod error_accum;
mod information;
mod lad;

pub use altopt::{altopt_convergence_experiment, AltOptConfig, TestObjective};
pub use ar::{ar_convergence_experiment, fit_ar_ls, one_step_mse, ArConfig, ArProcess};
pub use error_accum::{
    error_accumulation_experiment, harmonic, next_all_ensemble, ErrorAccumConfig, VarianceMode,
};
pub use information::{
    complementarity_check, complementarity_terms, conditional_mutual_information, mutual_information,
    ComplementarityTerms,
    JointDistribution,
};
pub use lad::{
    lad_lasso_fit, lad_lasso_fit_from, lad_objective, lad_scaling_experiment, lattice_search, LadFit,
    LadLassoConfig, LadOptions,
};
