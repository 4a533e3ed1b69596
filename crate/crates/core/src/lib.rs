//! Memory-augmented optimizers that keep a small buffer of critical momenta,
//! together with the tooling to study them: analytic toy loss surfaces,
//! sharpness estimators, a spectral convergence analyzer for the simplified
//! recursion, and seeded batch experiments that write CSV.
//!
//! The companion guide in `book/` walks through each piece; its code listings
//! are compiled and run as doc-tests of this crate.

pub mod analysis;
pub mod buffer;
pub mod convergence;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod optimizers;
pub mod rng;
pub mod vector;

pub use analysis::{
    cancellation_index, m_sharpness, max_hessian_eig, path_distance, MSharpnessConfig, SharpnessReport,
};
pub use buffer::{BufferStats, CriticalBuffer, InsertOutcome};
pub use convergence::{
    build_companion, optimal_rate, spectral_radius, worst_case_rate, CompanionMatrix, Method, RateGrids, RateResult,
    TuneMode,
};
pub use error::{Error, Result};
pub use losses::{check_grad, make_mlp_loss, GradReport, LossSurface};
pub use optimizers::{
    adam_cg_step, adam_cm_step, adam_step, lr_schedule_at, sam_outer_step, sgd_family_step, simple_cm_step, Algorithm,
    Optimizer, OptimizerConfig, OptimizerState, Schedule,
};
pub use rng::{Seed, SplitMix64};
pub use vector::ParamVector;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/surfaces.md")]
    mod surfaces {}
    #[doc = include_str!("../../../book/src/buffer.md")]
    mod buffer {}
    #[doc = include_str!("../../../book/src/optimizers.md")]
    mod optimizers {}
    #[doc = include_str!("../../../book/src/convergence.md")]
    mod convergence {}
    #[doc = include_str!("../../../book/src/sharpness.md")]
    mod sharpness {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
