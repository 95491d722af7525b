//! Gaussian-mixture linear models: MMSE estimation, Monte Carlo evaluation and
//! stochastic-gradient design of the linear transform.

pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod exec;
pub mod gradients;
pub mod instances;
mod linalg;
pub mod matrix_io;
pub mod mixture;
pub mod optimizer;
pub mod rng;

pub use error::{Error, Result};
pub use estimators::{AffineEstimator, LinearGMModel, OutputComponent, Responsibilities};
pub use evaluation::{evaluate_nmse, evaluate_paired, EstimatorKind, EvaluationReport, RunningStats, MC_BLOCK_SIZE};
pub use exec::Execution;
pub use mixture::{push_forward, Draw, GaussianComponent, GaussianMixture};
pub use rng::{derive_seed, RandomStream};
pub use optimizer::{
    lmmse_design, robbins_monro, LmmseDesign, LmmseDesignOptions, AscentOptions, ConstraintSet, DesignProblem, OptimizerTrace, StepSchedule,
    StopReason, StoppingRule, TraceRecord,
};
