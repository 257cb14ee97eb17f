//! Correlated-noise privacy for decentralized SGD.
//!
//! The crate covers the whole pipeline for simulating differentially private
//! gossip learning with a shared, optimized noise covariance:
//!
//! * [`graph`]: Erdős–Rényi topologies, Metropolis–Hastings mixing weights,
//!   Laplacians and spectral diagnostics.
//! * [`covariance`]: LDP / pairwise / mixed covariance structures, matrix
//!   square roots and seed-shared noise generation.
//! * [`privacy`]: the Rényi-DP based accountant and the per-agent constraint
//!   level `kappa`.
//! * [`optimizer`]: covariance design (general, pairwise, scalar and the
//!   honest-but-curious multi-seed variant) with a log-barrier interior point
//!   solver and KKT diagnostics.
//! * [`engine`]: the synchronous DSGD simulator with clipping and correlated
//!   noise, plus the virtual-sequence variance probe.
//! * [`tasks`]: the heterogeneous quadratic task, logistic regression, LIBSVM
//!   ingestion and Dirichlet partitioning.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`, which is what the CLI and the
//! experiment harness use.

// `!(x > 0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod engine;
mod error;
pub mod graph;
pub mod io;
pub mod optimizer;
pub mod privacy;
pub mod rng;
mod scalar;
pub mod tasks;

pub use error::{CornError, Result};
pub use scalar::Scalar;

pub use covariance::{CovarianceFactor, CovarianceSpec, FactorMethod, NoiseSample};
pub use engine::{Algorithm, RunConfig, StepSchedule, Trajectory};
pub use tasks::Task;
pub use graph::{Graph, LaplacianMatrix, MixingMatrix, MixingRule};
pub use optimizer::{Cap, CovDesignProblem, CovSolution, HbcThreatModel, KktReport, SolverOptions, Structure};
pub use privacy::{BudgetReport, ConstraintLevel, PrivacyBudget};

/// Dense `f64` matrix.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense `f64` vector.
pub type Vector = nalgebra::DVector<f64>;

pub type MixingMatrix64 = MixingMatrix<f64>;
pub type LaplacianMatrix64 = LaplacianMatrix<f64>;
pub type CovarianceSpec64 = CovarianceSpec<f64>;
pub type CovarianceFactor64 = CovarianceFactor<f64>;
pub type NoiseSample64 = NoiseSample<f64>;
pub type PrivacyBudget64 = PrivacyBudget<f64>;
pub type ConstraintLevel64 = ConstraintLevel<f64>;
pub type CovDesignProblem64 = CovDesignProblem<f64>;
pub type CovSolution64 = CovSolution<f64>;
pub type RunConfig64 = RunConfig<f64>;
pub type Trajectory64 = Trajectory<f64>;

pub type MixingMatrix32 = MixingMatrix<f32>;
pub type CovarianceSpec32 = CovarianceSpec<f32>;
pub type PrivacyBudget32 = PrivacyBudget<f32>;
