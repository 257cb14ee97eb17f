//! Learning objectives driven by the simulator.

mod libsvm;
mod logistic;
mod partition;
mod quadratic;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha20Rng;

use crate::Scalar;

pub use libsvm::{parse_libsvm, parse_libsvm_str, write_libsvm, LibsvmData, A9A_DIM};
pub use logistic::{logistic_gradient, logistic_loss, train_test_split, LogisticTask, DEFAULT_BATCH_SIZE, DEFAULT_L2_REG};
pub use partition::{dirichlet_partition, DirichletPartition, MAX_PARTITION_RETRIES};
pub use quadratic::{QuadraticStart, QuadraticTask, DEFAULT_ROTATION_DEGREES};

/// A decentralized objective: one local loss per agent.
pub trait Task<T: Scalar>: Send + Sync {
    fn n_agents(&self) -> usize;

    /// Parameter dimension `d`.
    fn dim(&self) -> usize;

    /// `n × d` starting iterate, one row per agent.
    fn initial_state(&self) -> DMatrix<T> {
        DMatrix::zeros(self.n_agents(), self.dim())
    }

    /// Local stochastic gradient. Data draws must come from `rng`.
    fn gradient(&self, agent: usize, x: &DVector<T>, rng: &mut ChaCha20Rng) -> DVector<T>;

    fn metric_name(&self) -> &'static str;

    /// Task metric for the `n × d` state.
    fn metric(&self, states: &DMatrix<T>) -> T;
}

/// Every local gradient is zero. Isolates the privacy noise in the simulator.
#[derive(Clone, Debug)]
pub struct ZeroGradientTask<T: Scalar> {
    pub n: usize,
    pub d: usize,
    pub start: Option<DMatrix<T>>,
}

impl<T: Scalar> ZeroGradientTask<T> {
    pub fn new(n: usize, d: usize) -> Self {
        Self { n, d, start: None }
    }

    pub fn starting_at(start: DMatrix<T>) -> Self {
        Self { n: start.nrows(), d: start.ncols(), start: Some(start) }
    }
}

impl<T: Scalar> Task<T> for ZeroGradientTask<T> {
    fn n_agents(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn initial_state(&self) -> DMatrix<T> {
        self.start.clone().unwrap_or_else(|| DMatrix::zeros(self.n, self.d))
    }

    fn gradient(&self, _agent: usize, _x: &DVector<T>, _rng: &mut ChaCha20Rng) -> DVector<T> {
        DVector::zeros(self.d)
    }

    fn metric_name(&self) -> &'static str {
        "mean_sq_norm"
    }

    fn metric(&self, states: &DMatrix<T>) -> T {
        states.norm_squared() / T::from_usize_lossy(states.nrows().max(1))
    }
}
