//! L2-regularized logistic regression over Dirichlet-partitioned shards.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{dirichlet_partition, DirichletPartition, LibsvmData, Task};
use crate::rng::{keyed_rng, Domain};
use crate::{CornError, Result, Scalar};

pub const DEFAULT_L2_REG: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 128;
const TRAIN_FRACTION: f64 = 0.8;

/// `log(1 + e^{−z})` without overflow.
fn softplus_neg<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `1/(1 + e^{z})` without overflow.
fn sigmoid_neg<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        let e = (-z).exp();
        e / (T::one() + e)
    } else {
        T::one() / (T::one() + z.exp())
    }
}

/// Mean of `log(1 + exp(−y⟨x, φ⟩))` over `rows` plus `(λ/2)‖x‖²`.
pub fn logistic_loss<T: Scalar>(x: &DVector<T>, features: &DMatrix<T>, labels: &[T], rows: &[usize], l2_reg: T) -> T {
    let mut total = T::zero();
    for &r in rows {
        let z = labels[r] * features.row(r).transpose().dot(x);
        total += softplus_neg(z);
    }
    total / T::from_usize_lossy(rows.len().max(1)) + x.norm_squared() * l2_reg * T::lit(0.5)
}

/// Gradient of [`logistic_loss`].
pub fn logistic_gradient<T: Scalar>(x: &DVector<T>, features: &DMatrix<T>, labels: &[T], rows: &[usize], l2_reg: T) -> DVector<T> {
    let mut g = DVector::zeros(x.len());
    for &r in rows {
        let phi = features.row(r);
        let z = labels[r] * phi.transpose().dot(x);
        let coef = -labels[r] * sigmoid_neg(z);
        for (gj, pj) in g.iter_mut().zip(phi.iter()) {
            *gj += coef * *pj;
        }
    }
    g /= T::from_usize_lossy(rows.len().max(1));
    g.axpy(l2_reg, x, T::one());
    g
}

/// [`logistic_gradient`] with samples stored as the columns of `samples`.
fn gradient_by_column<T: Scalar>(x: &DVector<T>, samples: &DMatrix<T>, labels: &[T], rows: &[usize], l2_reg: T) -> DVector<T> {
    let mut g = DVector::zeros(x.len());
    for &r in rows {
        let phi = samples.column(r);
        let coef = -labels[r] * sigmoid_neg(labels[r] * phi.dot(x));
        g.axpy(coef, &phi, T::one());
    }
    g /= T::from_usize_lossy(rows.len().max(1));
    g.axpy(l2_reg, x, T::one());
    g
}

/// Shuffled 80/20 split of `0..n` as `(train, test)`.
pub fn train_test_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut keyed_rng(seed, Domain::Split, 0, 0));
    let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
    let test = idx.split_off(n_train);
    (idx, test)
}

#[derive(Clone, Debug)]
pub struct LogisticTask<T: Scalar> {
    pub train: LibsvmData<T>,
    pub test: LibsvmData<T>,
    pub l2_reg: T,
    pub batch_size: usize,
    pub partition: DirichletPartition,
    shards: Vec<Vec<usize>>,
    /// `train.features` transposed: one contiguous column per sample.
    train_columns: DMatrix<T>,
}

impl<T: Scalar> LogisticTask<T> {
    /// Splits 80/20, then partitions the training part among `n_agents`.
    pub fn new(data: &LibsvmData<T>, n_agents: usize, alpha: f64, l2_reg: T, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(CornError::InvalidArgument("batch size must be positive".into()));
        }
        let (train_idx, test_idx) = train_test_split(data.len(), seed);
        let train = data.select(&train_idx);
        let test = data.select(&test_idx);
        if test.is_empty() {
            return Err(CornError::InvalidArgument("dataset too small for a test split".into()));
        }
        let partition = dirichlet_partition(&train.labels, n_agents, alpha, seed)?;
        let shards = partition.shards();
        let train_columns = train.features.transpose();
        Ok(Self { train, test, l2_reg, batch_size, partition, shards, train_columns })
    }

    pub fn shard(&self, agent: usize) -> &[usize] {
        &self.shards[agent]
    }

    /// Mean test loss over the agents' models, without the penalty.
    pub fn test_loss(&self, states: &DMatrix<T>) -> T {
        let rows: Vec<usize> = (0..self.test.len()).collect();
        let n = states.nrows();
        let total = (0..n).fold(T::zero(), |acc, i| {
            let x = states.row(i).transpose();
            acc + logistic_loss(&x, &self.test.features, &self.test.labels, &rows, T::zero())
        });
        total / T::from_usize_lossy(n)
    }
}

impl<T: Scalar> Task<T> for LogisticTask<T> {
    fn n_agents(&self) -> usize {
        self.shards.len()
    }

    fn dim(&self) -> usize {
        self.train.dim()
    }

    /// Minibatch drawn with replacement from the agent's shard.
    fn gradient(&self, agent: usize, x: &DVector<T>, rng: &mut ChaCha20Rng) -> DVector<T> {
        let shard = &self.shards[agent];
        let batch: Vec<usize> = (0..self.batch_size).map(|_| shard[rng.random_range(0..shard.len())]).collect();
        gradient_by_column(x, &self.train_columns, &self.train.labels, &batch, self.l2_reg)
    }

    fn metric_name(&self) -> &'static str {
        "test_loss"
    }

    fn metric(&self, states: &DMatrix<T>) -> T {
        self.test_loss(states)
    }
}
