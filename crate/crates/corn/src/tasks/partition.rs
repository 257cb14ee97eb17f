//! Label-skewed data partitioning with per-class Dirichlet proportions.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::rng::{keyed_rng, Domain};
use crate::{CornError, Result, Scalar};

pub const MAX_PARTITION_RETRIES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct DirichletPartition {
    pub alpha: f64,
    pub seed: u64,
    /// Agent of each sample.
    pub assignment: Vec<usize>,
    pub n_agents: usize,
    /// Draws needed until every shard was non-empty (1 = first draw).
    pub attempts: usize,
}

impl DirichletPartition {
    /// Sample indices per agent, ascending.
    pub fn shards(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_agents];
        for (i, &a) in self.assignment.iter().enumerate() {
            out[a].push(i);
        }
        out
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_agents];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

/// For each class, draws proportions `p ~ Dir(α·1)`, shuffles the class's
/// samples and cuts them at the cumulative proportions. Draws are repeated
/// with a new sub-seed until no shard is empty.
pub fn dirichlet_partition<T: Scalar>(labels: &[T], n_agents: usize, alpha: f64, seed: u64) -> Result<DirichletPartition> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CornError::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if n_agents == 0 {
        return Err(CornError::InvalidArgument("need at least one agent".into()));
    }
    if labels.len() < n_agents {
        return Err(CornError::InvalidArgument(format!(
            "{} samples cannot fill {n_agents} non-empty shards",
            labels.len()
        )));
    }
    let mut classes: Vec<T> = Vec::new();
    for &y in labels {
        if !classes.contains(&y) {
            classes.push(y);
        }
    }
    classes.sort_by(|a, b| a.partial_cmp(b).expect("finite labels"));
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| CornError::InvalidArgument(e.to_string()))?;

    for attempt in 0..MAX_PARTITION_RETRIES {
        let mut assignment = vec![0usize; labels.len()];
        for (c, class) in classes.iter().enumerate() {
            let mut rng = keyed_rng(seed, Domain::Partition, attempt as u64, c as u64);
            let mut props: Vec<f64> = (0..n_agents).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = props.iter().sum();
            props.iter_mut().for_each(|p| *p /= total);
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == *class).collect();
            members.shuffle(&mut rng);
            let m = members.len();
            let mut start = 0;
            let mut cum = 0.0;
            for (agent, p) in props.iter().enumerate() {
                cum += p;
                let end = if agent + 1 == n_agents { m } else { ((cum * m as f64).round() as usize).min(m) };
                for &i in &members[start..end.max(start)] {
                    assignment[i] = agent;
                }
                start = end.max(start);
            }
        }
        let part = DirichletPartition { alpha, seed, assignment, n_agents, attempts: attempt + 1 };
        if part.shard_sizes().iter().all(|&s| s > 0) {
            return Ok(part);
        }
    }
    Err(CornError::Infeasible(format!(
        "no partition without empty shards after {MAX_PARTITION_RETRIES} draws"
    )))
}
