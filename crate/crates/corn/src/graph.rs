//! Gossip topologies, mixing weights and Laplacians.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, Dyn, SymmetricEigen};
use rand::Rng;

use crate::rng::{keyed_rng, Domain};
use crate::{CornError, Result, Scalar};

/// Resampling budget for disconnected Erdős–Rényi draws.
pub const MAX_CONNECTIVITY_RETRIES: usize = 1000;

/// Undirected simple graph on agents `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    // Stored as (i, j) with i < j.
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(CornError::InvalidArgument("graph needs at least one agent".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(CornError::InvalidArgument(format!("edge ({i}, {j}) out of range for n={n}")));
            }
            if i == j {
                return Err(CornError::InvalidArgument(format!("self-loop at agent {i}")));
            }
            let key = (i.min(j), i.max(j));
            if !set.insert(key) {
                return Err(CornError::InvalidArgument(format!("duplicate edge ({}, {})", key.0, key.1)));
            }
        }
        Ok(Self { n, edges: set })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, [])
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(CornError::InvalidArgument("ring needs at least 3 agents".into()));
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    /// Star with agent 0 at the center.
    pub fn star(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (0, i)))
    }

    /// G(n, p) sample, resampled until connected.
    ///
    /// Attempt `k` draws every pair from the stream keyed by `(seed, k)`, so
    /// the result is a pure function of `(n, p, seed)`.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(CornError::InvalidArgument(format!("erdos_renyi needs n >= 2, got {n}")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(CornError::InvalidArgument(format!("edge probability {p} outside [0, 1]")));
        }
        for attempt in 0..MAX_CONNECTIVITY_RETRIES {
            let mut rng = keyed_rng(seed, Domain::Graph, attempt as u64, 0);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            let g = Self::new(n, edges)?;
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(CornError::Disconnected { n, p, retries: MAX_CONNECTIVITY_RETRIES })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// Breadth-first reachability from agent 0.
    pub fn is_connected(&self) -> bool {
        let adj = self.neighbors();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }
}

/// Rule for turning a graph into gossip weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MixingRule {
    /// `w_ij = 1 / (1 + max(deg_i, deg_j))`; always symmetric.
    #[default]
    MetropolisHastings,
    /// `w_ij = 1 / (deg_i + 1)`. Only doubly stochastic on regular graphs;
    /// irregular graphs are rejected.
    LocalDegree,
}

/// Doubly stochastic gossip matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrix<T: Scalar> {
    w: DMatrix<T>,
}

/// Tolerance on row and column sums of a mixing matrix.
pub fn stochastic_tolerance<T: Scalar>(n: usize) -> T {
    let floor = T::lit(1e-12);
    let scaled = T::eps() * T::from_usize_lossy(100 * n.max(1));
    if scaled > floor {
        scaled
    } else {
        floor
    }
}

impl<T: Scalar> MixingMatrix<T> {
    /// Validates that `w` is square and doubly stochastic.
    pub fn from_matrix(w: DMatrix<T>) -> Result<Self> {
        if !w.is_square() {
            return Err(CornError::Dimension(format!("mixing matrix is {}x{}", w.nrows(), w.ncols())));
        }
        let n = w.nrows();
        let mut deviation = 0.0f64;
        for k in 0..n {
            let r = w.row(k).sum() - T::one();
            let c = w.column(k).sum() - T::one();
            deviation = deviation.max(r.abs().as_f64()).max(c.abs().as_f64());
        }
        if deviation > stochastic_tolerance::<T>(n).as_f64() {
            return Err(CornError::NotDoublyStochastic { deviation });
        }
        Ok(Self { w })
    }

    /// Like [`from_matrix`](Self::from_matrix), but also rejects weight on
    /// pairs that are not edges of `g`.
    pub fn for_graph(w: DMatrix<T>, g: &Graph) -> Result<Self> {
        if w.nrows() != g.n() {
            return Err(CornError::Dimension(format!("{} agents vs {}x{} matrix", g.n(), w.nrows(), w.ncols())));
        }
        for i in 0..g.n() {
            for j in 0..g.n() {
                if i != j && !g.has_edge(i, j) && w[(i, j)] != T::zero() {
                    return Err(CornError::InvalidArgument(format!("weight on non-edge ({i}, {j})")));
                }
            }
        }
        Self::from_matrix(w)
    }

    pub fn identity(n: usize) -> Self {
        Self { w: DMatrix::identity(n, n) }
    }

    /// Uniform averaging `(1/n) 11ᵀ`.
    pub fn averaging(n: usize) -> Self {
        Self { w: DMatrix::from_element(n, n, T::one() / T::from_usize_lossy(n)) }
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.w
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.w
    }

    /// `WᵀW`.
    pub fn gram(&self) -> DMatrix<T> {
        self.w.transpose() * &self.w
    }

    /// Second largest eigenvalue of `WᵀW`.
    pub fn spectral_gap(&self) -> Result<T> {
        spectral_gap(self)
    }
}

/// Mixing matrix for `g` under `rule`; `g` must be connected.
pub fn mixing_matrix<T: Scalar>(g: &Graph, rule: MixingRule) -> Result<MixingMatrix<T>> {
    if !g.is_connected() {
        return Err(CornError::NotConnected);
    }
    let n = g.n();
    let deg = g.degrees();
    let mut w = DMatrix::<T>::zeros(n, n);
    for (i, j) in g.edges() {
        match rule {
            MixingRule::MetropolisHastings => {
                let v = T::one() / T::from_usize_lossy(1 + deg[i].max(deg[j]));
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
            MixingRule::LocalDegree => {
                w[(i, j)] = T::one() / T::from_usize_lossy(deg[i] + 1);
                w[(j, i)] = T::one() / T::from_usize_lossy(deg[j] + 1);
            }
        }
    }
    for i in 0..n {
        let off: T = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).fold(T::zero(), |a, b| a + b);
        w[(i, i)] = T::one() - off;
    }
    MixingMatrix::for_graph(w, g)
}

/// Symmetric Metropolis–Hastings weights.
pub fn metropolis_hastings<T: Scalar>(g: &Graph) -> Result<MixingMatrix<T>> {
    mixing_matrix(g, MixingRule::MetropolisHastings)
}

/// Graph Laplacian `Σ_(i,j)∈E (e_i − e_j)(e_i − e_j)ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianMatrix<T: Scalar> {
    l: DMatrix<T>,
}

impl<T: Scalar> LaplacianMatrix<T> {
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.l
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }
}

pub fn laplacian<T: Scalar>(g: &Graph) -> LaplacianMatrix<T> {
    let n = g.n();
    let mut l = DMatrix::<T>::zeros(n, n);
    for (i, j) in g.edges() {
        l[(i, i)] += T::one();
        l[(j, j)] += T::one();
        l[(i, j)] -= T::one();
        l[(j, i)] -= T::one();
    }
    LaplacianMatrix { l }
}

/// Second largest eigenvalue of `WᵀW` (0 when `n == 1`).
pub fn spectral_gap<T: Scalar>(w: &MixingMatrix<T>) -> Result<T> {
    let eig = sorted_eigenvalues(&w.gram())?;
    Ok(if eig.len() < 2 { T::zero() } else { eig[eig.len() - 2] })
}

/// Symmetric eigendecomposition with one refinement pass.
///
/// The second pass diagonalizes `VᵀMV`, which recovers accuracy lost to
/// clustered eigenvalues in the first.
pub fn symmetric_eigen<T: Scalar>(m: &DMatrix<T>) -> Result<SymmetricEigen<T, Dyn>> {
    let first = m
        .clone()
        .try_symmetric_eigen(T::eps(), 10_000)
        .ok_or(CornError::EigenNonConvergence)?;
    let v = first.eigenvectors;
    let inner = v.transpose() * m * &v;
    let mut eig = ((&inner + inner.transpose()) * T::lit(0.5))
        .try_symmetric_eigen(T::eps(), 10_000)
        .ok_or(CornError::EigenNonConvergence)?;
    eig.eigenvectors = v * eig.eigenvectors;
    Ok(eig)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Result<Vec<T>> {
    let eig = symmetric_eigen(m)?;
    let mut vals: Vec<T> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn graph_rejects_bad_edges() {
        assert!(Graph::new(3, [(0, 0)]).is_err());
        assert!(Graph::new(3, [(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(3, [(0, 3)]).is_err());
        assert!(Graph::new(0, []).is_err());
    }

    #[test]
    fn connectivity() {
        assert!(Graph::path(5).unwrap().is_connected());
        assert!(!Graph::new(4, [(0, 1), (2, 3)]).unwrap().is_connected());
        assert!(Graph::empty(1).unwrap().is_connected());
    }

    #[test]
    fn er_full_probability_is_complete() {
        for seed in 0..5 {
            let g = Graph::erdos_renyi(3, 1.0, seed).unwrap();
            assert_eq!(g.edge_count(), 3);
        }
    }

    #[test]
    fn er_n20_connected() {
        let g = Graph::erdos_renyi(20, 0.5, 7).unwrap();
        assert_eq!(g.n(), 20);
        assert!(g.is_connected());
    }

    #[test]
    fn er_reproducible() {
        let a = Graph::erdos_renyi(10, 0.3, 1).unwrap();
        let b = Graph::erdos_renyi(10, 0.3, 1).unwrap();
        assert_eq!(a, b);
        assert!((9..=45).contains(&a.edge_count()));
    }

    #[test]
    fn er_zero_probability_fails_with_context() {
        match Graph::erdos_renyi(4, 0.0, 3) {
            Err(CornError::Disconnected { n, retries, .. }) => {
                assert_eq!(n, 4);
                assert_eq!(retries, MAX_CONNECTIVITY_RETRIES);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Graph::erdos_renyi(1, 0.5, 0).is_err());
        assert!(Graph::erdos_renyi(4, 1.5, 0).is_err());
    }

    #[test]
    fn mh_two_node_path() {
        let w = metropolis_hastings::<f64>(&Graph::path(2).unwrap()).unwrap();
        assert_eq!(w.matrix(), &DMatrix::from_element(2, 2, 0.5));
    }

    #[test]
    fn mh_triangle_and_complete() {
        for n in [3usize, 5, 8] {
            let w = metropolis_hastings::<f64>(&Graph::complete(n).unwrap()).unwrap();
            for v in w.matrix().iter() {
                assert!(approx(*v, 1.0 / n as f64, 1e-15));
            }
        }
    }

    #[test]
    fn mh_rejects_disconnected() {
        let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(metropolis_hastings::<f64>(&g), Err(CornError::NotConnected)));
    }

    #[test]
    fn local_degree_rule_regular_vs_irregular() {
        let ring = Graph::ring(6).unwrap();
        let a = mixing_matrix::<f64>(&ring, MixingRule::LocalDegree).unwrap();
        let b = mixing_matrix::<f64>(&ring, MixingRule::MetropolisHastings).unwrap();
        assert_eq!(a, b);
        let star = Graph::star(4).unwrap();
        assert!(matches!(
            mixing_matrix::<f64>(&star, MixingRule::LocalDegree),
            Err(CornError::NotDoublyStochastic { .. })
        ));
    }

    #[test]
    fn laplacian_examples() {
        let l = laplacian::<f64>(&Graph::path(2).unwrap());
        assert_eq!(l.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let l = laplacian::<f64>(&Graph::complete(3).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(l.matrix()[(i, j)], if i == j { 2.0 } else { -1.0 });
            }
        }
        assert_eq!(laplacian::<f64>(&Graph::empty(4).unwrap()).matrix(), &DMatrix::zeros(4, 4));
    }

    #[test]
    fn spectral_gap_rank_one_cases() {
        let w = metropolis_hastings::<f64>(&Graph::complete(6).unwrap()).unwrap();
        assert!(spectral_gap(&w).unwrap().abs() < 1e-12);
        let w = metropolis_hastings::<f64>(&Graph::path(2).unwrap()).unwrap();
        assert!(spectral_gap(&w).unwrap().abs() < 1e-12);
    }

    #[test]
    fn spectral_gap_ring4_matches_characteristic_roots() {
        // Ring of 4 under MH weights is circulant with first row (1/3, 1/3, 0, 1/3).
        // Eigenvalues of W are 1/3 + (2/3) cos(2πk/4) = {1, 1/3, -1/3, 1/3};
        // WᵀW = W² has eigenvalues {1, 1/9, 1/9, 1/9}.
        let w = metropolis_hastings::<f64>(&Graph::ring(4).unwrap()).unwrap();
        let gap = spectral_gap(&w).unwrap();
        assert!(approx(gap, 1.0 / 9.0, 1e-12), "{gap}");
    }

    #[test]
    fn works_in_f32() {
        let w = metropolis_hastings::<f32>(&Graph::ring(5).unwrap()).unwrap();
        let gap = spectral_gap(&w).unwrap();
        assert!(gap < 1.0 && gap > 0.0);
    }
}
