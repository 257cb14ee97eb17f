//! Synchronous DSGD simulation with clipping and shared-seed correlated noise.
//!
//! One round is `X ← W·(X − η_t·(clip(G) + V))` where row `i` of `X` is agent
//! `i`'s parameter and column `k` of `V` is an independent draw `F·s` keyed by
//! `(seed, t, k)`. Gradient draws are keyed by `(seed, agent, t)` so runs that
//! differ only in their noise see identical data.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::covariance::{factorize, CovarianceFactor};
use crate::graph::{laplacian, Graph, MixingMatrix};
use crate::optimizer::{solve_cov_with, Cap, CovDesignProblem, SolverOptions, Structure};
use crate::privacy::ConstraintLevel;
use crate::rng::{keyed_rng, Domain};
use crate::tasks::Task;
use crate::{CornError, Result, Scalar};

/// Largest number of metric records per run (plus the initial one).
pub const MAX_RECORDS: u64 = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// No privacy noise.
    Dsgd,
    /// Independent noise `σ²·I`.
    Ldp,
    /// Pairwise edge noise `σ_pair²·I + σ_cor²·L`.
    Decor,
    /// Optimized full covariance.
    Corn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Dsgd, Algorithm::Ldp, Algorithm::Decor, Algorithm::Corn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dsgd => "dsgd",
            Self::Ldp => "ldp",
            Self::Decor => "decor",
            Self::Corn => "corn",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = CornError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CornError::InvalidArgument(format!("unknown algorithm {s:?} (expected dsgd, ldp, decor or corn)")))
    }
}

/// Noise covariance an algorithm injects on `graph` at level `κ`.
///
/// `None` for noise-free DSGD. DECOR and CorN solve their design problem
/// with the given cap.
pub fn algorithm_covariance<T: Scalar>(
    algorithm: Algorithm,
    graph: &Graph,
    mixing: &MixingMatrix<T>,
    kappa: ConstraintLevel<T>,
    cap: Cap<T>,
    opts: &SolverOptions<T>,
) -> Result<Option<DMatrix<T>>> {
    let n = mixing.n();
    if graph.n() != n {
        return Err(CornError::Dimension(format!("graph has {} agents, W is {n}x{n}", graph.n())));
    }
    let structure = match algorithm {
        Algorithm::Dsgd => return Ok(None),
        Algorithm::Ldp => return Ok(Some(DMatrix::identity(n, n) / kappa.value())),
        Algorithm::Decor => Structure::Pairwise(laplacian(graph)),
        Algorithm::Corn => Structure::General,
    };
    let problem = CovDesignProblem::new(mixing.clone(), kappa, structure).with_cap(cap);
    Ok(Some(solve_cov_with(&problem, opts)?.r_star))
}

/// [`algorithm_covariance`] as a sampling factor.
pub fn algorithm_noise<T: Scalar>(
    algorithm: Algorithm,
    graph: &Graph,
    mixing: &MixingMatrix<T>,
    kappa: ConstraintLevel<T>,
    cap: Cap<T>,
    opts: &SolverOptions<T>,
) -> Result<CovarianceFactor<T>> {
    match algorithm_covariance(algorithm, graph, mixing, kappa, cap, opts)? {
        Some(r) => factorize(&r),
        None => Ok(CovarianceFactor::zero(mixing.n())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule<T> {
    Constant(T),
    /// `η_t = η₁/√t`, `t ≥ 1`.
    InvSqrt { eta1: T },
}

impl<T: Scalar> StepSchedule<T> {
    /// Step size of round `t` (1-based).
    pub fn eta(&self, t: u64) -> T {
        match *self {
            Self::Constant(eta) => eta,
            Self::InvSqrt { eta1 } => eta1 / T::lit(t.max(1) as f64).sqrt(),
        }
    }

    fn first(&self) -> T {
        self.eta(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig<T: Scalar> {
    pub mixing: MixingMatrix<T>,
    pub noise: CovarianceFactor<T>,
    pub iterations: u64,
    pub clip: T,
    pub step: StepSchedule<T>,
    pub seed: u64,
}

impl<T: Scalar> RunConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(CornError::InvalidArgument("T must be at least 1".into()));
        }
        if !(self.clip > T::zero()) {
            return Err(CornError::InvalidArgument(format!("clipping threshold must be positive, got {}", self.clip)));
        }
        if !(self.step.first() > T::zero()) {
            return Err(CornError::InvalidArgument("step size must be positive".into()));
        }
        if self.noise.n() != self.mixing.n() {
            return Err(CornError::Dimension(format!(
                "noise factor is {0}x{0}, W is {1}x{1}",
                self.noise.n(),
                self.mixing.n()
            )));
        }
        Ok(())
    }

    /// Metric recording period `max(1, T/500)`.
    pub fn record_every(&self) -> u64 {
        (self.iterations / MAX_RECORDS).max(1)
    }
}

/// Iterations at which metrics are recorded: `0, k, 2k, …` and always `T`.
pub fn record_schedule(iterations: u64) -> Vec<u64> {
    let every = (iterations / MAX_RECORDS).max(1);
    let mut out: Vec<u64> = (0..=iterations).step_by(every as usize).collect();
    if out.last() != Some(&iterations) {
        out.push(iterations);
    }
    out
}

/// Scales `g` onto the ball of radius `c` if it lies outside.
pub fn clip<T: Scalar>(g: &DVector<T>, c: T) -> DVector<T> {
    let norm = g.norm();
    if norm > c {
        g * (c / norm)
    } else {
        g.clone()
    }
}

/// `W·(X − η·G)`.
pub fn dsgd_step<T: Scalar>(states: &DMatrix<T>, gradients: &DMatrix<T>, w: &MixingMatrix<T>, eta: T) -> DMatrix<T> {
    w.matrix() * (states - gradients * eta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState<T: Scalar> {
    pub agent_id: usize,
    pub x: DVector<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record<T> {
    /// Completed rounds.
    pub iteration: u64,
    pub metric: T,
    /// `(1/n) Σ_i ‖x_i − x̄‖²`.
    pub consensus_error: T,
    /// `‖η_t·W·V‖²` of the round that produced this state.
    pub noise_energy: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub metric_name: &'static str,
    pub records: Vec<Record<T>>,
    pub final_states: DMatrix<T>,
}

/// Row labels attached to every exported trajectory row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvContext<'a> {
    pub seed: u64,
    pub algorithm: &'a str,
    pub epsilon: f64,
    /// Edge probability; empty in the CSV for fixed topologies.
    pub p: Option<f64>,
    pub config_hash: &'a str,
}

pub const TRAJECTORY_HEADER: &str = "iteration,metric_name,value,seed,algorithm,epsilon,p,config_hash";

impl<T: Scalar> Trajectory<T> {
    pub fn final_metric(&self) -> T {
        self.records.last().map(|r| r.metric).unwrap_or_else(T::zero)
    }

    pub fn final_agents(&self) -> Vec<AgentState<T>> {
        (0..self.final_states.nrows())
            .map(|i| AgentState { agent_id: i, x: self.final_states.row(i).transpose() })
            .collect()
    }

    /// Long format, three rows per record.
    pub fn write_csv<W: Write>(&self, mut out: W, ctx: &CsvContext<'_>) -> Result<()> {
        writeln!(out, "{TRAJECTORY_HEADER}")?;
        let p = ctx.p.map(|p| p.to_string()).unwrap_or_default();
        for r in &self.records {
            for (name, value) in [
                (self.metric_name, r.metric),
                ("consensus_error", r.consensus_error),
                ("noise_energy", r.noise_energy),
            ] {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.iteration, name, value, ctx.seed, ctx.algorithm, ctx.epsilon, p, ctx.config_hash
                )?;
            }
        }
        Ok(())
    }
}

fn consensus_error<T: Scalar>(x: &DMatrix<T>) -> T {
    let n = x.nrows();
    let mean = x.row_mean();
    let mut total = T::zero();
    for i in 0..n {
        total += (x.row(i) - &mean).norm_squared();
    }
    total / T::from_usize_lossy(n.max(1))
}

/// A run in progress. Exposed for diagnostics that need every round.
pub struct Simulation<'a, T: Scalar> {
    cfg: &'a RunConfig<T>,
    task: &'a dyn Task<T>,
    states: DMatrix<T>,
    t: u64,
    silent: bool,
}

/// What one round did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo<T> {
    pub eta: T,
    /// `‖X_{t+1} − X_t‖²`.
    pub displacement: T,
    pub noise_energy: T,
}

impl<'a, T: Scalar> Simulation<'a, T> {
    pub fn new(cfg: &'a RunConfig<T>, task: &'a dyn Task<T>) -> Result<Self> {
        cfg.validate()?;
        if task.n_agents() != cfg.mixing.n() {
            return Err(CornError::Dimension(format!("task has {} agents, W is {}x{}", task.n_agents(), cfg.mixing.n(), cfg.mixing.n())));
        }
        let states = task.initial_state();
        if states.nrows() != task.n_agents() || states.ncols() != task.dim() {
            return Err(CornError::Dimension("initial state does not match the task".into()));
        }
        let silent = cfg.noise.matrix().iter().all(|v| *v == T::zero());
        Ok(Self { cfg, task, states, t: 0, silent })
    }

    pub fn states(&self) -> &DMatrix<T> {
        &self.states
    }

    /// Completed rounds.
    pub fn iteration(&self) -> u64 {
        self.t
    }

    /// Clipped gradients of round `t`, one row per agent.
    fn clipped_gradients(&self, t: u64) -> DMatrix<T> {
        let (n, d) = (self.states.nrows(), self.states.ncols());
        let mut g = DMatrix::zeros(n, d);
        for i in 0..n {
            let mut rng = keyed_rng(self.cfg.seed, Domain::Gradient, i as u64, t);
            let x = self.states.row(i).transpose();
            let gi = clip(&self.task.gradient(i, &x, &mut rng), self.cfg.clip);
            g.set_row(i, &gi.transpose());
        }
        g
    }

    /// Privacy noise of round `t`, column `k` for coordinate `k`.
    pub fn noise(&self, t: u64) -> DMatrix<T> {
        let (n, d) = (self.states.nrows(), self.states.ncols());
        let mut v = DMatrix::zeros(n, d);
        if !self.silent {
            for k in 0..d {
                v.set_column(k, &self.cfg.noise.sample(self.cfg.seed, t, k as u64));
            }
        }
        v
    }

    pub fn step(&mut self) -> Result<StepInfo<T>> {
        let t = self.t;
        let eta = self.cfg.step.eta(t + 1);
        let g = self.clipped_gradients(t);
        let v = self.noise(t);
        let next = dsgd_step(&self.states, &(g + &v), &self.cfg.mixing, eta);
        for i in 0..next.nrows() {
            if next.row(i).iter().any(|x| !x.is_finite()) {
                return Err(CornError::NonFinite { iteration: t as usize, agent: i });
            }
        }
        let noise_energy = if self.silent {
            T::zero()
        } else {
            (self.cfg.mixing.matrix() * &v * eta).norm_squared()
        };
        let displacement = (&next - &self.states).norm_squared();
        self.states = next;
        self.t += 1;
        Ok(StepInfo { eta, displacement, noise_energy })
    }
}

/// Runs `cfg.iterations` rounds of `task`.
pub fn corn_dsgd_run<T: Scalar>(cfg: &RunConfig<T>, task: &dyn Task<T>) -> Result<Trajectory<T>> {
    let mut sim = Simulation::new(cfg, task)?;
    let schedule = record_schedule(cfg.iterations);
    let mut records = Vec::with_capacity(schedule.len());
    let mut next = schedule.iter().copied().peekable();
    let record = |sim: &Simulation<'_, T>, noise_energy: T, records: &mut Vec<Record<T>>| {
        records.push(Record {
            iteration: sim.iteration(),
            metric: task.metric(sim.states()),
            consensus_error: consensus_error(sim.states()),
            noise_energy,
        });
    };
    if next.peek() == Some(&0) {
        record(&sim, T::zero(), &mut records);
        next.next();
    }
    while sim.iteration() < cfg.iterations {
        let info = sim.step()?;
        if next.peek() == Some(&sim.iteration()) {
            record(&sim, info.noise_energy, &mut records);
            next.next();
        }
    }
    Ok(Trajectory { metric_name: task.metric_name(), records, final_states: sim.states })
}

/// Empirical terms of `E‖x̃⁺ − x̃‖² = E‖x̂⁺ − x̃‖² + η²·Tr(W R Wᵀ)` at one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomposition<T> {
    /// `‖x̂⁺ − x̃‖²` with `x̂⁺ = W(x̃ − η·ĝ)`; deterministic given the state.
    pub noise_free_error: T,
    /// Mean of `‖η·W·v‖²` over the redraws.
    pub noise_variance: T,
    /// Mean of `‖x̃⁺ − x̃‖²` over the redraws.
    pub total: T,
    /// `d·η²·Tr(W R Wᵀ)`.
    pub predicted_noise_variance: T,
    pub eta: T,
}

impl<T: Scalar> Decomposition<T> {
    /// `|total − (noise_free + predicted)| / total`.
    pub fn relative_residual(&self) -> T {
        (self.total - self.noise_free_error - self.predicted_noise_variance).abs() / self.total.max(T::eps())
    }
}

/// Runs up to round `t_probe`, then redraws that round's noise `redraws` times
/// from a separate key space while keeping gradients fixed.
pub fn variance_decomposition_probe<T: Scalar>(
    cfg: &RunConfig<T>,
    task: &dyn Task<T>,
    t_probe: u64,
    redraws: usize,
) -> Result<Decomposition<T>> {
    if redraws == 0 {
        return Err(CornError::InvalidArgument("need at least one redraw".into()));
    }
    let mut sim = Simulation::new(cfg, task)?;
    while sim.iteration() < t_probe {
        sim.step()?;
    }
    let eta = cfg.step.eta(t_probe + 1);
    let x = sim.states().clone();
    let g = sim.clipped_gradients(t_probe);
    let w = cfg.mixing.matrix();
    let x_hat = dsgd_step(&x, &g, &cfg.mixing, eta);
    let noise_free_error = (&x_hat - &x).norm_squared();
    let (n, d) = (x.nrows(), x.ncols());
    let mut noise_sum = T::zero();
    let mut total_sum = T::zero();
    let mut v = DMatrix::zeros(n, d);
    for r in 0..redraws {
        for k in 0..d {
            let key = (r * d + k) as u64;
            v.set_column(k, &cfg.noise.sample_keyed(cfg.seed, Domain::Probe, t_probe, key));
        }
        let wv = w * &v * eta;
        noise_sum += wv.norm_squared();
        total_sum += (&x_hat - &wv - &x).norm_squared();
    }
    let count = T::from_usize_lossy(redraws);
    let r = cfg.noise.covariance();
    let trace = (w * r * w.transpose()).trace();
    Ok(Decomposition {
        noise_free_error,
        noise_variance: noise_sum / count,
        total: total_sum / count,
        predicted_noise_variance: eta * eta * trace * T::from_usize_lossy(d),
        eta,
    })
}
