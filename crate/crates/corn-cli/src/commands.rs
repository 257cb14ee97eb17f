//! Subcommand implementations. Each returns the process exit code.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use corn::covariance::effective_variance;
use corn::graph::{laplacian, mixing_matrix, MixingRule};
use corn::io::{read_edge_list, read_matrix_csv, write_matrix_csv};
use corn::optimizer::{
    kkt_report, kkt_report_hbc, solve_cov_hbc_with, solve_cov_with, CovSolution, HbcThreatModel, SolverOptions,
};
use corn::privacy::verify_budget;
use corn::{CovDesignProblem, Graph, MixingMatrix, PrivacyBudget, Structure};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{parse_cap, parse_groups};
use crate::experiment::{run_experiment, verify_summary, Cell, Experiment};
use crate::svg::{LineChart, Series};
use crate::write_atomic;

/// Budget check failed.
pub const EXIT_BUDGET_FAIL: u8 = 3;
/// Some experiment cells failed; everything else was written.
pub const EXIT_INCOMPLETE: u8 = 4;
/// The summary does not match the per-run files.
pub const EXIT_VERIFY_FAIL: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TopologyArg {
    ErdosRenyi,
    Complete,
    Ring,
    Path,
    Star,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MixingArg {
    MetropolisHastings,
    LocalDegree,
}

#[derive(Clone, Debug, Args)]
pub struct GraphArgs {
    /// Edge list file (first line n, then "i j" per edge). Overrides --topology.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "erdos-renyi")]
    pub topology: TopologyArg,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Edge probability for erdos-renyi.
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub graph_seed: u64,
    #[arg(long, value_enum, default_value = "metropolis-hastings")]
    pub mixing: MixingArg,
}

impl GraphArgs {
    pub fn build(&self) -> Result<(Graph, MixingMatrix<f64>)> {
        let g = match &self.graph {
            Some(path) => {
                let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                read_edge_list(BufReader::new(f))?
            }
            None => match self.topology {
                TopologyArg::ErdosRenyi => Graph::erdos_renyi(self.n, self.p, self.graph_seed)?,
                TopologyArg::Complete => Graph::complete(self.n)?,
                TopologyArg::Ring => Graph::ring(self.n)?,
                TopologyArg::Path => Graph::path(self.n)?,
                TopologyArg::Star => Graph::star(self.n)?,
            },
        };
        let rule = match self.mixing {
            MixingArg::MetropolisHastings => MixingRule::MetropolisHastings,
            MixingArg::LocalDegree => MixingRule::LocalDegree,
        };
        let w = mixing_matrix(&g, rule)?;
        Ok((g, w))
    }
}

#[derive(Clone, Debug, Args)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = 10.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// Iterations.
    #[arg(long = "T", default_value_t = 5000)]
    pub iterations: u64,
    /// Clipping threshold.
    #[arg(long = "C", default_value_t = 0.1)]
    pub clip: f64,
}

impl BudgetArgs {
    pub fn budget(&self) -> Result<PrivacyBudget<f64>> {
        Ok(PrivacyBudget::new(self.eps, self.delta, self.iterations, self.clip)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StructureArg {
    General,
    Pairwise,
    Ldp,
}

#[derive(Clone, Debug, Args)]
pub struct OptimizeCovArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, value_enum, default_value = "general")]
    pub structure: StructureArg,
    /// Diagonal cap: "default" (100/kappa), "none" or a variance.
    #[arg(long, default_value = "default")]
    pub cap: String,
    /// Seed groups file (one group of agent indices per line). Enables the
    /// honest-but-curious model for the general structure.
    #[arg(long)]
    pub hbc_groups: Option<PathBuf>,
    /// Largest colluding coalition for the honest-but-curious model.
    #[arg(long)]
    pub q: Option<usize>,
    /// Directory for r_star.csv and cov_summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct CovSummary {
    pub structure: String,
    pub n: usize,
    pub kappa: f64,
    pub objective: f64,
    pub sigma_mix2: f64,
    pub sigma_cor2: Option<f64>,
    pub kkt_residual: f64,
    pub primal_violation: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub cap: Option<f64>,
    pub cap_active: bool,
    pub iterations: usize,
    pub max_inverse_diagonal: f64,
    pub epsilon_bound: f64,
    pub budget_passed: bool,
}

/// Solves the design problem described by the flags.
pub fn optimize_cov(args: &OptimizeCovArgs) -> Result<(CovSolution<f64>, CovSummary)> {
    let (g, w) = args.graph.build()?;
    let budget = args.budget.budget()?;
    let kappa = budget.kappa();
    let cap = parse_cap(&args.cap)?;
    let opts = SolverOptions::default();
    let hbc = match (&args.hbc_groups, args.q) {
        (None, None) => None,
        (groups, q) => {
            if args.structure != StructureArg::General {
                bail!("the honest-but-curious model needs --structure general");
            }
            let groups = match groups {
                Some(path) => parse_groups(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
                None => vec![(0..w.n()).collect()],
            };
            Some(HbcThreatModel::new(groups, q.unwrap_or(0)))
        }
    };
    let structure = match args.structure {
        StructureArg::General => Structure::General,
        StructureArg::Pairwise => Structure::Pairwise(laplacian(&g)),
        StructureArg::Ldp => Structure::Scalar,
    };
    let problem = CovDesignProblem::new(w.clone(), kappa, structure).with_cap(cap);
    let (sol, kkt) = match &hbc {
        Some(threat) => {
            let sol = solve_cov_hbc_with(&w, kappa, threat, cap, &opts)?;
            let kkt = kkt_report_hbc(&sol, &w, kappa, threat, cap)?;
            (sol, kkt)
        }
        None => {
            let sol = solve_cov_with(&problem, &opts)?;
            let kkt = kkt_report(&sol, &problem)?;
            (sol, kkt)
        }
    };
    let report = verify_budget(&sol.r_star, &budget)?;
    let summary = CovSummary {
        structure: sol.structure.to_string(),
        n: w.n(),
        kappa: kappa.value(),
        objective: sol.objective,
        sigma_mix2: sol.sigma_mix2,
        sigma_cor2: sol.sigma_cor2,
        kkt_residual: kkt.max_residual,
        primal_violation: kkt.primal_violation,
        stationarity: kkt.stationarity,
        complementarity: kkt.complementarity,
        cap: problem.cap_value(),
        cap_active: sol.cap_active,
        iterations: sol.iterations,
        max_inverse_diagonal: report.inverse_diagonal.iter().copied().fold(0.0, f64::max),
        epsilon_bound: report.epsilon_bound,
        budget_passed: report.passed,
    };
    Ok((sol, summary))
}

pub fn cmd_optimize_cov(args: &OptimizeCovArgs, root: &Path) -> Result<ExitCode> {
    let (sol, summary) = optimize_cov(args)?;
    let dir = args.out.clone().unwrap_or_else(|| root.to_path_buf());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut csv = Vec::new();
    write_matrix_csv(&sol.r_star, &mut csv)?;
    write_atomic(&dir.join("r_star.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&summary)?;
    write_atomic(&dir.join("cov_summary.json"), json.as_bytes())?;
    writeln!(io::stdout().lock(), "{json}")?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    Eps,
    P,
    N,
}

impl SweepArg {
    fn name(self) -> &'static str {
        match self {
            Self::Eps => "epsilon",
            Self::P => "p",
            Self::N => "n",
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct CompareTracesArgs {
    #[arg(long, value_enum)]
    pub sweep: SweepArg,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Base agent count (erdos-renyi graphs).
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Comma-separated graph seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "default")]
    pub cap: String,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Directory for traces.csv and traces.svg.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub value: f64,
    pub seed: u64,
    pub structure: &'static str,
    pub trace: Option<f64>,
    pub error: Option<String>,
}

pub const TRACE_HEADER: &str = "sweep,value,seed,structure,trace,error";
pub const TRACE_STRUCTURES: [&str; 3] = ["general", "pairwise", "ldp"];

fn trace_point(args: &CompareTracesArgs, value: f64, seed: u64) -> Result<Vec<(&'static str, Result<f64>)>> {
    let (mut n, mut p, mut eps) = (args.n, args.p, args.budget.eps);
    match args.sweep {
        SweepArg::Eps => eps = value,
        SweepArg::P => p = value,
        SweepArg::N => {
            if value < 2.0 || value.fract() != 0.0 {
                bail!("agent count {value} is not an integer >= 2");
            }
            n = value as usize;
        }
    }
    let g = Graph::erdos_renyi(n, p, seed)?;
    let w: MixingMatrix<f64> = corn::graph::metropolis_hastings(&g)?;
    let budget = PrivacyBudget::new(eps, args.budget.delta, args.budget.iterations, args.budget.clip)?;
    let cap = parse_cap(&args.cap)?;
    let opts = SolverOptions::default();
    let solve = |s: Structure<f64>| -> Result<f64> {
        let problem = CovDesignProblem::new(w.clone(), budget.kappa(), s).with_cap(cap);
        Ok(solve_cov_with(&problem, &opts)?.objective)
    };
    let ldp = effective_variance(&w, &(nalgebra::DMatrix::identity(n, n) / budget.kappa().value())).map_err(Into::into);
    Ok(vec![
        ("general", solve(Structure::General)),
        ("pairwise", solve(Structure::Pairwise(laplacian(&g)))),
        ("ldp", ldp),
    ])
}

/// Solves the three structures at every (value, seed) grid point.
pub fn compare_traces(args: &CompareTracesArgs) -> Vec<TraceRow> {
    let points: Vec<(f64, u64)> = args.values.iter().flat_map(|&v| args.seeds.iter().map(move |&s| (v, s))).collect();
    let per_point: Vec<Vec<TraceRow>> = points
        .par_iter()
        .map(|&(value, seed)| match trace_point(args, value, seed) {
            Ok(results) => results
                .into_iter()
                .map(|(structure, r)| match r {
                    Ok(t) => TraceRow { value, seed, structure, trace: Some(t), error: None },
                    Err(e) => TraceRow { value, seed, structure, trace: None, error: Some(format!("{e:#}")) },
                })
                .collect(),
            Err(e) => TRACE_STRUCTURES
                .iter()
                .map(|s| TraceRow { value, seed, structure: s, trace: None, error: Some(format!("{e:#}")) })
                .collect(),
        })
        .collect();
    per_point.into_iter().flatten().collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn traces_csv(sweep: SweepArg, rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            sweep.name(),
            r.value,
            r.seed,
            r.structure,
            r.trace.map(|t| t.to_string()).unwrap_or_default(),
            csv_field(r.error.as_deref().unwrap_or(""))
        ));
    }
    out
}

pub fn traces_chart(sweep: SweepArg, rows: &[TraceRow]) -> LineChart {
    let mut values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let series = TRACE_STRUCTURES
        .iter()
        .map(|s| {
            let points = values
                .iter()
                .filter_map(|&v| {
                    let t: Vec<f64> = rows.iter().filter(|r| r.structure == *s && r.value == v).filter_map(|r| r.trace).collect();
                    (!t.is_empty()).then(|| (v, t.iter().sum::<f64>() / t.len() as f64))
                })
                .collect();
            Series { name: s.to_string(), points }
        })
        .collect();
    LineChart {
        title: format!("Tr(W R Wᵀ) vs {}", sweep.name()),
        x_label: sweep.name().to_string(),
        y_label: "trace".into(),
        series,
    }
}

pub fn cmd_compare_traces(args: &CompareTracesArgs, root: &Path) -> Result<ExitCode> {
    let rows = with_jobs(args.jobs, || compare_traces(args))?;
    let dir = args.out.clone().unwrap_or_else(|| root.to_path_buf());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = traces_csv(args.sweep, &rows);
    write_atomic(&dir.join("traces.csv"), csv.as_bytes())?;
    write_atomic(&dir.join("traces.svg"), traces_chart(args.sweep, &rows).render().as_bytes())?;
    print!("{csv}");
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} solves failed; see the error column");
    }
    Ok(ExitCode::SUCCESS)
}

fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let jobs = jobs.unwrap_or_else(default_jobs).max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(f))
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Clone, Debug, Args)]
pub struct AccountantArgs {
    /// Covariance matrix as CSV.
    #[arg(long)]
    pub cov: PathBuf,
    #[command(flatten)]
    pub budget: BudgetArgs,
}

pub fn cmd_accountant(args: &AccountantArgs) -> Result<ExitCode> {
    let f = fs::File::open(&args.cov).with_context(|| format!("opening {}", args.cov.display()))?;
    let r: nalgebra::DMatrix<f64> = read_matrix_csv(BufReader::new(f))?;
    let budget = args.budget.budget()?;
    let report = verify_budget(&r, &budget)?;
    let mut out = io::stdout().lock();
    writeln!(out, "kappa {}", report.kappa)?;
    writeln!(out, "agent,inverse_diagonal,slack")?;
    for (i, (d, s)) in report.inverse_diagonal.iter().zip(&report.slack).enumerate() {
        writeln!(out, "{i},{d},{s}")?;
    }
    writeln!(out, "per_step_rdp {}", report.per_step_rdp)?;
    writeln!(out, "epsilon_bound {} (target {})", report.epsilon_bound, budget.epsilon)?;
    if report.passed {
        writeln!(out, "PASS")?;
        Ok(ExitCode::SUCCESS)
    } else {
        writeln!(out, "FAIL: max violation {}", report.max_violation())?;
        Ok(ExitCode::from(EXIT_BUDGET_FAIL))
    }
}

#[derive(Clone, Debug, Args)]
pub struct RunExperimentArgs {
    pub config: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

pub fn cmd_run_experiment(args: &RunExperimentArgs, root: &Path) -> Result<ExitCode> {
    let exp = Experiment::load(&args.config)?;
    let outcome = run_experiment(&exp, root, args.jobs.unwrap_or_else(default_jobs))?;
    let mut out = io::stdout().lock();
    writeln!(out, "{}", outcome.dir.display())?;
    for r in outcome.rows.iter().filter(|r| r.selected) {
        writeln!(
            out,
            "{:>6} eps={} p={} eta={} mean={:.6e} std={:.3e}",
            r.algorithm.name(),
            r.epsilon,
            r.p.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
            r.eta,
            r.mean,
            r.std
        )?;
    }
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for (cell, e) in &outcome.failures {
            eprintln!("failed: {}: {e}", cell.file_name());
        }
        Ok(ExitCode::from(EXIT_INCOMPLETE))
    }
}

#[derive(Clone, Debug, Args)]
pub struct SimulateArgs {
    /// Experiment config (TOML, or the config.json of a run directory).
    pub config: PathBuf,
    /// Defaults to the first entry of each grid.
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Trajectory CSV destination (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Picks a single cell of the config's grid.
pub fn simulate_cell(exp: &Experiment, args: &SimulateArgs) -> Result<Cell> {
    let cfg = &exp.config;
    let algorithm = match &args.algorithm {
        Some(a) => a.parse()?,
        None => cfg.algorithms()?[0],
    };
    let p = match cfg.p_grid()[0] {
        Some(first) => Some(args.p.unwrap_or(first)),
        None if args.p.is_some() => bail!("--p only applies to erdos_renyi topologies"),
        None => None,
    };
    Ok(Cell {
        algorithm,
        epsilon: args.eps.unwrap_or(cfg.budget.epsilon[0]),
        p,
        eta: args.eta.unwrap_or(cfg.step.eta[0]),
        seed: args.seed.unwrap_or(cfg.seeds[0]),
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let exp = Experiment::load(&args.config)?;
    let cell = simulate_cell(&exp, args)?;
    let (csv, fin) = exp.run_cell(&cell)?;
    match &args.out {
        Some(path) => {
            write_atomic(path, &csv)?;
            eprintln!("final {fin}");
        }
        None => io::stdout().lock().write_all(&csv)?,
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Debug, Args)]
pub struct VerifySummaryArgs {
    /// Run directory written by run-experiment.
    pub dir: PathBuf,
}

pub fn cmd_verify_summary(args: &VerifySummaryArgs) -> Result<ExitCode> {
    let v = verify_summary(&args.dir)?;
    if v.mismatches.is_empty() {
        writeln!(io::stdout().lock(), "OK: {} summary rows match the run files", v.rows_checked)?;
        Ok(ExitCode::SUCCESS)
    } else {
        let mut out = io::stdout().lock();
        for m in &v.mismatches {
            writeln!(out, "MISMATCH: {m}")?;
        }
        Ok(ExitCode::from(EXIT_VERIFY_FAIL))
    }
}
