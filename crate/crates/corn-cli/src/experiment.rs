//! Grid execution: every (algorithm, ε, p, η, seed) cell is one independent run.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use corn::covariance::{effective_variance, factorize, CovarianceFactor};
use corn::engine::{algorithm_covariance, corn_dsgd_run, CsvContext, TRAJECTORY_HEADER};
use corn::graph::mixing_matrix;
use corn::io::read_edge_list;
use corn::optimizer::solve_cov_hbc_with;
use corn::privacy::{epsilon_bound, inverse_diagonal};
use corn::tasks::{parse_libsvm, LibsvmData, LogisticTask, QuadraticTask, ZeroGradientTask, A9A_DIM};
use corn::{Algorithm, Graph, MixingMatrix, PrivacyBudget, RunConfig, StepSchedule, Task};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, ScheduleKind, TaskKind, TopologyKind};
use crate::svg::{LineChart, Series};
use crate::write_atomic;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const CONFIG_FILE: &str = "config.json";
pub const RUNS_DIR: &str = "runs";
pub const SUMMARY_HEADER: &str = "algorithm,epsilon,p,eta,seeds,completed,mean_final,std_final,selected,config_hash,status";

fn algorithm_name<S: serde::Serializer>(a: &Algorithm, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(a.name())
}

/// One grid point of one seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cell {
    #[serde(serialize_with = "algorithm_name")]
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub p: Option<f64>,
    pub eta: f64,
    pub seed: u64,
}

impl Cell {
    pub fn file_name(&self) -> String {
        let p = self.p.map_or("fixed".to_string(), |p| p.to_string());
        format!("{}_eps{}_p{}_eta{}_seed{}.csv", self.algorithm, self.epsilon, p, self.eta, self.seed)
    }
}

/// The noise of a cell depends on everything except the step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseKey {
    #[serde(serialize_with = "algorithm_name")]
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub p: Option<f64>,
    pub seed: u64,
}

impl From<&Cell> for NoiseKey {
    fn from(c: &Cell) -> Self {
        Self { algorithm: c.algorithm, epsilon: c.epsilon, p: c.p, seed: c.seed }
    }
}

/// Diagnostics of one designed covariance.
#[derive(Clone, Debug, Serialize)]
pub struct NoiseSummary {
    #[serde(flatten)]
    pub key: NoiseKey,
    /// `Tr(W R Wᵀ)`; 0 without noise.
    pub trace: f64,
    pub max_inverse_diagonal: Option<f64>,
    pub epsilon_bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellReport {
    #[serde(flatten)]
    pub cell: Cell,
    pub file: String,
    pub final_metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Metadata {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub version: &'static str,
    pub jobs: usize,
    pub metric_name: String,
    pub noise: Vec<NoiseSummary>,
    pub cells: Vec<CellReport>,
}

/// A loaded experiment: config plus shared inputs.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    data: Option<LibsvmData<f64>>,
    file_graph: Option<Graph>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash()?;
        let data = match (&config.task.kind, &config.task.data) {
            (TaskKind::Logistic, Some(path)) => {
                let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let dim = config.task.dim.unwrap_or(A9A_DIM);
                Some(parse_libsvm(BufReader::new(file), dim).with_context(|| format!("parsing {}", path.display()))?)
            }
            _ => None,
        };
        let file_graph = match (&config.topology.kind, &config.topology.path) {
            (TopologyKind::File, Some(path)) => {
                let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                Some(read_edge_list(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))?)
            }
            _ => None,
        };
        Ok(Self { config, hash, data, file_graph })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(ExperimentConfig::load(path)?)
    }

    pub fn short_hash(&self) -> &str {
        &self.hash[..12]
    }

    /// Every cell in a fixed order: p, ε, algorithm, η, seed.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let algorithms = self.config.algorithms()?;
        let mut out = Vec::new();
        for p in self.config.p_grid() {
            for &epsilon in &self.config.budget.epsilon {
                for &algorithm in &algorithms {
                    for &eta in &self.config.step.eta {
                        for &seed in &self.config.seeds {
                            out.push(Cell { algorithm, epsilon, p, eta, seed });
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn graph(&self, p: Option<f64>, seed: u64) -> Result<Graph> {
        let t = &self.config.topology;
        let n = t.n.unwrap_or(0);
        let g = match t.kind {
            TopologyKind::ErdosRenyi => Graph::erdos_renyi(n, p.context("erdos_renyi cell without p")?, seed)?,
            TopologyKind::Complete => Graph::complete(n)?,
            TopologyKind::Ring => Graph::ring(n)?,
            TopologyKind::Path => Graph::path(n)?,
            TopologyKind::Star => Graph::star(n)?,
            TopologyKind::File => self.file_graph.clone().context("edge list not loaded")?,
        };
        Ok(g)
    }

    pub fn mixing(&self, g: &Graph) -> Result<MixingMatrix<f64>> {
        Ok(mixing_matrix(g, self.config.topology.mixing.into())?)
    }

    pub fn budget(&self, epsilon: f64) -> Result<PrivacyBudget<f64>> {
        let b = &self.config.budget;
        Ok(PrivacyBudget::new(epsilon, b.delta, b.iterations, b.clip)?)
    }

    pub fn task(&self, n: usize, seed: u64) -> Result<Box<dyn Task<f64>>> {
        let t = &self.config.task;
        Ok(match t.kind {
            TaskKind::Quadratic => Box::new(QuadraticTask::new(n, t.theta)?.starting_at(t.start.into())),
            TaskKind::Logistic => {
                let data = self.data.as_ref().context("logistic data not loaded")?;
                Box::new(LogisticTask::new(data, n, t.alpha, t.l2_reg, t.batch_size, seed)?)
            }
            TaskKind::Zero => Box::new(ZeroGradientTask::new(n, t.dim.unwrap_or(1))),
        })
    }

    pub fn metric_name(&self) -> Result<String> {
        let g = self.graph(self.config.p_grid()[0], self.config.seeds[0])?;
        Ok(self.task(g.n(), self.config.seeds[0])?.metric_name().to_string())
    }

    fn schedule(&self, eta: f64) -> StepSchedule<f64> {
        match self.config.step.schedule {
            ScheduleKind::InvSqrt => StepSchedule::InvSqrt { eta1: eta },
            ScheduleKind::Constant => StepSchedule::Constant(eta),
        }
    }

    /// Designs the covariance of `key` and returns its factor and diagnostics.
    pub fn noise(&self, key: &NoiseKey) -> Result<(CovarianceFactor<f64>, NoiseSummary)> {
        let g = self.graph(key.p, key.seed)?;
        let w = self.mixing(&g)?;
        let budget = self.budget(key.epsilon)?;
        let opt = &self.config.optimizer;
        let cap = opt.cap.resolve()?;
        let opts = opt.solver_options();
        let r = match (&opt.hbc, key.algorithm) {
            (Some(h), Algorithm::Corn) => {
                Some(solve_cov_hbc_with(&w, budget.kappa(), &h.threat(w.n()), cap, &opts)?.r_star)
            }
            _ => algorithm_covariance(key.algorithm, &g, &w, budget.kappa(), cap, &opts)?,
        };
        let Some(r) = r else {
            let summary = NoiseSummary { key: *key, trace: 0.0, max_inverse_diagonal: None, epsilon_bound: None };
            return Ok((CovarianceFactor::zero(w.n()), summary));
        };
        let max_inv = inverse_diagonal(&r)?.into_iter().fold(0.0, f64::max);
        let summary = NoiseSummary {
            key: *key,
            trace: effective_variance(&w, &r)?,
            max_inverse_diagonal: Some(max_inv),
            epsilon_bound: Some(epsilon_bound(&r, &budget)?),
        };
        Ok((factorize(&r)?, summary))
    }

    /// Runs one cell with a precomputed noise factor. Returns the trajectory
    /// CSV and the final metric.
    pub fn run_cell_with(&self, cell: &Cell, noise: CovarianceFactor<f64>) -> Result<(Vec<u8>, f64)> {
        let g = self.graph(cell.p, cell.seed)?;
        let mixing = self.mixing(&g)?;
        let task = self.task(g.n(), cell.seed)?;
        let b = &self.config.budget;
        let cfg = RunConfig {
            mixing,
            noise,
            iterations: b.iterations,
            clip: b.clip,
            step: self.schedule(cell.eta),
            seed: cell.seed,
        };
        let traj = corn_dsgd_run(&cfg, task.as_ref())?;
        let mut csv = Vec::new();
        let ctx = CsvContext {
            seed: cell.seed,
            algorithm: cell.algorithm.name(),
            epsilon: cell.epsilon,
            p: cell.p,
            config_hash: &self.hash,
        };
        traj.write_csv(&mut csv, &ctx)?;
        Ok((csv, traj.final_metric()))
    }

    pub fn run_cell(&self, cell: &Cell) -> Result<(Vec<u8>, f64)> {
        let (noise, _) = self.noise(&NoiseKey::from(cell))?;
        self.run_cell_with(cell, noise)
    }
}

/// Where a run writes its outputs.
pub fn run_directory(exp: &Experiment, root: &Path) -> PathBuf {
    let root = exp.config.output_dir.clone().unwrap_or_else(|| root.to_path_buf());
    root.join(format!("{}-{}", exp.config.name, exp.short_hash()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub p: Option<f64>,
    pub eta: f64,
    pub seeds: usize,
    pub completed: usize,
    pub mean: f64,
    pub std: f64,
    pub selected: bool,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fmt_opt(p: Option<f64>) -> String {
    p.map(|p| p.to_string()).unwrap_or_default()
}

/// Aggregates per-cell finals into summary rows, in cell order.
pub fn summarize(cells: &[Cell], finals: &[Option<f64>]) -> Vec<SummaryRow> {
    let mut groups: Vec<(Cell, Vec<f64>, usize)> = Vec::new();
    for (cell, fin) in cells.iter().zip(finals) {
        let same = |c: &Cell| c.algorithm == cell.algorithm && c.epsilon == cell.epsilon && c.p == cell.p && c.eta == cell.eta;
        let idx = match groups.iter().position(|(c, _, _)| same(c)) {
            Some(i) => i,
            None => {
                groups.push((*cell, Vec::new(), 0));
                groups.len() - 1
            }
        };
        groups[idx].2 += 1;
        if let Some(v) = fin {
            groups[idx].1.push(*v);
        }
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|(c, vals, seeds)| {
            let (mean, std) = mean_std(&vals);
            SummaryRow {
                algorithm: c.algorithm,
                epsilon: c.epsilon,
                p: c.p,
                eta: c.eta,
                seeds,
                completed: vals.len(),
                mean,
                std,
                selected: false,
            }
        })
        .collect();
    // best complete step size per (algorithm, ε, p)
    for i in 0..rows.len() {
        let r = &rows[i];
        let best = rows
            .iter()
            .enumerate()
            .filter(|(_, o)| o.algorithm == r.algorithm && o.epsilon == r.epsilon && o.p == r.p)
            .filter(|(_, o)| o.completed == o.seeds && o.mean.is_finite())
            .min_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
            .map(|(k, _)| k);
        rows[i].selected = best == Some(i);
    }
    rows
}

pub fn summary_csv(rows: &[SummaryRow], hash: &str) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let status = if r.completed == r.seeds { "complete" } else { "incomplete" };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.algorithm,
            r.epsilon,
            fmt_opt(r.p),
            r.eta,
            r.seeds,
            r.completed,
            r.mean,
            r.std,
            r.selected,
            hash,
            status
        ));
    }
    out
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        bail!("summary header mismatch");
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                bail!("summary line {}: expected 11 fields", k + 2);
            }
            let p = if f[2].is_empty() { None } else { Some(f[2].parse()?) };
            Ok(SummaryRow {
                algorithm: f[0].parse()?,
                epsilon: f[1].parse()?,
                p,
                eta: f[3].parse()?,
                seeds: f[4].parse()?,
                completed: f[5].parse()?,
                mean: f[6].parse()?,
                std: f[7].parse()?,
                selected: f[8].parse()?,
            })
        })
        .collect()
}

/// Final value of `metric` in a trajectory CSV (the last record of it).
pub fn final_metric_from_csv(text: &str, metric: &str) -> Result<f64> {
    let mut lines = text.lines();
    if lines.next() != Some(TRAJECTORY_HEADER) {
        bail!("trajectory header mismatch");
    }
    let mut last = None;
    for line in lines {
        let mut f = line.split(',');
        let (_, name, value) = (f.next(), f.next(), f.next());
        if name == Some(metric) {
            last = value.map(str::parse::<f64>).transpose()?;
        }
    }
    last.with_context(|| format!("no {metric} rows"))
}

pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<(Cell, String)>,
}

/// Runs the full grid on `jobs` threads and writes every output under the
/// run directory.
pub fn run_experiment(exp: &Experiment, root: &Path, jobs: usize) -> Result<ExperimentOutcome> {
    let dir = run_directory(exp, root);
    let runs = dir.join(RUNS_DIR);
    fs::create_dir_all(&runs).with_context(|| format!("creating {}", runs.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let cells = exp.cells()?;

    let mut keys: Vec<NoiseKey> = Vec::new();
    for c in &cells {
        let k = NoiseKey::from(c);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let designed: Vec<std::result::Result<(CovarianceFactor<f64>, NoiseSummary), String>> =
        pool.install(|| keys.par_iter().map(|k| exp.noise(k).map_err(|e| format!("{e:#}"))).collect());

    let results: Vec<std::result::Result<f64, String>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let k = NoiseKey::from(cell);
                let idx = keys.iter().position(|o| *o == k).expect("key collected above");
                let (factor, _) = designed[idx].as_ref().map_err(|e| format!("noise design failed: {e}"))?;
                let (csv, fin) = exp.run_cell_with(cell, factor.clone()).map_err(|e| format!("{e:#}"))?;
                write_atomic(&runs.join(cell.file_name()), &csv).map_err(|e| format!("{e:#}"))?;
                Ok(fin)
            })
            .collect()
    });

    let finals: Vec<Option<f64>> = results.iter().map(|r| r.as_ref().ok().copied()).collect();
    let rows = summarize(&cells, &finals);
    write_atomic(&dir.join(SUMMARY_FILE), summary_csv(&rows, &exp.hash).as_bytes())?;

    let failures: Vec<(Cell, String)> =
        cells.iter().zip(&results).filter_map(|(c, r)| r.as_ref().err().map(|e| (*c, e.clone()))).collect();
    let metric_name = exp.metric_name()?;
    let meta = Metadata {
        config: exp.config.clone(),
        config_hash: exp.hash.clone(),
        version: env!("CARGO_PKG_VERSION"),
        jobs: jobs.max(1),
        metric_name: metric_name.clone(),
        noise: designed.iter().filter_map(|d| d.as_ref().ok().map(|(_, s)| s.clone())).collect(),
        cells: cells
            .iter()
            .zip(&results)
            .map(|(c, r)| CellReport {
                cell: *c,
                file: format!("{RUNS_DIR}/{}", c.file_name()),
                final_metric: r.as_ref().ok().copied(),
                error: r.as_ref().err().cloned(),
            })
            .collect(),
    };
    write_atomic(&dir.join(METADATA_FILE), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    write_atomic(&dir.join(CONFIG_FILE), serde_json::to_string_pretty(&exp.config)?.as_bytes())?;
    write_sweeps(&dir, &rows, &metric_name)?;
    Ok(ExperimentOutcome { dir, rows, failures })
}

/// Metric vs ε for each p, and metric vs p for each ε, using the selected
/// step size of every algorithm.
fn write_sweeps(dir: &Path, rows: &[SummaryRow], metric: &str) -> Result<()> {
    let selected: Vec<&SummaryRow> = rows.iter().filter(|r| r.selected).collect();
    let mut algorithms: Vec<Algorithm> = Vec::new();
    for r in &selected {
        if !algorithms.contains(&r.algorithm) {
            algorithms.push(r.algorithm);
        }
    }
    let chart = |title: String, x_label: &str, fixed: &dyn Fn(&SummaryRow) -> bool, x: &dyn Fn(&SummaryRow) -> f64| {
        let series = algorithms
            .iter()
            .map(|a| {
                let mut pts: Vec<(f64, f64)> =
                    selected.iter().filter(|r| r.algorithm == *a && fixed(r)).map(|r| (x(r), r.mean)).collect();
                pts.sort_by(|u, v| u.0.total_cmp(&v.0));
                Series { name: a.name().to_string(), points: pts }
            })
            .collect();
        LineChart { title, x_label: x_label.to_string(), y_label: metric.to_string(), series }
    };

    let mut ps: Vec<Option<f64>> = Vec::new();
    let mut eps: Vec<f64> = Vec::new();
    for r in &selected {
        if !ps.contains(&r.p) {
            ps.push(r.p);
        }
        if !eps.contains(&r.epsilon) {
            eps.push(r.epsilon);
        }
    }
    if eps.len() > 1 {
        for p in &ps {
            let c = chart(format!("{metric} vs epsilon (p = {})", fmt_opt(*p)), "epsilon", &|r| r.p == *p, &|r| r.epsilon);
            let name = format!("sweep_epsilon_p{}.svg", p.map_or("fixed".into(), |p| p.to_string()));
            write_atomic(&dir.join(name), c.render().as_bytes())?;
        }
    }
    if ps.len() > 1 {
        for e in &eps {
            let c = chart(format!("{metric} vs p (epsilon = {e})"), "p", &|r| r.epsilon == *e, &|r| r.p.unwrap_or(f64::NAN));
            write_atomic(&dir.join(format!("sweep_p_eps{e}.svg")), c.render().as_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct Verification {
    pub rows_checked: usize,
    pub mismatches: Vec<String>,
}

/// Recomputes every summary row from the per-run CSVs.
pub fn verify_summary(dir: &Path) -> Result<Verification> {
    let meta: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.join(METADATA_FILE)).with_context(|| format!("reading {}", dir.join(METADATA_FILE).display()))?,
    )?;
    let metric = meta["metric_name"].as_str().context("metadata lacks metric_name")?.to_string();
    let hash = meta["config_hash"].as_str().context("metadata lacks config_hash")?.to_string();
    let cells: Vec<Cell> = meta["cells"]
        .as_array()
        .context("metadata lacks cells")?
        .iter()
        .map(|c| {
            Ok(Cell {
                algorithm: c["algorithm"].as_str().context("cell algorithm")?.parse()?,
                epsilon: c["epsilon"].as_f64().context("cell epsilon")?,
                p: c["p"].as_f64(),
                eta: c["eta"].as_f64().context("cell eta")?,
                seed: c["seed"].as_u64().context("cell seed")?,
            })
        })
        .collect::<Result<_>>()?;
    let finals: Vec<Option<f64>> = cells
        .iter()
        .map(|c| {
            let path = dir.join(RUNS_DIR).join(c.file_name());
            fs::read_to_string(path).ok().and_then(|text| final_metric_from_csv(&text, &metric).ok())
        })
        .collect();
    let expected = summarize(&cells, &finals);
    let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
    let actual = parse_summary_csv(&text)?;
    let mut mismatches = Vec::new();
    if !text.lines().skip(1).all(|l| l.is_empty() || l.contains(&hash)) {
        mismatches.push("summary rows carry a different config hash".into());
    }
    if expected.len() != actual.len() {
        mismatches.push(format!("summary has {} rows, recomputed {}", actual.len(), expected.len()));
    }
    let close = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    for (e, a) in expected.iter().zip(&actual) {
        let label = format!("{} eps={} p={} eta={}", e.algorithm, e.epsilon, fmt_opt(e.p), e.eta);
        if (e.algorithm, e.epsilon, e.p, e.eta) != (a.algorithm, a.epsilon, a.p, a.eta) {
            mismatches.push(format!("row order differs at {label}"));
            continue;
        }
        if e.seeds != a.seeds || e.completed != a.completed {
            mismatches.push(format!("{label}: seed counts differ"));
        }
        if !close(e.mean, a.mean) {
            mismatches.push(format!("{label}: mean {} recomputed as {}", a.mean, e.mean));
        }
        if !close(e.std, a.std) {
            mismatches.push(format!("{label}: std {} recomputed as {}", a.std, e.std));
        }
        if e.selected != a.selected {
            mismatches.push(format!("{label}: selection flag differs"));
        }
    }
    Ok(Verification { rows_checked: actual.len(), mismatches })
}

/// Mean final metric per algorithm among selected rows, keyed by (ε, p).
pub fn selected_means(rows: &[SummaryRow]) -> BTreeMap<(String, String), Vec<(Algorithm, f64)>> {
    let mut out: BTreeMap<(String, String), Vec<(Algorithm, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.selected) {
        out.entry((r.epsilon.to_string(), fmt_opt(r.p))).or_default().push((r.algorithm, r.mean));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }

    fn cell(algorithm: Algorithm, eta: f64, seed: u64) -> Cell {
        Cell { algorithm, epsilon: 10.0, p: Some(0.5), eta, seed }
    }

    #[test]
    fn summary_selects_best_complete_step() {
        let cells = [
            cell(Algorithm::Ldp, 0.1, 0),
            cell(Algorithm::Ldp, 0.1, 1),
            cell(Algorithm::Ldp, 0.01, 0),
            cell(Algorithm::Ldp, 0.01, 1),
            cell(Algorithm::Ldp, 0.001, 0),
            cell(Algorithm::Ldp, 0.001, 1),
        ];
        let finals = [Some(3.0), Some(5.0), Some(1.0), Some(2.0), Some(0.5), None];
        let rows = summarize(&cells, &finals);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.selected).collect::<Vec<_>>(), [false, true, false]);
        assert_eq!(rows[2].completed, 1);
        let text = summary_csv(&rows, "h");
        assert!(text.lines().nth(3).unwrap().ends_with("incomplete"));
        assert_eq!(parse_summary_csv(&text).unwrap(), rows);
    }

    #[test]
    fn final_metric_is_last_matching_row() {
        let text = format!("{TRAJECTORY_HEADER}\n0,opt_gap,5,0,ldp,10,0.5,h\n0,consensus_error,1,0,ldp,10,0.5,h\n10,opt_gap,0.25,0,ldp,10,0.5,h\n10,noise_energy,9,0,ldp,10,0.5,h\n");
        assert_eq!(final_metric_from_csv(&text, "opt_gap").unwrap(), 0.25);
        assert!(final_metric_from_csv(&text, "test_loss").is_err());
    }

    #[test]
    fn cell_file_names_are_distinct() {
        let a = cell(Algorithm::Corn, 0.01, 3).file_name();
        let b = Cell { p: None, ..cell(Algorithm::Corn, 0.01, 3) }.file_name();
        assert_eq!(a, "corn_eps10_p0.5_eta0.01_seed3.csv");
        assert_eq!(b, "corn_eps10_pfixed_eta0.01_seed3.csv");
    }
}
