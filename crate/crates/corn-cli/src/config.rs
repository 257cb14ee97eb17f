//! Experiment configuration files (TOML).
//!
//! ```toml
//! name = "quadratic"
//! algorithms = ["dsgd", "ldp", "decor", "corn"]
//! seeds = [0, 1, 2]
//!
//! [topology]
//! kind = "erdos_renyi"      # complete | ring | path | star | file
//! n = 20
//! p = [0.2, 0.5, 1.0]       # erdos_renyi only
//! mixing = "metropolis_hastings"
//!
//! [budget]
//! epsilon = [10.0]
//! delta = 1e-5
//! clip = 0.1
//! iterations = 5000
//!
//! [task]
//! kind = "quadratic"        # logistic | zero
//!
//! [step]
//! schedule = "inv_sqrt"     # constant
//! eta = [0.01]
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use corn::engine::Algorithm;
use corn::graph::MixingRule;
use corn::optimizer::{Cap, HbcThreatModel, SolverOptions};
use corn::tasks::QuadraticStart;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub algorithms: Vec<String>,
    pub seeds: Vec<u64>,
    /// Overrides the command-line output root. Not part of the hash.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub topology: TopologySpec,
    pub budget: BudgetSpec,
    pub task: TaskSpec,
    pub step: StepSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    ErdosRenyi,
    Complete,
    Ring,
    Path,
    Star,
    File,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingSpec {
    #[default]
    MetropolisHastings,
    LocalDegree,
}

impl From<MixingSpec> for MixingRule {
    fn from(m: MixingSpec) -> Self {
        match m {
            MixingSpec::MetropolisHastings => MixingRule::MetropolisHastings,
            MixingSpec::LocalDegree => MixingRule::LocalDegree,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    #[serde(default)]
    pub n: Option<usize>,
    /// Edge probabilities, one grid point each.
    #[serde(default)]
    pub p: Vec<f64>,
    /// Edge list for `kind = "file"`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub mixing: MixingSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub epsilon: Vec<f64>,
    pub delta: f64,
    pub clip: f64,
    pub iterations: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Quadratic,
    Logistic,
    /// Zero gradients; only the privacy noise moves the iterates.
    Zero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartSpec {
    #[default]
    Optimum,
    Origin,
}

impl From<StartSpec> for QuadraticStart {
    fn from(s: StartSpec) -> Self {
        match s {
            StartSpec::Optimum => QuadraticStart::Optimum,
            StartSpec::Origin => QuadraticStart::Origin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Rotation in degrees (quadratic).
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub start: StartSpec,
    /// LIBSVM file (logistic).
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Feature count (logistic) or parameter dimension (zero).
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_l2")]
    pub l2_reg: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_theta() -> f64 {
    corn::tasks::DEFAULT_ROTATION_DEGREES
}

fn default_alpha() -> f64 {
    10.0
}

fn default_l2() -> f64 {
    corn::tasks::DEFAULT_L2_REG
}

fn default_batch() -> usize {
    corn::tasks::DEFAULT_BATCH_SIZE
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    InvSqrt,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    #[serde(default)]
    pub schedule: ScheduleKind,
    /// Candidate step sizes (`η₁` for `inv_sqrt`). With several, the summary
    /// marks the one with the lowest mean final metric.
    pub eta: Vec<f64>,
}

/// `"default"`, `"none"` or a variance value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CapSpec {
    Value(f64),
    Named(String),
}

impl Default for CapSpec {
    fn default() -> Self {
        Self::Named("default".into())
    }
}

impl CapSpec {
    pub fn resolve(&self) -> Result<Cap<f64>> {
        match self {
            Self::Value(v) => Ok(Cap::Value(*v)),
            Self::Named(s) => parse_cap(s),
        }
    }
}

pub fn parse_cap(s: &str) -> Result<Cap<f64>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "default" => Ok(Cap::Default),
        "none" | "unbounded" => Ok(Cap::Unbounded),
        other => Ok(Cap::Value(other.parse().with_context(|| format!("cap {other:?} is not default, none or a number"))?)),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default)]
    pub cap: CapSpec,
    #[serde(default)]
    pub gap_tolerance: Option<f64>,
    #[serde(default)]
    pub max_outer_iterations: Option<usize>,
    /// Honest-but-curious threat model for `corn`.
    #[serde(default)]
    pub hbc: Option<HbcSpec>,
}

impl OptimizerSpec {
    pub fn solver_options(&self) -> SolverOptions<f64> {
        let mut opts = SolverOptions::default();
        if let Some(g) = self.gap_tolerance {
            opts.gap_tolerance = g;
        }
        if let Some(m) = self.max_outer_iterations {
            opts.max_outer_iterations = m;
        }
        opts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbcSpec {
    pub q: usize,
    /// Seed groups; one group holding every agent when omitted.
    #[serde(default)]
    pub groups: Option<Vec<Vec<usize>>>,
}

impl HbcSpec {
    pub fn threat(&self, n: usize) -> HbcThreatModel {
        match &self.groups {
            Some(g) => HbcThreatModel::new(g.clone(), self.q),
            None => HbcThreatModel::new(vec![(0..n).collect()], self.q),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).context("invalid experiment config")?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads TOML, or JSON when the extension is `.json` (the canonical copy
    /// a run directory keeps).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if path.extension().is_some_and(|e| e == "json") {
            let mut cfg: Self = serde_json::from_str(&text).context("invalid experiment config")?;
            cfg.resolve_paths(base);
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.topology.path);
        fix(&mut self.task.data);
        fix(&mut self.output_dir);
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>> {
        self.algorithms.iter().map(|a| a.parse::<Algorithm>().map_err(anyhow::Error::from)).collect()
    }

    /// Edge probabilities of the grid; `[None]` for fixed topologies.
    pub fn p_grid(&self) -> Vec<Option<f64>> {
        match self.topology.kind {
            TopologyKind::ErdosRenyi => self.topology.p.iter().map(|&p| Some(p)).collect(),
            _ => vec![None],
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.name.trim().is_empty(), "name must not be empty");
        ensure!(
            self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)),
            "name {:?} may only use letters, digits, '-', '_' and '.'",
            self.name
        );
        ensure!(!self.algorithms.is_empty(), "algorithms must not be empty");
        let algs = self.algorithms()?;
        ensure!(algs.iter().collect::<BTreeSet<_>>().len() == algs.len(), "algorithms contain duplicates");
        ensure!(!self.seeds.is_empty(), "seeds must not be empty");
        ensure!(self.seeds.iter().collect::<BTreeSet<_>>().len() == self.seeds.len(), "seeds contain duplicates");

        let t = &self.topology;
        match t.kind {
            TopologyKind::File => {
                let path = t.path.as_ref().context("topology.kind = \"file\" needs topology.path")?;
                ensure!(path.is_file(), "topology file {} does not exist", path.display());
            }
            kind => {
                let n = t.n.context("topology.n is required")?;
                ensure!(n >= 2, "topology.n must be at least 2");
                if kind == TopologyKind::ErdosRenyi {
                    ensure!(!t.p.is_empty(), "topology.p must not be empty");
                    for &p in &t.p {
                        ensure!((0.0..=1.0).contains(&p), "edge probability {p} outside [0, 1]");
                    }
                } else {
                    ensure!(t.p.is_empty(), "topology.p only applies to erdos_renyi");
                }
            }
        }

        let b = &self.budget;
        ensure!(!b.epsilon.is_empty(), "budget.epsilon must not be empty");
        for &e in &b.epsilon {
            corn::PrivacyBudget::new(e, b.delta, b.iterations, b.clip)?;
        }

        ensure!(!self.step.eta.is_empty(), "step.eta must not be empty");
        for &eta in &self.step.eta {
            ensure!(eta > 0.0 && eta.is_finite(), "step size {eta} must be positive");
        }

        let task = &self.task;
        match task.kind {
            TaskKind::Quadratic => {}
            TaskKind::Logistic => {
                let path = task.data.as_ref().context("logistic task needs task.data")?;
                ensure!(path.is_file(), "data file {} does not exist", path.display());
                ensure!(task.alpha > 0.0, "task.alpha must be positive");
                ensure!(task.batch_size > 0, "task.batch_size must be positive");
                ensure!(task.l2_reg >= 0.0, "task.l2_reg must be non-negative");
            }
            TaskKind::Zero => {
                ensure!(task.dim.unwrap_or(1) > 0, "task.dim must be positive");
            }
        }

        self.optimizer.cap.resolve()?;
        if let Some(h) = &self.optimizer.hbc {
            if let Some(groups) = &h.groups {
                ensure!(!groups.is_empty(), "optimizer.hbc.groups must not be empty");
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form plus the bytes of every
    /// referenced file. Independent of key order, whitespace and file
    /// locations.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = serde_json::to_value(self)?;
        for (section, key) in [("topology", "path"), ("task", "data")] {
            if let Some(slot) = canonical.get_mut(section).and_then(|s| s.get_mut(key)) {
                if !slot.is_null() {
                    *slot = serde_json::Value::String("<file>".into());
                }
            }
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canonical)?);
        for path in [&self.topology.path, &self.task.data].into_iter().flatten() {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            h.update(Sha256::digest(&bytes));
        }
        Ok(hex(&h.finalize()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses an HBC groups file: one group per line, agent indices separated by
/// whitespace or commas, `#` comments.
pub fn parse_groups(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut groups = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let group = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().with_context(|| format!("line {}: {s:?} is not an agent index", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        groups.push(group);
    }
    if groups.is_empty() {
        bail!("groups file holds no groups");
    }
    Ok(groups)
}
