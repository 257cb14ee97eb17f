//! Covariance design: minimize the post-mixing noise power `Tr(W R Wᵀ)`
//! subject to `[R⁻¹]_ii ≤ κ` for every agent.
//!
//! Three nested families are supported: scalar (`σ²·I`), pairwise
//! (`σ_pair²·I + σ_cor²·L`) and general (`σ_mix²·I + R_cor`, any PSD
//! `R_cor`). The general and multi-seed honest-but-curious variants are solved
//! with a log-barrier interior point method; the scalar family has a closed
//! form and the pairwise family is a two-parameter convex search.
//!
//! Internally every problem is rescaled so that `κ = 1`.

mod barrier;
mod hbc;
mod kkt;
pub(crate) mod model;
mod pairwise;

use nalgebra::{DMatrix, DVector};

use crate::graph::{sorted_eigenvalues, LaplacianMatrix, MixingMatrix};
use crate::privacy::{inverse_diagonal, ConstraintLevel};
use crate::{CornError, Result, Scalar};

pub use hbc::{coalition_count, coalition_inverse_diagonals, kkt_report_hbc, solve_cov_hbc, solve_cov_hbc_with, HbcThreatModel};
pub use kkt::{kkt_report, KktReport};
pub use pairwise::solve_decor;

use model::{Duals, InvDiagGroup, LinearCon, LinearTag, Model, SymExpr};

/// Default diagonal cap in units of `1/κ`.
pub const DEFAULT_CAP_RATIO: f64 = 100.0;

/// Upper bound on the diagonal of `R`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Cap<T> {
    /// `100/κ`.
    #[default]
    Default,
    Value(T),
    /// No cap. The optimum is not attained when `W` is rank deficient.
    Unbounded,
}

/// Admissible covariance family.
#[derive(Clone, Debug, PartialEq)]
pub enum Structure<T: Scalar> {
    General,
    Pairwise(LaplacianMatrix<T>),
    Scalar,
}

impl<T: Scalar> Structure<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::General => "general",
            Self::Pairwise(_) => "pairwise",
            Self::Scalar => "ldp",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovDesignProblem<T: Scalar> {
    pub mixing: MixingMatrix<T>,
    pub kappa: ConstraintLevel<T>,
    pub cap: Cap<T>,
    pub structure: Structure<T>,
}

impl<T: Scalar> CovDesignProblem<T> {
    pub fn new(mixing: MixingMatrix<T>, kappa: ConstraintLevel<T>, structure: Structure<T>) -> Self {
        Self { mixing, kappa, cap: Cap::Default, structure }
    }

    pub fn with_cap(mut self, cap: Cap<T>) -> Self {
        self.cap = cap;
        self
    }

    pub fn n(&self) -> usize {
        self.mixing.n()
    }

    /// The cap in variance units, if any.
    pub fn cap_value(&self) -> Option<T> {
        resolve_cap(self.cap, self.kappa)
    }

    pub fn validate(&self) -> Result<()> {
        if let Structure::Pairwise(l) = &self.structure {
            if l.n() != self.n() {
                return Err(CornError::Dimension(format!("Laplacian is {0}x{0}, W is {1}x{1}", l.n(), self.n())));
            }
        }
        check_cap(self.cap_value(), self.kappa)
    }
}

pub(crate) fn resolve_cap<T: Scalar>(cap: Cap<T>, kappa: ConstraintLevel<T>) -> Option<T> {
    match cap {
        Cap::Default => Some(T::lit(DEFAULT_CAP_RATIO) / kappa.value()),
        Cap::Value(b) => Some(b),
        Cap::Unbounded => None,
    }
}

pub(crate) fn check_cap<T: Scalar>(cap: Option<T>, kappa: ConstraintLevel<T>) -> Result<()> {
    match cap {
        // [R]_ii·[R⁻¹]_ii ≥ 1 forces [R]_ii ≥ 1/κ.
        Some(b) if !(b * kappa.value() > T::one()) => Err(CornError::Infeasible(format!(
            "diagonal cap {b} must exceed 1/kappa = {}",
            T::one() / kappa.value()
        ))),
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions<T> {
    /// Factor applied to the barrier weight `μ` after each centering.
    pub mu_factor: T,
    /// Stop once the duality gap bound is below this fraction of the initial objective.
    pub gap_tolerance: T,
    /// Newton decrement threshold (`λ²/2`) for centering.
    pub newton_tolerance: T,
    pub max_outer_iterations: usize,
    pub max_newton_steps: usize,
    /// `σ_floor = floor_ratio/κ`.
    pub floor_ratio: T,
    /// The returned `R*` satisfies `max_i [R*⁻¹]_ii ≤ (1 − margin)·κ`.
    pub safety_margin: T,
    /// Largest number of coalitions enumerated for the honest-but-curious model.
    pub coalition_limit: usize,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        let eps = T::eps();
        Self {
            mu_factor: T::lit(0.2),
            gap_tolerance: T::lit(1e-10).max(eps * T::lit(100.0)),
            newton_tolerance: T::lit(1e-10).max(eps * T::lit(100.0)),
            max_outer_iterations: 60,
            max_newton_steps: 200,
            floor_ratio: T::lit(1e-6),
            safety_margin: T::lit(1e-11).max(eps * T::lit(100.0)),
            coalition_limit: 100_000,
        }
    }
}

/// Optimal covariance for one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct CovSolution<T: Scalar> {
    /// `R*` in variance units.
    pub r_star: DMatrix<T>,
    /// Independent component `σ_mix²`.
    pub sigma_mix2: T,
    /// Correlated components. One block `R* − σ_mix²·I` for the general
    /// family, `σ_cor²·L` for pairwise, one per seed group in HBC mode.
    pub correlated: Vec<DMatrix<T>>,
    /// `σ_cor²` for the pairwise family.
    pub sigma_cor2: Option<T>,
    /// `Tr(W R* Wᵀ)`.
    pub objective: T,
    pub kkt_residual: T,
    pub iterations: usize,
    pub cap_active: bool,
    pub structure: &'static str,
    pub(crate) certificate: Option<Certificate<T>>,
}

/// Model point and multipliers produced by the solver, used by [`kkt_report`].
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Certificate<T: Scalar> {
    pub theta: DVector<T>,
    pub duals: Duals<T>,
    pub hbc: bool,
}

impl<T: Scalar> CovSolution<T> {
    /// Wraps an arbitrary covariance as a candidate for [`kkt_report`].
    pub fn candidate(r: DMatrix<T>, problem: &CovDesignProblem<T>) -> Result<Self> {
        if r.nrows() != problem.n() || r.ncols() != problem.n() {
            return Err(CornError::Dimension("candidate size does not match W".into()));
        }
        let objective = crate::covariance::effective_variance(&problem.mixing, &r)?;
        let min_eig = sorted_eigenvalues(&r)?[0];
        let sigma = min_eig.max(T::zero());
        let n = r.nrows();
        let correlated = vec![&r - DMatrix::identity(n, n) * sigma];
        let cap_active = cap_is_active(&r, problem.cap_value());
        let mut sol = Self {
            r_star: r,
            sigma_mix2: sigma,
            correlated,
            sigma_cor2: None,
            objective,
            kkt_residual: T::zero(),
            iterations: 0,
            cap_active,
            structure: problem.structure.name(),
            certificate: None,
        };
        if let Structure::Pairwise(l) = &problem.structure {
            // recover (a, c) from the diagonal/off-diagonal split when possible
            if let Some((a, c)) = pairwise::fit_pairwise(&sol.r_star, l) {
                sol.sigma_mix2 = a;
                sol.sigma_cor2 = Some(c);
            }
        }
        Ok(sol)
    }
}

pub(crate) fn cap_is_active<T: Scalar>(r: &DMatrix<T>, cap: Option<T>) -> bool {
    match cap {
        Some(b) => {
            let max_diag = r.diagonal().iter().copied().fold(T::zero(), |a, v| a.max(v));
            b - max_diag <= T::lit(1e-6) * b
        }
        None => false,
    }
}

/// `σ_ldp² = 1/κ`.
pub fn solve_ldp<T: Scalar>(kappa: ConstraintLevel<T>) -> T {
    T::one() / kappa.value()
}

/// Solves the design problem for its structure.
pub fn solve_cov<T: Scalar>(problem: &CovDesignProblem<T>) -> Result<CovSolution<T>> {
    solve_cov_with(problem, &SolverOptions::default())
}

pub fn solve_cov_with<T: Scalar>(problem: &CovDesignProblem<T>, opts: &SolverOptions<T>) -> Result<CovSolution<T>> {
    problem.validate()?;
    let sol = match &problem.structure {
        Structure::Scalar => scalar_solution(problem)?,
        Structure::Pairwise(l) => pairwise::solve_pairwise(problem, l, opts)?,
        Structure::General => general_solution(problem, opts)?,
    };
    finish(sol, problem, opts)
}

fn scalar_solution<T: Scalar>(problem: &CovDesignProblem<T>) -> Result<CovSolution<T>> {
    let n = problem.n();
    let sigma = solve_ldp(problem.kappa);
    let r = DMatrix::identity(n, n) * sigma;
    let mut sol = CovSolution::candidate(r, problem)?;
    sol.sigma_mix2 = sigma;
    sol.correlated = vec![DMatrix::zeros(n, n)];
    Ok(sol)
}

/// The general family on `vech(R)`, in units where `κ = 1`.
pub(crate) fn general_model<T: Scalar>(
    gram: &DMatrix<T>,
    cap: Option<T>,
    floor: T,
) -> Model<T> {
    let n = gram.nrows();
    let mut full = SymExpr::new(n, T::zero());
    let mut var = 0;
    for i in 0..n {
        for j in i..n {
            full.add_symmetric(var, i, j, T::one());
            var += 1;
        }
    }
    let mut model = Model::new(var, full.clone(), gram);
    let mut psd = full.clone();
    psd.offset = -floor;
    model.psd.push(psd);
    model.noise_exprs.push(full);
    model.inv_groups.push(InvDiagGroup { expr: 0, rows: (0..n).collect() });
    if let Some(b) = cap {
        model.add_caps(b);
    }
    model
}

pub(crate) fn vech<T: Scalar>(r: &DMatrix<T>) -> DVector<T> {
    let n = r.nrows();
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            v.push(r[(i, j)]);
        }
    }
    DVector::from_vec(v)
}

/// Initial diagonal level (scaled units) that is strictly feasible under `cap`.
pub(crate) fn initial_level<T: Scalar>(cap: Option<T>) -> T {
    let two = T::lit(2.0);
    match cap {
        Some(b) if b <= two => (T::one() + b) * T::lit(0.5),
        _ => two,
    }
}

/// Without a cap, mass placed in the null space of `W` is free, so the
/// infimum is approached but never reached.
pub(crate) fn check_attainable<T: Scalar>(gram: &DMatrix<T>, cap: Option<T>) -> Result<()> {
    if cap.is_some() {
        return Ok(());
    }
    let eig = sorted_eigenvalues(gram)?;
    let top = eig.last().copied().unwrap_or_else(T::one);
    if eig[0] <= T::lit(1e-12).max(T::eps() * T::lit(100.0)) * top {
        return Err(CornError::Infeasible(
            "optimum not attained: W is rank deficient and no diagonal cap is set".into(),
        ));
    }
    Ok(())
}

fn general_solution<T: Scalar>(problem: &CovDesignProblem<T>, opts: &SolverOptions<T>) -> Result<CovSolution<T>> {
    let n = problem.n();
    let kappa = problem.kappa.value();
    let cap = problem.cap_value().map(|b| b * kappa);
    check_attainable(&problem.mixing.gram(), cap)?;
    let model = general_model(&problem.mixing.gram(), cap, opts.floor_ratio);
    let theta0 = vech(&(DMatrix::identity(n, n) * initial_level(cap)));
    let out = barrier::solve(&model, theta0, opts)?;
    let r = model.full.eval(&out.theta) / kappa;
    let mut sol = CovSolution::candidate(r, problem)?;
    sol.iterations = out.newton_steps;
    sol.certificate = Some(Certificate { theta: out.theta, duals: out.duals, hbc: false });
    Ok(sol)
}

/// Enforces the safety margin, recomputes the objective and attaches KKT residuals.
fn finish<T: Scalar>(mut sol: CovSolution<T>, problem: &CovDesignProblem<T>, opts: &SolverOptions<T>) -> Result<CovSolution<T>> {
    let kappa = problem.kappa.value();
    let target = kappa * (T::one() - opts.safety_margin);
    let worst = inverse_diagonal(&sol.r_star)?.into_iter().fold(T::zero(), |a, b| a.max(b));
    if worst > target {
        let scale = worst / target;
        sol.r_star *= scale;
        sol.sigma_mix2 *= scale;
        for c in sol.correlated.iter_mut() {
            *c *= scale;
        }
        sol.sigma_cor2 = sol.sigma_cor2.map(|c| c * scale);
        // the certificate belongs to the unscaled point; keep it since the
        // change is within the margin
    }
    sol.objective = crate::covariance::effective_variance(&problem.mixing, &sol.r_star)?;
    sol.cap_active = cap_is_active(&sol.r_star, problem.cap_value());
    let report = kkt_report(&sol, problem)?;
    sol.kkt_residual = report.max_residual;
    Ok(sol)
}

pub(crate) fn floor_constraint<T: Scalar>(var: usize, floor: T) -> LinearCon<T> {
    LinearCon { constant: -floor, coefs: vec![(var, T::one())], tag: LinearTag::Floor }
}
