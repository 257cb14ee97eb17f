//! KKT residuals for covariance design solutions.

use nalgebra::{DMatrix, DVector};

use super::model::{Duals, LinearTag, Model};
use super::pairwise::{fit_pairwise, pairwise_model, pairwise_theta};
use super::{general_model, vech, CovDesignProblem, CovSolution, SolverOptions, Structure};
use crate::graph::sorted_eigenvalues;
use crate::privacy::inverse_diagonal;
use crate::{CornError, Result, Scalar};

/// Constraints within this relative slack count as active when multipliers
/// have to be estimated.
const ACTIVE_TOLERANCE: f64 = 1e-7;

/// Relative slack below which central-path multipliers are re-fitted.
const REFINE_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KktReport<T: Scalar> {
    /// `max(0, max_i [R⁻¹]_ii − κ)`, inverse-variance units.
    pub primal_violation: T,
    pub min_eigenvalue: T,
    /// `B − max_i R_ii`, variance units.
    pub cap_slack: Option<T>,
    pub cap_active: bool,
    /// Most negative multiplier, relative to the objective gradient scale.
    pub dual_infeasibility: T,
    /// `‖∇L‖_∞ / ‖c‖_∞` in the problem's parameterization.
    pub stationarity: T,
    /// Largest `|multiplier · slack|` relative to the objective.
    pub complementarity: T,
    /// Maximum of the relative residuals above.
    pub max_residual: T,
    /// Whether multipliers came from the solver or were estimated.
    pub estimated_multipliers: bool,
}

fn scalar_model<T: Scalar>(gram: &DMatrix<T>, cap: Option<T>, floor: T) -> Model<T> {
    use super::model::{InvDiagGroup, SymExpr};
    let n = gram.nrows();
    let mut full = SymExpr::new(n, T::zero());
    for i in 0..n {
        full.add_symmetric(0, i, i, T::one());
    }
    let mut m = Model::new(1, full.clone(), gram);
    m.noise_exprs.push(full);
    m.inv_groups.push(InvDiagGroup { expr: 0, rows: (0..n).collect() });
    m.linear.push(super::floor_constraint(0, floor));
    if let Some(b) = cap {
        m.add_caps(b);
    }
    m
}

/// Primal, dual, stationarity and complementarity residuals of `sol`.
///
/// Solver-produced solutions carry their multipliers. For other candidates
/// (see [`CovSolution::candidate`]) multipliers of the active constraints are
/// estimated by least squares on the stationarity condition.
pub fn kkt_report<T: Scalar>(sol: &CovSolution<T>, problem: &CovDesignProblem<T>) -> Result<KktReport<T>> {
    if sol.certificate.as_ref().is_some_and(|c| c.hbc) {
        return Err(CornError::InvalidArgument("use the HBC report for multi-seed solutions".into()));
    }
    let kappa = problem.kappa.value();
    let cap = problem.cap_value();
    let floor = SolverOptions::<T>::default().floor_ratio;
    let gram = problem.mixing.gram();
    let scaled_cap = cap.map(|b| b * kappa);
    let (model, theta) = match &problem.structure {
        Structure::General => (general_model(&gram, scaled_cap, floor), vech(&(&sol.r_star * kappa))),
        Structure::Pairwise(l) => {
            let (a, c) = match sol.sigma_cor2 {
                Some(c) => (sol.sigma_mix2, c),
                None => fit_pairwise(&sol.r_star, l)
                    .ok_or_else(|| CornError::InvalidArgument("candidate is not of the form aI + cL".into()))?,
            };
            (pairwise_model(&gram, l.matrix(), scaled_cap, floor), pairwise_theta(a * kappa, c * kappa))
        }
        Structure::Scalar => (scalar_model(&gram, scaled_cap, floor), DVector::from_vec(vec![sol.r_star[(0, 0)] * kappa])),
    };
    let (theta, duals, estimated) = match &sol.certificate {
        Some(cert) if cert.theta.len() == model.n_vars => (cert.theta.clone(), cert.duals.clone(), false),
        _ => {
            let duals = estimate_duals(&model, &theta)?;
            (theta, duals, true)
        }
    };
    let mut rep = residuals(&model, &theta, &duals)?;

    let inv = inverse_diagonal(&sol.r_star)?;
    let worst = inv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    rep.primal_violation = (worst - kappa).max(T::zero());
    rep.min_eigenvalue = sorted_eigenvalues(&sol.r_star)?[0];
    rep.cap_slack = cap.map(|b| b - sol.r_star.diagonal().iter().copied().fold(T::zero(), |a, v| a.max(v)));
    rep.cap_active = super::cap_is_active(&sol.r_star, cap);
    rep.estimated_multipliers = estimated;
    rep.max_residual = rep
        .max_residual
        .max(rep.primal_violation / kappa)
        .max((-rep.min_eigenvalue).max(T::zero()));
    Ok(rep)
}

/// Residuals of `(θ, duals)` in model units.
pub(crate) fn residuals<T: Scalar>(model: &Model<T>, theta: &DVector<T>, duals: &Duals<T>) -> Result<KktReport<T>> {
    let grad = model
        .lagrangian_gradient(theta, duals)
        .ok_or_else(|| CornError::InvalidArgument("candidate covariance is not positive definite".into()))?;
    let c_scale = model.c.amax().max(T::eps());
    let stationarity = grad.amax() / c_scale;

    let h = model.inverse_diagonals(theta).expect("checked by lagrangian_gradient");
    let mut dual_min = T::zero();
    let mut comp = T::zero();
    for (lam, hv) in duals.inv.iter().zip(&h) {
        dual_min = dual_min.min(*lam);
        comp = comp.max((*lam * (T::one() - *hv)).abs());
    }
    for (nu, l) in duals.linear.iter().zip(&model.linear) {
        dual_min = dual_min.min(*nu);
        comp = comp.max((*nu * l.eval(theta)).abs());
    }
    for (z, e) in duals.psd.iter().zip(&model.psd) {
        let x = e.eval(theta);
        comp = comp.max((z * x).trace().abs());
        if let Ok(eig) = sorted_eigenvalues(z) {
            dual_min = dual_min.min(eig[0]);
        }
    }
    let obj = model.objective(theta).abs().max(T::eps());
    // multipliers carry units of objective per unit constraint; constraints are O(1) in model units
    let dual_infeasibility = (-dual_min).max(T::zero()) / obj.max(c_scale);
    let complementarity = comp / obj;
    let max_residual = stationarity.max(dual_infeasibility).max(complementarity);
    Ok(KktReport {
        primal_violation: T::zero(),
        min_eigenvalue: T::zero(),
        cap_slack: None,
        cap_active: false,
        dual_infeasibility,
        stationarity,
        complementarity,
        max_residual,
        estimated_multipliers: false,
    })
}

/// Corrects the scalar multipliers of `duals` by the minimum-norm change that
/// best cancels the Lagrangian gradient at `θ`.
///
/// Central-path multipliers `μ/slack` lose relative precision once slacks
/// approach machine precision times the constraint scale; the correction
/// restores stationarity to rounding level.
pub(crate) fn refine_duals<T: Scalar>(model: &Model<T>, theta: &DVector<T>, duals: Duals<T>) -> Option<Duals<T>> {
    let r0 = model.lagrangian_gradient(theta, &duals)?;
    let h = model.inverse_diagonals(theta)?;
    let dh = model.inverse_diagonal_gradients(theta)?;
    let tol = T::lit(REFINE_SLACK);
    let mut columns = Vec::new();
    let mut slots = Vec::new();
    for (k, (hv, g)) in h.iter().zip(dh).enumerate() {
        if T::one() - *hv <= tol {
            columns.push(g);
            slots.push((true, k));
        }
    }
    for (k, l) in model.linear.iter().enumerate() {
        let scale = l.constant.abs().max(theta.amax()).max(T::one());
        if l.eval(theta) <= tol * scale {
            let mut col = DVector::zeros(model.n_vars);
            for &(v, c) in &l.coefs {
                col[v] = -c;
            }
            columns.push(col);
            slots.push((false, k));
        }
    }
    // near-singular PSD blocks: correct Z within the span of the small eigenvectors
    let mut psd_dirs: Vec<(usize, DMatrix<T>)> = Vec::new();
    for (k, e) in model.psd.iter().enumerate() {
        let eig = e.eval(theta).symmetric_eigen();
        let scale = eig.eigenvalues.amax().max(T::one());
        let small: Vec<usize> = (0..e.dim).filter(|&j| eig.eigenvalues[j] <= tol * scale).collect();
        for (a, &ja) in small.iter().enumerate() {
            for &jb in &small[a..] {
                let va = eig.eigenvectors.column(ja);
                let vb = eig.eigenvectors.column(jb);
                let m = va * vb.transpose();
                let dir = if ja == jb { m } else { (&m + m.transpose()) * T::lit(0.5) };
                let mut col = DVector::zeros(model.n_vars);
                e.pair_with(&dir, &mut col, -T::one());
                columns.push(col);
                psd_dirs.push((k, dir));
            }
        }
    }
    if columns.is_empty() {
        return Some(duals);
    }
    let a = DMatrix::from_columns(&columns);
    let a_scale = a.amax().max(T::eps());
    let delta = a.svd(true, true).solve(&(-r0), T::eps() * T::lit(1e3) * a_scale).ok()?;
    let mut out = duals;
    let n_scalar = slots.len();
    for ((is_inv, k), d) in slots.into_iter().zip(delta.iter()) {
        if is_inv {
            out.inv[k] += *d;
        } else {
            out.linear[k] += *d;
        }
    }
    for ((k, dir), d) in psd_dirs.into_iter().zip(delta.iter().skip(n_scalar)) {
        out.psd[k] += dir * *d;
    }
    Some(out)
}

/// Least-squares multipliers for the active constraints at `θ`.
pub(crate) fn estimate_duals<T: Scalar>(model: &Model<T>, theta: &DVector<T>) -> Result<Duals<T>> {
    let h = model
        .inverse_diagonals(theta)
        .ok_or_else(|| CornError::InvalidArgument("candidate covariance is not positive definite".into()))?;
    let dh = model.inverse_diagonal_gradients(theta).expect("positive definite");
    let tol = T::lit(ACTIVE_TOLERANCE);
    let mut columns: Vec<DVector<T>> = Vec::new();
    let mut slots: Vec<(bool, usize)> = Vec::new();
    for (k, hv) in h.iter().enumerate() {
        if T::one() - *hv <= tol {
            columns.push(dh[k].clone());
            slots.push((true, k));
        }
    }
    for (k, l) in model.linear.iter().enumerate() {
        let scale = match l.tag {
            LinearTag::Cap(_) => l.constant.abs().max(T::one()),
            LinearTag::Floor | LinearTag::NonNegative(_) => theta.amax().max(T::one()),
        };
        if l.eval(theta) <= tol * scale {
            let mut col = DVector::zeros(model.n_vars);
            for &(v, c) in &l.coefs {
                col[v] = -c;
            }
            columns.push(col);
            slots.push((false, k));
        }
    }
    let mut duals = Duals {
        inv: vec![T::zero(); h.len()],
        linear: vec![T::zero(); model.linear.len()],
        psd: model.psd.iter().map(|e| DMatrix::zeros(e.dim, e.dim)).collect(),
    };
    if columns.is_empty() {
        return Ok(duals);
    }
    let a = DMatrix::from_columns(&columns);
    let a_scale = a.amax().max(T::one());
    let svd = a.svd(true, true);
    let rhs = -&model.c;
    let x = svd
        .solve(&rhs, T::eps() * T::lit(1e3) * a_scale)
        .map_err(|e| CornError::InvalidArgument(e.to_string()))?;
    for ((is_inv, k), v) in slots.into_iter().zip(x.iter()) {
        if is_inv {
            duals.inv[k] = *v;
        } else {
            duals.linear[k] = *v;
        }
    }
    Ok(duals)
}
