//! Multi-seed design against coalitions of honest-but-curious agents.
//!
//! Seed `k` is shared by the agents in `H_k` and drives a correlated block
//! `R_k ⪰ 0` supported on `H_k × H_k`. A coalition `I` knows every seed held
//! by one of its members, so the noise it cannot remove has covariance
//! `σ²·I + Σ_{k: H_k ∩ I = ∅} R_k`. Each agent outside each coalition of
//! size at most `q` must still meet `[(·)⁻¹]_ii ≤ κ`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use super::barrier;
use super::kkt::residuals;
use super::model::{InvDiagGroup, Model, SymExpr};
use super::{cap_is_active, check_attainable, check_cap, floor_constraint, initial_level, resolve_cap, Cap, Certificate, CovSolution, KktReport, SolverOptions};
use crate::covariance::effective_variance;
use crate::graph::{sorted_eigenvalues, MixingMatrix};
use crate::privacy::ConstraintLevel;
use crate::{CornError, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HbcThreatModel {
    /// `H_1..H_m`, the agents knowing each seed. May overlap.
    pub groups: Vec<Vec<usize>>,
    /// Largest coalition size protected against.
    pub q: usize,
}

impl HbcThreatModel {
    pub fn new(groups: Vec<Vec<usize>>, q: usize) -> Self {
        let groups = groups
            .into_iter()
            .map(|g| g.into_iter().collect::<BTreeSet<_>>().into_iter().collect())
            .collect();
        Self { groups, q }
    }

    /// One seed shared by everyone, no internal adversary.
    pub fn eavesdropper(n: usize) -> Self {
        Self::new(vec![(0..n).collect()], 0)
    }

    /// `m` disjoint groups of near-equal size.
    pub fn disjoint(n: usize, m: usize, q: usize) -> Self {
        let m = m.clamp(1, n);
        let groups = (0..m).map(|k| (0..n).filter(|i| i * m / n == k).collect()).collect();
        Self::new(groups, q)
    }

    pub fn m(&self) -> usize {
        self.groups.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.q >= n.max(1) {
            return Err(CornError::InvalidArgument(format!("q = {} must be < n = {n}", self.q)));
        }
        for (k, g) in self.groups.iter().enumerate() {
            if let Some(&i) = g.iter().find(|&&i| i >= n) {
                return Err(CornError::InvalidArgument(format!("group {k} names agent {i} >= n = {n}")));
            }
        }
        Ok(())
    }
}

/// `Σ_{j ≤ q} C(n, j)`.
pub fn coalition_count(n: usize, q: usize) -> u128 {
    let mut total = 0u128;
    let mut binom = 1u128;
    for j in 0..=q.min(n) {
        total = total.saturating_add(binom);
        binom = binom.saturating_mul((n - j) as u128) / (j as u128 + 1);
    }
    total
}

/// Maps each unknown-seed set to the agents it must protect.
fn constraint_sets(n: usize, threat: &HbcThreatModel) -> BTreeMap<Vec<bool>, BTreeSet<usize>> {
    let mut out: BTreeMap<Vec<bool>, BTreeSet<usize>> = BTreeMap::new();
    let mut coalition: Vec<usize> = Vec::new();
    fn visit(
        start: usize,
        n: usize,
        q: usize,
        coalition: &mut Vec<usize>,
        threat: &HbcThreatModel,
        out: &mut BTreeMap<Vec<bool>, BTreeSet<usize>>,
    ) {
        let unknown: Vec<bool> = threat
            .groups
            .iter()
            .map(|g| !g.iter().any(|i| coalition.contains(i)))
            .collect();
        let rows = out.entry(unknown).or_default();
        rows.extend((0..n).filter(|i| !coalition.contains(i)));
        if coalition.len() == q {
            return;
        }
        for next in start..n {
            coalition.push(next);
            visit(next + 1, n, q, coalition, threat, out);
            coalition.pop();
        }
    }
    visit(0, n, threat.q, &mut coalition, threat, &mut out);
    out
}

struct HbcLayout {
    /// First variable of each group's block, `None` for empty groups.
    offsets: Vec<Option<usize>>,
    n_vars: usize,
}

fn layout(threat: &HbcThreatModel) -> HbcLayout {
    let mut next = 1;
    let offsets = threat
        .groups
        .iter()
        .map(|g| {
            if g.is_empty() {
                None
            } else {
                let start = next;
                next += g.len() * (g.len() + 1) / 2;
                Some(start)
            }
        })
        .collect();
    HbcLayout { offsets, n_vars: next }
}

/// Adds `R_k` (global indices) to `expr`.
fn add_block<T: Scalar>(expr: &mut SymExpr<T>, group: &[usize], start: usize, local: bool) {
    let mut var = start;
    for a in 0..group.len() {
        for b in a..group.len() {
            let (i, j) = if local { (a, b) } else { (group[a], group[b]) };
            expr.add_symmetric(var, i, j, T::one());
            var += 1;
        }
    }
}

fn hbc_model<T: Scalar>(
    gram: &DMatrix<T>,
    threat: &HbcThreatModel,
    lay: &HbcLayout,
    cap: Option<T>,
    floor: T,
) -> Model<T> {
    let n = gram.nrows();
    let sigma_diag = |expr: &mut SymExpr<T>| {
        for i in 0..n {
            expr.add_symmetric(0, i, i, T::one());
        }
    };
    let mut full = SymExpr::new(n, T::zero());
    sigma_diag(&mut full);
    for (g, off) in threat.groups.iter().zip(&lay.offsets) {
        if let Some(start) = off {
            add_block(&mut full, g, *start, false);
        }
    }
    let mut model = Model::new(lay.n_vars, full, gram);
    for (unknown, rows) in constraint_sets(n, threat) {
        let mut expr = SymExpr::new(n, T::zero());
        sigma_diag(&mut expr);
        for ((g, off), known) in threat.groups.iter().zip(&lay.offsets).zip(&unknown) {
            if let (Some(start), true) = (off, known) {
                add_block(&mut expr, g, *start, false);
            }
        }
        model.inv_groups.push(InvDiagGroup { expr: model.noise_exprs.len(), rows: rows.into_iter().collect() });
        model.noise_exprs.push(expr);
    }
    for (g, off) in threat.groups.iter().zip(&lay.offsets) {
        if let Some(start) = off {
            let mut expr = SymExpr::new(g.len(), T::zero());
            add_block(&mut expr, g, *start, true);
            model.psd.push(expr);
        }
    }
    model.linear.push(floor_constraint(0, floor));
    if let Some(b) = cap {
        model.add_caps(b);
    }
    model
}

fn initial_point<T: Scalar>(threat: &HbcThreatModel, lay: &HbcLayout, cap: Option<T>) -> DVector<T> {
    let sigma = initial_level(cap);
    let spread = match cap {
        Some(b) => T::one().min((b - sigma) * T::lit(0.5)),
        None => T::one(),
    };
    let eps = spread / T::from_usize_lossy(threat.m().max(1));
    let mut theta = DVector::zeros(lay.n_vars);
    theta[0] = sigma;
    for (g, off) in threat.groups.iter().zip(&lay.offsets) {
        if let Some(start) = off {
            let mut var = *start;
            for a in 0..g.len() {
                for b in a..g.len() {
                    if a == b {
                        theta[var] = eps;
                    }
                    var += 1;
                }
            }
        }
    }
    theta
}

fn block_matrix<T: Scalar>(n: usize, group: &[usize], start: usize, theta: &DVector<T>) -> DMatrix<T> {
    let mut m = DMatrix::zeros(n, n);
    let mut var = start;
    for a in 0..group.len() {
        for b in a..group.len() {
            m[(group[a], group[b])] = theta[var];
            m[(group[b], group[a])] = theta[var];
            var += 1;
        }
    }
    m
}

pub fn solve_cov_hbc<T: Scalar>(
    w: &MixingMatrix<T>,
    kappa: ConstraintLevel<T>,
    threat: &HbcThreatModel,
    cap: Cap<T>,
) -> Result<CovSolution<T>> {
    solve_cov_hbc_with(w, kappa, threat, cap, &SolverOptions::default())
}

pub fn solve_cov_hbc_with<T: Scalar>(
    w: &MixingMatrix<T>,
    kappa: ConstraintLevel<T>,
    threat: &HbcThreatModel,
    cap: Cap<T>,
    opts: &SolverOptions<T>,
) -> Result<CovSolution<T>> {
    let n = w.n();
    threat.validate(n)?;
    let count = coalition_count(n, threat.q);
    if count > opts.coalition_limit as u128 {
        return Err(CornError::CoalitionExplosion { count, limit: opts.coalition_limit });
    }
    let cap_value = resolve_cap(cap, kappa);
    check_cap(cap_value, kappa)?;
    let k = kappa.value();
    let scaled_cap = cap_value.map(|b| b * k);
    check_attainable(&w.gram(), scaled_cap)?;
    let lay = layout(threat);
    let model = hbc_model(&w.gram(), threat, &lay, scaled_cap, opts.floor_ratio);
    let theta0 = initial_point(threat, &lay, scaled_cap);
    let out = barrier::solve(&model, theta0, opts)?;

    let mut theta = out.theta.clone();
    let worst = model
        .inverse_diagonals(&theta)
        .ok_or_else(|| CornError::Infeasible("solver left the domain".into()))?
        .into_iter()
        .fold(T::zero(), |a, b| a.max(b));
    let target = T::one() - opts.safety_margin;
    if worst > target {
        theta *= worst / target;
    }

    let r = model.full.eval(&theta) / k;
    let correlated = threat
        .groups
        .iter()
        .zip(&lay.offsets)
        .map(|(g, off)| match off {
            Some(start) => block_matrix(n, g, *start, &theta) / k,
            None => DMatrix::zeros(n, n),
        })
        .collect();
    let mut report = residuals(&model, &out.theta, &out.duals)?;
    finish_report(&mut report, &model, &theta, &r, cap_value)?;
    Ok(CovSolution {
        objective: effective_variance(w, &r)?,
        cap_active: cap_is_active(&r, cap_value),
        sigma_mix2: theta[0] / k,
        correlated,
        sigma_cor2: None,
        kkt_residual: report.max_residual,
        iterations: out.newton_steps,
        structure: "hbc",
        certificate: Some(Certificate { theta: out.theta, duals: out.duals, hbc: true }),
        r_star: r,
    })
}

fn finish_report<T: Scalar>(
    report: &mut KktReport<T>,
    model: &Model<T>,
    theta: &DVector<T>,
    r: &DMatrix<T>,
    cap: Option<T>,
) -> Result<()> {
    let h = model
        .inverse_diagonals(theta)
        .ok_or_else(|| CornError::Infeasible("solution is not positive definite".into()))?;
    // model units have κ = 1
    let worst = h.into_iter().fold(T::zero(), |a, b| a.max(b));
    report.primal_violation = (worst - T::one()).max(T::zero());
    report.min_eigenvalue = sorted_eigenvalues(r)?[0];
    report.cap_slack = cap.map(|b| b - r.diagonal().iter().copied().fold(T::zero(), |a, v| a.max(v)));
    report.cap_active = cap_is_active(r, cap);
    report.max_residual = report.max_residual.max(report.primal_violation);
    Ok(())
}

/// KKT residuals of an HBC solution.
pub fn kkt_report_hbc<T: Scalar>(
    sol: &CovSolution<T>,
    w: &MixingMatrix<T>,
    kappa: ConstraintLevel<T>,
    threat: &HbcThreatModel,
    cap: Cap<T>,
) -> Result<KktReport<T>> {
    let cert = sol
        .certificate
        .as_ref()
        .filter(|c| c.hbc)
        .ok_or_else(|| CornError::InvalidArgument("not an HBC solution".into()))?;
    let cap_value = resolve_cap(cap, kappa);
    let lay = layout(threat);
    let opts = SolverOptions::<T>::default();
    let model = hbc_model(&w.gram(), threat, &lay, cap_value.map(|b| b * kappa.value()), opts.floor_ratio);
    if cert.theta.len() != model.n_vars {
        return Err(CornError::Dimension("solution does not match the threat model".into()));
    }
    let mut report = residuals(&model, &cert.theta, &cert.duals)?;
    let mut theta = DVector::zeros(lay.n_vars);
    theta[0] = sol.sigma_mix2 * kappa.value();
    for ((g, off), block) in threat.groups.iter().zip(&lay.offsets).zip(&sol.correlated) {
        if let Some(start) = off {
            let mut var = *start;
            for a in 0..g.len() {
                for b in a..g.len() {
                    theta[var] = block[(g[a], g[b])] * kappa.value();
                    var += 1;
                }
            }
        }
    }
    finish_report(&mut report, &model, &theta, &sol.r_star, cap_value)?;
    Ok(report)
}

/// `[(R^(I))⁻¹]_ii` for every coalition `|I| ≤ q` and agent `i ∉ I`, in
/// variance units. Used to audit a solution independently of the solver.
pub fn coalition_inverse_diagonals<T: Scalar>(
    sol: &CovSolution<T>,
    threat: &HbcThreatModel,
) -> Result<Vec<(Vec<bool>, usize, T)>> {
    let n = sol.r_star.nrows();
    let mut out = Vec::new();
    for (unknown, rows) in constraint_sets(n, threat) {
        let mut r = DMatrix::identity(n, n) * sol.sigma_mix2;
        for (block, known) in sol.correlated.iter().zip(&unknown) {
            if *known {
                r += block;
            }
        }
        let inv = r
            .cholesky()
            .ok_or(CornError::NotPositiveDefinite { min_eigenvalue: f64::NAN })?
            .inverse();
        for i in rows {
            out.push((unknown.clone(), i, inv[(i, i)]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coalition_counts() {
        assert_eq!(coalition_count(5, 0), 1);
        assert_eq!(coalition_count(5, 1), 6);
        assert_eq!(coalition_count(5, 2), 16);
        assert_eq!(coalition_count(4, 3), 15);
        assert_eq!(coalition_count(20, 2), 211);
    }

    #[test]
    fn constraint_sets_for_singletons() {
        let threat = HbcThreatModel::new((0..3).map(|k| vec![k]).collect(), 2);
        let sets = constraint_sets(3, &threat);
        // U for I = {} is all groups; every singleton remainder appears.
        assert_eq!(sets[&vec![true, true, true]], (0..3).collect());
        assert_eq!(sets[&vec![true, false, false]], [0].into_iter().collect());
    }

    #[test]
    fn validation() {
        assert!(HbcThreatModel::new(vec![vec![0, 5]], 0).validate(3).is_err());
        assert!(HbcThreatModel::new(vec![vec![0, 1]], 3).validate(3).is_err());
        let d = HbcThreatModel::disjoint(7, 3, 1);
        assert_eq!(d.groups.iter().map(Vec::len).sum::<usize>(), 7);
        assert!(d.validate(7).is_ok());
    }
}
