//! Affine parameterizations of the covariance design problems.
//!
//! A model is a vector of variables `θ` and a set of symmetric matrices that
//! depend affinely on `θ`. It carries three kinds of barrier terms:
//!
//! * `−log det X(θ)` for matrices that must stay positive definite,
//! * `−log(1 − [X(θ)⁻¹]_ii)` for the privacy constraints (units are scaled so
//!   that `κ = 1`),
//! * `−log(g(θ))` for affine scalar inequalities `g(θ) > 0`.
//!
//! The objective `cᵀθ` is `Tr(W R(θ) Wᵀ)` for the full covariance `R(θ)`.

use nalgebra::{DMatrix, DVector};

use crate::Scalar;

/// `coef` times `θ_var` added at `(row, col)`. Symmetric contributions list
/// both orientations.
#[derive(Clone, Debug)]
pub(crate) struct Position<T> {
    pub row: usize,
    pub col: usize,
    pub coef: T,
}

#[derive(Clone, Debug)]
pub(crate) struct VarTerm<T> {
    pub var: usize,
    pub positions: Vec<Position<T>>,
}

/// `offset·I + Σ_v θ_v E_v`.
#[derive(Clone, Debug)]
pub(crate) struct SymExpr<T> {
    pub dim: usize,
    pub offset: T,
    pub terms: Vec<VarTerm<T>>,
}

impl<T: Scalar> SymExpr<T> {
    pub fn new(dim: usize, offset: T) -> Self {
        Self { dim, offset, terms: Vec::new() }
    }

    /// Adds `coef·θ_var` at `(i, j)` and `(j, i)`.
    pub fn add_symmetric(&mut self, var: usize, i: usize, j: usize, coef: T) {
        let idx = match self.terms.iter().position(|t| t.var == var) {
            Some(k) => k,
            None => {
                self.terms.push(VarTerm { var, positions: Vec::new() });
                self.terms.len() - 1
            }
        };
        let p = &mut self.terms[idx].positions;
        p.push(Position { row: i, col: j, coef });
        if i != j {
            p.push(Position { row: j, col: i, coef });
        }
    }

    pub fn eval(&self, theta: &DVector<T>) -> DMatrix<T> {
        let mut x = DMatrix::identity(self.dim, self.dim) * self.offset;
        for term in &self.terms {
            let v = theta[term.var];
            for p in &term.positions {
                x[(p.row, p.col)] += p.coef * v;
            }
        }
        x
    }

    /// `∂/∂θ_v ⟨G, X(θ)⟩` for every variable of the expression.
    pub fn pair_with(&self, g: &DMatrix<T>, out: &mut DVector<T>, scale: T) {
        for term in &self.terms {
            let mut acc = T::zero();
            for p in &term.positions {
                acc += p.coef * g[(p.row, p.col)];
            }
            out[term.var] += scale * acc;
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct InvDiagGroup {
    pub expr: usize,
    pub rows: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LinearTag {
    Cap(usize),
    Floor,
    NonNegative(usize),
}

/// `constant + Σ coef·θ_var > 0`.
#[derive(Clone, Debug)]
pub(crate) struct LinearCon<T> {
    pub constant: T,
    pub coefs: Vec<(usize, T)>,
    pub tag: LinearTag,
}

impl<T: Scalar> LinearCon<T> {
    pub fn eval(&self, theta: &DVector<T>) -> T {
        self.coefs.iter().fold(self.constant, |acc, &(v, c)| acc + c * theta[v])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Model<T: Scalar> {
    pub n_vars: usize,
    pub c: DVector<T>,
    /// The full covariance `R(θ)`, in units where `κ = 1`.
    pub full: SymExpr<T>,
    /// Matrices referenced by inverse-diagonal constraints.
    pub noise_exprs: Vec<SymExpr<T>>,
    pub inv_groups: Vec<InvDiagGroup>,
    pub psd: Vec<SymExpr<T>>,
    pub linear: Vec<LinearCon<T>>,
}

/// Barrier value with derivatives.
pub(crate) struct Derivatives<T: Scalar> {
    pub value: T,
    pub grad: DVector<T>,
    pub hess: DMatrix<T>,
}

/// Multipliers of every constraint, in model order.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Duals<T: Scalar> {
    /// One per (group, row) in group order.
    pub inv: Vec<T>,
    pub linear: Vec<T>,
    pub psd: Vec<DMatrix<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(n_vars: usize, full: SymExpr<T>, gram: &DMatrix<T>) -> Self {
        let mut c = DVector::zeros(n_vars);
        full.pair_with(gram, &mut c, T::one());
        Self { n_vars, c, full, noise_exprs: Vec::new(), inv_groups: Vec::new(), psd: Vec::new(), linear: Vec::new() }
    }

    pub fn objective(&self, theta: &DVector<T>) -> T {
        self.c.dot(theta)
    }

    /// Self-concordance parameter of the barrier (duality gap is `ν/t`).
    pub fn barrier_parameter(&self) -> usize {
        self.psd.iter().map(|e| e.dim).sum::<usize>()
            + self.inv_groups.iter().map(|g| g.rows.len()).sum::<usize>()
            + self.linear.len()
    }

    pub fn inv_constraint_count(&self) -> usize {
        self.inv_groups.iter().map(|g| g.rows.len()).sum()
    }

    /// Adds `R_ii ≤ cap` for every diagonal entry of the full expression.
    pub fn add_caps(&mut self, cap: T) {
        for i in 0..self.full.dim {
            let mut coefs: Vec<(usize, T)> = Vec::new();
            for term in &self.full.terms {
                let s: T = term
                    .positions
                    .iter()
                    .filter(|p| p.row == i && p.col == i)
                    .fold(T::zero(), |a, p| a + p.coef);
                if s != T::zero() {
                    coefs.push((term.var, -s));
                }
            }
            self.linear.push(LinearCon { constant: cap - self.full.offset, coefs, tag: LinearTag::Cap(i) });
        }
    }

    /// Barrier value (without the objective), or `None` outside the domain.
    pub fn barrier_value(&self, theta: &DVector<T>) -> Option<T> {
        let mut value = T::zero();
        for e in &self.psd {
            let chol = e.eval(theta).cholesky()?;
            let l = chol.l_dirty();
            for i in 0..e.dim {
                value -= T::lit(2.0) * l[(i, i)].ln();
            }
        }
        for g in &self.inv_groups {
            let inv = self.noise_exprs[g.expr].eval(theta).cholesky()?.inverse();
            for &i in &g.rows {
                let slack = T::one() - inv[(i, i)];
                if !(slack > T::zero()) {
                    return None;
                }
                value -= slack.ln();
            }
        }
        for l in &self.linear {
            let g = l.eval(theta);
            if !(g > T::zero()) {
                return None;
            }
            value -= g.ln();
        }
        value.is_finite().then_some(value)
    }

    /// Barrier value, gradient and Hessian. `None` outside the domain.
    pub fn barrier_derivatives(&self, theta: &DVector<T>) -> Option<Derivatives<T>> {
        let p = self.n_vars;
        let mut value = T::zero();
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let two = T::lit(2.0);

        for e in &self.psd {
            let chol = e.eval(theta).cholesky()?;
            {
                let l = chol.l_dirty();
                for i in 0..e.dim {
                    value -= two * l[(i, i)].ln();
                }
            }
            let inv = chol.inverse();
            e.pair_with(&inv, &mut grad, -T::one());
            // H_vu = Tr(P E_v P E_u) = Σ w w' P_bs P_ta
            for (a, ta) in e.terms.iter().enumerate() {
                for tb in &e.terms[a..] {
                    let mut acc = T::zero();
                    for pa in &ta.positions {
                        for pb in &tb.positions {
                            acc += pa.coef * pb.coef * inv[(pb.col, pa.row)] * inv[(pa.col, pb.row)];
                        }
                    }
                    hess[(ta.var, tb.var)] += acc;
                    if ta.var != tb.var {
                        hess[(tb.var, ta.var)] += acc;
                    }
                }
            }
        }

        for g in &self.inv_groups {
            let e = &self.noise_exprs[g.expr];
            let inv = e.eval(theta).cholesky()?.inverse();
            let k = e.terms.len();
            let mut y = DMatrix::<T>::zeros(e.dim, e.dim);
            let mut rank = DMatrix::<T>::zeros(k, g.rows.len());
            for (col, &i) in g.rows.iter().enumerate() {
                let slack = T::one() - inv[(i, i)];
                if !(slack > T::zero()) {
                    return None;
                }
                value -= slack.ln();
                let w = T::one() / slack;
                let u = inv.column(i);
                for (a, t) in e.terms.iter().enumerate() {
                    // ∂h/∂θ = −uᵀ E u
                    let mut dh = T::zero();
                    for pos in &t.positions {
                        dh -= pos.coef * u[pos.row] * u[pos.col];
                    }
                    grad[t.var] += w * dh;
                    rank[(a, col)] = w * dh;
                }
                y.ger(w, &u, &u, T::one());
            }
            // Σ_i ω_i ∇²h_i = 2 Σ w w' P_ta Y_sb
            for (a, ta) in e.terms.iter().enumerate() {
                for tb in &e.terms[a..] {
                    let mut acc = T::zero();
                    for pa in &ta.positions {
                        for pb in &tb.positions {
                            acc += pa.coef * pb.coef * inv[(pa.col, pb.row)] * y[(pa.row, pb.col)];
                        }
                    }
                    acc *= two;
                    hess[(ta.var, tb.var)] += acc;
                    if ta.var != tb.var {
                        hess[(tb.var, ta.var)] += acc;
                    }
                }
            }
            let outer = &rank * rank.transpose();
            for (a, ta) in e.terms.iter().enumerate() {
                for (b, tb) in e.terms.iter().enumerate() {
                    hess[(ta.var, tb.var)] += outer[(a, b)];
                }
            }
        }

        for l in &self.linear {
            let gv = l.eval(theta);
            if !(gv > T::zero()) {
                return None;
            }
            value -= gv.ln();
            let inv = T::one() / gv;
            for &(v, c) in &l.coefs {
                grad[v] -= c * inv;
                for &(u, d) in &l.coefs {
                    hess[(v, u)] += c * d * inv * inv;
                }
            }
        }

        value.is_finite().then_some(Derivatives { value, grad, hess })
    }

    /// Inverse-diagonal values `[X⁻¹]_ii` in group order, or `None` if some
    /// noise matrix is not positive definite.
    pub fn inverse_diagonals(&self, theta: &DVector<T>) -> Option<Vec<T>> {
        let mut out = Vec::with_capacity(self.inv_constraint_count());
        for g in &self.inv_groups {
            let inv = self.noise_exprs[g.expr].eval(theta).cholesky()?.inverse();
            out.extend(g.rows.iter().map(|&i| inv[(i, i)]));
        }
        Some(out)
    }

    /// Gradients `∂[X⁻¹]_ii/∂θ` in group order.
    pub fn inverse_diagonal_gradients(&self, theta: &DVector<T>) -> Option<Vec<DVector<T>>> {
        let mut out = Vec::new();
        for g in &self.inv_groups {
            let e = &self.noise_exprs[g.expr];
            let inv = e.eval(theta).cholesky()?.inverse();
            for &i in &g.rows {
                let u = inv.column(i);
                let mut d = DVector::zeros(self.n_vars);
                for t in &e.terms {
                    for pos in &t.positions {
                        d[t.var] -= pos.coef * u[pos.row] * u[pos.col];
                    }
                }
                out.push(d);
            }
        }
        Some(out)
    }

    /// Multipliers implied by the central path at barrier weight `t`.
    pub fn central_duals(&self, theta: &DVector<T>, t: T) -> Option<Duals<T>> {
        let mu = T::one() / t;
        let inv = self.inverse_diagonals(theta)?.into_iter().map(|h| mu / (T::one() - h)).collect();
        let linear = self.linear.iter().map(|l| mu / l.eval(theta)).collect();
        let mut psd = Vec::new();
        for e in &self.psd {
            psd.push(e.eval(theta).cholesky()?.inverse() * mu);
        }
        Some(Duals { inv, linear, psd })
    }

    /// `∇_θ` of the Lagrangian `cᵀθ + Σλ(h − 1) − Σν g − Σ⟨Z, X⟩`.
    pub fn lagrangian_gradient(&self, theta: &DVector<T>, duals: &Duals<T>) -> Option<DVector<T>> {
        let mut r = self.c.clone();
        for (lam, dh) in duals.inv.iter().zip(self.inverse_diagonal_gradients(theta)?) {
            r.axpy(*lam, &dh, T::one());
        }
        for (nu, l) in duals.linear.iter().zip(&self.linear) {
            for &(v, c) in &l.coefs {
                r[v] -= *nu * c;
            }
        }
        for (z, e) in duals.psd.iter().zip(&self.psd) {
            e.pair_with(z, &mut r, -T::one());
        }
        Some(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// General model on `vech(R)` for tests.
    fn vech_model(n: usize, gram: &DMatrix<f64>) -> Model<f64> {
        let mut full = SymExpr::new(n, 0.0);
        let mut var = 0;
        for i in 0..n {
            for j in i..n {
                full.add_symmetric(var, i, j, 1.0);
                var += 1;
            }
        }
        let mut m = Model::new(var, full.clone(), gram);
        let mut psd = full.clone();
        psd.offset = -1e-3;
        m.psd.push(psd);
        m.noise_exprs.push(full);
        m.inv_groups.push(InvDiagGroup { expr: 0, rows: (0..n).collect() });
        m.add_caps(50.0);
        m
    }

    fn random_theta(n: usize) -> DVector<f64> {
        // diagonally dominant symmetric matrix, vech order
        let mut v = Vec::new();
        for i in 0..n {
            for j in i..n {
                v.push(if i == j { 3.0 + 0.3 * i as f64 } else { 0.2 * ((i * 7 + j * 3) % 5) as f64 - 0.4 });
            }
        }
        DVector::from_vec(v)
    }

    #[test]
    fn objective_is_trace_with_gram() {
        let n = 3;
        let w = DMatrix::from_row_slice(3, 3, &[0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]);
        let gram = w.transpose() * &w;
        let m = vech_model(n, &gram);
        let theta = random_theta(n);
        let r = m.full.eval(&theta);
        let direct = (&w * &r * w.transpose()).trace();
        assert!((m.objective(&theta) - direct).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let n = 3;
        let gram = DMatrix::identity(n, n);
        let m = vech_model(n, &gram);
        let theta = random_theta(n);
        let d = m.barrier_derivatives(&theta).unwrap();
        assert!((d.value - m.barrier_value(&theta).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for k in 0..m.n_vars {
            let mut tp = theta.clone();
            tp[k] += h;
            let mut tm = theta.clone();
            tm[k] -= h;
            let fd = (m.barrier_value(&tp).unwrap() - m.barrier_value(&tm).unwrap()) / (2.0 * h);
            assert!((fd - d.grad[k]).abs() < 1e-6 * (1.0 + fd.abs()), "grad {k}: {fd} vs {}", d.grad[k]);
            let gp = m.barrier_derivatives(&tp).unwrap().grad;
            let gm = m.barrier_derivatives(&tm).unwrap().grad;
            for l in 0..m.n_vars {
                let fd = (gp[l] - gm[l]) / (2.0 * h);
                assert!((fd - d.hess[(l, k)]).abs() < 1e-5 * (1.0 + fd.abs()), "hess ({l},{k})");
            }
        }
    }

    #[test]
    fn domain_is_enforced() {
        let n = 2;
        let m = vech_model(n, &DMatrix::identity(n, n));
        // R = 0.5 I violates [R⁻¹]_ii ≤ 1
        let theta = DVector::from_vec(vec![0.5, 0.0, 0.5]);
        assert!(m.barrier_value(&theta).is_none());
        assert!(m.barrier_derivatives(&theta).is_none());
        let theta = DVector::from_vec(vec![60.0, 0.0, 2.0]);
        assert!(m.barrier_value(&theta).is_none());
    }
}
