//! Log-barrier interior point method with damped Newton centering.

use nalgebra::{DMatrix, DVector};

use super::kkt::refine_duals;
use super::model::{Duals, Model};
use super::SolverOptions;
use crate::{CornError, Result, Scalar};

pub(crate) struct BarrierOutcome<T: Scalar> {
    pub theta: DVector<T>,
    pub duals: Duals<T>,
    pub newton_steps: usize,
}

/// Solves `H·Δ = −g`, regularizing if `H` is not numerically positive definite.
fn newton_direction<T: Scalar>(hess: &DMatrix<T>, grad: &DVector<T>) -> Option<DVector<T>> {
    let scale = (0..hess.nrows()).map(|i| hess[(i, i)].abs()).fold(T::zero(), |a, b| a.max(b));
    let mut reg = T::zero();
    for _ in 0..12 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += reg;
        }
        if let Some(chol) = h.cholesky() {
            let d = chol.solve(&(-grad));
            if d.iter().all(|x| x.is_finite()) {
                return Some(d);
            }
        }
        reg = if reg == T::zero() { scale * T::eps() * T::lit(16.0) } else { reg * T::lit(100.0) };
    }
    None
}

/// Minimizes `t·cᵀθ + φ(θ)` from a strictly feasible `θ`.
fn center<T: Scalar>(
    model: &Model<T>,
    theta: &mut DVector<T>,
    t: T,
    tol: T,
    max_steps: usize,
) -> usize {
    const ARMIJO: f64 = 0.01;
    let mut steps = 0;
    while steps < max_steps {
        let Some(d) = model.barrier_derivatives(theta) else {
            return steps;
        };
        let grad = &model.c * t + &d.grad;
        let Some(dir) = newton_direction(&d.hess, &grad) else {
            return steps;
        };
        let decrement = -grad.dot(&dir);
        if decrement * T::lit(0.5) <= tol {
            return steps;
        }
        let f0 = t * model.objective(theta) + d.value;
        let mut s = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &*theta + &dir * s;
            if let Some(phi) = model.barrier_value(&cand) {
                let f1 = t * model.objective(&cand) + phi;
                if f1 <= f0 - T::lit(ARMIJO) * s * decrement {
                    *theta = cand;
                    accepted = true;
                    break;
                }
            }
            s *= T::lit(0.5);
        }
        steps += 1;
        if !accepted {
            // no measurable decrease left at this precision
            return steps;
        }
    }
    steps
}

pub(crate) fn solve<T: Scalar>(model: &Model<T>, theta0: DVector<T>, opts: &SolverOptions<T>) -> Result<BarrierOutcome<T>> {
    let mut theta = theta0;
    if model.barrier_value(&theta).is_none() {
        return Err(CornError::Infeasible("initial point is not strictly feasible".into()));
    }
    let nu = T::from_usize_lossy(model.barrier_parameter().max(1));
    let obj0 = model.objective(&theta).abs().max(T::eps());
    let gap_target = opts.gap_tolerance * obj0;
    let scale0 = theta.amax().max(T::eps());
    let mut t = nu / obj0;
    let mut newton_steps = 0;
    let mut outer = 0;
    loop {
        outer += 1;
        let c = center(model, &mut theta, t, opts.newton_tolerance, opts.max_newton_steps);
        newton_steps += c;
        let gap = nu / t;
        if gap <= gap_target {
            // Polish the last center so stationarity holds tightly.
            let p = center(model, &mut theta, t, opts.newton_tolerance * T::lit(1e-10), 30);
            newton_steps += p;
            let duals = model
                .central_duals(&theta, t)
                .and_then(|d| refine_duals(model, &theta, d))
                .ok_or_else(|| CornError::Infeasible("lost feasibility".into()))?;
            return Ok(BarrierOutcome { theta, duals, newton_steps });
        }
        if outer >= opts.max_outer_iterations {
            return Err(CornError::NonConvergence { iterations: outer, residual: gap.as_f64() / obj0.as_f64() });
        }
        if theta.amax() > T::lit(1e10) * scale0 {
            return Err(CornError::Infeasible(
                "optimum not attained: covariance mass escapes into the null space of W; set a diagonal cap".into(),
            ));
        }
        t /= opts.mu_factor;
    }
}
