//! Agent-level (ε, δ) accounting for correlated Gaussian noise.
//!
//! Each iteration is an `(α, α·ε_step)`-RDP mechanism with
//! `ε_step = 2C²·max_i [R⁻¹]_ii`. Composition over `T` iterations adds the
//! RDP curves, and the conversion to `(ε, δ)` adds `ln(1/δ)/(α − 1)`.
//! Minimizing over `α > 1` gives the closed form used by [`epsilon_bound`].

use nalgebra::DMatrix;

use crate::covariance::check_square_symmetric;
use crate::graph::sorted_eigenvalues;
use crate::{CornError, Result, Scalar};

/// Condition number above which a covariance is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Target `(ε, δ)` together with the horizon and clipping threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyBudget<T: Scalar> {
    pub epsilon: T,
    pub delta: T,
    pub iterations: u64,
    pub clip: T,
}

impl<T: Scalar> PrivacyBudget<T> {
    pub fn new(epsilon: T, delta: T, iterations: u64, clip: T) -> Result<Self> {
        let b = Self { epsilon, delta, iterations, clip };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero()) {
            return Err(CornError::InvalidArgument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(CornError::InvalidArgument(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if self.iterations == 0 {
            return Err(CornError::InvalidArgument("iteration count must be >= 1".into()));
        }
        if !(self.clip > T::zero()) {
            return Err(CornError::InvalidArgument(format!("clipping threshold must be > 0, got {}", self.clip)));
        }
        Ok(())
    }

    /// `ln(1/δ)`.
    pub fn log_inv_delta(&self) -> T {
        -self.delta.ln()
    }

    pub fn kappa(&self) -> ConstraintLevel<T> {
        kappa_from_budget(self)
    }
}

/// Upper bound on every diagonal entry of `R⁻¹`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintLevel<T: Scalar> {
    kappa: T,
}

impl<T: Scalar> ConstraintLevel<T> {
    pub fn new(kappa: T) -> Result<Self> {
        if kappa > T::zero() && kappa.is_finite() {
            Ok(Self { kappa })
        } else {
            Err(CornError::InvalidArgument(format!("kappa must be a positive finite number, got {kappa}")))
        }
    }

    pub fn value(&self) -> T {
        self.kappa
    }
}

/// `κ = ε² / (16·C²·T·ln(1/δ))`.
pub fn kappa_from_budget<T: Scalar>(b: &PrivacyBudget<T>) -> ConstraintLevel<T> {
    let t = T::lit(b.iterations as f64);
    let kappa = b.epsilon * b.epsilon / (T::lit(16.0) * b.clip * b.clip * t * b.log_inv_delta());
    ConstraintLevel { kappa }
}

/// Diagonal of `R⁻¹`, refusing numerically singular matrices.
pub fn inverse_diagonal<T: Scalar>(r: &DMatrix<T>) -> Result<Vec<T>> {
    check_square_symmetric(r)?;
    let eig = sorted_eigenvalues(r)?;
    let (lo, hi) = match (eig.first(), eig.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(CornError::Dimension("empty covariance".into())),
    };
    if lo <= T::zero() {
        return Err(CornError::Singular { condition: f64::INFINITY });
    }
    let condition = (hi / lo).as_f64();
    if condition > MAX_CONDITION {
        return Err(CornError::Singular { condition });
    }
    let inv = r
        .clone()
        .cholesky()
        .ok_or(CornError::Singular { condition })?
        .inverse();
    Ok(inv.diagonal().iter().copied().collect())
}

fn max_of<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().fold(T::zero(), |a, b| a.max(b))
}

/// `ε_step = 2C²·max_i [R⁻¹]_ii`.
pub fn per_step_rdp<T: Scalar>(r: &DMatrix<T>, clip: T) -> Result<T> {
    Ok(T::lit(2.0) * clip * clip * max_of(&inverse_diagonal(r)?))
}

/// `ε` of `T` composed `(α, α·ε_step)`-RDP steps converted at order `α`.
pub fn rdp_epsilon_at_order<T: Scalar>(step: T, iterations: u64, delta: T, alpha: T) -> T {
    let t = T::lit(iterations as f64);
    t * alpha * step + (-delta.ln()) / (alpha - T::one())
}

/// The order minimizing [`rdp_epsilon_at_order`]: `1 + √(ln(1/δ) / (T·ε_step))`.
pub fn optimal_rdp_order<T: Scalar>(step: T, iterations: u64, delta: T) -> T {
    let t = T::lit(iterations as f64);
    T::one() + ((-delta.ln()) / (t * step)).sqrt()
}

/// Right-hand side of the `(ε, δ)` guarantee,
/// `2C²T·m + 2C·√(2T·ln(1/δ)·m)` with `m = max_i [R⁻¹]_ii`.
pub fn epsilon_bound<T: Scalar>(r: &DMatrix<T>, b: &PrivacyBudget<T>) -> Result<T> {
    let m = max_of(&inverse_diagonal(r)?);
    Ok(epsilon_bound_from_max(m, b))
}

pub(crate) fn epsilon_bound_from_max<T: Scalar>(m: T, b: &PrivacyBudget<T>) -> T {
    let t = T::lit(b.iterations as f64);
    let two = T::lit(2.0);
    two * b.clip * b.clip * t * m + two * b.clip * (two * t * b.log_inv_delta() * m).sqrt()
}

/// Outcome of checking a covariance against a budget.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetReport<T: Scalar> {
    pub passed: bool,
    pub kappa: T,
    /// `[R⁻¹]_ii` per agent.
    pub inverse_diagonal: Vec<T>,
    /// `κ − [R⁻¹]_ii` per agent; negative entries are violations.
    pub slack: Vec<T>,
    pub epsilon_bound: T,
    pub per_step_rdp: T,
}

impl<T: Scalar> BudgetReport<T> {
    pub fn max_violation(&self) -> T {
        self.slack.iter().fold(T::zero(), |acc, s| acc.max(-*s))
    }
}

/// Passes iff `max_i [R⁻¹]_ii ≤ κ(b)` up to a relative rounding allowance of 1e-12.
pub fn verify_budget<T: Scalar>(r: &DMatrix<T>, b: &PrivacyBudget<T>) -> Result<BudgetReport<T>> {
    let kappa = kappa_from_budget(b).value();
    let inv = inverse_diagonal(r)?;
    let m = max_of(&inv);
    let slack: Vec<T> = inv.iter().map(|&h| kappa - h).collect();
    let allowance = kappa * T::lit(1e-12).max(T::eps() * T::lit(8.0));
    Ok(BudgetReport {
        passed: m <= kappa + allowance,
        kappa,
        slack,
        epsilon_bound: epsilon_bound_from_max(m, b),
        per_step_rdp: T::lit(2.0) * b.clip * b.clip * m,
        inverse_diagonal: inv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_budget() -> PrivacyBudget<f64> {
        PrivacyBudget::new(10.0, 1e-5, 5000, 0.1).unwrap()
    }

    #[test]
    fn kappa_reference_value() {
        // 100 / (16 * 0.01 * 5000 * ln(1e5))
        let k = reference_budget().kappa().value();
        let expected = 100.0 / (16.0 * 0.01 * 5000.0 * 11.512_925_464_970_229);
        assert!((k - expected).abs() < 1e-15);
        assert!((k - 0.0108574).abs() < 1e-7);
    }

    #[test]
    fn kappa_scaling() {
        let b = reference_budget();
        let k = b.kappa().value();
        let b2 = PrivacyBudget { epsilon: 20.0, ..b };
        assert!((b2.kappa().value() / k - 4.0).abs() < 1e-12);
        let b4 = PrivacyBudget { iterations: 20000, ..b };
        assert!((b4.kappa().value() / k - 0.25).abs() < 1e-12);
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(0.0, 1e-5, 10, 0.1).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0, 10, 0.1).is_err());
        assert!(PrivacyBudget::new(1.0, 1e-5, 0, 0.1).is_err());
        assert!(PrivacyBudget::new(1.0, 1e-5, 10, -0.1).is_err());
        assert!(ConstraintLevel::new(0.0f64).is_err());
    }

    #[test]
    fn epsilon_bound_at_kappa_identity() {
        let b = reference_budget();
        let k = b.kappa().value();
        let r = DMatrix::identity(5, 5) / k;
        let bound = epsilon_bound(&r, &b).unwrap();
        let closed = 100.0 / (8.0 * b.log_inv_delta()) + 10.0 / 2f64.sqrt();
        assert!((bound - closed).abs() < 1e-9);
        assert!((bound - 8.1568).abs() < 1e-4);
        assert!(bound <= b.epsilon);
    }

    #[test]
    fn epsilon_bound_vanishes_with_noise_and_horizon() {
        let b = reference_budget();
        let mut prev = f64::INFINITY;
        for c in [1.0, 10.0, 100.0, 1e4, 1e6, 1e8] {
            let e = epsilon_bound(&(DMatrix::identity(3, 3) * c), &b).unwrap();
            assert!(e < prev);
            prev = e;
        }
        assert!(prev < 1e-2);
        let b0 = PrivacyBudget { iterations: 0, ..b };
        assert_eq!(epsilon_bound(&DMatrix::identity(3, 3), &b0).unwrap(), 0.0);
    }

    #[test]
    fn singular_is_rejected() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(epsilon_bound(&r, &reference_budget()), Err(CornError::Singular { .. })));
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        assert!(matches!(per_step_rdp(&r, 0.1), Err(CornError::Singular { .. })));
    }

    #[test]
    fn per_step_examples() {
        let e = per_step_rdp(&(DMatrix::<f64>::identity(3, 3) * 4.0), 0.1).unwrap();
        assert!((e - 2.0 * 0.01 / 4.0).abs() < 1e-15);
        let r = DMatrix::<f64>::from_row_slice(2, 2, &[3.0, -2.0, -2.0, 3.0]);
        let e = per_step_rdp(&r, 0.1).unwrap();
        assert!((e - 0.012).abs() < 1e-15);
        let e2 = per_step_rdp(&r, 0.2).unwrap();
        assert!((e2 / e - 4.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_optimized_rdp_conversion() {
        let b = reference_budget();
        for c in [1.0, 37.0, 92.1, 500.0] {
            let r = DMatrix::identity(4, 4) * c;
            let step = per_step_rdp(&r, b.clip).unwrap();
            let alpha = optimal_rdp_order(step, b.iterations, b.delta);
            let via_rdp = rdp_epsilon_at_order(step, b.iterations, b.delta, alpha);
            let closed = epsilon_bound(&r, &b).unwrap();
            assert!((via_rdp - closed).abs() < 1e-9 * closed.max(1.0));
            // alpha is a minimizer
            for da in [-1e-3, 1e-3] {
                assert!(rdp_epsilon_at_order(step, b.iterations, b.delta, alpha + da) >= via_rdp);
            }
        }
    }

    #[test]
    fn verify_budget_boundary() {
        let b = reference_budget();
        let k = b.kappa().value();
        let rep = verify_budget(&(DMatrix::identity(4, 4) / k), &b).unwrap();
        assert!(rep.passed);
        assert!(rep.max_violation().abs() < 1e-15);
        for s in &rep.slack {
            assert!(s.abs() < 1e-15);
        }
        let rep = verify_budget(&(DMatrix::identity(4, 4) * (0.5 / k)), &b).unwrap();
        assert!(!rep.passed);
        assert!((rep.max_violation() - k).abs() < 1e-12);
    }
}
