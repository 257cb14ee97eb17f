//! The pairwise family `σ_pair²·I + σ_cor²·L`.
//!
//! For fixed `σ_cor²` the smallest feasible `σ_pair²` is found by bisection
//! (every `[R⁻¹]_ii` decreases in `σ_pair²`). The resulting value function
//! is convex in `σ_cor²` because the feasible set in the plane is convex, so
//! a golden-section search over `σ_cor²` finishes the job.

use nalgebra::{DMatrix, DVector};

use super::model::{InvDiagGroup, LinearCon, LinearTag, Model, SymExpr};
use super::{check_cap, floor_constraint, resolve_cap, Cap, CovDesignProblem, CovSolution, SolverOptions};
use crate::graph::{symmetric_eigen, LaplacianMatrix, MixingMatrix};
use crate::privacy::ConstraintLevel;
use crate::{CornError, Result, Scalar};

/// Eigen-decomposed Laplacian for fast evaluation of `diag((aI + cL)⁻¹)`.
struct Spectrum<T: Scalar> {
    /// `V_ik²`
    weights: DMatrix<T>,
    values: Vec<T>,
}

impl<T: Scalar> Spectrum<T> {
    fn new(l: &DMatrix<T>) -> Result<Self> {
        let eig = symmetric_eigen(l)?;
        let weights = eig.eigenvectors.map(|v| v * v);
        let values = eig.eigenvalues.iter().map(|&v| v.max(T::zero())).collect();
        Ok(Self { weights, values })
    }

    fn max_inverse_diagonal(&self, a: T, c: T) -> T {
        let n = self.values.len();
        let inv: Vec<T> = self.values.iter().map(|&lam| T::one() / (a + c * lam)).collect();
        (0..n)
            .map(|i| (0..n).fold(T::zero(), |acc, k| acc + self.weights[(i, k)] * inv[k]))
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Smallest `a ≥ floor` with `max_i [(aI + cL)⁻¹]_ii ≤ 1` (scaled units).
    fn min_pair_variance(&self, c: T, floor: T) -> T {
        if self.max_inverse_diagonal(floor, c) <= T::one() {
            return floor;
        }
        // a = 1 is always feasible because L is PSD.
        let (mut lo, mut hi) = (floor, T::one());
        for _ in 0..200 {
            let mid = (lo + hi) * T::lit(0.5);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.max_inverse_diagonal(mid, c) <= T::one() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

struct PairwiseOptimum<T> {
    a: T,
    c: T,
    evaluations: usize,
}

fn optimize_scaled<T: Scalar>(
    gram: &DMatrix<T>,
    l: &DMatrix<T>,
    cap: Option<T>,
    floor: T,
) -> Result<PairwiseOptimum<T>> {
    if l.iter().all(|v| *v == T::zero()) {
        return Ok(PairwiseOptimum { a: T::one(), c: T::zero(), evaluations: 0 });
    }
    let spec = Spectrum::new(l)?;
    let t1 = gram.trace();
    let t2 = gram.component_mul(l).sum();
    let d_max = l.diagonal().iter().copied().fold(T::zero(), |a, b| a.max(b));
    let mut evaluations = 0;
    let value = |c: T, evals: &mut usize| {
        *evals += 1;
        let a = spec.min_pair_variance(c, floor);
        (a * t1 + c * t2, a)
    };

    let c_hi = match cap {
        Some(b) => {
            // a(c) + c·d_max is convex with value ≤ b at 0, so its sublevel
            // set is an interval [0, c_hi].
            let (mut lo, mut hi) = (T::zero(), b / d_max);
            for _ in 0..200 {
                let mid = (lo + hi) * T::lit(0.5);
                if mid <= lo || mid >= hi {
                    break;
                }
                if spec.min_pair_variance(mid, floor) + mid * d_max <= b {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
        None => {
            if t2 <= T::eps() * t1 {
                return Err(CornError::Infeasible(
                    "pairwise optimum not attained without a cap: Tr(W L Wᵀ) = 0".into(),
                ));
            }
            // g(c) ≥ c·t2 > g(0) beyond this point
            value(T::zero(), &mut evaluations).0 / t2
        }
    };

    let phi = T::lit(0.618_033_988_749_894_8);
    let (mut lo, mut hi) = (T::zero(), c_hi);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = value(x1, &mut evaluations).0;
    let mut f2 = value(x2, &mut evaluations).0;
    for _ in 0..300 {
        if hi - lo <= T::eps() * c_hi.max(T::one()) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = value(x1, &mut evaluations).0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = value(x2, &mut evaluations).0;
        }
    }
    let mut best = (T::zero(), value(T::zero(), &mut evaluations));
    for c in [x1, x2, c_hi] {
        let v = value(c, &mut evaluations);
        if v.0 < best.1 .0 {
            best = (c, v);
        }
    }
    let (c, (_, a)) = best;
    Ok(PairwiseOptimum { a, c, evaluations })
}

/// Optimal `(σ_pair², σ_cor²)` in variance units.
pub fn solve_decor<T: Scalar>(
    w: &MixingMatrix<T>,
    l: &LaplacianMatrix<T>,
    kappa: ConstraintLevel<T>,
    cap: Cap<T>,
) -> Result<(T, T)> {
    let cap = resolve_cap(cap, kappa);
    check_cap(cap, kappa)?;
    let k = kappa.value();
    let floor = SolverOptions::<T>::default().floor_ratio;
    let opt = optimize_scaled(&w.gram(), l.matrix(), cap.map(|b| b * k), floor)?;
    Ok((opt.a / k, opt.c / k))
}

pub(crate) fn solve_pairwise<T: Scalar>(
    problem: &CovDesignProblem<T>,
    l: &LaplacianMatrix<T>,
    opts: &SolverOptions<T>,
) -> Result<CovSolution<T>> {
    let k = problem.kappa.value();
    let cap = problem.cap_value().map(|b| b * k);
    let opt = optimize_scaled(&problem.mixing.gram(), l.matrix(), cap, opts.floor_ratio)?;
    let (a, c) = (opt.a / k, opt.c / k);
    let n = problem.n();
    let r = DMatrix::identity(n, n) * a + l.matrix() * c;
    let mut sol = CovSolution::candidate(r, problem)?;
    sol.sigma_mix2 = a;
    sol.sigma_cor2 = Some(c);
    sol.correlated = vec![l.matrix() * c];
    sol.iterations = opt.evaluations;
    Ok(sol)
}

/// Recovers `(a, c)` with `R = aI + cL`, if `R` has that form.
pub(crate) fn fit_pairwise<T: Scalar>(r: &DMatrix<T>, l: &LaplacianMatrix<T>) -> Option<(T, T)> {
    let lm = l.matrix();
    let n = lm.nrows();
    let c = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .find(|&(i, j)| i != j && lm[(i, j)] != T::zero())
        .map(|(i, j)| r[(i, j)] / lm[(i, j)])
        .unwrap_or_else(T::zero);
    let a = r[(0, 0)] - c * lm[(0, 0)];
    let rebuilt = DMatrix::identity(n, n) * a + lm * c;
    ((rebuilt - r).amax() <= T::lit(1e-9) * r.amax().max(T::eps())).then_some((a, c))
}

/// `(a, c)` model with `R = aI + cL` (scaled units).
pub(crate) fn pairwise_model<T: Scalar>(gram: &DMatrix<T>, l: &DMatrix<T>, cap: Option<T>, floor: T) -> Model<T> {
    let n = gram.nrows();
    let mut full = SymExpr::new(n, T::zero());
    for i in 0..n {
        full.add_symmetric(0, i, i, T::one());
    }
    for i in 0..n {
        for j in i..n {
            if l[(i, j)] != T::zero() {
                full.add_symmetric(1, i, j, l[(i, j)]);
            }
        }
    }
    if full.terms.len() < 2 {
        full.terms.push(super::model::VarTerm { var: 1, positions: Vec::new() });
    }
    let mut model = Model::new(2, full.clone(), gram);
    model.noise_exprs.push(full);
    model.inv_groups.push(InvDiagGroup { expr: 0, rows: (0..n).collect() });
    model.linear.push(floor_constraint(0, floor));
    model.linear.push(LinearCon { constant: T::zero(), coefs: vec![(1, T::one())], tag: LinearTag::NonNegative(1) });
    if let Some(b) = cap {
        model.add_caps(b);
    }
    model
}

pub(crate) fn pairwise_theta<T: Scalar>(a: T, c: T) -> DVector<T> {
    DVector::from_vec(vec![a, c])
}
