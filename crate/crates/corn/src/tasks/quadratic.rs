//! Heterogeneous 2-D quadratics.
//!
//! Agent `i` (1-based) has `f_i(x) = zᵀ·diag(15, 1)·z` with `z = Q_i (x − m_i)`.
//! The first half of the agents sit at `m_i = (−i, 0)` unrotated; the second
//! half sit at `(i, 0)` and are rotated counter-clockwise by `θ`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand_chacha::ChaCha20Rng;

use super::Task;
use crate::{CornError, Result, Scalar};

pub const DEFAULT_ROTATION_DEGREES: f64 = 15.0;
const CURVATURE: f64 = 15.0;

#[derive(Clone, Debug)]
pub struct QuadraticTask<T: Scalar> {
    n: usize,
    theta_degrees: T,
    minimizers: Vec<Vector2<T>>,
    /// `Q_iᵀ A Q_i`
    hessians: Vec<Matrix2<T>>,
    optimum: Vector2<T>,
    optimal_value: T,
    start: QuadraticStart,
}

/// Common starting point of every agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum QuadraticStart {
    Origin,
    /// The minimizer of the average objective. From the origin the clipped
    /// steps are far too short to reach it within a few thousand rounds.
    #[default]
    Optimum,
}

impl<T: Scalar> QuadraticTask<T> {
    pub fn new(n: usize, theta_degrees: T) -> Result<Self> {
        if n == 0 {
            return Err(CornError::InvalidArgument("quadratic task needs at least one agent".into()));
        }
        let sites = (0..n)
            .map(|agent| {
                let i = T::from_usize_lossy(agent + 1);
                if agent < n / 2 {
                    (Vector2::new(-i, T::zero()), false)
                } else {
                    (Vector2::new(i, T::zero()), true)
                }
            })
            .collect();
        Self::with_sites(sites, theta_degrees)
    }

    /// Arbitrary minimizers; agents flagged `true` are rotated by `θ`.
    pub fn with_sites(sites: Vec<(Vector2<T>, bool)>, theta_degrees: T) -> Result<Self> {
        let n = sites.len();
        if n == 0 {
            return Err(CornError::InvalidArgument("quadratic task needs at least one agent".into()));
        }
        let a = Matrix2::new(T::lit(CURVATURE), T::zero(), T::zero(), T::one());
        let rad = theta_degrees * T::pi() / T::lit(180.0);
        let (s, c) = (rad.sin(), rad.cos());
        let q = Matrix2::new(c, -s, s, c);
        let minimizers: Vec<Vector2<T>> = sites.iter().map(|(m, _)| *m).collect();
        let hessians: Vec<Matrix2<T>> = sites.iter().map(|(_, rot)| if *rot { q.transpose() * a * q } else { a }).collect();
        // (Σ H_i) x* = Σ H_i m_i
        let h_sum = hessians.iter().fold(Matrix2::zeros(), |acc, h| acc + h);
        let rhs = hessians.iter().zip(&minimizers).fold(Vector2::zeros(), |acc, (h, m)| acc + h * m);
        let optimum = h_sum
            .try_inverse()
            .ok_or_else(|| CornError::InvalidArgument("singular normal equations".into()))?
            * rhs;
        let mut task = Self { n, theta_degrees, minimizers, hessians, optimum, optimal_value: T::zero(), start: QuadraticStart::default() };
        task.optimal_value = (0..n).fold(T::zero(), |acc, i| acc + task.local(i, &optimum)) / T::from_usize_lossy(n);
        Ok(task)
    }

    pub fn starting_at(mut self, start: QuadraticStart) -> Self {
        self.start = start;
        self
    }

    pub fn theta_degrees(&self) -> T {
        self.theta_degrees
    }

    /// `m_i` for the 0-based agent index.
    pub fn minimizer(&self, agent: usize) -> Vector2<T> {
        self.minimizers[agent]
    }

    /// Minimizer of the average objective.
    pub fn optimum(&self) -> Vector2<T> {
        self.optimum
    }

    /// `f* = min_x (1/n) Σ f_i(x)`.
    pub fn optimal_value(&self) -> T {
        self.optimal_value
    }

    fn local(&self, agent: usize, x: &Vector2<T>) -> T {
        let d = x - self.minimizers[agent];
        (d.transpose() * self.hessians[agent] * d)[(0, 0)]
    }

    /// `f_i(x)` for the 0-based agent index.
    pub fn objective(&self, agent: usize, x: &[T]) -> T {
        self.local(agent, &Vector2::new(x[0], x[1]))
    }

    pub fn local_gradient(&self, agent: usize, x: &[T]) -> Vector2<T> {
        let d = Vector2::new(x[0], x[1]) - self.minimizers[agent];
        self.hessians[agent] * d * T::lit(2.0)
    }

    /// `(1/n) Σ_i f_i(x_i) − f*`, each agent evaluated at its own iterate.
    pub fn opt_gap(&self, states: &DMatrix<T>) -> T {
        let total = (0..self.n).fold(T::zero(), |acc, i| {
            acc + self.local(i, &Vector2::new(states[(i, 0)], states[(i, 1)]))
        });
        total / T::from_usize_lossy(self.n) - self.optimal_value
    }
}

impl<T: Scalar> Task<T> for QuadraticTask<T> {
    fn n_agents(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        2
    }

    fn initial_state(&self) -> DMatrix<T> {
        match self.start {
            QuadraticStart::Origin => DMatrix::zeros(self.n, 2),
            QuadraticStart::Optimum => DMatrix::from_fn(self.n, 2, |_, j| self.optimum[j]),
        }
    }

    fn gradient(&self, agent: usize, x: &DVector<T>, _rng: &mut ChaCha20Rng) -> DVector<T> {
        let g = self.local_gradient(agent, x.as_slice());
        DVector::from_column_slice(g.as_slice())
    }

    fn metric_name(&self) -> &'static str {
        "opt_gap"
    }

    fn metric(&self, states: &DMatrix<T>) -> T {
        self.opt_gap(states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_minima_are_zero() {
        let task = QuadraticTask::new(6, 15.0).unwrap();
        for i in 0..6 {
            let m = task.minimizer(i);
            assert_eq!(task.objective(i, m.as_slice()), 0.0);
        }
        assert_eq!(task.minimizer(0), Vector2::new(-1.0, 0.0));
        assert_eq!(task.minimizer(5), Vector2::new(6.0, 0.0));
    }

    #[test]
    fn two_agents_at_origin() {
        let task = QuadraticTask::<f64>::new(2, 15.0).unwrap();
        assert!((task.objective(0, &[0.0, 0.0]) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_unit_step_along_major_axis() {
        let task = QuadraticTask::new(4, 15.0).unwrap();
        let rad = 15f64.to_radians();
        for i in 2..4 {
            let m = task.minimizer(i);
            // m + Qᵀ(1, 0)
            let x = [m[0] + rad.cos(), m[1] - rad.sin()];
            assert!((task.objective(i, &x) - 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_minimizers_give_origin() {
        let sites = (1..=5).flat_map(|i| [(Vector2::new(-(i as f64), 0.0), false), (Vector2::new(i as f64, 0.0), true)]).collect();
        let task = QuadraticTask::with_sites(sites, 0.0).unwrap();
        assert!(task.optimum().norm() < 1e-12);
        let at_opt = DMatrix::from_fn(10, 2, |_, j| task.optimum()[j]);
        assert!(task.opt_gap(&at_opt).abs() < 1e-9);
    }

    #[test]
    fn unrotated_optimum_is_mean_minimizer() {
        // minimizers −1..−5 and 6..10
        let task = QuadraticTask::<f64>::new(10, 0.0).unwrap();
        assert!((task.optimum() - Vector2::new(2.5, 0.0)).norm() < 1e-12);
        assert_eq!(task.initial_state().row(3)[0], task.optimum()[0]);
        let origin = task.clone().starting_at(QuadraticStart::Origin).initial_state();
        assert_eq!(origin, DMatrix::zeros(10, 2));
    }

    #[test]
    fn gap_is_nonnegative_and_zero_at_optimum() {
        let task = QuadraticTask::<f64>::new(8, 15.0).unwrap();
        let opt = task.optimum();
        let at_opt = DMatrix::from_fn(8, 2, |_, j| opt[j]);
        assert!(task.opt_gap(&at_opt).abs() < 1e-9 * task.optimal_value());
        for k in 0..20 {
            let s = DMatrix::from_fn(8, 2, |i, j| ((i * 7 + j * 3 + k) % 11) as f64 * 0.3 - 1.5);
            assert!(task.opt_gap(&s) >= -1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let task = QuadraticTask::new(6, 15.0).unwrap();
        let h = 1e-5;
        for i in 0..6 {
            let x = [0.3 * i as f64 - 0.7, 1.1 - 0.2 * i as f64];
            let g = task.local_gradient(i, &x);
            for k in 0..2 {
                let (mut xp, mut xm) = (x, x);
                xp[k] += h;
                xm[k] -= h;
                let fd = (task.objective(i, &xp) - task.objective(i, &xm)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-7 * fd.abs().max(1.0), "agent {i} coord {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn rotated_minimum_on_grid() {
        let task = QuadraticTask::new(4, 15.0).unwrap();
        let m = task.minimizer(3);
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for a in -50..=50 {
            for b in -50..=50 {
                let x = [m[0] + a as f64 * 0.01, m[1] + b as f64 * 0.01];
                let v = task.objective(3, &x);
                if v < best.0 {
                    best = (v, x);
                }
            }
        }
        assert_eq!(best.0, 0.0);
        assert_eq!(best.1, [m[0], m[1]]);
    }
}
