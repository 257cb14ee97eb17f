//! Noise covariance structures, matrix square roots and shared-seed sampling.

use nalgebra::{DMatrix, DVector};

use crate::graph::{sorted_eigenvalues, symmetric_eigen, LaplacianMatrix, MixingMatrix};
use crate::rng::{standard_normals, Domain};
use crate::{CornError, Result, Scalar};

/// Covariance of the per-iteration privacy noise vector across agents.
#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceSpec<T: Scalar> {
    /// Independent noise, `σ²·I`.
    Ldp { n: usize, variance: T },
    /// Pairwise-canceling noise, `σ_pair²·I + σ_cor²·L`.
    Pairwise { pair_variance: T, cor_variance: T, laplacian: LaplacianMatrix<T> },
    /// Independent plus arbitrary correlated part, `σ_mix²·I + R_cor`.
    Mixed { mix_variance: T, correlated: DMatrix<T> },
    /// A covariance given verbatim.
    Explicit(DMatrix<T>),
}

impl<T: Scalar> CovarianceSpec<T> {
    pub fn n(&self) -> usize {
        match self {
            Self::Ldp { n, .. } => *n,
            Self::Pairwise { laplacian, .. } => laplacian.n(),
            Self::Mixed { correlated, .. } => correlated.nrows(),
            Self::Explicit(r) => r.nrows(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Ldp { .. } => "ldp",
            Self::Pairwise { .. } => "pairwise",
            Self::Mixed { .. } => "mixed",
            Self::Explicit(_) => "explicit",
        }
    }

    /// Builds `R` and checks it is a usable (positive definite) covariance.
    pub fn materialize(&self) -> Result<DMatrix<T>> {
        let r = self.assemble()?;
        let eig = sorted_eigenvalues(&r)?;
        let min = eig.first().copied().unwrap_or_else(T::one);
        if min <= T::zero() {
            return Err(CornError::NotPositiveDefinite { min_eigenvalue: min.as_f64() });
        }
        Ok(r)
    }

    fn assemble(&self) -> Result<DMatrix<T>> {
        let positive = |name: &str, v: T| {
            if v > T::zero() {
                Ok(())
            } else {
                Err(CornError::InvalidArgument(format!("{name} must be > 0, got {v}")))
            }
        };
        let r = match self {
            Self::Ldp { n, variance } => {
                positive("ldp variance", *variance)?;
                DMatrix::identity(*n, *n) * *variance
            }
            Self::Pairwise { pair_variance, cor_variance, laplacian } => {
                positive("pairwise variance", *pair_variance)?;
                if *cor_variance < T::zero() {
                    return Err(CornError::InvalidArgument("correlated variance must be >= 0".into()));
                }
                let n = laplacian.n();
                DMatrix::identity(n, n) * *pair_variance + laplacian.matrix() * *cor_variance
            }
            Self::Mixed { mix_variance, correlated } => {
                positive("independent variance", *mix_variance)?;
                check_square_symmetric(correlated)?;
                check_psd(correlated)?;
                let n = correlated.nrows();
                DMatrix::identity(n, n) * *mix_variance + correlated
            }
            Self::Explicit(r) => r.clone(),
        };
        check_square_symmetric(&r)?;
        Ok(r)
    }
}

fn symmetry_tolerance<T: Scalar>(m: &DMatrix<T>) -> T {
    let scale = m.amax().max(T::one());
    let base = T::lit(1e-12).max(T::eps() * T::lit(16.0));
    base * scale
}

pub(crate) fn check_square_symmetric<T: Scalar>(m: &DMatrix<T>) -> Result<()> {
    if !m.is_square() {
        return Err(CornError::Dimension(format!("covariance is {}x{}", m.nrows(), m.ncols())));
    }
    let tol = symmetry_tolerance(m);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(CornError::InvalidArgument(format!("covariance not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Allowed negative eigenvalue magnitude, relative to the trace.
fn indefinite_tolerance<T: Scalar>(m: &DMatrix<T>) -> T {
    T::lit(1e-9).max(T::eps() * T::lit(64.0)) * m.trace().abs()
}

fn check_psd<T: Scalar>(m: &DMatrix<T>) -> Result<()> {
    let eig = sorted_eigenvalues(m)?;
    let min = eig.first().copied().unwrap_or_else(T::zero);
    let tol = indefinite_tolerance(m);
    if min < -tol {
        return Err(CornError::Indefinite { min_eigenvalue: min.as_f64(), tolerance: tol.as_f64() });
    }
    Ok(())
}

/// How a covariance factor was produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FactorMethod {
    /// `V·diag(√λ)·Vᵀ`, clamping tiny negative eigenvalues to zero.
    #[default]
    SymmetricRoot,
    /// Lower-triangular Cholesky factor; needs a positive definite `R`.
    Cholesky,
}

impl FactorMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::SymmetricRoot => "symmetric-root",
            Self::Cholesky => "cholesky",
        }
    }
}

/// A matrix `F` with `F·Fᵀ = R`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceFactor<T: Scalar> {
    factor: DMatrix<T>,
    method: FactorMethod,
}

impl<T: Scalar> CovarianceFactor<T> {
    /// The factor of the all-zero covariance.
    pub fn zero(n: usize) -> Self {
        Self { factor: DMatrix::zeros(n, n), method: FactorMethod::SymmetricRoot }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.factor
    }

    pub fn method(&self) -> FactorMethod {
        self.method
    }

    pub fn n(&self) -> usize {
        self.factor.nrows()
    }

    /// `F·Fᵀ`.
    pub fn covariance(&self) -> DMatrix<T> {
        &self.factor * self.factor.transpose()
    }

    /// `v = F·s` for the standard normal vector keyed by `(seed, t, coordinate)`.
    pub fn sample(&self, seed: u64, t: u64, coordinate: u64) -> DVector<T> {
        self.sample_keyed(seed, Domain::Noise, t, coordinate)
    }

    /// `F·s` for an arbitrary key, e.g. diagnostic redraws.
    pub fn sample_keyed(&self, seed: u64, domain: Domain, a: u64, b: u64) -> DVector<T> {
        let n = self.n();
        let mut s = vec![0.0f64; n];
        standard_normals(seed, domain, a, b, &mut s);
        let s = DVector::from_iterator(n, s.into_iter().map(T::lit));
        &self.factor * s
    }
}

fn reconstruction_tolerance<T: Scalar>() -> T {
    T::lit(1e-9).max(T::eps() * T::lit(1e3))
}

/// Symmetric square root of a PSD matrix.
pub fn factorize<T: Scalar>(r: &DMatrix<T>) -> Result<CovarianceFactor<T>> {
    factorize_with(r, FactorMethod::SymmetricRoot)
}

pub fn factorize_with<T: Scalar>(r: &DMatrix<T>, method: FactorMethod) -> Result<CovarianceFactor<T>> {
    check_square_symmetric(r)?;
    let n = r.nrows();
    let factor = match method {
        FactorMethod::SymmetricRoot => {
            let eig = symmetric_eigen(r)?;
            let tol = indefinite_tolerance(r);
            let mut roots = eig.eigenvalues.clone();
            for v in roots.iter_mut() {
                if *v < -tol {
                    return Err(CornError::Indefinite { min_eigenvalue: v.as_f64(), tolerance: tol.as_f64() });
                }
                *v = if *v > T::zero() { v.sqrt() } else { T::zero() };
            }
            let v = &eig.eigenvectors;
            let scaled = DMatrix::from_fn(n, n, |i, j| v[(i, j)] * roots[j]);
            let f = &scaled * v.transpose();
            // symmetrize away rounding
            (&f + f.transpose()) * T::lit(0.5)
        }
        FactorMethod::Cholesky => {
            let chol = r
                .clone()
                .cholesky()
                .ok_or(CornError::NotPositiveDefinite { min_eigenvalue: f64::NAN })?;
            chol.l()
        }
    };
    let out = CovarianceFactor { factor, method };
    let norm = r.norm();
    let err = (out.covariance() - r).norm();
    let tol = reconstruction_tolerance::<T>();
    if (norm > T::zero() && err / norm > tol) || (norm == T::zero() && err > tol) {
        return Err(CornError::InvalidArgument(format!(
            "factor reconstruction error {} exceeds {}",
            if norm > T::zero() { err / norm } else { err },
            tol
        )));
    }
    Ok(out)
}

/// One shared-seed noise vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample<T: Scalar> {
    pub v: DVector<T>,
    pub iteration: u64,
    pub seed: u64,
}

/// Noise vector for iteration `t`. Every agent holding `(F, seed)` computes
/// the same vector.
pub fn sample_noise<T: Scalar>(factor: &CovarianceFactor<T>, seed: u64, t: u64) -> NoiseSample<T> {
    NoiseSample { v: factor.sample(seed, t, 0), iteration: t, seed }
}

/// Post-mixing noise power `Tr(W R Wᵀ)`.
pub fn effective_variance<T: Scalar>(w: &MixingMatrix<T>, r: &DMatrix<T>) -> Result<T> {
    if r.nrows() != w.n() || r.ncols() != w.n() {
        return Err(CornError::Dimension(format!("W is {0}x{0}, R is {1}x{2}", w.n(), r.nrows(), r.ncols())));
    }
    let w = w.matrix();
    Ok((w * r * w.transpose()).trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{laplacian, metropolis_hastings, Graph};

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn materialize_examples() {
        let r = CovarianceSpec::Ldp { n: 2, variance: 4.0 }.materialize().unwrap();
        assert_eq!(r, m2(4.0, 0.0, 0.0, 4.0));

        let l = laplacian::<f64>(&Graph::path(2).unwrap());
        let r = CovarianceSpec::Pairwise { pair_variance: 1.0, cor_variance: 2.0, laplacian: l }
            .materialize()
            .unwrap();
        assert_eq!(r, m2(3.0, -2.0, -2.0, 3.0));

        let r = CovarianceSpec::Mixed { mix_variance: 1.0, correlated: DMatrix::zeros(3, 3) }
            .materialize()
            .unwrap();
        assert_eq!(r, DMatrix::identity(3, 3));
    }

    #[test]
    fn materialize_rejects_invalid() {
        assert!(CovarianceSpec::Ldp { n: 2, variance: 0.0 }.materialize().is_err());
        assert!(matches!(
            CovarianceSpec::Explicit(m2(1.0, 1.0, 1.0, 1.0)).materialize(),
            Err(CornError::NotPositiveDefinite { .. })
        ));
        assert!(CovarianceSpec::Explicit(m2(1.0, 0.5, 0.0, 1.0)).materialize().is_err());
        assert!(matches!(
            CovarianceSpec::Mixed { mix_variance: 5.0, correlated: m2(1.0, 0.0, 0.0, -1.0) }.materialize(),
            Err(CornError::Indefinite { .. })
        ));
    }

    #[test]
    fn factorize_examples() {
        let f = factorize(&DMatrix::<f64>::identity(3, 3)).unwrap();
        assert!((f.matrix() - DMatrix::identity(3, 3)).amax() < 1e-15);
        let f = factorize(&m2(4.0, 0.0, 0.0, 9.0)).unwrap();
        assert!((f.matrix() - m2(2.0, 0.0, 0.0, 3.0)).amax() < 1e-14);
        let r = m2(3.0, -2.0, -2.0, 3.0);
        for method in [FactorMethod::SymmetricRoot, FactorMethod::Cholesky] {
            let f = factorize_with(&r, method).unwrap();
            assert_eq!(f.method(), method);
            assert!((f.covariance() - &r).norm() / r.norm() < 1e-9);
        }
    }

    #[test]
    fn factorize_singular_psd_and_indefinite() {
        let l = laplacian::<f64>(&Graph::complete(4).unwrap());
        let f = factorize(l.matrix()).unwrap();
        assert!((f.covariance() - l.matrix()).norm() / l.matrix().norm() < 1e-9);
        // tiny negative rounding is clamped
        let mut r = l.matrix().clone();
        r[(0, 0)] -= 1e-13;
        assert!(factorize(&r).is_ok());
        assert!(matches!(factorize(&m2(1.0, 2.0, 2.0, 1.0)), Err(CornError::Indefinite { .. })));
        assert!(factorize_with(l.matrix(), FactorMethod::Cholesky).is_err());
    }

    #[test]
    fn zero_factor_gives_zero_noise() {
        let f = factorize(&DMatrix::<f64>::zeros(3, 3)).unwrap();
        assert_eq!(sample_noise(&f, 5, 2).v, DVector::zeros(3));
        assert_eq!(CovarianceFactor::<f64>::zero(3).sample(1, 1, 1), DVector::zeros(3));
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = factorize(&m2(3.0, -2.0, -2.0, 3.0)).unwrap();
        let a = sample_noise(&f, 11, 7);
        let b = sample_noise(&f, 11, 7);
        assert_eq!(a, b);
        assert_ne!(a.v, sample_noise(&f, 11, 8).v);
        assert_ne!(a.v, sample_noise(&f, 12, 7).v);
    }

    #[test]
    fn effective_variance_examples() {
        let i3 = MixingMatrix::<f64>::identity(3);
        assert!((effective_variance(&i3, &DMatrix::identity(3, 3)).unwrap() - 3.0).abs() < 1e-15);
        for n in [2usize, 5, 9] {
            let w = metropolis_hastings::<f64>(&Graph::complete(n).unwrap()).unwrap();
            let v = effective_variance(&w, &DMatrix::identity(n, n)).unwrap();
            assert!((v - 1.0).abs() < 1e-12);
        }
        let w = MixingMatrix::averaging(2);
        let v = effective_variance(&w, &m2(3.0, -2.0, -2.0, 3.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(effective_variance(&w, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn f32_path() {
        let r = DMatrix::<f32>::from_row_slice(2, 2, &[3.0, -2.0, -2.0, 3.0]);
        let f = factorize(&r).unwrap();
        assert!((f.covariance() - &r).norm() / r.norm() < 1e-5);
        let v = sample_noise(&f, 1, 1).v;
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
