//! Randomized invariants across modules.

use corn::covariance::{factorize, sample_noise, CovarianceSpec};
use corn::engine::{clip, corn_dsgd_run};
use corn::graph::{laplacian, metropolis_hastings, sorted_eigenvalues, stochastic_tolerance};
use corn::optimizer::solve_cov;
use corn::privacy::{epsilon_bound, inverse_diagonal, verify_budget};
use corn::tasks::{
    dirichlet_partition, logistic_gradient, logistic_loss, parse_libsvm_str, write_libsvm, LibsvmData, QuadraticTask,
    ZeroGradientTask,
};
use corn::{CovDesignProblem, CovarianceFactor, Graph, PrivacyBudget, RunConfig, StepSchedule, Structure};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n, 0.3f64..=1.0, any::<u64>()).prop_filter_map("disconnected", |(n, p, seed)| Graph::erdos_renyi(n, p, seed).ok())
}

/// Random SPD matrix `AAᵀ + shift·I`.
fn spd_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (proptest::collection::vec(-2.0f64..2.0, n * n), 0.05f64..3.0).prop_map(move |(v, shift)| {
        let a = DMatrix::from_vec(n, n, v);
        &a * a.transpose() + DMatrix::identity(n, n) * shift
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixing_is_symmetric_doubly_stochastic(g in graph_strategy(16)) {
        let w = metropolis_hastings::<f64>(&g).unwrap();
        let m = w.matrix();
        let tol = stochastic_tolerance::<f64>(g.n());
        for i in 0..g.n() {
            prop_assert!((m.row(i).sum() - 1.0).abs() <= tol);
            prop_assert!((m.column(i).sum() - 1.0).abs() <= tol);
            for j in 0..g.n() {
                prop_assert!(m[(i, j)] >= 0.0);
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
                if i != j && !g.has_edge(i, j) {
                    prop_assert_eq!(m[(i, j)], 0.0);
                }
            }
        }
        let eig = sorted_eigenvalues(m).unwrap();
        prop_assert!(eig.iter().all(|&l| l.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn laplacian_is_psd_with_zero_row_sums(g in graph_strategy(16)) {
        let l = laplacian::<f64>(&g);
        let m = l.matrix();
        let deg = g.degrees();
        for i in 0..g.n() {
            prop_assert_eq!(m.row(i).sum(), 0.0);
            prop_assert_eq!(m[(i, i)], deg[i] as f64);
        }
        prop_assert_eq!(m, &m.transpose());
        prop_assert!(sorted_eigenvalues(m).unwrap()[0] >= -1e-10);
    }

    #[test]
    fn pairwise_and_ldp_are_mixed_special_cases(g in graph_strategy(10), a in 0.1f64..50.0, c in 0.0f64..20.0) {
        let l = laplacian::<f64>(&g);
        let n = g.n();
        let pair = CovarianceSpec::Pairwise { pair_variance: a, cor_variance: c, laplacian: l.clone() };
        let mixed = CovarianceSpec::Mixed { mix_variance: a, correlated: l.matrix() * c };
        prop_assert_eq!(pair.materialize().unwrap(), mixed.materialize().unwrap());
        let ldp = CovarianceSpec::Ldp { n, variance: a };
        let none = CovarianceSpec::Mixed { mix_variance: a, correlated: DMatrix::zeros(n, n) };
        prop_assert_eq!(ldp.materialize().unwrap(), none.materialize().unwrap());
    }

    #[test]
    fn factor_reconstructs_covariance(r in spd_strategy(6)) {
        let f = factorize(&r).unwrap();
        prop_assert!((f.covariance() - &r).norm() / r.norm() < 1e-9);
    }

    #[test]
    fn noise_is_a_pure_function_of_the_key(r in spd_strategy(4), seed in any::<u64>(), t in 0u64..1_000_000) {
        let f = factorize(&r).unwrap();
        prop_assert_eq!(sample_noise(&f, seed, t).v, sample_noise(&f, seed, t).v);
        prop_assert_ne!(sample_noise(&f, seed, t).v, sample_noise(&f, seed, t + 1).v);
    }

    #[test]
    fn more_noise_never_weakens_the_bound(r in spd_strategy(5), extra in spd_strategy(5), eps in 1.0f64..40.0) {
        let b = PrivacyBudget::new(eps, 1e-5, 5000, 0.1).unwrap();
        let r2 = &r + &extra;
        let (d1, d2) = (inverse_diagonal(&r).unwrap(), inverse_diagonal(&r2).unwrap());
        let m1 = d1.iter().copied().fold(0.0, f64::max);
        let m2 = d2.iter().copied().fold(0.0, f64::max);
        prop_assert!(m2 <= m1 * (1.0 + 1e-12));
        prop_assert!(epsilon_bound(&r2, &b).unwrap() <= epsilon_bound(&r, &b).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn bound_is_permutation_invariant(r in spd_strategy(5), perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle()) {
        let b = PrivacyBudget::new(10.0, 1e-5, 5000, 0.1).unwrap();
        let p = DMatrix::from_fn(5, 5, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
        let rp = &p * &r * p.transpose();
        let (e1, e2) = (epsilon_bound(&r, &b).unwrap(), epsilon_bound(&rp, &b).unwrap());
        prop_assert!((e1 - e2).abs() <= 1e-12 * e1.max(1.0));
    }

    #[test]
    fn ldp_level_meets_the_target(eps in 0.5f64..50.0, log_delta in -12.0f64..-2.0, t in 1u64..20_000, c in 0.01f64..5.0) {
        let b = PrivacyBudget::new(eps, 10f64.powf(log_delta), t, c).unwrap();
        let n = 4;
        let r = DMatrix::identity(n, n) / b.kappa().value();
        let bound = epsilon_bound(&r, &b).unwrap();
        let closed = eps * eps / (8.0 * b.log_inv_delta()) + eps / 2f64.sqrt();
        prop_assert!((bound - closed).abs() <= 1e-9 * closed.max(1.0));
        // the level is conservative only while ε ≤ 8(1 − 1/√2)·ln(1/δ)
        let regime = eps <= 8.0 * (1.0 - 0.5f64.sqrt()) * b.log_inv_delta();
        prop_assert_eq!(bound <= eps * (1.0 + 1e-12), regime);
    }

    #[test]
    fn clipping_bounds_the_norm(v in proptest::collection::vec(-100.0f64..100.0, 1..20), c in 1e-3f64..10.0) {
        let g = DVector::from_vec(v);
        let out = clip(&g, c);
        prop_assert!(out.norm() <= c * (1.0 + 1e-12));
        if g.norm() <= c {
            prop_assert_eq!(&out, &g);
        } else {
            // same direction
            let cos = out.dot(&g) / (out.norm() * g.norm());
            prop_assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences(n in 2usize..12, x0 in -20.0f64..20.0, x1 in -20.0f64..20.0, theta in 0.0f64..90.0) {
        let task = QuadraticTask::new(n, theta).unwrap();
        let h = 1e-5;
        for i in 0..n {
            let g = task.local_gradient(i, &[x0, x1]);
            for k in 0..2 {
                let (mut p, mut m) = ([x0, x1], [x0, x1]);
                p[k] += h;
                m[k] -= h;
                let fd = (task.objective(i, &p) - task.objective(i, &m)) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-7 * fd.abs().max(1.0), "agent {} coord {}: {} vs {}", i, k, fd, g[k]);
            }
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences(
        feats in proptest::collection::vec(-1.0f64..1.0, 24),
        labels in proptest::collection::vec(any::<bool>(), 6),
        x in proptest::collection::vec(-2.0f64..2.0, 4),
        batch in proptest::collection::vec(0usize..6, 1..10),
        l2 in 0.0f64..0.1,
    ) {
        let f = DMatrix::from_row_slice(6, 4, &feats);
        let y: Vec<f64> = labels.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        let x = DVector::from_vec(x);
        let g = logistic_gradient(&x, &f, &y, &batch, l2);
        let h = 1e-5;
        for j in 0..4 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[j] += h;
            m[j] -= h;
            let fd = (logistic_loss(&p, &f, &y, &batch, l2) - logistic_loss(&m, &f, &y, &batch, l2)) / (2.0 * h);
            prop_assert!((fd - g[j]).abs() <= 1e-6 * fd.abs().max(1e-2), "{} vs {}", fd, g[j]);
        }
    }

    #[test]
    fn libsvm_round_trip(
        rows in proptest::collection::vec((any::<bool>(), proptest::collection::vec(prop_oneof![Just(0.0f64), -5.0f64..5.0], 7)), 1..12)
    ) {
        let labels: Vec<f64> = rows.iter().map(|(b, _)| if *b { 1.0 } else { -1.0 }).collect();
        let flat: Vec<f64> = rows.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        let data = LibsvmData { features: DMatrix::from_row_slice(rows.len(), 7, &flat), labels };
        let mut buf = Vec::new();
        write_libsvm(&data, &mut buf).unwrap();
        let back = parse_libsvm_str::<f64>(std::str::from_utf8(&buf).unwrap(), 7).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn dirichlet_conserves_samples(
        labels in proptest::collection::vec(0u8..4, 40..200),
        agents in 1usize..8,
        alpha in 0.5f64..100.0,
        seed in any::<u64>(),
    ) {
        let labels: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let part = dirichlet_partition(&labels, agents, alpha, seed).unwrap();
        prop_assert_eq!(part.assignment.len(), labels.len());
        prop_assert_eq!(part.shard_sizes().iter().sum::<usize>(), labels.len());
        prop_assert!(part.shard_sizes().iter().all(|&s| s > 0));
        let mut all: Vec<usize> = part.shards().concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        prop_assert_eq!(dirichlet_partition(&labels, agents, alpha, seed).unwrap().assignment, part.assignment);
    }

    #[test]
    fn average_is_preserved_without_gradients_or_noise(g in graph_strategy(10), seed in any::<u64>()) {
        let n = g.n();
        let start = DMatrix::from_fn(n, 3, |i, j| ((i * 7 + j * 13) as f64 * 0.37).sin() * 4.0);
        let task = ZeroGradientTask::starting_at(start.clone());
        let cfg = RunConfig {
            mixing: metropolis_hastings(&g).unwrap(),
            noise: CovarianceFactor::zero(n),
            iterations: 50,
            clip: 0.1,
            step: StepSchedule::Constant(0.1),
            seed,
        };
        let traj = corn_dsgd_run(&cfg, &task).unwrap();
        let mean0 = start.row_mean();
        let mean = traj.final_states.row_mean();
        prop_assert!((mean - mean0).amax() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solved_covariances_are_ordered_and_private(g in graph_strategy(6), eps in 2.0f64..30.0) {
        let b = PrivacyBudget::new(eps, 1e-5, 5000, 0.1).unwrap();
        let w = metropolis_hastings::<f64>(&g).unwrap();
        let solve = |s| solve_cov(&CovDesignProblem::new(w.clone(), b.kappa(), s)).unwrap();
        let general = solve(Structure::General);
        let pairwise = solve(Structure::Pairwise(laplacian(&g)));
        let ldp = solve(Structure::Scalar);
        let tol = 1e-6 * ldp.objective;
        prop_assert!(general.objective <= pairwise.objective + tol);
        prop_assert!(pairwise.objective <= ldp.objective + tol);
        for sol in [&general, &pairwise, &ldp] {
            prop_assert!(verify_budget(&sol.r_star, &b).unwrap().passed);
            prop_assert!(sorted_eigenvalues(&sol.r_star).unwrap()[0] > 0.0);
        }
    }
}
