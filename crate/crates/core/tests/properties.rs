mod common;

use common::random_params;
use gsc::em::{expectation_step, fit, fit_from, maximization_step, q_surrogate, FitOptions};
use gsc::inference::build_state_contexts;
use gsc::metrics::{amari_index, ortho_deviation};
use gsc::model::sample_gsc;
use gsc::ModelParams;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn orthogonal(dim: usize, seed: u64) -> DMatrix<f64> {
    gsc::datagen::random_orthogonal(dim, seed).unwrap().a
}

fn permutation_matrix(perm: &[usize]) -> DMatrix<f64> {
    let n = perm.len();
    DMatrix::from_fn(n, n, |i, j| if perm[j] == i { 1.0 } else { 0.0 })
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut s = seed;
    for i in (1..n).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        p.swap(i, (s >> 33) as usize % (i + 1));
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_never_decreases_likelihood(d in 1usize..=4, h in 1usize..=4, seed in 0u64..10_000, iso in any::<bool>()) {
        let truth = random_params(d, h, seed);
        let data = sample_gsc(&truth, 80, seed + 1).unwrap();
        let opts = FitOptions { hidden: h, max_iters: 25, rel_tol: 0.0, isotropic_sigma: iso, seed, ..Default::default() };
        let r = fit(&data, &opts).unwrap();
        for w in r.log_lik_trace.windows(2) {
            prop_assert!(w[1] - w[0] >= -1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn posteriors_are_normalized_and_second_moments_psd(d in 1usize..=3, h in 1usize..=4, seed in 0u64..10_000) {
        let params = random_params(d, h, seed);
        let ctx = build_state_contexts(&params).unwrap();
        let y = common::random_obs(&params, seed + 7);
        let post = ctx.posterior_over_states(&y).unwrap();
        let total: f64 = post.log_weights.iter().map(|w| w.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);

        let m = ctx.point_moments(&y).unwrap();
        prop_assert!(m.es.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        prop_assert!((&m.eszsz - m.eszsz.transpose()).amax() == 0.0);
        let cov = &m.eszsz - &m.esz * m.esz.transpose();
        let min_ev = cov.symmetric_eigenvalues().min();
        prop_assert!(min_ev > -1e-10 * m.eszsz.amax().max(1.0), "min eigenvalue {min_ev}");
    }

    #[test]
    fn rescaling_observations_and_model_is_consistent(d in 1usize..=3, h in 1usize..=3, seed in 0u64..10_000, c in 0.1f64..10.0) {
        let p = random_params(d, h, seed);
        let scaled = ModelParams::new(&p.w * c, &p.sigma * (c * c), p.pi.clone()).unwrap();
        let y = common::random_obs(&p, seed + 3);
        let a = build_state_contexts(&p).unwrap().point_moments(&y).unwrap();
        let b = build_state_contexts(&scaled).unwrap().point_moments(&(&y * c)).unwrap();
        prop_assert!((b.log_lik - (a.log_lik - d as f64 * c.ln())).abs() < 1e-9 * a.log_lik.abs().max(1.0));
        prop_assert!((&a.es - &b.es).amax() < 1e-9);
        prop_assert!((&a.esz - &b.esz).amax() < 1e-8 * a.esz.amax().max(1.0));
        prop_assert!((&a.eszsz - &b.eszsz).amax() < 1e-8 * a.eszsz.amax().max(1.0));
    }

    #[test]
    fn amari_ignores_relabelling_and_shared_transforms(h in 2usize..=5, seed in 0u64..10_000, noise in 0.0f64..0.3) {
        let g = random_params(h, h, seed).w;
        let w = &g + DMatrix::from_fn(h, h, |i, j| noise * ((i * 7 + j * 3) as f64).sin());
        let perm = permutation_matrix(&shuffled(h, seed));
        let base = match amari_index(&w, &g) { Ok(r) => r.index, Err(_) => return Ok(()) };
        prop_assert!(base >= 0.0);
        let relabelled = amari_index(&(&w * &perm), &g).unwrap().index;
        prop_assert!((base - relabelled).abs() < 1e-9);
        let gen_relabelled = amari_index(&w, &(&g * &perm)).unwrap().index;
        prop_assert!((base - gen_relabelled).abs() < 1e-9);
        // W^-1 W_gen is unchanged when both bases go through the same map.
        let a = random_params(h, h, seed + 1).w;
        if let (Ok(r), true) = (amari_index(&(&a * &w), &(&a * &g)), a.determinant().abs() > 1e-3) {
            prop_assert!((base - r.index).abs() < 1e-6 * base.max(1.0));
        }
        // Exact recovery up to permutation and scale scores zero.
        let scale = DMatrix::from_diagonal(&DVector::from_fn(h, |i, _| if i % 2 == 0 { 2.5 } else { -0.4 }));
        prop_assert!(amari_index(&(&g * &perm * &scale), &g).unwrap().index < 1e-9);
    }

    #[test]
    fn orthogonality_ignores_rotation_and_scaling(d in 2usize..=5, seed in 0u64..10_000) {
        let w = random_params(d, d, seed).w;
        let q = orthogonal(d, seed + 1);
        let scale = DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| 0.5 + i as f64));
        let a = ortho_deviation(&w).unwrap();
        let b = ortho_deviation(&(&q * &w * &scale)).unwrap();
        prop_assert!((a - b).abs() < 1e-8);
        prop_assert!(ortho_deviation(&q).unwrap() < 1e-6);
    }
}

#[test]
fn m_step_maximizes_the_surrogate() {
    let truth = random_params(3, 2, 4);
    let data = sample_gsc(&truth, 300, 5).unwrap();
    let current = random_params(3, 2, 6);
    let stats = expectation_step(&build_state_contexts(&current).unwrap(), &data).unwrap();
    let opts = FitOptions { hidden: 2, ..Default::default() };
    let (next, _) = maximization_step(&stats, &current, &opts).unwrap();
    let best = q_surrogate(&stats, &next).unwrap();
    assert!(best >= q_surrogate(&stats, &current).unwrap());

    for k in 0..200u64 {
        let e = random_params(3, 2, 1000 + k);
        let eps = 1e-3 * (1 + k % 4) as f64;
        let w = &next.w + &e.w * eps;
        let sigma = &next.sigma + (&e.sigma - DMatrix::identity(3, 3) * 0.2) * eps;
        let pi = next.pi.map(|p| p) + (&e.pi - DVector::from_element(2, 0.5)) * eps;
        let Ok(moved) = ModelParams::new(w, sigma, pi) else { continue };
        let q = q_surrogate(&stats, &moved).unwrap();
        assert!(q <= best + 1e-9 * best.abs(), "perturbation {k} raised Q: {q} > {best}");
    }
}

#[test]
fn isotropic_m_step_maximizes_over_isotropic_sigma() {
    let truth = random_params(3, 2, 14);
    let data = sample_gsc(&truth, 300, 15).unwrap();
    let current = random_params(3, 2, 16);
    let stats = expectation_step(&build_state_contexts(&current).unwrap(), &data).unwrap();
    let opts = FitOptions { hidden: 2, isotropic_sigma: true, ..Default::default() };
    let (next, _) = maximization_step(&stats, &current, &opts).unwrap();
    let s2 = next.sigma[(0, 0)];
    assert!((&next.sigma - DMatrix::identity(3, 3) * s2).amax() < 1e-15);
    let best = q_surrogate(&stats, &next).unwrap();
    for f in [0.9, 0.99, 0.999, 1.001, 1.01, 1.1] {
        let moved = ModelParams::new(next.w.clone(), &next.sigma * f, next.pi.clone()).unwrap();
        assert!(q_surrogate(&stats, &moved).unwrap() < best);
    }
}

#[test]
fn relabelling_hidden_units_permutes_the_fit() {
    let truth = random_params(3, 3, 21);
    let data = sample_gsc(&truth, 200, 22).unwrap();
    let init = random_params(3, 3, 23);
    let perm = [2, 0, 1];
    let opts = FitOptions { hidden: 3, max_iters: 30, rel_tol: 0.0, ..Default::default() };
    let a = fit_from(&data, init.clone(), &opts).unwrap();
    let b = fit_from(&data, init.permute_hidden(&perm), &opts).unwrap();
    let a_perm = a.params.permute_hidden(&perm);
    assert!((&a_perm.w - &b.params.w).amax() < 1e-8);
    assert!((&a_perm.pi - &b.params.pi).amax() < 1e-8);
    assert!((&a.params.sigma - &b.params.sigma).amax() < 1e-8);
    for (x, y) in a.log_lik_trace.iter().zip(&b.log_lik_trace) {
        assert!((x - y).abs() < 1e-8 * x.abs());
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let truth = random_params(3, 3, 41);
    let data = sample_gsc(&truth, 700, 42).unwrap();
    let opts = FitOptions { hidden: 3, max_iters: 20, seed: 43, ..Default::default() };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| gsc::multi_restart(&data, &opts, 3).unwrap())
    };
    let one = run(1);
    let four = run(4);
    for (a, b) in one.results.iter().zip(&four.results) {
        assert_eq!(a.restart, b.restart);
        assert!((a.final_log_lik() - b.final_log_lik()).abs() <= 1e-10 * a.final_log_lik().abs());
        assert!((&a.params.w - &b.params.w).amax() <= 1e-10);
    }
}
