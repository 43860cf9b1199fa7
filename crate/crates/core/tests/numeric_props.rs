mod common;

use biredux::normalization::{
    batch_stats, bn_forward, channel_similarity, gate_from_similarity, newton_inv_sqrt, tdbn_forward, transferability_alpha,
    whiten, whitening_residual, DomainStats, Mode,
};
use biredux::orthogonality::{
    amgm_check, gram, orth_penalty, orth_penalty_grad, record_orth_penalty, singular_value_gap, OrthPenaltyConfig,
};
use biredux::tensor::{frobenius_distance, gemm, lu_det, random_orthogonal, random_spd, sym_eig, Mat};
use biredux::{BnParams, Matrix, Tape, TdbnState};
use common::*;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| Mat::from_vec(rows, cols, v).unwrap())
}

fn symmetric(n: usize) -> impl Strategy<Value = Matrix> {
    matrix(n, n).prop_map(|a| a.add(&a.transpose()).unwrap().scale(0.5))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gemm_is_associative(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 5)) {
        let left = gemm(&gemm(&a, &b).unwrap(), &c).unwrap();
        let right = gemm(&a, &gemm(&b, &c).unwrap()).unwrap();
        let d = frobenius_distance(&left, &right).unwrap();
        prop_assert!(d <= 1e-10 * left.frobenius_norm().max(1.0), "{d:e}");
    }

    #[test]
    fn eigenvalues_carry_trace_and_determinant(a in symmetric(5)) {
        let eig = sym_eig(&a).unwrap();
        let sum: f64 = eig.eigenvalues.iter().sum();
        prop_assert!((a.trace() - sum).abs() <= 1e-10 * a.frobenius_norm().max(1.0));
        let prod: f64 = eig.eigenvalues.iter().product();
        let det = lu_det(&a).unwrap();
        let scale = eig.eigenvalues.iter().map(|l| l.abs().max(1.0)).product::<f64>();
        prop_assert!((det - prod).abs() <= 1e-8 * scale, "det {det} vs {prod}");
    }

    #[test]
    fn spd_spectra_are_positive_and_deterministic(seed in 0u64..10_000, dim in 1usize..10) {
        let a: Matrix = random_spd(dim, 25.0, seed).unwrap();
        prop_assert_eq!(&a, &random_spd::<f64>(dim, 25.0, seed).unwrap());
        let eig = sym_eig(&a).unwrap();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
        let again = sym_eig(&a).unwrap();
        prop_assert_eq!(&eig.eigenvalues, &again.eigenvalues);
        prop_assert_eq!(&eig.eigenvectors, &again.eigenvectors);
    }

    #[test]
    fn gate_sums_to_channel_count(
        mean_s in prop::collection::vec(-5.0..5.0f64, 1..12),
        seed in 0u64..1000,
    ) {
        let c = mean_s.len();
        let mut r = rng(seed);
        let stats = |mean: Vec<f64>, r: &mut rand_chacha::ChaCha8Rng| {
            use rand::Rng;
            DomainStats { var: (0..mean.len()).map(|_| r.random_range(0.01..4.0)).collect(), mean, cov: Mat::identity(c), count: 8 }
        };
        let s = stats(mean_s, &mut r);
        let t = stats(uniform(c, 1, -5.0, 5.0, seed).into_vec(), &mut r);
        let alpha = transferability_alpha(&s, &t, 1e-5).unwrap();
        prop_assert!((alpha.iter().sum::<f64>() - c as f64).abs() <= 1e-9);
        prop_assert!(alpha.iter().all(|&a| a > 0.0));
    }

    #[test]
    fn similarity_is_scale_equivariant(
        mean_s in prop::collection::vec(-3.0..3.0f64, 4),
        mean_t in prop::collection::vec(-3.0..3.0f64, 4),
        var_s in prop::collection::vec(0.1..3.0f64, 4),
        var_t in prop::collection::vec(0.1..3.0f64, 4),
        k in 0.1..10.0f64,
    ) {
        let mk = |mean: &[f64], var: &[f64], k: f64| DomainStats {
            mean: mean.iter().map(|m| k * m).collect(),
            var: var.iter().map(|v| k * k * v).collect(),
            cov: Mat::identity(4),
            count: 4,
        };
        let d = channel_similarity(&mk(&mean_s, &var_s, 1.0), &mk(&mean_t, &var_t, 1.0), 0.0).unwrap();
        let dk = channel_similarity(&mk(&mean_s, &var_s, k), &mk(&mean_t, &var_t, k), 0.0).unwrap();
        for (a, b) in d.iter().zip(&dk) {
            prop_assert!(rel(*a, *b) <= 1e-12 || (a - b).abs() <= 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn single_channel_layer_is_doubled_batch_norm(
        xs in matrix(1, 8), xt in matrix(1, 6), gamma in 0.2..2.0f64, beta in -1.0..1.0f64,
    ) {
        let mut state = TdbnState::new(1);
        state.params.gamma = vec![gamma];
        state.params.beta = vec![beta];
        let out = tdbn_forward(Some(&xs), Some(&xt), &mut state, Mode::Train).unwrap();
        prop_assert_eq!(&out.alpha, &vec![1.0]);
        let params = BnParams { gamma: vec![gamma], beta: vec![beta], epsilon: 1e-5 };
        for (x, y) in [(&xs, out.source.unwrap()), (&xt, out.target.unwrap())] {
            let bn = bn_forward(x, &batch_stats(x, 1e-5).unwrap(), &params).unwrap().scale(2.0);
            prop_assert!(bn.sub(&y).unwrap().max_abs() <= 1e-6);
        }
    }

    #[test]
    fn penalty_is_blind_to_right_rotations(seed in 0u64..10_000) {
        let cfg = OrthPenaltyConfig::new(3);
        let w = gaussian(3, 6, seed).scale(0.6);
        let q: Matrix = random_orthogonal(6, &mut rng(seed ^ 1));
        let turned = gemm(&w, &q).unwrap();
        prop_assert!((orth_penalty(&w, &cfg).unwrap() - orth_penalty(&turned, &cfg).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn amgm_holds_for_positive_vectors(v in prop::collection::vec(1e-3..1e3f64, 1..=16)) {
        let r = amgm_check(&v).unwrap();
        prop_assert!(r.holds);
        prop_assert!(r.mean >= r.geomean - 1e-12 * r.mean);
    }
}

#[test]
fn whitening_residual_falls_with_newton_steps() {
    for seed in 0..20 {
        for c in [2, 4, 8, 16] {
            let sigma: Matrix = random_spd(c, 50.0, seed).unwrap();
            let root = sym_eig(&sigma).unwrap().reconstruct_with(f64::sqrt);
            let x = gemm(&root, &gaussian(c, 16 * c, seed ^ 3)).unwrap();
            let stats = batch_stats(&x, 1e-5).unwrap();
            let residuals: Vec<f64> =
                (1..=10).map(|t| whitening_residual(&whiten(&x, &stats, t, None).unwrap()).unwrap()).collect();
            assert!(residuals.windows(2).all(|w| w[1] <= w[0]), "c={c} seed {seed}: {residuals:?}");
            assert!(residuals[9] <= 1e-2, "c={c} seed {seed}: {residuals:?}");
        }
    }
}

#[test]
fn newton_steps_keep_the_normalized_spectrum_in_unit_interval() {
    for seed in 0..20 {
        let sigma: Matrix = random_spd(6, 40.0, seed).unwrap();
        let normalized = sigma.scale(1.0 / sigma.trace());
        let eig = sym_eig(&normalized).unwrap();
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0 && l <= 1.0));
        assert!((eig.eigenvalues.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let oracle = sym_eig(&sigma).unwrap().reconstruct_with(|l| 1.0 / l.sqrt());
        let err = frobenius_distance(&newton_inv_sqrt(&sigma, 25).unwrap(), &oracle).unwrap() / oracle.frobenius_norm();
        assert!(err <= 1e-10, "{err:e}");
    }
}

#[test]
fn equal_similarities_give_unit_gate() {
    for c in 1..=64 {
        for d in [0.0, 0.3, 1.0 / 3.0, 7.25, 1e6] {
            assert!(gate_from_similarity(&vec![d; c]).iter().all(|&a| a == 1.0), "c={c} d={d}");
        }
    }
}

#[test]
fn zero_penalty_iff_unit_singular_values() {
    let cfg = OrthPenaltyConfig::new(3);
    for seed in 0..10 {
        let q: Matrix = random_orthogonal(24, &mut rng(seed));
        let w = q.select_rows(&[0, 1, 2]);
        assert!(orth_penalty(&w, &cfg).unwrap() <= 1e-12);
        assert!(singular_value_gap(&w).unwrap() <= 1e-6);

        let stretched = Mat::diag(&[1.2, 1.0, 1.0 / 1.2]);
        let off = gemm(&stretched, &w).unwrap();
        assert!(singular_value_gap(&off).unwrap() > 1e-6);
        // det = 1 but trace ≠ n, so the penalty still sees it.
        assert!(orth_penalty(&off, &cfg).unwrap() > 1e-6);
        let tr_eq = (0..3).map(|i| gram(&off)[(i, i)]).sum::<f64>();
        assert!((tr_eq - 3.0).abs() > 1e-3);
    }
}

#[test]
fn penalty_gradients_agree_three_ways() {
    for seed in 0..20 {
        let n = 4;
        let cfg = OrthPenaltyConfig::new(n);
        let w = gaussian(n, 12, seed).scale(0.35);
        let analytic = orth_penalty_grad(&w, &cfg).unwrap();
        let mut t = Tape::new();
        let leaf = t.variable(w.clone());
        let p = record_orth_penalty(&mut t, leaf, n).unwrap();
        let tape = t.backward(p).unwrap().wrt(leaf).unwrap().clone();
        let worst = analytic
            .data()
            .iter()
            .zip(tape.data())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
            .fold(0.0, f64::max);
        assert!(worst <= 1e-4, "seed {seed}: {worst:e}");
        let fd = biredux::autodiff::grad_check(|t, x| record_orth_penalty(t, x, n), &w, FD_STEP).unwrap();
        assert!(fd <= 1e-4, "seed {seed}: {fd:e}");
    }
}
