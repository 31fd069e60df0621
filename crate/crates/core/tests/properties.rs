use mvdi::alpha_pca::{self, moment_matrices, moment_matrices_direct};
use mvdi::benchmarks::{fit_vec_ols, lasso_fixed, vec_design, LassoConfig};
use mvdi::bilinear_lse::{self, bilinear, LseConfig};
use mvdi::evaluate::{dm_test, msfe};
use mvdi::linalg::{frob_norm, kron, spectral_norm, sym_eig};
use mvdi::screening::{correlation_map, refine, screen};
use mvdi::types::default_time_index;
use mvdi::{validate, MatrixSeries, ScalarSeries};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn panel(seed: u64, p: usize, q: usize, t: usize) -> MatrixSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a nonzero mean so the alpha weight matters
    let shift = normal_matrix(&mut rng, p, q);
    let xs = (0..t).map(|_| normal_matrix(&mut rng, p, q) + &shift).collect();
    MatrixSeries::new(xs, default_time_index(t)).unwrap()
}

fn target(seed: u64, t: usize) -> ScalarSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    ScalarSeries::from_values(normals(&mut rng, t)).unwrap()
}

fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn moments_symmetric_psd_equal_traces(
        seed in any::<u64>(), p in 1usize..7, q in 1usize..7, t in 2usize..15, alpha in -1.0f64..3.0,
    ) {
        let x = panel(seed, p, q, t);
        let m = moment_matrices(&x, alpha).unwrap();
        for a in [m.row(), m.col()] {
            prop_assert_eq!(a, &a.transpose());
            let eig = sym_eig(a).unwrap();
            let top = eig.eigenvalues[0].abs().max(1e-300);
            prop_assert!(eig.eigenvalues.iter().all(|v| *v >= -1e-12 * top));
        }
        let (tr, tc) = (trace(m.row()), trace(m.col()));
        prop_assert!((tr - tc).abs() <= 1e-10 * tr.abs().max(1.0));
    }

    #[test]
    fn transformed_form_matches_direct_form(
        seed in any::<u64>(), p in 1usize..7, q in 1usize..7, t in 2usize..15,
        ai in 0usize..5,
    ) {
        let alpha = [-1.0, -0.5, 0.0, 0.5, 1.0][ai];
        let x = panel(seed, p, q, t);
        let m = moment_matrices(&x, alpha).unwrap();
        let (row, col) = moment_matrices_direct(x.matrices(), alpha).unwrap();
        prop_assert!((m.row() - &row).amax() <= 1e-10 * row.amax().max(1.0));
        prop_assert!((m.col() - &col).amax() <= 1e-10 * col.amax().max(1.0));
    }

    #[test]
    fn scaling_the_panel_scales_only_the_factors(seed in any::<u64>(), ci in 0usize..4) {
        let c = [0.5, 2.0, 3.0, 10.0][ci];
        let x = panel(seed, 5, 4, 12);
        let scaled = MatrixSeries::new(x.matrices().iter().map(|m| m * c).collect(), default_time_index(12)).unwrap();
        let a = alpha_pca::fit(&x, 2, 2, 0.0).unwrap();
        let b = alpha_pca::fit(&scaled, 2, 2, 0.0).unwrap();
        prop_assert!((a.row_loadings() - b.row_loadings()).amax() < 1e-8);
        prop_assert!((a.col_loadings() - b.col_loadings()).amax() < 1e-8);
        for (fa, fb) in a.factors().iter().zip(b.factors()) {
            prop_assert!((fa * c - fb).amax() < 1e-8 * c.max(1.0) * fa.amax().max(1.0));
        }
    }

    #[test]
    fn eigen_reconstruction(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = normal_matrix(&mut rng, n, n);
        let a = &b + b.transpose();
        let eig = sym_eig(&a).unwrap();
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues) * eig.eigenvectors.transpose();
        prop_assert!((rebuilt - &a).amax() <= 1e-8 * spectral_norm(&a).max(1e-300));
        prop_assert!(spectral_norm(&b) <= frob_norm(&b) * (1.0 + 1e-12));
    }

    #[test]
    fn validate_pairs_and_is_idempotent(t in 2usize..20, h in 1usize..4) {
        prop_assume!(h < t);
        let x = panel(t as u64, 2, 2, t);
        let y = target(t as u64, t);
        let a = validate(&x, &y, h).unwrap();
        let b = validate(&x, &y, h).unwrap();
        prop_assert_eq!(a.len(), t - h);
        prop_assert_eq!(a.len(), b.len());
    }

    #[test]
    fn screening_is_monotone_in_thresholds(
        seed in any::<u64>(), p in 2usize..7, q in 2usize..7, lo in 0.0f64..0.5, step in 0.0f64..0.49,
    ) {
        let x = panel(seed, p, q, 25);
        let y = target(seed, 25);
        let hi = lo + step;
        let map = correlation_map(&x, &y).unwrap();
        match (screen(map.clone(), lo, lo), screen(map, hi, hi)) {
            (Ok(a), Ok(b)) => {
                prop_assert!(b.kept_rows.iter().all(|i| a.kept_rows.contains(i)));
                prop_assert!(b.kept_cols.iter().all(|j| a.kept_cols.contains(j)));
            }
            (Err(_), b) => prop_assert!(b.is_err()),
            (Ok(_), Err(_)) => {}
        }
    }

    #[test]
    fn screening_follows_row_permutations(seed in any::<u64>(), thr in 0.0f64..0.3) {
        let (p, q, t) = (5, 4, 30);
        let x = panel(seed, p, q, t);
        let y = target(seed, t);
        let perm = [3usize, 0, 4, 1, 2];
        let xp = MatrixSeries::new(
            x.matrices().iter().map(|m| DMatrix::from_fn(p, q, |i, j| m[(perm[i], j)])).collect(),
            default_time_index(t),
        ).unwrap();
        let a = screen(correlation_map(&x, &y).unwrap(), thr, thr);
        let b = screen(correlation_map(&xp, &y).unwrap(), thr, thr);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let mut mapped: Vec<usize> = b.kept_rows.iter().map(|&i| perm[i]).collect();
                mapped.sort_unstable();
                prop_assert_eq!(mapped, a.kept_rows);
                prop_assert_eq!(a.kept_cols, b.kept_cols);
            }
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn zero_thresholds_keep_everything(seed in any::<u64>()) {
        let x = panel(seed, 4, 3, 20);
        let y = target(seed, 20);
        let (refined, _) = refine(&x, &y, 0.0, 0.0).unwrap();
        prop_assert_eq!(refined, x);
    }

    #[test]
    fn msfe_is_nonnegative_and_zero_only_on_equality(v in prop::collection::vec(-1e3f64..1e3, 1..30), bump in 1e-3f64..1.0) {
        prop_assert_eq!(msfe(&v, &v).unwrap(), 0.0);
        let mut w = v.clone();
        w[0] += bump;
        prop_assert!(msfe(&v, &w).unwrap() > 0.0);
    }

    #[test]
    fn kron_matches_elementwise_expansion(
        a in prop::collection::vec(-10.0f64..10.0, 1..6), b in prop::collection::vec(-10.0f64..10.0, 1..6),
    ) {
        let k = kron(&a, &b);
        prop_assert_eq!(k.len(), a.len() * b.len());
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                prop_assert_eq!(k[i * b.len() + j], ai * bj);
            }
        }
    }

    #[test]
    fn bilinear_is_exactly_invariant_to_power_of_two_rescale(
        seed in any::<u64>(), k in 1usize..5, r in 1usize..5, e in -20i32..20,
    ) {
        prop_assume!(e != 0);
        let c = 2f64.powi(e);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = normal_matrix(&mut rng, k, r);
        let a = normals(&mut rng, k);
        let b = normals(&mut rng, r);
        let ca: Vec<f64> = a.iter().map(|v| v * c).collect();
        let cb: Vec<f64> = b.iter().map(|v| v / c).collect();
        prop_assert_eq!(bilinear(&a, &f, &b).to_bits(), bilinear(&ca, &f, &cb).to_bits());
        let kr1 = kron(&b, &a);
        let kr2 = kron(&cb, &ca);
        prop_assert_eq!(kr1, kr2);
    }

    #[test]
    fn bilinear_is_invariant_to_rescale_up_to_rounding(
        seed in any::<u64>(), k in 1usize..5, r in 1usize..5, c in 0.01f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = normal_matrix(&mut rng, k, r);
        let a = normals(&mut rng, k);
        let b = normals(&mut rng, r);
        let ca: Vec<f64> = a.iter().map(|v| v * c).collect();
        let cb: Vec<f64> = b.iter().map(|v| v / c).collect();
        let scale: f64 = a.iter().map(|v| v.abs()).sum::<f64>() * b.iter().map(|v| v.abs()).sum::<f64>() * f.amax();
        prop_assert!((bilinear(&a, &f, &b) - bilinear(&ca, &f, &cb)).abs() <= 1e-13 * scale.max(1.0));
    }

    #[test]
    fn dm_is_antisymmetric(seed in any::<u64>(), n in 5usize..40, h in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = normals(&mut rng, n).iter().map(|v| v * v).collect();
        let b: Vec<f64> = normals(&mut rng, n).iter().map(|v| v * v).collect();
        if let (Ok(x), Ok(y)) = (dm_test(&a, &b, h), dm_test(&b, &a, h)) {
            prop_assert_eq!(x.statistic, -y.statistic);
            prop_assert!(x.p_value > 0.0 && x.p_value <= 1.0);
        }
    }

    #[test]
    fn lse_target_scale_equivariance(seed in any::<u64>(), ci in 0usize..3) {
        let c = [0.25, 2.0, 8.0][ci];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs: Vec<DMatrix<f64>> = (0..40).map(|_| normal_matrix(&mut rng, 2, 3)).collect();
        let ys = normals(&mut rng, 40);
        let cys: Vec<f64> = ys.iter().map(|y| y * c).collect();
        let a = bilinear_lse::fit_aligned(&fs, &ys, &LseConfig::default()).unwrap();
        let b = bilinear_lse::fit_aligned(&fs, &cys, &LseConfig::default()).unwrap();
        prop_assert!((a.alpha() - b.alpha()).amax() < 1e-8);
        prop_assert!((a.beta() * c - b.beta()).amax() < 1e-8 * c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lse_objective_never_increases(seed in any::<u64>(), k in 1usize..5, r in 1usize..5, n in 10usize..60) {
        prop_assume!(n >= k + r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs: Vec<DMatrix<f64>> = (0..n).map(|_| normal_matrix(&mut rng, k, r)).collect();
        let ys = normals(&mut rng, n);
        let est = bilinear_lse::fit_aligned(&fs, &ys, &LseConfig::default()).unwrap();
        let tr = est.objective_trace();
        prop_assert!(!tr.is_empty());
        prop_assert!(tr.windows(2).all(|w| w[1] <= w[0]));
        let final_obj = bilinear_lse::objective(&fs, &ys, est.alpha(), est.beta());
        let last = *tr.last().unwrap();
        prop_assert!((final_obj - last).abs() <= 1e-9 * last.max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn dm_matches_direct_formula(seed in any::<u64>(), n in 5usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = normals(&mut rng, n).iter().map(|v| v * v).collect();
        let b: Vec<f64> = normals(&mut rng, n).iter().map(|v| 1.2 * v * v).collect();
        let got = dm_test(&a, &b, 1).unwrap();
        // h = 1: the long-run variance is the lag-0 population variance
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let nf = n as f64;
        let mean = d.iter().sum::<f64>() / nf;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
        let stat = mean / (var / nf).sqrt();
        let p = 2.0 * Normal::new(0.0, 1.0).unwrap().sf(stat.abs());
        prop_assert!((got.statistic - stat).abs() <= 1e-10 * stat.abs().max(1.0));
        prop_assert!((got.p_value - p).abs() <= 1e-10);
    }

    #[test]
    fn lasso_without_penalty_is_ols(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let xs: Vec<DMatrix<f64>> = (0..=n).map(|_| normal_matrix(&mut rng, d, 1)).collect();
        let ys = normals(&mut rng, n + 1);
        let series = MatrixSeries::new(xs.clone(), default_time_index(n + 1)).unwrap();
        let target = ScalarSeries::from_values(ys.clone()).unwrap();
        let ols = fit_vec_ols(&series, &target, 1).unwrap();
        let cfg = LassoConfig { max_sweeps: 100_000, tol: 1e-13, ..LassoConfig::default() };
        let (coef, path) = lasso_fixed(&vec_design(&xs[..n]), &DVector::from_column_slice(&ys[1..]), 0.0, &cfg);
        prop_assert!(path.converged);
        prop_assert!((coef - ols).amax() < 1e-6);
        prop_assert!(path.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }
}
