mod common;

use bicoord::em::em_fit_views;
use bicoord::tpgmm::fit_tpgmm_trajectories;
use bicoord::{em_fit, EmConfig, Frame, KmeansInit, TaskFrame};
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `n` points per cluster around each centre, isotropic noise `spread`.
fn clusters(r: &mut ChaCha8Rng, centres: &[&[f64]], n: usize, spread: f64) -> DMatrix<f64> {
    let d = centres[0].len();
    let mut m = DMatrix::zeros(n * centres.len(), d);
    for (c, centre) in centres.iter().enumerate() {
        for i in 0..n {
            for j in 0..d {
                m[(c * n + i, j)] = centre[j] + r.gen_range(-spread..spread);
            }
        }
    }
    m
}

fn is_nondecreasing(h: &[f64]) -> bool {
    h.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn objective_never_decreases(
        seed in any::<u64>(),
        k in 1usize..=5,
        reg in prop_oneof![Just(0.0), 1e-6f64..1e-1],
        all_columns in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let data = DMatrix::from_fn(60, 3, |_, _| r.gen_range(-3.0..3.0));
        let cfg = EmConfig {
            k,
            max_iters: 60,
            cov_regularization: reg,
            seed,
            init: if all_columns { KmeansInit::AllColumns } else { KmeansInit::FirstColumn },
            ..EmConfig::default()
        };
        let (_, history) = em_fit(&data, &cfg).unwrap();
        prop_assert!(!history.is_empty());
        prop_assert!(is_nondecreasing(&history), "{history:?}");
    }

    #[test]
    fn multi_view_objective_never_decreases(seed in any::<u64>(), k in 1usize..=4) {
        let mut r = rng(seed);
        let a = DMatrix::from_fn(50, 2, |_, _| r.gen_range(-3.0..3.0));
        let b = DMatrix::from_fn(50, 3, |_, _| r.gen_range(-1.0..1.0));
        let cfg = EmConfig { k, max_iters: 60, cov_regularization: 1e-4, seed, ..EmConfig::default() };
        let fit = em_fit_views(&[a, b], &cfg).unwrap();
        prop_assert!(is_nondecreasing(&fit.loglik_history));
        prop_assert!((fit.priors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn same_seed_same_bits() {
    let mut r = rng(1);
    let data = clusters(&mut r, &[&[0.0, 0.0], &[4.0, 1.0], &[1.0, 5.0]], 30, 1.0);
    let cfg = EmConfig { k: 3, seed: 9, ..EmConfig::default() };
    let (a, ha) = em_fit(&data, &cfg).unwrap();
    let (b, hb) = em_fit(&data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
}

#[test]
fn recovers_two_separated_clusters() {
    let mut r = rng(2);
    let data = clusters(&mut r, &[&[-5.0, 0.0], &[5.0, 2.0]], 100, 0.5);
    let (gmm, _) = em_fit(&data, &EmConfig { k: 2, ..EmConfig::default() }).unwrap();
    let mut means: Vec<DVector<f64>> = gmm.components().iter().map(|g| g.mean().clone()).collect();
    means.sort_by(|a, b| a[0].total_cmp(&b[0]));
    assert!((&means[0] - DVector::from_row_slice(&[-5.0, 0.0])).amax() < 0.15);
    assert!((&means[1] - DVector::from_row_slice(&[5.0, 2.0])).amax() < 0.15);
    for &p in gmm.priors() {
        assert!((p - 0.5).abs() < 1e-6);
    }
    // Uniform on ±0.5 has variance 1/12.
    for g in gmm.components() {
        for i in 0..2 {
            assert!((g.covariance()[(i, i)] - 1.0 / 12.0).abs() < 0.03);
        }
    }
}

#[test]
fn collapsed_cluster_stays_positive_definite() {
    let mut r = rng(3);
    let mut data = clusters(&mut r, &[&[0.0, 0.0, 0.0]], 40, 1.0);
    // A block of identical points that will own a component on its own.
    for i in 0..10 {
        data.set_row(i, &nalgebra::RowDVector::from_row_slice(&[9.0, 9.0, 9.0]));
    }
    let cfg = EmConfig { k: 3, cov_regularization: 1e-6, ..EmConfig::default() };
    let (gmm, history) = em_fit(&data, &cfg).unwrap();
    assert!(history.iter().all(|v| v.is_finite()));
    for g in gmm.components() {
        assert!(g.covariance().clone().cholesky().is_some());
        assert!(g.covariance().symmetric_eigenvalues().min() >= 1e-6 * 0.999);
    }
}

#[test]
fn rejects_bad_input() {
    let cfg = EmConfig { k: 4, ..EmConfig::default() };
    assert!(em_fit(&DMatrix::<f64>::zeros(3, 2), &cfg).is_err());
    let mut data = DMatrix::<f64>::zeros(10, 2);
    data[(4, 1)] = f64::NAN;
    assert!(em_fit(&data, &cfg).is_err());
    assert!(em_fit(&DMatrix::<f64>::zeros(10, 2), &EmConfig { k: 0, ..EmConfig::default() }).is_err());
    assert!(em_fit(&DMatrix::<f64>::zeros(10, 2), &EmConfig { cov_regularization: -1.0, ..EmConfig::default() }).is_err());
}

#[test]
fn single_identity_frame_is_plain_em() {
    let mut r = rng(4);
    let trajs: Vec<_> = (0..3).map(|_| trajectory(&mut r, 25, 2)).collect();
    let frames: Vec<_> = (0..3).map(|_| vec![TaskFrame::Static(Frame::identity(3).unwrap())]).collect();
    let cfg = EmConfig { k: 4, seed: 5, cov_regularization: 1e-5, ..EmConfig::default() };
    let (model, h1) = fit_tpgmm_trajectories(&trajs, &frames, &cfg).unwrap();

    let mut stacked = DMatrix::zeros(75, 3);
    for (i, t) in trajs.iter().enumerate() {
        stacked.rows_mut(i * 25, 25).copy_from(t);
    }
    let (gmm, h2) = em_fit(&stacked, &cfg).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(model.priors(), gmm.priors());
    assert_eq!(model.frame_components()[0], gmm.components());
}

#[test]
fn repeated_point_gives_the_floor() {
    let p = [1.5, -2.0, 0.25];
    let data = DMatrix::from_fn(100, 3, |_, j| p[j]);
    let (gmm, _) = em_fit(&data, &EmConfig { k: 1, cov_regularization: 1e-3, ..EmConfig::default() }).unwrap();
    let g = &gmm.components()[0];
    assert!((g.mean() - DVector::from_row_slice(&p)).amax() < 1e-12);
    assert!((g.covariance() - DMatrix::identity(3, 3) * 1e-3).amax() < 1e-15);
}

#[test]
fn two_one_dimensional_clusters() {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(6);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let data = DMatrix::from_fn(200, 1, |i, _| if i < 100 { 0.0 } else { 10.0 } + noise.sample(&mut r));
    let (gmm, _) = em_fit(&data, &EmConfig { k: 2, ..EmConfig::default() }).unwrap();
    let mut means: Vec<f64> = gmm.components().iter().map(|g| g.mean()[0]).collect();
    means.sort_by(f64::total_cmp);
    assert!(means[0].abs() < 0.1 && (means[1] - 10.0).abs() < 0.1, "{means:?}");
    assert!(gmm.priors().iter().all(|p| (p - 0.5).abs() < 0.05));
}
