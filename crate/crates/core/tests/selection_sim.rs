//! Selection behaviour on simulated data with known support.

use nalgebra::{DMatrix, DVector};

use jlsm::harness::{run_methods, FitSettings, Method};
use jlsm::model::{default_delta_grid, default_lambda_grid, ActiveSet, CovariateMatrix, Hyperparams};
use jlsm::rng::derive_seed;
use jlsm::selection::{lasso_path, me_refine, select_and_refit};
use jlsm::estimator::fit_joint;
use jlsm::simgen::{generate, SimConfig, SpreadKind};

#[test]
fn oracle_positions_recover_support_somewhere_on_path() {
    let cfg = SimConfig {
        n: 500,
        q: 10,
        n_noise: 5,
        beta_mean: 2.0,
        seed: 31,
        ..SimConfig::default()
    };
    let (_, cov, truth) = generate(&cfg).unwrap();
    let grid = default_lambda_grid(cfg.n, cfg.k, 20);
    let path = lasso_path(&truth.z, &cov, &grid, 1e-6).unwrap();
    let hit = path
        .iter()
        .any(|e| ActiveSet::from_coefficients(&e.beta, 1e-6) == ActiveSet::new((0..5).collect(), 1e-6, 10).unwrap());
    assert!(hit, "no lambda recovers the true support");
    assert_eq!(path.last().unwrap().n_selected, 0);
}

#[test]
fn oracle_positions_mostly_pick_zero_delta() {
    let mut zero = 0;
    for r in 0..20 {
        let cfg = SimConfig {
            n: 150,
            q: 8,
            n_noise: 3,
            seed: derive_seed(77, r),
            ..SimConfig::default()
        };
        let (_, cov, truth) = generate(&cfg).unwrap();
        let keep = cov.select_columns(truth.active.indices()).unwrap();
        let lambda = (cfg.k as f64 / cfg.n as f64).sqrt();
        let s = keep.q();
        let m = me_refine(&truth.z, &keep, lambda, &default_delta_grid(), &DVector::zeros(s), &DMatrix::zeros(cfg.k, s));
        zero += usize::from(m.chosen_delta == 0.0);
    }
    assert!(zero > 10, "delta 0 chosen in {zero} of 20");
}

#[test]
fn strong_signal_keeps_every_column() {
    let cfg = SimConfig {
        n: 150,
        q: 6,
        n_noise: 0,
        beta_mean: 3.0,
        beta_spread: 0.1,
        spread_kind: SpreadKind::StdDev,
        seed: 5,
        ..SimConfig::default()
    };
    let (net, cov, _) = generate(&cfg).unwrap();
    let hyper = Hyperparams {
        max_iters: 400,
        seed: 2,
        ..Hyperparams::defaults(cfg.n, cfg.k)
    };
    let stage1 = fit_joint(&net, &cov, &hyper, None).unwrap();
    let sel = select_and_refit(&net, &cov, &stage1, &hyper).unwrap();
    assert_eq!(sel.active.indices(), ActiveSet::all(6).indices());
}

#[test]
fn refit_keeps_network_auc() {
    for (make, seed) in [(SimConfig::less_sparse as fn(usize, u64) -> SimConfig, 1), (SimConfig::sparse, 2)] {
        let cfg = make(20, seed);
        let (net, cov, truth) = generate(&cfg).unwrap();
        let out = run_methods(
            &net,
            &cov,
            Some(&truth.active),
            &FitSettings::default(),
            &[Method::Joint, Method::Melasso],
            seed,
        )
        .unwrap();
        let drop = out[0].report.auc_network - out[1].report.auc_network;
        assert!(drop <= 0.02, "network AUC fell by {drop}");
    }
}

#[test]
fn empty_covariates_are_rejected_by_selection() {
    let cfg = SimConfig {
        n: 20,
        q: 0,
        ..SimConfig::default()
    };
    let (net, cov, _) = generate(&cfg).unwrap();
    assert_eq!(cov, CovariateMatrix::empty(20));
    let hyper = Hyperparams {
        max_iters: 20,
        ..Hyperparams::defaults(20, 2)
    };
    let stage1 = fit_joint(&net, &cov, &hyper, None).unwrap();
    assert!(select_and_refit(&net, &cov, &stage1, &hyper).is_err());
}
