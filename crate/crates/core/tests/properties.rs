use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use jlsm::io::{read_covariates, read_network, write_adjacency, write_covariates, NetworkFormat, ReadOptions};
use jlsm::model::{center_alpha, center_columns, diagonalize_covariance, ActiveSet, CovariateMatrix, LatentState, Network};
use jlsm::objective::{covariate_logits, edge_logits, joint_loss, loss_and_gradients};
use jlsm::selection::{group_lasso_column, group_lasso_objective, prox_group};

fn vector(k: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-5.0..5.0f64, k).prop_map(DVector::from_vec)
}

fn matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

fn binary(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(any::<bool>(), r * c)
        .prop_map(move |v| DMatrix::from_iterator(r, c, v.into_iter().map(|b| f64::from(u8::from(b)))))
}

fn network(n: usize) -> impl Strategy<Value = Network> {
    prop::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
        let mut a = DMatrix::zeros(n, n);
        let mut it = bits.into_iter();
        for i in 0..n {
            for j in i + 1..n {
                if it.next().unwrap() {
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                }
            }
        }
        Network::new(a).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prox_strictly_shrinks(v in vector(3), t in 0.0..3.0f64, r in 0.0..3.0f64) {
        prop_assume!(v.norm() > 0.0 && (t > 0.0 || r > 0.0));
        prop_assert!(prox_group(&v, t, r).norm() < v.norm());
    }

    #[test]
    fn prox_zero_iff_inside_threshold(v in vector(4), t in 0.0..6.0f64, r in 0.0..2.0f64) {
        let p = prox_group(&v, t, r);
        prop_assert_eq!(p.iter().all(|&x| x == 0.0), v.norm() <= t);
    }

    #[test]
    fn logits_survive_recentring_and_rotation(z in matrix(6, 2), beta in matrix(2, 3), alpha in vector(6)) {
        let cz = center_columns(&z);
        let d = diagonalize_covariance(&cz, &beta);
        let s0 = LatentState { z: cz.clone(), alpha: alpha.clone(), beta: beta.clone(), gamma: DVector::zeros(3) };
        let s1 = LatentState { z: d.z.clone(), beta: d.beta.clone(), ..s0.clone() };
        prop_assert!((covariate_logits(&s0) - covariate_logits(&s1)).amax() < 1e-10);
        prop_assert!((edge_logits(&s0) - edge_logits(&s1)).amax() < 1e-10);
        let c = d.z.transpose() * &d.z;
        prop_assert!(c[(0, 1)].abs() < 1e-9);
        prop_assert!(center_alpha(&alpha).sum().abs() < 1e-10);
        let q = &d.rotation;
        prop_assert!((q.transpose() * q - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn single_pass_losses_match_direct(
        net in network(7),
        y in binary(7, 3),
        z in matrix(7, 2),
        beta in matrix(2, 3),
        lw in 0.0..1.0f64,
    ) {
        let cov = CovariateMatrix::with_default_names(y).unwrap();
        let state = LatentState { z, alpha: DVector::from_element(7, -0.3), beta, gamma: DVector::zeros(3) };
        let (fused, _) = loss_and_gradients(&net, &cov, &state, lw);
        let direct = joint_loss(&net, &cov, &state, lw);
        prop_assert!((fused.joint - direct.joint).abs() < 1e-10 * direct.joint.abs().max(1.0));
        prop_assert!(fused.per_param.is_finite());
    }

    #[test]
    fn solution_no_worse_than_zero(z in matrix(30, 2), ybits in prop::collection::vec(any::<bool>(), 30),
                                   lambda in 0.0..0.5f64, delta in 0.0..0.5f64) {
        let y: Vec<f64> = ybits.iter().map(|&b| f64::from(u8::from(b))).collect();
        let fit = group_lasso_column(&z, &y, lambda, delta, 0.0, &DVector::zeros(2));
        let at_fit = group_lasso_objective(&z, &y, lambda, delta, fit.gamma, &fit.beta);
        let at_zero = group_lasso_objective(&z, &y, lambda, delta, 0.0, &DVector::zeros(2));
        prop_assert!(at_fit <= at_zero + 1e-12);
    }

    #[test]
    fn thresholding_matches_exact_zeros(beta in matrix(2, 6), kill in prop::collection::vec(any::<bool>(), 6)) {
        let mut b = beta;
        for (j, &k) in kill.iter().enumerate() {
            if k {
                b.column_mut(j).fill(0.0);
            }
        }
        let active = ActiveSet::from_coefficients(&b, 1e-6);
        for j in 0..6 {
            let nonzero = b.column(j).iter().any(|&x| x != 0.0);
            prop_assert_eq!(active.contains(j), nonzero && b.column(j).norm() > 1e-6);
        }
    }

    #[test]
    fn files_round_trip(net in network(6), y in binary(6, 3)) {
        let dir = tempfile::tempdir().unwrap();
        let cov = CovariateMatrix::with_default_names(y).unwrap();
        write_adjacency(dir.path().join("a.csv"), &net).unwrap();
        write_covariates(dir.path().join("y.csv"), &cov, None).unwrap();
        let back = read_network(dir.path().join("a.csv"), NetworkFormat::Adjacency, &ReadOptions::default()).unwrap();
        prop_assert_eq!(back.network, net);
        prop_assert_eq!(read_covariates(dir.path().join("y.csv")).unwrap().matrix, cov);
    }
}
