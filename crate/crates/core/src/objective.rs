//! Negative log-likelihoods of the network and covariate models, the weighted
//! joint loss and its analytic gradients.
//!
//! Edge logits are `θᴬ[i,i'] = α_i + α_i' + Z_i·Z_i'` and covariate logits are
//! `θʸ[i,j] = γ_j + Z_i·β_·j`. Both losses are sums of Bernoulli negative
//! log-likelihoods, `softplus(θ) − x·θ`. The adjacency diagonal never enters a
//! sum or a gradient.

use nalgebra::{DMatrix, DVector};

use crate::model::{ActiveSet, CovariateMatrix, LatentState, Network};

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli negative log-likelihood of outcome `x ∈ {0,1}` at logit `theta`.
#[inline]
pub fn bernoulli_nll(theta: f64, x: f64) -> f64 {
    softplus(theta) - x * theta
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub loss_a: f64,
    pub loss_y: f64,
    /// `loss_a + Λ·loss_y`
    pub joint: f64,
    /// `loss_a / (n(n−1)) + Λ·loss_y / (nq)`
    pub per_param: f64,
}

impl LossBreakdown {
    pub fn new(loss_a: f64, loss_y: f64, lambda_weight: f64, n: usize, q: usize) -> Self {
        let nf = n as f64;
        let y_term = if q == 0 {
            0.0
        } else {
            lambda_weight * loss_y / (nf * q as f64)
        };
        LossBreakdown {
            loss_a,
            loss_y,
            joint: loss_a + lambda_weight * loss_y,
            per_param: loss_a / (nf * (nf - 1.0)) + y_term,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loss_a.is_finite()
            && self.loss_y.is_finite()
            && self.joint.is_finite()
            && self.per_param.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Gradient of the joint loss in `Z`.
    pub d_z: DMatrix<f64>,
    /// Gradient of the joint loss in `α`.
    pub d_alpha: DVector<f64>,
    /// Gradient of the covariate loss in `β`.
    pub d_beta: DMatrix<f64>,
    /// Gradient of the covariate loss in `γ`.
    pub d_gamma: DVector<f64>,
}

/// All pairwise edge logits. The diagonal is filled in but is never used.
pub fn edge_logits(state: &LatentState) -> DMatrix<f64> {
    let mut theta = &state.z * state.z.transpose();
    let n = state.n();
    for j in 0..n {
        for i in 0..n {
            theta[(i, j)] += state.alpha[i] + state.alpha[j];
        }
    }
    theta
}

/// Covariate logits, n×q.
pub fn covariate_logits(state: &LatentState) -> DMatrix<f64> {
    let mut theta = &state.z * &state.beta;
    for (j, mut col) in theta.column_iter_mut().enumerate() {
        col.add_scalar_mut(state.gamma[j]);
    }
    theta
}

/// Network negative log-likelihood over unordered pairs `i < i'`.
pub fn loss_network(net: &Network, state: &LatentState) -> f64 {
    let theta = edge_logits(state);
    let a = net.adjacency();
    let n = net.n();
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..j {
            total += bernoulli_nll(theta[(i, j)], a[(i, j)]);
        }
    }
    total
}

/// Covariate negative log-likelihood, restricted to `subset` when given.
pub fn loss_covariates(
    cov: &CovariateMatrix,
    state: &LatentState,
    subset: Option<&ActiveSet>,
) -> f64 {
    let theta = covariate_logits(state);
    let y = cov.values();
    let column_loss = |j: usize| -> f64 {
        (0..cov.n())
            .map(|i| bernoulli_nll(theta[(i, j)], y[(i, j)]))
            .sum()
    };
    match subset {
        Some(s) => s.indices().iter().map(|&j| column_loss(j)).sum(),
        None => (0..cov.q()).map(column_loss).sum(),
    }
}

pub fn joint_loss(
    net: &Network,
    cov: &CovariateMatrix,
    state: &LatentState,
    lambda_weight: f64,
) -> LossBreakdown {
    LossBreakdown::new(
        loss_network(net, state),
        loss_covariates(cov, state, None),
        lambda_weight,
        net.n(),
        cov.q(),
    )
}

pub fn gradients(
    net: &Network,
    cov: &CovariateMatrix,
    state: &LatentState,
    lambda_weight: f64,
) -> Gradients {
    loss_and_gradients(net, cov, state, lambda_weight).1
}

/// `(softplus(t) − x·t, σ(t) − x)` sharing one exponential.
#[inline]
fn nll_and_residual(t: f64, x: f64) -> (f64, f64) {
    let e = (-t.abs()).exp();
    let p = if t >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (t.max(0.0) + e.ln_1p() - x * t, p - x)
}

/// Losses and gradients from a single pass over the logits.
pub fn loss_and_gradients(
    net: &Network,
    cov: &CovariateMatrix,
    state: &LatentState,
    lambda_weight: f64,
) -> (LossBreakdown, Gradients) {
    let n = net.n();
    let a = net.adjacency();
    let theta_a = edge_logits(state);

    // Residual matrix p − A, symmetric with a zero diagonal.
    let mut resid_a = DMatrix::zeros(n, n);
    let mut loss_a = 0.0;
    for j in 0..n {
        for i in 0..j {
            let (l, r) = nll_and_residual(theta_a[(i, j)], a[(i, j)]);
            loss_a += l;
            resid_a[(i, j)] = r;
            resid_a[(j, i)] = r;
        }
    }

    let theta_y = covariate_logits(state);
    let y = cov.values();
    let mut resid_y = DMatrix::zeros(cov.n(), cov.q());
    let mut loss_y = 0.0;
    for j in 0..cov.q() {
        for i in 0..cov.n() {
            let (l, r) = nll_and_residual(theta_y[(i, j)], y[(i, j)]);
            loss_y += l;
            resid_y[(i, j)] = r;
        }
    }

    let mut d_z = &resid_a * &state.z;
    if cov.q() > 0 && lambda_weight != 0.0 {
        d_z += (&resid_y * state.beta.transpose()) * lambda_weight;
    }
    let d_alpha = DVector::from_iterator(n, resid_a.column_iter().map(|c| c.sum()));
    let d_beta = state.z.transpose() * &resid_y;
    let d_gamma = DVector::from_iterator(cov.q(), resid_y.column_iter().map(|c| c.sum()));

    (
        LossBreakdown::new(loss_a, loss_y, lambda_weight, n, cov.q()),
        Gradients {
            d_z,
            d_alpha,
            d_beta,
            d_gamma,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::diagonalize_covariance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    struct Instance {
        net: Network,
        cov: CovariateMatrix,
        state: LatentState,
    }

    fn random_instance(n: usize, q: usize, k: usize, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.3) {
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                }
            }
        }
        let y = DMatrix::from_fn(n, q, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let state = LatentState {
            z: DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0)),
            alpha: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
            beta: DMatrix::from_fn(k, q, |_, _| rng.random_range(-1.5..1.5)),
            gamma: DVector::from_fn(q, |_, _| rng.random_range(-1.0..1.0)),
        };
        Instance {
            net: Network::new(a).unwrap(),
            cov: CovariateMatrix::with_default_names(y).unwrap(),
            state,
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - LN_2).abs() < 1e-15);
        assert_eq!(softplus(700.0), 700.0);
        assert!(softplus(-700.0) > 0.0 && softplus(-700.0) < 1e-300);
        assert!(softplus(1000.0).is_finite());
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn edge_logits_examples() {
        let mut state = LatentState::zeros(4, 2, 0);
        assert!(edge_logits(&state).iter().all(|&t| t == 0.0));
        assert_eq!(sigmoid(0.0), 0.5);

        state.alpha[0] = -1.0;
        state.alpha[1] = -1.0;
        state.z[(0, 0)] = 0.5;
        state.z[(1, 0)] = 1.0;
        assert!((edge_logits(&state)[(0, 1)] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn logits_match_loop_oracles() {
        let inst = random_instance(6, 3, 2, 1);
        let s = &inst.state;
        let theta = edge_logits(s);
        for i in 0..6 {
            for j in 0..6 {
                let mut dot = 0.0;
                for d in 0..2 {
                    dot += s.z[(i, d)] * s.z[(j, d)];
                }
                let expected = s.alpha[i] + s.alpha[j] + dot;
                assert!((theta[(i, j)] - expected).abs() < 1e-12);
            }
        }
        let theta_y = covariate_logits(s);
        for i in 0..6 {
            for j in 0..3 {
                let mut dot = 0.0;
                for d in 0..2 {
                    dot += s.z[(i, d)] * s.beta[(d, j)];
                }
                assert!((theta_y[(i, j)] - (s.gamma[j] + dot)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariate_logits_examples() {
        let mut state = LatentState::zeros(3, 1, 2);
        state.gamma[0] = 0.3;
        state.gamma[1] = -2.0;
        let t = covariate_logits(&state);
        for i in 0..3 {
            assert_eq!(t[(i, 0)], 0.3);
            assert_eq!(t[(i, 1)], -2.0);
        }
        state.z[(0, 0)] = 2.0;
        state.beta[(0, 0)] = 0.5;
        state.gamma[0] = -1.0;
        assert_eq!(covariate_logits(&state)[(0, 0)], 0.0);
    }

    #[test]
    fn network_loss_analytic_cases() {
        let state = LatentState::zeros(3, 1, 0);
        let empty = Network::new(DMatrix::zeros(3, 3)).unwrap();
        assert!((loss_network(&empty, &state) - 3.0 * LN_2).abs() < 1e-12);
        assert!((loss_network(&empty, &state) - 2.0794415416798357).abs() < 1e-12);

        let mut full = DMatrix::from_element(3, 3, 1.0);
        full.fill_diagonal(0.0);
        let full = Network::new(full).unwrap();
        assert!((loss_network(&full, &state) - 3.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn network_loss_matches_bernoulli_oracle() {
        let inst = random_instance(8, 2, 2, 4);
        let theta = edge_logits(&inst.state);
        let mut expected = 0.0;
        for i in 0..8 {
            for j in i + 1..8 {
                let p = 1.0 / (1.0 + (-theta[(i, j)]).exp());
                expected -= if inst.net.has_edge(i, j) {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                };
            }
        }
        assert!((loss_network(&inst.net, &inst.state) - expected).abs() < 1e-10);
    }

    #[test]
    fn covariate_loss_cases() {
        let cov = CovariateMatrix::with_default_names(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let state = LatentState::zeros(1, 1, 1);
        assert!((loss_covariates(&cov, &state, None) - LN_2).abs() < 1e-15);
        let none = ActiveSet::new(vec![], 1e-6, 1).unwrap();
        assert_eq!(loss_covariates(&cov, &state, Some(&none)), 0.0);

        let inst = random_instance(10, 4, 2, 5);
        let theta = covariate_logits(&inst.state);
        let mut expected = 0.0;
        for i in 0..10 {
            for j in 0..4 {
                let p = 1.0 / (1.0 + (-theta[(i, j)]).exp());
                expected -= if inst.cov.values()[(i, j)] == 1.0 {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                };
            }
        }
        assert!((loss_covariates(&inst.cov, &inst.state, None) - expected).abs() < 1e-10);
    }

    #[test]
    fn joint_loss_combines_parts() {
        let inst = random_instance(9, 3, 2, 6);
        let zero = joint_loss(&inst.net, &inst.cov, &inst.state, 0.0);
        assert_eq!(zero.joint, zero.loss_a);

        let b = joint_loss(&inst.net, &inst.cov, &inst.state, 0.1);
        let la = loss_network(&inst.net, &inst.state);
        let ly = loss_covariates(&inst.cov, &inst.state, None);
        assert!((b.joint - (la + 0.1 * ly)).abs() < 1e-12);
        assert!((b.per_param - (la / 72.0 + 0.1 * ly / 27.0)).abs() < 1e-12);

        let eq = LossBreakdown::new(2.5, 2.5, 1.0, 4, 2);
        assert_eq!(eq.joint, 5.0);
    }

    #[test]
    fn alpha_gradient_sums_to_twice_pair_residuals() {
        let inst = random_instance(11, 2, 2, 7);
        let g = gradients(&inst.net, &inst.cov, &inst.state, 0.1);
        let theta = edge_logits(&inst.state);
        let mut pair_sum = 0.0;
        for i in 0..11 {
            for j in i + 1..11 {
                pair_sum += sigmoid(theta[(i, j)]) - inst.net.adjacency()[(i, j)];
            }
        }
        assert!((g.d_alpha.sum() - 2.0 * pair_sum).abs() < 1e-10);
    }

    #[test]
    fn gradients_vanish_at_saturation() {
        // Two disconnected pairs; within-pair logits are +40, cross-pair −40.
        let net = Network::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let cov = CovariateMatrix::empty(4);
        let mut state = LatentState::zeros(4, 1, 0);
        let r = 40f64.sqrt();
        state.z[(0, 0)] = r;
        state.z[(1, 0)] = r;
        state.z[(2, 0)] = -r;
        state.z[(3, 0)] = -r;
        let g = gradients(&net, &cov, &state, 0.1);
        assert!(g.d_z.abs().max() < 1e-15);
        assert!(g.d_alpha.abs().max() < 1e-15);
    }

    #[test]
    fn losses_are_permutation_invariant() {
        let inst = random_instance(7, 3, 2, 8);
        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let a = inst.net.adjacency();
        let pa = DMatrix::from_fn(7, 7, |i, j| a[(perm[i], perm[j])]);
        let py = DMatrix::from_fn(7, 3, |i, j| inst.cov.values()[(perm[i], j)]);
        let ps = LatentState {
            z: DMatrix::from_fn(7, 2, |i, d| inst.state.z[(perm[i], d)]),
            alpha: DVector::from_fn(7, |i, _| inst.state.alpha[perm[i]]),
            beta: inst.state.beta.clone(),
            gamma: inst.state.gamma.clone(),
        };
        let before = joint_loss(&inst.net, &inst.cov, &inst.state, 0.1);
        let after = joint_loss(
            &Network::new(pa).unwrap(),
            &CovariateMatrix::with_default_names(py).unwrap(),
            &ps,
            0.1,
        );
        assert!((before.loss_a - after.loss_a).abs() < 1e-10);
        assert!((before.loss_y - after.loss_y).abs() < 1e-10);
        assert!((before.joint - after.joint).abs() < 1e-10);
        assert!((before.per_param - after.per_param).abs() < 1e-10);
    }

    #[test]
    fn joint_loss_is_rotation_invariant() {
        let inst = random_instance(10, 3, 2, 9);
        let mut s = inst.state.clone();
        s.z = crate::model::center_columns(&s.z);
        let d = diagonalize_covariance(&s.z, &s.beta);
        let rotated = LatentState {
            z: d.z,
            beta: d.beta,
            ..s.clone()
        };
        let a = joint_loss(&inst.net, &inst.cov, &s, 0.1);
        let b = joint_loss(&inst.net, &inst.cov, &rotated, 0.1);
        assert!((a.joint - b.joint).abs() < 1e-10);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let net = Network::from_edges(3, &[(0, 1)]).unwrap();
        let cov = CovariateMatrix::with_default_names(DMatrix::from_element(3, 1, 1.0)).unwrap();
        let mut state = LatentState::zeros(3, 1, 1);
        state.alpha.fill(-350.0);
        state.gamma[0] = -700.0;
        let l = joint_loss(&net, &cov, &state, 0.1);
        assert!(l.is_finite());
        let g = gradients(&net, &cov, &state, 0.1);
        assert!(g.d_alpha.iter().all(|v| v.is_finite()));
    }
}
