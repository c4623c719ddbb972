//! Ranking and selection metrics.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActiveSet, CovariateMatrix, LatentState, Network};
use crate::objective::{covariate_logits, edge_logits, loss_covariates, loss_network};

/// Probability that a random positive outscores a random negative, with ties
/// counted as one half. Computed from midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start+1..=end share their average.
        let midrank = (start + end + 1) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += midrank * positives as f64;
        start = end;
    }
    let n_pos = n_pos as f64;
    let u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg as f64))
}

/// AUC of the edge logits over all unordered node pairs.
pub fn network_auc(net: &Network, state: &LatentState) -> Result<f64> {
    state.check(net.n(), state.q())?;
    let theta = edge_logits(state);
    let n = net.n();
    let mut scores = Vec::with_capacity(n * (n - 1) / 2);
    let mut labels = Vec::with_capacity(scores.capacity());
    for j in 0..n {
        for i in 0..j {
            scores.push(theta[(i, j)]);
            labels.push(net.has_edge(i, j));
        }
    }
    auc(&scores, &labels)
}

/// Mean over nodes of the AUC ranking that node's potential partners.
/// Nodes with no edges, or edges to everyone, are skipped.
pub fn network_auc_per_node(net: &Network, state: &LatentState) -> Result<f64> {
    state.check(net.n(), state.q())?;
    let theta = edge_logits(state);
    let n = net.n();
    let (mut total, mut count) = (0.0, 0usize);
    for i in 0..n {
        let others = (0..n).filter(|&j| j != i);
        let scores: Vec<f64> = others.clone().map(|j| theta[(i, j)]).collect();
        let labels: Vec<bool> = others.map(|j| net.has_edge(i, j)).collect();
        if let Ok(a) = auc(&scores, &labels) {
            total += a;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedAuc);
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateAuc {
    /// Mean over included columns with a defined AUC.
    pub mean: f64,
    /// One entry per covariate column; `None` if excluded or degenerate.
    pub per_column: Vec<Option<f64>>,
}

/// Per-column AUC of the covariate logits, averaged over `included`.
pub fn covariate_auc(cov: &CovariateMatrix, state: &LatentState, included: &ActiveSet) -> Result<CovariateAuc> {
    state.check(cov.n(), cov.q())?;
    let theta = covariate_logits(state);
    let mut per_column = vec![None; cov.q()];
    let (mut total, mut count) = (0.0, 0usize);
    for &j in included.indices() {
        if j >= cov.q() {
            return Err(Error::InvalidActiveSet(format!("column {j} out of range")));
        }
        let labels: Vec<bool> = cov.column(j).iter().map(|&v| v == 1.0).collect();
        let scores: Vec<f64> = theta.column(j).iter().copied().collect();
        match auc(&scores, &labels) {
            Ok(a) => {
                per_column[j] = Some(a);
                total += a;
                count += 1;
            }
            Err(Error::UndefinedAuc) => warn!("covariate {} is constant; left out of the mean AUC", cov.names()[j]),
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::AllUndefined);
    }
    Ok(CovariateAuc {
        mean: total / count as f64,
        per_column,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// Share of noise columns that were dropped; absent without noise.
    pub tn_rate: Option<f64>,
    /// Share of true columns that were kept; absent without true columns.
    pub tp_rate: Option<f64>,
}

pub fn selection_confusion(selected: &ActiveSet, truth: &ActiveSet, q: usize) -> Confusion {
    let noise = truth.complement(q);
    let dropped_noise = noise.iter().filter(|&&j| !selected.contains(j)).count();
    let kept_true = truth.indices().iter().filter(|&&j| selected.contains(j)).count();
    let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Confusion {
        tn_rate: rate(dropped_noise, noise.len()),
        tp_rate: rate(kept_true, truth.len()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_network: f64,
    pub auc_network_per_node: f64,
    pub auc_covariates_mean: f64,
    pub auc_per_covariate: Vec<Option<f64>>,
    pub mean_logloss_a: f64,
    pub mean_logloss_y: f64,
    pub tn_rate: Option<f64>,
    pub tp_rate: Option<f64>,
}

/// All metrics for `state` (with `q` covariate columns) against the data.
/// Covariate metrics use the `included` columns only.
pub fn evaluate(
    net: &Network,
    cov: &CovariateMatrix,
    state: &LatentState,
    included: &ActiveSet,
    truth: Option<&ActiveSet>,
) -> Result<EvalReport> {
    crate::model::validate_pair(net, cov)?;
    state.check(net.n(), cov.q())?;
    let n = net.n() as f64;
    let cov_auc = covariate_auc(cov, state, included)?;
    let cells = n * included.len() as f64;
    let confusion = truth.map(|t| selection_confusion(included, t, cov.q()));
    Ok(EvalReport {
        auc_network: network_auc(net, state)?,
        auc_network_per_node: network_auc_per_node(net, state)?,
        auc_covariates_mean: cov_auc.mean,
        auc_per_covariate: cov_auc.per_column,
        mean_logloss_a: loss_network(net, state) / (n * (n - 1.0) / 2.0),
        mean_logloss_y: loss_covariates(cov, state, Some(included)) / cells,
        tn_rate: confusion.and_then(|c| c.tn_rate),
        tp_rate: confusion.and_then(|c| c.tp_rate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedAuc)));
        assert!(matches!(auc(&[0.1], &[true, false]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let scores: Vec<f64> = (0..50).map(|_| rng.random_range(0..8) as f64).collect();
            let labels: Vec<bool> = (0..50).map(|_| rng.random_bool(0.4)).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            assert!((auc(&scores, &labels).unwrap() - brute_force(&scores, &labels)).abs() < 1e-12);
        }
    }

    fn random_state(n: usize, q: usize, seed: u64) -> LatentState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = LatentState::zeros(n, 2, q);
        s.z = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        s.alpha = nalgebra::DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        s.beta = DMatrix::from_fn(2, q, |_, _| rng.random_range(-1.0..1.0));
        s
    }

    #[test]
    fn network_auc_cases() {
        let edges = [(0, 1), (1, 2), (3, 4), (0, 2)];
        let net = Network::from_edges(6, &edges).unwrap();
        assert_eq!(network_auc(&net, &LatentState::zeros(6, 2, 0)).unwrap(), 0.5);

        // Linked pairs share a latent dimension, giving logits +20 against −20.
        let mut exact = LatentState::zeros(6, 4, 0);
        exact.alpha.fill(-10.0);
        for (d, &(i, j)) in edges.iter().enumerate() {
            exact.z[(i, d)] = 40f64.sqrt();
            exact.z[(j, d)] = 40f64.sqrt();
        }
        assert_eq!(network_auc(&net, &exact).unwrap(), 1.0);

        let state = random_state(10, 0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut e = Vec::new();
        for i in 0..10 {
            for j in i + 1..10 {
                if rng.random_bool(0.3) {
                    e.push((i, j));
                }
            }
        }
        let net = Network::from_edges(10, &e).unwrap();
        let theta = edge_logits(&state);
        let (mut s, mut l) = (Vec::new(), Vec::new());
        for i in 0..10 {
            for j in i + 1..10 {
                s.push(theta[(i, j)]);
                l.push(net.has_edge(i, j));
            }
        }
        assert!((network_auc(&net, &state).unwrap() - brute_force(&s, &l)).abs() < 1e-12);
        assert!(network_auc_per_node(&net, &state).unwrap() > 0.0);

        let empty = Network::from_edges(4, &[]).unwrap();
        assert!(matches!(network_auc(&empty, &LatentState::zeros(4, 1, 0)), Err(Error::UndefinedAuc)));
    }

    #[test]
    fn covariate_auc_cases() {
        let y = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let cov = CovariateMatrix::with_default_names(y).unwrap();
        let zero = LatentState::zeros(4, 1, 3);
        let all = ActiveSet::all(3);
        let r = covariate_auc(&cov, &zero, &all).unwrap();
        // Column 2 is constant and left out.
        assert_eq!(r.per_column, vec![Some(0.5), Some(0.5), None]);
        assert_eq!(r.mean, 0.5);

        let mut perfect = LatentState::zeros(4, 1, 3);
        perfect.z = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        perfect.beta[(0, 0)] = 5.0;
        let first = ActiveSet::new(vec![0], 0.0, 3).unwrap();
        assert_eq!(covariate_auc(&cov, &perfect, &first).unwrap().mean, 1.0);

        let constant = ActiveSet::new(vec![2], 0.0, 3).unwrap();
        assert!(matches!(covariate_auc(&cov, &zero, &constant), Err(Error::AllUndefined)));
    }

    #[test]
    fn confusion_cases() {
        let truth = ActiveSet::new(vec![0, 1, 2], 0.0, 5).unwrap();
        let c = selection_confusion(&truth, &truth, 5);
        assert_eq!((c.tn_rate, c.tp_rate), (Some(1.0), Some(1.0)));

        let none = ActiveSet::new(vec![], 0.0, 5).unwrap();
        let c = selection_confusion(&none, &truth, 5);
        assert_eq!((c.tn_rate, c.tp_rate), (Some(1.0), Some(0.0)));

        let c = selection_confusion(&ActiveSet::all(3), &ActiveSet::all(3), 3);
        assert_eq!(c.tn_rate, None);

        let some = ActiveSet::new(vec![0, 3], 0.0, 5).unwrap();
        let c = selection_confusion(&some, &truth, 5);
        assert_eq!((c.tn_rate, c.tp_rate), (Some(0.5), Some(1.0 / 3.0)));
    }

    #[test]
    fn evaluate_assembles_report() {
        let state = random_state(8, 2, 9);
        let net = Network::from_edges(8, &[(0, 1), (2, 3), (4, 5), (1, 7)]).unwrap();
        let y = DMatrix::from_fn(8, 2, |i, j| ((i + j) % 2) as f64);
        let cov = CovariateMatrix::with_default_names(y).unwrap();
        let truth = ActiveSet::new(vec![0], 0.0, 2).unwrap();
        let r = evaluate(&net, &cov, &state, &ActiveSet::all(2), Some(&truth)).unwrap();
        assert_eq!(r.tn_rate, Some(0.0));
        assert_eq!(r.tp_rate, Some(1.0));
        assert!((0.0..=1.0).contains(&r.auc_network));
        assert!(r.mean_logloss_a > 0.0 && r.mean_logloss_y > 0.0);
        assert_eq!(r.auc_per_covariate.len(), 2);
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec((0i32..10).prop_map(f64::from), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn complement_sums_to_one((scores, labels) in scored_labels()) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let total = auc(&scores, &labels).unwrap() + auc(&scores, &flipped).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_increasing_transforms((scores, labels) in scored_labels()) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let moved: Vec<f64> = scores.iter().map(|s| (0.3 * s).exp() - 7.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&moved, &labels).unwrap());
        }

        #[test]
        fn confusion_rates_are_proportions(sel in prop::collection::btree_set(0usize..12, 0..12),
                                           tru in prop::collection::btree_set(0usize..12, 0..12)) {
            let selected = ActiveSet::new(sel.into_iter().collect(), 0.0, 12).unwrap();
            let truth = ActiveSet::new(tru.into_iter().collect(), 0.0, 12).unwrap();
            let c = selection_confusion(&selected, &truth, 12);
            for r in [c.tn_rate, c.tp_rate].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn network_auc_ignores_relabeling() {
        let state = random_state(9, 0, 4);
        let edges = [(0, 1), (2, 5), (3, 8), (4, 6), (1, 7), (0, 8)];
        let net = Network::from_edges(9, &edges).unwrap();
        let perm = [4usize, 7, 0, 2, 8, 1, 3, 6, 5];
        let moved: Vec<(usize, usize)> = edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let net2 = Network::from_edges(9, &moved).unwrap();
        let mut s2 = state.clone();
        for (i, &to) in perm.iter().enumerate() {
            s2.z.set_row(to, &state.z.row(i));
            s2.alpha[to] = state.alpha[i];
        }
        let a = network_auc(&net, &state).unwrap();
        let b = network_auc(&net2, &s2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
