//! Covariate selection on estimated latent positions.
//!
//! Each covariate column is regressed on `Ẑ` with a group penalty on its
//! slope vector,
//!
//! ```text
//! (1/n)·Σ_i nll(γ + Ẑ_i·β, y_i) + λ·√k·‖β‖₂ + (δ/2)·√k·‖β‖₂²
//! ```
//!
//! solved by accelerated proximal gradient. A path over `λ` picks the support,
//! a sweep over `δ` refines the kept coefficients, and the joint model is then
//! refit on the kept columns only.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{fit_joint, FitResult};
use crate::model::{ActiveSet, CovariateMatrix, Hyperparams, LatentState, Network, SelectionCriterion};
use crate::objective::{sigmoid, softplus};

const MAX_ITERS: usize = 5000;
const TOL: f64 = 1e-9;

/// Proximal operator of `threshold·‖x‖₂ + (ridge_scale/2)·‖x‖₂²`.
pub fn prox_group(v: &DVector<f64>, threshold: f64, ridge_scale: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= threshold {
        return DVector::zeros(v.len());
    }
    v * ((1.0 - threshold / norm) / (1.0 + ridge_scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupLassoFit {
    pub gamma: f64,
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Penalized objective of one column, normalized by `n`.
pub fn group_lasso_objective(
    z: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    delta: f64,
    gamma: f64,
    beta: &DVector<f64>,
) -> f64 {
    let sqrt_k = (z.ncols() as f64).sqrt();
    let b = beta.norm();
    column_nll(z, y, gamma, beta) / y.len() as f64
        + lambda * sqrt_k * b
        + 0.5 * delta * sqrt_k * b * b
}

fn column_nll(z: &DMatrix<f64>, y: &[f64], gamma: f64, beta: &DVector<f64>) -> f64 {
    let theta = z * beta;
    y.iter()
        .zip(theta.iter())
        .map(|(&yi, &t)| {
            let t = t + gamma;
            softplus(t) - yi * t
        })
        .sum()
}

/// Smooth part `(1/n)·nll` and its gradient.
fn smooth_value_grad(z: &DMatrix<f64>, y: &[f64], gamma: f64, beta: &DVector<f64>) -> (f64, f64, DVector<f64>) {
    let n = y.len() as f64;
    let theta = z * beta;
    let mut value = 0.0;
    let mut resid = DVector::zeros(y.len());
    for i in 0..y.len() {
        let t = theta[i] + gamma;
        value += softplus(t) - y[i] * t;
        resid[i] = sigmoid(t) - y[i];
    }
    let g_beta = z.tr_mul(&resid) / n;
    (value / n, resid.sum() / n, g_beta)
}

/// Group-penalized logistic fit of one column, started at `(gamma0, beta0)`.
pub fn group_lasso_column(
    z: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    delta: f64,
    gamma0: f64,
    beta0: &DVector<f64>,
) -> GroupLassoFit {
    let sqrt_k = (z.ncols() as f64).sqrt();
    let mut lipschitz = 1.0;

    let mut gamma = gamma0;
    let mut beta = beta0.clone();
    let mut prev_gamma = gamma;
    let mut prev_beta = beta.clone();
    let mut momentum = 1.0_f64;

    for it in 1..=MAX_ITERS {
        // Extrapolated point.
        let w = if it == 1 {
            0.0
        } else {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let w = (momentum - 1.0) / next;
            momentum = next;
            w
        };
        let yg = gamma + w * (gamma - prev_gamma);
        let yb = &beta + (&beta - &prev_beta) * w;
        let (fy, gg, gb) = smooth_value_grad(z, y, yg, &yb);

        // Backtrack until the quadratic model majorizes the smooth part.
        let (new_gamma, new_beta) = loop {
            let step = 1.0 / lipschitz;
            let cg = yg - step * gg;
            let cb = prox_group(&(&yb - &gb * step), step * lambda * sqrt_k, step * delta * sqrt_k);
            let dg = cg - yg;
            let db = &cb - &yb;
            let model = fy + gg * dg + gb.dot(&db) + 0.5 * lipschitz * (dg * dg + db.norm_squared());
            let actual = column_nll(z, y, cg, &cb) / y.len() as f64;
            if actual <= model + 1e-15 * fy.abs().max(1.0) || lipschitz > 1e12 {
                break (cg, cb);
            }
            lipschitz *= 2.0;
        };

        // Restart the momentum when it points uphill.
        let uphill = (yg - new_gamma) * (new_gamma - gamma) + (&yb - &new_beta).dot(&(&new_beta - &beta));
        if uphill > 0.0 {
            momentum = 1.0;
        }

        let change = ((new_gamma - gamma).powi(2) + (&new_beta - &beta).norm_squared()).sqrt();
        prev_gamma = gamma;
        prev_beta = std::mem::replace(&mut beta, new_beta);
        gamma = new_gamma;
        if change < TOL && it > 1 {
            return GroupLassoFit {
                gamma,
                beta,
                iterations: it,
                converged: true,
            };
        }
    }
    GroupLassoFit {
        gamma,
        beta,
        iterations: MAX_ITERS,
        converged: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPathEntry {
    pub lambda: f64,
    pub gamma: DVector<f64>,
    pub beta: DMatrix<f64>,
    /// Unpenalized covariate loss divided by `n·q`.
    pub mean_logloss_y: f64,
    pub aic: f64,
    pub n_selected: usize,
    /// Columns whose solver hit the iteration cap.
    pub not_converged: usize,
}

fn solve_columns(
    z: &DMatrix<f64>,
    cov: &CovariateMatrix,
    lambda: f64,
    delta: f64,
    gamma0: &DVector<f64>,
    beta0: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>, usize) {
    let fits: Vec<GroupLassoFit> = (0..cov.q())
        .into_par_iter()
        .map(|j| {
            let y = cov.column(j);
            group_lasso_column(z, &y, lambda, delta, gamma0[j], &beta0.column(j).into_owned())
        })
        .collect();
    let mut gamma = DVector::zeros(cov.q());
    let mut beta = DMatrix::zeros(z.ncols(), cov.q());
    let mut not_converged = 0;
    for (j, fit) in fits.into_iter().enumerate() {
        gamma[j] = fit.gamma;
        beta.set_column(j, &fit.beta);
        not_converged += usize::from(!fit.converged);
    }
    (gamma, beta, not_converged)
}

fn total_nll(z: &DMatrix<f64>, cov: &CovariateMatrix, gamma: &DVector<f64>, beta: &DMatrix<f64>) -> f64 {
    (0..cov.q())
        .map(|j| column_nll(z, &cov.column(j), gamma[j], &beta.column(j).into_owned()))
        .sum()
}

/// Solves every column at each `λ` in `lambda_grid`, warm-starting from the
/// next larger value. Entries come back in ascending `λ` order.
pub fn lasso_path(
    z: &DMatrix<f64>,
    cov: &CovariateMatrix,
    lambda_grid: &[f64],
    tau: f64,
) -> Result<Vec<LassoPathEntry>> {
    if z.nrows() != cov.n() {
        return Err(Error::DimensionMismatch(format!(
            "latent positions have {} rows, covariates {}",
            z.nrows(),
            cov.n()
        )));
    }
    let (n, q, k) = (cov.n(), cov.q(), z.ncols());
    let mut order: Vec<f64> = lambda_grid.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));

    let mut gamma = DVector::zeros(q);
    let mut beta = DMatrix::zeros(k, q);
    let mut entries = Vec::with_capacity(order.len());
    for &lambda in &order {
        let (g, b, not_converged) = solve_columns(z, cov, lambda, 0.0, &gamma, &beta);
        gamma = g;
        beta = b;
        let loss_y = total_nll(z, cov, &gamma, &beta);
        let active = ActiveSet::from_coefficients(&beta, tau);
        let df = (k * active.len() + q) as f64;
        entries.push(LassoPathEntry {
            lambda,
            gamma: gamma.clone(),
            beta: beta.clone(),
            mean_logloss_y: if q == 0 { 0.0 } else { loss_y / (n * q) as f64 },
            aic: 2.0 * loss_y + 2.0 * df,
            n_selected: active.len(),
            not_converged,
        });
        if not_converged > 0 {
            warn!("lambda {lambda:.4e}: {not_converged} columns did not converge");
        }
    }
    entries.reverse();

    for pair in entries.windows(2) {
        if pair[1].n_selected > pair[0].n_selected {
            debug!(
                "path not monotone: {} selected at lambda {:.4e}, {} at {:.4e}",
                pair[0].n_selected, pair[0].lambda, pair[1].n_selected, pair[1].lambda
            );
        }
    }
    Ok(entries)
}

/// Picks the path entry minimizing `criterion`. Ties go to the larger `λ`.
pub fn choose_lambda(
    path: &[LassoPathEntry],
    criterion: SelectionCriterion,
    require_nonempty: bool,
) -> Result<&LassoPathEntry> {
    let score = |e: &LassoPathEntry| match criterion {
        SelectionCriterion::Aic => e.aic,
        SelectionCriterion::Logloss => e.mean_logloss_y,
    };
    let mut best: Option<&LassoPathEntry> = None;
    for e in path {
        if require_nonempty && e.n_selected == 0 {
            continue;
        }
        best = match best {
            None => Some(e),
            Some(b) if score(e) < score(b) || (score(e) == score(b) && e.lambda > b.lambda) => Some(e),
            keep => keep,
        };
    }
    best.ok_or(Error::AllEmpty)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeRefinement {
    pub gamma: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub chosen_delta: f64,
    pub not_converged: usize,
}

/// Re-solves the kept columns at `lambda_star` for each `δ` and keeps the
/// solution with the smallest mean log-loss. Ties go to the smaller `δ`.
pub fn me_refine(
    z: &DMatrix<f64>,
    cov_keep: &CovariateMatrix,
    lambda_star: f64,
    delta_grid: &[f64],
    gamma0: &DVector<f64>,
    beta0: &DMatrix<f64>,
) -> MeRefinement {
    let mut deltas = delta_grid.to_vec();
    deltas.sort_by(f64::total_cmp);
    let cells = (cov_keep.n() * cov_keep.q()).max(1) as f64;
    let mut best: Option<(f64, MeRefinement)> = None;
    for &delta in &deltas {
        let (gamma, beta, not_converged) = solve_columns(z, cov_keep, lambda_star, delta, gamma0, beta0);
        let loss = total_nll(z, cov_keep, &gamma, &beta) / cells;
        debug!("delta {delta}: mean log-loss {loss:.6}");
        if best.as_ref().is_none_or(|(l, _)| loss < *l) {
            best = Some((
                loss,
                MeRefinement {
                    gamma,
                    beta,
                    chosen_delta: delta,
                    not_converged,
                },
            ));
        }
    }
    best.map(|(_, r)| r).unwrap_or(MeRefinement {
        gamma: gamma0.clone(),
        beta: beta0.clone(),
        chosen_delta: 0.0,
        not_converged: 0,
    })
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub chosen_lambda: f64,
    pub chosen_delta: f64,
    pub active: ActiveSet,
    /// Refined coefficients of the kept columns, k×s.
    pub beta_gmul: DMatrix<f64>,
    pub gamma_gmul: DVector<f64>,
    /// Joint refit on the kept columns; its `β` and `γ` have `s` columns.
    pub final_fit: FitResult,
    pub path: Vec<LassoPathEntry>,
}

impl SelectionResult {
    /// The refit state with `β`/`γ` scattered back to all `q` columns; dropped
    /// columns get zeros.
    pub fn full_state(&self, q: usize) -> LatentState {
        let s = &self.final_fit.state;
        let mut beta = DMatrix::zeros(s.k(), q);
        let mut gamma = DVector::zeros(q);
        for (pos, &j) in self.active.indices().iter().enumerate() {
            beta.set_column(j, &s.beta.column(pos));
            gamma[j] = s.gamma[pos];
        }
        LatentState {
            z: s.z.clone(),
            alpha: s.alpha.clone(),
            beta,
            gamma,
        }
    }
}

/// Path over `λ`, criterion choice, thresholding, `δ` refinement and the
/// joint refit on the kept columns, started from the stage-one positions.
pub fn select_and_refit(
    net: &Network,
    cov: &CovariateMatrix,
    stage1: &FitResult,
    hyper: &Hyperparams,
) -> Result<SelectionResult> {
    hyper.validate()?;
    let z = &stage1.state.z;
    let path = lasso_path(z, cov, &hyper.lambda_grid, hyper.tau)?;
    let entry = choose_lambda(&path, hyper.selection_criterion, true)?;
    let active = ActiveSet::from_coefficients(&entry.beta, hyper.tau);
    let keep = active.indices();
    debug!("lambda* = {:.4e}, keeping {} of {}", entry.lambda, keep.len(), cov.q());

    let cov_keep = cov.select_columns(keep)?;
    let gamma0 = DVector::from_iterator(keep.len(), keep.iter().map(|&j| entry.gamma[j]));
    let beta0 = entry.beta.select_columns(keep);
    let refined = me_refine(z, &cov_keep, entry.lambda, &hyper.delta_grid, &gamma0, &beta0);

    let init = LatentState {
        z: z.clone(),
        alpha: stage1.state.alpha.clone(),
        beta: refined.beta.clone(),
        gamma: refined.gamma.clone(),
    };
    let final_fit = fit_joint(net, &cov_keep, hyper, Some(&init))?;
    Ok(SelectionResult {
        chosen_lambda: entry.lambda,
        chosen_delta: refined.chosen_delta,
        active,
        beta_gmul: refined.beta,
        gamma_gmul: refined.gamma,
        final_fit,
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{inner_logistic_fit, INNER_RIDGE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn logistic_data(n: usize, k: usize, beta: &[f64], gamma: f64, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
        let y = (0..n)
            .map(|i| {
                let t = gamma + (0..k).map(|d| z[(i, d)] * beta[d]).sum::<f64>();
                if rng.random_bool(sigmoid(t)) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        (z, y)
    }

    /// Minimizer over `s ≥ 0` of a convex function with derivative `df`.
    fn bisect_min(df: impl Fn(f64) -> f64, hi: f64) -> f64 {
        if df(0.0) >= 0.0 {
            return 0.0;
        }
        let (mut a, mut b) = (0.0, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if df(m) < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn prox_examples() {
        let v = DVector::from_vec(vec![3.0, 0.0]);
        let p = prox_group(&v, 1.0, 0.0);
        assert!((p.norm() - 2.0).abs() < 1e-15);
        let small = DVector::from_vec(vec![0.3, -0.4]);
        assert_eq!(prox_group(&small, 0.5, 0.2), DVector::zeros(2));
    }

    #[test]
    fn prox_matches_radial_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let k = rng.random_range(1..5);
            let v = DVector::from_fn(k, |_, _| rng.random_range(-3.0..3.0));
            let t: f64 = rng.random_range(0.0..2.0);
            let r: f64 = rng.random_range(0.0..1.0);
            // The minimizer is a nonnegative multiple of v; search its length.
            let norm: f64 = v.norm();
            // d/ds of ½(s − ‖v‖)² + t·s + (r/2)·s²
            let slope = |s: f64| s - norm + t + r * s;
            let s = bisect_min(slope, norm + 1.0);
            let p = prox_group(&v, t, r);
            assert!((p.norm() - s).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_lambda_gives_intercept_only() {
        let (z, y) = logistic_data(80, 2, &[1.0, -1.0], 0.3, 1);
        let fit = group_lasso_column(&z, &y, 1e6, 0.0, 0.0, &DVector::zeros(2));
        assert_eq!(fit.beta, DVector::zeros(2));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((fit.gamma - (mean / (1.0 - mean)).ln()).abs() < 1e-6);
        assert!(fit.converged);
    }

    #[test]
    fn unpenalized_fit_matches_inner_fit() {
        for seed in 0..5 {
            let (z, y) = logistic_data(100, 2, &[0.8, -0.5], -0.2, seed);
            let a = group_lasso_column(&z, &y, 0.0, 0.0, 0.0, &DVector::zeros(2));
            let b = inner_logistic_fit(&z, &y, INNER_RIDGE);
            assert!((a.gamma - b.gamma).abs() < 1e-6);
            assert!((&a.beta - &b.beta).amax() < 1e-6);
        }
    }

    #[test]
    fn solution_beats_perturbations_and_grid_search() {
        let (z, y) = logistic_data(60, 2, &[1.2, 0.4], 0.1, 3);
        for (lambda, delta) in [(0.05, 0.2), (0.8, 0.0)] {
            let obj = |g: f64, b0: f64, b1: f64| {
                group_lasso_objective(&z, &y, lambda, delta, g, &DVector::from_vec(vec![b0, b1]))
            };
            let fit = group_lasso_column(&z, &y, lambda, delta, 0.0, &DVector::zeros(2));
            let at = obj(fit.gamma, fit.beta[0], fit.beta[1]);

            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..1000 {
                let d: Vec<f64> = (0..3).map(|_| rng.random_range(-1e-3..1e-3)).collect();
                assert!(at <= obj(fit.gamma + d[0], fit.beta[0] + d[1], fit.beta[1] + d[2]) + 1e-14);
            }

            // Zooming grid search over (γ, β₀, β₁); the objective is convex.
            let mut center = [0.0, 0.0, 0.0];
            let mut half = 4.0;
            while half > 1e-7 {
                let mut best = (f64::INFINITY, center);
                for a in -10..=10 {
                    for b in -10..=10 {
                        for c in -10..=10 {
                            let p = [
                                center[0] + half * a as f64 / 10.0,
                                center[1] + half * b as f64 / 10.0,
                                center[2] + half * c as f64 / 10.0,
                            ];
                            let v = obj(p[0], p[1], p[2]);
                            if v < best.0 {
                                best = (v, p);
                            }
                        }
                    }
                }
                center = best.1;
                half /= 4.0;
            }
            assert!((fit.gamma - center[0]).abs() < 1e-4);
            assert!((fit.beta[0] - center[1]).abs() < 1e-4);
            assert!((fit.beta[1] - center[2]).abs() < 1e-4);
        }
    }

    fn cov_from(columns: Vec<Vec<f64>>) -> CovariateMatrix {
        let n = columns[0].len();
        let q = columns.len();
        CovariateMatrix::with_default_names(DMatrix::from_fn(n, q, |i, j| columns[j][i])).unwrap()
    }

    #[test]
    fn path_shrinks_to_empty_and_logs_monotonicity() {
        let mut violations = 0;
        for seed in 0..20 {
            let (z, y1) = logistic_data(120, 2, &[1.5, 0.0], 0.0, seed);
            let (_, y2) = logistic_data(120, 2, &[0.0, 0.0], 0.0, seed + 100);
            let (_, y3) = logistic_data(120, 2, &[0.4, 0.4], 0.0, seed + 200);
            let cov = cov_from(vec![y1, y2, y3]);
            let grid = crate::model::default_lambda_grid(120, 2, 12);
            let path = lasso_path(&z, &cov, &grid, 1e-6).unwrap();
            assert_eq!(path.len(), 12);
            assert!(path.windows(2).all(|w| w[0].lambda < w[1].lambda));
            assert_eq!(path.last().unwrap().n_selected, 0);
            for e in &path {
                assert!(e.aic.is_finite());
                // Optimality sanity: no column is worse than the zero vector.
                for j in 0..3 {
                    let y = cov.column(j);
                    let b = e.beta.column(j).into_owned();
                    let at = group_lasso_objective(&z, &y, e.lambda, 0.0, e.gamma[j], &b);
                    let zero = group_lasso_objective(&z, &y, e.lambda, 0.0, 0.0, &DVector::zeros(2));
                    assert!(at <= zero + 1e-12);
                }
            }
            violations += path.windows(2).filter(|w| w[1].n_selected > w[0].n_selected).count();
        }
        eprintln!("monotonicity violations over 20 paths: {violations}");
    }

    fn entry(lambda: f64, aic: f64, logloss: f64, n_selected: usize) -> LassoPathEntry {
        LassoPathEntry {
            lambda,
            gamma: DVector::zeros(0),
            beta: DMatrix::zeros(2, 0),
            mean_logloss_y: logloss,
            aic,
            n_selected,
            not_converged: 0,
        }
    }

    #[test]
    fn choose_lambda_rules() {
        let one = [entry(0.1, 5.0, 0.6, 2)];
        assert_eq!(choose_lambda(&one, SelectionCriterion::Aic, true).unwrap().lambda, 0.1);

        let path = [entry(0.1, 12.0, 0.5, 3), entry(0.2, 11.0, 0.55, 1), entry(0.4, 10.0, 0.7, 0)];
        assert_eq!(choose_lambda(&path, SelectionCriterion::Aic, true).unwrap().lambda, 0.2);
        assert_eq!(choose_lambda(&path, SelectionCriterion::Aic, false).unwrap().lambda, 0.4);
        assert_eq!(choose_lambda(&path, SelectionCriterion::Logloss, true).unwrap().lambda, 0.1);

        let tied = [entry(0.1, 7.0, 0.5, 1), entry(0.3, 7.0, 0.5, 1)];
        assert_eq!(choose_lambda(&tied, SelectionCriterion::Aic, true).unwrap().lambda, 0.3);

        let empty = [entry(0.1, 1.0, 0.5, 0)];
        assert!(matches!(
            choose_lambda(&empty, SelectionCriterion::Aic, true),
            Err(Error::AllEmpty)
        ));
    }

    #[test]
    fn single_delta_is_plain_refit() {
        let (z, y) = logistic_data(90, 2, &[1.0, 0.5], 0.0, 8);
        let cov = cov_from(vec![y.clone()]);
        let lambda = 0.05;
        let r = me_refine(&z, &cov, lambda, &[0.0], &DVector::zeros(1), &DMatrix::zeros(2, 1));
        let direct = group_lasso_column(&z, &y, lambda, 0.0, 0.0, &DVector::zeros(2));
        assert_eq!(r.chosen_delta, 0.0);
        assert!((r.beta.column(0) - &direct.beta).amax() < 1e-8);
    }

    #[test]
    fn larger_delta_never_lowers_in_sample_loss() {
        let (z, y) = logistic_data(90, 2, &[1.0, 0.5], 0.0, 9);
        let cov = cov_from(vec![y]);
        let r = me_refine(&z, &cov, 0.02, &[0.0, 0.1, 0.3, 0.5], &DVector::zeros(1), &DMatrix::zeros(2, 1));
        assert_eq!(r.chosen_delta, 0.0);
    }
}
