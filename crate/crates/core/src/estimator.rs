//! The joint fitting loop.
//!
//! Each outer iteration takes one optimizer step on `(Z, α)`, re-centers both,
//! and then refits every covariate column `(γ_j, β_·j)` by a ridge-guarded
//! logistic regression of `Y_·j` on the current `Z`. The iterate with the
//! smallest per-parameter loss is kept and rotated to a diagonal latent
//! covariance before it is returned.

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    center_alpha_in_place, center_columns_in_place, diagonalize_covariance, validate_pair,
    CovariateMatrix, Hyperparams, LatentState, Network,
};
use crate::objective::{loss_and_gradients, softplus, LossBreakdown};
use crate::optim::{apply_step_in_place, cosine_anneal, step_sizes, OptimizerState};
use crate::rng::rng_from_seed;

/// Ridge on the inner logistic fits. Keeps separable columns finite.
pub const INNER_RIDGE: f64 = 1e-6;

const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITERS: usize = 25;
const FALLBACK_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub gamma: f64,
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The Hessian could not be factored and plain gradient steps were used.
    pub fallback_used: bool,
}

/// Ridge-penalized logistic regression of `y` on `[1, Z]`, started from zero.
pub fn inner_logistic_fit(z: &DMatrix<f64>, y: &[f64], ridge: f64) -> LogisticFit {
    inner_logistic_fit_from(z, y, ridge, 0.0, &DVector::zeros(z.ncols()))
}

/// As [`inner_logistic_fit`], warm-started at `(gamma0, beta0)`.
pub fn inner_logistic_fit_from(
    z: &DMatrix<f64>,
    y: &[f64],
    ridge: f64,
    gamma0: f64,
    beta0: &DVector<f64>,
) -> LogisticFit {
    let fit = LogisticProblem { z, y, ridge };
    let mut theta = DVector::zeros(z.ncols() + 1);
    theta[0] = gamma0;
    theta.rows_mut(1, z.ncols()).copy_from(beta0);
    if !fit.objective(&theta).is_finite() {
        theta.fill(0.0);
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut fallback_used = false;
    while iterations < NEWTON_MAX_ITERS {
        let (g, h) = fit.gradient_hessian(&theta);
        if g.norm() <= NEWTON_TOL {
            converged = true;
            break;
        }
        let Some(chol) = Cholesky::new(h) else {
            fallback_used = true;
            break;
        };
        let direction = chol.solve(&g);
        let f0 = fit.objective(&theta);
        // Near the optimum the decrease drops below the rounding error of f.
        let slack = 1e-12 * f0.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &theta - &direction * step;
            if fit.objective(&candidate) <= f0 + slack {
                theta = candidate;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    if !converged && !fallback_used {
        converged = fit.gradient_hessian(&theta).0.norm() <= NEWTON_TOL;
    }

    if fallback_used {
        // 1/L with L bounding the largest Hessian eigenvalue.
        let lipschitz = 0.25 * (z.norm_squared() + y.len() as f64) + ridge;
        let lr = 1.0 / lipschitz.max(f64::MIN_POSITIVE);
        for _ in 0..FALLBACK_STEPS {
            let g = fit.gradient(&theta);
            theta -= g * lr;
            iterations += 1;
        }
        converged = false;
    }

    LogisticFit {
        gamma: theta[0],
        beta: theta.rows(1, z.ncols()).into_owned(),
        iterations,
        converged,
        fallback_used,
    }
}

struct LogisticProblem<'a> {
    z: &'a DMatrix<f64>,
    y: &'a [f64],
    ridge: f64,
}

impl LogisticProblem<'_> {
    fn logit(&self, theta: &DVector<f64>, i: usize) -> f64 {
        let mut t = theta[0];
        for d in 0..self.z.ncols() {
            t += self.z[(i, d)] * theta[d + 1];
        }
        t
    }

    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let nll: f64 = (0..self.y.len())
            .map(|i| {
                let t = self.logit(theta, i);
                softplus(t) - self.y[i] * t
            })
            .sum();
        nll + 0.5 * self.ridge * theta.norm_squared()
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let k = self.z.ncols();
        let mut g = theta * self.ridge;
        for i in 0..self.y.len() {
            let r = crate::objective::sigmoid(self.logit(theta, i)) - self.y[i];
            g[0] += r;
            for d in 0..k {
                g[d + 1] += r * self.z[(i, d)];
            }
        }
        g
    }

    fn gradient_hessian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.z.ncols();
        let mut g = theta * self.ridge;
        let mut h = DMatrix::identity(k + 1, k + 1) * self.ridge;
        let mut x = vec![1.0; k + 1];
        for i in 0..self.y.len() {
            for d in 0..k {
                x[d + 1] = self.z[(i, d)];
            }
            let p = crate::objective::sigmoid(self.logit(theta, i));
            let r = p - self.y[i];
            let w = p * (1.0 - p);
            for a in 0..=k {
                g[a] += r * x[a];
                for b in 0..=a {
                    h[(a, b)] += w * x[a] * x[b];
                }
            }
        }
        for a in 0..=k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        (g, h)
    }
}

/// Refits `(β, γ)` column by column on `z`, warm-started from `beta0`/`gamma0`.
/// Returns the number of columns that needed the gradient fallback.
pub fn refit_covariate_coefficients(
    z: &DMatrix<f64>,
    cov: &CovariateMatrix,
    beta: &mut DMatrix<f64>,
    gamma: &mut DVector<f64>,
) -> usize {
    let mut fallbacks = 0;
    for j in 0..cov.q() {
        let y = cov.column(j);
        let b0 = beta.column(j).into_owned();
        let fit = inner_logistic_fit_from(z, &y, INNER_RIDGE, gamma[j], &b0);
        if fit.fallback_used {
            fallbacks += 1;
        }
        beta.set_column(j, &fit.beta);
        gamma[j] = fit.gamma;
    }
    fallbacks
}

/// Random starting point: `Z ~ N(0, 1)` and `α ~ U(−1, 1)`, both centered,
/// with `(β, γ)` fitted to `Z`.
pub fn initialize(net: &Network, cov: &CovariateMatrix, k: usize, seed: u64) -> LatentState {
    let n = net.n();
    let mut rng = rng_from_seed(seed);
    let mut z = DMatrix::zeros(n, k);
    for i in 0..n {
        for d in 0..k {
            z[(i, d)] = StandardNormal.sample(&mut rng);
        }
    }
    let mut alpha = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    center_columns_in_place(&mut z);
    center_alpha_in_place(&mut alpha);

    let mut beta = DMatrix::zeros(k, cov.q());
    let mut gamma = DVector::zeros(cov.q());
    refit_covariate_coefficients(&z, cov, &mut beta, &mut gamma);
    LatentState {
        z,
        alpha,
        beta,
        gamma,
    }
}

/// Tracks how long both mean losses have stayed flat.
#[derive(Debug, Clone)]
pub struct StopMonitor {
    tol: f64,
    patience: usize,
    previous: Option<(f64, f64)>,
    flat_for: usize,
}

impl StopMonitor {
    pub fn new(tol: f64, patience: usize) -> Self {
        StopMonitor {
            tol,
            patience,
            previous: None,
            flat_for: 0,
        }
    }

    /// Feeds the mean network and covariate losses of one iteration; returns
    /// true once both have changed by at most `tol` for `patience`
    /// consecutive iterations.
    pub fn update(&mut self, mean_a: f64, mean_y: f64) -> bool {
        if let Some((pa, py)) = self.previous {
            if (mean_a - pa).abs() <= self.tol && (mean_y - py).abs() <= self.tol {
                self.flat_for += 1;
            } else {
                self.flat_for = 0;
            }
        }
        self.previous = Some((mean_a, mean_y));
        self.flat_for >= self.patience
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Best iterate, rotated so its latent covariance is diagonal.
    pub state: LatentState,
    pub trace: Vec<LossBreakdown>,
    pub iterations_run: usize,
    pub stopped_early: bool,
    /// Index into `trace` of the returned iterate.
    pub best_iteration: usize,
    /// The latent covariance of the returned state is rank deficient.
    pub degenerate: bool,
    /// Inner fits that fell back to gradient steps, summed over iterations.
    pub fallbacks: usize,
}

impl FitResult {
    pub fn best_loss(&self) -> &LossBreakdown {
        &self.trace[self.best_iteration]
    }
}

pub fn fit_joint(
    net: &Network,
    cov: &CovariateMatrix,
    hyper: &Hyperparams,
    init: Option<&LatentState>,
) -> Result<FitResult> {
    fit_joint_with_progress(net, cov, hyper, init, |_, _| {})
}

/// [`fit_joint`] with a callback receiving `(iteration, losses)` after every
/// iteration. Iterations are numbered from 1.
pub fn fit_joint_with_progress<F>(
    net: &Network,
    cov: &CovariateMatrix,
    hyper: &Hyperparams,
    init: Option<&LatentState>,
    mut progress: F,
) -> Result<FitResult>
where
    F: FnMut(usize, &LossBreakdown),
{
    validate_pair(net, cov)?;
    hyper.validate()?;
    let n = net.n();
    let q = cov.q();
    let k = hyper.latent_dim;

    let mut state = match init {
        Some(s) => {
            s.check(n, q)?;
            if s.k() != k {
                return Err(Error::DimensionMismatch(format!(
                    "initial state has k = {}, hyperparameters say {k}",
                    s.k()
                )));
            }
            let mut s = s.clone();
            center_columns_in_place(&mut s.z);
            center_alpha_in_place(&mut s.alpha);
            s
        }
        None => initialize(net, cov, k, hyper.seed),
    };

    let pairs = (n * (n - 1) / 2) as f64;
    let cells = (n * q) as f64;
    let mut opt = OptimizerState::new(hyper.optimizer, n, k);
    let mut monitor = StopMonitor::new(hyper.stop_tol, hyper.stop_patience);
    let mut trace = Vec::with_capacity(hyper.max_iters.min(10_000));
    let mut best: Option<(usize, LatentState)> = None;
    let mut best_loss = f64::INFINITY;
    let mut fallbacks = 0;
    let mut stopped_early = false;

    // Gradients at the current state; refreshed together with the loss.
    let (_, mut grads) = loss_and_gradients(net, cov, &state, hyper.lambda_weight);
    for t in 1..=hyper.max_iters {
        let eta_t = cosine_anneal(hyper.eta0, t - 1, hyper.max_iters);
        let sizes = step_sizes(eta_t, &state.z, n);
        apply_step_in_place(&mut state, &grads, &mut opt, &sizes);
        center_columns_in_place(&mut state.z);
        center_alpha_in_place(&mut state.alpha);
        fallbacks += refit_covariate_coefficients(&state.z, cov, &mut state.beta, &mut state.gamma);

        let (loss, next_grads) = loss_and_gradients(net, cov, &state, hyper.lambda_weight);
        grads = next_grads;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: t });
        }
        trace.push(loss);
        progress(t, &loss);

        if loss.per_param < best_loss {
            best_loss = loss.per_param;
            best = Some((t - 1, state.clone()));
        }

        let mean_y = if q == 0 { 0.0 } else { loss.loss_y / cells };
        if monitor.update(loss.loss_a / pairs, mean_y) {
            stopped_early = true;
            debug!("stopped early after {t} iterations");
            break;
        }
    }

    let (best_iteration, best_state) = best.expect("at least one iteration runs");
    let rotated = diagonalize_covariance(&best_state.z, &best_state.beta);
    if rotated.degenerate {
        warn!("fitted latent positions are rank deficient");
    }
    if fallbacks > 0 {
        debug!("{fallbacks} inner logistic fits used the gradient fallback");
    }
    Ok(FitResult {
        state: LatentState {
            z: rotated.z,
            beta: rotated.beta,
            ..best_state
        },
        iterations_run: trace.len(),
        trace,
        stopped_early,
        best_iteration,
        degenerate: rotated.degenerate,
        fallbacks,
    })
}
