//! Synthetic networks with clustered latent positions and binary covariates.
//!
//! Random draws happen in a fixed order from one seeded stream: cluster
//! shuffle, cluster centers, latent positions, covariate coefficients,
//! sociability, edges (row-major over the upper triangle), covariates
//! (row-major).

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{center_columns_in_place, diagonalize_covariance, ActiveSet, CovariateMatrix, Network};
use crate::objective::sigmoid;
use crate::rng::rng_from_seed;

/// How `beta_spread` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadKind {
    #[default]
    Variance,
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub q: usize,
    pub k: usize,
    /// Trailing covariate columns with zero coefficients.
    pub n_noise: usize,
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub beta_mean: f64,
    pub beta_spread: f64,
    pub spread_kind: SpreadKind,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::less_sparse(0, 0)
    }
}

impl SimConfig {
    /// Sociability in `(−1, −0.5)`.
    pub fn less_sparse(n_noise: usize, seed: u64) -> Self {
        SimConfig {
            n: 200,
            q: 25,
            k: 2,
            n_noise,
            alpha_low: -1.0,
            alpha_high: -0.5,
            beta_mean: 1.0,
            beta_spread: 0.1,
            spread_kind: SpreadKind::Variance,
            seed,
        }
    }

    /// Sociability in `(−2, −1)`.
    pub fn sparse(n_noise: usize, seed: u64) -> Self {
        SimConfig {
            alpha_low: -2.0,
            alpha_high: -1.0,
            ..SimConfig::less_sparse(n_noise, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.n_noise > self.q {
            return bad(format!("n_noise = {} exceeds q = {}", self.n_noise, self.q));
        }
        if !self.alpha_low.is_finite() || !self.alpha_high.is_finite() || self.alpha_low > self.alpha_high {
            return bad(format!("bad sociability range ({}, {})", self.alpha_low, self.alpha_high));
        }
        if self.beta_spread.is_nan() || self.beta_spread < 0.0 || !self.beta_mean.is_finite() {
            return bad("beta_spread must be >= 0 and beta_mean finite".into());
        }
        Ok(())
    }

    fn beta_sd(&self) -> f64 {
        match self.spread_kind {
            SpreadKind::Variance => self.beta_spread.sqrt(),
            SpreadKind::StdDev => self.beta_spread,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub z: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub active: ActiveSet,
    pub clusters: Vec<usize>,
}

pub fn generate(cfg: &SimConfig) -> Result<(Network, CovariateMatrix, SimTruth)> {
    cfg.validate()?;
    let SimConfig { n, q, k, .. } = *cfg;
    let mut rng = rng_from_seed(cfg.seed);

    let mut clusters: Vec<usize> = (0..n).map(|i| i % k).collect();
    clusters.shuffle(&mut rng);
    let centers = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));

    let mut z = DMatrix::zeros(n, k);
    for i in 0..n {
        for d in 0..k {
            let e: f64 = StandardNormal.sample(&mut rng);
            z[(i, d)] = centers[(clusters[i], d)] + e;
        }
    }
    center_columns_in_place(&mut z);
    // ‖ZZᵀ‖_F = ‖ZᵀZ‖_F, and scaling Z by s scales it by s².
    let gram = (z.transpose() * &z).norm();
    if gram > 0.0 {
        z *= (n as f64 / gram).sqrt();
    }
    let z = diagonalize_covariance(&z, &DMatrix::zeros(k, 0)).z;

    let n_active = q - cfg.n_noise;
    let normal = Normal::new(cfg.beta_mean, cfg.beta_sd()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut beta = DMatrix::zeros(k, q);
    for j in 0..n_active {
        for d in 0..k {
            beta[(d, j)] = normal.sample(&mut rng);
        }
    }
    let alpha = DVector::from_fn(n, |_, _| {
        if cfg.alpha_low < cfg.alpha_high {
            rng.random_range(cfg.alpha_low..cfg.alpha_high)
        } else {
            cfg.alpha_low
        }
    });
    let gamma = DVector::zeros(q);

    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let theta = alpha[i] + alpha[j] + z.row(i).dot(&z.row(j));
            if rng.random_bool(sigmoid(theta)) {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
    }
    let theta_y = &z * &beta;
    let mut y = DMatrix::zeros(n, q);
    for i in 0..n {
        for j in 0..q {
            if rng.random_bool(sigmoid(theta_y[(i, j)] + gamma[j])) {
                y[(i, j)] = 1.0;
            }
        }
    }

    let truth = SimTruth {
        z,
        alpha,
        beta,
        gamma,
        active: ActiveSet::new((0..n_active).collect(), 0.0, q)?,
        clusters,
    };
    Ok((Network::new(a)?, CovariateMatrix::with_default_names(y)?, truth))
}
