//! Core data types and the identifiability projections.
//!
//! A fitted model is identified only up to a translation of the latent
//! positions, a shift of the sociability vector and an orthogonal rotation of
//! the latent space. [`center_columns`] and [`center_alpha`] remove the first
//! two; [`diagonalize_covariance`] fixes the rotation so that `(1/n) ZᵀZ` is
//! diagonal with nonincreasing entries.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An undirected, unweighted network without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    adjacency: DMatrix<f64>,
    node_ids: Option<Vec<String>>,
}

impl Network {
    /// Wraps a symmetric 0/1 adjacency matrix with an all-zero diagonal.
    pub fn new(adjacency: DMatrix<f64>) -> Result<Self> {
        check_adjacency(&adjacency)?;
        Ok(Network {
            adjacency,
            node_ids: None,
        })
    }

    /// Builds a network on `n` nodes from undirected edges. Duplicate edges
    /// collapse; self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::SelfLoopPresent(i));
            }
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
        Network::new(adjacency)
    }

    pub fn with_node_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} node ids for {} nodes",
                ids.len(),
                self.n()
            )));
        }
        check_unique(&ids)?;
        self.node_ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn node_ids(&self) -> Option<&[String]> {
        self.node_ids.as_deref()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[(i, j)] != 0.0
    }

    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.has_edge(i, j))
            .count()
    }

    /// Fraction of the `n(n-1)/2` possible edges that are present.
    pub fn density(&self) -> f64 {
        let n = self.n() as f64;
        self.edge_count() as f64 / (n * (n - 1.0) / 2.0)
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| self.adjacency.row(i).iter().filter(|&&a| a != 0.0).count())
            .collect()
    }
}

fn check_adjacency(a: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "adjacency is {}x{}, expected square",
            n,
            a.ncols()
        )));
    }
    if n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "a network needs at least 2 nodes, got {n}"
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryEntry {
                    row: i,
                    col: j,
                    value: v.to_string(),
                });
            }
        }
    }
    for i in 0..n {
        if a[(i, i)] != 0.0 {
            return Err(Error::SelfLoopPresent(i));
        }
        for j in i + 1..n {
            if a[(i, j)] != a[(j, i)] {
                return Err(Error::AsymmetricAdjacency { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(names.len());
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateName(name.clone()));
        }
    }
    Ok(())
}

/// Binary node attributes, one row per node and one named column per
/// covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    values: DMatrix<f64>,
    names: Vec<String>,
}

impl CovariateMatrix {
    pub fn new(values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} covariate columns",
                names.len(),
                values.ncols()
            )));
        }
        check_unique(&names)?;
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                let v = values[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::NonBinaryEntry {
                        row: i,
                        col: j,
                        value: v.to_string(),
                    });
                }
            }
        }
        Ok(CovariateMatrix { values, names })
    }

    /// Columns are named `y0`, `y1`, ...
    pub fn with_default_names(values: DMatrix<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|j| format!("y{j}")).collect();
        CovariateMatrix::new(values, names)
    }

    /// A matrix with `n` rows and no columns.
    pub fn empty(n: usize) -> Self {
        CovariateMatrix {
            values: DMatrix::zeros(n, 0),
            names: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    /// Mean of column `j`.
    pub fn prevalence(&self, j: usize) -> f64 {
        self.values.column(j).sum() / self.n() as f64
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.q()) {
            return Err(Error::DimensionMismatch(format!(
                "column {bad} out of range for {} covariates",
                self.q()
            )));
        }
        let values = self.values.select_columns(columns);
        let names = columns.iter().map(|&j| self.names[j].clone()).collect();
        CovariateMatrix::new(values, names)
    }
}

/// Checks that a network and covariate matrix describe the same nodes.
pub fn validate_pair(net: &Network, cov: &CovariateMatrix) -> Result<()> {
    check_adjacency(net.adjacency())?;
    if cov.n() != net.n() {
        return Err(Error::DimensionMismatch(format!(
            "network has {} nodes but covariates have {} rows",
            net.n(),
            cov.n()
        )));
    }
    // Re-run the covariate checks; the constructor already did, this keeps
    // the pair check self-contained.
    CovariateMatrix::new(cov.values().clone(), cov.names().to_vec())?;
    Ok(())
}

/// Model parameters: latent positions `z` (n×k), sociability `alpha` (n),
/// covariate coefficients `beta` (k×q) and intercepts `gamma` (q).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: DVector<f64>,
}

impl LatentState {
    pub fn zeros(n: usize, k: usize, q: usize) -> Self {
        LatentState {
            z: DMatrix::zeros(n, k),
            alpha: DVector::zeros(n),
            beta: DMatrix::zeros(k, q),
            gamma: DVector::zeros(q),
        }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn q(&self) -> usize {
        self.gamma.len()
    }

    /// Shape and finiteness checks against an `(n, q)` data pair.
    pub fn check(&self, n: usize, q: usize) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(Error::DimensionMismatch("latent dimension must be >= 1".into()));
        }
        if self.z.nrows() != n || self.alpha.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "state has {} latent rows and {} sociability entries, data has {n} nodes",
                self.z.nrows(),
                self.alpha.len()
            )));
        }
        if self.beta.nrows() != k || self.beta.ncols() != q || self.gamma.len() != q {
            return Err(Error::DimensionMismatch(format!(
                "state coefficients are {}x{} with {} intercepts, expected {k}x{q}",
                self.beta.nrows(),
                self.beta.ncols(),
                self.gamma.len()
            )));
        }
        let finite = self.z.iter().all(|v| v.is_finite())
            && self.alpha.iter().all(|v| v.is_finite())
            && self.beta.iter().all(|v| v.is_finite())
            && self.gamma.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("latent state"));
        }
        Ok(())
    }

    /// Column `j` of `beta`.
    pub fn beta_column(&self, j: usize) -> DVector<f64> {
        self.beta.column(j).into_owned()
    }
}

/// Selected covariate columns, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    indices: Vec<usize>,
    threshold_used: f64,
}

impl ActiveSet {
    pub fn new(indices: Vec<usize>, threshold_used: f64, q: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidActiveSet(format!(
                "indices must be strictly increasing: {indices:?}"
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= q {
                return Err(Error::InvalidActiveSet(format!(
                    "index {last} out of range for {q} covariates"
                )));
            }
        }
        Ok(ActiveSet {
            indices,
            threshold_used,
        })
    }

    /// Every column of a `q`-column matrix.
    pub fn all(q: usize) -> Self {
        ActiveSet {
            indices: (0..q).collect(),
            threshold_used: 0.0,
        }
    }

    /// Columns of `beta` whose Euclidean norm exceeds `tau`.
    pub fn from_coefficients(beta: &DMatrix<f64>, tau: f64) -> Self {
        let indices = (0..beta.ncols())
            .filter(|&j| beta.column(j).norm() > tau)
            .collect();
        ActiveSet {
            indices,
            threshold_used: tau,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn threshold_used(&self) -> f64 {
        self.threshold_used
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    /// Columns of `0..q` not in the set.
    pub fn complement(&self, q: usize) -> Vec<usize> {
        (0..q).filter(|&j| !self.contains(j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Adagrad,
}

/// How the lasso penalty is picked from the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionCriterion {
    /// Smallest AIC among entries that keep at least one covariate.
    #[default]
    Aic,
    /// Smallest mean covariate log-loss among the same entries.
    Logloss,
}

/// Default initial global step size.
pub const DEFAULT_ETA0: f64 = 5.0;
/// Default number of outer iterations.
pub const DEFAULT_MAX_ITERS: usize = 2000;
/// Default network/covariate weight.
pub const DEFAULT_LAMBDA_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub latent_dim: usize,
    /// Weight on the covariate log-likelihood in the joint objective.
    pub lambda_weight: f64,
    pub eta0: f64,
    pub max_iters: usize,
    pub stop_tol: f64,
    pub stop_patience: usize,
    /// Coefficient-norm threshold for calling a covariate selected.
    pub tau: f64,
    pub lambda_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub optimizer: OptimizerKind,
    pub selection_criterion: SelectionCriterion,
    pub seed: u64,
}

impl Hyperparams {
    /// Defaults for a network on `n` nodes with a `k`-dimensional latent
    /// space.
    pub fn defaults(n: usize, k: usize) -> Self {
        Hyperparams {
            latent_dim: k,
            lambda_weight: DEFAULT_LAMBDA_WEIGHT,
            eta0: DEFAULT_ETA0,
            max_iters: DEFAULT_MAX_ITERS,
            stop_tol: 1e-6,
            stop_patience: 500,
            tau: 1e-6,
            lambda_grid: default_lambda_grid(n, k, 20),
            delta_grid: default_delta_grid(),
            optimizer: OptimizerKind::Adam,
            selection_criterion: SelectionCriterion::Aic,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparams(msg));
        if self.latent_dim < 1 {
            return bad("latent_dim must be >= 1".into());
        }
        if !(self.lambda_weight >= 0.0 && self.lambda_weight.is_finite()) {
            return bad(format!("lambda_weight must be >= 0, got {}", self.lambda_weight));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return bad(format!("eta0 must be > 0, got {}", self.eta0));
        }
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1".into());
        }
        if self.stop_patience < 1 {
            return bad("stop_patience must be >= 1".into());
        }
        if self.stop_tol.is_nan() || self.stop_tol < 0.0 || self.tau.is_nan() || self.tau < 0.0 {
            return bad("stop_tol and tau must be >= 0".into());
        }
        if self.lambda_grid.is_empty() || self.delta_grid.is_empty() {
            return bad("lambda and delta grids must be non-empty".into());
        }
        if !is_sorted(&self.lambda_grid) || !is_sorted(&self.delta_grid) {
            return bad("grids must be sorted ascending".into());
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("lambda grid values must be positive".into());
        }
        if self.delta_grid.iter().any(|&d| !(0.0..=0.5).contains(&d)) {
            return bad("delta grid values must lie in [0, 0.5]".into());
        }
        Ok(())
    }
}

fn is_sorted(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

/// `points` log-spaced values over `[0.01·√(k/n), 10·√(k/n)]`, with
/// `√(k/n)` itself always on the grid. Sorted ascending.
pub fn default_lambda_grid(n: usize, k: usize, points: usize) -> Vec<f64> {
    let anchor = (k as f64 / n as f64).sqrt();
    let (lo, hi) = ((0.01 * anchor).ln(), (10.0 * anchor).ln());
    let mut grid: Vec<f64> = if points <= 1 {
        vec![anchor]
    } else {
        (0..points)
            .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
            .collect()
    };
    // Replace the closest point by the anchor so the grid size is stable.
    let closest = grid
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1.ln() - anchor.ln())
                .abs()
                .total_cmp(&(b.1.ln() - anchor.ln()).abs())
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    grid[closest] = anchor;
    grid.sort_by(f64::total_cmp);
    grid
}

/// `{0, 0.05, ..., 0.5}`.
pub fn default_delta_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 * 0.05).collect()
}

/// `J·Z` with `J = I − 11ᵀ/n`: subtracts each column's mean.
pub fn center_columns(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    center_columns_in_place(&mut out);
    out
}

pub(crate) fn center_columns_in_place(z: &mut DMatrix<f64>) {
    let n = z.nrows();
    if n == 0 {
        return;
    }
    for mut col in z.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
}

pub fn center_alpha(alpha: &DVector<f64>) -> DVector<f64> {
    let mut out = alpha.clone();
    center_alpha_in_place(&mut out);
    out
}

pub(crate) fn center_alpha_in_place(alpha: &mut DVector<f64>) {
    if alpha.is_empty() {
        return;
    }
    let mean = alpha.mean();
    alpha.add_scalar_mut(-mean);
}

/// Output of [`diagonalize_covariance`].
#[derive(Debug, Clone)]
pub struct Diagonalized {
    pub z: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    /// Orthogonal `Q` with `z = Z·Q` and `beta = Qᵀ·β`.
    pub rotation: DMatrix<f64>,
    /// Diagonal of `(1/n)·zᵀz`, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// `ZᵀZ` was rank deficient; the rotation is still a full eigenbasis.
    pub degenerate: bool,
}

/// Rotates the latent space so that `(1/n)·ZᵀZ` is diagonal with
/// nonincreasing entries. `β` is counter-rotated so `Z·β` is unchanged.
///
/// Each eigenvector is signed so its largest-magnitude entry is positive.
pub fn diagonalize_covariance(z: &DMatrix<f64>, beta: &DMatrix<f64>) -> Diagonalized {
    let n = z.nrows().max(1) as f64;
    let k = z.ncols();
    let cov = (z.transpose() * z) / n;
    let cov = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut rotation = DMatrix::zeros(k, k);
    let mut eigenvalues = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        let mut pivot = 0;
        for r in 1..k {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        rotation.set_column(dst, &v);
        eigenvalues.push(eig.eigenvalues[src]);
    }

    let top = eigenvalues.first().copied().unwrap_or(0.0).abs();
    let degenerate = eigenvalues
        .iter()
        .any(|&e| e <= 1e-12 * top.max(f64::MIN_POSITIVE));

    let z_rot = z * &rotation;
    let beta_rot = rotation.transpose() * beta;
    Diagonalized {
        z: z_rot,
        beta: beta_rot,
        rotation,
        eigenvalues,
        degenerate,
    }
}
