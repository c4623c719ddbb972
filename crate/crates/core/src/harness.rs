//! Method comparisons on simulated replicates and pilot-based covariate
//! screening over a batch of networks.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_joint, refit_covariate_coefficients, FitResult};
use crate::io::{load_entry, DatasetManifest, ResultRow, Stat, SummaryRow};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{
    default_delta_grid, default_lambda_grid, ActiveSet, CovariateMatrix, Hyperparams, LatentState, Network,
    OptimizerKind, SelectionCriterion, DEFAULT_ETA0, DEFAULT_LAMBDA_WEIGHT, DEFAULT_MAX_ITERS,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::selection::select_and_refit;
use crate::simgen::{generate, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Network likelihood only; covariate coefficients fitted afterwards.
    NetworkOnly,
    /// Joint fit on all covariates.
    Joint,
    /// Selection with `δ = 0`, then a joint refit.
    Lasso,
    /// Selection over the full `δ` grid, then a joint refit.
    Melasso,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::NetworkOnly, Method::Joint, Method::Lasso, Method::Melasso];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::NetworkOnly => "network_only",
            Method::Joint => "joint",
            Method::Lasso => "lasso",
            Method::Melasso => "melasso",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    LessSparse,
    Sparse,
    /// Sociability range taken from the simulation settings as given.
    Custom,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::LessSparse => "less_sparse",
            Regime::Sparse => "sparse",
            Regime::Custom => "custom",
        }
    }

    /// `base` with this regime's sociability range applied.
    pub fn apply(self, base: &SimConfig) -> SimConfig {
        let (lo, hi) = match self {
            Regime::LessSparse => (-1.0, -0.5),
            Regime::Sparse => (-2.0, -1.0),
            Regime::Custom => (base.alpha_low, base.alpha_high),
        };
        SimConfig {
            alpha_low: lo,
            alpha_high: hi,
            ..base.clone()
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "less_sparse" => Ok(Regime::LessSparse),
            "sparse" => Ok(Regime::Sparse),
            "custom" => Ok(Regime::Custom),
            _ => Err(Error::InvalidConfig(format!("unknown regime {s:?}"))),
        }
    }
}

/// Estimation settings that do not depend on the data size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub latent_dim: usize,
    pub lambda_weight: f64,
    pub eta0: f64,
    pub max_iters: usize,
    pub stop_tol: f64,
    pub stop_patience: usize,
    pub tau: f64,
    /// Size of the default `λ` grid, used unless `lambda_grid` is set.
    pub lambda_points: usize,
    pub lambda_grid: Option<Vec<f64>>,
    pub delta_grid: Vec<f64>,
    pub optimizer: OptimizerKind,
    pub selection_criterion: SelectionCriterion,
    /// Independent starts per stage-one fit; the best per-parameter loss wins.
    pub restarts: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            latent_dim: 2,
            lambda_weight: DEFAULT_LAMBDA_WEIGHT,
            eta0: DEFAULT_ETA0,
            max_iters: DEFAULT_MAX_ITERS,
            stop_tol: 1e-6,
            stop_patience: 500,
            tau: 1e-6,
            lambda_points: 20,
            lambda_grid: None,
            delta_grid: default_delta_grid(),
            optimizer: OptimizerKind::Adam,
            selection_criterion: SelectionCriterion::Aic,
            restarts: 1,
        }
    }
}

impl FitSettings {
    pub fn hyperparams(&self, n: usize, seed: u64) -> Hyperparams {
        Hyperparams {
            latent_dim: self.latent_dim,
            lambda_weight: self.lambda_weight,
            eta0: self.eta0,
            max_iters: self.max_iters,
            stop_tol: self.stop_tol,
            stop_patience: self.stop_patience,
            tau: self.tau,
            lambda_grid: self
                .lambda_grid
                .clone()
                .unwrap_or_else(|| default_lambda_grid(n, self.latent_dim, self.lambda_points)),
            delta_grid: self.delta_grid.clone(),
            optimizer: self.optimizer,
            selection_criterion: self.selection_criterion,
            seed,
        }
    }
}

/// Best of `restarts` fits from seeds derived from `hyper.seed`.
pub fn fit_with_restarts(
    net: &Network,
    cov: &CovariateMatrix,
    hyper: &Hyperparams,
    restarts: usize,
) -> Result<FitResult> {
    if restarts <= 1 {
        return fit_joint(net, cov, hyper, None);
    }
    let mut best: Option<FitResult> = None;
    for r in 0..restarts {
        let h = Hyperparams {
            seed: derive_seed(hyper.seed, r as u64),
            ..hyper.clone()
        };
        let fit = fit_joint(net, cov, &h, None)?;
        if best
            .as_ref()
            .is_none_or(|b| fit.best_loss().per_param < b.best_loss().per_param)
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("restarts > 1"))
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub report: EvalReport,
    /// Fitted state with one `β`/`γ` column per covariate; dropped columns
    /// are zero.
    pub state: LatentState,
    pub active: ActiveSet,
    pub chosen_lambda: Option<f64>,
    pub chosen_delta: Option<f64>,
    pub iterations: usize,
    pub fit: FitResult,
}

/// Runs `methods` on one data set. Joint, lasso and meLasso share their
/// stage-one fit.
pub fn run_methods(
    net: &Network,
    cov: &CovariateMatrix,
    truth: Option<&ActiveSet>,
    settings: &FitSettings,
    methods: &[Method],
    seed: u64,
) -> Result<Vec<MethodOutcome>> {
    let hyper = settings.hyperparams(net.n(), seed);
    let q = cov.q();
    let all = ActiveSet::all(q);
    let mut out = Vec::with_capacity(methods.len());

    let needs_stage1 = methods.iter().any(|m| *m != Method::NetworkOnly);
    let stage1 = if needs_stage1 {
        Some(fit_with_restarts(net, cov, &hyper, settings.restarts)?)
    } else {
        None
    };

    for &method in methods {
        let outcome = match method {
            Method::NetworkOnly => {
                let h = Hyperparams {
                    lambda_weight: 0.0,
                    ..hyper.clone()
                };
                let fit = fit_with_restarts(net, cov, &h, settings.restarts)?;
                let mut state = fit.state.clone();
                state.beta = DMatrix::zeros(state.k(), q);
                state.gamma = DVector::zeros(q);
                refit_covariate_coefficients(&state.z, cov, &mut state.beta, &mut state.gamma);
                MethodOutcome {
                    method,
                    report: evaluate(net, cov, &state, &all, truth)?,
                    state,
                    active: all.clone(),
                    chosen_lambda: None,
                    chosen_delta: None,
                    iterations: fit.iterations_run,
                    fit,
                }
            }
            Method::Joint => {
                let fit = stage1.clone().expect("stage one ran");
                MethodOutcome {
                    method,
                    report: evaluate(net, cov, &fit.state, &all, truth)?,
                    state: fit.state.clone(),
                    active: all.clone(),
                    chosen_lambda: None,
                    chosen_delta: None,
                    iterations: fit.iterations_run,
                    fit,
                }
            }
            Method::Lasso | Method::Melasso => {
                let h = if method == Method::Lasso {
                    Hyperparams {
                        delta_grid: vec![0.0],
                        ..hyper.clone()
                    }
                } else {
                    hyper.clone()
                };
                let sel = select_and_refit(net, cov, stage1.as_ref().expect("stage one ran"), &h)?;
                let state = sel.full_state(q);
                MethodOutcome {
                    method,
                    report: evaluate(net, cov, &state, &sel.active, truth)?,
                    state,
                    active: sel.active.clone(),
                    chosen_lambda: Some(sel.chosen_lambda),
                    chosen_delta: Some(sel.chosen_delta),
                    iterations: sel.final_fit.iterations_run,
                    fit: sel.final_fit,
                }
            }
        };
        out.push(outcome);
    }
    Ok(out)
}

/// Seeds for the data and the fit of replicate `r`.
pub fn replicate_seeds(master: u64, r: usize) -> (u64, u64) {
    let base = derive_seed(master, r as u64);
    (derive_seed(base, 0), derive_seed(base, 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub regime: Regime,
    /// Sizes and coefficient settings; `n_noise` and `seed` are overridden.
    pub sim: SimConfig,
    pub noise_levels: Vec<usize>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub settings: FitSettings,
    pub master_seed: u64,
}

impl StudyConfig {
    pub fn new(regime: Regime, replicates: usize, master_seed: u64) -> Self {
        StudyConfig {
            regime,
            sim: SimConfig::default(),
            noise_levels: vec![0, 10, 20],
            replicates,
            methods: Method::ALL.to_vec(),
            settings: FitSettings::default(),
            master_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub n_noise: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<ReplicateFailure>,
}

fn result_row(
    o: &MethodOutcome,
    replicate: usize,
    regime: &str,
    n_noise: usize,
    seed: u64,
) -> ResultRow {
    ResultRow {
        replicate,
        method: o.method.to_string(),
        regime: regime.to_string(),
        n_noise,
        seed,
        auc_network: o.report.auc_network,
        auc_network_per_node: o.report.auc_network_per_node,
        auc_covariates_mean: o.report.auc_covariates_mean,
        mean_logloss_a: o.report.mean_logloss_a,
        mean_logloss_y: o.report.mean_logloss_y,
        tn_rate: o.report.tn_rate,
        tp_rate: o.report.tp_rate,
        n_selected: o.active.len(),
        chosen_lambda: o.chosen_lambda,
        chosen_delta: o.chosen_delta,
        iterations: o.iterations,
    }
}

/// Replicates × noise levels × methods. Replicates run in parallel; output
/// does not depend on the number of threads.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    if cfg.replicates < 1 {
        return Err(Error::InvalidConfig("at least one replicate is required".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    let jobs: Vec<(usize, usize)> = cfg
        .noise_levels
        .iter()
        .flat_map(|&noise| (0..cfg.replicates).map(move |r| (noise, r)))
        .collect();
    let regime = cfg.regime.as_str();

    let results: Vec<std::result::Result<Vec<ResultRow>, ReplicateFailure>> = jobs
        .par_iter()
        .map(|&(n_noise, r)| {
            let (sim_seed, fit_seed) = replicate_seeds(cfg.master_seed, r);
            let sim = SimConfig {
                n_noise,
                seed: sim_seed,
                ..cfg.regime.apply(&cfg.sim)
            };
            let run = || -> Result<Vec<ResultRow>> {
                let (net, cov, truth) = generate(&sim)?;
                let outcomes = run_methods(&net, &cov, Some(&truth.active), &cfg.settings, &cfg.methods, fit_seed)?;
                Ok(outcomes
                    .iter()
                    .map(|o| result_row(o, r, regime, n_noise, sim_seed))
                    .collect())
            };
            run().map_err(|e| {
                warn!("replicate {r} with {n_noise} noise covariates failed: {e}");
                ReplicateFailure {
                    replicate: r,
                    n_noise,
                    message: e.to_string(),
                }
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(r) => rows.extend(r),
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize(&rows, &cfg.methods, &cfg.noise_levels, regime);
    Ok(StudyOutput {
        rows,
        summary,
        failures,
    })
}

/// Mean and sample standard deviation; `sd` is absent for a single value.
pub fn stat(values: &[f64]) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Some(Stat { mean, sd })
}

pub fn summarize(rows: &[ResultRow], methods: &[Method], noise_levels: &[usize], regime: &str) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &n_noise in noise_levels {
        for m in methods {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.method == m.as_str() && r.n_noise == n_noise && r.regime == regime)
                .collect();
            if group.is_empty() {
                continue;
            }
            let col = |f: &dyn Fn(&ResultRow) -> Option<f64>| -> Vec<f64> { group.iter().filter_map(|r| f(r)).collect() };
            out.push(SummaryRow {
                method: m.to_string(),
                regime: regime.to_string(),
                n_noise,
                replicates: group.len(),
                auc_covariates: stat(&col(&|r| Some(r.auc_covariates_mean))).expect("non-empty"),
                auc_network: stat(&col(&|r| Some(r.auc_network))).expect("non-empty"),
                tn_rate: stat(&col(&|r| r.tn_rate)),
                tp_rate: stat(&col(&|r| r.tp_rate)),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    pub pilot_count: usize,
    /// A covariate dropped in at least this share of pilots is a candidate
    /// for exclusion.
    pub drop_fraction: f64,
    /// A candidate is kept anyway if its prevalence falls below this in any
    /// pilot network.
    pub rare_prevalence: f64,
    pub settings: FitSettings,
    pub seed: u64,
    /// Also fit the non-pilot networks with retained and full covariates.
    pub full_phase: bool,
}

impl Default for PilotConfig {
    fn default() -> Self {
        PilotConfig {
            pilot_count: 10,
            drop_fraction: 0.7,
            rare_prevalence: 0.1,
            settings: FitSettings::default(),
            seed: 0,
            full_phase: true,
        }
    }
}

impl PilotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.drop_fraction > 0.0 && self.drop_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "drop_fraction must lie in (0, 1], got {}",
                self.drop_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.rare_prevalence) {
            return Err(Error::InvalidConfig(format!(
                "rare_prevalence must lie in [0, 1), got {}",
                self.rare_prevalence
            )));
        }
        if self.pilot_count < 1 {
            return Err(Error::InvalidConfig("pilot_count must be at least 1".into()));
        }
        Ok(())
    }
}

/// True when a covariate should not be collected in the full study.
pub fn screening_rule(
    drop_count: usize,
    pilots: usize,
    min_prevalence: f64,
    drop_fraction: f64,
    rare_prevalence: f64,
) -> bool {
    let share = drop_count as f64 / pilots as f64;
    let mostly_dropped = share >= drop_fraction - 1e-12;
    let rare = min_prevalence < rare_prevalence;
    mostly_dropped && !rare
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub pilot_ids: Vec<String>,
    pub names: Vec<String>,
    pub drop_counts: Vec<usize>,
    pub min_prevalence: Vec<f64>,
    pub excluded: Vec<usize>,
    pub retained: Vec<usize>,
    /// Share of covariates no longer collected, in percent.
    pub reduction_percent: f64,
}

/// Seeded uniform choice of `count` of `total` entries, in index order.
pub fn choose_pilots(total: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if total < count {
        return Err(Error::InsufficientNetworks {
            needed: count,
            got: total,
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut picked = sample(&mut rng, total, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Covariates meLasso keeps on one network; an empty selection is not an
/// error here.
pub fn melasso_selection(net: &Network, cov: &CovariateMatrix, settings: &FitSettings, seed: u64) -> Result<ActiveSet> {
    match run_methods(net, cov, None, settings, &[Method::Melasso], seed) {
        Ok(mut out) => Ok(out.remove(0).active),
        Err(Error::AllEmpty) => ActiveSet::new(vec![], settings.tau, cov.q()),
        Err(e) => Err(e),
    }
}

/// Runs meLasso on every pilot network and applies [`screening_rule`].
pub fn screen(pilots: &[(String, Network, CovariateMatrix)], cfg: &PilotConfig) -> Result<ScreeningReport> {
    screen_with(pilots, cfg, |p, net, cov| {
        melasso_selection(net, cov, &cfg.settings, derive_seed(cfg.seed, p as u64))
    })
}

/// [`screen`] with a custom per-network selection. `select` receives the
/// pilot's position, its network and its covariates.
pub fn screen_with<F>(pilots: &[(String, Network, CovariateMatrix)], cfg: &PilotConfig, select: F) -> Result<ScreeningReport>
where
    F: Fn(usize, &Network, &CovariateMatrix) -> Result<ActiveSet> + Sync,
{
    cfg.validate()?;
    let Some((_, _, first)) = pilots.first() else {
        return Err(Error::InsufficientNetworks { needed: 1, got: 0 });
    };
    let names = first.names().to_vec();
    if let Some((id, _, _)) = pilots.iter().find(|(_, _, c)| c.names() != names.as_slice()) {
        return Err(Error::InvalidConfig(format!("network {id} has different covariate columns")));
    }
    let q = names.len();

    let kept: Vec<Result<ActiveSet>> = pilots
        .par_iter()
        .enumerate()
        .map(|(p, (id, net, cov))| {
            let active = select(p, net, cov)?;
            if active.is_empty() {
                info!("pilot {id}: every covariate dropped");
            }
            Ok(active)
        })
        .collect();

    let mut drop_counts = vec![0; q];
    let mut min_prevalence = vec![f64::INFINITY; q];
    for ((_, _, cov), active) in pilots.iter().zip(kept) {
        let active = active?;
        for j in 0..q {
            if !active.contains(j) {
                drop_counts[j] += 1;
            }
            min_prevalence[j] = min_prevalence[j].min(cov.prevalence(j));
        }
    }
    let (excluded, retained): (Vec<usize>, Vec<usize>) = (0..q).partition(|&j| {
        screening_rule(drop_counts[j], pilots.len(), min_prevalence[j], cfg.drop_fraction, cfg.rare_prevalence)
    });
    let reduction_percent = if q == 0 {
        0.0
    } else {
        100.0 * excluded.len() as f64 / q as f64
    };
    Ok(ScreeningReport {
        pilot_ids: pilots.iter().map(|(id, _, _)| id.clone()).collect(),
        names,
        drop_counts,
        min_prevalence,
        excluded,
        retained,
        reduction_percent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullPhaseEntry {
    pub id: String,
    /// Joint fit on the retained covariates.
    pub retained: EvalReport,
    /// Joint fit on every covariate.
    pub full: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotReport {
    pub screening: ScreeningReport,
    pub full_phase: Vec<FullPhaseEntry>,
}

pub fn run_pilot(manifest: &DatasetManifest, cfg: &PilotConfig) -> Result<PilotReport> {
    run_pilot_with(manifest, cfg, |p, net, cov| {
        melasso_selection(net, cov, &cfg.settings, derive_seed(cfg.seed, p as u64))
    })
}

/// [`run_pilot`] with a custom per-network selection, as in [`screen_with`].
pub fn run_pilot_with<F>(manifest: &DatasetManifest, cfg: &PilotConfig, select: F) -> Result<PilotReport>
where
    F: Fn(usize, &Network, &CovariateMatrix) -> Result<ActiveSet> + Sync,
{
    cfg.validate()?;
    let total = manifest.entries.len();
    let picked = choose_pilots(total, cfg.pilot_count, cfg.seed)?;
    let load = |i: usize| -> Result<(String, Network, CovariateMatrix)> {
        let e = &manifest.entries[i];
        let (net, cov) = load_entry(e)?;
        Ok((e.id.clone(), net, cov))
    };
    let pilots = picked.iter().map(|&i| load(i)).collect::<Result<Vec<_>>>()?;
    let screening = screen_with(&pilots, cfg, select)?;

    let mut full_phase = Vec::new();
    if cfg.full_phase && !screening.retained.is_empty() {
        let rest: Vec<usize> = (0..total).filter(|i| !picked.contains(i)).collect();
        full_phase = rest
            .par_iter()
            .map(|&i| -> Result<FullPhaseEntry> {
                let (id, net, cov) = load(i)?;
                let seed = derive_seed(cfg.seed ^ 0x5eed, i as u64);
                let hyper = cfg.settings.hyperparams(net.n(), seed);
                let kept = cov.select_columns(&screening.retained)?;
                let all_kept = ActiveSet::all(kept.q());
                let fit = fit_with_restarts(&net, &kept, &hyper, cfg.settings.restarts)?;
                let retained = evaluate(&net, &kept, &fit.state, &all_kept, None)?;
                let fit = fit_with_restarts(&net, &cov, &hyper, cfg.settings.restarts)?;
                let full = evaluate(&net, &cov, &fit.state, &ActiveSet::all(cov.q()), None)?;
                Ok(FullPhaseEntry { id, retained, full })
            })
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(PilotReport { screening, full_phase })
}
