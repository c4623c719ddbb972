//! Command-line front end: simulate, fit, replicate, pilot, evaluate.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use jlsm::harness::{
    replicate_seeds, run_methods, run_pilot, run_study, FitSettings, Method, PilotConfig, Regime, StudyConfig,
};
use jlsm::io::{
    check_snapshot_data, data_checksum, export_results, export_summary, export_trace, load_pair, read_manifest,
    read_snapshot, write_adjacency, write_covariates, write_json, write_snapshot, DatasetManifest, ManifestEntry,
    ModelSnapshot, NetworkFormat, Provenance, Stage, StateRecord,
};
use jlsm::metrics::evaluate;
use jlsm::model::{ActiveSet, LatentState, OptimizerKind, SelectionCriterion};
use jlsm::simgen::{generate, SimConfig, SpreadKind};
use jlsm::Error;

pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    Config(String),
}

impl std::error::Error for CliError {}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lib(e) if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "jlsm", version, about = "Joint latent space models for networks with node covariates")]
pub struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// File of `key = value` lines setting any long flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "JLSM_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write simulated networks, covariates and ground truth.
    Simulate(SimulateArgs),
    /// Fit one network and its covariates.
    Fit(FitArgs),
    /// Run a simulation study over replicates, noise levels and methods.
    Replicate(ReplicateArgs),
    /// Screen covariates on pilot networks from a manifest.
    Pilot(PilotArgs),
    /// Recompute metrics for a saved snapshot.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    LessSparse,
    Sparse,
    Custom,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::LessSparse => Regime::LessSparse,
            RegimeArg::Sparse => Regime::Sparse,
            RegimeArg::Custom => Regime::Custom,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    NetworkOnly,
    Joint,
    Lasso,
    Melasso,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::NetworkOnly => Method::NetworkOnly,
            MethodArg::Joint => Method::Joint,
            MethodArg::Lasso => Method::Lasso,
            MethodArg::Melasso => Method::Melasso,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Adagrad,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    Aic,
    Logloss,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Edgelist,
    Adjacency,
}

impl From<FormatArg> for NetworkFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Edgelist => NetworkFormat::Edgelist,
            FormatArg::Adjacency => NetworkFormat::Adjacency,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpreadArg {
    Variance,
    StdDev,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, value_enum, default_value = "less-sparse")]
    pub regime: RegimeArg,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 25)]
    pub q: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Sociability range, used with `--regime custom`.
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub alpha_low: f64,
    #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
    pub alpha_high: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub beta_mean: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta_spread: f64,
    #[arg(long, value_enum, default_value = "variance")]
    pub spread_kind: SpreadArg,
}

impl SimArgs {
    fn config(&self, n_noise: usize, seed: u64) -> SimConfig {
        let base = SimConfig {
            n: self.n,
            q: self.q,
            k: self.k,
            n_noise,
            alpha_low: self.alpha_low,
            alpha_high: self.alpha_high,
            beta_mean: self.beta_mean,
            beta_spread: self.beta_spread,
            spread_kind: match self.spread_kind {
                SpreadArg::Variance => SpreadKind::Variance,
                SpreadArg::StdDev => SpreadKind::StdDev,
            },
            seed,
        };
        Regime::from(self.regime).apply(&base)
    }
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 2)]
    pub latent_dim: usize,
    /// Weight of the covariate loss.
    #[arg(long, default_value_t = 0.1)]
    pub lambda_weight: f64,
    #[arg(long, default_value_t = 5.0)]
    pub eta0: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub stop_tol: f64,
    #[arg(long, default_value_t = 500)]
    pub stop_patience: usize,
    /// Norm below which a coefficient group counts as dropped.
    #[arg(long, default_value_t = 1e-6)]
    pub tau: f64,
    #[arg(long, default_value_t = 20)]
    pub lambda_points: usize,
    /// Explicit comma-separated `λ` grid, ascending.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Comma-separated `δ` grid, ascending, within [0, 0.5].
    #[arg(long, value_delimiter = ',')]
    pub delta_grid: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value = "aic")]
    pub criterion: CriterionArg,
    /// Independent starts per fit; the lowest per-parameter loss is kept.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
}

impl HyperArgs {
    pub fn settings(&self) -> FitSettings {
        let d = FitSettings::default();
        FitSettings {
            latent_dim: self.latent_dim,
            lambda_weight: self.lambda_weight,
            eta0: self.eta0,
            max_iters: self.max_iters,
            stop_tol: self.stop_tol,
            stop_patience: self.stop_patience,
            tau: self.tau,
            lambda_points: self.lambda_points,
            lambda_grid: self.lambda_grid.clone(),
            delta_grid: self.delta_grid.clone().unwrap_or(d.delta_grid),
            optimizer: match self.optimizer {
                OptimizerArg::Adam => OptimizerKind::Adam,
                OptimizerArg::Adagrad => OptimizerKind::Adagrad,
            },
            selection_criterion: match self.criterion {
                CriterionArg::Aic => SelectionCriterion::Aic,
                CriterionArg::Logloss => SelectionCriterion::Logloss,
            },
            restarts: self.restarts.max(1),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub adjacency: PathBuf,
    #[arg(long)]
    pub covariates: PathBuf,
    #[arg(long, value_enum, default_value = "adjacency")]
    pub format: FormatArg,
    /// Truth file from `simulate`, for selection rates.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub n_noise: usize,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "melasso")]
    pub method: MethodArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,10,20")]
    pub noise_levels: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "network-only,joint,lasso,melasso")]
    pub methods: Vec<MethodArg>,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct PilotArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub pilot_count: usize,
    #[arg(long, default_value_t = 0.7)]
    pub drop_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub rare_prevalence: f64,
    /// Skip fitting the non-pilot networks.
    #[arg(long)]
    pub no_full_phase: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Appends flags from `--config` that are not given explicitly.
pub fn expand_config(args: Vec<String>) -> CliResult<Vec<String>> {
    let path = args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("cannot read config {path}: {e}")))?;
    let given: HashSet<String> = args
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut out = args;
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{path}:{}: expected key = value", no + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(CliError::Config(format!("{path}:{}: config files cannot nest", no + 1)));
        }
        if given.contains(&key) {
            continue;
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => out.push(format!("--{key}={v}")),
        }
    }
    Ok(out)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Lib(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn run(cli: Cli) -> CliResult<()> {
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            warn!("thread pool already configured: {e}");
        }
    }
    match cli.command {
        Command::Simulate(a) => simulate(&a, cli.seed),
        Command::Fit(a) => fit(&a, cli.seed),
        Command::Replicate(a) => replicate(&a, cli.seed),
        Command::Pilot(a) => pilot(&a, cli.seed),
        Command::Evaluate(a) => evaluate_cmd(&a),
    }
}

fn simulate(a: &SimulateArgs, seed: u64) -> CliResult<()> {
    if a.replicates < 1 {
        return Err(CliError::Config("--replicates must be at least 1".into()));
    }
    ensure_dir(&a.out)?;
    let mut entries = Vec::new();
    for r in 0..a.replicates {
        let (sim_seed, _) = replicate_seeds(seed, r);
        let cfg = a.sim.config(a.n_noise, sim_seed);
        let (net, cov, truth) = generate(&cfg)?;
        let id = format!("rep_{r}");
        let dir = a.out.join(&id);
        ensure_dir(&dir)?;
        write_adjacency(dir.join("adjacency.csv"), &net)?;
        write_covariates(dir.join("covariates.csv"), &cov, None)?;
        let state = LatentState {
            z: truth.z.clone(),
            alpha: truth.alpha.clone(),
            beta: truth.beta.clone(),
            gamma: truth.gamma.clone(),
        };
        write_json(
            dir.join("truth.json"),
            &json!({
                "seed": sim_seed,
                "config": serde_json::to_value(&cfg).map_err(Error::from)?,
                "state": serde_json::to_value(StateRecord::from(&state)).map_err(Error::from)?,
                "active": truth.active.indices(),
                "clusters": truth.clusters,
            }),
        )?;
        entries.push(ManifestEntry {
            id: id.clone(),
            adjacency_path: PathBuf::from(&id).join("adjacency.csv"),
            covariates_path: PathBuf::from(&id).join("covariates.csv"),
            network_format: NetworkFormat::Adjacency,
        });
        info!("{id}: density {:.4}", net.density());
    }
    write_json(a.out.join("manifest.json"), &DatasetManifest::new(entries)?)?;
    Ok(())
}

fn read_truth(path: &Path, q: usize) -> CliResult<ActiveSet> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let idx = v["active"]
        .as_array()
        .ok_or_else(|| CliError::Config(format!("{}: no active list", path.display())))?
        .iter()
        .map(|x| x.as_u64().map(|u| u as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| CliError::Config(format!("{}: active list must hold indices", path.display())))?;
    Ok(ActiveSet::new(idx, 0.0, q)?)
}

fn fit(a: &FitArgs, seed: u64) -> CliResult<()> {
    let (net, cov) = load_pair(&a.data.adjacency, a.data.format.into(), &a.data.covariates)?;
    let truth = a.data.truth.as_deref().map(|p| read_truth(p, cov.q())).transpose()?;
    let settings = a.hyper.settings();
    let method = Method::from(a.method);
    let out = run_methods(&net, &cov, truth.as_ref(), &settings, &[method], seed)?
        .pop()
        .expect("one method requested");

    ensure_dir(&a.out)?;
    let mut hyper = settings.hyperparams(net.n(), seed);
    if method == Method::NetworkOnly {
        hyper.lambda_weight = 0.0;
    }
    let stage = match method {
        Method::Lasso | Method::Melasso => Stage::Refit,
        _ => Stage::Stage1,
    };
    let snapshot = ModelSnapshot::new(
        &out.state,
        &hyper,
        Some(out.active.clone()),
        Provenance {
            seed,
            data_checksum: data_checksum(&net, &cov),
            stage,
        },
    );
    write_snapshot(&snapshot, a.out.join("snapshot.json"))?;
    write_json(a.out.join("report.json"), &out.report)?;
    export_trace(&out.fit.trace, a.out.join("trace.csv"))?;
    println!("{}", serde_json::to_string_pretty(&out.report).map_err(Error::from)?);
    Ok(())
}

fn replicate(a: &ReplicateArgs, seed: u64) -> CliResult<()> {
    let regime = Regime::from(a.sim.regime);
    let cfg = StudyConfig {
        regime,
        sim: a.sim.config(0, 0),
        noise_levels: a.noise_levels.clone(),
        replicates: a.replicates,
        methods: a.methods.iter().map(|&m| m.into()).collect(),
        settings: a.hyper.settings(),
        master_seed: seed,
    };
    let study = run_study(&cfg)?;
    ensure_dir(&a.out)?;
    export_results(&study.rows, a.out.join("results.csv"))?;
    export_summary(&study.summary, a.out.join("summary.csv"))?;
    if !study.failures.is_empty() {
        write_json(a.out.join("failures.json"), &study.failures)?;
        warn!("{} replicate(s) failed; see failures.json", study.failures.len());
        if study.rows.is_empty() {
            return Err(CliError::Config("every replicate failed".into()));
        }
    }
    Ok(())
}

fn pilot(a: &PilotArgs, seed: u64) -> CliResult<()> {
    let manifest = read_manifest(&a.manifest)?;
    let cfg = PilotConfig {
        pilot_count: a.pilot_count,
        drop_fraction: a.drop_fraction,
        rare_prevalence: a.rare_prevalence,
        settings: a.hyper.settings(),
        seed,
        full_phase: !a.no_full_phase,
    };
    let report = run_pilot(&manifest, &cfg)?;
    ensure_dir(&a.out)?;
    write_json(a.out.join("screening.json"), &report.screening)?;
    write_json(a.out.join("pilot_report.json"), &report)?;
    println!(
        "excluded {} of {} covariates ({:.1}% less data to collect)",
        report.screening.excluded.len(),
        report.screening.names.len(),
        report.screening.reduction_percent
    );
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> CliResult<()> {
    let snapshot = read_snapshot(&a.snapshot)?;
    let (net, cov) = load_pair(&a.data.adjacency, a.data.format.into(), &a.data.covariates)?;
    let state = snapshot.state.to_state()?;
    state.check(net.n(), cov.q())?;
    check_snapshot_data(&snapshot, &net, &cov);
    let truth = a.data.truth.as_deref().map(|p| read_truth(p, cov.q())).transpose()?;
    let included = snapshot.active.clone().unwrap_or_else(|| ActiveSet::all(cov.q()));
    let report = evaluate(&net, &cov, &state, &included, truth.as_ref())?;
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
    }
    Ok(())
}
