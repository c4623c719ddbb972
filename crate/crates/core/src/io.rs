//! Reading and writing networks, covariate tables, manifests, model snapshots
//! and result tables.
//!
//! Text formats are comma separated, UTF-8, with LF or CRLF line endings on
//! input and LF on output. Readers reject malformed input with the line it
//! was found on.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::model::{ActiveSet, CovariateMatrix, Hyperparams, LatentState, Network};
use crate::objective::LossBreakdown;

/// Newest snapshot and manifest version this build reads and writes.
pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkFormat {
    Edgelist,
    #[default]
    Adjacency,
}

impl FromStr for NetworkFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edgelist" => Ok(NetworkFormat::Edgelist),
            "adjacency" => Ok(NetworkFormat::Adjacency),
            other => Err(Error::InvalidConfig(format!("unknown network format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    /// Node count for edge lists, so trailing isolated nodes are kept.
    pub n: Option<usize>,
    /// Node labels in index order; edge list endpoints are looked up here.
    pub node_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct LoadedNetwork {
    pub network: Network,
    pub self_loops_dropped: usize,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn reader(path: &Path, has_headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn records(path: &Path, rdr: &mut csv::Reader<File>) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_binary(path: &Path, line: usize, row: usize, col: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("column {}: not a number: {field:?}", col + 1)))?;
    if v != 0.0 && v != 1.0 {
        return Err(Error::NonBinaryEntry {
            row,
            col,
            value: field.to_string(),
        });
    }
    Ok(v)
}

pub fn read_network(path: impl AsRef<Path>, format: NetworkFormat, opts: &ReadOptions) -> Result<LoadedNetwork> {
    let path = path.as_ref();
    let loaded = match format {
        NetworkFormat::Adjacency => read_adjacency(path)?,
        NetworkFormat::Edgelist => read_edgelist(path, opts)?,
    };
    if let (Some(ids), true) = (&opts.node_ids, format == NetworkFormat::Adjacency) {
        let network = loaded.network.with_node_ids(ids.clone())?;
        return Ok(LoadedNetwork { network, ..loaded });
    }
    Ok(loaded)
}

fn read_adjacency(path: &Path) -> Result<LoadedNetwork> {
    let mut rdr = reader(path, false)?;
    let rows = records(path, &mut rdr)?;
    let n = rows.len();
    let mut a = DMatrix::zeros(n, n);
    for (i, (line, rec)) in rows.iter().enumerate() {
        if rec.len() != n {
            return Err(parse_err(path, *line, format!("expected {n} entries, found {}", rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            a[(i, j)] = parse_binary(path, *line, i, j, field)?;
        }
    }
    Ok(LoadedNetwork {
        network: Network::new(a)?,
        self_loops_dropped: 0,
    })
}

fn read_edgelist(path: &Path, opts: &ReadOptions) -> Result<LoadedNetwork> {
    let mut rdr = reader(path, false)?;
    let rows = records(path, &mut rdr)?;
    let mut pairs = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        if rec.len() != 2 {
            return Err(parse_err(path, *line, format!("expected 2 fields, found {}", rec.len())));
        }
        pairs.push((*line, rec[0].to_string(), rec[1].to_string()));
    }

    let numeric = opts.node_ids.is_none()
        && pairs.iter().all(|(_, a, b)| a.parse::<usize>().is_ok() && b.parse::<usize>().is_ok());
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    if let Some(ids) = &opts.node_ids {
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateName(id.clone()));
            }
        }
        labels = ids.clone();
    }

    let mut edges = Vec::with_capacity(pairs.len());
    let mut self_loops = 0;
    for (line, a, b) in &pairs {
        let (i, j) = if numeric {
            (a.parse::<usize>().unwrap(), b.parse::<usize>().unwrap())
        } else {
            let mut lookup = |label: &str| -> Result<usize> {
                if let Some(&i) = index.get(label) {
                    return Ok(i);
                }
                if opts.node_ids.is_some() {
                    return Err(parse_err(path, *line, format!("unknown node {label:?}")));
                }
                labels.push(label.to_string());
                index.insert(label.to_string(), labels.len() - 1);
                Ok(labels.len() - 1)
            };
            (lookup(a)?, lookup(b)?)
        };
        if i == j {
            self_loops += 1;
            continue;
        }
        edges.push((i, j));
    }
    if self_loops > 0 {
        warn!("{}: dropped {self_loops} self-loops", path.display());
    }

    let seen = if numeric {
        pairs
            .iter()
            .flat_map(|(_, a, b)| [a.parse::<usize>().unwrap(), b.parse::<usize>().unwrap()])
            .max()
            .map_or(0, |m| m + 1)
    } else {
        labels.len()
    };
    let n = match opts.n {
        Some(n) if n < seen => {
            return Err(Error::DimensionMismatch(format!(
                "{}: {seen} nodes referenced but n = {n}",
                path.display()
            )))
        }
        Some(n) => n,
        None => seen,
    };
    let mut network = Network::from_edges(n, &edges)?;
    if !numeric {
        if labels.len() < n {
            return Err(Error::DimensionMismatch(format!(
                "{}: {} labels for {n} nodes",
                path.display(),
                labels.len()
            )));
        }
        network = network.with_node_ids(labels)?;
    }
    Ok(LoadedNetwork {
        network,
        self_loops_dropped: self_loops,
    })
}

#[derive(Debug, Clone)]
pub struct CovariateTable {
    pub matrix: CovariateMatrix,
    /// Present when the first header field is `node_id`.
    pub node_ids: Option<Vec<String>>,
}

pub fn read_covariates(path: impl AsRef<Path>) -> Result<CovariateTable> {
    let path = path.as_ref();
    let mut rdr = reader(path, true)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if header.is_empty() || header.iter().all(|h| h.is_empty() || h.parse::<f64>().is_ok()) {
        return Err(Error::HeaderMissing(path.to_path_buf()));
    }
    let has_ids = header.get(0) == Some("node_id");
    let offset = usize::from(has_ids);
    let names: Vec<String> = header.iter().skip(offset).map(str::to_string).collect();
    let q = names.len();

    let rows = records(path, &mut rdr)?;
    let n = rows.len();
    let mut values = DMatrix::zeros(n, q);
    let mut ids = Vec::with_capacity(if has_ids { n } else { 0 });
    for (i, (line, rec)) in rows.iter().enumerate() {
        if rec.len() != q + offset {
            return Err(parse_err(path, *line, format!("expected {} fields, found {}", q + offset, rec.len())));
        }
        if has_ids {
            ids.push(rec[0].to_string());
        }
        for j in 0..q {
            values[(i, j)] = parse_binary(path, *line, i, j, &rec[j + offset])?;
        }
    }
    Ok(CovariateTable {
        matrix: CovariateMatrix::new(values, names)?,
        node_ids: has_ids.then_some(ids),
    })
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

fn bit(v: f64) -> &'static str {
    if v == 1.0 {
        "1"
    } else {
        "0"
    }
}

pub fn write_adjacency(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    for row in net.adjacency().row_iter() {
        w.write_record(row.iter().map(|&v| bit(v))).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// One `i,j` line per edge with `i < j`, using node ids when present.
pub fn write_edgelist(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let label = |i: usize| match net.node_ids() {
        Some(ids) => ids[i].clone(),
        None => i.to_string(),
    };
    for i in 0..net.n() {
        for j in i + 1..net.n() {
            if net.has_edge(i, j) {
                w.write_record([label(i), label(j)]).map_err(|e| csv_err(path, e))?;
            }
        }
    }
    finish(path, w)
}

pub fn write_covariates(path: impl AsRef<Path>, cov: &CovariateMatrix, node_ids: Option<&[String]>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let mut header: Vec<&str> = Vec::with_capacity(cov.q() + 1);
    if node_ids.is_some() {
        header.push("node_id");
    }
    header.extend(cov.names().iter().map(String::as_str));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, row) in cov.values().row_iter().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(cov.q() + 1);
        if let Some(ids) = node_ids {
            rec.push(ids[i].clone());
        }
        rec.extend(row.iter().map(|&v| bit(v).to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// SHA-256 of the data a model was fitted to, hex encoded.
pub fn data_checksum(net: &Network, cov: &CovariateMatrix) -> String {
    let mut h = Sha256::new();
    h.update((net.n() as u64).to_le_bytes());
    h.update((cov.q() as u64).to_le_bytes());
    for j in 0..net.n() {
        for i in 0..j {
            h.update([net.has_edge(i, j) as u8]);
        }
    }
    for v in cov.values().iter() {
        h.update([(*v == 1.0) as u8]);
    }
    for name in cov.names() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Refit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub data_checksum: String,
    pub stage: Stage,
}

/// Row-major plain-vector form of a [`LatentState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub n: usize,
    pub k: usize,
    pub q: usize,
    pub z: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl From<&LatentState> for StateRecord {
    fn from(s: &LatentState) -> Self {
        StateRecord {
            n: s.n(),
            k: s.k(),
            q: s.q(),
            z: s.z.transpose().iter().copied().collect(),
            alpha: s.alpha.iter().copied().collect(),
            beta: s.beta.transpose().iter().copied().collect(),
            gamma: s.gamma.iter().copied().collect(),
        }
    }
}

impl StateRecord {
    pub fn to_state(&self) -> Result<LatentState> {
        let StateRecord { n, k, q, .. } = *self;
        if self.z.len() != n * k || self.alpha.len() != n || self.beta.len() != k * q || self.gamma.len() != q {
            return Err(Error::DimensionMismatch(format!(
                "snapshot state does not match its declared shape n={n}, k={k}, q={q}"
            )));
        }
        Ok(LatentState {
            z: DMatrix::from_row_slice(n, k, &self.z),
            alpha: DVector::from_column_slice(&self.alpha),
            beta: DMatrix::from_row_slice(k, q, &self.beta),
            gamma: DVector::from_column_slice(&self.gamma),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub format_version: u64,
    pub state: StateRecord,
    pub hyper: Hyperparams,
    /// Covariate columns the state's `β` columns refer to, when a subset.
    pub active: Option<ActiveSet>,
    pub provenance: Provenance,
}

impl ModelSnapshot {
    pub fn new(state: &LatentState, hyper: &Hyperparams, active: Option<ActiveSet>, provenance: Provenance) -> Self {
        ModelSnapshot {
            format_version: FORMAT_VERSION,
            state: state.into(),
            hyper: hyper.clone(),
            active,
            provenance,
        }
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_versioned<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| parse_err(path, 1, "missing format_version"))?;
    if found > FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found,
            supported: FORMAT_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn write_snapshot(snapshot: &ModelSnapshot, path: impl AsRef<Path>) -> Result<()> {
    let finite = snapshot
        .state
        .z
        .iter()
        .chain(&snapshot.state.alpha)
        .chain(&snapshot.state.beta)
        .chain(&snapshot.state.gamma)
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite("snapshot state"));
    }
    write_json(path, snapshot)
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<ModelSnapshot> {
    read_versioned(path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChecksumWarning {
    pub recorded: String,
    pub actual: String,
}

/// Compares a snapshot's recorded checksum with the data. A mismatch is
/// logged and returned, never an error.
pub fn check_snapshot_data(snapshot: &ModelSnapshot, net: &Network, cov: &CovariateMatrix) -> Option<ChecksumWarning> {
    let actual = data_checksum(net, cov);
    if actual == snapshot.provenance.data_checksum {
        return None;
    }
    warn!(
        "snapshot checksum {} does not match data checksum {actual}",
        snapshot.provenance.data_checksum
    );
    Some(ChecksumWarning {
        recorded: snapshot.provenance.data_checksum.clone(),
        actual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub adjacency_path: PathBuf,
    pub covariates_path: PathBuf,
    #[serde(default)]
    pub network_format: NetworkFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest {
            format_version: FORMAT_VERSION,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateName(e.id.clone()));
            }
            if e.id.is_empty() || e.adjacency_path.as_os_str().is_empty() || e.covariates_path.as_os_str().is_empty() {
                return Err(Error::InvalidConfig(format!("manifest entry {:?} has an empty field", e.id)));
            }
        }
        Ok(())
    }
}

/// Reads a manifest; relative paths are resolved against its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let mut m: DatasetManifest = read_versioned(path)?;
    m.validate()?;
    let base = path.parent().unwrap_or(Path::new(""));
    for e in &mut m.entries {
        if e.adjacency_path.is_relative() {
            e.adjacency_path = base.join(&e.adjacency_path);
        }
        if e.covariates_path.is_relative() {
            e.covariates_path = base.join(&e.covariates_path);
        }
    }
    Ok(m)
}

/// Loads one manifest entry, joining labeled edge lists against the
/// covariate table's `node_id` column when it has one.
pub fn load_entry(entry: &ManifestEntry) -> Result<(Network, CovariateMatrix)> {
    load_pair(&entry.adjacency_path, entry.network_format, &entry.covariates_path)
}

pub fn load_pair(network_path: &Path, format: NetworkFormat, covariates_path: &Path) -> Result<(Network, CovariateMatrix)> {
    let table = read_covariates(covariates_path)?;
    let opts = ReadOptions {
        n: Some(table.matrix.n()),
        node_ids: table.node_ids.clone(),
    };
    let net = read_network(network_path, format, &opts)?.network;
    crate::model::validate_pair(&net, &table.matrix)?;
    Ok((net, table.matrix))
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub replicate: usize,
    pub method: String,
    pub regime: String,
    pub n_noise: usize,
    pub seed: u64,
    pub auc_network: f64,
    pub auc_network_per_node: f64,
    pub auc_covariates_mean: f64,
    pub mean_logloss_a: f64,
    pub mean_logloss_y: f64,
    pub tn_rate: Option<f64>,
    pub tp_rate: Option<f64>,
    pub n_selected: usize,
    pub chosen_lambda: Option<f64>,
    pub chosen_delta: Option<f64>,
    pub iterations: usize,
}

pub const RESULT_COLUMNS: [&str; 16] = [
    "replicate",
    "method",
    "regime",
    "n_noise",
    "seed",
    "auc_network",
    "auc_network_per_node",
    "auc_covariates_mean",
    "mean_logloss_a",
    "mean_logloss_y",
    "tn_rate",
    "tp_rate",
    "n_selected",
    "chosen_lambda",
    "chosen_delta",
    "iterations",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes rows ordered by replicate, method, regime and noise level.
pub fn export_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.replicate, &a.method, &a.regime, a.n_noise).cmp(&(b.replicate, &b.method, &b.regime, b.n_noise))
    });
    let mut w = writer(path)?;
    w.write_record(RESULT_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in sorted {
        w.write_record([
            r.replicate.to_string(),
            r.method.clone(),
            r.regime.clone(),
            r.n_noise.to_string(),
            r.seed.to_string(),
            r.auc_network.to_string(),
            r.auc_network_per_node.to_string(),
            r.auc_covariates_mean.to_string(),
            r.mean_logloss_a.to_string(),
            r.mean_logloss_y.to_string(),
            opt(r.tn_rate),
            opt(r.tp_rate),
            r.n_selected.to_string(),
            opt(r.chosen_lambda),
            opt(r.chosen_delta),
            r.iterations.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Mean and standard deviation of one metric over replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Absent with a single replicate.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub regime: String,
    pub n_noise: usize,
    pub replicates: usize,
    pub auc_covariates: Stat,
    pub auc_network: Stat,
    pub tn_rate: Option<Stat>,
    pub tp_rate: Option<Stat>,
}

pub fn export_summary(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record([
        "method",
        "regime",
        "n_noise",
        "replicates",
        "auc_covariates_mean",
        "auc_covariates_sd",
        "auc_network_mean",
        "auc_network_sd",
        "tn_mean",
        "tn_sd",
        "tp_mean",
        "tp_sd",
    ])
    .map_err(|e| csv_err(path, e))?;
    let split = |s: Option<Stat>| (opt(s.map(|s| s.mean)), opt(s.and_then(|s| s.sd)));
    for r in rows {
        let (tn_m, tn_s) = split(r.tn_rate);
        let (tp_m, tp_s) = split(r.tp_rate);
        w.write_record([
            r.method.clone(),
            r.regime.clone(),
            r.n_noise.to_string(),
            r.replicates.to_string(),
            r.auc_covariates.mean.to_string(),
            opt(r.auc_covariates.sd),
            r.auc_network.mean.to_string(),
            opt(r.auc_network.sd),
            tn_m,
            tn_s,
            tp_m,
            tp_s,
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Per-iteration losses of a fit, one row per iteration.
pub fn export_trace(trace: &[LossBreakdown], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["iteration", "loss_a", "loss_y", "joint", "per_param"])
        .map_err(|e| csv_err(path, e))?;
    for (t, l) in trace.iter().enumerate() {
        w.write_record([
            (t + 1).to_string(),
            l.loss_a.to_string(),
            l.loss_y.to_string(),
            l.joint.to_string(),
            l.per_param.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Snapshot of a finished fit.
pub fn snapshot_of(
    fit: &FitResult,
    hyper: &Hyperparams,
    active: Option<ActiveSet>,
    net: &Network,
    cov: &CovariateMatrix,
    stage: Stage,
) -> ModelSnapshot {
    ModelSnapshot::new(
        &fit.state,
        hyper,
        active,
        Provenance {
            seed: hyper.seed,
            data_checksum: data_checksum(net, cov),
            stage,
        },
    )
}
