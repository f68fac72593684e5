//! Experiment orchestration: data generation, method fan-out over a worker
//! pool, scoring and result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    gft_denoise, gld_denoise, grid_search, gtf_denoise, mlp_denoise, AdmmOptions, MlpOptions, ALPHA_GRID,
};
use crate::datagen::{
    add_noise, generate_signals, random_geometric_graph, standard_normal, NoiseModel, SignalKind, SignalSpec,
    DEFAULT_RADIUS,
};
use crate::error::{Error, Result};
use crate::graph::{incidence_matrix, load_graph, normalize_adjacency, Graph, Incidence};
use crate::io::{fmt_f64, load_signals};
use crate::linalg::SignalMatrix;
use crate::metrics::{compute_metrics, nmse, MetricMode};
use crate::rng::derive_seed;
use crate::spectral::{adjacency_basis, laplacian_basis, SpectralBasis};
use crate::unroll::{
    history_to_csv, hqs_solve, train, Architecture, EpochRecord, GraphContext, HqsConfig, LossKind, UnrollConfig,
    UnrollNet,
};

const STREAM_SIGNAL: u64 = 10;
const STREAM_NOISE: u64 = 11;
const STREAM_MODEL: u64 = 12;

pub const RESULTS_HEADER: &str = "method,kind,noise,K,trial,seed,nmse,nmae,wall_ms,error_rate,f1,alpha,error";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub n: usize,
    pub radius: f64,
    /// Defaults to the experiment seed.
    pub seed: Option<u64>,
    /// Edge-list file; replaces the random geometric graph when set.
    pub file: Option<PathBuf>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            n: 500,
            radius: DEFAULT_RADIUS,
            seed: None,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    pub kinds: Vec<SignalKind>,
    pub bandwidth: Option<usize>,
    pub pieces: usize,
    /// Clean signals CSV; replaces generation (and the K list) when set.
    pub file: Option<PathBuf>,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            kinds: vec![SignalKind::Smooth],
            bandwidth: None,
            pieces: 5,
            file: None,
        }
    }
}

/// One denoiser and its settings. A missing `alpha` means "tune on the
/// default grid against the clean signals".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum MethodSpec {
    /// Scores the noisy input itself.
    Baseline,
    Gld {
        #[serde(default)]
        alpha: Option<f64>,
    },
    Gtf {
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        admm: AdmmOptions,
    },
    Gft {
        #[serde(default)]
        alpha: Option<f64>,
    },
    Mlp {
        #[serde(default)]
        mlp: MlpOptions,
    },
    Gusc {
        #[serde(default)]
        net: UnrollConfig,
    },
    Gutf {
        #[serde(default)]
        net: UnrollConfig,
    },
    /// Trend-filtering HQS unless a full `solver` config is given.
    Hqs {
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        solver: Option<HqsConfig>,
    },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Baseline => "baseline",
            MethodSpec::Gld { .. } => "gld",
            MethodSpec::Gtf { .. } => "gtf",
            MethodSpec::Gft { .. } => "gft",
            MethodSpec::Mlp { .. } => "mlp",
            MethodSpec::Gusc { .. } => "gusc",
            MethodSpec::Gutf { .. } => "gutf",
            MethodSpec::Hqs { .. } => "hqs",
        }
    }

    fn unroll(&self) -> Option<(Architecture, &UnrollConfig)> {
        match self {
            MethodSpec::Gusc { net } => Some((Architecture::Gusc, net)),
            MethodSpec::Gutf { net } => Some((Architecture::Gutf, net)),
            _ => None,
        }
    }

    fn needs_adjacency_basis(&self) -> bool {
        matches!(self, MethodSpec::Gft { .. }) || self.unroll().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub graph: GraphConfig,
    pub signals: SignalConfig,
    pub noise: NoiseModel,
    pub methods: Vec<MethodSpec>,
    pub trials: usize,
    pub k_values: Vec<usize>,
    /// Gaussian noise levels for the sweep.
    pub sigmas: Vec<f64>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: GraphConfig::default(),
            signals: SignalConfig::default(),
            noise: NoiseModel::Gaussian { sigma: 0.5 },
            methods: vec![MethodSpec::Baseline],
            trials: 3,
            k_values: vec![1, 10, 100],
            sigmas: vec![0.1, 0.3, 0.5],
            out_dir: None,
            seed: 0,
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.signals.file.is_none() && (self.k_values.is_empty() || self.k_values.contains(&0)) {
            return Err(Error::Config(
                "k_values must be a nonempty list of positive counts".into(),
            ));
        }
        if self.signals.file.is_none() && self.signals.kinds.is_empty() {
            return Err(Error::Config("at least one signal kind is required".into()));
        }
        if self.graph.file.is_none() && (self.graph.n < 2 || !(self.graph.radius > 0.0)) {
            return Err(Error::Config("graph needs n >= 2 and a positive radius".into()));
        }
        for m in &self.methods {
            if let Some((_, net)) = m.unroll() {
                net.validate()?;
            }
        }
        Ok(())
    }

    pub fn graph_seed(&self) -> u64 {
        self.graph.seed.unwrap_or(self.seed)
    }

    /// Seed of trial `t`: the experiment seed XOR the trial index.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed ^ trial as u64
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    fn preamble(&self) -> String {
        format!(
            "# config_hash={} seed={} graph_seed={}\n",
            self.hash(),
            self.seed,
            self.graph_seed()
        )
    }

    fn binary(&self) -> bool {
        matches!(self.noise, NoiseModel::Bernoulli { .. })
    }
}

/// The graph and everything derived from it, shared read-only by workers.
pub struct PreparedGraph {
    graph: Graph,
    incidence: Incidence,
    laplacian: OnceLock<Result<SpectralBasis>>,
    adjacency: OnceLock<Result<SpectralBasis>>,
    contexts: std::sync::Mutex<BTreeMap<(usize, usize, bool), Arc<GraphContext>>>,
}

fn shared<T: Clone>(cell: &OnceLock<Result<T>>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    match cell.get_or_init(f) {
        Ok(v) => Ok(v.clone()),
        Err(e) => Err(Error::Numerical(e.to_string())),
    }
}

impl PreparedGraph {
    /// `g` is normalized here if it is not already.
    pub fn new(g: Graph) -> Result<Self> {
        let graph = if g.norm_scale() == 1.0 {
            g
        } else {
            normalize_adjacency(&g)?
        };
        let incidence = incidence_matrix(&graph);
        Ok(Self {
            graph,
            incidence,
            laplacian: OnceLock::new(),
            adjacency: OnceLock::new(),
            contexts: Default::default(),
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn laplacian_basis(&self) -> Result<SpectralBasis> {
        shared(&self.laplacian, || laplacian_basis(&self.graph))
    }

    pub fn adjacency_basis(&self) -> Result<SpectralBasis> {
        shared(&self.adjacency, || adjacency_basis(&self.graph))
    }

    pub fn context(&self, order: usize, coord_dim: usize, keep_diagonal: bool) -> Result<Arc<GraphContext>> {
        let key = (order, coord_dim, keep_diagonal);
        if let Some(c) = self.contexts.lock().expect("context cache").get(&key) {
            return Ok(c.clone());
        }
        let ctx = Arc::new(GraphContext::new(
            &self.graph,
            &self.adjacency_basis()?,
            order,
            coord_dim,
            keep_diagonal,
        )?);
        self.contexts.lock().expect("context cache").insert(key, ctx.clone());
        Ok(ctx)
    }
}

pub fn build_graph(cfg: &ExperimentConfig) -> Result<PreparedGraph> {
    let g = match &cfg.graph.file {
        Some(path) => load_graph(path)?,
        None => random_geometric_graph(cfg.graph.n, cfg.graph.radius, cfg.graph_seed())?,
    };
    PreparedGraph::new(g)
}

/// Output of one method on one noisy instance.
#[derive(Debug, Clone)]
pub struct Denoised {
    pub output: SignalMatrix,
    /// Regularization weight used (tuned or given).
    pub alpha: Option<f64>,
    pub history: Vec<EpochRecord>,
}

fn tuned(
    alpha: Option<f64>,
    clean: Option<&SignalMatrix>,
    method: &str,
    mut f: impl FnMut(f64) -> Result<SignalMatrix>,
) -> Result<Denoised> {
    let (output, alpha) = match (alpha, clean) {
        (Some(a), _) => (f(a)?, a),
        (None, Some(c)) => {
            let r = grid_search(&ALPHA_GRID, c, &mut f)?;
            (r.output, r.alpha)
        }
        (None, None) => {
            return Err(Error::Config(format!(
                "{method} needs an explicit alpha when no clean reference is available"
            )))
        }
    };
    Ok(Denoised {
        output,
        alpha: Some(alpha),
        history: Vec::new(),
    })
}

/// Runs `method` on noisy `t`. `clean` drives grid tuning and training
/// history only. `seed` perturbs the network initialization.
pub fn denoise(
    method: &MethodSpec,
    pg: &PreparedGraph,
    t: &SignalMatrix,
    clean: Option<&SignalMatrix>,
    seed: u64,
    binary: bool,
) -> Result<Denoised> {
    let loss = if binary {
        LossKind::BinaryCrossEntropy
    } else {
        LossKind::Frobenius
    };
    let g = pg.graph();
    match method {
        MethodSpec::Baseline => Ok(Denoised {
            output: t.clone(),
            alpha: None,
            history: Vec::new(),
        }),
        MethodSpec::Gld { alpha } => tuned(*alpha, clean, "gld", |a| gld_denoise(t, g, a)),
        MethodSpec::Gtf { alpha, admm } => tuned(*alpha, clean, "gtf", |a| {
            let r = gtf_denoise(t, &pg.incidence, a, admm)?;
            if !r.converged {
                log::warn!("ADMM stopped at the iteration cap (alpha {a})");
            }
            Ok(r.output)
        }),
        MethodSpec::Gft { alpha } => {
            let basis = pg.adjacency_basis()?;
            tuned(*alpha, clean, "gft", |a| gft_denoise(t, &basis, a))
        }
        MethodSpec::Hqs { alpha, solver } => match solver {
            Some(cfg) => Ok(Denoised {
                output: hqs_solve(t, g, cfg)?.output,
                alpha: None,
                history: Vec::new(),
            }),
            None => tuned(*alpha, clean, "hqs", |a| {
                Ok(hqs_solve(t, g, &HqsConfig::trend_filtering(a))?.output)
            }),
        },
        MethodSpec::Mlp { mlp } => {
            let opts = MlpOptions {
                seed: mlp.seed ^ seed,
                ..mlp.clone()
            };
            let r = mlp_denoise(t, clean, &opts, loss)?;
            Ok(Denoised {
                output: r.output,
                alpha: None,
                history: r.history,
            })
        }
        MethodSpec::Gusc { net } | MethodSpec::Gutf { net } => {
            let arch = method.unroll().expect("unrolling method").0;
            let cfg = UnrollConfig {
                seed: net.seed ^ seed,
                loss,
                ..net.clone()
            };
            let ctx = pg.context(cfg.order, cfg.coord_dim, cfg.keep_diagonal)?;
            let mut model = UnrollNet::new(arch, t.cols(), ctx, &cfg)?;
            let r = train(&mut model, t, clean, &cfg.train_options())?;
            Ok(Denoised {
                output: r.output,
                alpha: Some(cfg.alpha),
                history: r.history,
            })
        }
    }
}

/// One noisy instance, generated once and shared by every method.
#[derive(Debug, Clone)]
pub struct Instance {
    pub kind: String,
    pub noise: String,
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub clean: SignalMatrix,
    pub noisy: SignalMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: String,
    pub kind: String,
    pub noise: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub nmse: Option<f64>,
    pub nmae: Option<f64>,
    pub wall_ms: u128,
    pub error_rate: Option<f64>,
    pub f1: Option<f64>,
    pub alpha: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    fn csv_line(&self) -> String {
        let num = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let err = self
            .error
            .as_deref()
            .map(|e| format!("\"{}\"", e.replace('"', "'")))
            .unwrap_or_default();
        format!(
            "{},{},\"{}\",{},{},{},{},{},{},{},{},{},{}\n",
            self.method,
            self.kind,
            self.noise,
            self.k,
            self.trial,
            self.seed,
            num(self.nmse),
            num(self.nmae),
            self.wall_ms,
            num(self.error_rate),
            num(self.f1),
            num(self.alpha),
            err
        )
    }
}

pub fn rows_to_csv(cfg: &ExperimentConfig, rows: &[ResultRow]) -> String {
    let mut s = cfg.preamble();
    s.push_str(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(Stat { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryGroup {
    pub method: String,
    pub kind: String,
    pub noise: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub ok: usize,
    pub failed: usize,
    pub nmse: Option<Stat>,
    pub nmae: Option<Stat>,
    pub error_rate: Option<Stat>,
    pub f1: Option<Stat>,
}

/// Means and population standard deviations over trials, per
/// `(method, kind, noise, K)` in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryGroup> {
    let mut order: Vec<(String, String, String, usize)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.kind.clone(), r.noise.clone(), r.k);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let pick = |f: fn(&ResultRow) -> Option<f64>| stat(&rs.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            SummaryGroup {
                ok: rs.iter().filter(|r| r.is_ok()).count(),
                failed: rs.iter().filter(|r| !r.is_ok()).count(),
                nmse: pick(|r| r.nmse),
                nmae: pick(|r| r.nmae),
                error_rate: pick(|r| r.error_rate),
                f1: pick(|r| r.f1),
                method: key.0,
                kind: key.1,
                noise: key.2,
                k: key.3,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryGroup>,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn summary_json(&self, cfg: &ExperimentConfig) -> serde_json::Value {
        serde_json::json!({
            "config_hash": self.config_hash,
            "seed": cfg.seed,
            "graph_seed": cfg.graph_seed(),
            "trial_seeds": (0..cfg.trials).map(|t| cfg.trial_seed(t)).collect::<Vec<_>>(),
            "failures": self.failures(),
            "groups": self.summary,
        })
    }
}

/// `(nmse, nmae, error_rate, f1)`
type Scores = (Option<f64>, Option<f64>, Option<f64>, Option<f64>);

fn score(inst: &Instance, out: &SignalMatrix, binary: bool) -> Result<Scores> {
    let mode = if binary { MetricMode::Binary } else { MetricMode::Real };
    let rep = compute_metrics(out, &inst.clean, mode)?;
    Ok((rep.nmse, rep.nmae, rep.error_rate, rep.f1))
}

fn run_job(method: &MethodSpec, pg: &PreparedGraph, inst: &Instance, binary: bool) -> ResultRow {
    let start = Instant::now();
    let res = denoise(
        method,
        pg,
        &inst.noisy,
        Some(&inst.clean),
        derive_seed(inst.seed, STREAM_MODEL),
        binary,
    )
    .and_then(|d| score(inst, &d.output, binary).map(|m| (m, d.alpha)));
    let wall_ms = start.elapsed().as_millis();
    let mut row = ResultRow {
        method: method.name().into(),
        kind: inst.kind.clone(),
        noise: inst.noise.clone(),
        k: inst.k,
        trial: inst.trial,
        seed: inst.seed,
        nmse: None,
        nmae: None,
        wall_ms,
        error_rate: None,
        f1: None,
        alpha: None,
        error: None,
    };
    match res {
        Ok(((nmse, nmae, er, f1), alpha)) => {
            row.nmse = nmse;
            row.nmae = nmae;
            row.error_rate = er;
            row.f1 = f1;
            row.alpha = alpha;
        }
        Err(e) => {
            log::error!(
                "{} on {} K={} trial {} failed: {e}",
                row.method,
                row.kind,
                row.k,
                row.trial
            );
            row.error = Some(e.to_string());
        }
    }
    row
}

/// Runs every `(instance, method)` pair on up to `threads` workers. Rows
/// come back in job order regardless of scheduling.
fn fan_out(
    pg: &PreparedGraph,
    instances: &[Instance],
    methods: &[MethodSpec],
    threads: usize,
    binary: bool,
) -> Vec<ResultRow> {
    let jobs: Vec<(usize, usize)> = (0..instances.len())
        .flat_map(|i| (0..methods.len()).map(move |m| (i, m)))
        .collect();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    let workers = threads.clamp(1, jobs.len().max(1));
    let mut slots: Vec<Option<ResultRow>> = vec![None; jobs.len()];
    std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, jobs) = (&next, &jobs);
            s.spawn(move || loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(i, m)) = jobs.get(j) else { break };
                let row = run_job(&methods[m], pg, &instances[i], binary);
                if tx.send((j, row)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (j, row) in rx {
            log::info!(
                "{} {} K={} trial {}: nmse {:?} ({} ms)",
                row.method,
                row.kind,
                row.k,
                row.trial,
                row.nmse,
                row.wall_ms
            );
            slots[j] = Some(row);
        }
    });
    slots.into_iter().map(|r| r.expect("every job reports")).collect()
}

fn clean_signals(
    cfg: &ExperimentConfig,
    pg: &PreparedGraph,
    kind: SignalKind,
    k: usize,
    seed: u64,
) -> Result<SignalMatrix> {
    let spec = SignalSpec {
        kind,
        bandwidth: cfg.signals.bandwidth,
        pieces: cfg.signals.pieces,
        k,
        seed: derive_seed(seed, STREAM_SIGNAL),
        binarize: cfg.binary(),
    };
    let basis = match kind {
        SignalKind::Smooth => Some(pg.laplacian_basis()?),
        _ => None,
    };
    generate_signals(pg.graph(), &spec, basis.as_ref())
}

type CleanSet = (String, usize, usize, u64, SignalMatrix);

/// Clean signal sets `(kind label, K, trial, seed, X)` in sweep order.
fn clean_sets(cfg: &ExperimentConfig, pg: &PreparedGraph) -> Result<Vec<CleanSet>> {
    let mut out = Vec::new();
    if let Some(path) = &cfg.signals.file {
        let x = load_signals(path)?;
        if x.rows() != pg.graph().n_vertices() {
            return Err(Error::validation(format!(
                "signal file has {} rows for {} vertices",
                x.rows(),
                pg.graph().n_vertices()
            )));
        }
        for trial in 0..cfg.trials {
            out.push(("file".to_string(), x.cols(), trial, cfg.trial_seed(trial), x.clone()));
        }
        return Ok(out);
    }
    for &kind in &cfg.signals.kinds {
        for &k in &cfg.k_values {
            for trial in 0..cfg.trials {
                let seed = cfg.trial_seed(trial);
                out.push((
                    kind.name().to_string(),
                    k,
                    trial,
                    seed,
                    clean_signals(cfg, pg, kind, k, seed)?,
                ));
            }
        }
    }
    Ok(out)
}

fn write_outputs(cfg: &ExperimentConfig, stem: &str, report: &ExperimentReport) -> Result<()> {
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), rows_to_csv(cfg, &report.rows))?;
        let json = serde_json::to_string_pretty(&report.summary_json(cfg))?;
        std::fs::write(dir.join(format!("{stem}_summary.json")), json + "\n")?;
    }
    Ok(())
}

fn prepare(cfg: &ExperimentConfig) -> Result<PreparedGraph> {
    cfg.validate()?;
    let pg = build_graph(cfg)?;
    if cfg.methods.iter().any(MethodSpec::needs_adjacency_basis) {
        pg.adjacency_basis()?;
    }
    Ok(pg)
}

/// The benchmark table: every `(kind, K, trial)` instance under
/// `cfg.noise`, every method. Failed rows carry their error message.
/// Writes `results.csv` and `results_summary.json` when `out_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let pg = prepare(cfg)?;
    let mut instances = Vec::new();
    for (kind, k, trial, seed, clean) in clean_sets(cfg, &pg)? {
        let noisy = add_noise(&clean, &cfg.noise, derive_seed(seed, STREAM_NOISE))?;
        instances.push(Instance {
            kind,
            noise: cfg.noise.name(),
            k,
            trial,
            seed,
            clean,
            noisy,
        });
    }
    let rows = fan_out(&pg, &instances, &cfg.methods, cfg.threads, cfg.binary());
    let report = ExperimentReport {
        config_hash: cfg.hash(),
        summary: summarize(&rows),
        rows,
    };
    write_outputs(cfg, "results", &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub experiment: ExperimentReport,
    /// Mean baseline NMSE strictly increases with σ for every
    /// `(kind, K)`; `None` without a baseline method.
    pub baseline_monotone: Option<bool>,
}

/// Gaussian noise at each of `cfg.sigmas`. One standard normal draw per
/// instance is scaled by every σ, so the levels differ only in scale.
/// Writes `sweep.csv` and `sweep_summary.json` when `out_dir` is set.
pub fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    if cfg.sigmas.is_empty() || cfg.sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Config(
            "sigmas must be a nonempty list of nonnegative levels".into(),
        ));
    }
    if cfg.binary() {
        return Err(Error::Config(
            "the noise sweep uses Gaussian noise; binary signals are not supported".into(),
        ));
    }
    let pg = prepare(cfg)?;
    let mut instances = Vec::new();
    for (kind, k, trial, seed, clean) in clean_sets(cfg, &pg)? {
        let z = standard_normal(clean.rows(), clean.cols(), derive_seed(seed, STREAM_NOISE));
        for &sigma in &cfg.sigmas {
            instances.push(Instance {
                kind: kind.clone(),
                noise: NoiseModel::Gaussian { sigma }.name(),
                k,
                trial,
                seed,
                noisy: clean.add(&z.scale(sigma))?,
                clean: clean.clone(),
            });
        }
    }
    let rows = fan_out(&pg, &instances, &cfg.methods, cfg.threads, false);
    let summary = summarize(&rows);
    let baseline_monotone = cfg.methods.contains(&MethodSpec::Baseline).then(|| {
        let mut by_set: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
        for g in summary.iter().filter(|g| g.method == "baseline") {
            by_set
                .entry((g.kind.clone(), g.k))
                .or_default()
                .push(g.nmse.map_or(f64::NAN, |s| s.mean));
        }
        let mut sorted: Vec<(f64, usize)> = cfg.sigmas.iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        by_set
            .values()
            .all(|means| sorted.windows(2).all(|w| means[w[0].1] < means[w[1].1]))
    });
    if baseline_monotone == Some(false) {
        log::warn!("baseline NMSE is not strictly increasing in sigma");
    }
    let experiment = ExperimentReport {
        config_hash: cfg.hash(),
        rows,
        summary,
    };
    write_outputs(cfg, "sweep", &experiment)?;
    Ok(SweepReport {
        experiment,
        baseline_monotone,
    })
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub method: String,
    pub history: Vec<EpochRecord>,
    pub csv: String,
}

/// Training curve of the first unrolling (or MLP) method on trial 0 of
/// the first signal set. Writes `convergence.csv` when `out_dir` is set.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    let method = cfg
        .methods
        .iter()
        .find(|m| m.unroll().is_some() || matches!(m, MethodSpec::Mlp { .. }))
        .ok_or_else(|| Error::Config("convergence needs a gusc, gutf or mlp method".into()))?;
    let one = ExperimentConfig {
        trials: 1,
        methods: vec![method.clone()],
        ..cfg.clone()
    };
    let pg = prepare(&one)?;
    let (_, _, _, seed, clean) = clean_sets(&one, &pg)?.swap_remove(0);
    let noisy = add_noise(&clean, &cfg.noise, derive_seed(seed, STREAM_NOISE))?;
    let d = denoise(
        method,
        &pg,
        &noisy,
        Some(&clean),
        derive_seed(seed, STREAM_MODEL),
        cfg.binary(),
    )?;
    let csv = cfg.preamble() + &history_to_csv(&d.history, true);
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("convergence.csv"), &csv)?;
    }
    if let Some(last) = d.history.last() {
        log::info!(
            "final epoch {}: nmse to noisy {:?}, to clean {:?}, reference {:?}",
            last.epoch,
            last.nmse_to_noisy,
            last.nmse_to_clean,
            nmse(&noisy, &clean).ok()
        );
    }
    Ok(ConvergenceReport {
        method: method.name().into(),
        history: d.history,
        csv,
    })
}
