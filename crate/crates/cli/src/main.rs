use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use graph_unroll::datagen::{add_noise, generate_signals, NoiseModel, SignalKind, SignalSpec};
use graph_unroll::graph::load_graph;
use graph_unroll::harness::{
    build_graph, denoise, run_convergence, run_experiment, run_noise_sweep, ExperimentConfig, MethodSpec, PreparedGraph,
};
use graph_unroll::io::{fmt_f64, load_signals, save_signals, signals_to_csv};
use graph_unroll::metrics::{compute_metrics, MetricMode};
use graph_unroll::spectral::{adjacency_basis, laplacian_basis};

#[derive(Parser)]
#[command(
    name = "gunroll",
    version,
    about = "Graph signal denoising with unrolled networks and classical baselines"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON); fields not given keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a graph, clean signals and noisy measurements.
    Gen {
        /// Signal family; defaults to the first kind in the config.
        #[arg(long)]
        kind: Option<Kind>,
        /// Signal count; defaults to the first entry of k_values.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Eigendecomposition of a graph's shift or Laplacian.
    Eigen {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value = "adjacency")]
        matrix: EigenMatrix,
    },
    /// Denoise one signal file.
    Denoise {
        #[arg(long)]
        graph: PathBuf,
        /// Noisy signals CSV (N rows, K columns).
        #[arg(long)]
        input: PathBuf,
        /// Output CSV; defaults to <out-dir>/denoised.csv.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Method as JSON, e.g. '{"method":"gld","alpha":1.0}'; defaults to
        /// the first method of the config.
        #[arg(long)]
        method: Option<String>,
        /// Clean signals for alpha tuning and scoring.
        #[arg(long)]
        clean: Option<PathBuf>,
        /// Treat signals as 0/1 (cross-entropy training, binary metrics).
        #[arg(long)]
        binary: bool,
    },
    /// Run the benchmark table: every signal kind, K, trial and method.
    Bench,
    /// Training curve of one unrolling network.
    Converge,
    /// Metrics against the Gaussian noise level.
    Sweep,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Smooth,
    PiecewiseConstant,
    PiecewiseSmooth,
}

impl From<Kind> for SignalKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Smooth => SignalKind::Smooth,
            Kind::PiecewiseConstant => SignalKind::PiecewiseConstant,
            Kind::PiecewiseSmooth => SignalKind::PiecewiseSmooth,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EigenMatrix {
    Adjacency,
    Laplacian,
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_gen(cfg: &ExperimentConfig, kind: Option<Kind>, k: Option<usize>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let kind = kind
        .map(SignalKind::from)
        .or(cfg.signals.kinds.first().copied())
        .unwrap_or(SignalKind::Smooth);
    let k = k.or(cfg.k_values.first().copied()).unwrap_or(1);
    let pg = build_graph(cfg)?;
    let spec = SignalSpec {
        kind,
        bandwidth: cfg.signals.bandwidth,
        pieces: cfg.signals.pieces,
        k,
        seed: cfg.seed,
        binarize: matches!(cfg.noise, NoiseModel::Bernoulli { .. }),
    };
    let basis = match kind {
        SignalKind::Smooth => Some(pg.laplacian_basis()?),
        _ => None,
    };
    let clean = generate_signals(pg.graph(), &spec, basis.as_ref())?;
    let noise_seed = cfg.seed.wrapping_add(1);
    let noisy = add_noise(&clean, &cfg.noise, noise_seed)?;
    pg.graph().save(dir.join("graph.tsv"))?;
    save_signals(dir.join("clean.csv"), &clean)?;
    save_signals(dir.join("noisy.csv"), &noisy)?;
    let manifest = serde_json::json!({
        "config_hash": cfg.hash(),
        "graph": {
            "vertices": pg.graph().n_vertices(),
            "edges": pg.graph().n_edges(),
            "seed": cfg.graph_seed(),
            "norm_scale": pg.graph().norm_scale(),
        },
        "signals": spec,
        "noise": cfg.noise,
        "noise_seed": noise_seed,
        "mean_square": graph_unroll::datagen::TARGET_MEAN_SQUARE,
    });
    write(
        &dir.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    info!(
        "wrote graph, {k} {} signals and manifest to {}",
        kind.name(),
        dir.display()
    );
    Ok(())
}

fn cmd_eigen(cfg: &ExperimentConfig, graph: &Path, matrix: EigenMatrix) -> Result<()> {
    let dir = out_dir(cfg)?;
    let g = PreparedGraph::new(load_graph(graph)?)?;
    let basis = match matrix {
        EigenMatrix::Adjacency => adjacency_basis(g.graph())?,
        EigenMatrix::Laplacian => laplacian_basis(g.graph())?,
    };
    let values: String = basis.eigenvalues().iter().map(|v| fmt_f64(*v) + "\n").collect();
    write(&dir.join("eigenvalues.csv"), &values)?;
    write(&dir.join("eigenvectors.csv"), &signals_to_csv(basis.eigenvectors()))?;
    println!(
        "{} eigenvalues, largest {}",
        basis.dim(),
        fmt_f64(basis.eigenvalues()[0])
    );
    Ok(())
}

fn cmd_denoise(
    cfg: &ExperimentConfig,
    graph: &Path,
    input: &Path,
    output: Option<PathBuf>,
    method: Option<&str>,
    clean: Option<&Path>,
    binary: bool,
) -> Result<()> {
    let method: MethodSpec = match method {
        Some(json) => serde_json::from_str(json).context("parsing --method")?,
        None => cfg.methods.first().cloned().context("no method given")?,
    };
    let pg = PreparedGraph::new(load_graph(graph)?)?;
    let t = load_signals(input)?;
    let clean = clean.map(load_signals).transpose()?;
    let d = denoise(&method, &pg, &t, clean.as_ref(), cfg.seed, binary)?;
    let output = match output {
        Some(p) => p,
        None => out_dir(cfg)?.join("denoised.csv"),
    };
    save_signals(&output, &d.output)?;
    if let Some(alpha) = d.alpha {
        println!("alpha {}", fmt_f64(alpha));
    }
    if let Some(c) = &clean {
        let mode = if binary { MetricMode::Binary } else { MetricMode::Real };
        println!("{}", serde_json::to_string(&compute_metrics(&d.output, c, mode)?)?);
    }
    info!("{} output written to {}", method.name(), output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli.global)?;
    match cli.cmd {
        Cmd::Gen { kind, k } => cmd_gen(&cfg, kind, k)?,
        Cmd::Eigen { graph, matrix } => cmd_eigen(&cfg, &graph, matrix)?,
        Cmd::Denoise {
            graph,
            input,
            output,
            method,
            clean,
            binary,
        } => cmd_denoise(
            &cfg,
            &graph,
            &input,
            output,
            method.as_deref(),
            clean.as_deref(),
            binary,
        )?,
        Cmd::Bench => {
            let cfg = ExperimentConfig {
                out_dir: Some(out_dir(&cfg)?),
                ..cfg
            };
            let report = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report.summary_json(&cfg))?);
            return Ok(status(report.failures()));
        }
        Cmd::Converge => {
            let cfg = ExperimentConfig {
                out_dir: Some(out_dir(&cfg)?),
                ..cfg
            };
            let report = run_convergence(&cfg)?;
            match report.history.last() {
                Some(r) => println!(
                    "{} epoch {}: loss {} nmse_to_noisy {:?} nmse_to_clean {:?}",
                    report.method, r.epoch, r.loss, r.nmse_to_noisy, r.nmse_to_clean
                ),
                None => println!("{}: no epochs run", report.method),
            }
        }
        Cmd::Sweep => {
            let cfg = ExperimentConfig {
                out_dir: Some(out_dir(&cfg)?),
                ..cfg
            };
            let report = run_noise_sweep(&cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report.experiment.summary_json(&cfg))?
            );
            if report.baseline_monotone == Some(false) {
                bail!("baseline NMSE does not increase with the noise level");
            }
            return Ok(status(report.experiment.failures()));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn status(failures: usize) -> ExitCode {
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        log::warn!("{failures} rows failed");
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
