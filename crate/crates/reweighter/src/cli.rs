//! `reweighter gen | run | serve | export`.

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reweighter_core::dataset::{generate, DatasetGenConfig};
use reweighter_core::experiment::{influence_checkpoint, run, ExperimentConfig, Mode};
use reweighter_core::influence::{build_graph_split, train_model, GradientDot, DEFAULT_FOLDS};
use reweighter_core::quality::SolverConfig;
use reweighter_core::session::{Session, SessionConfig, DRAG_GAMMA};
use serde::Serialize;

use crate::io::{self, LoadMode};
use crate::server::{self, AppState};

#[derive(Parser, Debug)]
#[command(name = "reweighter", version, about = "Interactive sample reweighting workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic noisy, imbalanced dataset.
    Gen(GenArgs),
    /// Train one pipeline and print its metrics as JSON.
    Run(RunArgs),
    /// Serve the session API over HTTP.
    Serve(ServeArgs),
    /// Write the influence matrix (CSV + JSON sidecar) and the adjustment log.
    Export(ExportArgs),
}

fn ratio(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, 1), got {v}"))
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Training samples of the largest class.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Fraction of mislabeled training samples.
    #[arg(long, default_value_t = 0.0, value_parser = ratio)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.2, value_parser = ratio)]
    pub val_noise: f64,
    /// Largest-to-smallest class ratio.
    #[arg(long, default_value_t = 1.0)]
    pub imbalance: f64,
    #[arg(long, default_value_t = 10)]
    pub val_per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Distance between neighbouring class means.
    #[arg(long, default_value_t = 3.0)]
    pub sep: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub init_step: Option<f64>,
}

impl SolverArgs {
    fn apply(&self, mut s: SolverConfig) -> SolverConfig {
        if let Some(t) = self.tol {
            s.tol = t;
        }
        if let Some(n) = self.max_iters {
            s.max_iters = n;
        }
        if let Some(h) = self.init_step {
            s.init_step = h;
        }
        s
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Uniform,
    Reweight,
    Improve,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Uniform => Mode::Uniform,
            ModeArg::Reweight => Mode::Reweight,
            ModeArg::Improve => Mode::Improve,
        }
    }
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Seed of the classifier's training.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).multiple(true).args(["data", "session"]))]
pub struct ServeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Resume from a saved session file.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Influence CSV (with its JSON sidecar) to use instead of computing one.
    #[arg(long, requires = "data")]
    pub influence: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Directory served under /ui/.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    /// Relative drag step.
    #[arg(long, default_value_t = DRAG_GAMMA)]
    pub gamma: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["data", "session"]))]
pub struct ExportArgs {
    /// Dataset to compute the influence graph from.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Session whose current graph is exported.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Influence CSV path; the sidecar goes next to it with a .json extension.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
    /// Adjustment log (JSON lines), only with --session.
    #[arg(long, requires = "session")]
    pub log: Option<PathBuf>,
}

/// Metrics printed by `run`, in a fixed field order.
#[derive(Serialize, Debug)]
pub struct Metrics {
    pub mode: &'static str,
    pub seed: u64,
    pub test_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_auc: Option<f64>,
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

/// Parses `std::env::args` and runs the command; returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> CliResult {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn cmd_gen(a: GenArgs) -> CliResult {
    let config = DatasetGenConfig {
        num_classes: a.classes,
        per_class: a.per_class,
        noise_ratio: a.noise,
        imbalance_factor: a.imbalance,
        val_per_class: a.val_per_class,
        val_noise_ratio: a.val_noise,
        test_per_class: a.test_per_class,
        feature_dim: a.dim,
        class_separation: a.sep,
        seed: a.seed,
    };
    let ds = generate(&config)?;
    io::save_dataset(&ds, &a.output)?;
    Ok(())
}

pub fn run_metrics(a: &RunArgs) -> Result<Metrics, Box<dyn std::error::Error>> {
    let ds = io::load_dataset(&a.data)?;
    let mut config = ExperimentConfig::default();
    config.training.seed = a.seed;
    if let Some(e) = a.epochs {
        config.training.epochs = e;
    }
    config.solver = a.solver.apply(config.solver);
    let mode = Mode::from(a.mode);
    let out = run(&ds, mode, &config)?;
    Ok(Metrics {
        mode: mode.name(),
        seed: a.seed,
        test_accuracy: out.test_accuracy,
        per_class_accuracy: out.per_class_accuracy,
        noise_auc: out.noise_auc,
    })
}

fn cmd_run(a: RunArgs) -> CliResult {
    let metrics = run_metrics(&a)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

fn session_config(gamma: f64, solver: &SolverArgs) -> SessionConfig {
    let mut c = SessionConfig::default();
    c.gamma = gamma;
    c.solver = solver.apply(c.solver);
    c
}

pub fn open_session(a: &ServeArgs) -> Result<Session, Box<dyn std::error::Error>> {
    if let Some(path) = &a.session {
        return Ok(io::load_session(path, LoadMode::Restore)?);
    }
    let data = a.data.as_ref().ok_or("either --data or --session is required")?;
    let ds = io::load_dataset(data)?;
    let config = session_config(a.gamma, &a.solver);
    Ok(match &a.influence {
        Some(csv) => Session::from_graph(ds, io::import_influence(csv)?, config)?,
        None => Session::new(ds, config)?,
    })
}

fn cmd_serve(a: ServeArgs) -> CliResult {
    let session = open_session(&a)?;
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| format!("cannot bind {addr}: {e}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, server::router(AppState::new(session), a.ui_dir)).await?;
        Ok(())
    })
}

fn cmd_export(a: ExportArgs) -> CliResult {
    if let Some(path) = &a.session {
        let s = io::load_session(path, LoadMode::Restore)?;
        io::export_influence(&s.state.graph, &a.output)?;
        if let Some(log) = &a.log {
            io::save_log(&s.log, log)?;
        }
        return Ok(());
    }
    let data = a.data.as_ref().ok_or("either --data or --session is required")?;
    let ds = io::load_dataset(data)?;
    let config = ExperimentConfig::default();
    let base = train_model(&ds, None, &config.training)?;
    let checkpoint = influence_checkpoint(&ds, &config.training, config.influence_epochs)?;
    let graph = build_graph_split(&GradientDot, &checkpoint, &base, &ds, None, DEFAULT_FOLDS)?;
    io::export_influence(&graph, &a.output)?;
    Ok(())
}
