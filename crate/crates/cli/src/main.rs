use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use linkfed_core::harness::{emit_reports, run_experiment};
use linkfed_core::{Error, ErStrategy, ExperimentConfig, Learner, LossKind};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "linkfed", version, about = "Federated learning over error-prone entity resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a cross-validated experiment and write report.json, margins.csv and bounds.json.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    label_col: Option<String>,
    /// Comma-separated anchor feature indices.
    #[arg(long, value_delimiter = ',')]
    anchor: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    shuffle: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    shared: Option<Vec<usize>>,
    #[arg(long)]
    noise_p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// greedy | per-class | learned:K | noisy:P | ideal
    #[arg(long)]
    er: Option<String>,
    /// taylor | boost
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// square | logistic | matsushita
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Evaluate the drift, immunity and loss-gap bounds per fold.
    #[arg(long)]
    bound_audit: bool,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn build_config(args: RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.data {
        cfg.data = v;
    }
    if let Some(v) = args.label_col {
        cfg.label_col = v;
    }
    if args.anchor.is_some() {
        cfg.anchor = args.anchor;
    }
    if args.shuffle.is_some() {
        cfg.shuffle = args.shuffle;
    }
    if let Some(v) = args.shared {
        cfg.shared = v;
    }
    if let Some(v) = args.noise_p {
        cfg.noise_p = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.er {
        cfg.er = v.parse::<ErStrategy>()?;
    }
    if let Some(v) = args.learner {
        cfg.learner = v.parse::<Learner>()?;
    }
    if let Some(v) = args.iters {
        cfg.iters = v;
    }
    if args.gamma.is_some() {
        cfg.gamma = args.gamma;
    }
    if let Some(v) = args.loss {
        cfg.loss = v.parse::<LossKind>()?;
    }
    if let Some(v) = args.folds {
        cfg.folds = v;
    }
    cfg.bound_audit |= args.bound_audit;
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if cfg.data.as_os_str().is_empty() {
        return Err(config_error("no data file given (--data or `data` key)"));
    }
    if cfg.label_col.is_empty() {
        return Err(config_error("no label column given (--label-col or `label_col` key)"));
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), Error> {
    let cfg = build_config(args)?;
    let report = run_experiment(&cfg)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    for path in emit_reports(&report, &out)? {
        eprintln!("wrote {}", path.display());
    }
    println!(
        "{} er={} learner={} mean_test_error={:.4} c_err={:.4}",
        report.dataset, report.er, report.learner, report.mean_test_error, report.mean_class_mismatch_rate
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                ExitCode::from(EXIT_DATA)
            } else {
                ExitCode::from(EXIT_CONFIG)
            }
        }
    }
}
