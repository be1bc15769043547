use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use feduv::config::RunConfig;
use feduv::federation::Method;
use feduv::pipeline;
use feduv::rng::derive_seed;
use feduv::verification::Split;
use feduv::{Error, Result};

#[derive(Parser)]
#[command(
    name = "feduv",
    version,
    about = "Federated user verification with secret codewords"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces every configured seed with one derived from N.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// feduv | feduv_with_neg | softmax | fedaws
    #[arg(long, global = true, value_name = "NAME")]
    method: Option<Method>,
    #[arg(long, global = true, value_name = "N")]
    rounds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic per-user datasets.
    GenData,
    /// Assign base vectors and derive each client's secret codeword.
    GenCodes,
    /// Federated training; writes the model, metrics and checkpoints.
    Train,
    /// Per-user warm-up thresholds from the validation split.
    Calibrate,
    /// ROC curves, summary and plot.
    Evaluate,
    /// Re-render the ROC plot from an existing ROC CSV.
    Plot {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Every stage in order.
    Run,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn effective_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &o.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = o.seed {
        cfg.data.seed = derive_seed(seed, &[1]);
        cfg.code.server_seed = derive_seed(seed, &[2]);
        cfg.code.client_seed = derive_seed(seed, &[3]);
        cfg.model.init_seed = derive_seed(seed, &[4]);
        cfg.federation.seed = derive_seed(seed, &[5]);
    }
    if let Some(method) = o.method {
        cfg.federation.method = method;
    }
    if let Some(rounds) = o.rounds {
        cfg.federation.rounds = rounds;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("FEDUV_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::ConfigInvalid(format!(
            "FEDUV_THREADS must be a positive integer, got '{value}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn print_evaluation(eval: &pipeline::Evaluation) {
    for split in Split::ALL {
        if let Some(s) = eval.summary.split(split) {
            let at = |f: &str| s.tpr_at_fpr.get(f).copied().unwrap_or(f64::NAN);
            println!(
                "{:<13} auc={:.4} tpr@fpr0.01={:.4} tpr@fpr0.05={:.4} tpr@fpr0.1={:.4}",
                split.label(),
                s.auc,
                at("0.01"),
                at("0.05"),
                at("0.1")
            );
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let cfg = effective_config(&cli.overrides)?;
    let layout = pipeline::Layout::new(&cfg.out_dir);
    match cli.command {
        Command::GenData => {
            pipeline::cmd_gen_data(&cfg)?;
            println!("wrote {}", layout.data_dir().display());
        }
        Command::GenCodes => {
            pipeline::cmd_gen_codes(&cfg)?;
            println!("wrote {}", layout.base_vectors().display());
        }
        Command::Train => {
            let run = pipeline::cmd_train(&cfg)?;
            let last = run.reports.last().expect("at least one round");
            println!(
                "trained {} rounds, final mean loss {:.6}, checksum {}",
                run.reports.len(),
                last.mean_loss,
                last.checksum
            );
        }
        Command::Calibrate => {
            let t = pipeline::cmd_calibrate(&cfg)?;
            println!(
                "calibrated {} users, wrote {}",
                t.len(),
                layout.thresholds().display()
            );
        }
        Command::Evaluate => print_evaluation(&pipeline::cmd_evaluate(&cfg)?),
        Command::Plot { output } => {
            let path = pipeline::cmd_plot(&cfg, output.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::Run => print_evaluation(&pipeline::cmd_run(&cfg)?),
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error kind={} msg={}",
                e.kind(),
                e.to_string().replace('\n', " ")
            );
            ExitCode::FAILURE
        }
    }
}
