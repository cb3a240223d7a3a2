//! `concord` command line: pretrain, finetune, attack, report.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data-format error,
//! 1 anything else. `CONCORD_THREADS` caps the evaluation thread pool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use concord_harness::config::ExperimentConfig;
use concord_harness::pipeline::{self, PipelineError};
use concord_harness::report;

#[derive(Parser)]
#[command(
    name = "concord",
    about = "Train desk-scale networks with pluggable credit-assignment rules and measure adversarial robustness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML key = value).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for checkpoints, records, and plots.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the backbone with the pretraining rule and save the checkpoint.
    Pretrain(Common),
    /// Attach a fresh task head and fine-tune under every requested rule.
    Finetune(Common),
    /// Run the full pipeline and write records.csv and plot.svg.
    Attack(Common),
    /// Rebuild plot.svg (and a console table) from an existing records.csv.
    Report(Common),
}

fn load_config(common: &Common) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Pretrain(common) => {
            let cfg = load_config(&common)?;
            let train_set = pipeline::load_data(&cfg, concord_harness::Split::Train)?;
            let (net, curve) = pipeline::pretrain_stage(&cfg, &common.out_dir, &train_set)?;
            if curve.is_empty() {
                println!(
                    "pretrained checkpoint already present ({} params)",
                    net.param_count()
                );
            } else {
                println!(
                    "pretrained {} params; per-epoch loss: {}",
                    net.param_count(),
                    curve
                        .iter()
                        .map(|l| format!("{l:.4}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                );
            }
            println!("wrote {}", common.out_dir.join("pretrained.ckpt").display());
            Ok(())
        }
        Command::Finetune(common) => {
            let cfg = load_config(&common)?;
            let artifacts = pipeline::prepare(&cfg, &common.out_dir)?;
            for (rule, _) in &artifacts.finetuned {
                println!(
                    "wrote {}",
                    common
                        .out_dir
                        .join(format!("finetuned-{}.ckpt", rule.name()))
                        .display()
                );
            }
            Ok(())
        }
        Command::Attack(common) => {
            let cfg = load_config(&common)?;
            let records = pipeline::run_pipeline(&cfg, &common.out_dir)?;
            print_table(&records);
            let csv_path = common.out_dir.join("records.csv");
            let svg_path = common.out_dir.join("plot.svg");
            report::emit_csv(&records, &csv_path).map_err(io_like)?;
            report::emit_svg_plot(&records, &svg_path).map_err(io_like)?;
            println!("wrote {}", csv_path.display());
            println!("wrote {}", svg_path.display());
            Ok(())
        }
        Command::Report(common) => {
            // The config is not needed to re-plot, but --config keeps the
            // interface uniform and validates early when provided.
            let _ = load_config(&common)?;
            let csv_path = common.out_dir.join("records.csv");
            let records = report::parse_csv(&csv_path).map_err(io_like)?;
            print_table(&records);
            let svg_path = common.out_dir.join("plot.svg");
            report::emit_svg_plot(&records, &svg_path).map_err(io_like)?;
            println!("wrote {}", svg_path.display());
            Ok(())
        }
    }
}

fn io_like(e: report::ReportError) -> PipelineError {
    PipelineError::Io(std::io::Error::other(e.to_string()))
}

fn print_table(records: &[pipeline::RunRecord]) {
    println!(
        "{:<6} {:<9} {:>8} {:>7} {:>7} {:>6}",
        "rule", "attack", "epsilon", "clean", "robust", "n"
    );
    for r in records {
        println!(
            "{:<6} {:<9} {:>8} {:>7.4} {:>7.4} {:>6}",
            r.rule, r.attack, r.epsilon, r.clean, r.robust, r.n_eval
        );
    }
}

fn main() -> ExitCode {
    pipeline::init_thread_pool_from_env();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ PipelineError::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e @ PipelineError::Data(_)) => {
            eprintln!("data error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
