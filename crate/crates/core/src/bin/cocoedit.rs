//! Command-line surface: masked-consistency evaluation, score filtering,
//! correlation reports, mask dilation, and toy training.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cocoedit::cli::{
    cmd_corr, cmd_dilate, cmd_eval, cmd_filter, cmd_train, thread_cap, CliError,
};
use cocoedit::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "cocoedit",
    about = "Masked-consistency evaluation and region-regularized toy training for image editing",
    version
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON config document with sections {train, nft, rewards, metrics, task}.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Force serial, fixed-order execution for bitwise replays.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Primary output path (meaning depends on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate masked PSNR/SSIM over a manifest of (input, edited, mask) triplets.
    Eval {
        /// JSON-lines manifest: {"id", "input", "edited", "mask", "edit_type"?}.
        manifest: PathBuf,
        /// Keep going and exit 0 even if some samples fail.
        #[arg(long)]
        skip_errors: bool,
    },
    /// Retain scores strictly above a threshold and report the distribution.
    Filter {
        /// JSON-lines score file: {"id", "score"} on the 0-10 rubric.
        scores: PathBuf,
        /// Strict retention threshold.
        #[arg(long, default_value_t = cocoedit::cli::DEFAULT_FILTER_THRESHOLD)]
        threshold: f64,
        /// Optional CSV path for the histogram bins.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Pearson correlation between two score files joined on id.
    Corr {
        scores_a: PathBuf,
        scores_b: PathBuf,
    },
    /// Square-dilate a PGM edit mask.
    Dilate {
        mask_in: PathBuf,
        mask_out: PathBuf,
        /// Chebyshev dilation radius in pixels.
        #[arg(long, default_value_t = 2)]
        radius: usize,
    },
    /// Run the group-relative training loop on the toy editing task.
    Train {
        /// Config path (alternative to --config).
        config_path: Option<PathBuf>,
        /// Dotted-key overrides, e.g. --set train.iterations=50 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Metrics log path (default <out>/metrics.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Checkpoint path (default <out>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn metric_config_from(global: &GlobalArgs) -> Result<cocoedit::MetricConfig, CliError> {
    match &global.config {
        Some(path) => Ok(RunConfig::from_path(path)
            .map_err(CliError::from)?
            .metric_config()?),
        None => Ok(cocoedit::MetricConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let global = &cli.global;
    match cli.command {
        Command::Eval {
            manifest,
            skip_errors,
        } => {
            let cfg = metric_config_from(global)?;
            let out = global
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("eval_report.csv"));
            let threads = if global.deterministic { 1 } else { thread_cap() };
            let report = cmd_eval(&manifest, &cfg, &out, skip_errors, threads)?;
            for agg in &report.aggregates {
                println!(
                    "{}: n={} psnr_db={:.6} psnr_norm={:.6} ssim={:.6}",
                    agg.group, agg.count, agg.psnr_db, agg.psnr_norm, agg.ssim
                );
            }
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Filter {
            scores,
            threshold,
            histogram,
        } => {
            let out = global
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("retained.jsonl"));
            let outcome = cmd_filter(&scores, threshold, &out, histogram.as_deref())?;
            for bin in &outcome.histogram {
                println!("{} {}", bin.label, bin.count);
            }
            println!(
                "retained {} of {} ids (score > {threshold}) -> {}",
                outcome.retained.len(),
                outcome.retained.len() + outcome.rejected.len(),
                out.display()
            );
            Ok(())
        }
        Command::Corr { scores_a, scores_b } => {
            let r = cmd_corr(&scores_a, &scores_b, global.out.as_deref())?;
            println!("pearson_r={r:.6}");
            if let Some(out) = &global.out {
                println!("pairs written to {}", out.display());
            }
            Ok(())
        }
        Command::Dilate {
            mask_in,
            mask_out,
            radius,
        } => {
            cmd_dilate(&mask_in, radius, &mask_out)?;
            println!("dilated mask (radius {radius}) written to {}", mask_out.display());
            Ok(())
        }
        Command::Train {
            config_path,
            overrides,
            log,
            checkpoint,
        } => {
            let config = config_path
                .or_else(|| global.config.clone())
                .ok_or_else(|| {
                    CliError::Usage("train needs a config path (positional or --config)".into())
                })?;
            let mut all_overrides = overrides;
            if let Some(seed) = global.seed {
                all_overrides.push(format!("train.seed={seed}"));
            }
            if global.deterministic {
                all_overrides.push("train.deterministic=true".to_string());
            }
            let out_dir = global.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let log_path = log.unwrap_or_else(|| out_dir.join("metrics.jsonl"));
            let checkpoint_path = checkpoint.unwrap_or_else(|| out_dir.join("checkpoint.json"));
            let summary = cmd_train(&config, &all_overrides, &log_path, &checkpoint_path)?;
            if let (Some(first), Some(last)) = (
                summary.first_mean_raw_reward,
                summary.final_mean_raw_reward,
            ) {
                println!(
                    "trained {} iterations: mean_raw_reward {first:.6} -> {last:.6}",
                    summary.iterations
                );
            } else {
                println!("trained 0 iterations (initial policy checkpointed)");
            }
            println!("log: {}", summary.log_path.display());
            println!("checkpoint: {}", summary.checkpoint_path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code conventions differ; usage problems are 1
            // here, and --help/--version are success.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
