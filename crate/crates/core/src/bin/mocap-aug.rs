use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mocap_augment::pipeline::{self, Pipeline};
use mocap_augment::Error;

#[derive(Parser)]
#[command(name = "mocap-aug", version, about = "Augment, correct, debias and score BVH motion corpora")]
struct Cli {
    /// Pipeline config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overrides the config
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Only log errors
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// IK and latent synthesis of the training split
    Augment,
    /// Track motions with the PD / PD-residual controller
    Correct {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fit a framewise debias model on pairs and apply it
    Debias {
        /// Directory with biased/ and unbiased/ subdirectories
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Minimum DTW and MMD of candidates against a test set
    Evaluate {
        /// Test motions (default: the corpus test split)
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Plausibility diagnostics
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Resample to a new frame rate
    Resample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        hz: f64,
    },
}

fn is_config_error(e: &Error) -> bool {
    match e {
        Error::Config(_) => true,
        Error::File { source, .. } => is_config_error(source),
        _ => false,
    }
}

fn run(cli: Cli) -> Result<String, Error> {
    let p = Pipeline::new(cli.config.as_deref(), cli.seed, cli.out)?;
    let out = p.out_dir.display().to_string();
    Ok(match cli.command {
        Command::Augment => {
            let m = pipeline::augment(&p)?;
            format!(
                "wrote {} motions to {out}/augment ({} failed)",
                m.outputs.len(),
                m.failures.len()
            )
        }
        Command::Correct { input } => {
            let r = pipeline::correct(&p, &input)?;
            let failed = r.motions.iter().filter(|m| m.row.status != "ok").count();
            format!("corrected {} motions into {out}/correct ({failed} failed)", r.motions.len() - failed)
        }
        Command::Debias { pairs, input } => {
            let r = pipeline::debias(&p, &pairs, &input)?;
            format!("debiased {} motions into {out}/debias", r.outputs.len())
        }
        Command::Evaluate { test, candidates } => {
            let r = pipeline::evaluate(&p, test.as_deref(), &candidates)?;
            format!("min_dtw {:.6} mmd {:.6}", r.min_dtw, r.mmd)
        }
        Command::Validate { input } => {
            let r = pipeline::validate(&p, &input)?;
            let flagged = r.iter().filter(|e| !e.diagnostics.is_empty()).count();
            format!("{flagged} of {} motions flagged", r.len())
        }
        Command::Resample { input, hz } => {
            let r = pipeline::resample(&p, &input, hz)?;
            format!("resampled {} motions into {out}/resample", r.len())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::error!("{e}");
            return ExitCode::from(1);
        }
    }
    let quiet = cli.quiet;
    match run(cli) {
        Ok(summary) => {
            if !quiet {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
