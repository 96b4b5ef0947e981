//! Command-line pipeline: scene simulation, blur synthesis, double-integral
//! reconstruction, network training, latent queries, and evaluation
//! reports.
//!
//! Exit codes: 2 for configuration/file errors, 3 for numerical failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evdeblur::error::Error;

use commands::{EdiArgs, EvalArgs, QueryArgs};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "evdeblur",
    about = "Continuous-time video recovery from a single blurry image and events",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene into latent frames and simulate its event stream.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_events: PathBuf,
        #[arg(long)]
        out_frames_dir: PathBuf,
    },
    /// Average the central window of simulated frames into a blurry image.
    Blur {
        #[arg(long)]
        frames_dir: PathBuf,
        #[arg(long)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form double-integral reconstruction.
    Edi {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        blur: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Normalized query time; requires --out.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reconstruct at every sidecar timestamp into this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the event threshold from the config.
        #[arg(long)]
        c: Option<f64>,
        /// Grid-search the threshold before reconstructing.
        #[arg(long)]
        estimate_c: bool,
    },
    /// Two-phase training on one or more scenes.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Scene JSON; repeat for a multi-sample dataset.
        #[arg(long, required = true)]
        scene: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode the latent image at an arbitrary normalized time.
    Query {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        eer: Option<PathBuf>,
        #[arg(long)]
        blur: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        t: f64,
        /// Apply the edge-refinement network (requires --eer).
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM report against the latent ground-truth frames.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        frames_dir: PathBuf,
        #[arg(long)]
        blur: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Reconstruction method: "edi" or "ivf".
        #[arg(long)]
        method: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        eer: Option<PathBuf>,
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> evdeblur::Result<()> {
    match cli.command {
        Command::Simulate {
            scene,
            config,
            out_events,
            out_frames_dir,
        } => {
            let cfg = RunConfig::load(&config)?;
            commands::cmd_simulate(&cfg, &scene, &out_events, &out_frames_dir)
        }
        Command::Blur {
            frames_dir,
            window,
            out,
        } => commands::cmd_blur(&frames_dir, window, &out),
        Command::Edi {
            config,
            blur,
            events,
            sidecar,
            t,
            out,
            out_dir,
            c,
            estimate_c,
        } => {
            let cfg = RunConfig::load(&config)?;
            commands::cmd_edi(
                &cfg,
                EdiArgs {
                    blur: &blur,
                    events: &events,
                    sidecar: sidecar.as_deref(),
                    t,
                    out: out.as_deref(),
                    out_dir: out_dir.as_deref(),
                    threshold: c,
                    estimate_threshold: estimate_c,
                },
            )
        }
        Command::Train {
            config,
            scene,
            out_dir,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            commands::cmd_train(&cfg, &scene, &out_dir)
        }
        Command::Query {
            config,
            checkpoint,
            eer,
            blur,
            events,
            sidecar,
            t,
            refine,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            commands::cmd_query(
                &cfg,
                QueryArgs {
                    checkpoint: &checkpoint,
                    eer_checkpoint: eer.as_deref(),
                    blur: &blur,
                    events: &events,
                    sidecar: sidecar.as_deref(),
                    t,
                    refine,
                    out: &out,
                },
            )
        }
        Command::Eval {
            config,
            frames_dir,
            blur,
            sidecar,
            events,
            method,
            checkpoint,
            eer,
            refine,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            commands::cmd_eval(
                &cfg,
                EvalArgs {
                    frames_dir: &frames_dir,
                    blur: &blur,
                    sidecar: &sidecar,
                    events: &events,
                    method,
                    checkpoint: checkpoint.as_deref(),
                    eer_checkpoint: eer.as_deref(),
                    refine,
                    out: &out,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
