use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use massseg::cli;
use massseg::Error;
use std::path::PathBuf;

/// Structured mass segmentation: train, segment, evaluate, synth.
#[derive(Parser)]
#[command(name = "massseg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_center(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected X,Y, got {s:?}"))?;
    let x = x.trim().parse().map_err(|_| format!("bad X in {s:?}"))?;
    let y = y.trim().parse().map_err(|_| format!("bad Y in {s:?}"))?;
    Ok((x, y))
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the manifest's train split.
    Train {
        /// Dataset manifest (TSV: image, mask, center_x, center_y, scale, split).
        #[arg(long)]
        manifest: PathBuf,
        /// Optional key=value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment one annotated image with a trained model.
    Segment {
        #[arg(long)]
        model: PathBuf,
        /// Input image (P5 graymap, 8 or 16 bit).
        #[arg(long)]
        image: PathBuf,
        /// Mass center as X,Y pixel coordinates.
        #[arg(long, value_parser = parse_center)]
        center: (usize, usize),
        /// Mass scale in pixels.
        #[arg(long)]
        scale: f64,
        /// Output mask graymap (0/255) at ROI resolution.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on the manifest's test split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output report path; a structured twin is written at <out>.json.
        #[arg(long)]
        out: PathBuf,
        /// Zero all timing fields for byte-reproducible reports.
        #[arg(long)]
        redact_timing: bool,
    },
    /// Generate a synthetic dataset with ground-truth masks and a manifest.
    Synth {
        /// Number of samples to generate.
        #[arg(long)]
        count: usize,
        /// Samples tagged as the train split (default: two thirds).
        #[arg(long)]
        train_count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> massseg::Result<()> {
    match command {
        Command::Train {
            manifest,
            config,
            out,
        } => {
            cli::cmd_train(&manifest, config.as_deref(), &out)?;
        }
        Command::Segment {
            model,
            image,
            center,
            scale,
            out,
        } => {
            cli::cmd_segment(&model, &image, center, scale, &out)?;
        }
        Command::Evaluate {
            model,
            manifest,
            out,
            redact_timing,
        } => {
            cli::cmd_evaluate(&model, &manifest, &out, redact_timing)?;
        }
        Command::Synth {
            count,
            train_count,
            seed,
            out,
        } => {
            let train = train_count.unwrap_or(count * 2 / 3);
            if train > count {
                return Err(Error::InvalidValue(format!(
                    "train count {train} exceeds total {count}"
                )));
            }
            cli::cmd_synth(count, train, seed, &out)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes; anything else is a
            // usage error.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli.command) {
        Ok(()) => {}
        Err(e @ Error::IterationCap(_)) => {
            eprintln!("error: {e}");
            std::process::exit(3);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
