use std::path::PathBuf;
use std::process::ExitCode;

use apvg::Stage;
use apvg_cli::{cmd_evaluate, cmd_generate, cmd_synth_data, cmd_train, exit_code, resolve_config, GenerateSource};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "apvg", version, about = "Audio-driven performance video generation")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic paired dataset to disk.
    SynthData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage (khp, cvg or fhvg).
    Train {
        #[arg(long, value_parser = parse_stage)]
        stage: Stage,
        /// Dataset directory; the synthetic dataset is used when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory, overriding `checkpoint_dir`.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Overrides the configured number of steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the full pipeline on an audio file or a dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// WAV file to animate.
        #[arg(long, conflicts_with = "data")]
        audio: Option<PathBuf>,
        /// Dataset whose audio is animated, one output folder per sequence.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score generated frames and keypoints against a reference dataset.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        /// Reference dataset; the synthetic dataset is used when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output of `generate`; without it the pipeline runs from `--ckpt`.
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| format!("unknown stage `{s}` (expected khp, cvg or fhvg)"))
}

fn run(cli: Cli) -> apvg::Result<()> {
    let mut cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::SynthData { out } => {
            let m = cmd_synth_data(&cfg, &out)?;
            println!("{}", m.display());
        }
        Command::Train { stage, data, ckpt, steps } => {
            if let Some(c) = ckpt {
                cfg.checkpoint_dir = c;
            }
            let m = cmd_train(&cfg, stage, data.as_deref(), steps)?;
            println!("{}", m.display());
        }
        Command::Generate { out, ckpt, audio, data } => {
            if let Some(c) = ckpt {
                cfg.checkpoint_dir = c;
            }
            let source = match &audio {
                Some(a) => GenerateSource::Audio(a),
                None => GenerateSource::Dataset(data.as_deref()),
            };
            let m = cmd_generate(&cfg, source, &out)?;
            println!("{}", m.display());
        }
        Command::Evaluate { out, data, generated, ckpt } => {
            if let Some(c) = ckpt {
                cfg.checkpoint_dir = c;
            }
            let (path, report) = cmd_evaluate(&cfg, data.as_deref(), generated.as_deref(), &out)?;
            let kd = report.mean.keypoint_distance.map_or("n/a".to_string(), |d| format!("{d:.4}"));
            println!(
                "mean PSNR {:.3} dB, SSIM {:.4}, keypoint distance {kd} ({})",
                report.mean.psnr,
                report.mean.ssim,
                path.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
