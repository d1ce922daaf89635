use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use motionvid_cli::ablate::{ablate, Axis};
use motionvid_cli::evaluate::evaluate;
use motionvid_cli::pipeline::{
    extract_motions, generate, generate_long, long_mode, synth_data, train_pairs, train_sequencer_stage,
};
use motionvid_cli::{CliError, CliResult, Codes, Layout, PipelineConfig};

#[derive(Parser)]
#[command(name = "motionvid", version, about = "Desk-scale motion-space video generation pipeline")]
struct Cli {
    /// TOML pipeline config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root holding one directory per stage.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Replace an existing stage directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LongMode {
    Interpolate,
    Subsampled,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Discriminators,
    #[value(alias = "interval_k")]
    IntervalK,
    #[value(alias = "motion_codes")]
    MotionCodes,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic video corpus.
    SynthData,
    /// Train the image-pair GAN on the corpus.
    TrainPairs {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Extract backward and forward motion codes from the pair generator.
    ExtractMotions {
        /// Random unit codes shaped like the computed basis.
        #[arg(long)]
        random: bool,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Train the latent sequencer against the frozen generator.
    TrainSequencer {
        /// Train on the random-code basis.
        #[arg(long)]
        random: bool,
        #[arg(long)]
        epochs: Option<usize>,
        /// Keep every `stride`-th real frame (for the subsampled long mode).
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Write generated videos as frame directories.
    Generate {
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long)]
        gif: bool,
        #[arg(long)]
        random: bool,
    },
    /// Write long videos from a short-clip sequencer.
    GenerateLong {
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, value_enum, default_value = "interpolate")]
        mode: LongMode,
        #[arg(long)]
        gif: bool,
        #[arg(long)]
        random: bool,
    },
    /// Score generated videos against the corpus.
    Evaluate {
        #[arg(long)]
        samples: Option<usize>,
        /// Also write per-video scores.
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        random: bool,
    },
    /// Train and score variants along one axis.
    Ablate {
        #[arg(long, value_enum)]
        axis: AxisArg,
    },
}

fn codes(random: bool) -> Codes {
    if random {
        Codes::Random
    } else {
        Codes::Computed
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let layout = Layout::new(&cli.out);
    let seed = cli.seed;
    let force = cli.force;
    match &cli.command {
        Command::SynthData => {
            if let Some(s) = seed {
                cfg.corpus.seed = s;
            }
        }
        Command::TrainPairs { k, steps } => {
            cfg.pairgan.k = k.unwrap_or(cfg.pairgan.k);
            cfg.pairgan.steps = steps.unwrap_or(cfg.pairgan.steps);
            if let Some(s) = seed {
                cfg.pairgan.seed = s;
            }
        }
        Command::ExtractMotions { random, m } => {
            cfg.motion.m = m.unwrap_or(cfg.motion.m);
            if let Some(s) = seed {
                if *random {
                    cfg.eval.random_code_seed = s;
                } else {
                    cfg.motion.anchor_seed = s;
                }
            }
        }
        Command::TrainSequencer { epochs, stride, .. } => {
            cfg.sequencer.epochs = epochs.unwrap_or(cfg.sequencer.epochs);
            cfg.sequencer.stride = stride.unwrap_or(cfg.sequencer.stride);
            if let Some(s) = seed {
                cfg.sequencer.seed = s;
            }
        }
        Command::GenerateLong { frames, .. } => {
            cfg.eval.long_frames = frames.unwrap_or(cfg.eval.long_frames);
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
        }
        Command::Evaluate { samples, .. } => {
            cfg.eval.samples = samples.unwrap_or(cfg.eval.samples);
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
        }
        Command::Generate { .. } | Command::Ablate { .. } => {
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
        }
    }
    cfg.validate()?;
    log::info!("resolved config:\n{}", cfg.to_toml());
    match cli.command {
        Command::SynthData => {
            synth_data(&cfg, &layout, force)?;
        }
        Command::TrainPairs { .. } => {
            train_pairs(&cfg, &layout, force)?;
        }
        Command::ExtractMotions { random, .. } => {
            extract_motions(&cfg, &layout, codes(random), force)?;
        }
        Command::TrainSequencer { random, .. } => {
            train_sequencer_stage(&cfg, &layout, codes(random), force)?;
        }
        Command::Generate { count, gif, random } => {
            generate(&cfg, &layout, codes(random), count, gif, force)?;
        }
        Command::GenerateLong { count, mode, gif, random, .. } => {
            let mode = long_mode(&cfg, matches!(mode, LongMode::Subsampled));
            generate_long(&cfg, &layout, codes(random), mode, count, gif, force)?;
        }
        Command::Evaluate { csv, random, .. } => {
            evaluate(&cfg, &layout, codes(random), csv, force)?;
        }
        Command::Ablate { axis } => {
            let axis = match axis {
                AxisArg::Discriminators => Axis::Discriminators,
                AxisArg::IntervalK => Axis::IntervalK,
                AxisArg::MotionCodes => Axis::MotionCodes,
            };
            let report = ablate(&cfg, &layout, axis, force)?;
            println!("{}", serde_json::to_string_pretty(&report.rows).map_err(|e| CliError::Core(e.into()))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
