use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use memsnn::events::SynthConfig;
use memsnn::experiment::{convert, run_ablation, run_engram, run_joint, synth, ExperimentConfig};
use memsnn::Result;

#[derive(Parser)]
#[command(
    name = "memsnn",
    version,
    about = "Memory-augmented spiking network experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Spatial,
    Temporal,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every cell of the memory x modality grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare a dual-encoder model against two single-modality models.
    Joint {
        #[arg(long)]
        config: PathBuf,
    },
    /// Analyze the feature spaces of trained cells.
    Engram {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding `<cell>/model.ckpt`, usually `<output_dir>/cells`.
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Convert N-MNIST or EVT files to EVT containers.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic event dataset.
    Synth {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ablate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let s = run_ablation(&cfg)?;
            for r in &s.rows {
                println!(
                    "{} average {:.2}% delta {:+.2}",
                    r.model,
                    100.0 * r.average,
                    100.0 * r.delta
                );
            }
        }
        Command::Joint { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let r = run_joint(&cfg)?;
            for row in [&r.parallel, &r.joint, &r.delta] {
                println!(
                    "{}: visual {:.2} audio {:.2} mean {:.2}",
                    row.label,
                    100.0 * row.visual,
                    100.0 * row.audio,
                    100.0 * row.arithmetic_mean
                );
            }
        }
        Command::Engram { config, checkpoints } => {
            let cfg = ExperimentConfig::load(&config)?;
            let reports = run_engram(&cfg, &checkpoints)?;
            info!("{} feature sets analyzed", reports.len());
        }
        Command::Convert { input, out } => {
            let n = convert(&input, &out)?;
            println!("wrote {n} files to {}", out.display());
        }
        Command::Synth {
            kind,
            out,
            classes,
            samples_per_class,
            seed,
        } => {
            let cfg = match kind {
                Kind::Spatial => SynthConfig::spatial(classes, samples_per_class, seed),
                Kind::Temporal => SynthConfig::temporal(classes, samples_per_class, seed),
            };
            let n = synth(&cfg, &out)?;
            println!("wrote {n} files to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
