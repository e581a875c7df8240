use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spartan::model::ModelConfig;
use spartan::Error;

mod check;
mod run;

/// Build, inspect, verify and train SpaRTAN models.
#[derive(Parser)]
#[command(name = "spartan", version, about)]
struct Cli {
    /// Worker threads for the numeric kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Preset name (spartan-xt, spartan-t, spartan-tiny) or TOML config path.
    #[arg(long, short, default_value = "spartan-xt")]
    config: String,

    /// Dotted override such as `stages.3.conv_type=full`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> spartan::Result<ModelConfig> {
        let mut cfg = ModelConfig::resolve(&self.config)?;
        cfg.apply_overrides(&self.overrides)?;
        eprintln!("# resolved config ({})", self.config);
        for line in cfg.to_toml().lines() {
            eprintln!("#   {line}");
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFormat {
    Archive,
    Dir,
}

#[derive(Subcommand)]
enum Command {
    /// Per-stage structure: output size, embed, channels, blocks, ratio, conv type.
    Describe {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Per-layer parameters, MACs and memory access.
    Costs {
        #[command(flatten)]
        config: ConfigArgs,
        /// Square input resolution (default: the config's).
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Count a MAC as two FLOPs in the summary line.
        #[arg(long)]
        double_flops: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every layer type and a full block (f64).
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a dataset, logging metrics and keeping the best checkpoint.
    Train(run::TrainArgs),
    /// Loss and top-1 accuracy of a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Write the synthetic two-class quadrant dataset.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "archive")]
        format: DataFormat,
    },
}

/// 0 ok, 1 verification failure or internal error, 2 config, 3 data,
/// 4 checkpoint, 5 empty input.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape { .. } => 2,
        Error::Data(_) => 3,
        Error::Checkpoint(_) | Error::CheckpointMismatch { .. } => 4,
        Error::Empty(_) => 5,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> spartan::Result<ExitCode> {
    match cli.command {
        Command::Describe { config } => {
            let cfg = config.resolve()?;
            print!("{}", cfg.describe());
        }
        Command::Costs { config, resolution, format, double_flops, out } => {
            let cfg = config.resolve()?;
            let res = resolution.unwrap_or(cfg.input_resolution[0]);
            let text = run::costs(&cfg, res, matches!(format, Format::Csv), double_flops)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
                }
                None => print!("{text}"),
            }
        }
        Command::Gradcheck { config, tolerance, seed } => {
            let cfg = config.resolve()?;
            if !check::run(&cfg, tolerance, seed)? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Train(args) => run::train(&args)?,
        Command::Eval { config, checkpoint, data, batch_size } => {
            let cfg = config.resolve()?;
            run::eval(&cfg, &checkpoint, &data, batch_size)?;
        }
        Command::SynthData { out, count, size, seed, format } => {
            let ds = spartan::train::Dataset::synthetic_quadrants(count, size, seed);
            match format {
                DataFormat::Archive => ds.save_archive(&out)?,
                DataFormat::Dir => ds.save_dir(&out)?,
            }
            println!("wrote {count} images of {size}x{size} to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 || !spartan::par::set_threads(n) {
            eprintln!("error: cannot use {n} threads");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
