use std::path::PathBuf;
use std::process::ExitCode;

use beamid::eval::Method;
use beamid_cli::pipeline::{self, SweepAxis};
use beamid_cli::{CliError, CliResult, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(version, about = "Beam stiffness and damping identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config's out_dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed, overriding the config's seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the true system and write truth, parameter fields and samples
    Generate(Common),
    /// Train one method on the generated samples
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "neuralsi")]
        method: String,
    },
    /// Evaluate trained checkpoints and write metrics and plots
    Eval {
        #[command(flatten)]
        common: Common,
        /// Restrict to one method; default is every trained one
        #[arg(long)]
        method: Option<String>,
    },
    /// Repeat generate, train and eval for NeuralSI over one axis
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    log::info!("config {} (seed {}), output {}", cfg.short_hash(), cfg.seed, cfg.out_dir.display());
    Ok(cfg)
}

fn method(s: &str) -> CliResult<Method> {
    Method::parse(s).map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = load(&common)?;
            let s = pipeline::generate(&cfg)?;
            println!("wrote {} x {} truth field and {} samples to {}", s.rows, s.columns, s.samples, cfg.out_dir.display());
        }
        Command::Train { common, method: m } => {
            let m = method(&m)?;
            let cfg = load(&common)?;
            let s = pipeline::train_method(&cfg, m)?;
            println!("{}: final loss {:.6e} after {} epochs ({:.1} s)", s.method, s.final_loss, s.epochs, s.seconds);
        }
        Command::Eval { common, method: m } => {
            let m = m.as_deref().map(method).transpose()?;
            let cfg = load(&common)?;
            let reports = pipeline::eval(&cfg, m)?;
            println!("{:<9} {:>12} {:>12} {:>12} {:>10}", "method", "interp MAE", "extrap MAE", "peak ratio", "P frechet");
            for r in reports {
                let pf = r.parameters.map_or("-".to_string(), |p| format!("{:.4}", p.p_normalized));
                println!(
                    "{:<9} {:>12.4e} {:>12.4e} {:>12.4e} {:>10}",
                    r.method.tag(),
                    r.interpolation_mae,
                    r.extrapolation_mae,
                    r.peak_error_ratio,
                    pf
                );
            }
        }
        Command::Sweep { common, axis, values } => {
            let cfg = load(&common)?;
            let path = pipeline::sweep(&cfg, axis, &values)?;
            println!("wrote {}", path.display());
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
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
