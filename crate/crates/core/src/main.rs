use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedcef::harness::{compare_runs, read_metrics_file, run_experiment, sweep, write_metrics_file};
use fedcef::{parse_config, Error, Result};

#[derive(Parser)]
#[command(
    name = "fedcef",
    version,
    about = "Compressed proximal federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output path; defaults to the config's `output` key.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the config once per value of a dotted key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// e.g. `hyper.alpha` or `compressor.ratio`
        #[arg(long)]
        key: String,
        /// Comma-separated values in TOML syntax.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print two metrics files side by side.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Objective level for the bytes-to-threshold summary.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn read(path: &PathBuf) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = parse_config(&read(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.or_else(|| cfg.output.clone()).ok_or_else(|| {
                Error::Config("no output path: pass --out or set `output`".into())
            })?;
            let exp = run_experiment(&cfg)?;
            write_metrics_file(&exp, &out)?;
            if let Some(last) = exp.output.series.last() {
                println!(
                    "wrote {} ({} rounds, F = {:.6e}, ||G||^2 = {:.3e})",
                    out.display(),
                    last.round,
                    last.objective,
                    last.prox_grad_sq
                );
            }
        }
        Command::Sweep {
            config,
            key,
            values,
            out_dir,
        } => {
            for p in sweep(&read(&config)?, &key, &values, &out_dir)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Compare { a, b, threshold } => {
            let cmp = compare_runs(&read_metrics_file(&a)?, &read_metrics_file(&b)?, threshold)?;
            print!("{cmp}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
