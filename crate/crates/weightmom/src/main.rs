use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weightmom::checkpoint::inspect;
use weightmom::config::ExperimentConfig;
use weightmom::experiment::{resume_experiment, run_experiment, summarize, Summary};
use weightmom::Error;
use weightmom_core::train::Method;

#[derive(Parser)]
#[command(
    name = "weightmom",
    version,
    about = "Momentum-gated sparse training experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured cell (or the one selected by the flags).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restrict the experiment to one target density.
        #[arg(long)]
        density: Option<f64>,
        /// Restrict the experiment to one seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict the experiment to one method (weightmom, oneshot, random, dense).
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (overrides experiment.threads).
        #[arg(long)]
        threads: Option<usize>,
        /// Continue the cell saved in this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Rebuild summary.csv and the degradation plot from a run directory.
    Summarize { dir: PathBuf },
    /// Print the header and tensor manifest of a checkpoint.
    InspectCheckpoint { file: PathBuf },
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method {s:?}"))
}

fn print_summary(s: &Summary) {
    println!(
        "{:<10} {:>8} {:>3} {:>6} {:>10} {:>9} {:>11}",
        "method", "density", "n", "failed", "mean_acc", "std_acc", "degradation"
    );
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for r in &s.rows {
        println!(
            "{:<10} {:>8} {:>3} {:>6} {:>10} {:>9} {:>11}",
            r.method,
            r.density
                .map(|d| d.to_string())
                .unwrap_or_else(|| "1".into()),
            r.n,
            r.failed,
            opt(r.mean_test_acc),
            opt(r.std_test_acc),
            opt(r.degradation)
        );
    }
    for run in s.runs.iter().filter(|r| !r.is_ok()) {
        eprintln!("failed: {} ({})", run.run_id, run.error);
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            density,
            seed,
            method,
            out,
            threads,
            resume,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(d) = density {
                cfg.densities = vec![d];
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(m) = method {
                cfg.methods = vec![m];
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let summary = match resume {
                Some(ck) => {
                    let (rec, summary) = resume_experiment(&cfg, &ck)?;
                    println!("resumed {}: {}", rec.run_id, rec.status);
                    summary
                }
                None => run_experiment(&cfg)?,
            };
            print_summary(&summary);
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Summarize { dir } => print_summary(&summarize(&dir)?),
        Command::InspectCheckpoint { file } => {
            let bytes = std::fs::read(&file).map_err(|e| Error::Io {
                path: file.clone(),
                source: e,
            })?;
            let info = inspect(&bytes)?;
            println!("format version  {}", info.version);
            println!("method          {}", info.method.name());
            println!("seed            {}", info.seed);
            println!("target density  {}", info.target_density);
            println!("next epoch      {}", info.next_epoch);
            println!("optimizer step  {}", info.optimizer_step);
            println!("input shape     {:?}", info.input_shape);
            let names: Vec<&str> = info.layers.iter().map(|l| l.name()).collect();
            println!("layers          {}", names.join(" "));
            if let Some(n) = info.history_epochs {
                println!("history epochs  {n}");
            }
            println!("arrays:");
            for e in &info.manifest {
                println!("  {:<24} {:<5} {:?}", e.name, e.dtype.name(), e.shape);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
