use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lenc::harness::{report_dir, run_experiment, sweep, ExperimentConfig, SweepAxis};

#[derive(Parser)]
#[command(name = "lenc", about = "Run node-community education experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv, trace.log and reports.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat an experiment over axis values and seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// stream_size, lambda, node_count or cycle_count
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a run or sweep output directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => ExperimentConfig::load(&config)
            .and_then(|cfg| run_experiment(&cfg))
            .and_then(|o| {
                o.write(&out)?;
                report_dir(&out)
            }),
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => ExperimentConfig::load(&config).and_then(|cfg| {
            let axis: SweepAxis = axis.parse()?;
            let s = sweep(&cfg, axis, &values, &seeds)?;
            s.write(&out)?;
            report_dir(&out)
        }),
        Command::Report { input } => report_dir(&input),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
