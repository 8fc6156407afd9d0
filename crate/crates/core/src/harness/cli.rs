use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::config::{ExperimentConfig, Method};
use super::report::{dump_rounds, write_csv};
use super::runner::{run_experiment, ExperimentReport};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "aflora", version, about = "Federated LoRA simulator with heterogeneous client ranks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write per-round metrics as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-round JSON dumps.
        #[arg(long)]
        dump_rounds: Option<PathBuf>,
    },
    /// Run several methods on the same config and seed.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(reports: &[&ExperimentReport], out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_csv(reports, File::create(path)?)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_csv(reports, &mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, method, rounds, seed, threads, out, dump_rounds: dump } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            if out.is_some() {
                cfg.out = out;
            }
            if dump.is_some() {
                cfg.dump_rounds = dump;
            }
            let report = run_experiment(&cfg)?;
            if let Some(dir) = &cfg.dump_rounds {
                dump_rounds(&report, dir)?;
            }
            emit(&[&report], cfg.out.as_ref())
        }
        Command::Compare { config, methods, out } => {
            let base = ExperimentConfig::load(&config)?;
            // Validate every variant before running any of them.
            let cfgs: Vec<ExperimentConfig> =
                methods.iter().map(|&method| ExperimentConfig { method, ..base.clone() }).collect();
            for cfg in &cfgs {
                cfg.validate()?;
            }
            let reports = cfgs.iter().map(run_experiment).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&ExperimentReport> = reports.iter().collect();
            emit(&refs, out.as_ref().or(base.out.as_ref()))
        }
    }
}

/// Parses `args`, runs, and maps the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
