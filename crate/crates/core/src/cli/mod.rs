//! The `fedpews` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 I/O error.

pub mod config;
pub mod output;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::data;
use crate::error::Error;
use crate::federation::run_experiment_on;
use crate::federation::prepare_data;
use crate::metrics::{summarize_seeds, RoundRecord, RunLog};

pub use config::{parse_config, ConfigFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fedpews", version, about = "Federated learning simulator with personalized subnetwork warmup")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every seed of an experiment config and write CSVs, summary and plot.
    Run {
        config: PathBuf,
        /// Run seeds on the rayon pool.
        #[arg(long)]
        parallel: bool,
        /// Write 0 in the elapsed_ms column so CSVs are byte-comparable.
        #[arg(long)]
        no_timing: bool,
    },
    /// Generate a synthetic dataset file.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = data::DEFAULT_CLUSTER_STD)]
        cluster_std: f64,
    },
    /// Summarize run CSVs: one row per directory of seed CSVs.
    Report {
        dir: PathBuf,
        #[arg(long, default_value_t = 99.0)]
        target: f64,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Format(_) => EXIT_IO,
            _ => EXIT_USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

pub struct RunOptions {
    pub parallel: bool,
    pub no_timing: bool,
}

/// Runs all seeds of a config file; returns the logs in seed order.
pub fn run_config(cfg: &ConfigFile, parallel: bool) -> Result<Vec<RunLog>, CliError> {
    let (train, test) = prepare_data(&cfg.experiment)?;
    let run = |seed: &u64| run_experiment_on(&cfg.for_seed(*seed), &train, &test);
    let logs = if parallel {
        cfg.seeds.par_iter().map(run).collect::<Result<Vec<_>, _>>()?
    } else {
        cfg.seeds.iter().map(run).collect::<Result<Vec<_>, _>>()?
    };
    Ok(logs)
}

pub fn write_outputs(cfg: &ConfigFile, logs: &[RunLog], with_timing: bool) -> Result<(), CliError> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    for log in logs {
        let path = out.join(format!("{}.csv", log.config.seed));
        let file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        output::write_csv(BufWriter::new(file), &log.records, with_timing).map_err(|e| io_error(&path, e))?;
    }
    let target = cfg.experiment.target_accuracy;
    let summary = summarize_seeds(logs, target)?;
    let name = cfg.experiment.algorithm.name();
    let text = output::summary_text(name, &cfg.seeds, target, &summary);
    let path = out.join("summary.txt");
    fs::write(&path, text).map_err(|e| io_error(&path, e))?;

    let series: Vec<(String, Vec<RoundRecord>)> = logs
        .iter()
        .map(|l| (format!("{name} seed {}", l.config.seed), l.records.clone()))
        .collect();
    let path = out.join("convergence.svg");
    fs::write(&path, output::convergence_svg(&series, Some(target))).map_err(|e| io_error(&path, e))?;
    Ok(())
}

pub fn cmd_run(path: &Path, opts: &RunOptions) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let cfg = parse_config(&text)?;
    let logs = run_config(&cfg, opts.parallel)?;
    write_outputs(&cfg, &logs, !opts.no_timing)?;
    for log in &logs {
        let last = crate::metrics::final_accuracy(&log.records);
        eprintln!(
            "seed {}: final accuracy {}",
            log.config.seed,
            last.map_or("-".to_string(), output::fmt_sig6)
        );
    }
    Ok(())
}

pub fn cmd_gen_data(n: usize, seed: u64, cluster_std: f64, out: &Path) -> Result<(), CliError> {
    let ds = data::gen_synthetic(n, seed, cluster_std)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let file = fs::File::create(out).map_err(|e| io_error(out, e))?;
    data::write_dataset(BufWriter::new(file), &ds).map_err(|e| match e {
        Error::Io(io) => io_error(out, io),
        other => other.into(),
    })?;
    Ok(())
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

fn load_group(files: &[PathBuf]) -> Result<Vec<Vec<RoundRecord>>, CliError> {
    files
        .iter()
        .map(|p| {
            let f = fs::File::open(p).map_err(|e| io_error(p, e))?;
            output::read_csv(BufReader::new(f)).map_err(|e| CliError {
                code: EXIT_IO,
                message: format!("{}: {e}", p.display()),
            })
        })
        .collect()
}

/// Builds the report table: CSVs directly in `dir` form one group named
/// after `dir`; each subdirectory with CSVs forms a group named after it.
pub fn report(dir: &Path, target: f64) -> Result<String, CliError> {
    if !(target > 0.0 && target <= 100.0) {
        return Err(CliError {
            code: EXIT_USAGE,
            message: format!("target must lie in (0, 100], got {target}"),
        });
    }
    let mut groups: Vec<(String, Vec<PathBuf>)> = Vec::new();
    let own = csv_files(dir)?;
    if !own.is_empty() {
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        groups.push((name, own));
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        let files = csv_files(&sub)?;
        if !files.is_empty() {
            groups.push((sub.file_name().unwrap().to_string_lossy().into_owned(), files));
        }
    }
    if groups.is_empty() {
        return Err(CliError {
            code: EXIT_USAGE,
            message: format!("no run CSVs under {}", dir.display()),
        });
    }
    let mut rows = Vec::new();
    for (name, files) in groups {
        let logs = load_group(&files)?;
        rows.push((name, summarize_seeds(&logs, target)?));
    }
    Ok(output::report_table(&rows, target))
}

pub fn cmd_report(dir: &Path, target: f64) -> Result<(), CliError> {
    let table = report(dir, target)?;
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(table.as_bytes())
        .map_err(|e| io_error(Path::new("<stdout>"), e))
}

pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run {
            config,
            parallel,
            no_timing,
        } => cmd_run(&config, &RunOptions { parallel, no_timing }),
        Command::GenData {
            n,
            seed,
            out,
            cluster_std,
        } => cmd_gen_data(n, seed, cluster_std, &out),
        Command::Report { dir, target } => cmd_report(&dir, target),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}
