use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use herglotz_cli::output::write_csv;
use herglotz_cli::{certify, load_problem, run, CliError, ProblemFile, EXIT_INVARIANT, EXIT_OK};
use serde_json::json;

/// Solve contact (Herglotz) Lagrangian, vakonomic and optimal control
/// problems described in TOML files.
#[derive(Debug, Parser)]
#[command(name = "herglotz", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a problem, write its trajectory as CSV and print a report.
    Run {
        file: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Parse and validate a problem file without solving it.
    Check { file: PathBuf },
    /// Solve a problem and certify it by the first variation of its action.
    Variation {
        file: PathBuf,
        #[command(flatten)]
        opts: Opts,
        /// Seed for the random variation directions.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random directions.
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
}

#[derive(Debug, Args)]
struct Opts {
    /// Override the integration step.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the shooting residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Write the trajectory CSV here (`-` for stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(file: &Path, opts: &Opts) -> Result<ProblemFile, CliError> {
    let mut pf = load_problem(file)?;
    if let Some(dt) = opts.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CliError::Schema(format!("--dt must be positive, got {dt}")));
        }
        pf.solver.dt = dt;
    }
    if let Some(tol) = opts.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(CliError::Schema(format!("--tol must be positive, got {tol}")));
        }
        pf.solver.tol = tol;
    }
    if let Some(out) = &opts.out {
        pf.csv = Some(out.clone());
    }
    Ok(pf)
}

fn write_to(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let wrap = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    if path == Path::new("-") {
        f(&mut io::stdout().lock()).map_err(wrap)
    } else {
        let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
        f(&mut w).map_err(wrap)
    }
}

/// Write the CSV and the report. Without an explicit destination the CSV
/// goes to stdout and the report to stderr.
fn emit(pf: &ProblemFile, out: &herglotz_cli::RunOutput, report: &serde_json::Value) -> Result<(), CliError> {
    let csv = pf.csv.clone().unwrap_or_else(|| PathBuf::from("-"));
    write_to(&csv, |w| write_csv(w, pf.kind, &out.path))?;
    let text = serde_json::to_string_pretty(report).expect("report serialises");
    match &pf.report {
        Some(path) => write_to(path, |w| writeln!(w, "{text}")),
        None if csv == Path::new("-") => {
            eprintln!("{text}");
            Ok(())
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Check { file } => {
            let pf = load_problem(&file)?;
            println!("ok: kind={} n={} m={} k={}", pf.kind.name(), pf.n, pf.m, pf.k);
            Ok(EXIT_OK)
        }
        Command::Run { file, opts } => {
            let pf = load(&file, &opts)?;
            let out = run(&pf)?;
            emit(&pf, &out, &json!(out.report))?;
            Ok(if out.report.all_passed { EXIT_OK } else { EXIT_INVARIANT })
        }
        Command::Variation {
            file,
            opts,
            seed,
            count,
        } => {
            let pf = load(&file, &opts)?;
            let out = run(&pf)?;
            let variation = certify(&pf, &out, seed, count)?;
            let passed = out.report.all_passed && variation.passed;
            emit(&pf, &out, &json!({ "run": out.report, "variation": variation }))?;
            Ok(if passed { EXIT_OK } else { EXIT_INVARIANT })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
