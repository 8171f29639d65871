mod args;
mod job;
mod resolve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use args::{Cli, Command};
use job::Job;
use resolve::UsageError;

/// Record of one invocation, written before any result file and rewritten
/// when the job finishes.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    command: String,
    argv: Vec<String>,
    /// Resolved job: flags, config file and defaults merged.
    job: Job,
    seeds: Vec<u64>,
    artifacts: Vec<PathBuf>,
    started_unix_ms: u128,
    wall_clock_ms: Option<u128>,
    status: String,
    error: Option<String>,
    summary: Value,
}

fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m)? + "\n";
    std::fs::write(path, text).map_err(|e| mlml_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| mlml_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| mlml_core::Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
        .with_context(|| format!("manifest {}", path.display()))
}

fn run_job(job: Job, jobs: usize) -> Result<()> {
    job.prepare()?;
    let path = job.manifest_path();
    let started = Instant::now();
    let mut manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: job.name().to_string(),
        argv: std::env::args().collect(),
        seeds: job.seeds(),
        artifacts: job.artifacts(),
        started_unix_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        wall_clock_ms: None,
        status: "running".into(),
        error: None,
        summary: Value::Null,
        job,
    };
    write_manifest(&path, &manifest)?;
    let result = manifest.job.execute(jobs);
    manifest.wall_clock_ms = Some(started.elapsed().as_millis());
    match &result {
        Ok(summary) => {
            manifest.status = "ok".into();
            manifest.summary = summary.clone();
        }
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(format!("{e:#}"));
        }
    }
    write_manifest(&path, &manifest)?;
    result?;
    eprintln!("{} done; manifest {}", manifest.command, path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        // Reruns are single-threaded; results do not depend on the thread count.
        Command::Rerun(a) => run_job(read_manifest(&a.manifest)?.job, 1),
        Command::Compare(a) => run_job(resolve::resolve(&cli.command)?, a.seeds.jobs),
        Command::Sweep(a) => run_job(resolve::resolve(&cli.command)?, a.seeds.jobs),
        cmd => run_job(resolve::resolve(cmd)?, 1),
    }
}

/// Error kind and exit code, from the first recognizable cause.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    use mlml_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io { .. } => ("io", 3),
                E::InvalidConfig(_) => ("invalid_config", 4),
                E::Domain(_) => ("domain", 4),
                E::Generation(_) => ("generation", 4),
                E::Parse { .. } | E::Json(_) | E::Csv(_) => ("parse", 5),
                E::Validation { .. } | E::Dimension { .. } => ("validation", 5),
                E::UndefinedMetric(_) => ("undefined_metric", 5),
                E::Diverged { .. } => ("divergence", 6),
            };
        }
        if cause.is::<UsageError>() {
            return ("usage", 2);
        }
        if cause.is::<toml::de::Error>() {
            return ("invalid_config", 4);
        }
        if cause.is::<std::io::Error>() {
            return ("io", 3);
        }
    }
    ("other", 1)
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    let msg = serde_json::to_string(message).unwrap_or_else(|_| "\"\"".into());
    eprintln!("error: kind={kind} exit={code} message={msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    return ExitCode::SUCCESS;
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    return fail("usage", 2, "no subcommand given; run mlml --help");
                }
                _ => {}
            }
            return fail("usage", 2, e.render().to_string().trim_end());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            fail(kind, code, &format!("{e:#}"))
        }
    }
}
