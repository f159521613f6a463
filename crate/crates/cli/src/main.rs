//! `univcode`: config-driven batch runs of universal channel coding experiments.
//!
//! Exit status: 0 success, 1 I/O failure, 2 configuration error, 3 numeric
//! failure, 4 the experiment ran but its built-in check failed.

mod config;
mod experiments;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;
use univcode_core::Error;

use config::Config;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "univcode", version, about = "Universal channel coding experiments")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out` in the config; default `results`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write CSV, JSON and a manifest.
    Run { path: PathBuf },
    /// Check a config without running it; prints one diagnostic per line.
    Validate { path: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

/// Errors that a better config would have avoided map to the config code.
fn classify(stage: &str, e: Error) -> Failure {
    let code = match e {
        Error::InvalidArgument(_)
        | Error::OutsideParameterSet { .. }
        | Error::NotInterior { .. }
        | Error::CapExceeded { .. }
        | Error::CodebookTooLarge { .. }
        | Error::IncompatiblePrior { .. }
        | Error::Unsupported(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    };
    Failure {
        code,
        message: format!("{stage}: {e}"),
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<(Config, toml::Table), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let mut cfg = Config::parse(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let mut echo: toml::Table = text.parse().map_err(|e: toml::de::Error| Failure::config(e.message().to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
        echo.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    Ok((cfg, echo))
}

fn validate(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let (cfg, _) = load(path, cli.seed)?;
    if let Err(diags) = config::prepare(&cfg) {
        for d in &diags {
            println!("{d}");
        }
        return Err(Failure::config(format!("{} diagnostic(s)", diags.len())));
    }
    Ok(())
}

fn run(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut stages = Vec::new();
    let mut stage = |name: &str, t: Instant| stages.push(json!({ "stage": name, "seconds": t.elapsed().as_secs_f64() }));

    let t = Instant::now();
    let (cfg, echo) = load(path, cli.seed)?;
    let plan = config::prepare(&cfg).map_err(|d| Failure::config(d.join("\n")))?;
    stage("configure", t);

    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Failure::config("--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::config(format!("worker pool: {e}")))?;
    }
    let workers = rayon::current_num_threads();

    let t = Instant::now();
    let kind = cfg.kind.as_str();
    let report = experiments::execute(&plan).map_err(|e| classify(&format!("{kind} computation"), e))?;
    stage("compute", t);

    // Everything is rendered in memory first; nothing touches disk on failure.
    let t = Instant::now();
    let name = cfg.name();
    let summary = json!({
        "name": name,
        "kind": kind,
        "seed": cfg.seed,
        "result": report.result,
        "check_failure": report.check_failure,
    });
    let mut files = vec![
        (format!("{name}.csv"), report.csv),
        (format!("{name}.json"), output::to_json(&summary)),
    ];
    for (suffix, body) in report.extra {
        files.push((format!("{name}.{suffix}"), body));
    }
    stage("render", t);

    let t = Instant::now();
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("results"));
    std::fs::create_dir_all(&out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    let mut digests = serde_json::Map::new();
    for (file, body) in &files {
        output::write_atomic(&out.join(file), body.as_bytes())
            .map_err(|e| Failure::io(format!("writing {file}: {e}")))?;
        digests.insert(file.clone(), json!(output::sha256_hex(body.as_bytes())));
    }
    stage("write", t);

    let config_text = std::fs::read(path).unwrap_or_default();
    let manifest = json!({
        "name": name,
        "kind": kind,
        "version": env!("CARGO_PKG_VERSION"),
        "config": echo,
        "config_sha256": output::sha256_hex(&config_text),
        "seed": cfg.seed,
        "workers": workers,
        "started_unix": started_unix,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
        "stages": stages,
        "outputs": digests,
        "status": if report.check_failure.is_some() { "check-failed" } else { "ok" },
    });
    output::write_atomic(&out.join("manifest.json"), output::to_json(&manifest).as_bytes())
        .map_err(|e| Failure::io(format!("writing manifest.json: {e}")))?;
    eprintln!("wrote {} files to {}", files.len() + 1, out.display());

    match report.check_failure {
        Some(msg) => Err(Failure {
            code: EXIT_CHECK,
            message: format!("check failed: {msg}"),
        }),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { path } => run(&cli, path),
        Command::Validate { path } => validate(&cli, path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
