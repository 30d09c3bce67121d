//! helixlab: runs one numerical experiment from a TOML configuration and
//! writes its reports plus a manifest to the output directory.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 validation failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;

use config::{Command, ConfigError, RunConfig};
use output::Sink;

#[derive(Parser, Debug)]
#[command(name = "helixlab", version, about = "Helical vortex filament laboratory")]
struct Cli {
    /// Experiment to run; may instead be set as `command` in the config.
    #[arg(value_enum)]
    command: Option<Command>,
    /// TOML configuration; every key has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted key=value override applied on top of the config, e.g. grid.n=513.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

const THREADS_VAR: &str = "HELIXLAB_THREADS";

#[derive(Serialize)]
struct ErrorPayload {
    kind: String,
    message: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    threads: usize,
    command: Command,
    config_hash: String,
    config: &'a RunConfig,
    status: &'static str,
    summary: String,
    artifacts: Vec<String>,
    wall_time_seconds: f64,
}

fn fail_validation(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("helixlab: {msg}");
    ExitCode::from(2)
}

fn error_kind(e: &helix_core::Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| c == '(' || c == ' ' || c == '{').next().unwrap_or("Error").to_string()
}

fn main() -> ExitCode {
    let started = Instant::now();
    let cli = Cli::parse();

    if let Ok(v) = std::env::var(THREADS_VAR) {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = helix_core::par::init_threads(n) {
                    return fail_validation(e);
                }
            }
            _ => return fail_validation(format!("{THREADS_VAR} must be a positive integer, got {v:?}")),
        }
    }

    let (source, origin) = match &cli.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(s) => (s, p.display().to_string()),
            Err(e) => return fail_validation(format!("cannot read {}: {e}", p.display())),
        },
        None => (String::new(), "<defaults>".to_string()),
    };
    let loaded = match config::load(&source, &origin, &cli.overrides) {
        Ok(l) => l,
        Err(e) => return fail_validation(e),
    };
    let cmd = match (cli.command, loaded.config.command) {
        (Some(a), Some(b)) if a != b => {
            return fail_validation(ConfigError::Invalid {
                origin: origin.clone(),
                key: "command".into(),
                message: format!("config says {b:?} but the command line says {a:?}"),
            })
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return fail_validation("no command given on the command line or in the config"),
    };
    if let Err(e) = loaded.validate(cmd) {
        return fail_validation(e);
    }
    let mut cfg = loaded.config.clone();
    cfg.command = Some(cmd);
    if let Some(o) = &cli.out {
        cfg.output.dir = o.display().to_string();
    }

    let mut sink = match Sink::new(std::path::Path::new(&cfg.output.dir)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("helixlab: cannot create {}: {e}", cfg.output.dir);
            return ExitCode::from(1);
        }
    };
    // the hash covers the resolved configuration minus where it is written
    let mut hashed = cfg.clone();
    hashed.output.dir = String::new();
    let config_hash = output::sha256_hex(output::to_json(&hashed).as_bytes());

    let result = commands::run(cmd, &cfg, &mut sink);
    let (code, status, summary) = match &result {
        Ok(o) if o.ok => (0, "ok", o.summary.clone()),
        Ok(o) => (1, "numerical_failure", o.summary.clone()),
        Err(e) => {
            let payload = ErrorPayload { kind: error_kind(e), message: e.to_string() };
            let _ = sink.json("error.json", &payload);
            eprintln!("helixlab: {}", output::to_json(&payload).trim_end());
            if e.is_validation() {
                (2, "validation_failure", e.to_string())
            } else {
                (1, "numerical_failure", e.to_string())
            }
        }
    };
    let manifest = Manifest {
        tool: "helixlab",
        version: env!("CARGO_PKG_VERSION"),
        core_version: helix_core::VERSION,
        threads: helix_core::par::threads(),
        command: cmd,
        config_hash,
        config: &cfg,
        status,
        summary: summary.clone(),
        artifacts: sink.written.clone(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    if let Err(e) = std::fs::write(sink.dir.join("manifest.json"), output::to_json(&manifest)) {
        eprintln!("helixlab: cannot write manifest: {e}");
        return ExitCode::from(1);
    }
    println!("{cmd:?}: {status}: {summary}");
    ExitCode::from(code)
}
