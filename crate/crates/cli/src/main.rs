//! `biaspot`: command-line front end for biaspot-core.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when a
//! computation diverged.

mod args;
mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, ExperimentCommand};
use manifest::{Outputs, RunManifest};

/// A problem with the invocation itself.
#[derive(Debug)]
pub struct UsageError(pub String);

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] biaspot_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e.0)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(biaspot_core::Error::Numeric(_) | biaspot_core::Error::Experiment(_)) => 2,
            _ => 1,
        }
    }
}

/// What a finished command reports back for the manifest.
pub struct CommandOutcome {
    pub master_seed: Option<u64>,
    pub result: serde_json::Value,
    pub outputs: Outputs,
    pub exit_code: i32,
}

fn out_dir(cmd: &Command) -> PathBuf {
    match cmd {
        Command::Train(a) => a.out.clone(),
        Command::Sample(a) => a.out.clone(),
        Command::Eval(a) => a.out.clone(),
        Command::Experiment(ExperimentCommand::Rate(a)) => a.out.clone(),
        Command::Experiment(ExperimentCommand::Memorize(a)) => a.out.clone(),
        Command::Experiment(ExperimentCommand::Approx(a)) => a.out.clone(),
    }
}

fn parse(argv: &[String]) -> Result<Cli, i32> {
    let argv = match config::find_config(argv) {
        Some(path) => match config::merge(argv, path.as_ref()) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("error: {}", e.0);
                return Err(1);
            }
        },
        None => argv.to_vec(),
    };
    Cli::try_parse_from(&argv).map_err(|e| {
        let _ = e.print();
        match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
            _ => 1,
        }
    })
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match parse(&argv) {
        Ok(c) => c,
        Err(code) => return ExitCode::from(code as u8),
    };
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(1);
    }

    let started = chrono::Utc::now();
    let dir = out_dir(&cli.command);
    let outcome = std::fs::create_dir_all(&dir)
        .map_err(CliError::from)
        .and_then(|_| commands::run(&cli.command, &dir));
    let (code, seed, result, outputs) = match outcome {
        Ok(o) => (o.exit_code, o.master_seed, o.result, o.outputs),
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            (
                code,
                None,
                serde_json::json!({ "error": e.to_string() }),
                Outputs::default(),
            )
        }
    };
    if dir.is_dir() {
        let manifest = outputs.digests(&dir).map(|digests| RunManifest {
            command_line: argv.clone(),
            config: serde_json::to_value(&cli).unwrap_or(serde_json::Value::Null),
            master_seed: seed,
            code_version: env!("CARGO_PKG_VERSION"),
            started_at: started.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            exit_code: code,
            result,
            outputs: digests,
        });
        let written = manifest.and_then(|m| {
            let text = serde_json::to_string_pretty(&m).map_err(std::io::Error::other)?;
            std::fs::write(dir.join("manifest.json"), text)
        });
        if let Err(e) = written {
            eprintln!("error: cannot write manifest: {e}");
            return ExitCode::from(1);
        }
    }
    ExitCode::from(code as u8)
}
