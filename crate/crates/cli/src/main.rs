//! `mtjsim`: synthetic dies, screening, training, emulated inference and
//! the analysis sweeps.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// A problem with the invocation itself, reported before any computation.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn error_record(err: &anyhow::Error) -> (ExitCode, serde_json::Value) {
    let (kind, code) = if err.downcast_ref::<Usage>().is_some() {
        ("usage", 2)
    } else if let Some(e) = err.downcast_ref::<mtjsim::Error>() {
        (e.kind(), 1)
    } else {
        ("io", 1)
    };
    let record = serde_json::json!({
        "error": {
            "kind": kind,
            "message": format!("{err:#}"),
        }
    });
    (ExitCode::from(code), record)
}

fn configure_workers() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("MTJSIM_WORKERS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| usage(format!("MTJSIM_WORKERS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("cannot start {n} workers: {e}")))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_workers()?;
    match cli.command {
        Command::SynthDie(a) => commands::synth_die(a),
        Command::Screen(a) => commands::screen(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::SweepWsat(a) => commands::sweep_wsat(a),
        Command::Sensitivity(a) => commands::sensitivity(a),
        Command::Landscape(a) => commands::landscape(a),
        Command::VariationSim(a) => commands::variation_sim(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let (code, record) = error_record(&usage(e.render().to_string().trim_end()));
            eprintln!("{record}");
            return code;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, record) = error_record(&e);
            eprintln!("{record}");
            code
        }
    }
}
