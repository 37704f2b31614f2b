//! topostain: synthesis, training, evaluation, gradient auditing and graph
//! inspection in one binary.
//!
//! Exit codes: 0 success, 2 I/O or startup, 3 training divergence, 4 metric
//! precondition, 5 gradcheck failure.

mod commands;
mod config;

use std::path::PathBuf;

use config::{render_help, RunConfig};
use topostain_core::CoreError;

#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub code: i32,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 2,
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 2,
        }
    }

    pub fn metric(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 4,
        }
    }

    pub fn gradcheck(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 5,
        }
    }

    /// Map a core error: I/O and format problems keep exit 2, training
    /// divergence 3, anything else falls back to the given code.
    pub fn from_core(e: CoreError, fallback: i32) -> Self {
        let code = match &e {
            CoreError::Io { .. } | CoreError::Format(_) => 2,
            CoreError::NonFinite { .. } => 3,
            _ => fallback,
        };
        CliError {
            message: e.to_string(),
            code,
        }
    }
}

type ParsedFlags = (Vec<(String, String)>, Option<PathBuf>);

fn parse_flags(args: &[String]) -> Result<ParsedFlags, CliError> {
    let mut flags = Vec::new();
    let mut config_file = None;
    let mut i = 0;
    while i < args.len() {
        let token = &args[i];
        let Some(stripped) = token.strip_prefix("--") else {
            return Err(CliError::usage(format!(
                "expected `--key value`, got `{token}`"
            )));
        };
        let (key, value) = if let Some((k, v)) = stripped.split_once('=') {
            (k.to_string(), v.to_string())
        } else if i + 1 < args.len() && !args[i + 1].starts_with("--") {
            i += 1;
            (stripped.to_string(), args[i].clone())
        } else {
            // bare flag: boolean true
            (stripped.to_string(), "true".to_string())
        };
        if key == "config" {
            config_file = Some(PathBuf::from(value));
        } else {
            flags.push((key, value));
        }
        i += 1;
    }
    Ok((flags, config_file))
}

fn run(args: &[String]) -> Result<(), CliError> {
    if args.is_empty() || args[0] == "--help" || args[0] == "help" || args[0] == "-h" {
        print!("{}", render_help());
        return Ok(());
    }
    let command = args[0].as_str();
    let mut rest = &args[1..];

    let graph_mode = if command == "graph" {
        let Some(mode) = rest.first() else {
            return Err(CliError::usage(
                "graph needs a mode: `graph inspect` or `graph importance`",
            ));
        };
        rest = &rest[1..];
        Some(mode.clone())
    } else {
        None
    };

    if rest.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", render_help());
        return Ok(());
    }

    let (flags, config_file) = parse_flags(rest)?;
    let cfg = RunConfig::build(&flags, config_file.as_deref())?;

    match command {
        "synth" => commands::synth::run(&cfg),
        "train" => commands::train::run(&cfg),
        "eval" => commands::eval::run(&cfg),
        "gradcheck" => commands::gradcheck::run(&cfg),
        "graph" => match graph_mode.as_deref() {
            Some("inspect") => commands::graph::inspect(&cfg),
            Some("importance") => commands::graph::importance(&cfg),
            other => Err(CliError::usage(format!(
                "unknown graph mode {other:?}; use inspect or importance"
            ))),
        },
        other => Err(CliError::usage(format!(
            "unknown command `{other}`; run `topostain --help`"
        ))),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}
