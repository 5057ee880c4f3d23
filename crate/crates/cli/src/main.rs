mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use zeus_core::ZeusError;

use crate::args::Cli;

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<ZeusError>() {
        return e.kind();
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return "IoError";
    }
    if err.downcast_ref::<toml::de::Error>().is_some() {
        return "ConfigError";
    }
    "Error"
}

fn parse() -> anyhow::Result<Cli> {
    let mut cmd = Cli::command().args_override_self(true);
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    let argv = config::expand_argv(std::env::args_os().collect(), &cmd)?;
    let matches = cmd.try_get_matches_from_mut(argv).unwrap_or_else(|e| e.exit());
    Cli::from_arg_matches(&matches).map_err(|e| e.exit())
}

fn run() -> anyhow::Result<()> {
    let cli = parse()?;
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()?;
    }
    std::fs::create_dir_all(&cli.out_dir)?;
    commands::dispatch(&cli)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ZEUS_LOG", "warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({ "error": error_kind(&err), "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
