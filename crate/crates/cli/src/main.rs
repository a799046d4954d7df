mod build_vocab;
mod cli;
mod config;
mod init_encoder;
mod inputs;
mod manifest;
mod report;
mod tokenize;

use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use cli::{Cli, Command};
use config::FileConfig;
use manifest::RunManifest;

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::BuildVocab(args) => build_vocab::run(args, file.build_vocab, &inputs::thread_pool()?),
        Command::Tokenize(args) => tokenize::run(args, file.tokenize, &inputs::thread_pool()?),
        Command::Stats(args) => report::run_stats(args),
        Command::Bench(args) => report::run_bench(args, file.bench),
        Command::InitEncoder(args) => init_encoder::run(args, file.init_encoder),
        Command::Rerun(args) => {
            let recorded = RunManifest::load(&args.manifest)?;
            let cli = Cli::try_parse_from(&recorded.args)?;
            if matches!(cli.command, Command::Rerun(_)) {
                bail!("manifest {} records another rerun", args.manifest.display());
            }
            run(cli)
        }
    }
}

/// One JSON object on stderr: `{"error": {"kind": .., "message": ..}}`.
fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<vwt::Error>())
                .map_or("error", vwt::Error::kind);
            report_error(kind, &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
