mod commands;
mod config;
mod corpus;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use config::{RunConfig, KEYS};
use error::CliError;

fn command() -> Command {
    let with_keys = |cmd: Command| {
        let cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("key=value config file; flags override it"),
        );
        KEYS.iter().fold(cmd, |cmd, (key, default, help)| {
            let help = if default.is_empty() {
                help.to_string()
            } else {
                format!("{help} [default: {default}]")
            };
            cmd.arg(
                Arg::new(*key)
                    .long(*key)
                    .value_name("VALUE")
                    .allow_hyphen_values(true)
                    .help(help),
            )
        })
    };
    Command::new("minvae")
        .about("Audio-visual VAE speech models and variational-EM speech enhancement")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_keys(
            Command::new("synth").about("Generate a synthetic corpus with ground truth"),
        ))
        .subcommand(with_keys(
            Command::new("train").about("Train a model on a corpus, or resume from --checkpoint"),
        ))
        .subcommand(with_keys(
            Command::new("enhance").about("Enhance one noisy WAV file"),
        ))
        .subcommand(with_keys(
            Command::new("eval").about("Score a model on the test mixtures of a corpus"),
        ))
        .subcommand(with_keys(
            Command::new("gradcheck").about("Check analytic gradients against finite differences"),
        ))
}

fn run_config(m: &ArgMatches) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = m.get_one::<String>("config") {
        cfg.apply_file(&PathBuf::from(p))?;
    }
    for (key, _, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn run(name: &str, m: &ArgMatches) -> Result<(), CliError> {
    let cfg = run_config(m)?;
    match name {
        "synth" => commands::synth(&cfg),
        "train" => commands::train_cmd(&cfg),
        "enhance" => commands::enhance_cmd(&cfg),
        "eval" => commands::eval_cmd(&cfg),
        "gradcheck" => commands::gradcheck_cmd(&cfg),
        other => Err(CliError::Usage(format!("unknown subcommand {other}"))),
    }
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("minvae {name}: {e}");
            e.exit_code()
        }
    }
}
