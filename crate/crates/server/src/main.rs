use std::process::ExitCode;

use clap::Parser;
use csi_server::cli::{self, Cli, Command};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let outcome = match Cli::parse().command {
        Command::Serve { port, config } => {
            cli::server_config(config.as_deref(), port).and_then(|cfg| {
                let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
                runtime
                    .block_on(csi_server::serve(cfg))
                    .map(|()| String::new())
                    .map_err(|source| cli::CliError::Io {
                        path: "listener".into(),
                        source,
                    })
            })
        }
        Command::Report { log, out } => cli::report(&log, &out),
        Command::Simulate {
            scenario,
            seed,
            out,
            reach_target,
        } => cli::simulate(&scenario, seed, &out, reach_target),
        Command::Analyze {
            input,
            family_alpha,
            tests,
            alternative,
            out,
        } => cli::analyze(&input, family_alpha, tests, alternative, &out),
    };
    match outcome {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{}", msg.trim_end());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
