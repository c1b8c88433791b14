//! Command-line front end: run the server, render reports, run simulations
//! and analyze surveys.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use csi_core::eventlog::{self, LogError};
use csi_core::report::forensic_report;
use csi_core::sim::{self, Scenario, SimError};
use csi_core::survey::{self, Alternative, AnalysisOptions, SurveyError};
use serde_json::json;
use thiserror::Error;

use crate::ServerConfig;

#[derive(Debug, Parser)]
#[command(
    name = "csi",
    version,
    about = "Conversational swarm deliberation server and tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlternativeArg {
    TwoSided,
    Greater,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the HTTP control API and participant WebSocket.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        /// TOML file with `bind`, `port` and `data_dir`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build the forensic report for an event log. A `.txt` output gets the
    /// plain-text rendering, anything else JSON.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scripted-bot session and write its log, metrics and report.
    Simulate {
        /// Scenario document (`.toml` or `.json`).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Subgroup count an insight must reach to count toward reach share.
        #[arg(long, default_value_t = 10)]
        reach_target: usize,
    },
    /// Test survey preferences against an even split with Bonferroni control.
    Analyze {
        /// CSV with `respondent,q1,...,q7` and `csi`/`chat` cells.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        family_alpha: f64,
        #[arg(long, default_value_t = 7)]
        tests: usize,
        #[arg(long, value_enum, default_value_t = AlternativeArg::TwoSided)]
        alternative: AlternativeArg,
        /// JSON results; the table is written next to it with a `.txt` extension.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Log(#[from] LogError),
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("{0}")]
    Survey(#[from] SurveyError),
    #[error("config {path}: {source}")]
    Config {
        path: PathBuf,
        source: toml::de::Error,
    },
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_owned(),
            source,
        })?;
    }
    std::fs::write(path, body).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Loads the `serve` config, letting `--port` win over the file.
pub fn server_config(config: Option<&Path>, port: Option<u16>) -> Result<ServerConfig, CliError> {
    let mut cfg = match config {
        Some(path) => toml::from_str(&read(path)?).map_err(|source| CliError::Config {
            path: path.to_owned(),
            source,
        })?,
        None => ServerConfig::default(),
    };
    if let Some(p) = port {
        cfg.port = p;
    }
    Ok(cfg)
}

pub fn report(log: &Path, out: &Path) -> Result<String, CliError> {
    let events = eventlog::read_file(log)?;
    let report = forensic_report(&events);
    let text = out.extension().is_some_and(|e| e == "txt");
    write(
        out,
        if text {
            report.render_text()
        } else {
            report.to_json()
        },
    )?;
    Ok(format!(
        "{} events, {} ideas, {} insights -> {}",
        events.len(),
        report.ideas.len(),
        report.insight_count,
        out.display()
    ))
}

pub fn simulate(
    scenario: &Path,
    seed: u64,
    out: &Path,
    reach_target: usize,
) -> Result<String, CliError> {
    let scenario = Scenario::load(scenario)?;
    let result = sim::run(&scenario, seed)?;
    let summary = result.summary(reach_target);
    let report = forensic_report(&result.log);
    write(&out.join("events.jsonl"), eventlog::to_jsonl(&result.log))?;
    write(
        &out.join("metrics.json"),
        serde_json::to_string_pretty(&summary).expect("metrics serialize"),
    )?;
    write(&out.join("report.json"), report.to_json())?;
    write(&out.join("report.txt"), report.render_text())?;
    Ok(format!(
        "{} events, {} insights, {} deliveries, reach share {:.3} at >= {reach_target} subgroups -> {}",
        result.log.len(),
        summary.insights,
        summary.deliveries,
        summary.reach_share,
        out.display()
    ))
}

pub fn analyze(
    input: &Path,
    family_alpha: f64,
    tests: usize,
    alternative: AlternativeArg,
    out: &Path,
) -> Result<String, CliError> {
    let file = std::fs::File::open(input).map_err(|source| CliError::Io {
        path: input.to_owned(),
        source,
    })?;
    let responses = survey::parse_csv(file)?;
    let options = AnalysisOptions {
        family_alpha,
        tests,
        alternative: match alternative {
            AlternativeArg::TwoSided => Alternative::TwoSided,
            AlternativeArg::Greater => Alternative::Greater,
        },
        ..AnalysisOptions::default()
    };
    let results = survey::analyze_surveys(&responses, &options)?;
    let doc = json!({
        "respondents": responses.len(),
        "per_test_alpha": survey::bonferroni_alpha(family_alpha, tests)?,
        "z_star": survey::bonferroni_z_star(family_alpha, tests)?,
        "options": options,
        "results": results,
    });
    write(
        out,
        serde_json::to_string_pretty(&doc).expect("results serialize"),
    )?;
    let table = survey::render_table(&results, &options);
    write(&out.with_extension("txt"), &table)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn port_flag_overrides_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.toml");
        std::fs::write(&path, "port = 9000\ndata_dir = \"/tmp/csi\"\n").unwrap();
        let cfg = server_config(Some(&path), None).unwrap();
        assert_eq!((cfg.port, cfg.bind.as_str()), (9000, "127.0.0.1"));
        assert_eq!(server_config(Some(&path), Some(7000)).unwrap().port, 7000);
        assert_eq!(server_config(None, None).unwrap(), ServerConfig::default());
        std::fs::write(&path, "prot = 1\n").unwrap();
        assert!(matches!(
            server_config(Some(&path), None),
            Err(CliError::Config { .. })
        ));
    }
}
