//! Simulates a session, writes its log, and reports on it from the file
//! alone: ranked ideas, propagation and a relay purity audit. The full text
//! report is written next to the log.
//!
//! cargo run -p csi-core --release --example forensic_report -- [seed]

use csi_core::eventlog;
use csi_core::report::{audit_relays, forensic_report};
use csi_core::sim::{run, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(1), |s| s.parse())?;
    let result = run(&Scenario::default_csi(), seed)?;
    let dir = std::env::temp_dir();
    let log_path = dir.join(format!("csi-report-demo-{seed}.jsonl"));
    eventlog::write_file(&log_path, &result.log)?;

    let log = eventlog::read_file(&log_path)?;
    let report = forensic_report(&log);
    println!(
        "{} subgroups, {} messages, {} insights",
        report.subgroup_count, report.message_count, report.insight_count
    );
    println!("top ideas:");
    for idea in report.ideas.iter().take(5) {
        println!(
            "  {:>2}. breadth {} net {:+} {:?}",
            idea.rank, idea.breadth, idea.net_stance, idea.canonical_text
        );
    }
    println!("propagation:");
    for p in report.insights.iter().take(5) {
        let latency = p
            .full_coverage_latency
            .map_or("incomplete".to_owned(), |ms| {
                format!("full after {} s", ms / 1000)
            });
        println!(
            "  {} from {}: {}/{} subgroups, {latency}",
            p.insight_id, p.source_subgroup, p.coverage, p.eligible
        );
    }
    println!(
        "participation: spread {}, gini {:.3}",
        report.participation.spread, report.participation.gini
    );
    let audit = audit_relays(&log);
    println!(
        "relay audit: {} surrogate messages, {} verbatim with framing, {} violations",
        audit.surrogate_messages,
        audit.pure,
        audit.violations.len()
    );

    let text_path = dir.join(format!("csi-report-demo-{seed}.txt"));
    std::fs::write(&text_path, report.render_text())?;
    println!("log {}\nreport {}", log_path.display(), text_path.display());
    Ok(())
}
