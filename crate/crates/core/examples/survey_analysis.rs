//! Tests seven preference questions against an even split with a
//! Bonferroni-corrected family error rate.
//!
//! cargo run -p csi-core --example survey_analysis

use std::collections::BTreeMap;

use csi_core::survey::{self, AnalysisOptions, Answer, SurveyResponse, QUESTIONS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // 147 respondents; question i was answered "csi" by the first k_i of them.
    let csi_counts = [97u64, 110, 129, 104, 118, 121, 74];
    let responses = (0..147u64)
        .map(|r| {
            let answers: BTreeMap<String, Answer> = QUESTIONS
                .iter()
                .zip(csi_counts)
                .map(|(q, k)| {
                    (
                        q.to_string(),
                        if r < k { Answer::Csi } else { Answer::Chat },
                    )
                })
                .collect();
            SurveyResponse::new(format!("r{r:03}"), answers)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let options = AnalysisOptions::default();
    println!(
        "family alpha {}, per-test alpha {:.6}, critical z {:.4}",
        options.family_alpha,
        survey::bonferroni_alpha(options.family_alpha, options.tests)?,
        survey::bonferroni_z_star(options.family_alpha, options.tests)?
    );
    let results = survey::analyze_surveys(&responses, &options)?;
    print!("{}", survey::render_table(&results, &options));

    // Responses round-trip through the CSV format the CLI reads.
    let csv = survey::to_csv(&responses)?;
    assert_eq!(survey::parse_csv(csv.as_bytes())?, responses);
    Ok(())
}
