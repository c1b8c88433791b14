//! Preference-survey statistics: one-proportion z-tests against 50% with a
//! Bonferroni-adjusted significance threshold and confidence intervals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use libm::erfc;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;
use thiserror::Error;

/// Question ids every response must answer.
pub const QUESTIONS: [&str; 7] = ["q1", "q2", "q3", "q4", "q5", "q6", "q7"];

#[derive(Debug, Error)]
pub enum SurveyError {
    #[error("number of tests must be at least 1")]
    NoTests,
    #[error("alpha {0} outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("null proportion {0} outside (0, 1)")]
    NullOutOfRange(f64),
    #[error("sample size is zero")]
    EmptySample,
    #[error("{successes} successes out of {n}")]
    TooManySuccesses { successes: u64, n: u64 },
    #[error("no survey responses")]
    NoResponses,
    #[error("respondent {respondent} did not answer {question}")]
    Partial {
        respondent: String,
        question: String,
    },
    #[error("line {line}: answer {value:?} is neither csi nor chat")]
    BadAnswer { line: usize, value: String },
    #[error("survey header must be respondent,q1,...,q7, got {0:?}")]
    BadHeader(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// 1 − Φ(x), accurate in the far tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// The `z` with `1 − Φ(z) = tail`, for `tail` in (0, 1). Starts from the
/// inverse complementary error function and polishes with Newton steps on
/// the survival function, which is accurate to a few ulps.
pub fn normal_upper_quantile(tail: f64) -> f64 {
    let mut z = std::f64::consts::SQRT_2 * erfc_inv(2.0 * tail);
    for _ in 0..3 {
        let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if density == 0.0 {
            break;
        }
        z += (normal_sf(z) - tail) / density;
    }
    z
}

/// Standard normal quantile for `p` in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    if p < 0.5 {
        -normal_upper_quantile(p)
    } else {
        normal_upper_quantile(1.0 - p)
    }
}

fn check_alpha(alpha: f64) -> Result<(), SurveyError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(SurveyError::AlphaOutOfRange(alpha))
    }
}

/// Per-test significance threshold for `m` tests sharing `family_alpha`.
pub fn bonferroni_alpha(family_alpha: f64, m: usize) -> Result<f64, SurveyError> {
    check_alpha(family_alpha)?;
    if m == 0 {
        return Err(SurveyError::NoTests);
    }
    Ok(family_alpha / m as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// The preference differs from p0 in either direction.
    #[default]
    TwoSided,
    /// The preference exceeds p0.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub p_value: f64,
}

fn check_counts(successes: u64, n: u64) -> Result<(), SurveyError> {
    if n == 0 {
        return Err(SurveyError::EmptySample);
    }
    if successes > n {
        return Err(SurveyError::TooManySuccesses { successes, n });
    }
    Ok(())
}

/// Two-sided one-proportion z-test.
pub fn proportion_z_test(successes: u64, n: u64, p0: f64) -> Result<ZTest, SurveyError> {
    proportion_z_test_with(successes, n, p0, Alternative::TwoSided)
}

pub fn proportion_z_test_with(
    successes: u64,
    n: u64,
    p0: f64,
    alternative: Alternative,
) -> Result<ZTest, SurveyError> {
    check_counts(successes, n)?;
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(SurveyError::NullOutOfRange(p0));
    }
    let nf = n as f64;
    // Counts rather than proportions keep z exactly antisymmetric at p0 = 0.5.
    let z = (successes as f64 - nf * p0) / (nf * p0 * (1.0 - p0)).sqrt();
    let p_value = match alternative {
        Alternative::TwoSided => (2.0 * normal_sf(z.abs())).min(1.0),
        Alternative::Greater => normal_sf(z),
    };
    Ok(ZTest { z, p_value })
}

/// How a confidence interval for a proportion is built.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalFamily {
    /// Normal approximation around the sample proportion.
    #[default]
    Wald,
}

impl IntervalFamily {
    /// Interval for `successes / n` at critical value `z_star`, clamped to [0, 1].
    pub fn interval(self, successes: u64, n: u64, z_star: f64) -> (f64, f64) {
        match self {
            IntervalFamily::Wald => {
                let p = successes as f64 / n as f64;
                let half = z_star * (p * (1.0 - p) / n as f64).sqrt();
                ((p - half).max(0.0), (p + half).min(1.0))
            }
        }
    }
}

/// Critical value for a two-sided interval with Bonferroni correction.
pub fn bonferroni_z_star(family_alpha: f64, m: usize) -> Result<f64, SurveyError> {
    let per_test = bonferroni_alpha(family_alpha, m)?;
    Ok(normal_upper_quantile(per_test / 2.0))
}

/// Bonferroni-adjusted Wald interval for a proportion.
pub fn bonferroni_ci(
    successes: u64,
    n: u64,
    family_alpha: f64,
    m: usize,
) -> Result<(f64, f64), SurveyError> {
    check_counts(successes, n)?;
    let z_star = bonferroni_z_star(family_alpha, m)?;
    Ok(IntervalFamily::Wald.interval(successes, n, z_star))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Csi,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub respondent_id: String,
    pub answers: BTreeMap<String, Answer>,
}

impl SurveyResponse {
    /// A response answering every question; rejects partial answers.
    pub fn new(
        respondent_id: impl Into<String>,
        answers: BTreeMap<String, Answer>,
    ) -> Result<Self, SurveyError> {
        let respondent_id = respondent_id.into();
        if let Some(q) = QUESTIONS.iter().find(|q| !answers.contains_key(**q)) {
            return Err(SurveyError::Partial {
                respondent: respondent_id,
                question: (*q).to_owned(),
            });
        }
        Ok(Self {
            respondent_id,
            answers,
        })
    }
}

/// Reads `respondent,q1,...,q7` rows with `csi` / `chat` cells.
pub fn parse_csv(reader: impl Read) -> Result<Vec<SurveyResponse>, SurveyError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let expected: Vec<&str> = std::iter::once("respondent").chain(QUESTIONS).collect();
    if header != expected {
        return Err(SurveyError::BadHeader(header.join(",")));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let respondent = row.get(0).unwrap_or_default().to_owned();
        let mut answers = BTreeMap::new();
        for (q, cell) in QUESTIONS.iter().zip(row.iter().skip(1)) {
            let answer = match cell.to_ascii_lowercase().as_str() {
                "csi" => Answer::Csi,
                "chat" => Answer::Chat,
                "" => continue,
                _ => {
                    return Err(SurveyError::BadAnswer {
                        line,
                        value: cell.to_owned(),
                    })
                }
            };
            answers.insert((*q).to_owned(), answer);
        }
        out.push(SurveyResponse::new(respondent, answers)?);
    }
    Ok(out)
}

/// Writes responses in the layout `parse_csv` reads.
pub fn to_csv(responses: &[SurveyResponse]) -> Result<String, SurveyError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("respondent").chain(QUESTIONS))?;
    for r in responses {
        let cells = QUESTIONS.iter().map(|q| match r.answers.get(*q) {
            Some(Answer::Csi) => "csi",
            Some(Answer::Chat) => "chat",
            None => "",
        });
        w.write_record(std::iter::once(r.respondent_id.as_str()).chain(cells))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| SurveyError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub family_alpha: f64,
    pub tests: usize,
    pub p0: f64,
    pub alternative: Alternative,
    pub interval: IntervalFamily,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            family_alpha: 0.01,
            tests: QUESTIONS.len(),
            p0: 0.5,
            alternative: Alternative::TwoSided,
            interval: IntervalFamily::Wald,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub n: u64,
    pub csi_count: u64,
    pub proportion: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
}

/// Tests and intervals for a single question.
pub fn analyze_question(
    question_id: &str,
    csi_count: u64,
    n: u64,
    options: &AnalysisOptions,
) -> Result<QuestionResult, SurveyError> {
    let alpha = bonferroni_alpha(options.family_alpha, options.tests)?;
    let test = proportion_z_test_with(csi_count, n, options.p0, options.alternative)?;
    let z_star = bonferroni_z_star(options.family_alpha, options.tests)?;
    let (ci_low, ci_high) = options.interval.interval(csi_count, n, z_star);
    Ok(QuestionResult {
        question_id: question_id.to_owned(),
        n,
        csi_count,
        proportion: csi_count as f64 / n as f64,
        z: test.z,
        p_value: test.p_value,
        ci_low,
        ci_high,
        significant: test.p_value < alpha,
    })
}

/// One result per question, in question order.
pub fn analyze_surveys(
    responses: &[SurveyResponse],
    options: &AnalysisOptions,
) -> Result<Vec<QuestionResult>, SurveyError> {
    if responses.is_empty() {
        return Err(SurveyError::NoResponses);
    }
    QUESTIONS
        .iter()
        .map(|q| {
            let answered = responses.iter().filter_map(|r| r.answers.get(*q));
            let (csi, n) = answered.fold((0u64, 0u64), |(c, n), a| {
                (c + u64::from(*a == Answer::Csi), n + 1)
            });
            analyze_question(q, csi, n, options)
        })
        .collect()
}

/// Plain-text table: one bar per question split at the csi share, with the
/// interval marked and a `|` at the 50% line.
pub fn render_table(results: &[QuestionResult], options: &AnalysisOptions) -> String {
    const WIDTH: usize = 40;
    let mut out = String::new();
    let alpha = options.family_alpha / options.tests.max(1) as f64;
    let _ = writeln!(
        out,
        "question     n   csi  share   {:.0}% interval        z      p-value   sig (p < {alpha:.4})",
        (1.0 - options.family_alpha) * 100.0
    );
    for r in results {
        let _ = writeln!(
            out,
            "{:<6} {:>7} {:>5} {:>5.1}%  [{:>5.1}%, {:>5.1}%] {:>8.3} {:>12.3e}   {}",
            r.question_id,
            r.n,
            r.csi_count,
            r.proportion * 100.0,
            r.ci_low * 100.0,
            r.ci_high * 100.0,
            r.z,
            r.p_value,
            if r.significant { "yes" } else { "no" }
        );
        let cell = |x: f64| ((x * WIDTH as f64).round() as usize).min(WIDTH);
        let (share, lo, hi) = (cell(r.proportion), cell(r.ci_low), cell(r.ci_high));
        let bar: String = (0..WIDTH)
            .map(|i| {
                if i == WIDTH / 2 {
                    '|'
                } else if i >= lo && i < hi {
                    if i < share {
                        '='
                    } else {
                        '-'
                    }
                } else if i < share {
                    '#'
                } else {
                    '.'
                }
            })
            .collect();
        let _ = writeln!(out, "       csi [{bar}] chat");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni_alpha(0.01, 7).unwrap() - 0.001_428_571_428_571_428_6).abs() < 1e-18);
        assert_eq!(bonferroni_alpha(0.05, 1).unwrap(), 0.05);
        assert_eq!(bonferroni_alpha(0.01, 2).unwrap(), 0.005);
        assert!(matches!(
            bonferroni_alpha(0.01, 0),
            Err(SurveyError::NoTests)
        ));
        assert!(matches!(
            bonferroni_alpha(1.5, 2),
            Err(SurveyError::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn null_split_is_not_significant() {
        let t = proportion_z_test(50, 100, 0.5).unwrap();
        assert_eq!(t.z, 0.0);
        assert_eq!(t.p_value, 1.0);
        assert!(matches!(
            proportion_z_test(1, 0, 0.5),
            Err(SurveyError::EmptySample)
        ));
    }

    #[test]
    fn zero_successes_clamps_low_end() {
        let (lo, hi) = bonferroni_ci(0, 147, 0.01, 7).unwrap();
        assert_eq!((lo, hi), (0.0, 0.0));
        let (lo, _) = bonferroni_ci(2, 147, 0.01, 7).unwrap();
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn wider_tail_gives_narrower_interval() {
        let (a, b) = bonferroni_ci(110, 147, 0.5, 1).unwrap();
        let (c, d) = bonferroni_ci(110, 147, 0.01, 7).unwrap();
        assert!(b - a < d - c);
    }

    fn full(id: &str, csi_until: usize) -> SurveyResponse {
        let answers = QUESTIONS
            .iter()
            .enumerate()
            .map(|(i, q)| {
                (
                    (*q).to_owned(),
                    if i < csi_until {
                        Answer::Csi
                    } else {
                        Answer::Chat
                    },
                )
            })
            .collect();
        SurveyResponse::new(id, answers).unwrap()
    }

    #[test]
    fn even_split_none_significant() {
        let responses: Vec<_> = (0..10)
            .map(|i| full(&format!("r{i}"), if i % 2 == 0 { 7 } else { 0 }))
            .collect();
        let results = analyze_surveys(&responses, &AnalysisOptions::default()).unwrap();
        assert_eq!(results.len(), 7);
        assert!(results
            .iter()
            .all(|r| !r.significant && r.proportion == 0.5));
    }

    #[test]
    fn csv_parsing() {
        let text = "respondent,q1,q2,q3,q4,q5,q6,q7\nr1,csi,chat,csi,csi,csi,csi,csi\nr2, CHAT ,chat,csi,csi,csi,csi,chat\n";
        let rs = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[1].answers["q1"], Answer::Chat);

        let partial = "respondent,q1,q2,q3,q4,q5,q6,q7\nr1,csi,chat,csi,,csi,csi,csi\n";
        assert!(
            matches!(parse_csv(partial.as_bytes()), Err(SurveyError::Partial { question, .. }) if question == "q4")
        );
        let bad = "respondent,q1,q2,q3,q4,q5,q6,q7\nr1,csi,maybe,csi,csi,csi,csi,csi\n";
        assert!(matches!(
            parse_csv(bad.as_bytes()),
            Err(SurveyError::BadAnswer { line: 2, .. })
        ));
        assert!(matches!(
            parse_csv("who,q1\n".as_bytes()),
            Err(SurveyError::BadHeader(_))
        ));
        assert!(matches!(
            analyze_surveys(&[], &AnalysisOptions::default()),
            Err(SurveyError::NoResponses)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let responses = vec![full("r1", 3), full("r, 2", 7)];
        let text = to_csv(&responses).unwrap();
        assert!(text.starts_with("respondent,q1,"));
        assert_eq!(parse_csv(text.as_bytes()).unwrap(), responses);
    }

    #[test]
    fn table_marks_midline() {
        let r = analyze_question("q1", 110, 147, &AnalysisOptions::default()).unwrap();
        let table = render_table(&[r], &AnalysisOptions::default());
        assert!(table.contains('|'));
        assert!(table.contains("74.8%"));
    }
}
