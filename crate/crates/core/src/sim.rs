//! Scripted-bot sessions under a virtual clock.
//!
//! Bots join, are partitioned like humans, and post from a fixed schedule.
//! Bots with an echo policy may also react to relayed insights. Runs are
//! single-threaded and fully seeded, so a scenario and seed always yield
//! the same event log.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Author, Millis, ParticipantId, SessionConfig, SessionEvent, Topology};
use crate::partition;
use crate::report::{
    participation_metrics, propagation_metrics, InsightPropagation, ParticipationMetrics,
};
use crate::session::{Notice, Session, SessionError, SessionState};
use crate::surrogate::strip_framing;
use crate::text::{parse_list, tokenize};

const CONES_TXT: &str = include_str!("../data/aut_traffic_cones.txt");
const PLUNGERS_TXT: &str = include_str!("../data/aut_toilet_plungers.txt");
const CHATTER_TXT: &str = include_str!("../data/chatter.txt");

const REACTIONS: [&str; 6] = [
    "great idea",
    "love it",
    "yes that works",
    "agree",
    "no, bad idea",
    "hmm i disagree",
];

/// One-word leads for echo replies, so an echo stays under the salience
/// floor and reads as a reaction rather than a new idea.
const ECHO_LEADS: [&str; 4] = ["love", "great", "agree", "yes"];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario names {roster} participants but {scripts} scripts were given")]
    RosterMismatch { roster: usize, scripts: usize },
    #[error("script {bot}: {reason}")]
    Script { bot: String, reason: String },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplyPolicy {
    Silent,
    /// Reacts to each relayed insight with this probability.
    EchoTopic {
        probability: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptLine {
    /// Milliseconds after session start.
    pub at: Millis,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotScript {
    pub bot_id: String,
    pub schedule: Vec<ScriptLine>,
    pub reply_policy: ReplyPolicy,
}

impl BotScript {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: &str| SimError::Script {
            bot: self.bot_id.clone(),
            reason: reason.to_owned(),
        };
        if self.schedule.windows(2).any(|w| w[1].at < w[0].at) {
            return Err(bad("schedule offsets must be nondecreasing"));
        }
        if let ReplyPolicy::EchoTopic { probability } = self.reply_policy {
            if !(0.0..=1.0).contains(&probability) {
                return Err(bad("echo probability must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    TrafficCones,
    ToiletPlungers,
}

impl Topic {
    pub fn prompt(self) -> &'static str {
        match self {
            Topic::TrafficCones => "List as many alternative uses for a traffic cone as you can.",
            Topic::ToiletPlungers => {
                "List as many alternative uses for a toilet plunger as you can."
            }
        }
    }

    /// Ideas for this topic, each a list of paraphrases.
    pub fn ideas(self) -> Vec<Vec<&'static str>> {
        let src = match self {
            Topic::TrafficCones => CONES_TXT,
            Topic::ToiletPlungers => PLUNGERS_TXT,
        };
        parse_list(src)
            .map(|line| line.split(" | ").map(str::trim).collect())
            .collect()
    }
}

fn chatter() -> Vec<&'static str> {
    parse_list(CHATTER_TXT).collect()
}

/// Knobs for the built-in script generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptParams {
    pub topic: Topic,
    /// Seconds between one bot's messages; 0 makes every bot silent.
    pub message_every: u64,
    /// Share of lines restating the subgroup's own idea.
    pub idea_share: f64,
    /// Share of lines that are short filler; the rest are reactions.
    pub chatter_share: f64,
    pub echo_probability: f64,
    /// How many subgroups have an idea of their own to push; the others
    /// only chat, react and echo. `None` means every subgroup.
    pub idea_subgroups: Option<usize>,
}

impl Default for ScriptParams {
    fn default() -> Self {
        Self {
            topic: Topic::TrafficCones,
            message_every: 20,
            idea_share: 0.5,
            chatter_share: 0.3,
            echo_probability: 0.3,
            idea_subgroups: None,
        }
    }
}

/// A session configuration, a roster size and how to script the bots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: SessionConfig,
    pub roster: usize,
    #[serde(default)]
    pub script: ScriptParams,
}

impl Scenario {
    /// 75 talkative bots in subgroups of 5 for 12 minutes.
    pub fn default_csi() -> Self {
        let script = ScriptParams::default();
        Self {
            config: SessionConfig::csi("sim", 5).with_prompt(script.topic.prompt()),
            roster: 75,
            script,
        }
    }

    pub fn with_topology(mut self, topology: Topology) -> Self {
        self.config.topology = topology;
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self, SimError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }
}

/// Participant id the session will give the `i`-th joiner (0-based).
fn participant_for(i: usize) -> ParticipantId {
    ParticipantId::new(format!("p{:04}", i + 1))
}

/// Scripts for `scenario.roster` bots. Each bot knows which subgroup the
/// seeded partition will put it in and mostly talks about that subgroup's
/// own idea, mixed with filler and reactions.
pub fn generate_scripts(scenario: &Scenario, seed: u64) -> Vec<BotScript> {
    let params = &scenario.script;
    let n = scenario.roster;
    let ids: Vec<ParticipantId> = (0..n).map(participant_for).collect();
    let home_of: BTreeMap<ParticipantId, usize> =
        match partition::partition(&ids, scenario.config.target_subgroup_size as usize, seed) {
            Ok(plan) => plan
                .subgroups
                .iter()
                .enumerate()
                .flat_map(|(g, members)| members.iter().map(move |p| (p.clone(), g)))
                .collect(),
            Err(_) => ids.iter().map(|p| (p.clone(), 0)).collect(),
        };
    let ideas = params.topic.ideas();
    let chatter = chatter();
    let duration = scenario.config.duration_ms();
    let every = params.message_every * 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b075);

    ids.iter()
        .enumerate()
        .map(|(i, pid)| {
            let home = home_of[pid];
            let idea = &ideas[home % ideas.len()];
            let has_idea = params.idea_subgroups.is_none_or(|k| home < k);
            let mut schedule = Vec::new();
            if every > 0 {
                let mut at = rng.gen_range(1_000..=every);
                while at < duration {
                    let roll: f64 = rng.gen();
                    let text = if has_idea && roll < params.idea_share {
                        idea.choose(&mut rng).copied().unwrap_or_default()
                    } else if roll < params.idea_share + params.chatter_share {
                        chatter.choose(&mut rng).copied().unwrap_or_default()
                    } else {
                        REACTIONS.choose(&mut rng).copied().unwrap_or_default()
                    };
                    schedule.push(ScriptLine {
                        at,
                        text: text.to_owned(),
                    });
                    at += every - 2_000 + rng.gen_range(0..=4_000);
                }
            }
            BotScript {
                bot_id: format!("bot{:03}", i + 1),
                schedule,
                reply_policy: if params.echo_probability > 0.0 {
                    ReplyPolicy::EchoTopic {
                        probability: params.echo_probability,
                    }
                } else {
                    ReplyPolicy::Silent
                },
            }
        })
        .collect()
}

/// Safety properties checked while the scenario runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingAudit {
    pub ticks: usize,
    pub deliveries: usize,
    pub self_deliveries: usize,
    pub duplicate_deliveries: usize,
    /// Ticks after which some subgroup had waited past the threshold while
    /// a qualifying insight was available to it.
    pub starvation_violations: usize,
    pub degraded_distillations: usize,
}

/// Self and duplicate deliveries found by scanning a log.
pub fn audit_log(log: &[SessionEvent]) -> (usize, usize) {
    use crate::model::EventPayload;
    let mut sources = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let (mut selfs, mut dups) = (0, 0);
    for e in log {
        match &e.payload {
            EventPayload::InsightCreated { insight } => {
                sources.insert(insight.insight_id.clone(), insight.source_subgroup.clone());
            }
            EventPayload::InsightDelivered {
                insight_id,
                receiver,
            } => {
                if sources.get(insight_id) == Some(receiver) {
                    selfs += 1;
                }
                if !seen.insert((insight_id.clone(), receiver.clone())) {
                    dups += 1;
                }
            }
            _ => {}
        }
    }
    (selfs, dups)
}

/// Replays `log` and, at each tick's planning point, counts subgroups that
/// were eligible and had a qualifying insight available yet were not
/// served by that tick. The planning point of a tick at `t` lies after
/// every event stamped before `t` and after the messages and insights
/// stamped `t`, just before that tick's first delivery.
pub fn audit_starvation(log: &[SessionEvent], tick: Millis) -> Result<usize, SessionError> {
    use crate::model::EventPayload;
    let Some(first) = log.first() else {
        return Ok(0);
    };
    let end = log.last().map_or(0, |e| e.wall_time);
    let mut state = SessionState::replay(std::slice::from_ref(first))?;
    let mut next = 1;
    let mut violations = 0;
    let mut t = 0;
    while t <= end {
        while next < log.len() {
            let e = &log[next];
            let before_plan = e.wall_time < t
                || (e.wall_time == t
                    && matches!(
                        e.payload,
                        EventPayload::InsightCreated { .. }
                            | EventPayload::ParticipantJoined { .. }
                            | EventPayload::SubgroupOpened { .. }
                    )
                    || (e.wall_time == t
                        && matches!(&e.payload, EventPayload::MessagePosted { message } if message.author.is_human())));
            if !before_plan {
                break;
            }
            state.apply(e.clone())?;
            next += 1;
        }
        if state.phase() != crate::session::Phase::Running {
            break;
        }
        let served: BTreeSet<&crate::model::SubgroupId> = log[next..]
            .iter()
            .take_while(|e| {
                e.wall_time == t && !matches!(e.payload, EventPayload::MessagePosted { .. })
            })
            .filter_map(|e| match &e.payload {
                EventPayload::InsightDelivered { receiver, .. } => Some(receiver),
                _ => None,
            })
            .collect();
        let mm = state.matchmaker();
        violations += mm
            .routes()
            .filter(|(g, _)| !served.contains(g) && matches!(mm.select_delivery(g, t), Ok(Some(_))))
            .count();
        t += tick;
    }
    Ok(violations)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub log: Vec<SessionEvent>,
    /// The live state the run ended in, for comparison with a replay.
    pub state: SessionState,
    pub propagation: Vec<InsightPropagation>,
    pub participation: ParticipationMetrics,
    pub audit: RoutingAudit,
}

/// Metrics document written next to the log by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub insights: usize,
    pub deliveries: usize,
    /// Share of insights that reached at least `reach_target` subgroups.
    pub reach_target: usize,
    pub reach_share: f64,
    pub median_full_coverage_ms: Option<Millis>,
    pub participation: ParticipationMetrics,
    pub audit: RoutingAudit,
    pub propagation: Vec<InsightPropagation>,
}

impl ScenarioResult {
    /// Share of insights delivered to at least `k` subgroups; 1 when no
    /// insight was created.
    pub fn reach_share(&self, k: usize) -> f64 {
        if self.propagation.is_empty() {
            return 1.0;
        }
        self.propagation.iter().filter(|p| p.coverage >= k).count() as f64
            / self.propagation.len() as f64
    }

    pub fn summary(&self, reach_target: usize) -> MetricsSummary {
        MetricsSummary {
            insights: self.propagation.len(),
            deliveries: self.audit.deliveries,
            reach_target,
            reach_share: self.reach_share(reach_target),
            median_full_coverage_ms: median_full_coverage(&self.propagation),
            participation: self.participation.clone(),
            audit: self.audit.clone(),
            propagation: self.propagation.clone(),
        }
    }
}

/// Median latency to full coverage, counting never-covered insights as
/// infinitely slow. `None` means the median insight never got there. With
/// an even count the lower middle element is used.
pub fn median_full_coverage(props: &[InsightPropagation]) -> Option<Millis> {
    if props.is_empty() {
        return None;
    }
    let mut times: Vec<Option<Millis>> = props.iter().map(|p| p.full_coverage_latency).collect();
    // None sorts after every Some.
    times.sort_by_key(|t| (t.is_none(), *t));
    times[(times.len() - 1) / 2]
}

/// Runs a scripted session to completion under a virtual clock. `seed`
/// overrides the config's seed and drives bot replies.
pub fn run_scenario(
    config: &SessionConfig,
    roster: usize,
    scripts: &[BotScript],
    seed: u64,
) -> Result<ScenarioResult, SimError> {
    if scripts.len() != roster {
        return Err(SimError::RosterMismatch {
            roster,
            scripts: scripts.len(),
        });
    }
    for s in scripts {
        s.validate()?;
    }
    let mut config = config.clone();
    config.random_seed = seed;
    let duration = config.duration_ms();
    let tick = config.tick_interval_ms().max(1);

    let mut session = Session::new(config)?;
    let mut bot_of: BTreeMap<ParticipantId, usize> = BTreeMap::new();
    for (i, s) in scripts.iter().enumerate() {
        let out = session.join(&s.bot_id, 0)?;
        bot_of.insert(out.participant_id, i);
    }
    let pid_of: Vec<ParticipantId> = {
        let mut v = vec![ParticipantId::new(""); scripts.len()];
        for (p, &i) in &bot_of {
            v[i] = p.clone();
        }
        v
    };
    session.start(0)?;
    session.drain_notices();

    // (time, insertion order) -> (bot, text)
    let mut pending: BTreeMap<(Millis, u64), (usize, String)> = BTreeMap::new();
    let mut order = 0u64;
    for (i, s) in scripts.iter().enumerate() {
        for line in &s.schedule {
            pending.insert((line.at, order), (i, line.text.clone()));
            order += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xec40_e40e);
    let mut audit = RoutingAudit::default();
    let mut now = 0;
    loop {
        while let Some(entry) = pending.first_entry() {
            let (at, _) = *entry.key();
            if at > now || at >= duration {
                break;
            }
            let (bot, text) = entry.remove();
            session.post_message(&pid_of[bot], &text, at)?;
        }
        let out = session.tick(now)?;
        if out.ended {
            break;
        }
        audit.ticks += 1;
        audit.deliveries += out.deliveries.len();
        audit.degraded_distillations += out.degraded;

        for notice in session.drain_notices() {
            let Notice::Chat { audience, message } = notice else {
                continue;
            };
            if !matches!(message.author, Author::Surrogate(_)) {
                continue;
            }
            let body = strip_framing(&message.text).map_or(message.text.as_str(), |(_, b)| b);
            let keys: Vec<String> = tokenize(body).into_iter().take(3).collect();
            for p in audience {
                let Some(&bot) = bot_of.get(&p) else { continue };
                let ReplyPolicy::EchoTopic { probability } = scripts[bot].reply_policy else {
                    continue;
                };
                if rng.gen_bool(probability) {
                    let lead = ECHO_LEADS[rng.gen_range(0..ECHO_LEADS.len())];
                    let at = now + rng.gen_range(3_000..=15_000);
                    pending.insert((at, order), (bot, format!("{lead} {}", keys.join(" "))));
                    order += 1;
                }
            }
        }
        now += tick;
    }

    let state = session.into_state();
    let log = state.log().to_vec();
    let (selfs, dups) = audit_log(&log);
    audit.self_deliveries = selfs;
    audit.duplicate_deliveries = dups;
    audit.starvation_violations = audit_starvation(&log, tick)?;
    Ok(ScenarioResult {
        propagation: propagation_metrics(&log),
        participation: participation_metrics(&log),
        log,
        state,
        audit,
    })
}

/// Generates scripts for `scenario` and runs it.
pub fn run(scenario: &Scenario, seed: u64) -> Result<ScenarioResult, SimError> {
    let scripts = generate_scripts(scenario, seed);
    run_scenario(&scenario.config, scenario.roster, &scripts, seed)
}

/// Median time to full coverage for both topologies on one seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyComparison {
    pub seed: u64,
    pub fully_connected: Option<Millis>,
    pub ring: Option<Millis>,
}

impl TopologyComparison {
    /// Fully connected routing is strictly faster (never-covered is slowest).
    pub fn fully_connected_wins(&self) -> bool {
        match (self.fully_connected, self.ring) {
            (Some(f), Some(r)) => f < r,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

pub fn compare_topologies(
    scenario: &Scenario,
    seeds: &[u64],
) -> Result<Vec<TopologyComparison>, SimError> {
    seeds
        .iter()
        .map(|&seed| {
            let fc = run(
                &scenario.clone().with_topology(Topology::FullyConnected),
                seed,
            )?;
            let ring = run(&scenario.clone().with_topology(Topology::Ring), seed)?;
            Ok(TopologyComparison {
                seed,
                fully_connected: median_full_coverage(&fc.propagation),
                ring: median_full_coverage(&ring.propagation),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::jaccard_sets;
    use crate::text::token_set;

    #[test]
    fn paraphrases_share_key_words() {
        for topic in [Topic::TrafficCones, Topic::ToiletPlungers] {
            let ideas = topic.ideas();
            assert!(ideas.len() >= 15);
            for idea in &ideas {
                for a in idea {
                    assert!(tokenize(a).len() >= 5, "{a}");
                    for b in idea {
                        assert!(
                            jaccard_sets(&token_set(a), &token_set(b)) >= 0.5,
                            "{a} / {b}"
                        );
                    }
                }
            }
            for (i, x) in ideas.iter().enumerate() {
                for y in &ideas[i + 1..] {
                    assert!(
                        jaccard_sets(&token_set(x[0]), &token_set(y[0])) < 0.3,
                        "{} / {}",
                        x[0],
                        y[0]
                    );
                }
            }
        }
    }

    #[test]
    fn schedule_must_be_ordered() {
        let bot = BotScript {
            bot_id: "b".into(),
            schedule: vec![
                ScriptLine {
                    at: 5,
                    text: "a".into(),
                },
                ScriptLine {
                    at: 1,
                    text: "b".into(),
                },
            ],
            reply_policy: ReplyPolicy::Silent,
        };
        assert!(matches!(bot.validate(), Err(SimError::Script { .. })));
    }

    #[test]
    fn roster_mismatch() {
        let s = Scenario::default_csi();
        let scripts = generate_scripts(&s, 1);
        assert!(matches!(
            run_scenario(&s.config, 74, &scripts, 1),
            Err(SimError::RosterMismatch {
                roster: 74,
                scripts: 75
            })
        ));
    }

    #[test]
    fn silent_bots_produce_no_insights() {
        let mut s = Scenario::default_csi();
        s.script.message_every = 0;
        let r = run(&s, 3).unwrap();
        assert!(r.propagation.is_empty());
        assert_eq!(r.participation.gini, 0.0);
        assert_eq!(r.participation.counts.len(), 75);
    }

    #[test]
    fn scenario_file_round_trip() {
        let s = Scenario::default_csi();
        let toml_text = toml::to_string(&s).unwrap();
        assert_eq!(Scenario::from_toml_str(&toml_text).unwrap(), s);
        let minimal =
            "roster = 20\n[config]\nsession_id = \"x\"\nmode = \"csi\"\ntarget_subgroup_size = 5\n";
        let parsed = Scenario::from_toml_str(minimal).unwrap();
        assert_eq!(parsed.script, ScriptParams::default());
    }

    #[test]
    fn median_counts_missing_as_infinite() {
        let p = |l: Option<Millis>| InsightPropagation {
            insight_id: "i".into(),
            source_subgroup: "g".into(),
            created_at: 0,
            deliveries: vec![],
            coverage: 0,
            eligible: 1,
            full_coverage_latency: l,
        };
        assert_eq!(median_full_coverage(&[p(Some(5)), p(None), p(None)]), None);
        assert_eq!(
            median_full_coverage(&[p(Some(5)), p(Some(9)), p(None)]),
            Some(9)
        );
        assert_eq!(median_full_coverage(&[]), None);
    }
}
