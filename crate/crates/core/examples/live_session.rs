//! Drives one session by hand: lobby, partition, chat, distillation, relay,
//! end, then rebuilds the state from its event log.
//!
//! cargo run -p csi-core --example live_session

use csi_core::eventlog;
use csi_core::model::SessionConfig;
use csi_core::session::{Session, SessionState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = SessionConfig::csi("demo", 5);
    config.task_prompt = "What could a toilet plunger be used for besides plumbing?".into();
    let mut session = Session::new(config)?;
    let people: Vec<_> = (0..10)
        .map(|i| {
            session
                .join(&format!("guest{i}"), 0)
                .map(|j| j.participant_id)
        })
        .collect::<Result<_, _>>()?;
    session.start(0)?;
    let group_of = |s: &Session, i: usize| {
        s.state()
            .participants()
            .find(|p| p.participant_id == people[i])
            .map(|p| p.subgroup_id.clone())
    };
    let first = group_of(&session, 0);
    let talkers: Vec<usize> = (0..people.len())
        .filter(|&i| group_of(&session, i) == first)
        .collect();
    let lines = [
        "plungers would make great drum mallets for a kids marching band",
        "maybe",
        "a plunger stuck on the wall could hold a phone while cooking",
        "sure",
        "ok",
        "right",
    ];
    for (k, text) in lines.iter().enumerate() {
        let posted = session.post_message(
            &people[talkers[k % talkers.len()]],
            text,
            1_000 * (k as u64 + 1),
        )?;
        println!(
            "{} in {}: {text:?} -> {} recipients",
            posted.message.message_id,
            posted.message.subgroup_id,
            posted.recipients.len()
        );
    }

    let mut now = 10_000;
    while now <= 60_000 {
        let out = session.tick(now)?;
        for i in &out.insights_created {
            println!("{} s: insight {i} created", now / 1000);
        }
        for d in &out.deliveries {
            println!(
                "{} s: {} relayed into {}",
                now / 1000,
                d.insight_id,
                d.receiver
            );
        }
        now += 5_000;
    }
    session.end(now)?;

    let jsonl = eventlog::to_jsonl(session.log());
    let replayed = SessionState::replay(&eventlog::read_jsonl(jsonl.as_bytes())?)?;
    println!(
        "{} events; replay matches live state: {}",
        session.log().len(),
        &replayed == session.state()
    );
    Ok(())
}
