//! Runs a live session inside one process on a manual clock and prints the
//! wire records one participant's connection would receive.
//!
//! cargo run -p csi-server --example in_process_hub

use std::sync::Arc;

use csi_core::model::SessionConfig;
use csi_server::{Hub, HubOptions, ManualClock};
use tokio::sync::mpsc;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data_dir = std::env::temp_dir().join("csi-hub-demo");
    let clock = Arc::new(ManualClock::default());
    let hub = Hub::new(HubOptions {
        data_dir: Some(data_dir.clone()),
        auto_tick: false,
        clock: clock.clone(),
    });
    let mut config = SessionConfig::csi("demo", 5);
    config.task_prompt = "What else could a traffic cone be used for?".into();
    let session = hub.create(config)?;

    // Participant 0 listens; the rest join without a connection.
    let (tx, mut rx) = mpsc::unbounded_channel();
    let mut people = vec![
        session
            .join("watcher", hub.next_connection(), Some(tx))
            .await?,
    ];
    for i in 1..10 {
        people.push(
            session
                .join(&format!("guest{i}"), hub.next_connection(), None)
                .await?,
        );
    }
    let started = session.start().await?;
    println!(
        "{} started with {} subgroups",
        started.session_id, started.subgroups
    );

    // Everyone takes turns, so both subgroups raise ideas the other can get.
    let lines = [
        "traffic cones could be megaphones for lifeguards at crowded beaches",
        "agree",
        "cones upside down make decent planters for herbs on a balcony",
        "maybe",
        "sure",
        "ok",
    ];
    for (k, line) in lines.iter().cycle().take(12).enumerate() {
        clock.set(1_000 * (k as u64 + 1));
        session
            .chat(&people[k % people.len()].participant_id, line)
            .await?;
    }
    for t in (15_000..=60_000).step_by(5_000) {
        clock.set(t);
        session.tick().await?;
    }
    clock.set(61_000);
    session.end().await?;

    while let Ok(record) = rx.try_recv() {
        print!("{}", record.to_line());
    }
    println!(
        "{} events persisted under {}",
        session.status().await?.events,
        data_dir.display()
    );
    Ok(())
}
