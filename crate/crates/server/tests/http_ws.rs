//! The HTTP control API and WebSocket protocol over a real listener.

use std::sync::Arc;
use std::time::Duration;

use csi_core::eventlog;
use csi_core::session::{Phase, SessionState};
use csi_server::wire::ServerMsg;
use csi_server::{cli, http, Hub, HubOptions, ManualClock};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Server {
    base: String,
    ws: String,
    clock: Arc<ManualClock>,
    client: reqwest::Client,
}

async fn server() -> Server {
    let clock = Arc::new(ManualClock::default());
    let hub = Hub::new(HubOptions {
        data_dir: None,
        auto_tick: false,
        clock: clock.clone(),
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, http::router(hub)).await.unwrap() });
    Server {
        base: format!("http://{addr}"),
        ws: format!("ws://{addr}/ws"),
        clock,
        client: reqwest::Client::new(),
    }
}

impl Server {
    async fn post(&self, path: &str, body: Option<Value>) -> (u16, Value) {
        let mut req = self.client.post(format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    async fn get_text(&self, path: &str) -> (u16, String) {
        let resp = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        (resp.status().as_u16(), resp.text().await.unwrap())
    }
}

async fn send(ws: &mut Ws, record: Value) {
    ws.send(Message::Text(format!("{record}\n").into()))
        .await
        .unwrap();
}

async fn recv(ws: &mut Ws) -> ServerMsg {
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("server record within 5 s")
            .unwrap()
            .unwrap();
        if let Message::Text(t) = frame {
            let line = t.as_str();
            assert!(
                line.ends_with('\n') && line.matches('\n').count() == 1,
                "one record per line: {line:?}"
            );
            return serde_json::from_str(line).unwrap();
        }
    }
}

async fn connect(s: &Server) -> Ws {
    connect_async(&s.ws).await.unwrap().0
}

#[tokio::test]
async fn control_api_validates_and_routes() {
    let s = server().await;
    let (code, body) = s
        .post(
            "/sessions",
            Some(json!({"session_id":"x","mode":"csi","target_subgroup_size":3})),
        )
        .await;
    assert_eq!(code, 422);
    assert_eq!(body["violations"][0]["field"], "target_subgroup_size");
    let resp = s
        .client
        .post(format!("{}/sessions", s.base))
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    assert_eq!(s.get_text("/sessions/missing/report").await.0, 404);

    let (code, a) = s
        .post(
            "/sessions",
            Some(json!({"session_id":"x","mode":"csi","target_subgroup_size":5})),
        )
        .await;
    assert_eq!(code, 201);
    let (_, b) = s
        .post(
            "/sessions",
            Some(json!({"session_id":"x","mode":"csi","target_subgroup_size":5})),
        )
        .await;
    assert_ne!(a["session_id"], b["session_id"]);
    let id = a["session_id"].as_str().unwrap();
    let (code, err) = s.post(&format!("/sessions/{id}/start"), None).await;
    assert_eq!(code, 409);
    assert!(err["error"].as_str().unwrap().contains("roster too small"));
}

#[tokio::test]
async fn live_session_end_to_end() {
    let s = server().await;
    let config = json!({
        "session_id": "live", "mode": "csi", "target_subgroup_size": 5,
        "task_prompt": "Uses for a toilet plunger?"
    });
    let (_, created) = s.post("/sessions", Some(config)).await;
    let id = created["session_id"].as_str().unwrap().to_owned();

    // Records before joining are rejected without closing the connection.
    let mut stray = connect(&s).await;
    send(&mut stray, json!({"type":"chat","text":"hi"})).await;
    assert!(
        matches!(recv(&mut stray).await, ServerMsg::Error { message } if message.contains("join"))
    );
    send(
        &mut stray,
        json!({"type":"join","session_id":"nope","display_name":"x"}),
    )
    .await;
    assert!(matches!(recv(&mut stray).await, ServerMsg::Error { .. }));
    stray.send(Message::Text("garbage\n".into())).await.unwrap();
    assert!(
        matches!(recv(&mut stray).await, ServerMsg::Error { message } if message.contains("unreadable"))
    );

    let mut clients = Vec::new();
    for name in ["ana", "ben", "cai", "dee", "eli"] {
        let mut ws = connect(&s).await;
        send(
            &mut ws,
            json!({"type":"join","session_id": id, "display_name": name}),
        )
        .await;
        assert!(matches!(
            recv(&mut ws).await,
            ServerMsg::Welcome {
                subgroup_id: None,
                ..
            }
        ));
        assert!(
            matches!(recv(&mut ws).await, ServerMsg::System { phase: Phase::Lobby, task_prompt, .. } if task_prompt.contains("plunger"))
        );
        clients.push(ws);
    }

    s.clock.set(1_000);
    let (code, status) = s.post(&format!("/sessions/{id}/start"), None).await;
    assert_eq!((code, status["phase"].as_str()), (200, Some("running")));
    for ws in &mut clients {
        assert!(
            matches!(recv(ws).await, ServerMsg::Welcome { subgroup_id: Some(_), roster, .. } if roster.len() == 5)
        );
        assert!(matches!(
            recv(ws).await,
            ServerMsg::System {
                phase: Phase::Running,
                remaining_seconds: 720,
                ..
            }
        ));
    }

    s.clock.set(3_000);
    send(
        &mut clients[0],
        json!({"type":"chat","text":"plunger as a drum mallet"}),
    )
    .await;
    send(&mut clients[1], json!({"type":"chat","text":"love it"})).await;
    let mut seen = Vec::new();
    for ws in &mut clients {
        let mut ids = Vec::new();
        for _ in 0..2 {
            match recv(ws).await {
                ServerMsg::Chat {
                    message_id,
                    author_name,
                    timestamp,
                    ..
                } => {
                    assert!(["ana", "ben"].contains(&author_name.as_str()));
                    assert_eq!(timestamp, 3_000);
                    ids.push(message_id);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        seen.push(ids);
    }
    assert!(
        seen.windows(2).all(|w| w[0] == w[1]),
        "every member sees one order"
    );

    // Surveys open only after the end.
    send(
        &mut clients[0],
        json!({"type":"survey","answers":{"q1":"csi"}}),
    )
    .await;
    assert!(matches!(
        recv(&mut clients[0]).await,
        ServerMsg::Error { .. }
    ));

    s.clock.set(4_000);
    let (code, ended) = s.post(&format!("/sessions/{id}/end"), None).await;
    assert_eq!(code, 200);
    let report_ref = ended["report_ref"].as_str().unwrap().to_owned();
    for ws in &mut clients {
        assert!(matches!(
            recv(ws).await,
            ServerMsg::System {
                phase: Phase::Ended,
                remaining_seconds: 0,
                ..
            }
        ));
        assert!(matches!(recv(ws).await, ServerMsg::Ended { report_ref: r } if r == report_ref));
    }
    assert_eq!(s.post(&format!("/sessions/{id}/end"), None).await.0, 200);

    let (code, log) = s.get_text(&format!("/sessions/{id}/log")).await;
    assert_eq!(code, 200);
    let events = eventlog::read_jsonl(log.as_bytes()).unwrap();
    let state = SessionState::replay(&events).unwrap();
    assert_eq!(state.messages().len(), 2);

    // The served report equals the CLI's report over the served log.
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("events.jsonl"), &log).unwrap();
    cli::report(&dir.path().join("events.jsonl"), &dir.path().join("r.json")).unwrap();
    cli::report(&dir.path().join("events.jsonl"), &dir.path().join("r.txt")).unwrap();
    assert_eq!(
        s.get_text(&report_ref).await.1,
        std::fs::read_to_string(dir.path().join("r.json")).unwrap()
    );
    assert_eq!(
        s.get_text(&format!("{report_ref}?format=text")).await.1,
        std::fs::read_to_string(dir.path().join("r.txt")).unwrap()
    );

    for (i, ws) in clients.iter_mut().enumerate() {
        let pick = if i < 4 { "csi" } else { "chat" };
        let answers: Value = (1..=7)
            .map(|q| (format!("q{q}"), json!(pick)))
            .collect::<serde_json::Map<_, _>>()
            .into();
        send(ws, json!({"type":"survey","answers": answers})).await;
    }
    // Survey records carry no acknowledgement; poll until all five land.
    let mut counted = 0;
    for _ in 0..100 {
        let (_, status) = s.get_text(&format!("/sessions/{id}")).await;
        counted = serde_json::from_str::<Value>(&status).unwrap()["survey_responses"]
            .as_u64()
            .unwrap();
        if counted == 5 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    assert_eq!(counted, 5);
    let (code, results) = s
        .get_text(&format!("/sessions/{id}/survey?family_alpha=0.01&tests=7"))
        .await;
    assert_eq!(code, 200);
    let results: Value = serde_json::from_str(&results).unwrap();
    assert_eq!(results["results"].as_array().unwrap().len(), 7);
    assert_eq!(results["results"][0]["csi_count"], 4);
    let (_, table) = s
        .get_text(&format!("/sessions/{id}/survey?format=text"))
        .await;
    assert!(table.contains("q7"));
}
