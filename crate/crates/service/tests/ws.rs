use std::time::{Duration, Instant};

use deltahands::config::HandConfig;
use deltahands::Point3;
use deltahands_service::spawn_local;
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn connect() -> Ws {
    let addr = spawn_local(HandConfig::default()).await.unwrap();
    connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

/// Reads until a reply (ack or error) arrives, checking every state frame on the way.
async fn reply(ws: &mut Ws) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == "state" {
            check_state(&v);
        } else {
            return v;
        }
    }
}

async fn state_at_least(ws: &mut Ws, seq: u64) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == "state" {
            check_state(&v);
            if v["seq"].as_u64().unwrap() >= seq {
                return v;
            }
        }
    }
}

fn floats(v: &Value) -> Vec<f64> {
    serde_json::from_value(v.clone()).unwrap()
}

/// full = C · reduced for whichever topology produced the frame.
fn check_state(v: &Value) {
    assert_eq!(v["schema_version"], 1);
    let reduced = floats(&v["reduced_actuation"]);
    let full = floats(&v["full_actuation"]);
    assert_eq!(reduced.len(), v["n_reduced"].as_u64().unwrap() as usize);
    assert_eq!(full.len(), 12);
    let topo = HandConfig::default().params.n_fingers;
    let map: Vec<usize> = match reduced.len() {
        9 => (0..3 * topo).map(|l| if l < topo { 0 } else { l - topo + 1 }).collect(),
        12 => (0..12).collect(),
        _ => return,
    };
    for (l, a) in map.iter().enumerate() {
        assert_eq!(full[l], reduced[*a]);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reachable_targets_are_met() {
    let hand = HandConfig::default().build().unwrap();
    let square: Vec<Point3> = hand.fk(&vec![8.0; hand.n_reduced()]).unwrap();
    let mut ws = connect().await;
    send(&mut ws, json!({ "type": "targets", "fingertips": square, "schema_version": 1 })).await;
    let ack = reply(&mut ws).await;
    assert_eq!(ack["type"], "ack", "{ack}");
    let state = state_at_least(&mut ws, ack["seq"].as_u64().unwrap()).await;
    for r in floats(&state["residuals"]) {
        assert!(r < 1e-6, "residual {r}");
    }
    for a in floats(&state["reduced_actuation"]) {
        assert!((a - 8.0).abs() < 1e-9);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_messages_keep_the_socket_open() {
    let mut ws = connect().await;
    for bad in [json!({ "type": "nope" }), json!({ "type": "targets" }), json!({ "type": "mapping", "mode": "spiral" })] {
        send(&mut ws, bad).await;
        let r = reply(&mut ws).await;
        assert_eq!(r["type"], "error", "{r}");
        assert!(r["detail"].as_str().is_some());
    }
    ws.send(Message::Text("not json".into())).await.unwrap();
    assert_eq!(reply(&mut ws).await["type"], "error");
    send(&mut ws, json!({ "type": "targets", "fingertips": [] })).await;
    assert_eq!(reply(&mut ws).await["error"], "DimensionMismatch");
    send(&mut ws, json!({ "type": "mapping", "mode": "direct", "schema_version": 2 })).await;
    assert_eq!(reply(&mut ws).await["error"], "UnsupportedVersion");
    send(&mut ws, json!({ "type": "mapping", "mode": "direct" })).await;
    assert_eq!(reply(&mut ws).await["type"], "ack");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn synergy_switch_changes_dimensions_atomically() {
    let mut ws = connect().await;
    for (topo, m) in [("12", 12), ("9", 9), ("5", 5)] {
        send(&mut ws, json!({ "type": "synergy", "topology": topo })).await;
        let ack = reply(&mut ws).await;
        assert_eq!(ack["type"], "ack", "{ack}");
        let st = state_at_least(&mut ws, ack["seq"].as_u64().unwrap()).await;
        assert_eq!(st["n_reduced"], m);
    }
    send(&mut ws, json!({ "type": "synergy", "topology": "custom" })).await;
    assert_eq!(reply(&mut ws).await["error"], "InvalidTopology");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn teleop_samples_drive_the_hand() {
    let mut ws = connect().await;
    send(&mut ws, json!({ "type": "mapping", "mode": "polar" })).await;
    assert_eq!(reply(&mut ws).await["type"], "ack");
    let mut sample = serde_json::to_value(deltahands::teleop::PoseSample::neutral()).unwrap();
    sample["right_index"]["x"] = json!(40.0);
    send(&mut ws, json!({ "type": "teleop_sample", "sample": sample })).await;
    let ack = reply(&mut ws).await;
    assert_eq!(ack["type"], "ack", "{ack}");
    let st = state_at_least(&mut ws, ack["seq"].as_u64().unwrap()).await;
    assert_eq!(st["mapping"]["mode"], "polar");
    assert_eq!(st["fingertips"].as_array().unwrap().len(), 4);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn idle_broadcast_rate_is_bounded() {
    let mut ws = connect().await;
    let start = Instant::now();
    let mut frames = 0;
    while start.elapsed() < Duration::from_secs(2) {
        if next_json(&mut ws).await["type"] == "state" {
            frames += 1;
        }
    }
    let hz = frames as f64 / start.elapsed().as_secs_f64();
    assert!((10.0..=60.0).contains(&hz), "{hz} Hz");
}
