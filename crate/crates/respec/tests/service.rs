use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use respec::io::{read_json, read_jsonl, MODLOG_FILE, SUMMARY_FILE, TRACE_FILE};
use respec::service::{router, AppState, ServiceConfig};
use respec_core::runner::{Summary, TraceRecord};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const PICK_SPEC: &str = "G(pick => F[0,30](norm2(robot.xy - [3,4]) < 1))";

async fn start() -> (SocketAddr, tempfile::TempDir) {
    let data = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: data.path().to_path_buf(),
        scenario_dir: None,
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(AppState::new(config))).await.unwrap() });
    (addr, data)
}

async fn http_get(addr: SocketAddr, path: &str) -> Value {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"), "{buf}");
    let body = buf.split("\r\n\r\n").nth(1).unwrap();
    serde_json::from_str(body).unwrap()
}

async fn connect(addr: SocketAddr, path: &str) -> Ws {
    connect_async(format!("ws://{addr}{path}")).await.unwrap().0
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string())).await.unwrap();
}

async fn next(ws: &mut Ws, wait: Duration) -> Option<Value> {
    loop {
        match tokio::time::timeout(wait, ws.next()).await {
            Ok(Some(Ok(Message::Text(t)))) => return Some(serde_json::from_str(&t).unwrap()),
            Ok(Some(Ok(_))) => continue,
            _ => return None,
        }
    }
}

/// First message of type `kind`, skipping others.
async fn wait_for(ws: &mut Ws, kind: &str, wait: Duration) -> Value {
    let deadline = tokio::time::Instant::now() + wait;
    loop {
        let left = deadline.saturating_duration_since(tokio::time::Instant::now());
        let m = next(ws, left).await.unwrap_or_else(|| panic!("no {kind} message"));
        assert_eq!(m["v"], 1, "{m}");
        if m["type"] == kind {
            return m;
        }
    }
}

async fn wait_file(p: &Path) {
    for _ in 0..400 {
        if p.exists() {
            return;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    panic!("{} never appeared", p.display());
}

fn pick_body() -> Value {
    let mut s = respec_core::scenario::builtin_world("alarm").unwrap();
    s.name = "pick".into();
    s.spec = PICK_SPEC.into();
    s.events.clear();
    s.duration = 40.0;
    serde_json::to_value(s).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_scenarios() {
    let (addr, _data) = start().await;
    let h = http_get(addr, "/health").await;
    assert_eq!(h["v"], 1);
    assert_eq!(h["status"], "ok");
    let s = http_get(addr, "/scenarios").await;
    let names: Vec<&str> = s["scenarios"].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect();
    assert!(names.contains(&"collect") && names.contains(&"collect-two-depots"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_input_is_answered_once() {
    let (addr, _data) = start().await;
    let mut ws = connect(addr, "/session/m1?scenario=alarm&paused=true").await;
    ws.send(Message::Text("{not json".into())).await.unwrap();
    ws.send(Message::Text(r#"{"type":"teleport"}"#.into())).await.unwrap();
    send(&mut ws, json!({"v": 7, "type": "pause"})).await;
    send(&mut ws, json!({"v": 1, "type": "set_rate", "x": -2})).await;
    send(&mut ws, json!({"v": 1, "type": "fire_event", "name": "nope"})).await;
    send(&mut ws, json!({"v": 1, "type": "pause"})).await;
    let mut got = Vec::new();
    while let Some(m) = next(&mut ws, Duration::from_millis(700)).await {
        got.push(m);
    }
    assert_eq!(got.len(), 6, "{got:?}");
    assert!(got.iter().all(|m| m["v"] == 1));
    assert_eq!(got[0], json!({"v":1,"type":"error","ok":false,"error":"parse","detail":null}));
    assert_eq!(got[1]["error"], "parse");
    assert_eq!(got[2]["error"], "version");
    assert_eq!((got[3]["ok"].clone(), got[3]["error"].clone()), (json!(false), json!("invalid_rate")));
    assert_eq!(got[4]["error"], "unknown_event");
    assert_eq!((got[5]["command"].clone(), got[5]["ok"].clone()), (json!("pause"), json!(true)));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn event_then_modification() {
    let (addr, data) = start().await;
    let mut ws = connect(addr, "/session/ev").await;
    send(&mut ws, json!({"v":1,"type":"set_rate","x":20.0})).await;
    assert_eq!(wait_for(&mut ws, "ack", Duration::from_secs(5)).await["ok"], true);
    send(&mut ws, json!({"v":1,"type":"load_scenario","body":pick_body()})).await;
    let ack = wait_for(&mut ws, "ack", Duration::from_secs(30)).await;
    assert_eq!((ack["command"].clone(), ack["ok"].clone()), (json!("load_scenario"), json!(true)));
    send(&mut ws, json!({"v":1,"type":"fire_event","name":"pick"})).await;
    let ack = wait_for(&mut ws, "ack", Duration::from_secs(5)).await;
    assert_eq!(ack["ok"], true);
    let upd = loop {
        let u = wait_for(&mut ws, "state_update", Duration::from_secs(5)).await;
        if u["events"].as_array().unwrap().iter().any(|e| e == "pick") {
            break u;
        }
    };
    let obs = upd["obligations"].as_array().unwrap();
    assert_eq!(obs.len(), 1);
    assert_eq!(obs[0]["status"], "active");
    assert_eq!(obs[0]["t_act"], upd["t"]);

    send(&mut ws, json!({"v":1,"type":"modify","command":"set-bounds @1 [0,45]"})).await;
    let res = wait_for(&mut ws, "modification_result", Duration::from_secs(5)).await;
    assert_eq!(res["ok"], true, "{res}");
    assert!(res["timing_ms"].as_f64().unwrap() >= 0.0);
    let next_upd = wait_for(&mut ws, "state_update", Duration::from_secs(5)).await;
    assert_eq!(next_upd["obligations"][0]["window"], json!([0.0, 45.0]));

    send(&mut ws, json!({"v":1,"type":"modify","command":"set-bounds @9 [0,1]"})).await;
    let res = wait_for(&mut ws, "modification_result", Duration::from_secs(5)).await;
    assert_eq!(res["ok"], false);
    ws.close(None).await.unwrap();
    wait_file(&data.path().join("ev").join(SUMMARY_FILE)).await;
    tokio::time::sleep(Duration::from_millis(200)).await;
    let log: Vec<Value> = read_jsonl(&data.path().join("ev").join(MODLOG_FILE)).unwrap();
    assert_eq!(log.len(), 2);
    assert!(log.iter().all(|l| l["v"] == 1));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn paused_modification_applies_immediately() {
    let (addr, _data) = start().await;
    let mut ws = connect(addr, "/session/pz?scenario=alarm&paused=true").await;
    send(&mut ws, json!({"v":1,"type":"modify","command":"set-bounds @1 [0,12]"})).await;
    let res = wait_for(&mut ws, "modification_result", Duration::from_secs(10)).await;
    assert_eq!(res["ok"], true);
    assert!(next(&mut ws, Duration::from_millis(400)).await.is_none(), "paused session must stay silent");
    send(&mut ws, json!({"v":1,"type":"resume"})).await;
    wait_for(&mut ws, "state_update", Duration::from_secs(5)).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn immediate_close_writes_empty_run() {
    let (addr, data) = start().await;
    let ws = connect(addr, "/session/quick").await;
    drop(ws);
    let dir = data.path().join("quick");
    wait_file(&dir.join(SUMMARY_FILE)).await;
    tokio::time::sleep(Duration::from_millis(100)).await;
    let s: Summary = read_json(&dir.join(SUMMARY_FILE)).unwrap();
    assert_eq!(s.steps, 0);
    let t: Vec<TraceRecord> = read_jsonl(&dir.join(TRACE_FILE)).unwrap();
    assert!(t.is_empty());
    assert!(dir.join(MODLOG_FILE).exists());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_are_isolated() {
    let (addr, data) = start().await;
    let mut a = connect(addr, "/session/a?scenario=alarm&rate=1000").await;
    let mut b = connect(addr, "/session/b?scenario=alarm&rate=1000&paused=true").await;
    let fa = wait_for(&mut a, "finished", Duration::from_secs(30)).await;
    assert_eq!(fa["summary"]["steps"], 100);
    assert!(next(&mut b, Duration::from_millis(300)).await.is_none());
    send(&mut b, json!({"v":1,"type":"resume"})).await;
    let fb = wait_for(&mut b, "finished", Duration::from_secs(30)).await;
    assert_eq!(fb["summary"]["steps"], 100);
    drop((a, b));
    for id in ["a", "b"] {
        let dir = data.path().join(id);
        wait_file(&dir.join(SUMMARY_FILE)).await;
        let t: Vec<TraceRecord> = read_jsonl(&dir.join(TRACE_FILE)).unwrap();
        assert_eq!(t.len(), 100);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_client_does_not_stall_collect() {
    let (addr, data) = start().await;
    // Never reads: its socket fills up while the loop keeps going.
    let idle = connect(addr, "/session/c?scenario=collect&rate=100000").await;
    let mut reader = connect(addr, "/session/c").await;
    let done = wait_for(&mut reader, "finished", Duration::from_secs(240)).await;
    assert_eq!(done["summary"]["violations"], 0, "{done}");
    drop((idle, reader));
    let dir = data.path().join("c");
    wait_file(&dir.join(SUMMARY_FILE)).await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    let s: Summary = read_json(&dir.join(SUMMARY_FILE)).unwrap();
    assert_eq!(s.violations, 0);
    assert!(s.steps > 500);
    for f in [TRACE_FILE, MODLOG_FILE] {
        assert!(dir.join(f).exists());
    }
}
