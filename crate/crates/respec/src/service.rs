//! Websocket session service. Each session owns one runtime loop on its own
//! thread; clients talk to it through an inbound queue and listen to a
//! lossy broadcast of step snapshots, so no client can stall the loop.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use respec_core::abstraction::PropKind;
use respec_core::modify::{Feedback, ModReport};
use respec_core::runner::{Runner, Summary, TraceRecord, SCHEMA_VERSION};
use respec_core::runtime::RuntimeConfig;
use respec_core::scenario::{builtin_world, ScenarioScript, BUILTIN};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc as tmpsc};

use crate::clock::WallClock;
use crate::io::{read_json, scenario_files, write_run};

/// Queue depth of the snapshot broadcast; slower clients skip ahead.
const BROADCAST_DEPTH: usize = 64;
/// Longest wait of an idle or paused loop between inbox checks.
const IDLE_POLL: Duration = Duration::from_millis(50);

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub scenario_dir: Option<PathBuf>,
}

impl ServiceConfig {
    /// Persistence root from RESPEC_DATA_DIR, else `./respec-data`.
    pub fn from_env() -> Self {
        ServiceConfig {
            data_dir: std::env::var_os("RESPEC_DATA_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("respec-data")),
            scenario_dir: None,
        }
    }
}

/// Client to server.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Modify { command: String },
    FireEvent { name: String },
    Pause,
    Resume,
    SetRate { x: f64 },
    LoadScenario {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        body: Option<ScenarioScript>,
    },
}

impl ClientMessage {
    fn kind(&self) -> &'static str {
        match self {
            Self::Modify { .. } => "modify",
            Self::FireEvent { .. } => "fire_event",
            Self::Pause => "pause",
            Self::Resume => "resume",
            Self::SetRate { .. } => "set_rate",
            Self::LoadScenario { .. } => "load_scenario",
        }
    }
}

/// Decodes a client frame; the error string is the reply's `error` field.
pub fn decode(text: &str) -> Result<ClientMessage, &'static str> {
    let v: Value = serde_json::from_str(text).map_err(|_| "parse")?;
    match v.get("v") {
        None => {}
        Some(x) if x.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(_) => return Err("version"),
    }
    serde_json::from_value(v).map_err(|_| "parse")
}

fn error_reply(error: &str, detail: Option<String>) -> String {
    json!({"v": SCHEMA_VERSION, "type": "error", "ok": false, "error": error, "detail": detail}).to_string()
}

fn ack(command: &str, ok: bool, error: Option<&str>, extra: Value) -> String {
    let mut v = json!({"v": SCHEMA_VERSION, "type": "ack", "command": command, "ok": ok, "error": error});
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    v.to_string()
}

#[derive(Serialize)]
struct StateUpdate<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

#[derive(Serialize)]
struct ModificationResult<'a> {
    v: u32,
    #[serde(rename = "type")]
    kind: &'static str,
    command: &'a str,
    ok: bool,
    error: Option<&'a str>,
    feedback: &'a [Feedback],
    timing_ms: f64,
    requires_pause: bool,
}

fn modification_result(r: &ModReport) -> String {
    serde_json::to_string(&ModificationResult {
        v: SCHEMA_VERSION,
        kind: "modification_result",
        command: &r.command,
        ok: r.ok,
        error: r.error.as_deref(),
        feedback: &r.feedback,
        timing_ms: r.timing_ms,
        requires_pause: r.requires_pause,
    })
    .expect("serializes")
}

type Reply = tmpsc::UnboundedSender<String>;

enum Inbound {
    Command(ClientMessage, Reply),
    Close,
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct SessionParams {
    pub scenario: Option<String>,
    #[serde(default)]
    pub paused: bool,
    pub rate: Option<f64>,
    /// Broadcast every n-th step.
    pub decimate: Option<u32>,
}

struct SessionHandle {
    inbox: mpsc::Sender<Inbound>,
    updates: broadcast::Sender<Arc<str>>,
    clients: usize,
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Arc<Mutex<HashMap<String, SessionHandle>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            config: Arc::new(config),
            sessions: Arc::default(),
        }
    }

    fn scenario_names(&self) -> Vec<String> {
        let mut names: Vec<String> = BUILTIN.iter().map(|s| s.to_string()).collect();
        if let Some(d) = &self.config.scenario_dir {
            names.extend(scenario_files(d).into_iter().map(|(n, _)| n));
        }
        names
    }
}

fn resolve_scenario(config: &ServiceConfig, name: &str) -> Result<ScenarioScript, String> {
    if let Some(d) = &config.scenario_dir {
        if let Some((_, p)) = scenario_files(d).into_iter().find(|(n, _)| n == name) {
            let mut s: ScenarioScript = read_json(&p).map_err(|e| e.to_string())?;
            s.name = name.into();
            return Ok(s);
        }
    }
    builtin_world(name).map_err(|e| e.to_string())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scenarios", get(scenarios))
        .route("/session/:id", get(session_ws))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(config))).await
}

async fn health(State(st): State<AppState>) -> impl IntoResponse {
    let n = st.sessions.lock().expect("session table").len();
    Json(json!({"v": SCHEMA_VERSION, "status": "ok", "sessions": n}))
}

async fn scenarios(State(st): State<AppState>) -> impl IntoResponse {
    Json(json!({"v": SCHEMA_VERSION, "scenarios": st.scenario_names()}))
}

async fn session_ws(
    ws: WebSocketUpgrade,
    Path(id): Path<String>,
    Query(params): Query<SessionParams>,
    State(st): State<AppState>,
) -> impl IntoResponse {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return (axum::http::StatusCode::BAD_REQUEST, "session id must be [A-Za-z0-9_-]+").into_response();
    }
    ws.on_upgrade(move |socket| client(socket, id, params, st))
}

fn attach(st: &AppState, id: &str, params: SessionParams) -> (mpsc::Sender<Inbound>, broadcast::Receiver<Arc<str>>) {
    let mut table = st.sessions.lock().expect("session table");
    if let Some(h) = table.get_mut(id) {
        h.clients += 1;
        return (h.inbox.clone(), h.updates.subscribe());
    }
    let (tx, rx) = mpsc::channel();
    let (updates, sub) = broadcast::channel(BROADCAST_DEPTH);
    let mut session = Session::new(id, st.config.clone(), updates.clone(), params);
    thread::Builder::new()
        .name(format!("session-{id}"))
        .spawn(move || session.run(rx))
        .expect("spawn session thread");
    table.insert(
        id.to_string(),
        SessionHandle {
            inbox: tx.clone(),
            updates,
            clients: 1,
        },
    );
    (tx, sub)
}

fn detach(st: &AppState, id: &str) {
    let mut table = st.sessions.lock().expect("session table");
    if let Some(h) = table.get_mut(id) {
        h.clients -= 1;
        if h.clients == 0 {
            let _ = h.inbox.send(Inbound::Close);
            table.remove(id);
        }
    }
}

async fn client(socket: WebSocket, id: String, params: SessionParams, st: AppState) {
    let (inbox, mut updates) = attach(&st, &id, params);
    let (reply_tx, mut replies) = tmpsc::unbounded_channel::<String>();
    let (mut sink, mut stream) = socket.split();
    loop {
        tokio::select! {
            frame = stream.next() => match frame {
                Some(Ok(Message::Text(text))) => match decode(&text) {
                    Ok(msg) => {
                        if inbox.send(Inbound::Command(msg, reply_tx.clone())).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        if sink.send(Message::Text(error_reply(e, None))).await.is_err() {
                            break;
                        }
                    }
                },
                Some(Ok(Message::Binary(_))) => {
                    if sink.send(Message::Text(error_reply("parse", None))).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            Some(r) = replies.recv() => {
                if sink.send(Message::Text(r)).await.is_err() {
                    break;
                }
            }
            u = updates.recv() => match u {
                Ok(text) => {
                    if sink.send(Message::Text(text.to_string())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
    detach(&st, &id);
}

/// The loop of one session.
struct Session {
    id: String,
    config: Arc<ServiceConfig>,
    updates: broadcast::Sender<Arc<str>>,
    runner: Option<Runner>,
    trace: Vec<TraceRecord>,
    paused: bool,
    rate: f64,
    decimate: u32,
    events: BTreeSet<String>,
    mods: Vec<(String, Reply)>,
    finished_sent: bool,
    clock: WallClock,
    pending_load: Option<String>,
}

impl Session {
    fn new(id: &str, config: Arc<ServiceConfig>, updates: broadcast::Sender<Arc<str>>, p: SessionParams) -> Self {
        Session {
            id: id.into(),
            config,
            updates,
            runner: None,
            trace: Vec::new(),
            paused: p.paused,
            rate: p.rate.filter(|r| r.is_finite() && *r > 0.0).unwrap_or(1.0),
            decimate: p.decimate.unwrap_or(1).max(1),
            events: BTreeSet::new(),
            mods: Vec::new(),
            finished_sent: false,
            clock: WallClock::new(),
            pending_load: p.scenario,
        }
    }

    fn broadcast(&self, text: String) {
        // No receivers is fine; a full queue overwrites the oldest entry.
        let _ = self.updates.send(Arc::from(text));
    }

    fn load(&mut self, script: ScenarioScript) -> Result<Value, String> {
        self.persist();
        let runner = Runner::new(script, RuntimeConfig::default(), &self.clock).map_err(|e| e.to_string())?;
        let info = json!({"name": runner.script.name, "prep_time_ms": runner.ctx.prep_ms, "automata": runner.ctx.b_set.len()});
        self.runner = Some(runner);
        self.trace.clear();
        self.finished_sent = false;
        self.events.clear();
        Ok(info)
    }

    fn handle(&mut self, msg: ClientMessage, reply: Reply) {
        let kind = msg.kind();
        let send = |text: String| {
            let _ = reply.send(text);
        };
        match msg {
            ClientMessage::Pause => {
                self.paused = true;
                send(ack(kind, true, None, json!({})));
            }
            ClientMessage::Resume => {
                self.paused = false;
                send(ack(kind, true, None, json!({})));
            }
            ClientMessage::SetRate { x } => {
                if x.is_finite() && x > 0.0 {
                    self.rate = x;
                    send(ack(kind, true, None, json!({"rate": x})));
                } else {
                    send(ack(kind, false, Some("invalid_rate"), json!({})));
                }
            }
            ClientMessage::LoadScenario { name, body } => {
                let script = match (body, name) {
                    (Some(b), _) => Ok(b),
                    (None, Some(n)) => resolve_scenario(&self.config, &n),
                    (None, None) => Err("load_scenario needs a name or a body".to_string()),
                };
                match script.and_then(|s| self.load(s)) {
                    Ok(info) => send(ack(kind, true, None, info)),
                    Err(e) => send(ack(kind, false, Some("load"), json!({"detail": e}))),
                }
            }
            ClientMessage::FireEvent { name } => {
                let Some(r) = &self.runner else {
                    send(ack(kind, false, Some("no_scenario"), json!({})));
                    return;
                };
                let known = r
                    .ctx
                    .monitor
                    .props
                    .get(&name)
                    .is_some_and(|p| p.kind == PropKind::Event);
                if known {
                    self.events.insert(name.clone());
                    send(ack(kind, true, None, json!({"name": name})));
                } else {
                    send(ack(kind, false, Some("unknown_event"), json!({"name": name})));
                }
            }
            ClientMessage::Modify { command } => match &mut self.runner {
                None => send(ack(kind, false, Some("no_scenario"), json!({}))),
                Some(r) if self.paused => {
                    let rep = r.apply_now(&command, &self.clock);
                    send(modification_result(&rep));
                }
                Some(_) => self.mods.push((command, reply)),
            },
        }
    }

    fn step(&mut self) {
        let Some(r) = &mut self.runner else { return };
        let texts: Vec<String> = self.mods.iter().map(|(c, _)| c.clone()).collect();
        let before = r.modlog.len();
        let events = std::mem::take(&mut self.events);
        let rec = r.step(&events, &texts, &self.clock);
        // Answer each client command with its own log entry.
        let mut fresh: Vec<ModReport> = r.modlog[before..].to_vec();
        for (cmd, reply) in self.mods.drain(..) {
            if let Some(i) = fresh.iter().position(|m| m.command == cmd) {
                let _ = reply.send(modification_result(&fresh.remove(i)));
            }
        }
        let finished = r.finished();
        let summary = finished.then(|| r.summary());
        if rec.step % self.decimate as u64 == 0 || finished {
            self.broadcast(
                serde_json::to_string(&StateUpdate {
                    kind: "state_update",
                    record: &rec,
                })
                .expect("serializes"),
            );
        }
        self.trace.push(rec);
        if let Some(s) = summary {
            self.finished_sent = true;
            self.persist();
            self.broadcast(json!({"v": SCHEMA_VERSION, "type": "finished", "summary": s}).to_string());
        }
    }

    fn persist(&self) {
        let dir = self.config.data_dir.join(&self.id);
        let result = match &self.runner {
            Some(r) => write_run(&dir, &self.trace, &r.modlog, &r.summary()),
            None => write_run(&dir, &[], &[], &Summary::empty("")),
        };
        if let Err(e) = result {
            self.broadcast(error_reply("persist", Some(e.to_string())));
        }
    }

    fn running(&self) -> bool {
        !self.paused && !self.finished_sent && self.runner.is_some()
    }

    fn run(&mut self, inbox: mpsc::Receiver<Inbound>) {
        if let Some(name) = self.pending_load.take() {
            let loaded = resolve_scenario(&self.config, &name).and_then(|s| self.load(s));
            if let Err(e) = loaded {
                self.broadcast(error_reply("load", Some(e)));
            }
        }
        let mut next_tick = Instant::now();
        loop {
            let wait = if self.running() {
                next_tick.saturating_duration_since(Instant::now())
            } else {
                IDLE_POLL
            };
            match inbox.recv_timeout(wait) {
                Ok(Inbound::Command(msg, reply)) => {
                    self.handle(msg, reply);
                    continue;
                }
                Ok(Inbound::Close) | Err(mpsc::RecvTimeoutError::Disconnected) => break,
                Err(mpsc::RecvTimeoutError::Timeout) => {}
            }
            if !self.running() {
                next_tick = Instant::now();
                continue;
            }
            let period = self.runner.as_ref().map_or(0.1, |r| r.script.dt) / self.rate;
            let period = Duration::from_secs_f64(period);
            let now = Instant::now();
            next_tick = next_tick.max(now.checked_sub(period).unwrap_or(now)) + period;
            self.step();
        }
        self.persist();
    }
}
