//! Drives a scenario script through the control loop and keeps the trace,
//! modification log and summary.

use alloc::{
    collections::{BTreeMap, BTreeSet, VecDeque},
    string::{String, ToString},
    vec::Vec,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::PropKind;
use crate::cbf::{PreFailureWarning, Role};
use crate::clock::Clock;
use crate::modify::{Feedback, ModReport};
use crate::monitor::Status;
use crate::runtime::{init, run_step, InitError, RuntimeConfig, RuntimeContext};
use crate::scenario::{ScenarioError, ScenarioScript};
use crate::spec::{parse_document, parse_modification, AliasTable, Bounds, ModificationCommand, ParseError, STATE_DIM};
use crate::world::{ControlBounds, Deposit, World, WorldConfig, WorldState};

/// Version of every serialized record.
pub const SCHEMA_VERSION: u32 = 1;

/// Slack on scripted times, in steps.
const TIME_MATCH: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("specification: {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Init(#[from] InitError),
}

/// One obligation as seen by clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObligationView {
    pub id: String,
    pub kind: PropKind,
    pub t_act: f64,
    pub window: Bounds,
    /// Reach margin; absent when it cannot be evaluated.
    pub h: Option<f64>,
    /// Current schedule value of the first reach barrier.
    pub gamma: Option<f64>,
    pub status: Status,
}

/// One line of the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub v: u32,
    pub step: u64,
    pub t: f64,
    pub dt: f64,
    /// Robot state at `t`, before `u` is applied.
    pub robot: [f64; STATE_DIM],
    pub u: [f64; STATE_DIM],
    pub entities: BTreeMap<String, [f64; 3]>,
    pub held: Option<String>,
    pub events: Vec<String>,
    pub chosen: Option<usize>,
    pub activated: Vec<String>,
    pub rhoset: Vec<Option<f64>>,
    pub buchi_states: Vec<usize>,
    pub obligations: Vec<ObligationView>,
    pub warnings: Vec<PreFailureWarning>,
    pub violations: Vec<String>,
    pub abandoned: Vec<String>,
    pub feedback: Vec<Feedback>,
    pub relaxed: bool,
    pub kkt_residual: f64,
    pub compute_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModificationSummary {
    pub t: f64,
    pub kind: String,
    pub timing_ms: f64,
    pub ok: bool,
    pub requires_pause: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub v: u32,
    pub scenario: String,
    pub prep_time_ms: f64,
    pub steps: u64,
    pub mean_step_ms: f64,
    pub max_step_ms: f64,
    pub modifications: Vec<ModificationSummary>,
    pub violations: usize,
    pub violated: Vec<String>,
    pub abandoned: Vec<String>,
    pub warnings: usize,
    pub deposits: Vec<Deposit>,
    pub accepted: bool,
    pub t_end: f64,
}

/// Scenario execution state, stepped by the caller.
pub struct Runner {
    pub ctx: RuntimeContext,
    pub world: World,
    pub script: ScenarioScript,
    pub aliases: AliasTable,
    /// Modifications waiting for the next step.
    pub queued: VecDeque<String>,
    pub modlog: Vec<ModReport>,
    next_event: usize,
    next_mod: usize,
    warned: bool,
    warning_mods_sent: bool,
    step_ms: Vec<f64>,
    warnings: usize,
    violated: Vec<String>,
    abandoned: Vec<String>,
}

impl Runner {
    pub fn new(script: ScenarioScript, config: RuntimeConfig, clock: &dyn Clock) -> Result<Self, RunError> {
        script.validate()?;
        let doc = parse_document(&script.spec, None, &AliasTable::new())?;
        let mut config = config;
        config.control.dt = script.dt;
        config.method = script.method;
        config.pause_budget_ms = 0.5 * script.dt * 1000.0;
        let state = WorldState::new(script.robot0, script.entities.iter().cloned());
        let ctx = init(&doc.formula, &doc.aliases, &state, config, clock)?;
        let world = World::new(state, config.bounds, WorldConfig::default(), script.moves.clone());
        Ok(Runner {
            ctx,
            world,
            aliases: doc.aliases,
            script,
            queued: VecDeque::new(),
            modlog: Vec::new(),
            next_event: 0,
            next_mod: 0,
            warned: false,
            warning_mods_sent: false,
            step_ms: Vec::new(),
            warnings: 0,
            violated: Vec::new(),
            abandoned: Vec::new(),
        })
    }

    pub fn t(&self) -> f64 {
        self.ctx.t
    }

    pub fn bounds(&self) -> &ControlBounds {
        &self.ctx.config.bounds
    }

    /// Whether the duration is used up or the task is globally accepted.
    pub fn finished(&self) -> bool {
        self.ctx.t >= self.script.duration - TIME_MATCH * self.script.dt || self.ctx.globally_accepted()
    }

    /// Advances one step with extra events and commands from outside the
    /// script.
    pub fn step(&mut self, extra_events: &BTreeSet<String>, extra_mods: &[String], clock: &dyn Clock) -> TraceRecord {
        let t = self.ctx.t;
        let dt = self.script.dt;
        let near = |te: f64| (te - t).abs() < TIME_MATCH * dt;
        let mut events = extra_events.clone();
        while let Some(e) = self.script.events.get(self.next_event) {
            if e.t > t + TIME_MATCH * dt {
                break;
            }
            if near(e.t) {
                events.insert(e.name.clone());
            }
            self.next_event += 1;
        }
        let mut texts: Vec<String> = self.queued.drain(..).collect();
        while let Some(m) = self.script.modifications.get(self.next_mod) {
            match m.t {
                Some(tm) if !m.on_warning && tm <= t + TIME_MATCH * dt => {
                    texts.push(m.command.clone());
                    self.next_mod += 1;
                }
                None if m.on_warning => self.next_mod += 1,
                _ => break,
            }
        }
        if self.warned && !self.warning_mods_sent {
            self.warning_mods_sent = true;
            texts.extend(self.script.modifications.iter().filter(|m| m.on_warning).map(|m| m.command.clone()));
        }
        texts.extend(extra_mods.iter().cloned());

        let mut cmds: Vec<ModificationCommand> = Vec::new();
        let mut rejected = Vec::new();
        for text in &texts {
            match parse_modification(text, &self.ctx.aliases, None) {
                Ok(c) => cmds.push(c),
                Err(e) => rejected.push(parse_failure(t, text, &e.to_string())),
            }
        }

        let robot = self.world.state.robot;
        let entities = self.world.state.positions();
        let held = self.world.state.held.clone();
        let report = run_step(&mut self.ctx, &mut self.world, &events, &cmds, clock);

        let mut feedback = Vec::new();
        for r in rejected.into_iter().chain(report.modifications.iter().cloned()) {
            feedback.extend(r.feedback.iter().cloned());
            if let Some(err) = &r.error {
                feedback.push(Feedback {
                    kind: crate::modify::FeedbackKind::Applied,
                    target: None,
                    message: alloc::format!("rejected: {err}"),
                });
            }
            self.modlog.push(r);
        }
        if !report.warnings.is_empty() {
            self.warned = true;
            self.warnings += report.warnings.len();
        }
        self.violated.extend(report.violations.iter().cloned());
        self.abandoned.extend(report.abandoned.iter().cloned());
        self.step_ms.push(report.compute_ms);

        TraceRecord {
            v: SCHEMA_VERSION,
            step: report.step,
            t,
            dt,
            robot,
            u: report.u,
            entities,
            held,
            events: events.into_iter().collect(),
            chosen: report.chosen,
            activated: report.activated,
            rhoset: report.rhoset,
            buchi_states: report.states,
            obligations: obligation_views(&self.ctx, t),
            warnings: report.warnings,
            violations: report.violations,
            abandoned: report.abandoned,
            feedback,
            relaxed: report.relaxed,
            kkt_residual: report.kkt_residual,
            compute_ms: report.compute_ms,
        }
    }

    /// Applies a command at once, between steps; used while the loop is
    /// paused.
    pub fn apply_now(&mut self, text: &str, clock: &dyn Clock) -> ModReport {
        let t = self.ctx.t;
        let report = match parse_modification(text, &self.ctx.aliases, None) {
            Ok(cmd) => crate::modify::modify(&mut self.ctx, &cmd, &self.world.state, clock),
            Err(e) => parse_failure(t, text, &e.to_string()),
        };
        self.modlog.push(report.clone());
        report
    }

    pub fn summary(&self) -> Summary {
        let n = self.step_ms.len();
        Summary {
            v: SCHEMA_VERSION,
            scenario: self.script.name.clone(),
            prep_time_ms: self.ctx.prep_ms,
            steps: n as u64,
            mean_step_ms: if n == 0 { 0.0 } else { self.step_ms.iter().sum::<f64>() / n as f64 },
            max_step_ms: self.step_ms.iter().copied().fold(0.0, f64::max),
            modifications: self
                .modlog
                .iter()
                .map(|m| ModificationSummary {
                    t: m.t,
                    kind: m.kind.clone(),
                    timing_ms: m.timing_ms,
                    ok: m.ok,
                    requires_pause: m.requires_pause,
                })
                .collect(),
            violations: self.violated.len(),
            violated: self.violated.clone(),
            abandoned: self.abandoned.clone(),
            warnings: self.warnings,
            deposits: self.world.state.deposits.clone(),
            accepted: self.ctx.globally_accepted(),
            t_end: self.ctx.t,
        }
    }
}

impl Summary {
    /// Summary of a session that never ran a scenario.
    pub fn empty(scenario: &str) -> Self {
        Summary {
            v: SCHEMA_VERSION,
            scenario: scenario.into(),
            prep_time_ms: 0.0,
            steps: 0,
            mean_step_ms: 0.0,
            max_step_ms: 0.0,
            modifications: Vec::new(),
            violations: 0,
            violated: Vec::new(),
            abandoned: Vec::new(),
            warnings: 0,
            deposits: Vec::new(),
            accepted: false,
            t_end: 0.0,
        }
    }
}

fn parse_failure(t: f64, text: &str, err: &str) -> ModReport {
    ModReport {
        t,
        command: text.into(),
        kind: text.split_whitespace().next().unwrap_or("").into(),
        ok: false,
        error: Some(err.into()),
        additions: Vec::new(),
        rewrites: Vec::new(),
        feedback: Vec::new(),
        timing_ms: 0.0,
        requires_pause: false,
        estimated_ms: 0.0,
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Every obligation that has been activated, in id order.
pub fn obligation_views(ctx: &RuntimeContext, t: f64) -> Vec<ObligationView> {
    ctx.monitor
        .instances
        .values()
        .map(|i| ObligationView {
            id: i.prop.clone(),
            kind: i.kind,
            t_act: i.t_act,
            window: i.window,
            h: ctx.monitor.margins.get(&i.prop).and_then(|m| finite(m.reach)),
            gamma: ctx
                .barriers
                .iter()
                .find(|b| b.prop == i.prop && b.role == Role::Reach)
                .and_then(|b| finite(b.gamma(t))),
            status: i.status,
        })
        .collect()
}

/// Everything a headless run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub modlog: Vec<ModReport>,
    pub summary: Summary,
}

/// Runs a script to its duration or to global acceptance.
pub fn run(script: ScenarioScript, config: RuntimeConfig, clock: &dyn Clock) -> Result<RunOutput, RunError> {
    let mut r = Runner::new(script, config, clock)?;
    let mut trace = Vec::new();
    let none = BTreeSet::new();
    while !r.finished() {
        trace.push(r.step(&none, &[], clock));
    }
    Ok(RunOutput {
        summary: r.summary(),
        modlog: r.modlog,
        trace,
    })
}
