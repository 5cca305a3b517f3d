//! Offline trace checker: admissibility of the recorded motion and a replay
//! of the obligation monitor over the recorded states.

use alloc::{
    collections::BTreeSet,
    format,
    string::{String, ToString},
    vec::Vec,
};

use serde::{Deserialize, Serialize};

use crate::abstraction::abstract_formula;
use crate::monitor::{Monitor, Status};
use crate::runner::TraceRecord;
use crate::spec::{parse_document, AliasTable, ParseError, STATE_DIM};
use crate::world::{integrate, ControlBounds, Overlay};

/// Tolerances of the admissibility checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Slack on the control caps.
    pub control: f64,
    /// Largest allowed gap between a recorded state and the integrator.
    pub state: f64,
    /// Slack on the time step.
    pub time: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            control: 1e-9,
            state: 1e-6,
            time: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdmissibilityError {
    NonFinite { step: u64 },
    ControlOutOfBounds { step: u64, channel: usize, value: f64, cap: f64 },
    TimeGap { step: u64, expected: f64, found: f64 },
    /// The next recorded state is not reachable from this one under the
    /// recorded control.
    Inconsistent { step: u64, channel: usize, expected: f64, found: f64 },
}

impl core::fmt::Display for AdmissibilityError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NonFinite { step } => write!(f, "step {step}: non-finite value"),
            Self::ControlOutOfBounds { step, channel, value, cap } => {
                write!(f, "step {step}: control channel {channel} = {value} exceeds cap {cap}")
            }
            Self::TimeGap { step, expected, found } => {
                write!(f, "step {step}: time {found} where {expected} was expected")
            }
            Self::Inconsistent { step, channel, expected, found } => write!(
                f,
                "step {step}: state channel {channel} jumped to {found}, dynamics give {expected}"
            ),
        }
    }
}

/// A formula joined by conjunction at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedConjunct {
    pub t: f64,
    pub formula: String,
}

/// Replayed outcome of one obligation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayViolation {
    pub t: f64,
    pub prop: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub steps: usize,
    pub admissibility: Vec<AdmissibilityError>,
    pub violations: Vec<ReplayViolation>,
    pub completed: Vec<String>,
}

impl ValidationReport {
    pub fn admissible(&self) -> bool {
        self.admissibility.is_empty()
    }
}

/// Checks finiteness, control caps, time stepping and consistency of each
/// state with its predecessor.
pub fn check_admissibility(trace: &[TraceRecord], bounds: &ControlBounds, tol: Tolerances) -> Vec<AdmissibilityError> {
    let mut errors = Vec::new();
    for (k, r) in trace.iter().enumerate() {
        if !r.t.is_finite() || r.robot.iter().chain(&r.u).any(|v| !v.is_finite()) {
            errors.push(AdmissibilityError::NonFinite { step: r.step });
            continue;
        }
        for i in 0..STATE_DIM {
            if r.u[i].abs() > bounds.caps[i] + tol.control {
                errors.push(AdmissibilityError::ControlOutOfBounds {
                    step: r.step,
                    channel: i,
                    value: r.u[i],
                    cap: bounds.caps[i],
                });
            }
        }
        let Some(next) = trace.get(k + 1) else { continue };
        if (next.t - r.t - r.dt).abs() > tol.time {
            errors.push(AdmissibilityError::TimeGap {
                step: next.step,
                expected: r.t + r.dt,
                found: next.t,
            });
        }
        let mut u = r.u;
        bounds.clamp(&mut u);
        let expected = integrate(&r.robot, &u, r.dt);
        for i in 0..STATE_DIM {
            let mut gap = (next.robot[i] - expected[i]).abs();
            if i == 2 {
                gap = gap.min((core::f64::consts::TAU - gap).abs());
            }
            if gap > tol.state {
                errors.push(AdmissibilityError::Inconsistent {
                    step: next.step,
                    channel: i,
                    expected: expected[i],
                    found: next.robot[i],
                });
            }
        }
    }
    errors
}

/// Replays the obligation monitor of `spec` (plus timed conjunctions) over
/// the recorded states. Obligations the planner started are taken from the
/// trace.
pub fn replay(spec: &str, extra: &[TimedConjunct], trace: &[TraceRecord]) -> Result<(Vec<ReplayViolation>, Vec<String>), ParseError> {
    let doc = parse_document(spec, None, &AliasTable::new())?;
    let mut scopes = Vec::new();
    for (n, c) in extra.iter().enumerate() {
        let f = parse_document(&c.formula, None, &doc.aliases)?;
        scopes.push((c.t, format!("k{}:", n + 1), f.formula));
    }
    let mut monitor = Monitor::new();
    let (_, props, triggers) = abstract_formula(&doc.formula, "");
    monitor.extend(&props, &triggers);
    monitor.activate_unguarded("", 0.0);
    let mut joined = 0;
    let mut violations = Vec::new();
    for r in trace {
        while joined < scopes.len() && scopes[joined].0 <= r.t + 0.5 * r.dt {
            let (_, prefix, f) = &scopes[joined];
            let (_, props, triggers) = abstract_formula(f, prefix);
            monitor.extend(&props, &triggers);
            monitor.activate_unguarded(prefix, r.t);
            joined += 1;
        }
        let env = Overlay {
            robot: r.robot,
            entities: &r.entities,
        };
        let events: BTreeSet<String> = r.events.iter().cloned().collect();
        let upd = monitor.update(r.t, &env, &events);
        for c in upd.changes {
            if c.status == Status::Violated {
                violations.push(ReplayViolation { t: c.t, prop: c.prop });
            }
        }
        for id in &r.activated {
            if monitor.activate(id, r.t) {
                let m = monitor.margins.get(id).copied();
                if let (Some(m), Some(inst)) = (m, monitor.instances.get_mut(id)) {
                    if inst.update(r.t, m.reach, m.hold) == Some(Status::Violated) {
                        violations.push(ReplayViolation {
                            t: r.t,
                            prop: id.clone(),
                        });
                    }
                }
            }
        }
    }
    let completed = monitor
        .instances
        .values()
        .filter(|i| i.status == Status::Completed)
        .map(|i| i.prop.to_string())
        .collect();
    Ok((violations, completed))
}

/// Both checks together.
pub fn validate(
    spec: &str,
    extra: &[TimedConjunct],
    trace: &[TraceRecord],
    bounds: &ControlBounds,
    tol: Tolerances,
) -> Result<ValidationReport, ParseError> {
    let (violations, completed) = replay(spec, extra, trace)?;
    Ok(ValidationReport {
        steps: trace.len(),
        admissibility: check_admissibility(trace, bounds, tol),
        violations,
        completed,
    })
}
