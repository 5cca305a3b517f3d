//! Truth tracking for propositions and robustness-guided transition choice.
//!
//! Obligations live as [`ObligationInstance`]s that are activated by trigger
//! edges (or at start, when unguarded) and then complete or fail according to
//! their window. Completion latches the proposition true. Event atoms hold
//! only in the step they fire; trigger propositions follow their predicate.

use alloc::{
    collections::{BTreeMap, BTreeSet},
    string::String,
    vec::Vec,
};

use serde::{Deserialize, Serialize};

use crate::abstraction::{AbstractProposition, PropKind, Trigger};
use crate::buchi::Buchi;
use crate::ltl::Ltl;
use crate::spec::{Bounds, Env, Predicate};

/// Slack for comparing simulation times.
pub const TIME_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Inactive,
    Active,
    Completed,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObligationInstance {
    pub prop: String,
    pub kind: PropKind,
    pub window: Bounds,
    pub t_act: f64,
    pub status: Status,
    /// Time of completion or violation.
    pub t_done: Option<f64>,
    /// Until only: the hold set has not failed.
    pub hold_intact: bool,
    /// Lowest reach margin seen inside the window.
    pub worst_h: f64,
}

impl ObligationInstance {
    pub fn new(prop: &str, kind: PropKind, window: Bounds, t_act: f64) -> Self {
        ObligationInstance {
            prop: prop.into(),
            kind,
            window,
            t_act,
            status: Status::Active,
            t_done: None,
            hold_intact: true,
            worst_h: f64::INFINITY,
        }
    }

    pub fn opens(&self) -> f64 {
        self.t_act + self.window.lo
    }

    pub fn deadline(&self) -> f64 {
        self.t_act + self.window.hi
    }

    pub fn in_window(&self, t: f64) -> bool {
        t >= self.opens() - TIME_TOL && t <= self.deadline() + TIME_TOL
    }

    pub fn is_live(&self) -> bool {
        self.status == Status::Active
    }

    /// Advances the instance to time `t` given the conjunction margins of
    /// its reach and hold sets. Returns the new status when it changed.
    pub fn update(&mut self, t: f64, reach: f64, hold: Option<f64>) -> Option<Status> {
        if self.status != Status::Active {
            return None;
        }
        let past = t > self.deadline() + TIME_TOL;
        let next = match self.kind {
            PropKind::Eventually => {
                if self.in_window(t) && reach >= 0.0 {
                    Some(Status::Completed)
                } else if past {
                    Some(Status::Violated)
                } else {
                    None
                }
            }
            PropKind::Always => {
                if self.in_window(t) {
                    self.worst_h = self.worst_h.min(reach);
                }
                if self.in_window(t) && reach < 0.0 {
                    Some(Status::Violated)
                } else if !self.window.is_unbounded() && t >= self.deadline() - TIME_TOL {
                    Some(Status::Completed)
                } else {
                    None
                }
            }
            PropKind::Until => {
                if self.in_window(t) && reach >= 0.0 {
                    Some(Status::Completed)
                } else if hold.is_some_and(|h| h < 0.0) {
                    self.hold_intact = false;
                    Some(Status::Violated)
                } else if past {
                    Some(Status::Violated)
                } else {
                    None
                }
            }
            PropKind::Event | PropKind::TriggerPred => None,
        };
        if let Some(s) = next {
            self.status = s;
            self.t_done = Some(t);
        }
        next
    }
}

/// Minimum margin of a conjunction; evaluation failures count as violated.
pub fn conjunction_margin<'a>(preds: impl IntoIterator<Item = &'a Predicate>, env: &dyn Env) -> f64 {
    preds
        .into_iter()
        .map(|p| match p.margin(env) {
            Ok(h) if h.is_finite() => h,
            _ => f64::NEG_INFINITY,
        })
        .fold(f64::INFINITY, f64::min)
}

/// Evaluates a propositional guard.
pub fn eval_guard(g: &Ltl, holds: &dyn Fn(&str) -> bool) -> bool {
    match g {
        Ltl::True => true,
        Ltl::False => false,
        Ltl::Prop(p) => holds(p),
        Ltl::Not(a) => !eval_guard(a, holds),
        Ltl::And(a, b) => eval_guard(a, holds) && eval_guard(b, holds),
        Ltl::Or(a, b) => eval_guard(a, holds) || eval_guard(b, holds),
        _ => false,
    }
}

/// Status change of an obligation, for logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusChange {
    pub t: f64,
    pub prop: String,
    pub status: Status,
}

/// Margins of one proposition at the current state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub reach: f64,
    pub hold: Option<f64>,
}

/// Proposition table, trigger state, obligation instances and the current
/// truth assignment.
#[derive(Clone, Debug, Default)]
pub struct Monitor {
    pub props: BTreeMap<String, AbstractProposition>,
    pub triggers: Vec<Trigger>,
    /// Guard value at the previous step.
    guard_prev: Vec<bool>,
    /// Whether the guard has ever risen.
    guard_fired: Vec<bool>,
    pub instances: BTreeMap<String, ObligationInstance>,
    pub margins: BTreeMap<String, Margins>,
    pub sigma: BTreeMap<String, bool>,
}

/// Result of [`Monitor::update`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruthUpdate {
    pub activated: Vec<String>,
    pub changes: Vec<StatusChange>,
}

impl Monitor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the propositions and triggers of one abstraction. Trigger indices
    /// in `props` are relative to `triggers`.
    pub fn extend(&mut self, props: &[AbstractProposition], triggers: &[Trigger]) {
        let offset = self.triggers.len();
        for t in triggers {
            let mut t = t.clone();
            t.parent = t.parent.map(|p| p + offset);
            self.triggers.push(t);
            self.guard_prev.push(false);
            self.guard_fired.push(false);
        }
        for p in props {
            let mut p = p.clone();
            p.trigger = p.trigger.map(|i| i + offset);
            self.props.entry(p.id.clone()).or_insert(p);
        }
    }

    pub fn obligations(&self) -> impl Iterator<Item = &AbstractProposition> {
        self.props.values().filter(|p| p.kind.is_obligation())
    }

    pub fn status(&self, prop: &str) -> Status {
        self.instances.get(prop).map_or(Status::Inactive, |i| i.status)
    }

    pub fn holds(&self, prop: &str) -> bool {
        self.sigma.get(prop).copied().unwrap_or(false)
    }

    /// Starts an instance unless one has already completed, failed or is
    /// running.
    pub fn activate(&mut self, prop: &str, t: f64) -> bool {
        if self.instances.get(prop).is_some_and(|i| i.status != Status::Inactive) {
            return false;
        }
        let Some(p) = self.props.get(prop) else {
            return false;
        };
        let window = p.window.unwrap_or(Bounds::UNBOUNDED);
        self.instances
            .insert(prop.into(), ObligationInstance::new(prop, p.kind, window, t));
        true
    }

    /// Activates every obligation not guarded by a trigger whose id starts
    /// with `scope`.
    pub fn activate_unguarded(&mut self, scope: &str, t: f64) -> Vec<String> {
        let ids: Vec<String> = self
            .obligations()
            .filter(|p| p.trigger.is_none() && p.id.starts_with(scope) && scope_of(&p.id) == scope)
            .map(|p| p.id.clone())
            .collect();
        ids.into_iter().filter(|id| self.activate(id, t)).collect()
    }

    fn compute_margins(&mut self, env: &dyn Env) {
        self.margins.clear();
        for p in self.props.values() {
            if p.kind == PropKind::Event {
                continue;
            }
            let reach = conjunction_margin(p.reach.iter().map(|l| &l.predicate), env);
            let hold = (!p.hold.is_empty()).then(|| conjunction_margin(p.hold.iter().map(|l| &l.predicate), env));
            self.margins.insert(p.id.clone(), Margins { reach, hold });
        }
    }

    /// Recomputes margins and truth at time `t`, fires trigger activations
    /// and advances every instance.
    pub fn update(&mut self, t: f64, env: &dyn Env, events: &BTreeSet<String>) -> TruthUpdate {
        self.compute_margins(env);
        let mut out = TruthUpdate::default();
        let current = |m: &Self, p: &str| -> bool {
            match m.props.get(p).map(|x| x.kind) {
                Some(PropKind::TriggerPred) => m.margins[p].reach >= 0.0,
                Some(PropKind::Event) | None => events.contains(p),
                Some(_) => m.status(p) == Status::Completed,
            }
        };
        for i in 0..self.triggers.len() {
            let g = eval_guard(&self.triggers[i].guard, &|p| current(self, p));
            let rising = g && !self.guard_prev[i];
            self.guard_prev[i] = g;
            let parent_ok = self.triggers[i].parent.map_or(true, |p| self.guard_fired[p]);
            if rising && parent_ok {
                self.guard_fired[i] = true;
                for id in self.triggers[i].obligations.clone() {
                    if self.activate(&id, t) {
                        out.activated.push(id);
                    }
                }
            }
        }
        self.advance(t, &mut out.changes);
        self.refresh_sigma(events);
        out
    }

    /// Advances live instances using the stored margins.
    pub fn advance(&mut self, t: f64, changes: &mut Vec<StatusChange>) {
        for inst in self.instances.values_mut() {
            let Some(m) = self.margins.get(&inst.prop) else { continue };
            if let Some(status) = inst.update(t, m.reach, m.hold) {
                changes.push(StatusChange {
                    t,
                    prop: inst.prop.clone(),
                    status,
                });
            }
        }
    }

    pub fn refresh_sigma(&mut self, events: &BTreeSet<String>) {
        self.sigma.clear();
        for p in self.props.values() {
            let v = match p.kind {
                PropKind::Event => events.contains(&p.id),
                PropKind::TriggerPred => self.margins.get(&p.id).is_some_and(|m| m.reach >= 0.0),
                _ => self.status(&p.id) == Status::Completed,
            };
            self.sigma.insert(p.id.clone(), v);
        }
        for e in events {
            self.sigma.entry(e.clone()).or_insert(true);
        }
    }

    /// Obligations whose value is final: completed ones hold and violated
    /// ones fail from now on.
    pub fn latched(&self, b: &Buchi) -> Vec<Option<bool>> {
        b.alphabet()
            .iter()
            .map(|p| match self.status(p) {
                Status::Completed => Some(true),
                Status::Violated => Some(false),
                _ => None,
            })
            .collect()
    }

    /// Planner view of every proposition of `b`.
    pub fn literals(&self, b: &Buchi) -> Vec<Literal> {
        b.alphabet()
            .iter()
            .map(|p| match self.props.get(p).map(|x| x.kind) {
                Some(k) if k.is_obligation() => match self.status(p) {
                    Status::Completed => Literal::Fixed(true),
                    Status::Violated => Literal::Fixed(false),
                    _ => Literal::Free(self.margins.get(p).map_or(f64::NEG_INFINITY, |m| m.reach)),
                },
                _ => Literal::Fixed(self.holds(p)),
            })
            .collect()
    }
}

/// Scope prefix of a generated id (`""` for the original specification).
pub fn scope_of(id: &str) -> &str {
    match id.find(':') {
        Some(i) => &id[..=i],
        None => "",
    }
}

/// How the planner sees one proposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Literal {
    /// Determined by the environment or by a finished obligation.
    Fixed(bool),
    /// An obligation the controller can still make true; carries its reach
    /// margin.
    Free(f64),
}

impl Literal {
    pub fn fixed(&self) -> Option<bool> {
        match self {
            Literal::Fixed(v) => Some(*v),
            Literal::Free(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub edge: usize,
    /// State after this step.
    pub next: usize,
    /// Alphabet indices of free obligations the chosen transition requires.
    pub activated: Vec<u32>,
    pub rho: f64,
    pub path_len: u32,
}

/// Robustness of a label: the minimum over its free literals, `+inf` when
/// it has none.
pub fn label_score(label: &crate::buchi::Label, lits: &[Literal]) -> f64 {
    let pos = label.pos.iter().filter_map(|&i| match lits[i as usize] {
        Literal::Free(h) => Some(h),
        Literal::Fixed(_) => None,
    });
    let neg = label.neg.iter().filter_map(|&i| match lits[i as usize] {
        Literal::Free(h) => Some(-h),
        Literal::Fixed(_) => None,
    });
    pos.chain(neg).fold(f64::INFINITY, f64::min)
}

/// Chooses among the first transitions of shortest accepting paths the one
/// with the highest score, breaking ties by fewer required obligations and
/// then by transition index. `truth` is the actual assignment at this step;
/// the state advances along the chosen transition when it already holds and
/// otherwise along whatever transition the actual letter enables. `None`
/// when no accepting state is reachable under the fixed literals.
pub fn pick_transition(b: &Buchi, s: usize, lits: &[Literal], truth: &[bool]) -> Option<Choice> {
    let dist: Vec<u32> = (0..b.len()).map(|q| b.distance(q)).collect();
    pick_transition_with(b, s, lits, truth, &dist)
}

/// As [`pick_transition`] with distances that account for latched
/// obligations (see [`Monitor::latched`]).
pub fn pick_transition_with(b: &Buchi, s: usize, lits: &[Literal], truth: &[bool], dist: &[u32]) -> Option<Choice> {
    let fixed: Vec<Option<bool>> = lits.iter().map(Literal::fixed).collect();
    let (firsts, len) = b.shortest_first_steps_with(s, &fixed, dist);
    let mut best: Option<(f64, usize, usize, Vec<u32>)> = None;
    for e in firsts {
        let label = &b.edge(e).label;
        let rho = label_score(label, lits);
        let activated: Vec<u32> = label
            .pos
            .iter()
            .copied()
            .filter(|&i| matches!(lits[i as usize], Literal::Free(_)))
            .collect();
        let better = match &best {
            None => true,
            Some((r, n, _, _)) => rho > *r || (rho == *r && activated.len() < *n),
        };
        if better {
            best = Some((rho, activated.len(), e, activated));
        }
    }
    let (rho, _, edge, activated) = best?;
    let next = if b.edge(edge).label.satisfied_by(truth) {
        b.edge(edge).to
    } else {
        b.step(s, truth).unwrap_or(s)
    };
    Some(Choice {
        edge,
        next,
        activated,
        rho,
        path_len: len,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceMethod {
    /// Keep only the winning automaton from then on.
    Commit,
    /// Re-evaluate every automaton at every step.
    #[default]
    Reevaluate,
}

/// Index of the automaton with the highest score; ties go to the lowest
/// index. `None` when no automaton has an accepting path.
pub fn choose_props(rhoset: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rhoset.iter().enumerate() {
        if let Some(r) = *r {
            if best.map_or(true, |(_, b)| r > b) {
                best = Some((i, r));
            }
        }
    }
    best.map(|(i, _)| i)
}
