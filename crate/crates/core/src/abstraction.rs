//! Abstraction of a specification into an LTL formula over obligation,
//! event and trigger propositions, together with the predicate table and
//! barrier templates.
//!
//! Every timed operator becomes `F p` for a fresh obligation proposition `p`;
//! its window and predicates live in the proposition and its template. A
//! trigger `G(α => Ψ)` becomes `G(α' -> γ)` where predicate leaves of `α` are
//! replaced by trigger propositions evaluated from the world state.
//!
//! Proposition ids are derived from selectors, so rewriting predicates or
//! bounds never renames anything:
//!
//! * `ob<path>` for the operator at `<path>`, with `#k` appended when its
//!   body is split into disjuncts,
//! * `tp<path>` for the predicate leaf of a guard at `<path>`,
//! * event atoms keep their names.
//!
//! Formulas attached later carry a scope prefix such as `k1:`.

use alloc::{
    collections::BTreeMap,
    format,
    string::{String, ToString},
    vec::Vec,
};
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::buchi::{ltl_to_buchi_with, Buchi, TranslateOptions};
use crate::clock::Clock;
use crate::ltl::Ltl;
use crate::spec::{Bounds, Env, EventFormula, Predicate, Selector, SpecFormula, StateFormula};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PropKind {
    Eventually,
    Always,
    Until,
    Event,
    TriggerPred,
}

impl PropKind {
    pub fn is_obligation(self) -> bool {
        matches!(self, PropKind::Eventually | PropKind::Always | PropKind::Until)
    }
}

/// A predicate together with the selector of the leaf it came from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Leaf {
    pub predicate: Predicate,
    pub origin: Selector,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbstractProposition {
    pub id: String,
    pub kind: PropKind,
    /// Window relative to activation; absent for events and trigger
    /// predicates.
    pub window: Option<Bounds>,
    /// Conjunction that must be reached (the body of `F`/`G`, the right side
    /// of `U`, or the guard predicate of a trigger proposition).
    pub reach: Vec<Leaf>,
    /// Conjunction held until the reach set holds (`U` only).
    pub hold: Vec<Leaf>,
    /// Selector of the originating operator, or of the leaf for trigger
    /// predicates.
    pub origin: Selector,
    /// Innermost enclosing trigger, as an index into
    /// [`AbstractionResult::triggers`].
    pub trigger: Option<usize>,
}

impl AbstractProposition {
    pub fn predicates(&self) -> impl Iterator<Item = &Predicate> {
        self.reach.iter().chain(&self.hold).map(|l| &l.predicate)
    }
}

/// One `G(α => Ψ)` node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trigger {
    pub id: String,
    pub origin: Selector,
    #[serde(serialize_with = "ser_display")]
    pub guard: Ltl,
    pub parent: Option<usize>,
    /// Obligations directly in the body (not under a nested trigger).
    pub obligations: Vec<String>,
}

fn ser_display<S: serde::Serializer, T: core::fmt::Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Uninstantiated barrier parameters for one obligation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BarrierTemplate {
    pub prop: String,
    pub kind: PropKind,
    pub window: Bounds,
    pub reach: Vec<Predicate>,
    pub hold: Vec<Predicate>,
    pub params: BarrierParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    /// Margin the reach predicates must attain by the deadline.
    pub delta_sat: f64,
    /// Initial slack below the current margin at activation.
    pub epsilon: f64,
    /// Class-K gain.
    pub gain: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        BarrierParams {
            delta_sat: 0.1,
            epsilon: 0.05,
            gain: 1.0,
        }
    }
}

/// Output of [`prep_spec`].
#[derive(Clone, Debug)]
pub struct AbstractionResult {
    pub gamma: Ltl,
    pub props: Vec<AbstractProposition>,
    /// Predicate functions per proposition.
    pub h: BTreeMap<String, Vec<Predicate>>,
    pub templates: Vec<BarrierTemplate>,
    pub triggers: Vec<Trigger>,
    pub buchi: Buchi,
    pub s0: usize,
    pub prep_ms: f64,
}

impl AbstractionResult {
    pub fn prop(&self, id: &str) -> Option<&AbstractProposition> {
        self.props.iter().find(|p| p.id == id)
    }
}

struct NoVars;

impl Env for NoVars {
    fn robot(&self) -> [f64; 6] {
        [0.0; 6]
    }
    fn entity(&self, _: &str) -> Option<[f64; 3]> {
        None
    }
}

/// Margin of a predicate that mentions no variables, if it evaluates.
fn constant_margin(p: &Predicate) -> Option<f64> {
    if p.is_constant() {
        p.margin(&NoVars).ok()
    } else {
        None
    }
}

fn path_text(sel: &Selector) -> String {
    let mut s = String::new();
    for (i, c) in sel.0.iter().enumerate() {
        if i > 0 {
            s.push('.');
        }
        let _ = write!(s, "{c}");
    }
    s
}

/// Disjunctive normal form with leaf origins and constant leaves folded.
/// `None` inside the result never occurs; an empty outer list means the
/// formula is constantly false and an empty conjunction is constantly true.
fn dnf(s: &StateFormula, sel: &Selector) -> Vec<Vec<Leaf>> {
    let leaf = |p: Predicate| -> Vec<Vec<Leaf>> {
        match constant_margin(&p) {
            Some(h) if h >= 0.0 => alloc::vec![Vec::new()],
            Some(_) => Vec::new(),
            None => alloc::vec![alloc::vec![Leaf {
                predicate: p,
                origin: sel.clone(),
            }]],
        }
    };
    match s {
        StateFormula::Pred(p) => leaf(p.clone()),
        StateFormula::Not(p) => leaf(p.negated()),
        StateFormula::Or(v) => v
            .iter()
            .enumerate()
            .flat_map(|(i, c)| dnf(c, &sel.child(i)))
            .collect(),
        StateFormula::And(v) => {
            let mut acc: Vec<Vec<Leaf>> = alloc::vec![Vec::new()];
            for (i, c) in v.iter().enumerate() {
                let alts = dnf(c, &sel.child(i));
                let mut next = Vec::with_capacity(acc.len() * alts.len());
                for a in &acc {
                    for b in &alts {
                        let mut conj = a.clone();
                        conj.extend(b.iter().cloned());
                        next.push(conj);
                    }
                }
                acc = next;
            }
            acc
        }
    }
}

struct Builder<'a> {
    scope: &'a str,
    props: Vec<AbstractProposition>,
    triggers: Vec<Trigger>,
}

impl Builder<'_> {
    fn spec(&mut self, f: &SpecFormula, sel: Selector, trigger: Option<usize>) -> Ltl {
        match f {
            SpecFormula::Eventually { bounds, body } | SpecFormula::Always { bounds, body } => {
                let kind = if matches!(f, SpecFormula::Eventually { .. }) {
                    PropKind::Eventually
                } else {
                    PropKind::Always
                };
                let alts = dnf(body, &sel.child(0));
                let pairs = alts.into_iter().map(|r| (Vec::new(), r)).collect();
                self.obligations(kind, *bounds, pairs, sel, trigger)
            }
            SpecFormula::Until { bounds, hold, reach } => {
                let holds = dnf(hold, &sel.child(0));
                let reaches = dnf(reach, &sel.child(1));
                let mut pairs = Vec::new();
                for h in &holds {
                    for r in &reaches {
                        pairs.push((h.clone(), r.clone()));
                    }
                }
                self.obligations(PropKind::Until, *bounds, pairs, sel, trigger)
            }
            SpecFormula::Trigger { guard, body } => {
                let idx = self.triggers.len();
                let g = self.guard(guard, &sel.child(0), trigger);
                self.triggers.push(Trigger {
                    id: format!("{}tg{}", self.scope, path_text(&sel)),
                    origin: sel.clone(),
                    guard: g.clone(),
                    parent: trigger,
                    obligations: Vec::new(),
                });
                let inner = self.spec(body, sel.child(1), Some(idx));
                Ltl::always(Ltl::implies(g, inner))
            }
            SpecFormula::And(v) => Ltl::all(
                v.iter()
                    .enumerate()
                    .map(|(i, c)| self.spec(c, sel.child(i), trigger))
                    .collect(),
            ),
            SpecFormula::Or(v) => Ltl::any(
                v.iter()
                    .enumerate()
                    .map(|(i, c)| self.spec(c, sel.child(i), trigger))
                    .collect(),
            ),
        }
    }

    /// One proposition per (hold, reach) alternative, combined as `F p1 | F p2 | ...`.
    fn obligations(
        &mut self,
        kind: PropKind,
        window: Bounds,
        pairs: Vec<(Vec<Leaf>, Vec<Leaf>)>,
        sel: Selector,
        trigger: Option<usize>,
    ) -> Ltl {
        if pairs.is_empty() {
            return Ltl::False;
        }
        if pairs.iter().any(|(h, r)| h.is_empty() && r.is_empty()) {
            return Ltl::True;
        }
        let split = pairs.len() > 1;
        let mut parts = Vec::new();
        for (k, (hold, reach)) in pairs.into_iter().enumerate() {
            let mut id = format!("{}ob{}", self.scope, path_text(&sel));
            if split {
                let _ = write!(id, "#{k}");
            }
            if let Some(t) = trigger {
                self.triggers[t].obligations.push(id.clone());
            }
            parts.push(Ltl::eventually(Ltl::Prop(id.clone())));
            self.props.push(AbstractProposition {
                id,
                kind,
                window: Some(window),
                reach,
                hold,
                origin: sel.clone(),
                trigger,
            });
        }
        Ltl::any(parts)
    }

    fn guard(&mut self, g: &EventFormula, sel: &Selector, trigger: Option<usize>) -> Ltl {
        match g {
            EventFormula::Atom(a) => {
                if !self.props.iter().any(|p| &p.id == a) {
                    self.props.push(AbstractProposition {
                        id: a.clone(),
                        kind: PropKind::Event,
                        window: None,
                        reach: Vec::new(),
                        hold: Vec::new(),
                        origin: sel.clone(),
                        trigger: None,
                    });
                }
                Ltl::Prop(a.clone())
            }
            EventFormula::Pred(p) => match constant_margin(p) {
                Some(h) if h >= 0.0 => Ltl::True,
                Some(_) => Ltl::False,
                None => {
                    let id = format!("{}tp{}", self.scope, path_text(sel));
                    self.props.push(AbstractProposition {
                        id: id.clone(),
                        kind: PropKind::TriggerPred,
                        window: None,
                        reach: alloc::vec![Leaf {
                            predicate: p.clone(),
                            origin: sel.clone(),
                        }],
                        hold: Vec::new(),
                        origin: sel.clone(),
                        trigger,
                    });
                    Ltl::Prop(id)
                }
            },
            EventFormula::Not(a) => Ltl::not(self.guard(a, &sel.child(0), trigger)),
            EventFormula::And(v) => Ltl::all(
                v.iter()
                    .enumerate()
                    .map(|(i, c)| self.guard(c, &sel.child(i), trigger))
                    .collect(),
            ),
        }
    }
}

/// Abstracts `psi` into an LTL formula and its propositions. `scope` is
/// prefixed to every generated id.
pub fn abstract_formula(psi: &SpecFormula, scope: &str) -> (Ltl, Vec<AbstractProposition>, Vec<Trigger>) {
    let mut b = Builder {
        scope,
        props: Vec::new(),
        triggers: Vec::new(),
    };
    let gamma = b.spec(psi, Selector::root(), None);
    (gamma, b.props, b.triggers)
}

/// One template per obligation proposition.
pub fn make_templates(props: &[AbstractProposition], params: BarrierParams) -> Vec<BarrierTemplate> {
    props
        .iter()
        .filter(|p| p.kind.is_obligation())
        .map(|p| make_template(p, params))
        .collect()
}

pub fn make_template(p: &AbstractProposition, params: BarrierParams) -> BarrierTemplate {
    BarrierTemplate {
        prop: p.id.clone(),
        kind: p.kind,
        window: p.window.unwrap_or(Bounds::UNBOUNDED),
        reach: p.reach.iter().map(|l| l.predicate.clone()).collect(),
        hold: p.hold.iter().map(|l| l.predicate.clone()).collect(),
        params,
    }
}

/// Predicate functions per proposition.
pub fn predicate_table(props: &[AbstractProposition]) -> BTreeMap<String, Vec<Predicate>> {
    props
        .iter()
        .filter(|p| p.kind != PropKind::Event)
        .map(|p| (p.id.clone(), p.predicates().cloned().collect()))
        .collect()
}

/// Abstracts `psi`, translates the result and builds the templates.
pub fn prep_spec(
    psi: &SpecFormula,
    scope: &str,
    params: BarrierParams,
    clock: &dyn Clock,
) -> AbstractionResult {
    let start = clock.now_ms();
    let (gamma, props, triggers) = abstract_formula(psi, scope);
    let alphabet: Vec<String> = props.iter().map(|p| p.id.to_string()).collect();
    let buchi = ltl_to_buchi_with(&gamma, &alphabet, TranslateOptions::default());
    let s0 = buchi.initial();
    let h = predicate_table(&props);
    let templates = make_templates(&props, params);
    AbstractionResult {
        gamma,
        props,
        h,
        templates,
        triggers,
        buchi,
        s0,
        prep_ms: clock.now_ms() - start,
    }
}
