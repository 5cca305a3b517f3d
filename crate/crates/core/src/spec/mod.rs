//! Specification language: predicates, formulas, selectors and modification
//! commands, with a text parser and printer.

mod command;
mod expr;
mod parse;
mod print;

use alloc::{boxed::Box, string::String, vec::Vec};
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use command::{parse_modification, CommandError, ModificationCommand, PredicatePattern};
pub use expr::{
    eval_predicate, grad_h, wrap_angle, BinOp, Dual, EntityField, Env, EvalError, EvalNotes,
    Expr, Func, Predicate, Relation, RobotField, Ty, DIV_EPS, NONDIFF_PERTURBATION, STATE_DIM,
};
pub use parse::{
    parse_document, parse_predicate, parse_spec, AliasTable, ParseError, ParseErrorKind, Schema,
    SpecDocument,
};
pub use print::{print_document, print_spec, used_aliases};

/// Closed time window `[lo, hi]` in seconds; `hi` may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const UNBOUNDED: Bounds = Bounds {
        lo: 0.0,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self, BoundsError> {
        if !lo.is_finite() || lo < 0.0 || hi.is_nan() {
            return Err(BoundsError::Invalid);
        }
        if lo > hi {
            return Err(BoundsError::Reversed { lo, hi });
        }
        Ok(Bounds { lo, hi })
    }

    pub fn is_unbounded(&self) -> bool {
        self.hi.is_infinite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Error)]
pub enum BoundsError {
    #[error("reversed bounds [{lo}, {hi}]")]
    Reversed { lo: f64, hi: f64 },
    #[error("bounds must be non-negative and finite on the left")]
    Invalid,
}

impl fmt::Display for Bounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.hi.is_infinite() {
            write!(f, "[{},inf]", self.lo)
        } else {
            write!(f, "[{},{}]", self.lo, self.hi)
        }
    }
}

// Serialized as `[lo, hi]` with `null` standing for an infinite upper end.
impl Serialize for Bounds {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let hi = if self.hi.is_finite() {
            Some(self.hi)
        } else {
            None
        };
        (self.lo, hi).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Bounds {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (lo, hi): (f64, Option<f64>) = Deserialize::deserialize(d)?;
        Bounds::new(lo, hi.unwrap_or(f64::INFINITY)).map_err(serde::de::Error::custom)
    }
}

/// Boolean combination of predicates; negation only on leaves.
#[derive(Clone, Debug, PartialEq)]
pub enum StateFormula {
    Pred(Predicate),
    Not(Predicate),
    And(Vec<StateFormula>),
    Or(Vec<StateFormula>),
}

/// Trigger condition built from event atoms and state predicates.
#[derive(Clone, Debug, PartialEq)]
pub enum EventFormula {
    Atom(String),
    Pred(Predicate),
    Not(Box<EventFormula>),
    And(Vec<EventFormula>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum SpecFormula {
    Always {
        bounds: Bounds,
        body: StateFormula,
    },
    Eventually {
        bounds: Bounds,
        body: StateFormula,
    },
    Until {
        bounds: Bounds,
        hold: StateFormula,
        reach: StateFormula,
    },
    /// `G(guard => body)`
    Trigger {
        guard: EventFormula,
        body: Box<SpecFormula>,
    },
    And(Vec<SpecFormula>),
    Or(Vec<SpecFormula>),
}

/// Path of child indices from the root of a formula.
///
/// Children are numbered as follows: timed operators have their body at 0
/// (`U` has the held formula at 0 and the reached one at 1); a trigger has its
/// guard at 0 and its body at 1; n-ary nodes number their operands in order.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Selector(pub Vec<usize>);

impl Selector {
    pub fn root() -> Self {
        Selector(Vec::new())
    }

    pub fn child(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        v.push(i);
        Selector(v)
    }

    pub fn is_prefix_of(&self, other: &Selector) -> bool {
        other.0.starts_with(&self.0)
    }

    /// Parses `@0.1.2` (or `@` for the root).
    pub fn parse(text: &str) -> Option<Self> {
        let rest = text.strip_prefix('@')?;
        if rest.is_empty() {
            return Some(Selector::root());
        }
        rest.split('.')
            .map(|p| p.parse::<usize>().ok())
            .collect::<Option<Vec<_>>>()
            .map(Selector)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("@")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// A borrowed node anywhere inside a specification.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeRef<'a> {
    Spec(&'a SpecFormula),
    State(&'a StateFormula),
    Event(&'a EventFormula),
    /// The predicate wrapped by a negated state leaf.
    Predicate(&'a Predicate),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("selector {0} does not name a node")]
pub struct NotFound(pub Selector);

impl<'a> NodeRef<'a> {
    fn child(self, i: usize) -> Option<Self> {
        match self {
            NodeRef::Spec(s) => match (s, i) {
                (SpecFormula::Always { body, .. }, 0) | (SpecFormula::Eventually { body, .. }, 0) => {
                    Some(NodeRef::State(body))
                }
                (SpecFormula::Until { hold, .. }, 0) => Some(NodeRef::State(hold)),
                (SpecFormula::Until { reach, .. }, 1) => Some(NodeRef::State(reach)),
                (SpecFormula::Trigger { guard, .. }, 0) => Some(NodeRef::Event(guard)),
                (SpecFormula::Trigger { body, .. }, 1) => Some(NodeRef::Spec(body)),
                (SpecFormula::And(v), _) | (SpecFormula::Or(v), _) => v.get(i).map(NodeRef::Spec),
                _ => None,
            },
            NodeRef::State(s) => match s {
                StateFormula::And(v) | StateFormula::Or(v) => v.get(i).map(NodeRef::State),
                StateFormula::Not(p) if i == 0 => Some(NodeRef::Predicate(p)),
                _ => None,
            },
            NodeRef::Event(e) => match e {
                EventFormula::And(v) => v.get(i).map(NodeRef::Event),
                EventFormula::Not(a) if i == 0 => Some(NodeRef::Event(a)),
                _ => None,
            },
            NodeRef::Predicate(_) => None,
        }
    }

    /// The predicate at this node, if it is a predicate leaf.
    pub fn predicate(self) -> Option<&'a Predicate> {
        match self {
            NodeRef::State(StateFormula::Pred(p) | StateFormula::Not(p))
            | NodeRef::Event(EventFormula::Pred(p))
            | NodeRef::Predicate(p) => Some(p),
            _ => None,
        }
    }
}

/// Returns the subtree at path `s`.
pub fn select_node<'a>(f: &'a SpecFormula, s: &Selector) -> Result<NodeRef<'a>, NotFound> {
    let mut node = NodeRef::Spec(f);
    for &i in &s.0 {
        node = node.child(i).ok_or_else(|| NotFound(s.clone()))?;
    }
    Ok(node)
}

impl StateFormula {
    pub fn predicates(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            StateFormula::Pred(p) | StateFormula::Not(p) => out.push(p),
            StateFormula::And(v) | StateFormula::Or(v) => {
                v.iter().for_each(|c| c.collect_predicates(out))
            }
        }
    }

    pub fn for_each_predicate_mut(&mut self, f: &mut dyn FnMut(&mut Predicate)) {
        match self {
            StateFormula::Pred(p) | StateFormula::Not(p) => f(p),
            StateFormula::And(v) | StateFormula::Or(v) => {
                v.iter_mut().for_each(|c| c.for_each_predicate_mut(f))
            }
        }
    }

    /// Disjunctive normal form: alternatives of conjunctions of predicates,
    /// with negated leaves turned into the relation-flipped predicate.
    pub fn dnf(&self) -> Vec<Vec<Predicate>> {
        match self {
            StateFormula::Pred(p) => alloc::vec![alloc::vec![p.clone()]],
            StateFormula::Not(p) => alloc::vec![alloc::vec![p.negated()]],
            StateFormula::Or(v) => v.iter().flat_map(|c| c.dnf()).collect(),
            StateFormula::And(v) => {
                let mut acc: Vec<Vec<Predicate>> = alloc::vec![Vec::new()];
                for c in v {
                    let alts = c.dnf();
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

    /// Truth under a margin oracle: a leaf holds when its margin is `>= 0`.
    pub fn holds(&self, margin: &mut dyn FnMut(&Predicate) -> f64) -> bool {
        match self {
            StateFormula::Pred(p) => margin(p) >= 0.0,
            StateFormula::Not(p) => margin(p) < 0.0,
            StateFormula::And(v) => v.iter().all(|c| c.holds(margin)),
            StateFormula::Or(v) => v.iter().any(|c| c.holds(margin)),
        }
    }
}

impl EventFormula {
    pub fn predicates(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            EventFormula::Atom(_) => {}
            EventFormula::Pred(p) => out.push(p),
            EventFormula::Not(a) => a.collect_predicates(out),
            EventFormula::And(v) => v.iter().for_each(|c| c.collect_predicates(out)),
        }
    }

    pub fn for_each_predicate_mut(&mut self, f: &mut dyn FnMut(&mut Predicate)) {
        match self {
            EventFormula::Atom(_) => {}
            EventFormula::Pred(p) => f(p),
            EventFormula::Not(a) => a.for_each_predicate_mut(f),
            EventFormula::And(v) => v.iter_mut().for_each(|c| c.for_each_predicate_mut(f)),
        }
    }

    pub fn atoms(&self, out: &mut Vec<String>) {
        match self {
            EventFormula::Atom(a) => {
                if !out.contains(a) {
                    out.push(a.clone());
                }
            }
            EventFormula::Pred(_) => {}
            EventFormula::Not(a) => a.atoms(out),
            EventFormula::And(v) => v.iter().for_each(|c| c.atoms(out)),
        }
    }
}

impl SpecFormula {
    pub fn and(parts: Vec<SpecFormula>) -> Self {
        SpecFormula::And(parts)
    }

    pub fn or(parts: Vec<SpecFormula>) -> Self {
        SpecFormula::Or(parts)
    }

    /// Every predicate occurring in the formula, in traversal order.
    pub fn predicates(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            SpecFormula::Always { body, .. } | SpecFormula::Eventually { body, .. } => {
                body.collect_predicates(out)
            }
            SpecFormula::Until { hold, reach, .. } => {
                hold.collect_predicates(out);
                reach.collect_predicates(out);
            }
            SpecFormula::Trigger { guard, body } => {
                guard.collect_predicates(out);
                body.collect_predicates(out);
            }
            SpecFormula::And(v) | SpecFormula::Or(v) => {
                v.iter().for_each(|c| c.collect_predicates(out))
            }
        }
    }

    /// Applies `f` to every predicate in place.
    pub fn for_each_predicate_mut(&mut self, f: &mut dyn FnMut(&mut Predicate)) {
        match self {
            SpecFormula::Always { body, .. } | SpecFormula::Eventually { body, .. } => {
                body.for_each_predicate_mut(f)
            }
            SpecFormula::Until { hold, reach, .. } => {
                hold.for_each_predicate_mut(f);
                reach.for_each_predicate_mut(f);
            }
            SpecFormula::Trigger { guard, body } => {
                guard.for_each_predicate_mut(f);
                body.for_each_predicate_mut(f);
            }
            SpecFormula::And(v) | SpecFormula::Or(v) => {
                v.iter_mut().for_each(|c| c.for_each_predicate_mut(f))
            }
        }
    }

    /// Event atoms used in trigger guards.
    pub fn events(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_events(&mut out);
        out
    }

    fn collect_events(&self, out: &mut Vec<String>) {
        match self {
            SpecFormula::Trigger { guard, body } => {
                guard.atoms(out);
                body.collect_events(out);
            }
            SpecFormula::And(v) | SpecFormula::Or(v) => {
                v.iter().for_each(|c| c.collect_events(out))
            }
            _ => {}
        }
    }

    /// Bounds of the timed operator at this node, if any.
    pub fn bounds(&self) -> Option<Bounds> {
        match self {
            SpecFormula::Always { bounds, .. }
            | SpecFormula::Eventually { bounds, .. }
            | SpecFormula::Until { bounds, .. } => Some(*bounds),
            _ => None,
        }
    }

    /// Mutable access to the spec node at `s`; fails if `s` leads outside the
    /// spec-level tree.
    pub fn spec_node_mut(&mut self, s: &Selector) -> Result<&mut SpecFormula, NotFound> {
        let mut node = self;
        for &i in &s.0 {
            node = match (node, i) {
                (SpecFormula::Trigger { body, .. }, 1) => body,
                (SpecFormula::And(v) | SpecFormula::Or(v), i) if i < v.len() => &mut v[i],
                _ => return Err(NotFound(s.clone())),
            };
        }
        Ok(node)
    }

    /// Mutable access to the predicate leaf at `s`.
    pub fn predicate_mut(&mut self, s: &Selector) -> Result<&mut Predicate, NotFound> {
        let err = || NotFound(s.clone());
        // Walk the spec-level prefix, then descend into the state or event tree.
        let mut node = self;
        let mut k = 0;
        while k < s.0.len() {
            let i = s.0[k];
            match node {
                SpecFormula::Trigger { body, .. } if i == 1 => node = body,
                SpecFormula::Trigger { guard, .. } if i == 0 => {
                    return event_predicate_mut(guard, &s.0[k + 1..]).ok_or_else(err);
                }
                SpecFormula::And(v) | SpecFormula::Or(v) if i < v.len() => node = &mut v[i],
                SpecFormula::Always { body, .. } | SpecFormula::Eventually { body, .. }
                    if i == 0 =>
                {
                    return state_predicate_mut(body, &s.0[k + 1..]).ok_or_else(err);
                }
                SpecFormula::Until { hold, .. } if i == 0 => {
                    return state_predicate_mut(hold, &s.0[k + 1..]).ok_or_else(err);
                }
                SpecFormula::Until { reach, .. } if i == 1 => {
                    return state_predicate_mut(reach, &s.0[k + 1..]).ok_or_else(err);
                }
                _ => return Err(err()),
            }
            k += 1;
        }
        Err(err())
    }

    /// Number of nodes in the spec-level tree and its state/event subtrees.
    pub fn size(&self) -> usize {
        fn state(s: &StateFormula) -> usize {
            match s {
                StateFormula::Pred(_) | StateFormula::Not(_) => 1,
                StateFormula::And(v) | StateFormula::Or(v) => 1 + v.iter().map(state).sum::<usize>(),
            }
        }
        fn event(e: &EventFormula) -> usize {
            match e {
                EventFormula::Atom(_) | EventFormula::Pred(_) => 1,
                EventFormula::Not(a) => 1 + event(a),
                EventFormula::And(v) => 1 + v.iter().map(event).sum::<usize>(),
            }
        }
        match self {
            SpecFormula::Always { body, .. } | SpecFormula::Eventually { body, .. } => 1 + state(body),
            SpecFormula::Until { hold, reach, .. } => 1 + state(hold) + state(reach),
            SpecFormula::Trigger { guard, body } => 1 + event(guard) + body.size(),
            SpecFormula::And(v) | SpecFormula::Or(v) => 1 + v.iter().map(|c| c.size()).sum::<usize>(),
        }
    }
}

fn state_predicate_mut<'a>(mut s: &'a mut StateFormula, path: &[usize]) -> Option<&'a mut Predicate> {
    for (k, &i) in path.iter().enumerate() {
        s = match s {
            StateFormula::And(v) | StateFormula::Or(v) => v.get_mut(i)?,
            StateFormula::Not(p) if i == 0 && k + 1 == path.len() => return Some(p),
            _ => return None,
        };
    }
    match s {
        StateFormula::Pred(p) | StateFormula::Not(p) => Some(p),
        _ => None,
    }
}

fn event_predicate_mut<'a>(mut e: &'a mut EventFormula, path: &[usize]) -> Option<&'a mut Predicate> {
    for &i in path {
        e = match e {
            EventFormula::And(v) => v.get_mut(i)?,
            EventFormula::Not(a) if i == 0 => a,
            _ => return None,
        };
    }
    match e {
        EventFormula::Pred(p) => Some(p),
        _ => None,
    }
}
