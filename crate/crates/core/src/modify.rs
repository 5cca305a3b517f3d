//! Online modification of the running specification.
//!
//! A modification is first reduced to a diff: formulas to attach by
//! conjunction or disjunction, in application order, plus in-place rewrites
//! of predicates and bounds. Attachments are abstracted and translated on
//! their own; a conjunction replaces every automaton by its product with the
//! new one rooted at the current states, a disjunction appends the new
//! automaton. Rewrites never touch an automaton: proposition ids come from
//! selectors, so only the proposition table, templates and live barriers
//! change, and only when the proposition can still be required.
//!
//! All work happens on copies; the context is replaced only once everything
//! has succeeded.

use alloc::{
    boxed::Box,
    collections::BTreeMap,
    format,
    string::{String, ToString},
    vec,
    vec::Vec,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{abstract_formula, make_template, prep_spec, AbstractProposition, PropKind};
use crate::buchi::{intersect, Buchi};
use crate::cbf::instantiate;
use crate::clock::Clock;
use crate::ltl::Ltl;
use crate::monitor::{Status, TIME_TOL};
use crate::runtime::RuntimeContext;
use crate::spec::{
    print_spec, select_node, Bounds, Env, EventFormula, ModificationCommand, NodeRef, Predicate, PredicatePattern,
    Selector, SpecFormula, StateFormula,
};

/// One formula that has been attached to the running specification.
#[derive(Clone, Debug, PartialEq)]
pub struct Scope {
    /// Prefix of every proposition id it generates.
    pub prefix: String,
    pub formula: SpecFormula,
    pub gamma: Ltl,
}

/// How the running specification is assembled from scopes. Attachments nest
/// as binary nodes with the previous specification first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Composition {
    Base(usize),
    And(Box<Composition>, usize),
    Or(Box<Composition>, usize),
}

impl Composition {
    /// Maps a selector into the composed formula to a scope and a selector
    /// inside that scope's formula.
    pub fn resolve(&self, sel: &Selector) -> Result<(usize, Selector), ModError> {
        match self {
            Composition::Base(k) => Ok((*k, sel.clone())),
            Composition::And(left, k) | Composition::Or(left, k) => match sel.0.first() {
                Some(0) => left.resolve(&Selector(sel.0[1..].to_vec())),
                Some(1) => Ok((*k, Selector(sel.0[1..].to_vec()))),
                _ => Err(ModError::NotFound(sel.clone())),
            },
        }
    }

    /// Number of attachments wrapped around the base.
    pub fn depth(&self) -> usize {
        match self {
            Composition::Base(_) => 0,
            Composition::And(l, _) | Composition::Or(l, _) => 1 + l.depth(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    And,
    Or,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Rewrite {
    Bounds(Selector, Bounds),
    Predicate(Selector, Predicate),
}

impl Rewrite {
    pub fn selector(&self) -> &Selector {
        match self {
            Rewrite::Bounds(s, _) | Rewrite::Predicate(s, _) => s,
        }
    }
}

impl core::fmt::Display for Rewrite {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Rewrite::Bounds(s, b) => write!(f, "{s} bounds := {b}"),
            Rewrite::Predicate(s, p) => write!(f, "{s} := {p}"),
        }
    }
}

/// Attachments in application order plus in-place rewrites.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModificationDiff {
    pub additions: Vec<(SpecFormula, Op)>,
    pub rewrites: Vec<Rewrite>,
}

impl ModificationDiff {
    pub fn is_empty(&self) -> bool {
        self.additions.is_empty() && self.rewrites.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ModError {
    #[error("selector {0} does not name a node")]
    NotFound(Selector),
    #[error("selector {0} does not name a timed operator")]
    NotTimed(Selector),
    #[error("selector {0} does not name a predicate")]
    NotPredicate(Selector),
    #[error("pattern `{0}` matches nothing")]
    NoMatch(String),
    #[error("rewrite makes `{0}` constant")]
    ConstantPredicate(String),
    #[error("the new specification differs by more than attached clauses and in-place edits; use structured commands")]
    UndiffableChange,
    #[error("rewrite changes the structure of the specification at {0}")]
    StructureChanged(Selector),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackKind {
    IrrelevantModification,
    RecommendConjunction,
    Applied,
    RequiresPause,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub kind: FeedbackKind,
    pub target: Option<String>,
    pub message: String,
}

impl Feedback {
    fn new(kind: FeedbackKind, target: Option<String>, message: String) -> Self {
        Feedback { kind, target, message }
    }
}

/// Outcome of one modification, as logged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModReport {
    pub t: f64,
    pub command: String,
    pub kind: String,
    pub ok: bool,
    pub error: Option<String>,
    pub additions: Vec<(Op, String)>,
    pub rewrites: Vec<String>,
    pub feedback: Vec<Feedback>,
    pub timing_ms: f64,
    pub requires_pause: bool,
    pub estimated_ms: f64,
}

/// Predicate leaves with their selectors, trigger guards included.
pub fn predicate_leaves(f: &SpecFormula) -> Vec<(Selector, &Predicate)> {
    fn state<'a>(s: &'a StateFormula, sel: Selector, out: &mut Vec<(Selector, &'a Predicate)>) {
        match s {
            StateFormula::Pred(p) | StateFormula::Not(p) => out.push((sel, p)),
            StateFormula::And(v) | StateFormula::Or(v) => {
                for (i, c) in v.iter().enumerate() {
                    state(c, sel.child(i), out);
                }
            }
        }
    }
    fn event<'a>(e: &'a EventFormula, sel: Selector, out: &mut Vec<(Selector, &'a Predicate)>) {
        match e {
            EventFormula::Atom(_) => {}
            EventFormula::Pred(p) => out.push((sel, p)),
            EventFormula::Not(a) => event(a, sel.child(0), out),
            EventFormula::And(v) => {
                for (i, c) in v.iter().enumerate() {
                    event(c, sel.child(i), out);
                }
            }
        }
    }
    fn spec<'a>(f: &'a SpecFormula, sel: Selector, out: &mut Vec<(Selector, &'a Predicate)>) {
        match f {
            SpecFormula::Always { body, .. } | SpecFormula::Eventually { body, .. } => state(body, sel.child(0), out),
            SpecFormula::Until { hold, reach, .. } => {
                state(hold, sel.child(0), out);
                state(reach, sel.child(1), out);
            }
            SpecFormula::Trigger { guard, body } => {
                event(guard, sel.child(0), out);
                spec(body, sel.child(1), out);
            }
            SpecFormula::And(v) | SpecFormula::Or(v) => {
                for (i, c) in v.iter().enumerate() {
                    spec(c, sel.child(i), out);
                }
            }
        }
    }
    let mut out = Vec::new();
    spec(f, Selector::root(), &mut out);
    out
}

/// Reduces a command to a diff against the running specification `psi`
/// (findMods).
pub fn find_mods(psi: &SpecFormula, cmd: &ModificationCommand) -> Result<ModificationDiff, ModError> {
    let mut diff = ModificationDiff::default();
    match cmd {
        ModificationCommand::AddConj(f) => diff.additions.push((f.clone(), Op::And)),
        ModificationCommand::AddDisj(f) => diff.additions.push((f.clone(), Op::Or)),
        ModificationCommand::SetBounds(sel, b) => {
            let node = select_node(psi, sel).map_err(|_| ModError::NotFound(sel.clone()))?;
            match node {
                NodeRef::Spec(f) if f.bounds().is_some() => diff.rewrites.push(Rewrite::Bounds(sel.clone(), *b)),
                _ => return Err(ModError::NotTimed(sel.clone())),
            }
        }
        ModificationCommand::SetPredicate(PredicatePattern::At(sel, mu)) => {
            let node = select_node(psi, sel).map_err(|_| ModError::NotFound(sel.clone()))?;
            if node.predicate().is_none() {
                return Err(ModError::NotPredicate(sel.clone()));
            }
            // A selector into a negated leaf's predicate targets the leaf.
            let sel = match node {
                NodeRef::Predicate(_) => Selector(sel.0[..sel.0.len() - 1].to_vec()),
                _ => sel.clone(),
            };
            diff.rewrites.push(Rewrite::Predicate(sel, mu.clone()));
        }
        ModificationCommand::SetPredicate(PredicatePattern::Predicate(from, to)) => {
            for (sel, p) in predicate_leaves(psi) {
                if p == from {
                    diff.rewrites.push(Rewrite::Predicate(sel, to.clone()));
                }
            }
            if diff.rewrites.is_empty() {
                return Err(ModError::NoMatch(format!("{from}")));
            }
        }
        ModificationCommand::SetPredicate(PredicatePattern::Expr(from, to)) => {
            for (sel, p) in predicate_leaves(psi) {
                let mut q = p.clone();
                if q.lhs.replace(from, to) + q.rhs.replace(from, to) > 0 {
                    diff.rewrites.push(Rewrite::Predicate(sel, q));
                }
            }
            if diff.rewrites.is_empty() {
                return Err(ModError::NoMatch(format!("{from}")));
            }
        }
        ModificationCommand::ReplaceFull(new) => {
            if !peel(psi, new, &mut diff) {
                return Err(ModError::UndiffableChange);
            }
        }
    }
    Ok(diff)
}

/// Explains `new` as `old` with in-place edits wrapped in attachments;
/// inner attachments come first.
fn peel(old: &SpecFormula, new: &SpecFormula, diff: &mut ModificationDiff) -> bool {
    let mut rewrites = Vec::new();
    if shape_diff(old, new, Selector::root(), &mut rewrites) {
        diff.rewrites.extend(rewrites);
        return true;
    }
    let (parts, op) = match new {
        SpecFormula::And(v) if v.len() >= 2 => (v, Op::And),
        SpecFormula::Or(v) if v.len() >= 2 => (v, Op::Or),
        _ => return false,
    };
    let last = parts[parts.len() - 1].clone();
    let rest = if parts.len() == 2 {
        parts[0].clone()
    } else {
        let head = parts[..parts.len() - 1].to_vec();
        match op {
            Op::And => SpecFormula::And(head),
            Op::Or => SpecFormula::Or(head),
        }
    };
    if !peel(old, &rest, diff) {
        return false;
    }
    diff.additions.push((last, op));
    true
}

/// Whether two formulas have the same shape; collects differing bounds and
/// predicates as rewrites at their selectors.
fn shape_diff(a: &SpecFormula, b: &SpecFormula, sel: Selector, out: &mut Vec<Rewrite>) -> bool {
    use SpecFormula as S;
    let bounds = |x: &Bounds, y: &Bounds, out: &mut Vec<Rewrite>| {
        if x != y {
            out.push(Rewrite::Bounds(sel.clone(), *y));
        }
    };
    match (a, b) {
        (S::Always { bounds: x, body: p }, S::Always { bounds: y, body: q })
        | (S::Eventually { bounds: x, body: p }, S::Eventually { bounds: y, body: q }) => {
            bounds(x, y, out);
            state_diff(p, q, sel.child(0), out)
        }
        (
            S::Until {
                bounds: x,
                hold: h1,
                reach: r1,
            },
            S::Until {
                bounds: y,
                hold: h2,
                reach: r2,
            },
        ) => {
            bounds(x, y, out);
            state_diff(h1, h2, sel.child(0), out) && state_diff(r1, r2, sel.child(1), out)
        }
        (S::Trigger { guard: g1, body: b1 }, S::Trigger { guard: g2, body: b2 }) => {
            event_diff(g1, g2, sel.child(0), out) && shape_diff(b1, b2, sel.child(1), out)
        }
        (S::And(v), S::And(w)) | (S::Or(v), S::Or(w)) if v.len() == w.len() => v
            .iter()
            .zip(w)
            .enumerate()
            .all(|(i, (x, y))| shape_diff(x, y, sel.child(i), out)),
        _ => false,
    }
}

fn state_diff(a: &StateFormula, b: &StateFormula, sel: Selector, out: &mut Vec<Rewrite>) -> bool {
    use StateFormula as S;
    match (a, b) {
        (S::Pred(p), S::Pred(q)) | (S::Not(p), S::Not(q)) => {
            if p != q {
                out.push(Rewrite::Predicate(sel, q.clone()));
            }
            true
        }
        (S::And(v), S::And(w)) | (S::Or(v), S::Or(w)) if v.len() == w.len() => v
            .iter()
            .zip(w)
            .enumerate()
            .all(|(i, (x, y))| state_diff(x, y, sel.child(i), out)),
        _ => false,
    }
}

fn event_diff(a: &EventFormula, b: &EventFormula, sel: Selector, out: &mut Vec<Rewrite>) -> bool {
    use EventFormula as E;
    match (a, b) {
        (E::Atom(x), E::Atom(y)) => x == y,
        (E::Pred(p), E::Pred(q)) => {
            if p != q {
                out.push(Rewrite::Predicate(sel, q.clone()));
            }
            true
        }
        (E::Not(x), E::Not(y)) => event_diff(x, y, sel.child(0), out),
        (E::And(v), E::And(w)) if v.len() == w.len() => v
            .iter()
            .zip(w)
            .enumerate()
            .all(|(i, (x, y))| event_diff(x, y, sel.child(i), out)),
        _ => false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cost {
    InStep,
    RequiresPause,
}

/// Microseconds per estimated transition handled by translation or product.
const US_PER_EDGE: f64 = 1.0;

fn temporal_count(g: &Ltl) -> u32 {
    match g {
        Ltl::True | Ltl::False | Ltl::Prop(_) => 0,
        Ltl::Not(a) => temporal_count(a),
        Ltl::Next(a) | Ltl::Eventually(a) | Ltl::Always(a) => 1 + temporal_count(a),
        Ltl::And(a, b) | Ltl::Or(a, b) => temporal_count(a) + temporal_count(b),
        Ltl::Until(a, b) | Ltl::Release(a, b) => 1 + temporal_count(a) + temporal_count(b),
    }
}

/// Whether a diff fits in one control step. Rewrites always do; attachments
/// are estimated from the number of temporal operators they translate to
/// (each can double the states, so transitions grow about fourfold) and, for
/// conjunctions, the transitions of the automata they multiply.
pub fn classify_cost(ctx: &RuntimeContext, diff: &ModificationDiff) -> (Cost, f64) {
    let mut edges: f64 = ctx.b_set.iter().map(|b| b.edges().len() as f64).sum();
    let mut est_us = 0.0;
    for (f, op) in &diff.additions {
        let (g, _, _) = abstract_formula(f, "");
        let new_edges = libm::pow(4.0, temporal_count(&g).min(30) as f64);
        est_us += new_edges * US_PER_EDGE;
        match op {
            Op::And => {
                est_us += edges * new_edges * US_PER_EDGE;
                edges *= new_edges;
            }
            Op::Or => edges += new_edges,
        }
    }
    let ms = est_us / 1000.0;
    let cost = if diff.additions.is_empty() || ms <= ctx.config.pause_budget_ms {
        Cost::InStep
    } else {
        Cost::RequiresPause
    };
    (cost, ms)
}

/// Working copy of everything a modification may change.
struct Draft {
    psi: SpecFormula,
    composition: Composition,
    scopes: Vec<Scope>,
    /// Replacement automata; `None` keeps the current one.
    automata: Vec<Option<Buchi>>,
    states: Vec<usize>,
    monitor: crate::monitor::Monitor,
    templates: BTreeMap<String, crate::abstraction::BarrierTemplate>,
    barriers: Vec<crate::cbf::BarrierInstance>,
}

impl Draft {
    fn automaton<'a>(&'a self, ctx: &'a RuntimeContext, j: usize) -> &'a Buchi {
        self.automata[j].as_ref().unwrap_or_else(|| &ctx.b_set[j])
    }

    fn relevant(&self, ctx: &RuntimeContext, id: &str) -> bool {
        self.monitor.status(id) != Status::Completed
            && (0..self.automata.len()).any(|j| self.automaton(ctx, j).proposition_relevant(self.states[j], id))
    }

    fn restart_barriers(&mut self, ctx: &RuntimeContext, id: &str, env: &dyn Env) {
        self.barriers.retain(|b| b.prop != id);
        let (Some(inst), Some(tpl)) = (self.monitor.instances.get(id), self.templates.get(id)) else {
            return;
        };
        if inst.status == Status::Active {
            let fresh = instantiate(tpl, inst.t_act, ctx.t, env, &ctx.config.control);
            self.barriers.extend(fresh);
        }
    }
}

/// Applies a command to the context (modify). On failure the context is
/// left exactly as it was.
pub fn modify(ctx: &mut RuntimeContext, cmd: &ModificationCommand, env: &dyn Env, clock: &dyn Clock) -> ModReport {
    let start = clock.now_ms();
    let mut report = ModReport {
        t: ctx.t,
        command: cmd.to_string(),
        kind: cmd.kind().into(),
        ok: false,
        error: None,
        additions: Vec::new(),
        rewrites: Vec::new(),
        feedback: Vec::new(),
        timing_ms: 0.0,
        requires_pause: false,
        estimated_ms: 0.0,
    };
    let result = find_mods(&ctx.psi, cmd).and_then(|diff| {
        let (cost, est) = classify_cost(ctx, &diff);
        report.requires_pause = cost == Cost::RequiresPause;
        report.estimated_ms = est;
        report.additions = diff.additions.iter().map(|(f, op)| (*op, print_spec(f))).collect();
        report.rewrites = diff.rewrites.iter().map(|r| r.to_string()).collect();
        prepare(ctx, &diff, env, clock)
    });
    match result {
        Ok((draft, feedback)) => {
            commit(ctx, draft);
            report.ok = true;
            report.feedback = feedback;
            if report.requires_pause {
                report.feedback.push(Feedback::new(
                    FeedbackKind::RequiresPause,
                    None,
                    format!("estimated {:.0} ms exceeds the in-step budget; execution paused while applying", report.estimated_ms),
                ));
            }
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report.timing_ms = clock.now_ms() - start;
    report
}

fn prepare(
    ctx: &RuntimeContext,
    diff: &ModificationDiff,
    env: &dyn Env,
    clock: &dyn Clock,
) -> Result<(Draft, Vec<Feedback>), ModError> {
    let t = ctx.t;
    // Rewrites address the specification as it was before any attachment.
    let resolved: Vec<(usize, Selector, &Rewrite)> = diff
        .rewrites
        .iter()
        .map(|r| ctx.composition.resolve(r.selector()).map(|(k, s)| (k, s, r)))
        .collect::<Result<_, _>>()?;
    let mut d = Draft {
        psi: ctx.psi.clone(),
        composition: ctx.composition.clone(),
        scopes: ctx.scopes.clone(),
        automata: vec![None; ctx.b_set.len()],
        states: ctx.states.clone(),
        monitor: ctx.monitor.clone(),
        templates: ctx.templates.clone(),
        barriers: ctx.barriers.clone(),
    };
    let mut feedback = Vec::new();

    for (f, op) in &diff.additions {
        let k = d.scopes.len();
        let prefix = format!("k{k}:");
        let r = prep_spec(f, &prefix, ctx.config.params, clock);
        match op {
            Op::And => {
                for j in 0..d.automata.len() {
                    let p = intersect(d.automaton(ctx, j), &r.buchi, d.states[j], r.s0);
                    d.states[j] = p.initial();
                    d.automata[j] = Some(p);
                }
                d.composition = Composition::And(Box::new(d.composition), k);
                d.psi = SpecFormula::And(vec![d.psi, f.clone()]);
            }
            Op::Or => {
                d.automata.push(Some(r.buchi));
                d.states.push(r.s0);
                d.composition = Composition::Or(Box::new(d.composition), k);
                d.psi = SpecFormula::Or(vec![d.psi, f.clone()]);
            }
        }
        d.monitor.extend(&r.props, &r.triggers);
        for tpl in r.templates {
            d.templates.insert(tpl.prop.clone(), tpl);
        }
        d.scopes.push(Scope {
            prefix: prefix.clone(),
            formula: f.clone(),
            gamma: r.gamma,
        });
        for id in d.monitor.activate_unguarded(&prefix, t) {
            d.restart_barriers(ctx, &id, env);
        }
        feedback.push(Feedback::new(
            FeedbackKind::Applied,
            Some(prefix),
            format!(
                "attached by {}: {}",
                if *op == Op::And { "conjunction" } else { "disjunction" },
                print_spec(f)
            ),
        ));
    }

    let wrap = d.composition.depth() - ctx.composition.depth();
    for (k, local, rw) in resolved {
        let scope = &d.scopes[k];
        let mut formula = scope.formula.clone();
        match rw {
            Rewrite::Bounds(_, b) => match formula.spec_node_mut(&local) {
                Ok(
                    SpecFormula::Always { bounds, .. }
                    | SpecFormula::Eventually { bounds, .. }
                    | SpecFormula::Until { bounds, .. },
                ) => *bounds = *b,
                _ => return Err(ModError::NotTimed(rw.selector().clone())),
            },
            Rewrite::Predicate(_, p) => {
                if p.is_constant() {
                    return Err(ModError::ConstantPredicate(format!("{p}")));
                }
                let slot = formula
                    .predicate_mut(&local)
                    .map_err(|_| ModError::NotPredicate(rw.selector().clone()))?;
                *slot = p.clone();
            }
        }
        let (gamma, props, triggers) = abstract_formula(&formula, &scope.prefix);
        if gamma != scope.gamma {
            return Err(ModError::StructureChanged(rw.selector().clone()));
        }
        let changed: Vec<&AbstractProposition> = props
            .iter()
            .filter(|p| p.kind != PropKind::Event)
            .filter(|p| {
                d.monitor
                    .props
                    .get(&p.id)
                    .map_or(true, |q| q.reach != p.reach || q.hold != p.hold || q.window != p.window)
            })
            .collect();
        if changed.is_empty() {
            feedback.push(Feedback::new(FeedbackKind::Applied, None, format!("{rw}: no change")));
            continue;
        }
        let relevant = changed.iter().any(|p| match p.kind {
            PropKind::TriggerPred => triggers
                .iter()
                .filter(|tg| tg.guard.props().contains(&p.id))
                .any(|tg| tg.obligations.iter().any(|o| d.relevant(ctx, o))),
            _ => d.relevant(ctx, &p.id),
        });
        if !relevant {
            for p in &changed {
                feedback.push(Feedback::new(
                    FeedbackKind::IrrelevantModification,
                    Some(p.id.clone()),
                    format!("{} is no longer relevant for the task; the change was not applied", p.id),
                ));
            }
            feedback.push(Feedback::new(
                FeedbackKind::RecommendConjunction,
                Some(rw.selector().to_string()),
                "add the new task via conjunction (add-conj <spec>)".to_string(),
            ));
            continue;
        }
        for p in &changed {
            let old = d.monitor.props.get(&p.id).cloned();
            let mut newp = (*p).clone();
            newp.trigger = old.as_ref().and_then(|o| o.trigger);
            if newp.kind.is_obligation() {
                d.templates.insert(newp.id.clone(), make_template(&newp, ctx.config.params));
                if let Some(inst) = d.monitor.instances.get_mut(&newp.id) {
                    if let Some(w) = newp.window {
                        inst.window = w;
                    }
                    let revive = inst.status == Status::Violated
                        && inst.kind != PropKind::Always
                        && inst.hold_intact
                        && t <= inst.deadline() + TIME_TOL;
                    if revive {
                        inst.status = Status::Active;
                        inst.t_done = None;
                        feedback.push(Feedback::new(
                            FeedbackKind::Applied,
                            Some(newp.id.clone()),
                            format!("{} revived: the new window contains t = {t:.2}", newp.id),
                        ));
                    }
                }
            }
            let id = newp.id.clone();
            d.monitor.props.insert(id.clone(), newp);
            d.restart_barriers(ctx, &id, env);
        }
        scope_set(&mut d.scopes[k], formula);
        let mut composed = Selector(vec![0; wrap]);
        composed.0.extend(rw.selector().0.iter().copied());
        apply_to(&mut d.psi, &composed, rw);
        feedback.push(Feedback::new(
            FeedbackKind::Applied,
            Some(rw.selector().to_string()),
            format!("{rw}"),
        ));
    }
    Ok((d, feedback))
}

fn scope_set(scope: &mut Scope, formula: SpecFormula) {
    scope.formula = formula;
}

fn apply_to(psi: &mut SpecFormula, sel: &Selector, rw: &Rewrite) {
    match rw {
        Rewrite::Bounds(_, b) => {
            if let Ok(
                SpecFormula::Always { bounds, .. }
                | SpecFormula::Eventually { bounds, .. }
                | SpecFormula::Until { bounds, .. },
            ) = psi.spec_node_mut(sel)
            {
                *bounds = *b;
            }
        }
        Rewrite::Predicate(_, p) => {
            if let Ok(slot) = psi.predicate_mut(sel) {
                *slot = p.clone();
            }
        }
    }
}

fn commit(ctx: &mut RuntimeContext, d: Draft) {
    ctx.psi = d.psi;
    ctx.composition = d.composition;
    ctx.scopes = d.scopes;
    for (j, b) in d.automata.into_iter().enumerate() {
        match b {
            Some(b) if j < ctx.b_set.len() => ctx.b_set[j] = b,
            Some(b) => ctx.b_set.push(b),
            None => {}
        }
    }
    ctx.states = d.states;
    ctx.monitor = d.monitor;
    ctx.templates = d.templates;
    ctx.barriers = d.barriers;
    ctx.dist_cache.clear();
}
