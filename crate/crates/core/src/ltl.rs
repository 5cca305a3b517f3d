//! Linear temporal logic formulas and their semantics on lasso words.

use alloc::{boxed::Box, collections::BTreeSet, string::String, vec, vec::Vec};
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ltl {
    True,
    False,
    Prop(String),
    Not(Box<Ltl>),
    And(Box<Ltl>, Box<Ltl>),
    Or(Box<Ltl>, Box<Ltl>),
    Next(Box<Ltl>),
    Until(Box<Ltl>, Box<Ltl>),
    Release(Box<Ltl>, Box<Ltl>),
    Eventually(Box<Ltl>),
    Always(Box<Ltl>),
}

impl Ltl {
    pub fn prop(p: &str) -> Self {
        Ltl::Prop(p.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Ltl) -> Self {
        Ltl::Not(Box::new(a))
    }

    pub fn and(a: Ltl, b: Ltl) -> Self {
        Ltl::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Ltl, b: Ltl) -> Self {
        Ltl::Or(Box::new(a), Box::new(b))
    }

    pub fn next(a: Ltl) -> Self {
        Ltl::Next(Box::new(a))
    }

    pub fn until(a: Ltl, b: Ltl) -> Self {
        Ltl::Until(Box::new(a), Box::new(b))
    }

    pub fn release(a: Ltl, b: Ltl) -> Self {
        Ltl::Release(Box::new(a), Box::new(b))
    }

    pub fn eventually(a: Ltl) -> Self {
        Ltl::Eventually(Box::new(a))
    }

    pub fn always(a: Ltl) -> Self {
        Ltl::Always(Box::new(a))
    }

    pub fn implies(a: Ltl, b: Ltl) -> Self {
        Ltl::or(Ltl::not(a), b)
    }

    /// Right-nested conjunction; `True` when empty.
    pub fn all(parts: Vec<Ltl>) -> Self {
        parts
            .into_iter()
            .rev()
            .reduce(|acc, p| Ltl::and(p, acc))
            .unwrap_or(Ltl::True)
    }

    /// Right-nested disjunction; `False` when empty.
    pub fn any(parts: Vec<Ltl>) -> Self {
        parts
            .into_iter()
            .rev()
            .reduce(|acc, p| Ltl::or(p, acc))
            .unwrap_or(Ltl::False)
    }

    pub fn size(&self) -> usize {
        match self {
            Ltl::True | Ltl::False | Ltl::Prop(_) => 1,
            Ltl::Not(a) | Ltl::Next(a) | Ltl::Eventually(a) | Ltl::Always(a) => 1 + a.size(),
            Ltl::And(a, b) | Ltl::Or(a, b) | Ltl::Until(a, b) | Ltl::Release(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    pub fn props(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_props(&mut out);
        out
    }

    fn collect_props(&self, out: &mut BTreeSet<String>) {
        match self {
            Ltl::True | Ltl::False => {}
            Ltl::Prop(p) => {
                out.insert(p.clone());
            }
            Ltl::Not(a) | Ltl::Next(a) | Ltl::Eventually(a) | Ltl::Always(a) => a.collect_props(out),
            Ltl::And(a, b) | Ltl::Or(a, b) | Ltl::Until(a, b) | Ltl::Release(a, b) => {
                a.collect_props(out);
                b.collect_props(out);
            }
        }
    }

    /// Evaluates the formula at position 0 of `prefix · cycle^ω`.
    pub fn eval_lasso(&self, w: &LassoWord) -> bool {
        self.eval_positions(w)[0]
    }

    /// Truth value at every position of the lasso's finite representation.
    fn eval_positions(&self, w: &LassoWord) -> Vec<bool> {
        let n = w.len();
        let succ = |i: usize| w.successor(i);
        match self {
            Ltl::True => vec![true; n],
            Ltl::False => vec![false; n],
            Ltl::Prop(p) => (0..n).map(|i| w.letter(i).contains(p)).collect(),
            Ltl::Not(a) => a.eval_positions(w).into_iter().map(|v| !v).collect(),
            Ltl::And(a, b) => {
                let (x, y) = (a.eval_positions(w), b.eval_positions(w));
                x.iter().zip(&y).map(|(p, q)| *p && *q).collect()
            }
            Ltl::Or(a, b) => {
                let (x, y) = (a.eval_positions(w), b.eval_positions(w));
                x.iter().zip(&y).map(|(p, q)| *p || *q).collect()
            }
            Ltl::Next(a) => {
                let x = a.eval_positions(w);
                (0..n).map(|i| x[succ(i)]).collect()
            }
            Ltl::Until(a, b) => fixpoint(&a.eval_positions(w), &b.eval_positions(w), false, &succ),
            Ltl::Release(a, b) => {
                // a R b = b & (a | X(a R b)), a greatest fixpoint.
                let (x, y) = (a.eval_positions(w), b.eval_positions(w));
                let mut v = vec![true; n];
                loop {
                    let next: Vec<bool> = (0..n).map(|i| y[i] && (x[i] || v[succ(i)])).collect();
                    if next == v {
                        return v;
                    }
                    v = next;
                }
            }
            Ltl::Eventually(a) => fixpoint(&vec![true; n], &a.eval_positions(w), false, &succ),
            Ltl::Always(a) => {
                let x = a.eval_positions(w);
                let mut v = vec![true; n];
                loop {
                    let next: Vec<bool> = (0..n).map(|i| x[i] && v[succ(i)]).collect();
                    if next == v {
                        return v;
                    }
                    v = next;
                }
            }
        }
    }
}

/// Least fixpoint of `v = b | (a & X v)`.
fn fixpoint(a: &[bool], b: &[bool], init: bool, succ: &dyn Fn(usize) -> usize) -> Vec<bool> {
    let n = a.len();
    let mut v = vec![init; n];
    loop {
        let next: Vec<bool> = (0..n).map(|i| b[i] || (a[i] && v[succ(i)])).collect();
        if next == v {
            return v;
        }
        v = next;
    }
}

impl fmt::Display for Ltl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ltl::True => f.write_str("true"),
            Ltl::False => f.write_str("false"),
            Ltl::Prop(p) => f.write_str(p),
            Ltl::Not(a) => write!(f, "!{a}"),
            Ltl::And(a, b) => write!(f, "({a} & {b})"),
            Ltl::Or(a, b) => write!(f, "({a} | {b})"),
            Ltl::Next(a) => write!(f, "X {a}"),
            Ltl::Until(a, b) => write!(f, "({a} U {b})"),
            Ltl::Release(a, b) => write!(f, "({a} R {b})"),
            Ltl::Eventually(a) => write!(f, "F {a}"),
            Ltl::Always(a) => write!(f, "G {a}"),
        }
    }
}

/// The ultimately periodic word `prefix · cycle^ω`, each letter being the
/// set of propositions that hold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LassoWord {
    pub prefix: Vec<BTreeSet<String>>,
    pub cycle: Vec<BTreeSet<String>>,
}

impl LassoWord {
    /// Builds a word from letters given as slices of proposition names.
    /// Panics if `cycle` is empty.
    pub fn new(prefix: &[&[&str]], cycle: &[&[&str]]) -> Self {
        assert!(!cycle.is_empty(), "lasso cycle must be nonempty");
        let conv = |l: &&[&str]| l.iter().map(|s| String::from(*s)).collect();
        LassoWord {
            prefix: prefix.iter().map(conv).collect(),
            cycle: cycle.iter().map(conv).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.prefix.len() + self.cycle.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn letter(&self, i: usize) -> &BTreeSet<String> {
        if i < self.prefix.len() {
            &self.prefix[i]
        } else {
            &self.cycle[i - self.prefix.len()]
        }
    }

    pub fn successor(&self, i: usize) -> usize {
        if i + 1 < self.len() {
            i + 1
        } else {
            self.prefix.len()
        }
    }
}

/// Direct semantics of `g` on the lasso word `w`.
pub fn ltl_eval_lasso(g: &Ltl, w: &LassoWord) -> bool {
    g.eval_lasso(w)
}
