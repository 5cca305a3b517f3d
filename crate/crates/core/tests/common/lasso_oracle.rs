//! Bounded-exhaustive comparison of LTL semantics and translated automata on
//! lasso words over the propositions `p` and `q`.
//!
//! Both sides are computed here independently of the library's own lasso
//! evaluators: formulas by a fixpoint evaluation over the cycle positions
//! followed by a backward pass over the prefix, automata by a product with
//! the cycle and an SCC search.

#![allow(dead_code)]

use respec_core::buchi::{ltl_to_buchi, Buchi};
use respec_core::ltl::{LassoWord, Ltl};

/// Every formula with at most `max_size` nodes over `p`, `q`.
pub fn enumerate(max_size: usize) -> Vec<Ltl> {
    let mut by_size: Vec<Vec<Ltl>> = vec![Vec::new(); max_size + 1];
    if max_size == 0 {
        return Vec::new();
    }
    by_size[1] = vec![Ltl::prop("p"), Ltl::prop("q")];
    for s in 2..=max_size {
        let mut out = Vec::new();
        for a in &by_size[s - 1] {
            out.push(Ltl::not(a.clone()));
            out.push(Ltl::next(a.clone()));
            out.push(Ltl::eventually(a.clone()));
            out.push(Ltl::always(a.clone()));
        }
        for i in 1..s - 1 {
            let j = s - 1 - i;
            for a in &by_size[i] {
                for b in &by_size[j] {
                    out.push(Ltl::and(a.clone(), b.clone()));
                    out.push(Ltl::or(a.clone(), b.clone()));
                    out.push(Ltl::until(a.clone(), b.clone()));
                }
            }
        }
        by_size[s] = out;
    }
    by_size.into_iter().flatten().collect()
}

/// All sequences over the four letters with length in `lo..=hi`; a letter
/// is a bitmask with bit 0 for `p` and bit 1 for `q`.
pub fn sequences(lo: usize, hi: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for len in lo..=hi {
        for code in 0..4usize.pow(len as u32) {
            let mut c = code;
            let mut w = Vec::with_capacity(len);
            for _ in 0..len {
                w.push((c % 4) as u8);
                c /= 4;
            }
            out.push(w);
        }
    }
    out
}

pub fn to_lasso(prefix: &[u8], cycle: &[u8]) -> LassoWord {
    let conv = |l: &u8| {
        let mut s = std::collections::BTreeSet::new();
        if l & 1 != 0 {
            s.insert("p".to_string());
        }
        if l & 2 != 0 {
            s.insert("q".to_string());
        }
        s
    };
    LassoWord {
        prefix: prefix.iter().map(conv).collect(),
        cycle: cycle.iter().map(conv).collect(),
    }
}

#[derive(Clone, Copy)]
enum Op {
    P(u8),
    Not(usize),
    And(usize, usize),
    Or(usize, usize),
    Next(usize),
    Until(usize, usize),
    Ev(usize),
    Alw(usize),
}

/// Post-order node list; the last node is the root.
fn flatten(g: &Ltl, out: &mut Vec<Op>) -> usize {
    let op = match g {
        Ltl::Prop(p) => Op::P(if p == "p" { 1 } else { 2 }),
        Ltl::Not(a) => Op::Not(flatten(a, out)),
        Ltl::Next(a) => Op::Next(flatten(a, out)),
        Ltl::Eventually(a) => Op::Ev(flatten(a, out)),
        Ltl::Always(a) => Op::Alw(flatten(a, out)),
        Ltl::And(a, b) => {
            let x = flatten(a, out);
            Op::And(x, flatten(b, out))
        }
        Ltl::Or(a, b) => {
            let x = flatten(a, out);
            Op::Or(x, flatten(b, out))
        }
        Ltl::Until(a, b) => {
            let x = flatten(a, out);
            Op::Until(x, flatten(b, out))
        }
        other => panic!("unexpected operator in {other}"),
    };
    out.push(op);
    out.len() - 1
}

/// Truth masks (bit j = position j) of every node on `cycle^ω`.
fn eval_cycle(ops: &[Op], cycle: &[u8]) -> Vec<u8> {
    let m = cycle.len();
    let full: u8 = ((1u16 << m) - 1) as u8;
    // bit j of rot(v) is bit (j+1 mod m) of v
    let rot = |v: u8| ((v >> 1) | ((v & 1) << (m - 1))) & full;
    let mut vals = vec![0u8; ops.len()];
    for (k, op) in ops.iter().enumerate() {
        vals[k] = match *op {
            Op::P(bit) => {
                let mut v = 0;
                for (j, l) in cycle.iter().enumerate() {
                    if l & bit != 0 {
                        v |= 1 << j;
                    }
                }
                v
            }
            Op::Not(a) => !vals[a] & full,
            Op::And(a, b) => vals[a] & vals[b],
            Op::Or(a, b) => vals[a] | vals[b],
            Op::Next(a) => rot(vals[a]),
            Op::Until(a, b) => lfp(vals[a], vals[b], &rot),
            Op::Ev(b) => lfp(full, vals[b], &rot),
            Op::Alw(a) => {
                let mut v = full;
                loop {
                    let n = vals[a] & rot(v);
                    if n == v {
                        break v;
                    }
                    v = n;
                }
            }
        };
    }
    vals
}

/// Least fixpoint of `v = y | (x & X v)` over cycle masks.
fn lfp(x: u8, y: u8, rot: &dyn Fn(u8) -> u8) -> u8 {
    let mut v = 0u8;
    loop {
        let n = y | (x & rot(v));
        if n == v {
            return v;
        }
        v = n;
    }
}

/// Node truth values at a prefix position given the values at the next one.
fn eval_step(ops: &[Op], letter: u8, next: &[bool], cur: &mut [bool]) {
    for (k, op) in ops.iter().enumerate() {
        cur[k] = match *op {
            Op::P(bit) => letter & bit != 0,
            Op::Not(a) => !cur[a],
            Op::And(a, b) => cur[a] && cur[b],
            Op::Or(a, b) => cur[a] || cur[b],
            Op::Next(a) => next[a],
            Op::Until(a, b) => cur[b] || (cur[a] && next[k]),
            Op::Ev(a) => cur[a] || next[k],
            Op::Alw(a) => cur[a] && next[k],
        };
    }
}

/// Fixed-width state set.
type Set = u128;

struct Compiled {
    n: usize,
    init: usize,
    accepting: Set,
    /// successors per state and letter
    succ: Vec<[Set; 4]>,
}

fn compile(b: &Buchi) -> Compiled {
    let n = b.len();
    assert!(n <= 128, "automaton too large for the oracle: {n} states");
    let mut succ = vec![[0 as Set; 4]; n];
    for letter in 0..4u8 {
        let truth: Vec<bool> = b
            .alphabet()
            .iter()
            .map(|p| (p == "p" && letter & 1 != 0) || (p == "q" && letter & 2 != 0))
            .collect();
        for e in b.edges() {
            if e.label.satisfied_by(&truth) {
                succ[e.from][letter as usize] |= 1 << e.to;
            }
        }
    }
    let mut accepting = 0;
    for q in b.accepting_states() {
        accepting |= 1 << q;
    }
    Compiled {
        n,
        init: b.initial(),
        accepting,
        succ,
    }
}

/// States from which `cycle^ω` (read from its first letter) is accepted.
fn accepted_on_cycle(c: &Compiled, cycle: &[u8]) -> Set {
    let m = cycle.len();
    let id = |q: usize, j: usize| q * m + j;
    let total = c.n * m;
    let mut adj = vec![Vec::new(); total];
    for q in 0..c.n {
        for j in 0..m {
            let s = c.succ[q][cycle[j] as usize];
            for t in 0..c.n {
                if s >> t & 1 != 0 {
                    adj[id(q, j)].push(id(t, (j + 1) % m));
                }
            }
        }
    }
    let comp = tarjan(&adj);
    let mut size = vec![0; total];
    for &k in &comp {
        size[k] += 1;
    }
    let mut good: Vec<bool> = (0..total)
        .map(|v| {
            c.accepting >> (v / m) & 1 != 0 && (size[comp[v]] > 1 || adj[v].contains(&v))
        })
        .collect();
    // backward closure
    let mut radj = vec![Vec::new(); total];
    for v in 0..total {
        for &w in &adj[v] {
            radj[w].push(v);
        }
    }
    let mut stack: Vec<usize> = (0..total).filter(|&v| good[v]).collect();
    while let Some(v) = stack.pop() {
        for &u in &radj[v] {
            if !good[u] {
                good[u] = true;
                stack.push(u);
            }
        }
    }
    let mut out = 0;
    for q in 0..c.n {
        if good[id(q, 0)] {
            out |= 1 << q;
        }
    }
    out
}

fn tarjan(adj: &[Vec<usize>]) -> Vec<usize> {
    struct T<'a> {
        adj: &'a [Vec<usize>],
        index: Vec<usize>,
        low: Vec<usize>,
        on: Vec<bool>,
        stack: Vec<usize>,
        comp: Vec<usize>,
        next: usize,
        ncomp: usize,
    }
    fn visit(t: &mut T, v: usize) {
        t.index[v] = t.next;
        t.low[v] = t.next;
        t.next += 1;
        t.stack.push(v);
        t.on[v] = true;
        for k in 0..t.adj[v].len() {
            let w = t.adj[v][k];
            if t.index[w] == usize::MAX {
                visit(t, w);
                t.low[v] = t.low[v].min(t.low[w]);
            } else if t.on[w] {
                t.low[v] = t.low[v].min(t.index[w]);
            }
        }
        if t.low[v] == t.index[v] {
            loop {
                let w = t.stack.pop().unwrap();
                t.on[w] = false;
                t.comp[w] = t.ncomp;
                if w == v {
                    break;
                }
            }
            t.ncomp += 1;
        }
    }
    let n = adj.len();
    let mut t = T {
        adj,
        index: vec![usize::MAX; n],
        low: vec![0; n],
        on: vec![false; n],
        stack: Vec::new(),
        comp: vec![0; n],
        next: 0,
        ncomp: 0,
    };
    for v in 0..n {
        if t.index[v] == usize::MAX {
            visit(&mut t, v);
        }
    }
    t.comp
}

fn post(c: &Compiled, s: Set, letter: u8) -> Set {
    let mut out = 0;
    for q in 0..c.n {
        if s >> q & 1 != 0 {
            out |= c.succ[q][letter as usize];
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct Report {
    pub formulas: usize,
    pub words: usize,
    pub checks: u64,
    pub max_states: usize,
    pub mismatches: Vec<(String, Vec<u8>, Vec<u8>)>,
}

/// Compares automaton acceptance with formula semantics for every formula
/// up to `max_size` and every lasso with prefix up to `max_prefix` and
/// cycle length `1..=max_cycle`.
pub fn run(max_size: usize, max_prefix: usize, max_cycle: usize) -> Report {
    let formulas = enumerate(max_size);
    let prefixes = sequences(0, max_prefix);
    let cycles = sequences(1, max_cycle);
    let mut report = Report {
        formulas: formulas.len(),
        words: prefixes.len() * cycles.len(),
        ..Report::default()
    };
    for g in &formulas {
        let mut ops = Vec::new();
        flatten(g, &mut ops);
        let root = ops.len() - 1;
        let b = ltl_to_buchi(g);
        report.max_states = report.max_states.max(b.len());
        let c = compile(&b);
        // states reached after each prefix
        let reached: Vec<Set> = prefixes
            .iter()
            .map(|p| p.iter().fold(1 << c.init, |s, &l| post(&c, s, l)))
            .collect();
        let mut next = vec![false; ops.len()];
        let mut cur = vec![false; ops.len()];
        for cycle in &cycles {
            let cyc = eval_cycle(&ops, cycle);
            let acc = accepted_on_cycle(&c, cycle);
            for (pi, prefix) in prefixes.iter().enumerate() {
                for k in 0..ops.len() {
                    next[k] = cyc[k] & 1 != 0;
                }
                for &l in prefix.iter().rev() {
                    eval_step(&ops, l, &next, &mut cur);
                    std::mem::swap(&mut next, &mut cur);
                }
                let semantic = next[root];
                let automaton = reached[pi] & acc != 0;
                report.checks += 1;
                if semantic != automaton && report.mismatches.len() < 20 {
                    report
                        .mismatches
                        .push((g.to_string(), prefix.clone(), cycle.clone()));
                }
            }
        }
    }
    report
}
