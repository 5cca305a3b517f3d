//! Büchi automata: translation from LTL, intersection, reachability and
//! shortest accepting paths.
//!
//! Translation expands formulas in negation normal form into a
//! transition-based generalized Büchi automaton whose states are the sets of
//! obligations carried to the next step, then degeneralizes it with a level
//! counter. Labels are conjunctions of literals over a sorted alphabet.

use alloc::{
    collections::{BTreeMap, BTreeSet, VecDeque},
    format,
    string::String,
    vec,
    vec::Vec,
};
use core::fmt::Write;

use serde::Serialize;

use crate::ltl::{LassoWord, Ltl};

/// Conjunction of literals; indices refer to the owning automaton's alphabet.
/// An empty label is `true`.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Label {
    pub pos: Vec<u32>,
    pub neg: Vec<u32>,
}

impl Label {
    pub fn is_true(&self) -> bool {
        self.pos.is_empty() && self.neg.is_empty()
    }

    /// Whether a complete truth assignment satisfies the label.
    pub fn satisfied_by(&self, truth: &[bool]) -> bool {
        self.pos.iter().all(|&i| truth[i as usize]) && self.neg.iter().all(|&i| !truth[i as usize])
    }

    /// Whether the label can be satisfied given partially fixed values.
    pub fn consistent_with(&self, fixed: &[Option<bool>]) -> bool {
        self.pos.iter().all(|&i| fixed[i as usize] != Some(false))
            && self.neg.iter().all(|&i| fixed[i as usize] != Some(true))
    }

    fn subsumes(&self, other: &Label) -> bool {
        is_subset(&self.pos, &other.pos) && is_subset(&self.neg, &other.neg)
    }

    /// Conjunction of two labels; `None` if contradictory.
    pub fn conjoin(&self, other: &Label) -> Option<Label> {
        let pos = merge_sorted(&self.pos, &other.pos);
        let neg = merge_sorted(&self.neg, &other.neg);
        if pos.iter().any(|p| neg.binary_search(p).is_ok()) {
            return None;
        }
        Some(Label { pos, neg })
    }

    fn remap(&self, map: &[u32]) -> Label {
        let mut pos: Vec<u32> = self.pos.iter().map(|&i| map[i as usize]).collect();
        let mut neg: Vec<u32> = self.neg.iter().map(|&i| map[i as usize]).collect();
        pos.sort_unstable();
        neg.sort_unstable();
        Label { pos, neg }
    }

    pub fn render(&self, alphabet: &[String]) -> String {
        if self.is_true() {
            return "true".into();
        }
        let mut parts: Vec<String> = self.pos.iter().map(|&i| alphabet[i as usize].clone()).collect();
        parts.extend(self.neg.iter().map(|&i| format!("!{}", alphabet[i as usize])));
        parts.join(" & ")
    }
}

fn is_subset(a: &[u32], b: &[u32]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

fn merge_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut v: Vec<u32> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub label: Label,
}

/// State-based Büchi automaton. States are indices `0..len()`.
#[derive(Clone, Debug, Serialize)]
pub struct Buchi {
    alphabet: Vec<String>,
    state_names: Vec<String>,
    initial: usize,
    edges: Vec<Edge>,
    accepting: Vec<bool>,
    #[serde(skip)]
    out: Vec<Vec<usize>>,
    /// Transitions needed to reach an accepting state on a cycle.
    #[serde(skip)]
    dist: Vec<u32>,
}

pub const UNREACHABLE: u32 = u32::MAX;

impl Buchi {
    /// Assembles an automaton from parts. Label indices must be valid for
    /// the (sorted, duplicate-free) alphabet.
    pub fn from_parts(
        alphabet: Vec<String>,
        state_names: Vec<String>,
        initial: usize,
        edges: Vec<Edge>,
        accepting: Vec<bool>,
    ) -> Self {
        debug_assert!(alphabet.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(state_names.len(), accepting.len());
        let mut b = Buchi {
            alphabet,
            state_names,
            initial,
            edges,
            accepting,
            out: Vec::new(),
            dist: Vec::new(),
        };
        b.index();
        b
    }

    /// One accepting state looping on `true`.
    pub fn universal(alphabet: Vec<String>) -> Self {
        Buchi::from_parts(
            alphabet,
            vec!["s0".into()],
            0,
            vec![Edge {
                from: 0,
                to: 0,
                label: Label::default(),
            }],
            vec![true],
        )
    }

    /// One non-accepting state without transitions.
    pub fn empty(alphabet: Vec<String>) -> Self {
        Buchi::from_parts(alphabet, vec!["s0".into()], 0, Vec::new(), vec![false])
    }

    fn index(&mut self) {
        let n = self.state_names.len();
        self.out = vec![Vec::new(); n];
        for (i, e) in self.edges.iter().enumerate() {
            self.out[e.from].push(i);
        }
        self.dist = self.distances_where(|_| true);
    }

    /// Distances to an accepting state on a cycle using only transitions
    /// that satisfy `keep`.
    fn distances_where(&self, keep: impl Fn(&Edge) -> bool) -> Vec<u32> {
        let n = self.state_names.len();
        let kept: Vec<bool> = self.edges.iter().map(&keep).collect();
        let adj: Vec<Vec<usize>> = self
            .out
            .iter()
            .map(|es| es.iter().filter(|&&e| kept[e]).map(|&e| self.edges[e].to).collect())
            .collect();
        let cyclic = on_cycle(&adj);
        let mut radj = vec![Vec::new(); n];
        for (e, edge) in self.edges.iter().enumerate() {
            if kept[e] {
                radj[edge.to].push(edge.from);
            }
        }
        let mut dist = vec![UNREACHABLE; n];
        let mut queue = VecDeque::new();
        for q in 0..n {
            if self.accepting[q] && cyclic[q] {
                dist[q] = 0;
                queue.push_back(q);
            }
        }
        while let Some(q) = queue.pop_front() {
            for &p in &radj[q] {
                if dist[p] == UNREACHABLE {
                    dist[p] = dist[q] + 1;
                    queue.push_back(p);
                }
            }
        }
        dist
    }

    /// Distances to acceptance when the literals in `latched` keep their
    /// value forever.
    pub fn distances_under(&self, latched: &[Option<bool>]) -> Vec<u32> {
        self.distances_where(|e| e.label.consistent_with(latched))
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn prop_index(&self, p: &str) -> Option<u32> {
        self.alphabet
            .binary_search_by(|a| a.as_str().cmp(p))
            .ok()
            .map(|i| i as u32)
    }

    pub fn len(&self) -> usize {
        self.state_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state_names.is_empty()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> &Edge {
        &self.edges[i]
    }

    /// Indices of the transitions leaving `s`.
    pub fn outgoing(&self, s: usize) -> &[usize] {
        &self.out[s]
    }

    pub fn is_accepting(&self, s: usize) -> bool {
        self.accepting[s]
    }

    pub fn accepting_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&q| self.accepting[q])
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.state_names[s]
    }

    /// Transitions from `s` to an accepting state on a cycle;
    /// [`UNREACHABLE`] if there is none.
    pub fn distance(&self, s: usize) -> u32 {
        self.dist[s]
    }

    /// Whether an accepting run can still be continued from `s`.
    pub fn is_live(&self, s: usize) -> bool {
        self.dist[s] != UNREACHABLE
    }

    /// Maps a proposition truth lookup onto this automaton's alphabet.
    pub fn truth_vector(&self, holds: &dyn Fn(&str) -> bool) -> Vec<bool> {
        self.alphabet.iter().map(|p| holds(p)).collect()
    }

    /// States reachable from `s` in zero or more steps.
    pub fn forward_reachable(&self, s: usize) -> BTreeSet<usize> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(q) = stack.pop() {
            for &e in &self.out[q] {
                let t = self.edges[e].to;
                if !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        (0..self.len()).filter(|&q| seen[q]).collect()
    }

    /// Whether some transition leaving a state reachable from `s` requires
    /// `p` to hold.
    pub fn proposition_relevant(&self, s: usize, p: &str) -> bool {
        let Some(ix) = self.prop_index(p) else {
            return false;
        };
        self.forward_reachable(s).into_iter().any(|q| {
            self.out[q]
                .iter()
                .any(|&e| self.edges[e].label.pos.binary_search(&ix).is_ok())
        })
    }

    /// First transitions of the shortest paths from `s` to an accepting
    /// state on a cycle, restricted to those consistent with `fixed`.
    /// Returns the transition indices and the common path length.
    pub fn shortest_first_steps(&self, s: usize, fixed: &[Option<bool>]) -> (Vec<usize>, u32) {
        self.shortest_first_steps_with(s, fixed, &self.dist)
    }

    /// As [`Buchi::shortest_first_steps`] with distances from
    /// [`Buchi::distances_under`].
    pub fn shortest_first_steps_with(&self, s: usize, fixed: &[Option<bool>], dist: &[u32]) -> (Vec<usize>, u32) {
        let mut best = UNREACHABLE;
        let mut firsts = Vec::new();
        for &e in &self.out[s] {
            let edge = &self.edges[e];
            let d = dist[edge.to];
            if d == UNREACHABLE || !edge.label.consistent_with(fixed) {
                continue;
            }
            let len = d + 1;
            if len < best {
                best = len;
                firsts.clear();
            }
            if len == best {
                firsts.push(e);
            }
        }
        (firsts, best)
    }

    /// All minimum-length transition sequences from `s` to an accepting
    /// state on a cycle whose first transition is consistent with `fixed`,
    /// up to `cap` paths.
    pub fn shortest_accepting_paths(
        &self,
        s: usize,
        fixed: &[Option<bool>],
        cap: usize,
    ) -> Vec<Vec<usize>> {
        let (firsts, len) = self.shortest_first_steps(s, fixed);
        let mut out = Vec::new();
        for e in firsts {
            let mut path = vec![e];
            self.extend_paths(&mut path, len as usize, cap, &mut out);
            if out.len() >= cap {
                break;
            }
        }
        out
    }

    fn extend_paths(&self, path: &mut Vec<usize>, len: usize, cap: usize, out: &mut Vec<Vec<usize>>) {
        if out.len() >= cap {
            return;
        }
        let q = self.edges[*path.last().unwrap()].to;
        if path.len() == len {
            out.push(path.clone());
            return;
        }
        let want = (len - path.len() - 1) as u32;
        for &e in &self.out[q] {
            if self.dist[self.edges[e].to] == want {
                path.push(e);
                self.extend_paths(path, len, cap, out);
                path.pop();
            }
        }
    }

    /// Successor of `s` under a complete truth assignment, choosing among
    /// enabled transitions the target closest to acceptance (ties to the
    /// lowest transition index). `None` if no transition is enabled.
    pub fn step(&self, s: usize, truth: &[bool]) -> Option<usize> {
        self.out[s]
            .iter()
            .filter(|&&e| self.edges[e].label.satisfied_by(truth))
            .min_by_key(|&&e| (self.dist[self.edges[e].to], e))
            .map(|&e| self.edges[e].to)
    }

    /// Membership of `prefix · cycle^ω` in the language accepted from the
    /// initial state. Propositions outside the alphabet are ignored.
    pub fn accepts_lasso(&self, w: &LassoWord) -> bool {
        self.accepts_lasso_from(self.initial, w)
    }

    pub fn accepts_lasso_from(&self, start: usize, w: &LassoWord) -> bool {
        let n = w.len();
        let letters: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                let l = w.letter(i);
                self.alphabet.iter().map(|p| l.contains(p)).collect()
            })
            .collect();
        let id = |q: usize, i: usize| q * n + i;
        let total = self.len() * n;
        let mut adj = vec![Vec::new(); total];
        let mut seen = vec![false; total];
        let mut stack = vec![(start, 0)];
        seen[id(start, 0)] = true;
        while let Some((q, i)) = stack.pop() {
            let j = w.successor(i);
            for &e in &self.out[q] {
                let edge = &self.edges[e];
                if edge.label.satisfied_by(&letters[i]) {
                    adj[id(q, i)].push(id(edge.to, j));
                    if !seen[id(edge.to, j)] {
                        seen[id(edge.to, j)] = true;
                        stack.push((edge.to, j));
                    }
                }
            }
        }
        let cyclic = on_cycle(&adj);
        (0..total).any(|v| seen[v] && cyclic[v] && self.accepting[v / n])
    }

    /// Structural hash over the part reachable from the initial state, with
    /// states numbered in breadth-first order and transitions sorted.
    pub fn fingerprint(&self) -> u64 {
        let mut order = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::from([self.initial]);
        order[self.initial] = 0;
        let mut next = 1;
        let mut h = Fnv::new();
        for p in &self.alphabet {
            h.write(p.as_bytes());
            h.write(&[0xff]);
        }
        while let Some(q) = queue.pop_front() {
            let mut es: Vec<&Edge> = self.out[q].iter().map(|&e| &self.edges[e]).collect();
            es.sort_by(|a, b| a.label.cmp(&b.label).then(a.to.cmp(&b.to)));
            for e in &es {
                if order[e.to] == usize::MAX {
                    order[e.to] = next;
                    next += 1;
                    queue.push_back(e.to);
                }
            }
            let mut rows: Vec<(&Label, usize)> = es.iter().map(|e| (&e.label, order[e.to])).collect();
            rows.sort();
            h.write_u64(order[q] as u64);
            h.write_u64(self.accepting[q] as u64);
            for (l, t) in rows {
                for &p in &l.pos {
                    h.write_u64(p as u64);
                }
                h.write(&[0xfe]);
                for &p in &l.neg {
                    h.write_u64(p as u64);
                }
                h.write(&[0xfd]);
                h.write_u64(t as u64);
            }
            h.write(&[0xfc]);
        }
        h.finish()
    }

    /// Graphviz rendering.
    pub fn to_dot(&self, name: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "digraph \"{name}\" {{");
        let _ = writeln!(s, "  rankdir=LR;");
        let _ = writeln!(s, "  init [shape=point];");
        for q in 0..self.len() {
            let shape = if self.accepting[q] {
                "doublecircle"
            } else {
                "circle"
            };
            let _ = writeln!(s, "  q{q} [label=\"{}\", shape={shape}];", self.state_names[q]);
        }
        let _ = writeln!(s, "  init -> q{};", self.initial);
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  q{} -> q{} [label=\"{}\"];",
                e.from,
                e.to,
                e.label.render(&self.alphabet)
            );
        }
        s.push_str("}\n");
        s
    }

    /// Keeps the part reachable from the initial state that can still reach
    /// an accepting cycle (the initial state is always kept).
    pub fn pruned(&self) -> Buchi {
        let reach = self.forward_reachable(self.initial);
        let keep: Vec<bool> = (0..self.len())
            .map(|q| q == self.initial || (reach.contains(&q) && self.dist[q] != UNREACHABLE))
            .collect();
        let mut map = vec![usize::MAX; self.len()];
        let mut names = Vec::new();
        let mut acc = Vec::new();
        for q in 0..self.len() {
            if keep[q] {
                map[q] = names.len();
                names.push(self.state_names[q].clone());
                acc.push(self.accepting[q]);
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| keep[e.from] && keep[e.to] && self.dist[e.to] != UNREACHABLE)
            .map(|e| Edge {
                from: map[e.from],
                to: map[e.to],
                label: e.label.clone(),
            })
            .collect();
        Buchi::from_parts(self.alphabet.clone(), names, map[self.initial], edges, acc)
    }

    /// Same automaton with a different initial state.
    pub fn rooted_at(&self, s: usize) -> Buchi {
        let mut b = self.clone();
        b.initial = s;
        b
    }

    /// Merges states with identical acceptance and identical outgoing
    /// transitions, iterated to a fixpoint.
    pub fn merge_equivalent(&self) -> Buchi {
        let n = self.len();
        let mut class: Vec<usize> = (0..n).map(|q| self.accepting[q] as usize).collect();
        loop {
            let mut sigs: BTreeMap<(usize, Vec<(Label, usize)>), usize> = BTreeMap::new();
            let mut next = vec![0; n];
            for q in 0..n {
                let mut rows: Vec<(Label, usize)> = self.out[q]
                    .iter()
                    .map(|&e| (self.edges[e].label.clone(), class[self.edges[e].to]))
                    .collect();
                rows.sort();
                rows.dedup();
                let k = sigs.len();
                next[q] = *sigs.entry((class[q], rows)).or_insert(k);
            }
            let stable = sigs.len() == count_distinct(&class);
            class = next;
            if stable {
                break;
            }
        }
        let m = count_distinct(&class);
        let mut names = vec![String::new(); m];
        let mut acc = vec![false; m];
        for q in 0..n {
            if names[class[q]].is_empty() {
                names[class[q]] = self.state_names[q].clone();
            }
            acc[class[q]] = self.accepting[q];
        }
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .map(|e| Edge {
                from: class[e.from],
                to: class[e.to],
                label: e.label.clone(),
            })
            .collect();
        edges.sort_by(|a, b| (a.from, &a.label, a.to).cmp(&(b.from, &b.label, b.to)));
        edges.dedup();
        Buchi::from_parts(self.alphabet.clone(), names, class[self.initial], edges, acc)
    }
}

fn count_distinct(v: &[usize]) -> usize {
    v.iter().collect::<BTreeSet<_>>().len()
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Marks the vertices lying on some cycle (including self-loops).
fn on_cycle(adj: &[Vec<usize>]) -> Vec<bool> {
    let n = adj.len();
    let comp = scc(adj);
    let mut size = vec![0usize; n];
    for &c in &comp {
        size[c] += 1;
    }
    (0..n)
        .map(|v| size[comp[v]] > 1 || adj[v].contains(&v))
        .collect()
}

/// Strongly connected components (iterative Tarjan); returns a component
/// id per vertex.
fn scc(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![usize::MAX; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut next_comp = 0;
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        call.push((root, 0));
        while let Some(&mut (v, ref mut k)) = call.last_mut() {
            if *k == 0 && index[v] == usize::MAX {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if *k < adj[v].len() {
                let w = adj[v][*k];
                *k += 1;
                if index[w] == usize::MAX {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp[w] = next_comp;
                    if w == v {
                        break;
                    }
                }
                next_comp += 1;
            }
        }
    }
    comp
}

// ---- translation ----

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    True,
    False,
    Lit(u32, bool),
    And(u32, u32),
    Or(u32, u32),
    Next(u32),
    Until(u32, u32),
    Release(u32, u32),
}

#[derive(Default)]
struct Arena {
    nodes: Vec<Node>,
    ids: BTreeMap<Node, u32>,
}

impl Arena {
    fn intern(&mut self, n: Node) -> u32 {
        if let Some(&id) = self.ids.get(&n) {
            return id;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(n.clone());
        self.ids.insert(n, id);
        id
    }

    fn tt(&mut self) -> u32 {
        self.intern(Node::True)
    }

    fn ff(&mut self) -> u32 {
        self.intern(Node::False)
    }

    fn and(&mut self, a: u32, b: u32) -> u32 {
        match (&self.nodes[a as usize], &self.nodes[b as usize]) {
            (Node::False, _) | (_, Node::False) => self.ff(),
            (Node::True, _) => b,
            (_, Node::True) => a,
            _ if a == b => a,
            _ => self.intern(Node::And(a.min(b), a.max(b))),
        }
    }

    fn or(&mut self, a: u32, b: u32) -> u32 {
        match (&self.nodes[a as usize], &self.nodes[b as usize]) {
            (Node::True, _) | (_, Node::True) => self.tt(),
            (Node::False, _) => b,
            (_, Node::False) => a,
            _ if a == b => a,
            _ => self.intern(Node::Or(a.min(b), a.max(b))),
        }
    }

    fn next(&mut self, a: u32) -> u32 {
        match self.nodes[a as usize] {
            Node::True | Node::False => a,
            _ => self.intern(Node::Next(a)),
        }
    }

    fn until(&mut self, a: u32, b: u32) -> u32 {
        match self.nodes[b as usize] {
            Node::True | Node::False => b,
            _ if matches!(self.nodes[a as usize], Node::False) => b,
            _ => self.intern(Node::Until(a, b)),
        }
    }

    fn release(&mut self, a: u32, b: u32) -> u32 {
        match self.nodes[b as usize] {
            Node::True | Node::False => b,
            _ if matches!(self.nodes[a as usize], Node::True) => b,
            _ => self.intern(Node::Release(a, b)),
        }
    }

    /// Negation normal form of `g` (negated when `neg`).
    fn nnf(&mut self, g: &Ltl, neg: bool, props: &BTreeMap<&str, u32>) -> u32 {
        match g {
            Ltl::True => {
                if neg {
                    self.ff()
                } else {
                    self.tt()
                }
            }
            Ltl::False => {
                if neg {
                    self.tt()
                } else {
                    self.ff()
                }
            }
            Ltl::Prop(p) => self.intern(Node::Lit(props[p.as_str()], !neg)),
            Ltl::Not(a) => self.nnf(a, !neg, props),
            Ltl::And(a, b) | Ltl::Or(a, b) => {
                let x = self.nnf(a, neg, props);
                let y = self.nnf(b, neg, props);
                if matches!(g, Ltl::And(..)) != neg {
                    self.and(x, y)
                } else {
                    self.or(x, y)
                }
            }
            Ltl::Next(a) => {
                let x = self.nnf(a, neg, props);
                self.next(x)
            }
            Ltl::Until(a, b) | Ltl::Release(a, b) => {
                let x = self.nnf(a, neg, props);
                let y = self.nnf(b, neg, props);
                if matches!(g, Ltl::Until(..)) != neg {
                    self.until(x, y)
                } else {
                    self.release(x, y)
                }
            }
            Ltl::Eventually(a) | Ltl::Always(a) => {
                let x = self.nnf(a, neg, props);
                if matches!(g, Ltl::Eventually(..)) != neg {
                    let t = self.tt();
                    self.until(t, x)
                } else {
                    let f = self.ff();
                    self.release(f, x)
                }
            }
        }
    }
}

#[derive(Clone, Default)]
struct Branch {
    pos: BTreeSet<u32>,
    neg: BTreeSet<u32>,
    next: BTreeSet<u32>,
    postponed: BTreeSet<u32>,
    done: BTreeSet<u32>,
}

fn expand(arena: &Arena, mut todo: Vec<u32>, mut br: Branch, out: &mut Vec<Branch>) {
    while let Some(f) = todo.pop() {
        if !br.done.insert(f) {
            continue;
        }
        match arena.nodes[f as usize] {
            Node::True => {}
            Node::False => return,
            Node::Lit(p, true) => {
                if br.neg.contains(&p) {
                    return;
                }
                br.pos.insert(p);
            }
            Node::Lit(p, false) => {
                if br.pos.contains(&p) {
                    return;
                }
                br.neg.insert(p);
            }
            Node::And(a, b) => {
                todo.push(a);
                todo.push(b);
            }
            Node::Next(a) => {
                br.next.insert(a);
            }
            Node::Or(a, b) => {
                let mut t1 = todo.clone();
                t1.push(a);
                expand(arena, t1, br.clone(), out);
                todo.push(b);
            }
            Node::Until(a, b) => {
                let mut t1 = todo.clone();
                t1.push(b);
                expand(arena, t1, br.clone(), out);
                todo.push(a);
                br.next.insert(f);
                br.postponed.insert(f);
            }
            Node::Release(a, b) => {
                let mut t1 = todo.clone();
                t1.push(a);
                t1.push(b);
                expand(arena, t1, br.clone(), out);
                todo.push(b);
                br.next.insert(f);
            }
        }
    }
    out.push(br);
}

/// Options for [`ltl_to_buchi_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TranslateOptions {
    /// Merge states with identical outgoing behaviour after construction.
    pub merge_equivalent: bool,
}

/// Translates `g` over its own propositions.
pub fn ltl_to_buchi(g: &Ltl) -> Buchi {
    let alphabet: Vec<String> = g.props().into_iter().collect();
    ltl_to_buchi_with(g, &alphabet, TranslateOptions::default())
}

/// Translates `g` over a declared alphabet, which must contain every
/// proposition of `g`.
pub fn ltl_to_buchi_with(g: &Ltl, alphabet: &[String], opts: TranslateOptions) -> Buchi {
    let mut alphabet: Vec<String> = alphabet.to_vec();
    alphabet.extend(g.props());
    alphabet.sort();
    alphabet.dedup();
    let props: BTreeMap<&str, u32> = alphabet
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), i as u32))
        .collect();
    let mut arena = Arena::default();
    let root = arena.nnf(g, false, &props);

    // Acceptance sets: one per until subformula.
    let untils: Vec<u32> = (0..arena.nodes.len() as u32)
        .filter(|&i| matches!(arena.nodes[i as usize], Node::Until(..)))
        .collect();
    let k = untils.len();

    // Generalized automaton over next-sets.
    let tt = arena.tt();
    let init: BTreeSet<u32> = [root].into_iter().filter(|&f| f != tt).collect();
    let mut states: Vec<BTreeSet<u32>> = vec![init.clone()];
    let mut ids: BTreeMap<BTreeSet<u32>, usize> = BTreeMap::from([(init, 0)]);
    // (from, label, to, acceptance sets)
    let mut gedges: Vec<(usize, Label, usize, Vec<usize>)> = Vec::new();
    let mut i = 0;
    while i < states.len() {
        let mut branches = Vec::new();
        expand(&arena, states[i].iter().copied().collect(), Branch::default(), &mut branches);
        let mut local: Vec<(Label, usize, Vec<usize>)> = Vec::new();
        for br in branches {
            let mut next = br.next.clone();
            next.remove(&tt);
            let to = match ids.get(&next) {
                Some(&t) => t,
                None => {
                    let t = states.len();
                    states.push(next.clone());
                    ids.insert(next, t);
                    t
                }
            };
            let label = Label {
                pos: br.pos.into_iter().collect(),
                neg: br.neg.into_iter().collect(),
            };
            let acc: Vec<usize> = (0..k).filter(|&j| !br.postponed.contains(&untils[j])).collect();
            local.push((label, to, acc));
        }
        // Drop transitions dominated by a weaker label with more acceptance.
        let mut keep = vec![true; local.len()];
        for a in 0..local.len() {
            for b in 0..local.len() {
                if a == b || !keep[a] || !keep[b] {
                    continue;
                }
                let (la, ta, aa) = &local[a];
                let (lb, tb, ab) = &local[b];
                if ta == tb && la.subsumes(lb) && ab.iter().all(|x| aa.contains(x)) {
                    if la == lb && aa.len() == ab.len() && b < a {
                        continue;
                    }
                    keep[b] = false;
                }
            }
        }
        for (j, (label, to, acc)) in local.into_iter().enumerate() {
            if keep[j] {
                gedges.push((i, label, to, acc));
            }
        }
        i += 1;
    }

    // Degeneralize: state (q, level), level k is accepting.
    let gn = states.len();
    let mut out_by_state: Vec<Vec<usize>> = vec![Vec::new(); gn];
    for (j, e) in gedges.iter().enumerate() {
        out_by_state[e.0].push(j);
    }
    let mut map: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut edges = Vec::new();
    let start = (0usize, 0usize);
    map.insert(start, 0);
    order.push(start);
    let mut head = 0;
    while head < order.len() {
        let (q, lvl) = order[head];
        let from = head;
        head += 1;
        for &j in &out_by_state[q] {
            let (_, label, to, acc) = &gedges[j];
            let mut nl = if k == 0 || lvl == k { 0 } else { lvl };
            while nl < k && acc.contains(&nl) {
                nl += 1;
            }
            let key = (*to, nl);
            let t = match map.get(&key) {
                Some(&t) => t,
                None => {
                    let t = order.len();
                    map.insert(key, t);
                    order.push(key);
                    t
                }
            };
            edges.push(Edge {
                from,
                to: t,
                label: label.clone(),
            });
        }
    }
    let names: Vec<String> = order.iter().map(|(q, l)| format!("q{q}.{l}")).collect();
    let accepting: Vec<bool> = order.iter().map(|&(_, l)| l == k).collect();
    let b = Buchi::from_parts(alphabet, names, 0, edges, accepting).pruned();
    if opts.merge_equivalent {
        b.merge_equivalent()
    } else {
        b
    }
}

/// Synchronous product accepting the intersection of both languages, rooted
/// at `(s1, s2)` with the counter at 0. The alphabet is the union of both
/// alphabets; each side only constrains its own propositions.
pub fn intersect(b1: &Buchi, b2: &Buchi, s1: usize, s2: usize) -> Buchi {
    let mut alphabet: Vec<String> = b1.alphabet.iter().chain(&b2.alphabet).cloned().collect();
    alphabet.sort();
    alphabet.dedup();
    let pos_of = |p: &String| alphabet.binary_search(p).unwrap() as u32;
    let m1: Vec<u32> = b1.alphabet.iter().map(pos_of).collect();
    let m2: Vec<u32> = b2.alphabet.iter().map(pos_of).collect();
    let l1: Vec<Label> = b1.edges.iter().map(|e| e.label.remap(&m1)).collect();
    let l2: Vec<Label> = b2.edges.iter().map(|e| e.label.remap(&m2)).collect();

    let mut map: BTreeMap<(usize, usize, u8), usize> = BTreeMap::new();
    let mut order = vec![(s1, s2, 0u8)];
    map.insert((s1, s2, 0), 0);
    let mut edges = Vec::new();
    let mut head = 0;
    while head < order.len() {
        let (g, q, i) = order[head];
        let from = head;
        head += 1;
        for &e1 in &b1.out[g] {
            for &e2 in &b2.out[q] {
                let Some(label) = l1[e1].conjoin(&l2[e2]) else {
                    continue;
                };
                let g2 = b1.edges[e1].to;
                let q2 = b2.edges[e2].to;
                let j = match i {
                    0 if b1.accepting[g2] => 1,
                    1 if b2.accepting[q2] => 2,
                    2 => 0,
                    i => i,
                };
                let key = (g2, q2, j);
                let t = match map.get(&key) {
                    Some(&t) => t,
                    None => {
                        let t = order.len();
                        map.insert(key, t);
                        order.push(key);
                        t
                    }
                };
                edges.push(Edge { from, to: t, label });
            }
        }
    }
    let names = order
        .iter()
        .map(|&(g, q, i)| format!("({},{},{i})", b1.state_names[g], b2.state_names[q]))
        .collect();
    let accepting = order.iter().map(|&(_, _, i)| i == 2).collect();
    Buchi::from_parts(alphabet, names, 0, edges, accepting).pruned()
}

/// Membership oracle: whether `b` accepts the lasso word.
pub fn accepts_lasso(b: &Buchi, w: &LassoWord) -> bool {
    b.accepts_lasso(w)
}
