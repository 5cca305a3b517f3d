//! Canonical text form of specifications.

use alloc::{string::String, vec::Vec};
use core::fmt::Write;

use super::expr::Expr;
use super::{AliasTable, EventFormula, SpecFormula, StateFormula};

/// Prints a formula in canonical form. Aliases print by name; use
/// [`print_document`] to include their declarations.
pub fn print_spec(f: &SpecFormula) -> String {
    let mut out = String::new();
    spec(&mut out, f);
    out
}

/// Prints the `let` declarations the formula depends on, in dependency
/// order, followed by the formula.
pub fn print_document(f: &SpecFormula) -> String {
    let mut used: Vec<(&str, &Expr)> = Vec::new();
    for mu in f.predicates() {
        mu.lhs.aliases(&mut used);
        mu.rhs.aliases(&mut used);
    }
    let mut out = String::new();
    for (name, body) in used {
        let _ = writeln!(out, "let {name} = {body}");
    }
    spec(&mut out, f);
    out
}

/// Aliases used by a formula, as a table.
pub fn used_aliases(f: &SpecFormula) -> AliasTable {
    let mut used: Vec<(&str, &Expr)> = Vec::new();
    for mu in f.predicates() {
        mu.lhs.aliases(&mut used);
        mu.rhs.aliases(&mut used);
    }
    let mut t = AliasTable::new();
    for (n, b) in used {
        t.insert(n, b.clone());
    }
    t
}

fn spec(out: &mut String, f: &SpecFormula) {
    match f {
        SpecFormula::Always { bounds, body } => {
            let _ = write!(out, "G{bounds}(");
            state(out, body);
            out.push(')');
        }
        SpecFormula::Eventually { bounds, body } => {
            let _ = write!(out, "F{bounds}(");
            state(out, body);
            out.push(')');
        }
        SpecFormula::Until {
            bounds,
            hold,
            reach,
        } => {
            out.push('(');
            state(out, hold);
            let _ = write!(out, ") U{bounds} (");
            state(out, reach);
            out.push(')');
        }
        SpecFormula::Trigger { guard, body } => {
            out.push_str("G(");
            event(out, guard);
            out.push_str(" => ");
            spec(out, body);
            out.push(')');
        }
        SpecFormula::And(v) | SpecFormula::Or(v) => {
            let sep = if matches!(f, SpecFormula::And(_)) {
                " & "
            } else {
                " | "
            };
            for (i, c) in v.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                out.push('(');
                spec(out, c);
                out.push(')');
            }
        }
    }
}

fn state(out: &mut String, s: &StateFormula) {
    match s {
        StateFormula::Pred(mu) => {
            let _ = write!(out, "{mu}");
        }
        StateFormula::Not(mu) => {
            let _ = write!(out, "!({mu})");
        }
        StateFormula::And(v) | StateFormula::Or(v) => {
            let sep = if matches!(s, StateFormula::And(_)) {
                " & "
            } else {
                " | "
            };
            for (i, c) in v.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                let compound = matches!(c, StateFormula::And(_) | StateFormula::Or(_));
                if compound {
                    out.push('(');
                }
                state(out, c);
                if compound {
                    out.push(')');
                }
            }
        }
    }
}

fn event(out: &mut String, e: &EventFormula) {
    match e {
        EventFormula::Atom(a) => out.push_str(a),
        EventFormula::Pred(mu) => {
            let _ = write!(out, "{mu}");
        }
        EventFormula::Not(a) => {
            out.push('!');
            match &**a {
                EventFormula::Atom(name) => out.push_str(name),
                EventFormula::Not(_) => event(out, a),
                _ => {
                    out.push('(');
                    event(out, a);
                    out.push(')');
                }
            }
        }
        EventFormula::And(v) => {
            for (i, c) in v.iter().enumerate() {
                if i > 0 {
                    out.push_str(" & ");
                }
                let compound = matches!(c, EventFormula::And(_));
                if compound {
                    out.push('(');
                }
                event(out, c);
                if compound {
                    out.push(')');
                }
            }
        }
    }
}
