//! Runtime modification commands.
//!
//! ```text
//! add-conj <spec>
//! add-disj <spec>
//! set-bounds @<selector> [a,b]
//! set-pred @<selector> <predicate>
//! set-pred <predicate> := <predicate>
//! set-pred <expr> := <expr>
//! replace <spec>
//! ```

use alloc::{format, string::String};
use core::fmt;

use thiserror::Error;

use super::expr::{Expr, Predicate};
use super::parse::{parse_expr, parse_predicate};
use super::print::print_spec;
use super::{parse_document, AliasTable, Bounds, ParseError, Schema, Selector, SpecFormula};

#[derive(Clone, Debug, PartialEq)]
pub enum PredicatePattern {
    /// Replace the predicate leaf at a selector.
    At(Selector, Predicate),
    /// Replace every occurrence of one predicate by another.
    Predicate(Predicate, Predicate),
    /// Replace every occurrence of a subexpression inside predicates.
    Expr(Expr, Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModificationCommand {
    AddConj(SpecFormula),
    AddDisj(SpecFormula),
    SetBounds(Selector, Bounds),
    SetPredicate(PredicatePattern),
    ReplaceFull(SpecFormula),
}

impl ModificationCommand {
    pub fn kind(&self) -> &'static str {
        match self {
            ModificationCommand::AddConj(_) => "add-conj",
            ModificationCommand::AddDisj(_) => "add-disj",
            ModificationCommand::SetBounds(..) => "set-bounds",
            ModificationCommand::SetPredicate(_) => "set-pred",
            ModificationCommand::ReplaceFull(_) => "replace",
        }
    }
}

impl fmt::Display for ModificationCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModificationCommand::AddConj(s) => write!(f, "add-conj {}", print_spec(s)),
            ModificationCommand::AddDisj(s) => write!(f, "add-disj {}", print_spec(s)),
            ModificationCommand::SetBounds(sel, b) => write!(f, "set-bounds {sel} {b}"),
            ModificationCommand::SetPredicate(PredicatePattern::At(sel, mu)) => {
                write!(f, "set-pred {sel} {mu}")
            }
            ModificationCommand::SetPredicate(PredicatePattern::Predicate(a, b)) => {
                write!(f, "set-pred {a} := {b}")
            }
            ModificationCommand::SetPredicate(PredicatePattern::Expr(a, b)) => {
                write!(f, "set-pred {a} := {b}")
            }
            ModificationCommand::ReplaceFull(s) => write!(f, "replace {}", print_spec(s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CommandError {
    #[error("unknown command `{0}`; expected add-conj, add-disj, set-bounds, set-pred or replace")]
    UnknownCommand(String),
    #[error("malformed selector `{0}`")]
    BadSelector(String),
    #[error("{0}")]
    Malformed(String),
    #[error("{0}")]
    Parse(#[from] ParseError),
}

/// Parses a one-line modification command. Names are resolved against the
/// aliases of the running specification.
pub fn parse_modification(
    text: &str,
    aliases: &AliasTable,
    schema: Option<&Schema>,
) -> Result<ModificationCommand, CommandError> {
    let text = text.trim();
    let (head, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], text[i..].trim()),
        None => (text, ""),
    };
    let spec = |body: &str| -> Result<SpecFormula, CommandError> {
        Ok(parse_document(body, schema, aliases)?.formula)
    };
    match head {
        "add-conj" => Ok(ModificationCommand::AddConj(spec(rest)?)),
        "add-disj" => Ok(ModificationCommand::AddDisj(spec(rest)?)),
        "replace" => Ok(ModificationCommand::ReplaceFull(spec(rest)?)),
        "set-bounds" => {
            let (sel, b) = split_selector(rest)?;
            let b = parse_bounds(b)?;
            Ok(ModificationCommand::SetBounds(sel, b))
        }
        "set-pred" => {
            if rest.starts_with('@') {
                let (sel, mu) = split_selector(rest)?;
                let mu = parse_predicate(mu, aliases, schema)?;
                return Ok(ModificationCommand::SetPredicate(PredicatePattern::At(sel, mu)));
            }
            let Some((from, to)) = rest.split_once(":=") else {
                return Err(CommandError::Malformed(
                    "set-pred needs `@selector <predicate>` or `<old> := <new>`".into(),
                ));
            };
            if let Ok(a) = parse_predicate(from, aliases, schema) {
                let b = parse_predicate(to, aliases, schema)?;
                return Ok(ModificationCommand::SetPredicate(PredicatePattern::Predicate(a, b)));
            }
            let a = parse_expr(from, aliases, schema)?;
            let b = parse_expr(to, aliases, schema)?;
            match (a.ty(), b.ty()) {
                (Ok(x), Ok(y)) if x == y => {}
                _ => {
                    return Err(CommandError::Malformed(format!(
                        "`{a}` and `{b}` have different types"
                    )))
                }
            }
            Ok(ModificationCommand::SetPredicate(PredicatePattern::Expr(a, b)))
        }
        other => Err(CommandError::UnknownCommand(other.into())),
    }
}

fn split_selector(rest: &str) -> Result<(Selector, &str), CommandError> {
    let (word, tail) = match rest.find(char::is_whitespace) {
        Some(i) => (&rest[..i], rest[i..].trim()),
        None => (rest, ""),
    };
    let sel = Selector::parse(word).ok_or_else(|| CommandError::BadSelector(word.into()))?;
    Ok((sel, tail))
}

fn parse_bounds(text: &str) -> Result<Bounds, CommandError> {
    let bad = || CommandError::Malformed(format!("expected bounds `[a,b]`, found `{text}`"));
    let inner = text
        .trim()
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(bad)?;
    let (a, b) = inner.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b = match b.trim() {
        "inf" => f64::INFINITY,
        s => s.parse().map_err(|_| bad())?,
    };
    Bounds::new(a, b).map_err(|e| CommandError::Malformed(format!("{e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_document;

    fn collect_aliases() -> AliasTable {
        parse_document(
            "let d_obj = norm2(robot.xy - obj1.xy)\nlet d_obj2 = norm2(robot.xy - obj2.xy)\nF[0,1](d_obj < 1)",
            None,
            &AliasTable::new(),
        )
        .unwrap()
        .aliases
    }

    #[test]
    fn set_bounds() {
        let c = parse_modification("set-bounds @0.1 [0,45]", &AliasTable::new(), None).unwrap();
        assert_eq!(
            c,
            ModificationCommand::SetBounds(Selector(alloc::vec![0, 1]), Bounds::new(0.0, 45.0).unwrap())
        );
        assert_eq!(format!("{c}"), "set-bounds @0.1 [0,45]");
        assert!(parse_modification("set-bounds @0.1 [45,0]", &AliasTable::new(), None).is_err());
    }

    #[test]
    fn set_pred_patterns() {
        let a = collect_aliases();
        let c = parse_modification("set-pred d_obj := d_obj2", &a, None).unwrap();
        let ModificationCommand::SetPredicate(PredicatePattern::Expr(from, to)) = c else {
            panic!()
        };
        assert!(matches!(from, Expr::Alias { ref name, .. } if name == "d_obj"));
        assert!(matches!(to, Expr::Alias { ref name, .. } if name == "d_obj2"));
        let c = parse_modification("set-pred robot.d < 0.2 := robot.d < 0.05", &a, None).unwrap();
        assert!(matches!(c, ModificationCommand::SetPredicate(PredicatePattern::Predicate(..))));
        let c = parse_modification("set-pred @0.1.0 robot.x < 2", &a, None).unwrap();
        assert!(matches!(c, ModificationCommand::SetPredicate(PredicatePattern::At(..))));
        assert!(parse_modification("set-pred robot.xy := robot.x", &a, None).is_err());
    }

    #[test]
    fn add_conj_cones() {
        let c = parse_modification(
            "add-conj G[0,100](norm2(robot.xy - cone1.xy) > 0.3 & norm2(robot.xy - cone2.xy) > 0.3)",
            &AliasTable::new(),
            None,
        )
        .unwrap();
        let ModificationCommand::AddConj(SpecFormula::Always { bounds, .. }) = c else {
            panic!()
        };
        assert_eq!(bounds.hi, 100.0);
    }

    #[test]
    fn unknown_command() {
        assert!(matches!(
            parse_modification("remove @0", &AliasTable::new(), None),
            Err(CommandError::UnknownCommand(_))
        ));
    }
}
