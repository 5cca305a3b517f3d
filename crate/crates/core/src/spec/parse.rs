//! Recursive-descent parser for specifications and predicates.
//!
//! Alternatives are tried with backtracking; when every alternative fails the
//! error reported is the one that got furthest into the input.

use alloc::{boxed::Box, string::String, vec::Vec};
use core::f64::consts::PI;
use core::fmt;

use super::expr::{BinOp, EntityField, Expr, Func, Predicate, Relation, RobotField, Ty};
use super::{Bounds, BoundsError, EventFormula, SpecFormula, StateFormula};

/// Declared world vocabulary. Names are checked only when a schema is given.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Schema {
    pub entities: Vec<String>,
    pub events: Vec<String>,
}

/// Named expressions from `let` declarations, in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AliasTable(Vec<(String, Expr)>);

impl AliasTable {
    pub fn new() -> Self {
        AliasTable(Vec::new())
    }

    /// The alias as an expression node, ready to embed in a tree.
    pub fn get(&self, name: &str) -> Option<Expr> {
        self.0.iter().find(|(n, _)| n == name).map(|(n, b)| Expr::Alias {
            name: n.clone(),
            body: Box::new(b.clone()),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.iter().any(|(n, _)| n == name)
    }

    pub fn insert(&mut self, name: &str, body: Expr) {
        match self.0.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = body,
            None => self.0.push((name.into(), body)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Expr)> {
        self.0.iter().map(|(n, b)| (n.as_str(), b))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Adds every entry of `other` not already present.
    pub fn merge(&mut self, other: &AliasTable) {
        for (n, b) in other.iter() {
            if !self.contains(n) {
                self.0.push((n.into(), b.clone()));
            }
        }
    }
}

/// A parsed specification file: its `let` declarations and the formula.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecDocument {
    pub aliases: AliasTable,
    pub formula: SpecFormula,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParseErrorKind {
    Syntax(String),
    BoundsReversed { lo: f64, hi: f64 },
    InvalidBounds,
    UnknownVariable(String),
    UnknownEvent(String),
    TypeMismatch(String),
    DuplicateDefinition(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: ", self.line, self.col)?;
        match &self.kind {
            ParseErrorKind::Syntax(m) => f.write_str(m),
            ParseErrorKind::BoundsReversed { lo, hi } => {
                write!(f, "reversed bounds [{lo},{hi}]: lower bound exceeds upper bound")
            }
            ParseErrorKind::InvalidBounds => f.write_str("bounds must be finite and non-negative"),
            ParseErrorKind::UnknownVariable(n) => write!(f, "unknown variable `{n}`"),
            ParseErrorKind::UnknownEvent(n) => write!(f, "unknown event `{n}`"),
            ParseErrorKind::TypeMismatch(m) => write!(f, "type mismatch: {m}"),
            ParseErrorKind::DuplicateDefinition(n) => write!(f, "`{n}` is already defined"),
        }
    }
}

impl core::error::Error for ParseError {}

impl ParseError {
    /// Preference among errors reported at the same position.
    fn rank(&self) -> u8 {
        match self.kind {
            ParseErrorKind::Syntax(_) => 0,
            ParseErrorKind::UnknownVariable(_) => 1,
            ParseErrorKind::UnknownEvent(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Amp,
    Bar,
    Bang,
    Arrow,
    Lt,
    Gt,
    Plus,
    Minus,
    Star,
    Slash,
    Dot,
    Eq,
    Semi,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => alloc::format!("`{s}`"),
            Tok::Num(v) => alloc::format!("number {v}"),
            Tok::Eof => "end of input".into(),
            t => alloc::format!("`{}`", t.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrack => "[",
            Tok::RBrack => "]",
            Tok::Comma => ",",
            Tok::Amp => "&",
            Tok::Bar => "|",
            Tok::Bang => "!",
            Tok::Arrow => "=>",
            Tok::Lt => "<",
            Tok::Gt => ">",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Dot => ".",
            Tok::Eq => "=",
            Tok::Semi => ";",
            _ => "",
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line: l0, col: c0 });
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            push(&mut out, Tok::Ident(s));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            let v = s.parse::<f64>().map_err(|_| ParseError {
                line: l0,
                col: c0,
                kind: ParseErrorKind::Syntax(alloc::format!("malformed number `{s}`")),
            })?;
            push(&mut out, Tok::Num(v));
            continue;
        }
        let two = if i + 1 < chars.len() {
            Some((c, chars[i + 1]))
        } else {
            None
        };
        if two == Some(('=', '>')) {
            push(&mut out, Tok::Arrow);
            i += 2;
            col += 2;
            continue;
        }
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBrack,
            ']' => Tok::RBrack,
            ',' => Tok::Comma,
            '&' => Tok::Amp,
            '|' => Tok::Bar,
            '!' => Tok::Bang,
            '<' => Tok::Lt,
            '>' => Tok::Gt,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '.' => Tok::Dot,
            '=' => Tok::Eq,
            ';' => Tok::Semi,
            _ => {
                return Err(ParseError {
                    line: l0,
                    col: c0,
                    kind: ParseErrorKind::Syntax(alloc::format!("unexpected character `{c}`")),
                })
            }
        };
        push(&mut out, tok);
        i += 1;
        col += 1;
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

const KEYWORDS: &[&str] = &["G", "F", "U", "let", "robot", "pi", "inf"];

enum Fail {
    /// Recoverable: another alternative may still succeed.
    Soft,
    Fatal(ParseError),
}

type PResult<T> = Result<T, Fail>;

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    aliases: AliasTable,
    schema: Option<&'a Schema>,
    furthest: Option<(usize, ParseError)>,
}

impl<'a> Parser<'a> {
    fn new(text: &str, aliases: AliasTable, schema: Option<&'a Schema>) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: lex(text)?,
            pos: 0,
            aliases,
            schema,
            furthest: None,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, pos: usize, kind: ParseErrorKind) -> ParseError {
        let t = &self.toks[pos];
        ParseError {
            line: t.line,
            col: t.col,
            kind,
        }
    }

    fn record(&mut self, pos: usize, kind: ParseErrorKind) -> Fail {
        let err = self.error_at(pos, kind);
        let replace = match &self.furthest {
            None => true,
            Some((p, old)) => pos > *p || (pos == *p && err.rank() >= old.rank()),
        };
        if replace {
            self.furthest = Some((pos, err));
        }
        Fail::Soft
    }

    fn fail_expected(&mut self, what: &str) -> Fail {
        let msg = alloc::format!("expected {what}, found {}", self.peek().describe());
        self.record(self.pos, ParseErrorKind::Syntax(msg))
    }

    fn fatal(&self, pos: usize, kind: ParseErrorKind) -> Fail {
        Fail::Fatal(self.error_at(pos, kind))
    }

    fn expect(&mut self, t: Tok) -> PResult<()> {
        if *self.peek() == t {
            self.bump();
            Ok(())
        } else {
            Err(self.fail_expected(&alloc::format!("`{}`", t.symbol())))
        }
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn is_ident(&self, name: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == name)
    }

    /// Runs `f`, rewinding on a recoverable failure.
    fn attempt<T>(&mut self, f: impl FnOnce(&mut Self) -> PResult<T>) -> PResult<Option<T>> {
        let save = self.pos;
        match f(self) {
            Ok(v) => Ok(Some(v)),
            Err(Fail::Soft) => {
                self.pos = save;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn finish<T>(&mut self, r: PResult<T>) -> Result<T, ParseError> {
        match r {
            Ok(v) => Ok(v),
            Err(Fail::Fatal(e)) => Err(e),
            Err(Fail::Soft) => Err(self
                .furthest
                .take()
                .map(|(_, e)| e)
                .unwrap_or_else(|| self.error_at(self.pos, ParseErrorKind::Syntax("parse failed".into())))),
        }
    }

    // ---- documents ----

    fn document(&mut self) -> PResult<SpecFormula> {
        self.lets()?;
        let f = self.spec()?;
        self.eat(&Tok::Semi);
        if *self.peek() != Tok::Eof {
            return Err(self.fail_expected("end of input"));
        }
        Ok(f)
    }

    fn lets(&mut self) -> PResult<()> {
        while self.is_ident("let") {
            self.bump();
            let at = self.pos;
            let name = match self.bump() {
                Tok::Ident(n) if !KEYWORDS.contains(&n.as_str()) && Func::from_name(&n).is_none() => n,
                _ => {
                    self.pos = at;
                    return Err(self.fail_expected("a name"));
                }
            };
            if self.aliases.contains(&name) {
                return Err(self.fatal(at, ParseErrorKind::DuplicateDefinition(name)));
            }
            self.expect(Tok::Eq)?;
            let body_at = self.pos;
            let body = self.expr()?;
            if let Err(e) = body.ty() {
                return Err(self.fatal(body_at, ParseErrorKind::TypeMismatch(alloc::format!("{e}"))));
            }
            self.aliases.insert(&name, body);
            self.eat(&Tok::Semi);
        }
        Ok(())
    }

    // ---- specification level ----

    fn spec(&mut self) -> PResult<SpecFormula> {
        let mut parts = alloc::vec![self.spec_and()?];
        while self.eat(&Tok::Bar) {
            parts.push(self.spec_and()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            SpecFormula::Or(parts)
        })
    }

    fn spec_and(&mut self) -> PResult<SpecFormula> {
        let mut parts = alloc::vec![self.spec_atom()?];
        while self.eat(&Tok::Amp) {
            parts.push(self.spec_atom()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            SpecFormula::And(parts)
        })
    }

    fn spec_atom(&mut self) -> PResult<SpecFormula> {
        if self.is_ident("G") {
            self.bump();
            if *self.peek() == Tok::LBrack {
                let bounds = self.bounds()?;
                let body = self.paren_state()?;
                return Ok(SpecFormula::Always { bounds, body });
            }
            self.expect(Tok::LParen)?;
            let trig = self.attempt(|p| {
                let guard = p.event_and()?;
                p.expect(Tok::Arrow)?;
                let body = p.spec()?;
                p.expect(Tok::RParen)?;
                Ok(SpecFormula::Trigger {
                    guard,
                    body: Box::new(body),
                })
            })?;
            if let Some(t) = trig {
                return Ok(t);
            }
            let body = self.state()?;
            self.expect(Tok::RParen)?;
            return Ok(SpecFormula::Always {
                bounds: Bounds::UNBOUNDED,
                body,
            });
        }
        if self.is_ident("F") {
            self.bump();
            let bounds = if *self.peek() == Tok::LBrack {
                self.bounds()?
            } else {
                Bounds::UNBOUNDED
            };
            let body = self.paren_state()?;
            return Ok(SpecFormula::Eventually { bounds, body });
        }
        if *self.peek() == Tok::LParen {
            let until = self.attempt(|p| {
                let hold = p.paren_state()?;
                if !p.is_ident("U") {
                    return Err(p.fail_expected("`U`"));
                }
                p.bump();
                let bounds = if *p.peek() == Tok::LBrack {
                    p.bounds()?
                } else {
                    Bounds::UNBOUNDED
                };
                let reach = p.paren_state()?;
                Ok(SpecFormula::Until {
                    bounds,
                    hold,
                    reach,
                })
            })?;
            if let Some(u) = until {
                return Ok(u);
            }
            self.bump();
            let inner = self.spec()?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        Err(self.fail_expected("`G`, `F` or `(`"))
    }

    fn bounds(&mut self) -> PResult<Bounds> {
        let at = self.pos;
        self.expect(Tok::LBrack)?;
        let lo = self.bound_number(false)?;
        self.expect(Tok::Comma)?;
        let hi = self.bound_number(true)?;
        self.expect(Tok::RBrack)?;
        Bounds::new(lo, hi).map_err(|e| match e {
            BoundsError::Reversed { lo, hi } => {
                self.fatal(at, ParseErrorKind::BoundsReversed { lo, hi })
            }
            BoundsError::Invalid => self.fatal(at, ParseErrorKind::InvalidBounds),
        })
    }

    fn bound_number(&mut self, allow_inf: bool) -> PResult<f64> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(v)
            }
            Tok::Ident(s) if allow_inf && s == "inf" => {
                self.bump();
                Ok(f64::INFINITY)
            }
            _ => Err(self.fail_expected("a time bound")),
        }
    }

    fn paren_state(&mut self) -> PResult<StateFormula> {
        self.expect(Tok::LParen)?;
        let s = self.state()?;
        self.expect(Tok::RParen)?;
        Ok(s)
    }

    // ---- state formulas ----

    fn state(&mut self) -> PResult<StateFormula> {
        let mut parts = alloc::vec![self.state_and()?];
        while self.eat(&Tok::Bar) {
            parts.push(self.state_and()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            StateFormula::Or(parts)
        })
    }

    fn state_and(&mut self) -> PResult<StateFormula> {
        let mut parts = alloc::vec![self.state_atom()?];
        while self.eat(&Tok::Amp) {
            parts.push(self.state_atom()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            StateFormula::And(parts)
        })
    }

    fn state_atom(&mut self) -> PResult<StateFormula> {
        if self.eat(&Tok::Bang) {
            let wrapped = self.attempt(|p| {
                p.expect(Tok::LParen)?;
                let mu = p.predicate()?;
                p.expect(Tok::RParen)?;
                Ok(mu)
            })?;
            return match wrapped {
                Some(mu) => Ok(StateFormula::Not(mu)),
                None => Ok(StateFormula::Not(self.predicate()?)),
            };
        }
        if *self.peek() == Tok::LParen {
            let inner = self.attempt(|p| {
                p.bump();
                let s = p.state()?;
                p.expect(Tok::RParen)?;
                Ok(s)
            })?;
            if let Some(s) = inner {
                return Ok(s);
            }
        }
        Ok(StateFormula::Pred(self.predicate()?))
    }

    // ---- event formulas ----

    fn event_and(&mut self) -> PResult<EventFormula> {
        let mut parts = alloc::vec![self.event_atom()?];
        while self.eat(&Tok::Amp) {
            parts.push(self.event_atom()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            EventFormula::And(parts)
        })
    }

    fn event_atom(&mut self) -> PResult<EventFormula> {
        if self.eat(&Tok::Bang) {
            return Ok(EventFormula::Not(Box::new(self.event_atom()?)));
        }
        if let Some(mu) = self.attempt(|p| p.predicate())? {
            return Ok(EventFormula::Pred(mu));
        }
        if *self.peek() == Tok::LParen {
            self.bump();
            let inner = self.event_and()?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        let at = self.pos;
        match self.peek().clone() {
            Tok::Ident(name)
                if !KEYWORDS.contains(&name.as_str()) && !self.aliases.contains(&name) =>
            {
                if let Some(schema) = self.schema {
                    if !schema.events.contains(&name) {
                        return Err(self.record(at, ParseErrorKind::UnknownEvent(name)));
                    }
                }
                self.bump();
                Ok(EventFormula::Atom(name))
            }
            _ => Err(self.fail_expected("an event name or predicate")),
        }
    }

    // ---- predicates and expressions ----

    fn predicate(&mut self) -> PResult<Predicate> {
        let at = self.pos;
        let lhs = self.expr()?;
        let rel = match self.peek() {
            Tok::Lt => Relation::Lt,
            Tok::Gt => Relation::Gt,
            _ => return Err(self.fail_expected("`<` or `>`")),
        };
        self.bump();
        let rhs = self.expr()?;
        for side in [&lhs, &rhs] {
            match side.ty() {
                Ok(Ty::Scalar) => {}
                Ok(Ty::Vector) => {
                    return Err(self.fatal(
                        at,
                        ParseErrorKind::TypeMismatch(alloc::format!(
                            "comparison operand `{side}` is a vector"
                        )),
                    ))
                }
                Err(e) => {
                    return Err(self.fatal(at, ParseErrorKind::TypeMismatch(alloc::format!("{e}"))))
                }
            }
        }
        Ok(Predicate::new(lhs, rel, rhs))
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat(&Tok::Minus) {
            if let Tok::Num(v) = *self.peek() {
                self.bump();
                return Ok(Expr::Num(-v));
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let at = self.pos;
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::LBrack => {
                self.bump();
                let a = self.expr()?;
                self.expect(Tok::Comma)?;
                let b = self.expr()?;
                self.expect(Tok::RBrack)?;
                Ok(Expr::vec2(a, b))
            }
            Tok::Ident(name) => {
                if name == "pi" {
                    self.bump();
                    return Ok(Expr::Num(PI));
                }
                if let Some(func) = Func::from_name(&name) {
                    if *self.peek_at(1) == Tok::LParen {
                        self.bump();
                        self.bump();
                        let mut args = alloc::vec![self.expr()?];
                        while self.eat(&Tok::Comma) {
                            args.push(self.expr()?);
                        }
                        self.expect(Tok::RParen)?;
                        if args.len() != func.arity() {
                            return Err(self.fatal(
                                at,
                                ParseErrorKind::Syntax(alloc::format!(
                                    "`{name}` takes {} argument(s)",
                                    func.arity()
                                )),
                            ));
                        }
                        return Ok(Expr::call(func, args));
                    }
                }
                if *self.peek_at(1) == Tok::Dot {
                    self.bump();
                    self.bump();
                    let field_at = self.pos;
                    let field = match self.bump() {
                        Tok::Ident(f) => f,
                        _ => {
                            self.pos = field_at;
                            return Err(self.fail_expected("a field name"));
                        }
                    };
                    if name == "robot" {
                        if field == "xy" {
                            return Ok(Expr::RobotXy);
                        }
                        return RobotField::from_name(&field).map(Expr::Robot).ok_or_else(|| {
                            self.record(
                                field_at,
                                ParseErrorKind::UnknownVariable(alloc::format!("robot.{field}")),
                            )
                        });
                    }
                    let Some(f) = EntityField::from_name(&field) else {
                        return Err(self.record(
                            field_at,
                            ParseErrorKind::UnknownVariable(alloc::format!("{name}.{field}")),
                        ));
                    };
                    if let Some(schema) = self.schema {
                        if !schema.entities.contains(&name) {
                            return Err(self.record(at, ParseErrorKind::UnknownVariable(name)));
                        }
                    }
                    return Ok(Expr::entity(&name, f));
                }
                match self.aliases.get(&name) {
                    Some(e) => {
                        self.bump();
                        Ok(e)
                    }
                    None => Err(self.record(at, ParseErrorKind::UnknownVariable(name))),
                }
            }
            _ => Err(self.fail_expected("an expression")),
        }
    }
}

/// Parses a specification, which may start with `let` declarations.
pub fn parse_spec(text: &str) -> Result<SpecFormula, ParseError> {
    parse_document(text, None, &AliasTable::new()).map(|d| d.formula)
}

/// Parses a specification document against optional schema and aliases
/// already in scope. The returned table holds `base` plus new declarations.
pub fn parse_document(
    text: &str,
    schema: Option<&Schema>,
    base: &AliasTable,
) -> Result<SpecDocument, ParseError> {
    let mut p = Parser::new(text, base.clone(), schema)?;
    let r = p.document();
    let formula = p.finish(r)?;
    Ok(SpecDocument {
        aliases: p.aliases,
        formula,
    })
}

/// Parses a single predicate such as `robot.d < 0.2`.
pub fn parse_predicate(
    text: &str,
    aliases: &AliasTable,
    schema: Option<&Schema>,
) -> Result<Predicate, ParseError> {
    let mut p = Parser::new(text, aliases.clone(), schema)?;
    let r = p.predicate().and_then(|mu| {
        if *p.peek() == Tok::Eof {
            Ok(mu)
        } else {
            Err(p.fail_expected("end of input"))
        }
    });
    p.finish(r)
}

/// Parses a single scalar or vector expression.
pub(crate) fn parse_expr(
    text: &str,
    aliases: &AliasTable,
    schema: Option<&Schema>,
) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text, aliases.clone(), schema)?;
    let r = p.expr().and_then(|e| {
        if *p.peek() == Tok::Eof {
            Ok(e)
        } else {
            Err(p.fail_expected("end of input"))
        }
    });
    p.finish(r)
}
