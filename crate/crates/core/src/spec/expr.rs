//! Predicate expressions and their evaluation.
//!
//! Expressions are typed as either scalars or planar vectors. Evaluation runs
//! in forward mode over the six robot channels, so a single pass yields both
//! the value and the exact gradient with respect to `[x, y, theta, d, z, beta]`.

use alloc::{boxed::Box, string::String, vec::Vec};
use core::f64::consts::PI;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of controlled robot channels.
pub const STATE_DIM: usize = 6;

/// Divisors with magnitude below this are rejected.
pub const DIV_EPS: f64 = 1e-12;

/// Offset applied when a gradient is requested at a non-differentiable point.
pub const NONDIFF_PERTURBATION: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotField {
    X,
    Y,
    Theta,
    D,
    Z,
    Beta,
}

impl RobotField {
    pub const ALL: [RobotField; STATE_DIM] = [
        RobotField::X,
        RobotField::Y,
        RobotField::Theta,
        RobotField::D,
        RobotField::Z,
        RobotField::Beta,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RobotField::X => "x",
            RobotField::Y => "y",
            RobotField::Theta => "theta",
            RobotField::D => "d",
            RobotField::Z => "z",
            RobotField::Beta => "beta",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        RobotField::ALL.iter().copied().find(|f| f.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityField {
    X,
    Y,
    Z,
    Xy,
}

impl EntityField {
    pub fn name(self) -> &'static str {
        match self {
            EntityField::X => "x",
            EntityField::Y => "y",
            EntityField::Z => "z",
            EntityField::Xy => "xy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "x" => Some(EntityField::X),
            "y" => Some(EntityField::Y),
            "z" => Some(EntityField::Z),
            "xy" => Some(EntityField::Xy),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Func {
    Norm2,
    Abs,
    Sin,
    Cos,
    Atan2,
    /// Wraps an angle into `(-pi, pi]`.
    Wrap,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Norm2 => "norm2",
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Atan2 => "atan2",
            Func::Wrap => "wrap",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "norm2" => Some(Func::Norm2),
            "abs" => Some(Func::Abs),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "atan2" => Some(Func::Atan2),
            "wrap" => Some(Func::Wrap),
            _ => None,
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Atan2 => 2,
            _ => 1,
        }
    }
}

/// Static type of an expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ty {
    Scalar,
    Vector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Robot(RobotField),
    /// `robot.xy`
    RobotXy,
    Entity {
        name: String,
        field: EntityField,
    },
    Vec2(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    /// A named expression from a `let` declaration; prints as its name.
    Alias {
        name: String,
        body: Box<Expr>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by a value with magnitude below 1e-12")]
    DivisionByZero,
    #[error("unresolved variable `{0}`")]
    UnresolvedVariable(String),
    #[error("type mismatch in `{0}`")]
    TypeMismatch(String),
    #[error("non-finite value produced")]
    NonFinite,
}

/// Source of variable values for evaluation.
pub trait Env {
    fn robot(&self) -> [f64; STATE_DIM];
    fn entity(&self, name: &str) -> Option<[f64; 3]>;
}

/// Forward-mode dual number over the robot channels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; STATE_DIM],
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual {
            v,
            d: [0.0; STATE_DIM],
        }
    }

    pub fn variable(v: f64, index: usize) -> Self {
        let mut d = [0.0; STATE_DIM];
        d[index] = 1.0;
        Dual { v, d }
    }

    fn map(self, v: f64, slope: f64) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x *= slope;
        }
        Dual { v, d }
    }

    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (x, y) in d.iter_mut().zip(o.d) {
            *x += y;
        }
        Dual { v: self.v + o.v, d }
    }

    fn sub(self, o: Self) -> Self {
        self.add(o.neg())
    }

    fn neg(self) -> Self {
        self.map(-self.v, -1.0)
    }

    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; STATE_DIM];
        for (i, x) in d.iter_mut().enumerate() {
            *x = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }

    fn div(self, o: Self) -> Result<Self, EvalError> {
        if o.v.abs() < DIV_EPS {
            return Err(EvalError::DivisionByZero);
        }
        let mut d = [0.0; STATE_DIM];
        for (i, x) in d.iter_mut().enumerate() {
            *x = (self.d[i] * o.v - self.v * o.d[i]) / (o.v * o.v);
        }
        Ok(Dual { v: self.v / o.v, d })
    }
}

#[derive(Clone, Copy, Debug)]
enum Value {
    S(Dual),
    V(Dual, Dual),
}

/// Side information gathered during a gradient evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalNotes {
    /// Set when `norm2(0)` or `atan2(0, 0)` was hit and the gradient was
    /// taken at a perturbed point instead.
    pub nondifferentiable: bool,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a - two_pi * libm::floor((a + PI) / two_pi);
    // floor maps the interval to [-pi, pi); fold the lower end up.
    if r <= -PI {
        r += two_pi;
    }
    r
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn robot(f: RobotField) -> Self {
        Expr::Robot(f)
    }

    pub fn entity(name: &str, field: EntityField) -> Self {
        Expr::Entity {
            name: name.into(),
            field,
        }
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Self {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn call(f: Func, args: Vec<Expr>) -> Self {
        Expr::Call(f, args)
    }

    pub fn vec2(a: Expr, b: Expr) -> Self {
        Expr::Vec2(Box::new(a), Box::new(b))
    }

    /// Infers the static type, rejecting ill-typed trees.
    pub fn ty(&self) -> Result<Ty, EvalError> {
        Ok(match self {
            Expr::Num(_) | Expr::Robot(_) => Ty::Scalar,
            Expr::RobotXy => Ty::Vector,
            Expr::Entity { field, .. } => {
                if *field == EntityField::Xy {
                    Ty::Vector
                } else {
                    Ty::Scalar
                }
            }
            Expr::Vec2(a, b) => {
                if a.ty()? != Ty::Scalar || b.ty()? != Ty::Scalar {
                    return Err(self.mismatch());
                }
                Ty::Vector
            }
            Expr::Neg(a) => a.ty()?,
            Expr::Bin(op, a, b) => match (op, a.ty()?, b.ty()?) {
                (BinOp::Add | BinOp::Sub, x, y) if x == y => x,
                (BinOp::Mul, Ty::Scalar, Ty::Scalar) => Ty::Scalar,
                (BinOp::Mul, Ty::Scalar, Ty::Vector) | (BinOp::Mul, Ty::Vector, Ty::Scalar) => {
                    Ty::Vector
                }
                (BinOp::Div, x, Ty::Scalar) => x,
                _ => return Err(self.mismatch()),
            },
            Expr::Call(f, args) => {
                if args.len() != f.arity() {
                    return Err(self.mismatch());
                }
                let want = if *f == Func::Norm2 {
                    Ty::Vector
                } else {
                    Ty::Scalar
                };
                for a in args {
                    if a.ty()? != want {
                        return Err(self.mismatch());
                    }
                }
                Ty::Scalar
            }
            Expr::Alias { body, .. } => body.ty()?,
        })
    }

    fn mismatch(&self) -> EvalError {
        EvalError::TypeMismatch(alloc::format!("{self}"))
    }

    /// Scalar value of the expression.
    pub fn eval(&self, env: &dyn Env) -> Result<f64, EvalError> {
        let mut notes = EvalNotes::default();
        Ok(self.eval_dual(env, &mut notes)?.v)
    }

    /// Value and gradient with respect to the robot channels.
    pub fn eval_dual(&self, env: &dyn Env, notes: &mut EvalNotes) -> Result<Dual, EvalError> {
        match self.value(env, notes)? {
            Value::S(d) if d.v.is_finite() => Ok(d),
            Value::S(_) => Err(EvalError::NonFinite),
            Value::V(..) => Err(self.mismatch()),
        }
    }

    fn value(&self, env: &dyn Env, notes: &mut EvalNotes) -> Result<Value, EvalError> {
        Ok(match self {
            Expr::Num(v) => Value::S(Dual::constant(*v)),
            Expr::Robot(f) => {
                let r = env.robot();
                Value::S(Dual::variable(r[f.index()], f.index()))
            }
            Expr::RobotXy => {
                let r = env.robot();
                Value::V(Dual::variable(r[0], 0), Dual::variable(r[1], 1))
            }
            Expr::Entity { name, field } => {
                let p = env
                    .entity(name)
                    .ok_or_else(|| EvalError::UnresolvedVariable(name.clone()))?;
                match field {
                    EntityField::X => Value::S(Dual::constant(p[0])),
                    EntityField::Y => Value::S(Dual::constant(p[1])),
                    EntityField::Z => Value::S(Dual::constant(p[2])),
                    EntityField::Xy => Value::V(Dual::constant(p[0]), Dual::constant(p[1])),
                }
            }
            Expr::Vec2(a, b) => match (a.value(env, notes)?, b.value(env, notes)?) {
                (Value::S(x), Value::S(y)) => Value::V(x, y),
                _ => return Err(self.mismatch()),
            },
            Expr::Neg(a) => match a.value(env, notes)? {
                Value::S(x) => Value::S(x.neg()),
                Value::V(x, y) => Value::V(x.neg(), y.neg()),
            },
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.value(env, notes)?, b.value(env, notes)?);
                match (op, a, b) {
                    (BinOp::Add, Value::S(x), Value::S(y)) => Value::S(x.add(y)),
                    (BinOp::Sub, Value::S(x), Value::S(y)) => Value::S(x.sub(y)),
                    (BinOp::Add, Value::V(x1, y1), Value::V(x2, y2)) => {
                        Value::V(x1.add(x2), y1.add(y2))
                    }
                    (BinOp::Sub, Value::V(x1, y1), Value::V(x2, y2)) => {
                        Value::V(x1.sub(x2), y1.sub(y2))
                    }
                    (BinOp::Mul, Value::S(x), Value::S(y)) => Value::S(x.mul(y)),
                    (BinOp::Mul, Value::S(s), Value::V(x, y))
                    | (BinOp::Mul, Value::V(x, y), Value::S(s)) => Value::V(s.mul(x), s.mul(y)),
                    (BinOp::Div, Value::S(x), Value::S(y)) => Value::S(x.div(y)?),
                    (BinOp::Div, Value::V(x, y), Value::S(s)) => Value::V(x.div(s)?, y.div(s)?),
                    _ => return Err(self.mismatch()),
                }
            }
            Expr::Call(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(a.value(env, notes)?);
                }
                match (f, vals.as_slice()) {
                    (Func::Norm2, [Value::V(x, y)]) => Value::S(norm2(*x, *y, notes)),
                    (Func::Abs, [Value::S(x)]) => {
                        let slope = if x.v > 0.0 {
                            1.0
                        } else if x.v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        Value::S(x.map(x.v.abs(), slope))
                    }
                    (Func::Sin, [Value::S(x)]) => Value::S(x.map(libm::sin(x.v), libm::cos(x.v))),
                    (Func::Cos, [Value::S(x)]) => {
                        Value::S(x.map(libm::cos(x.v), -libm::sin(x.v)))
                    }
                    (Func::Atan2, [Value::S(y), Value::S(x)]) => Value::S(atan2(*y, *x, notes)),
                    (Func::Wrap, [Value::S(x)]) => Value::S(x.map(wrap_angle(x.v), 1.0)),
                    _ => return Err(self.mismatch()),
                }
            }
            Expr::Alias { body, .. } => body.value(env, notes)?,
        })
    }

    /// True when the expression references no robot or entity variables.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Robot(_) | Expr::RobotXy | Expr::Entity { .. } => false,
            Expr::Vec2(a, b) | Expr::Bin(_, a, b) => a.is_constant() && b.is_constant(),
            Expr::Neg(a) => a.is_constant(),
            Expr::Call(_, args) => args.iter().all(Expr::is_constant),
            Expr::Alias { body, .. } => body.is_constant(),
        }
    }

    /// Entity names referenced anywhere in the tree.
    pub fn entities(&self, out: &mut Vec<String>) {
        match self {
            Expr::Entity { name, .. } => {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
            Expr::Vec2(a, b) | Expr::Bin(_, a, b) => {
                a.entities(out);
                b.entities(out);
            }
            Expr::Neg(a) => a.entities(out),
            Expr::Call(_, args) => args.iter().for_each(|a| a.entities(out)),
            Expr::Alias { body, .. } => body.entities(out),
            _ => {}
        }
    }

    /// Aliases referenced in the tree, innermost first.
    pub fn aliases<'a>(&'a self, out: &mut Vec<(&'a str, &'a Expr)>) {
        match self {
            Expr::Alias { name, body } => {
                body.aliases(out);
                if !out.iter().any(|(n, _)| *n == name.as_str()) {
                    out.push((name.as_str(), body));
                }
            }
            Expr::Vec2(a, b) | Expr::Bin(_, a, b) => {
                a.aliases(out);
                b.aliases(out);
            }
            Expr::Neg(a) => a.aliases(out),
            Expr::Call(_, args) => args.iter().for_each(|a| a.aliases(out)),
            _ => {}
        }
    }

    /// Replaces every subtree structurally equal to `from` by `to`.
    /// Returns the number of replacements made.
    pub fn replace(&mut self, from: &Expr, to: &Expr) -> usize {
        if self == from {
            *self = to.clone();
            return 1;
        }
        match self {
            Expr::Vec2(a, b) | Expr::Bin(_, a, b) => a.replace(from, to) + b.replace(from, to),
            Expr::Neg(a) => a.replace(from, to),
            Expr::Call(_, args) => args.iter_mut().map(|a| a.replace(from, to)).sum(),
            Expr::Alias { body, .. } => body.replace(from, to),
            _ => 0,
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(op, ..) => op.precedence(),
            Expr::Num(v) if v.is_sign_negative() => 2,
            _ => 3,
        }
    }
}

fn norm2(x: Dual, y: Dual, notes: &mut EvalNotes) -> Dual {
    let r = libm::sqrt(x.v * x.v + y.v * y.v);
    let (gx, gy, gr) = if r < DIV_EPS {
        notes.nondifferentiable = true;
        let px = x.v + NONDIFF_PERTURBATION;
        let pr = libm::sqrt(px * px + y.v * y.v);
        (px, y.v, pr)
    } else {
        (x.v, y.v, r)
    };
    let mut d = [0.0; STATE_DIM];
    for (i, v) in d.iter_mut().enumerate() {
        *v = (gx * x.d[i] + gy * y.d[i]) / gr;
    }
    Dual { v: r, d }
}

fn atan2(y: Dual, x: Dual, notes: &mut EvalNotes) -> Dual {
    let v = libm::atan2(y.v, x.v);
    let mut gx = x.v;
    let mut r2 = x.v * x.v + y.v * y.v;
    if r2 < DIV_EPS * DIV_EPS {
        notes.nondifferentiable = true;
        gx += NONDIFF_PERTURBATION;
        r2 = gx * gx + y.v * y.v;
    }
    let mut d = [0.0; STATE_DIM];
    for (i, out) in d.iter_mut().enumerate() {
        *out = (gx * y.d[i] - y.v * x.d[i]) / r2;
    }
    Dual { v, d }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Robot(field) => write!(f, "robot.{}", field.name()),
            Expr::RobotXy => f.write_str("robot.xy"),
            Expr::Entity { name, field } => write!(f, "{name}.{}", field.name()),
            Expr::Vec2(a, b) => write!(f, "[{a}, {b}]"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                if a.prec() < p {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                // Left-associative: equal precedence on the right needs parentheses.
                if b.prec() <= p {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Alias { name, .. } => f.write_str(name),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Gt => ">",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Relation::Lt => Relation::Gt,
            Relation::Gt => Relation::Lt,
        }
    }
}

/// `lhs < rhs` or `lhs > rhs`, true exactly when its margin is non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub lhs: Expr,
    pub rel: Relation,
    pub rhs: Expr,
}

impl Predicate {
    pub fn new(lhs: Expr, rel: Relation, rhs: Expr) -> Self {
        Predicate { lhs, rel, rhs }
    }

    /// The same comparison with the relation reversed; its margin is the
    /// exact negation of this one.
    pub fn negated(&self) -> Self {
        Predicate {
            lhs: self.lhs.clone(),
            rel: self.rel.flipped(),
            rhs: self.rhs.clone(),
        }
    }

    pub fn margin(&self, env: &dyn Env) -> Result<f64, EvalError> {
        let mut notes = EvalNotes::default();
        Ok(self.margin_dual(env, &mut notes)?.v)
    }

    /// Margin `h` with its gradient over the robot channels.
    pub fn margin_dual(&self, env: &dyn Env, notes: &mut EvalNotes) -> Result<Dual, EvalError> {
        let l = self.lhs.eval_dual(env, notes)?;
        let r = self.rhs.eval_dual(env, notes)?;
        Ok(match self.rel {
            Relation::Lt => r.sub(l),
            Relation::Gt => l.sub(r),
        })
    }

    pub fn is_constant(&self) -> bool {
        self.lhs.is_constant() && self.rhs.is_constant()
    }

    pub fn entities(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.lhs.entities(&mut out);
        self.rhs.entities(&mut out);
        out
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.rel.symbol(), self.rhs)
    }
}

/// Evaluates a predicate: returns its margin and truth (`h >= 0`).
pub fn eval_predicate(mu: &Predicate, env: &dyn Env) -> Result<(f64, bool), EvalError> {
    let h = mu.margin(env)?;
    Ok((h, h >= 0.0))
}

/// Exact gradient of an expression over the robot channels.
pub fn grad_h(expr: &Expr, env: &dyn Env) -> Result<([f64; STATE_DIM], EvalNotes), EvalError> {
    let mut notes = EvalNotes::default();
    let d = expr.eval_dual(env, &mut notes)?;
    Ok((d.d, notes))
}
