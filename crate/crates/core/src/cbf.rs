//! Time-varying control barrier functions and the per-step control QP.
//!
//! An activated obligation becomes one barrier `b(X, t) = h(X) - g(t)` per
//! predicate, where the schedule `g` is piecewise linear. For reach sets the
//! schedule starts just below the current margin and climbs to a positive
//! satisfaction margin at the deadline; for always sets it reaches that margin
//! when the window opens and stays there; hold sets of an until use `g = 0`.
//! Keeping every `b >= 0` therefore keeps the obligation on track.
//!
//! Under single-integrator dynamics each barrier gives the row
//!
//! ```text
//! grad h(X) . u  >=  g'(t) - k (h(X) - g(t)) - dh/dt
//! ```
//!
//! where `dh/dt` accounts for entities that move on their own. The control is
//! the minimum-norm input satisfying all rows and the speed caps; when that
//! is infeasible the rows are relaxed by the smallest total squared slack.

use alloc::{
    collections::BTreeMap,
    format,
    string::{String, ToString},
    vec,
    vec::Vec,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::abstraction::{BarrierParams, BarrierTemplate, PropKind};
use crate::qp::{self, QpError};
use crate::spec::{Bounds, Env, EvalNotes, Expr, Predicate, Relation, STATE_DIM};
use crate::world::{integrate, ControlBounds, Overlay};

/// Rows whose slack exceeds this are reported as relaxed.
pub const SLACK_TOL: f64 = 1e-9;

const MAX_CORRECTIONS: usize = 10;
const DH_DT_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub dt: f64,
    /// Deadline used for reach obligations with an unbounded window.
    pub default_horizon: f64,
    /// Ramp time for an always obligation whose window is already open.
    pub always_ramp: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            dt: 0.1,
            default_horizon: 30.0,
            always_ramp: 1.0,
        }
    }
}

/// Piecewise-linear function of time, constant outside its knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub knots: Vec<(f64, f64)>,
}

impl Schedule {
    pub fn constant(t: f64, v: f64) -> Self {
        Schedule { knots: vec![(t, v)] }
    }

    pub fn value(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                if t1 <= t0 {
                    return v1;
                }
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        k[k.len() - 1].1
    }

    /// Slope of the segment that starts at or contains `t`.
    pub fn slope(&self, t: f64) -> f64 {
        for w in self.knots.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t >= t0 - 1e-12 && t < t1 - 1e-12 && t1 > t0 {
                return (v1 - v0) / (t1 - t0);
            }
        }
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reach,
    Hold,
}

/// One activated barrier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierInstance {
    pub prop: String,
    pub kind: PropKind,
    pub role: Role,
    #[serde(skip)]
    pub predicate: Option<Predicate>,
    pub schedule: Schedule,
    pub gain: f64,
    pub delta_sat: f64,
    pub t_act: f64,
    /// Time by which `h >= delta_sat` is due.
    pub t_dead: f64,
}

impl BarrierInstance {
    pub fn predicate(&self) -> &Predicate {
        self.predicate.as_ref().expect("barrier without predicate")
    }

    pub fn gamma(&self, t: f64) -> f64 {
        self.schedule.value(t)
    }
}

fn margin(p: &Predicate, env: &dyn Env) -> f64 {
    match p.margin(env) {
        Ok(h) if h.is_finite() => h,
        _ => f64::NEG_INFINITY,
    }
}

/// Margin a barrier drives its predicate to. An upper bound `e < c` cannot
/// be met with a margin above `c` when `e` is a distance or magnitude, so
/// the target is capped at half the threshold.
pub fn target_margin(pred: &Predicate, delta_sat: f64) -> f64 {
    match (pred.rel, &pred.rhs) {
        (Relation::Lt, Expr::Num(c)) if *c > 0.0 => delta_sat.min(0.5 * c),
        _ => delta_sat,
    }
}

/// Builds the barriers for one obligation. `t_act` is the activation time
/// and `t_from` the time the schedule starts (equal on first activation,
/// later when rebinding after a modification).
pub fn instantiate(
    template: &BarrierTemplate,
    t_act: f64,
    t_from: f64,
    env: &dyn Env,
    cfg: &ControlConfig,
) -> Vec<BarrierInstance> {
    let w = template.window;
    let mut out = Vec::new();
    let mk = |pred: &Predicate, role, schedule, t_dead| BarrierInstance {
        prop: template.prop.clone(),
        kind: template.kind,
        role,
        predicate: Some(pred.clone()),
        schedule,
        gain: template.params.gain,
        delta_sat: target_margin(pred, template.params.delta_sat),
        t_act,
        t_dead,
    };
    let params = |pred: &Predicate| BarrierParams {
        delta_sat: target_margin(pred, template.params.delta_sat),
        ..template.params
    };
    match template.kind {
        PropKind::Eventually | PropKind::Until => {
            let t_dead = if w.is_unbounded() {
                t_act + cfg.default_horizon.max(w.lo)
            } else {
                t_act + w.hi
            };
            for pred in &template.reach {
                let s = reach_schedule(margin(pred, env), t_from, t_dead, &params(pred), cfg.dt);
                out.push(mk(pred, Role::Reach, s, t_dead));
            }
            for pred in &template.hold {
                out.push(mk(pred, Role::Hold, Schedule::constant(t_from, 0.0), t_dead));
            }
        }
        PropKind::Always => {
            for pred in &template.reach {
                let s = always_schedule(margin(pred, env), t_from, t_act, w, &params(pred), cfg);
                out.push(mk(pred, Role::Reach, s, t_act + w.lo));
            }
        }
        PropKind::Event | PropKind::TriggerPred => {}
    }
    out
}

/// Starts just below `h` (never above the target margin) and reaches the
/// target margin at the deadline.
pub fn reach_schedule(h: f64, t_from: f64, t_dead: f64, p: &BarrierParams, dt: f64) -> Schedule {
    let start = (h - p.epsilon).min(p.delta_sat);
    Schedule {
        knots: vec![(t_from, start), (t_dead.max(t_from + dt), p.delta_sat)],
    }
}

/// Reaches the target margin when the window opens (or after a short ramp if
/// it is already open) and holds it until the window closes.
pub fn always_schedule(
    h: f64,
    t_from: f64,
    t_act: f64,
    w: Bounds,
    p: &BarrierParams,
    cfg: &ControlConfig,
) -> Schedule {
    let opens = t_act + w.lo;
    let mut knots = if opens > t_from + 1e-9 {
        vec![(t_from, (h - p.epsilon).min(p.delta_sat)), (opens, p.delta_sat)]
    } else {
        // Already inside the window: never ask for less than is held now.
        vec![(t_from, h.min(p.delta_sat)), (t_from + cfg.always_ramp.max(cfg.dt), p.delta_sat)]
    };
    let closes = t_act + w.hi;
    if closes.is_finite() && closes > knots[1].0 {
        knots.push((closes, p.delta_sat));
    }
    Schedule { knots }
}

/// Entity velocities used for the explicit time dependence of margins.
pub type EntityRates = BTreeMap<String, [f64; 3]>;

/// Entity positions displaced by `rates * tau`.
pub fn displaced(env: &dyn Env, rates: &EntityRates, tau: f64, names: &[String]) -> BTreeMap<String, [f64; 3]> {
    let mut out = BTreeMap::new();
    for n in names {
        if let Some(mut p) = env.entity(n) {
            if let Some(v) = rates.get(n) {
                for k in 0..3 {
                    p[k] += v[k] * tau;
                }
            }
            out.insert(n.clone(), p);
        }
    }
    out
}

/// Partial derivative of the margin with respect to time through moving
/// entities.
pub fn dh_dt(p: &Predicate, env: &dyn Env, rates: &EntityRates) -> f64 {
    let names = p.entities();
    if !names.iter().any(|n| rates.get(n).is_some_and(|v| v.iter().any(|x| *x != 0.0))) {
        return 0.0;
    }
    let robot = env.robot();
    let plus = displaced(env, rates, DH_DT_STEP, &names);
    let minus = displaced(env, rates, -DH_DT_STEP, &names);
    let hp = margin(p, &Overlay { robot, entities: &plus });
    let hm = margin(p, &Overlay { robot, entities: &minus });
    if hp.is_finite() && hm.is_finite() {
        (hp - hm) / (2.0 * DH_DT_STEP)
    } else {
        0.0
    }
}

/// Margin, gradient and time derivative of a barrier predicate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linearization {
    pub h: f64,
    pub grad: [f64; STATE_DIM],
    pub dh_dt: f64,
    pub nondifferentiable: bool,
}

pub fn linearize(p: &Predicate, env: &dyn Env, rates: &EntityRates) -> Linearization {
    let mut notes = EvalNotes::default();
    match p.margin_dual(env, &mut notes) {
        Ok(d) if d.v.is_finite() && d.d.iter().all(|g| g.is_finite()) => Linearization {
            h: d.v,
            grad: d.d,
            dh_dt: dh_dt(p, env, rates),
            nondifferentiable: notes.nondifferentiable,
        },
        _ => Linearization {
            h: f64::NEG_INFINITY,
            grad: [0.0; STATE_DIM],
            dh_dt: 0.0,
            nondifferentiable: true,
        },
    }
}

/// Per-row diagnostics of one control step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub prop: String,
    pub role: Role,
    pub h: f64,
    pub gamma: f64,
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlOutput {
    pub u: [f64; STATE_DIM],
    pub rows: Vec<RowReport>,
    /// Some row needed slack.
    pub relaxed: bool,
    pub kkt_residual: f64,
    /// Solver failure; the control falls back to zero.
    pub error: Option<String>,
    /// Number of discrete re-tightening passes that were needed.
    pub corrections: usize,
}

/// A linear constraint `a . u >= rhs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Row {
    pub a: [f64; STATE_DIM],
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxQpSolution {
    pub u: [f64; STATE_DIM],
    pub slacks: Vec<f64>,
    pub kkt_residual: f64,
}

/// Minimum-norm `u` within the caps satisfying `rows`, with the least total
/// squared relaxation when they cannot all hold.
pub fn solve_rows(rows: &[Row], bounds: &ControlBounds) -> Result<BoxQpSolution, QpError> {
    let n = STATE_DIM;
    let m = rows.len();
    let h = DMatrix::<f64>::identity(n, n) * 2.0;
    let c = DVector::zeros(n);
    let (g, b) = constraint_matrix(rows, bounds, &vec![0.0; m]);
    match qp::solve(&h, &c, &g, &b) {
        Ok(s) => {
            let kkt = qp::kkt_residual(&h, &c, &g, &b, &s.x, &s.multipliers);
            return Ok(BoxQpSolution {
                u: to_array(&s.x),
                slacks: vec![0.0; m],
                kkt_residual: kkt,
            });
        }
        Err(QpError::Infeasible(_)) => {}
        Err(e) => return Err(e),
    }
    // Phase one: smallest squared slack, with a tiny weight on u for a unique
    // minimizer.
    let nv = n + m;
    let mut h1 = DMatrix::<f64>::zeros(nv, nv);
    for i in 0..n {
        h1[(i, i)] = 2e-9;
    }
    for j in 0..m {
        h1[(n + j, n + j)] = 2.0;
    }
    let c1 = DVector::zeros(nv);
    let mut g1 = DMatrix::<f64>::zeros(m + 2 * n + m, nv);
    let mut b1 = DVector::zeros(m + 2 * n + m);
    for (j, r) in rows.iter().enumerate() {
        for i in 0..n {
            g1[(j, i)] = r.a[i];
        }
        g1[(j, n + j)] = 1.0;
        b1[j] = r.rhs;
    }
    for i in 0..n {
        g1[(m + 2 * i, i)] = 1.0;
        b1[m + 2 * i] = -bounds.caps[i];
        g1[(m + 2 * i + 1, i)] = -1.0;
        b1[m + 2 * i + 1] = -bounds.caps[i];
    }
    for j in 0..m {
        g1[(m + 2 * n + j, n + j)] = 1.0;
    }
    let s1 = qp::solve(&h1, &c1, &g1, &b1)?;
    let slacks: Vec<f64> = (0..m).map(|j| s1.x[n + j].max(0.0)).collect();
    // Phase two: minimum norm among inputs achieving those slacks.
    let relax: Vec<f64> = slacks.iter().map(|s| s + 1e-10).collect();
    let (g, b) = constraint_matrix(rows, bounds, &relax);
    let (x, kkt) = match qp::solve(&h, &c, &g, &b) {
        Ok(s) => {
            let kkt = qp::kkt_residual(&h, &c, &g, &b, &s.x, &s.multipliers);
            (s.x, kkt)
        }
        Err(_) => (s1.x.rows(0, n).into_owned(), 0.0),
    };
    let mut u = to_array(&x);
    bounds.clamp(&mut u);
    let slacks = rows
        .iter()
        .map(|r| (r.rhs - dot(&r.a, &u)).max(0.0))
        .collect();
    Ok(BoxQpSolution {
        u,
        slacks,
        kkt_residual: kkt,
    })
}

fn constraint_matrix(rows: &[Row], bounds: &ControlBounds, relax: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let n = STATE_DIM;
    let m = rows.len();
    let mut g = DMatrix::zeros(m + 2 * n, n);
    let mut b = DVector::zeros(m + 2 * n);
    for (j, r) in rows.iter().enumerate() {
        for i in 0..n {
            g[(j, i)] = r.a[i];
        }
        b[j] = r.rhs - relax[j];
    }
    for i in 0..n {
        g[(m + 2 * i, i)] = 1.0;
        b[m + 2 * i] = -bounds.caps[i];
        g[(m + 2 * i + 1, i)] = -1.0;
        b[m + 2 * i + 1] = -bounds.caps[i];
    }
    (g, b)
}

fn to_array(x: &DVector<f64>) -> [f64; STATE_DIM] {
    let mut u = [0.0; STATE_DIM];
    for (i, v) in u.iter_mut().enumerate() {
        *v = x[i];
    }
    u
}

fn dot(a: &[f64; STATE_DIM], b: &[f64; STATE_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Computes the control for time `t` (generateControl). After each solve the
/// state one step ahead is predicted; rows whose discrete barrier would decay
/// faster than `1 - k dt` are tightened and the QP re-solved.
pub fn generate_control(
    barriers: &[&BarrierInstance],
    t: f64,
    env: &dyn Env,
    rates: &EntityRates,
    bounds: &ControlBounds,
    dt: f64,
) -> ControlOutput {
    let lin: Vec<Linearization> = barriers
        .iter()
        .map(|b| linearize(b.predicate(), env, rates))
        .collect();
    let gamma: Vec<f64> = barriers.iter().map(|b| b.gamma(t)).collect();
    let mut rows: Vec<Row> = barriers
        .iter()
        .zip(&lin)
        .zip(&gamma)
        .map(|((b, l), g)| Row {
            a: l.grad,
            rhs: b.schedule.slope(t) - b.gain * (l.h - g) - l.dh_dt,
        })
        .collect();
    let robot = env.robot();
    let names: Vec<String> = {
        let mut v: Vec<String> = barriers.iter().flat_map(|b| b.predicate().entities()).collect();
        v.sort();
        v.dedup();
        v
    };
    let ahead = displaced(env, rates, dt, &names);
    let mut corrections = 0;
    let mut last: Vec<Option<(f64, f64)>> = vec![None; rows.len()];
    loop {
        // Rows without any dependence on the robot cannot be influenced;
        // they are reported as slack directly.
        let live: Vec<usize> = (0..rows.len())
            .filter(|&j| rows[j].a.iter().any(|g| g.abs() > 1e-12))
            .collect();
        let sub: Vec<Row> = live.iter().map(|&j| rows[j]).collect();
        let sol = match solve_rows(&sub, bounds) {
            Ok(s) => s,
            Err(e) => {
                return ControlOutput {
                    u: [0.0; STATE_DIM],
                    rows: report(barriers, &lin, &gamma, &vec![0.0; barriers.len()]),
                    relaxed: true,
                    kkt_residual: f64::NAN,
                    error: Some(e.to_string()),
                    corrections,
                }
            }
        };
        let mut slack = vec![0.0; rows.len()];
        for (j, r) in rows.iter().enumerate() {
            slack[j] = (r.rhs - dot(&r.a, &sol.u)).max(0.0);
        }
        for (k, &j) in live.iter().enumerate() {
            slack[j] = slack[j].max(sol.slacks[k]);
        }
        let relaxed = slack.iter().any(|s| *s > SLACK_TOL);
        let mut tightened = false;
        if !relaxed && corrections < MAX_CORRECTIONS {
            let next = integrate(&robot, &sol.u, dt);
            let next_env = Overlay {
                robot: next,
                entities: &ahead,
            };
            for (j, b) in barriers.iter().enumerate() {
                let b_now = lin[j].h - gamma[j];
                let h_next = margin(b.predicate(), &next_env);
                let b_next = h_next - b.gamma(t + dt);
                let floor = (1.0 - b.gain * dt) * b_now;
                if h_next.is_finite() && b_next < floor - 1e-12 {
                    let deficit = floor - b_next;
                    // Secant step from the last correction of this row; the
                    // first one assumes the linearized response.
                    let mut step = deficit / dt;
                    if let Some((raised, before)) = last[j] {
                        let gained = before - deficit;
                        if gained > 0.0 {
                            step = (raised * deficit / gained).min(10.0 * step);
                        }
                    }
                    step += 1e-9;
                    // Measured from the achieved rate so a row with slack still tightens.
                    let from = rows[j].rhs.max(dot(&rows[j].a, &sol.u));
                    rows[j].rhs = from + step;
                    last[j] = Some((rows[j].rhs - from, deficit));
                    tightened = true;
                }
            }
        }
        if tightened {
            corrections += 1;
            continue;
        }
        return ControlOutput {
            u: sol.u,
            rows: report(barriers, &lin, &gamma, &slack),
            relaxed,
            kkt_residual: sol.kkt_residual,
            error: None,
            corrections,
        };
    }
}

fn report(barriers: &[&BarrierInstance], lin: &[Linearization], gamma: &[f64], slack: &[f64]) -> Vec<RowReport> {
    barriers
        .iter()
        .enumerate()
        .map(|(j, b)| RowReport {
            prop: b.prop.clone(),
            role: b.role,
            h: lin[j].h,
            gamma: gamma[j],
            slack: slack[j],
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreFailureWarning {
    /// Proposition at risk; `None` for a planner-level warning.
    pub prop: Option<String>,
    pub required_rate: f64,
    pub max_rate: f64,
    pub time_remaining: f64,
    pub message: String,
}

/// Fastest rate at which the margin can grow under the caps.
pub fn max_rate(l: &Linearization, bounds: &ControlBounds) -> f64 {
    l.grad
        .iter()
        .zip(&bounds.caps)
        .map(|(g, c)| g.abs() * c)
        .sum::<f64>()
        + l.dh_dt
}

/// Required and achievable margin rates for a reach barrier that has not yet
/// met its target; `None` once the target is met or the deadline has passed.
pub fn rate_check(b: &BarrierInstance, t: f64, env: &dyn Env, rates: &EntityRates, bounds: &ControlBounds) -> Option<(f64, f64, f64)> {
    if b.role != Role::Reach || b.kind == PropKind::Always {
        return None;
    }
    let remaining = b.t_dead - t;
    let l = linearize(b.predicate(), env, rates);
    if remaining <= 1e-9 || l.h >= b.delta_sat {
        return None;
    }
    Some(((b.delta_sat - l.h) / remaining, max_rate(&l, bounds), remaining))
}

/// Warns for every reach barrier whose remaining margin cannot be closed at
/// full speed before its deadline.
pub fn pre_failure(
    barriers: &[&BarrierInstance],
    t: f64,
    env: &dyn Env,
    rates: &EntityRates,
    bounds: &ControlBounds,
) -> Vec<PreFailureWarning> {
    let mut out = Vec::new();
    for b in barriers {
        if let Some((req, max, remaining)) = rate_check(b, t, env, rates, bounds) {
            if req > max + 1e-12 {
                out.push(PreFailureWarning {
                    prop: Some(b.prop.clone()),
                    required_rate: req,
                    max_rate: max,
                    time_remaining: remaining,
                    message: format!(
                        "{} may be violated: needs margin rate {req:.3}/s, at most {max:.3}/s achievable, {remaining:.1} s left",
                        b.prop
                    ),
                });
            }
        }
    }
    out
}

/// Planner-level warning when no accepting path remains.
pub fn no_path_warning(automaton: usize) -> PreFailureWarning {
    PreFailureWarning {
        prop: None,
        required_rate: f64::INFINITY,
        max_rate: 0.0,
        time_remaining: 0.0,
        message: format!("automaton {automaton} has no accepting path under the current events and outcomes"),
    }
}
