use std::collections::BTreeSet;

use respec::clock::WallClock;
use respec_core::clock::NullClock;
use respec_core::runner::{run, RunOutput, Runner, TraceRecord};
use respec_core::runtime::RuntimeConfig;
use respec_core::scenario::builtin_world;

use crate::Outcome;

/// Obligation of the reach-the-object clause.
const PICK: &str = "ob0.1";

fn headless(name: &str) -> RunOutput {
    run(builtin_world(name).unwrap(), RuntimeConfig::default(), &NullClock).unwrap()
}

fn dist(a: &[f64], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn mod1() -> Outcome {
    let with = headless("collect-far");
    let again = headless("collect-far");
    let without = headless("collect-far-nomod");
    let first_warning = with.trace.iter().find(|r| !r.warnings.is_empty()).map(|r| r.t);
    let edit = with.modlog.iter().find(|m| m.kind == "set-bounds");
    let window_after = with
        .trace
        .iter()
        .flat_map(|r| r.obligations.iter())
        .filter(|o| o.id == PICK)
        .map(|o| o.window)
        .last();
    let checks = [
        ("warning before 30 s", first_warning.is_some_and(|t| t < 30.0)),
        (
            "edit applied at the warning",
            matches!((edit, first_warning), (Some(e), Some(w)) if e.ok && e.t >= w - 1e-9 && e.t <= w + 0.1 + 1e-9),
        ),
        ("window becomes [0,45]", window_after.is_some_and(|w| w.lo == 0.0 && w.hi == 45.0)),
        ("zero violations with the edit", with.summary.violations == 0),
        ("pick violated without the edit", without.summary.violated.iter().any(|v| v == PICK)),
        ("deterministic", with.trace == again.trace && with.modlog == again.modlog),
        ("at most 60 s simulated", with.summary.t_end <= 60.0 + 1e-9),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Outcome::new(
        failed.is_empty(),
        format!(
            "warning at t={:.1}, edit at t={:.1}, violations {} (without edit: {:?}){}",
            first_warning.unwrap_or(f64::NAN),
            edit.map_or(f64::NAN, |e| e.t),
            with.summary.violations,
            without.summary.violated,
            if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
        ),
    )
}

pub fn mod2() -> Outcome {
    let clock = WallClock::new();
    let script = builtin_world("collect-obj2").unwrap();
    let dt_ms = script.dt * 1e3;
    let mut r = Runner::new(script, RuntimeConfig::default(), &clock).unwrap();
    let none = BTreeSet::new();
    let mut structure_kept = true;
    let mut checked_step = false;
    let shape = |r: &Runner| -> Vec<(u64, usize)> { r.ctx.b_set.iter().map(|b| (b.fingerprint(), b.len())).collect() };
    // Only edits change the automata, so the shape is refreshed after each.
    let mut before = shape(&r);
    while !r.finished() {
        let logged = r.modlog.len();
        r.step(&none, &[], &clock);
        if r.modlog.len() > logged {
            checked_step = true;
            let after = shape(&r);
            structure_kept &= before == after;
            before = after;
        }
    }
    let s = r.summary();
    let all_ok = r.modlog.len() == 4 && r.modlog.iter().all(|m| m.ok);
    let in_step = r.modlog.iter().all(|m| !m.requires_pause && m.timing_ms < dt_ms);
    let slowest = r.modlog.iter().map(|m| m.timing_ms).fold(0.0, f64::max);
    let deposited = s.deposits.iter().any(|d| d.object == "obj2");
    Outcome::new(
        all_ok && checked_step && structure_kept && in_step && deposited && s.violations == 0,
        format!(
            "{} rewrites ok={all_ok}, automata unchanged={structure_kept}, slowest {slowest:.2} ms of {dt_ms:.0} ms period, deposits {:?}, violations {}",
            r.modlog.len(),
            s.deposits.iter().map(|d| format!("{}@{} t={:.1}", d.object, d.depot, d.t)).collect::<Vec<_>>(),
            s.violations
        ),
    )
}

fn entity(r: &TraceRecord, name: &str) -> [f64; 3] {
    r.entities[name]
}

pub fn mod3() -> Outcome {
    let out = headless("collect-cones");
    let Some(add) = out.modlog.iter().find(|m| m.kind == "add-conj" && m.ok) else {
        return Outcome::new(false, "conjunction was not applied");
    };
    let after: Vec<&TraceRecord> = out.trace.iter().filter(|r| r.t >= add.t).collect();
    let min = |cone: &str| {
        after
            .iter()
            .map(|r| dist(&r.robot, &entity(r, cone)))
            .fold(f64::INFINITY, f64::min)
    };
    let (m1, m2) = (min("cone1"), min("cone2"));
    Outcome::new(
        m1 > 0.3 && m2 > 0.3 && out.summary.violations == 0 && !after.is_empty(),
        format!(
            "conjunction at t={:.1}; min distance cone1 {m1:.3}, cone2 {m2:.3}; violations {}; deposits {}",
            add.t,
            out.summary.violations,
            out.summary.deposits.len()
        ),
    )
}

/// A step where the planner actually chooses: both automata have a
/// robustness value and the values differ.
fn deciding(r: &TraceRecord) -> bool {
    matches!(r.rhoset.as_slice(), [Some(a), Some(b)] if a != b)
}

pub fn mod4() -> Outcome {
    let out = headless("collect-two-depots");
    let dep_t = out.summary.deposits.first().map_or(f64::INFINITY, |d| d.t);
    let decisions: Vec<&TraceRecord> = out.trace.iter().filter(|r| deciding(r) && r.t < dep_t).collect();
    let closer = decisions
        .iter()
        .all(|r| dist(&r.robot, &entity(r, "dep2")) < dist(&r.robot, &entity(r, "dep1")));
    let at_dep2 = out.summary.deposits.first().is_some_and(|d| d.depot == "dep2");

    let moved = headless("collect-two-depots-move");
    let before: BTreeSet<Option<usize>> = moved
        .trace
        .iter()
        .filter(|r| deciding(r) && r.t < 70.0)
        .map(|r| r.chosen)
        .collect();
    let switched = moved.trace.iter().find(|r| r.t >= 70.0 && r.chosen == Some(0)).map(|r| r.t);
    let at_dep1 = moved.summary.deposits.first().is_some_and(|d| d.depot == "dep1");
    Outcome::new(
        !decisions.is_empty() && closer && at_dep2 && before == BTreeSet::from([Some(1)]) && switched.is_some() && at_dep1,
        format!(
            "dep2 closer at all {} decision steps: {closer}; deposit {:?}; after moving dep2: followed {before:?} before t=70, automaton 0 from t={:.1}, deposit {:?}",
            decisions.len(),
            out.summary.deposits.first().map(|d| (&d.depot, d.t)),
            switched.unwrap_or(f64::NAN),
            moved.summary.deposits.first().map(|d| (&d.depot, d.t)),
        ),
    )
}
