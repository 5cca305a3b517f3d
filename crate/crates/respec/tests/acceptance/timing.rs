use respec::clock::WallClock;
use respec_core::clock::NullClock;
use respec_core::modify::{modify, ModReport};
use respec_core::runner::Runner;
use respec_core::runtime::RuntimeConfig;
use respec_core::scenario::builtin_world;
use respec_core::spec::parse_modification;

use crate::Outcome;

const BOUNDS: &[&str] = &[
    "set-bounds @0.1 [0,40]",
    "set-bounds @1.1 [0,20]",
    "set-bounds @2.1.0 [0,12]",
    "set-bounds @3.1 [0,30]",
    "set-bounds @4.1.0 [0,25]",
];

const PREDICATES: &[&str] = &[
    "set-pred d_obj := d_obj2",
    "set-pred theta_obj := theta_obj2",
    "set-pred obj1.z := obj2.z",
    "set-pred robot.d < 0.2 := robot.d < 0.05",
];

const CONJUNCTIONS: &[&str] = &[
    "add-conj G[0,100](norm2(robot.xy - cone1.xy) > 0.3 & norm2(robot.xy - cone2.xy) > 0.3)",
    "add-conj G[0,100](robot.z < 2)",
    "add-conj G(pick => F[0,60](d_dep < 1))",
];

/// Applies `text` to a fresh copy of the scenario's context after setup.
fn measure(r: &Runner, text: &str) -> ModReport {
    let mut ctx = r.ctx.clone();
    let cmd = match parse_modification(text, &r.ctx.aliases, None) {
        Ok(c) => c,
        Err(e) => panic!("{text}: {e}"),
    };
    modify(&mut ctx, &cmd, &r.world.state, &WallClock::new())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn run() -> Outcome {
    let base = |name: &str| Runner::new(builtin_world(name).unwrap(), RuntimeConfig::default(), &NullClock).unwrap();
    let collect = base("collect");
    let obj2 = base("collect-obj2");
    let cones = base("collect-cones");
    let mut cheap: Vec<ModReport> = BOUNDS.iter().map(|c| measure(&collect, c)).collect();
    cheap.extend(PREDICATES.iter().map(|c| measure(&obj2, c)));
    let conj: Vec<ModReport> = CONJUNCTIONS.iter().map(|c| measure(&cones, c)).collect();
    let rejected: Vec<String> = cheap
        .iter()
        .chain(&conj)
        .filter(|r| !r.ok)
        .map(|r| format!("{} ({})", r.command, r.error.as_deref().unwrap_or("")))
        .collect();
    let m_cheap = median(cheap.iter().map(|r| r.timing_ms).collect());
    let m_conj = median(conj.iter().map(|r| r.timing_ms).collect());
    let paused = cheap.iter().filter(|r| r.requires_pause).count();
    Outcome::new(
        rejected.is_empty() && paused == 0 && m_cheap < 0.1 * m_conj,
        format!(
            "median bound/predicate {m_cheap:.2} ms over {}, median conjunction {m_conj:.1} ms over {} (ratio {:.4}); {paused} bound/predicate edits require a pause{}",
            cheap.len(),
            conj.len(),
            m_cheap / m_conj,
            if rejected.is_empty() { String::new() } else { format!("; rejected: {rejected:?}") }
        ),
    )
}
