//! Acceptance suite: one PASS/FAIL line per criterion. Pass a substring to
//! run only matching criteria.

#[path = "../../../core/tests/common/lasso_oracle.rs"]
mod lasso_oracle;

mod automata;
mod cbf_suite;
mod numerics;
mod scenarios;
mod timing;

use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    ("automata-oracle", automata::oracle),
    ("intersection-law", automata::intersection_law),
    ("ordering", automata::ordering),
    ("mod-1-bounds", scenarios::mod1),
    ("mod-2-predicates", scenarios::mod2),
    ("mod-3-conjunction", scenarios::mod3),
    ("mod-4-disjunction", scenarios::mod4),
    ("cbf-suite", cbf_suite::run),
    ("numerics", numerics::run),
    ("timing-ordering", timing::run),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let out = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        println!("{} {name}: {} ({secs:.1} s)", if out.pass { "PASS" } else { "FAIL" }, out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
