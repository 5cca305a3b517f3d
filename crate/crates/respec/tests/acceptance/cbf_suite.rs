use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use respec_core::abstraction::{abstract_formula, make_templates, BarrierParams, PropKind};
use respec_core::cbf::{generate_control, instantiate, BarrierInstance, ControlConfig, EntityRates};
use respec_core::spec::{parse_spec, Bounds, Predicate};
use respec_core::world::{integrate, ControlBounds, Overlay};

use crate::Outcome;

const WANTED: usize = 500;
const MAX_TRIES: usize = 3000;
const DT: f64 = 0.1;
const INVARIANCE_TOL: f64 = 1e-6;

struct Case {
    text: String,
    robot: [f64; 6],
    entities: BTreeMap<String, [f64; 3]>,
    rates: EntityRates,
}

fn r2(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo..hi) * 100.0).round() / 100.0
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let mut robot = [0.0; 6];
    robot[0] = r2(rng, -3.0, 3.0);
    robot[1] = r2(rng, -3.0, 3.0);
    robot[2] = r2(rng, -3.0, 3.0);
    robot[3] = r2(rng, 0.0, 1.0);
    robot[4] = r2(rng, 0.0, 1.0);
    robot[5] = r2(rng, 0.5, 3.0);
    let mut entities = BTreeMap::new();
    let mut rates = EntityRates::new();
    let hi = rng.gen_range(4..=12) as f64;
    let lo = if rng.gen_bool(0.3) { rng.gen_range(1..=3) as f64 } else { 0.0 };
    let reach = match rng.gen_range(0..4) {
        0 => {
            let (ang, d) = (rng.gen_range(0.0..6.28), rng.gen_range(0.0..0.7 * hi));
            let r = r2(rng, 0.3, 1.0);
            format!(
                "F[{lo},{hi}](norm2(robot.xy - [{:.2},{:.2}]) < {r})",
                robot[0] + d * f64::cos(ang),
                robot[1] + d * f64::sin(ang)
            )
        }
        1 => {
            let g = [r2(rng, -4.0, 4.0), r2(rng, -4.0, 4.0), 0.0];
            entities.insert("goal".to_string(), g);
            rates.insert("goal".to_string(), [r2(rng, -0.3, 0.3), r2(rng, -0.3, 0.3), 0.0]);
            format!("F[{lo},{hi}](norm2(robot.xy - goal.xy) < {})", r2(rng, 0.4, 1.0))
        }
        2 => format!("F[{lo},{hi}](abs(robot.z - {}) < {})", r2(rng, 0.2, 1.5), r2(rng, 0.05, 0.2)),
        _ => format!("F[{lo},{hi}](robot.d > {})", r2(rng, 0.1, 1.2)),
    };
    let text = if rng.gen_bool(0.6) {
        let a_hi = rng.gen_range(3..=12) as f64;
        let a_lo = if rng.gen_bool(0.3) { rng.gen_range(1..=2) as f64 } else { 0.0 };
        // Open windows start with margin so the constraint holds at activation.
        let always = match rng.gen_range(0..3) {
            0 => format!("G[{a_lo},{a_hi}](robot.x < {:.2})", robot[0] + rng.gen_range(0.3..4.0)),
            1 => format!("G[{a_lo},{a_hi}](robot.y > {:.2})", robot[1] - rng.gen_range(0.3..4.0)),
            _ => {
                let ang = rng.gen_range(0.0..6.28);
                let r = r2(rng, 0.3, 1.0);
                let d = r + rng.gen_range(0.3..3.0);
                format!(
                    "G[{a_lo},{a_hi}](norm2(robot.xy - [{:.2},{:.2}]) > {r})",
                    robot[0] + d * f64::cos(ang),
                    robot[1] + d * f64::sin(ang)
                )
            }
        };
        format!("({reach}) & ({always})")
    } else {
        reach
    };
    Case {
        text,
        robot,
        entities,
        rates,
    }
}

/// End of the part of the window the obligation still has to meet.
fn life_end(kind: PropKind, w: Bounds, b: &BarrierInstance) -> f64 {
    match kind {
        PropKind::Always => w.hi,
        _ => b.t_dead,
    }
}

#[derive(Default)]
struct Tally {
    qualifying: usize,
    relaxed: usize,
    eventually: usize,
    reached: usize,
    always: usize,
    always_violations: usize,
    invariance_checks: usize,
    invariance_failures: usize,
    worst_decay: f64,
    worst_kkt: f64,
    first_failure: Option<String>,
}

fn simulate(case: &Case, params: BarrierParams, tally: &mut Tally) {
    let f = parse_spec(&case.text).unwrap();
    let (_, props, _) = abstract_formula(&f, "");
    let templates = make_templates(&props, params);
    let cfg = ControlConfig {
        dt: DT,
        ..ControlConfig::default()
    };
    let bounds = ControlBounds::default();
    let mut robot = case.robot;
    let mut entities = case.entities.clone();
    let env = Overlay {
        robot,
        entities: &entities,
    };
    let mut barriers: Vec<(usize, BarrierInstance)> = Vec::new();
    for (i, t) in templates.iter().enumerate() {
        for b in instantiate(t, 0.0, 0.0, &env, &cfg) {
            barriers.push((i, b));
        }
    }
    let end = barriers
        .iter()
        .map(|(i, b)| life_end(templates[*i].kind, templates[*i].window, b))
        .fold(0.0, f64::max);
    let steps = (end / DT).round() as usize;
    // Per template: reached inside window, in-window violation seen.
    let mut reached = vec![false; templates.len()];
    let mut broken = vec![false; templates.len()];
    let mut invariance = Vec::new();
    let mut kkt: f64 = 0.0;
    let mut prev: Option<Vec<Option<f64>>> = None;
    for k in 0..=steps {
        let t = k as f64 * DT;
        let env = Overlay {
            robot,
            entities: &entities,
        };
        let alive: Vec<bool> = barriers
            .iter()
            .map(|(i, b)| t <= life_end(templates[*i].kind, templates[*i].window, b) + 1e-9)
            .collect();
        let values: Vec<Option<f64>> = barriers
            .iter()
            .zip(&alive)
            .map(|((_, b), &a)| a.then(|| b.predicate().margin(&env).unwrap() - b.gamma(t)))
            .collect();
        if let Some(p) = &prev {
            for (j, (_, b)) in barriers.iter().enumerate() {
                if let (Some(before), Some(now)) = (p[j], values[j]) {
                    invariance.push(now - (1.0 - b.gain * DT) * before);
                }
            }
        }
        for (i, tpl) in templates.iter().enumerate() {
            let w = tpl.window;
            if t < w.lo - 1e-9 || t > w.hi + 1e-9 {
                continue;
            }
            let preds: &[Predicate] = &tpl.reach;
            let holds = preds.iter().all(|p| p.margin(&env).unwrap() >= 0.0);
            match tpl.kind {
                PropKind::Always => broken[i] |= !holds,
                _ => reached[i] |= holds,
            }
        }
        if k == steps {
            break;
        }
        let live: Vec<&BarrierInstance> = barriers.iter().zip(&alive).filter(|(_, a)| **a).map(|((_, b), _)| b).collect();
        let out = generate_control(&live, t, &env, &case.rates, &bounds, DT);
        if out.relaxed || out.error.is_some() {
            tally.relaxed += 1;
            return;
        }
        kkt = kkt.max(out.kkt_residual);
        robot = integrate(&robot, &out.u, DT);
        for (name, rate) in &case.rates {
            let p = entities.get_mut(name).unwrap();
            for c in 0..3 {
                p[c] += rate[c] * DT;
            }
        }
        prev = Some(values);
    }
    tally.qualifying += 1;
    tally.worst_kkt = tally.worst_kkt.max(kkt);
    for d in invariance {
        tally.invariance_checks += 1;
        tally.worst_decay = tally.worst_decay.min(d);
        if d < -INVARIANCE_TOL {
            tally.invariance_failures += 1;
            tally.first_failure.get_or_insert_with(|| format!("invariance {d:.2e} in {}", case.text));
        }
    }
    for (i, tpl) in templates.iter().enumerate() {
        match tpl.kind {
            PropKind::Always => {
                tally.always += 1;
                if broken[i] {
                    tally.always_violations += 1;
                    tally.first_failure.get_or_insert_with(|| format!("always broken in {}", case.text));
                }
            }
            PropKind::Eventually => {
                tally.eventually += 1;
                if reached[i] {
                    tally.reached += 1;
                } else {
                    tally.first_failure.get_or_insert_with(|| format!("not reached in {}", case.text));
                }
            }
            _ => {}
        }
    }
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = BarrierParams::default();
    let mut tally = Tally::default();
    let mut tries = 0;
    while tally.qualifying < WANTED && tries < MAX_TRIES {
        tries += 1;
        let case = random_case(&mut rng);
        simulate(&case, params, &mut tally);
    }
    let pass = tally.qualifying >= WANTED
        && tally.reached == tally.eventually
        && tally.always_violations == 0
        && tally.invariance_failures == 0;
    Outcome::new(
        pass,
        format!(
            "{} qualifying of {tries} ({} relaxed); eventually reached {}/{}; always violated {}/{}; invariance failures {}/{} (worst {:.2e}); max KKT {:.1e}{}",
            tally.qualifying,
            tally.relaxed,
            tally.reached,
            tally.eventually,
            tally.always_violations,
            tally.always,
            tally.invariance_failures,
            tally.invariance_checks,
            tally.worst_decay,
            tally.worst_kkt,
            tally.first_failure.map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}
