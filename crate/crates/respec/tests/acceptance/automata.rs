use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use respec_core::abstraction::prep_spec;
use respec_core::buchi::{intersect, ltl_to_buchi};
use respec_core::clock::NullClock;
use respec_core::ltl::{LassoWord, Ltl};
use respec_core::modify::modify;
use respec_core::runner::Runner;
use respec_core::runtime::RuntimeConfig;
use respec_core::scenario::{builtin_world, collect_formula};
use respec_core::spec::parse_modification;
use respec_core::world::{Entity, EntityKind};

use crate::{lasso_oracle, Outcome};

pub fn oracle() -> Outcome {
    let r = lasso_oracle::run(6, 3, 3);
    let pass = r.mismatches.is_empty() && r.formulas > 0;
    Outcome::new(
        pass,
        format!(
            "{} formulas x {} lassos, {} checks, {} mismatches, largest automaton {} states{}",
            r.formulas,
            r.words,
            r.checks,
            r.mismatches.len(),
            r.max_states,
            r.mismatches.first().map(|m| format!(", first: {m:?}")).unwrap_or_default()
        ),
    )
}

fn random_ltl(rng: &mut ChaCha8Rng, props: &[&str], size: usize) -> Ltl {
    if size <= 1 {
        return Ltl::prop(props[rng.gen_range(0..props.len())]);
    }
    match rng.gen_range(0..7) {
        0 => Ltl::not(random_ltl(rng, props, size - 1)),
        1 => Ltl::next(random_ltl(rng, props, size - 1)),
        2 => Ltl::eventually(random_ltl(rng, props, size - 1)),
        3 => Ltl::always(random_ltl(rng, props, size - 1)),
        k if size >= 3 => {
            let left = rng.gen_range(1..size - 1);
            let (a, b) = (random_ltl(rng, props, left), random_ltl(rng, props, size - 1 - left));
            match k {
                4 => Ltl::and(a, b),
                5 => Ltl::or(a, b),
                _ => Ltl::until(a, b),
            }
        }
        _ => Ltl::eventually(random_ltl(rng, props, size - 1)),
    }
}

fn random_lasso(rng: &mut ChaCha8Rng, props: &[&str]) -> LassoWord {
    let letter = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
        props.iter().filter(|_| rng.gen_bool(0.5)).map(|p| p.to_string()).collect()
    };
    let prefix = (0..rng.gen_range(0..=4)).map(|_| letter(rng)).collect();
    let cycle = (0..rng.gen_range(1..=4)).map(|_| letter(rng)).collect();
    LassoWord { prefix, cycle }
}

pub fn intersection_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut agree, mut semantic, mut size_ok) = (0, 0, 0);
    let mut worst_ratio: f64 = 0.0;
    const N: usize = 1000;
    for _ in 0..N {
        let (n1, n2) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let f1 = random_ltl(&mut rng, &["p", "q"], n1);
        let f2 = random_ltl(&mut rng, &["q", "r"], n2);
        let b1 = ltl_to_buchi(&f1);
        let b2 = ltl_to_buchi(&f2);
        let prod = intersect(&b1, &b2, b1.initial(), b2.initial());
        let w = random_lasso(&mut rng, &["p", "q", "r"]);
        let both = b1.accepts_lasso(&w) && b2.accepts_lasso(&w);
        agree += usize::from(prod.accepts_lasso(&w) == both);
        semantic += usize::from(both == (f1.eval_lasso(&w) && f2.eval_lasso(&w)));
        let cap = b1.len() * b2.len() * 3;
        size_ok += usize::from(prod.len() <= cap);
        worst_ratio = worst_ratio.max(prod.len() as f64 / cap as f64);
    }
    Outcome::new(
        agree == N && semantic == N && size_ok == N,
        format!(
            "{agree}/{N} product agrees, {semantic}/{N} components match semantics, {size_ok}/{N} within |S1||S2|*3 (largest ratio {worst_ratio:.2})"
        ),
    )
}

const AVOID: &str = "G[0,100](norm2(robot.xy - cone1.xy) > 0.3 & norm2(robot.xy - cone2.xy) > 0.3)";

pub fn ordering() -> Outcome {
    let mut script = builtin_world("collect-two-depots").unwrap();
    script.modifications.clear();
    for (name, pos) in [("cone1", [3.0, 3.35, 0.0]), ("cone2", [2.2, 2.45, 0.0])] {
        script.entities.push(Entity {
            name: name.into(),
            kind: EntityKind::Cone,
            pos,
        });
    }
    let mut r = Runner::new(script, RuntimeConfig::default(), &NullClock).unwrap();
    let base = r.ctx.b_set[0].clone();
    let alt_doc = builtin_world("collect-two-depots").unwrap().modifications[0]
        .command
        .trim_start_matches("add-disj ")
        .to_string();
    let (lets, _) = alt_doc.split_at(alt_doc.find("(G(").unwrap());
    let text = format!(
        "replace {lets}(({}) & ({AVOID})) | ({})",
        collect_formula("obj1", "dep1", "", 30.0),
        collect_formula("obj1", "dep2", "_2", 30.0)
    );
    let cmd = parse_modification(&text, &r.ctx.aliases, None).unwrap();
    let rep = modify(&mut r.ctx, &cmd, &r.world.state, &NullClock);
    if !rep.ok {
        return Outcome::new(false, format!("replace rejected: {:?}", rep.error));
    }
    let params = r.ctx.config.params;
    let b1 = prep_spec(&r.ctx.scopes[1].formula, "k1:", params, &NullClock).buchi;
    let b2 = prep_spec(&r.ctx.scopes[2].formula, "k2:", params, &NullClock).buchi;
    let expected = [intersect(&base, &b1, base.initial(), b1.initial()).fingerprint(), b2.fingerprint()];
    let wrong = [expected[0], intersect(&b2, &b1, b2.initial(), b1.initial()).fingerprint()];
    let got: Vec<u64> = r.ctx.b_set.iter().map(|b| b.fingerprint()).collect();
    let ops: Vec<String> = rep.additions.iter().map(|(op, _)| format!("{op:?}")).collect();
    Outcome::new(
        got == expected && got != wrong,
        format!(
            "additions {ops:?}; B_set = [{:016x}, {:016x}], expected [B x B1 = {:016x}, B2 = {:016x}], other order gives B2 x B1 = {:016x}",
            got[0], got.get(1).copied().unwrap_or(0), expected[0], expected[1], wrong[1]
        ),
    )
}
