//! The control loop: apply pending modifications, update truth, pick a
//! transition in every automaton, choose which automaton to follow, compute
//! the control, check for pre-failure and advance the world.

use alloc::{
    collections::{BTreeMap, BTreeSet},
    format,
    string::String,
    vec::Vec,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{predicate_table, prep_spec, BarrierParams, BarrierTemplate, PropKind};
use crate::buchi::Buchi;
use crate::cbf::{
    generate_control, instantiate, no_path_warning, pre_failure, BarrierInstance, ControlConfig, EntityRates,
    PreFailureWarning, Role, RowReport,
};
use crate::clock::Clock;
use crate::modify::{modify, Composition, ModReport, Scope};
use crate::monitor::{choose_props, pick_transition_with, ChoiceMethod, Monitor, Status, StatusChange};
use crate::spec::{AliasTable, Env, Predicate, SpecFormula, STATE_DIM};
use crate::spec::ModificationCommand;
use crate::world::{ControlBounds, World, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeConfig {
    pub method: ChoiceMethod,
    pub params: BarrierParams,
    pub control: ControlConfig,
    pub bounds: ControlBounds,
    /// Modifications estimated to take longer than this pause execution.
    pub pause_budget_ms: f64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        let control = ControlConfig::default();
        RuntimeConfig {
            method: ChoiceMethod::Reevaluate,
            params: BarrierParams::default(),
            control,
            bounds: ControlBounds::default(),
            pause_budget_ms: 0.5 * control.dt * 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ConfigError {
    #[error("gain times step must be below 1 (got {0})")]
    GainTooLarge(f64),
    #[error("barrier parameters must satisfy delta_sat > 0, epsilon >= 0, gain > 0")]
    Params,
    #[error("time step must be positive")]
    Step,
    #[error("speed caps must be positive")]
    Caps,
}

impl RuntimeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = self.params;
        if !(p.delta_sat > 0.0 && p.epsilon >= 0.0 && p.gain > 0.0) {
            return Err(ConfigError::Params);
        }
        if !(self.control.dt > 0.0) {
            return Err(ConfigError::Step);
        }
        if p.gain * self.control.dt >= 1.0 {
            return Err(ConfigError::GainTooLarge(p.gain * self.control.dt));
        }
        if self.bounds.caps.iter().any(|c| !(*c > 0.0)) {
            return Err(ConfigError::Caps);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum InitError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("specification is violated at initialization: {}", .0.join(", "))]
    TriviallyViolatedAtInit(Vec<String>),
}

/// Everything the loop and the modification engine operate on.
#[derive(Clone, Debug)]
pub struct RuntimeContext {
    /// The running specification, with additions composed in.
    pub psi: SpecFormula,
    pub aliases: AliasTable,
    pub composition: Composition,
    pub scopes: Vec<Scope>,
    pub b_set: Vec<Buchi>,
    pub states: Vec<usize>,
    pub monitor: Monitor,
    pub templates: BTreeMap<String, BarrierTemplate>,
    pub barriers: Vec<BarrierInstance>,
    pub config: RuntimeConfig,
    pub step: u64,
    pub t: f64,
    /// Automaton followed at the last step.
    pub chosen: usize,
    pub prep_ms: f64,
    prev_positions: Option<BTreeMap<String, [f64; 3]>>,
    /// Per automaton: latched literals and the distances they induce.
    pub(crate) dist_cache: Vec<Option<(Vec<Option<bool>>, Vec<u32>)>>,
}

impl RuntimeContext {
    /// Predicate functions per proposition.
    pub fn h(&self) -> BTreeMap<String, Vec<Predicate>> {
        let props: Vec<_> = self.monitor.props.values().cloned().collect();
        predicate_table(&props)
    }

    /// Starts barriers for a freshly activated obligation.
    pub fn start_barriers(&mut self, prop: &str, env: &dyn Env) {
        let Some(inst) = self.monitor.instances.get(prop) else { return };
        let Some(tpl) = self.templates.get(prop) else { return };
        self.barriers.retain(|b| b.prop != prop);
        let fresh = instantiate(tpl, inst.t_act, self.t, env, &self.config.control);
        self.barriers.extend(fresh);
    }

    pub fn drop_barriers(&mut self, prop: &str) {
        self.barriers.retain(|b| b.prop != prop);
    }

    pub fn dt(&self) -> f64 {
        self.config.control.dt
    }

    /// Whether every automaton sits where every continuation is accepting and
    /// no obligation is running.
    pub fn globally_accepted(&self) -> bool {
        self.monitor.instances.values().all(|i| !i.is_live())
            && self
                .b_set
                .iter()
                .zip(&self.states)
                .all(|(b, &s)| b.forward_reachable(s).into_iter().all(|q| b.is_accepting(q)))
    }

    /// Entity velocities from the last two snapshots, ignoring jumps.
    fn entity_rates(&self, state: &WorldState, jumped: &BTreeSet<String>) -> EntityRates {
        let mut rates = EntityRates::new();
        let Some(prev) = &self.prev_positions else { return rates };
        for (name, e) in &state.entities {
            if jumped.contains(name) || state.held.as_deref() == Some(name.as_str()) {
                continue;
            }
            if let Some(p) = prev.get(name) {
                let v = [
                    (e.pos[0] - p[0]) / self.dt(),
                    (e.pos[1] - p[1]) / self.dt(),
                    (e.pos[2] - p[2]) / self.dt(),
                ];
                if v.iter().any(|x| *x != 0.0) {
                    rates.insert(name.clone(), v);
                }
            }
        }
        rates
    }
}

/// Builds the context for `psi` (prepSpec plus the initial automaton list)
/// and activates the obligations that are not guarded by a trigger.
pub fn init(
    psi: &SpecFormula,
    aliases: &AliasTable,
    world: &WorldState,
    config: RuntimeConfig,
    clock: &dyn Clock,
) -> Result<RuntimeContext, InitError> {
    config.validate()?;
    let r = prep_spec(psi, "", config.params, clock);
    let mut monitor = Monitor::new();
    monitor.extend(&r.props, &r.triggers);
    let mut ctx = RuntimeContext {
        psi: psi.clone(),
        aliases: aliases.clone(),
        composition: Composition::Base(0),
        scopes: alloc::vec![Scope {
            prefix: String::new(),
            formula: psi.clone(),
            gamma: r.gamma.clone(),
        }],
        b_set: alloc::vec![r.buchi],
        states: alloc::vec![r.s0],
        monitor,
        templates: r.templates.into_iter().map(|t| (t.prop.clone(), t)).collect(),
        barriers: Vec::new(),
        config,
        step: 0,
        t: 0.0,
        chosen: 0,
        prep_ms: r.prep_ms,
        prev_positions: None,
        dist_cache: Vec::new(),
    };
    // Trivial violation: an unguarded obligation whose window is open at
    // start and whose predicates already fail.
    let mut probe = ctx.monitor.clone();
    let started = probe.activate_unguarded("", 0.0);
    probe.update(0.0, world, &BTreeSet::new());
    let mut offending = Vec::new();
    for id in &started {
        if probe.status(id) == Status::Violated {
            offending.extend(probe.props[id].predicates().map(|q| format!("{id}: {q}")));
        }
    }
    if !offending.is_empty() {
        return Err(InitError::TriviallyViolatedAtInit(offending));
    }
    for id in ctx.monitor.activate_unguarded("", 0.0) {
        ctx.start_barriers(&id, world);
    }
    Ok(ctx)
}

/// Per-step report (Algorithm outputs plus diagnostics).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub t: f64,
    pub u: [f64; STATE_DIM],
    pub chosen: Option<usize>,
    pub activated: Vec<String>,
    /// Score of each automaton; `None` when it has no accepting path.
    pub rhoset: Vec<Option<f64>>,
    pub states: Vec<usize>,
    pub warnings: Vec<PreFailureWarning>,
    pub violations: Vec<String>,
    /// Violations of obligations outside the followed automaton.
    pub abandoned: Vec<String>,
    pub changes: Vec<StatusChange>,
    pub rows: Vec<RowReport>,
    pub relaxed: bool,
    pub kkt_residual: f64,
    pub modifications: Vec<ModReport>,
    pub compute_ms: f64,
}

/// One pass of the loop at the context's current time. `events` are the
/// atoms firing now; `mods` are applied first.
pub fn run_step(
    ctx: &mut RuntimeContext,
    world: &mut World,
    events: &BTreeSet<String>,
    mods: &[ModificationCommand],
    clock: &dyn Clock,
) -> StepReport {
    let start = clock.now_ms();
    let t = ctx.t;
    world.state.events = events.clone();

    let mut mod_reports = Vec::new();
    for m in mods {
        mod_reports.push(modify(ctx, m, &world.state, clock));
    }

    // Truth, trigger activations and instance progress.
    let upd = ctx.monitor.update(t, &world.state, events);
    for id in &upd.activated {
        ctx.start_barriers(id, &world.state);
    }
    let followed = ctx.chosen.min(ctx.b_set.len() - 1);
    let mut violations = Vec::new();
    let mut abandoned = Vec::new();
    for c in &upd.changes {
        ctx.drop_barriers(&c.prop);
        if c.status == Status::Violated {
            if ctx.b_set[followed].prop_index(&c.prop).is_some() {
                violations.push(c.prop.clone());
            } else {
                abandoned.push(c.prop.clone());
            }
        }
    }

    // Transition choice in every automaton.
    let mut rhoset = Vec::with_capacity(ctx.b_set.len());
    let mut choices = Vec::with_capacity(ctx.b_set.len());
    ctx.dist_cache.resize(ctx.b_set.len(), None);
    for (j, b) in ctx.b_set.iter().enumerate() {
        let lits = ctx.monitor.literals(b);
        let truth = b.truth_vector(&|p| ctx.monitor.holds(p));
        let latched = ctx.monitor.latched(b);
        let cache = &mut ctx.dist_cache[j];
        if cache.as_ref().map_or(true, |(l, _)| *l != latched) {
            let dist = b.distances_under(&latched);
            *cache = Some((latched, dist));
        }
        let dist = &cache.as_ref().expect("filled above").1;
        let c = pick_transition_with(b, ctx.states[j], &lits, &truth, dist);
        rhoset.push(c.as_ref().map(|c| c.rho));
        choices.push(c);
    }
    for (j, c) in choices.iter().enumerate() {
        if let Some(c) = c {
            ctx.states[j] = c.next;
        }
    }
    let chosen = choose_props(&rhoset);
    let mut warnings = Vec::new();
    let mut activated = Vec::new();
    if let Some(k) = chosen {
        let b = &ctx.b_set[k];
        let c = choices[k].as_ref().expect("chosen automaton has a choice");
        activated = c.activated.iter().map(|&i| b.alphabet()[i as usize].clone()).collect();
        if ctx.config.method == ChoiceMethod::Commit && ctx.b_set.len() > 1 {
            let keep_b = ctx.b_set.swap_remove(k);
            let keep_s = ctx.states[k];
            ctx.b_set = alloc::vec![keep_b];
            ctx.states = alloc::vec![keep_s];
            ctx.dist_cache.clear();
            rhoset = alloc::vec![rhoset[k]];
            ctx.chosen = 0;
        } else {
            ctx.chosen = k;
        }
    } else {
        warnings.push(no_path_warning(ctx.chosen));
    }
    // Obligations the planner needs now but no trigger has started.
    for id in &activated {
        if ctx.monitor.status(id) == Status::Inactive && ctx.monitor.activate(id, t) {
            ctx.start_barriers(id, &world.state);
            let m = ctx.monitor.margins.get(id).copied();
            if let (Some(m), Some(inst)) = (m, ctx.monitor.instances.get_mut(id)) {
                inst.update(t, m.reach, m.hold);
            }
        }
    }

    // Control from the followed automaton's obligations.
    let alphabet: BTreeSet<&str> = match chosen {
        Some(_) => ctx.b_set[ctx.chosen].alphabet().iter().map(String::as_str).collect(),
        None => BTreeSet::new(),
    };
    let act: BTreeSet<&str> = activated.iter().map(String::as_str).collect();
    let control_set: Vec<&BarrierInstance> = ctx
        .barriers
        .iter()
        .filter(|b| ctx.monitor.status(&b.prop) == Status::Active && alphabet.contains(b.prop.as_str()))
        .filter(|b| match (b.kind, b.role) {
            (PropKind::Always, _) | (_, Role::Hold) => true,
            _ => act.contains(b.prop.as_str()),
        })
        .collect();
    let rates = ctx.entity_rates(&world.state, world.jumped());
    let out = generate_control(&control_set, t, &world.state, &rates, &ctx.config.bounds, ctx.dt());
    let reach: Vec<&BarrierInstance> = control_set.iter().copied().filter(|b| b.role == Role::Reach).collect();
    warnings.extend(pre_failure(&reach, t, &world.state, &rates, &ctx.config.bounds));

    ctx.prev_positions = Some(world.state.positions());
    ctx.step += 1;
    let t_next = ctx.step as f64 * ctx.dt();
    world.step(&out.u, ctx.dt(), t_next);
    ctx.t = t_next;

    StepReport {
        step: ctx.step - 1,
        t,
        u: out.u,
        chosen: chosen.map(|_| ctx.chosen),
        activated,
        rhoset,
        states: ctx.states.clone(),
        warnings,
        violations,
        abandoned,
        changes: upd.changes,
        rows: out.rows,
        relaxed: out.relaxed,
        kkt_residual: out.kkt_residual,
        modifications: mod_reports,
        compute_ms: clock.now_ms() - start,
    }
}
