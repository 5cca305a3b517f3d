//! Scenario scripts and the packaged pick-and-place worlds.

use alloc::{
    format,
    string::{String, ToString},
    vec,
    vec::Vec,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitor::ChoiceMethod;
use crate::spec::STATE_DIM;
use crate::world::{Entity, EntityKind, TimedEvent, TimedMove};

/// A modification issued by the script, at a time or on the first
/// pre-failure warning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedModification {
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub on_warning: bool,
    pub command: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    #[serde(default)]
    pub name: String,
    /// Specification document text.
    pub spec: String,
    pub robot0: [f64; STATE_DIM],
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub events: Vec<TimedEvent>,
    #[serde(default)]
    pub moves: Vec<TimedMove>,
    #[serde(default)]
    pub modifications: Vec<ScriptedModification>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub method: ChoiceMethod,
}

fn default_dt() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("{0} timestamps must be nondecreasing")]
    Unordered(&'static str),
    #[error("time step and duration must be positive and finite")]
    Timing,
    #[error("entity `{0}` has a non-finite position")]
    NonFinite(String),
}

impl ScenarioScript {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(ScenarioError::Timing);
        }
        let sorted = |ts: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = ts.collect();
            v.windows(2).all(|w| w[0] <= w[1])
        };
        if !sorted(&mut self.events.iter().map(|e| e.t)) {
            return Err(ScenarioError::Unordered("event"));
        }
        if !sorted(&mut self.moves.iter().map(|m| m.t)) {
            return Err(ScenarioError::Unordered("move"));
        }
        if !sorted(&mut self.modifications.iter().filter_map(|m| m.t)) {
            return Err(ScenarioError::Unordered("modification"));
        }
        for e in &self.entities {
            if e.pos.iter().any(|v| !v.is_finite()) {
                return Err(ScenarioError::NonFinite(e.name.clone()));
            }
        }
        for m in &self.moves {
            if m.to.iter().any(|v| !v.is_finite()) {
                return Err(ScenarioError::NonFinite(m.entity.clone()));
            }
        }
        Ok(())
    }
}

/// Names accepted by [`builtin_world`].
pub const BUILTIN: [&str; 8] = [
    "alarm",
    "collect",
    "collect-far",
    "collect-far-nomod",
    "collect-obj2",
    "collect-cones",
    "collect-two-depots",
    "collect-two-depots-move",
];

/// Distance, heading and height aliases for one object and one depot.
fn aliases(obj: &str, dep: &str, suffix: &str) -> String {
    format!(
        "let d_obj{s} = norm2(robot.xy - {obj}.xy)\n\
         let d_dep{s} = norm2(robot.xy - {dep}.xy)\n\
         let theta_obj{s} = abs(wrap(robot.theta - atan2({obj}.y - robot.y, {obj}.x - robot.x) + pi/2))\n\
         let theta_dep{s} = abs(wrap(robot.theta - atan2({dep}.y - robot.y, {dep}.x - robot.x) + pi/2))\n",
        s = suffix
    )
}

/// The pick-and-place task over the aliases with `suffix`.
pub fn collect_formula(obj: &str, dep: &str, suffix: &str, pick_window: f64) -> String {
    let s = suffix;
    format!(
        "(G(pick => F[0,{pick_window}](d_obj{s} < 1))) \
         & (G(d_obj{s} < 1 => F[0,15](theta_obj{s} < 0.1))) \
         & (G(d_obj{s} < 1 & theta_obj{s} < 0.1 => (F[0,10](abs(robot.z - {obj}.z) < 0.05 & abs(robot.d - d_obj{s}) < 0.05)) & (F[10,15](robot.beta < 1)))) \
         & (G(robot.beta < 1 => (robot.beta < 1) U[0,25](d_dep{s} < 1 & robot.d < 0.2 & abs(robot.z - {dep}.z) < 0.1))) \
         & (G(d_dep{s} < 1 => (F[0,20](theta_dep{s} < 0.1 & abs(robot.d - d_dep{s}) < 0.05)) & (F[20,25](robot.beta > 3))))"
    )
}

/// The pick-and-place document for `obj1` and `dep1`.
pub fn collect_spec() -> String {
    format!("{}{}", aliases("obj1", "dep1", ""), collect_formula("obj1", "dep1", "", 30.0))
}

fn entity(name: &str, kind: EntityKind, pos: [f64; 3]) -> Entity {
    Entity {
        name: name.into(),
        kind,
        pos,
    }
}

fn pick_at(t: f64) -> Vec<TimedEvent> {
    vec![TimedEvent { t, name: "pick".into() }]
}

fn at(t: f64, command: &str) -> ScriptedModification {
    ScriptedModification {
        t: Some(t),
        on_warning: false,
        command: command.into(),
    }
}

/// Robot pose with the arm retracted, gripper raised halfway and open.
const ROBOT0: [f64; STATE_DIM] = [4.0, 4.0, 0.0, 0.0, 0.5, 3.5];

fn collect_base(name: &str) -> ScenarioScript {
    ScenarioScript {
        name: name.into(),
        spec: collect_spec(),
        robot0: ROBOT0,
        entities: vec![
            entity("obj1", EntityKind::Object, [1.0, 1.5, 0.3]),
            entity("dep1", EntityKind::Depot, [4.5, 0.5, 0.2]),
        ],
        events: pick_at(1.0),
        moves: Vec::new(),
        modifications: Vec::new(),
        dt: 0.1,
        duration: 150.0,
        method: ChoiceMethod::Reevaluate,
    }
}

/// A packaged scenario by name.
pub fn builtin_world(name: &str) -> Result<ScenarioScript, ScenarioError> {
    let s = match name {
        "alarm" => ScenarioScript {
            name: name.into(),
            spec: "G(alarm => F[0,7](norm2(robot.xy - [3,4]) < 1))".into(),
            robot0: [0.0, 0.0, 0.0, 0.0, 0.5, 3.5],
            entities: Vec::new(),
            events: vec![TimedEvent {
                t: 1.0,
                name: "alarm".into(),
            }],
            moves: Vec::new(),
            modifications: Vec::new(),
            dt: 0.1,
            duration: 10.0,
            method: ChoiceMethod::Reevaluate,
        },
        "collect" => collect_base(name),
        "collect-far" | "collect-far-nomod" => {
            let mut s = collect_base(name);
            s.robot0 = [0.0, 0.0, 0.0, 0.0, 0.5, 3.5];
            s.entities = vec![
                entity("obj1", EntityKind::Object, [40.0, 0.0, 0.3]),
                entity("dep1", EntityKind::Depot, [42.0, -3.0, 0.2]),
            ];
            s.duration = 60.0;
            if name == "collect-far" {
                s.modifications = vec![ScriptedModification {
                    t: None,
                    on_warning: true,
                    command: "set-bounds @0.1 [0,45]".into(),
                }];
            }
            s
        }
        "collect-obj2" => {
            let mut s = collect_base(name);
            s.spec = format!(
                "{}let d_obj2 = norm2(robot.xy - obj2.xy)\n\
                 let theta_obj2 = abs(wrap(robot.theta - atan2(obj2.y - robot.y, obj2.x - robot.x) + pi/2))\n{}",
                aliases("obj1", "dep1", ""),
                collect_formula("obj1", "dep1", "", 30.0)
            );
            s.entities.push(entity("obj2", EntityKind::Object, [2.0, 4.5, 0.4]));
            s.modifications = vec![
                at(5.0, "set-pred d_obj := d_obj2"),
                at(5.0, "set-pred theta_obj := theta_obj2"),
                at(5.0, "set-pred obj1.z := obj2.z"),
                at(5.0, "set-pred robot.d < 0.2 := robot.d < 0.05"),
            ];
            s
        }
        "collect-cones" => {
            let mut s = collect_base(name);
            s.entities.push(entity("cone1", EntityKind::Cone, [3.0, 3.35, 0.0]));
            s.entities.push(entity("cone2", EntityKind::Cone, [2.2, 2.45, 0.0]));
            s.modifications = vec![at(
                8.0,
                "add-conj G[0,100](norm2(robot.xy - cone1.xy) > 0.3 & norm2(robot.xy - cone2.xy) > 0.3)",
            )];
            s
        }
        "collect-two-depots" | "collect-two-depots-move" => {
            let mut s = collect_base(name);
            s.entities.push(entity("dep2", EntityKind::Depot, [1.0, 3.6, 0.2]));
            let alt = format!(
                "{}{}",
                aliases("obj1", "dep2", "_2"),
                collect_formula("obj1", "dep2", "_2", 30.0)
            );
            s.modifications = vec![at(0.5, &format!("add-disj {}", alt))];
            if name == "collect-two-depots-move" {
                s.moves = vec![TimedMove {
                    t: 70.0,
                    entity: "dep2".into(),
                    to: [-20.0, 3.6, 0.2],
                    duration: 0.0,
                }];
            }
            s
        }
        other => return Err(ScenarioError::UnknownScenario(other.to_string())),
    };
    Ok(s)
}
