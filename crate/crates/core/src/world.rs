//! Kinematic simulation of a mobile manipulator among scripted entities.
//!
//! The robot state is `[x, y, theta, d, z, beta]`: base position and heading,
//! arm extension, gripper height and gripper aperture. Every channel is a
//! single integrator. The arm points to the left of the heading, so the
//! gripper sits at `base + d (cos(theta + pi/2), sin(theta + pi/2))` at
//! height `z`.

use alloc::{
    collections::{BTreeMap, BTreeSet},
    string::String,
    vec::Vec,
};
use core::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::spec::{wrap_angle, Env, STATE_DIM};

/// Gripper aperture below which an object near the gripper is held.
pub const GRASP_BELOW: f64 = 1.0;
/// Gripper aperture above which a held object is released.
pub const RELEASE_ABOVE: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    /// Per-channel speed caps for `[vx, vy, omega, vd, vz, vbeta]`.
    pub caps: [f64; STATE_DIM],
}

impl Default for ControlBounds {
    fn default() -> Self {
        ControlBounds {
            caps: [1.0, 1.0, 1.0, 0.3, 0.3, 0.3],
        }
    }
}

impl ControlBounds {
    pub fn contains(&self, u: &[f64; STATE_DIM], tol: f64) -> bool {
        u.iter().zip(&self.caps).all(|(v, c)| v.abs() <= c + tol)
    }

    pub fn clamp(&self, u: &mut [f64; STATE_DIM]) {
        for (v, c) in u.iter_mut().zip(&self.caps) {
            *v = v.clamp(-c, *c);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Object,
    Depot,
    Cone,
    Obstacle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub kind: EntityKind,
    pub pos: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t: f64,
    pub name: String,
}

/// Moves an entity to `to`, linearly over `duration` seconds, or instantly
/// when `duration` is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedMove {
    pub t: f64,
    pub entity: String,
    pub to: [f64; 3],
    #[serde(default)]
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deposit {
    pub t: f64,
    pub object: String,
    pub depot: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Gripper-to-object distance within which closing the gripper grasps.
    pub grasp_radius: f64,
    /// Planar object-to-depot distance within which a release counts as a
    /// deposit.
    pub depot_radius: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            grasp_radius: 0.15,
            depot_radius: 0.6,
        }
    }
}

/// A complete snapshot of the simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: f64,
    pub robot: [f64; STATE_DIM],
    pub entities: BTreeMap<String, Entity>,
    /// Events firing at this instant.
    pub events: BTreeSet<String>,
    pub held: Option<String>,
    pub deposits: Vec<Deposit>,
}

impl WorldState {
    pub fn new(robot: [f64; STATE_DIM], entities: impl IntoIterator<Item = Entity>) -> Self {
        let mut robot = robot;
        robot[2] = wrap_angle(robot[2]);
        WorldState {
            t: 0.0,
            robot,
            entities: entities.into_iter().map(|e| (e.name.clone(), e)).collect(),
            events: BTreeSet::new(),
            held: None,
            deposits: Vec::new(),
        }
    }

    pub fn gripper(&self) -> [f64; 3] {
        gripper_position(&self.robot)
    }

    pub fn positions(&self) -> BTreeMap<String, [f64; 3]> {
        self.entities.iter().map(|(k, e)| (k.clone(), e.pos)).collect()
    }
}

impl Env for WorldState {
    fn robot(&self) -> [f64; STATE_DIM] {
        self.robot
    }

    fn entity(&self, name: &str) -> Option<[f64; 3]> {
        self.entities.get(name).map(|e| e.pos)
    }
}

/// Robot state with substituted entity positions.
pub struct Overlay<'a> {
    pub robot: [f64; STATE_DIM],
    pub entities: &'a BTreeMap<String, [f64; 3]>,
}

impl Env for Overlay<'_> {
    fn robot(&self) -> [f64; STATE_DIM] {
        self.robot
    }

    fn entity(&self, name: &str) -> Option<[f64; 3]> {
        self.entities.get(name).copied()
    }
}

pub fn gripper_position(r: &[f64; STATE_DIM]) -> [f64; 3] {
    let a = r[2] + FRAC_PI_2;
    [r[0] + r[3] * libm::cos(a), r[1] + r[3] * libm::sin(a), r[4]]
}

/// Explicit Euler step of the single integrator with angle wrapping and
/// nonnegativity of the arm and gripper channels.
pub fn integrate(x: &[f64; STATE_DIM], u: &[f64; STATE_DIM], dt: f64) -> [f64; STATE_DIM] {
    let mut n = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        n[i] = x[i] + u[i] * dt;
    }
    n[2] = wrap_angle(n[2]);
    for v in &mut n[3..] {
        *v = v.max(0.0);
    }
    n
}

/// Wheel speed and turn rate that make a point `lookahead` ahead of a
/// differential-drive base follow the planar velocity `(vx, vy)`.
pub fn feedback_linearize(vx: f64, vy: f64, theta: f64, lookahead: f64) -> (f64, f64) {
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    (c * vx + s * vy, (-s * vx + c * vy) / lookahead)
}

#[derive(Clone, Debug)]
struct Motion {
    entity: String,
    from: [f64; 3],
    to: [f64; 3],
    t0: f64,
    duration: f64,
}

/// The simulated world: a state plus the entity script still to play.
#[derive(Clone, Debug)]
pub struct World {
    pub state: WorldState,
    pub bounds: ControlBounds,
    pub config: WorldConfig,
    pending: Vec<TimedMove>,
    motions: Vec<Motion>,
    /// Entities whose last update was a jump rather than continuous motion.
    jumped: BTreeSet<String>,
}

impl World {
    pub fn new(state: WorldState, bounds: ControlBounds, config: WorldConfig, mut moves: Vec<TimedMove>) -> Self {
        moves.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut w = World {
            state,
            bounds,
            config,
            pending: moves,
            motions: Vec::new(),
            jumped: BTreeSet::new(),
        };
        w.advance_entities();
        w.jumped.clear();
        w
    }

    /// Entities that jumped during the last step (teleports and grasped
    /// objects); their displacement is not a velocity.
    pub fn jumped(&self) -> &BTreeSet<String> {
        &self.jumped
    }

    /// Schedules an entity move; `t` earlier than now applies at the next step.
    pub fn schedule_move(&mut self, m: TimedMove) {
        let i = self.pending.partition_point(|p| p.t <= m.t);
        self.pending.insert(i, m);
    }

    /// Advances time by `dt` under control `u`, which must lie within the
    /// control bounds.
    pub fn step(&mut self, u: &[f64; STATE_DIM], dt: f64, t_next: f64) {
        debug_assert!(self.bounds.contains(u, 1e-9), "control outside bounds: {u:?}");
        let mut u = *u;
        self.bounds.clamp(&mut u);
        self.state.robot = integrate(&self.state.robot, &u, dt);
        self.state.t = t_next;
        self.jumped.clear();
        self.advance_entities();
        self.update_gripper();
    }

    fn advance_entities(&mut self) {
        let t = self.state.t;
        while self.pending.first().is_some_and(|m| m.t <= t + 1e-9) {
            let m = self.pending.remove(0);
            let Some(e) = self.state.entities.get(&m.entity) else {
                continue;
            };
            if self.state.held.as_deref() == Some(m.entity.as_str()) {
                self.state.held = None;
            }
            self.motions.retain(|x| x.entity != m.entity);
            self.motions.push(Motion {
                entity: m.entity,
                from: e.pos,
                to: m.to,
                t0: m.t.max(t - 1e-9).min(t),
                duration: m.duration.max(0.0),
            });
        }
        let mut done = Vec::new();
        for (i, m) in self.motions.iter().enumerate() {
            let frac = if m.duration <= 0.0 {
                self.jumped.insert(m.entity.clone());
                1.0
            } else {
                ((t - m.t0) / m.duration).clamp(0.0, 1.0)
            };
            if let Some(e) = self.state.entities.get_mut(&m.entity) {
                for k in 0..3 {
                    e.pos[k] = m.from[k] + frac * (m.to[k] - m.from[k]);
                }
            }
            if frac >= 1.0 {
                done.push(i);
            }
        }
        for i in done.into_iter().rev() {
            self.motions.remove(i);
        }
    }

    fn update_gripper(&mut self) {
        let g = self.state.gripper();
        let beta = self.state.robot[5];
        match self.state.held.clone() {
            Some(name) => {
                if beta > RELEASE_ABOVE {
                    self.state.held = None;
                    let pos = self.state.entities[&name].pos;
                    let depot = self
                        .state
                        .entities
                        .values()
                        .filter(|e| e.kind == EntityKind::Depot)
                        .map(|e| (libm::hypot(e.pos[0] - pos[0], e.pos[1] - pos[1]), &e.name))
                        .filter(|(d, _)| *d <= self.config.depot_radius)
                        .min_by(|a, b| a.0.total_cmp(&b.0));
                    if let Some((_, depot)) = depot {
                        self.state.deposits.push(Deposit {
                            t: self.state.t,
                            object: name,
                            depot: depot.clone(),
                        });
                    }
                } else if let Some(e) = self.state.entities.get_mut(&name) {
                    e.pos = g;
                    self.jumped.insert(name);
                }
            }
            None if beta < GRASP_BELOW => {
                let r = self.config.grasp_radius;
                let near = self
                    .state
                    .entities
                    .values()
                    .filter(|e| e.kind == EntityKind::Object)
                    .map(|e| (dist3(&e.pos, &g), &e.name))
                    .filter(|(d, _)| *d <= r)
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(_, n)| n.clone());
                if let Some(name) = near {
                    self.motions.retain(|m| m.entity != name);
                    self.state.held = Some(name);
                }
            }
            None => {}
        }
    }
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn world(entities: Vec<Entity>, moves: Vec<TimedMove>) -> World {
        World::new(
            WorldState::new([0.0; 6], entities),
            ControlBounds::default(),
            WorldConfig::default(),
            moves,
        )
    }

    #[test]
    fn euler_step_and_wrap() {
        let x = integrate(&[0.0; 6], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.1);
        assert_eq!(x, [0.1, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let x = integrate(&[0.0, 0.0, 3.1, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 0.1);
        assert!((x[2] - (3.2 - 2.0 * core::f64::consts::PI)).abs() < 1e-12);
        assert!((x[2] + 3.083).abs() < 1e-3);
        let x = integrate(&[0.0, 0.0, 0.0, 0.01, 0.0, 0.0], &[0.0, 0.0, 0.0, -0.3, -0.3, 0.0], 0.1);
        assert_eq!((x[3], x[4]), (0.0, 0.0));
    }

    #[test]
    fn feedback_linearization() {
        assert_eq!(feedback_linearize(1.0, 0.0, 0.0, 0.5), (1.0, 0.0));
        assert_eq!(feedback_linearize(0.0, 1.0, 0.0, 0.5), (0.0, 2.0));
        let (v, w) = feedback_linearize(1.0, 0.0, FRAC_PI_2, 1.0);
        assert!(v.abs() < 1e-12 && (w + 1.0).abs() < 1e-12);
    }

    #[test]
    fn scripted_motion_and_teleport() {
        let cone = Entity {
            name: "c".into(),
            kind: EntityKind::Cone,
            pos: [0.0, 0.0, 0.0],
        };
        let mut w = world(
            vec![cone],
            vec![
                TimedMove {
                    t: 0.0,
                    entity: "c".into(),
                    to: [1.0, 0.0, 0.0],
                    duration: 1.0,
                },
                TimedMove {
                    t: 2.0,
                    entity: "c".into(),
                    to: [5.0, 5.0, 0.0],
                    duration: 0.0,
                },
            ],
        );
        for k in 1..=5 {
            w.step(&[0.0; 6], 0.1, k as f64 * 0.1);
        }
        assert!((w.state.entities["c"].pos[0] - 0.5).abs() < 1e-12);
        assert!(w.jumped().is_empty());
        for k in 6..=20 {
            w.step(&[0.0; 6], 0.1, k as f64 * 0.1);
        }
        assert_eq!(w.state.entities["c"].pos, [5.0, 5.0, 0.0]);
        assert!(w.jumped().contains("c"));
    }

    #[test]
    fn grasp_carry_and_deposit() {
        let obj = Entity {
            name: "o".into(),
            kind: EntityKind::Object,
            pos: [0.0, 0.5, 0.2],
        };
        let dep = Entity {
            name: "dep".into(),
            kind: EntityKind::Depot,
            pos: [2.0, 0.5, 0.0],
        };
        let mut w = world(vec![obj, dep], vec![]);
        w.state.robot = [0.0, 0.0, 0.0, 0.5, 0.2, 0.9];
        w.step(&[0.0; 6], 0.1, 0.1);
        assert_eq!(w.state.held.as_deref(), Some("o"));
        for k in 2..=21 {
            w.step(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.1, k as f64 * 0.1);
        }
        assert!((w.state.entities["o"].pos[0] - 2.0).abs() < 1e-9);
        w.state.robot[5] = 3.1;
        w.step(&[0.0; 6], 0.1, 2.2);
        assert_eq!(w.state.held, None);
        assert_eq!(w.state.deposits.len(), 1);
        assert_eq!(w.state.deposits[0].depot, "dep");
    }
}
