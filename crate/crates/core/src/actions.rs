//! The symbolic action grammar and the transition function.
//!
//! [`preconditions`] is a pure check that returns a [`RejectReason`];
//! [`apply`] runs the effects, optionally injects a drop perturbation, and
//! always ends with a geometric edge refresh.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::worldsim::{
    containment_region, manipulation_region, Affordance as A, ObjectId, ObjectInstance, RelationEdge, RelationKind,
    WorldState, TIER_HEIGHT,
};

/// Gap kept between the target's bounding box and the robot center after `moveTo`.
pub const STANDOFF: f64 = 0.85;
/// Distance a `push` slides an object.
pub const PUSH_STEP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Interaction {
    MoveTo,
    Pick,
    Drop,
    PlaceOn,
    PlaceInside,
    Open,
    Close,
    SwitchOn,
    SwitchOff,
    ClimbUp,
    ClimbDown,
    Push,
    Clean,
    Apply,
    Stick,
    Fuel,
    Operate,
}

impl Interaction {
    pub const ALL: [Interaction; 17] = [
        Interaction::MoveTo,
        Interaction::Pick,
        Interaction::Drop,
        Interaction::PlaceOn,
        Interaction::PlaceInside,
        Interaction::Open,
        Interaction::Close,
        Interaction::SwitchOn,
        Interaction::SwitchOff,
        Interaction::ClimbUp,
        Interaction::ClimbDown,
        Interaction::Push,
        Interaction::Clean,
        Interaction::Apply,
        Interaction::Stick,
        Interaction::Fuel,
        Interaction::Operate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Interaction::MoveTo => "moveTo",
            Interaction::Pick => "pick",
            Interaction::Drop => "drop",
            Interaction::PlaceOn => "placeOn",
            Interaction::PlaceInside => "placeInside",
            Interaction::Open => "open",
            Interaction::Close => "close",
            Interaction::SwitchOn => "switchOn",
            Interaction::SwitchOff => "switchOff",
            Interaction::ClimbUp => "climbUp",
            Interaction::ClimbDown => "climbDown",
            Interaction::Push => "push",
            Interaction::Clean => "clean",
            Interaction::Apply => "apply",
            Interaction::Stick => "stick",
            Interaction::Fuel => "fuel",
            Interaction::Operate => "operate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.name() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            Interaction::PlaceOn
            | Interaction::PlaceInside
            | Interaction::Apply
            | Interaction::Stick
            | Interaction::Fuel
            | Interaction::Operate => 2,
            _ => 1,
        }
    }

    /// Position in [`Interaction::ALL`]; the one-hot index used by the policy.
    pub fn index(self) -> usize {
        self as usize
    }

    /// All interactions sorted by name, the enumeration order.
    pub fn by_name() -> Vec<Interaction> {
        let mut v = Self::ALL.to_vec();
        v.sort_by_key(|i| i.name());
        v
    }
}

impl fmt::Display for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymbolicAction {
    pub interaction: Interaction,
    pub o1: ObjectId,
    pub o2: Option<ObjectId>,
}

impl SymbolicAction {
    pub fn unary(interaction: Interaction, o1: ObjectId) -> Self {
        Self { interaction, o1, o2: None }
    }

    pub fn binary(interaction: Interaction, o1: ObjectId, o2: ObjectId) -> Self {
        Self { interaction, o1, o2: Some(o2) }
    }

    /// Sort key of the enumeration order: name, then o1, then o2.
    pub fn order_key(&self) -> (&'static str, ObjectId, Option<ObjectId>) {
        (self.interaction.name(), self.o1, self.o2)
    }

    pub fn to_wire(&self, state: &WorldState) -> ActionWire {
        let name_of = |id: ObjectId| state.objects.get(&id).map_or_else(|| format!("#{id}"), |o| o.name.clone());
        let mut args = vec![name_of(self.o1)];
        if let Some(o2) = self.o2 {
            args.push(name_of(o2));
        }
        ActionWire { name: self.interaction.name().to_string(), args }
    }

    pub fn display(&self, state: &WorldState) -> String {
        let w = self.to_wire(state);
        format!("{}({})", w.name, w.args.join(", "))
    }
}

/// Wire form of an action: `{"name": "pick", "args": ["milk_0"]}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionWire {
    pub name: String,
    pub args: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("unknown interaction `{0}`")]
    UnknownInteraction(String),
    #[error("no object named `{0}` in the scene")]
    UnknownObject(String),
    #[error("expected 1 or 2 arguments, got {0}")]
    BadArgCount(usize),
}

impl ActionWire {
    /// Resolves names against `state`. Arity against the interaction is not
    /// checked here; [`preconditions`] reports it as `ArityMismatch`.
    pub fn resolve(&self, state: &WorldState) -> Result<SymbolicAction, WireError> {
        let interaction = Interaction::parse(&self.name).ok_or_else(|| WireError::UnknownInteraction(self.name.clone()))?;
        let id = |n: &String| state.id_by_name(n).ok_or_else(|| WireError::UnknownObject(n.clone()));
        match self.args.as_slice() {
            [a] => Ok(SymbolicAction { interaction, o1: id(a)?, o2: None }),
            [a, b] => Ok(SymbolicAction { interaction, o1: id(a)?, o2: Some(id(b)?) }),
            other => Err(WireError::BadArgCount(other.len())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    ObjectUnreachable,
    ObjectEnclosed,
    GripperBusy,
    GripperEmpty,
    NotAffordance,
    ElevationMismatch,
    ArityMismatch,
}

impl RejectReason {
    pub const ALL: [RejectReason; 7] = [
        RejectReason::ObjectUnreachable,
        RejectReason::ObjectEnclosed,
        RejectReason::GripperBusy,
        RejectReason::GripperEmpty,
        RejectReason::NotAffordance,
        RejectReason::ElevationMismatch,
        RejectReason::ArityMismatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RejectReason::ObjectUnreachable => "ObjectUnreachable",
            RejectReason::ObjectEnclosed => "ObjectEnclosed",
            RejectReason::GripperBusy => "GripperBusy",
            RejectReason::GripperEmpty => "GripperEmpty",
            RejectReason::NotAffordance => "NotAffordance",
            RejectReason::ElevationMismatch => "ElevationMismatch",
            RejectReason::ArityMismatch => "ArityMismatch",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Applied,
    AppliedWithPerturbation,
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOutcome {
    pub status: Status,
    pub reason: Option<RejectReason>,
    pub next_state: WorldState,
}

impl TransitionOutcome {
    pub fn is_applied(&self) -> bool {
        self.status != Status::Rejected
    }
}

use RejectReason as R;

fn tier_of_height(z: f64) -> u32 {
    (z.max(0.0) / TIER_HEIGHT + 1e-9).floor() as u32
}

fn within_reach(state: &WorldState, tier: u32) -> bool {
    tier <= state.robot_elevation + 1
}

fn require_near(state: &WorldState, id: ObjectId) -> Result<(), RejectReason> {
    if !state.is_near(id) {
        return Err(R::ObjectUnreachable);
    }
    let tier = state.objects[&id].tier();
    if !within_reach(state, tier) {
        return Err(R::ObjectUnreachable);
    }
    Ok(())
}

fn require_held(state: &WorldState, id: ObjectId) -> Result<(), RejectReason> {
    match state.held() {
        None => Err(R::GripperEmpty),
        Some(h) if h != id => Err(R::NotAffordance),
        Some(_) => Ok(()),
    }
}

fn has(state: &WorldState, id: ObjectId, a: A) -> bool {
    state.objects[&id].affordances.has(a)
}

/// Pure feasibility check of `action` in `state`.
pub fn preconditions(state: &WorldState, action: &SymbolicAction) -> Result<(), RejectReason> {
    let i = action.interaction;
    if (i.arity() == 2) != action.o2.is_some() {
        return Err(R::ArityMismatch);
    }
    let o1 = action.o1;
    for id in std::iter::once(o1).chain(action.o2) {
        if !state.objects.contains_key(&id) {
            return Err(R::ObjectUnreachable);
        }
        if id == state.robot {
            return Err(R::NotAffordance);
        }
    }
    if action.o2 == Some(o1) {
        return Err(R::NotAffordance);
    }
    let elevated = state.robot_elevation > 0;
    let held = state.held();
    match i {
        Interaction::MoveTo => {
            if elevated {
                return Err(R::ElevationMismatch);
            }
            if let Some(h) = held {
                if h == o1 || state.carried_by(h).contains(&o1) {
                    return Err(R::NotAffordance);
                }
            }
            Ok(())
        }
        Interaction::Pick => {
            if !has(state, o1, A::Graspable) {
                return Err(R::NotAffordance);
            }
            if elevated && has(state, o1, A::Climbable) {
                return Err(R::ElevationMismatch);
            }
            if held.is_some() {
                return Err(R::GripperBusy);
            }
            if state.edges_of_kind(RelationKind::StuckTo).any(|e| e.subject == o1) {
                return Err(R::NotAffordance);
            }
            if state.is_enclosed(o1) {
                return Err(R::ObjectEnclosed);
            }
            require_near(state, o1)
        }
        Interaction::Drop => require_held(state, o1),
        Interaction::PlaceOn | Interaction::PlaceInside => {
            let o2 = action.o2.expect("arity checked");
            require_held(state, o1)?;
            let inside = i == Interaction::PlaceInside;
            let needed = if inside { A::Container } else { A::Surface };
            if !has(state, o2, needed) || state.carried_by(o1).contains(&o2) {
                return Err(R::NotAffordance);
            }
            let (a, b) = (&state.objects[&o1], &state.objects[&o2]);
            if inside {
                let cr = containment_region(b, &state.geometry).map_err(|_| R::NotAffordance)?;
                if a.volume() >= b.volume() || a.extent[2] / 2.0 > cr.extent()[2] {
                    return Err(R::NotAffordance);
                }
                if !state.is_open(o2) || state.is_enclosed(o2) {
                    return Err(R::ObjectEnclosed);
                }
                require_near(state, o2)
            } else {
                if state.is_enclosed(o2) {
                    return Err(R::ObjectEnclosed);
                }
                if !state.is_near(o2) || !within_reach(state, tier_of_height(b.top())) {
                    return Err(R::ObjectUnreachable);
                }
                Ok(())
            }
        }
        Interaction::Open | Interaction::Close => {
            if !has(state, o1, A::Openable) {
                return Err(R::NotAffordance);
            }
            let open = state.predicate(o1, "open");
            if open == (i == Interaction::Open) {
                return Err(R::NotAffordance);
            }
            if state.is_enclosed(o1) {
                return Err(R::ObjectEnclosed);
            }
            require_near(state, o1)
        }
        Interaction::SwitchOn | Interaction::SwitchOff => {
            if !has(state, o1, A::Operable) || !state.supports_predicate(o1, "on") {
                return Err(R::NotAffordance);
            }
            let on = state.predicate(o1, "on");
            if on == (i == Interaction::SwitchOn) {
                return Err(R::NotAffordance);
            }
            if i == Interaction::SwitchOn {
                if let Some(req) = state.class_of(o1).ok().and_then(|c| c.switch_requires.clone()) {
                    if !state.predicate(o1, &req) {
                        return Err(R::NotAffordance);
                    }
                }
            }
            require_near(state, o1)
        }
        Interaction::ClimbUp => {
            if !has(state, o1, A::Climbable) || held == Some(o1) {
                return Err(R::NotAffordance);
            }
            if elevated {
                return Err(R::ElevationMismatch);
            }
            if state.support_of(o1).is_some() {
                return Err(R::NotAffordance);
            }
            require_near(state, o1)
        }
        Interaction::ClimbDown => {
            if !has(state, o1, A::Climbable) {
                return Err(R::NotAffordance);
            }
            if !elevated {
                return Err(R::ElevationMismatch);
            }
            let (r, o) = (&state.objects[&state.robot], &state.objects[&o1]);
            if (r.position[0] - o.position[0]).abs() > 1e-6 || (r.position[1] - o.position[1]).abs() > 1e-6 {
                return Err(R::NotAffordance);
            }
            Ok(())
        }
        Interaction::Push => {
            if !has(state, o1, A::Movable) || has(state, o1, A::Graspable) {
                return Err(R::NotAffordance);
            }
            if elevated {
                return Err(R::ElevationMismatch);
            }
            require_near(state, o1)
        }
        Interaction::Clean => {
            if !has(state, o1, A::Cleanable) {
                return Err(R::NotAffordance);
            }
            match held {
                None => return Err(R::GripperEmpty),
                Some(h) if !has(state, h, A::CleaningAgent) => return Err(R::NotAffordance),
                _ => {}
            }
            require_near(state, o1)
        }
        Interaction::Apply | Interaction::Fuel => {
            let o2 = action.o2.expect("arity checked");
            require_held(state, o2)?;
            let (tool, bit) = if i == Interaction::Apply { (A::Applicable, "sticky") } else { (A::Fuel, "fueled") };
            if !has(state, o2, tool) || !state.supports_predicate(o1, bit) || state.predicate(o1, bit) {
                return Err(R::NotAffordance);
            }
            if state.is_enclosed(o1) {
                return Err(R::ObjectEnclosed);
            }
            require_near(state, o1)
        }
        Interaction::Stick => {
            let o2 = action.o2.expect("arity checked");
            require_held(state, o1)?;
            if !state.predicate(o1, "sticky") || state.carried_by(o1).contains(&o2) {
                return Err(R::NotAffordance);
            }
            require_near(state, o2)
        }
        Interaction::Operate => {
            let o2 = action.o2.expect("arity checked");
            let effect = state.class_of(o1).ok().and_then(|c| c.operate_effect.clone());
            let Some(effect) = effect.filter(|_| has(state, o1, A::Operable)) else {
                return Err(R::NotAffordance);
            };
            if has(state, o1, A::Graspable) {
                require_held(state, o1)?;
            }
            if !state.supports_predicate(o2, &effect) || state.predicate(o2, &effect) {
                return Err(R::NotAffordance);
            }
            if state.is_enclosed(o2) {
                return Err(R::ObjectEnclosed);
            }
            if !has(state, o1, A::Graspable) {
                require_near(state, o1)?;
            }
            require_near(state, o2)
        }
    }
}

/// Offsets tried, nearest first, when placing onto or into a support.
fn slot_offsets(half: [f64; 2]) -> Vec<[f64; 2]> {
    let sx = (half[0] / 2.0).clamp(0.1, 0.3);
    let sy = (half[1] / 2.0).clamp(0.08, 0.25);
    let mut v = Vec::new();
    for i in -4i32..=4 {
        for j in -4i32..=4 {
            let (dx, dy) = (i as f64 * sx, j as f64 * sy);
            if dx.abs() <= half[0] + 1e-9 && dy.abs() <= half[1] + 1e-9 {
                v.push(([dx, dy], i.abs() + j.abs(), i, j));
            }
        }
    }
    v.sort_by_key(|&(_, d, i, j)| (d, -i, -j));
    v.into_iter().map(|(o, ..)| o).collect()
}

/// Position for `obj_extent` resting on (`inside == false`) or inside a
/// support. Picks the first slot whose footprint does not overlap another
/// object already resting there.
pub fn free_slot(state: &WorldState, support: ObjectId, inside: bool, obj_extent: [f64; 3], ignore: &[ObjectId]) -> [f64; 3] {
    let s = &state.objects[&support];
    let (center, half, floor_z) = if inside {
        let cr = containment_region(s, &state.geometry).expect("container");
        let e = cr.extent();
        (cr.center(), [e[0] / 2.0, e[1] / 2.0], cr.min[2])
    } else {
        (s.position, [s.extent[0] / 2.0, s.extent[1] / 2.0], s.top())
    };
    let kind = if inside { RelationKind::Inside } else { RelationKind::OnTop };
    let residents: Vec<&ObjectInstance> = state
        .edges_of_kind(kind)
        .filter(|e| e.object == support && !ignore.contains(&e.subject))
        .map(|e| &state.objects[&e.subject])
        .collect();
    let z = floor_z + obj_extent[2] / 2.0;
    for off in slot_offsets(half) {
        let p = [center[0] + off[0], center[1] + off[1]];
        let clear = residents.iter().all(|r| {
            (p[0] - r.position[0]).abs() >= (r.extent[0] + obj_extent[0]) / 2.0 - 1e-9
                || (p[1] - r.position[1]).abs() >= (r.extent[1] + obj_extent[1]) / 2.0 - 1e-9
        });
        if clear {
            return [p[0], p[1], z];
        }
    }
    [center[0], center[1], z]
}

fn move_to(state: &mut WorldState, id: ObjectId, target: [f64; 3]) {
    let p = state.objects[&id].position;
    state.translate_with_contents(id, [target[0] - p[0], target[1] - p[1], target[2] - p[2]]);
}

fn hand_position(state: &WorldState, id: ObjectId) -> [f64; 3] {
    let r = &state.objects[&state.robot];
    let o = &state.objects[&id];
    [r.position[0], r.position[1], r.top() + o.extent[2] / 2.0]
}

/// Lets `id` fall from where it is: onto the highest surface whose
/// manipulation region contains its center, else onto the floor.
fn settle(state: &mut WorldState, id: ObjectId, exclude: &[ObjectId]) {
    let o = state.objects[&id].clone();
    let mut carried = state.carried_by(id);
    carried.extend_from_slice(exclude);
    let support = state
        .objects
        .values()
        .filter(|s| s.id != id && s.id != state.robot && !carried.contains(&s.id) && s.affordances.has(A::Surface))
        .filter(|s| manipulation_region(s, &state.geometry).contains(o.position))
        .max_by(|a, b| a.top().total_cmp(&b.top()).then(b.id.cmp(&a.id)))
        .map(|s| (s.position, s.extent, s.top()));
    let target = match support {
        Some((sp, se, top)) => {
            let cx = o.position[0].clamp(sp[0] - se[0] / 2.0, sp[0] + se[0] / 2.0);
            let cy = o.position[1].clamp(sp[1] - se[1] / 2.0, sp[1] + se[1] / 2.0);
            [cx, cy, top + o.extent[2] / 2.0]
        }
        None => [o.position[0], o.position[1], o.extent[2] / 2.0],
    };
    move_to(state, id, target);
}

fn set_robot_z(state: &mut WorldState) {
    let robot = state.robot;
    let r = &state.objects[&robot];
    let z = r.extent[2] / 2.0 + state.robot_elevation as f64 * TIER_HEIGHT;
    let dz = z - r.position[2];
    shift_robot(state, [0.0, 0.0, dz]);
}

/// Moves the robot and whatever it holds.
fn shift_robot(state: &mut WorldState, delta: [f64; 3]) {
    let robot = state.robot;
    if let Ok(r) = state.object_mut(robot) {
        for k in 0..3 {
            r.position[k] += delta[k];
        }
    }
    if let Some(h) = state.held() {
        state.translate_with_contents(h, delta);
    }
}

fn effects(state: &mut WorldState, a: &SymbolicAction) {
    let robot = state.robot;
    let o1 = a.o1;
    match a.interaction {
        Interaction::MoveTo => {
            let t = &state.objects[&o1];
            let target = [t.position[0], t.position[1] - (t.extent[1] / 2.0 + STANDOFF)];
            let r = state.objects[&robot].position;
            shift_robot(state, [target[0] - r[0], target[1] - r[1], 0.0]);
        }
        Interaction::Pick => {
            state.edges.insert(RelationEdge::new(RelationKind::ConnectedTo, o1, robot));
            let hand = hand_position(state, o1);
            move_to(state, o1, hand);
        }
        Interaction::Drop => {
            state.edges.remove(&RelationEdge::new(RelationKind::ConnectedTo, o1, robot));
            settle(state, o1, &[]);
        }
        Interaction::PlaceOn | Interaction::PlaceInside => {
            let o2 = a.o2.expect("arity checked");
            state.edges.remove(&RelationEdge::new(RelationKind::ConnectedTo, o1, robot));
            let e = state.objects[&o1].extent;
            let p = free_slot(state, o2, a.interaction == Interaction::PlaceInside, e, &[o1]);
            move_to(state, o1, p);
        }
        Interaction::Open | Interaction::Close => {
            let open = a.interaction == Interaction::Open;
            state.set_predicate(o1, "open", open);
            state.set_predicate(o1, "closed", !open);
        }
        Interaction::SwitchOn | Interaction::SwitchOff => {
            let on = a.interaction == Interaction::SwitchOn;
            state.set_predicate(o1, "on", on);
            state.set_predicate(o1, "off", !on);
        }
        Interaction::ClimbUp => {
            let s = state.objects[&o1].clone();
            let r = state.objects[&robot].position;
            shift_robot(state, [s.position[0] - r[0], s.position[1] - r[1], 0.0]);
            state.robot_elevation = s.tier() + 1;
            set_robot_z(state);
            state.set_predicate(robot, "elevated", true);
        }
        Interaction::ClimbDown => {
            state.robot_elevation = 0;
            set_robot_z(state);
            state.set_predicate(robot, "elevated", false);
        }
        Interaction::Push => {
            let r = state.objects[&robot].position;
            let o = state.objects[&o1].position;
            let (dx, dy) = (o[0] - r[0], o[1] - r[1]);
            let n = (dx * dx + dy * dy).sqrt();
            let d = if n < 1e-9 { [0.0, 1.0] } else { [dx / n, dy / n] };
            state.translate_with_contents(o1, [d[0] * PUSH_STEP, d[1] * PUSH_STEP, 0.0]);
        }
        Interaction::Clean => {
            let _ = state.remove_object(o1);
        }
        Interaction::Apply => {
            state.set_predicate(o1, "sticky", true);
        }
        Interaction::Fuel => {
            state.set_predicate(o1, "fueled", true);
        }
        Interaction::Stick => {
            let o2 = a.o2.expect("arity checked");
            state.edges.remove(&RelationEdge::new(RelationKind::ConnectedTo, o1, robot));
            state.edges.insert(RelationEdge::new(RelationKind::StuckTo, o1, o2));
            let r = state.objects[&robot].position;
            let b = state.objects[&o2].bbox();
            let target = [r[0].clamp(b.min[0], b.max[0]), r[1].clamp(b.min[1], b.max[1]), state.objects[&o2].position[2]];
            move_to(state, o1, target);
        }
        Interaction::Operate => {
            let o2 = a.o2.expect("arity checked");
            if let Some(effect) = state.class_of(o1).ok().and_then(|c| c.operate_effect.clone()) {
                state.set_predicate(o2, &effect, true);
            }
        }
    }
}

/// Applies `action`. Rejections return the input state unchanged. With
/// probability `epsilon`, a successful pick or a move while holding
/// something drops the held object or one of the items it carries.
pub fn apply(state: &WorldState, action: &SymbolicAction, epsilon: f64, seed: u64) -> TransitionOutcome {
    if let Err(reason) = preconditions(state, action) {
        return TransitionOutcome { status: Status::Rejected, reason: Some(reason), next_state: state.clone() };
    }
    let mut next = state.clone();
    effects(&mut next, action);
    next.time_step += 1;
    next.refresh();

    let mut status = Status::Applied;
    let carrying_move = action.interaction == Interaction::MoveTo && next.held().is_some();
    if epsilon > 0.0 && (action.interaction == Interaction::Pick || carrying_move) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if rng.random::<f64>() < epsilon {
            let held = next.held().expect("holding after pick or carrying move");
            let mut candidates = vec![held];
            candidates.extend(next.carried_by(held));
            let victim = candidates[rng.random_range(0..candidates.len())];
            if victim == held {
                next.edges.remove(&RelationEdge::new(RelationKind::ConnectedTo, held, next.robot));
                settle(&mut next, held, &[]);
            } else {
                let mut exclude = vec![held];
                exclude.extend(next.carried_by(held));
                settle(&mut next, victim, &exclude);
            }
            next.refresh();
            status = Status::AppliedWithPerturbation;
        }
    }
    TransitionOutcome { status, reason: None, next_state: next }
}

/// Applies an action that is known to be feasible, without noise.
pub fn apply_unchecked(state: &WorldState, action: &SymbolicAction) -> WorldState {
    let mut next = state.clone();
    effects(&mut next, action);
    next.time_step += 1;
    next.refresh();
    next
}

/// Every feasible action, ordered by interaction name, then o1, then o2.
pub fn enumerate_applicable(state: &WorldState) -> Vec<SymbolicAction> {
    let ids: Vec<ObjectId> = state.objects.keys().copied().filter(|&i| i != state.robot).collect();
    let held: Vec<ObjectId> = state.held().into_iter().collect();
    let mut out = Vec::new();
    for i in Interaction::by_name() {
        let firsts: &[ObjectId] = match i {
            Interaction::Drop | Interaction::PlaceOn | Interaction::PlaceInside | Interaction::Stick => &held,
            _ => &ids,
        };
        for &o1 in firsts {
            if i.arity() == 1 {
                let a = SymbolicAction::unary(i, o1);
                if preconditions(state, &a).is_ok() {
                    out.push(a);
                }
                continue;
            }
            let seconds: &[ObjectId] = match i {
                Interaction::Apply | Interaction::Fuel => &held,
                _ => &ids,
            };
            for &o2 in seconds {
                let a = SymbolicAction::binary(i, o1, o2);
                if preconditions(state, &a).is_ok() {
                    out.push(a);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{ClassTable, GeometryConfig, ObjectClass};
    use std::sync::Arc;

    fn class(token: &str, affs: &[A], extent: [f64; 3], states: &[&str], init: &[&str]) -> ObjectClass {
        ObjectClass {
            token: token.into(),
            category: token.into(),
            affordances: affs.iter().copied().collect(),
            extent,
            states: states.iter().map(|s| s.to_string()).collect(),
            initial_states: init.iter().map(|s| s.to_string()).collect(),
            operate_effect: None,
            switch_requires: None,
        }
    }

    /// robot 0, table 1, fridge 2, milk 3 (on table), shelf 4, juice 5 (on
    /// shelf top), stool 6 (floor), tray 7 (on table)
    fn kitchen() -> WorldState {
        let table = ClassTable::new(
            ["open", "closed", "elevated"].map(String::from).to_vec(),
            [
                class("robot", &[], [0.6, 0.6, 1.0], &["elevated"], &[]),
                class("table", &[A::Surface], [1.6, 0.9, 0.8], &[], &[]),
                class("fridge", &[A::Surface, A::Container, A::Openable], [0.8, 0.8, 1.8], &["open", "closed"], &["closed"]),
                class("milk", &[A::Graspable, A::Movable], [0.08, 0.08, 0.2], &[], &[]),
                class("shelf", &[A::Surface], [1.2, 0.5, 2.0], &[], &[]),
                class("stool", &[A::Climbable, A::Graspable, A::Movable], [0.4, 0.4, 0.45], &[], &[]),
                class("tray", &[A::Surface, A::Graspable, A::Movable], [0.5, 0.35, 0.05], &[], &[]),
            ],
        )
        .unwrap();
        let mut s = WorldState::with_robot(Arc::new(table), GeometryConfig::default(), "robot", [5.0, 5.0]).unwrap();
        s.add_object("table", [2.0, 2.0, 0.4]).unwrap();
        s.add_object("fridge", [8.0, 2.0, 0.9]).unwrap();
        s.add_object("milk", [2.0, 2.0, 0.9]).unwrap();
        s.add_object("shelf", [2.0, 8.0, 1.0]).unwrap();
        s.add_object("milk", [2.0, 8.0, 2.1]).unwrap();
        s.add_object("stool", [5.0, 2.0, 0.225]).unwrap();
        s.add_object("tray", [2.5, 2.0, 0.825]).unwrap();
        s.refresh();
        s.validate().unwrap();
        s
    }

    fn run(s: &WorldState, a: SymbolicAction) -> WorldState {
        let out = apply(s, &a, 0.0, 0);
        assert!(out.is_applied(), "{} rejected: {:?}", a.display(s), out.reason);
        out.next_state.validate().unwrap();
        out.next_state
    }

    use Interaction as I;

    #[test]
    fn far_from_everything_only_moves() {
        let s = kitchen();
        let acts = enumerate_applicable(&s);
        assert!(!acts.is_empty());
        assert!(acts.iter().all(|a| a.interaction == I::MoveTo));
    }

    #[test]
    fn pick_inside_closed_fridge_is_enclosed() {
        let mut s = kitchen();
        let fridge = s.objects[&2].position;
        s.object_mut(3).unwrap().position = [fridge[0], fridge[1], 0.3];
        s.refresh();
        assert!(s.has_edge(RelationKind::Inside, 3, 2));
        assert_eq!(preconditions(&s, &SymbolicAction::unary(I::Pick, 3)), Err(R::ObjectEnclosed));
    }

    #[test]
    fn high_shelf_needs_a_stool() {
        let s = kitchen();
        let s = run(&s, SymbolicAction::unary(I::MoveTo, 5));
        assert_eq!(s.objects[&5].tier(), 2);
        assert_eq!(preconditions(&s, &SymbolicAction::unary(I::Pick, 5)), Err(R::ObjectUnreachable));

        let s = run(&s, SymbolicAction::unary(I::MoveTo, 6));
        let s = run(&s, SymbolicAction::unary(I::Pick, 6));
        let s = run(&s, SymbolicAction::unary(I::MoveTo, 5));
        let s = run(&s, SymbolicAction::unary(I::Drop, 6));
        assert_eq!(preconditions(&s, &SymbolicAction::unary(I::MoveTo, 1)), Ok(()));
        let s = run(&s, SymbolicAction::unary(I::ClimbUp, 6));
        assert_eq!(s.robot_elevation, 1);
        assert_eq!(preconditions(&s, &SymbolicAction::unary(I::MoveTo, 1)), Err(R::ElevationMismatch));
        let s = run(&s, SymbolicAction::unary(I::Pick, 5));
        assert!(s.has_edge(RelationKind::ConnectedTo, 5, 0));
        let s = run(&s, SymbolicAction::unary(I::ClimbDown, 6));
        assert_eq!(s.robot_elevation, 0);
    }

    #[test]
    fn milk_into_fridge() {
        let s = kitchen();
        let s = run(&s, SymbolicAction::unary(I::MoveTo, 3));
        let s = run(&s, SymbolicAction::unary(I::Pick, 3));
        assert!(s.has_edge(RelationKind::ConnectedTo, 3, 0));
        assert_eq!(preconditions(&s, &SymbolicAction::unary(I::Pick, 7)), Err(R::GripperBusy));
        let s = run(&s, SymbolicAction::unary(I::MoveTo, 2));
        assert!(s.is_near(2));
        assert_eq!(preconditions(&s, &SymbolicAction::binary(I::PlaceInside, 3, 2)), Err(R::ObjectEnclosed));
        let s = run(&s, SymbolicAction::unary(I::Open, 2));
        assert_eq!(preconditions(&s, &SymbolicAction::binary(I::PlaceInside, 3, 2)), Ok(()));
        let s = run(&s, SymbolicAction::binary(I::PlaceInside, 3, 2));
        assert!(s.has_edge(RelationKind::Inside, 3, 2));
        assert_eq!(s.held(), None);
    }

    #[test]
    fn tray_transport_keeps_items() {
        let s = kitchen();
        let s = run(&s, SymbolicAction::unary(I::MoveTo, 3));
        let s = run(&s, SymbolicAction::unary(I::Pick, 3));
        let s = run(&s, SymbolicAction::binary(I::PlaceOn, 3, 7));
        assert!(s.has_edge(RelationKind::OnTop, 3, 7));
        let s = run(&s, SymbolicAction::unary(I::Pick, 7));
        assert!(s.has_edge(RelationKind::OnTop, 3, 7));
        let s = run(&s, SymbolicAction::unary(I::MoveTo, 2));
        assert!(s.has_edge(RelationKind::OnTop, 3, 7));
        let s = run(&s, SymbolicAction::unary(I::Open, 2));
        let s = run(&s, SymbolicAction::binary(I::PlaceInside, 7, 2));
        assert!(s.has_edge(RelationKind::Inside, 3, 2));
        assert!(s.has_edge(RelationKind::Inside, 7, 2));
    }

    #[test]
    fn rejection_leaves_state_untouched() {
        let s = kitchen();
        let out = apply(&s, &SymbolicAction::unary(I::Pick, 3), 0.5, 9);
        assert_eq!(out.status, Status::Rejected);
        assert_eq!(out.reason, Some(R::ObjectUnreachable));
        assert_eq!(out.next_state, s);
        let bad = apply(&s, &SymbolicAction::binary(I::MoveTo, 3, 2), 0.0, 0);
        assert_eq!(bad.reason, Some(R::ArityMismatch));
    }

    #[test]
    fn deterministic_without_noise() {
        let s = kitchen();
        let plan = [SymbolicAction::unary(I::MoveTo, 3), SymbolicAction::unary(I::Pick, 3), SymbolicAction::unary(I::MoveTo, 2)];
        let go = || plan.iter().fold(s.clone(), |st, a| apply(&st, a, 0.0, 42).next_state);
        assert_eq!(go().canonical_json(), go().canonical_json());
    }

    #[test]
    fn certain_perturbation_drops_something() {
        let s = kitchen();
        let s = run(&s, SymbolicAction::unary(I::MoveTo, 3));
        let out = apply(&s, &SymbolicAction::unary(I::Pick, 3), 1.0, 1);
        assert_eq!(out.status, Status::AppliedWithPerturbation);
        assert_eq!(out.next_state.held(), None);
        out.next_state.validate().unwrap();
    }

    #[test]
    fn enumeration_matches_exhaustive_scan() {
        let s = kitchen();
        let s = run(&s, SymbolicAction::unary(I::MoveTo, 3));
        let s = run(&s, SymbolicAction::unary(I::Pick, 3));
        let listed = enumerate_applicable(&s);
        let mut scan = Vec::new();
        for i in Interaction::by_name() {
            for &o1 in s.objects.keys() {
                if i.arity() == 1 {
                    scan.push(SymbolicAction::unary(i, o1));
                } else {
                    for &o2 in s.objects.keys() {
                        scan.push(SymbolicAction::binary(i, o1, o2));
                    }
                }
            }
        }
        scan.retain(|a| preconditions(&s, a).is_ok());
        assert_eq!(listed, scan);
        assert!(listed.windows(2).all(|w| w[0].order_key() < w[1].order_key()));
    }

    #[test]
    fn wire_round_trip() {
        let s = kitchen();
        let a = SymbolicAction::binary(I::PlaceInside, 3, 2);
        let w = a.to_wire(&s);
        assert_eq!(serde_json::to_string(&w).unwrap(), r#"{"name":"placeInside","args":["milk_0","fridge_0"]}"#);
        assert_eq!(w.resolve(&s).unwrap(), a);
    }
}
