use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::geometry::{containment_region, manipulation_region, Aabb, GeometryConfig};
use super::WorldError;

pub type ObjectId = u32;

/// Height of one elevation tier, in meters.
pub const TIER_HEIGHT: f64 = 1.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Affordance {
    Surface,
    Openable,
    Container,
    Operable,
    Climbable,
    Applicable,
    Cleanable,
    CleaningAgent,
    Printable,
    Movable,
    Graspable,
    /// Container without a lid (tray-like bins, dumpsters left open).
    AlwaysOpen,
    /// Can refuel a machine.
    Fuel,
}

impl Affordance {
    pub const ALL: [Affordance; 13] = [
        Affordance::Surface,
        Affordance::Openable,
        Affordance::Container,
        Affordance::Operable,
        Affordance::Climbable,
        Affordance::Applicable,
        Affordance::Cleanable,
        Affordance::CleaningAgent,
        Affordance::Printable,
        Affordance::Movable,
        Affordance::Graspable,
        Affordance::AlwaysOpen,
        Affordance::Fuel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Affordance::Surface => "surface",
            Affordance::Openable => "openable",
            Affordance::Container => "container",
            Affordance::Operable => "operable",
            Affordance::Climbable => "climbable",
            Affordance::Applicable => "applicable",
            Affordance::Cleanable => "cleanable",
            Affordance::CleaningAgent => "cleaning_agent",
            Affordance::Printable => "printable",
            Affordance::Movable => "movable",
            Affordance::Graspable => "graspable",
            Affordance::AlwaysOpen => "always_open",
            Affordance::Fuel => "fuel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

/// Set of affordance flags, serialized as a list of names.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Affordances(u16);

impl Affordances {
    pub fn has(self, a: Affordance) -> bool {
        self.0 & a.bit() != 0
    }

    pub fn insert(&mut self, a: Affordance) {
        self.0 |= a.bit();
    }

    pub fn iter(self) -> impl Iterator<Item = Affordance> {
        Affordance::ALL.into_iter().filter(move |a| self.has(*a))
    }

    pub fn bits(self) -> u16 {
        self.0
    }
}

impl FromIterator<Affordance> for Affordances {
    fn from_iter<I: IntoIterator<Item = Affordance>>(iter: I) -> Self {
        let mut s = Affordances::default();
        for a in iter {
            s.insert(a);
        }
        s
    }
}

impl Serialize for Affordances {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter().map(Affordance::name))
    }
}

impl<'de> Deserialize<'de> for Affordances {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names
            .iter()
            .map(|n| Affordance::parse(n).ok_or_else(|| serde::de::Error::custom(format!("unknown affordance `{n}`"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectClass {
    pub token: String,
    /// Coarse semantic group; the synthetic embeddings correlate tokens that
    /// share a category.
    pub category: String,
    pub affordances: Affordances,
    pub extent: [f64; 3],
    #[serde(default)]
    pub states: Vec<String>,
    #[serde(default)]
    pub initial_states: Vec<String>,
    /// Predicate set on the target when this class is the instrument of `operate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operate_effect: Option<String>,
    /// Predicate that must already hold before `switchOn` succeeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_requires: Option<String>,
}

impl ObjectClass {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.token.is_empty() {
            return Err(WorldError::Invalid("empty class token".into()));
        }
        if self.extent.iter().any(|&e| !(e > 0.0)) {
            return Err(WorldError::Invalid(format!("`{}` has a non-positive extent", self.token)));
        }
        let a = self.affordances;
        if a.has(Affordance::Container) && !(a.has(Affordance::Openable) || a.has(Affordance::AlwaysOpen)) {
            return Err(WorldError::Invalid(format!(
                "container `{}` must be openable or always open",
                self.token
            )));
        }
        for s in &self.initial_states {
            if !self.states.contains(s) {
                return Err(WorldError::Invalid(format!("`{}` starts in unsupported state `{s}`", self.token)));
            }
        }
        Ok(())
    }
}

/// Classes known to a domain plus the global ordering of state predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTable {
    pub predicates: Vec<String>,
    pub classes: BTreeMap<String, ObjectClass>,
}

impl ClassTable {
    pub fn new(predicates: Vec<String>, classes: impl IntoIterator<Item = ObjectClass>) -> Result<Self, WorldError> {
        let mut map = BTreeMap::new();
        for c in classes {
            c.validate()?;
            for s in &c.states {
                if !predicates.contains(s) {
                    return Err(WorldError::Invalid(format!("`{}` uses undeclared predicate `{s}`", c.token)));
                }
            }
            if map.insert(c.token.clone(), c.clone()).is_some() {
                return Err(WorldError::Invalid(format!("duplicate class token `{}`", c.token)));
            }
        }
        Ok(Self { predicates, classes: map })
    }

    pub fn class(&self, token: &str) -> Result<&ObjectClass, WorldError> {
        self.classes.get(token).ok_or_else(|| WorldError::UnknownClass(token.to_string()))
    }

    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|p| p == name)
    }

    pub fn predicate_count(&self) -> usize {
        self.predicates.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: ObjectId,
    pub class: String,
    pub name: String,
    pub position: [f64; 3],
    pub yaw: f64,
    pub extent: [f64; 3],
    pub state: Vec<bool>,
    pub height_level: u32,
    #[serde(skip)]
    pub affordances: Affordances,
}

impl ObjectInstance {
    /// Instance of `class` centered at `position`, in the class's initial states.
    pub fn from_class(id: ObjectId, name: String, class: &ObjectClass, table: &ClassTable, position: [f64; 3]) -> Self {
        let mut state = vec![false; table.predicate_count()];
        for s in &class.initial_states {
            if let Some(i) = table.predicate_index(s) {
                state[i] = true;
            }
        }
        let mut o = Self {
            id,
            class: class.token.clone(),
            name,
            position,
            yaw: 0.0,
            extent: class.extent,
            state,
            height_level: 0,
            affordances: class.affordances,
        };
        o.height_level = o.tier();
        o
    }

    /// Instance with no class table behind it; handy for geometry checks.
    pub fn bare(id: ObjectId, class: &str, position: [f64; 3], extent: [f64; 3], affordances: Affordances, p: usize) -> Self {
        Self {
            id,
            class: class.to_string(),
            name: format!("{class}_{id}"),
            position,
            yaw: 0.0,
            extent,
            state: vec![false; p],
            height_level: 0,
            affordances,
        }
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::around(self.position, self.extent)
    }

    pub fn bottom(&self) -> f64 {
        self.position[2] - self.extent[2] / 2.0
    }

    pub fn top(&self) -> f64 {
        self.position[2] + self.extent[2] / 2.0
    }

    pub fn volume(&self) -> f64 {
        self.extent[0] * self.extent[1] * self.extent[2]
    }

    /// Elevation tier from the bottom face.
    pub fn tier(&self) -> u32 {
        (self.bottom().max(0.0) / TIER_HEIGHT + EPS).floor() as u32
    }

    fn footprint_contains(&self, p: [f64; 3]) -> bool {
        (0..2).all(|k| (p[k] - self.position[k]).abs() <= self.extent[k] / 2.0 + EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    OnTop,
    Inside,
    Near,
    ConnectedTo,
    StuckTo,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::OnTop,
        RelationKind::Inside,
        RelationKind::Near,
        RelationKind::ConnectedTo,
        RelationKind::StuckTo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::OnTop => "OnTop",
            RelationKind::Inside => "Inside",
            RelationKind::Near => "Near",
            RelationKind::ConnectedTo => "ConnectedTo",
            RelationKind::StuckTo => "StuckTo",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_geometric(self) -> bool {
        matches!(self, RelationKind::OnTop | RelationKind::Inside | RelationKind::Near)
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationEdge {
    pub kind: RelationKind,
    pub subject: ObjectId,
    pub object: ObjectId,
}

impl RelationEdge {
    pub fn new(kind: RelationKind, subject: ObjectId, object: ObjectId) -> Self {
        Self { kind, subject, object }
    }
}

/// The serialized form of a [`WorldState`]: objects sorted by id, edges
/// sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDoc {
    pub objects: Vec<ObjectInstance>,
    pub edges: Vec<RelationEdge>,
    pub robot: ObjectId,
    pub robot_elevation: u32,
    pub time_step: u32,
    pub geometry: GeometryConfig,
}

/// Object-centric world graph. Operations return new states; the class
/// table is shared between all states of a domain.
#[derive(Clone)]
pub struct WorldState {
    table: Arc<ClassTable>,
    pub objects: BTreeMap<ObjectId, ObjectInstance>,
    pub edges: BTreeSet<RelationEdge>,
    pub robot: ObjectId,
    pub robot_elevation: u32,
    pub time_step: u32,
    pub geometry: GeometryConfig,
}

impl fmt::Debug for WorldState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorldState")
            .field("objects", &self.objects.values().map(|o| &o.name).collect::<Vec<_>>())
            .field("edges", &self.edges)
            .field("robot_elevation", &self.robot_elevation)
            .field("time_step", &self.time_step)
            .finish()
    }
}

impl PartialEq for WorldState {
    fn eq(&self, other: &Self) -> bool {
        self.objects == other.objects
            && self.edges == other.edges
            && self.robot == other.robot
            && self.robot_elevation == other.robot_elevation
            && self.time_step == other.time_step
            && self.geometry == other.geometry
    }
}

impl WorldState {
    /// A state holding only the robot, created from the `robot` class.
    pub fn with_robot(table: Arc<ClassTable>, geometry: GeometryConfig, robot_class: &str, xy: [f64; 2]) -> Result<Self, WorldError> {
        let class = table.class(robot_class)?.clone();
        let robot = ObjectInstance::from_class(0, format!("{robot_class}_0"), &class, &table, [xy[0], xy[1], class.extent[2] / 2.0]);
        let mut objects = BTreeMap::new();
        objects.insert(0, robot);
        Ok(Self {
            table,
            objects,
            edges: BTreeSet::new(),
            robot: 0,
            robot_elevation: 0,
            time_step: 0,
            geometry,
        })
    }

    pub fn table(&self) -> &Arc<ClassTable> {
        &self.table
    }

    pub fn object(&self, id: ObjectId) -> Result<&ObjectInstance, WorldError> {
        self.objects.get(&id).ok_or(WorldError::UnknownObject(id))
    }

    pub fn object_mut(&mut self, id: ObjectId) -> Result<&mut ObjectInstance, WorldError> {
        self.objects.get_mut(&id).ok_or(WorldError::UnknownObject(id))
    }

    pub fn class_of(&self, id: ObjectId) -> Result<&ObjectClass, WorldError> {
        let o = self.object(id)?;
        self.table.class(&o.class)
    }

    pub fn next_id(&self) -> ObjectId {
        self.objects.keys().next_back().map_or(0, |k| k + 1)
    }

    /// Adds an object of class `token` at `position`, named `token_k` with the
    /// smallest free `k`.
    pub fn add_object(&mut self, token: &str, position: [f64; 3]) -> Result<ObjectId, WorldError> {
        let class = self.table.class(token)?.clone();
        let id = self.next_id();
        let name = self.fresh_name(token);
        let o = ObjectInstance::from_class(id, name, &class, &self.table, position);
        self.objects.insert(id, o);
        Ok(id)
    }

    pub fn fresh_name(&self, token: &str) -> String {
        (0..)
            .map(|k| format!("{token}_{k}"))
            .find(|n| !self.objects.values().any(|o| &o.name == n))
            .expect("unbounded range")
    }

    /// Removes an object and every edge touching it.
    pub fn remove_object(&mut self, id: ObjectId) -> Result<ObjectInstance, WorldError> {
        let o = self.objects.remove(&id).ok_or(WorldError::UnknownObject(id))?;
        self.edges.retain(|e| e.subject != id && e.object != id);
        Ok(o)
    }

    /// Switches an instance to another class, keeping id, pose and the
    /// predicates both classes support.
    pub fn reclass(&mut self, id: ObjectId, token: &str) -> Result<(), WorldError> {
        let class = self.table.class(token)?.clone();
        let name = self.fresh_name(token);
        let table = self.table.clone();
        let o = self.object_mut(id)?;
        o.class = class.token.clone();
        o.name = name;
        o.affordances = class.affordances;
        for (i, p) in table.predicates.iter().enumerate() {
            if !class.states.contains(p) {
                o.state[i] = false;
            }
        }
        Ok(())
    }

    pub fn id_by_name(&self, name: &str) -> Option<ObjectId> {
        self.objects.values().find(|o| o.name == name).map(|o| o.id)
    }

    pub fn ids_of_class(&self, token: &str) -> Vec<ObjectId> {
        self.objects.values().filter(|o| o.class == token).map(|o| o.id).collect()
    }

    pub fn has_edge(&self, kind: RelationKind, subject: ObjectId, object: ObjectId) -> bool {
        self.edges.contains(&RelationEdge::new(kind, subject, object))
    }

    pub fn edges_of_kind(&self, kind: RelationKind) -> impl Iterator<Item = &RelationEdge> {
        let lo = RelationEdge::new(kind, 0, 0);
        let hi = RelationEdge::new(kind, ObjectId::MAX, ObjectId::MAX);
        self.edges.range(lo..=hi)
    }

    /// The object the robot is holding, if any.
    pub fn held(&self) -> Option<ObjectId> {
        let robot = self.robot;
        self.edges_of_kind(RelationKind::ConnectedTo)
            .find(|e| e.object == robot)
            .map(|e| e.subject)
    }

    pub fn is_near(&self, id: ObjectId) -> bool {
        id == self.robot || self.has_edge(RelationKind::Near, self.robot, id)
    }

    /// Parent in the support/containment forest.
    pub fn support_of(&self, id: ObjectId) -> Option<ObjectId> {
        self.edges
            .iter()
            .find(|e| e.subject == id && matches!(e.kind, RelationKind::Inside | RelationKind::OnTop))
            .map(|e| e.object)
    }

    pub fn container_of(&self, id: ObjectId) -> Option<ObjectId> {
        self.edges_of_kind(RelationKind::Inside).find(|e| e.subject == id).map(|e| e.object)
    }

    /// Everything resting on or inside `id`, transitively, in id order.
    pub fn carried_by(&self, id: ObjectId) -> Vec<ObjectId> {
        let mut out = BTreeSet::new();
        let mut frontier = vec![id];
        while let Some(p) = frontier.pop() {
            for e in &self.edges {
                if e.object == p && matches!(e.kind, RelationKind::Inside | RelationKind::OnTop) && out.insert(e.subject) {
                    frontier.push(e.subject);
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn predicate(&self, id: ObjectId, name: &str) -> bool {
        match (self.objects.get(&id), self.table.predicate_index(name)) {
            (Some(o), Some(i)) => o.state[i],
            _ => false,
        }
    }

    pub fn supports_predicate(&self, id: ObjectId, name: &str) -> bool {
        self.class_of(id).map(|c| c.states.iter().any(|s| s == name)).unwrap_or(false)
    }

    /// Sets a predicate bit if the class supports it. Returns whether it did.
    pub fn set_predicate(&mut self, id: ObjectId, name: &str, value: bool) -> bool {
        if !self.supports_predicate(id, name) {
            return false;
        }
        let Some(i) = self.table.predicate_index(name) else {
            return false;
        };
        match self.objects.get_mut(&id) {
            Some(o) => {
                o.state[i] = value;
                true
            }
            None => false,
        }
    }

    pub fn is_open(&self, id: ObjectId) -> bool {
        match self.objects.get(&id) {
            Some(o) => o.affordances.has(super::Affordance::AlwaysOpen) || self.predicate(id, "open"),
            None => false,
        }
    }

    /// True when some container on the way up from `id` is closed.
    pub fn is_enclosed(&self, id: ObjectId) -> bool {
        let mut cur = id;
        let mut guard = 0;
        while let Some(c) = self.container_of(cur) {
            if !self.is_open(c) {
                return true;
            }
            cur = c;
            guard += 1;
            if guard > self.objects.len() {
                break;
            }
        }
        false
    }

    /// Moves `id` and everything it carries by `delta`.
    pub fn translate_with_contents(&mut self, id: ObjectId, delta: [f64; 3]) {
        let mut ids = self.carried_by(id);
        ids.push(id);
        for i in ids {
            if let Some(o) = self.objects.get_mut(&i) {
                for k in 0..3 {
                    o.position[k] += delta[k];
                }
            }
        }
    }

    pub fn to_doc(&self) -> StateDoc {
        StateDoc {
            objects: self.objects.values().cloned().collect(),
            edges: self.edges.iter().copied().collect(),
            robot: self.robot,
            robot_elevation: self.robot_elevation,
            time_step: self.time_step,
            geometry: self.geometry,
        }
    }

    pub fn from_doc(doc: StateDoc, table: Arc<ClassTable>) -> Result<Self, WorldError> {
        let mut objects = BTreeMap::new();
        for mut o in doc.objects {
            let class = table.class(&o.class)?;
            o.affordances = class.affordances;
            if o.state.len() != table.predicate_count() {
                return Err(WorldError::Invalid(format!("{} has {} state bits", o.name, o.state.len())));
            }
            objects.insert(o.id, o);
        }
        let s = Self {
            table,
            objects,
            edges: doc.edges.into_iter().collect(),
            robot: doc.robot,
            robot_elevation: doc.robot_elevation,
            time_step: doc.time_step,
            geometry: doc.geometry,
        };
        s.object(s.robot)?;
        Ok(s)
    }

    /// Canonical JSON: objects sorted by id, edges sorted lexicographically.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("state serializes")
    }

    /// Compact identity of the state for duplicate detection. Ignores the
    /// time step; positions are compared at micrometer resolution.
    pub fn key(&self) -> Vec<u8> {
        let mut k = Vec::with_capacity(self.objects.len() * 48 + self.edges.len() * 9 + 8);
        k.extend_from_slice(&self.robot_elevation.to_le_bytes());
        for o in self.objects.values() {
            k.extend_from_slice(&o.id.to_le_bytes());
            k.extend_from_slice(o.class.as_bytes());
            k.push(0);
            for v in o.position.iter().chain(std::iter::once(&o.yaw)) {
                k.extend_from_slice(&((v * 1e6).round() as i64).to_le_bytes());
            }
            let mut bits = 0u64;
            for (i, &b) in o.state.iter().enumerate() {
                if b {
                    bits |= 1 << (i % 64);
                }
            }
            k.extend_from_slice(&bits.to_le_bytes());
        }
        for e in &self.edges {
            k.push(e.kind as u8);
            k.extend_from_slice(&e.subject.to_le_bytes());
            k.extend_from_slice(&e.object.to_le_bytes());
        }
        k
    }

    /// Recomputes derived edges and tiers in place.
    pub fn refresh(&mut self) {
        let fresh = derive_edges(self);
        self.edges = fresh;
        for o in self.objects.values_mut() {
            o.height_level = o.tier();
        }
        if let Some(r) = self.objects.get_mut(&self.robot) {
            r.height_level = self.robot_elevation;
        }
    }

    /// Checks every structural invariant of the state.
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::Invalid(m));
        self.object(self.robot)?;
        let p = self.table.predicate_count();
        for o in self.objects.values() {
            let class = self.table.class(&o.class)?;
            if o.state.len() != p {
                return bad(format!("{} state length {} != {p}", o.name, o.state.len()));
            }
            for (i, &b) in o.state.iter().enumerate() {
                if b && !class.states.contains(&self.table.predicates[i]) {
                    return bad(format!("{} has unsupported predicate {}", o.name, self.table.predicates[i]));
                }
            }
            if o.extent.iter().any(|&e| !(e > 0.0)) {
                return bad(format!("{} has a non-positive extent", o.name));
            }
        }
        let mut inside_parent = BTreeMap::new();
        let mut grasped = 0;
        for e in &self.edges {
            if e.subject == e.object {
                return bad(format!("self edge {e:?}"));
            }
            self.object(e.subject)?;
            let obj = self.object(e.object)?;
            if e.kind == RelationKind::Inside {
                if !obj.affordances.has(super::Affordance::Container) {
                    return bad(format!("Inside edge into non-container {}", obj.name));
                }
                if inside_parent.insert(e.subject, e.object).is_some() {
                    return bad(format!("object {} has two containers", e.subject));
                }
            }
            if e.kind == RelationKind::ConnectedTo && e.object == self.robot {
                grasped += 1;
            }
        }
        if grasped > 1 {
            return bad(format!("robot holds {grasped} objects"));
        }
        for &start in inside_parent.keys() {
            let mut cur = start;
            for _ in 0..=self.objects.len() {
                match inside_parent.get(&cur) {
                    Some(&next) if next == start => return bad(format!("containment cycle through {start}")),
                    Some(&next) => cur = next,
                    None => break,
                }
            }
        }
        if derive_edges(self) != self.edges {
            return bad("stored edges disagree with geometry".into());
        }
        Ok(())
    }
}

/// Geometric truth of a relation between two objects. `ConnectedTo` and
/// `StuckTo` are read from the edge set.
pub fn eval_relation(state: &WorldState, kind: RelationKind, a: ObjectId, b: ObjectId) -> Result<bool, WorldError> {
    let oa = state.object(a)?;
    let ob = state.object(b)?;
    if a == b {
        return Ok(false);
    }
    Ok(match kind {
        RelationKind::Inside => match containment_region(ob, &state.geometry) {
            Ok(cr) => cr.contains(oa.position),
            Err(_) => false,
        },
        RelationKind::OnTop => {
            oa.position[2] > ob.position[2]
                && manipulation_region(oa, &state.geometry).intersects(&manipulation_region(ob, &state.geometry))
        }
        RelationKind::Near => {
            let dx = oa.position[0] - ob.position[0];
            let dy = oa.position[1] - ob.position[1];
            (dx * dx + dy * dy).sqrt() <= state.geometry.near_radius
        }
        RelationKind::ConnectedTo | RelationKind::StuckTo => state.has_edge(kind, a, b),
    })
}

/// Returns a copy of `state` whose Inside/OnTop/Near edges are recomputed
/// from geometry. ConnectedTo and StuckTo edges are kept.
pub fn refresh_geometric_edges(state: &WorldState) -> WorldState {
    let mut s = state.clone();
    s.refresh();
    s
}

/// Derived edge set:
/// * `Near(robot, o)` for every object within the near radius of the robot;
/// * `Inside(a, b)` to the smallest container (strictly larger than `a`)
///   whose containment region holds the center of `a`;
/// * `OnTop(a, b)` to the highest surface under `a`, for objects that are
///   not held, stuck or inside something.
fn derive_edges(state: &WorldState) -> BTreeSet<RelationEdge> {
    use super::Affordance as A;
    let robot = state.robot;
    let g = &state.geometry;
    let mut out: BTreeSet<RelationEdge> = state
        .edges
        .iter()
        .filter(|e| !e.kind.is_geometric() && state.objects.contains_key(&e.subject) && state.objects.contains_key(&e.object))
        .copied()
        .collect();
    let attached: BTreeSet<ObjectId> = out
        .iter()
        .filter(|e| (e.kind == RelationKind::ConnectedTo && e.object == robot) || e.kind == RelationKind::StuckTo)
        .map(|e| e.subject)
        .collect();
    let Some(r) = state.objects.get(&robot) else {
        return out;
    };

    for o in state.objects.values() {
        if o.id == robot {
            continue;
        }
        let dx = o.position[0] - r.position[0];
        let dy = o.position[1] - r.position[1];
        if (dx * dx + dy * dy).sqrt() <= g.near_radius {
            out.insert(RelationEdge::new(RelationKind::Near, robot, o.id));
        }
    }

    let regions: Vec<(&ObjectInstance, Aabb)> = state
        .objects
        .values()
        .filter(|o| o.id != robot)
        .filter_map(|o| containment_region(o, g).ok().map(|cr| (o, cr)))
        .collect();
    let mut inside = BTreeSet::new();
    for a in state.objects.values() {
        if a.id == robot || attached.contains(&a.id) {
            continue;
        }
        let va = a.volume();
        let best = regions
            .iter()
            .filter(|(b, cr)| b.id != a.id && b.volume() > va && cr.contains(a.position))
            .min_by(|(x, _), (y, _)| x.volume().total_cmp(&y.volume()).then(x.id.cmp(&y.id)));
        if let Some((b, _)) = best {
            out.insert(RelationEdge::new(RelationKind::Inside, a.id, b.id));
            inside.insert(a.id);
        }
    }

    for a in state.objects.values() {
        if a.id == robot || attached.contains(&a.id) || inside.contains(&a.id) {
            continue;
        }
        let mra = manipulation_region(a, g);
        let bottom = a.bottom();
        let best = state
            .objects
            .values()
            .filter(|b| b.id != a.id && b.id != robot && b.affordances.has(A::Surface))
            .filter(|b| b.top() <= bottom + 1e-6 && b.footprint_contains(a.position))
            .filter(|b| a.position[2] > b.position[2] && mra.intersects(&manipulation_region(b, g)))
            .max_by(|x, y| x.top().total_cmp(&y.top()).then(y.id.cmp(&x.id)));
        if let Some(b) = best {
            out.insert(RelationEdge::new(RelationKind::OnTop, a.id, b.id));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::Affordance as A;

    fn class(token: &str, affs: &[A], extent: [f64; 3], states: &[&str]) -> ObjectClass {
        ObjectClass {
            token: token.into(),
            category: token.into(),
            affordances: affs.iter().copied().collect(),
            extent,
            states: states.iter().map(|s| s.to_string()).collect(),
            initial_states: vec![],
            operate_effect: None,
            switch_requires: None,
        }
    }

    fn table() -> Arc<ClassTable> {
        Arc::new(
            ClassTable::new(
                vec!["open".into(), "closed".into()],
                [
                    class("robot", &[], [0.6, 0.6, 1.0], &[]),
                    class("table", &[A::Surface], [1.6, 0.9, 0.8], &[]),
                    class("box", &[A::Container, A::Openable, A::Graspable, A::Movable], [0.4, 0.4, 0.3], &["open", "closed"]),
                    class("apple", &[A::Graspable, A::Movable], [0.08, 0.08, 0.08], &[]),
                ],
            )
            .unwrap(),
        )
    }

    fn scene() -> WorldState {
        let mut s = WorldState::with_robot(table(), GeometryConfig::default(), "robot", [0.0, -3.0]).unwrap();
        s.add_object("table", [0.0, 0.0, 0.4]).unwrap();
        s.add_object("box", [0.3, 0.0, 0.95]).unwrap();
        s.add_object("apple", [0.3, 0.0, 0.9]).unwrap();
        s.refresh();
        s
    }

    #[test]
    fn derived_support_and_containment() {
        let s = scene();
        assert!(s.has_edge(RelationKind::OnTop, 2, 1));
        assert!(s.has_edge(RelationKind::Inside, 3, 2));
        assert!(!s.has_edge(RelationKind::OnTop, 3, 1));
        assert_eq!(s.carried_by(1), vec![2, 3]);
        s.validate().unwrap();
    }

    #[test]
    fn refresh_is_idempotent() {
        let s = scene();
        let once = refresh_geometric_edges(&s);
        let twice = refresh_geometric_edges(&once);
        assert_eq!(once, twice);
        assert_eq!(once.canonical_json(), twice.canonical_json());
    }

    #[test]
    fn robot_alone_has_no_edges() {
        let s = WorldState::with_robot(table(), GeometryConfig::default(), "robot", [0.0, 0.0]).unwrap();
        assert!(refresh_geometric_edges(&s).edges.is_empty());
    }

    #[test]
    fn stale_near_edges_are_replaced() {
        let mut s = scene();
        assert!(!s.is_near(1));
        s.object_mut(0).unwrap().position = [0.0, -1.0, 0.5];
        let fresh = refresh_geometric_edges(&s);
        assert!(fresh.is_near(1) && fresh.is_near(2) && fresh.is_near(3));
    }

    #[test]
    fn closed_box_encloses() {
        let mut s = scene();
        assert!(s.is_enclosed(3));
        s.set_predicate(2, "open", true);
        assert!(!s.is_enclosed(3));
    }

    #[test]
    fn doc_round_trip() {
        let s = scene();
        let back = WorldState::from_doc(serde_json::from_str(&s.canonical_json()).unwrap(), table()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.key(), s.key());
    }

    #[test]
    fn unsupported_predicate_is_invalid() {
        let mut s = scene();
        s.object_mut(3).unwrap().state[0] = true;
        assert!(s.validate().is_err());
    }

    #[test]
    fn affordance_names_round_trip() {
        for a in Affordance::ALL {
            assert_eq!(Affordance::parse(a.name()), Some(a));
        }
        let set: Affordances = [A::Surface, A::Fuel].into_iter().collect();
        let json = serde_json::to_string(&set).unwrap();
        assert_eq!(json, r#"["surface","fuel"]"#);
        assert_eq!(serde_json::from_str::<Affordances>(&json).unwrap(), set);
    }
}
