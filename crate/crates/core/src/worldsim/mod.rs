//! Object-centric world state, relation geometry and goal checking.
//!
//! A [`WorldState`] is a set of object instances with poses, extents and
//! boolean state predicates, plus a set of typed [`RelationEdge`]s. Geometric
//! relations (`Inside`, `OnTop`, `Near`) are derived from box arithmetic by
//! [`refresh_geometric_edges`]; `ConnectedTo` and `StuckTo` are symbolic and
//! only change through actions.

mod geometry;
mod goal;
mod state;

pub use geometry::{containment_region, manipulation_region, Aabb, GeometryConfig};
pub use goal::{goal_check, lowest_witness, unsatisfied_count, Constraint, GoalSpec, Term};
pub use state::{
    eval_relation, refresh_geometric_edges, Affordance, Affordances, ClassTable, ObjectClass,
    ObjectId, ObjectInstance, RelationEdge, RelationKind, StateDoc, WorldState, TIER_HEIGHT,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("object {0} does not exist")]
    UnknownObject(ObjectId),
    #[error("class `{0}` has no container affordance")]
    NotAContainer(String),
    #[error("unknown class token `{0}`")]
    UnknownClass(String),
    #[error("invalid state: {0}")]
    Invalid(String),
}
