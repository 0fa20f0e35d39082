//! Domain catalogs, randomized scene and goal sampling, and the five
//! generalization perturbations.

mod catalog;
mod perturb;
mod scene;

pub use catalog::{DomainCatalog, GoalTemplate, Layout, Prior, Spot};
pub use perturb::{perturb, Perturbation, PerturbationKind};
pub use scene::{instantiate_goal, sample_scene};

use thiserror::Error;

use crate::worldsim::WorldError;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("scene has no instance of class `{0}`")]
    MissingClass(String),
    #[error("nothing to perturb: {0}")]
    NothingToPerturb(String),
    #[error("invalid catalog: {0}")]
    BadCatalog(String),
    #[error("unknown built-in catalog `{0}`")]
    UnknownDomain(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
