//! Search-based demonstration generator, demonstration corpora and the
//! corpus-augmentation procedures.

mod augment;
mod corpus;
mod planner;
mod trace;

pub use augment::{augment, AugmentConfig};
pub use corpus::{
    build_corpus, groups, oracle_traces, rank_optimality, scene_seed, Corpus, DemoConfig, DemoReport, Manifest, ManifestEntry,
    Split, MANIFEST_FILE, TRACES_FILE,
};
pub use planner::{additive_bound, lower_bound, near_target, plan, plan_with_stats, PlanStats, PlannerConfig};
pub use trace::{group_of, replay, DemonstrationTrace, Provenance, TraceRecord};

use thiserror::Error;

use crate::actions::{RejectReason, WireError};
use crate::domains::DomainError;
use crate::train::TrainError;
use crate::worldsim::WorldError;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("search budget exhausted after {expanded} expansions")]
    BudgetExhausted { expanded: usize },
    #[error("replay rejected step {step}: {reason}")]
    Replay { step: usize, reason: RejectReason },
    #[error("invalid trace or corpus: {0}")]
    Invalid(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Split(#[from] TrainError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
