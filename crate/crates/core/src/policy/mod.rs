//! The imitation policy: a gated graph encoder with a metric branch, an LSTM
//! over the action history, goal-conditioned attention, a factored tool head
//! and an auto-regressive action decoder.
//!
//! Every object is scored from its own embedding, so the output space is not
//! tied to a class vocabulary and unseen classes can be chosen at test time.

mod features;
mod net;
mod params;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{action_dim, state_dim, GoalFeatures, Scene, FLAG_COUNT, HEIGHT_SCALE, METRIC_DIM};
pub use net::{argmax, argmax_interaction, Decision, Encodings, Forward, Stage};
pub use params::{Dims, NamedTensor, PolicyParameters};

use crate::domains::DomainCatalog;
use crate::embed::{catalog_categories, EmbedConfig, EmbeddingTable, Provider};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint was trained on catalog {expected}, not {found}")]
    CatalogMismatch { expected: String, found: String },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("embeddings: {0}")]
    Embed(#[from] crate::embed::EmbedError),
}

/// Switches for the ablation study. All on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub use_ggcn: bool,
    pub use_metric: bool,
    pub use_attention: bool,
    pub use_history: bool,
    /// Score objects from their embeddings rather than from a fixed class
    /// vocabulary.
    pub use_factored: bool,
    /// Feed tool likelihoods to the object heads; off gives the model without
    /// a tool head.
    pub use_tool_head: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Ablations {
            use_ggcn: true,
            use_metric: true,
            use_attention: true,
            use_history: true,
            use_factored: true,
            use_tool_head: true,
        }
    }
}

impl Ablations {
    /// The four single-component ablations of the study, with their names.
    pub fn study() -> Vec<(&'static str, Ablations)> {
        let full = Ablations::default();
        vec![
            ("-attention", Ablations { use_attention: false, ..full }),
            ("-history", Ablations { use_history: false, ..full }),
            ("-ggcn", Ablations { use_ggcn: false, ..full }),
            ("-tool-head", Ablations { use_tool_head: false, ..full }),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden: usize,
    /// Stacked message-passing blocks, each with its own GRU.
    pub ggcn_layers: usize,
    /// Convolution steps per block.
    pub conv_steps: usize,
    /// Layers of the metric branch.
    pub fcn_depth: usize,
    /// Hidden layers of each prediction head.
    pub head_layers: usize,
    pub prelu_slope: f64,
    /// Most recent actions fed to the history encoder; 0 keeps all.
    pub history_cap: usize,
    pub ablations: Ablations,
    pub embed: EmbedConfig,
    /// Seed of the parameter initialization.
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 128,
            ggcn_layers: 4,
            conv_steps: 2,
            fcn_depth: 2,
            head_layers: 3,
            prelu_slope: 0.25,
            history_cap: 50,
            ablations: Ablations::default(),
            embed: EmbedConfig::default(),
            seed: 0,
        }
    }
}

/// Network, parameters and the catalog-derived input layout.
#[derive(Debug, Clone)]
pub struct Policy {
    pub config: PolicyConfig,
    pub params: PolicyParameters,
    pub embed: EmbeddingTable,
    /// State predicates, in catalog order.
    pub predicates: Vec<String>,
    /// Tool classes.
    pub tools: BTreeSet<String>,
    /// Sorted class vocabulary of the non-factored heads (held-out classes
    /// excluded).
    pub vocabulary: Vec<String>,
    /// Room size used to normalize positions.
    pub room: [f64; 2],
    pub catalog_hash: String,
}

/// On-disk form of a policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub catalog_hash: String,
    pub config: PolicyConfig,
    pub embed_provider: Provider,
    /// Vector file contents for the file provider; empty for synthetic.
    #[serde(default)]
    pub embed_vectors: String,
    pub room: [f64; 2],
    pub tensors: Vec<NamedTensor>,
}

impl Policy {
    /// Fresh policy with synthetic embeddings.
    pub fn new(catalog: &DomainCatalog, config: PolicyConfig) -> Self {
        let embed = EmbeddingTable::for_catalog(catalog, config.embed);
        Self::with_embeddings(catalog, config, embed)
    }

    pub fn with_embeddings(catalog: &DomainCatalog, config: PolicyConfig, embed: EmbeddingTable) -> Self {
        let mut vocabulary: Vec<String> =
            catalog.classes.iter().map(|c| c.token.clone()).filter(|t| !catalog.held_out.contains(t)).collect();
        vocabulary.sort();
        let predicates = catalog.predicates.clone();
        let dims = Dims { state: state_dim(predicates.len()), embed: embed.dim(), vocab: vocabulary.len() };
        let config = PolicyConfig { embed: embed.config, ..config };
        Policy {
            params: PolicyParameters::init(&config, dims, config.seed),
            config,
            embed,
            predicates,
            tools: catalog.tools.iter().cloned().collect(),
            vocabulary,
            room: catalog.layout.room,
            catalog_hash: catalog.hash(),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims { state: state_dim(self.predicates.len()), embed: self.embed.dim(), vocab: self.vocabulary.len() }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: 1,
            catalog_hash: self.catalog_hash.clone(),
            config: self.config,
            embed_provider: self.embed.provider,
            embed_vectors: if self.embed.provider == Provider::File { self.embed.to_text() } else { String::new() },
            room: self.room,
            tensors: self.params.to_named(),
        }
    }

    pub fn from_checkpoint(catalog: &DomainCatalog, ck: Checkpoint) -> Result<Self, PolicyError> {
        let found = catalog.hash();
        if ck.catalog_hash != found {
            return Err(PolicyError::CatalogMismatch { expected: ck.catalog_hash, found });
        }
        let embed = match ck.embed_provider {
            Provider::Synthetic => EmbeddingTable::for_catalog(catalog, ck.config.embed),
            Provider::File => EmbeddingTable::parse(&ck.embed_vectors, ck.config.embed, catalog_categories(catalog))?,
        };
        let mut p = Self::with_embeddings(catalog, ck.config, embed);
        p.room = ck.room;
        p.params = PolicyParameters::from_named(&p.params, ck.tensors).map_err(PolicyError::BadCheckpoint)?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path, catalog: &DomainCatalog) -> Result<Self, PolicyError> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(catalog, ck)
    }

    /// Fingerprint of config and parameters.
    pub fn hash(&self) -> String {
        crate::sha256_hex(serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes").as_bytes())
    }
}
