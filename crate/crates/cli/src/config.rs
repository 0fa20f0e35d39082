use std::path::Path;

use serde::{Deserialize, Serialize};
use tooluse::domains::DomainCatalog;
use tooluse::embed::{catalog_categories, EmbeddingTable};
use tooluse::eval::{RolloutConfig, SuiteSpec};
use tooluse::oracle::DemoConfig;
use tooluse::policy::{Policy, PolicyConfig};
use tooluse::session::SessionConfig;
use tooluse::train::TrainConfig;

use crate::CliError;

/// Everything one experiment needs, read from a JSON file. Missing fields
/// take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in catalog name or path to a catalog JSON file.
    pub domain: String,
    /// `synthetic` or `file:<path>` to a whitespace-separated vector file.
    pub embeddings: String,
    /// Scenes written by `gen`.
    pub scenes: u64,
    pub demo: DemoConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub suites: SuiteSpec,
    pub rollout: RolloutConfig,
    /// Drop-noise level of the robustness comparison; 0 skips it.
    pub robustness_epsilon: f64,
    pub session: SessionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: "mini-home".into(),
            embeddings: "synthetic".into(),
            scenes: 10,
            demo: DemoConfig::default(),
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            suites: SuiteSpec::default(),
            rollout: RolloutConfig::default(),
            robustness_epsilon: 0.1,
            session: SessionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads `path`, or the defaults when there is none.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Sets every random stream except the embedding table from one seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.demo.seed = seed;
        self.policy.seed = seed;
        self.train.seed = seed;
        self.suites.seed = seed;
        self.rollout.seed = seed;
        self.session.seed = seed;
        self
    }

    pub fn catalog(&self) -> Result<DomainCatalog, CliError> {
        DomainCatalog::load(&self.domain).map_err(|e| CliError::Config(format!("domain `{}`: {e}", self.domain)))
    }

    pub fn embedding_table(&self, catalog: &DomainCatalog) -> Result<EmbeddingTable, CliError> {
        match self.embeddings.as_str() {
            "synthetic" => Ok(EmbeddingTable::for_catalog(catalog, self.policy.embed)),
            other => {
                let path = other
                    .strip_prefix("file:")
                    .ok_or_else(|| CliError::Config(format!("embeddings must be `synthetic` or `file:<path>`, not `{other}`")))?;
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
                EmbeddingTable::parse(&text, self.policy.embed, catalog_categories(catalog)).map_err(|e| CliError::Config(format!("{path}: {e}")))
            }
        }
    }

    /// Untrained policy for `catalog` under this configuration.
    pub fn policy(&self, catalog: &DomainCatalog) -> Result<Policy, CliError> {
        Ok(Policy::with_embeddings(catalog, self.policy, self.embedding_table(catalog)?))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.embeddings != "synthetic" && !self.embeddings.starts_with("file:") {
            return Err(CliError::Config(format!("embeddings must be `synthetic` or `file:<path>`, not `{}`", self.embeddings)));
        }
        if !(0.0..=1.0).contains(&self.robustness_epsilon) || !(0.0..=1.0).contains(&self.rollout.epsilon) {
            return Err(CliError::Config("noise levels must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_in_defaults_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"domain": "mini-factory", "policy": {"hidden": 16}}"#).unwrap();
        let c = ExperimentConfig::load(Some(&p)).unwrap();
        assert_eq!(c.domain, "mini-factory");
        assert_eq!(c.policy.hidden, 16);
        assert_eq!(c.policy.ggcn_layers, PolicyConfig::default().ggcn_layers);
        std::fs::write(&p, r#"{"hiden": 3}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(Some(&p)), Err(CliError::Config(_))));
    }

    #[test]
    fn seed_reaches_every_stream() {
        let c = ExperimentConfig::default().with_seed(7);
        assert_eq!([c.demo.seed, c.policy.seed, c.train.seed, c.suites.seed, c.rollout.seed, c.session.seed], [7; 6]);
    }

    #[test]
    fn bad_embedding_spec_is_a_config_error() {
        let c = ExperimentConfig { embeddings: "glove".into(), ..Default::default() };
        let cat = c.catalog().unwrap();
        assert!(matches!(c.embedding_table(&cat), Err(CliError::Config(_))));
    }
}
