//! Word embeddings for class and relation tokens.
//!
//! Two providers share one lookup contract. The synthetic provider derives a
//! unit vector from seeded hashes so that tokens in the same category lie
//! close together. The file provider reads `token v1 v2 .. vq` lines and falls
//! back to the synthetic vector for tokens it does not know.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::DomainCatalog;
use crate::worldsim::RelationKind;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("embedding file has no vectors")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Synthetic,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub dim: usize,
    pub seed: u64,
    pub category_weight: f64,
    pub token_weight: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { dim: 300, seed: 0, category_weight: 0.7, token_weight: 0.3 }
    }
}

/// Token to dense vector map. Lookup is total and deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub config: EmbedConfig,
    pub provider: Provider,
    vectors: BTreeMap<String, Vec<f64>>,
    categories: BTreeMap<String, String>,
}

/// Seeded standard-normal vector keyed by `token`.
fn hashed_gaussian(seed: u64, token: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, token, 0));
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Category map of a catalog: every class token maps to its category and
/// every relation name to itself.
pub fn catalog_categories(catalog: &DomainCatalog) -> BTreeMap<String, String> {
    let mut m: BTreeMap<String, String> = catalog.classes.iter().map(|c| (c.token.clone(), c.category.clone())).collect();
    for r in RelationKind::ALL {
        m.insert(r.name().to_string(), r.name().to_string());
    }
    m
}

impl EmbeddingTable {
    /// Synthetic provider over a category map. Known tokens are precomputed.
    pub fn synthetic(config: EmbedConfig, categories: BTreeMap<String, String>) -> Self {
        let mut t = EmbeddingTable { config, provider: Provider::Synthetic, vectors: BTreeMap::new(), categories };
        let tokens: Vec<String> = t.categories.keys().cloned().collect();
        for tok in tokens {
            let v = t.synthetic_vector(&tok);
            t.vectors.insert(tok, v);
        }
        t
    }

    pub fn for_catalog(catalog: &DomainCatalog, config: EmbedConfig) -> Self {
        Self::synthetic(config, catalog_categories(catalog))
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn category<'a>(&'a self, token: &'a str) -> &'a str {
        self.categories.get(token).map(String::as_str).unwrap_or(token)
    }

    /// `normalize(w_c * h(category) + w_t * h(token))`.
    pub fn synthetic_vector(&self, token: &str) -> Vec<f64> {
        let c = &self.config;
        let hc = hashed_gaussian(c.seed, self.category(token), c.dim);
        let ht = hashed_gaussian(c.seed, token, c.dim);
        normalize(hc.iter().zip(&ht).map(|(a, b)| c.category_weight * a + c.token_weight * b).collect())
    }

    pub fn lookup(&self, token: &str) -> Cow<'_, [f64]> {
        match self.vectors.get(token) {
            Some(v) => Cow::Borrowed(v),
            None => Cow::Owned(self.synthetic_vector(token)),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// Parses `token v1 .. vq` lines. A leading `count dim` header line is
    /// accepted. Out-of-vocabulary lookups use the synthetic provider over
    /// `categories`.
    pub fn parse(text: &str, config: EmbedConfig, categories: BTreeMap<String, String>) -> Result<Self, EmbedError> {
        let mut vectors = BTreeMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
                continue;
            }
            let v = values
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| EmbedError::Parse { line: line_no, msg: format!("`{s}`: {e}") }))
                .collect::<Result<Vec<f64>, _>>()?;
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected || expected == 0 {
                return Err(EmbedError::Dimension { line: line_no, expected, found: v.len() });
            }
            vectors.insert(token.to_string(), v);
        }
        let dim = dim.ok_or(EmbedError::Empty)?;
        Ok(EmbeddingTable { config: EmbedConfig { dim, ..config }, provider: Provider::File, vectors, categories })
    }

    pub fn load(path: &Path, config: EmbedConfig, categories: BTreeMap<String, String>) -> Result<Self, EmbedError> {
        Self::parse(&std::fs::read_to_string(path)?, config, categories)
    }

    /// Stored vectors as `token v1 .. vq` lines in token order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (tok, v) in &self.vectors {
            s.push_str(tok);
            for x in v {
                write!(s, " {x}").expect("writing to a string");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats() -> BTreeMap<String, String> {
        [("tray", "flat-carrier"), ("basket", "flat-carrier"), ("wall", "structure"), ("milk", "drink")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn lookup_is_deterministic_and_unit_norm() {
        let t = EmbeddingTable::synthetic(EmbedConfig::default(), cats());
        let a = t.lookup("tray").into_owned();
        assert_eq!(a, t.lookup("tray").into_owned());
        assert_eq!(a.len(), 300);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let unknown = t.lookup("zeppelin");
        assert_eq!(unknown.len(), 300);
        assert_eq!(unknown, t.lookup("zeppelin"));
    }

    #[test]
    fn same_category_is_closer() {
        let t = EmbeddingTable::synthetic(EmbedConfig::default(), cats());
        let same = cosine(&t.lookup("tray"), &t.lookup("basket"));
        let cross = cosine(&t.lookup("tray"), &t.lookup("wall"));
        assert!(same > cross, "{same} vs {cross}");
        assert!(same > 0.7);
    }

    #[test]
    fn substitution_pairs_of_every_catalog_are_closer_than_any_cross_pair() {
        for name in DomainCatalog::BUILTIN {
            let c = DomainCatalog::builtin(name).unwrap();
            let t = EmbeddingTable::for_catalog(&c, EmbedConfig::default());
            for (a, b) in &c.substitutions {
                let same = cosine(&t.lookup(a), &t.lookup(b));
                for other in c.classes.iter().filter(|k| k.category != t.category(a)) {
                    let cross = cosine(&t.lookup(a), &t.lookup(&other.token));
                    assert!(same > cross, "{name}: {a}/{b} {same} vs {a}/{} {cross}", other.token);
                }
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let t = EmbeddingTable::synthetic(EmbedConfig { dim: 12, ..Default::default() }, cats());
        let back = EmbeddingTable::parse(&t.to_text(), t.config, cats()).unwrap();
        assert_eq!(back.provider, Provider::File);
        for tok in t.tokens() {
            assert_eq!(back.lookup(tok), t.lookup(tok));
        }
        let again = EmbeddingTable::parse(&back.to_text(), back.config, cats()).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn file_provider_falls_back_for_unknown_tokens() {
        let text = "2 3\nmilk 0.5 -1 2.25\ntray 1 0 0\n";
        let t = EmbeddingTable::parse(text, EmbedConfig::default(), cats()).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(&*t.lookup("milk"), &[0.5, -1.0, 2.25]);
        let oov = t.lookup("basket");
        assert_eq!(oov.len(), 3);
        assert!((oov.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let c = EmbedConfig::default();
        assert!(matches!(EmbeddingTable::parse("a 1 2\nb 1\n", c, cats()), Err(EmbedError::Dimension { line: 2, .. })));
        assert!(matches!(EmbeddingTable::parse("a 1 x\n", c, cats()), Err(EmbedError::Parse { line: 1, .. })));
        assert!(matches!(EmbeddingTable::parse("\n", c, cats()), Err(EmbedError::Empty)));
    }
}
