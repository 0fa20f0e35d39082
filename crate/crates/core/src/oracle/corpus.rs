use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::trace::{group_of, DemonstrationTrace, Provenance, TraceRecord};
use super::{plan_with_stats, OracleError, PlannerConfig};
use crate::derive_seed;
use crate::domains::{instantiate_goal, sample_scene, DomainCatalog, DomainError};
use crate::worldsim::goal_check;

/// Split membership of a trace. Augmented traces whose source pair landed
/// in the test split are `Excluded`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Excluded,
}

/// Demonstration corpus with split assignment and optimality weights.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub domain: String,
    pub catalog_hash: String,
    pub traces: Vec<DemonstrationTrace>,
    pub splits: Vec<Split>,
    /// Per-trace loss multiplier from [`rank_optimality`].
    pub alpha: Vec<f64>,
    /// Generation seed, configuration and report, echoed into the manifest.
    pub info: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub group: String,
    pub goal_id: String,
    pub scene_seed: u64,
    pub provenance: Provenance,
    pub split: Split,
    pub alpha: f64,
    pub len: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub domain: String,
    pub catalog_hash: String,
    pub info: serde_json::Value,
    pub traces: Vec<ManifestEntry>,
}

pub const TRACES_FILE: &str = "traces.ndjson";
pub const MANIFEST_FILE: &str = "manifest.json";

impl Corpus {
    /// All traces in the train split, with uniform weights.
    pub fn new(domain: &str, catalog_hash: &str, traces: Vec<DemonstrationTrace>) -> Self {
        let alpha = rank_optimality(&traces, 2.0, 1.0);
        let splits = vec![Split::Train; traces.len()];
        Corpus { domain: domain.into(), catalog_hash: catalog_hash.into(), traces, splits, alpha, info: serde_json::Value::Null }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.traces.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    pub fn manifest(&self) -> Manifest {
        let traces = self
            .traces
            .iter()
            .enumerate()
            .map(|(i, t)| ManifestEntry {
                group: t.group.clone(),
                goal_id: t.goal_id.clone(),
                scene_seed: t.scene_seed,
                provenance: t.provenance,
                split: self.splits[i],
                alpha: self.alpha[i],
                len: t.len(),
                sha256: crate::sha256_hex(t.to_json_line().as_bytes()),
            })
            .collect();
        Manifest {
            format: 1,
            domain: self.domain.clone(),
            catalog_hash: self.catalog_hash.clone(),
            info: self.info.clone(),
            traces,
        }
    }

    /// Writes `traces.ndjson` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), OracleError> {
        fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join(TRACES_FILE))?);
        for t in &self.traces {
            writeln!(f, "{}", t.to_json_line())?;
        }
        f.flush()?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
        Ok(())
    }

    /// Loads and re-validates a corpus directory.
    pub fn load(dir: &Path, catalog: &DomainCatalog) -> Result<Self, OracleError> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.catalog_hash != catalog.hash() {
            return Err(OracleError::Invalid(format!("corpus was built from a different `{}` catalog", manifest.domain)));
        }
        let text = fs::read_to_string(dir.join(TRACES_FILE))?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != manifest.traces.len() {
            return Err(OracleError::Invalid(format!("manifest lists {} traces, file has {}", manifest.traces.len(), lines.len())));
        }
        let table = catalog.table();
        let mut traces = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            let rec: TraceRecord = serde_json::from_str(line)?;
            let t = DemonstrationTrace::from_record(rec, table.clone())?;
            if crate::sha256_hex(t.to_json_line().as_bytes()) != manifest.traces[i].sha256 {
                return Err(OracleError::Invalid(format!("trace {i} does not match its manifest digest")));
            }
            traces.push(t);
        }
        Ok(Corpus {
            domain: manifest.domain,
            catalog_hash: manifest.catalog_hash,
            traces,
            splits: manifest.traces.iter().map(|e| e.split).collect(),
            alpha: manifest.traces.iter().map(|e| e.alpha).collect(),
            info: manifest.info,
        })
    }
}

/// Loss multiplier per trace: `hi` for the shortest traces among those
/// sharing goal and initial state, `lo` for the rest.
pub fn rank_optimality(traces: &[DemonstrationTrace], hi: f64, lo: f64) -> Vec<f64> {
    let key = |t: &DemonstrationTrace| (t.goal_id.clone(), crate::sha256_hex(t.initial.canonical_json().as_bytes()));
    let mut shortest: BTreeMap<(String, String), usize> = BTreeMap::new();
    let keys: Vec<_> = traces.iter().map(key).collect();
    for (k, t) in keys.iter().zip(traces) {
        let e = shortest.entry(k.clone()).or_insert(usize::MAX);
        *e = (*e).min(t.len());
    }
    keys.iter().zip(traces).map(|(k, t)| if t.len() == shortest[k] { hi } else { lo }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub seed: u64,
    /// Scenes sampled per goal.
    pub scenes: u64,
    /// Goal ids to use; empty means every catalog goal.
    pub goals: Vec<String>,
    /// Planner runs per pair with different tiebreak orders.
    pub variants: u32,
    pub planner: PlannerConfig,
    pub augment: AugmentConfig,
    pub alpha_hi: f64,
    pub alpha_lo: f64,
    pub test_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 0,
            scenes: 20,
            goals: Vec::new(),
            variants: 3,
            planner: PlannerConfig::default(),
            augment: AugmentConfig::default(),
            alpha_hi: 2.0,
            alpha_lo: 1.0,
            test_fraction: 0.25,
            validation_fraction: 0.10,
        }
    }
}

/// Counts from corpus generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub pairs: usize,
    pub already_satisfied: usize,
    pub missing_class: usize,
    pub budget_exhausted: usize,
    pub solved_pairs: usize,
    pub oracle_traces: usize,
    pub fallback_plans: usize,
    pub augmented_traces: usize,
    /// Size of the augmented train/validation pool over its oracle input.
    pub augmentation_factor: f64,
}

pub fn scene_seed(seed: u64, index: u64) -> u64 {
    derive_seed(seed, "scene", index)
}

fn tiebreak(seed: u64, variant: u32) -> Option<u64> {
    (variant > 0).then(|| derive_seed(seed, "tiebreak", variant as u64))
}

enum PairOutcome {
    Traces(Vec<DemonstrationTrace>, usize),
    Satisfied,
    Missing,
    Exhausted,
}

fn solve_pair(catalog: &DomainCatalog, cfg: &DemoConfig, goal_id: &str, seed: u64) -> Result<PairOutcome, OracleError> {
    let scene = sample_scene(catalog, seed)?;
    let template = catalog.goal(goal_id).ok_or_else(|| OracleError::Invalid(format!("unknown goal `{goal_id}`")))?;
    let goal = match instantiate_goal(template, &scene) {
        Ok(g) => g,
        Err(DomainError::MissingClass(_)) => return Ok(PairOutcome::Missing),
        Err(e) => return Err(e.into()),
    };
    if goal_check(&scene, &goal) {
        return Ok(PairOutcome::Satisfied);
    }
    let mut traces: Vec<DemonstrationTrace> = Vec::new();
    let mut fallback = 0;
    let mut planner = cfg.planner;
    for v in 0..cfg.variants.max(1) {
        let pc = PlannerConfig { tiebreak_seed: tiebreak(cfg.seed, v), ..planner };
        let (plan, stats) = match plan_with_stats(&scene, &goal, &pc) {
            Ok(r) => r,
            Err(OracleError::BudgetExhausted { .. }) if v == 0 => return Ok(PairOutcome::Exhausted),
            Err(OracleError::BudgetExhausted { .. }) => continue,
            Err(e) => return Err(e),
        };
        if traces.iter().any(|t| t.actions == plan) {
            continue;
        }
        if !stats.optimal {
            planner.budget = 0;
        }
        fallback += usize::from(!stats.optimal);
        let t = DemonstrationTrace::record(
            &catalog.name,
            seed,
            goal_id,
            goal.clone(),
            group_of(goal_id, seed),
            scene.clone(),
            plan,
            Provenance::Oracle,
            v,
        )?;
        if !t.success {
            return Err(OracleError::Invalid(format!("oracle plan for {} misses the goal", t.group)));
        }
        traces.push(t);
    }
    Ok(PairOutcome::Traces(traces, fallback))
}

/// Oracle traces for every (goal, scene) pair, in scene-major order.
pub fn oracle_traces(catalog: &DomainCatalog, cfg: &DemoConfig) -> Result<(Vec<DemonstrationTrace>, DemoReport), OracleError> {
    let goals: Vec<String> = if cfg.goals.is_empty() { catalog.goals.iter().map(|g| g.id.clone()).collect() } else { cfg.goals.clone() };
    let pairs: Vec<(u64, String)> =
        (0..cfg.scenes).flat_map(|i| goals.iter().map(move |g| (scene_seed(cfg.seed, i), g.clone()))).collect();
    let outcomes: Vec<Result<PairOutcome, OracleError>> =
        pairs.par_iter().map(|(seed, goal)| solve_pair(catalog, cfg, goal, *seed)).collect();
    let mut report = DemoReport { pairs: pairs.len(), ..Default::default() };
    let mut traces = Vec::new();
    for o in outcomes {
        match o? {
            PairOutcome::Traces(ts, fb) => {
                report.solved_pairs += 1;
                report.fallback_plans += fb;
                traces.extend(ts);
            }
            PairOutcome::Satisfied => report.already_satisfied += 1,
            PairOutcome::Missing => report.missing_class += 1,
            PairOutcome::Exhausted => report.budget_exhausted += 1,
        }
    }
    report.oracle_traces = traces.len();
    Ok((traces, report))
}

/// Oracle generation, group split, augmentation of the train and
/// validation traces, and optimality weighting.
pub fn build_corpus(catalog: &DomainCatalog, cfg: &DemoConfig) -> Result<(Corpus, DemoReport), OracleError> {
    let (traces, mut report) = oracle_traces(catalog, cfg)?;
    let mut corpus = Corpus::new(&catalog.name, &catalog.hash(), traces);
    corpus.splits = crate::train::make_splits(&corpus, cfg.seed, cfg.test_fraction, cfg.validation_fraction)?;
    let source: Vec<DemonstrationTrace> =
        corpus.traces.iter().zip(&corpus.splits).filter(|(_, s)| **s != Split::Test).map(|(t, _)| t.clone()).collect();
    let group_split: BTreeMap<String, Split> = corpus.traces.iter().zip(&corpus.splits).map(|(t, s)| (t.group.clone(), *s)).collect();
    let extra = augment(catalog, &source, derive_seed(cfg.seed, "augment", 0), &cfg.augment);
    report.augmented_traces = extra.len();
    report.augmentation_factor = if source.is_empty() { 0.0 } else { (source.len() + extra.len()) as f64 / source.len() as f64 };
    for t in extra {
        corpus.splits.push(group_split[&t.group]);
        corpus.traces.push(t);
    }
    corpus.alpha = rank_optimality(&corpus.traces, cfg.alpha_hi, cfg.alpha_lo);
    corpus.info = serde_json::json!({ "seed": cfg.seed, "config": cfg, "report": report });
    Ok((corpus, report))
}

/// Distinct source groups in first-seen order.
pub fn groups(traces: &[DemonstrationTrace]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    traces.iter().filter(|t| seen.insert(t.group.clone())).map(|t| t.group.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DemoConfig {
        DemoConfig { scenes: 4, goals: vec!["cube-in-box".into(), "illuminate".into()], variants: 2, ..Default::default() }
    }

    #[test]
    fn rank_rules() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let (traces, _) = oracle_traces(&c, &small()).unwrap();
        let one = rank_optimality(&traces[..1], 2.0, 1.0);
        assert_eq!(one, vec![2.0]);
        let mut longer = traces[0].clone();
        longer.actions.push(longer.actions[0]);
        let pair = vec![traces[0].clone(), longer];
        assert_eq!(rank_optimality(&pair, 2.0, 1.0), vec![2.0, 1.0]);
        let tie = vec![traces[0].clone(), traces[0].clone()];
        assert_eq!(rank_optimality(&tie, 2.0, 1.0), vec![2.0, 2.0]);
    }

    #[test]
    fn corpus_is_valid_and_reproducible() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let (a, report) = build_corpus(&c, &small()).unwrap();
        assert!(report.solved_pairs > 0);
        for t in &a.traces {
            assert!(t.success);
            t.validate().unwrap();
        }
        for (t, s) in a.traces.iter().zip(&a.splits) {
            if t.provenance.is_augmented() {
                assert_ne!(*s, Split::Test);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let (b, _) = build_corpus(&c, &small()).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        b.save(dir2.path()).unwrap();
        for f in [TRACES_FILE, MANIFEST_FILE] {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap());
        }
        let loaded = Corpus::load(dir.path(), &c).unwrap();
        assert_eq!(loaded.traces, a.traces);
        assert_eq!(loaded.splits, a.splits);
    }
}
