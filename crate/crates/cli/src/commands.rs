use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tooluse::domains::{sample_scene, DomainCatalog};
use tooluse::eval::{self, build_suites};
use tooluse::oracle::{build_corpus, group_of, scene_seed, Corpus, DemonstrationTrace, Provenance, Split, TraceRecord};
use tooluse::policy::Policy;
use tooluse::session::{SessionConfig, SessionService};
use tooluse::train::{self, FileObserver};

use crate::{CliError, ExperimentConfig};

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

fn load_policy(path: &Path, catalog: &DomainCatalog) -> Result<Policy, CliError> {
    Policy::load(path, catalog).map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))
}

fn load_corpus(dir: &Path, catalog: &DomainCatalog) -> Result<Corpus, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("no corpus directory at {}", dir.display())));
    }
    Corpus::load(dir, catalog).map_err(|e| CliError::Validation(format!("corpus {}: {e}", dir.display())))
}

/// Writes sampled scenes and the oracle-solved test suites.
pub fn gen(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let catalog = cfg.catalog()?;
    let mut scenes = String::new();
    for i in 0..cfg.scenes {
        let seed = scene_seed(cfg.demo.seed, i);
        let state = sample_scene(&catalog, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
        let line = serde_json::json!({ "index": i, "scene_seed": seed, "state": state.to_doc() });
        scenes.push_str(&serde_json::to_string(&line).expect("scene serializes"));
        scenes.push('\n');
    }
    write(&out.join("scenes.jsonl"), &scenes)?;
    let suites = build_suites(&catalog, &cfg.suites);
    let mut counts = BTreeMap::new();
    for (name, pairs) in &suites.suites {
        let mut lines = String::new();
        for p in pairs {
            let mut t = DemonstrationTrace::record(
                &catalog.name,
                p.scene_seed,
                &p.goal_id,
                p.goal.clone(),
                group_of(&p.goal_id, p.scene_seed),
                p.initial.clone(),
                p.oracle_plan.clone(),
                Provenance::Oracle,
                0,
            )
            .map_err(|e| CliError::Validation(e.to_string()))?;
            t.meta = serde_json::json!({ "suite": name });
            lines.push_str(&t.to_json_line());
            lines.push('\n');
        }
        write(&out.join("suites").join(format!("{name}.jsonl")), &lines)?;
        counts.insert(name.clone(), pairs.len());
        println!("{name:<10} {} pairs", pairs.len());
    }
    write(&out.join("suites").join("summary.json"), &json(&serde_json::json!({ "spec": cfg.suites, "pairs": counts })))?;
    println!("{} scenes and {} suites written to {}", cfg.scenes, counts.len(), out.display());
    Ok(())
}

/// Oracle demonstrations plus augmentation, saved as a corpus directory.
pub fn demo(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let catalog = cfg.catalog()?;
    let (corpus, report) = build_corpus(&catalog, &cfg.demo).map_err(|e| CliError::Validation(e.to_string()))?;
    for (i, t) in corpus.traces.iter().enumerate() {
        if !t.success {
            return Err(CliError::Validation(format!("trace {i} ({}) misses its goal", t.group)));
        }
    }
    corpus.save(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&out.join("report.json"), &json(&report))?;
    println!(
        "{} traces ({} oracle, {} augmented) from {} solved pairs; train {}, validation {}, test {}",
        corpus.traces.len(),
        report.oracle_traces,
        report.augmented_traces,
        report.solved_pairs,
        corpus.count(Split::Train),
        corpus.count(Split::Validation),
        corpus.count(Split::Test),
    );
    Ok(())
}

/// Both training phases; the best policy lands in `out/policy.json`.
pub fn train(cfg: &ExperimentConfig, out: &Path, corpus_dir: Option<&Path>) -> Result<(), CliError> {
    let catalog = cfg.catalog()?;
    let dir = corpus_dir.ok_or_else(|| CliError::Config("train needs --corpus <dir>".into()))?;
    let corpus = load_corpus(dir, &catalog)?;
    let mut policy = cfg.policy(&catalog)?;
    fs::create_dir_all(out)?;
    let checkpoint = out.join("policy.json");
    let mut observer = FileObserver::create(out.join("metrics.jsonl"), checkpoint.clone()).map_err(|e| CliError::Runtime(e.to_string()))?;
    let summaries = train::train(&mut policy, &corpus, &cfg.train, &mut observer).map_err(|e| match e {
        train::TrainError::Config(m) => CliError::Config(m),
        other => CliError::Runtime(other.to_string()),
    })?;
    policy.save(&checkpoint).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&out.join("train_summary.json"), &json(&summaries))?;
    for s in &summaries {
        println!("{}: best epoch {} of {}, score {:.4} (from {:.4})", s.phase, s.best_epoch, s.epochs_run, s.best_score, s.initial_score);
    }
    println!("policy {} written to {}", policy.hash(), checkpoint.display());
    Ok(())
}

/// Closed-loop evaluation report of a trained policy.
pub fn evaluate(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>, corpus_dir: Option<&Path>) -> Result<(), CliError> {
    let catalog = cfg.catalog()?;
    let path = checkpoint.ok_or_else(|| CliError::Config("eval needs --checkpoint <file>".into()))?;
    let policy = load_policy(path, &catalog)?;
    let suites = build_suites(&catalog, &cfg.suites);
    let mut report = eval::run_suites(&policy, &suites, &cfg.rollout);
    report.suite_seed = Some(cfg.suites.seed);
    report.random_baseline = Some(eval::random_baseline(suites.held_out(), &cfg.rollout));
    if cfg.robustness_epsilon > 0.0 {
        report.robustness = Some(eval::robustness(&policy, suites.held_out(), &cfg.rollout, cfg.robustness_epsilon));
    }
    if let Some(dir) = corpus_dir {
        let corpus = load_corpus(dir, &catalog)?;
        report.action_accuracy = Some(eval::policy_action_accuracy(&policy, &corpus, Split::Test).map_err(|e| CliError::Validation(e.to_string()))?);
    }
    write(&out.join("report.json"), &report.to_json())?;
    write(&out.join("report.txt"), &report.to_text())?;
    write(&out.join("lengths.csv"), &report.lengths_csv())?;
    write(&out.join("histogram.csv"), &report.histogram_csv())?;
    print!("{}", report.to_text());
    Ok(())
}

/// Re-executes every trace in an NDJSON file and checks its recorded final
/// state and success flag. Returns the number of traces checked.
pub fn replay(cfg: &ExperimentConfig, file: &Path) -> Result<usize, CliError> {
    let text = fs::read_to_string(file).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
    let default = cfg.catalog().ok();
    let mut catalogs: BTreeMap<String, Arc<DomainCatalog>> = BTreeMap::new();
    if let Some(c) = default {
        catalogs.insert(c.name.clone(), Arc::new(c));
    }
    let mut checked = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: TraceRecord = serde_json::from_str(line).map_err(|e| CliError::Validation(format!("line {}: {e}", i + 1)))?;
        let catalog = match catalogs.get(&rec.domain) {
            Some(c) => c.clone(),
            None => {
                let c = Arc::new(DomainCatalog::load(&rec.domain).map_err(|e| CliError::Config(format!("domain `{}`: {e}", rec.domain)))?);
                catalogs.insert(rec.domain.clone(), c.clone());
                c
            }
        };
        let group = rec.group.clone();
        let t = DemonstrationTrace::from_record(rec, catalog.table()).map_err(|e| CliError::Validation(format!("line {}: {e}", i + 1)))?;
        let verdict = if t.success { "goal reached" } else { "final state verified, goal not reached" };
        println!("{group}: {} actions, {verdict}", t.len());
        checked += 1;
    }
    if checked == 0 {
        return Err(CliError::Validation(format!("{} holds no traces", file.display())));
    }
    Ok(checked)
}

/// Session service for `cfg.domain`, with suggestions when a checkpoint is given.
pub fn session_service(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>) -> Result<SessionService, CliError> {
    let catalog = cfg.catalog()?;
    let config = SessionConfig { out_dir: Some(cfg.session.out_dir.clone().unwrap_or_else(|| out.join("traces"))), ..cfg.session.clone() };
    let mut service = SessionService::new(config);
    if let Some(path) = checkpoint {
        service.add_policy(&catalog.name, load_policy(path, &catalog)?);
    }
    service.add_catalog(catalog);
    Ok(service)
}

/// Serves the session API until the process is stopped.
pub fn serve(cfg: &ExperimentConfig, out: &Path, addr: &str, assets: Option<PathBuf>, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let service = Arc::new(session_service(cfg, out, checkpoint)?);
    let app = crate::server::router(service, assets);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Config(format!("cannot bind {addr}: {e}")))?;
        println!("serving on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        axum::serve(listener, app).await?;
        Ok(())
    })
}
