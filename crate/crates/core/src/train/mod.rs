//! Two-phase imitation training: tool-likelihood pretraining, then joint
//! fine-tuning of the full policy.

mod data;
mod loss;
mod splits;

pub use data::{Example, StepData};
pub use loss::{action_loss, example_loss, toolnet_loss};
pub use splits::make_splits;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tooluse_tensor::{Adam, AdamConfig, Tape, Tensor, Var};

use loss::{step_loss, Objective};
use crate::derive_seed;
use crate::oracle::{rank_optimality, Corpus, Split};
use crate::policy::{argmax, Policy, PolicyError, Stage};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least {needed} (goal, scene) groups, found {found}")]
    TooFewTraces { needed: usize, found: usize },
    #[error("{phase} loss is {value} at epoch {epoch}, trace {trace}, step {step}")]
    NonFiniteLoss { phase: Phase, epoch: usize, trace: usize, step: usize, value: f64 },
    #[error("the {0:?} split is empty")]
    EmptySplit(Split),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("tensor: {0}")]
    Tensor(#[from] tooluse_tensor::TensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Tool-likelihood pretraining of the encoders and the tool head.
    Tool,
    /// Joint training of every head.
    Full,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Tool => "tool",
            Phase::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Demonstrated steps per parameter update.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epoch cap of the tool pretraining phase; `None` uses `max_epochs`.
    pub toolnet_max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub alpha_hi: f64,
    pub alpha_lo: f64,
    /// Phases to run, in order.
    pub phases: Vec<Phase>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            weight_decay: 1e-5,
            batch_size: 1,
            max_epochs: 200,
            toolnet_max_epochs: None,
            patience: 10,
            seed: 0,
            alpha_hi: 2.0,
            alpha_lo: 1.0,
            phases: vec![Phase::Tool, Phase::Full],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::Config("lr must be positive".into()));
        }
        if self.max_epochs == 0 || self.toolnet_max_epochs == Some(0) {
            return Err(TrainError::Config("max epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    fn epochs(&self, phase: Phase) -> usize {
        match phase {
            Phase::Tool => self.toolnet_max_epochs.unwrap_or(self.max_epochs),
            Phase::Full => self.max_epochs,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub split: Split,
    /// Mean loss per demonstrated step.
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_accuracy: Option<f64>,
    /// Validation records only: this epoch is the new best.
    #[serde(default)]
    pub improved: bool,
}

/// Receives metrics and improved parameters as training runs.
pub trait TrainObserver {
    fn record(&mut self, _record: &MetricRecord) -> Result<(), TrainError> {
        Ok(())
    }

    fn improved(&mut self, _phase: Phase, _policy: &Policy) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Collects records in memory.
impl TrainObserver for Vec<MetricRecord> {
    fn record(&mut self, record: &MetricRecord) -> Result<(), TrainError> {
        self.push(record.clone());
        Ok(())
    }
}

/// Appends records to a line-delimited JSON file and writes a checkpoint on
/// every improvement.
#[derive(Debug)]
pub struct FileObserver {
    pub metrics: std::fs::File,
    pub checkpoint: PathBuf,
}

impl FileObserver {
    pub fn create(metrics: PathBuf, checkpoint: PathBuf) -> Result<Self, TrainError> {
        Ok(FileObserver { metrics: std::fs::File::create(metrics)?, checkpoint })
    }
}

impl TrainObserver for FileObserver {
    fn record(&mut self, record: &MetricRecord) -> Result<(), TrainError> {
        writeln!(self.metrics, "{}", serde_json::to_string(record).expect("record serializes"))?;
        Ok(())
    }

    fn improved(&mut self, _: Phase, policy: &Policy) -> Result<(), TrainError> {
        policy.save(&self.checkpoint)?;
        Ok(())
    }
}

/// Result of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    /// Policy fingerprint when the phase started.
    pub initial_hash: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Validation score at epoch 0 and at the kept epoch.
    pub initial_score: f64,
    pub best_score: f64,
    pub updates: u64,
}

/// Train and validation examples of a corpus.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
}

impl TrainData {
    pub fn new(policy: &Policy, corpus: &Corpus, config: &TrainConfig) -> Result<Self, TrainError> {
        let alpha = rank_optimality(&corpus.traces, config.alpha_hi, config.alpha_lo);
        let train = Example::batch(policy, &corpus.traces, &alpha, &corpus.indices(Split::Train));
        let validation = Example::batch(policy, &corpus.traces, &alpha, &corpus.indices(Split::Validation));
        if train.is_empty() {
            return Err(TrainError::EmptySplit(Split::Train));
        }
        if validation.is_empty() {
            return Err(TrainError::EmptySplit(Split::Validation));
        }
        Ok(TrainData { train, validation })
    }
}

fn trainable(phase: Phase, name: &str) -> bool {
    match phase {
        Phase::Tool => !(name.starts_with("act.") || name.starts_with("obj1.") || name.starts_with("obj2.")),
        Phase::Full => true,
    }
}

fn objective(phase: Phase) -> Objective {
    match phase {
        Phase::Tool => Objective::Tool,
        Phase::Full => Objective::Action,
    }
}

/// Validation statistics over a set of examples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub loss: f64,
    pub steps: usize,
    pub tool_f1: f64,
    pub action_accuracy: f64,
}

#[derive(Default)]
struct Tally {
    loss: f64,
    steps: usize,
    tp: usize,
    fp: usize,
    fneg: usize,
    correct: usize,
}

fn score_example(policy: &Policy, ex: &Example, phase: Phase) -> tooluse_tensor::Result<Tally> {
    let mut t = Tally::default();
    for (i, step) in ex.steps.iter().enumerate() {
        let history = &ex.history[..i];
        let mut tape = Tape::new();
        let pv: Vec<Var> = policy.params.tensors().iter().map(|x| tape.constant(x.clone())).collect();
        if let Some(l) = step_loss(policy, &mut tape, &pv, step, history, ex.alpha, objective(phase))? {
            t.loss += tape.value(l).data()[0];
        }
        t.steps += 1;
        match phase {
            Phase::Tool => {
                let f = policy.forward(&mut tape, &pv, &step.scene, &step.goal, history, None, Stage::Tool)?;
                if let Some(p) = f.tool_classes {
                    for (&pi, &y) in tape.value(p).data().iter().zip(&step.tool_targets) {
                        match (pi > 0.5, y > 0.5) {
                            (true, true) => t.tp += 1,
                            (true, false) => t.fp += 1,
                            (false, true) => t.fneg += 1,
                            (false, false) => {}
                        }
                    }
                }
            }
            Phase::Full => {
                let f = policy.forward(&mut tape, &pv, &step.scene, &step.goal, history, None, Stage::Full)?;
                let interaction = f.interaction.expect("full pass");
                let first = argmax(tape.value(f.first.expect("full pass")).data());
                let second = argmax(tape.value(f.second.expect("full pass")).data());
                let ok = interaction == step.interaction()
                    && first == step.first
                    && (interaction.arity() == 1 || Some(second) == step.second);
                t.correct += usize::from(ok);
            }
        }
    }
    Ok(t)
}

/// Loss, tool-likelihood F1 and teacher-forced action accuracy of `policy`
/// on `examples`. F1 is 1 when there are no positive labels and no positive
/// predictions.
pub fn evaluate(policy: &Policy, examples: &[Example], phase: Phase) -> Result<Scores, TrainError> {
    let tallies: Vec<Tally> = examples.par_iter().map(|ex| score_example(policy, ex, phase)).collect::<Result<_, _>>()?;
    let mut sum = Tally::default();
    for t in tallies {
        sum.loss += t.loss;
        sum.steps += t.steps;
        sum.tp += t.tp;
        sum.fp += t.fp;
        sum.fneg += t.fneg;
        sum.correct += t.correct;
    }
    let denom = 2 * sum.tp + sum.fp + sum.fneg;
    let steps = sum.steps.max(1) as f64;
    Ok(Scores {
        loss: sum.loss / steps,
        steps: sum.steps,
        tool_f1: if denom == 0 { 1.0 } else { 2.0 * sum.tp as f64 / denom as f64 },
        action_accuracy: sum.correct as f64 / steps,
    })
}

fn headline(phase: Phase, s: &Scores) -> f64 {
    match phase {
        Phase::Tool => s.tool_f1,
        Phase::Full => s.action_accuracy,
    }
}

fn validation_record(phase: Phase, epoch: usize, s: &Scores, improved: bool) -> MetricRecord {
    MetricRecord {
        phase,
        epoch,
        split: Split::Validation,
        loss: s.loss,
        tool_f1: (phase == Phase::Tool).then_some(s.tool_f1),
        action_accuracy: (phase == Phase::Full).then_some(s.action_accuracy),
        improved,
    }
}

/// Gradient of the summed loss of the given steps. Returns the loss and the
/// gradients, or `None` when no step contributes a term.
fn step_gradients(
    policy: &Policy,
    phase: Phase,
    ex: &Example,
    steps: &[usize],
) -> Result<Option<(f64, tooluse_tensor::Gradients)>, tooluse_tensor::TensorError> {
    let mut tape = Tape::new();
    let pv = policy.params.record_only(&mut tape, |n| trainable(phase, n));
    let mut terms = Vec::new();
    for &i in steps {
        if let Some(l) = step_loss(policy, &mut tape, &pv, &ex.steps[i], &ex.history[..i], ex.alpha, objective(phase))? {
            terms.push(l);
        }
    }
    let Some(&first) = terms.first() else { return Ok(None) };
    let mut root = first;
    for &t in &terms[1..] {
        root = tape.add(root, t)?;
    }
    let value = tape.value(root).data()[0];
    Ok(Some((value, tape.backward(root)?)))
}

/// Runs one phase with early stopping and leaves the best parameters in
/// `policy`.
pub fn train_phase(
    policy: &mut Policy,
    data: &TrainData,
    phase: Phase,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<PhaseSummary, TrainError> {
    config.validate()?;
    let initial_hash = policy.hash();
    let ids: Vec<usize> = policy.params.names().iter().enumerate().filter(|(_, n)| trainable(phase, n)).map(|(i, _)| i).collect();
    let subset = |p: &Policy| -> Vec<Tensor> { ids.iter().map(|&i| p.params.tensors()[i].clone()).collect() };
    let mut adam = Adam::new(AdamConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamConfig::default() }, &subset(policy));

    let initial = evaluate(policy, &data.validation, phase)?;
    observer.record(&validation_record(phase, 0, &initial, true))?;
    observer.improved(phase, policy)?;
    let mut best = (headline(phase, &initial), -initial.loss);
    let mut best_params = policy.params.clone();
    let mut best_epoch = 0;
    let mut since = 0;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs(phase) {
        epochs_run = epoch;
        let mut order: Vec<(usize, usize)> =
            data.train.iter().enumerate().flat_map(|(e, ex)| (0..ex.len()).map(move |s| (e, s))).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("{phase}"), epoch as u64)));
        let (mut loss_sum, mut loss_steps) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let mut grads: Option<tooluse_tensor::Gradients> = None;
            for &(e, s) in chunk {
                let ex = &data.train[e];
                let Some((value, g)) = step_gradients(policy, phase, ex, &[s])? else { continue };
                if !value.is_finite() || !g.is_finite() {
                    return Err(TrainError::NonFiniteLoss { phase, epoch, trace: ex.trace, step: s, value });
                }
                loss_sum += value;
                loss_steps += 1;
                match grads.as_mut() {
                    Some(acc) => acc.accumulate(&g),
                    None => grads = Some(g),
                }
            }
            let Some(mut g) = grads else { continue };
            if chunk.len() > 1 {
                g.scale(1.0 / chunk.len() as f64);
            }
            let view: Vec<Option<&Tensor>> = ids.iter().map(|&i| g.get(tooluse_tensor::ParamId(i))).collect();
            let mut params = subset(policy);
            adam.step(&mut params, &view)?;
            for (&i, t) in ids.iter().zip(params) {
                policy.params.tensors_mut()[i] = t;
            }
        }
        observer.record(&MetricRecord {
            phase,
            epoch,
            split: Split::Train,
            loss: loss_sum / loss_steps.max(1) as f64,
            tool_f1: None,
            action_accuracy: None,
            improved: false,
        })?;

        let s = evaluate(policy, &data.validation, phase)?;
        let key = (headline(phase, &s), -s.loss);
        let improved = key > best;
        observer.record(&validation_record(phase, epoch, &s, improved))?;
        if improved {
            best = key;
            best_params = policy.params.clone();
            best_epoch = epoch;
            since = 0;
            observer.improved(phase, policy)?;
        } else {
            since += 1;
            if since >= config.patience {
                break;
            }
        }
    }
    policy.params = best_params;
    Ok(PhaseSummary {
        phase,
        initial_hash,
        epochs_run,
        best_epoch,
        initial_score: headline(phase, &initial),
        best_score: best.0,
        updates: adam.steps_taken(),
    })
}

/// Runs the configured phases in order on the train and validation splits
/// of `corpus`.
pub fn train(
    policy: &mut Policy,
    corpus: &Corpus,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<PhaseSummary>, TrainError> {
    config.validate()?;
    let data = TrainData::new(policy, corpus, config)?;
    let mut out = Vec::new();
    for &phase in &config.phases {
        if phase == Phase::Tool && !policy.config.ablations.use_tool_head {
            continue;
        }
        out.push(train_phase(policy, &data, phase, config, observer)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
