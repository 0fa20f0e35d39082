//! Accuracy metrics, closed-loop rollouts and generalization suites.

mod agents;
mod report;
mod rollout;
mod suites;

pub use agents::{Agent, PolicyAgent, RandomAgent, ReplayAgent};
pub use report::{median, EvalReport, LengthPoint, Robustness, SuiteResult};
pub use rollout::{rollout, Failure, Rollout, RolloutConfig, RolloutStep};
pub use suites::{build_suites, SuitePair, SuiteSpec, Suites, HELD_OUT};

use rayon::prelude::*;
use thiserror::Error;

use crate::derive_seed;
use crate::oracle::{Corpus, DemonstrationTrace, Split};
use crate::policy::Policy;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no demonstrations to evaluate on")]
    EmptySplit,
}

/// Fraction of demonstrated steps whose `(I, o1, o2)` the agent reproduces
/// when shown the demonstrated states and history.
pub fn action_accuracy<A, F>(traces: &[&DemonstrationTrace], make: F) -> Result<f64, EvalError>
where
    A: Agent,
    F: Fn(&DemonstrationTrace) -> A + Sync,
{
    let counts: Vec<(usize, usize)> = traces
        .par_iter()
        .map(|t| {
            let mut agent = make(t);
            let steps = t.steps();
            let hits = (0..steps.len()).filter(|&i| agent.next_action(&steps[i].0, &t.goal, &steps[..i]) == steps[i].1).count();
            (hits, steps.len())
        })
        .collect();
    let (hits, total) = counts.iter().fold((0, 0), |(h, n), (a, b)| (h + a, n + b));
    if total == 0 {
        return Err(EvalError::EmptySplit);
    }
    Ok(hits as f64 / total as f64)
}

/// Teacher-forced action accuracy of `policy` on one corpus split.
pub fn policy_action_accuracy(policy: &Policy, corpus: &Corpus, split: Split) -> Result<f64, EvalError> {
    let traces: Vec<&DemonstrationTrace> = corpus.indices(split).into_iter().map(|i| &corpus.traces[i]).collect();
    action_accuracy(&traces, |_| PolicyAgent::new(policy))
}

/// Rolls out one fresh agent per pair. Pair `i` uses the noise seed
/// derived from `config.seed` and `i`, so different agents see identical
/// noise on the same pair.
pub fn run_pairs<A, F>(pairs: &[SuitePair], config: &RolloutConfig, make: F) -> Vec<Rollout>
where
    A: Agent,
    F: Fn(&SuitePair) -> A + Sync,
{
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut agent = make(p);
            let cfg = RolloutConfig { seed: derive_seed(config.seed, "pair", i as u64), ..*config };
            rollout(&mut agent, &p.initial, &p.goal, &cfg)
        })
        .collect()
}

/// Fraction of successful rollouts; 0 for an empty list.
pub fn success_rate(rollouts: &[Rollout]) -> f64 {
    if rollouts.is_empty() {
        return 0.0;
    }
    rollouts.iter().filter(|r| r.success).count() as f64 / rollouts.len() as f64
}

/// Closed-loop success of `policy` on every suite, with plan lengths and
/// failure reasons.
pub fn run_suites(policy: &Policy, suites: &Suites, config: &RolloutConfig) -> EvalReport {
    let mut report = EvalReport::new(config);
    report.policy_hash = policy.hash();
    report.catalog_hash = policy.catalog_hash.clone();
    for (name, pairs) in &suites.suites {
        let rollouts = run_pairs(pairs, config, |_| PolicyAgent::new(policy));
        report.add_suite(name, pairs, &rollouts);
    }
    report
}

/// Plan-execution accuracy of the uniform-random agent on `pairs`.
pub fn random_baseline(pairs: &[SuitePair], config: &RolloutConfig) -> f64 {
    let rollouts = run_pairs(pairs, config, |p| RandomAgent::new(derive_seed(config.seed, "random", p.scene_seed)));
    success_rate(&rollouts)
}

/// Closed-loop policy against open-loop replay of the oracle plans, both
/// under drop noise `epsilon` with the same per-pair seeds.
pub fn robustness(policy: &Policy, pairs: &[SuitePair], config: &RolloutConfig, epsilon: f64) -> Robustness {
    let cfg = RolloutConfig { epsilon, ..*config };
    let closed = run_pairs(pairs, &cfg, |_| PolicyAgent::new(policy));
    let open = run_pairs(pairs, &cfg, |p| ReplayAgent { actions: p.oracle_plan.clone() });
    Robustness {
        epsilon,
        pairs: pairs.len(),
        closed_loop: success_rate(&closed),
        open_loop: success_rate(&open),
        perturbed_rollouts: closed.iter().filter(|r| r.perturbations() > 0).count(),
    }
}
