use rayon::prelude::*;

use crate::actions::{Interaction, SymbolicAction};
use crate::oracle::DemonstrationTrace;
use crate::policy::{GoalFeatures, Policy, Scene};

/// Supervision for one demonstrated step, with the network inputs of its
/// state.
#[derive(Debug, Clone)]
pub struct StepData {
    pub scene: Scene,
    pub goal: GoalFeatures,
    pub action: SymbolicAction,
    /// Row of the first argument in `scene`.
    pub first: usize,
    /// Row of the second argument, for two-argument interactions.
    pub second: Option<usize>,
    /// One entry per `scene.tool_tokens`: 1 when that tool class is an
    /// argument anywhere in the demonstration.
    pub tool_targets: Vec<f64>,
}

/// A demonstration turned into per-step network inputs.
#[derive(Debug, Clone)]
pub struct Example {
    /// Position of the trace in the corpus.
    pub trace: usize,
    pub alpha: f64,
    pub steps: Vec<StepData>,
    /// Action encodings; step `t` sees the first `t`.
    pub history: Vec<Vec<f64>>,
}

impl Example {
    pub fn new(policy: &Policy, trace: &DemonstrationTrace, index: usize, alpha: f64) -> Self {
        let pairs = trace.steps();
        let mut used = std::collections::BTreeSet::new();
        for (s, a) in &pairs {
            for id in [Some(a.o1), a.o2].into_iter().flatten() {
                if let Some(o) = s.objects.get(&id) {
                    used.insert(o.class.clone());
                }
            }
        }
        let steps = pairs
            .iter()
            .map(|(s, a)| {
                let scene = policy.scene(s);
                let row = |id| scene.row_of(id).expect("action arguments exist in their state");
                StepData {
                    goal: policy.goal_features(s, &trace.goal),
                    action: *a,
                    first: row(a.o1),
                    second: a.o2.filter(|_| a.interaction.arity() == 2).map(row),
                    tool_targets: scene.tool_tokens.iter().map(|t| if used.contains(t) { 1.0 } else { 0.0 }).collect(),
                    scene,
                }
            })
            .collect();
        Example { trace: index, alpha, steps, history: policy.history_encodings(&pairs) }
    }

    /// Examples for the given corpus positions, in that order.
    pub fn batch(policy: &Policy, traces: &[DemonstrationTrace], alpha: &[f64], indices: &[usize]) -> Vec<Example> {
        indices.par_iter().map(|&i| Example::new(policy, &traces[i], i, alpha[i])).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl StepData {
    pub fn interaction(&self) -> Interaction {
        self.action.interaction
    }
}
