use tooluse_tensor::{Tape, Tensor, Var};

use super::data::StepData;
use crate::actions::Interaction;
use crate::policy::{Forward, Policy, Stage};

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn total(tape: &mut Tape, terms: &[Var]) -> tooluse_tensor::Result<Var> {
    let mut acc = tape.constant(Tensor::zeros(1, 1));
    for &t in terms {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Weighted tool-likelihood cross-entropy of one trace, summed over its
/// steps and tools. `predictions[s]` holds the tool likelihoods of step `s`
/// and `labels[s]` their targets.
pub fn toolnet_loss(tape: &mut Tape, predictions: &[Var], labels: &[Vec<f64>], alpha: f64) -> tooluse_tensor::Result<Var> {
    let mut terms = Vec::with_capacity(predictions.len());
    for (&p, y) in predictions.iter().zip(labels) {
        terms.push(tape.bce(p, y, &vec![alpha; y.len()])?);
    }
    total(tape, &terms)
}

/// Interaction cross-entropy against the one-hot label plus first-object and,
/// for two-argument interactions, second-object cross-entropy.
pub fn action_loss(tape: &mut Tape, forward: &Forward, step: &StepData) -> tooluse_tensor::Result<Var> {
    let ni = Interaction::ALL.len();
    let n = step.scene.len();
    let probs = forward.interaction_probs.expect("full forward pass");
    let first = forward.first.expect("full forward pass");
    let mut terms = vec![
        tape.bce(probs, &one_hot(ni, step.interaction().index()), &vec![1.0; ni])?,
        tape.bce(first, &one_hot(n, step.first), &vec![1.0; n])?,
    ];
    if let (Some(row), Some(second)) = (step.second, forward.second) {
        terms.push(tape.bce(second, &one_hot(n, row), &vec![1.0; n])?);
    }
    total(tape, &terms)
}

/// Which losses a forward pass contributes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Objective {
    Tool,
    Action,
    Both,
}

/// Teacher-forced loss of one step; `None` when the objective has no term
/// for it (no tools in the scene during tool pretraining).
pub(crate) fn step_loss(
    policy: &Policy,
    tape: &mut Tape,
    pv: &[Var],
    step: &StepData,
    history: &[Vec<f64>],
    alpha: f64,
    objective: Objective,
) -> tooluse_tensor::Result<Option<Var>> {
    let stage = if objective == Objective::Tool { Stage::Tool } else { Stage::Full };
    let f = policy.forward(tape, pv, &step.scene, &step.goal, history, Some(step.interaction()), stage)?;
    let mut terms = Vec::new();
    if objective != Objective::Action {
        if let Some(p) = f.tool_classes {
            terms.push(toolnet_loss(tape, &[p], std::slice::from_ref(&step.tool_targets), alpha)?);
        }
    }
    if objective != Objective::Tool {
        terms.push(action_loss(tape, &f, step)?);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    Ok(Some(total(tape, &terms)?))
}

/// Tool and action losses of every step of `example`, summed.
pub fn example_loss(policy: &Policy, tape: &mut Tape, pv: &[Var], example: &super::Example) -> tooluse_tensor::Result<Var> {
    let mut terms = Vec::with_capacity(example.len());
    for (i, step) in example.steps.iter().enumerate() {
        if let Some(l) = step_loss(policy, tape, pv, step, &example.history[..i], example.alpha, Objective::Both)? {
            terms.push(l);
        }
    }
    total(tape, &terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probabilities_give_alpha_s_t_ln2() {
        for (steps, tools, alpha) in [(3usize, 4usize, 1.0), (5, 2, 2.0), (1, 1, 0.5)] {
            let mut tape = Tape::new();
            let preds: Vec<Var> = (0..steps).map(|_| tape.constant(Tensor::filled(tools, 1, 0.5))).collect();
            let labels: Vec<Vec<f64>> = (0..steps).map(|s| (0..tools).map(|t| ((s + t) % 2) as f64).collect()).collect();
            let l = toolnet_loss(&mut tape, &preds, &labels, alpha).unwrap();
            let expected = alpha * steps as f64 * tools as f64 * std::f64::consts::LN_2;
            assert!((tape.value(l).data()[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_alpha_doubles_the_loss() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::matrix(3, 1, vec![0.2, 0.7, 0.9]).unwrap());
        let y = vec![vec![0.0, 1.0, 0.0]];
        let a = toolnet_loss(&mut tape, &[p], &y, 1.5).unwrap();
        let b = toolnet_loss(&mut tape, &[p], &y, 3.0).unwrap();
        let (a, b) = (tape.value(a).data()[0], tape.value(b).data()[0]);
        assert!((b - 2.0 * a).abs() < 1e-12);
        let direct = -(0.8f64.ln() + 0.7f64.ln() + 0.1f64.ln()) * 1.5;
        assert!((a - direct).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_approach_zero() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap());
        let l = toolnet_loss(&mut tape, &[p], &[vec![1.0, 0.0]], 2.0).unwrap();
        assert!(tape.value(l).data()[0] < 1e-5);
    }
}
