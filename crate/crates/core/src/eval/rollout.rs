use serde::{Deserialize, Serialize};

use super::Agent;
use crate::actions::{apply, RejectReason, Status, SymbolicAction};
use crate::derive_seed;
use crate::worldsim::{goal_check, GoalSpec, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub max_steps: usize,
    /// Drop probability of the transition noise.
    pub epsilon: f64,
    pub seed: u64,
    /// Stop at the first rejected action instead of spending a step on it.
    pub terminate_on_rejection: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { max_steps: 50, epsilon: 0.0, seed: 0, terminate_on_rejection: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub action: SymbolicAction,
    pub status: Status,
    pub reason: Option<RejectReason>,
}

/// Why a rollout missed its goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Failure {
    /// The first rejection of the rollout.
    Rejected(RejectReason),
    /// Every action was accepted but the step cap ran out.
    StepCap,
}

impl Failure {
    pub fn name(self) -> &'static str {
        match self {
            Failure::Rejected(r) => r.name(),
            Failure::StepCap => "StepCap",
        }
    }
}

/// A closed-loop execution with every visited state.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub success: bool,
    pub steps: Vec<RolloutStep>,
    /// The initial state followed by the state after each step.
    pub states: Vec<WorldState>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_state(&self) -> &WorldState {
        self.states.last().expect("at least the initial state")
    }

    pub fn first_rejection(&self) -> Option<RejectReason> {
        self.steps.iter().find_map(|s| s.reason)
    }

    /// Success when rollouts end at the first rejection.
    pub fn strict_success(&self) -> bool {
        self.success && self.first_rejection().is_none()
    }

    pub fn failure(&self) -> Option<Failure> {
        if self.success {
            return None;
        }
        Some(self.first_rejection().map_or(Failure::StepCap, Failure::Rejected))
    }

    pub fn perturbations(&self) -> usize {
        self.steps.iter().filter(|s| s.status == Status::AppliedWithPerturbation).count()
    }
}

/// Act, apply, observe until the goal holds or the step cap is reached.
/// Rejected actions leave the state unchanged and still use up a step.
pub fn rollout(agent: &mut dyn Agent, initial: &WorldState, goal: &GoalSpec, config: &RolloutConfig) -> Rollout {
    let mut state = initial.clone();
    let mut states = vec![state.clone()];
    let mut steps = Vec::new();
    let mut history: Vec<(WorldState, SymbolicAction)> = Vec::new();
    let mut success = goal_check(&state, goal);
    while !success && steps.len() < config.max_steps {
        let action = agent.next_action(&state, goal, &history);
        let out = apply(&state, &action, config.epsilon, derive_seed(config.seed, "step", steps.len() as u64));
        steps.push(RolloutStep { action, status: out.status, reason: out.reason });
        history.push((state, action));
        state = out.next_state;
        states.push(state.clone());
        success = goal_check(&state, goal);
        if out.reason.is_some() && config.terminate_on_rejection {
            break;
        }
    }
    Rollout { success, steps, states }
}
