use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actions::{Interaction, SymbolicAction};
use crate::policy::Policy;
use crate::worldsim::{GoalSpec, WorldState};

/// Anything that picks the next action from the current state, the goal and
/// the `(state, action)` pairs taken so far.
pub trait Agent {
    fn next_action(&mut self, state: &WorldState, goal: &GoalSpec, history: &[(WorldState, SymbolicAction)]) -> SymbolicAction;
}

/// The trained policy. Action encodings of the history are cached between
/// calls.
#[derive(Debug, Clone)]
pub struct PolicyAgent<'a> {
    pub policy: &'a Policy,
    encodings: Vec<Vec<f64>>,
}

impl<'a> PolicyAgent<'a> {
    pub fn new(policy: &'a Policy) -> Self {
        PolicyAgent { policy, encodings: Vec::new() }
    }

    fn sync(&mut self, history: &[(WorldState, SymbolicAction)]) {
        self.encodings.truncate(history.len());
        for (s, a) in &history[self.encodings.len()..] {
            self.encodings.push(self.policy.action_encoding(s, a));
        }
    }
}

impl Agent for PolicyAgent<'_> {
    fn next_action(&mut self, state: &WorldState, goal: &GoalSpec, history: &[(WorldState, SymbolicAction)]) -> SymbolicAction {
        self.sync(history);
        self.policy.act(state, goal, &self.encodings).action
    }
}

/// Replays a fixed action list, one action per call; repeats the last action
/// once the list runs out.
#[derive(Debug, Clone)]
pub struct ReplayAgent {
    pub actions: Vec<SymbolicAction>,
}

impl Agent for ReplayAgent {
    fn next_action(&mut self, state: &WorldState, _: &GoalSpec, history: &[(WorldState, SymbolicAction)]) -> SymbolicAction {
        self.actions
            .get(history.len())
            .or(self.actions.last())
            .copied()
            .unwrap_or(SymbolicAction::unary(Interaction::MoveTo, state.robot))
    }
}

/// Uniform over interactions and over objects for each argument slot.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Agent for RandomAgent {
    fn next_action(&mut self, state: &WorldState, _: &GoalSpec, _: &[(WorldState, SymbolicAction)]) -> SymbolicAction {
        let ids: Vec<_> = state.objects.keys().copied().collect();
        let interaction = Interaction::ALL[self.rng.random_range(0..Interaction::ALL.len())];
        let o1 = ids[self.rng.random_range(0..ids.len())];
        let o2 = (interaction.arity() == 2).then(|| ids[self.rng.random_range(0..ids.len())]);
        SymbolicAction { interaction, o1, o2 }
    }
}
