use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::OracleError;
use crate::actions::{apply, ActionWire, SymbolicAction};
use crate::worldsim::{goal_check, ClassTable, GoalSpec, StateDoc, WorldState};

/// Where a trace came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Oracle,
    HumanUi,
    AugmentedReplay,
    AugmentedRemoval,
}

impl Provenance {
    pub fn is_augmented(self) -> bool {
        matches!(self, Provenance::AugmentedReplay | Provenance::AugmentedRemoval)
    }
}

/// One demonstration: initial state, goal and the action sequence. The
/// intermediate states are recovered by noise-free replay.
#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationTrace {
    pub domain: String,
    pub scene_seed: u64,
    pub goal_id: String,
    pub goal: GoalSpec,
    /// `goal_id@scene_seed` of the oracle pair this trace derives from; the
    /// unit of the train/test split.
    pub group: String,
    pub initial: WorldState,
    pub actions: Vec<SymbolicAction>,
    pub final_state: WorldState,
    pub success: bool,
    pub provenance: Provenance,
    /// Tiebreak variant or augmentation index.
    pub variant: u32,
    /// Free-form metadata such as session timing.
    pub meta: serde_json::Value,
}

/// Serialized form of a trace, one NDJSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub domain: String,
    pub scene_seed: u64,
    pub goal_id: String,
    pub goal: GoalSpec,
    pub group: String,
    pub provenance: Provenance,
    pub variant: u32,
    pub initial: StateDoc,
    pub actions: Vec<ActionWire>,
    pub final_state: StateDoc,
    pub success: bool,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

pub fn group_of(goal_id: &str, scene_seed: u64) -> String {
    format!("{goal_id}@{scene_seed}")
}

/// Replays `actions` with no noise; fails on the first rejection.
pub fn replay(initial: &WorldState, actions: &[SymbolicAction]) -> Result<Vec<WorldState>, OracleError> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(initial.clone());
    for (step, a) in actions.iter().enumerate() {
        let out = apply(states.last().expect("non-empty"), a, 0.0, 0);
        match out.reason {
            Some(reason) => return Err(OracleError::Replay { step, reason }),
            None => states.push(out.next_state),
        }
    }
    Ok(states)
}

impl DemonstrationTrace {
    /// Builds a trace by replaying `actions` from `initial`.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        domain: &str,
        scene_seed: u64,
        goal_id: &str,
        goal: GoalSpec,
        group: String,
        initial: WorldState,
        actions: Vec<SymbolicAction>,
        provenance: Provenance,
        variant: u32,
    ) -> Result<Self, OracleError> {
        let states = replay(&initial, &actions)?;
        let final_state = states.into_iter().last().expect("at least the initial state");
        let success = goal_check(&final_state, &goal);
        Ok(DemonstrationTrace {
            domain: domain.to_string(),
            scene_seed,
            goal_id: goal_id.to_string(),
            goal,
            group,
            initial,
            actions,
            final_state,
            success,
            provenance,
            variant,
            meta: serde_json::Value::Null,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// States before each action, followed by the final state.
    pub fn states(&self) -> Vec<WorldState> {
        replay(&self.initial, &self.actions).expect("trace was validated on construction")
    }

    /// `(state, action)` pairs in order.
    pub fn steps(&self) -> Vec<(WorldState, SymbolicAction)> {
        self.states().into_iter().zip(self.actions.iter().copied()).collect()
    }

    /// Checks that replay reproduces the final state and the success flag.
    pub fn validate(&self) -> Result<(), OracleError> {
        let states = replay(&self.initial, &self.actions)?;
        let last = states.last().expect("non-empty");
        if last.canonical_json() != self.final_state.canonical_json() {
            return Err(OracleError::Invalid("replay does not reproduce the final state".into()));
        }
        if goal_check(last, &self.goal) != self.success {
            return Err(OracleError::Invalid("success flag disagrees with the goal check".into()));
        }
        Ok(())
    }

    pub fn to_record(&self) -> TraceRecord {
        let states = self.states();
        TraceRecord {
            domain: self.domain.clone(),
            scene_seed: self.scene_seed,
            goal_id: self.goal_id.clone(),
            goal: self.goal.clone(),
            group: self.group.clone(),
            provenance: self.provenance,
            variant: self.variant,
            initial: self.initial.to_doc(),
            actions: self.actions.iter().zip(&states).map(|(a, s)| a.to_wire(s)).collect(),
            final_state: self.final_state.to_doc(),
            success: self.success,
            meta: self.meta.clone(),
        }
    }

    /// Rebuilds a trace from its record and checks it by replay.
    pub fn from_record(rec: TraceRecord, table: Arc<ClassTable>) -> Result<Self, OracleError> {
        let initial = WorldState::from_doc(rec.initial, table.clone())?;
        let final_state = WorldState::from_doc(rec.final_state, table)?;
        let mut actions = Vec::with_capacity(rec.actions.len());
        let mut cur = initial.clone();
        for (step, w) in rec.actions.iter().enumerate() {
            let a = w.resolve(&cur)?;
            let out = apply(&cur, &a, 0.0, 0);
            if let Some(reason) = out.reason {
                return Err(OracleError::Replay { step, reason });
            }
            cur = out.next_state;
            actions.push(a);
        }
        let t = DemonstrationTrace {
            domain: rec.domain,
            scene_seed: rec.scene_seed,
            goal_id: rec.goal_id,
            goal: rec.goal,
            group: rec.group,
            initial,
            actions,
            final_state,
            success: rec.success,
            provenance: rec.provenance,
            variant: rec.variant,
            meta: rec.meta,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("trace serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{instantiate_goal, sample_scene, DomainCatalog};
    use crate::oracle::{plan, PlannerConfig};

    fn trace() -> (DomainCatalog, DemonstrationTrace) {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let s = sample_scene(&c, 1).unwrap();
        let g = instantiate_goal(c.goal("cube-in-box").unwrap(), &s).unwrap();
        let p = plan(&s, &g, &PlannerConfig::default()).unwrap();
        let t = DemonstrationTrace::record("mini-home", 1, "cube-in-box", g, group_of("cube-in-box", 1), s, p, Provenance::Oracle, 0)
            .unwrap();
        (c, t)
    }

    #[test]
    fn record_round_trip() {
        let (c, t) = trace();
        assert!(t.success);
        t.validate().unwrap();
        let line = t.to_json_line();
        let back = DemonstrationTrace::from_record(serde_json::from_str(&line).unwrap(), c.table()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json_line(), line);
    }

    #[test]
    fn steps_pair_states_with_actions() {
        let (_, t) = trace();
        let steps = t.steps();
        assert_eq!(steps.len(), t.len());
        assert_eq!(steps[0].0, t.initial);
    }

    #[test]
    fn tampered_record_is_rejected() {
        let (c, t) = trace();
        let mut rec = t.to_record();
        rec.actions.swap(0, 1);
        assert!(DemonstrationTrace::from_record(rec, c.table()).is_err());
        let mut rec = t.to_record();
        rec.success = false;
        assert!(matches!(DemonstrationTrace::from_record(rec, c.table()), Err(OracleError::Invalid(_))));
    }
}
