use serde::{Deserialize, Serialize};

use super::{eval_relation, ObjectId, RelationKind, WorldState};

/// A constraint argument: a concrete instance or any instance of a class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Term {
    Id(ObjectId),
    Class(String),
}

impl Term {
    /// Instances the term can bind to, in id order.
    pub fn candidates(&self, state: &WorldState) -> Vec<ObjectId> {
        match self {
            Term::Id(id) => state.objects.contains_key(id).then_some(*id).into_iter().collect(),
            Term::Class(c) => state.ids_of_class(c),
        }
    }

    pub fn class_token<'a>(&'a self, state: &'a WorldState) -> Option<&'a str> {
        match self {
            Term::Id(id) => state.objects.get(id).map(|o| o.class.as_str()),
            Term::Class(c) => Some(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    Relation { relation: RelationKind, subject: Term, object: Term },
    State { subject: Term, predicate: String, value: bool },
    /// No instance of the class remains (cleaned dirt, spilled water).
    Absent { class: String },
}

impl Constraint {
    pub fn terms(&self) -> Vec<&Term> {
        match self {
            Constraint::Relation { subject, object, .. } => vec![subject, object],
            Constraint::State { subject, .. } => vec![subject],
            Constraint::Absent { .. } => vec![],
        }
    }

    pub fn holds(&self, state: &WorldState) -> bool {
        lowest_witness(state, self).is_some() || matches!(self, Constraint::Absent { class } if state.ids_of_class(class).is_empty())
    }
}

/// Declarative goal: a conjunction of constraints plus display text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoalSpec {
    pub constraints: Vec<Constraint>,
    pub text: String,
}

/// Lowest-id pair of instances satisfying a relation or state constraint.
/// `Absent` constraints have no witness.
pub fn lowest_witness(state: &WorldState, c: &Constraint) -> Option<(ObjectId, Option<ObjectId>)> {
    match c {
        Constraint::Relation { relation, subject, object } => {
            let objs = object.candidates(state);
            subject.candidates(state).into_iter().find_map(|a| {
                objs.iter()
                    .find(|&&b| eval_relation(state, *relation, a, b).unwrap_or(false))
                    .map(|&b| (a, Some(b)))
            })
        }
        Constraint::State { subject, predicate, value } => subject
            .candidates(state)
            .into_iter()
            .find(|&a| state.predicate(a, predicate) == *value)
            .map(|a| (a, None)),
        Constraint::Absent { .. } => None,
    }
}

/// True iff every constraint holds; class terms are satisfied by any instance.
pub fn goal_check(state: &WorldState, goal: &GoalSpec) -> bool {
    goal.constraints.iter().all(|c| c.holds(state))
}

pub fn unsatisfied_count(state: &WorldState, goal: &GoalSpec) -> usize {
    goal.constraints.iter().filter(|c| !c.holds(state)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{Affordance as A, ClassTable, GeometryConfig, ObjectClass};
    use std::sync::Arc;

    fn state() -> WorldState {
        let mk = |t: &str, a: &[A], e: [f64; 3], st: &[&str]| ObjectClass {
            token: t.into(),
            category: t.into(),
            affordances: a.iter().copied().collect(),
            extent: e,
            states: st.iter().map(|s| s.to_string()).collect(),
            initial_states: st.iter().filter(|s| **s == "off" || **s == "closed").map(|s| s.to_string()).collect(),
            operate_effect: None,
            switch_requires: None,
        };
        let table = ClassTable::new(
            vec!["open".into(), "closed".into(), "on".into(), "off".into()],
            [
                mk("robot", &[], [0.6, 0.6, 1.0], &[]),
                mk("fridge", &[A::Container, A::Openable, A::Surface], [0.8, 0.8, 1.8], &["open", "closed"]),
                mk("milk", &[A::Graspable, A::Movable], [0.08, 0.08, 0.2], &[]),
                mk("light", &[A::Operable], [0.1, 0.1, 0.1], &["on", "off"]),
            ],
        )
        .unwrap();
        let mut s = WorldState::with_robot(Arc::new(table), GeometryConfig::default(), "robot", [0.0, -3.0]).unwrap();
        s.add_object("fridge", [0.0, 0.0, 0.9]).unwrap();
        s.add_object("milk", [0.0, 0.0, 0.2]).unwrap();
        s.add_object("light", [3.0, 0.0, 1.2]).unwrap();
        s.refresh();
        s
    }

    fn inside(a: Term, b: Term) -> Constraint {
        Constraint::Relation { relation: RelationKind::Inside, subject: a, object: b }
    }

    #[test]
    fn empty_goal_is_vacuous() {
        assert!(goal_check(&state(), &GoalSpec { constraints: vec![], text: String::new() }));
    }

    #[test]
    fn milk_in_fridge_holds() {
        let s = state();
        let g = GoalSpec { constraints: vec![inside(Term::Id(2), Term::Id(1))], text: "Place milk in fridge".into() };
        assert!(goal_check(&s, &g));
        let by_class = inside(Term::Class("milk".into()), Term::Class("fridge".into()));
        assert_eq!(lowest_witness(&s, &by_class), Some((2, Some(1))));
    }

    #[test]
    fn light_off_fails_state_goal() {
        let s = state();
        let g = GoalSpec {
            constraints: vec![Constraint::State { subject: Term::Id(3), predicate: "on".into(), value: true }],
            text: "Illuminate the room".into(),
        };
        assert!(!goal_check(&s, &g));
        assert_eq!(unsatisfied_count(&s, &g), 1);
    }

    #[test]
    fn absent_and_missing_instances() {
        let mut s = state();
        let gone = Constraint::Absent { class: "milk".into() };
        assert!(!gone.holds(&s));
        s.remove_object(2).unwrap();
        assert!(gone.holds(&s));
        assert!(!inside(Term::Id(2), Term::Id(1)).holds(&s));
    }

    #[test]
    fn constraint_json_shape() {
        let c = inside(Term::Class("milk".into()), Term::Id(4));
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(j, r#"{"kind":"relation","relation":"Inside","subject":"milk","object":4}"#);
        assert_eq!(serde_json::from_str::<Constraint>(&j).unwrap(), c);
    }
}
