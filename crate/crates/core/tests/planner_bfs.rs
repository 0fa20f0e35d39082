//! The oracle planner against plain breadth-first search over the
//! transition function on small hand-built problems.

use std::collections::{HashSet, VecDeque};

use tooluse::actions::{apply, enumerate_applicable};
use tooluse::domains::DomainCatalog;
use tooluse::oracle::{plan, replay, PlannerConfig};
use tooluse::worldsim::{goal_check, Constraint, GoalSpec, RelationKind, Term, WorldState};

fn bfs(start: &WorldState, goal: &GoalSpec, max_depth: usize) -> Option<usize> {
    let mut seen = HashSet::from([start.key()]);
    let mut queue = VecDeque::from([(start.clone(), 0)]);
    while let Some((s, d)) = queue.pop_front() {
        if goal_check(&s, goal) {
            return Some(d);
        }
        if d == max_depth {
            continue;
        }
        for a in enumerate_applicable(&s) {
            let next = apply(&s, &a, 0.0, 0).next_state;
            if seen.insert(next.key()) {
                queue.push_back((next, d + 1));
            }
        }
    }
    None
}

fn inside(subject: &str, object: &str) -> GoalSpec {
    GoalSpec {
        constraints: vec![Constraint::Relation { relation: RelationKind::Inside, subject: Term::Class(subject.into()), object: Term::Class(object.into()) }],
        text: format!("{subject} in {object}"),
    }
}

fn on_top(subject: &str, object: &str) -> GoalSpec {
    GoalSpec {
        constraints: vec![Constraint::Relation { relation: RelationKind::OnTop, subject: Term::Class(subject.into()), object: Term::Class(object.into()) }],
        text: format!("{subject} on {object}"),
    }
}

fn problems() -> Vec<(WorldState, GoalSpec)> {
    let c = DomainCatalog::builtin("mini-home").unwrap();
    let room = |objects: &[(&str, [f64; 3])]| {
        let mut s = WorldState::with_robot(c.table(), c.geometry, "robot", [5.0, 5.0]).unwrap();
        for (token, p) in objects {
            s.add_object(token, *p).unwrap();
        }
        s.refresh();
        s
    };
    vec![
        (room(&[("cube", [2.0, 2.0, 0.15]), ("box", [8.0, 2.0, 0.2])]), inside("cube", "box")),
        (room(&[("cube", [2.0, 2.0, 0.15]), ("cube", [2.5, 2.0, 0.15]), ("box", [8.0, 8.0, 0.2])]), inside("cube", "box")),
        (room(&[("milk", [2.0, 8.0, 0.1]), ("fridge", [8.0, 8.0, 0.9])]), inside("milk", "fridge")),
        (room(&[("apple", [2.0, 2.0, 0.05]), ("tray", [8.0, 2.0, 0.03]), ("table", [5.0, 8.0, 0.4])]), on_top("apple", "tray")),
    ]
}

#[test]
fn planner_without_macros_matches_breadth_first_search() {
    let config = PlannerConfig { macros: false, ..PlannerConfig::default() };
    for (s, g) in problems() {
        let shortest = bfs(&s, &g, 8).expect("solvable within 8 steps");
        let p = plan(&s, &g, &config).unwrap();
        assert_eq!(p.len(), shortest, "{}", g.text);
        assert!(goal_check(replay(&s, &p).unwrap().last().unwrap(), &g));
    }
}

#[test]
fn macro_plans_reach_the_goal_and_are_never_shorter() {
    for (s, g) in problems() {
        let shortest = bfs(&s, &g, 8).unwrap();
        let p = plan(&s, &g, &PlannerConfig::default()).unwrap();
        assert!(p.len() >= shortest, "{}", g.text);
        assert!(goal_check(replay(&s, &p).unwrap().last().unwrap(), &g));
    }
}
