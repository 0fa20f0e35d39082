use std::fmt;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{choose_position, Spots};
use super::{DomainCatalog, DomainError};
use crate::worldsim::{Affordance, Constraint, GoalSpec, ObjectId, Term, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerturbationKind {
    Position,
    Alternate,
    Unseen,
    Random,
    Goal,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::Position,
        PerturbationKind::Alternate,
        PerturbationKind::Unseen,
        PerturbationKind::Random,
        PerturbationKind::Goal,
    ];
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A generalization test transformation with its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Perturbation {
    /// Re-place up to two graspable objects.
    Position,
    /// Delete every instance of the given tool class.
    Alternate { tool: String },
    /// Swap a tool's class for its held-out look-alike. `None` picks a tool
    /// present in the scene.
    Unseen { tool: Option<String> },
    /// Swap a tool's class for an unrelated non-tool class.
    Random { tool: Option<String> },
    /// Swap a goal object for its same-category alternative.
    Goal,
}

impl Perturbation {
    pub fn kind(&self) -> PerturbationKind {
        match self {
            Perturbation::Position => PerturbationKind::Position,
            Perturbation::Alternate { .. } => PerturbationKind::Alternate,
            Perturbation::Unseen { .. } => PerturbationKind::Unseen,
            Perturbation::Random { .. } => PerturbationKind::Random,
            Perturbation::Goal => PerturbationKind::Goal,
        }
    }
}

fn goal_ids(goal: &GoalSpec) -> Vec<ObjectId> {
    goal.constraints
        .iter()
        .flat_map(|c| c.terms())
        .filter_map(|t| match t {
            Term::Id(id) => Some(*id),
            Term::Class(_) => None,
        })
        .collect()
}

fn replace_word(text: &str, from: &str, to: &str) -> String {
    text.split(' ')
        .map(|w| {
            let core = w.trim_end_matches(|c: char| !c.is_alphanumeric());
            if core == from || core.strip_suffix('s') == Some(from) {
                w.replacen(from, to, 1)
            } else {
                w.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Picks the tool instance to swap: the lowest id of the requested class, or
/// of a seeded choice among substitutable tool classes present.
fn tool_instance(
    catalog: &DomainCatalog,
    state: &WorldState,
    tool: &Option<String>,
    rng: &mut ChaCha8Rng,
) -> Result<ObjectId, DomainError> {
    let class = match tool {
        Some(t) => t.clone(),
        None => {
            let present: Vec<&String> = catalog
                .substitutions
                .keys()
                .filter(|t| catalog.is_tool(t) && !state.ids_of_class(t).is_empty())
                .collect();
            present
                .choose(rng)
                .map(|s| s.to_string())
                .ok_or_else(|| DomainError::NothingToPerturb("no substitutable tool in scene".into()))?
        }
    };
    state
        .ids_of_class(&class)
        .first()
        .copied()
        .ok_or_else(|| DomainError::NothingToPerturb(format!("no `{class}` in scene")))
}

/// Applies one generalization perturbation; deterministic in `seed`.
pub fn perturb(
    catalog: &DomainCatalog,
    state: &WorldState,
    goal: &GoalSpec,
    perturbation: &Perturbation,
    seed: u64,
) -> Result<(WorldState, GoalSpec), DomainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = state.clone();
    let mut g = goal.clone();
    match perturbation {
        Perturbation::Position => {
            let movable: Vec<ObjectId> = s
                .objects
                .values()
                .filter(|o| o.id != s.robot && o.affordances.has(Affordance::Graspable) && s.held() != Some(o.id))
                .map(|o| o.id)
                .collect();
            let chosen: Vec<ObjectId> = movable.choose_multiple(&mut rng, 2.min(movable.len())).copied().collect();
            let mut changed = false;
            for id in chosen {
                let before = s.objects[&id].position;
                let token = s.objects[&id].class.clone();
                for attempt in 0..12 {
                    let mut spots = Spots { anchors: vec![], walls: vec![], floor: Spots::free_floor(catalog, &s) };
                    let target = if attempt < 10 {
                        choose_position(catalog, &without(&s, id), &token, &mut spots, &mut rng)?
                    } else {
                        spots.floor.pop().map(|p| [p[0], p[1], s.objects[&id].extent[2] / 2.0])
                    };
                    let Some(p) = target else { continue };
                    if (0..3).any(|k| (p[k] - before[k]).abs() > 1e-6) {
                        let d = [p[0] - before[0], p[1] - before[1], p[2] - before[2]];
                        s.translate_with_contents(id, d);
                        s.refresh();
                        changed = true;
                        break;
                    }
                }
            }
            if !changed {
                return Err(DomainError::NothingToPerturb("no object could be moved".into()));
            }
        }
        Perturbation::Alternate { tool } => {
            let ids = s.ids_of_class(tool);
            if ids.is_empty() {
                return Err(DomainError::NothingToPerturb(format!("no `{tool}` in scene")));
            }
            let referenced = goal_ids(goal);
            if ids.iter().any(|id| referenced.contains(id)) {
                return Err(DomainError::NothingToPerturb(format!("`{tool}` is a goal object")));
            }
            for id in ids {
                let carried = s.carried_by(id);
                s.remove_object(id)?;
                for c in carried {
                    let mut spots = Spots { anchors: vec![], walls: vec![], floor: Spots::free_floor(catalog, &s) };
                    if let Some(p) = spots.floor.pop() {
                        let o = &s.objects[&c];
                        let d = [p[0] - o.position[0], p[1] - o.position[1], o.extent[2] / 2.0 - o.position[2]];
                        s.translate_with_contents(c, d);
                    }
                }
                s.refresh();
            }
        }
        Perturbation::Unseen { tool } => {
            let id = tool_instance(catalog, &s, tool, &mut rng)?;
            let from = s.objects[&id].class.clone();
            let to = catalog
                .substitutions
                .get(&from)
                .ok_or_else(|| DomainError::NothingToPerturb(format!("no substitute for `{from}`")))?;
            s.reclass(id, to)?;
            if goal_ids(goal).contains(&id) {
                g.text = replace_word(&g.text, &from, to);
            }
            s.refresh();
        }
        Perturbation::Random { tool } => {
            let id = tool_instance(catalog, &s, tool, &mut rng)?;
            if goal_ids(goal).contains(&id) {
                return Err(DomainError::NothingToPerturb("the tool is a goal object".into()));
            }
            let to = catalog
                .unrelated
                .choose(&mut rng)
                .ok_or_else(|| DomainError::NothingToPerturb("catalog lists no unrelated classes".into()))?;
            s.reclass(id, to)?;
            s.refresh();
        }
        Perturbation::Goal => {
            let mut eligible: Vec<(String, String)> = Vec::new();
            for id in goal_ids(goal) {
                let from = s.objects.get(&id).map(|o| o.class.clone()).unwrap_or_default();
                if let Some(to) = catalog.goal_alternatives.get(&from) {
                    if !s.ids_of_class(to).is_empty() && !eligible.iter().any(|(f, _)| f == &from) {
                        eligible.push((from, to.clone()));
                    }
                }
            }
            let (from, to) = eligible
                .choose(&mut rng)
                .cloned()
                .ok_or_else(|| DomainError::NothingToPerturb("goal has no substitutable object".into()))?;
            let target = s.ids_of_class(&to)[0];
            let swap = |t: &Term| match t {
                Term::Id(id) if s.objects[id].class == from => Term::Id(target),
                other => other.clone(),
            };
            g.constraints = g
                .constraints
                .iter()
                .map(|c| match c {
                    Constraint::Relation { relation, subject, object } => {
                        Constraint::Relation { relation: *relation, subject: swap(subject), object: swap(object) }
                    }
                    Constraint::State { subject, predicate, value } => {
                        Constraint::State { subject: swap(subject), predicate: predicate.clone(), value: *value }
                    }
                    other => other.clone(),
                })
                .collect();
            if g.constraints.iter().any(|c| matches!(c, Constraint::Relation { subject, object, .. } if subject == object)) {
                return Err(DomainError::NothingToPerturb("substitution collapses a relation".into()));
            }
            g.text = replace_word(&g.text, &from, &to);
        }
    }
    s.validate()?;
    Ok((s, g))
}

fn without(state: &WorldState, id: ObjectId) -> WorldState {
    let mut s = state.clone();
    let _ = s.remove_object(id);
    s.refresh();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{instantiate_goal, sample_scene};

    fn setup(seed: u64, goal: &str) -> (DomainCatalog, WorldState, GoalSpec) {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let s = sample_scene(&c, seed).unwrap();
        let g = instantiate_goal(c.goal(goal).unwrap(), &s).unwrap();
        (c, s, g)
    }

    #[test]
    fn position_keeps_ids_and_moves_something() {
        for seed in 0..10 {
            let (c, s, g) = setup(seed, "fruits-in-cupboard");
            let (p, g2) = perturb(&c, &s, &g, &Perturbation::Position, seed).unwrap();
            assert_eq!(p.objects.keys().collect::<Vec<_>>(), s.objects.keys().collect::<Vec<_>>());
            assert!(p.objects.values().zip(s.objects.values()).any(|(a, b)| a.position != b.position));
            assert_eq!(g2, g);
        }
    }

    #[test]
    fn alternate_removes_tool() {
        let (c, s, g) = setup(1, "fruits-in-cupboard");
        let (p, _) = perturb(&c, &s, &g, &Perturbation::Alternate { tool: "tray".into() }, 0).unwrap();
        assert!(p.ids_of_class("tray").is_empty());
    }

    #[test]
    fn unseen_swaps_token_only() {
        let (c, s, g) = setup(2, "fruits-in-cupboard");
        let tray = s.ids_of_class("tray")[0];
        let (p, _) = perturb(&c, &s, &g, &Perturbation::Unseen { tool: Some("tray".into()) }, 0).unwrap();
        let (a, b) = (&s.objects[&tray], &p.objects[&tray]);
        assert_eq!(b.class, "basket");
        assert_eq!((a.position, a.extent, &a.state), (b.position, b.extent, &b.state));
        assert!(p.ids_of_class("tray").is_empty());
    }

    #[test]
    fn random_swaps_to_non_tool() {
        let (c, s, g) = setup(2, "milk-in-fridge");
        let (p, _) = perturb(&c, &s, &g, &Perturbation::Random { tool: Some("stool".into()) }, 5).unwrap();
        assert!(p.ids_of_class("stool").is_empty());
        let stool = s.ids_of_class("stool")[0];
        assert!(c.unrelated.contains(&p.objects[&stool].class));
    }

    #[test]
    fn goal_substitution_rewrites_spec() {
        let (c, s, g) = setup(4, "milk-in-fridge");
        let (_, g2) = perturb(&c, &s, &g, &Perturbation::Goal, 0).unwrap();
        let cupboard = s.ids_of_class("cupboard")[0];
        assert!(matches!(&g2.constraints[0], Constraint::Relation { object: Term::Id(o), .. } if *o == cupboard));
        assert_eq!(g2.text, "Place milk in cupboard");
    }

    #[test]
    fn deterministic_in_seed() {
        let (c, s, g) = setup(6, "cube-in-box");
        let a = perturb(&c, &s, &g, &Perturbation::Position, 11).unwrap();
        let b = perturb(&c, &s, &g, &Perturbation::Position, 11).unwrap();
        assert_eq!(a.0.canonical_json(), b.0.canonical_json());
    }

    #[test]
    fn missing_target_is_reported() {
        let (c, s, g) = setup(6, "illuminate");
        assert!(matches!(perturb(&c, &s, &g, &Perturbation::Goal, 0), Err(DomainError::NothingToPerturb(_))));
        assert!(matches!(
            perturb(&c, &s, &g, &Perturbation::Alternate { tool: "basket".into() }, 0),
            Err(DomainError::NothingToPerturb(_))
        ));
    }
}
