use std::cmp::Reverse;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BinaryHeap, HashMap};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::OracleError;
use crate::actions::{apply_unchecked, preconditions, Interaction, SymbolicAction};
use crate::worldsim::{goal_check, unsatisfied_count, Affordance, Constraint, GoalSpec, ObjectId, RelationKind, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Expansions allowed to the optimal search.
    pub budget: usize,
    /// Expansions allowed to the additive-bound search that runs when the
    /// optimal search runs out of budget; zero disables it.
    pub fallback_budget: usize,
    /// `None` breaks ties by insertion order; `Some(seed)` by a seeded hash
    /// of the state, which yields alternative plans of equal cost.
    pub tiebreak_seed: Option<u64>,
    /// Adds an admissible lower bound on the remaining cost to the priority.
    pub heuristic: bool,
    /// Bundles `moveTo(x)` with the action it enables when the gripper is empty.
    pub macros: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig { budget: 4_000, fallback_budget: 100_000, tiebreak_seed: None, heuristic: true, macros: true }
    }
}

/// Search statistics of a successful plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStats {
    pub expanded: usize,
    pub generated: usize,
    /// False when the plan came from the additive-bound fallback.
    pub optimal: bool,
}

/// The object the robot must be near for `a`, if any.
pub fn near_target(a: &SymbolicAction) -> Option<ObjectId> {
    use Interaction as I;
    match a.interaction {
        I::Pick | I::Open | I::Close | I::SwitchOn | I::SwitchOff | I::ClimbUp | I::Push | I::Clean | I::Apply | I::Fuel => {
            Some(a.o1)
        }
        I::PlaceOn | I::PlaceInside | I::Stick | I::Operate => a.o2,
        I::MoveTo | I::Drop | I::ClimbDown => None,
    }
}

fn object_ids(state: &WorldState) -> Vec<ObjectId> {
    state.objects.keys().copied().filter(|&i| i != state.robot).collect()
}

/// Feasible actions whose near-target is `x`.
fn targeted(state: &WorldState, x: ObjectId, ids: &[ObjectId], out: &mut Vec<SymbolicAction>) {
    use Interaction as I;
    let mut cands = Vec::with_capacity(16);
    for i in [I::Pick, I::Open, I::Close, I::SwitchOn, I::SwitchOff, I::ClimbUp, I::Push, I::Clean] {
        cands.push(SymbolicAction::unary(i, x));
    }
    if let Some(h) = state.held() {
        for i in [I::PlaceOn, I::PlaceInside, I::Stick] {
            cands.push(SymbolicAction::binary(i, h, x));
        }
        for i in [I::Apply, I::Fuel] {
            cands.push(SymbolicAction::binary(i, x, h));
        }
    }
    for &i in ids {
        if i != x && state.objects[&i].affordances.has(Affordance::Operable) {
            cands.push(SymbolicAction::binary(I::Operate, i, x));
        }
    }
    out.extend(cands.into_iter().filter(|a| preconditions(state, a).is_ok()));
}

/// Outgoing edges of the search graph. Each edge is one primitive action or
/// a `moveTo(x)` followed by an action on `x` it makes feasible (or by
/// dropping the held object there).
pub(crate) fn successors(state: &WorldState, macros: bool) -> Vec<Vec<SymbolicAction>> {
    let ids = object_ids(state);
    let held = state.held();
    let mut direct = Vec::new();
    if let Some(h) = held {
        direct.push(SymbolicAction::unary(Interaction::Drop, h));
    }
    if state.robot_elevation > 0 {
        direct.extend(ids.iter().map(|&c| SymbolicAction::unary(Interaction::ClimbDown, c)));
    }
    direct.retain(|a| preconditions(state, a).is_ok());
    for &x in &ids {
        if state.is_near(x) {
            targeted(state, x, &ids, &mut direct);
        }
    }
    let mut out: Vec<Vec<SymbolicAction>> = direct.into_iter().map(|a| vec![a]).collect();
    if state.robot_elevation > 0 {
        return out;
    }
    let own_key = state.key();
    for &x in &ids {
        let mv = SymbolicAction::unary(Interaction::MoveTo, x);
        if preconditions(state, &mv).is_err() {
            continue;
        }
        if !macros {
            out.push(vec![mv]);
            continue;
        }
        let moved = apply_unchecked(state, &mv);
        if moved.key() == own_key {
            continue;
        }
        let mut enabled = Vec::new();
        targeted(&moved, x, &ids, &mut enabled);
        for a in enabled {
            if preconditions(state, &a).is_err() {
                out.push(vec![mv, a]);
            }
        }
        if let Some(h) = held {
            out.push(vec![mv, SymbolicAction::unary(Interaction::Drop, h)]);
        }
    }
    out
}

fn hash_key(key: &[u8], salt: u64) -> u64 {
    let mut h = DefaultHasher::new();
    salt.hash(&mut h);
    key.hash(&mut h);
    h.finish()
}

fn ident(key: &[u8]) -> (u64, u64) {
    (hash_key(key, 0x5eed), hash_key(key, 0xfeed))
}

/// Lower bound on primitive actions still needed for one constraint.
fn constraint_bound(state: &WorldState, c: &Constraint) -> u32 {
    if c.holds(state) {
        return 0;
    }
    let near = |id: ObjectId| u32::from(!state.is_near(id));
    let reach = state.robot_elevation + 1;
    let high = |tier: u32| tier > reach;
    let held = state.held();
    let in_hand = |id: ObjectId| held.is_some_and(|h| h == id || state.carried_by(h).contains(&id));
    match c {
        Constraint::Relation { relation, subject, object } => {
            let subs = subject.candidates(state);
            let objs = object.candidates(state);
            let mut best = u32::MAX;
            for &a in &subs {
                for &b in &objs {
                    let v = match relation {
                        RelationKind::Inside | RelationKind::OnTop => {
                            let open = u32::from(
                                *relation == RelationKind::Inside
                                    && state.objects[&b].affordances.has(Affordance::Openable)
                                    && !state.is_open(b),
                            );
                            let (oa, ob) = (&state.objects[&a], &state.objects[&b]);
                            let top = (ob.top().max(0.0) / crate::worldsim::TIER_HEIGHT + 1e-9).floor() as u32;
                            let climb = u32::from((!in_hand(a) && high(oa.tier())) || high(top));
                            1 + u32::from(!in_hand(a)) + near(b) + open + climb
                        }
                        RelationKind::Near => 1,
                        RelationKind::ConnectedTo => 1,
                        RelationKind::StuckTo => 1 + u32::from(!state.predicate(a, "sticky")) + u32::from(!in_hand(a)) + near(b),
                    };
                    best = best.min(v);
                }
            }
            if best == u32::MAX {
                1
            } else {
                best
            }
        }
        Constraint::State { subject, predicate, .. } => subject
            .candidates(state)
            .into_iter()
            .map(|x| {
                let pending = state
                    .class_of(x)
                    .ok()
                    .and_then(|k| k.switch_requires.as_deref())
                    .filter(|_| predicate == "on")
                    .is_some_and(|req| !state.predicate(x, req));
                1 + near(x) + u32::from(pending) + u32::from(high(state.objects[&x].tier()))
            })
            .min()
            .unwrap_or(1),
        Constraint::Absent { class } => {
            let ids = state.ids_of_class(class);
            let agent = held.is_some_and(|h| state.objects[&h].affordances.has(Affordance::CleaningAgent));
            ids.len() as u32 + u32::from(!agent) + u32::from(!ids.iter().any(|&i| state.is_near(i)))
        }
    }
}

/// Admissible estimate of the remaining plan length.
pub fn lower_bound(state: &WorldState, goal: &GoalSpec) -> u32 {
    goal.constraints.iter().map(|c| constraint_bound(state, c)).max().unwrap_or(0)
}

/// Sum of per-constraint bounds; overestimates when one action serves
/// several constraints.
pub fn additive_bound(state: &WorldState, goal: &GoalSpec) -> u32 {
    goal.constraints.iter().map(|c| constraint_bound(state, c)).sum()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Estimate {
    Zero,
    Max,
    Sum,
}

struct Node {
    state: Option<WorldState>,
    parent: Option<usize>,
    edge: Vec<SymbolicAction>,
    g: u32,
}

/// Plan (in primitive actions) from `state` to `goal`.
///
/// Best-first search on `g + h` with an admissible `h`, duplicate pruning on
/// [`WorldState::key`], and ties broken by the number of unsatisfied
/// constraints, then by insertion order or a seeded state hash. The result
/// is cost-optimal unless the budget runs out, in which case the search is
/// repeated with the additive bound and `PlanStats::optimal` is false.
pub fn plan_with_stats(
    state: &WorldState,
    goal: &GoalSpec,
    config: &PlannerConfig,
) -> Result<(Vec<SymbolicAction>, PlanStats), OracleError> {
    let first = if config.heuristic { Estimate::Max } else { Estimate::Zero };
    match search(state, goal, config, first, config.budget) {
        Err(OracleError::BudgetExhausted { expanded }) if config.fallback_budget > 0 => {
            search(state, goal, config, Estimate::Sum, config.fallback_budget)
                .map(|(p, st)| (p, PlanStats { expanded: st.expanded + expanded, optimal: false, ..st }))
                .map_err(|e| match e {
                    OracleError::BudgetExhausted { expanded: more } => OracleError::BudgetExhausted { expanded: expanded + more },
                    other => other,
                })
        }
        other => other,
    }
}

fn search(
    state: &WorldState,
    goal: &GoalSpec,
    config: &PlannerConfig,
    estimate: Estimate,
    budget: usize,
) -> Result<(Vec<SymbolicAction>, PlanStats), OracleError> {
    let mut root = state.clone();
    root.refresh();
    let free_moves = goal.constraints.iter().any(|c| matches!(c, Constraint::Relation { relation: RelationKind::Near, .. }));
    let macros = config.macros && !free_moves;
    let h = |s: &WorldState| match estimate {
        Estimate::Zero => 0,
        Estimate::Max => lower_bound(s, goal),
        Estimate::Sum => additive_bound(s, goal),
    };
    let tiebreak = |key: &[u8]| config.tiebreak_seed.map_or(0, |seed| hash_key(key, seed));

    let mut nodes = vec![Node { state: Some(root.clone()), parent: None, edge: vec![], g: 0 }];
    let mut best: HashMap<(u64, u64), u32> = HashMap::new();
    let root_key = root.key();
    best.insert(ident(&root_key), 0);
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((h(&root), unsatisfied_count(&root, goal), tiebreak(&root_key), 0usize)));
    let mut expanded = 0;
    let mut generated = 1;

    while let Some(Reverse((_, _, _, idx))) = heap.pop() {
        let Some(s) = nodes[idx].state.take() else { continue };
        let g = nodes[idx].g;
        if best.get(&ident(&s.key())).is_some_and(|&b| b < g) {
            continue;
        }
        if goal_check(&s, goal) {
            let mut plan = Vec::new();
            let mut cur = Some(idx);
            while let Some(i) = cur {
                plan.extend(nodes[i].edge.iter().rev().copied());
                cur = nodes[i].parent;
            }
            plan.reverse();
            return Ok((plan, PlanStats { expanded, generated, optimal: estimate != Estimate::Sum }));
        }
        if expanded >= budget {
            return Err(OracleError::BudgetExhausted { expanded });
        }
        expanded += 1;
        for edge in successors(&s, macros) {
            let mut next = s.clone();
            for a in &edge {
                next = apply_unchecked(&next, a);
            }
            let ng = g + edge.len() as u32;
            let key = next.key();
            let id = ident(&key);
            if best.get(&id).is_some_and(|&b| b <= ng) {
                continue;
            }
            best.insert(id, ng);
            generated += 1;
            let prio = (ng + h(&next), unsatisfied_count(&next, goal), tiebreak(&key), nodes.len());
            nodes.push(Node { state: Some(next), parent: Some(idx), edge, g: ng });
            heap.push(Reverse(prio));
        }
    }
    Err(OracleError::BudgetExhausted { expanded })
}

pub fn plan(state: &WorldState, goal: &GoalSpec, config: &PlannerConfig) -> Result<Vec<SymbolicAction>, OracleError> {
    plan_with_stats(state, goal, config).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{apply, enumerate_applicable};
    use crate::domains::{instantiate_goal, sample_scene, DomainCatalog};
    use std::collections::BTreeSet;

    fn replay(state: &WorldState, plan: &[SymbolicAction]) -> WorldState {
        plan.iter().fold(state.clone(), |s, a| {
            let out = apply(&s, a, 0.0, 0);
            assert!(out.is_applied(), "{} rejected: {:?}", a.display(&s), out.reason);
            out.next_state
        })
    }

    #[test]
    fn satisfied_goal_gives_empty_plan() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let s = sample_scene(&c, 0).unwrap();
        let g = GoalSpec { constraints: vec![], text: String::new() };
        assert!(plan(&s, &g, &PlannerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn milk_plan_opens_fridge_first() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        for seed in 0..5 {
            let s = sample_scene(&c, seed).unwrap();
            let g = instantiate_goal(c.goal("milk-in-fridge").unwrap(), &s).unwrap();
            let p = plan(&s, &g, &PlannerConfig::default()).unwrap();
            assert!(goal_check(&replay(&s, &p), &g));
            let fridge = s.ids_of_class("fridge")[0];
            let open = p.iter().position(|a| a.interaction == Interaction::Open && a.o1 == fridge);
            let put = p.iter().position(|a| a.interaction == Interaction::PlaceInside && a.o2 == Some(fridge));
            if let Some(put) = put {
                assert!(open.is_some_and(|o| o < put), "seed {seed}");
            }
        }
    }

    #[test]
    fn tiny_budget_is_reported() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let s = sample_scene(&c, 2).unwrap();
        let g = instantiate_goal(c.goal("fruits-in-cupboard").unwrap(), &s).unwrap();
        let cfg = PlannerConfig { budget: 3, fallback_budget: 0, ..Default::default() };
        assert!(matches!(plan(&s, &g, &cfg), Err(OracleError::BudgetExhausted { expanded: 3 })));
    }

    #[test]
    fn free_moves_cover_every_applicable_action() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        for seed in 0..10 {
            let mut s = sample_scene(&c, seed).unwrap();
            for step in 0..6 {
                let mine: BTreeSet<_> = successors(&s, false).into_iter().map(|e| e[0].order_key()).collect();
                let all: BTreeSet<_> = enumerate_applicable(&s).iter().map(|a| a.order_key()).collect();
                assert_eq!(mine, all, "seed {seed} step {step}");
                let acts = enumerate_applicable(&s);
                s = apply_unchecked(&s, &acts[(seed as usize * 7 + step * 3) % acts.len()]);
            }
        }
    }

    #[test]
    fn tiebreak_is_deterministic() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let s = sample_scene(&c, 4).unwrap();
        let g = instantiate_goal(c.goal("cube-in-box").unwrap(), &s).unwrap();
        let cfg = PlannerConfig { tiebreak_seed: Some(9), ..Default::default() };
        assert_eq!(plan(&s, &g, &cfg).unwrap(), plan(&s, &g, &cfg).unwrap());
        let base = plan(&s, &g, &PlannerConfig::default()).unwrap();
        assert_eq!(base.len(), plan(&s, &g, &cfg).unwrap().len());
    }
}
