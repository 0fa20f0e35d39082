use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actions::SymbolicAction;
use crate::derive_seed;
use crate::domains::{instantiate_goal, perturb, sample_scene, DomainCatalog, Perturbation, PerturbationKind};
use crate::oracle::{plan, scene_seed, PlannerConfig};
use crate::worldsim::{goal_check, GoalSpec, WorldState};

/// Name of the unperturbed suite of fresh scenes.
pub const HELD_OUT: &str = "HeldOut";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub seed: u64,
    /// Target pairs per suite.
    pub pairs: usize,
    /// First scene index; scenes below it are the ones demonstrations are
    /// drawn from.
    pub scene_offset: u64,
    /// Goal ids to use; empty means every catalog goal.
    pub goals: Vec<String>,
    pub kinds: Vec<PerturbationKind>,
    pub planner: PlannerConfig,
    /// Candidate (scene, goal) pairs examined per target pair.
    pub candidate_factor: usize,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            seed: 0,
            pairs: 100,
            scene_offset: 100_000,
            goals: Vec::new(),
            kinds: PerturbationKind::ALL.to_vec(),
            planner: PlannerConfig { budget: 500, fallback_budget: 20_000, ..PlannerConfig::default() },
            candidate_factor: 3,
        }
    }
}

/// One test problem with the oracle plan that proved it solvable.
#[derive(Debug, Clone, PartialEq)]
pub struct SuitePair {
    pub suite: String,
    pub scene_seed: u64,
    pub goal_id: String,
    pub initial: WorldState,
    pub goal: GoalSpec,
    pub oracle_plan: Vec<SymbolicAction>,
}

/// Test pairs keyed by suite name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Suites {
    pub suites: BTreeMap<String, Vec<SuitePair>>,
}

impl Suites {
    pub fn get(&self, name: &str) -> &[SuitePair] {
        self.suites.get(name).map_or(&[], Vec::as_slice)
    }

    pub fn held_out(&self) -> &[SuitePair] {
        self.get(HELD_OUT)
    }
}

fn solvable(initial: &WorldState, goal: &GoalSpec, planner: &PlannerConfig) -> Option<Vec<SymbolicAction>> {
    if goal_check(initial, goal) {
        return None;
    }
    plan(initial, goal, planner).ok()
}

fn base_pair(catalog: &DomainCatalog, spec: &SuiteSpec, scene: u64, goal_id: &str) -> Option<SuitePair> {
    let seed = scene_seed(spec.seed, spec.scene_offset + scene);
    let initial = sample_scene(catalog, seed).ok()?;
    let goal = instantiate_goal(catalog.goal(goal_id)?, &initial).ok()?;
    let oracle_plan = solvable(&initial, &goal, &spec.planner)?;
    Some(SuitePair { suite: HELD_OUT.into(), scene_seed: seed, goal_id: goal_id.into(), initial, goal, oracle_plan })
}

/// Tool classes `plan` touches, in order of first use.
fn plan_tools(catalog: &DomainCatalog, base: &SuitePair) -> Vec<String> {
    let mut state = base.initial.clone();
    let mut out: Vec<String> = Vec::new();
    for a in &base.oracle_plan {
        for id in [Some(a.o1), a.o2].into_iter().flatten() {
            if let Some(o) = state.objects.get(&id) {
                if catalog.is_tool(&o.class) && !out.contains(&o.class) {
                    out.push(o.class.clone());
                }
            }
        }
        state = crate::actions::apply_unchecked(&state, a);
    }
    out
}

/// Perturbations to try on `base`, in order. `Alternate` removes a tool
/// class the oracle plan uses first, then any other tool class present.
fn perturbations_for(catalog: &DomainCatalog, kind: PerturbationKind, base: &SuitePair) -> Vec<Perturbation> {
    match kind {
        PerturbationKind::Position => vec![Perturbation::Position],
        PerturbationKind::Alternate => {
            let mut tools = plan_tools(catalog, base);
            let mut present: Vec<String> = base.initial.objects.values().map(|o| o.class.clone()).filter(|c| catalog.is_tool(c)).collect();
            present.sort();
            present.dedup();
            for t in present {
                if !tools.contains(&t) {
                    tools.push(t);
                }
            }
            tools.into_iter().map(|tool| Perturbation::Alternate { tool }).collect()
        }
        PerturbationKind::Unseen => vec![Perturbation::Unseen { tool: None }],
        PerturbationKind::Random => vec![Perturbation::Random { tool: None }],
        PerturbationKind::Goal => vec![Perturbation::Goal],
    }
}

fn perturbed_pair(catalog: &DomainCatalog, spec: &SuiteSpec, kind: PerturbationKind, base: &SuitePair, index: usize) -> Option<SuitePair> {
    let seed = derive_seed(spec.seed, &format!("perturb:{kind}"), index as u64);
    perturbations_for(catalog, kind, base).into_iter().find_map(|p| {
        let (initial, goal) = perturb(catalog, &base.initial, &base.goal, &p, seed).ok()?;
        let oracle_plan = solvable(&initial, &goal, &spec.planner)?;
        Some(SuitePair { suite: kind.to_string(), scene_seed: base.scene_seed, goal_id: base.goal_id.clone(), initial, goal, oracle_plan })
    })
}

/// Solved base pairs from fresh scenes, computed in chunks on demand.
struct Pool<'a> {
    catalog: &'a DomainCatalog,
    spec: &'a SuiteSpec,
    keys: Vec<(u64, String)>,
    next: usize,
    pairs: Vec<SuitePair>,
}

impl Pool<'_> {
    /// Makes sure pair `i` exists if the candidates allow it.
    fn fill(&mut self, i: usize) -> Option<&SuitePair> {
        let chunk = rayon::current_num_threads().max(8);
        while self.pairs.len() <= i && self.next < self.keys.len() {
            let end = (self.next + chunk).min(self.keys.len());
            let (catalog, spec) = (self.catalog, self.spec);
            let solved: Vec<SuitePair> = self.keys[self.next..end].par_iter().filter_map(|(s, g)| base_pair(catalog, spec, *s, g)).collect();
            self.pairs.extend(solved);
            self.next = end;
        }
        self.pairs.get(i)
    }
}

/// Held-out pairs from fresh scenes plus one suite per perturbation kind,
/// each keeping only pairs that start unsolved and that the oracle solves.
/// Perturbed pairs are derived from the held-out pool in order.
pub fn build_suites(catalog: &DomainCatalog, spec: &SuiteSpec) -> Suites {
    let goals: Vec<String> = if spec.goals.is_empty() { catalog.goals.iter().map(|g| g.id.clone()).collect() } else { spec.goals.clone() };
    let per_scene = goals.len().max(1);
    let scenes = (spec.pairs * spec.candidate_factor.max(1)).div_ceil(per_scene) as u64;
    let keys = (0..scenes).flat_map(|i| goals.iter().map(move |g| (i, g.clone()))).collect();
    let mut pool = Pool { catalog, spec, keys, next: 0, pairs: Vec::new() };
    pool.fill(spec.pairs.saturating_sub(1));

    let mut suites = BTreeMap::new();
    suites.insert(HELD_OUT.to_string(), pool.pairs.iter().take(spec.pairs).cloned().collect());
    let chunk = rayon::current_num_threads().max(8);
    for &kind in &spec.kinds {
        let mut found: Vec<SuitePair> = Vec::new();
        let mut start = 0;
        while found.len() < spec.pairs && pool.fill(start).is_some() {
            pool.fill(start + chunk - 1);
            let end = (start + chunk).min(pool.pairs.len());
            let base = &pool.pairs[start..end];
            found.extend(
                base.par_iter().enumerate().filter_map(|(k, b)| perturbed_pair(catalog, spec, kind, b, start + k)).collect::<Vec<_>>(),
            );
            start = end;
        }
        found.truncate(spec.pairs);
        suites.insert(kind.to_string(), found);
    }
    Suites { suites }
}
