use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trace::{DemonstrationTrace, Provenance};
use crate::derive_seed;
use crate::domains::{instantiate_goal, sample_scene, DomainCatalog};
use crate::worldsim::{ObjectId, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Fresh scenes each plan is replayed on.
    pub replay_scenes: u32,
    /// Object-removal clones per trace.
    pub removal_clones: u32,
    /// Upper bound on objects removed per clone.
    pub max_removed: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { replay_scenes: 3, removal_clones: 1, max_removed: 5 }
    }
}

/// Objects that neither the goal nor the plan touches and that carry nothing.
fn removable(t: &DemonstrationTrace) -> Vec<ObjectId> {
    let mut used: BTreeSet<ObjectId> = t.actions.iter().flat_map(|a| std::iter::once(a.o1).chain(a.o2)).collect();
    for c in &t.goal.constraints {
        for term in c.terms() {
            if let Term::Id(id) = term {
                used.insert(*id);
            }
        }
    }
    let s = &t.initial;
    s.objects
        .keys()
        .copied()
        .filter(|&id| id != s.robot && !used.contains(&id) && s.carried_by(id).is_empty())
        .collect()
}

/// Replays `trace` on a fresh scene, matching objects by name.
fn replay_on_scene(catalog: &DomainCatalog, trace: &DemonstrationTrace, scene_seed: u64, variant: u32) -> Option<DemonstrationTrace> {
    let template = catalog.goal(&trace.goal_id)?;
    let scene = sample_scene(catalog, scene_seed).ok()?;
    let goal = instantiate_goal(template, &scene).ok()?;
    if crate::worldsim::goal_check(&scene, &goal) {
        return None;
    }
    let states = trace.states();
    let mut actions = Vec::with_capacity(trace.actions.len());
    for (a, s) in trace.actions.iter().zip(&states) {
        actions.push(a.to_wire(s).resolve(&scene).ok()?);
    }
    let t = DemonstrationTrace::record(
        &trace.domain,
        scene_seed,
        &trace.goal_id,
        goal,
        trace.group.clone(),
        scene,
        actions,
        Provenance::AugmentedReplay,
        variant,
    )
    .ok()?;
    t.success.then_some(t)
}

fn removal_clone(trace: &DemonstrationTrace, rng: &mut ChaCha8Rng, max_removed: usize, variant: u32) -> Option<DemonstrationTrace> {
    let cands = removable(trace);
    if cands.is_empty() || max_removed == 0 {
        return None;
    }
    let k = rng.random_range(1..=max_removed.min(cands.len()));
    let mut scene = trace.initial.clone();
    for &id in cands.choose_multiple(rng, k) {
        scene.remove_object(id).ok()?;
    }
    scene.refresh();
    let t = DemonstrationTrace::record(
        &trace.domain,
        trace.scene_seed,
        &trace.goal_id,
        trace.goal.clone(),
        trace.group.clone(),
        scene,
        trace.actions.clone(),
        Provenance::AugmentedRemoval,
        variant,
    )
    .ok()?;
    t.success.then_some(t)
}

/// Augments successful traces by cross-scene replay and by removing
/// untouched objects. Only successful replays are emitted; each output is
/// validated by simulation. Deterministic in `seed`.
pub fn augment(catalog: &DomainCatalog, traces: &[DemonstrationTrace], seed: u64, config: &AugmentConfig) -> Vec<DemonstrationTrace> {
    let mut out = Vec::new();
    for (i, t) in traces.iter().enumerate().filter(|(_, t)| t.success && !t.is_empty()) {
        for j in 0..config.replay_scenes {
            let scene_seed = derive_seed(seed, "augment-scene", (i as u64) << 16 | j as u64);
            if let Some(a) = replay_on_scene(catalog, t, scene_seed, j) {
                out.push(a);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "augment-removal", i as u64));
        for j in 0..config.removal_clones {
            if let Some(a) = removal_clone(t, &mut rng, config.max_removed, j) {
                out.push(a);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::trace::group_of;
    use crate::oracle::{plan, PlannerConfig};

    fn traces(c: &DomainCatalog) -> Vec<DemonstrationTrace> {
        let mut v = Vec::new();
        for seed in 0..4 {
            let s = sample_scene(c, seed).unwrap();
            let g = instantiate_goal(c.goal("cube-in-box").unwrap(), &s).unwrap();
            let p = plan(&s, &g, &PlannerConfig::default()).unwrap();
            v.push(
                DemonstrationTrace::record("mini-home", seed, "cube-in-box", g, group_of("cube-in-box", seed), s, p, Provenance::Oracle, 0)
                    .unwrap(),
            );
        }
        v
    }

    #[test]
    fn augmented_traces_are_valid_and_keep_groups() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let base = traces(&c);
        let aug = augment(&c, &base, 5, &AugmentConfig::default());
        assert!(!aug.is_empty());
        let groups: BTreeSet<_> = base.iter().map(|t| t.group.clone()).collect();
        for t in &aug {
            assert!(t.success);
            t.validate().unwrap();
            assert!(groups.contains(&t.group));
            assert!(t.provenance.is_augmented());
        }
    }

    #[test]
    fn removal_never_touches_plan_objects() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let base = traces(&c);
        let cfg = AugmentConfig { replay_scenes: 0, removal_clones: 3, max_removed: 5 };
        for t in augment(&c, &base, 1, &cfg) {
            for a in &t.actions {
                assert!(t.initial.objects.contains_key(&a.o1));
                assert!(a.o2.map_or(true, |o| t.initial.objects.contains_key(&o)));
            }
            let src = base.iter().find(|b| b.group == t.group).unwrap();
            let removed = src.initial.objects.len() - t.initial.objects.len();
            assert!((1..=5).contains(&removed));
        }
    }

    #[test]
    fn deterministic() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let base = traces(&c);
        let a: Vec<String> = augment(&c, &base, 3, &AugmentConfig::default()).iter().map(|t| t.to_json_line()).collect();
        let b: Vec<String> = augment(&c, &base, 3, &AugmentConfig::default()).iter().map(|t| t.to_json_line()).collect();
        assert_eq!(a, b);
    }
}
