use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::oracle::{groups, Corpus, Split};

/// Group-level split: a `test_fraction` of the (goal, scene) groups of the
/// non-augmented traces is held out for testing, and a `validation_fraction`
/// of the remaining groups for validation. Augmented traces follow their
/// source group, except that those of test groups are excluded.
pub fn make_splits(corpus: &Corpus, seed: u64, test_fraction: f64, validation_fraction: f64) -> Result<Vec<Split>, TrainError> {
    let base: Vec<_> = corpus.traces.iter().filter(|t| !t.provenance.is_augmented()).cloned().collect();
    let mut gs = groups(&base);
    gs.sort();
    if gs.len() < 3 {
        return Err(TrainError::TooFewTraces { needed: 3, found: gs.len() });
    }
    gs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((gs.len() as f64 * test_fraction).round() as usize).clamp(1, gs.len() - 2);
    let n_train = gs.len() - n_test;
    let n_val = ((n_train as f64 * validation_fraction).round() as usize).clamp(1, n_train - 1);
    let mut assign: BTreeMap<&str, Split> = BTreeMap::new();
    for (i, g) in gs.iter().enumerate() {
        let s = if i < n_test {
            Split::Test
        } else if i < n_test + n_val {
            Split::Validation
        } else {
            Split::Train
        };
        assign.insert(g, s);
    }
    Ok(corpus
        .traces
        .iter()
        .map(|t| match (assign.get(t.group.as_str()).copied(), t.provenance.is_augmented()) {
            (Some(Split::Test), true) => Split::Excluded,
            (Some(s), _) => s,
            (None, _) => Split::Train,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{sample_scene, DomainCatalog};
    use crate::oracle::{group_of, DemonstrationTrace, Provenance};
    use crate::worldsim::GoalSpec;

    fn corpus(groups: u64) -> Corpus {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let s = sample_scene(&c, 0).unwrap();
        let goal = GoalSpec { constraints: vec![], text: String::new() };
        let mut traces = Vec::new();
        for g in 0..groups {
            for p in [Provenance::Oracle, Provenance::AugmentedRemoval] {
                traces.push(DemonstrationTrace::record("mini-home", g, "x", goal.clone(), group_of("x", g), s.clone(), vec![], p, 0).unwrap());
            }
        }
        Corpus::new("mini-home", &c.hash(), traces)
    }

    #[test]
    fn hundred_groups_split_75_25() {
        let c = corpus(100);
        let s = make_splits(&c, 1, 0.25, 0.10).unwrap();
        let oracle = |split| c.traces.iter().zip(&s).filter(|(t, x)| !t.provenance.is_augmented() && **x == split).count();
        assert_eq!(oracle(Split::Test), 25);
        assert_eq!(oracle(Split::Validation) + oracle(Split::Train), 75);
        assert_eq!(oracle(Split::Validation), 8);
    }

    #[test]
    fn groups_do_not_leak_and_augmented_stay_out_of_test() {
        let c = corpus(40);
        let s = make_splits(&c, 7, 0.25, 0.10).unwrap();
        let mut by_group: BTreeMap<&str, Vec<Split>> = BTreeMap::new();
        for (t, x) in c.traces.iter().zip(&s) {
            by_group.entry(&t.group).or_default().push(*x);
            if t.provenance.is_augmented() {
                assert_ne!(*x, Split::Test);
            }
        }
        for v in by_group.values() {
            let is_test = v.contains(&Split::Test);
            assert!(v.iter().all(|x| if is_test { matches!(x, Split::Test | Split::Excluded) } else { *x == v[0] }));
        }
        assert_eq!(s, make_splits(&c, 7, 0.25, 0.10).unwrap());
    }

    #[test]
    fn too_few_groups() {
        assert!(matches!(make_splits(&corpus(2), 0, 0.25, 0.1), Err(TrainError::TooFewTraces { found: 2, .. })));
    }
}
