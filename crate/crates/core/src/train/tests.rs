use std::sync::OnceLock;

use tooluse_tensor::grad_check;

use super::*;
use crate::actions::{Interaction, SymbolicAction};
use crate::domains::DomainCatalog;
use crate::oracle::{build_corpus, DemoConfig, DemonstrationTrace, Provenance};
use crate::policy::tests::tiny;
use crate::worldsim::{Constraint, GoalSpec, RelationKind, Term, WorldState};

fn fixture() -> &'static (DomainCatalog, Corpus) {
    static CELL: OnceLock<(DomainCatalog, Corpus)> = OnceLock::new();
    CELL.get_or_init(|| {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let cfg = DemoConfig { scenes: 5, goals: vec!["cube-in-box".into(), "illuminate".into()], variants: 1, ..Default::default() };
        let (corpus, _) = build_corpus(&c, &cfg).unwrap();
        (c, corpus)
    })
}

fn quick() -> TrainConfig {
    TrainConfig { max_epochs: 2, patience: 5, ..Default::default() }
}

/// Robot, cube, box, tray and stool on the floor, with a three-step trace.
fn five_object_example(policy: &Policy, c: &DomainCatalog) -> Example {
    let mut s = WorldState::with_robot(c.table(), c.geometry, "robot", [0.5, 0.5]).unwrap();
    let cube = s.add_object("cube", [2.0, 1.0, 0.15]).unwrap();
    let bx = s.add_object("box", [4.0, 3.0, 0.2]).unwrap();
    s.add_object("tray", [1.0, 4.0, 0.05]).unwrap();
    s.add_object("stool", [5.0, 1.0, 0.25]).unwrap();
    s.refresh();
    let goal = GoalSpec {
        constraints: vec![Constraint::Relation { relation: RelationKind::Inside, subject: Term::Id(cube), object: Term::Id(bx) }],
        text: "put the cube in the box".into(),
    };
    let actions = vec![
        SymbolicAction::unary(Interaction::MoveTo, cube),
        SymbolicAction::unary(Interaction::Pick, cube),
        SymbolicAction::unary(Interaction::MoveTo, bx),
    ];
    let t = DemonstrationTrace::record("mini-home", 0, "cube-in-box", goal, "g".into(), s, actions, Provenance::Oracle, 0).unwrap();
    assert_eq!(t.initial.objects.len(), 5);
    Example::new(policy, &t, 0, 2.0)
}

#[test]
fn full_two_phase_loss_matches_finite_differences() {
    let (c, _) = fixture();
    let policy = Policy::new(c, tiny());
    let ex = five_object_example(&policy, c);
    assert!(ex.steps[0].tool_targets.iter().any(|&y| y == 0.0));
    let f = |tape: &mut Tape, pv: &[Var]| example_loss(&policy, tape, pv, &ex);
    let report = grad_check(f, policy.params.tensors(), 1e-5).unwrap();
    assert_eq!(report.coordinates, policy.params.size());
    assert!(report.max_rel_error < 1e-3, "{report:?} at {}", policy.params.names()[report.worst.0]);
}

#[test]
fn overfits_a_single_trace() {
    let (c, corpus) = fixture();
    let mut policy = Policy::new(c, tiny());
    let i = corpus.indices(Split::Train)[0];
    let ex = Example::new(&policy, &corpus.traces[i], i, 1.0);
    let steps: Vec<usize> = (0..ex.len()).collect();
    let mut adam = Adam::new(AdamConfig { lr: 1e-2, ..Default::default() }, policy.params.tensors());
    let loss = |p: &Policy| step_gradients(p, Phase::Full, &ex, &steps).unwrap().unwrap();
    let initial = loss(&policy).0;
    let mut last = initial;
    for _ in 0..200 {
        let (value, g) = loss(&policy);
        last = value;
        let view: Vec<Option<&Tensor>> = (0..policy.params.len()).map(|k| g.get(tooluse_tensor::ParamId(k))).collect();
        let mut params = policy.params.tensors().to_vec();
        adam.step(&mut params, &view).unwrap();
        policy.params.tensors_mut().clone_from_slice(&params);
    }
    let last = loss(&policy).0.min(last);
    assert!(last < 0.01 * initial, "initial {initial}, final {last}");
}

#[test]
fn pretraining_leaves_the_action_heads_alone_and_hands_over_exactly() {
    let (c, corpus) = fixture();
    let mut policy = Policy::new(c, tiny());
    let before = policy.params.clone();
    let cfg = quick();
    let data = TrainData::new(&policy, corpus, &cfg).unwrap();
    let s1 = train_phase(&mut policy, &data, Phase::Tool, &cfg, &mut ()).unwrap();
    assert!(s1.epochs_run <= 2);
    for (name, t) in policy.params.names().iter().zip(policy.params.tensors()) {
        if !trainable(Phase::Tool, name) {
            assert_eq!(Some(t), before.get(name), "{name}");
        }
    }
    let after_one = policy.hash();
    let s2 = train_phase(&mut policy, &data, Phase::Full, &cfg, &mut ()).unwrap();
    assert_eq!(s2.initial_hash, after_one);
    assert!(s2.best_score >= s2.initial_score);
    assert!(s1.best_score >= s1.initial_score);
}

#[test]
fn training_is_bit_reproducible_and_logs_every_epoch() {
    let (c, corpus) = fixture();
    let run = || {
        let mut p = Policy::new(c, tiny());
        let mut log: Vec<MetricRecord> = Vec::new();
        let s = train(&mut p, corpus, &quick(), &mut log).unwrap();
        (p.hash(), log, s)
    };
    let (h1, log1, s1) = run();
    let (h2, log2, _) = run();
    assert_eq!(h1, h2);
    assert_eq!(log1, log2);
    assert_eq!(s1.len(), 2);
    for s in &s1 {
        let epochs = log1.iter().filter(|r| r.phase == s.phase && r.split == Split::Train).count();
        assert_eq!(epochs, s.epochs_run);
        assert!(s.epochs_run <= 2);
    }
    assert!(log1.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn non_finite_parameters_abort_with_a_diagnostic() {
    let (c, corpus) = fixture();
    let mut policy = Policy::new(c, tiny());
    let cfg = quick();
    let data = TrainData::new(&policy, corpus, &cfg).unwrap();
    let k = policy.params.id("act.out.b").unwrap().0;
    policy.params.tensors_mut()[k].data_mut()[0] = f64::NAN;
    match train_phase(&mut policy, &data, Phase::Full, &cfg, &mut ()) {
        Err(TrainError::NonFiniteLoss { phase: Phase::Full, epoch: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert_eq!(TrainConfig::default().max_epochs, 200);
    assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { max_epochs: 0, ..Default::default() }.validate().is_err());
}
