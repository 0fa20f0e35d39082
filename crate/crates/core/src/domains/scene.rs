use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DomainCatalog, DomainError, GoalTemplate, Prior, Spot};
use crate::actions::free_slot;
use crate::worldsim::{Constraint, GoalSpec, Term, WorldState};

fn weighted_pick<'a, R: Rng>(rng: &mut R, options: &[&'a Prior]) -> Option<&'a Prior> {
    let total: f64 = options.iter().map(|p| p.weight()).sum();
    if options.is_empty() || total <= 0.0 {
        return None;
    }
    let mut x = rng.random::<f64>() * total;
    for p in options {
        x -= p.weight();
        if x < 0.0 {
            return Some(p);
        }
    }
    options.last().copied()
}

/// Spots still free for placement while a scene is being built.
pub(crate) struct Spots {
    pub anchors: Vec<[f64; 2]>,
    pub walls: Vec<[f64; 2]>,
    pub floor: Vec<[f64; 2]>,
}

impl Spots {
    pub(crate) fn shuffled<R: Rng>(catalog: &DomainCatalog, rng: &mut R) -> Self {
        let mut s = Spots {
            anchors: catalog.layout.anchors.clone(),
            walls: catalog.layout.walls.clone(),
            floor: catalog.layout.floor_spots.clone(),
        };
        s.anchors.shuffle(rng);
        s.walls.shuffle(rng);
        s.floor.shuffle(rng);
        s
    }

    /// Floor spots not already occupied by an object of `state`.
    pub(crate) fn free_floor(catalog: &DomainCatalog, state: &WorldState) -> Vec<[f64; 2]> {
        catalog
            .layout
            .floor_spots
            .iter()
            .copied()
            .filter(|p| {
                !state.objects.values().any(|o| {
                    o.id != state.robot && (o.position[0] - p[0]).abs() < 0.5 && (o.position[1] - p[1]).abs() < 0.5
                })
            })
            .collect()
    }
}

/// Draws a resting position for one instance of `token` from its priors.
/// Returns `None` when no prior can be satisfied.
pub(crate) fn choose_position<R: Rng>(
    catalog: &DomainCatalog,
    state: &WorldState,
    token: &str,
    spots: &mut Spots,
    rng: &mut R,
) -> Result<Option<[f64; 3]>, DomainError> {
    let extent = catalog.class(token).ok_or_else(|| DomainError::MissingClass(token.into()))?.extent;
    let priors = catalog.placement_priors.get(token).map(Vec::as_slice).unwrap_or(&[]);
    let feasible: Vec<&Prior> = priors
        .iter()
        .filter(|p| match p {
            Prior::On { on, .. } => !state.ids_of_class(on).is_empty(),
            Prior::In { inside, .. } => !state.ids_of_class(inside).is_empty(),
            Prior::At { at: Spot::Anchor, .. } => !spots.anchors.is_empty(),
            Prior::At { at: Spot::Wall, .. } => !spots.walls.is_empty(),
            Prior::At { at: Spot::Floor, .. } => !spots.floor.is_empty(),
        })
        .collect();
    let Some(prior) = weighted_pick(rng, &feasible) else {
        return Ok(None);
    };
    Ok(Some(match prior {
        Prior::On { on: support, .. } | Prior::In { inside: support, .. } => {
            let ids = state.ids_of_class(support);
            let sid = ids[rng.random_range(0..ids.len())];
            free_slot(state, sid, matches!(prior, Prior::In { .. }), extent, &[])
        }
        Prior::At { at: Spot::Anchor, .. } => {
            let p = spots.anchors.pop().expect("checked non-empty");
            let j = catalog.layout.jitter;
            let (dx, dy) = if j > 0.0 { (rng.random_range(-j..=j), rng.random_range(-j..=j)) } else { (0.0, 0.0) };
            [p[0] + dx, p[1] + dy, extent[2] / 2.0]
        }
        Prior::At { at: Spot::Wall, .. } => {
            let p = spots.walls.pop().expect("checked non-empty");
            let hs = &catalog.layout.wall_heights;
            let z = if hs.is_empty() { 1.2 } else { hs[rng.random_range(0..hs.len())] };
            [p[0], p[1], z]
        }
        Prior::At { at: Spot::Floor, .. } => {
            let p = spots.floor.pop().expect("checked non-empty");
            [p[0], p[1], extent[2] / 2.0]
        }
    }))
}

/// Random scene drawn from the catalog's placement priors; deterministic in
/// `seed`. Fixed furniture is placed first, then the other classes in
/// catalog order.
pub fn sample_scene(catalog: &DomainCatalog, seed: u64) -> Result<WorldState, DomainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = WorldState::with_robot(catalog.table(), catalog.geometry, "robot", catalog.layout.robot_start)?;
    let mut spots = Spots::shuffled(catalog, &mut rng);
    let fixed = |t: &str| {
        catalog
            .placement_priors
            .get(t)
            .is_some_and(|ps| ps.iter().any(|p| matches!(p, Prior::At { at: Spot::Anchor | Spot::Wall, .. })))
    };
    let placeable: Vec<&str> = catalog
        .classes
        .iter()
        .map(|c| c.token.as_str())
        .filter(|t| *t != "robot" && !catalog.held_out.iter().any(|h| h == t) && catalog.placement_priors.contains_key(*t))
        .collect();
    let ordered = placeable.iter().filter(|t| fixed(t)).chain(placeable.iter().filter(|t| !fixed(t)));
    for token in ordered {
        let [lo, hi] = catalog.count_bounds(token);
        let n = rng.random_range(lo..=hi);
        for _ in 0..n {
            if let Some(p) = choose_position(catalog, &state, token, &mut spots, &mut rng)? {
                state.add_object(token, p)?;
                state.refresh();
            }
        }
    }
    state.refresh();
    Ok(state)
}

fn bind(term: &Term, state: &WorldState) -> Result<Term, DomainError> {
    match term {
        Term::Id(id) => {
            state.object(*id)?;
            Ok(Term::Id(*id))
        }
        Term::Class(c) => state
            .ids_of_class(c)
            .first()
            .map(|&id| Term::Id(id))
            .ok_or_else(|| DomainError::MissingClass(c.clone())),
    }
}

/// Binds every class slot to the lowest-id instance of that class.
pub fn instantiate_goal(template: &GoalTemplate, state: &WorldState) -> Result<GoalSpec, DomainError> {
    let constraints = template
        .constraints
        .iter()
        .map(|c| {
            Ok(match c {
                Constraint::Relation { relation, subject, object } => Constraint::Relation {
                    relation: *relation,
                    subject: bind(subject, state)?,
                    object: bind(object, state)?,
                },
                Constraint::State { subject, predicate, value } => Constraint::State {
                    subject: bind(subject, state)?,
                    predicate: predicate.clone(),
                    value: *value,
                },
                Constraint::Absent { class } => Constraint::Absent { class: class.clone() },
            })
        })
        .collect::<Result<Vec<_>, DomainError>>()?;
    Ok(GoalSpec { constraints, text: template.text.clone() })
}
