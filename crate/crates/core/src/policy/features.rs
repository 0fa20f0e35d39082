use std::collections::BTreeMap;

use tooluse_tensor::Tensor;

use super::Policy;
use crate::actions::{Interaction, SymbolicAction};
use crate::worldsim::{Affordance, Constraint, GoalSpec, ObjectId, RelationKind, Term, WorldState};

/// Per-object flags appended to the predicate and affordance bits: is the
/// robot, is held, is near the robot, is enclosed.
pub const FLAG_COUNT: usize = 4;
/// `[x, y, z, sin yaw, cos yaw, extent x, extent y, extent z]`.
pub const METRIC_DIM: usize = 8;
/// Divisor for heights and extents in the metric input.
pub const HEIGHT_SCALE: f64 = 3.0;

/// Length of the discrete state vector `l_o` for a catalog with
/// `predicates` state predicates.
pub fn state_dim(predicates: usize) -> usize {
    predicates + Affordance::ALL.len() + FLAG_COUNT
}

/// Length of the action encoding `[one-hot interaction; e(o1); e(o2)]`.
pub fn action_dim(embed_dim: usize) -> usize {
    Interaction::ALL.len() + 2 * embed_dim
}

/// Network inputs derived from one world state. Rows follow object id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub ids: Vec<ObjectId>,
    pub classes: Vec<String>,
    /// `n x p` discrete state vectors.
    pub states: Tensor,
    /// `n x q` class embeddings.
    pub embeddings: Tensor,
    /// `n x 8` normalized pose and size.
    pub metric: Tensor,
    /// One symmetric `n x n` 0/1 matrix per relation kind.
    pub adjacency: Vec<Tensor>,
    /// Distinct tool classes present in the scene, sorted.
    pub tool_tokens: Vec<String>,
    /// `T x q` embeddings of `tool_tokens`.
    pub tool_embeddings: Tensor,
    /// `n x T` 0/1 map from objects to their tool class.
    pub tool_select: Tensor,
    /// `n x V` 0/1 map from objects to the fixed class vocabulary.
    pub vocab_select: Tensor,
    /// `T x V` 0/1 map from tool classes to the fixed class vocabulary.
    pub tool_vocab_select: Tensor,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_of(&self, id: ObjectId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn is_tool_row(&self, row: usize) -> bool {
        self.tool_select.row_slice(row).iter().any(|&x| x != 0.0)
    }
}

/// Mean embeddings of the relation tokens and of the object tokens a goal
/// mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalFeatures {
    pub relations: Vec<f64>,
    pub objects: Vec<f64>,
}

fn mean_rows(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    if !rows.is_empty() {
        m.iter_mut().for_each(|x| *x /= rows.len() as f64);
    }
    m
}

impl Policy {
    pub fn embedding(&self, token: &str) -> Vec<f64> {
        self.embed.lookup(token).into_owned()
    }

    pub fn scene(&self, state: &WorldState) -> Scene {
        let q = self.embed.dim();
        let p = state_dim(self.predicates.len());
        let ids: Vec<ObjectId> = state.objects.keys().copied().collect();
        let n = ids.len();
        let row: BTreeMap<ObjectId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let held = state.held();
        let [rx, ry] = self.room;

        let mut states = Vec::with_capacity(n * p);
        let mut embeddings = Vec::with_capacity(n * q);
        let mut metric = Vec::with_capacity(n * METRIC_DIM);
        let mut classes = Vec::with_capacity(n);
        for &id in &ids {
            let o = &state.objects[&id];
            for name in &self.predicates {
                states.push(if state.predicate(id, name) { 1.0 } else { 0.0 });
            }
            for a in Affordance::ALL {
                states.push(if o.affordances.has(a) { 1.0 } else { 0.0 });
            }
            let flags = [id == state.robot, held == Some(id), id != state.robot && state.is_near(id), state.is_enclosed(id)];
            states.extend(flags.iter().map(|&f| if f { 1.0 } else { 0.0 }));
            embeddings.extend_from_slice(&self.embed.lookup(&o.class));
            let [x, y, z] = o.position;
            let [ex, ey, ez] = o.extent;
            metric.extend_from_slice(&[
                x / rx,
                y / ry,
                z / HEIGHT_SCALE,
                o.yaw.sin(),
                o.yaw.cos(),
                ex / HEIGHT_SCALE,
                ey / HEIGHT_SCALE,
                ez / HEIGHT_SCALE,
            ]);
            classes.push(o.class.clone());
        }

        let mut adjacency: Vec<Tensor> = RelationKind::ALL.iter().map(|_| Tensor::zeros(n, n)).collect();
        for e in &state.edges {
            if let (Some(&a), Some(&b)) = (row.get(&e.subject), row.get(&e.object)) {
                let m = adjacency[e.kind.index()].data_mut();
                m[a * n + b] = 1.0;
                m[b * n + a] = 1.0;
            }
        }

        let mut tool_tokens: Vec<String> = classes.iter().filter(|c| self.tools.contains(*c)).cloned().collect();
        tool_tokens.sort();
        tool_tokens.dedup();
        let t = tool_tokens.len();
        let mut tool_embeddings = Vec::with_capacity(t * q);
        for tok in &tool_tokens {
            tool_embeddings.extend_from_slice(&self.embed.lookup(tok));
        }
        let mut tool_select = Tensor::zeros(n, t);
        let v = self.vocabulary.len();
        let mut vocab_select = Tensor::zeros(n, v);
        for (i, c) in classes.iter().enumerate() {
            if let Ok(j) = tool_tokens.binary_search(c) {
                tool_select.data_mut()[i * t + j] = 1.0;
            }
            if let Ok(j) = self.vocabulary.binary_search(c) {
                vocab_select.data_mut()[i * v + j] = 1.0;
            }
        }
        let mut tool_vocab_select = Tensor::zeros(t, v);
        for (i, c) in tool_tokens.iter().enumerate() {
            if let Ok(j) = self.vocabulary.binary_search(c) {
                tool_vocab_select.data_mut()[i * v + j] = 1.0;
            }
        }

        Scene {
            ids,
            classes,
            states: Tensor::matrix(n, p, states).expect("n x p"),
            embeddings: Tensor::matrix(n, q, embeddings).expect("n x q"),
            metric: Tensor::matrix(n, METRIC_DIM, metric).expect("n x 8"),
            adjacency,
            tool_tokens,
            tool_embeddings: Tensor::matrix(t, q, tool_embeddings).expect("T x q"),
            tool_select,
            vocab_select,
            tool_vocab_select,
        }
    }

    /// Goal encodings. Pure state goals have no relation tokens and get a zero
    /// relation vector.
    pub fn goal_features(&self, state: &WorldState, goal: &GoalSpec) -> GoalFeatures {
        let q = self.embed.dim();
        let mut rel = Vec::new();
        let mut obj = Vec::new();
        let class_of = |t: &Term| t.class_token(state).map(str::to_string);
        for c in &goal.constraints {
            match c {
                Constraint::Relation { relation, subject, object } => {
                    rel.push(self.embedding(relation.name()));
                    for t in [subject, object] {
                        if let Some(tok) = class_of(t) {
                            obj.push(self.embedding(&tok));
                        }
                    }
                }
                Constraint::State { subject, .. } => {
                    if let Some(tok) = class_of(subject) {
                        obj.push(self.embedding(&tok));
                    }
                }
                Constraint::Absent { class } => obj.push(self.embedding(class)),
            }
        }
        GoalFeatures { relations: mean_rows(&rel, q), objects: mean_rows(&obj, q) }
    }

    /// `[one-hot I; e(o1); e(o2)]` for an action taken in `state`; a missing or
    /// unknown second object leaves a zero block.
    pub fn action_encoding(&self, state: &WorldState, action: &SymbolicAction) -> Vec<f64> {
        let q = self.embed.dim();
        let mut v = vec![0.0; action_dim(q)];
        v[action.interaction.index()] = 1.0;
        let off = Interaction::ALL.len();
        for (slot, id) in [Some(action.o1), action.o2].into_iter().enumerate() {
            if let Some(o) = id.and_then(|id| state.objects.get(&id)) {
                v[off + slot * q..off + (slot + 1) * q].copy_from_slice(&self.embed.lookup(&o.class));
            }
        }
        v
    }

    /// Encodings of every action of a trace, each taken in its own state.
    pub fn history_encodings(&self, steps: &[(WorldState, SymbolicAction)]) -> Vec<Vec<f64>> {
        steps.iter().map(|(s, a)| self.action_encoding(s, a)).collect()
    }
}
