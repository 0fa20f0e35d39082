use tooluse_tensor::{Result, Tape, Tensor, Var};

use super::features::{GoalFeatures, Scene};
use super::params::{GRU_GATES, LSTM_GATES};
use super::Policy;
use crate::actions::{Interaction, SymbolicAction};
use crate::worldsim::{GoalSpec, RelationKind, WorldState};

/// How far a forward pass runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Encoders, attention and the tool head.
    Tool,
    /// Everything, including the action decoder.
    Full,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `n x h` graph embeddings `r^n`.
    pub graph: Var,
    /// `n x h` metric encodings `m^d`.
    pub metric: Var,
    /// `n x 2h` fused object encodings.
    pub objects: Var,
    /// `1 x h` history encoding.
    pub history: Var,
    /// `n x 1` attention weights.
    pub attention: Var,
    /// `1 x 2h` attended scene encoding.
    pub scene: Var,
    /// `1 x (2h + q + h)` context `[scene; g_rel; history]`.
    pub context: Var,
    /// `T x 1` tool likelihoods per tool class, when the tool head is active.
    pub tool_classes: Option<Var>,
    /// `n x 1` tool likelihoods per object; exactly zero for non-tools.
    pub tool_objects: Var,
    /// `1 x |I|` interaction distribution.
    pub interaction_probs: Option<Var>,
    /// Interaction fed to the object heads.
    pub interaction: Option<Interaction>,
    /// `n x 1` first-object likelihoods.
    pub first: Option<Var>,
    /// `n x 1` second-object likelihoods.
    pub second: Option<Var>,
}

/// Plain values of every intermediate encoding, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Encodings {
    pub graph: Tensor,
    pub metric: Tensor,
    pub objects: Tensor,
    pub history: Vec<f64>,
    pub goal_relations: Vec<f64>,
    pub goal_objects: Vec<f64>,
    pub attention: Vec<f64>,
    pub scene: Vec<f64>,
    pub tool_scores: Vec<f64>,
    pub interaction_probs: Vec<f64>,
    pub interaction: Interaction,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Result of [`Policy::act`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: SymbolicAction,
    pub interaction_probs: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub tool_scores: Vec<f64>,
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Most likely interaction; ties go to the lexicographically first name.
pub fn argmax_interaction(probs: &[f64]) -> Interaction {
    let order = Interaction::by_name();
    let mut best = order[0];
    for i in order {
        if probs[i.index()] > probs[best.index()] {
            best = i;
        }
    }
    best
}

fn one_hot(i: Interaction) -> Tensor {
    let mut v = vec![0.0; Interaction::ALL.len()];
    v[i.index()] = 1.0;
    Tensor::row(v)
}

impl Policy {
    fn var(&self, pv: &[Var], name: &str) -> Var {
        pv[self.params.id(name).unwrap_or_else(|| panic!("parameter `{name}`")).0]
    }

    fn has(&self, name: &str) -> bool {
        self.params.id(name).is_some()
    }

    fn linear(&self, tape: &mut Tape, pv: &[Var], x: Var, prefix: &str) -> Result<Var> {
        let y = tape.matmul(x, self.var(pv, &format!("{prefix}.w")))?;
        tape.add(y, self.var(pv, &format!("{prefix}.b")))
    }

    /// Head over `shared` (one row) and optional per-object `rows`. Hidden
    /// layers use tanh or PReLU; the output layer is linear.
    fn head(&self, tape: &mut Tape, pv: &[Var], prefix: &str, shared: Var, rows: Option<Var>, tanh: bool) -> Result<Var> {
        let slope = self.config.prelu_slope;
        let s = tape.matmul(shared, self.var(pv, &format!("{prefix}.0.shared")))?;
        let s = tape.add(s, self.var(pv, &format!("{prefix}.0.b")))?;
        let mut x = match rows {
            Some(r) => {
                let r = tape.matmul(r, self.var(pv, &format!("{prefix}.0.rows")))?;
                tape.add(r, s)?
            }
            None => s,
        };
        let mut layer = 0;
        loop {
            x = if tanh { tape.tanh(x) } else { tape.prelu(x, slope) };
            layer += 1;
            let name = format!("{prefix}.{layer}");
            if !self.has(&format!("{name}.w")) {
                break;
            }
            x = self.linear(tape, pv, x, &name)?;
        }
        self.linear(tape, pv, x, &format!("{prefix}.out"))
    }

    fn gru(&self, tape: &mut Tape, pv: &[Var], layer: usize, r: Var, x: Var) -> Result<Var> {
        let mut gates = Vec::with_capacity(3);
        let mut reset_r = None;
        for g in GRU_GATES {
            let p = format!("ggcn.{layer}.gru");
            let xw = tape.matmul(x, self.var(pv, &format!("{p}.w{g}")))?;
            let hin = if g == "h" { reset_r.expect("reset gate first") } else { r };
            let hu = tape.matmul(hin, self.var(pv, &format!("{p}.u{g}")))?;
            let s = tape.add(xw, hu)?;
            let s = tape.add(s, self.var(pv, &format!("{p}.b{g}")))?;
            let a = if g == "h" { tape.tanh(s) } else { tape.sigmoid(s) };
            if g == "r" {
                reset_r = Some(tape.mul(a, r)?);
            }
            gates.push(a);
        }
        let (z, cand) = (gates[0], gates[2]);
        let diff = tape.sub(cand, r)?;
        let step = tape.mul(z, diff)?;
        tape.add(r, step)
    }

    /// Node initialization followed by gated message passing.
    fn encode_graph(&self, tape: &mut Tape, pv: &[Var], scene: &Scene) -> Result<Var> {
        let l = tape.constant(scene.states.clone());
        let e = tape.constant(scene.embeddings.clone());
        let le = tape.concat_cols(&[l, e])?;
        let r0 = self.linear(tape, pv, le, "node")?;
        let mut r = tape.tanh(r0);
        if !self.config.ablations.use_ggcn {
            return Ok(r);
        }
        let adj: Vec<Var> = scene.adjacency.iter().map(|a| tape.constant(a.clone())).collect();
        for layer in 0..self.config.ggcn_layers {
            for k in 0..self.config.conv_steps {
                let mut parts = Vec::with_capacity(RelationKind::ALL.len());
                for &a in &adj {
                    parts.push(tape.matmul(a, r)?);
                }
                let stacked = tape.concat_cols(&parts)?;
                let x = tape.matmul(stacked, self.var(pv, &format!("ggcn.{layer}.{k}.msg")))?;
                r = self.gru(tape, pv, layer, r, x)?;
            }
        }
        Ok(r)
    }

    fn encode_metric(&self, tape: &mut Tape, pv: &[Var], scene: &Scene) -> Result<Var> {
        if !self.config.ablations.use_metric {
            return Ok(tape.constant(Tensor::zeros(scene.len(), self.config.hidden)));
        }
        let mut m = tape.constant(scene.metric.clone());
        for k in 0..self.config.fcn_depth.max(1) {
            let y = self.linear(tape, pv, m, &format!("metric.{k}"))?;
            m = tape.prelu(y, self.config.prelu_slope);
        }
        Ok(m)
    }

    /// LSTM fold over action encodings; the empty history is the zero vector.
    pub(crate) fn encode_history(&self, tape: &mut Tape, pv: &[Var], history: &[Vec<f64>]) -> Result<Var> {
        let h = self.config.hidden;
        let zero = tape.constant(Tensor::zeros(1, h));
        if !self.config.ablations.use_history || history.is_empty() {
            return Ok(zero);
        }
        let cap = self.config.history_cap;
        let start = if cap > 0 { history.len().saturating_sub(cap) } else { 0 };
        let (mut hid, mut cell) = (zero, zero);
        for enc in &history[start..] {
            let x = tape.constant(Tensor::row(enc.clone()));
            let xh = tape.concat_cols(&[x, hid])?;
            let mut g = Vec::with_capacity(4);
            for name in LSTM_GATES {
                let y = self.linear(tape, pv, xh, &format!("lstm.{name}"))?;
                g.push(if name == "g" { tape.tanh(y) } else { tape.sigmoid(y) });
            }
            let (i, f, o, cand) = (g[0], g[1], g[2], g[3]);
            let keep = tape.mul(f, cell)?;
            let write = tape.mul(i, cand)?;
            cell = tape.add(keep, write)?;
            let tc = tape.tanh(cell);
            hid = tape.mul(o, tc)?;
        }
        Ok(hid)
    }

    /// One forward pass. `teacher` fixes the interaction fed to the object
    /// heads; otherwise the argmax of the interaction head is used.
    pub fn forward(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        scene: &Scene,
        goal: &GoalFeatures,
        history: &[Vec<f64>],
        teacher: Option<Interaction>,
        stage: Stage,
    ) -> Result<Forward> {
        let n = scene.len();
        let ab = self.config.ablations;
        let graph = self.encode_graph(tape, pv, scene)?;
        let metric = self.encode_metric(tape, pv, scene)?;
        let objects = tape.concat_cols(&[graph, metric])?;
        let history_v = self.encode_history(tape, pv, history)?;
        let g_rel = tape.constant(Tensor::row(goal.relations.clone()));
        let g_obj = tape.constant(Tensor::row(goal.objects.clone()));

        let attention = if ab.use_attention {
            let shared = tape.concat_cols(&[g_obj, history_v])?;
            let logits = self.head(tape, pv, "attn", shared, Some(objects), true)?;
            tape.softmax(logits)
        } else {
            tape.constant(Tensor::filled(n, 1, 1.0 / n as f64))
        };
        let at = tape.transpose(attention);
        let scene_v = tape.matmul(at, objects)?;
        let context = tape.concat_cols(&[scene_v, g_rel, history_v])?;

        let (tool_classes, tool_objects) = if ab.use_tool_head && !scene.tool_tokens.is_empty() {
            let pt = if ab.use_factored {
                let et = tape.constant(scene.tool_embeddings.clone());
                let y = self.head(tape, pv, "tool", context, Some(et), false)?;
                tape.sigmoid(y)
            } else {
                let y = self.head(tape, pv, "tool", context, None, false)?;
                let y = tape.sigmoid(y);
                let yt = tape.transpose(y);
                let sel = tape.constant(scene.tool_vocab_select.clone());
                tape.matmul(sel, yt)?
            };
            let sel = tape.constant(scene.tool_select.clone());
            (Some(pt), tape.matmul(sel, pt)?)
        } else {
            (None, tape.constant(Tensor::zeros(n, 1)))
        };

        let mut out = Forward {
            graph,
            metric,
            objects,
            history: history_v,
            attention,
            scene: scene_v,
            context,
            tool_classes,
            tool_objects,
            interaction_probs: None,
            interaction: None,
            first: None,
            second: None,
        };
        if stage == Stage::Tool {
            return Ok(out);
        }

        let logits = self.head(tape, pv, "act", context, None, false)?;
        let probs = tape.softmax(logits);
        let interaction = teacher.unwrap_or_else(|| argmax_interaction(tape.value(probs).data()));
        let onehot = tape.constant(one_hot(interaction));
        let shared = tape.concat_cols(&[context, onehot])?;
        let (first, second) = if ab.use_factored {
            let e = tape.constant(scene.embeddings.clone());
            let rows1 = tape.concat_cols(&[e, tool_objects])?;
            let y1 = self.head(tape, pv, "obj1", shared, Some(rows1), false)?;
            let first = tape.sigmoid(y1);
            let rows2 = tape.concat_cols(&[e, tool_objects, first])?;
            let y2 = self.head(tape, pv, "obj2", shared, Some(rows2), false)?;
            (first, tape.sigmoid(y2))
        } else {
            let sel = tape.constant(scene.vocab_select.clone());
            let pick = |tape: &mut Tape, prefix: &str| -> Result<Var> {
                let y = self.head(tape, pv, prefix, shared, None, false)?;
                let y = tape.sigmoid(y);
                let yt = tape.transpose(y);
                tape.matmul(sel, yt)
            };
            let first = pick(tape, "obj1")?;
            (first, pick(tape, "obj2")?)
        };
        out.interaction_probs = Some(probs);
        out.interaction = Some(interaction);
        out.first = Some(first);
        out.second = Some(second);
        Ok(out)
    }

    /// Inference pass with the parameters recorded as constants.
    fn infer(&self, state: &WorldState, goal: &GoalSpec, history: &[Vec<f64>]) -> (Tape, Scene, GoalFeatures, Forward) {
        let scene = self.scene(state);
        let gf = self.goal_features(state, goal);
        let mut tape = Tape::new();
        let pv: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let f = self.forward(&mut tape, &pv, &scene, &gf, history, None, Stage::Full).expect("shapes are consistent by construction");
        (tape, scene, gf, f)
    }

    pub fn encode(&self, state: &WorldState, goal: &GoalSpec, history: &[Vec<f64>]) -> Encodings {
        let (tape, _, gf, f) = self.infer(state, goal, history);
        let vals = |v: Var| tape.value(v).data().to_vec();
        Encodings {
            graph: tape.value(f.graph).clone(),
            metric: tape.value(f.metric).clone(),
            objects: tape.value(f.objects).clone(),
            history: vals(f.history),
            goal_relations: gf.relations,
            goal_objects: gf.objects,
            attention: vals(f.attention),
            scene: vals(f.scene),
            tool_scores: vals(f.tool_objects),
            interaction_probs: vals(f.interaction_probs.expect("full pass")),
            interaction: f.interaction.expect("full pass"),
            first: vals(f.first.expect("full pass")),
            second: vals(f.second.expect("full pass")),
        }
    }

    /// `a_t = f(s_t, g, eta_t)`: the decoded action with its scores. The
    /// second object is dropped for one-argument interactions.
    pub fn act(&self, state: &WorldState, goal: &GoalSpec, history: &[Vec<f64>]) -> Decision {
        let (tape, scene, _, f) = self.infer(state, goal, history);
        let first = tape.value(f.first.expect("full pass")).data().to_vec();
        let second = tape.value(f.second.expect("full pass")).data().to_vec();
        let interaction = f.interaction.expect("full pass");
        let o1 = scene.ids[argmax(&first)];
        let o2 = (interaction.arity() == 2).then(|| scene.ids[argmax(&second)]);
        Decision {
            action: SymbolicAction { interaction, o1, o2 },
            interaction_probs: tape.value(f.interaction_probs.expect("full pass")).data().to_vec(),
            first,
            second,
            tool_scores: tape.value(f.tool_objects).data().to_vec(),
        }
    }

    /// Up to `k` candidate actions: the `k` most likely interactions, each with
    /// its best objects. The score is the product of the head likelihoods.
    pub fn suggest(&self, state: &WorldState, goal: &GoalSpec, history: &[Vec<f64>], k: usize) -> Vec<(SymbolicAction, f64)> {
        let scene = self.scene(state);
        let gf = self.goal_features(state, goal);
        let mut tape = Tape::new();
        let pv: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let Ok(base) = self.forward(&mut tape, &pv, &scene, &gf, history, None, Stage::Full) else { return Vec::new() };
        let probs = tape.value(base.interaction_probs.expect("full pass")).data().to_vec();
        let mut order = Interaction::by_name();
        order.sort_by(|a, b| probs[b.index()].total_cmp(&probs[a.index()]));
        let mut out = Vec::new();
        for i in order.into_iter().take(k) {
            let mut t = Tape::new();
            let pv: Vec<Var> = self.params.tensors().iter().map(|x| t.constant(x.clone())).collect();
            let Ok(f) = self.forward(&mut t, &pv, &scene, &gf, history, Some(i), Stage::Full) else { continue };
            let first = t.value(f.first.expect("full pass")).data().to_vec();
            let second = t.value(f.second.expect("full pass")).data().to_vec();
            let r1 = argmax(&first);
            let mut score = probs[i.index()] * first[r1];
            let o2 = if i.arity() == 2 {
                let r2 = argmax(&second);
                score *= second[r2];
                Some(scene.ids[r2])
            } else {
                None
            };
            out.push((SymbolicAction { interaction: i, o1: scene.ids[r1], o2 }, score));
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }
}
