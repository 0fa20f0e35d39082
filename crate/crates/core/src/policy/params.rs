use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tooluse_tensor::{ParamId, Tape, Tensor, Var};

use super::features::{action_dim, METRIC_DIM};
use super::PolicyConfig;
use crate::actions::Interaction;
use crate::worldsim::RelationKind;

/// Named parameter tensors in creation order. `ParamId(i)` is the i-th entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

/// Serialized tensor: name, shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Input widths the parameter shapes depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Discrete state vector length `p`.
    pub state: usize,
    /// Embedding dimension `q`.
    pub embed: usize,
    /// Fixed class vocabulary size, used by the non-factored heads.
    pub vocab: usize,
}

struct Builder<'a> {
    params: PolicyParameters,
    rng: ChaCha8Rng,
    config: &'a PolicyConfig,
}

impl Builder<'_> {
    fn add(&mut self, name: String, t: Tensor) {
        self.params.index.insert(name.clone(), self.params.names.len());
        self.params.names.push(name);
        self.params.tensors.push(t);
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize) {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::matrix(rows, cols, data).expect("rows x cols"));
    }

    fn bias(&mut self, name: String, cols: usize, value: f64) {
        self.add(name, Tensor::filled(1, cols, value));
    }

    /// Head whose first layer is split into a shared block (one row, added to
    /// every object) and a per-object block.
    fn head(&mut self, prefix: &str, shared: usize, rows: usize, out: usize) {
        let h = self.config.hidden;
        self.weight(format!("{prefix}.0.shared"), shared, h);
        if rows > 0 {
            self.weight(format!("{prefix}.0.rows"), rows, h);
        }
        self.bias(format!("{prefix}.0.b"), h, 0.0);
        for i in 1..self.config.head_layers.max(1) {
            self.weight(format!("{prefix}.{i}.w"), h, h);
            self.bias(format!("{prefix}.{i}.b"), h, 0.0);
        }
        self.weight(format!("{prefix}.out.w"), h, out);
        self.bias(format!("{prefix}.out.b"), out, 0.0);
    }
}

pub(crate) const GRU_GATES: [&str; 3] = ["z", "r", "h"];
pub(crate) const LSTM_GATES: [&str; 4] = ["i", "f", "o", "g"];

impl PolicyParameters {
    /// Fresh parameters: Glorot-uniform weights, zero biases, LSTM forget
    /// bias 1.
    pub fn init(config: &PolicyConfig, dims: Dims, seed: u64) -> Self {
        let h = config.hidden;
        let q = dims.embed;
        let ni = Interaction::ALL.len();
        let rels = RelationKind::ALL.len();
        let mut b = Builder {
            params: PolicyParameters { names: Vec::new(), tensors: Vec::new(), index: BTreeMap::new() },
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
        };
        b.weight("node.w".into(), dims.state + q, h);
        b.bias("node.b".into(), h, 0.0);
        for l in 0..config.ggcn_layers {
            for k in 0..config.conv_steps {
                b.weight(format!("ggcn.{l}.{k}.msg"), rels * h, h);
            }
            for g in GRU_GATES {
                b.weight(format!("ggcn.{l}.gru.w{g}"), h, h);
                b.weight(format!("ggcn.{l}.gru.u{g}"), h, h);
                b.bias(format!("ggcn.{l}.gru.b{g}"), h, 0.0);
            }
        }
        for k in 0..config.fcn_depth.max(1) {
            b.weight(format!("metric.{k}.w"), if k == 0 { METRIC_DIM } else { h }, h);
            b.bias(format!("metric.{k}.b"), h, 0.0);
        }
        let a = action_dim(q);
        for g in LSTM_GATES {
            b.weight(format!("lstm.{g}.w"), a + h, h);
            b.bias(format!("lstm.{g}.b"), h, if g == "f" { 1.0 } else { 0.0 });
        }
        // Attention: shared block is [g_obj; eta], rows are the object encodings.
        b.head("attn", q + h, 2 * h, 1);
        let ctx = 2 * h + q + h;
        let v = dims.vocab;
        if config.ablations.use_factored {
            b.head("tool", ctx, q, 1);
            b.head("obj1", ctx + ni, q + 1, 1);
            b.head("obj2", ctx + ni, q + 2, 1);
        } else {
            b.head("tool", ctx, 0, v);
            b.head("obj1", ctx + ni, 0, v);
            b.head("obj2", ctx + ni, 0, v);
        }
        b.head("act", ctx, 0, ni);
        b.params
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    /// Records every tensor on `tape` as a trainable leaf, in id order.
    pub fn record(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().enumerate().map(|(i, t)| tape.param(ParamId(i), t)).collect()
    }

    /// Records the tensors with `names` as trainable and the rest as
    /// constants.
    pub fn record_only(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Vec<Var> {
        self.tensors
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (t, n))| if trainable(n) { tape.param(ParamId(i), t) } else { tape.constant(t.clone()) })
            .collect()
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| NamedTensor { name: n.clone(), shape: t.shape().to_vec(), data: t.data().to_vec() })
            .collect()
    }

    /// Rebuilds parameters from named tensors; names and shapes must match
    /// `template` exactly.
    pub fn from_named(template: &PolicyParameters, named: Vec<NamedTensor>) -> Result<Self, String> {
        if named.len() != template.len() {
            return Err(format!("expected {} tensors, found {}", template.len(), named.len()));
        }
        let mut out = template.clone();
        for (i, nt) in named.into_iter().enumerate() {
            if nt.name != template.names[i] {
                return Err(format!("tensor {i}: expected `{}`, found `{}`", template.names[i], nt.name));
            }
            if nt.shape != template.tensors[i].shape() {
                return Err(format!("tensor `{}`: shape {:?} does not match {:?}", nt.name, nt.shape, template.tensors[i].shape()));
            }
            out.tensors[i] = Tensor::new(nt.shape, nt.data).map_err(|e| e.to_string())?;
        }
        Ok(out)
    }

    /// Copies every tensor whose name passes `filter` from `other`.
    pub fn copy_from(&mut self, other: &PolicyParameters, filter: impl Fn(&str) -> bool) {
        for (i, n) in self.names.iter().enumerate() {
            if filter(n) {
                if let Some(t) = other.get(n) {
                    self.tensors[i] = t.clone();
                }
            }
        }
    }
}
