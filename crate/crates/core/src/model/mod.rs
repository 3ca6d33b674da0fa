//! Memory-augmented transformer network: parameters, forward pass and the
//! hand-derived backward pass.
//!
//! Per user `i` the network computes
//!
//! ```text
//! X̃_l = Σ_{j ∈ items(i, l)} V_j                       projection
//! Ỹ_l = X̃_l + ‖_h Σ_l' softmax_l'(q_l·k_l' / √(d/H)) v_l'   behavior self-attention
//! Z_l = Σ_m ReLU(K Ỹ_l + b)_m · U_m Ỹ_l                memory recalibration
//! Ψ   = Σ_l softmax(w)_l · Z_l                          gated aggregation
//! h_n = ReLU(W_n h_{n-1} + b_n) + h_{n-1},  Γ = h_N    feature extraction
//! score(j) = P_j · Γ
//! ```

mod backward;
mod forward;

pub use backward::{backward, backward_into, MatnGrads, Upstream};
pub use forward::{
    aggregate_gate, behavior_attention, extract_features, forward, forward_lists, memory_recalibrate, project_lists,
    project_user, residual_combine, score, FeatureOutput, ForwardTrace, HeadTrace, MemoryOutput,
};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::numerics::{glorot_init, DenseMatrix, Rng};
use crate::params::{Parameters, Slot, SlotMut};

/// Query/key/value projections of one attention head, each `(d/H) × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    pub query: DenseMatrix,
    pub key: DenseMatrix,
    pub value: DenseMatrix,
}

/// One residual feed-forward layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

/// Every learnable array of the model.
///
/// The projection `V` is stored item-major (`J × d`, row `j` is column `j`
/// of the `d × J` projection) so that gathers and sparse updates touch
/// contiguous rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embed: DenseMatrix,
    pub heads: Vec<AttentionHead>,
    pub memories: Vec<DenseMatrix>,
    /// `M × d` key of the memory attention.
    pub mem_key: DenseMatrix,
    pub mem_bias: Vec<f64>,
    /// One logit per behavior type.
    pub gate: Vec<f64>,
    pub ff_layers: Vec<FeedForward>,
    /// `J × d` item table `P`.
    pub items: DenseMatrix,
}

/// Sizes that fix every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub dim: usize,
    pub heads: usize,
    pub memories: usize,
    pub ff_depth: usize,
    pub behaviors: usize,
    pub items: usize,
}

impl ModelShape {
    pub fn new(config: &TrainConfig, behaviors: usize, items: usize) -> Self {
        ModelShape {
            dim: config.dim,
            heads: config.heads,
            memories: config.memories,
            ff_depth: config.ff_depth,
            behaviors,
            items,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

impl ModelParams {
    /// Glorot-uniform matrices; biases and gate logits start at zero.
    pub fn init(config: &TrainConfig, behaviors: usize, items: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if behaviors == 0 || items == 0 {
            return Err(Error::Dimension(format!(
                "model needs at least one behavior and one item (got L={behaviors}, J={items})"
            )));
        }
        let d = config.dim;
        let dh = config.head_dim();
        let embed = glorot_init(items, d, rng);
        let heads = (0..config.heads)
            .map(|_| AttentionHead {
                query: glorot_init(dh, d, rng),
                key: glorot_init(dh, d, rng),
                value: glorot_init(dh, d, rng),
            })
            .collect();
        let memories = (0..config.memories).map(|_| glorot_init(d, d, rng)).collect();
        let mem_key = glorot_init(config.memories, d, rng);
        let ff_layers = (0..config.ff_depth)
            .map(|_| FeedForward {
                weight: glorot_init(d, d, rng),
                bias: vec![0.0; d],
            })
            .collect();
        let items_table = glorot_init(items, d, rng);
        Ok(ModelParams {
            embed,
            heads,
            memories,
            mem_key,
            mem_bias: vec![0.0; config.memories],
            gate: vec![0.0; behaviors],
            ff_layers,
            items: items_table,
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(shape: ModelShape) -> Self {
        let d = shape.dim;
        let dh = shape.head_dim();
        ModelParams {
            embed: DenseMatrix::zeros(shape.items, d),
            heads: (0..shape.heads)
                .map(|_| AttentionHead {
                    query: DenseMatrix::zeros(dh, d),
                    key: DenseMatrix::zeros(dh, d),
                    value: DenseMatrix::zeros(dh, d),
                })
                .collect(),
            memories: (0..shape.memories).map(|_| DenseMatrix::zeros(d, d)).collect(),
            mem_key: DenseMatrix::zeros(shape.memories, d),
            mem_bias: vec![0.0; shape.memories],
            gate: vec![0.0; shape.behaviors],
            ff_layers: (0..shape.ff_depth)
                .map(|_| FeedForward {
                    weight: DenseMatrix::zeros(d, d),
                    bias: vec![0.0; d],
                })
                .collect(),
            items: DenseMatrix::zeros(shape.items, d),
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            dim: self.embed.cols(),
            heads: self.heads.len(),
            memories: self.memories.len(),
            ff_depth: self.ff_layers.len(),
            behaviors: self.gate.len(),
            items: self.items.rows(),
        }
    }

    pub fn dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    pub fn num_behaviors(&self) -> usize {
        self.gate.len()
    }

    /// Checks that the arrays agree with `config` and the data sizes.
    pub fn check_shape(&self, config: &TrainConfig, behaviors: usize, items: usize) -> Result<()> {
        let expect = ModelShape::new(config, behaviors, items);
        if self.shape() != expect {
            return Err(Error::Dimension(format!(
                "parameters have shape {:?}, expected {:?}",
                self.shape(),
                expect
            )));
        }
        Ok(())
    }
}

fn mat_slot<'a>(name: String, m: &'a DenseMatrix) -> Slot<'a> {
    Slot::new(name, vec![m.rows(), m.cols()], m.data())
}

fn mat_slot_mut<'a>(name: String, m: &'a mut DenseMatrix) -> SlotMut<'a> {
    let dims = vec![m.rows(), m.cols()];
    SlotMut::new(name, dims, m.data_mut())
}

/// Slot names in canonical order.
pub(crate) fn slot_names(shape: &ModelShape) -> Vec<String> {
    let mut names = vec!["embed".to_string()];
    for h in 0..shape.heads {
        names.push(format!("head{h}.query"));
        names.push(format!("head{h}.key"));
        names.push(format!("head{h}.value"));
    }
    for m in 0..shape.memories {
        names.push(format!("memory{m}"));
    }
    names.push("mem_key".into());
    names.push("mem_bias".into());
    names.push("gate".into());
    for n in 0..shape.ff_depth {
        names.push(format!("ff{n}.weight"));
        names.push(format!("ff{n}.bias"));
    }
    names.push("items".into());
    names
}

impl Parameters for ModelParams {
    fn slots(&self) -> Vec<Slot<'_>> {
        let mut names = slot_names(&self.shape()).into_iter();
        let mut next = || names.next().expect("slot name");
        let mut out = vec![mat_slot(next(), &self.embed)];
        for h in &self.heads {
            out.push(mat_slot(next(), &h.query));
            out.push(mat_slot(next(), &h.key));
            out.push(mat_slot(next(), &h.value));
        }
        for m in &self.memories {
            out.push(mat_slot(next(), m));
        }
        out.push(mat_slot(next(), &self.mem_key));
        out.push(Slot::new(next(), vec![self.mem_bias.len()], &self.mem_bias));
        out.push(Slot::new(next(), vec![self.gate.len()], &self.gate));
        for layer in &self.ff_layers {
            out.push(mat_slot(next(), &layer.weight));
            out.push(Slot::new(next(), vec![layer.bias.len()], &layer.bias));
        }
        out.push(mat_slot(next(), &self.items));
        out
    }

    fn slots_mut(&mut self) -> Vec<SlotMut<'_>> {
        let mut names = slot_names(&self.shape()).into_iter();
        let mut next = || names.next().expect("slot name");
        let mut out = vec![mat_slot_mut(next(), &mut self.embed)];
        for h in &mut self.heads {
            out.push(mat_slot_mut(next(), &mut h.query));
            out.push(mat_slot_mut(next(), &mut h.key));
            out.push(mat_slot_mut(next(), &mut h.value));
        }
        for m in &mut self.memories {
            out.push(mat_slot_mut(next(), m));
        }
        out.push(mat_slot_mut(next(), &mut self.mem_key));
        let n = self.mem_bias.len();
        out.push(SlotMut::new(next(), vec![n], &mut self.mem_bias));
        let n = self.gate.len();
        out.push(SlotMut::new(next(), vec![n], &mut self.gate));
        for layer in &mut self.ff_layers {
            out.push(mat_slot_mut(next(), &mut layer.weight));
            let n = layer.bias.len();
            out.push(SlotMut::new(next(), vec![n], &mut layer.bias));
        }
        out.push(mat_slot_mut(next(), &mut self.items));
        out
    }
}
