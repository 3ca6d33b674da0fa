use crate::config::TrainConfig;
use crate::data::InteractionTensor;
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, softmax};

use super::ModelParams;

/// Intermediate values of one attention head, all indexed by behavior.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrace {
    pub query: Vec<Vec<f64>>,
    pub key: Vec<Vec<f64>>,
    pub value: Vec<Vec<f64>>,
    /// Scaled dot products `α[l][l']`.
    pub logits: Vec<Vec<f64>>,
    /// Row-wise softmax of `logits`, `α̂[l][l']`.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryOutput {
    pub z: Vec<Vec<f64>>,
    /// Pre-ReLU memory scores `K Ỹ_l + b`, `[l][m]`.
    pub scores: Vec<Vec<f64>>,
    /// Post-ReLU memory weights `ω`, `[l][m]`.
    pub weights: Vec<Vec<f64>>,
    /// `U_m Ỹ_l`, `[l][m]`.
    pub transformed: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureOutput {
    pub gamma: Vec<f64>,
    /// Input of each layer (`h_{n-1}`).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer (`W_n h_{n-1} + b_n`).
    pub pre: Vec<Vec<f64>>,
}

/// Everything one user's forward pass produced, kept for backpropagation
/// and weight export.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// The user's item lists per behavior.
    pub items: Vec<Vec<usize>>,
    pub x_tilde: Vec<Vec<f64>>,
    /// Empty when the transformer is disabled.
    pub heads: Vec<HeadTrace>,
    pub y: Vec<Vec<f64>>,
    pub y_tilde: Vec<Vec<f64>>,
    /// `None` when the memory stage is disabled.
    pub memory: Option<MemoryOutput>,
    pub z: Vec<Vec<f64>>,
    pub gate_weights: Vec<f64>,
    pub psi: Vec<f64>,
    pub features: FeatureOutput,
}

impl ForwardTrace {
    pub fn gamma(&self) -> &[f64] {
        &self.features.gamma
    }

    /// `α̂` per head, `[h][l][l']`.
    pub fn attention_weights(&self) -> Vec<Vec<Vec<f64>>> {
        self.heads.iter().map(|h| h.weights.clone()).collect()
    }

    /// Post-ReLU memory weights as an `M × L` matrix (`[m][l]`); zeros when
    /// the memory stage is disabled.
    pub fn memory_weights(&self, memories: usize) -> Vec<Vec<f64>> {
        let behaviors = self.x_tilde.len();
        let mut out = vec![vec![0.0; behaviors]; memories];
        if let Some(mem) = &self.memory {
            for (l, w) in mem.weights.iter().enumerate() {
                for (m, &v) in w.iter().enumerate() {
                    out[m][l] = v;
                }
            }
        }
        out
    }
}

/// `X̃_l = Σ_{j} V_j` over the user's items under behavior `l`, as a sparse
/// gather. With `mean` the sum is divided by the event count.
pub fn project_lists(lists: &[Vec<usize>], params: &ModelParams, mean: bool) -> Vec<Vec<f64>> {
    let d = params.dim();
    lists
        .iter()
        .map(|items| {
            let mut acc = vec![0.0; d];
            for &j in items {
                axpy(1.0, params.embed.row(j), &mut acc);
            }
            if mean && !items.is_empty() {
                let inv = 1.0 / items.len() as f64;
                acc.iter_mut().for_each(|v| *v *= inv);
            }
            acc
        })
        .collect()
}

pub fn project_user(
    tensor: &InteractionTensor,
    user: usize,
    params: &ModelParams,
    mean: bool,
) -> Result<Vec<Vec<f64>>> {
    check_user(tensor, user)?;
    Ok(project_lists(tensor.behavior_lists(user), params, mean))
}

/// Multi-head scaled dot-product attention across behavior types. Returns
/// the concatenated head outputs `Y_l` and the per-head trace. With
/// `raw_weights` the values are mixed with the unnormalized logits.
pub fn behavior_attention(
    x_tilde: &[Vec<f64>],
    params: &ModelParams,
    raw_weights: bool,
) -> (Vec<Vec<f64>>, Vec<HeadTrace>) {
    let behaviors = x_tilde.len();
    let heads = params.heads.len();
    let dh = params.dim() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut y = vec![Vec::with_capacity(params.dim()); behaviors];
    let mut traces = Vec::with_capacity(heads);

    for head in &params.heads {
        let query: Vec<Vec<f64>> = x_tilde.iter().map(|x| head.query.mul_vec(x)).collect();
        let key: Vec<Vec<f64>> = x_tilde.iter().map(|x| head.key.mul_vec(x)).collect();
        let value: Vec<Vec<f64>> = x_tilde.iter().map(|x| head.value.mul_vec(x)).collect();
        let logits: Vec<Vec<f64>> = query
            .iter()
            .map(|q| key.iter().map(|k| scale * dot(q, k)).collect())
            .collect();
        let weights: Vec<Vec<f64>> = logits
            .iter()
            .map(|row| softmax(row).expect("at least one behavior"))
            .collect();
        let mix = if raw_weights { &logits } else { &weights };
        for (l, out) in y.iter_mut().enumerate() {
            let mut block = vec![0.0; dh];
            for (lp, v) in value.iter().enumerate() {
                axpy(mix[l][lp], v, &mut block);
            }
            out.extend_from_slice(&block);
        }
        traces.push(HeadTrace {
            query,
            key,
            value,
            logits,
            weights,
        });
    }
    (y, traces)
}

pub fn residual_combine(x_tilde: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x_tilde
        .iter()
        .zip(y)
        .map(|(x, y)| x.iter().zip(y).map(|(a, b)| a + b).collect())
        .collect()
}

/// `ω_l = ReLU(K Ỹ_l + b)`, `Z_l = Σ_m ω_{m,l} U_m Ỹ_l`. The weights are not
/// normalized.
pub fn memory_recalibrate(y_tilde: &[Vec<f64>], params: &ModelParams) -> MemoryOutput {
    let d = params.dim();
    let mut out = MemoryOutput {
        z: Vec::with_capacity(y_tilde.len()),
        scores: Vec::with_capacity(y_tilde.len()),
        weights: Vec::with_capacity(y_tilde.len()),
        transformed: Vec::with_capacity(y_tilde.len()),
    };
    for yt in y_tilde {
        let mut scores = params.mem_key.mul_vec(yt);
        axpy(1.0, &params.mem_bias, &mut scores);
        let weights: Vec<f64> = scores.iter().map(|&s| s.max(0.0)).collect();
        let transformed: Vec<Vec<f64>> = params.memories.iter().map(|u| u.mul_vec(yt)).collect();
        let mut z = vec![0.0; d];
        for (w, t) in weights.iter().zip(&transformed) {
            if *w != 0.0 {
                axpy(*w, t, &mut z);
            }
        }
        out.z.push(z);
        out.scores.push(scores);
        out.weights.push(weights);
        out.transformed.push(transformed);
    }
    out
}

/// `Ψ = Σ_l g_l Z_l` with `g = softmax(w)`, or `g_l = 1/L` under mean pooling.
pub fn aggregate_gate(z: &[Vec<f64>], params: &ModelParams, mean_pool: bool) -> (Vec<f64>, Vec<f64>) {
    let behaviors = z.len();
    let gate = if mean_pool {
        vec![1.0 / behaviors as f64; behaviors]
    } else {
        softmax(&params.gate).expect("at least one behavior")
    };
    let mut psi = vec![0.0; params.dim()];
    for (g, zl) in gate.iter().zip(z) {
        axpy(*g, zl, &mut psi);
    }
    (psi, gate)
}

/// Residual ReLU stack `h_n = ReLU(W_n h_{n-1} + b_n) + h_{n-1}`.
pub fn extract_features(psi: &[f64], params: &ModelParams) -> FeatureOutput {
    let mut h = psi.to_vec();
    let mut inputs = Vec::with_capacity(params.ff_layers.len());
    let mut pre = Vec::with_capacity(params.ff_layers.len());
    for layer in &params.ff_layers {
        let mut a = layer.weight.mul_vec(&h);
        axpy(1.0, &layer.bias, &mut a);
        let next: Vec<f64> = a.iter().zip(&h).map(|(ai, hi)| ai.max(0.0) + hi).collect();
        inputs.push(std::mem::replace(&mut h, next));
        pre.push(a);
    }
    FeatureOutput { gamma: h, inputs, pre }
}

/// Raw preference score `P_j · Γ`.
pub fn score(gamma: &[f64], item: usize, params: &ModelParams) -> Result<f64> {
    if item >= params.num_items() {
        return Err(Error::Dimension(format!(
            "item {item} out of range for {} items",
            params.num_items()
        )));
    }
    if gamma.len() != params.dim() {
        return Err(Error::Dimension(format!(
            "user vector of length {} for hidden dimension {}",
            gamma.len(),
            params.dim()
        )));
    }
    Ok(dot(params.items.row(item), gamma))
}

fn check_user(tensor: &InteractionTensor, user: usize) -> Result<()> {
    if user >= tensor.num_users() {
        return Err(Error::Dimension(format!(
            "user {user} out of range for {} users",
            tensor.num_users()
        )));
    }
    Ok(())
}

pub fn forward(
    tensor: &InteractionTensor,
    user: usize,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<ForwardTrace> {
    check_user(tensor, user)?;
    if tensor.num_items() != params.num_items() || tensor.num_behaviors() != params.num_behaviors() {
        return Err(Error::Dimension(format!(
            "data has J={}, L={} but parameters have J={}, L={}",
            tensor.num_items(),
            tensor.num_behaviors(),
            params.num_items(),
            params.num_behaviors()
        )));
    }
    Ok(forward_lists(tensor.behavior_lists(user), params, config))
}

/// Forward pass over explicit per-behavior item lists. Item indices must be
/// in range and there must be one list per behavior type.
pub fn forward_lists(lists: &[Vec<usize>], params: &ModelParams, config: &TrainConfig) -> ForwardTrace {
    debug_assert_eq!(lists.len(), params.num_behaviors());
    let x_tilde = project_lists(lists, params, config.mean_project);
    let (y, heads) = if config.ablation.disable_transformer {
        (vec![vec![0.0; params.dim()]; x_tilde.len()], Vec::new())
    } else {
        behavior_attention(&x_tilde, params, config.raw_attn_weights)
    };
    let y_tilde = if config.ablation.disable_transformer {
        x_tilde.clone()
    } else {
        residual_combine(&x_tilde, &y)
    };
    let (memory, z) = if config.ablation.disable_memory {
        (None, y_tilde.clone())
    } else {
        let mem = memory_recalibrate(&y_tilde, params);
        let z = mem.z.clone();
        (Some(mem), z)
    };
    let (psi, gate_weights) = aggregate_gate(&z, params, config.ablation.mean_pool_gate);
    let features = extract_features(&psi, params);
    ForwardTrace {
        items: lists.to_vec(),
        x_tilde,
        heads,
        y,
        y_tilde,
        memory,
        z,
        gate_weights,
        psi,
        features,
    }
}
