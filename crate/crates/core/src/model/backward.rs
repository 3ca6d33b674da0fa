use std::collections::BTreeMap;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, softmax_backward, DenseMatrix};
use crate::params::{add_row, Parameters, SlotGrad};

use super::{ForwardTrace, ModelParams, ModelShape};

/// Loss gradient arriving at the model output: `∂L/∂Γ` and `∂L/∂P_j` for
/// every scored item.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Upstream {
    pub gamma: Vec<f64>,
    pub items: BTreeMap<usize, Vec<f64>>,
}

/// Gradients for every [`ModelParams`] array. The projection and the item
/// table are row-sparse: only items the computation touched appear.
#[derive(Clone, Debug, PartialEq)]
pub struct MatnGrads {
    pub embed: BTreeMap<usize, Vec<f64>>,
    pub items: BTreeMap<usize, Vec<f64>>,
    /// Dense gradients of the remaining arrays. Its `embed` and `items`
    /// tables are empty placeholders.
    pub dense: ModelParams,
}

impl MatnGrads {
    pub fn zeros(shape: ModelShape) -> Self {
        MatnGrads {
            embed: BTreeMap::new(),
            items: BTreeMap::new(),
            dense: ModelParams::zeros(ModelShape { items: 0, ..shape }),
        }
    }

    pub fn accumulate(&mut self, other: &MatnGrads) {
        for (&j, g) in &other.embed {
            add_row(&mut self.embed, j, 1.0, g);
        }
        for (&j, g) in &other.items {
            add_row(&mut self.items, j, 1.0, g);
        }
        let mine = self.dense.slots_mut();
        for (dst, src) in mine.into_iter().zip(other.dense.slots()) {
            dst.data.iter_mut().zip(src.data).for_each(|(a, b)| *a += b);
        }
    }

    /// Gradients in [`Parameters::slots`] order of the matching model.
    pub fn into_slots(self) -> Vec<SlotGrad> {
        let d = self.dense.dim();
        let slots = self.dense.slots();
        let last = slots.len() - 1;
        let mut embed = Some(self.embed);
        let mut items = Some(self.items);
        slots
            .iter()
            .enumerate()
            .map(|(k, s)| {
                if k == 0 {
                    SlotGrad::Rows {
                        row_len: d,
                        rows: embed.take().expect("embed once"),
                    }
                } else if k == last {
                    SlotGrad::Rows {
                        row_len: d,
                        rows: items.take().expect("items once"),
                    }
                } else {
                    SlotGrad::Dense(s.data.to_vec())
                }
            })
            .collect()
    }
}

pub fn backward(
    trace: &ForwardTrace,
    upstream: &Upstream,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<MatnGrads> {
    let mut grads = MatnGrads::zeros(params.shape());
    backward_into(trace, upstream, params, config, &mut grads)?;
    Ok(grads)
}

/// Reverse pass through one user's trace, accumulating into `grads`.
pub fn backward_into(
    trace: &ForwardTrace,
    upstream: &Upstream,
    params: &ModelParams,
    config: &TrainConfig,
    grads: &mut MatnGrads,
) -> Result<()> {
    let d = params.dim();
    if upstream.gamma.len() != d {
        return Err(Error::Dimension(format!(
            "upstream gradient of length {} for hidden dimension {d}",
            upstream.gamma.len()
        )));
    }
    if trace.x_tilde.len() != params.num_behaviors() || trace.gamma().len() != d {
        return Err(Error::Dimension("trace does not match the parameters".into()));
    }
    for (&j, g) in &upstream.items {
        if j >= params.num_items() || g.len() != d {
            return Err(Error::Dimension(format!("upstream item gradient for item {j}")));
        }
        add_row(&mut grads.items, j, 1.0, g);
    }

    // Feature extraction.
    let mut dh = upstream.gamma.clone();
    for n in (0..params.ff_layers.len()).rev() {
        let pre = &trace.features.pre[n];
        let input = &trace.features.inputs[n];
        let da: Vec<f64> = dh
            .iter()
            .zip(pre)
            .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
            .collect();
        let layer = &mut grads.dense.ff_layers[n];
        layer.weight.add_outer(1.0, &da, input);
        axpy(1.0, &da, &mut layer.bias);
        let back = params.ff_layers[n].weight.mul_vec_t(&da);
        axpy(1.0, &back, &mut dh);
    }
    let dpsi = dh;

    // Gate.
    let dz: Vec<Vec<f64>> = trace
        .gate_weights
        .iter()
        .map(|g| dpsi.iter().map(|v| g * v).collect())
        .collect();
    if !config.ablation.mean_pool_gate {
        let dg: Vec<f64> = trace.z.iter().map(|zl| dot(zl, &dpsi)).collect();
        let dw = softmax_backward(&trace.gate_weights, &dg);
        axpy(1.0, &dw, &mut grads.dense.gate);
    }

    // Memory recalibration.
    let dy_tilde: Vec<Vec<f64>> = match &trace.memory {
        Some(mem) => dz
            .iter()
            .enumerate()
            .map(|(l, dzl)| {
                let yt = &trace.y_tilde[l];
                let mut dyt = vec![0.0; d];
                let mut dscore = vec![0.0; params.memories.len()];
                for (m, u) in params.memories.iter().enumerate() {
                    let w = mem.weights[l][m];
                    if mem.scores[l][m] > 0.0 {
                        dscore[m] = dot(&mem.transformed[l][m], dzl);
                    }
                    if w != 0.0 {
                        grads.dense.memories[m].add_outer(w, dzl, yt);
                        axpy(w, &u.mul_vec_t(dzl), &mut dyt);
                    }
                }
                grads.dense.mem_key.add_outer(1.0, &dscore, yt);
                axpy(1.0, &dscore, &mut grads.dense.mem_bias);
                axpy(1.0, &params.mem_key.mul_vec_t(&dscore), &mut dyt);
                dyt
            })
            .collect(),
        None => dz,
    };

    // Residual plus attention; the residual path sends dỸ straight to dX̃.
    let mut dx = dy_tilde.clone();
    if !config.ablation.disable_transformer {
        let dh_size = d / params.heads.len();
        let scale = 1.0 / (dh_size as f64).sqrt();
        for (h, head) in trace.heads.iter().enumerate() {
            let off = h * dh_size;
            let block = |l: usize| &dy_tilde[l][off..off + dh_size];
            let mix = if config.raw_attn_weights {
                &head.logits
            } else {
                &head.weights
            };
            let behaviors = head.value.len();
            let mut dvalue = vec![vec![0.0; dh_size]; behaviors];
            let mut dlogits = Vec::with_capacity(behaviors);
            for l in 0..behaviors {
                let dmix: Vec<f64> = head.value.iter().map(|v| dot(block(l), v)).collect();
                for (lp, dv) in dvalue.iter_mut().enumerate() {
                    axpy(mix[l][lp], block(l), dv);
                }
                dlogits.push(if config.raw_attn_weights {
                    dmix
                } else {
                    softmax_backward(&head.weights[l], &dmix)
                });
            }
            let mut dquery = vec![vec![0.0; dh_size]; behaviors];
            let mut dkey = vec![vec![0.0; dh_size]; behaviors];
            for l in 0..behaviors {
                for lp in 0..behaviors {
                    let c = scale * dlogits[l][lp];
                    axpy(c, &head.key[lp], &mut dquery[l]);
                    axpy(c, &head.query[l], &mut dkey[lp]);
                }
            }
            let weights = &params.heads[h];
            let g = &mut grads.dense.heads[h];
            for l in 0..behaviors {
                let x = &trace.x_tilde[l];
                accumulate_linear(&mut g.query, &weights.query, &dquery[l], x, &mut dx[l]);
                accumulate_linear(&mut g.key, &weights.key, &dkey[l], x, &mut dx[l]);
                accumulate_linear(&mut g.value, &weights.value, &dvalue[l], x, &mut dx[l]);
            }
        }
    }

    // Projection gather.
    for (l, items) in trace.items.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let coef = if config.mean_project {
            1.0 / items.len() as f64
        } else {
            1.0
        };
        for &j in items {
            add_row(&mut grads.embed, j, coef, &dx[l]);
        }
    }
    Ok(())
}

/// For `out = A x`: `dA += dout xᵀ`, `dx += Aᵀ dout`.
fn accumulate_linear(grad_a: &mut DenseMatrix, a: &DenseMatrix, dout: &[f64], x: &[f64], dx: &mut [f64]) {
    grad_a.add_outer(1.0, dout, x);
    axpy(1.0, &a.mul_vec_t(dout), dx);
}
