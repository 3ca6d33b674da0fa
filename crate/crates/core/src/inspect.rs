//! Top-k recommendation and per-user weight export.

use std::io::Write;

use crate::config::TrainConfig;
use crate::data::InteractionTensor;
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::model::{forward_lists, ModelParams};

/// Top `k` items for `user` by descending score (ties by item index),
/// skipping the user's training target items. Returns fewer than `k` items
/// when the catalogue runs out.
pub fn recommend<S: Scorer>(scorer: &S, train: &InteractionTensor, user: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    if user >= train.num_users() {
        return Err(Error::Dimension(format!("user {user} out of range")));
    }
    let seen = train.target_items(user);
    let candidates: Vec<usize> = (0..train.num_items())
        .filter(|j| seen.binary_search(j).is_err())
        .collect();
    let scores = scorer.score_items(train, user, &candidates)?;
    let mut ranked: Vec<(usize, f64)> = candidates.into_iter().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Learned weights for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserWeights {
    pub user: String,
    /// `[h][l][l']` attention; empty when the transformer is disabled.
    pub attention: Vec<Vec<Vec<f64>>>,
    /// `[m][l]` post-ReLU memory weights.
    pub memory: Vec<Vec<f64>>,
    /// Gate weight per behavior.
    pub gate: Vec<f64>,
}

pub fn user_weights(
    train: &InteractionTensor,
    user: usize,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<UserWeights> {
    if user >= train.num_users() {
        return Err(Error::Dimension(format!("user {user} out of range")));
    }
    let trace = forward_lists(train.behavior_lists(user), params, config);
    Ok(UserWeights {
        user: train.user_ids()[user].clone(),
        attention: trace.attention_weights(),
        memory: trace.memory_weights(params.memories.len()),
        gate: trace.gate_weights.clone(),
    })
}

/// CSV with header `user,block,row,<behavior…>`. Rows are `attn_h<h>` per
/// query behavior, `memory` per memory slot, and one `gate` row.
pub fn write_weights_csv<W: Write>(mut out: W, behaviors: &[String], users: &[UserWeights]) -> std::io::Result<()> {
    writeln!(out, "user,block,row,{}", behaviors.join(","))?;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    for w in users {
        for (h, head) in w.attention.iter().enumerate() {
            for (l, row) in head.iter().enumerate() {
                writeln!(out, "{},attn_h{h},{},{}", w.user, behaviors[l], join(row))?;
            }
        }
        for (m, row) in w.memory.iter().enumerate() {
            writeln!(out, "{},memory,m{m},{}", w.user, join(row))?;
        }
        writeln!(out, "{},gate,g,{}", w.user, join(&w.gate))?;
    }
    Ok(())
}
