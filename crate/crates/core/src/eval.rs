//! Leave-one-out ranking evaluation: each held-out item is ranked against its
//! sampled negatives and scored with HR@k and NDCG@k.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{EvalSplit, InteractionTensor};
use crate::error::{Error, Result};
use crate::model::{forward_lists, ModelParams};
use crate::numerics::dot;
use crate::parallel::Workers;

pub const DEFAULT_CUTOFFS: [usize; 6] = [1, 3, 5, 7, 9, 10];

/// Anything that can score candidate items for a user of the training tensor.
pub trait Scorer: Sync {
    fn score_items(&self, tensor: &InteractionTensor, user: usize, items: &[usize]) -> Result<Vec<f64>>;
}

/// A trained model together with the config it was trained under.
pub struct MatnScorer<'a> {
    pub params: &'a ModelParams,
    pub config: &'a TrainConfig,
}

impl Scorer for MatnScorer<'_> {
    fn score_items(&self, tensor: &InteractionTensor, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        if let Some(&bad) = items.iter().find(|&&j| j >= self.params.num_items()) {
            return Err(Error::Dimension(format!("item {bad} out of range")));
        }
        let trace = forward_lists(tensor.behavior_lists(user), self.params, self.config);
        let gamma = trace.gamma();
        Ok(items.iter().map(|&j| dot(self.params.items.row(j), gamma)).collect())
    }
}

/// 1-based rank of `scores[positive]`; every other candidate scoring at least
/// as high counts against it.
pub fn rank_position(scores: &[f64], positive: usize) -> Result<usize> {
    if positive >= scores.len() {
        return Err(Error::Dimension(format!(
            "positive index {positive} among {} candidates",
            scores.len()
        )));
    }
    if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("candidate score {k}")));
    }
    let target = scores[positive];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(k, &s)| k != positive && s >= target)
        .count();
    Ok(1 + ahead)
}

/// `(hr@k, ndcg@k)` per cutoff for a single held-out item at `rank`.
pub fn user_metrics(rank: usize, cutoffs: &[usize]) -> Vec<(f64, f64)> {
    cutoffs
        .iter()
        .map(|&k| {
            if rank >= 1 && rank <= k {
                (1.0, 1.0 / ((rank + 1) as f64).log2())
            } else {
                (0.0, 0.0)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub cutoffs: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users_evaluated: usize,
}

impl RankingMetrics {
    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.hr[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.ndcg[i])
    }

    /// CSV `k,hr,ndcg`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,hr,ndcg")?;
        for ((k, hr), ndcg) in self.cutoffs.iter().zip(&self.hr).zip(&self.ndcg) {
            writeln!(out, "{k},{hr},{ndcg}")?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// Rank of each evaluated user's held-out item, in user order.
pub fn user_ranks<S: Scorer>(
    scorer: &S,
    train: &InteractionTensor,
    split: &EvalSplit,
    workers: &Workers,
) -> Result<Vec<(usize, usize)>> {
    if split.held_out.len() != train.num_users() || split.negatives.len() != train.num_users() {
        return Err(Error::Consistency(format!(
            "split covers {} users but the tensor has {}",
            split.held_out.len(),
            train.num_users()
        )));
    }
    let users: Vec<usize> = split.evaluated_users().collect();
    let ranks = workers.map(&users, |&u| -> Result<(usize, usize)> {
        let mut candidates = Vec::with_capacity(1 + split.negatives[u].len());
        candidates.push(split.held_out[u].expect("evaluated user"));
        candidates.extend_from_slice(&split.negatives[u]);
        let scores = scorer.score_items(train, u, &candidates)?;
        Ok((u, rank_position(&scores, 0)?))
    });
    ranks.into_iter().collect()
}

pub fn evaluate<S: Scorer>(
    scorer: &S,
    train: &InteractionTensor,
    split: &EvalSplit,
    cutoffs: &[usize],
    workers: &Workers,
) -> Result<RankingMetrics> {
    let ranks = user_ranks(scorer, train, split, workers)?;
    Ok(aggregate(&ranks, cutoffs))
}

/// Arithmetic mean of per-user metrics, accumulated in user order.
pub fn aggregate(ranks: &[(usize, usize)], cutoffs: &[usize]) -> RankingMetrics {
    let mut hr = vec![0.0; cutoffs.len()];
    let mut ndcg = vec![0.0; cutoffs.len()];
    for &(_, rank) in ranks {
        for (i, (h, n)) in user_metrics(rank, cutoffs).into_iter().enumerate() {
            hr[i] += h;
            ndcg[i] += n;
        }
    }
    let n = ranks.len();
    if n > 0 {
        hr.iter_mut().for_each(|v| *v /= n as f64);
        ndcg.iter_mut().for_each(|v| *v /= n as f64);
    }
    RankingMetrics {
        cutoffs: cutoffs.to_vec(),
        hr,
        ndcg,
        users_evaluated: n,
    }
}
