//! Pairwise training loop: positive/negative sampling, the hinge objective
//! with L2 regularization, and Adam with per-epoch learning-rate decay.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::{NegativeRule, TrainConfig};
use crate::data::InteractionTensor;
use crate::error::{Error, Result};
use crate::model::{backward_into, forward_lists, MatnGrads, ModelParams, Upstream};
use crate::numerics::{axpy, dot, Rng};
use crate::optim::AdamState;
use crate::parallel::Workers;
use crate::params::Parameters;

/// Positive and negative items drawn for one user in one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledPairs {
    pub user: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Items a user's negatives must avoid under `rule`.
pub fn excluded_items(tensor: &InteractionTensor, user: usize, rule: NegativeRule) -> Vec<usize> {
    match rule {
        NegativeRule::TargetOnly => tensor.target_items(user).to_vec(),
        NegativeRule::AnyBehavior => tensor.interacted_any(user),
    }
}

/// Draws `s` positives from the user's target items (with replacement only
/// when there are fewer than `s`) and `s` negatives uniformly from the items
/// allowed by `rule`. Returns `None` when the user has no target items or no
/// allowed negatives.
pub fn sample_pairs(
    tensor: &InteractionTensor,
    user: usize,
    s: usize,
    rng: &mut Rng,
    rule: NegativeRule,
) -> Option<SampledPairs> {
    let pool = tensor.target_items(user);
    if pool.is_empty() || s == 0 {
        return None;
    }
    let positives: Vec<usize> = if pool.len() >= s {
        index::sample(rng, pool.len(), s).into_iter().map(|k| pool[k]).collect()
    } else {
        (0..s).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    };

    let excluded = excluded_items(tensor, user, rule);
    let num_items = tensor.num_items();
    let allowed = num_items - excluded.len();
    if allowed == 0 {
        return None;
    }
    let negatives = if allowed >= s {
        sample_distinct_outside(num_items, &excluded, s, rng)
    } else {
        let list = allowed_list(num_items, &excluded);
        (0..s).map(|_| list[rng.gen_range(0..list.len())]).collect()
    };
    Some(SampledPairs {
        user,
        positives,
        negatives,
    })
}

fn allowed_list(num_items: usize, excluded: &[usize]) -> Vec<usize> {
    (0..num_items).filter(|j| excluded.binary_search(j).is_err()).collect()
}

/// `s` distinct items drawn uniformly from `[0, n) \ excluded` (sorted).
fn sample_distinct_outside(n: usize, excluded: &[usize], s: usize, rng: &mut Rng) -> Vec<usize> {
    let allowed = n - excluded.len();
    // Rejection sampling is cheap while most of the catalogue is allowed.
    if allowed * 2 >= n {
        let mut picked: Vec<usize> = Vec::with_capacity(s);
        while picked.len() < s {
            let j = rng.gen_range(0..n);
            if excluded.binary_search(&j).is_err() && !picked.contains(&j) {
                picked.push(j);
            }
        }
        picked
    } else {
        let list = allowed_list(n, excluded);
        index::sample(rng, list.len(), s).into_iter().map(|k| list[k]).collect()
    }
}

/// `max(0, 1 − pos + neg)`.
pub fn hinge_pair_loss(pos_score: f64, neg_score: f64) -> f64 {
    (1.0 - pos_score + neg_score).max(0.0)
}

/// Samples one step's pairs for every qualifying user in `users`, in order.
pub fn sample_batch(
    tensor: &InteractionTensor,
    users: &[usize],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Vec<SampledPairs> {
    users
        .iter()
        .filter_map(|&u| sample_pairs(tensor, u, config.samples, rng, config.train_negatives))
        .collect()
}

/// Hinge part of a batch: summed pair losses and the matching gradients.
#[derive(Clone, Debug)]
pub struct PairLoss {
    pub loss: f64,
    pub pairs: usize,
    pub grads: MatnGrads,
}

/// Sum of hinge losses over `batch` and its exact gradient. Per-user work
/// runs on `workers`; results are merged in batch order.
pub fn pair_loss(
    tensor: &InteractionTensor,
    batch: &[SampledPairs],
    params: &ModelParams,
    config: &TrainConfig,
    workers: &Workers,
) -> Result<PairLoss> {
    let per_user = workers.map(batch, |pairs| user_pair_loss(tensor, pairs, params, config));
    let mut total = PairLoss {
        loss: 0.0,
        pairs: 0,
        grads: MatnGrads::zeros(params.shape()),
    };
    for result in per_user {
        let (loss, grads) = result?;
        total.loss += loss;
        total.grads.accumulate(&grads);
    }
    total.pairs = batch.iter().map(|p| p.positives.len()).sum();
    Ok(total)
}

fn user_pair_loss(
    tensor: &InteractionTensor,
    pairs: &SampledPairs,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<(f64, MatnGrads)> {
    let trace = forward_lists(tensor.behavior_lists(pairs.user), params, config);
    let gamma = trace.gamma();
    let d = params.dim();
    let mut upstream = Upstream {
        gamma: vec![0.0; d],
        items: BTreeMap::new(),
    };
    let mut loss = 0.0;
    for (&p, &n) in pairs.positives.iter().zip(&pairs.negatives) {
        let pos = dot(params.items.row(p), gamma);
        let neg = dot(params.items.row(n), gamma);
        let h = hinge_pair_loss(pos, neg);
        if h > 0.0 {
            loss += h;
            axpy(-1.0, params.items.row(p), &mut upstream.gamma);
            axpy(1.0, params.items.row(n), &mut upstream.gamma);
            crate::params::add_row(&mut upstream.items, p, -1.0, gamma);
            crate::params::add_row(&mut upstream.items, n, 1.0, gamma);
        }
    }
    let mut grads = MatnGrads::zeros(params.shape());
    if loss > 0.0 {
        backward_into(&trace, &upstream, params, config, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Full objective of one step: hinge sum plus `λ‖Θ‖²`.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub pair_loss: f64,
    pub pairs: usize,
    pub reg_term: f64,
    /// Gradient of the hinge sum only; the `2λΘ` part is applied by the
    /// optimizer (see [`crate::params::regularized_dense`] for the dense form).
    pub grads: MatnGrads,
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        self.pair_loss + self.reg_term
    }
}

pub fn batch_loss(
    tensor: &InteractionTensor,
    users: &[usize],
    params: &ModelParams,
    config: &TrainConfig,
    rng: &mut Rng,
    workers: &Workers,
) -> Result<BatchLoss> {
    if users.is_empty() {
        return Err(Error::Consistency("empty batch".into()));
    }
    let batch = sample_batch(tensor, users, config, rng);
    let hinge = pair_loss(tensor, &batch, params, config, workers)?;
    Ok(BatchLoss {
        pair_loss: hinge.loss,
        pairs: hinge.pairs,
        reg_term: config.reg * params.squared_norm(),
        grads: hinge.grads,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_pair_loss: f64,
    pub reg_term: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Users that can produce a positive sample.
pub fn trainable_users(tensor: &InteractionTensor) -> Vec<usize> {
    (0..tensor.num_users())
        .filter(|&u| !tensor.target_items(u).is_empty())
        .collect()
}

/// Runs `config.epochs` epochs of shuffled mini-batch Adam.
pub fn train(tensor: &InteractionTensor, config: &TrainConfig, workers: &Workers) -> Result<TrainOutcome> {
    let mut rng = Rng::new(config.seed);
    let params = ModelParams::init(config, tensor.num_behaviors(), tensor.num_items(), &mut rng)?;
    train_from(tensor, config, params, &mut rng, workers)
}

/// Training loop starting from given parameters and random stream.
pub fn train_from(
    tensor: &InteractionTensor,
    config: &TrainConfig,
    mut params: ModelParams,
    rng: &mut Rng,
    workers: &Workers,
) -> Result<TrainOutcome> {
    config.validate()?;
    params.check_shape(config, tensor.num_behaviors(), tensor.num_items())?;
    let mut users = trainable_users(tensor);
    if users.is_empty() {
        return Err(Error::Consistency("no user has a target-behavior event".into()));
    }
    let mut adam = AdamState::new(&params);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.lr_at(epoch);
        users.shuffle(rng);
        let mut hinge_sum = 0.0;
        let mut pairs = 0;
        for (b, chunk) in users.chunks(config.batch_size).enumerate() {
            let step = batch_loss(tensor, chunk, &params, config, rng, workers)?;
            if !step.total().is_finite() {
                return Err(Error::Numeric(format!("loss at epoch {epoch}, batch {b}")));
            }
            hinge_sum += step.pair_loss;
            pairs += step.pairs;
            adam.step(&mut params, &step.grads.into_slots(), lr, config.reg)?;
        }
        let entry = EpochLog {
            epoch,
            mean_pair_loss: if pairs > 0 { hinge_sum / pairs as f64 } else { 0.0 },
            reg_term: config.reg * params.squared_norm(),
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: pair loss {:.5}, reg {:.5}, lr {:.3e}",
            entry.mean_pair_loss,
            entry.reg_term,
            lr
        );
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

/// CSV `epoch,mean_pair_loss,reg_term,lr`.
pub fn write_loss_log<W: Write>(mut out: W, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(out, "epoch,mean_pair_loss,reg_term,lr")?;
    for e in log {
        writeln!(out, "{},{},{},{}", e.epoch, e.mean_pair_loss, e.reg_term, e.lr)?;
    }
    Ok(())
}

pub fn save_loss_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut buf = Vec::new();
    write_loss_log(&mut buf, log).expect("write to memory");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
