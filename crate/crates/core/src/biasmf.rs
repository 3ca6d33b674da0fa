//! Biased matrix factorization baseline, `μ + b_u + b_i + p_u·q_i`, trained
//! with the same pairwise hinge objective on target-behavior events only.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::config::TrainConfig;
use crate::data::{behavior_subset, InteractionTensor};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::numerics::{dot, glorot_init, DenseMatrix, Rng};
use crate::optim::AdamState;
use crate::params::{add_row, Parameters, Slot, SlotGrad, SlotMut};
use crate::train::{hinge_pair_loss, sample_batch, trainable_users, EpochLog, SampledPairs};

#[derive(Clone, Debug, PartialEq)]
pub struct BiasMFParams {
    pub global_mean: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub user_factors: DenseMatrix,
    pub item_factors: DenseMatrix,
}

impl BiasMFParams {
    pub fn zeros(users: usize, items: usize, dim: usize) -> Self {
        BiasMFParams {
            global_mean: 0.0,
            user_bias: vec![0.0; users],
            item_bias: vec![0.0; items],
            user_factors: DenseMatrix::zeros(users, dim),
            item_factors: DenseMatrix::zeros(items, dim),
        }
    }

    /// Zero biases, Glorot-uniform factors.
    pub fn init(users: usize, items: usize, dim: usize, rng: &mut Rng) -> Self {
        BiasMFParams {
            global_mean: 0.0,
            user_bias: vec![0.0; users],
            item_bias: vec![0.0; items],
            user_factors: glorot_init(users, dim, rng),
            item_factors: glorot_init(items, dim, rng),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_bias.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_bias.len()
    }

    pub fn dim(&self) -> usize {
        self.user_factors.cols()
    }

    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.num_users() || item >= self.num_items() {
            return Err(Error::Dimension(format!(
                "pair ({user}, {item}) outside {}x{}",
                self.num_users(),
                self.num_items()
            )));
        }
        Ok(self.score_unchecked(user, item))
    }

    fn score_unchecked(&self, user: usize, item: usize) -> f64 {
        self.global_mean
            + self.user_bias[user]
            + self.item_bias[item]
            + dot(self.user_factors.row(user), self.item_factors.row(item))
    }
}

impl Parameters for BiasMFParams {
    fn slots(&self) -> Vec<Slot<'_>> {
        let d = self.dim();
        vec![
            Slot::new("global_mean", vec![1], std::slice::from_ref(&self.global_mean)),
            Slot::new("user_bias", vec![self.user_bias.len()], &self.user_bias),
            Slot::new("item_bias", vec![self.item_bias.len()], &self.item_bias),
            Slot::new("user_factors", vec![self.num_users(), d], self.user_factors.data()),
            Slot::new("item_factors", vec![self.num_items(), d], self.item_factors.data()),
        ]
    }

    fn slots_mut(&mut self) -> Vec<SlotMut<'_>> {
        let d = self.dim();
        let (users, items) = (self.num_users(), self.num_items());
        vec![
            SlotMut::new("global_mean", vec![1], std::slice::from_mut(&mut self.global_mean)),
            SlotMut::new("user_bias", vec![users], &mut self.user_bias),
            SlotMut::new("item_bias", vec![items], &mut self.item_bias),
            SlotMut::new("user_factors", vec![users, d], self.user_factors.data_mut()),
            SlotMut::new("item_factors", vec![items, d], self.item_factors.data_mut()),
        ]
    }
}

impl Scorer for BiasMFParams {
    fn score_items(&self, _tensor: &InteractionTensor, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        items.iter().map(|&j| self.score(user, j)).collect()
    }
}

/// Hinge sum over `batch` and its row-sparse gradient, in slot order.
pub fn biasmf_pair_loss(batch: &[SampledPairs], params: &BiasMFParams) -> (f64, usize, Vec<SlotGrad>) {
    let d = params.dim();
    let mut user_bias = BTreeMap::new();
    let mut item_bias = BTreeMap::new();
    let mut user_factors = BTreeMap::new();
    let mut item_factors = BTreeMap::new();
    let mut loss = 0.0;
    let mut pairs = 0;
    for sample in batch {
        let u = sample.user;
        let pu = params.user_factors.row(u);
        for (&p, &n) in sample.positives.iter().zip(&sample.negatives) {
            pairs += 1;
            let h = hinge_pair_loss(params.score_unchecked(u, p), params.score_unchecked(u, n));
            if h <= 0.0 {
                continue;
            }
            loss += h;
            // μ and b_u cancel inside the pair difference; their zero
            // gradients are recorded explicitly.
            add_row(&mut user_bias, u, 1.0, &[0.0]);
            add_row(&mut item_bias, p, -1.0, &[1.0]);
            add_row(&mut item_bias, n, 1.0, &[1.0]);
            add_row(&mut user_factors, u, -1.0, params.item_factors.row(p));
            add_row(&mut user_factors, u, 1.0, params.item_factors.row(n));
            add_row(&mut item_factors, p, -1.0, pu);
            add_row(&mut item_factors, n, 1.0, pu);
        }
    }
    let grads = vec![
        SlotGrad::Dense(vec![0.0]),
        SlotGrad::Rows {
            row_len: 1,
            rows: user_bias,
        },
        SlotGrad::Rows {
            row_len: 1,
            rows: item_bias,
        },
        SlotGrad::Rows {
            row_len: d,
            rows: user_factors,
        },
        SlotGrad::Rows {
            row_len: d,
            rows: item_factors,
        },
    ];
    (loss, pairs, grads)
}

#[derive(Clone, Debug)]
pub struct BiasMFOutcome {
    pub params: BiasMFParams,
    pub log: Vec<EpochLog>,
}

/// Trains on the target behavior alone with the schedule of `config`.
pub fn biasmf_train(tensor: &InteractionTensor, config: &TrainConfig) -> Result<BiasMFOutcome> {
    config.validate()?;
    let target_only = behavior_subset(tensor, &[tensor.target()])?;
    let mut rng = Rng::new(config.seed);
    let mut params = BiasMFParams::init(tensor.num_users(), tensor.num_items(), config.dim, &mut rng);
    let mut users = trainable_users(&target_only);
    if users.is_empty() {
        return Err(Error::Consistency("no user has a target-behavior event".into()));
    }
    let mut adam = AdamState::new(&params);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = std::time::Instant::now();
        let lr = config.lr_at(epoch);
        users.shuffle(&mut rng);
        let (mut hinge_sum, mut pairs) = (0.0, 0);
        for (b, chunk) in users.chunks(config.batch_size).enumerate() {
            let batch = sample_batch(&target_only, chunk, config, &mut rng);
            let (loss, n, grads) = biasmf_pair_loss(&batch, &params);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss at epoch {epoch}, batch {b}")));
            }
            hinge_sum += loss;
            pairs += n;
            adam.step(&mut params, &grads, lr, config.reg)?;
        }
        log.push(EpochLog {
            epoch,
            mean_pair_loss: if pairs > 0 { hinge_sum / pairs as f64 } else { 0.0 },
            reg_term: config.reg * params.squared_norm(),
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(BiasMFOutcome { params, log })
}
