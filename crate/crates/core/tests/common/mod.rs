#![allow(dead_code)]

use matn::model::forward_lists;
use matn::numerics::{dot, finite_diff_grad, relative_error, Rng};
use matn::parallel::Workers;
use matn::params::{regularized_dense, Parameters};
use matn::train::{pair_loss, sample_batch, SampledPairs};
use matn::{BehaviorSchema, InteractionTensor, ModelParams, TrainConfig};
use rand::Rng as _;

pub fn schema(behaviors: usize) -> BehaviorSchema {
    let names = (0..behaviors).map(|b| format!("b{b}")).collect();
    BehaviorSchema::new(names, behaviors - 1).unwrap()
}

/// Random tensor where each (user, item, behavior) cell is set with
/// probability `density`, and every user gets at least `min_targets`
/// target items.
pub fn random_tensor(
    users: usize,
    items: usize,
    behaviors: usize,
    density: f64,
    min_targets: usize,
    rng: &mut Rng,
) -> InteractionTensor {
    let target = behaviors - 1;
    let events = (0..users)
        .map(|_| {
            let mut lists: Vec<Vec<usize>> = (0..behaviors)
                .map(|_| (0..items).filter(|_| rng.gen_bool(density)).collect())
                .collect();
            while lists[target].len() < min_targets {
                let j = rng.gen_range(0..items);
                if !lists[target].contains(&j) {
                    lists[target].push(j);
                }
            }
            lists
        })
        .collect();
    let user_ids = (0..users).map(|u| format!("u{u}")).collect();
    let item_ids = (0..items).map(|j| format!("i{j}")).collect();
    InteractionTensor::from_events(schema(behaviors), user_ids, item_ids, events).unwrap()
}

/// Smallest distance from zero of every ReLU pre-activation and every hinge
/// argument `1 − pos + neg` reached while scoring `batch`.
pub fn kink_margin(
    tensor: &InteractionTensor,
    batch: &[SampledPairs],
    params: &ModelParams,
    config: &TrainConfig,
) -> f64 {
    let mut margin = f64::INFINITY;
    for pairs in batch {
        let trace = forward_lists(tensor.behavior_lists(pairs.user), params, config);
        if let Some(mem) = &trace.memory {
            for s in mem.scores.iter().flatten() {
                margin = margin.min(s.abs());
            }
        }
        for a in trace.features.pre.iter().flatten() {
            margin = margin.min(a.abs());
        }
        let gamma = trace.gamma();
        for (&p, &n) in pairs.positives.iter().zip(&pairs.negatives) {
            let h = 1.0 - dot(params.items.row(p), gamma) + dot(params.items.row(n), gamma);
            margin = margin.min(h.abs());
        }
    }
    margin
}

/// The 10-user × 20-item funnel dataset used for overfitting checks: the
/// default funnel with half of all user-item pairs viewed.
pub fn planted_funnel() -> InteractionTensor {
    matn::synth::generate(&matn::synth::SynthSpec {
        num_users: 10,
        num_items: 20,
        base_rate: 0.5,
        seed: 0,
        ..Default::default()
    })
    .unwrap()
}

/// Rank by sorting: order candidates by descending score, placing the
/// positive after every candidate it ties with, and read off its position.
pub fn sorted_rank(scores: &[f64], positive: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| (a == positive).cmp(&(b == positive)))
    });
    order.iter().position(|&k| k == positive).unwrap() + 1
}

/// Random 100-candidate score vector; half the draws use a coarse grid so
/// ties are common.
pub fn random_scores(rng: &mut Rng) -> Vec<f64> {
    let coarse = rng.gen_bool(0.5);
    (0..100)
        .map(|_| {
            if coarse {
                rng.gen_range(0..12) as f64
            } else {
                rng.gen_range(-5.0..5.0)
            }
        })
        .collect()
}

// Gradient certification of the full objective on the small instance.

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const KINK_CLEARANCE: f64 = 1e-3;

pub fn gradient_config() -> TrainConfig {
    TrainConfig {
        dim: 4,
        heads: 2,
        memories: 3,
        ff_depth: 2,
        samples: 2,
        reg: 0.01,
        ..TrainConfig::default()
    }
}

/// Randomizes every entry, biases and gate logits included, so no
/// parameter sits at a special point.
pub fn jitter<P: Parameters>(params: &mut P, rng: &mut Rng) {
    for slot in params.slots_mut() {
        for v in slot.data.iter_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
}

pub struct Instance {
    pub tensor: InteractionTensor,
    pub batch: Vec<SampledPairs>,
    pub params: ModelParams,
}

/// Searches seeds until every ReLU and hinge argument clears the kinks.
pub fn instance(config: &TrainConfig) -> Instance {
    for seed in 0..500 {
        let mut rng = Rng::new(seed);
        let tensor = random_tensor(6, 10, 3, 0.35, 2, &mut rng);
        let mut params = ModelParams::init(config, 3, 10, &mut rng).unwrap();
        jitter(&mut params, &mut rng);
        let users: Vec<usize> = (0..6).collect();
        let batch = sample_batch(&tensor, &users, config, &mut rng);
        if batch.len() == 6 && kink_margin(&tensor, &batch, &params, config) >= KINK_CLEARANCE {
            return Instance { tensor, batch, params };
        }
    }
    panic!("no kink-free instance in 500 seeds");
}

/// Largest relative error over every parameter entry, with its location.
pub fn certify(config: &TrainConfig) -> (f64, String) {
    let Instance { tensor, batch, params } = instance(config);
    let workers = Workers::sequential();
    let objective =
        |p: &ModelParams| pair_loss(&tensor, &batch, p, config, &workers).unwrap().loss + config.reg * p.squared_norm();
    let hinge = pair_loss(&tensor, &batch, &params, config, &workers).unwrap();
    assert!(hinge.loss > 0.0, "instance must exercise the hinge");
    let analytic = regularized_dense(&params, &hinge.grads.into_slots(), config.reg);
    let numeric = finite_diff_grad(objective, &params, EPS).unwrap();

    let names: Vec<String> = params.slots().iter().map(|s| s.name.clone()).collect();
    let mut worst = (0.0, String::new());
    for ((name, a), n) in names.iter().zip(&analytic).zip(&numeric) {
        assert_eq!(a.len(), n.len(), "{name}");
        for (idx, (&ai, &ni)) in a.iter().zip(n).enumerate() {
            let err = relative_error(ai, ni);
            if err > worst.0 {
                worst = (err, format!("{name}[{idx}]: analytic {ai}, numeric {ni}"));
            }
        }
    }
    worst
}
