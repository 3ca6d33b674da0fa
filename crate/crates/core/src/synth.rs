//! Seeded generator of funnel-shaped multi-behavior data.
//!
//! Users and items get Gaussian latent vectors. A user views an item when
//! their affinity clears the global `1 − base_rate` quantile; every later
//! behavior in the funnel occurs only on items that reached the previous
//! stage, each with its own conditional probability. The last behavior is
//! the target.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{BehaviorSchema, InteractionTensor};
use crate::error::{Error, Result};
use crate::numerics::{dot, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub latent_dim: usize,
    /// Behavior labels in funnel order; the last one is the target.
    pub behaviors: Vec<String>,
    /// `funnel_probs[n]` is `P(behavior n+1 | behavior n)`.
    pub funnel_probs: Vec<f64>,
    /// Fraction of all user-item pairs that become view events.
    pub base_rate: f64,
    /// Standard deviation of Gaussian noise added to each affinity.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_users: 500,
            num_items: 300,
            latent_dim: 8,
            behaviors: ["view", "fav", "cart", "buy"].map(String::from).to_vec(),
            funnel_probs: vec![0.5, 0.5, 0.5],
            base_rate: 20.0 / 300.0,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 || self.latent_dim == 0 {
            return Err(Error::Config("user, item and latent counts must be at least 1".into()));
        }
        if self.behaviors.is_empty() {
            return Err(Error::Config("at least one behavior is required".into()));
        }
        if self.funnel_probs.len() + 1 != self.behaviors.len() {
            return Err(Error::Config(format!(
                "{} behaviors need {} funnel probabilities, got {}",
                self.behaviors.len(),
                self.behaviors.len() - 1,
                self.funnel_probs.len()
            )));
        }
        if let Some(p) = self.funnel_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("funnel probability {p} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.base_rate) {
            return Err(Error::Config(format!("base rate {} outside [0, 1]", self.base_rate)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be nonnegative, got {}", self.noise)));
        }
        Ok(())
    }

    /// Expected target events per user.
    pub fn expected_targets(&self) -> f64 {
        self.base_rate * self.num_items as f64 * self.funnel_probs.iter().product::<f64>()
    }

    pub fn schema(&self) -> Result<BehaviorSchema> {
        BehaviorSchema::new(self.behaviors.clone(), self.behaviors.len() - 1)
    }
}

pub fn generate(spec: &SynthSpec) -> Result<InteractionTensor> {
    spec.validate()?;
    let schema = spec.schema()?;
    if spec.expected_targets() < 1.0 {
        log::warn!(
            "spec yields {:.2} expected target events per user; many users will lack targets",
            spec.expected_targets()
        );
    }
    let mut rng = Rng::new(spec.seed);
    let scale = 1.0 / (spec.latent_dim as f64).sqrt();
    let latent = |n: usize, rng: &mut Rng| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..spec.latent_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        scale * z
                    })
                    .collect()
            })
            .collect()
    };
    let users = latent(spec.num_users, &mut rng);
    let items = latent(spec.num_items, &mut rng);

    let mut affinity = Vec::with_capacity(spec.num_users * spec.num_items);
    for u in &users {
        for v in &items {
            let noise: f64 = if spec.noise > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                spec.noise * z
            } else {
                0.0
            };
            affinity.push(dot(u, v) + noise);
        }
    }
    let threshold = view_threshold(&affinity, spec.base_rate);

    let behaviors = spec.behaviors.len();
    let mut events = Vec::with_capacity(spec.num_users);
    for (u, row) in affinity.chunks(spec.num_items).enumerate() {
        let mut per_user = vec![Vec::new(); behaviors];
        per_user[0] = row
            .iter()
            .enumerate()
            .filter(|&(_, &a)| threshold.is_some_and(|t| a >= t))
            .map(|(j, _)| j)
            .collect();
        for (n, &p) in spec.funnel_probs.iter().enumerate() {
            let next: Vec<usize> = per_user[n].iter().copied().filter(|_| rng.gen_bool(p)).collect();
            per_user[n + 1] = next;
        }
        debug_assert_eq!(per_user.len(), behaviors, "user {u}");
        events.push(per_user);
    }
    let user_ids = (0..spec.num_users).map(|u| format!("u{u}")).collect();
    let item_ids = (0..spec.num_items).map(|j| format!("i{j}")).collect();
    InteractionTensor::from_events(schema, user_ids, item_ids, events)
}

/// Smallest affinity among the top `base_rate` fraction, `None` when no pair
/// should become a view.
fn view_threshold(affinity: &[f64], base_rate: f64) -> Option<f64> {
    let keep = (base_rate * affinity.len() as f64).round() as usize;
    if keep == 0 {
        return None;
    }
    let mut sorted = affinity.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    Some(sorted[keep.min(sorted.len()) - 1])
}

/// Sidecar text recording the spec.
pub fn spec_sidecar(spec: &SynthSpec) -> String {
    serde_json::to_string_pretty(spec).expect("spec serializes")
}
