//! End-to-end runs shared by the command-line tool and the acceptance suite:
//! split → (subset) → train → evaluate, for MATN, its ablations and BiasMF.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::biasmf::biasmf_train;
use crate::checkpoint::{write_atomic, Checkpoint, DataMeta, ModelWeights};
use crate::config::TrainConfig;
use crate::data::{behavior_indices, behavior_subset, leave_one_out_split, EvalSplit, InteractionTensor};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MatnScorer, RankingMetrics};
use crate::parallel::Workers;
use crate::train::{train, EpochLog};

/// A model variant to train and evaluate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Without behavior self-attention.
    NoTransformer,
    /// Without memory recalibration.
    NoMemory,
    /// Uniform gate instead of the learned one.
    MeanGate,
    /// Full model trained on the target behavior only.
    TargetOnly,
    /// Full model trained without the named source behaviors.
    Without(Vec<String>),
    /// Full model trained on exactly the named behaviors (target included).
    Keep(Vec<String>),
    BiasMF,
}

impl Variant {
    /// Applies the variant's ablation switches to `base`.
    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::NoTransformer => c.ablation.disable_transformer = true,
            Variant::NoMemory => c.ablation.disable_memory = true,
            Variant::MeanGate => c.ablation.mean_pool_gate = true,
            _ => {}
        }
        c
    }

    /// Behavior indices (into `tensor`'s schema) the variant trains on.
    pub fn kept_behaviors(&self, tensor: &InteractionTensor) -> Result<Vec<usize>> {
        let schema = tensor.schema();
        let all: Vec<usize> = (0..schema.len()).collect();
        match self {
            Variant::TargetOnly | Variant::BiasMF => Ok(vec![schema.target()]),
            Variant::Without(labels) => {
                let drop = behavior_indices(schema, labels)?;
                if drop.contains(&schema.target()) {
                    return Err(Error::InvalidAblation("cannot drop the target behavior".into()));
                }
                Ok(all.into_iter().filter(|b| !drop.contains(b)).collect())
            }
            Variant::Keep(labels) => {
                let mut keep = behavior_indices(schema, labels)?;
                keep.sort_unstable();
                keep.dedup();
                if !keep.contains(&schema.target()) {
                    return Err(Error::InvalidAblation("kept behaviors must include the target".into()));
                }
                Ok(keep)
            }
            _ => Ok(all),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::NoTransformer => write!(f, "no-transformer"),
            Variant::NoMemory => write!(f, "no-memory"),
            Variant::MeanGate => write!(f, "mean-gate"),
            Variant::TargetOnly => write!(f, "target-only"),
            Variant::Without(l) => write!(f, "without:{}", l.join("+")),
            Variant::Keep(l) => write!(f, "keep:{}", l.join("+")),
            Variant::BiasMF => write!(f, "biasmf"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let labels = |rest: &str| rest.split('+').map(str::to_string).collect::<Vec<_>>();
        match s {
            "full" | "matn" => Ok(Variant::Full),
            "no-transformer" | "matn-t" => Ok(Variant::NoTransformer),
            "no-memory" | "matn-m" => Ok(Variant::NoMemory),
            "mean-gate" | "matn-g" => Ok(Variant::MeanGate),
            "target-only" | "matn-b" => Ok(Variant::TargetOnly),
            "biasmf" => Ok(Variant::BiasMF),
            _ => {
                if let Some(rest) = s.strip_prefix("without:") {
                    Ok(Variant::Without(labels(rest)))
                } else if let Some(rest) = s.strip_prefix("keep:") {
                    Ok(Variant::Keep(labels(rest)))
                } else {
                    Err(Error::InvalidAblation(format!("unknown variant {s:?}")))
                }
            }
        }
    }
}

/// Source data split for evaluation plus the training view of one variant.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub split: EvalSplit,
    /// Training tensor restricted to `kept` behaviors.
    pub train: InteractionTensor,
    pub kept: Vec<usize>,
}

/// Splits `data` with `seed`, then restricts the training part to `kept`.
/// Held-out items and negatives depend only on the full data and the seed,
/// so every variant is evaluated on the same split.
pub fn prepare(data: &InteractionTensor, kept: &[usize], seed: u64) -> Result<Prepared> {
    let (train_full, split) = leave_one_out_split(data, seed)?;
    let train = behavior_subset(&train_full, kept)?;
    Ok(Prepared {
        split,
        train,
        kept: kept.to_vec(),
    })
}

/// Which model family a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Matn,
    BiasMF,
}

/// A trained model with the data view it was fitted on.
#[derive(Clone, Debug)]
pub struct Fit {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub prepared: Prepared,
}

impl Fit {
    pub fn evaluate(&self, cutoffs: &[usize], workers: &Workers) -> Result<RankingMetrics> {
        let p = &self.prepared;
        match &self.checkpoint.weights {
            ModelWeights::Matn(params) => {
                let scorer = MatnScorer {
                    params,
                    config: &self.checkpoint.config,
                };
                evaluate(&scorer, &p.train, &p.split, cutoffs, workers)
            }
            ModelWeights::BiasMF(params) => evaluate(params, &p.train, &p.split, cutoffs, workers),
        }
    }
}

/// Splits `data` with `config.seed`, restricts training to `kept` and trains.
pub fn fit(
    data: &InteractionTensor,
    kept: &[usize],
    config: &TrainConfig,
    kind: ModelKind,
    workers: &Workers,
) -> Result<Fit> {
    let prepared = prepare(data, kept, config.seed)?;
    let meta = DataMeta::describe(&prepared.train, kept);
    let (weights, log) = match kind {
        ModelKind::BiasMF => {
            let out = biasmf_train(&prepared.train, config)?;
            (ModelWeights::BiasMF(out.params), out.log)
        }
        ModelKind::Matn => {
            let out = train(&prepared.train, config, workers)?;
            (ModelWeights::Matn(out.params), out.log)
        }
    };
    Ok(Fit {
        checkpoint: Checkpoint {
            config: config.clone(),
            meta,
            weights,
        },
        log,
        prepared,
    })
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub variant: Variant,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub metrics: RankingMetrics,
}

/// Trains `variant` on `data` under `base` and evaluates it at `cutoffs`.
pub fn run_variant(
    data: &InteractionTensor,
    variant: &Variant,
    base: &TrainConfig,
    cutoffs: &[usize],
    workers: &Workers,
) -> Result<VariantRun> {
    let kind = match variant {
        Variant::BiasMF => ModelKind::BiasMF,
        _ => ModelKind::Matn,
    };
    let fitted = fit(
        data,
        &variant.kept_behaviors(data)?,
        &variant.config(base),
        kind,
        workers,
    )?;
    let metrics = fitted.evaluate(cutoffs, workers)?;
    Ok(VariantRun {
        variant: variant.clone(),
        checkpoint: fitted.checkpoint,
        log: fitted.log,
        metrics,
    })
}

/// Re-evaluates a checkpoint against the source data it was trained on.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    data: &InteractionTensor,
    cutoffs: &[usize],
    workers: &Workers,
) -> Result<RankingMetrics> {
    ckpt.meta.check_source(data)?;
    let prepared = prepare(data, &ckpt.meta.kept_behaviors, ckpt.config.seed)?;
    match &ckpt.weights {
        ModelWeights::Matn(params) => {
            params.check_shape(&ckpt.config, prepared.train.num_behaviors(), prepared.train.num_items())?;
            let scorer = MatnScorer {
                params,
                config: &ckpt.config,
            };
            evaluate(&scorer, &prepared.train, &prepared.split, cutoffs, workers)
        }
        ModelWeights::BiasMF(params) => evaluate(params, &prepared.train, &prepared.split, cutoffs, workers),
    }
}

/// CSV `variant,k,hr,ndcg` over several runs.
pub fn variants_csv(runs: &[(String, RankingMetrics)]) -> String {
    let mut out = String::from("variant,k,hr,ndcg\n");
    for (name, m) in runs {
        for ((k, hr), ndcg) in m.cutoffs.iter().zip(&m.hr).zip(&m.ndcg) {
            out.push_str(&format!("{name},{k},{hr},{ndcg}\n"));
        }
    }
    out
}

/// Record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: TrainConfig,
    pub data: Vec<PathBuf>,
    pub behaviors: Vec<String>,
    pub target: String,
    pub kept_behaviors: Vec<String>,
    pub seed: u64,
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    pub epoch_seconds: Vec<f64>,
}

/// `git describe`-style version string, overridable at build time through
/// `MATN_BUILD_DESCRIBE`.
pub fn build_version() -> String {
    option_env!("MATN_BUILD_DESCRIBE")
        .map(str::to_string)
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

impl RunManifest {
    /// Manifest for a run that trained `checkpoint` on `data` (read from
    /// `paths`); per-epoch timings come from `log`.
    pub fn describe(
        command: &str,
        checkpoint: &Checkpoint,
        data: &InteractionTensor,
        paths: &[PathBuf],
        workers: usize,
        out: Option<PathBuf>,
        log: &[EpochLog],
    ) -> Self {
        let names = data.schema().names();
        RunManifest {
            command: command.to_string(),
            version: build_version(),
            config: checkpoint.config.clone(),
            data: paths.to_vec(),
            behaviors: names.to_vec(),
            target: names[data.target()].clone(),
            kept_behaviors: checkpoint
                .meta
                .kept_behaviors
                .iter()
                .map(|&b| names[b].clone())
                .collect(),
            seed: checkpoint.config.seed,
            workers,
            checkpoint: out,
            epoch_seconds: log.iter().map(|e| e.seconds).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for s in [
            "full",
            "no-transformer",
            "no-memory",
            "mean-gate",
            "target-only",
            "biasmf",
            "without:fav+cart",
            "keep:view+buy",
        ] {
            assert_eq!(s.parse::<Variant>().unwrap().to_string(), s);
        }
        assert_eq!("matn-t".parse::<Variant>().unwrap(), Variant::NoTransformer);
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn variant_configs() {
        let base = TrainConfig::default();
        assert!(Variant::NoTransformer.config(&base).ablation.disable_transformer);
        assert!(Variant::NoMemory.config(&base).ablation.disable_memory);
        assert!(Variant::MeanGate.config(&base).ablation.mean_pool_gate);
        assert_eq!(Variant::Full.config(&base), base);
    }
}
