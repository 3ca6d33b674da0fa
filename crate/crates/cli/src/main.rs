use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use matn::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelWeights};
use matn::data::{behavior_indices, load_interactions};
use matn::eval::{MatnScorer, RankingMetrics, Scorer, DEFAULT_CUTOFFS};
use matn::experiment::{evaluate_checkpoint, fit, prepare, run_variant, variants_csv, ModelKind, RunManifest, Variant};
use matn::inspect::{recommend, user_weights, write_weights_csv};
use matn::parallel::Workers;
use matn::synth::{generate, spec_sidecar, SynthSpec};
use matn::train::save_loss_log;
use matn::{Ablation, BehaviorSchema, Error, InteractionTensor, NegativeRule, TrainConfig};

type CliResult<T = ()> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(
    name = "matn",
    version,
    about = "Multi-behavior recommendation with memory-augmented transformers"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train MATN on the leave-one-out training split and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint with the leave-one-out protocol.
    Evaluate(EvaluateArgs),
    /// Print a user's top-k items.
    Recommend(RecommendArgs),
    /// Dump attention, memory and gate weights for some users.
    ExportWeights(ExportArgs),
    /// Train and evaluate a set of model variants.
    Ablate(AblateArgs),
    /// Write a synthetic funnel dataset.
    GenSynthetic(SynthArgs),
    /// Train the BiasMF baseline on the target behavior.
    BaselineBiasmf(BaselineArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Tab-separated `user item behavior` events.
    #[arg(long)]
    data: PathBuf,
    /// Behavior labels, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    behaviors: Vec<String>,
    /// Label of the target behavior.
    #[arg(long)]
    target: String,
}

impl DataArgs {
    fn load(&self) -> CliResult<InteractionTensor> {
        let schema = BehaviorSchema::from_labels(&self.behaviors, &self.target)?;
        let tensor = load_interactions(&self.data, &schema)?;
        info!(
            "loaded {} events: {} users, {} items, {} behaviors",
            tensor.num_events(),
            tensor.num_users(),
            tensor.num_items(),
            tensor.num_behaviors()
        );
        Ok(tensor)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NegativesArg {
    TargetOnly,
    AnyBehavior,
}

#[derive(Args, Clone)]
struct HyperArgs {
    #[arg(long, default_value_t = TrainConfig::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = TrainConfig::default().heads)]
    heads: usize,
    #[arg(long, default_value_t = TrainConfig::default().memories)]
    memories: usize,
    /// Depth of the feed-forward feature stack.
    #[arg(long, default_value_t = TrainConfig::default().ff_depth)]
    ff_depth: usize,
    /// Positive/negative pairs per user per step.
    #[arg(long, default_value_t = TrainConfig::default().samples)]
    samples: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().lr_decay)]
    lr_decay: f64,
    /// L2 weight on every parameter.
    #[arg(long, default_value_t = TrainConfig::default().reg)]
    reg: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mix attention values with the raw logits instead of softmax weights.
    #[arg(long)]
    raw_attn_weights: bool,
    /// Average rather than sum the item embeddings of each behavior.
    #[arg(long)]
    mean_project: bool,
    /// Items excluded when drawing training negatives.
    #[arg(long, value_enum, default_value = "target-only")]
    train_negatives: NegativesArg,
}

impl HyperArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            heads: self.heads,
            memories: self.memories,
            ff_depth: self.ff_depth,
            samples: self.samples,
            lr: self.lr,
            lr_decay: self.lr_decay,
            reg: self.reg,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            raw_attn_weights: self.raw_attn_weights,
            mean_project: self.mean_project,
            train_negatives: match self.train_negatives {
                NegativesArg::TargetOnly => NegativeRule::TargetOnly,
                NegativesArg::AnyBehavior => NegativeRule::AnyBehavior,
            },
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Clone)]
struct AblationArgs {
    /// Skip the behavior self-attention.
    #[arg(long)]
    no_transformer: bool,
    /// Skip the memory recalibration.
    #[arg(long)]
    no_memory: bool,
    /// Use a uniform gate instead of the learned one.
    #[arg(long)]
    mean_gate: bool,
    /// Train on these behaviors only (must include the target).
    #[arg(long, value_delimiter = ',')]
    keep_behaviors: Option<Vec<String>>,
}

#[derive(Args)]
struct RunArgs {
    /// Worker threads for per-user work.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Evaluation cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CUTOFFS)]
    cutoffs: Vec<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    ablation: AblationArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint path; the manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Also evaluate after training and write the metrics CSV here.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    /// Write the metrics CSV here instead of stdout.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// External user id.
    #[arg(long)]
    user: String,
    #[arg(long, default_value_t = 10)]
    topk: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// External user ids, comma separated.
    #[arg(long = "user", value_delimiter = ',', required = true)]
    users: Vec<String>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Variants: full, no-transformer, no-memory, mean-gate, target-only,
    /// biasmf, without:<a+b>, keep:<a+b>.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "full,no-transformer,no-memory,mean-gate"
    )]
    variants: Vec<String>,
    /// Write the combined CSV here instead of stdout.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = SynthSpec::default().num_users)]
    users: usize,
    #[arg(long, default_value_t = SynthSpec::default().num_items)]
    items: usize,
    #[arg(long, default_value_t = SynthSpec::default().latent_dim)]
    latent_dim: usize,
    /// Behavior labels in funnel order; the last is the target.
    #[arg(long, value_delimiter = ',', default_value = "view,fav,cart,buy")]
    behaviors: Vec<String>,
    /// Conditional probability of each behavior given the previous one.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.5,0.5")]
    funnel_probs: Vec<f64>,
    /// Fraction of user-item pairs that become views.
    #[arg(long, default_value_t = SynthSpec::default().base_rate)]
    base_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TSV output; the spec is written alongside as `<out>.spec.json`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Recommend(a) => cmd_recommend(a),
        Command::ExportWeights(a) => cmd_export_weights(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a),
        Command::BaselineBiasmf(a) => cmd_baseline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn manifest_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("manifest.json")
}

/// Writes `text` to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
/// Trains, then writes the checkpoint, manifest and optional loss log and
/// metrics.
fn train_and_save(
    command: &str,
    data: &DataArgs,
    config: &TrainConfig,
    kept: &[usize],
    kind: ModelKind,
    run: &RunArgs,
    out: &Path,
    loss_log: Option<&Path>,
    metrics_out: Option<&Path>,
) -> CliResult {
    let tensor = data.load()?;
    let workers = Workers::new(run.workers);
    let fitted = fit(&tensor, kept, config, kind, &workers)?;
    save_checkpoint(out, &fitted.checkpoint)?;
    if let Some(path) = loss_log {
        save_loss_log(path, &fitted.log)?;
    }
    if let Some(path) = metrics_out {
        let metrics = fitted.evaluate(&run.cutoffs, &workers)?;
        emit(Some(path), &metrics.to_csv())?;
    }
    let manifest = RunManifest::describe(
        command,
        &fitted.checkpoint,
        &tensor,
        std::slice::from_ref(&data.data),
        workers.count(),
        Some(out.to_path_buf()),
        &fitted.log,
    );
    manifest.save(&manifest_path(out))?;
    info!("wrote {} and {}", out.display(), manifest_path(out).display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let mut config = a.hyper.config();
    config.ablation = Ablation {
        disable_transformer: a.ablation.no_transformer,
        disable_memory: a.ablation.no_memory,
        mean_pool_gate: a.ablation.mean_gate,
    };
    let schema = BehaviorSchema::from_labels(&a.data.behaviors, &a.data.target)?;
    let kept = match &a.ablation.keep_behaviors {
        Some(labels) => {
            let mut keep = behavior_indices(&schema, labels)?;
            keep.sort_unstable();
            keep.dedup();
            keep
        }
        None => (0..schema.len()).collect(),
    };
    train_and_save(
        "train",
        &a.data,
        &config,
        &kept,
        ModelKind::Matn,
        &a.run,
        &a.out,
        a.loss_log.as_deref(),
        a.metrics_out.as_deref(),
    )
}

fn cmd_baseline(a: BaselineArgs) -> CliResult {
    let schema = BehaviorSchema::from_labels(&a.data.behaviors, &a.data.target)?;
    train_and_save(
        "baseline-biasmf",
        &a.data,
        &a.hyper.config(),
        &[schema.target()],
        ModelKind::BiasMF,
        &a.run,
        &a.out,
        a.loss_log.as_deref(),
        a.metrics_out.as_deref(),
    )
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult {
    let tensor = a.data.load()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let metrics: RankingMetrics = evaluate_checkpoint(&ckpt, &tensor, &a.run.cutoffs, &Workers::new(a.run.workers))?;
    info!("evaluated {} users", metrics.users_evaluated);
    emit(a.metrics_out.as_deref(), &metrics.to_csv())
}

/// Checkpoint, source data and the training view the checkpoint saw.
fn open_model(data: &DataArgs, path: &Path) -> CliResult<(Checkpoint, InteractionTensor)> {
    let tensor = data.load()?;
    let ckpt = load_checkpoint(path)?;
    ckpt.meta.check_source(&tensor)?;
    let train = prepare(&tensor, &ckpt.meta.kept_behaviors, ckpt.config.seed)?.train;
    if let ModelWeights::Matn(params) = &ckpt.weights {
        params.check_shape(&ckpt.config, train.num_behaviors(), train.num_items())?;
    }
    Ok((ckpt, train))
}

fn cmd_recommend(a: RecommendArgs) -> CliResult {
    let (ckpt, train) = open_model(&a.data, &a.checkpoint)?;
    let user = train
        .user_index(&a.user)
        .ok_or_else(|| Error::Consistency(format!("unknown user {:?}", a.user)))?;
    let ranked = match &ckpt.weights {
        ModelWeights::Matn(params) => top_k(
            &MatnScorer {
                params,
                config: &ckpt.config,
            },
            &train,
            user,
            a.topk,
        )?,
        ModelWeights::BiasMF(params) => top_k(params, &train, user, a.topk)?,
    };
    let mut out = String::new();
    for (item, score) in ranked {
        out.push_str(&format!("{}\t{score}\n", train.item_ids()[item]));
    }
    emit(None, &out)
}

fn top_k<S: Scorer>(scorer: &S, train: &InteractionTensor, user: usize, k: usize) -> CliResult<Vec<(usize, f64)>> {
    Ok(recommend(scorer, train, user, k)?)
}

fn cmd_export_weights(a: ExportArgs) -> CliResult {
    let (ckpt, train) = open_model(&a.data, &a.checkpoint)?;
    let params = ckpt
        .matn()
        .ok_or_else(|| Error::Consistency("BiasMF checkpoints have no attention, memory or gate weights".into()))?;
    let mut rows = Vec::new();
    for id in &a.users {
        match train.user_index(id) {
            Some(u) => rows.push(user_weights(&train, u, params, &ckpt.config)?),
            None => warn!("unknown user {id:?} skipped"),
        }
    }
    let mut buf = Vec::new();
    write_weights_csv(&mut buf, train.schema().names(), &rows)?;
    emit(a.out.as_deref(), &String::from_utf8(buf)?)
}

fn cmd_ablate(a: AblateArgs) -> CliResult {
    let variants = a
        .variants
        .iter()
        .map(|v| v.parse::<Variant>())
        .collect::<Result<Vec<_>, _>>()?;
    let tensor = a.data.load()?;
    let workers = Workers::new(a.run.workers);
    let base = a.hyper.config();
    let mut runs = Vec::with_capacity(variants.len());
    for v in &variants {
        let run = run_variant(&tensor, v, &base, &a.run.cutoffs, &workers)?;
        info!("{v}: hr@10 {:?}", run.metrics.hr_at(10));
        runs.push((v.to_string(), run.metrics));
    }
    emit(a.metrics_out.as_deref(), &variants_csv(&runs))
}

fn cmd_gen_synthetic(a: SynthArgs) -> CliResult {
    let spec = SynthSpec {
        num_users: a.users,
        num_items: a.items,
        latent_dim: a.latent_dim,
        behaviors: a.behaviors,
        funnel_probs: a.funnel_probs,
        base_rate: a.base_rate,
        noise: a.noise,
        seed: a.seed,
    };
    let tensor = generate(&spec)?;
    tensor.save_tsv(&a.out)?;
    let mut sidecar = a.out.clone().into_os_string();
    sidecar.push(".spec.json");
    emit(Some(Path::new(&sidecar)), &spec_sidecar(&spec))?;
    info!("wrote {} events to {}", tensor.num_events(), a.out.display());
    Ok(())
}
