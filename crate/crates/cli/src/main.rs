//! Batch pipelines over precomputed embeddings: generate synthetic mixtures,
//! inspect neighborhood density, select reliable subsets, train the prototype
//! classifier, estimate the class count, and score predictions.
//!
//! Every subcommand is deterministic for fixed arguments and seed; outputs are
//! JSON (plus JSONL/CSV where rows dominate) so downstream scripts never parse
//! logs. Wall-clock timestamps appear only in the sidecar `run.log`. Argument
//! precedence: built-in defaults < `--config` file < explicit flags.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::json;
use tailgcd_core::classifier::{load_checkpoint, save_checkpoint, ProbMatrix, PrototypeSet};
use tailgcd_core::density::{compute_density, find_peaks, DensityMode, NmdsRule};
use tailgcd_core::embedding::{
    generate_synthetic, imbalance_factor, load_dataset, ClassCounts, EmbeddingSet, SynthConfig,
};
use tailgcd_core::error::Error as CoreError;
use tailgcd_core::estimation::{estimate_k, EstimationConfig};
use tailgcd_core::evaluation::gcd_report;
use tailgcd_core::knn::build_knn;
use tailgcd_core::selection::{
    combine, resample_epoch, select_density_with_graph, SelectionConfig, SelectionResult,
};
use tailgcd_core::train::{train, Ablation, TrainConfig};

#[derive(Parser)]
#[command(
    name = "tailgcd",
    about = "Category discovery on long-tailed embedding datasets",
    version
)]
struct Cli {
    /// RNG seed shared by all stochastic steps.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel kernels (0 = library default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for all files this invocation writes.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat JSON object of defaults; keys are long flag names with `_` for
    /// `-`. Explicit flags win over config entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic long-tailed mixture dataset on disk.
    Synth(SynthArgs),
    /// Build the exact k-nearest-neighbor graph of a dataset.
    Knn(KnnArgs),
    /// Compute k-NN densities and density peaks.
    Density(DensityArgs),
    /// Run one selection pass: confident samples, density peaks, union, prior.
    Select(SelectArgs),
    /// Train prototypes with per-epoch selection; writes stats, checkpoint,
    /// predictions, and an evaluation report when ground truth is present.
    Train(TrainArgs),
    /// Estimate the total class count of a dataset.
    EstimateK(EstimateArgs),
    /// Score a predictions file against dataset ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Total classes K.
    #[arg(long)]
    classes: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Imbalance ratio between the largest and smallest class.
    #[arg(long)]
    imbalance: Option<f64>,
    /// Sample count of the largest class.
    #[arg(long)]
    head: Option<usize>,
    /// RMS within-class spread before re-normalization.
    #[arg(long)]
    sigma: Option<f64>,
    /// Fraction of classes treated as labelled ("old").
    #[arg(long)]
    frac_old: Option<f64>,
    /// Fraction of each old class that keeps its label.
    #[arg(long)]
    frac_labelled: Option<f64>,
    /// File name stem for the manifest, data, and label files.
    #[arg(long)]
    stem: Option<String>,
}

#[derive(Args)]
struct KnnArgs {
    /// Dataset manifest path.
    #[arg(long)]
    manifest: PathBuf,
    /// Neighbors per sample.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Density neighborhood size.
    #[arg(long)]
    k: Option<usize>,
    /// Checkpoint whose predictions weight density by class agreement;
    /// omitted = plain affinity density.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Require strict density dominance over all k neighbors.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint providing predictions for the confidence branch and the
    /// prior; omitted = density branch only.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    selection: SelectionFlags,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Total prototype count (labelled classes + novel slots).
    #[arg(long)]
    k_total: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Initial learning rate of the cosine schedule.
    #[arg(long)]
    lr: Option<f64>,
    /// RMS norm of the per-view embedding jitter.
    #[arg(long)]
    sigma_view: Option<f64>,
    /// Student softmax temperature.
    #[arg(long)]
    tau_s: Option<f64>,
    /// Teacher softmax temperature.
    #[arg(long)]
    tau_t: Option<f64>,
    /// Supervised weight in the classification objective.
    #[arg(long)]
    lambda_cls: Option<f64>,
    /// Entropy-regularization weight inside the unsupervised term.
    #[arg(long)]
    eps_entropy: Option<f64>,
    /// Supervised-contrastive weight in the monitored representation loss.
    #[arg(long)]
    lambda_rep: Option<f64>,
    /// Temperature of the monitored representation loss.
    #[arg(long)]
    rep_temp: Option<f64>,
    /// Which selection branches feed the training pool.
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    /// Shorthand for --ablation baseline: train on all unlabelled data.
    #[arg(long)]
    no_selection: bool,
    #[command(flatten)]
    selection: SelectionFlags,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint whose predictions weight density by class agreement.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Density neighborhood size.
    #[arg(long)]
    k: Option<usize>,
    /// IoU neighborhood size for peak suppression.
    #[arg(long)]
    ks: Option<usize>,
    /// IoU threshold above which overlapping peaks are suppressed.
    #[arg(long)]
    lambda_nmds: Option<f64>,
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    /// Bracketing search tolerance on the class count.
    #[arg(long)]
    brent_tol: Option<f64>,
    /// Search ranges up to this width are swept exhaustively.
    #[arg(long)]
    cutoff: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Predictions file: one integer cluster id per dataset row.
    #[arg(long)]
    pred: PathBuf,
    /// Which rows to score.
    #[arg(long, value_enum)]
    subset: Option<SubsetArg>,
}

/// Selection knobs shared by `select` and `train`.
#[derive(Args)]
struct SelectionFlags {
    /// Confidence threshold on the max predicted probability.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Density neighborhood size.
    #[arg(long)]
    k: Option<usize>,
    /// IoU neighborhood size for peak suppression.
    #[arg(long)]
    ks: Option<usize>,
    /// IoU threshold above which overlapping peaks are suppressed.
    #[arg(long)]
    lambda_nmds: Option<f64>,
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    /// Feed the prior softmax raw pseudo-label counts instead of
    /// frequencies.
    #[arg(long)]
    literal_counts: bool,
    /// Per-class confidence shaping exponent; rarer pseudo-classes admit
    /// samples at lower thresholds.
    #[arg(long)]
    crest_power: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RuleArg {
    /// Keep the denser peak of an overlapping pair.
    KeepMax,
    /// Keep the sparser peak of an overlapping pair.
    KeepMin,
}

impl From<RuleArg> for NmdsRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::KeepMax => NmdsRule::KeepMax,
            RuleArg::KeepMin => NmdsRule::KeepMin,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
enum AblationArg {
    Full,
    NoConf,
    NoDens,
    Baseline,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoConf => Ablation::NoConf,
            AblationArg::NoDens => Ablation::NoDens,
            AblationArg::Baseline => Ablation::Baseline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SubsetArg {
    All,
    Unlabelled,
}

/// Defaults loaded from `--config`: a single flat JSON object.
struct FileConfig(serde_json::Map<String, serde_json::Value>);

impl FileConfig {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self(serde_json::Map::new()));
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("config {} is not valid JSON", path.display()))?;
        match value {
            serde_json::Value::Object(map) => Ok(Self(map)),
            other => bail!(
                "config {} must hold a JSON object, found {other}",
                path.display()
            ),
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> anyhow::Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .with_context(|| format!("config key {key:?} has the wrong type")),
        }
    }
}

/// Flag value if given, else config entry, else the built-in default.
fn resolve<T: DeserializeOwned>(
    flag: Option<T>,
    cfg: &FileConfig,
    key: &str,
    default: T,
) -> anyhow::Result<T> {
    Ok(match flag {
        Some(v) => v,
        None => cfg.get(key)?.unwrap_or(default),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = json!({
                "error": { "kind": error_kind(&err), "message": format!("{err:#}") }
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

/// Stable machine-readable category for the error JSON.
fn error_kind(err: &anyhow::Error) -> &'static str {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Io { .. }) => "io",
        Some(CoreError::Json { .. }) => "json",
        Some(CoreError::Manifest { .. }) => "manifest",
        Some(CoreError::DataSize { .. }) => "data-size",
        Some(CoreError::Label { .. }) => "label",
        Some(CoreError::ZeroNorm { .. }) => "zero-norm",
        Some(CoreError::Dimension { .. }) => "dimension",
        Some(CoreError::InvalidParam { .. }) => "invalid-param",
        Some(CoreError::Cache { .. }) => "cache",
        Some(CoreError::Checkpoint { .. }) => "checkpoint",
        Some(CoreError::Diverged { .. }) => "diverged",
        Some(CoreError::TooFewSamples { .. }) => "too-few-samples",
        None => "cli",
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let seed = resolve(cli.seed, &cfg, "seed", 0)?;
    let threads = resolve(cli.threads, &cfg, "threads", 0)?;
    let out = resolve(cli.out, &cfg, "out", PathBuf::from("."))?;

    if threads > 0 {
        // Ignore the error from racing test harnesses; the pool is global.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    log_line(&out, &format!("start {:?}", std::env::args().collect::<Vec<_>>()))?;

    let result = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(&out, seed, a, &cfg),
        Cmd::Knn(a) => cmd_knn(&out, a, &cfg),
        Cmd::Density(a) => cmd_density(&out, a, &cfg),
        Cmd::Select(a) => cmd_select(&out, a, &cfg),
        Cmd::Train(a) => cmd_train(&out, seed, a, &cfg),
        Cmd::EstimateK(a) => cmd_estimate(&out, a, &cfg),
        Cmd::Eval(a) => cmd_eval(&out, a, &cfg),
    };
    match &result {
        Ok(()) => log_line(&out, "done exit=0")?,
        Err(err) => log_line(&out, &format!("failed: {err:#}"))?,
    }
    result
}

/// Timestamped sidecar log; the only place wall-clock time is recorded.
fn log_line(out: &Path, msg: &str) -> anyhow::Result<()> {
    let path = out.join("run.log");
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    writeln!(file, "{} {msg}", chrono::Utc::now().to_rfc3339())
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut file =
        fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

fn selection_config(flags: &SelectionFlags, cfg: &FileConfig) -> anyhow::Result<SelectionConfig> {
    let d = SelectionConfig::default();
    Ok(SelectionConfig {
        epsilon_conf: resolve(flags.epsilon, cfg, "epsilon", d.epsilon_conf)?,
        k: resolve(flags.k, cfg, "k", d.k)?,
        k_s: resolve(flags.ks, cfg, "ks", d.k_s)?,
        lambda_nmds: resolve(flags.lambda_nmds, cfg, "lambda_nmds", d.lambda_nmds)?,
        nmds_rule: resolve(flags.rule, cfg, "rule", RuleArg::KeepMax)?.into(),
        density_mode: d.density_mode,
        normalize_counts: !flags.literal_counts,
        crest_power: match flags.crest_power {
            Some(p) => Some(p),
            None => cfg.get("crest_power")?,
        },
    })
}

/// Teacher-temperature predictions from a checkpoint, validated against the
/// dataset shape.
fn checkpoint_probs(
    path: &Path,
    embeddings: &EmbeddingSet,
) -> anyhow::Result<(PrototypeSet, ProbMatrix)> {
    let (protos, _) = load_checkpoint(path)?;
    let probs = protos.predict_matrix(embeddings, protos.tau_t)?;
    Ok((protos, probs))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_synth(out: &Path, seed: u64, a: SynthArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let synth = SynthConfig {
        k_classes: resolve(a.classes, cfg, "classes", 20)?,
        dim: resolve(a.dim, cfg, "dim", 32)?,
        imbalance: resolve(a.imbalance, cfg, "imbalance", 10.0)?,
        head_count: resolve(a.head, cfg, "head", 200)?,
        intra_spread: resolve(a.sigma, cfg, "sigma", 0.3)?,
    };
    let frac_old = resolve(a.frac_old, cfg, "frac_old", 0.5)?;
    let frac_labelled = resolve(a.frac_labelled, cfg, "frac_labelled", 0.5)?;
    let stem = resolve(a.stem, cfg, "stem", "synth".to_string())?;

    let (embeddings, truth) = generate_synthetic(&synth, seed)?;
    let info = tailgcd_core::embedding::split_labelled(&truth.labels, frac_old, frac_labelled, seed)?;
    let manifest =
        tailgcd_core::embedding::write_dataset(out, &stem, &embeddings, &info, Some(synth.k_classes))?;

    let counts = ClassCounts::from_labels(truth.labels.as_slice())?;
    println!(
        "{}",
        json!({
            "manifest": manifest,
            "n": embeddings.n(),
            "d": embeddings.d(),
            "counts": counts.counts(),
            "lambda": imbalance_factor(&counts),
            "k_labelled": info.k_labelled(),
        })
    );
    Ok(())
}

fn cmd_knn(out: &Path, a: KnnArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let (embeddings, _) = load_dataset(&a.manifest)?;
    let k = resolve(a.k, cfg, "k", 10)?;
    let graph = build_knn(&embeddings, k)?;

    let n = graph.n();
    let neighbors: Vec<&[u32]> = (0..n).map(|i| graph.neighbors(i)).collect();
    let affinities: Vec<&[f64]> = (0..n).map(|i| graph.affinities(i)).collect();
    let path = out.join("knn.json");
    write_json(
        &path,
        &json!({ "n": n, "k": k, "neighbors": neighbors, "affinities": affinities }),
    )?;
    println!("{}", json!({ "out": path, "n": n, "k": k }));
    Ok(())
}

fn cmd_density(out: &Path, a: DensityArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let (embeddings, _) = load_dataset(&a.manifest)?;
    let k = resolve(a.k, cfg, "k", 10)?;
    let graph = build_knn(&embeddings, k)?;

    let probs = match &a.checkpoint {
        Some(path) => Some(checkpoint_probs(path, &embeddings)?.1),
        None => None,
    };
    let mode = if probs.is_some() {
        DensityMode::ConnectivityAffinity
    } else {
        DensityMode::AffinityOnly
    };
    let density = compute_density(&graph, probs.as_ref(), mode)?;
    let peaks = find_peaks(&density, &graph, a.strict)?;

    let path = out.join("density.json");
    write_json(
        &path,
        &json!({
            "k": k,
            "mode": mode,
            "strict": a.strict,
            "densities": density.densities(),
            "peaks": peaks,
        }),
    )?;
    println!("{}", json!({ "out": path, "peaks": peaks.len() }));
    Ok(())
}

fn cmd_select(out: &Path, a: SelectArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let (embeddings, info) = load_dataset(&a.manifest)?;
    let mut sel_cfg = selection_config(&a.selection, cfg)?;

    let selection: SelectionResult = match &a.checkpoint {
        Some(path) => {
            let (_, probs) = checkpoint_probs(path, &embeddings)?;
            resample_epoch(&embeddings, &info, &probs, 0, &sel_cfg, None)?
        }
        None => {
            // No predictions: the confidence branch and the prior are
            // undefined, so run the density branch alone.
            sel_cfg.density_mode = DensityMode::AffinityOnly;
            let unlabelled = info.unlabelled_ids();
            let graph = build_knn(&embeddings, sel_cfg.k.max(sel_cfg.k_s))?;
            let dens_ids =
                select_density_with_graph(&embeddings, None, &unlabelled, &graph, &sel_cfg)?;
            let union_ids = combine(&[], &dens_ids);
            let fallback = union_ids.is_empty();
            SelectionResult {
                epoch: 0,
                conf_ids: Vec::new(),
                dens_ids,
                union_ids: if fallback { unlabelled } else { union_ids },
                prior: Vec::new(),
                fallback,
            }
        }
    };

    let path = out.join("select.json");
    write_json(&path, &selection)?;
    println!(
        "{}",
        json!({
            "out": path,
            "conf": selection.conf_ids.len(),
            "dens": selection.dens_ids.len(),
            "union": selection.union_ids.len(),
            "fallback": selection.fallback,
        })
    );
    Ok(())
}

fn cmd_train(out: &Path, seed: u64, a: TrainArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let (embeddings, info) = load_dataset(&a.manifest)?;

    let defaults = TrainConfig::default();
    let Some(k_total) = a.k_total.or(cfg.get("k_total")?) else {
        bail!("--k-total is required (take it from prior knowledge or an estimate-k run)");
    };
    let ablation = if a.no_selection {
        Ablation::Baseline
    } else {
        resolve(a.ablation, cfg, "ablation", AblationArg::Full)?.into()
    };
    let train_cfg = TrainConfig {
        k_total,
        epochs: resolve(a.epochs, cfg, "epochs", defaults.epochs)?,
        batch_size: resolve(a.batch, cfg, "batch", defaults.batch_size)?,
        lr: resolve(a.lr, cfg, "lr", defaults.lr)?,
        sigma_view: resolve(a.sigma_view, cfg, "sigma_view", defaults.sigma_view)?,
        tau_s: resolve(a.tau_s, cfg, "tau_s", defaults.tau_s)?,
        tau_t: resolve(a.tau_t, cfg, "tau_t", defaults.tau_t)?,
        weights: tailgcd_core::classifier::LossWeights {
            lambda_cls: resolve(a.lambda_cls, cfg, "lambda_cls", defaults.weights.lambda_cls)?,
            eps_entropy: resolve(a.eps_entropy, cfg, "eps_entropy", defaults.weights.eps_entropy)?,
        },
        lambda_rep: resolve(a.lambda_rep, cfg, "lambda_rep", defaults.lambda_rep)?,
        rep_temperature: resolve(a.rep_temp, cfg, "rep_temp", defaults.rep_temperature)?,
        selection: selection_config(&a.selection, cfg)?,
        ablation,
    };

    let outcome = train(&embeddings, &info, &train_cfg, seed)?;
    for s in &outcome.stats {
        eprintln!(
            "epoch {}: sup {:.4} unsup {:.4} prior {:.4} rep {:.4} pool {}+{}",
            s.epoch, s.loss_sup, s.loss_unsup, s.loss_prior, s.loss_rep, s.s_conf, s.s_dens
        );
    }

    let stats_path = out.join("stats.jsonl");
    let mut stats_file = fs::File::create(&stats_path)
        .with_context(|| format!("cannot create {}", stats_path.display()))?;
    for s in &outcome.stats {
        serde_json::to_writer(&mut stats_file, s)?;
        stats_file.write_all(b"\n")?;
    }

    save_checkpoint(&outcome.prototypes, train_cfg.epochs, &out.join("checkpoint.json"))?;
    write_json(&out.join("selection.json"), &outcome.selection)?;

    let probs = outcome
        .prototypes
        .predict_matrix(&embeddings, outcome.prototypes.tau_s)?;
    let pred_path = out.join("predictions.txt");
    let mut pred_text = String::new();
    for i in 0..embeddings.n() {
        pred_text.push_str(&argmax(probs.row(i)).to_string());
        pred_text.push('\n');
    }
    fs::write(&pred_path, pred_text)
        .with_context(|| format!("cannot write {}", pred_path.display()))?;

    let mut summary = json!({
        "epochs": train_cfg.epochs,
        "checkpoint": out.join("checkpoint.json"),
        "stats": stats_path,
        "predictions": pred_path,
    });
    if let Some(truth) = &info.true_labels {
        // Transductive score on the unlabelled rows; the selected subset is
        // reported through its imbalance ratio.
        let unlabelled = info.unlabelled_ids();
        let position: BTreeMap<usize, usize> =
            unlabelled.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        let pred: Vec<i64> = unlabelled.iter().map(|&i| argmax(probs.row(i)) as i64).collect();
        let truth_rows: Vec<i64> = unlabelled.iter().map(|&i| truth[i]).collect();
        let selected: Option<Vec<usize>> = outcome.selection.as_ref().map(|sel| {
            sel.union_ids
                .iter()
                .filter_map(|i| position.get(i).copied())
                .collect()
        });
        let report = gcd_report(&pred, &truth_rows, &info.old_class_set, selected.as_deref())?;
        write_json(&out.join("report.json"), &report)?;
        summary["acc_all"] = json!(report.acc_all);
        summary["balanced_acc"] = json!(report.balanced_acc);
        summary["report"] = json!(out.join("report.json"));
    }
    println!("{summary}");
    Ok(())
}

fn cmd_estimate(out: &Path, a: EstimateArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let (embeddings, info) = load_dataset(&a.manifest)?;
    let defaults = EstimationConfig::default();
    let est_cfg = EstimationConfig {
        k: resolve(a.k, cfg, "k", defaults.k)?,
        k_s: resolve(a.ks, cfg, "ks", defaults.k_s)?,
        lambda_nmds: resolve(a.lambda_nmds, cfg, "lambda_nmds", defaults.lambda_nmds)?,
        nmds_rule: resolve(a.rule, cfg, "rule", RuleArg::KeepMax)?.into(),
        brent_tol: resolve(a.brent_tol, cfg, "brent_tol", defaults.brent_tol)?,
        exhaustive_cutoff: resolve(a.cutoff, cfg, "cutoff", defaults.exhaustive_cutoff)?,
    };
    let probs = match &a.checkpoint {
        Some(path) => Some(checkpoint_probs(path, &embeddings)?.1),
        None => None,
    };

    let report = estimate_k(&embeddings, &info, probs.as_ref(), &est_cfg)?;

    let probes_path = out.join("probes.csv");
    let mut csv = String::from("k,labelled_acc\n");
    for &(k, acc) in &report.probe_history {
        csv.push_str(&format!("{k},{acc}\n"));
    }
    fs::write(&probes_path, csv)
        .with_context(|| format!("cannot write {}", probes_path.display()))?;

    let report_path = out.join("estimate.json");
    write_json(&report_path, &report)?;
    println!(
        "{}",
        json!({
            "out": report_path,
            "probes": probes_path,
            "k_hat": report.k_hat,
            "lower": report.lower,
            "upper": report.upper,
        })
    );
    Ok(())
}

fn cmd_eval(out: &Path, a: EvalArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let (_, info) = load_dataset(&a.manifest)?;
    let subset = resolve(a.subset, cfg, "subset", SubsetArg::Unlabelled)?;

    let Some(truth) = &info.true_labels else {
        bail!(
            "manifest {} has no true-labels file; nothing to score against",
            a.manifest.display()
        );
    };
    let text = fs::read_to_string(&a.pred)
        .with_context(|| format!("cannot read {}", a.pred.display()))?;
    let pred_all: Vec<i64> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .with_context(|| format!("{}: bad prediction line {l:?}", a.pred.display()))
        })
        .collect::<anyhow::Result<_>>()?;
    if pred_all.len() != info.n() {
        bail!(
            "{}: expected {} predictions, found {}",
            a.pred.display(),
            info.n(),
            pred_all.len()
        );
    }

    let rows: Vec<usize> = match subset {
        SubsetArg::All => (0..info.n()).collect(),
        SubsetArg::Unlabelled => info.unlabelled_ids(),
    };
    let pred: Vec<i64> = rows.iter().map(|&i| pred_all[i]).collect();
    let truth_rows: Vec<i64> = rows.iter().map(|&i| truth[i]).collect();
    let report = gcd_report(&pred, &truth_rows, &info.old_class_set, None)?;

    let path = out.join("eval.json");
    write_json(&path, &report)?;
    println!(
        "{}",
        json!({
            "out": path,
            "acc_all": report.acc_all,
            "balanced_acc": report.balanced_acc,
            "acc_old": report.acc_old,
            "acc_new": report.acc_new,
        })
    );
    Ok(())
}
