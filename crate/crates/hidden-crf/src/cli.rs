//! Command-line interface. [`run`] parses arguments, dispatches and maps
//! errors to exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hidden_crf_core::baselines::{gold_tags, majority_vote_all};
use hidden_crf_core::emission::{FeatureConfig, MlpConfig};
use hidden_crf_core::eval::evaluate_predictions;
use hidden_crf_core::sources::{export_matrix, matrix_correlation, ExportMode};
use hidden_crf_core::synth::{generate, PlantedConfig, SynthConfig};
use hidden_crf_core::trainer::{train_with, DecodeScales, InitVariant};
use hidden_crf_core::{BackboneConfig, Matrix, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::atomic::{read_to_string, write_atomic};
use crate::config::load_train_config;
use crate::error::{CliError, Result};
use crate::model_io::{load_model, save_model};
use crate::parallel::{resolve_threads, Parallel};
use crate::{selfcheck, wsconll};

#[derive(Debug, Parser)]
#[command(name = "hidden-crf", version, about = "Sequence labelling from several noisy annotators")]
pub struct Cli {
    /// Worker threads (default: $HIDDEN_CRF_THREADS, else one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted annotator confusions.
    Synth(SynthArgs),
    /// Majority-vote predictions.
    Mv(MvArgs),
    /// Train a model on weakly labelled data.
    Train(Box<TrainArgs>),
    /// Decode a dataset with a trained model.
    Infer(InferArgs),
    /// Score predictions against gold tags.
    Eval(EvalArgs),
    /// Export learned source matrices.
    InspectSources(InspectArgs),
    /// Check the recursions and gradients against brute force.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator JSON: a full explicit configuration or a compact planted one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Planted confusion matrices (default: `<out>.confusions.json`).
    #[arg(long)]
    pub confusions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV (default: `<out>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Gold-labelled dev set for early stopping.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub early_stopping: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_backbone: Option<f64>,
    #[arg(long)]
    pub lr_crf: Option<f64>,
    #[arg(long)]
    pub lr_weak: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
    /// `log-linear` or `tiny-mlp`, with default sizes.
    #[arg(long)]
    pub backbone: Option<String>,
    #[command(flatten)]
    pub ablations: AblationArgs,
}

#[derive(Debug, Args, Default)]
pub struct AblationArgs {
    #[arg(long)]
    pub no_weak_transition: bool,
    #[arg(long)]
    pub no_crf_transition: bool,
    #[arg(long)]
    pub freeze_source: bool,
    #[arg(long)]
    pub crf_scale: Option<f64>,
    #[arg(long)]
    pub emission_scale: Option<f64>,
    /// `count_ratio`, `uniform_diag` or `weak_classifier`.
    #[arg(long)]
    pub init_variant: Option<String>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub crf_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub emission_scale: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Two-column prediction file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset carrying gold tags.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output JSON (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Confusions JSON as written by `synth`; adds Pearson correlations.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let exec = || Parallel::new(resolve_threads(cli.threads));
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Mv(a) => mv(a),
        Command::Train(a) => train_cmd(a, &exec()),
        Command::Infer(a) => infer(a, &exec()),
        Command::Eval(a) => eval(a),
        Command::InspectSources(a) => inspect(a),
        Command::Selfcheck(a) => selfcheck_cmd(a),
    }
}

/// Planted confusions sidecar, also accepted as an `inspect-sources` reference.
#[derive(Debug, Serialize, Deserialize)]
pub struct ConfusionsFile {
    pub labels: Vec<String>,
    pub sources: Vec<String>,
    /// `[source][truth][emitted]`.
    pub confusions: Vec<Vec<Vec<f64>>>,
}

fn nested(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn from_nested(rows: &[Vec<f64>]) -> Option<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return None;
    }
    Matrix::from_vec(rows.len(), cols, rows.concat())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serialisable");
    out.push(b'\n');
    out
}

fn synth_config(a: &SynthArgs) -> Result<SynthConfig> {
    let mut cfg = match &a.config {
        None => PlantedConfig::default().build()?,
        Some(path) => {
            let text = read_to_string(path)?;
            let json = |source| CliError::Json {
                path: path.clone(),
                source,
            };
            let value: serde_json::Value = serde_json::from_str(&text).map_err(json)?;
            if value.get("confusions").is_some() {
                serde_json::from_value::<SynthConfig>(value).map_err(json)?
            } else {
                serde_json::from_value::<PlantedConfig>(value).map_err(json)?.build()?
            }
        }
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.sentences {
        cfg.n_sentences = n;
    }
    Ok(cfg)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = synth_config(a)?;
    let (ds, confusions) = generate(&cfg)?;
    wsconll::write(&a.out, &ds)?;
    let sidecar = ConfusionsFile {
        labels: ds.space.labels().to_vec(),
        sources: ds.source_names.clone(),
        confusions: confusions.iter().map(nested).collect(),
    };
    let side_path = a.confusions.clone().unwrap_or_else(|| with_suffix(&a.out, ".confusions.json"));
    write_atomic(&side_path, &to_json_bytes(&sidecar))?;
    log::info!(
        "wrote {} sentences, {} sources to {}",
        ds.len(),
        ds.n_sources(),
        a.out.display()
    );
    Ok(())
}

fn mv(a: &MvArgs) -> Result<()> {
    let ds = wsconll::read(&a.data)?;
    let tags = majority_vote_all(&ds);
    let tokens: Vec<&[String]> = ds.sentences.iter().map(|s| s.tokens.as_slice()).collect();
    wsconll::write_predictions(&a.out, &tokens, &tags, &ds.space)
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Applies command-line overrides on top of a loaded or default configuration.
pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field {
                cfg.$field = v;
            }
        )*};
    }
    set!(epochs, batch_size, lr_backbone, lr_crf, lr_weak, rho, seed, pretrain_epochs);
    if a.pretrain_steps.is_some() {
        cfg.pretrain_steps = a.pretrain_steps;
    }
    if a.early_stopping.is_some() {
        cfg.early_stopping_patience = a.early_stopping;
    }
    if let Some(kind) = &a.backbone {
        cfg.backbone = match kind.as_str() {
            "log-linear" => BackboneConfig::LogLinear(FeatureConfig::default()),
            "tiny-mlp" => BackboneConfig::TinyMlp(MlpConfig::default()),
            other => return Err(usage(format!("unknown backbone `{other}`"))),
        };
    }
    let ab = &a.ablations;
    cfg.ablations.no_weak_transition |= ab.no_weak_transition;
    cfg.ablations.no_crf_transition |= ab.no_crf_transition;
    cfg.ablations.freeze_source |= ab.freeze_source;
    if let Some(s) = ab.crf_scale {
        cfg.ablations.crf_scale_at_inference = s;
    }
    if let Some(s) = ab.emission_scale {
        cfg.ablations.emission_scale_at_inference = s;
    }
    if let Some(v) = &ab.init_variant {
        cfg.ablations.init_variant =
            InitVariant::parse(v).ok_or_else(|| usage(format!("unknown init variant `{v}`")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: &TrainArgs, exec: &Parallel) -> Result<()> {
    let cfg = train_config(a)?;
    let ds = wsconll::read(&a.data)?;
    let dev = a.dev.as_deref().map(wsconll::read).transpose()?;
    if cfg.early_stopping_patience.is_some() && dev.is_none() {
        return Err(usage("--early-stopping needs --dev"));
    }
    log::info!(
        "training on {} sentences, {} sources, {} threads",
        ds.len(),
        ds.n_sources(),
        exec.threads()
    );
    let start = Instant::now();
    let mut csv = String::from("epoch,mean_neg_loglik,wall_seconds\n");
    let out = train_with(&ds, dev.as_ref(), &cfg, exec, &mut |epoch, loss| {
        let secs = start.elapsed().as_secs_f64();
        let _ = writeln!(csv, "{epoch},{loss:.17e},{secs:.6}");
        log::info!("epoch {epoch}: mean negative log-likelihood {loss:.6}");
    })?;
    save_model(&out.params, &a.out)?;
    let csv_path = a.loss_csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    write_atomic(&csv_path, csv.as_bytes())
}

fn infer(a: &InferArgs, exec: &Parallel) -> Result<()> {
    let model = load_model(&a.model)?;
    let ds = wsconll::read(&a.data)?;
    if ds.space != model.space {
        return Err(CliError::invalid(&a.data, "label alphabet differs from the model's"));
    }
    let scales = DecodeScales {
        emission: a.emission_scale,
        crf: a.crf_scale,
    };
    let tags = model.decode_all(&ds, scales, exec);
    let tokens: Vec<&[String]> = ds.sentences.iter().map(|s| s.tokens.as_slice()).collect();
    wsconll::write_predictions(&a.out, &tokens, &tags, &ds.space)
}

/// Text table printed by `eval`.
pub fn metrics_table(m: &hidden_crf_core::eval::Metrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16}{:>10}", "metric", "value");
    for (name, v) in [
        ("precision", m.precision),
        ("recall", m.recall),
        ("f1", m.f1),
        ("token_accuracy", m.token_accuracy),
    ] {
        let _ = writeln!(s, "{name:<16}{v:>10.4}");
    }
    for (name, v) in [
        ("sentences", m.n_sentences),
        ("gold_spans", m.n_gold_spans),
        ("pred_spans", m.n_pred_spans),
    ] {
        let _ = writeln!(s, "{name:<16}{v:>10}");
    }
    s
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ds = wsconll::read(&a.gold)?;
    let gold = gold_tags(&ds).map_err(|source| CliError::Core {
        path: a.gold.clone(),
        source,
    })?;
    let pred = wsconll::read_predictions(&a.pred, &ds.space)?;
    if pred.len() != ds.len() {
        return Err(CliError::invalid(
            &a.pred,
            format!("{} sentences, gold has {}", pred.len(), ds.len()),
        ));
    }
    for (i, ((toks, _), s)) in pred.iter().zip(&ds.sentences).enumerate() {
        if *toks != s.tokens {
            return Err(CliError::invalid(
                &a.pred,
                format!("sentence {} has different tokens from the gold file", i + 1),
            ));
        }
    }
    let tags: Vec<Vec<usize>> = pred.into_iter().map(|p| p.1).collect();
    let metrics = evaluate_predictions(&gold, &tags, &ds.space)?;
    print!("{}", metrics_table(&metrics));
    if let Some(path) = &a.json {
        write_atomic(path, &to_json_bytes(&metrics))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SourceExport {
    raw: Vec<Vec<f64>>,
    clamp: Vec<Vec<f64>>,
    softmax: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct Correlations {
    /// Exported form compared with the reference.
    mode: &'static str,
    per_source: BTreeMap<String, f64>,
    mean: f64,
}

#[derive(Debug, Serialize)]
struct InspectReport {
    sources: BTreeMap<String, SourceExport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correlation: Option<Correlations>,
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let sources = model
        .source_names
        .iter()
        .zip(model.sources.iter())
        .map(|(name, m)| {
            (
                name.clone(),
                SourceExport {
                    raw: nested(m),
                    clamp: nested(&export_matrix(m, ExportMode::Clamp)),
                    softmax: nested(&export_matrix(m, ExportMode::Softmax)),
                },
            )
        })
        .collect();
    let correlation = match &a.reference {
        None => None,
        Some(path) => {
            let text = read_to_string(path)?;
            let reference: ConfusionsFile = serde_json::from_str(&text).map_err(|source| CliError::Json {
                path: path.clone(),
                source,
            })?;
            if reference.confusions.len() != model.sources.n_sources() {
                return Err(CliError::invalid(
                    path,
                    format!(
                        "{} reference matrices for {} sources",
                        reference.confusions.len(),
                        model.sources.n_sources()
                    ),
                ));
            }
            let mut per_source = BTreeMap::new();
            for ((name, est), rows) in model.source_names.iter().zip(model.sources.iter()).zip(&reference.confusions) {
                let r = from_nested(rows).ok_or_else(|| CliError::invalid(path, "ragged matrix"))?;
                let corr = matrix_correlation(&export_matrix(est, ExportMode::Softmax), &r)
                    .map_err(|source| CliError::Core {
                        path: path.clone(),
                        source,
                    })?;
                per_source.insert(name.clone(), corr);
            }
            let mean = per_source.values().sum::<f64>() / per_source.len().max(1) as f64;
            Some(Correlations {
                mode: "softmax",
                per_source,
                mean,
            })
        }
    };
    let bytes = to_json_bytes(&InspectReport { sources, correlation });
    match &a.out {
        Some(p) => write_atomic(p, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn selfcheck_cmd(a: &SelfcheckArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be positive"));
    }
    let reports = selfcheck::run_all(a.n, a.seed);
    for r in &reports {
        println!("{r}");
    }
    if reports.iter().all(selfcheck::SuiteReport::passed) {
        Ok(())
    } else {
        Err(CliError::Failed("selfcheck failed".into()))
    }
}
