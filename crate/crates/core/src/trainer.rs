//! End-to-end training: majority-vote labels, supervised pre-training of the
//! classifier, source-matrix initialisation, then mini-batch ascent on the
//! marginal log-likelihood with separate learning rates for the backbone, the
//! transition matrix and the source matrices.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::majority_vote_all;
use crate::chain::{self, ChainScores, CrfTransition, WeakSourceMatrices};
use crate::emission::{Backbone, BackboneConfig, BackboneGrads};
use crate::optim::{Optimizer, OptimizerKind};
use crate::sources::{diagonal_init, init_weak_matrices, SourceInitConfig};
use crate::{Error, LabelSpace, Matrix, Result, Scheme, Sentence, WeakDataset};

/// Runs a per-sentence computation for indices `0..n`, returning results in index order.
///
/// Implementations may evaluate in parallel. Results are always reduced by
/// the caller in index order, so training is bit-for-bit independent of the
/// implementation.
pub trait SentenceMap: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Single-threaded [`SentenceMap`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl SentenceMap for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// How the source matrices (and the classifier) are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitVariant {
    /// Count ratios against majority vote, scaled by `rho`.
    #[default]
    CountRatio,
    /// Diagonal `1/K`, off-diagonal `0`.
    UniformDiag,
    /// Count-ratio source init, but classifier pre-training cut to `weak_classifier_steps` updates.
    WeakClassifier,
}

impl InitVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "count_ratio" | "count-ratio" => Some(InitVariant::CountRatio),
            "uniform_diag" | "uniform-diag" => Some(InitVariant::UniformDiag),
            "weak_classifier" | "weak-classifier" => Some(InitVariant::WeakClassifier),
            _ => None,
        }
    }
}

/// Component ablations and inference-time rescaling.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Ablations {
    /// Drop the source matrices: train a plain CRF on majority-vote tags.
    pub no_weak_transition: bool,
    /// Keep the transition matrix at zero during training and decoding.
    pub no_crf_transition: bool,
    /// Never update the source matrices after initialisation.
    pub freeze_source: bool,
    /// Multiplier on transition scores at decode time.
    pub crf_scale_at_inference: f64,
    /// Multiplier on emission scores at decode time.
    pub emission_scale_at_inference: f64,
    pub init_variant: InitVariant,
    /// Pre-training budget under [`InitVariant::WeakClassifier`].
    pub weak_classifier_steps: usize,
}

impl Default for Ablations {
    fn default() -> Self {
        Ablations {
            no_weak_transition: false,
            no_crf_transition: false,
            freeze_source: false,
            crf_scale_at_inference: 1.0,
            emission_scale_at_inference: 1.0,
            init_variant: InitVariant::CountRatio,
            weak_classifier_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_crf: f64,
    pub lr_weak: f64,
    pub rho: f64,
    /// Additive pseudo-count in the source initialisation.
    pub init_smoothing: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Supervised epochs on majority-vote tags before the latent objective.
    pub pretrain_epochs: usize,
    /// When set, pre-training stops after this many updates instead.
    pub pretrain_steps: Option<usize>,
    /// Stop when the dev metric has not improved for this many epochs (needs a dev set).
    pub early_stopping_patience: Option<usize>,
    pub backbone: BackboneConfig,
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr_backbone: 1e-2,
            lr_crf: 1e-2,
            lr_weak: 1e-3,
            rho: 2.0,
            init_smoothing: 0.0,
            optimizer: OptimizerKind::default(),
            seed: 0,
            pretrain_epochs: 1,
            pretrain_steps: None,
            early_stopping_patience: None,
            backbone: BackboneConfig::default(),
            ablations: Ablations::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        for (name, lr) in [
            ("lr_backbone", self.lr_backbone),
            ("lr_crf", self.lr_crf),
            ("lr_weak", self.lr_weak),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {lr}")));
            }
        }
        if self.lr_backbone == 0.0 || self.lr_crf == 0.0 {
            return Err(Error::Config("lr_backbone and lr_crf must be positive".into()));
        }
        for (name, s) in [
            ("crf_scale_at_inference", self.ablations.crf_scale_at_inference),
            ("emission_scale_at_inference", self.ablations.emission_scale_at_inference),
        ] {
            if !s.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps.is_nan() || eps <= 0.0 {
                return Err(Error::Config("invalid adam hyperparameters".into()));
            }
        }
        self.source_init().validate()?;
        self.backbone.validate()?;
        if self.lr_weak > self.lr_crf {
            log::warn!(
                "lr_weak ({}) exceeds lr_crf ({}); the source matrices usually need the smaller rate",
                self.lr_weak,
                self.lr_crf
            );
        }
        Ok(())
    }

    pub fn source_init(&self) -> SourceInitConfig {
        SourceInitConfig {
            rho: self.rho,
            smoothing: self.init_smoothing,
        }
    }

    pub fn decode_scales(&self) -> DecodeScales {
        DecodeScales {
            emission: self.ablations.emission_scale_at_inference,
            crf: self.ablations.crf_scale_at_inference,
        }
    }
}

/// Multipliers applied to emission and transition scores before Viterbi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeScales {
    pub emission: f64,
    pub crf: f64,
}

impl Default for DecodeScales {
    fn default() -> Self {
        DecodeScales {
            emission: 1.0,
            crf: 1.0,
        }
    }
}

/// Everything needed to score and decode: backbone, transitions, source matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub backbone: Backbone,
    pub transition: CrfTransition,
    pub sources: WeakSourceMatrices,
    pub space: LabelSpace,
    pub source_names: Vec<String>,
}

/// Gradients matching [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub backbone: BackboneGrads,
    pub transition: Matrix,
    pub sources: Vec<Matrix>,
}

impl ModelParams {
    /// Zero transitions and source matrices around the given backbone.
    pub fn new(backbone: Backbone, space: LabelSpace, source_names: Vec<String>) -> Result<Self> {
        let k = space.len();
        if backbone.n_labels() != k {
            return Err(Error::Shape(format!(
                "backbone has {} outputs for {k} labels",
                backbone.n_labels()
            )));
        }
        let j = source_names.len();
        Ok(ModelParams {
            backbone,
            transition: CrfTransition::zeros(k),
            sources: WeakSourceMatrices::zeros(j, k),
            space,
            source_names,
        })
    }

    /// Shape consistency between every part.
    pub fn validate(&self) -> Result<()> {
        let k = self.space.len();
        if self.backbone.n_labels() != k || self.transition.matrix().shape() != (k + 1, k) {
            return Err(Error::Shape(format!("parameters do not match {k} labels")));
        }
        if self.sources.n_sources() != self.source_names.len() {
            return Err(Error::Shape(format!(
                "{} source matrices for {} sources",
                self.sources.n_sources(),
                self.source_names.len()
            )));
        }
        WeakSourceMatrices::from_matrices(self.sources.0.clone(), k).map(|_| ())
    }

    pub fn zero_grads(&self) -> ParamGrads {
        let k = self.space.len();
        ParamGrads {
            backbone: self.backbone.zero_grads(),
            transition: Matrix::zeros(k + 1, k),
            sources: alloc::vec![Matrix::zeros(k, k); self.sources.n_sources()],
        }
    }

    /// Marginal log-likelihood of one sentence's weak labels, with gradients
    /// for every parameter (backbone included).
    pub fn sentence_loglik_and_grad(&self, sentence: &Sentence) -> Result<(f64, ParamGrads)> {
        let e = self.backbone.emit(&sentence.tokens);
        let r = chain::loglik_and_grad(&e, &self.transition, &self.sources, &sentence.weak)?;
        let mut backbone = self.backbone.zero_grads();
        self.backbone.emit_backward(&sentence.tokens, &r.d_emission, &mut backbone);
        Ok((
            r.loglik,
            ParamGrads {
                backbone,
                transition: r.d_transition,
                sources: r.d_sources,
            },
        ))
    }

    /// Marginal log-likelihood of one sentence without gradients.
    pub fn sentence_loglik(&self, sentence: &Sentence) -> f64 {
        let e = self.backbone.emit(&sentence.tokens);
        let scores = ChainScores::new(&e, &self.transition, &self.sources, &sentence.weak);
        scores.clamped_logsum() - scores.free_log_z()
    }

    /// Viterbi tags from the classifier alone; the source matrices are not used.
    pub fn decode(&self, tokens: &[String], scales: DecodeScales) -> Vec<usize> {
        let mut e = self.backbone.emit(tokens);
        if scales.emission != 1.0 {
            e.scale(scales.emission);
        }
        if scales.crf != 1.0 {
            chain::viterbi(&e, &self.transition.scaled(scales.crf)).0
        } else {
            chain::viterbi(&e, &self.transition).0
        }
    }

    pub fn decode_all<M: SentenceMap>(&self, dataset: &WeakDataset, scales: DecodeScales, exec: &M) -> Vec<Vec<usize>> {
        exec.map(dataset.len(), |i| self.decode(&dataset.sentences[i].tokens, scales))
    }
}

/// Trained parameters plus the per-epoch objective.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    /// Entry 0 is the objective after initialisation; entry `e` after epoch `e`.
    /// Values are the mean negative log-likelihood over all sentences.
    pub history: Vec<f64>,
    /// Majority-vote tags used for initialisation.
    pub mv_labels: Vec<Vec<usize>>,
}

/// Trains with the full pipeline. Deterministic for a given `cfg.seed`.
pub fn train<M: SentenceMap>(dataset: &WeakDataset, cfg: &TrainConfig, exec: &M) -> Result<TrainOutput> {
    train_with(dataset, None, cfg, exec, &mut |_, _| {})
}

/// As [`train`], with an optional dev set for early stopping and a callback
/// invoked with `(epoch, mean_neg_loglik)` after initialisation (epoch 0) and
/// after every epoch.
pub fn train_with<M: SentenceMap>(
    dataset: &WeakDataset,
    dev: Option<&WeakDataset>,
    cfg: &TrainConfig,
    exec: &M,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutput> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some(d) = dev {
        crate::baselines::gold_tags(d)?;
    }
    let k = dataset.space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mv_labels = majority_vote_all(dataset);
    let backbone = Backbone::init(&cfg.backbone, k, &mut rng);
    let mut params = ModelParams::new(backbone, dataset.space.clone(), dataset.source_names.clone())?;
    let ab = &cfg.ablations;

    if ab.no_weak_transition {
        let budget = cfg.pretrain_epochs + cfg.epochs;
        let history = supervised_loop(
            &mut params,
            dataset,
            &mv_labels,
            cfg,
            Budget::Epochs(budget),
            &mut rng,
            exec,
            dev,
            on_epoch,
        )?;
        params.sources = init_weak_matrices(dataset, &mv_labels, &cfg.source_init())?;
        return Ok(TrainOutput {
            params,
            history,
            mv_labels,
        });
    }

    let pretrain = match (ab.init_variant, cfg.pretrain_steps) {
        (InitVariant::WeakClassifier, Some(s)) => Budget::Steps(s.min(ab.weak_classifier_steps)),
        (InitVariant::WeakClassifier, None) => Budget::Steps(ab.weak_classifier_steps),
        (_, Some(s)) => Budget::Steps(s),
        (_, None) => Budget::Epochs(cfg.pretrain_epochs),
    };
    supervised_loop(
        &mut params,
        dataset,
        &mv_labels,
        cfg,
        pretrain,
        &mut rng,
        exec,
        None,
        &mut |_, _| {},
    )?;

    params.sources = match ab.init_variant {
        InitVariant::UniformDiag => diagonal_init(dataset.n_sources(), k),
        InitVariant::CountRatio | InitVariant::WeakClassifier => {
            init_weak_matrices(dataset, &mv_labels, &cfg.source_init())?
        }
    };

    let history = latent_loop(&mut params, dataset, cfg, &mut rng, exec, dev, on_epoch)?;
    Ok(TrainOutput {
        params,
        history,
        mv_labels,
    })
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Budget {
    Epochs(usize),
    Steps(usize),
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Tracks the best dev score and decides when to stop.
struct EarlyStop {
    patience: usize,
    best: f64,
    best_params: Option<ModelParams>,
    since_best: usize,
}

impl EarlyStop {
    fn new(cfg: &TrainConfig, dev: Option<&WeakDataset>) -> Option<Self> {
        match (cfg.early_stopping_patience, dev) {
            (Some(patience), Some(_)) => Some(EarlyStop {
                patience,
                best: f64::NEG_INFINITY,
                best_params: None,
                since_best: 0,
            }),
            _ => None,
        }
    }

    /// Returns true when training should stop.
    fn update<M: SentenceMap>(&mut self, params: &ModelParams, dev: &WeakDataset, cfg: &TrainConfig, exec: &M) -> bool {
        let preds = params.decode_all(dev, cfg.decode_scales(), exec);
        let gold: Vec<Vec<usize>> = dev
            .sentences
            .iter()
            .map(|s| s.gold.clone().unwrap_or_default())
            .collect();
        let score = match dev.space.scheme() {
            Scheme::Bio => crate::eval::span_prf(&gold, &preds, &dev.space).map(|m| m.f1),
            Scheme::Free => crate::eval::token_accuracy(&gold, &preds),
        }
        .unwrap_or(f64::NEG_INFINITY);
        if score > self.best {
            self.best = score;
            self.best_params = Some(params.clone());
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }
}

/// Plain-CRF training of backbone and transitions on fixed tags.
#[allow(clippy::too_many_arguments)]
pub(crate) fn supervised_loop<M: SentenceMap>(
    params: &mut ModelParams,
    dataset: &WeakDataset,
    tags: &[Vec<usize>],
    cfg: &TrainConfig,
    budget: Budget,
    rng: &mut ChaCha8Rng,
    exec: &M,
    dev: Option<&WeakDataset>,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let no_crf = cfg.ablations.no_crf_transition;
    let objective = |p: &ModelParams| -> Result<f64> {
        let lls = exec.map(dataset.len(), |i| {
            let s = &dataset.sentences[i];
            let e = p.backbone.emit(&s.tokens);
            chain::path_score(&e, &p.transition, &tags[i]) - chain::crf_log_z(&e, &p.transition)
        });
        mean_neg(&lls)
    };
    let mut history = alloc::vec![objective(params)?];
    on_epoch(0, history[0]);
    let mut stopper = EarlyStop::new(cfg, dev);
    let mut opt = Optimizer::new(cfg.optimizer);
    let (max_epochs, max_steps) = match budget {
        Budget::Epochs(e) => (e, usize::MAX),
        Budget::Steps(s) => (usize::MAX, s),
    };
    let mut steps = 0;
    let mut epoch = 0;
    while epoch < max_epochs && steps < max_steps {
        epoch += 1;
        for batch in batches(dataset.len(), cfg.batch_size, rng) {
            if steps >= max_steps {
                break;
            }
            let results = exec.map(batch.len(), |b| {
                let i = batch[b];
                let s = &dataset.sentences[i];
                let e = params.backbone.emit(&s.tokens);
                chain::crf_loglik_and_grad(&e, &params.transition, &tags[i])
            });
            let mut grads = params.zero_grads();
            for (b, r) in results.into_iter().enumerate() {
                let i = batch[b];
                let (ll, d_e, d_t) = r.map_err(|_| Error::NonFinite { sentence: i })?;
                if !ll.is_finite() {
                    return Err(Error::NonFinite { sentence: i });
                }
                params
                    .backbone
                    .emit_backward(&dataset.sentences[i].tokens, &d_e, &mut grads.backbone);
                grads.transition.add_scaled(&d_t, 1.0);
            }
            let scale = -1.0 / batch.len() as f64;
            grads.backbone.scale(scale);
            grads.transition.scale(scale);
            apply(&mut opt, params, &grads, cfg, !no_crf, false);
            steps += 1;
        }
        if matches!(budget, Budget::Epochs(_)) {
            let loss = objective(params)?;
            history.push(loss);
            on_epoch(epoch, loss);
            if let (Some(st), Some(d)) = (stopper.as_mut(), dev) {
                if st.update(params, d, cfg, exec) {
                    break;
                }
            }
        }
    }
    if let Some(best) = stopper.and_then(|s| s.best_params) {
        *params = best;
    }
    Ok(history)
}

fn latent_loop<M: SentenceMap>(
    params: &mut ModelParams,
    dataset: &WeakDataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    exec: &M,
    dev: Option<&WeakDataset>,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let ab = &cfg.ablations;
    let update_sources = !ab.freeze_source && cfg.lr_weak > 0.0;
    let objective = |p: &ModelParams| -> Result<f64> {
        let lls = exec.map(dataset.len(), |i| p.sentence_loglik(&dataset.sentences[i]));
        mean_neg(&lls)
    };
    let mut history = alloc::vec![objective(params)?];
    on_epoch(0, history[0]);
    let mut stopper = EarlyStop::new(cfg, dev);
    let mut opt = Optimizer::new(cfg.optimizer);
    for epoch in 1..=cfg.epochs {
        for batch in batches(dataset.len(), cfg.batch_size, rng) {
            let results = exec.map(batch.len(), |b| {
                let s = &dataset.sentences[batch[b]];
                let e = params.backbone.emit(&s.tokens);
                chain::loglik_and_grad(&e, &params.transition, &params.sources, &s.weak)
            });
            let mut grads = params.zero_grads();
            for (b, r) in results.into_iter().enumerate() {
                let i = batch[b];
                let r = r.map_err(|_| Error::NonFinite { sentence: i })?;
                params
                    .backbone
                    .emit_backward(&dataset.sentences[i].tokens, &r.d_emission, &mut grads.backbone);
                grads.transition.add_scaled(&r.d_transition, 1.0);
                for (g, d) in grads.sources.iter_mut().zip(&r.d_sources) {
                    g.add_scaled(d, 1.0);
                }
            }
            let scale = -1.0 / batch.len() as f64;
            grads.backbone.scale(scale);
            grads.transition.scale(scale);
            grads.sources.iter_mut().for_each(|g| g.scale(scale));
            apply(&mut opt, params, &grads, cfg, !ab.no_crf_transition, update_sources);
        }
        let loss = objective(params)?;
        history.push(loss);
        on_epoch(epoch, loss);
        if let (Some(st), Some(d)) = (stopper.as_mut(), dev) {
            if st.update(params, d, cfg, exec) {
                break;
            }
        }
    }
    if let Some(best) = stopper.and_then(|s| s.best_params) {
        *params = best;
    }
    Ok(history)
}

/// Optimiser slots: backbone blocks first, then the transition matrix, then one per source.
fn apply(
    opt: &mut Optimizer,
    params: &mut ModelParams,
    grads: &ParamGrads,
    cfg: &TrainConfig,
    update_crf: bool,
    update_sources: bool,
) {
    let mut slot = 0;
    for (p, g) in params.backbone.blocks_mut().into_iter().zip(&grads.backbone.blocks) {
        opt.step(slot, p, g, cfg.lr_backbone);
        slot += 1;
    }
    if update_crf {
        opt.step(slot, &mut params.transition.0, &grads.transition, cfg.lr_crf);
    }
    slot += 1;
    if update_sources {
        for (p, g) in params.sources.0.iter_mut().zip(&grads.sources) {
            opt.step(slot, p, g, cfg.lr_weak);
            slot += 1;
        }
    }
}

/// Mean negative log-likelihood; the index of the first non-finite term is reported.
fn mean_neg(lls: &[f64]) -> Result<f64> {
    if let Some(i) = lls.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { sentence: i });
    }
    Ok(-lls.iter().sum::<f64>() / lls.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad_batch = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(bad_batch.validate().is_err());
        let bad_rho = TrainConfig {
            rho: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad_rho.validate().is_err());
        let bad_lr = TrainConfig {
            lr_crf: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad_lr.validate().is_err());
        let zero_weak = TrainConfig {
            lr_weak: 0.0,
            ..TrainConfig::default()
        };
        assert!(zero_weak.validate().is_ok());
    }

    #[test]
    fn init_variant_names() {
        assert_eq!(InitVariant::parse("uniform_diag"), Some(InitVariant::UniformDiag));
        assert_eq!(InitVariant::parse("weak-classifier"), Some(InitVariant::WeakClassifier));
        assert_eq!(InitVariant::parse("x"), None);
    }
}
