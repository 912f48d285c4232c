//! Majority voting and the two-stage "vote, then train a CRF" baseline.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::trainer::{supervised_loop, Budget, ModelParams, SentenceMap, TrainConfig};
use crate::{Backbone, Error, LabelSpace, Result, Sentence, WeakDataset};

/// Per-token mode of the observed weak labels.
///
/// Ties go to the lowest label index; a token nobody annotated gets the
/// space's fallback label (`O` under BIO).
pub fn majority_vote(sentence: &Sentence, space: &LabelSpace) -> Vec<usize> {
    let k = space.len();
    let mut votes = vec![0usize; k];
    (0..sentence.len())
        .map(|l| {
            votes.iter_mut().for_each(|v| *v = 0);
            let mut any = false;
            if sentence.weak.n_sources() > 0 {
                for (_, y) in sentence.weak.observed(l) {
                    votes[y] += 1;
                    any = true;
                }
            }
            if !any {
                return space.fallback_label();
            }
            let mut best = 0;
            for (c, &v) in votes.iter().enumerate().skip(1) {
                if v > votes[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn majority_vote_all(dataset: &WeakDataset) -> Vec<Vec<usize>> {
    dataset
        .sentences
        .iter()
        .map(|s| majority_vote(s, &dataset.space))
        .collect()
}

/// Trains backbone and transitions as a plain CRF on fixed tags for
/// `cfg.epochs` epochs. Source matrices in the result are zero.
///
/// Returns the parameters and the mean negative log-likelihood after
/// initialisation and after each epoch.
pub fn train_supervised<M: SentenceMap>(
    dataset: &WeakDataset,
    tags: &[Vec<usize>],
    cfg: &TrainConfig,
    exec: &M,
) -> Result<(ModelParams, Vec<f64>)> {
    cfg.validate()?;
    if tags.len() != dataset.len() {
        return Err(Error::Shape(alloc::format!(
            "{} tag sequences for {} sentences",
            tags.len(),
            dataset.len()
        )));
    }
    let k = dataset.space.len();
    for (i, (t, s)) in tags.iter().zip(&dataset.sentences).enumerate() {
        if t.len() != s.len() || t.iter().any(|&x| x >= k) {
            return Err(Error::Shape(alloc::format!("invalid tags for sentence {i}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let backbone = Backbone::init(&cfg.backbone, k, &mut rng);
    let mut params = ModelParams::new(backbone, dataset.space.clone(), dataset.source_names.clone())?;
    let history = supervised_loop(
        &mut params,
        dataset,
        tags,
        cfg,
        Budget::Epochs(cfg.epochs),
        &mut rng,
        exec,
        None,
        &mut |_, _| {},
    )?;
    Ok((params, history))
}

/// Gold tags of every sentence, or an error naming the first sentence without them.
pub fn gold_tags(dataset: &WeakDataset) -> Result<Vec<Vec<usize>>> {
    dataset
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| s.gold.clone().ok_or(Error::MissingGold(i)))
        .collect()
}
