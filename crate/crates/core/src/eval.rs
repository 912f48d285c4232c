//! Token accuracy and strict, micro-averaged span precision/recall/F1.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::baselines::gold_tags;
use crate::trainer::{DecodeScales, ModelParams, SentenceMap};
use crate::{Error, LabelSpace, Result, WeakDataset};

/// Counts and ratios for strict span matching (type and both boundaries).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_gold: usize,
    pub n_pred: usize,
    pub n_matched: usize,
}

impl SpanScores {
    /// Ratios from pooled counts. With no gold and no predicted spans every
    /// ratio is 1; otherwise an empty denominator gives 0.
    pub fn from_counts(n_gold: usize, n_pred: usize, n_matched: usize) -> Self {
        let (precision, recall) = if n_gold == 0 && n_pred == 0 {
            (1.0, 1.0)
        } else {
            (ratio(n_matched, n_pred), ratio(n_matched, n_gold))
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SpanScores {
            precision,
            recall,
            f1,
            n_gold,
            n_pred,
            n_matched,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_lengths(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Shape(format!(
                "sentence {i}: {} gold tags vs {} predicted",
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// Span counts pooled over the corpus, overall and per entity type.
fn span_counts(
    gold: &[Vec<usize>],
    pred: &[Vec<usize>],
    space: &LabelSpace,
) -> BTreeMap<String, (usize, usize, usize)> {
    let mut by_type: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let gs = space.extract_spans(g);
        let ps = space.extract_spans(p);
        for s in &gs {
            by_type.entry(s.entity_type.clone()).or_default().0 += 1;
        }
        for s in &ps {
            let e = by_type.entry(s.entity_type.clone()).or_default();
            e.1 += 1;
            if gs.contains(s) {
                e.2 += 1;
            }
        }
    }
    by_type
}

/// Strict span P/R/F1, micro-averaged over all sentences.
pub fn span_prf(gold: &[Vec<usize>], pred: &[Vec<usize>], space: &LabelSpace) -> Result<SpanScores> {
    check_lengths(gold, pred)?;
    let (g, p, m) = span_counts(gold, pred, space)
        .values()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    Ok(SpanScores::from_counts(g, p, m))
}

/// Fraction of tokens whose tags agree, over the whole corpus. An empty corpus scores 1.
pub fn token_accuracy(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<f64> {
    check_lengths(gold, pred)?;
    let total: usize = gold.iter().map(Vec::len).sum();
    if total == 0 {
        return Ok(1.0);
    }
    let hits: usize = gold
        .iter()
        .zip(pred)
        .map(|(g, p)| g.iter().zip(p).filter(|(a, b)| a == b).count())
        .sum();
    Ok(hits as f64 / total as f64)
}

/// Full evaluation report.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub token_accuracy: f64,
    pub n_sentences: usize,
    pub n_gold_spans: usize,
    pub n_pred_spans: usize,
    /// Per entity type scores (BIO scheme only).
    pub per_type: BTreeMap<String, SpanScores>,
}

pub fn evaluate_predictions(gold: &[Vec<usize>], pred: &[Vec<usize>], space: &LabelSpace) -> Result<Metrics> {
    check_lengths(gold, pred)?;
    let counts = span_counts(gold, pred, space);
    let (g, p, m) = counts
        .values()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    let overall = SpanScores::from_counts(g, p, m);
    Ok(Metrics {
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        token_accuracy: token_accuracy(gold, pred)?,
        n_sentences: gold.len(),
        n_gold_spans: g,
        n_pred_spans: p,
        per_type: counts
            .into_iter()
            .map(|(ty, (g, p, m))| (ty, SpanScores::from_counts(g, p, m)))
            .collect(),
    })
}

/// Decodes every sentence with the classifier and scores it against gold.
pub fn evaluate_inference<M: SentenceMap>(
    model: &ModelParams,
    dataset: &WeakDataset,
    scales: DecodeScales,
    exec: &M,
) -> Result<Metrics> {
    let gold = gold_tags(dataset)?;
    let pred = model.decode_all(dataset, scales, exec);
    evaluate_predictions(&gold, &pred, &dataset.space)
}
