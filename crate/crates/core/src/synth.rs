//! Synthetic weak-supervision corpora with known truth and known annotator
//! confusion matrices.
//!
//! Truth tags follow a first-order Markov chain, tokens are drawn from a
//! per-label distribution over a symbolic vocabulary, and every (token,
//! source) cell is either dropped with the source's missing rate or drawn
//! from that source's confusion row for the true tag.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Sentence, WeakGrid};
use crate::{Error, LabelSpace, Matrix, Result, Scheme, WeakDataset};

const ROW_SUM_TOL: f64 = 1e-12;

/// Fully explicit generator parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthConfig {
    pub n_labels: usize,
    pub n_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Distribution of the first tag.
    pub initial: Vec<f64>,
    /// `K × K` row-stochastic tag transitions.
    pub transition: Matrix,
    /// `K × V` row-stochastic token distributions.
    pub emission: Matrix,
    /// One `K × K` row-stochastic matrix per source: `[truth][emitted]`.
    pub confusions: Vec<Matrix>,
    /// Per-source probability that a cell is left unannotated.
    pub missing_rates: Vec<f64>,
    pub seed: u64,
}

/// Compact description from which a [`SynthConfig`] is derived.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PlantedConfig {
    pub n_labels: usize,
    pub n_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Diagonal of each source's confusion matrix; one entry per source.
    pub accuracies: Vec<f64>,
    pub missing_rate: f64,
    /// Probability that the truth chain keeps its current tag.
    pub self_transition: f64,
    pub vocab_size: usize,
    /// Symbols in each label's preferred block.
    pub block_size: usize,
    /// Probability mass a label puts on its own block; the rest is spread over the whole vocabulary.
    pub block_mass: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_labels: 5,
            n_sentences: 2000,
            min_len: 5,
            max_len: 15,
            accuracies: evenly_spaced(0.55, 0.90, 5),
            missing_rate: 0.3,
            self_transition: 0.7,
            vocab_size: 200,
            block_size: 20,
            block_mass: 0.9,
            seed: 0,
        }
    }
}

/// `n` values from `lo` to `hi` inclusive.
pub fn evenly_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl PlantedConfig {
    /// Builds explicit matrices. Off-diagonal confusion mass is split by a
    /// flat Dirichlet draw seeded from `seed`, so sources differ in which
    /// mistakes they make, not only in how often.
    pub fn build(&self) -> Result<SynthConfig> {
        let k = self.n_labels;
        if k < 2 {
            return Err(Error::Config("need at least 2 labels".into()));
        }
        if self.accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("accuracies must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.self_transition) || !(0.0..=1.0).contains(&self.block_mass) {
            return Err(Error::Config("self_transition and block_mass must lie in [0, 1]".into()));
        }
        if self.block_size == 0 || self.block_size * k > self.vocab_size {
            return Err(Error::Config(format!(
                "{k} blocks of {} symbols do not fit a vocabulary of {}",
                self.block_size, self.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);

        let mut transition = Matrix::filled(k, k, (1.0 - self.self_transition) / (k - 1) as f64);
        for i in 0..k {
            transition[(i, i)] = self.self_transition;
        }
        let v = self.vocab_size;
        let mut emission = Matrix::filled(k, v, (1.0 - self.block_mass) / v as f64);
        for label in 0..k {
            for sym in label * self.block_size..(label + 1) * self.block_size {
                emission[(label, sym)] += self.block_mass / self.block_size as f64;
            }
        }
        let confusions: Vec<Matrix> = self
            .accuracies
            .iter()
            .map(|&acc| {
                let mut c = Matrix::zeros(k, k);
                for t in 0..k {
                    let draws: Vec<f64> = (0..k - 1)
                        .map(|_| -libm::log(1.0 - rng.gen::<f64>()))
                        .collect();
                    let total: f64 = draws.iter().sum();
                    let mut it = draws.iter();
                    for y in 0..k {
                        c[(t, y)] = if y == t {
                            acc
                        } else {
                            (1.0 - acc) * it.next().unwrap() / total
                        };
                    }
                }
                c
            })
            .collect();
        let cfg = SynthConfig {
            n_labels: k,
            n_sentences: self.n_sentences,
            min_len: self.min_len,
            max_len: self.max_len,
            initial: vec![1.0 / k as f64; k],
            transition: normalise_rows(transition),
            emission: normalise_rows(emission),
            confusions: confusions.into_iter().map(normalise_rows).collect(),
            missing_rates: vec![self.missing_rate; self.accuracies.len()],
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn normalise_rows(mut m: Matrix) -> Matrix {
    for r in 0..m.rows() {
        let s: f64 = m.row(r).iter().sum();
        m.row_mut(r).iter_mut().for_each(|x| *x /= s);
    }
    m
}

fn check_stochastic(name: &str, m: &Matrix) -> Result<()> {
    for i in 0..m.rows() {
        let row = m.row(i);
        let s: f64 = row.iter().sum();
        if row.iter().any(|p| p.is_nan() || *p < 0.0) || (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Config(format!(
                "{name} row {i} is not a probability distribution (sum {s})"
            )));
        }
    }
    Ok(())
}

impl SynthConfig {
    pub fn n_sources(&self) -> usize {
        self.confusions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_labels;
        if k < 2 {
            return Err(Error::Config("need at least 2 labels".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if self.initial.len() != k || self.transition.shape() != (k, k) || self.emission.rows() != k {
            return Err(Error::Config("truth process shapes do not match n_labels".into()));
        }
        if self.emission.cols() == 0 {
            return Err(Error::Config("empty vocabulary".into()));
        }
        let initial = Matrix::from_vec(1, k, self.initial.clone()).expect("length checked");
        check_stochastic("initial", &initial)?;
        check_stochastic("transition", &self.transition)?;
        check_stochastic("emission", &self.emission)?;
        for (j, c) in self.confusions.iter().enumerate() {
            if c.shape() != (k, k) {
                return Err(Error::Config(format!("confusion {j} has wrong shape")));
            }
            check_stochastic(&format!("confusion {j}"), c)?;
        }
        if self.missing_rates.len() != self.confusions.len() {
            return Err(Error::Config("one missing rate per source required".into()));
        }
        if self.missing_rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("missing rates must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn label_space(&self) -> LabelSpace {
        let names: Vec<String> = (0..self.n_labels).map(|i| format!("L{i}")).collect();
        LabelSpace::new(&names, Scheme::Free).expect("generated names are valid")
    }

    pub fn source_names(&self) -> Vec<String> {
        (0..self.n_sources()).map(|j| format!("src{j}")).collect()
    }
}

fn sample(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative total: take the last non-zero entry.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Draws a corpus with gold tags. Returns it together with the planted confusions.
pub fn generate(cfg: &SynthConfig) -> Result<(WeakDataset, Vec<Matrix>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let j = cfg.n_sources();
    let mut sentences = Vec::with_capacity(cfg.n_sentences);
    for _ in 0..cfg.n_sentences {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let mut gold = Vec::with_capacity(len);
        let mut tokens = Vec::with_capacity(len);
        let mut grid = WeakGrid::empty(len, j);
        for l in 0..len {
            let t = if l == 0 {
                sample(&mut rng, &cfg.initial)
            } else {
                sample(&mut rng, cfg.transition.row(gold[l - 1]))
            };
            gold.push(t);
            tokens.push(format!("w{}", sample(&mut rng, cfg.emission.row(t))));
            for (src, conf) in cfg.confusions.iter().enumerate() {
                let missing = rng.gen::<f64>() < cfg.missing_rates[src];
                if !missing {
                    grid.set(l, src, Some(sample(&mut rng, conf.row(t))));
                }
            }
        }
        sentences.push(Sentence::new(tokens, Some(gold), grid)?);
    }
    let ds = WeakDataset::new(cfg.label_space(), cfg.source_names(), sentences)?;
    Ok((ds, cfg.confusions.clone()))
}

/// Row-normalised counts of source `j`'s labels against gold. Rows for gold
/// classes the source never labelled are uniform.
pub fn empirical_confusion(dataset: &WeakDataset, source: usize) -> Result<Matrix> {
    let k = dataset.space.len();
    if source >= dataset.n_sources() {
        return Err(Error::Shape(format!("no source {source}")));
    }
    let mut counts = Matrix::zeros(k, k);
    for (i, s) in dataset.sentences.iter().enumerate() {
        let gold = s.gold.as_ref().ok_or(Error::MissingGold(i))?;
        for (l, &t) in gold.iter().enumerate() {
            if let Some(y) = s.weak.get(l, source) {
                counts[(t, y)] += 1.0;
            }
        }
    }
    for r in 0..k {
        let total: f64 = counts.row(r).iter().sum();
        let row = counts.row_mut(r);
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        } else {
            row.iter_mut().for_each(|x| *x = 1.0 / k as f64);
        }
    }
    Ok(counts)
}
