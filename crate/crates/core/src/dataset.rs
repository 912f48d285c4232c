//! Sentences with per-token, per-source weak labels.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, LabelSpace, Result};

/// `L × J` grid of weak labels; `None` marks a cell the source left unannotated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakGrid {
    n_sources: usize,
    cells: Vec<Option<usize>>,
}

impl WeakGrid {
    pub fn from_rows(rows: Vec<Vec<Option<usize>>>, n_sources: usize) -> Result<Self> {
        let mut cells = Vec::with_capacity(rows.len() * n_sources);
        for (l, row) in rows.into_iter().enumerate() {
            if row.len() != n_sources {
                return Err(Error::Shape(format!(
                    "token {l} has {} weak labels, expected {n_sources}",
                    row.len()
                )));
            }
            cells.extend(row);
        }
        Ok(WeakGrid { n_sources, cells })
    }

    /// A grid with every cell missing.
    pub fn empty(len: usize, n_sources: usize) -> Self {
        WeakGrid {
            n_sources,
            cells: alloc::vec![None; len * n_sources],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len().checked_div(self.n_sources).unwrap_or(0)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    #[inline]
    pub fn get(&self, token: usize, source: usize) -> Option<usize> {
        self.cells[token * self.n_sources + source]
    }

    pub fn set(&mut self, token: usize, source: usize, label: Option<usize>) {
        self.cells[token * self.n_sources + source] = label;
    }

    #[inline]
    pub fn row(&self, token: usize) -> &[Option<usize>] {
        &self.cells[token * self.n_sources..(token + 1) * self.n_sources]
    }

    /// Observed `(source, label)` pairs at a token.
    pub fn observed(&self, token: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row(token)
            .iter()
            .enumerate()
            .filter_map(|(j, y)| y.map(|y| (j, y)))
    }

    pub fn n_observed(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// One sentence: tokens, optional gold tags and the weak-label grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub gold: Option<Vec<usize>>,
    pub weak: WeakGrid,
    annotated: Vec<usize>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, gold: Option<Vec<usize>>, weak: WeakGrid) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Shape("empty sentence".into()));
        }
        // A grid with J = 0 carries no rows.
        if weak.n_sources() > 0 && weak.len() != tokens.len() {
            return Err(Error::Shape(format!(
                "{} tokens but {} weak-label rows",
                tokens.len(),
                weak.len()
            )));
        }
        if let Some(g) = &gold {
            if g.len() != tokens.len() {
                return Err(Error::Shape(format!(
                    "{} tokens but {} gold labels",
                    tokens.len(),
                    g.len()
                )));
            }
        }
        let annotated = (0..weak.n_sources())
            .filter(|&j| (0..weak.len()).any(|l| weak.get(l, j).is_some()))
            .collect();
        Ok(Sentence {
            tokens,
            gold,
            weak,
            annotated,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sources with at least one annotated token in this sentence, ascending.
    pub fn annotated_sources(&self) -> &[usize] {
        &self.annotated
    }
}

/// A corpus sharing one label space and one list of sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakDataset {
    pub space: LabelSpace,
    pub source_names: Vec<String>,
    pub sentences: Vec<Sentence>,
}

impl WeakDataset {
    pub fn new(space: LabelSpace, source_names: Vec<String>, sentences: Vec<Sentence>) -> Result<Self> {
        let ds = WeakDataset {
            space,
            source_names,
            sentences,
        };
        ds.validate()?;
        Ok(ds)
    }

    #[inline]
    pub fn n_sources(&self) -> usize {
        self.source_names.len()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn has_gold(&self) -> bool {
        self.sentences.iter().all(|s| s.gold.is_some())
    }

    /// Checks label ranges and grid widths against the declared space and sources.
    pub fn validate(&self) -> Result<()> {
        let k = self.space.len();
        let j = self.n_sources();
        for (i, s) in self.sentences.iter().enumerate() {
            if s.weak.n_sources() != j {
                return Err(Error::Shape(format!(
                    "sentence {i}: grid has {} sources, dataset declares {j}",
                    s.weak.n_sources()
                )));
            }
            if j > 0 && s.weak.len() != s.len() {
                return Err(Error::Shape(format!("sentence {i}: grid rows != tokens")));
            }
            if let Some(g) = &s.gold {
                if g.iter().any(|&t| t >= k) {
                    return Err(Error::Shape(format!("sentence {i}: gold label out of range")));
                }
            }
            for l in 0..s.weak.len() {
                if s.weak.observed(l).any(|(_, y)| y >= k) {
                    return Err(Error::Shape(format!(
                        "sentence {i} token {l}: weak label out of range"
                    )));
                }
            }
        }
        Ok(())
    }
}
