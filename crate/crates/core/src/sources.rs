//! Weak-source matrices: count-based initialisation from majority-vote
//! labels, row-stochastic export and element-level correlation.

use alloc::format;
use alloc::vec::Vec;

use crate::chain::WeakSourceMatrices;
use crate::math::{exp, log_sum_exp};
use crate::{Error, Matrix, Result, WeakDataset};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SourceInitConfig {
    /// Scale of the initial agreement ratios.
    pub rho: f64,
    /// Additive pseudo-count per cell.
    pub smoothing: f64,
}

impl Default for SourceInitConfig {
    fn default() -> Self {
        SourceInitConfig {
            rho: 2.0,
            smoothing: 0.0,
        }
    }
}

impl SourceInitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing must be non-negative, got {}",
                self.smoothing
            )));
        }
        Ok(())
    }
}

/// Per-source agreement counts `[m][n]` = tokens where the reference tag is `m`
/// and the source said `n`.
pub fn agreement_counts(dataset: &WeakDataset, reference: &[Vec<usize>]) -> Result<Vec<Matrix>> {
    let k = dataset.space.len();
    if reference.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "{} reference sequences for {} sentences",
            reference.len(),
            dataset.len()
        )));
    }
    let mut counts = alloc::vec![Matrix::zeros(k, k); dataset.n_sources()];
    for (i, (s, tags)) in dataset.sentences.iter().zip(reference).enumerate() {
        if tags.len() != s.len() {
            return Err(Error::Shape(format!("reference for sentence {i} has wrong length")));
        }
        if dataset.n_sources() == 0 {
            continue;
        }
        for (l, &m) in tags.iter().enumerate() {
            for (j, n) in s.weak.observed(l) {
                counts[j][(m, n)] += 1.0;
            }
        }
    }
    Ok(counts)
}

/// `Π⁽ʲ⁾[m][n] = ρ · (#(t̂=m, y⁽ʲ⁾=n) + ε) / (#(t̂=m, y⁽ʲ⁾ observed) + Kε)`.
///
/// A row with an empty denominator becomes uniform `ρ/K`.
pub fn init_weak_matrices(
    dataset: &WeakDataset,
    mv_labels: &[Vec<usize>],
    cfg: &SourceInitConfig,
) -> Result<WeakSourceMatrices> {
    cfg.validate()?;
    let k = dataset.space.len();
    let counts = agreement_counts(dataset, mv_labels)?;
    let mats = counts
        .into_iter()
        .map(|c| {
            let mut p = Matrix::zeros(k, k);
            for m in 0..k {
                let denom: f64 = c.row(m).iter().sum::<f64>() + k as f64 * cfg.smoothing;
                for n in 0..k {
                    p[(m, n)] = if denom > 0.0 {
                        cfg.rho * (c[(m, n)] + cfg.smoothing) / denom
                    } else {
                        cfg.rho / k as f64
                    };
                }
            }
            p
        })
        .collect();
    Ok(WeakSourceMatrices(mats))
}

/// Diagonal `1/K`, off-diagonal `0`.
pub fn diagonal_init(n_sources: usize, n_labels: usize) -> WeakSourceMatrices {
    let mut m = Matrix::identity(n_labels);
    m.scale(1.0 / n_labels as f64);
    WeakSourceMatrices(alloc::vec![m; n_sources])
}

/// Normalisation used to turn a raw score matrix into a row-stochastic one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportMode {
    /// Non-positive entries set to zero, then rows normalised.
    /// A row with no positive entry becomes uniform.
    Clamp,
    /// Row-wise softmax.
    Softmax,
}

pub fn export_matrix(raw: &Matrix, mode: ExportMode) -> Matrix {
    let (rows, cols) = raw.shape();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let src = raw.row(r);
        let dst = out.row_mut(r);
        match mode {
            ExportMode::Clamp => {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s.max(0.0);
                }
                let total: f64 = dst.iter().sum();
                if total > 0.0 {
                    dst.iter_mut().for_each(|d| *d /= total);
                } else {
                    dst.iter_mut().for_each(|d| *d = 1.0 / cols as f64);
                }
            }
            ExportMode::Softmax => {
                let lse = log_sum_exp(src.iter().copied());
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = exp(s - lse);
                }
            }
        }
    }
    out
}

/// Pearson correlation over all elements of two equally shaped matrices.
pub fn matrix_correlation(estimated: &Matrix, reference: &Matrix) -> Result<f64> {
    if estimated.shape() != reference.shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            estimated.shape(),
            reference.shape()
        )));
    }
    pearson(estimated.as_slice(), reference.as_slice())
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}
