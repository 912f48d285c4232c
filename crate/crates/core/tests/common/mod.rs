//! Test-only oracles: exhaustive enumeration and finite differences.
//! Nothing here calls into the recursions under test.

#![allow(dead_code)]

use hidden_crf_core::chain::{CrfTransition, WeakSourceMatrices};
use hidden_crf_core::dataset::WeakGrid;
use hidden_crf_core::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub emission: Matrix,
    pub transition: CrfTransition,
    pub sources: WeakSourceMatrices,
    pub grid: WeakGrid,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Parameters i.i.d. uniform on [-2, 2], random per-cell missingness,
/// at most `max_observed` observed cells.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    len: usize,
    k: usize,
    j: usize,
    max_observed: usize,
) -> Instance {
    let emission = uniform(rng, len, k);
    let transition = CrfTransition::from_matrix(uniform(rng, k + 1, k)).unwrap();
    let sources = WeakSourceMatrices((0..j).map(|_| uniform(rng, k, k)).collect());
    let grid = loop {
        let p_missing: f64 = rng.gen_range(0.1..0.9);
        let mut g = WeakGrid::empty(len, j);
        for l in 0..len {
            for s in 0..j {
                if rng.gen::<f64>() >= p_missing {
                    g.set(l, s, Some(rng.gen_range(0..k)));
                }
            }
        }
        if g.n_observed() <= max_observed {
            break g;
        }
    };
    Instance {
        emission,
        transition,
        sources,
        grid,
    }
}

/// Every sequence of length `len` over `0..k`, lexicographic order.
pub fn all_sequences(len: usize, k: usize) -> Vec<Vec<usize>> {
    let total = k.pow(len as u32);
    (0..total)
        .map(|mut code| {
            let mut seq = vec![0; len];
            for pos in (0..len).rev() {
                seq[pos] = code % k;
                code /= k;
            }
            seq
        })
        .collect()
}

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Score of truth `t` with weak labels `cells` (one label per observed cell, grid order).
fn score(inst: &Instance, t: &[usize], cells: &[(usize, usize, usize)]) -> f64 {
    let k = inst.emission.cols();
    let mut s = 0.0;
    for (l, &tl) in t.iter().enumerate() {
        let from = if l == 0 { k } else { t[l - 1] };
        s += inst.emission[(l, tl)] + inst.transition.0[(from, tl)];
    }
    for &(l, j, y) in cells {
        s += inst.sources.0[j][(t[l], y)];
    }
    s
}

fn observed_cells(inst: &Instance) -> Vec<(usize, usize, usize)> {
    let mut cells = Vec::new();
    for l in 0..inst.grid.len() {
        for j in 0..inst.grid.n_sources() {
            if let Some(y) = inst.grid.get(l, j) {
                cells.push((l, j, y));
            }
        }
    }
    cells
}

pub fn brute_joint(inst: &Instance, t: &[usize]) -> f64 {
    score(inst, t, &observed_cells(inst))
}

pub fn brute_clamped(inst: &Instance) -> f64 {
    let (len, k) = inst.emission.shape();
    let cells = observed_cells(inst);
    let scores: Vec<f64> = all_sequences(len, k)
        .iter()
        .map(|t| score(inst, t, &cells))
        .collect();
    lse(&scores)
}

/// Sums over every truth sequence and every relabelling of the observed cells.
pub fn brute_free(inst: &Instance) -> f64 {
    let (len, k) = inst.emission.shape();
    let observed = observed_cells(inst);
    let completions = all_sequences(observed.len(), k);
    let mut scores = Vec::with_capacity(k.pow(len as u32) * completions.len());
    for t in all_sequences(len, k) {
        for ys in &completions {
            let cells: Vec<_> = observed
                .iter()
                .zip(ys)
                .map(|(&(l, j, _), &y)| (l, j, y))
                .collect();
            scores.push(score(inst, &t, &cells));
        }
    }
    lse(&scores)
}

/// Best path under emissions and transitions, summed in the same order as a
/// left-to-right Viterbi so equal paths give bit-equal scores. The first
/// maximum in lexicographic order wins.
pub fn brute_viterbi(emission: &Matrix, transition: &CrfTransition) -> (Vec<usize>, f64) {
    let (len, k) = emission.shape();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for t in all_sequences(len, k) {
        let mut s = transition.0[(k, t[0])] + emission[(0, t[0])];
        for l in 1..len {
            s += transition.0[(t[l - 1], t[l])];
            s += emission[(l, t[l])];
        }
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((t, s));
        }
    }
    best.unwrap()
}

/// |a - b| within `rel` relative error or `abs_floor` absolute error.
pub fn close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel * analytic.abs().max(numeric.abs())
}

/// Central difference of `f` with respect to the scalar `get` points at.
pub fn central_difference<S>(
    state: &mut S,
    get: impl Fn(&mut S) -> &mut f64,
    f: impl Fn(&S) -> f64,
    step: f64,
) -> f64 {
    let orig = *get(state);
    *get(state) = orig + step;
    let up = f(state);
    *get(state) = orig - step;
    let down = f(state);
    *get(state) = orig;
    (up - down) / (2.0 * step)
}
