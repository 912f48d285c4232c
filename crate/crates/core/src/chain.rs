//! Latent-truth chain: joint score, the two forward recursions, the marginal
//! log-likelihood with its gradients, and Viterbi decoding.
//!
//! For a sentence of length `L` with emission scores `E` (`L×K`), transitions
//! `T` (`(K+1)×K`, last row = BEGIN) and source matrices `Π⁽ʲ⁾` (`K×K`), the
//! joint score of a truth sequence `t` and the observed weak grid `y` is
//!
//! ```text
//! Σ_l  E[l][t_l] + T[t_{l-1}][t_l] + Σ_{j observed at l} Π⁽ʲ⁾[t_l][y_l⁽ʲ⁾]      (t_{-1} = BEGIN)
//! ```
//!
//! The *clamped* term sums `exp(score)` over every `t` with `y` fixed. The
//! *free* term additionally sums over every label assignment of the observed
//! cells. Since each weak label only touches `t_l`, that inner sum factorises
//! per source into `Σ_j logΣ_y exp(Π⁽ʲ⁾[k][y])`, so both terms are ordinary
//! linear-chain partition functions with different node potentials.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::WeakGrid;
use crate::math::{exp, log_sum_exp, softmax};
use crate::{Error, Matrix, Result};

/// `(K+1) × K` transition scores. Row `K` holds BEGIN → label scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfTransition(pub Matrix);

impl CrfTransition {
    pub fn zeros(n_labels: usize) -> Self {
        CrfTransition(Matrix::zeros(n_labels + 1, n_labels))
    }

    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() + 1 {
            return Err(Error::Shape(format!(
                "transition matrix must be (K+1)×K, got {}×{}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(CrfTransition(m))
    }

    #[inline]
    pub fn n_labels(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn begin(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn score(&self, from: usize, to: usize) -> f64 {
        self.0[(from, to)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CrfTransition(self.0.scaled(factor))
    }
}

/// One `K × K` matrix per weak source; entry `[k][y]` scores truth `k` paired
/// with the source's label `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakSourceMatrices(pub Vec<Matrix>);

impl WeakSourceMatrices {
    pub fn zeros(n_sources: usize, n_labels: usize) -> Self {
        WeakSourceMatrices(vec![Matrix::zeros(n_labels, n_labels); n_sources])
    }

    pub fn from_matrices(ms: Vec<Matrix>, n_labels: usize) -> Result<Self> {
        if let Some((j, m)) = ms
            .iter()
            .enumerate()
            .find(|(_, m)| m.shape() != (n_labels, n_labels))
        {
            return Err(Error::Shape(format!(
                "source matrix {j} is {:?}, expected {n_labels}×{n_labels}",
                m.shape()
            )));
        }
        Ok(WeakSourceMatrices(ms))
    }

    #[inline]
    pub fn n_sources(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, j: usize) -> &Matrix {
        &self.0[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.0.iter()
    }
}

/// Per-sentence score tables consumed by the recursions.
#[derive(Debug, Clone)]
pub struct ChainScores<'a> {
    pub emission: &'a Matrix,
    pub transition: &'a CrfTransition,
    /// `W[l][k] = Σ_{j observed at l} Π⁽ʲ⁾[k][y_l⁽ʲ⁾]`
    pub weak: Matrix,
    /// `free_W[l][k] = Σ_{j observed at l} logΣ_y exp(Π⁽ʲ⁾[k][y])`
    pub free_weak: Matrix,
}

impl<'a> ChainScores<'a> {
    pub fn new(
        emission: &'a Matrix,
        transition: &'a CrfTransition,
        sources: &WeakSourceMatrices,
        grid: &WeakGrid,
    ) -> Self {
        check_shapes(emission, transition, sources, grid);
        let (len, k) = emission.shape();
        // logΣ_y exp(Π⁽ʲ⁾[k][y]) only depends on (j, k).
        let row_lse: Vec<Vec<f64>> = sources
            .iter()
            .map(|p| (0..k).map(|r| log_sum_exp(p.row(r).iter().copied())).collect())
            .collect();
        let mut weak = Matrix::zeros(len, k);
        let mut free_weak = Matrix::zeros(len, k);
        if grid.n_sources() > 0 {
            for l in 0..len {
                for (j, y) in grid.observed(l) {
                    let p = sources.get(j);
                    for t in 0..k {
                        weak[(l, t)] += p[(t, y)];
                        free_weak[(l, t)] += row_lse[j][t];
                    }
                }
            }
        }
        ChainScores {
            emission,
            transition,
            weak,
            free_weak,
        }
    }

    fn potentials(&self, extra: &Matrix) -> Matrix {
        let mut u = self.emission.clone();
        u.add_scaled(extra, 1.0);
        u
    }

    /// `logΣ_t exp(score(t, y))` with the observed weak labels held fixed.
    pub fn clamped_logsum(&self) -> f64 {
        forward(&self.potentials(&self.weak), self.transition).1
    }

    /// `log Z`: the sum additionally ranges over every labelling of the observed cells.
    pub fn free_log_z(&self) -> f64 {
        forward(&self.potentials(&self.free_weak), self.transition).1
    }
}

fn check_shapes(emission: &Matrix, transition: &CrfTransition, sources: &WeakSourceMatrices, grid: &WeakGrid) {
    let (len, k) = emission.shape();
    assert!(len >= 1, "empty sentence");
    assert_eq!(transition.n_labels(), k, "transition/emission label count");
    assert_eq!(grid.n_sources(), sources.n_sources(), "grid/source count");
    if grid.n_sources() > 0 {
        assert_eq!(grid.len(), len, "grid/emission length");
    }
    for p in sources.iter() {
        assert_eq!(p.shape(), (k, k), "source matrix shape");
    }
}

/// Forward recursion from the BEGIN state. Returns `(alpha, log Z)`.
///
/// The step-0 state vector has `0` at BEGIN and `-∞` elsewhere; the shifted
/// log-sum-exp skips `-∞` terms exactly.
fn forward(potentials: &Matrix, transition: &CrfTransition) -> (Matrix, f64) {
    let (len, k) = potentials.shape();
    let mut alpha = Matrix::zeros(len, k);
    let mut prev = vec![f64::NEG_INFINITY; k + 1];
    prev[k] = 0.0;
    for l in 0..len {
        for cur in 0..k {
            let acc = log_sum_exp(
                prev.iter()
                    .enumerate()
                    .map(|(from, a)| a + transition.score(from, cur)),
            );
            alpha[(l, cur)] = acc + potentials[(l, cur)];
        }
        prev.clear();
        prev.extend_from_slice(alpha.row(l));
    }
    let log_z = log_sum_exp(alpha.row(len - 1).iter().copied());
    (alpha, log_z)
}

/// Backward messages: `beta[l][k] = logΣ over suffixes after position l given t_l = k`.
fn backward(potentials: &Matrix, transition: &CrfTransition) -> Matrix {
    let (len, k) = potentials.shape();
    let mut beta = Matrix::zeros(len, k);
    for l in (0..len.saturating_sub(1)).rev() {
        for from in 0..k {
            beta[(l, from)] = log_sum_exp(
                (0..k).map(|to| transition.score(from, to) + potentials[(l + 1, to)] + beta[(l + 1, to)]),
            );
        }
    }
    beta
}

/// Partition function and expected sufficient statistics of a linear chain.
struct Marginals {
    log_z: f64,
    /// `L × K` node marginals.
    nodes: Matrix,
    /// `(K+1) × K` expected transition counts (BEGIN row included).
    transitions: Matrix,
}

fn marginals(potentials: &Matrix, transition: &CrfTransition) -> Marginals {
    let (len, k) = potentials.shape();
    let (alpha, log_z) = forward(potentials, transition);
    let beta = backward(potentials, transition);
    let mut nodes = Matrix::zeros(len, k);
    for l in 0..len {
        for c in 0..k {
            nodes[(l, c)] = exp(alpha[(l, c)] + beta[(l, c)] - log_z);
        }
    }
    let mut transitions = Matrix::zeros(k + 1, k);
    for c in 0..k {
        transitions[(k, c)] = nodes[(0, c)];
    }
    for l in 1..len {
        for from in 0..k {
            let a = alpha[(l - 1, from)];
            for to in 0..k {
                transitions[(from, to)] +=
                    exp(a + transition.score(from, to) + potentials[(l, to)] + beta[(l, to)] - log_z);
            }
        }
    }
    Marginals {
        log_z,
        nodes,
        transitions,
    }
}

/// Joint score of a truth sequence and the observed weak grid. Missing cells contribute 0.
pub fn joint_score(
    emission: &Matrix,
    transition: &CrfTransition,
    sources: &WeakSourceMatrices,
    truth: &[usize],
    grid: &WeakGrid,
) -> f64 {
    check_shapes(emission, transition, sources, grid);
    assert_eq!(truth.len(), emission.rows(), "truth length");
    let k = emission.cols();
    let mut prev = transition.begin();
    let mut total = 0.0;
    for (l, &t) in truth.iter().enumerate() {
        assert!(t < k, "truth label {t} out of range");
        total += emission[(l, t)] + transition.score(prev, t);
        if grid.n_sources() > 0 {
            total += grid.observed(l).map(|(j, y)| sources.get(j)[(t, y)]).sum::<f64>();
        }
        prev = t;
    }
    total
}

/// Score of a path under emissions and transitions only.
pub fn path_score(emission: &Matrix, transition: &CrfTransition, tags: &[usize]) -> f64 {
    let mut prev = transition.begin();
    let mut total = 0.0;
    for (l, &t) in tags.iter().enumerate() {
        total += emission[(l, t)] + transition.score(prev, t);
        prev = t;
    }
    total
}

pub fn clamped_logsum(
    emission: &Matrix,
    transition: &CrfTransition,
    sources: &WeakSourceMatrices,
    grid: &WeakGrid,
) -> f64 {
    ChainScores::new(emission, transition, sources, grid).clamped_logsum()
}

pub fn free_log_z(
    emission: &Matrix,
    transition: &CrfTransition,
    sources: &WeakSourceMatrices,
    grid: &WeakGrid,
) -> f64 {
    ChainScores::new(emission, transition, sources, grid).free_log_z()
}

/// Partition function of the plain CRF over emissions and transitions.
pub fn crf_log_z(emission: &Matrix, transition: &CrfTransition) -> f64 {
    forward(emission, transition).1
}

/// Marginal log-likelihood of one sentence's weak labels and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGrad {
    pub clamped: f64,
    pub free: f64,
    /// `clamped - free`, never positive.
    pub loglik: f64,
    pub d_emission: Matrix,
    pub d_transition: Matrix,
    /// One `K×K` block per source; all-zero for sources absent from the sentence.
    pub d_sources: Vec<Matrix>,
}

pub fn loglik_and_grad(
    emission: &Matrix,
    transition: &CrfTransition,
    sources: &WeakSourceMatrices,
    grid: &WeakGrid,
) -> Result<ChainGrad> {
    let scores = ChainScores::new(emission, transition, sources, grid);
    let (len, k) = emission.shape();
    let clamped = marginals(&scores.potentials(&scores.weak), transition);
    let free = marginals(&scores.potentials(&scores.free_weak), transition);

    let mut d_emission = clamped.nodes.clone();
    d_emission.add_scaled(&free.nodes, -1.0);
    let mut d_transition = clamped.transitions;
    d_transition.add_scaled(&free.transitions, -1.0);

    let mut d_sources = vec![Matrix::zeros(k, k); sources.n_sources()];
    if grid.n_sources() > 0 {
        let probs: Vec<Vec<Vec<f64>>> = sources
            .iter()
            .map(|p| (0..k).map(|r| softmax(p.row(r))).collect())
            .collect();
        for l in 0..len {
            for (j, y) in grid.observed(l) {
                let g = &mut d_sources[j];
                for t in 0..k {
                    g[(t, y)] += clamped.nodes[(l, t)];
                    let w = free.nodes[(l, t)];
                    for (yy, p) in probs[j][t].iter().enumerate() {
                        g[(t, yy)] -= w * p;
                    }
                }
            }
        }
    }

    let loglik = clamped.log_z - free.log_z;
    if !loglik.is_finite() || !d_emission.is_finite() || !d_transition.is_finite() {
        return Err(Error::Overflow);
    }
    Ok(ChainGrad {
        clamped: clamped.log_z,
        free: free.log_z,
        loglik,
        d_emission,
        d_transition,
        d_sources,
    })
}

/// Plain-CRF log-likelihood `score(tags) - log Z` with gradients for E and T.
pub fn crf_loglik_and_grad(
    emission: &Matrix,
    transition: &CrfTransition,
    tags: &[usize],
) -> Result<(f64, Matrix, Matrix)> {
    assert_eq!(tags.len(), emission.rows(), "tag length");
    let m = marginals(emission, transition);
    let loglik = path_score(emission, transition, tags) - m.log_z;
    let mut d_emission = m.nodes;
    d_emission.scale(-1.0);
    let mut d_transition = m.transitions;
    d_transition.scale(-1.0);
    let mut prev = transition.begin();
    for (l, &t) in tags.iter().enumerate() {
        d_emission[(l, t)] += 1.0;
        d_transition[(prev, t)] += 1.0;
        prev = t;
    }
    if !loglik.is_finite() || !d_emission.is_finite() {
        return Err(Error::Overflow);
    }
    Ok((loglik, d_emission, d_transition))
}

/// Highest-scoring tag sequence under emissions and transitions.
///
/// Ties go to the lowest label index, both at every back-pointer and at the
/// final position.
pub fn viterbi(emission: &Matrix, transition: &CrfTransition) -> (Vec<usize>, f64) {
    let (len, k) = emission.shape();
    assert!(len >= 1, "empty sentence");
    assert_eq!(transition.n_labels(), k);
    let mut back = vec![0usize; len * k];
    let mut prev: Vec<f64> = (0..k)
        .map(|c| transition.score(transition.begin(), c) + emission[(0, c)])
        .collect();
    let mut cur = vec![0.0; k];
    for l in 1..len {
        for to in 0..k {
            let mut best = 0;
            let mut best_score = prev[0] + transition.score(0, to);
            for from in 1..k {
                let s = prev[from] + transition.score(from, to);
                if s > best_score {
                    best = from;
                    best_score = s;
                }
            }
            back[l * k + to] = best;
            cur[to] = best_score + emission[(l, to)];
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    let last = crate::math::argmax(&prev);
    let score = prev[last];
    let mut path = vec![0; len];
    path[len - 1] = last;
    for l in (1..len).rev() {
        path[l - 1] = back[l * k + path[l]];
    }
    (path, score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::LN_2;

    fn grid(rows: Vec<Vec<Option<usize>>>, j: usize) -> WeakGrid {
        WeakGrid::from_rows(rows, j).unwrap()
    }

    #[test]
    fn zero_params_score_zero() {
        let e = Matrix::zeros(3, 2);
        let t = CrfTransition::zeros(2);
        let p = WeakSourceMatrices::zeros(2, 2);
        let g = grid(vec![vec![Some(0), None], vec![None, Some(1)], vec![Some(1), Some(1)]], 2);
        assert_eq!(joint_score(&e, &t, &p, &[0, 1, 1], &g), 0.0);
    }

    #[test]
    fn three_term_sum() {
        let e = Matrix::from_rows(&[&[1.0, 2.0]]);
        let mut tm = Matrix::zeros(3, 2);
        tm[(2, 0)] = 0.5;
        tm[(2, 1)] = -0.5;
        let t = CrfTransition::from_matrix(tm).unwrap();
        let p = WeakSourceMatrices(vec![Matrix::from_rows(&[&[3.0, 0.0], &[0.0, 3.0]])]);
        let g = grid(vec![vec![Some(0)]], 1);
        assert_eq!(joint_score(&e, &t, &p, &[1], &g), 1.5);
    }

    #[test]
    fn zero_params_partition_values() {
        let t2 = CrfTransition::zeros(2);
        let p = WeakSourceMatrices::zeros(1, 2);
        let e = Matrix::zeros(1, 2);
        let annotated = grid(vec![vec![Some(0)]], 1);
        let missing = grid(vec![vec![None]], 1);
        assert!((clamped_logsum(&e, &t2, &p, &annotated) - LN_2).abs() < 1e-15);
        assert!((free_log_z(&e, &t2, &p, &annotated) - 4f64.ln()).abs() < 1e-15);
        assert!((free_log_z(&e, &t2, &p, &missing) - LN_2).abs() < 1e-15);

        let t3 = CrfTransition::zeros(3);
        let e3 = Matrix::zeros(2, 3);
        let p3 = WeakSourceMatrices::zeros(1, 3);
        let g3 = grid(vec![vec![None], vec![None]], 1);
        assert!((clamped_logsum(&e3, &t3, &p3, &g3) - 9f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_params_loglik_is_minus_ln2() {
        let r = loglik_and_grad(
            &Matrix::zeros(1, 2),
            &CrfTransition::zeros(2),
            &WeakSourceMatrices::zeros(1, 2),
            &grid(vec![vec![Some(1)]], 1),
        )
        .unwrap();
        assert!((r.loglik + LN_2).abs() < 1e-15);
    }

    #[test]
    fn missing_source_has_zero_gradient() {
        let e = Matrix::from_rows(&[&[0.3, -1.0], &[2.0, 0.1]]);
        let mut tm = Matrix::zeros(3, 2);
        tm[(0, 1)] = 0.7;
        let t = CrfTransition::from_matrix(tm).unwrap();
        let p = WeakSourceMatrices(vec![
            Matrix::from_rows(&[&[1.0, -1.0], &[0.2, 0.4]]),
            Matrix::from_rows(&[&[0.5, 0.5], &[-2.0, 1.0]]),
        ]);
        let g = grid(vec![vec![Some(1), None], vec![Some(0), None]], 2);
        let r = loglik_and_grad(&e, &t, &p, &g).unwrap();
        assert!(r.d_sources[1].as_slice().iter().all(|x| *x == 0.0));
        assert!(r.loglik < 0.0);
    }

    #[test]
    fn viterbi_decoupled_chain() {
        let e = Matrix::from_rows(&[&[0.0, 1.0, 0.5], &[2.0, 0.0, 1.0], &[0.0, 0.0, 3.0]]);
        let t = CrfTransition::zeros(3);
        let (path, score) = viterbi(&e, &t);
        assert_eq!(path, vec![1, 0, 2]);
        assert_eq!(score, 6.0);
    }

    #[test]
    fn viterbi_single_token_uses_begin_row() {
        let e = Matrix::from_rows(&[&[1.0, 0.5]]);
        let mut tm = Matrix::zeros(3, 2);
        tm[(2, 1)] = 1.0;
        let (path, score) = viterbi(&e, &CrfTransition::from_matrix(tm).unwrap());
        assert_eq!(path, vec![1]);
        assert_eq!(score, 1.5);
    }

    #[test]
    fn viterbi_ties_pick_lowest() {
        let (path, _) = viterbi(&Matrix::zeros(4, 3), &CrfTransition::zeros(3));
        assert_eq!(path, vec![0, 0, 0, 0]);
    }

    #[test]
    fn crf_log_z_equals_free_with_no_observations() {
        let e = Matrix::from_rows(&[&[0.3, -1.0], &[2.0, 0.1], &[-0.4, 0.9]]);
        let mut tm = Matrix::zeros(3, 2);
        tm[(1, 0)] = -0.3;
        tm[(2, 1)] = 1.1;
        let t = CrfTransition::from_matrix(tm).unwrap();
        let p = WeakSourceMatrices(vec![Matrix::from_rows(&[&[1.0, -1.0], &[0.2, 0.4]])]);
        let g = WeakGrid::empty(3, 1);
        assert!((free_log_z(&e, &t, &p, &g) - crf_log_z(&e, &t)).abs() < 1e-12);
        let none = WeakGrid::empty(0, 0);
        let p0 = WeakSourceMatrices::zeros(0, 2);
        assert!((free_log_z(&e, &t, &p0, &none) - crf_log_z(&e, &t)).abs() < 1e-12);
    }
}
