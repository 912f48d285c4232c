//! Randomised checks of the chain recursions against exhaustive enumeration
//! and of every gradient against central finite differences.
//!
//! The enumerators here share no code with the recursions they check: they
//! score each complete configuration term by term and sum or maximise.

use std::fmt;

use hidden_crf_core::chain::{self, CrfTransition, WeakSourceMatrices};
use hidden_crf_core::dataset::{Sentence, WeakGrid};
use hidden_crf_core::emission::FeatureConfig;
use hidden_crf_core::{Backbone, BackboneConfig, LabelSpace, Matrix, ModelParams, Scheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest number of observed cells in an enumerated free term.
pub const MAX_OBSERVED_CELLS: usize = 6;
pub const DP_TOLERANCE: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-5;
pub const FD_RELATIVE: f64 = 1e-4;
pub const FD_ABSOLUTE: f64 = 1e-7;
pub const SHIFT: f64 = 3.7;
pub const SHIFT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub checks: usize,
    pub failures: usize,
    /// Largest deviation seen (absolute for sums, relative for gradients).
    pub worst: f64,
    pub first_failure: Option<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        SuiteReport {
            name,
            cases: 0,
            checks: 0,
            failures: 0,
            worst: 0.0,
            first_failure: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    fn record(&mut self, ok: bool, deviation: f64, describe: impl FnOnce() -> String) {
        self.checks += 1;
        if deviation.is_nan() || deviation > self.worst {
            self.worst = deviation;
        }
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(describe());
            }
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<10} cases={} checks={} failures={} worst={:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.checks,
            self.failures,
            self.worst
        )?;
        if let Some(msg) = &self.first_failure {
            write!(f, " first: {msg}")?;
        }
        Ok(())
    }
}

/// One random scoring problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub emission: Matrix,
    pub transition: CrfTransition,
    pub sources: WeakSourceMatrices,
    pub grid: WeakGrid,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..=2.0)).collect())
        .expect("sized")
}

/// Parameters i.i.d. uniform on [-2, 2]; each cell missing with a per-instance
/// probability drawn from [0.1, 0.9], redrawn until at most `max_observed` cells remain.
pub fn random_instance(rng: &mut ChaCha8Rng, len: usize, k: usize, j: usize, max_observed: usize) -> Instance {
    let emission = uniform_matrix(rng, len, k);
    let transition = CrfTransition::from_matrix(uniform_matrix(rng, k + 1, k)).expect("shape");
    let sources = WeakSourceMatrices((0..j).map(|_| uniform_matrix(rng, k, k)).collect());
    let grid = loop {
        let missing = rng.gen_range(0.1..0.9);
        let mut g = WeakGrid::empty(len, j);
        for l in 0..len {
            for s in 0..j {
                if !rng.gen_bool(missing) {
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

/// Odometer over `0..k` digits; returns false after the last sequence.
fn advance(seq: &mut [usize], k: usize) -> bool {
    for d in seq.iter_mut().rev() {
        *d += 1;
        if *d < k {
            return true;
        }
        *d = 0;
    }
    false
}

fn log_sum(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Emission and transition part of a path's score, summed left to right.
fn path_terms(e: &Matrix, t: &CrfTransition, tags: &[usize]) -> f64 {
    let begin = e.cols();
    let mut score = 0.0;
    let mut prev = begin;
    for (l, &tag) in tags.iter().enumerate() {
        score = score + t.matrix()[(prev, tag)] + e[(l, tag)];
        prev = tag;
    }
    score
}

/// Full joint score of truth `tags` with weak labels `weak[c]` at the observed cells `cells`.
fn joint(inst: &Instance, tags: &[usize], cells: &[(usize, usize)], weak: &[usize]) -> f64 {
    let mut s = path_terms(&inst.emission, &inst.transition, tags);
    for (&(l, j), &y) in cells.iter().zip(weak) {
        s += inst.sources.get(j)[(tags[l], y)];
    }
    s
}

fn observed_cells(grid: &WeakGrid) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut cells = Vec::new();
    let mut labels = Vec::new();
    for l in 0..grid.len() {
        for j in 0..grid.n_sources() {
            if let Some(y) = grid.get(l, j) {
                cells.push((l, j));
                labels.push(y);
            }
        }
    }
    (cells, labels)
}

/// log Σ_t exp(joint(t, observed weak labels)).
pub fn enumerate_clamped(inst: &Instance) -> f64 {
    let (len, k) = inst.emission.shape();
    let (cells, labels) = observed_cells(&inst.grid);
    let mut tags = vec![0; len];
    let mut terms = Vec::new();
    loop {
        terms.push(joint(inst, &tags, &cells, &labels));
        if !advance(&mut tags, k) {
            break;
        }
    }
    log_sum(&terms)
}

/// log Σ_t Σ_{weak labels at observed cells} exp(joint).
pub fn enumerate_free(inst: &Instance) -> f64 {
    let (len, k) = inst.emission.shape();
    let (cells, _) = observed_cells(&inst.grid);
    let mut tags = vec![0; len];
    let mut terms = Vec::new();
    loop {
        let mut weak = vec![0; cells.len()];
        loop {
            terms.push(joint(inst, &tags, &cells, &weak));
            if !advance(&mut weak, k) {
                break;
            }
        }
        if !advance(&mut tags, k) {
            break;
        }
    }
    log_sum(&terms)
}

/// Best path by enumeration; the first maximum in lexicographic order wins.
pub fn enumerate_best_path(e: &Matrix, t: &CrfTransition) -> (Vec<usize>, f64) {
    let (len, k) = e.shape();
    let mut tags = vec![0; len];
    let mut best = (tags.clone(), f64::NEG_INFINITY);
    loop {
        let s = path_terms(e, t, &tags);
        if s > best.1 {
            best = (tags.clone(), s);
        }
        if !advance(&mut tags, k) {
            break;
        }
    }
    best
}

fn relative_gap(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_ABSOLUTE / FD_RELATIVE)
}

fn gradient_ok(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= (FD_RELATIVE * analytic.abs().max(numeric.abs())).max(FD_ABSOLUTE)
}

fn central_difference<S: Clone>(state: &S, entry: impl Fn(&mut S) -> &mut f64, f: impl Fn(&S) -> f64) -> f64 {
    let mut up = state.clone();
    *entry(&mut up) += FD_STEP;
    let mut down = state.clone();
    *entry(&mut down) -= FD_STEP;
    (f(&up) - f(&down)) / (2.0 * FD_STEP)
}

/// Clamped and free terms against enumeration on `n` instances with
/// `L ∈ [1,4]`, `K ∈ [2,3]`, `J ∈ [1,3]`.
pub fn dp_suite(n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("dp");
    for case in 0..n {
        let len = rng.gen_range(1..=4);
        let k = rng.gen_range(2..=3);
        let j = rng.gen_range(1..=3);
        let inst = random_instance(&mut rng, len, k, j, MAX_OBSERVED_CELLS);
        let scores = chain::ChainScores::new(&inst.emission, &inst.transition, &inst.sources, &inst.grid);
        for (what, got, want) in [
            ("clamped", scores.clamped_logsum(), enumerate_clamped(&inst)),
            ("free", scores.free_log_z(), enumerate_free(&inst)),
        ] {
            let gap = (got - want).abs();
            report.record(gap < DP_TOLERANCE, gap, || {
                format!("case {case} (L={len} K={k} J={j}) {what}: {got} vs {want}")
            });
        }
        report.cases += 1;
    }
    report
}

fn chain_loglik(inst: &Instance) -> f64 {
    let s = chain::ChainScores::new(&inst.emission, &inst.transition, &inst.sources, &inst.grid);
    s.clamped_logsum() - s.free_log_z()
}

/// Hashed log-linear backbone small enough to check every weight.
pub fn tiny_feature_config() -> BackboneConfig {
    BackboneConfig::LogLinear(FeatureConfig {
        hash_dim: 32,
        ..FeatureConfig::default()
    })
}

/// Every gradient entry against central differences on `n` instances: emission,
/// transitions (BEGIN row included), every source matrix, and a 32-bucket
/// log-linear backbone trained end to end.
pub fn gradient_suite(n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("gradient");
    let vocab = ["Ada", "runs", "to", "the", "42", "x-ray", "Zed", "."];
    for case in 0..n {
        let len = rng.gen_range(1..=4);
        let k = rng.gen_range(2..=3);
        let j = rng.gen_range(1..=3);
        let inst = random_instance(&mut rng, len, k, j, len * j);
        let g = match chain::loglik_and_grad(&inst.emission, &inst.transition, &inst.sources, &inst.grid) {
            Ok(g) => g,
            Err(e) => {
                report.record(false, f64::NAN, || format!("case {case}: {e}"));
                continue;
            }
        };
        let mut check = |what: &str, analytic: f64, numeric: f64| {
            report.record(gradient_ok(analytic, numeric), relative_gap(analytic, numeric), || {
                format!("case {case} {what}: analytic {analytic} vs numeric {numeric}")
            });
        };
        for r in 0..len {
            for c in 0..k {
                let num = central_difference(&inst, |s| &mut s.emission[(r, c)], chain_loglik);
                check(&format!("emission[{r}][{c}]"), g.d_emission[(r, c)], num);
            }
        }
        for r in 0..=k {
            for c in 0..k {
                let num = central_difference(&inst, |s| &mut s.transition.0[(r, c)], chain_loglik);
                check(&format!("transition[{r}][{c}]"), g.d_transition[(r, c)], num);
            }
        }
        for s in 0..j {
            for r in 0..k {
                for c in 0..k {
                    let num = central_difference(&inst, |x| &mut x.sources.0[s][(r, c)], chain_loglik);
                    check(&format!("source{s}[{r}][{c}]"), g.d_sources[s][(r, c)], num);
                }
            }
        }

        // Same instance routed through a backbone.
        let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let space = LabelSpace::new(&names, Scheme::Free).expect("labels");
        let cfg = tiny_feature_config();
        let mut model = ModelParams::new(
            Backbone::zeros(&cfg, k),
            space,
            (0..j).map(|s| format!("s{s}")).collect(),
        )
        .expect("model");
        for b in model.backbone.blocks_mut() {
            b.as_mut_slice().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
        }
        model.transition = inst.transition.clone();
        model.sources = inst.sources.clone();
        let tokens = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect();
        let sentence = Sentence::new(tokens, None, inst.grid.clone()).expect("sentence");
        let (_, grads) = model.sentence_loglik_and_grad(&sentence).expect("finite");
        let weights = model.backbone.blocks()[0].as_slice().len();
        for i in 0..weights {
            let num = central_difference(
                &model,
                |m| &mut m.backbone.blocks_mut().into_iter().next().expect("block").as_mut_slice()[i],
                |m| m.sentence_loglik(&sentence),
            );
            check(&format!("backbone weight {i}"), grads.backbone.blocks[0].as_slice()[i], num);
        }
        report.cases += 1;
    }
    report
}

/// Viterbi against enumeration on `n` instances with `L ∈ [1,5]`, `K ∈ [2,4]`:
/// scores must be equal and paths identical.
pub fn viterbi_suite(n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("viterbi");
    for case in 0..n {
        let len = rng.gen_range(1..=5);
        let k = rng.gen_range(2..=4);
        let inst = random_instance(&mut rng, len, k, 0, 0);
        let (path, score) = chain::viterbi(&inst.emission, &inst.transition);
        let (want_path, want_score) = enumerate_best_path(&inst.emission, &inst.transition);
        let gap = (score - want_score).abs();
        report.record(gap == 0.0 && path == want_path, gap, || {
            format!("case {case}: {path:?} ({score}) vs {want_path:?} ({want_score})")
        });
        report.cases += 1;
    }
    report
}

/// Shift invariances, exact zero gradients for silent sources, and a
/// negative log-likelihood whenever something is observed.
pub fn invariance_suite(n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("invariance");
    for case in 0..n {
        let len = rng.gen_range(1..=6);
        let k = rng.gen_range(2..=4);
        let j = rng.gen_range(2..=4);
        let mut inst = random_instance(&mut rng, len, k, j, len * j);
        let silent = rng.gen_range(0..j);
        for l in 0..len {
            inst.grid.set(l, silent, None);
        }
        let base = chain_loglik(&inst);

        let mut shifted = inst.clone();
        let src = rng.gen_range(0..j);
        shifted.sources.0[src].as_mut_slice().iter_mut().for_each(|x| *x += SHIFT);
        let gap = (chain_loglik(&shifted) - base).abs();
        report.record(gap < SHIFT_TOLERANCE, gap, || format!("case {case}: source shift moved loglik by {gap}"));

        let mut shifted = inst.clone();
        shifted.transition.0.as_mut_slice().iter_mut().for_each(|x| *x += SHIFT);
        let gap = (chain_loglik(&shifted) - base).abs();
        report.record(gap < SHIFT_TOLERANCE, gap, || format!("case {case}: transition shift moved loglik by {gap}"));

        match chain::loglik_and_grad(&inst.emission, &inst.transition, &inst.sources, &inst.grid) {
            Ok(g) => {
                let leak = g.d_sources[silent].as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
                report.record(leak == 0.0, leak, || format!("case {case}: silent source gradient {leak}"));
            }
            Err(e) => report.record(false, f64::NAN, || format!("case {case}: {e}")),
        }

        if inst.grid.n_observed() > 0 {
            report.record(base < 0.0, 0.0, || format!("case {case}: loglik {base} is not negative"));
        }
        report.cases += 1;
    }
    report
}

/// The three oracle suites run by the `selfcheck` command.
pub fn run_all(n: usize, seed: u64) -> Vec<SuiteReport> {
    vec![
        dp_suite(n, seed),
        gradient_suite((n / 10).max(20), seed.wrapping_add(1)),
        viterbi_suite(n, seed.wrapping_add(2)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odometer_visits_every_sequence() {
        let mut s = vec![0; 3];
        let mut count = 1;
        while advance(&mut s, 2) {
            count += 1;
        }
        assert_eq!(count, 8);
        assert_eq!(s, vec![0, 0, 0]);
    }

    #[test]
    fn enumeration_of_a_hand_case() {
        // One token, two labels, zero scores, one observed cell:
        // clamped = log 2, free = log 4.
        let inst = Instance {
            emission: Matrix::zeros(1, 2),
            transition: CrfTransition::zeros(2),
            sources: WeakSourceMatrices::zeros(1, 2),
            grid: WeakGrid::from_rows(vec![vec![Some(1)]], 1).unwrap(),
        };
        assert!((enumerate_clamped(&inst) - 2f64.ln()).abs() < 1e-15);
        assert!((enumerate_free(&inst) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn small_runs_pass() {
        for r in run_all(20, 3) {
            assert!(r.passed(), "{r}");
        }
        assert!(invariance_suite(20, 4).passed());
    }
}
