mod common;

use common::random_instance;
use hidden_crf_core::baselines::majority_vote;
use hidden_crf_core::chain::{self, CrfTransition, WeakSourceMatrices};
use hidden_crf_core::dataset::{Sentence, WeakGrid};
use hidden_crf_core::emission::{Backbone, BackboneConfig, FeatureConfig};
use hidden_crf_core::eval::span_prf;
use hidden_crf_core::math::argmax;
use hidden_crf_core::sources::{export_matrix, ExportMode};
use hidden_crf_core::synth::{empirical_confusion, generate, PlantedConfig};
use hidden_crf_core::{LabelSpace, Matrix, Scheme};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHIFT: f64 = 3.7;

fn loglik(e: &Matrix, t: &CrfTransition, p: &WeakSourceMatrices, g: &WeakGrid) -> f64 {
    chain::clamped_logsum(e, t, p, g) - chain::free_log_z(e, t, p, g)
}

fn bio_space() -> LabelSpace {
    LabelSpace::new(&["O", "B-PER", "I-PER", "B-LOC", "I-LOC"], Scheme::Bio).unwrap()
}

fn dims() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 1usize..=6, 2usize..=4, 1usize..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn source_shift_leaves_loglik_and_other_gradients(
        (seed, len, k, j) in dims(),
        pick in any::<usize>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, len, k, j, len * j);
        let src = pick % j;
        let mut shifted = inst.sources.clone();
        shifted.0[src].as_mut_slice().iter_mut().for_each(|x| *x += SHIFT);
        let a = chain::loglik_and_grad(&inst.emission, &inst.transition, &inst.sources, &inst.grid).unwrap();
        let b = chain::loglik_and_grad(&inst.emission, &inst.transition, &shifted, &inst.grid).unwrap();
        prop_assert!((a.loglik - b.loglik).abs() < 1e-9, "{} vs {}", a.loglik, b.loglik);
        let mut others: Vec<(&Matrix, &Matrix)> =
            vec![(&a.d_emission, &b.d_emission), (&a.d_transition, &b.d_transition)];
        others.extend((0..j).filter(|&s| s != src).map(|s| (&a.d_sources[s], &b.d_sources[s])));
        for (x, y) in others {
            for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transition_shift_leaves_loglik((seed, len, k, j) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, len, k, j, len * j);
        let before = loglik(&inst.emission, &inst.transition, &inst.sources, &inst.grid);
        let mut t = inst.transition.clone();
        t.0.as_mut_slice().iter_mut().for_each(|x| *x += SHIFT);
        let after = loglik(&inst.emission, &t, &inst.sources, &inst.grid);
        prop_assert!((before - after).abs() < 1e-9);
        // Shifting a token's emission row is also invisible.
        let mut e = inst.emission.clone();
        e.row_mut(len - 1).iter_mut().for_each(|x| *x += SHIFT);
        let after = loglik(&e, &inst.transition, &inst.sources, &inst.grid);
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn silent_source_gets_no_gradient((seed, len, k, j) in dims(), silent in any::<usize>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inst = random_instance(&mut rng, len, k, j, len * j);
        let silent = silent % j;
        for l in 0..len {
            inst.grid.set(l, silent, None);
        }
        let g = chain::loglik_and_grad(&inst.emission, &inst.transition, &inst.sources, &inst.grid).unwrap();
        prop_assert!(g.d_sources[silent].as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn loglik_is_negative((seed, len, k, j) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, len, k, j, len * j);
        let ll = loglik(&inst.emission, &inst.transition, &inst.sources, &inst.grid);
        if inst.grid.n_observed() > 0 {
            prop_assert!(ll < 0.0, "{ll}");
        } else {
            prop_assert!(ll.abs() < 1e-12);
        }
    }

    #[test]
    fn unobserved_free_term_is_crf_partition((seed, len, k, j) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, len, k, j, len * j);
        let empty = WeakGrid::empty(len, j);
        let free = chain::free_log_z(&inst.emission, &inst.transition, &inst.sources, &empty);
        let crf = chain::crf_log_z(&inst.emission, &inst.transition);
        prop_assert!((free - crf).abs() < 1e-12);
    }

    #[test]
    fn viterbi_path_is_optimal((seed, len, k) in (any::<u64>(), 1usize..=8, 2usize..=5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, len, k, 0, 0);
        let (path, score) = chain::viterbi(&inst.emission, &inst.transition);
        prop_assert!((chain::path_score(&inst.emission, &inst.transition, &path) - score).abs() < 1e-12);
        let mut e = inst.emission.clone();
        e.as_mut_slice().iter_mut().for_each(|x| *x += SHIFT);
        let mut t = inst.transition.clone();
        t.0.as_mut_slice().iter_mut().for_each(|x| *x -= SHIFT);
        prop_assert_eq!(&chain::viterbi(&e, &inst.transition).0, &path);
        prop_assert_eq!(&chain::viterbi(&inst.emission, &t).0, &path);
        for _ in 0..20 {
            let other: Vec<usize> = (0..len).map(|_| rng.gen_range(0..k)).collect();
            prop_assert!(chain::path_score(&inst.emission, &inst.transition, &other) <= score + 1e-12);
        }
    }

    #[test]
    fn spans_are_sorted_and_disjoint(tags in prop::collection::vec(0usize..5, 0..30)) {
        let spans = bio_space().extract_spans(&tags);
        for s in &spans {
            prop_assert!(s.start < s.end && s.end <= tags.len());
        }
        for w in spans.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
    }

    #[test]
    fn span_scores_swap_under_exchange(
        pairs in prop::collection::vec(prop::collection::vec((0usize..5, 0usize..5), 1..12), 1..6),
    ) {
        let gold: Vec<Vec<usize>> = pairs.iter().map(|s| s.iter().map(|p| p.0).collect()).collect();
        let pred: Vec<Vec<usize>> = pairs.iter().map(|s| s.iter().map(|p| p.1).collect()).collect();
        let a = span_prf(&gold, &pred, &bio_space()).unwrap();
        let b = span_prf(&pred, &gold, &bio_space()).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert!((a.f1 - b.f1).abs() < 1e-15);
    }

    #[test]
    fn log_linear_emission_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = BackboneConfig::LogLinear(FeatureConfig { hash_dim: 64, ..FeatureConfig::default() });
        let random_weights = |rng: &mut ChaCha8Rng| -> Matrix {
            let data = (0..64 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Matrix::from_vec(64, 3, data).unwrap()
        };
        let w1 = random_weights(&mut rng);
        let w2 = random_weights(&mut rng);
        let mut mix = w1.scaled(a);
        mix.add_scaled(&w2, b);
        let tokens: Vec<String> = ["The", "cat", "sat", "on", "Mat-3"].iter().map(|s| s.to_string()).collect();
        let emit = |w: Matrix| Backbone::from_blocks(&cfg, 3, vec![w]).unwrap().emit(&tokens);
        let e1 = emit(w1);
        let e2 = emit(w2);
        let em = emit(mix);
        for i in 0..em.as_slice().len() {
            let want = a * e1.as_slice()[i] + b * e2.as_slice()[i];
            prop_assert!((em.as_slice()[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn vote_ignores_source_order(
        rows in prop::collection::vec(prop::collection::vec(prop::option::of(0usize..5), 4), 1..10),
        seed in any::<u64>(),
    ) {
        let space = bio_space();
        let mut perm: Vec<usize> = (0..4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..4).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let permuted: Vec<Vec<Option<usize>>> =
            rows.iter().map(|r| perm.iter().map(|&p| r[p]).collect()).collect();
        let tokens: Vec<String> = (0..rows.len()).map(|i| format!("t{i}")).collect();
        let s1 = Sentence::new(tokens.clone(), None, WeakGrid::from_rows(rows, 4).unwrap()).unwrap();
        let s2 = Sentence::new(tokens, None, WeakGrid::from_rows(permuted, 4).unwrap()).unwrap();
        prop_assert_eq!(majority_vote(&s1, &space), majority_vote(&s2, &space));
    }

    #[test]
    fn exports_are_stochastic(data in prop::collection::vec(-5.0f64..5.0, 16)) {
        let raw = Matrix::from_vec(4, 4, data).unwrap();
        for mode in [ExportMode::Clamp, ExportMode::Softmax] {
            let out = export_matrix(&raw, mode);
            for r in 0..4 {
                let row = out.row(r);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&x| x >= 0.0));
                let raw_row = raw.row(r);
                if mode == ExportMode::Softmax || raw_row.iter().any(|&x| x > 0.0) {
                    prop_assert_eq!(argmax(row), argmax(raw_row));
                }
            }
        }
    }
}

#[test]
fn empirical_confusion_recovers_planted() {
    let cfg = PlantedConfig {
        n_sentences: 2000,
        ..PlantedConfig::default()
    }
    .build()
    .unwrap();
    let (ds, planted) = generate(&cfg).unwrap();
    for (j, truth) in planted.iter().enumerate() {
        let est = empirical_confusion(&ds, j).unwrap();
        let worst = est
            .as_slice()
            .iter()
            .zip(truth.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "source {j}: max error {worst}");
    }
}
