//! Randomized invariants of the data pipeline, scheduler and checkpoint
//! selection.

use std::collections::BTreeMap;

use grounded_lm::corpus::{AlignedText, Alignment, GroundedPair, Image};
use grounded_lm::objectives::Objective;
use grounded_lm::pipeline::{
    mask_patches, mask_text, partition, DataBudget, Fractions, SamplingWeights, Task, Vocab,
};
use grounded_lm::rng::{seeded, RngState};
use grounded_lm::scheduler::{EventKind, SchedulerConfig, SchedulerState};
use grounded_lm::trainer::{select_checkpoint, CheckpointManifest};
use proptest::prelude::*;

fn corpus_from(spec: &[(usize, bool)]) -> Vec<GroundedPair> {
    spec.iter()
        .enumerate()
        .map(|(i, &(words, image))| {
            let texts = if words == 0 {
                vec![]
            } else {
                vec![AlignedText { text: vec!["w"; words].join(" "), alignment: Alignment::Caption }]
            };
            GroundedPair::new(i, image.then(|| Image { side: 1, pixels: vec![0; 3] }), texts)
        })
        .collect()
}

fn corpus_strategy() -> impl Strategy<Value = Vec<(usize, bool)>> {
    prop::collection::vec((0usize..10, any::<bool>()), 1..40)
}

proptest! {
    #[test]
    fn larger_budgets_never_shrink_prefixes(
        spec in corpus_strategy(),
        w in 1u64..200,
        i in 0u64..40,
        dw in 0u64..50,
        di in 0u64..10,
    ) {
        let corpus = corpus_from(&spec);
        let small = partition(&corpus, DataBudget { words: w, images: i });
        let large = partition(&corpus, DataBudget { words: w + dw, images: i + di });
        if let (Ok(s), Ok(l)) = (&small, &large) {
            for k in 0..3 {
                prop_assert!(s.prefix_lengths[k] <= l.prefix_lengths[k]);
            }
        }
        // a budget the corpus can satisfy stays satisfiable when it shrinks
        if large.is_ok() {
            prop_assert!(small.is_ok());
        }
    }

    #[test]
    fn multimodal_fraction_is_the_smaller_one(spec in corpus_strategy(), w in 1u64..200, i in 0u64..40) {
        if let Ok(l) = partition(&corpus_from(&spec), DataBudget { words: w, images: i }) {
            prop_assert_eq!(l.fractions.multimodal, l.fractions.text.min(l.fractions.vision));
            prop_assert_eq!(l.prefix_lengths[2], l.prefix_lengths[0].min(l.prefix_lengths[1]));
        }
    }

    #[test]
    fn sampling_weights_are_a_fixed_point(t in 0.0f64..1.0, v in 0.0f64..1.0, m in 0.0f64..1.0) {
        prop_assume!(t + v + m > 1e-9);
        let w = SamplingWeights::from_fractions(Fractions { text: t, vision: v, multimodal: m }).unwrap();
        prop_assert!((w.total() - 1.0).abs() < 1e-12);
        let again = w.renormalized().unwrap();
        for task in Task::ALL {
            prop_assert!((again.get(task) - w.get(task)).abs() < 1e-12);
        }
    }

    #[test]
    fn masking_preserves_content(ids in prop::collection::vec(0usize..40, 1..30), p in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = seeded(seed, 0);
        let m = mask_text(&ids, p, &mut rng);
        prop_assert_eq!(m.reconstruct(), ids.clone());
        for (i, &id) in ids.iter().enumerate() {
            if id < 5 {
                prop_assert!(!m.mask[i], "special token masked");
            }
            prop_assert_eq!(m.mask[i], m.targets[i].is_some());
            if m.mask[i] {
                prop_assert_eq!(m.input[i], Vocab::MASK_ID);
            }
        }
        if ids.iter().any(|&id| id >= 5) && p > 0.0 {
            prop_assert!(m.masked_count() >= 1);
        }
        let patches = mask_patches(&ids, 40, p, &mut rng);
        prop_assert_eq!(patches.reconstruct(), ids);
        prop_assert!(patches.input.iter().zip(&patches.mask).all(|(x, m)| !m || *x == 40));
    }

    #[test]
    fn scheduler_invariants_hold_on_any_trace(
        losses in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0), 1..80),
    ) {
        let initial = SchedulerState::new(SchedulerConfig::default(), SamplingWeights::new(0.6, 0.2, 0.2)).unwrap();
        let mut s = initial.clone();
        let mut events = Vec::new();
        for (a, b, c) in losses {
            for t in s.active_tasks() {
                let l = [a, b, c][t.index()];
                events.extend(s.on_validation(t, l).unwrap());
            }
            events.extend(s.on_phase_end());
            for t in Task::ALL {
                let x = s.task(t);
                prop_assert_eq!(x.weight == 0.0, !x.is_active());
                prop_assert!(x.consecutive_increases <= 3);
                prop_assert!(x.weight <= x.init_weight);
                prop_assert!(x.is_active() || x.phases_inactive < 10 || t == Task::Text);
            }
        }
        prop_assert!(!events.iter().any(|e| e.task == Task::Text && e.kind == EventKind::Restart));
        let replayed = SchedulerState::replay(&initial, &events, s.phase).unwrap();
        prop_assert_eq!(replayed, s);
    }

    #[test]
    fn selection_ignores_manifest_order(losses in prop::collection::vec(0u8..6, 1..12), rotate in 0usize..12) {
        let sched = SchedulerState::new(SchedulerConfig::default(), SamplingWeights::new(1.0, 0.0, 0.0)).unwrap();
        let manifests: Vec<CheckpointManifest> = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| CheckpointManifest {
                step: i as u64 * 10,
                phase: i as u64,
                config_hash: "h".into(),
                val_losses: BTreeMap::from([(Objective::Mlm, l as f64)]),
                scheduler: sched.clone(),
                rng: RngState { seed: 0, stream: 0, word_pos: "0".into() },
                params_file: None,
            })
            .collect();
        let best = select_checkpoint(&manifests).unwrap().step;
        let mut shuffled = manifests.clone();
        shuffled.rotate_left(rotate % manifests.len());
        shuffled.reverse();
        prop_assert_eq!(select_checkpoint(&shuffled).unwrap().step, best);
        let min = *losses.iter().min().unwrap();
        let first = losses.iter().position(|&l| l == min).unwrap() as u64 * 10;
        prop_assert_eq!(best, first);
    }
}
