//! Small end-to-end training runs and untrained-model baselines.

use std::fs;

use grounded_lm::corpus::{generate_corpus, generate_minimal_pairs, Phenomenon, WorldSpec};
use grounded_lm::eval::minimal_pair_eval;
use grounded_lm::model::{encode_text, mlm_logits, ModelConfig, ModelParams, ParamGroup};
use grounded_lm::objectives::Objective;
use grounded_lm::pipeline::{DataBudget, Vocab, TAG_PREFIX};
use grounded_lm::rng::seeded;
use grounded_lm::scheduler::SchedulerConfig;
use grounded_lm::tape::Tape;
use grounded_lm::trainer::{self, write_run, RunOptions, RunOutcome, TrainConfig};
use rand::Rng;

fn small_model() -> ModelConfig {
    ModelConfig {
        hidden_dim: 16,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 32,
        codebook_size: 8,
        max_text_len: 32,
        projection_dim: 8,
        ..ModelConfig::default()
    }
}

fn small_train(objectives: Vec<Objective>) -> TrainConfig {
    TrainConfig {
        micro_batch_size: 4,
        accumulation_steps: 2,
        warmup_steps: 2,
        max_steps: 8,
        validation_interval_steps: 4,
        codebook_iters: 2,
        codebook_max_images: 16,
        max_validation_examples: 8,
        objectives,
        ..TrainConfig::default()
    }
}

fn small_run(objectives: Vec<Objective>, images: u64) -> RunOutcome {
    let world = WorldSpec::new(5, 2).unwrap();
    let corpus = generate_corpus(&world, 80).unwrap();
    let (_, out) = trainer::run(
        &corpus,
        DataBudget::new(2000, images).unwrap(),
        Vocab::for_world(&world),
        &small_model(),
        &small_train(objectives),
        &SchedulerConfig::default(),
        RunOptions { config_hash: "abc123".into(), ..RunOptions::default() },
    )
    .unwrap();
    out
}

#[test]
fn training_is_deterministic() {
    let a = small_run(Objective::ALL.to_vec(), 40);
    let b = small_run(Objective::ALL.to_vec(), 40);
    assert_eq!(a.steps, 8);
    assert_eq!(a.events, b.events);
    assert_eq!(a.manifests, b.manifests);
    for (x, y) in a.final_params.tensors.iter().zip(&b.final_params.tensors) {
        assert_eq!(x.data(), y.data());
    }
    assert_eq!(a.metrics.len(), b.metrics.len());
}

#[test]
fn text_only_training_leaves_other_encoders_untouched() {
    let out = small_run(vec![Objective::Mlm], 0);
    let init = ModelParams::init(&out.final_params.config, out.final_params.config.seed).unwrap();
    for i in out.final_params.indices_in(ParamGroup::VisionEncoder) {
        assert_eq!(out.final_params.tensors[i].data(), init.tensors[i].data(), "{}", out.final_params.specs[i].name);
    }
    for m in &out.manifests {
        assert_eq!(m.val_losses.keys().copied().collect::<Vec<_>>(), vec![Objective::Mlm]);
    }
}

#[test]
fn text_predictions_ignore_vision_parameters() {
    let config = ModelConfig { vocab_size: 30, ..small_model() };
    let params = ModelParams::init(&config, 3).unwrap();
    let mut scrambled = params.clone();
    let mut rng = seeded(1, 0);
    for i in scrambled.indices_in(ParamGroup::VisionEncoder) {
        let t = &mut scrambled.tensors[i];
        let noisy: Vec<f64> = t.data().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        *t = grounded_lm::tensor::Tensor::from_vec(t.rows(), t.cols(), noisy);
    }
    let seq = vec![vec![Vocab::CLS_TEXT_ID, 7, Vocab::MASK_ID, 9, 12]];
    let logits = |p: &ModelParams| {
        let mut tape = Tape::new(&p.tensors);
        let enc = encode_text(&mut tape, p, &seq).unwrap();
        let l = mlm_logits(&mut tape, p, &enc, &[(0, 2)]);
        tape.value(l).data().to_vec()
    };
    assert_eq!(logits(&params), logits(&scrambled));
}

#[test]
fn run_artifacts_carry_the_config_hash() {
    let out = small_run(Objective::ALL.to_vec(), 40);
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &out, "abc123").unwrap();
    for name in [trainer::METRICS_LOG, trainer::SCHEDULER_LOG] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("{TAG_PREFIX}abc123"));
    }
    for name in [trainer::BEST_PARAMS, trainer::FINAL_PARAMS] {
        let (_, tag) = ModelParams::load_tagged(&out.final_params.config, &dir.path().join(name)).unwrap();
        assert_eq!(tag, "abc123");
    }
    let manifests = fs::read_dir(dir.path().join(trainer::MANIFEST_DIR)).unwrap().count();
    assert_eq!(manifests, out.manifests.len());
    assert!(out.manifests.iter().all(|m| m.config_hash == "abc123"));
}

#[test]
fn untrained_model_is_at_chance_on_minimal_pairs() {
    let world = WorldSpec::new(20, 5).unwrap();
    let vocab = Vocab::for_world(&world);
    let per = 1000 / Phenomenon::ALL.len();
    let pairs: Vec<_> =
        Phenomenon::ALL.iter().flat_map(|p| generate_minimal_pairs(&world, p.as_str(), per).unwrap()).collect();
    assert!(pairs.len() >= 990);
    let config = ModelConfig { vocab_size: vocab.len(), ..small_model() };
    let params = ModelParams::init(&config, 5).unwrap();
    let r = minimal_pair_eval(&params, &vocab, &pairs).unwrap();
    assert!((0.45..=0.55).contains(&r.overall), "untrained accuracy {}", r.overall);
}
