use forge_core::corpus::{SyntheticTaskSpec, TaskKind};
use forge_core::init_map::load_model;
use forge_core::training::{
    checkpoint_dir, train_loop, train_step, DataSource, ExampleStream, Source, TrainConfig, TrainRun, TrainState,
};
use forge_core::{Error, Example, ModelConfig, Seq2SeqModel};

fn micro_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        hidden: 8,
        ffn_dim: 16,
        heads: 2,
        max_positions: 16,
        dropout: 0.1,
        ..ModelConfig::tiny(vocab)
    }
}

fn copy_data(seed: u64) -> Vec<Example> {
    SyntheticTaskSpec {
        kind: TaskKind::Copy,
        vocab_size: 20,
        num_sentinels: 0,
        min_len: 2,
        max_len: 6,
        sizes: vec![50],
        seed,
    }
    .language(0)
}

fn config() -> TrainConfig {
    TrainConfig {
        lr_peak: 1e-3,
        warmup_steps: 5,
        total_steps: 30,
        batch_tokens: 40,
        smoothing: 0.1,
        seed: 4,
        log_every: 0,
        ..TrainConfig::default()
    }
}

fn bits(m: &Seq2SeqModel<f32>) -> Vec<u32> {
    m.params().tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

fn source(data: Vec<Example>, seed: u64) -> DataSource {
    DataSource::single(ExampleStream::new(data, seed).unwrap())
}

fn run(mix: Option<DataSource>, cfg: &TrainConfig) -> (Seq2SeqModel<f32>, Vec<Source>) {
    let mut model = Seq2SeqModel::<f32>::random(micro_config(20), 9).unwrap();
    let out = train_loop(
        &mut model,
        TrainRun {
            config: cfg,
            main: source(copy_data(1), 1),
            mix,
            out: None,
            log: None,
            target_loss: None,
        },
    )
    .unwrap();
    (model, out.reports.iter().map(|r| r.source).collect())
}

#[test]
fn zero_mix_ratio_matches_no_mix_stream() {
    let cfg = config();
    let (plain, _) = run(None, &cfg);
    let (mixed, sources) = run(Some(source(copy_data(2), 2)), &cfg);
    assert!(sources.iter().all(|&s| s == Source::Main));
    assert_eq!(bits(&plain), bits(&mixed));
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = config();
    let (a, _) = run(Some(source(copy_data(2), 2)), &TrainConfig { mix_ratio: 0.5, ..cfg.clone() });
    let (b, _) = run(Some(source(copy_data(2), 2)), &TrainConfig { mix_ratio: 0.5, ..cfg.clone() });
    assert_eq!(bits(&a), bits(&b));
    let (c, _) = run(None, &TrainConfig { seed: 5, ..cfg });
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn mix_draws_follow_the_ratio() {
    let cfg = TrainConfig {
        total_steps: 10_000,
        mix_ratio: 0.5,
        batch_tokens: 1,
        ..config()
    };
    let tiny = ModelConfig {
        hidden: 4,
        ffn_dim: 4,
        heads: 1,
        dropout: 0.0,
        ..micro_config(20)
    };
    let mut model = Seq2SeqModel::<f32>::random(tiny, 1).unwrap();
    let mut state = TrainState::new(&model, &cfg);
    let one = vec![Example::new(vec![3], vec![4])];
    let mut main = source(one.clone(), 1);
    let mut mix = source(one, 2);
    let mut drawn = 0;
    for _ in 0..cfg.total_steps {
        let r = train_step(&mut model, &mut state, &cfg, &mut main, Some(&mut mix)).unwrap();
        drawn += (r.source == Source::Mix) as usize;
    }
    let frac = drawn as f64 / cfg.total_steps as f64;
    assert!((0.48..=0.52).contains(&frac), "{frac}");
}

#[test]
fn non_finite_steps_are_skipped_then_abort() {
    let cfg = config();
    let mut model = Seq2SeqModel::<f32>::random(micro_config(20), 1).unwrap();
    model.params_mut().tensors_mut()[5].data_mut()[0] = f32::NAN;
    let mut state = TrainState::new(&model, &cfg);
    let mut main = source(copy_data(1), 1);
    for step in 1..10 {
        let r = train_step(&mut model, &mut state, &cfg, &mut main, None).unwrap();
        let why = r.skipped.expect("step must be skipped");
        assert!(why.starts_with("non-finite gradient in `embed."), "step {step}: {why}");
    }
    let err = train_step(&mut model, &mut state, &cfg, &mut main, None).unwrap_err();
    assert!(matches!(err, Error::Diverged(_)));
}

#[test]
fn checkpoints_are_written_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        total_steps: 6,
        save_every: 3,
        log_every: 2,
        ..config()
    };
    let mut model = Seq2SeqModel::<f32>::random(micro_config(20), 2).unwrap();
    let mut log = Vec::new();
    let out = train_loop(
        &mut model,
        TrainRun {
            config: &cfg,
            main: source(copy_data(1), 1),
            mix: None,
            out: Some(dir.path()),
            log: Some(&mut log),
            target_loss: None,
        },
    )
    .unwrap();
    assert_eq!(out.checkpoints, vec![checkpoint_dir(dir.path(), 3), checkpoint_dir(dir.path(), 6)]);
    let last: Seq2SeqModel<f32> = load_model(&out.checkpoints[1]).unwrap();
    assert_eq!(bits(&last), bits(&model));
    let log = String::from_utf8(log).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step loss lr grad_norm tokens_per_sec");
    assert!(lines[1].starts_with("2 ") && lines[1].split(' ').count() == 5);
}

#[test]
fn config_loads_from_toml_and_rejects_unknown_keys() {
    let cfg = TrainConfig::from_toml("lr_peak = 0.001\nbetas = [0.9, 0.98]\nmix_ratio = 0.5\n").unwrap();
    assert_eq!(cfg.betas, (0.9, 0.98));
    assert_eq!(cfg.clip_norm, 1.0);
    assert!(TrainConfig::from_toml("learning_rate = 1").is_err());
    assert!(TrainConfig::from_toml("mix_ratio = 1.5").is_err());
}
