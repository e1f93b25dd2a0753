use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use forge_core::corpus::{gen_corpus, gen_encoder, read_sequences, read_shard, write_sequences, write_shard, SyntheticTaskSpec, TaskKind};
use forge_core::corruption::{span_corrupt, translation_span_corrupt, CorruptionConfig};
use forge_core::decoding::{generate_batch, BeamConfig};
use forge_core::init_map::{build_seq2seq, load_encoder, load_model, save_model, CheckpointArchive, EncoderShape};
use forge_core::metrics::{bleu, rouge_l, BleuConfig};
use forge_core::recipe::{average_models, run_recipe, RecipeConfig, RecipeName};
use forge_core::training::{strip_targets, train_loop, DataSource, ExampleStream, TrainConfig, TrainRun};
use forge_core::vocab::VocabLayout;
use forge_core::{Error, Example, Result};

use crate::args::*;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(GenCommand::Corpus(a)) => gen_corpus_cmd(a),
        Command::Gen(GenCommand::Encoder(a)) => gen_encoder_cmd(a),
        Command::Corrupt(a) => corrupt(a),
        Command::InitMap(a) => init_map(a),
        Command::Pretrain(a) => train(a, false),
        Command::Finetune(a) => train(a, true),
        Command::Generate(a) => generate(a),
        Command::Eval(a) => eval(a),
        Command::Recipe(a) => recipe(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn gen_corpus_cmd(a: GenCorpusArgs) -> Result<()> {
    let spec = SyntheticTaskSpec {
        kind: match a.kind {
            Kind::Copy => TaskKind::Copy,
            Kind::Reverse => TaskKind::Reverse,
            Kind::ToyTranslation => TaskKind::ToyTranslation,
        },
        vocab_size: a.vocab_size,
        num_sentinels: a.num_sentinels,
        min_len: a.min_len,
        max_len: a.max_len,
        sizes: a.sizes,
        seed: a.seed,
    };
    for path in gen_corpus(&spec, &a.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn gen_encoder_cmd(a: GenEncoderArgs) -> Result<()> {
    let shape = EncoderShape {
        vocab_size: a.vocab_size,
        hidden: a.hidden,
        ffn_dim: a.ffn_dim,
        layers: a.layers,
        max_positions: a.max_positions,
    };
    if shape.layers == 0 || !shape.layers.is_multiple_of(2) {
        return Err(Error::Config(format!("--layers must be a positive even number, got {}", shape.layers)));
    }
    shape.model_config(1).validate()?;
    let archive = gen_encoder(&shape, a.seed);
    archive.write_dir(&a.out)?;
    println!("{} tensors -> {}", archive.manifest().len(), a.out.display());
    Ok(())
}

fn corrupt(a: CorruptArgs) -> Result<()> {
    let layout = VocabLayout::new(a.vocab_size, a.num_sentinels)?;
    let base = match a.mode {
        CorruptMode::Span => CorruptionConfig::span(layout.sentinel_base(), a.num_sentinels),
        CorruptMode::Translation => CorruptionConfig::translation(layout.sentinel_base(), a.num_sentinels),
    };
    let config = CorruptionConfig {
        corrupt_prob: a.prob.unwrap_or(base.corrupt_prob),
        mean_span_len: a.mean_span_len,
        max_len: a.max_len,
        seed: a.seed,
        ..base
    };
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut out = Vec::new();
    let mut masked = 0usize;
    let mut total = 0usize;
    match a.mode {
        CorruptMode::Span => {
            let lines = read_sequences(&a.input)?;
            for _ in 0..a.views {
                for s in &lines {
                    let c = span_corrupt(s, &config, &mut rng)?;
                    masked += c.masked_tokens();
                    total += s.len().min(config.max_len);
                    out.push(Example::new(c.source_ids, c.target_ids));
                }
            }
        }
        CorruptMode::Translation => {
            let pairs = read_shard(&a.input)?;
            for _ in 0..a.views {
                for p in &pairs {
                    let c = translation_span_corrupt(&p.source, &p.target, &config, &mut rng)?;
                    masked += c.masked_tokens();
                    total += (p.source.len() + p.target.len()).min(config.max_len.saturating_sub(1));
                    out.push(Example::new(c.source_ids, c.target_ids));
                }
            }
        }
    }
    write_shard(&a.output, &out)?;
    println!(
        "{} examples, masked fraction {:.4} -> {}",
        out.len(),
        masked as f64 / total.max(1) as f64,
        a.output.display()
    );
    Ok(())
}

fn init_map(a: InitMapArgs) -> Result<()> {
    let encoder = load_encoder::<f32>(&CheckpointArchive::read_dir(&a.encoder)?)?;
    let config = encoder.shape.model_config(a.heads);
    let (model, report) = build_seq2seq(&encoder, &config)?;
    save_model(&model, &a.out)?;
    if let Some(path) = &a.report {
        let json = serde_json::to_string_pretty(&report).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        fs::write(path, json + "\n").map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    println!(
        "{} encoder layers -> {} decoder blocks; {} decoder tensors mapped, {} unmapped -> {}",
        config.encoder_layers,
        config.decoder_blocks,
        report.entries.len(),
        report.unmapped.len(),
        a.out.display()
    );
    Ok(())
}

/// Built-in defaults are the fine-tuning regime; pre-training warms up longer.
fn train_config(a: &TrainArgs, finetuning: bool) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_toml(&read_text(p)?)?,
        None if finetuning => TrainConfig::default(),
        None => TrainConfig {
            warmup_steps: 10_000,
            ..TrainConfig::default()
        },
    };
    if let Some(v) = a.mix_ratio {
        cfg.mix_ratio = v;
    }
    if let Some(v) = a.save_every {
        cfg.save_every = v;
    }
    if let Some(v) = a.steps {
        cfg.total_steps = v;
    }
    if let Some(v) = a.lr {
        cfg.lr_peak = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup_steps = v;
    }
    if let Some(v) = a.batch_tokens {
        cfg.batch_tokens = v;
    }
    if let Some(v) = a.smoothing {
        cfg.smoothing = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    if a.mix_data.is_empty() && cfg.mix_ratio > 0.0 {
        return Err(Error::Config("mix_ratio > 0 requires --mix-data".into()));
    }
    if a.average_last > 0 && cfg.save_every == 0 {
        return Err(Error::Config("--average-last needs checkpoints; set --save-every".into()));
    }
    Ok(cfg)
}

fn source(shards: Vec<Vec<Example>>, seed: u64, warm_steps: u64) -> Result<DataSource> {
    let mut streams = shards
        .into_iter()
        .enumerate()
        .map(|(i, s)| ExampleStream::new(s, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    if streams.len() == 1 {
        Ok(DataSource::single(streams.remove(0)))
    } else {
        DataSource::multilingual(streams, warm_steps)
    }
}

fn train(a: TrainArgs, finetuning: bool) -> Result<()> {
    let cfg = train_config(&a, finetuning)?;
    let mut model = load_model::<f32>(&a.model)?;
    let main = a.data.iter().map(|p| read_shard(p)).collect::<Result<Vec<_>>>()?;
    let main = source(main, cfg.seed, cfg.total_steps)?;
    let mix = if a.mix_data.is_empty() {
        None
    } else {
        let mut shards = a.mix_data.iter().map(|p| read_shard(p)).collect::<Result<Vec<_>>>()?;
        if finetuning {
            let layout = VocabLayout::new(model.config().vocab_size, a.num_sentinels)?;
            let strip = CorruptionConfig::span(layout.sentinel_base(), a.num_sentinels);
            shards = shards.iter().map(|s| strip_targets(s, &strip)).collect::<Result<_>>()?;
        }
        Some(source(shards, cfg.seed.wrapping_add(1000), cfg.total_steps)?)
    };
    fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    let log_path = a.out.join("train.log");
    let mut log = fs::File::create(&log_path).map_err(|source| Error::Io { path: log_path, source })?;
    let outcome = train_loop(
        &mut model,
        TrainRun {
            config: &cfg,
            main,
            mix,
            out: Some(&a.out),
            log: Some(&mut log),
            target_loss: None,
        },
    )?;
    let n = a.average_last.min(outcome.checkpoints.len());
    if n > 0 {
        model = average_models(&outcome.checkpoints[outcome.checkpoints.len() - n..])?;
    }
    let final_dir = a.out.join("final");
    save_model(&model, &final_dir)?;
    let last = outcome.reports.iter().rev().find(|r| r.skipped.is_none());
    println!(
        "{} steps, last loss {:.4}, {} checkpoints{} -> {}",
        outcome.steps,
        last.map_or(f64::NAN, |r| r.loss),
        outcome.checkpoints.len(),
        if n > 0 { format!(", averaged last {n}") } else { String::new() },
        final_dir.display()
    );
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let model = load_model::<f32>(&a.model)?;
    let config = BeamConfig {
        beam_size: a.beam,
        max_len: a.max_len,
        length_penalty: a.length_penalty,
        ..BeamConfig::default()
    };
    config.validate()?;
    let sources = read_sequences(&a.input)?;
    let hyps = generate_batch(&model, &sources, &config)?;
    let lines: Vec<Vec<usize>> = hyps.into_iter().map(|h| h.tokens).collect();
    write_sequences(&a.output, &lines)?;
    println!("{} hypotheses -> {}", lines.len(), a.output.display());
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(str::to_string).collect())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (hyp, reference) = (read_lines(&a.hyp)?, read_lines(&a.reference)?);
    let score = match a.metric {
        Metric::Bleu => bleu(&hyp, &reference, &BleuConfig::default())?,
        Metric::RougeL => rouge_l(&hyp, &reference)?,
    };
    println!("{score:.2}");
    Ok(())
}

fn recipe(a: RecipeArgs) -> Result<()> {
    let name = match a.name {
        RecipeKind::PretrainDemo => RecipeName::PretrainDemo,
        RecipeKind::FinetuneDemo => RecipeName::FinetuneDemo,
        RecipeKind::ZeroshotMixDemo => RecipeName::ZeroshotMixDemo,
    };
    let config = match &a.config {
        Some(p) => RecipeConfig::from_toml(&read_text(p)?)?,
        None => RecipeConfig::default(),
    };
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{name}-seed{}", a.seed)));
    let report = run_recipe(name, &config, a.seed, &out)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    Ok(())
}
