//! End-to-end demos on toy languages. Each recipe chains
//! gen → corrupt → init-map → train → generate → eval inside one output
//! directory and appends one line per stage to `metrics.log`.
//!
//! The toy corpus has two languages (disjoint id bands) linked by a token-wise
//! translation map. Pre-training mixes span corruption on each language's
//! monolingual text (languages drawn by the temperature sampler) with
//! translation span corruption on parallel pairs.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{gen_encoder, read_shard, write_sequences, write_shard, SyntheticTaskSpec, TaskKind};
use crate::corruption::{span_corrupt, translation_span_corrupt, CorruptionConfig};
use crate::decoding::{generate_batch, BeamConfig};
use crate::error::{Error, Result};
use crate::init_map::{average_checkpoints, build_seq2seq, load_encoder, load_model, save_model, CheckpointArchive, EncoderShape};
use crate::metrics::{bleu, rouge_l, BleuConfig};
use crate::model::{Example, ModelConfig, Seq2SeqModel};
use crate::training::{strip_targets, train_loop, DataSource, ExampleStream, TrainConfig, TrainOutcome, TrainRun};
use crate::vocab::VocabLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeName {
    PretrainDemo,
    FinetuneDemo,
    ZeroshotMixDemo,
}

impl RecipeName {
    pub const ALL: [RecipeName; 3] = [Self::PretrainDemo, Self::FinetuneDemo, Self::ZeroshotMixDemo];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PretrainDemo => "pretrain-demo",
            Self::FinetuneDemo => "finetune-demo",
            Self::ZeroshotMixDemo => "zeroshot-mix-demo",
        }
    }
}

impl fmt::Display for RecipeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecipeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown recipe `{s}` (expected pretrain-demo, finetune-demo or zeroshot-mix-demo)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecipeConfig {
    pub num_sentinels: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Parallel pairs used by translation span corruption.
    pub parallel_pairs: usize,
    /// Pairs used for fine-tuning; the first `test_size` double as the
    /// (memorized) test set.
    pub finetune_pairs: usize,
    pub test_size: usize,
    /// Monolingual sentences per language; unequal on purpose so the
    /// temperature sampler has something to rebalance.
    pub mono_sizes: (usize, usize),
    /// Independent corruptions drawn per sentence.
    pub views: usize,
    /// Share of pre-training steps spent on translation span corruption.
    pub translation_share: f64,
    /// Share of fine-tuning steps drawn from (sentinel-stripped) span data in
    /// the zero-shot mixing demo.
    pub mix_ratio: f64,
    pub average_last: usize,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub beam: BeamConfig,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        Self {
            num_sentinels: 8,
            min_len: 3,
            max_len: 10,
            parallel_pairs: 400,
            finetune_pairs: 400,
            test_size: 100,
            mono_sizes: (1000, 250),
            views: 2,
            translation_share: 0.5,
            mix_ratio: 0.5,
            average_last: 5,
            model: ModelConfig::tiny(64),
            pretrain: TrainConfig {
                lr_peak: 2e-3,
                warmup_steps: 100,
                total_steps: 1000,
                batch_tokens: 400,
                save_every: 250,
                log_every: 50,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                lr_peak: 1e-3,
                warmup_steps: 100,
                total_steps: 800,
                batch_tokens: 400,
                save_every: 40,
                log_every: 50,
                ..TrainConfig::default()
            },
            beam: BeamConfig::default(),
        }
    }
}

impl RecipeConfig {
    /// Keys in `text` override the defaults; nested tables merge key by key,
    /// so `[pretrain] total_steps = 50` keeps the other pre-training settings.
    pub fn from_toml(text: &str) -> Result<Self> {
        let bad = |e: &dyn fmt::Display| Error::Config(format!("recipe config: {e}"));
        let overrides: toml::Table = toml::from_str(text).map_err(|e| bad(&e))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| bad(&e))?;
        merge(&mut merged, overrides);
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(|e| bad(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.beam.validate()?;
        self.task_spec(0).validate()?;
        if self.test_size == 0 || self.test_size > self.finetune_pairs {
            return Err(Error::Config(format!(
                "test_size {} must be in 1..={}",
                self.test_size, self.finetune_pairs
            )));
        }
        if self.parallel_pairs == 0 || self.mono_sizes.0 == 0 || self.mono_sizes.1 == 0 || self.views == 0 {
            return Err(Error::Config("corpus sizes and views must be positive".into()));
        }
        for (name, v) in [("translation_share", self.translation_share), ("mix_ratio", self.mix_ratio)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if 2 * self.max_len + 1 >= self.model.max_positions {
            return Err(Error::Config(format!(
                "max_len {} does not fit a translation pair into max_positions {}",
                self.max_len, self.model.max_positions
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<VocabLayout> {
        VocabLayout::new(self.model.vocab_size, self.num_sentinels)
    }

    /// One toy language pair; example `i` is pair `i` of the whole corpus.
    pub fn task_spec(&self, seed: u64) -> SyntheticTaskSpec {
        let (a, b) = self.mono_sizes;
        SyntheticTaskSpec {
            kind: TaskKind::ToyTranslation,
            vocab_size: self.model.vocab_size,
            num_sentinels: self.num_sentinels,
            min_len: self.min_len,
            max_len: self.max_len,
            sizes: vec![(self.parallel_pairs + self.finetune_pairs).max(a).max(b)],
            seed,
        }
    }

    fn span_config(&self, seed: u64) -> Result<CorruptionConfig> {
        let layout = self.layout()?;
        Ok(CorruptionConfig {
            seed,
            ..CorruptionConfig::span(layout.sentinel_base(), self.num_sentinels)
        })
    }

    fn translation_config(&self, seed: u64) -> Result<CorruptionConfig> {
        let layout = self.layout()?;
        Ok(CorruptionConfig {
            seed,
            ..CorruptionConfig::translation(layout.sentinel_base(), self.num_sentinels)
        })
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Scores of one generate → eval pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub bleu: f64,
    pub rouge_l: f64,
    pub outputs: usize,
    /// Outputs containing at least one sentinel id.
    pub sentinel_outputs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeReport {
    pub recipe: RecipeName,
    pub seed: u64,
    pub pretrain_steps: u64,
    pub pretrain_final_loss: f64,
    /// Span-filling quality of the pre-trained model on corrupted pairs.
    pub pretrain_eval: Evaluation,
    pub finetune_steps: Option<u64>,
    pub finetune_final_loss: Option<f64>,
    pub eval: Option<Evaluation>,
    /// Outputs for inputs in the untrained direction (target language in).
    pub zero_shot_eval: Option<Evaluation>,
    /// Directory holding the recipe's final model.
    pub model_dir: PathBuf,
}

struct MetricsLog {
    file: fs::File,
}

impl MetricsLog {
    fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { file })
    }

    fn record(&mut self, stage: &str, started: Instant, fields: &[(&str, String)]) -> Result<()> {
        let mut line = format!("stage={stage} seconds={:.2}", started.elapsed().as_secs_f64());
        for (k, v) in fields {
            line.push_str(&format!(" {k}={v}"));
        }
        writeln!(self.file, "{line}").map_err(|e| Error::io("metrics.log", e))
    }
}

fn in_stage<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(stage))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn corrupt_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Span-corrupts every sentence `views` times.
pub fn corrupt_monolingual(sentences: &[Vec<usize>], config: &CorruptionConfig, views: usize, stream: u64) -> Result<Vec<Example>> {
    let mut rng = corrupt_rng(config.seed, stream);
    let mut out = Vec::with_capacity(sentences.len() * views);
    for _ in 0..views {
        for s in sentences {
            let c = span_corrupt(s, config, &mut rng)?;
            out.push(Example::new(c.source_ids, c.target_ids));
        }
    }
    Ok(out)
}

/// Translation-span-corrupts every pair `views` times.
pub fn corrupt_parallel(pairs: &[Example], config: &CorruptionConfig, views: usize, stream: u64) -> Result<Vec<Example>> {
    let mut rng = corrupt_rng(config.seed, stream);
    let mut out = Vec::with_capacity(pairs.len() * views);
    for _ in 0..views {
        for p in pairs {
            let c = translation_span_corrupt(&p.source, &p.target, config, &mut rng)?;
            out.push(Example::new(c.source_ids, c.target_ids));
        }
    }
    Ok(out)
}

/// Element-wise mean of the models saved in `dirs` (all with `dirs[0]`'s config).
pub fn average_models(dirs: &[PathBuf]) -> Result<Seq2SeqModel<f32>> {
    let first = dirs.first().ok_or_else(|| Error::Argument("no checkpoints to average".into()))?;
    let config = crate::init_map::read_config(first)?;
    let archives = dirs.iter().map(|d| CheckpointArchive::read_dir(d)).collect::<Result<Vec<_>>>()?;
    let avg = average_checkpoints(&archives)?;
    Seq2SeqModel::from_params(config, &avg.to_store()?)
}

fn ids_line(ids: &[usize]) -> String {
    ids.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

/// Beam-decodes `examples`, writes `{prefix}hyp.txt` / `{prefix}ref.txt`
/// under `out` and scores the id strings.
pub fn evaluate(
    model: &Seq2SeqModel<f32>,
    examples: &[Example],
    beam: &BeamConfig,
    layout: &VocabLayout,
    out: &Path,
    prefix: &str,
) -> Result<Evaluation> {
    let sources: Vec<Vec<usize>> = examples.iter().map(|e| e.source.clone()).collect();
    let hyps = generate_batch(model, &sources, beam)?;
    let hyp_ids: Vec<Vec<usize>> = hyps.into_iter().map(|h| h.tokens).collect();
    let refs: Vec<Vec<usize>> = examples.iter().map(|e| e.target.clone()).collect();
    write_sequences(&out.join(format!("{prefix}hyp.txt")), &hyp_ids)?;
    write_sequences(&out.join(format!("{prefix}ref.txt")), &refs)?;
    let hyp_text: Vec<String> = hyp_ids.iter().map(|h| ids_line(h)).collect();
    let ref_text: Vec<String> = refs.iter().map(|r| ids_line(r)).collect();
    Ok(Evaluation {
        bleu: bleu(&hyp_text, &ref_text, &BleuConfig::default())?,
        rouge_l: rouge_l(&hyp_text, &ref_text)?,
        outputs: hyp_ids.len(),
        sentinel_outputs: hyp_ids.iter().filter(|h| h.iter().any(|&t| layout.is_sentinel(t))).count(),
    })
}

fn final_loss(outcome: &TrainOutcome) -> f64 {
    let tail: Vec<f64> = outcome
        .reports
        .iter()
        .rev()
        .filter(|r| r.skipped.is_none())
        .take(10)
        .map(|r| r.loss)
        .collect();
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

struct Corpora {
    parallel: Vec<Example>,
    finetune: Vec<Example>,
    mono: [Vec<Vec<usize>>; 2],
}

fn generate_corpora(cfg: &RecipeConfig, seed: u64, data: &Path) -> Result<Corpora> {
    let spec = cfg.task_spec(seed);
    spec.validate()?;
    let all = spec.language(0);
    let parallel = all[..cfg.parallel_pairs].to_vec();
    let finetune = all[cfg.parallel_pairs..cfg.parallel_pairs + cfg.finetune_pairs].to_vec();
    let mono = [
        all[..cfg.mono_sizes.0].iter().map(|e| e.source.clone()).collect::<Vec<_>>(),
        all[all.len() - cfg.mono_sizes.1..].iter().map(|e| e.target.clone()).collect(),
    ];
    mkdir(data)?;
    write_shard(&data.join("parallel.tsv"), &parallel)?;
    write_shard(&data.join("train.tsv"), &finetune)?;
    write_shard(&data.join("test.tsv"), &finetune[..cfg.test_size])?;
    for (l, m) in mono.iter().enumerate() {
        write_sequences(&data.join(format!("mono{l}.txt")), m)?;
    }
    Ok(Corpora { parallel, finetune, mono })
}

struct Pretrained {
    dir: PathBuf,
    steps: u64,
    loss: f64,
    eval: Evaluation,
    span: [Vec<Example>; 2],
    finetune: Vec<Example>,
    monolingual: [Vec<Vec<usize>>; 2],
}

fn pretrain(cfg: &RecipeConfig, seed: u64, out: &Path, log: &mut MetricsLog) -> Result<Pretrained> {
    let data = out.join("data");
    let t = Instant::now();
    let (corpora, archive) = in_stage("gen", || {
        let corpora = generate_corpora(cfg, seed, &data)?;
        let archive = gen_encoder(&EncoderShape::of(&cfg.model), seed);
        archive.write_dir(&out.join("encoder"))?;
        Ok((corpora, archive))
    })?;
    log.record(
        "gen",
        t,
        &[
            ("parallel", corpora.parallel.len().to_string()),
            ("finetune", corpora.finetune.len().to_string()),
            ("mono", format!("{}/{}", corpora.mono[0].len(), corpora.mono[1].len())),
            ("encoder_tensors", archive.manifest().len().to_string()),
        ],
    )?;

    let t = Instant::now();
    let (span, xspan) = in_stage("corrupt", || {
        let span_cfg = cfg.span_config(seed)?;
        let span = [
            corrupt_monolingual(&corpora.mono[0], &span_cfg, cfg.views, 0)?,
            corrupt_monolingual(&corpora.mono[1], &span_cfg, cfg.views, 1)?,
        ];
        let xspan = corrupt_parallel(&corpora.parallel, &cfg.translation_config(seed)?, cfg.views, 2)?;
        for (l, s) in span.iter().enumerate() {
            write_shard(&data.join(format!("span{l}.tsv")), s)?;
        }
        write_shard(&data.join("xspan.tsv"), &xspan)?;
        Ok((span, xspan))
    })?;
    let masked = |v: &[Example]| {
        let tgt: usize = v.iter().map(|e| e.target.len()).sum();
        let src: usize = v.iter().map(|e| e.source.len()).sum();
        format!("{:.3}", tgt as f64 / (src + tgt) as f64)
    };
    log.record(
        "corrupt",
        t,
        &[
            ("span_examples", (span[0].len() + span[1].len()).to_string()),
            ("xspan_examples", xspan.len().to_string()),
            ("span_target_share", masked(&span[0])),
            ("xspan_target_share", masked(&xspan)),
        ],
    )?;

    let t = Instant::now();
    let model = in_stage("init-map", || {
        let encoder = load_encoder::<f32>(&CheckpointArchive::read_dir(&out.join("encoder"))?)?;
        let (model, report) = build_seq2seq(&encoder, &cfg.model)?;
        save_model(&model, &out.join("init"))?;
        write_json(&out.join("init").join("mapping_report.json"), &report)?;
        Ok((model, report.entries.len(), report.unmapped.len()))
    })?;
    let (mut model, mapped, unmapped) = model;
    log.record("init-map", t, &[("mapped", mapped.to_string()), ("unmapped", unmapped.to_string())])?;

    let t = Instant::now();
    let dir = out.join("pretrained");
    let outcome = in_stage("pretrain", || {
        let train_cfg = TrainConfig {
            seed,
            mix_ratio: cfg.translation_share,
            ..cfg.pretrain.clone()
        };
        let streams = vec![
            ExampleStream::new(span[0].clone(), seed)?,
            ExampleStream::new(span[1].clone(), seed.wrapping_add(1))?,
        ];
        let main = DataSource::multilingual(streams, train_cfg.total_steps)?;
        let mix = DataSource::single(ExampleStream::new(xspan.clone(), seed.wrapping_add(2))?);
        let ckpt = out.join("pretrain");
        mkdir(&ckpt)?;
        let log_path = ckpt.join("train.log");
        let mut train_log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let outcome = train_loop(
            &mut model,
            TrainRun {
                config: &train_cfg,
                main,
                mix: Some(mix),
                out: Some(&ckpt),
                log: Some(&mut train_log),
                target_loss: None,
            },
        )?;
        save_model(&model, &dir)?;
        Ok(outcome)
    })?;
    let loss = final_loss(&outcome);
    log.record("pretrain", t, &[("steps", outcome.steps.to_string()), ("loss", format!("{loss:.4}"))])?;

    let t = Instant::now();
    let held_out: Vec<Example> = xspan.iter().take(cfg.test_size).cloned().collect();
    let layout = cfg.layout()?;
    let eval = in_stage("generate", || evaluate(&model, &held_out, &cfg.beam, &layout, out, "pretrain_"))?;
    log.record(
        "eval",
        t,
        &[("set", "xspan".into()), ("bleu", format!("{:.2}", eval.bleu)), ("rougeL", format!("{:.4}", eval.rouge_l))],
    )?;
    Ok(Pretrained {
        dir,
        steps: outcome.steps,
        loss,
        eval,
        span,
        finetune: corpora.finetune,
        monolingual: corpora.mono,
    })
}

/// Fine-tunes the model in `init` on `train`, optionally mixing in `mix`
/// batches with probability `config.mix_ratio`; checkpoints land in
/// `out/checkpoint_*` and the last `average_last` are averaged.
pub fn finetune(
    init: &Path,
    train: Vec<Example>,
    mix: Option<Vec<Vec<Example>>>,
    config: &TrainConfig,
    average_last: usize,
    out: &Path,
) -> Result<(Seq2SeqModel<f32>, TrainOutcome)> {
    let mut model = load_model::<f32>(init)?;
    let main = DataSource::single(ExampleStream::new(train, config.seed)?);
    let mix = match mix {
        Some(streams) => {
            let streams = streams
                .into_iter()
                .enumerate()
                .map(|(i, s)| ExampleStream::new(s, config.seed.wrapping_add(1 + i as u64)))
                .collect::<Result<Vec<_>>>()?;
            Some(DataSource::multilingual(streams, config.total_steps)?)
        }
        None => None,
    };
    mkdir(out)?;
    let log_path = out.join("train.log");
    let mut train_log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let outcome = train_loop(
        &mut model,
        TrainRun {
            config,
            main,
            mix,
            out: Some(out),
            log: Some(&mut train_log),
            target_loss: None,
        },
    )?;
    let n = average_last.min(outcome.checkpoints.len());
    if n > 1 {
        model = average_models(&outcome.checkpoints[outcome.checkpoints.len() - n..])?;
    }
    Ok((model, outcome))
}

/// Runs `recipe` into `out` and writes `report.json` next to its artifacts.
pub fn run_recipe(recipe: RecipeName, cfg: &RecipeConfig, seed: u64, out: &Path) -> Result<RecipeReport> {
    cfg.validate()?;
    mkdir(out)?;
    let mut log = MetricsLog::create(&out.join("metrics.log"))?;
    let pre = pretrain(cfg, seed, out, &mut log)?;
    let mut report = RecipeReport {
        recipe,
        seed,
        pretrain_steps: pre.steps,
        pretrain_final_loss: pre.loss,
        pretrain_eval: pre.eval.clone(),
        finetune_steps: None,
        finetune_final_loss: None,
        eval: None,
        zero_shot_eval: None,
        model_dir: pre.dir.clone(),
    };
    if recipe != RecipeName::PretrainDemo {
        let mixing = recipe == RecipeName::ZeroshotMixDemo;
        let t = Instant::now();
        let span_cfg = cfg.span_config(seed)?;
        let (model, outcome) = in_stage("finetune", || {
            let train_cfg = TrainConfig {
                seed,
                mix_ratio: if mixing { cfg.mix_ratio } else { 0.0 },
                ..cfg.finetune.clone()
            };
            let mix = if mixing {
                Some(vec![strip_targets(&pre.span[0], &span_cfg)?, strip_targets(&pre.span[1], &span_cfg)?])
            } else {
                None
            };
            let (model, outcome) = finetune(&pre.dir, pre.finetune.clone(), mix, &train_cfg, cfg.average_last, &out.join("finetune"))?;
            save_model(&model, &out.join("finetuned"))?;
            Ok((model, outcome))
        })?;
        let loss = final_loss(&outcome);
        log.record(
            "finetune",
            t,
            &[
                ("steps", outcome.steps.to_string()),
                ("loss", format!("{loss:.4}")),
                ("mix_ratio", format!("{}", if mixing { cfg.mix_ratio } else { 0.0 })),
                ("averaged", cfg.average_last.min(outcome.checkpoints.len()).to_string()),
            ],
        )?;
        report.finetune_steps = Some(outcome.steps);
        report.finetune_final_loss = Some(loss);
        report.model_dir = out.join("finetuned");

        let layout = cfg.layout()?;
        let t = Instant::now();
        let test = read_shard(&out.join("data").join("test.tsv")).map_err(|e| e.in_stage("generate"))?;
        let eval = in_stage("generate", || evaluate(&model, &test, &cfg.beam, &layout, out, ""))?;
        log.record(
            "eval",
            t,
            &[
                ("set", "test".into()),
                ("bleu", format!("{:.2}", eval.bleu)),
                ("rougeL", format!("{:.4}", eval.rouge_l)),
                ("sentinel_outputs", eval.sentinel_outputs.to_string()),
            ],
        )?;
        report.eval = Some(eval);
        if mixing {
            // Target-language sentences fed as input: a direction never seen
            // in fine-tuning, where an unmixed model tends to fall back on
            // its pre-training output format.
            let t = Instant::now();
            let zs: Vec<Example> = pre.monolingual[1]
                .iter()
                .take(cfg.test_size)
                .map(|s| Example::new(s.clone(), s.clone()))
                .collect();
            let eval = in_stage("generate", || evaluate(&model, &zs, &cfg.beam, &layout, out, "zeroshot_"))?;
            log.record(
                "eval",
                t,
                &[("set", "zero-shot".into()), ("sentinel_outputs", eval.sentinel_outputs.to_string())],
            )?;
            report.zero_shot_eval = Some(eval);
        }
    }
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}
