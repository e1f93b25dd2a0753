//! Adam with linear warmup/decay, global-norm clipping and optional mixing of
//! a second (pre-training) data source into fine-tuning.
//!
//! Every source of randomness has its own generator derived from the seed:
//! stream choice, language sampling and dropout never share state, so
//! disabling one (e.g. `mix_ratio = 0`) leaves the others untouched.

mod data;
mod optim;

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::{example_cost, strip_targets, DataSource, ExampleStream};
pub use optim::{clip_gradients, lr_schedule, Adam, Clip};

use crate::error::{Error, Result};
use crate::init_map::save_model;
use crate::model::{Dropout, Example, Seq2SeqModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub smoothing: f64,
    pub batch_tokens: usize,
    /// Batches whose gradients are summed before each update.
    pub accumulation: usize,
    /// Probability that a step draws from the mix (pre-training) source.
    pub mix_ratio: f64,
    pub seed: u64,
    /// 0 disables intermediate checkpoints.
    pub save_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_peak: 3e-4,
            warmup_steps: 4000,
            total_steps: 100_000,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            clip_norm: 1.0,
            smoothing: 0.1,
            batch_tokens: 4096,
            accumulation: 1,
            mix_ratio: 0.0,
            seed: 0,
            save_every: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad(format!("mix_ratio {} outside [0, 1]", self.mix_ratio));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad(format!("smoothing {} outside [0, 1)", self.smoothing));
        }
        if !(self.lr_peak > 0.0) || self.total_steps == 0 || self.batch_tokens == 0 || self.accumulation == 0 {
            return bad("lr_peak, total_steps, batch_tokens and accumulation must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas {:?} outside [0, 1)", self.betas));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn lr(&self, step: u64) -> f64 {
        lr_schedule(step, self.lr_peak, self.warmup_steps, self.total_steps)
    }
}

/// Consecutive non-finite steps tolerated before giving up.
pub const MAX_BAD_STEPS: u32 = 10;
const HISTORY: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Main,
    Mix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub tokens: usize,
    pub source: Source,
    /// Set when the update was skipped for non-finite gradients.
    pub skipped: Option<String>,
}

pub struct TrainState {
    pub step: u64,
    pub adam: Adam<f32>,
    pub history: VecDeque<f64>,
    bad_steps: u32,
    mix_rng: ChaCha8Rng,
    sampler_rng: ChaCha8Rng,
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_MIX: u64 = 1;
const STREAM_SAMPLER: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

impl TrainState {
    pub fn new(model: &Seq2SeqModel<f32>, config: &TrainConfig) -> Self {
        Self {
            step: 0,
            adam: Adam::new(
                model.params().tensors().iter().map(|t| t.numel()),
                config.betas,
                config.adam_eps,
            ),
            history: VecDeque::with_capacity(HISTORY),
            bad_steps: 0,
            mix_rng: derived_rng(config.seed, STREAM_MIX),
            sampler_rng: derived_rng(config.seed, STREAM_SAMPLER),
        }
    }

    /// Mean loss over the last `n` recorded steps.
    pub fn recent_loss(&self, n: usize) -> Option<f64> {
        let n = n.min(self.history.len());
        (n > 0).then(|| self.history.iter().rev().take(n).sum::<f64>() / n as f64)
    }
}

/// Loss and summed gradients over `batch`, normalized by its target token count.
pub fn batch_gradients(
    model: &Seq2SeqModel<f32>,
    batch: &[Example],
    smoothing: f64,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let tokens: usize = batch.iter().map(Example::loss_tokens).sum();
    let scale = 1.0 / tokens as f64;
    let p = model.config().dropout;
    let per_example: Vec<(f32, Vec<Vec<f32>>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| match dropout_seed {
            Some(seed) if p > 0.0 => {
                let mut rng = derived_rng(seed, STREAM_DROPOUT);
                rng.set_word_pos(i as u128 * (1 << 32));
                model.example_gradients(ex, smoothing, scale, &mut Dropout::new(p, &mut rng))
            }
            _ => model.example_gradients(ex, smoothing, scale, &mut Dropout::off()),
        })
        .collect::<Result<_>>()?;
    let mut iter = per_example.into_iter();
    let (loss, mut grads) = iter.next().ok_or_else(|| Error::Argument("empty batch".into()))?;
    let mut loss = loss as f64;
    for (l, g) in iter {
        loss += l as f64;
        for (acc, x) in grads.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(x) {
                *a += b;
            }
        }
    }
    Ok((loss, grads))
}

/// One optimizer step: draw data, backpropagate, clip, update.
pub fn train_step(
    model: &mut Seq2SeqModel<f32>,
    state: &mut TrainState,
    config: &TrainConfig,
    main: &mut DataSource,
    mix: Option<&mut DataSource>,
) -> Result<StepReport> {
    state.step += 1;
    let step = state.step;
    let (source, data) = match mix {
        Some(m) if state.mix_rng.random_bool(config.mix_ratio) => (Source::Mix, m),
        _ => (Source::Main, main),
    };
    let mut batches = Vec::with_capacity(config.accumulation);
    for _ in 0..config.accumulation {
        batches.extend(data.next_batch(config.batch_tokens, &mut state.sampler_rng));
    }
    let tokens = batches.iter().map(example_cost).sum();
    let dropout_seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step;
    let (loss, mut grads) = batch_gradients(model, &batches, config.smoothing, Some(dropout_seed))?;
    let lr = config.lr(step);
    let mut report = StepReport {
        step,
        loss,
        lr,
        grad_norm: f64::NAN,
        tokens,
        source,
        skipped: None,
    };
    match clip_gradients(&mut grads, model.params().names(), config.clip_norm) {
        Ok(clip) if loss.is_finite() => {
            report.grad_norm = clip.norm;
            state.bad_steps = 0;
            state.adam.step(model.params_mut().tensors_mut().iter_mut().map(|t| t.data_mut()), &grads, lr);
        }
        outcome => {
            let what = match outcome {
                Err(Error::NonFinite { param }) => format!("non-finite gradient in `{param}`"),
                Err(e) => return Err(e),
                Ok(_) => format!("non-finite loss {loss}"),
            };
            state.bad_steps += 1;
            if state.bad_steps >= MAX_BAD_STEPS {
                return Err(Error::Diverged(format!("{what} for {MAX_BAD_STEPS} consecutive steps (step {step})")));
            }
            report.skipped = Some(what);
        }
    }
    if report.skipped.is_none() {
        if state.history.len() == HISTORY {
            state.history.pop_front();
        }
        state.history.push_back(loss);
    }
    Ok(report)
}

pub fn checkpoint_dir(out: &Path, step: u64) -> PathBuf {
    out.join(format!("checkpoint_{step}"))
}

/// Everything `train_loop` needs besides the model.
pub struct TrainRun<'a> {
    pub config: &'a TrainConfig,
    pub main: DataSource,
    pub mix: Option<DataSource>,
    /// Checkpoint root; nothing is written when `None`.
    pub out: Option<&'a Path>,
    pub log: Option<&'a mut dyn Write>,
    /// Stops early once the mean loss of the last 10 steps falls below this.
    pub target_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub reports: Vec<StepReport>,
    pub checkpoints: Vec<PathBuf>,
    /// First step at which the 10-step mean loss fell below `target_loss`.
    pub reached_target: Option<u64>,
}

pub fn train_loop(model: &mut Seq2SeqModel<f32>, mut run: TrainRun<'_>) -> Result<TrainOutcome> {
    let config = run.config;
    config.validate()?;
    let mut state = TrainState::new(model, config);
    let mut outcome = TrainOutcome {
        steps: 0,
        reports: Vec::new(),
        checkpoints: Vec::new(),
        reached_target: None,
    };
    let started = Instant::now();
    let mut window_tokens = 0usize;
    let mut window_start = Instant::now();
    if let Some(log) = run.log.as_deref_mut() {
        writeln!(log, "step loss lr grad_norm tokens_per_sec").map_err(|e| Error::io("<log>", e))?;
    }
    while state.step < config.total_steps {
        let report = train_step(model, &mut state, config, &mut run.main, run.mix.as_mut())?;
        let step = report.step;
        window_tokens += report.tokens;
        if let (Some(log), Some(why)) = (run.log.as_deref_mut(), &report.skipped) {
            writeln!(log, "# step {step} skipped: {why}").map_err(|e| Error::io("<log>", e))?;
        }
        if config.log_every > 0 && (step % config.log_every == 0 || step == config.total_steps) {
            if let Some(log) = run.log.as_deref_mut() {
                let secs = window_start.elapsed().as_secs_f64().max(1e-9);
                let loss = state.recent_loss(config.log_every as usize).unwrap_or(f64::NAN);
                writeln!(
                    log,
                    "{step} {loss:.6} {:.6e} {:.4} {:.1}",
                    report.lr,
                    report.grad_norm,
                    window_tokens as f64 / secs
                )
                .map_err(|e| Error::io("<log>", e))?;
            }
            window_tokens = 0;
            window_start = Instant::now();
        }
        if let Some(out) = run.out {
            if config.save_every > 0 && step % config.save_every == 0 {
                let dir = checkpoint_dir(out, step);
                save_model(model, &dir)?;
                outcome.checkpoints.push(dir);
            }
        }
        outcome.reports.push(report);
        if let (Some(target), None) = (run.target_loss, outcome.reached_target) {
            if state.history.len() >= 10 && state.recent_loss(10).is_some_and(|l| l < target) {
                outcome.reached_target = Some(step);
                break;
            }
        }
    }
    outcome.steps = state.step;
    if let Some(log) = run.log.as_deref_mut() {
        writeln!(log, "# {} steps in {:.1}s", state.step, started.elapsed().as_secs_f64())
            .map_err(|e| Error::io("<log>", e))?;
    }
    Ok(outcome)
}
