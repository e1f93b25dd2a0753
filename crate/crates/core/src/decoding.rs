//! Length-normalized beam search and greedy decoding.
//!
//! Search runs against a [`StepScorer`], which the model implements through
//! [`ModelScorer`]; tests can supply hand-set distributions instead.
//!
//! Every returned hypothesis ends with the end token, which is not included in
//! `tokens`. A hypothesis that reaches `max_len` tokens is forced to end, so
//! `tokens.len() <= max_len` always holds.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecoderCache, Seq2SeqModel};
use crate::tensor::Scalar;
use crate::vocab::{BOS, EOS, PAD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub length_penalty: f64,
    pub eos: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            max_len: 80,
            length_penalty: 1.0,
            eos: EOS,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(Error::Config("beam_size and max_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Includes the end token's log-probability.
    pub log_prob: f64,
    pub score: f64,
    /// False when the end token was forced by `max_len`.
    pub finished: bool,
}

#[derive(Clone, Debug)]
pub struct BeamOutput {
    pub best: Hypothesis,
    pub nbest: Vec<Hypothesis>,
}

/// Next-token log-probabilities for an autoregressive decoder.
pub trait StepScorer {
    type State: Clone;

    /// State after the begin token, with the first distribution.
    fn start(&self) -> Result<(Self::State, Vec<f64>)>;

    /// Appends `token` and returns the distribution over the next token.
    fn step(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>>;

    /// Longest output the scorer can handle, if bounded.
    fn max_len(&self) -> Option<usize> {
        None
    }
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v.as_f64() - z).collect()
}

pub struct ModelScorer<'m, T: Scalar> {
    model: &'m Seq2SeqModel<T>,
    source: Vec<usize>,
}

impl<'m, T: Scalar> ModelScorer<'m, T> {
    pub fn new(model: &'m Seq2SeqModel<T>, source: &[usize]) -> Self {
        Self {
            model,
            source: source.to_vec(),
        }
    }
}

impl<T: Scalar> StepScorer for ModelScorer<'_, T> {
    type State = DecoderCache<T>;

    fn start(&self) -> Result<(Self::State, Vec<f64>)> {
        let mut cache = self.model.start_decoding(&self.source, None)?;
        let logits = self.model.decode_step(&mut cache, BOS)?;
        Ok((cache, log_softmax(&logits)))
    }

    fn step(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.model.decode_step(state, token)?))
    }

    fn max_len(&self) -> Option<usize> {
        // begin token plus max_len outputs must fit in the position table
        Some(self.model.config().max_positions - 1)
    }
}

fn banned(token: usize) -> bool {
    token == PAD || token == BOS
}

fn normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        log_prob
    } else {
        log_prob / (len as f64).powf(alpha)
    }
}

/// Higher score first, then lexicographically smaller tokens.
fn rank(a_score: f64, a: &[usize], b_score: f64, b: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a.cmp(b))
}

struct Alive<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
    next: Vec<f64>,
}

fn finish(tokens: Vec<usize>, log_prob: f64, finished: bool, alpha: f64) -> Hypothesis {
    let score = normalized(log_prob, tokens.len() + 1, alpha);
    Hypothesis {
        tokens,
        log_prob,
        score,
        finished,
    }
}

pub fn beam_search<S: StepScorer>(scorer: &S, config: &BeamConfig) -> Result<BeamOutput> {
    config.validate()?;
    let k = config.beam_size;
    let max_len = scorer.max_len().map_or(config.max_len, |m| m.min(config.max_len));
    let (state, next) = scorer.start()?;
    let mut alive = vec![Alive {
        tokens: Vec::new(),
        log_prob: 0.0,
        state,
        next,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (b, hyp) in alive.iter().enumerate() {
            for (tok, &lp) in hyp.next.iter().enumerate() {
                if !banned(tok) && lp > f64::NEG_INFINITY {
                    candidates.push((b, tok, hyp.log_prob + lp));
                }
            }
        }
        let seq = |&(b, t, _): &(usize, usize, f64)| alive[b].tokens.iter().copied().chain(std::iter::once(t));
        candidates.sort_by(|x, y| y.2.total_cmp(&x.2).then_with(|| seq(x).cmp(seq(y))));
        candidates.truncate(2 * k);

        let mut next_alive = Vec::with_capacity(k);
        for (rank_pos, &(b, tok, lp)) in candidates.iter().enumerate() {
            if tok == config.eos {
                if rank_pos < k {
                    finished.push(finish(alive[b].tokens.clone(), lp, true, config.length_penalty));
                }
                continue;
            }
            if next_alive.len() < k {
                let parent = &alive[b];
                let mut state = parent.state.clone();
                let next = scorer.step(&mut state, tok)?;
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                next_alive.push(Alive {
                    tokens,
                    log_prob: lp,
                    state,
                    next,
                });
            }
        }
        alive = next_alive;
        if finished.len() >= k || alive.is_empty() {
            break;
        }
    }
    if finished.len() < k {
        // out of length: close the survivors with the end token
        for hyp in alive {
            let lp = hyp.log_prob + hyp.next[config.eos];
            finished.push(finish(hyp.tokens, lp, false, config.length_penalty));
        }
    }
    if k > 1 {
        // Length normalization can rank the greedy path above everything the
        // beam kept; carrying it along makes a wider beam never score worse.
        let g = greedy(scorer, config)?;
        if !finished.iter().any(|h| h.tokens == g.tokens) {
            finished.push(g);
        }
    }
    finished.sort_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens));
    let best = finished
        .first()
        .cloned()
        .ok_or_else(|| Error::Argument("beam search produced no hypothesis".into()))?;
    Ok(BeamOutput { best, nbest: finished })
}

/// Argmax decoding; ties go to the lowest token id. `beam_size` is ignored.
pub fn greedy<S: StepScorer>(scorer: &S, config: &BeamConfig) -> Result<Hypothesis> {
    config.validate()?;
    let (eos, alpha) = (config.eos, config.length_penalty);
    let max_len = scorer.max_len().map_or(config.max_len, |m| m.min(config.max_len));
    let (mut state, mut next) = scorer.start()?;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < max_len {
        let (tok, lp) = next
            .iter()
            .enumerate()
            .filter(|&(t, _)| !banned(t))
            .fold((usize::MAX, f64::NEG_INFINITY), |best, (t, &lp)| if lp > best.1 { (t, lp) } else { best });
        log_prob += lp;
        if tok == eos {
            return Ok(finish(tokens, log_prob, true, alpha));
        }
        tokens.push(tok);
        next = scorer.step(&mut state, tok)?;
    }
    Ok(finish(tokens, log_prob + next[eos], false, alpha))
}

/// Beam-decodes every source in parallel; output order follows input order.
pub fn generate_batch<T: Scalar>(
    model: &Seq2SeqModel<T>,
    sources: &[Vec<usize>],
    config: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    sources
        .par_iter()
        .map(|src| beam_search(&ModelScorer::new(model, src), config).map(|o| o.best))
        .collect()
}
