//! Span corruption and its translation variant.
//!
//! Masked spans are replaced in the source by sentinels `S0, S1, …` in order.
//! The target lists each sentinel followed by the tokens it hides and closes
//! with one extra sentinel `S_n`:
//!
//! ```text
//! source  a b S0 e S1 h        target  S0 c d S1 f g S2
//! ```

mod sampler;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use sampler::{entropy, temperature_probs, TemperatureSampler};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub corrupt_prob: f64,
    pub mean_span_len: f64,
    /// Id of `S0`; sentinel `k` is `sentinel_base_id + k`. The id just below
    /// is the separator used by translation span corruption.
    pub sentinel_base_id: usize,
    pub num_sentinels: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn span(sentinel_base_id: usize, num_sentinels: usize) -> Self {
        Self {
            corrupt_prob: 0.15,
            mean_span_len: 3.0,
            sentinel_base_id,
            num_sentinels,
            max_len: 512,
            seed: 0,
        }
    }

    pub fn translation(sentinel_base_id: usize, num_sentinels: usize) -> Self {
        Self {
            corrupt_prob: 0.5,
            ..Self::span(sentinel_base_id, num_sentinels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.corrupt_prob > 0.0 && self.corrupt_prob < 1.0) {
            return Err(Error::Config(format!("corrupt_prob {} outside (0, 1)", self.corrupt_prob)));
        }
        if !(self.mean_span_len >= 1.0) {
            return Err(Error::Config(format!("mean_span_len {} below 1", self.mean_span_len)));
        }
        if self.num_sentinels < 2 {
            return Err(Error::Config("at least two sentinels are needed".into()));
        }
        if self.sentinel_base_id == 0 {
            return Err(Error::Config("sentinel_base_id leaves no room for a separator".into()));
        }
        if self.max_len < 2 {
            return Err(Error::Config(format!("max_len {} below 2", self.max_len)));
        }
        Ok(())
    }

    pub fn sentinel(&self, k: usize) -> usize {
        self.sentinel_base_id + k
    }

    pub fn separator(&self) -> usize {
        self.sentinel_base_id - 1
    }

    /// Index of `id` among the sentinels.
    pub fn sentinel_index(&self, id: usize) -> Option<usize> {
        id.checked_sub(self.sentinel_base_id).filter(|&k| k < self.num_sentinels)
    }

    /// `(masked tokens, spans)` for a sequence of `len` maskable tokens, shrunk
    /// so the spans fit without touching and enough sentinels exist.
    pub fn budget(&self, len: usize) -> (usize, usize) {
        let masked = ((self.corrupt_prob * len as f64).round() as usize).clamp(1, len - 1);
        let spans = ((self.corrupt_prob * len as f64 / self.mean_span_len).round() as usize).max(1);
        let spans = spans.min(masked).min(len - masked + 1).min(self.num_sentinels - 1);
        (masked, spans)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionExample {
    pub source_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    /// `(start, length)` of each masked span in the uncorrupted input.
    pub span_map: Vec<(usize, usize)>,
}

impl CorruptionExample {
    pub fn masked_tokens(&self) -> usize {
        self.span_map.iter().map(|&(_, l)| l).sum()
    }
}

/// `parts` positive integers summing to `total`, uniformly over compositions.
fn composition<R: Rng + ?Sized>(total: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(parts >= 1 && total >= parts);
    let mut cuts: Vec<usize> = index::sample(rng, total - 1, parts - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    cuts.push(total);
    let mut prev = 0;
    cuts.into_iter()
        .map(|c| {
            let d = c - prev;
            prev = c;
            d
        })
        .collect()
}

/// Places `spans` non-overlapping, non-adjacent spans covering `masked` of
/// `len` positions. Returns `(start, length)` sorted by start.
fn place_spans<R: Rng + ?Sized>(len: usize, masked: usize, spans: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let lengths = composition(masked, spans, rng);
    // n+1 gaps; the n-1 interior ones need at least one token each
    let free = len - masked - (spans - 1);
    let extra: Vec<usize> = composition(free + spans + 1, spans + 1, rng).into_iter().map(|g| g - 1).collect();
    let mut out = Vec::with_capacity(spans);
    let mut pos = extra[0];
    for (i, &l) in lengths.iter().enumerate() {
        out.push((pos, l));
        pos += l + extra[i + 1] + 1;
    }
    out
}

fn check_tokens(tokens: &[usize], config: &CorruptionConfig) -> Result<()> {
    match tokens.iter().find(|&&t| config.sentinel_index(t).is_some()) {
        Some(t) => Err(Error::Argument(format!("input already contains sentinel id {t}"))),
        None => Ok(()),
    }
}

fn assemble(tokens: &[usize], spans: Vec<(usize, usize)>, config: &CorruptionConfig) -> CorruptionExample {
    let mut source = Vec::with_capacity(tokens.len());
    let mut target = Vec::new();
    let mut pos = 0;
    for (k, &(start, len)) in spans.iter().enumerate() {
        source.extend_from_slice(&tokens[pos..start]);
        source.push(config.sentinel(k));
        target.push(config.sentinel(k));
        target.extend_from_slice(&tokens[start..start + len]);
        pos = start + len;
    }
    source.extend_from_slice(&tokens[pos..]);
    target.push(config.sentinel(spans.len()));
    CorruptionExample {
        source_ids: source,
        target_ids: target,
        span_map: spans,
    }
}

pub fn span_corrupt<R: Rng + ?Sized>(
    tokens: &[usize],
    config: &CorruptionConfig,
    rng: &mut R,
) -> Result<CorruptionExample> {
    config.validate()?;
    let tokens = &tokens[..tokens.len().min(config.max_len)];
    if tokens.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 tokens, got {}", tokens.len())));
    }
    check_tokens(tokens, config)?;
    let (masked, spans) = config.budget(tokens.len());
    let placed = place_spans(tokens.len(), masked, spans, rng);
    Ok(assemble(tokens, placed, config))
}

const MAX_REJECTIONS: usize = 64;

/// Span corruption over `src ++ [separator] ++ tgt`. The budget counts only
/// sentence tokens; the separator is never masked and no span crosses it.
pub fn translation_span_corrupt<R: Rng + ?Sized>(
    src: &[usize],
    tgt: &[usize],
    config: &CorruptionConfig,
    rng: &mut R,
) -> Result<CorruptionExample> {
    config.validate()?;
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::Argument("both sides of a translation pair must be non-empty".into()));
    }
    if config.max_len < 3 {
        return Err(Error::Config(format!("max_len {} cannot hold a pair", config.max_len)));
    }
    let (mut ls, mut lt) = (src.len(), tgt.len());
    while ls + lt + 1 > config.max_len {
        if ls >= lt {
            ls -= 1
        } else {
            lt -= 1
        }
    }
    let (src, tgt) = (&src[..ls], &tgt[..lt]);
    check_tokens(src, config)?;
    check_tokens(tgt, config)?;

    let content = ls + lt;
    let (masked, spans) = config.budget(content);
    let crosses = |&(s, l): &(usize, usize)| s < ls && s + l > ls;
    let mut placed = place_spans(content, masked, spans, rng);
    for _ in 0..MAX_REJECTIONS {
        if !placed.iter().any(crosses) {
            break;
        }
        placed = place_spans(content, masked, spans, rng);
    }
    if let Some(i) = placed.iter().position(crosses) {
        // every draw crossed: cut the offending span at the boundary
        let (s, l) = placed[i];
        if spans < config.num_sentinels - 1 {
            placed.splice(i..=i, [(s, ls - s), (ls, s + l - ls)]);
        } else if ls - s >= s + l - ls {
            placed[i] = (s, ls - s);
        } else {
            placed[i] = (ls, s + l - ls);
        }
    }
    let shifted = placed
        .into_iter()
        .map(|(s, l)| if s >= ls { (s + 1, l) } else { (s, l) })
        .collect();
    let mut joined = Vec::with_capacity(content + 1);
    joined.extend_from_slice(src);
    joined.push(config.separator());
    joined.extend_from_slice(tgt);
    Ok(assemble(&joined, shifted, config))
}

/// Concatenated span contents of a corruption target, sentinels removed.
pub fn strip_sentinels(target: &[usize], config: &CorruptionConfig) -> Result<Vec<usize>> {
    let malformed = |why: String| Error::Format(format!("malformed corruption target: {why}"));
    let mut expected = 0;
    let mut out = Vec::with_capacity(target.len());
    let mut closed = false;
    for (i, &t) in target.iter().enumerate() {
        if closed {
            return Err(malformed(format!("token {t} after the closing sentinel")));
        }
        match config.sentinel_index(t) {
            Some(k) if k == expected => {
                expected += 1;
                closed = i + 1 == target.len() && k > 0;
            }
            Some(k) => return Err(malformed(format!("sentinel {k} where {expected} was expected"))),
            None if expected == 0 => return Err(malformed(format!("token {t} before the first sentinel"))),
            None => out.push(t),
        }
    }
    if !closed {
        return Err(malformed("missing closing sentinel".into()));
    }
    Ok(out)
}
