//! Corpus BLEU (13a tokenization, exponential smoothing) and ROUGE-L.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothing {
    None,
    /// Each zero-match order `n` contributes `1 / (2^k · total_n)`, where `k`
    /// counts zero-match orders so far.
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_ngram: usize,
    pub smoothing: Smoothing,
    pub tokenize_13a: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_ngram: 4,
            smoothing: Smoothing::Exp,
            tokenize_13a: true,
        }
    }
}

static RULES: LazyLock<Vec<(Regex, &'static str)>> = LazyLock::new(|| {
    [
        (r"([\{-~\[-`\x20-&\(-\+:-@/])", " $1 "),
        (r"([^0-9])([\.,])", "$1 $2 "),
        (r"([\.,])([^0-9])", " $1 $2"),
        (r"([0-9])(-)", "$1 $2 "),
    ]
    .into_iter()
    .map(|(re, rep)| (Regex::new(re).expect("static pattern"), rep))
    .collect()
});

/// The `13a` tokenizer: unescapes a few entities and splits off punctuation.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let mut s = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut s = format!(" {s} ");
    for (re, rep) in RULES.iter() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

fn check_corpus(candidates: &[String], references: &[String]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Argument("empty candidate set".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Argument(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

pub fn bleu_stats(candidates: &[String], references: &[String], config: &BleuConfig) -> Result<BleuStats> {
    check_corpus(candidates, references)?;
    let tok = |s: &str| {
        if config.tokenize_13a {
            tokenize_13a(s)
        } else {
            s.split_whitespace().map(str::to_string).collect()
        }
    };
    let n_max = config.max_ngram;
    let mut stats = BleuStats {
        matches: vec![0; n_max],
        totals: vec![0; n_max],
        hyp_len: 0,
        ref_len: 0,
    };
    for (c, r) in candidates.iter().zip(references) {
        let (c, r) = (tok(c), tok(r));
        stats.hyp_len += c.len();
        stats.ref_len += r.len();
        for n in 1..=n_max {
            let rc = ngram_counts(&r, n);
            for (g, cnt) in ngram_counts(&c, n) {
                stats.matches[n - 1] += cnt.min(rc.get(g).copied().unwrap_or(0));
                stats.totals[n - 1] += cnt;
            }
        }
    }
    Ok(stats)
}

impl BleuStats {
    /// Orders with no candidate n-grams at all are dropped from the geometric
    /// mean (effective order), so short corpora are not zeroed out.
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.hyp_len == 0 || self.matches.iter().all(|&m| m == 0) {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut order = 0;
        let mut smooth = 1.0;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            if t == 0 {
                break;
            }
            order += 1;
            let p = if m > 0 {
                m as f64 / t as f64
            } else {
                match smoothing {
                    Smoothing::None => return 0.0,
                    Smoothing::Exp => {
                        smooth *= 2.0;
                        1.0 / (smooth * t as f64)
                    }
                }
            };
            log_sum += p.ln();
        }
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        100.0 * bp * (log_sum / order as f64).exp()
    }
}

pub fn bleu(candidates: &[String], references: &[String], config: &BleuConfig) -> Result<f64> {
    Ok(bleu_stats(candidates, references, config)?.score(config.smoothing))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Mean over pairs of the LCS F-measure on whitespace tokens.
pub fn rouge_l(candidates: &[String], references: &[String]) -> Result<f64> {
    check_corpus(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| {
            let c: Vec<&str> = c.split_whitespace().collect();
            let r: Vec<&str> = r.split_whitespace().collect();
            if c.is_empty() && r.is_empty() {
                return 1.0;
            }
            let l = lcs_len(&c, &r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
            2.0 * p * rec / (p + rec)
        })
        .sum();
    Ok(total / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_punctuation_but_not_numbers() {
        assert_eq!(tokenize_13a("Hello, world."), ["Hello", ",", "world", "."]);
        assert_eq!(tokenize_13a("3.14 and 1,000"), ["3.14", "and", "1,000"]);
        assert_eq!(tokenize_13a("a&amp;b (x)"), ["a", "&", "b", "(", "x", ")"]);
        assert_eq!(tokenize_13a("10-20"), ["10", "-", "20"]);
    }

    #[test]
    fn lcs_small_cases() {
        assert_eq!(lcs_len(&["a", "b", "c", "d"], &["a", "c", "b", "d"]), 3);
        assert_eq!(lcs_len::<u8>(&[], &[1]), 0);
    }
}
