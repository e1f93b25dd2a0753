//! Whitespace tokenizer with byte fallback.
//!
//! Known words map to one id. Unknown words become a word-start marker followed
//! by one id per UTF-8 byte, so every string round-trips up to whitespace
//! normalization. The separator and sentinels sit at the top of the vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{VocabLayout, FIRST_CONTENT};

const MARKER: usize = FIRST_CONTENT;
const FIRST_BYTE: usize = MARKER + 1;
const FIRST_WORD: usize = FIRST_BYTE + 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    layout: VocabLayout,
}

impl Tokenizer {
    /// Keeps the `max_words` most frequent words (ties broken alphabetically).
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, max_words: usize, num_sentinels: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for line in lines {
            for w in line.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words: Vec<String> = ranked.into_iter().take(max_words).map(|(w, _)| w.to_string()).collect();
        let layout = VocabLayout::new(FIRST_WORD + words.len() + 1 + num_sentinels, num_sentinels)?;
        Ok(Self::from_parts(words, layout))
    }

    fn from_parts(words: Vec<String>, layout: VocabLayout) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), FIRST_WORD + i)).collect();
        Self { words, index, layout }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("tokenizer: {e}")))?;
        Ok(Self::from_parts(t.words, t.layout))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }

    pub fn layout(&self) -> VocabLayout {
        self.layout
    }

    pub fn vocab_size(&self) -> usize {
        self.layout.vocab_size
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        for w in text.split_whitespace() {
            match self.index.get(w) {
                Some(&id) => ids.push(id),
                None => {
                    ids.push(MARKER);
                    ids.extend(w.bytes().map(|b| FIRST_BYTE + b as usize));
                }
            }
        }
        ids
    }

    /// Ids outside the content range (specials, separator, sentinels) are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            match id {
                MARKER => bytes.push(b' '),
                b if (FIRST_BYTE..FIRST_WORD).contains(&b) => bytes.push((b - FIRST_BYTE) as u8),
                w if (FIRST_WORD..FIRST_WORD + self.words.len()).contains(&w) => {
                    bytes.push(b' ');
                    bytes.extend_from_slice(self.words[w - FIRST_WORD].as_bytes());
                }
                _ => {}
            }
        }
        String::from_utf8_lossy(&bytes).trim_start().to_string()
    }
}
