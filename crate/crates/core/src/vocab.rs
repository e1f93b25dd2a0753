//! Token id layout shared by the corpus generators, corruption tasks and decoding.
//!
//! Ids `0..3` are padding, begin-of-sequence and end-of-sequence. The separator
//! and the sentinels occupy the top of the vocabulary; everything in between is
//! ordinary content.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const FIRST_CONTENT: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub vocab_size: usize,
    pub num_sentinels: usize,
}

impl VocabLayout {
    pub fn new(vocab_size: usize, num_sentinels: usize) -> Result<Self> {
        // specials + at least one content id + separator + sentinels
        if vocab_size < FIRST_CONTENT + 2 + num_sentinels {
            return Err(Error::Config(format!(
                "vocab_size {vocab_size} too small for {num_sentinels} sentinels"
            )));
        }
        Ok(Self {
            vocab_size,
            num_sentinels,
        })
    }

    pub fn separator(&self) -> usize {
        self.vocab_size - self.num_sentinels - 1
    }

    pub fn sentinel_base(&self) -> usize {
        self.vocab_size - self.num_sentinels
    }

    pub fn sentinel(&self, k: usize) -> usize {
        self.sentinel_base() + k
    }

    pub fn is_sentinel(&self, id: usize) -> bool {
        (self.sentinel_base()..self.vocab_size).contains(&id)
    }

    pub fn content_range(&self) -> std::ops::Range<usize> {
        FIRST_CONTENT..self.separator()
    }

    pub fn content_size(&self) -> usize {
        self.separator() - FIRST_CONTENT
    }
}
