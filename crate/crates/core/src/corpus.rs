//! Synthetic corpora over token ids and the line-oriented shard format.
//!
//! Each "language" owns a disjoint band of content ids. Pair `i` of a corpus is
//! a pure function of `(spec, language, i)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init_map::{synthetic_encoder, CheckpointArchive, EncoderShape};
use crate::model::Example;
use crate::vocab::VocabLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Copy,
    Reverse,
    /// Token-wise map from one band to the next: a fixed permutation plus an offset.
    ToyTranslation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub num_sentinels: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Examples per language.
    pub sizes: Vec<usize>,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn layout(&self) -> Result<VocabLayout> {
        VocabLayout::new(self.vocab_size, self.num_sentinels)
    }

    fn bands_per_language(&self) -> usize {
        match self.kind {
            TaskKind::ToyTranslation => 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.layout()?;
        if self.sizes.is_empty() {
            return Err(Error::Config("at least one language is required".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "length range {}..={} is empty",
                self.min_len, self.max_len
            )));
        }
        let bands = self.sizes.len() * self.bands_per_language();
        if layout.content_size() / bands < 2 {
            return Err(Error::Config(format!(
                "{} content ids cannot form {bands} bands",
                layout.content_size()
            )));
        }
        Ok(())
    }

    /// Content ids `[start, start + width)` of band `b`.
    pub fn band(&self, b: usize) -> (usize, usize) {
        let layout = self.layout().expect("validated spec");
        let bands = self.sizes.len() * self.bands_per_language();
        let width = layout.content_size() / bands;
        (layout.content_range().start + b * width, width)
    }

    /// Fixed permutation of band offsets used by language `lang`'s translation.
    pub fn permutation(&self, lang: usize) -> Vec<usize> {
        let (_, width) = self.band(2 * lang);
        let mut perm: Vec<usize> = (0..width).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x005E_ED0F_7A4B);
        rng.set_stream(lang as u64);
        perm.shuffle(&mut rng);
        perm
    }

    pub fn example(&self, lang: usize, index: usize) -> Example {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((lang as u64) << 40) | index as u64);
        let len = rng.random_range(self.min_len..=self.max_len);
        let b = lang * self.bands_per_language();
        let (start, width) = self.band(b);
        let source: Vec<usize> = (0..len).map(|_| start + rng.random_range(0..width)).collect();
        let target = match self.kind {
            TaskKind::Copy => source.clone(),
            TaskKind::Reverse => source.iter().rev().copied().collect(),
            TaskKind::ToyTranslation => {
                let perm = self.permutation(lang);
                let (out_start, _) = self.band(b + 1);
                source.iter().map(|&t| out_start + perm[t - start]).collect()
            }
        };
        Example::new(source, target)
    }

    pub fn language(&self, lang: usize) -> Vec<Example> {
        (0..self.sizes[lang]).map(|i| self.example(lang, i)).collect()
    }
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn parse_ids(field: &str) -> Result<Vec<usize>> {
    field
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("`{t}` is not a token id"))))
        .collect()
}

/// `source ids <TAB> target ids` per line.
pub fn format_shard(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&join(&ex.source));
        out.push('\t');
        out.push_str(&join(&ex.target));
        out.push('\n');
    }
    out
}

pub fn parse_shard(text: &str) -> Result<Vec<Example>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let (src, tgt) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("line {}: expected `source<TAB>target`", n + 1)))?;
            Ok(Example::new(parse_ids(src)?, parse_ids(tgt)?))
        })
        .collect()
}

pub fn write_shard(path: &Path, examples: &[Example]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_shard(examples).as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_shard(path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_shard(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// One id sequence per line.
pub fn read_sequences(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().map(|l| parse_ids(l.split('\t').next().unwrap_or(""))).collect()
}

pub fn write_sequences(path: &Path, seqs: &[Vec<usize>]) -> Result<()> {
    let text: String = seqs.iter().map(|s| join(s) + "\n").collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `lang{l}.tsv` for every language into `dir`; returns the paths.
pub fn gen_corpus(spec: &SyntheticTaskSpec, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    spec.validate()?;
    (0..spec.sizes.len())
        .map(|l| {
            let path = dir.join(format!("lang{l}.tsv"));
            write_shard(&path, &spec.language(l))?;
            Ok(path)
        })
        .collect()
}

/// A seeded random encoder checkpoint standing in for a pretrained one.
pub fn gen_encoder(shape: &EncoderShape, seed: u64) -> CheckpointArchive {
    CheckpointArchive::from_store(&synthetic_encoder(shape, seed).params)
}
