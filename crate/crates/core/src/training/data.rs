use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corruption::{strip_sentinels, CorruptionConfig, TemperatureSampler};
use crate::error::{Error, Result};
use crate::model::Example;

/// Tokens an example costs against the batch budget.
pub fn example_cost(ex: &Example) -> usize {
    ex.source.len() + ex.target.len() + 1
}

/// Cycles over a fixed example set, reshuffling each epoch with a generator
/// keyed by `(seed, epoch)`.
#[derive(Clone, Debug)]
pub struct ExampleStream {
    examples: Vec<Example>,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

impl ExampleStream {
    pub fn new(examples: Vec<Example>, seed: u64) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Argument("empty data stream".into()));
        }
        let mut s = Self {
            order: (0..examples.len()).collect(),
            examples,
            pos: 0,
            epoch: 0,
            seed,
        };
        s.order.shuffle(&mut epoch_rng(seed, 0));
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    fn peek(&self) -> &Example {
        &self.examples[self.order[self.pos]]
    }

    fn advance(&mut self) {
        self.pos += 1;
        if self.pos == self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.order = (0..self.examples.len()).collect();
            self.order.shuffle(&mut epoch_rng(self.seed, self.epoch));
        }
    }

    /// Next examples in order while their total cost stays within `budget`;
    /// always at least one.
    pub fn next_batch(&mut self, budget: usize) -> Vec<Example> {
        let mut batch = vec![self.peek().clone()];
        let mut used = example_cost(&batch[0]);
        self.advance();
        while batch.len() < self.examples.len() {
            let cost = example_cost(self.peek());
            if used + cost > budget {
                break;
            }
            used += cost;
            batch.push(self.peek().clone());
            self.advance();
        }
        batch
    }
}

/// One or more language streams; with several, each batch comes from one
/// language drawn by a temperature sampler that advances once per batch.
#[derive(Clone, Debug)]
pub struct DataSource {
    streams: Vec<ExampleStream>,
    sampler: Option<TemperatureSampler>,
}

impl DataSource {
    pub fn single(stream: ExampleStream) -> Self {
        Self {
            streams: vec![stream],
            sampler: None,
        }
    }

    pub fn multilingual(streams: Vec<ExampleStream>, warm_steps: u64) -> Result<Self> {
        let sizes = streams.iter().map(|s| s.len() as u64).collect();
        let sampler = TemperatureSampler::new(sizes, warm_steps)?;
        Ok(Self {
            streams,
            sampler: Some(sampler),
        })
    }

    pub fn streams(&self) -> &[ExampleStream] {
        &self.streams
    }

    pub fn sampler(&self) -> Option<&TemperatureSampler> {
        self.sampler.as_ref()
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, budget: usize, rng: &mut R) -> Vec<Example> {
        let lang = match &mut self.sampler {
            Some(s) => {
                let l = s.sample(rng);
                s.advance();
                l
            }
            None => 0,
        };
        self.streams[lang].next_batch(budget)
    }
}

/// Replaces each corruption target by its bare span contents.
pub fn strip_targets(examples: &[Example], config: &CorruptionConfig) -> Result<Vec<Example>> {
    examples
        .iter()
        .map(|ex| Ok(Example::new(ex.source.clone(), strip_sentinels(&ex.target, config)?)))
        .collect()
}
