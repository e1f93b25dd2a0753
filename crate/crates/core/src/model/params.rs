//! Named parameter storage and the structural layout of the network.
//!
//! Parameters live in one flat, ordered store. The layout structs hold
//! [`ParamId`]s into it, so the same layout addresses stored tensors and the
//! graph leaves bound from them.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gain,
    Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct FfnParams {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub self_attention: AttentionParams,
    pub attn_norm: LayerNormParams,
    pub ffn: FfnParams,
    pub ffn_norm: LayerNormParams,
}

/// Self-attention → bottom FFN → cross-attention → top FFN, each with its own norm.
#[derive(Clone, Debug)]
pub struct InterleavedDecoderBlock {
    pub self_attention: AttentionParams,
    pub self_attn_norm: LayerNormParams,
    pub bottom_ffn: FfnParams,
    pub bottom_ffn_norm: LayerNormParams,
    pub cross_attention: AttentionParams,
    pub cross_attn_norm: LayerNormParams,
    pub top_ffn: FfnParams,
    pub top_ffn_norm: LayerNormParams,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub encoder: Vec<EncoderLayer>,
    pub encoder_norm: LayerNormParams,
    pub decoder: Vec<InterleavedDecoderBlock>,
    pub decoder_norm: LayerNormParams,
}

struct Registry<'c> {
    cfg: &'c ModelConfig,
    specs: Vec<ParamSpec>,
}

impl Registry<'_> {
    fn add(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> ParamId {
        self.specs.push(ParamSpec { name, shape, kind });
        ParamId(self.specs.len() - 1)
    }

    fn linear(&mut self, prefix: &str, w: &str, b: &str, input: usize, output: usize) -> Linear {
        Linear {
            weight: self.add(format!("{prefix}.{w}"), vec![input, output], ParamKind::Weight),
            bias: self.add(format!("{prefix}.{b}"), vec![output], ParamKind::Bias),
        }
    }

    fn norm(&mut self, prefix: &str) -> LayerNormParams {
        let h = self.cfg.hidden;
        LayerNormParams {
            gain: self.add(format!("{prefix}.gain"), vec![h], ParamKind::Gain),
            bias: self.add(format!("{prefix}.bias"), vec![h], ParamKind::Bias),
        }
    }

    fn attention(&mut self, prefix: &str) -> AttentionParams {
        let h = self.cfg.hidden;
        let mut proj = |n: &str| self.linear(&format!("{prefix}.{n}"), "w", "b", h, h);
        AttentionParams {
            q: proj("q"),
            k: proj("k"),
            v: proj("v"),
            out: proj("out"),
        }
    }

    fn ffn(&mut self, prefix: &str) -> FfnParams {
        let (h, f) = (self.cfg.hidden, self.cfg.ffn_dim);
        FfnParams {
            up: self.linear(prefix, "w1", "b1", h, f),
            down: self.linear(prefix, "w2", "b2", f, h),
        }
    }
}

/// Parameter path of encoder layer `i` (1-indexed), e.g. `encoder.layer.3`.
pub fn encoder_layer_prefix(i: usize) -> String {
    format!("encoder.layer.{i}")
}

/// Parameter path of decoder block `i` (1-indexed).
pub fn decoder_block_prefix(i: usize) -> String {
    format!("decoder.block.{i}")
}

impl Layout {
    /// Builds the layout and the ordered parameter specs for `cfg`.
    pub fn new(cfg: &ModelConfig) -> (Self, Vec<ParamSpec>) {
        let mut r = Registry { cfg, specs: Vec::new() };
        let token_embedding = r.add("embed.tokens".into(), vec![cfg.vocab_size, cfg.hidden], ParamKind::Embedding);
        let position_embedding =
            r.add("embed.positions".into(), vec![cfg.max_positions, cfg.hidden], ParamKind::Embedding);
        let encoder = (1..=cfg.encoder_layers)
            .map(|i| {
                let p = encoder_layer_prefix(i);
                EncoderLayer {
                    self_attention: r.attention(&format!("{p}.self_attn")),
                    attn_norm: r.norm(&format!("{p}.attn_norm")),
                    ffn: r.ffn(&format!("{p}.ffn")),
                    ffn_norm: r.norm(&format!("{p}.ffn_norm")),
                }
            })
            .collect();
        let encoder_norm = r.norm("encoder.final_norm");
        let decoder = (1..=cfg.decoder_blocks)
            .map(|i| {
                let p = decoder_block_prefix(i);
                InterleavedDecoderBlock {
                    self_attention: r.attention(&format!("{p}.self_attn")),
                    self_attn_norm: r.norm(&format!("{p}.self_attn_norm")),
                    bottom_ffn: r.ffn(&format!("{p}.bottom_ffn")),
                    bottom_ffn_norm: r.norm(&format!("{p}.bottom_ffn_norm")),
                    cross_attention: r.attention(&format!("{p}.cross_attn")),
                    cross_attn_norm: r.norm(&format!("{p}.cross_attn_norm")),
                    top_ffn: r.ffn(&format!("{p}.top_ffn")),
                    top_ffn_norm: r.norm(&format!("{p}.top_ffn_norm")),
                }
            })
            .collect();
        let decoder_norm = r.norm("decoder.final_norm");
        let layout = Layout {
            token_embedding,
            position_embedding,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
        };
        (layout, r.specs)
    }
}

/// Ordered, uniquely named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Format(format!("duplicate tensor name `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.names.len() - 1))
    }

    /// Random initialization following `specs`: Xavier-normal weights, zero
    /// biases, unit gains, `N(0, 1/hidden)` embeddings.
    pub fn init<R: Rng>(specs: &[ParamSpec], rng: &mut R) -> Self {
        let mut store = Self::new();
        for spec in specs {
            let std = match spec.kind {
                ParamKind::Weight => (2.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt(),
                ParamKind::Embedding => 1.0 / (spec.shape[1] as f64).sqrt(),
                ParamKind::Bias | ParamKind::Gain => 0.0,
            };
            let t = match spec.kind {
                ParamKind::Gain => Tensor::full(&spec.shape, T::one()),
                ParamKind::Bias => Tensor::zeros(&spec.shape),
                _ => {
                    let normal = Normal::new(0.0, std).expect("finite std");
                    Tensor::from_fn(&spec.shape, |_| T::cast(normal.sample(rng)))
                }
            };
            store.insert(spec.name.clone(), t).expect("layout names are unique");
        }
        store
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Reorders and validates against `specs`, failing on the first missing or
    /// mis-shaped tensor.
    pub fn conform(&self, specs: &[ParamSpec]) -> Result<Self> {
        let mut out = Self::new();
        for spec in specs {
            let t = self.require(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::TensorShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            out.insert(spec.name.clone(), t.clone())?;
        }
        Ok(out)
    }
}
