//! Transformer encoder plus interleaved decoder.
//!
//! Each decoder block runs self-attention, a bottom FFN, cross-attention and a
//! top FFN, so one block has exactly the shape of two encoder layers. Token and
//! position embeddings are shared by both stacks and the output projection is
//! tied to the token embedding.

mod config;
mod params;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::ModelConfig;
pub use params::{
    decoder_block_prefix, encoder_layer_prefix, AttentionParams, EncoderLayer, FfnParams,
    InterleavedDecoderBlock, LayerNormParams, Layout, Linear, ParamId, ParamKind, ParamSpec, ParamStore,
};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::vocab::{BOS, EOS, PAD};

/// One source/target training pair of token ids (no BOS/EOS).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl Example {
    pub fn new(source: Vec<usize>, target: Vec<usize>) -> Self {
        Self { source, target }
    }

    /// Decoder input `[BOS] ++ target` and labels `target ++ [EOS]`.
    pub fn decoder_io(&self) -> (Vec<usize>, Vec<usize>) {
        let mut input = Vec::with_capacity(self.target.len() + 1);
        input.push(BOS);
        input.extend_from_slice(&self.target);
        let mut labels = self.target.clone();
        labels.push(EOS);
        (input, labels)
    }

    /// Label positions that count towards the loss.
    pub fn loss_tokens(&self) -> usize {
        self.target.iter().filter(|&&t| t != PAD).count() + 1
    }
}

/// Dropout source for one forward pass. Inactive when `p == 0` or no rng is given.
pub struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn new(p: f64, rng: &'r mut dyn RngCore) -> Self {
        Self { p, rng: Some(rng) }
    }

    fn apply<T: Scalar>(&mut self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else { return Ok(x) };
        if self.p <= 0.0 {
            return Ok(x);
        }
        let keep = T::cast(1.0 / (1.0 - self.p));
        let mask = (0..g.value(x).numel())
            .map(|_| if rng.random::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        g.mul_const(x, mask)
    }
}

/// Additive attention mask `[queries × keys]`: `-inf` where a key is hidden.
fn attention_mask<T: Scalar>(queries: usize, keys: usize, visible: impl Fn(usize, usize) -> bool) -> Tensor<T> {
    Tensor::from_fn(&[queries, keys], |i| {
        if visible(i / keys, i % keys) {
            T::zero()
        } else {
            T::neg_infinity()
        }
    })
}

/// Cached state for one incrementally decoded sequence.
#[derive(Clone, Debug)]
pub struct DecoderCache<T> {
    encoder_states: Tensor<T>,
    source_visible: Vec<bool>,
    self_k: Vec<Option<Tensor<T>>>,
    self_v: Vec<Option<Tensor<T>>>,
    cross_k: Vec<Tensor<T>>,
    cross_v: Vec<Tensor<T>>,
    len: usize,
}

impl<T> DecoderCache<T> {
    /// Number of target positions already consumed.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Clone, Debug)]
pub struct Seq2SeqModel<T: Scalar> {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore<T>,
}

impl<T: Scalar> Seq2SeqModel<T> {
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamStore::init(&specs, &mut rng);
        Ok(Self { config, layout, params })
    }

    /// Wraps an existing store, validating names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::new(&config);
        let params = params.conform(&specs)?;
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        Layout::new(&self.config).1
    }

    pub fn cast<U: Scalar>(&self) -> Seq2SeqModel<U> {
        Seq2SeqModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    /// A graph whose first `params().len()` nodes are the parameters, borrowed.
    pub fn bind(&self) -> Graph<'_, T> {
        let mut g = Graph::new();
        for t in self.params.tensors() {
            g.leaf_ref(t);
        }
        g
    }

    fn p(id: ParamId) -> Var {
        Var(id.0)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Argument("empty token sequence".into()));
        }
        if ids.len() > self.config.max_positions {
            return Err(Error::Length {
                len: ids.len(),
                max: self.config.max_positions,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::Index {
                id,
                bound: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn embed(&self, g: &mut Graph<'_, T>, ids: &[usize], first_pos: usize, drop: &mut Dropout) -> Result<Var> {
        let tok = g.embedding(Self::p(self.layout.token_embedding), ids)?;
        let positions: Vec<usize> = (first_pos..first_pos + ids.len()).collect();
        let pos = g.embedding(Self::p(self.layout.position_embedding), &positions)?;
        let x = g.add(tok, pos)?;
        drop.apply(g, x)
    }

    fn linear(g: &mut Graph<'_, T>, x: Var, l: &Linear) -> Result<Var> {
        let y = g.matmul(x, Self::p(l.weight))?;
        g.add_row(y, Self::p(l.bias))
    }

    fn norm(&self, g: &mut Graph<'_, T>, x: Var, n: &LayerNormParams) -> Result<Var> {
        g.layer_norm(x, Self::p(n.gain), Self::p(n.bias), self.config.layer_norm_eps)
    }

    fn ffn(g: &mut Graph<'_, T>, x: Var, f: &FfnParams) -> Result<Var> {
        let h = Self::linear(g, x, &f.up)?;
        let h = g.gelu(h)?;
        Self::linear(g, h, &f.down)
    }

    /// Multi-head attention of `queries` (pre-projection) over already projected `k`/`v`.
    fn attend(
        &self,
        g: &mut Graph<'_, T>,
        p: &AttentionParams,
        queries: Var,
        k: Var,
        v: Var,
        mask: &Tensor<T>,
        drop: &mut Dropout,
    ) -> Result<Var> {
        let q = Self::linear(g, queries, &p.q)?;
        let dh = self.config.head_dim();
        let scale = T::cast(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.slice(q, 1, h * dh, dh)?;
            let kh = g.slice(k, 1, h * dh, dh)?;
            let vh = g.slice(v, 1, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, scale)?;
            let s = g.add_const(s, mask)?;
            let a = g.softmax(s, 1)?;
            let a = drop.apply(g, a)?;
            heads.push(g.matmul(a, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        Self::linear(g, cat, &p.out)
    }

    /// Residual wrapper: post-norm `LN(x + f(x))` or pre-norm `x + f(LN(x))`.
    fn sublayer(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        norm: &LayerNormParams,
        drop: &mut Dropout,
        f: impl FnOnce(&mut Graph<'_, T>, Var, &mut Dropout) -> Result<Var>,
    ) -> Result<Var> {
        if self.config.pre_norm {
            let n = self.norm(g, x, norm)?;
            let y = f(g, n, drop)?;
            let y = drop.apply(g, y)?;
            g.add(x, y)
        } else {
            let y = f(g, x, drop)?;
            let y = drop.apply(g, y)?;
            let s = g.add(x, y)?;
            self.norm(g, s, norm)
        }
    }

    /// Encoder forward inside `g`. `source_visible[j] == false` hides key `j` (padding).
    pub fn encode_graph(
        &self,
        g: &mut Graph<'_, T>,
        source_ids: &[usize],
        source_visible: Option<&[bool]>,
        drop: &mut Dropout,
    ) -> Result<Var> {
        self.check_ids(source_ids)?;
        let n = source_ids.len();
        let visible = visibility(source_visible, n)?;
        let mask = attention_mask(n, n, |_, j| visible[j]);
        let mut x = self.embed(g, source_ids, 0, drop)?;
        for layer in &self.layout.encoder {
            x = self.sublayer(g, x, &layer.attn_norm, drop, |g, h, d| {
                let k = Self::linear(g, h, &layer.self_attention.k)?;
                let v = Self::linear(g, h, &layer.self_attention.v)?;
                self.attend(g, &layer.self_attention, h, k, v, &mask, d)
            })?;
            x = self.sublayer(g, x, &layer.ffn_norm, drop, |g, h, _| Self::ffn(g, h, &layer.ffn))?;
        }
        self.norm(g, x, &self.layout.encoder_norm)
    }

    /// Runs the decoder stack over `ids` occupying positions `first_pos..`.
    /// `past[b]` holds block `b`'s projected self-attention keys/values for
    /// earlier positions; the returned vector holds them extended by `ids`.
    #[allow(clippy::too_many_arguments)]
    fn decoder_stack(
        &self,
        g: &mut Graph<'_, T>,
        ids: &[usize],
        first_pos: usize,
        past: &[Option<(Var, Var)>],
        cross: &[(Var, Var)],
        source_visible: &[bool],
        drop: &mut Dropout,
    ) -> Result<(Var, Vec<(Var, Var)>)> {
        let n = ids.len();
        let total = first_pos + n;
        if total > self.config.max_positions {
            return Err(Error::Length {
                len: total,
                max: self.config.max_positions,
            });
        }
        let causal = attention_mask(n, total, |i, j| j <= first_pos + i);
        let cross_mask = attention_mask(n, source_visible.len(), |_, j| source_visible[j]);
        let mut x = self.embed(g, ids, first_pos, drop)?;
        let mut present = Vec::with_capacity(self.layout.decoder.len());
        for (b, block) in self.layout.decoder.iter().enumerate() {
            let mut kv = None;
            x = self.sublayer(g, x, &block.self_attn_norm, drop, |g, h, d| {
                let k_new = Self::linear(g, h, &block.self_attention.k)?;
                let v_new = Self::linear(g, h, &block.self_attention.v)?;
                let (k, v) = match past[b] {
                    Some((pk, pv)) => (g.concat(&[pk, k_new], 0)?, g.concat(&[pv, v_new], 0)?),
                    None => (k_new, v_new),
                };
                kv = Some((k, v));
                self.attend(g, &block.self_attention, h, k, v, &causal, d)
            })?;
            present.push(kv.expect("self-attention ran"));
            x = self.sublayer(g, x, &block.bottom_ffn_norm, drop, |g, h, _| Self::ffn(g, h, &block.bottom_ffn))?;
            let (ck, cv) = cross[b];
            x = self.sublayer(g, x, &block.cross_attn_norm, drop, |g, h, d| {
                self.attend(g, &block.cross_attention, h, ck, cv, &cross_mask, d)
            })?;
            x = self.sublayer(g, x, &block.top_ffn_norm, drop, |g, h, _| Self::ffn(g, h, &block.top_ffn))?;
        }
        let x = self.norm(g, x, &self.layout.decoder_norm)?;
        Ok((x, present))
    }

    fn cross_kv(&self, g: &mut Graph<'_, T>, enc: Var) -> Result<Vec<(Var, Var)>> {
        self.layout
            .decoder
            .iter()
            .map(|block| {
                let k = Self::linear(g, enc, &block.cross_attention.k)?;
                let v = Self::linear(g, enc, &block.cross_attention.v)?;
                Ok((k, v))
            })
            .collect()
    }

    fn logits(&self, g: &mut Graph<'_, T>, hidden: Var) -> Result<Var> {
        let et = g.transpose(Self::p(self.layout.token_embedding))?;
        g.matmul(hidden, et)
    }

    /// Full-sequence decoder forward inside `g`, returning `[len × vocab]` logits.
    pub fn decode_graph(
        &self,
        g: &mut Graph<'_, T>,
        target_ids: &[usize],
        encoder_states: Var,
        source_visible: &[bool],
        drop: &mut Dropout,
    ) -> Result<Var> {
        self.check_ids(target_ids)?;
        let enc_shape = g.shape(encoder_states).to_vec();
        if enc_shape != [source_visible.len(), self.config.hidden] {
            return Err(Error::Shape {
                op: "decode",
                left: enc_shape,
                right: vec![source_visible.len(), self.config.hidden],
            });
        }
        let cross = self.cross_kv(g, encoder_states)?;
        let past = vec![None; self.layout.decoder.len()];
        let (h, _) = self.decoder_stack(g, target_ids, 0, &past, &cross, source_visible, drop)?;
        self.logits(g, h)
    }

    /// Encoder hidden states `[src_len × hidden]`.
    pub fn encode(&self, source_ids: &[usize], source_visible: Option<&[bool]>) -> Result<Tensor<T>> {
        let mut g = self.bind();
        let out = self.encode_graph(&mut g, source_ids, source_visible, &mut Dropout::off())?;
        Ok(g.value(out).clone())
    }

    /// Decoder logits `[tgt_len × vocab]` for a whole target prefix.
    pub fn decode(
        &self,
        target_ids: &[usize],
        encoder_states: &Tensor<T>,
        source_visible: Option<&[bool]>,
    ) -> Result<Tensor<T>> {
        let visible = visibility(source_visible, encoder_states.shape()[0])?;
        let mut g = self.bind();
        let enc = g.leaf_ref(encoder_states);
        let out = self.decode_graph(&mut g, target_ids, enc, &visible, &mut Dropout::off())?;
        Ok(g.value(out).clone())
    }

    /// Builds the loss of one example inside `g`: label-smoothed NLL summed over
    /// its target tokens and multiplied by `scale`. Source padding ids are masked.
    pub fn example_loss_graph(
        &self,
        g: &mut Graph<'_, T>,
        example: &Example,
        smoothing: f64,
        scale: f64,
        drop: &mut Dropout,
    ) -> Result<Var> {
        let visible: Vec<bool> = example.source.iter().map(|&t| t != PAD).collect();
        let enc = self.encode_graph(g, &example.source, Some(&visible), drop)?;
        let (input, labels) = example.decoder_io();
        let logits = self.decode_graph(g, &input, enc, &visible, drop)?;
        let targets: Vec<Option<usize>> = labels.iter().map(|&t| (t != PAD).then_some(t)).collect();
        g.smoothed_nll(logits, &targets, smoothing, scale)
    }

    /// Mean label-smoothed NLL over all non-padding target tokens of the batch.
    pub fn forward_loss(&self, batch: &[Example], smoothing: f64) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let tokens: usize = batch.iter().map(Example::loss_tokens).sum();
        let mut total = T::zero();
        for ex in batch {
            let mut g = self.bind();
            let l = self.example_loss_graph(&mut g, ex, smoothing, 1.0, &mut Dropout::off())?;
            total = total + g.value(l).data()[0];
        }
        Ok(total / T::cast(tokens as f64))
    }

    /// Loss and parameter gradients of one example, scaled by `scale`.
    pub fn example_gradients(
        &self,
        example: &Example,
        smoothing: f64,
        scale: f64,
        drop: &mut Dropout,
    ) -> Result<(T, Vec<Vec<T>>)> {
        let mut g = self.bind();
        let loss = self.example_loss_graph(&mut g, example, smoothing, scale, drop)?;
        g.backward(loss)?;
        let value = g.value(loss).data()[0];
        let grads = (0..self.params.len())
            .map(|i| {
                g.take_grad(Var(i))
                    .unwrap_or_else(|| vec![T::zero(); self.params.tensors()[i].numel()])
            })
            .collect();
        Ok((value, grads))
    }

    /// Encodes `source_ids` and prepares an empty decoder cache.
    pub fn start_decoding(&self, source_ids: &[usize], source_visible: Option<&[bool]>) -> Result<DecoderCache<T>> {
        let visible = visibility(source_visible, source_ids.len())?;
        let mut g = self.bind();
        let enc = self.encode_graph(&mut g, source_ids, Some(&visible), &mut Dropout::off())?;
        let cross = self.cross_kv(&mut g, enc)?;
        let blocks = self.layout.decoder.len();
        Ok(DecoderCache {
            encoder_states: g.value(enc).clone(),
            source_visible: visible,
            self_k: vec![None; blocks],
            self_v: vec![None; blocks],
            cross_k: cross.iter().map(|&(k, _)| g.value(k).clone()).collect(),
            cross_v: cross.iter().map(|&(_, v)| g.value(v).clone()).collect(),
            len: 0,
        })
    }

    /// Feeds one target token and returns the next-token logits (length `vocab`).
    pub fn decode_step(&self, cache: &mut DecoderCache<T>, token: usize) -> Result<Vec<T>> {
        self.check_ids(&[token])?;
        let mut g = self.bind();
        let past: Vec<Option<(Var, Var)>> = cache
            .self_k
            .iter()
            .zip(&cache.self_v)
            .map(|(k, v)| match (k, v) {
                (Some(k), Some(v)) => Some((g.leaf_ref(k), g.leaf_ref(v))),
                _ => None,
            })
            .collect();
        let cross: Vec<(Var, Var)> = cache
            .cross_k
            .iter()
            .zip(&cache.cross_v)
            .map(|(k, v)| (g.leaf_ref(k), g.leaf_ref(v)))
            .collect();
        let (h, present) = self.decoder_stack(
            &mut g,
            &[token],
            cache.len,
            &past,
            &cross,
            &cache.source_visible,
            &mut Dropout::off(),
        )?;
        let logits = self.logits(&mut g, h)?;
        let out = g.value(logits).data().to_vec();
        let present: Vec<(Tensor<T>, Tensor<T>)> =
            present.iter().map(|&(k, v)| (g.value(k).clone(), g.value(v).clone())).collect();
        drop(g);
        for (b, (k, v)) in present.into_iter().enumerate() {
            cache.self_k[b] = Some(k);
            cache.self_v[b] = Some(v);
        }
        cache.len += 1;
        Ok(out)
    }

    pub fn encoder_states<'c>(&self, cache: &'c DecoderCache<T>) -> &'c Tensor<T> {
        &cache.encoder_states
    }
}

fn visibility(visible: Option<&[bool]>, n: usize) -> Result<Vec<bool>> {
    match visible {
        Some(v) if v.len() != n => Err(Error::Shape {
            op: "source_mask",
            left: vec![v.len()],
            right: vec![n],
        }),
        Some(v) => Ok(v.to_vec()),
        None => Ok(vec![true; n]),
    }
}

/// Number of scalar parameters in one encoder layer / one decoder block of `cfg`.
pub fn sublayer_param_counts(cfg: &ModelConfig) -> (usize, usize) {
    let (_, specs) = Layout::new(cfg);
    let count = |prefix: &str| -> usize {
        specs
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    };
    (
        count(&format!("{}.", encoder_layer_prefix(1))),
        count(&format!("{}.", decoder_block_prefix(1))),
    )
}
