//! Builds an encoder-decoder whose every parameter is copied from a pretrained
//! encoder. Decoder block `i` takes its self-attention and bottom FFN from
//! encoder layer `2i-1` and its cross-attention and top FFN from layer `2i`
//! (1-indexed); layer norms travel with their sub-layer.

mod archive;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use archive::{
    average_checkpoints, load_model, offsets_from_shapes, read_config, save_archive, save_model, write_config,
    CheckpointArchive, ManifestEntry, BLOB_FILE, CONFIG_FILE, MANIFEST_FILE,
};

use crate::error::{Error, Result};
use crate::model::{encoder_layer_prefix, Layout, ParamKind, ModelConfig, ParamStore, Seq2SeqModel};
use crate::tensor::Scalar;

/// Dimensions recoverable from an encoder checkpoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderShape {
    pub vocab_size: usize,
    pub hidden: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub max_positions: usize,
}

impl EncoderShape {
    pub fn of(config: &ModelConfig) -> Self {
        Self {
            vocab_size: config.vocab_size,
            hidden: config.hidden,
            ffn_dim: config.ffn_dim,
            layers: config.encoder_layers,
            max_positions: config.max_positions,
        }
    }

    /// A model config with these dimensions and the paired decoder depth.
    pub fn model_config(&self, heads: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab_size,
            hidden: self.hidden,
            ffn_dim: self.ffn_dim,
            heads,
            encoder_layers: self.layers,
            decoder_blocks: self.layers / 2,
            max_positions: self.max_positions,
            dropout: 0.0,
            pre_norm: false,
            layer_norm_eps: 1e-5,
        }
    }
}

/// Embeddings, encoder layers and the encoder's final norm.
#[derive(Clone, Debug)]
pub struct EncoderParams<T> {
    pub shape: EncoderShape,
    pub params: ParamStore<T>,
}

fn is_encoder_param(name: &str) -> bool {
    name.starts_with("embed.") || name.starts_with("encoder.")
}

fn dim(store: &ParamStore<f32>, name: &str, axis: usize) -> Result<usize> {
    let t = store.require(name)?;
    t.shape().get(axis).copied().ok_or_else(|| Error::TensorShape {
        name: name.to_string(),
        expected: vec![0; axis + 1],
        found: t.shape().to_vec(),
    })
}

/// Reads the encoder part of an archive, inferring dimensions from the manifest
/// and validating every expected tensor. Non-encoder tensors are ignored.
pub fn load_encoder<T: Scalar>(archive: &CheckpointArchive) -> Result<EncoderParams<T>> {
    let store = archive.to_store::<f32>()?;
    let layers = store
        .names()
        .iter()
        .filter_map(|n| n.strip_prefix("encoder.layer.")?.split('.').next()?.parse::<usize>().ok())
        .max()
        .unwrap_or(0);
    if layers == 0 || layers % 2 != 0 {
        return Err(Error::Config(format!(
            "encoder checkpoint needs a positive even number of layers, found {layers}"
        )));
    }
    let shape = EncoderShape {
        vocab_size: dim(&store, "embed.tokens", 0)?,
        hidden: dim(&store, "embed.tokens", 1)?,
        ffn_dim: dim(&store, &format!("{}.ffn.w1", encoder_layer_prefix(1)), 1)?,
        layers,
        max_positions: dim(&store, "embed.positions", 0)?,
    };
    let (_, specs) = Layout::new(&shape.model_config(1));
    let encoder_specs: Vec<_> = specs.into_iter().filter(|s| is_encoder_param(&s.name)).collect();
    let params = store.conform(&encoder_specs)?.cast();
    Ok(EncoderParams { shape, params })
}

/// A stand-in for a pretrained encoder: every tensor, including gains and
/// biases, is drawn at random so that no two tensors coincide.
pub fn synthetic_encoder(shape: &EncoderShape, seed: u64) -> EncoderParams<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, specs) = Layout::new(&shape.model_config(1));
    let specs: Vec<_> = specs.into_iter().filter(|s| is_encoder_param(&s.name)).collect();
    let mut params = ParamStore::<f32>::init(&specs, &mut rng);
    let noise = Normal::new(0.0, 0.02).expect("finite std");
    for (spec, t) in specs.iter().zip(params.tensors_mut()) {
        if matches!(spec.kind, ParamKind::Gain | ParamKind::Bias) {
            for v in t.data_mut() {
                *v += noise.sample(&mut rng) as f32;
            }
        }
    }
    EncoderParams {
        shape: shape.clone(),
        params,
    }
}

/// Splits a full model's parameters back into an encoder checkpoint.
pub fn encoder_of<T: Scalar>(model: &Seq2SeqModel<T>) -> Result<EncoderParams<T>> {
    load_encoder(&save_archive(model))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Copy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub decoder: String,
    pub source: String,
    pub transform: Transform,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingReport {
    pub entries: Vec<MappingEntry>,
    pub unmapped: Vec<String>,
}

/// Encoder parameter that initializes decoder parameter `name`, if any.
pub fn source_for(name: &str) -> Option<String> {
    if let Some(rest) = name.strip_prefix("decoder.final_norm.") {
        return Some(format!("encoder.final_norm.{rest}"));
    }
    let rest = name.strip_prefix("decoder.block.")?;
    let (block, rest) = rest.split_once('.')?;
    let block: usize = block.parse().ok().filter(|&b| b >= 1)?;
    let (sub, leaf) = rest.split_once('.')?;
    let (layer, target) = match sub {
        "self_attn" => (2 * block - 1, "self_attn"),
        "self_attn_norm" => (2 * block - 1, "attn_norm"),
        "bottom_ffn" => (2 * block - 1, "ffn"),
        "bottom_ffn_norm" => (2 * block - 1, "ffn_norm"),
        "cross_attn" => (2 * block, "self_attn"),
        "cross_attn_norm" => (2 * block, "attn_norm"),
        "top_ffn" => (2 * block, "ffn"),
        "top_ffn_norm" => (2 * block, "ffn_norm"),
        _ => return None,
    };
    Some(format!("{}.{target}.{leaf}", encoder_layer_prefix(layer)))
}

/// Assembles the encoder-decoder from `encoder`: the encoder is copied verbatim,
/// embeddings are shared, and each decoder tensor is copied from its source
/// encoder tensor.
pub fn build_seq2seq<T: Scalar>(
    encoder: &EncoderParams<T>,
    config: &ModelConfig,
) -> Result<(Seq2SeqModel<T>, MappingReport)> {
    config.validate()?;
    let s = &encoder.shape;
    if config.encoder_layers != s.layers {
        return Err(Error::Config(format!(
            "config has {} encoder layers, checkpoint has {}",
            config.encoder_layers, s.layers
        )));
    }
    if config.decoder_blocks * 2 != s.layers {
        return Err(Error::Config(format!(
            "{} decoder blocks cannot be initialized from {} encoder layers (need {})",
            config.decoder_blocks,
            s.layers,
            s.layers / 2
        )));
    }
    let dims = [
        ("vocab_size", config.vocab_size, s.vocab_size),
        ("hidden", config.hidden, s.hidden),
        ("ffn_dim", config.ffn_dim, s.ffn_dim),
        ("max_positions", config.max_positions, s.max_positions),
    ];
    for (name, want, have) in dims {
        if want != have {
            return Err(Error::Config(format!("config {name} {want} differs from checkpoint {have}")));
        }
    }
    let (_, specs) = Layout::new(config);
    let mut store = ParamStore::new();
    let mut report = MappingReport::default();
    for spec in &specs {
        let tensor = if is_encoder_param(&spec.name) {
            encoder.params.require(&spec.name)?.clone()
        } else {
            match source_for(&spec.name) {
                Some(src) => {
                    let t = encoder.params.require(&src)?.clone();
                    report.entries.push(MappingEntry {
                        decoder: spec.name.clone(),
                        source: src,
                        transform: Transform::Copy,
                    });
                    t
                }
                None => {
                    report.unmapped.push(spec.name.clone());
                    return Err(Error::Config(format!("no encoder source for `{}`", spec.name)));
                }
            }
        };
        store.insert(spec.name.clone(), tensor)?;
    }
    let model = Seq2SeqModel::from_params(config.clone(), &store)?;
    Ok((model, report))
}
