//! Central finite differences for checking analytic gradients.
//!
//! Only forward evaluations are used here, so the result is independent of any
//! backward implementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Dropout, Example, ModelConfig, Seq2SeqModel};
use crate::tensor::{Graph, Tensor, Var};

/// Numerical gradient of `f` at `x` with step `h`: `(f(x+h) - f(x-h)) / 2h` per coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps near-zero gradients from
/// producing meaningless ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between two gradient vectors and the index where it occurs.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .enumerate()
        .fold((0.0, 0), |(best, at), (i, e)| if e > best { (e, i) } else { (best, at) })
}

/// Outcome of checking one operation on one input configuration.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub max_rel_error: f64,
}

type Builder = fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>;

struct OpCase {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    build: Builder,
}

fn cases() -> Vec<OpCase> {
    let mut out = Vec::new();
    let mut push = |name, shapes: Vec<Vec<usize>>, build: Builder| out.push(OpCase { name, shapes, build });
    for (m, k, n) in [(3, 4, 2), (1, 5, 3), (4, 2, 6)] {
        push("matmul", vec![vec![m, k], vec![k, n]], |g, v| g.matmul(v[0], v[1]));
    }
    for s in [vec![2, 3], vec![4, 1], vec![1, 7]] {
        push("add", vec![s.clone(), s.clone()], |g, v| g.add(v[0], v[1]));
        push("mul", vec![s.clone(), s.clone()], |g, v| g.mul(v[0], v[1]));
        push("scale", vec![s.clone()], |g, v| g.scale(v[0], -1.7));
        push("add_const", vec![s.clone()], |g, v| {
            let c = Tensor::from_fn(g.shape(v[0]), |i| i as f64 * 0.3);
            g.add_const(v[0], &c)
        });
        push("mul_const", vec![s.clone()], |g, v| {
            let n = g.value(v[0]).numel();
            g.mul_const(v[0], (0..n).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect())
        });
        push("transpose", vec![s.clone()], |g, v| g.transpose(v[0]));
        push("gelu", vec![s.clone()], |g, v| g.gelu(v[0]));
        push("sum", vec![s.clone()], |g, v| g.sum(v[0]));
    }
    for (r, c) in [(2, 5), (3, 3), (1, 6)] {
        push("add_row", vec![vec![r, c], vec![c]], |g, v| g.add_row(v[0], v[1]));
        push("softmax_last", vec![vec![r, c]], |g, v| g.softmax(v[0], 1));
        push("softmax_first", vec![vec![r, c]], |g, v| g.softmax(v[0], 0));
        push("layer_norm", vec![vec![r, c], vec![c], vec![c]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
        push("embedding", vec![vec![r + 3, c]], |g, v| g.embedding(v[0], &[1, 0, 1, 2]));
        push("concat_rows", vec![vec![r, c], vec![r + 1, c]], |g, v| g.concat(&[v[0], v[1]], 0));
        push("concat_cols", vec![vec![r, c], vec![r, 2]], |g, v| g.concat(&[v[0], v[1]], 1));
        push("slice", vec![vec![r, c]], |g, v| {
            let n = g.shape(v[0])[1];
            g.slice(v[0], 1, 1, n - 1)
        });
        push("smoothed_nll", vec![vec![r + 1, c]], |g, v| {
            let rows = g.shape(v[0])[0];
            let vocab = g.shape(v[0])[1];
            let targets: Vec<_> = (0..rows).map(|i| if i == 1 { None } else { Some(i % vocab) }).collect();
            g.smoothed_nll(v[0], &targets, 0.1, 0.5)
        });
    }
    push("softmax_mid_axis", vec![vec![2, 3, 2]], |g, v| g.softmax(v[0], 1));
    push("softmax_mid_axis", vec![vec![3, 2, 4]], |g, v| g.softmax(v[0], 1));
    push("softmax_mid_axis", vec![vec![1, 4, 3]], |g, v| g.softmax(v[0], 1));
    out
}

/// Scalar loss `Σ op(inputs) ⊙ w` for a fixed projection `w`, so every output element matters.
fn project(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    if g.value(out).numel() == 1 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(g.shape(out), |_| rng.random_range(-1.0..1.0));
    let w = g.leaf(w);
    let p = g.mul(out, w)?;
    g.sum(p)
}

/// Checks every differentiable graph operation against central differences at
/// 64-bit with `h = 1e-5`, on at least three input shapes each.
pub fn check_all_ops(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for case in cases() {
        let inputs: Vec<Tensor<f64>> = case
            .shapes
            .iter()
            .map(|s| Tensor::from_fn(s, |_| rng.random_range(-2.0..2.0)))
            .collect();
        let proj_seed = rng.random();
        let eval = |vals: &[Tensor<f64>]| -> Result<(f64, Vec<Vec<f64>>)> {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
            let out = (case.build)(&mut g, &vars)?;
            let loss = project(&mut g, out, proj_seed)?;
            g.backward(loss)?;
            let grads = vars
                .iter()
                .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).numel()]))
                .collect();
            Ok((g.value(loss).data()[0], grads))
        };
        let (_, analytic) = eval(&inputs)?;
        let mut worst: f64 = 0.0;
        for (idx, input) in inputs.iter().enumerate() {
            let numeric = central_difference(
                |x| {
                    let mut probe = inputs.clone();
                    probe[idx] = Tensor::new(input.shape().to_vec(), x.to_vec()).expect("same shape");
                    eval(&probe).map(|(l, _)| l).unwrap_or(f64::NAN)
                },
                input.data(),
                1e-5,
            );
            worst = worst.max(max_relative_error(&analytic[idx], &numeric, 1e-6).0);
        }
        reports.push(OpCheck {
            op: case.name,
            shapes: case.shapes,
            max_rel_error: worst,
        });
    }
    Ok(reports)
}

/// Result of checking every parameter of a model.
#[derive(Clone, Debug)]
pub struct ModelCheck {
    pub params_checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
}

/// The tiny configuration used for whole-model gradient checks.
pub fn tiny_check_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        hidden: 8,
        ffn_dim: 16,
        heads: 2,
        encoder_layers: 2,
        decoder_blocks: 1,
        max_positions: 8,
        dropout: 0.0,
        pre_norm: false,
        layer_norm_eps: 1e-5,
    }
}

/// Compares backprop gradients of `forward_loss` against central differences
/// for every scalar parameter of a randomly initialized `f64` model.
pub fn check_model_gradients(config: ModelConfig, smoothing: f64, seed: u64) -> Result<ModelCheck> {
    let mut model = Seq2SeqModel::<f64>::random(config, seed)?;
    // Perturb gains and biases away from 1/0 so their gradients are generic.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let v = model.config().vocab_size;
    let batch = vec![
        // trailing padding in the first source exercises key masking
        Example::new(vec![3, 5, 7, 4, crate::vocab::PAD], vec![6, 9]),
        Example::new(vec![8, 4], vec![5, 3, v - 1]),
    ];
    let tokens: usize = batch.iter().map(Example::loss_tokens).sum();
    let scale = 1.0 / tokens as f64;
    let mut analytic: Vec<Vec<f64>> = model.params().tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
    for ex in &batch {
        let (_, grads) = model.example_gradients(ex, smoothing, scale, &mut Dropout::off())?;
        for (acc, g) in analytic.iter_mut().zip(grads) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    let mut report = ModelCheck {
        params_checked: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
    };
    for idx in 0..model.params().len() {
        let original = model.params().tensors()[idx].clone();
        let name = model.params().names()[idx].clone();
        let mut probe = model.clone();
        let numeric = central_difference(
            |x| {
                probe.params_mut().tensors_mut()[idx].data_mut().copy_from_slice(x);
                probe.forward_loss(&batch, smoothing).unwrap_or(f64::NAN)
            },
            original.data(),
            1e-5,
        );
        let (err, _) = max_relative_error(&analytic[idx], &numeric, 1e-6);
        report.params_checked += original.numel();
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst_param = name;
        }
    }
    Ok(report)
}
