use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to 0
/// at `total`. Steps are 1-based.
pub fn lr_schedule(step: u64, peak: f64, warmup: u64, total: u64) -> f64 {
    if warmup > 0 && step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    if step >= total {
        return 0.0;
    }
    peak * (total - step) as f64 / (total - warmup) as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clip {
    /// Global L2 norm before clipping.
    pub norm: f64,
    pub scale: f64,
}

/// Scales all gradients by `min(1, clip_norm / global_norm)`. A non-finite
/// entry fails with the owning parameter's name and leaves `grads` untouched.
pub fn clip_gradients<T: Scalar>(grads: &mut [Vec<T>], names: &[String], clip_norm: f64) -> Result<Clip> {
    let mut sq = 0.0f64;
    for (i, g) in grads.iter().enumerate() {
        let s: f64 = g.iter().map(|v| v.as_f64() * v.as_f64()).sum();
        if !s.is_finite() {
            return Err(Error::NonFinite {
                param: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
            });
        }
        sq += s;
    }
    let norm = sq.sqrt();
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    if scale < 1.0 {
        let s = T::cast(scale);
        for v in grads.iter_mut().flatten() {
            *v = *v * s;
        }
    }
    Ok(Clip { norm, scale })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>, betas: (f64, f64), eps: f64) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![T::zero(); n], vec![T::zero(); n])).unzip();
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            t: 0,
            m,
            v,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step<'p>(&mut self, params: impl IntoIterator<Item = &'p mut [T]>, grads: &[Vec<T>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (T::cast(self.beta1), T::cast(self.beta2));
        let (one, eps) = (T::one(), T::cast(self.eps));
        let (lr_c, c2_sqrt) = (T::cast(lr / c1), T::cast(c2.sqrt()));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p[i] = p[i] - lr_c * m[i] / (v[i].sqrt() / c2_sqrt + eps);
            }
        }
    }
}
