use std::borrow::Cow;

use super::kernels::{self, split_axis};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    MulConst(Var, Vec<T>),
    Transpose(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    SmoothedNll {
        logits: Var,
        targets: Vec<Option<usize>>,
        smoothing: T,
        scale: T,
        probs: Vec<T>,
    },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
}

/// Append-only operation tape. Insertion order is a topological order, and
/// [`Graph::backward`] walks it once in reverse.
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(Cow::Owned(Tensor { shape, data }), op)
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf)
    }

    /// Leaf that borrows its value, e.g. a model parameter.
    pub fn leaf_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads[v.0].take()
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let (m, k) = ta.dims2().map_err(|_| shape_err("matmul", ta.shape(), tb.shape()))?;
        let (k2, n) = tb.dims2().map_err(|_| shape_err("matmul", ta.shape(), tb.shape()))?;
        if k != k2 {
            return Err(shape_err("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        Ok(self.push_owned(vec![m, n], out, Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push_owned(shape, data, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push_owned(shape, data, Op::Mul(a, b)))
    }

    /// Adds a vector to every row (broadcast over all leading dimensions).
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.val(x), self.val(bias));
        let n = *tx.shape().last().unwrap();
        if tb.numel() != n || tb.rank() != 1 {
            return Err(shape_err("add_row", tx.shape(), tb.shape()));
        }
        let b = tb.data();
        let data = tx
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        let shape = tx.shape().to_vec();
        Ok(self.push_owned(shape, data, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let tx = self.val(x);
        let data = tx.data().iter().map(|&v| v * c).collect();
        let shape = tx.shape().to_vec();
        Ok(self.push_owned(shape, data, Op::Scale(x, c)))
    }

    /// Adds a constant tensor (e.g. an additive attention mask); no gradient flows to it.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let tx = self.val(x);
        if tx.shape() != c.shape() {
            return Err(shape_err("add_const", tx.shape(), c.shape()));
        }
        let data = tx.data().iter().zip(c.data()).map(|(&v, &m)| v + m).collect();
        let shape = tx.shape().to_vec();
        Ok(self.push_owned(shape, data, Op::AddConst(x)))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let tx = self.val(x);
        if tx.numel() != mask.len() {
            return Err(shape_err("mul_const", tx.shape(), &[mask.len()]));
        }
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = tx.shape().to_vec();
        Ok(self.push_owned(shape, data, Op::MulConst(x, mask)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.val(x);
        let (r, c) = tx.dims2()?;
        let src = tx.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push_owned(vec![c, r], out, Op::Transpose(x)))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.val(x);
        if axis >= tx.rank() {
            return Err(Error::Axis {
                axis,
                rank: tx.rank(),
            });
        }
        let (outer, len, inner) = split_axis(tx.shape(), axis);
        let mut out = vec![T::zero(); tx.numel()];
        kernels::softmax(tx.data(), &mut out, outer, len, inner);
        let shape = tx.shape().to_vec();
        Ok(self.push_owned(shape, out, Op::Softmax { x, axis }))
    }

    /// Normalizes over the last dimension, then applies `gain` and `bias`.
    /// `eps` is added to the variance inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.val(x), self.val(gain), self.val(bias));
        let n = *tx.shape().last().unwrap();
        if tg.numel() != n || tb.numel() != n {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let eps = T::cast(eps);
        let inv_n = T::one() / T::cast(n as f64);
        let rows = tx.numel() / n;
        let mut xhat = vec![T::zero(); tx.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let shape = tx.shape().to_vec();
        Ok(self.push_owned(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let tx = self.val(x);
        let data = tx.data().iter().map(|&v| kernels::gelu(v)).collect();
        let shape = tx.shape().to_vec();
        Ok(self.push_owned(shape, data, Op::Gelu(x)))
    }

    /// Gathers rows of a `[rows × dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.val(table);
        let (rows, dim) = tt.dims2()?;
        if ids.is_empty() {
            return Err(Error::Argument("embedding lookup with no ids".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index { id, bound: rows });
            }
            out.extend_from_slice(tt.row(id));
        }
        Ok(self.push_owned(
            vec![ids.len(), dim],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.val(inputs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::Axis {
                axis,
                rank: first.len(),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.val(v).shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.val(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push_owned(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let tx = self.val(x);
        if axis >= tx.rank() {
            return Err(Error::Axis {
                axis,
                rank: tx.rank(),
            });
        }
        if len == 0 || start + len > tx.shape()[axis] {
            return Err(Error::Index {
                id: start + len,
                bound: tx.shape()[axis],
            });
        }
        let (outer, full, inner) = split_axis(tx.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&tx.data()[base..base + len * inner]);
        }
        let mut shape = tx.shape().to_vec();
        shape[axis] = len;
        Ok(self.push_owned(shape, out, Op::Slice { x, axis, start }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x).sum();
        Ok(self.push_owned(vec![1], vec![s], Op::Sum(x)))
    }

    /// Label-smoothed negative log-likelihood summed over rows of `[len × vocab]`
    /// logits and multiplied by `scale`. The smoothed target puts `1 - smoothing`
    /// on the gold token plus `smoothing / vocab` on every token. `None` targets
    /// are ignored.
    pub fn smoothed_nll(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        smoothing: f64,
        scale: f64,
    ) -> Result<Var> {
        let tl = self.val(logits);
        let (rows, vocab) = tl.dims2()?;
        if rows != targets.len() {
            return Err(shape_err("smoothed_nll", tl.shape(), &[targets.len()]));
        }
        let eps = T::cast(smoothing);
        let uniform = eps / T::cast(vocab as f64);
        let mut probs = vec![T::zero(); rows * vocab];
        kernels::softmax(tl.data(), &mut probs, rows, vocab, 1);
        let mut total = T::zero();
        for (r, target) in targets.iter().enumerate() {
            let Some(y) = *target else { continue };
            if y >= vocab {
                return Err(Error::Index { id: y, bound: vocab });
            }
            let row = tl.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            let mut sum_logp = T::zero();
            for &v in row {
                sum_logp = sum_logp + (v - lse);
            }
            let nll_gold = lse - row[y];
            total = total + (T::one() - eps) * nll_gold - uniform * sum_logp;
        }
        let scale = T::cast(scale);
        Ok(self.push_owned(
            vec![1],
            vec![total * scale],
            Op::SmoothedNll {
                logits,
                targets: targets.to_vec(),
                smoothing: eps,
                scale,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar node. Gradients accumulate into every node that
    /// the output depends on; call once per graph.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let shape = self.val(out).shape().to_vec();
        if self.val(out).numel() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar output, got shape {shape:?}"
            )));
        }
        self.grads[out.0] = Some(vec![T::one()]);
        for i in (0..=out.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                kernels::matmul_grad_a(g, tb.data(), slot(nodes, grads, *a), m, k, n);
                kernels::matmul_grad_b(ta.data(), g, slot(nodes, grads, *b), m, k, n);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                add_into(slot(nodes, grads, a), g);
                add_into(slot(nodes, grads, b), g);
            }
            Op::AddRow(x, bias) => {
                let (x, bias) = (*x, *bias);
                add_into(slot(nodes, grads, x), g);
                let n = nodes[bias.0].value.numel();
                let db = slot(nodes, grads, bias);
                for row in g.chunks_exact(n) {
                    for (s, &d) in db.iter_mut().zip(row) {
                        *s = *s + d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let da: Vec<T> = g.iter().zip(tb.data()).map(|(&d, &y)| d * y).collect();
                let db: Vec<T> = g.iter().zip(ta.data()).map(|(&d, &x)| d * x).collect();
                let (a, b) = (*a, *b);
                add_into(slot(nodes, grads, a), &da);
                add_into(slot(nodes, grads, b), &db);
            }
            Op::Scale(x, c) => {
                let dx = slot(nodes, grads, *x);
                for (s, &d) in dx.iter_mut().zip(g) {
                    *s = *s + d * *c;
                }
            }
            Op::AddConst(x) => {
                let x = *x;
                add_into(slot(nodes, grads, x), g);
            }
            Op::MulConst(x, mask) => {
                let dx: Vec<T> = g.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                let x = *x;
                add_into(slot(nodes, grads, x), &dx);
            }
            Op::Transpose(x) => {
                let (r, c) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                let dx = slot(nodes, grads, *x);
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = dx[i * c + j] + g[j * r + i];
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = nodes[i].value.data();
                let (outer, len, inner) = split_axis(nodes[i].value.shape(), *axis);
                let dx = slot(nodes, grads, *x);
                for o in 0..outer {
                    for k in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + k;
                        let mut dot = T::zero();
                        for j in 0..len {
                            dot = dot + g[idx(j)] * y[idx(j)];
                        }
                        for j in 0..len {
                            dx[idx(j)] = dx[idx(j)] + y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = nodes[gain.0].value.numel();
                let gv = nodes[gain.0].value.data();
                let rows = g.len() / n;
                let inv_n = T::one() / T::cast(n as f64);
                let mut dx = vec![T::zero(); g.len()];
                let mut dgain = vec![T::zero(); n];
                let mut dbias = vec![T::zero(); n];
                for r in 0..rows {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        sum_dh = sum_dh + dh;
                        sum_dh_h = sum_dh_h + dh * hr[j];
                        dgain[j] = dgain[j] + gr[j] * hr[j];
                        dbias[j] = dbias[j] + gr[j];
                    }
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        dx[r * n + j] = rstd[r] * (dh - inv_n * sum_dh - hr[j] * inv_n * sum_dh_h);
                    }
                }
                let (x, gain, bias) = (*x, *gain, *bias);
                add_into(slot(nodes, grads, x), &dx);
                add_into(slot(nodes, grads, gain), &dgain);
                add_into(slot(nodes, grads, bias), &dbias);
            }
            Op::Gelu(x) => {
                let xv = nodes[x.0].value.data();
                let dx = slot(nodes, grads, *x);
                for ((s, &d), &v) in dx.iter_mut().zip(g).zip(xv) {
                    *s = *s + d * kernels::gelu_grad(v);
                }
            }
            Op::Embedding { table, ids } => {
                let dim = nodes[table.0].value.shape()[1];
                let dt = slot(nodes, grads, *table);
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..dim {
                        dt[id * dim + j] = dt[id * dim + j] + g[r * dim + j];
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(nodes[i].value.shape(), *axis);
                let mut offset = 0;
                for o in 0..outer {
                    for &v in inputs {
                        let chunk = nodes[v.0].value.shape()[*axis] * inner;
                        let dv = slot(nodes, grads, v);
                        for (s, &d) in dv[o * chunk..(o + 1) * chunk].iter_mut().zip(&g[offset..offset + chunk]) {
                            *s = *s + d;
                        }
                        offset += chunk;
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = split_axis(nodes[x.0].value.shape(), *axis);
                let len = nodes[i].value.shape()[*axis];
                let dx = slot(nodes, grads, *x);
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    for (s, &d) in dx[base..base + len * inner].iter_mut().zip(src) {
                        *s = *s + d;
                    }
                }
            }
            Op::Sum(x) => {
                let x = *x;
                let n = self.nodes[x.0].value.numel();
                let up = g[0];
                add_into(slot(nodes, grads, x), &vec![up; n]);
            }
            Op::SmoothedNll {
                logits,
                targets,
                smoothing,
                scale,
                probs,
            } => {
                let vocab = nodes[logits.0].value.shape()[1];
                let uniform = *smoothing / T::cast(vocab as f64);
                let up = g[0] * *scale;
                let dl = slot(nodes, grads, *logits);
                for (r, target) in targets.iter().enumerate() {
                    let Some(y) = *target else { continue };
                    for k in 0..vocab {
                        let mut q = uniform;
                        if k == y {
                            q = q + T::one() - *smoothing;
                        }
                        let idx = r * vocab + k;
                        dl[idx] = dl[idx] + up * (probs[idx] - q);
                    }
                }
            }
        }
    }
}

fn slot<'g, T: Scalar>(nodes: &[Node<'_, T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut [T] {
    let n = nodes[v.0].value.numel();
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (s, &d) in dst.iter_mut().zip(src) {
        *s = *s + d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows)
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::new();
        let i2 = g.leaf(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let m = g.leaf(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let y = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = g.leaf(t(&[&[1.0, 2.0]]));
        let b = g.leaf(t(&[&[3.0], &[4.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[&[0.0, 0.0, 0.0]]));
        let y = g.softmax(x, 1).unwrap();
        for &p in g.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.leaf(t(&[&[1000.0, 0.0]]));
        let y = g.softmax(x, 1).unwrap();
        let d = g.value(y).data();
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d[0] - 1.0).abs() < 1e-15 && d[1] < 1e-300);
    }

    #[test]
    fn softmax_fully_masked_row_is_uniform() {
        let mut g = Graph::new();
        let ninf = f64::NEG_INFINITY;
        let x = g.leaf(t(&[&[ninf, ninf, ninf, ninf], &[0.0, ninf, 0.0, ninf]]));
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(y).data(), &[0.25, 0.25, 0.25, 0.25, 0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn softmax_over_leading_axis() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[&[0.0, 5.0], &[0.0, 5.0]]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(g.softmax(x, 2), Err(Error::Axis { axis: 2, rank: 2 })));
    }

    #[test]
    fn layer_norm_cases() {
        let mut g = Graph::new();
        let gain = g.leaf(Tensor::full(&[2], 1.0));
        let bias = g.leaf(Tensor::zeros(&[2]));
        let x = g.leaf(t(&[&[1.0, 3.0]]));
        let y = g.layer_norm(x, gain, bias, 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0, 1.0]);

        let x = g.leaf(t(&[&[7.0, 7.0]]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gelu_and_embedding() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[&[0.0]]));
        let y = g.gelu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0]);

        let table = g.leaf(t(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let e = g.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(e).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        assert!(matches!(g.embedding(table, &[3]), Err(Error::Index { id: 3, bound: 3 })));
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let a = g.slice(x, 1, 0, 1).unwrap();
        let b = g.slice(x, 1, 1, 2).unwrap();
        assert_eq!(g.value(b).data(), &[2.0, 3.0, 5.0, 6.0]);
        let y = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let rows = g.concat(&[x, x], 0).unwrap();
        assert_eq!(g.shape(rows), &[4, 3]);
    }

    #[test]
    fn smoothed_nll_reduces_to_cross_entropy() {
        let mut g = Graph::new();
        let logits = g.leaf(t(&[&[0.0, 0.0, 0.0, 0.0]]));
        let l = g.smoothed_nll(logits, &[Some(1)], 0.0, 1.0).unwrap();
        assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn backward_visits_chain() {
        // y = sum(2 * (a ⊙ b)): dy/da = 2b, dy/db = 2a
        let mut g = Graph::new();
        let a = g.leaf(t(&[&[1.0, -2.0]]));
        let b = g.leaf(t(&[&[3.0, 0.5]]));
        let p = g.mul(a, b).unwrap();
        let s = g.scale(p, 2.0).unwrap();
        let y = g.sum(s).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[6.0, 1.0]);
        assert_eq!(g.grad(b).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(g.backward(a).is_err());
    }
}
