// Plain slice kernels. Every reduction runs in a fixed index order so results are
// reproducible bit for bit, and each output row of a matmul depends only on the
// matching input row.

use super::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj = *cj + aip * bj;
            }
        }
    }
}

/// `da[m×k] += dc[m×n] · bᵀ` where `b` is `k×n`.
pub fn matmul_grad_a<T: Scalar>(dc: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&d, &bv) in drow.iter().zip(brow) {
                acc = acc + d * bv;
            }
            da[i * k + p] = da[i * k + p] + acc;
        }
    }
}

/// `db[k×n] += aᵀ · dc` where `a` is `m×k` and `dc` is `m×n`.
pub fn matmul_grad_b<T: Scalar>(a: &[T], dc: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (g, &d) in dbrow.iter_mut().zip(drow) {
                *g = *g + aip * d;
            }
        }
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax along an axis given as `(outer, len, inner)`. A row whose entries are all
/// `-inf` becomes uniform.
pub fn softmax<T: Scalar>(x: &[T], y: &mut [T], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x[idx(j)]);
            }
            if max == T::neg_infinity() {
                let u = T::one() / T::cast(len as f64);
                for j in 0..len {
                    y[idx(j)] = u;
                }
                continue;
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (x[idx(j)] - max).exp();
                y[idx(j)] = e;
                sum = sum + e;
            }
            for j in 0..len {
                y[idx(j)] = y[idx(j)] / sum;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::cast(GELU_C);
    let a = T::cast(GELU_A);
    let half = T::cast(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::cast(GELU_C);
    let a = T::cast(GELU_A);
    let half = T::cast(0.5);
    let three = T::cast(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}
