//! Row-major building blocks with explicit backward passes.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Accumulates `x^T dy` into `gw` and column sums of `dy` into `gb`; returns `dy w^T`.
pub(crate) fn linear_backward(
    x: &Array2<f64>,
    w: ArrayView2<f64>,
    dy: &Array2<f64>,
    mut gw: ArrayViewMut2<f64>,
) -> (Array2<f64>, Array1<f64>) {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut gw);
    (dy.dot(&w.t()), dy.sum_axis(Axis(0)))
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(crate) fn layer_norm(
    x: &Array2<f64>,
    g: ArrayView1<f64>,
    b: ArrayView1<f64>,
) -> (Array2<f64>, LnCache) {
    let (n, e) = x.dim();
    let mut xhat = Array2::zeros((n, e));
    let mut rstd = Array1::zeros(n);
    for i in 0..n {
        let row = x.row(i);
        let mu = row.sum() / e as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / e as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
            *o = (v - mu) * r;
        }
    }
    let mut y = &xhat * &g;
    y += &b;
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: ArrayView1<f64>,
    mut gg: ArrayViewMut1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    gg += &(dy * &cache.xhat).sum_axis(Axis(0));
    let gb = dy.sum_axis(Axis(0));
    let (n, e) = dy.dim();
    let dxhat = dy * &g;
    let mut dx = Array2::zeros((n, e));
    for i in 0..n {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = dh.sum() / e as f64;
        let m2 = dh.dot(&xh) / e as f64;
        let r = cache.rstd[i];
        for ((o, a), b) in dx.row_mut(i).iter_mut().zip(dh).zip(xh) {
            *o = r * (a - m1 - b * m2);
        }
    }
    (dx, gb)
}

/// Causal multi-head attention over packed sequences. `qkv` has columns `[Q | K | V]`.
pub(crate) fn attention(
    qkv: &Array2<f64>,
    seqs: &[(usize, usize)],
    e: usize,
    heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let hd = e / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut ctx = Array2::zeros((qkv.nrows(), e));
    let mut probs = Vec::with_capacity(seqs.len() * heads);
    for &(o, l) in seqs {
        for h in 0..heads {
            let c = h * hd;
            let q = qkv.slice(s![o..o + l, c..c + hd]);
            let k = qkv.slice(s![o..o + l, e + c..e + c + hd]);
            let v = qkv.slice(s![o..o + l, 2 * e + c..2 * e + c + hd]);
            let mut p = q.dot(&k.t());
            for i in 0..l {
                let mut row = p.row_mut(i);
                let mut mx = f64::NEG_INFINITY;
                for j in 0..=i {
                    row[j] *= scale;
                    mx = mx.max(row[j]);
                }
                let mut z = 0.0;
                for j in 0..=i {
                    row[j] = (row[j] - mx).exp();
                    z += row[j];
                }
                for j in 0..l {
                    row[j] = if j <= i { row[j] / z } else { 0.0 };
                }
            }
            ctx.slice_mut(s![o..o + l, c..c + hd]).assign(&p.dot(&v));
            probs.push(p);
        }
    }
    (ctx, probs)
}

pub(crate) fn attention_backward(
    dctx: &Array2<f64>,
    qkv: &Array2<f64>,
    probs: &[Array2<f64>],
    seqs: &[(usize, usize)],
    e: usize,
    heads: usize,
) -> Array2<f64> {
    let hd = e / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dqkv = Array2::zeros(qkv.dim());
    let mut pi = probs.iter();
    for &(o, l) in seqs {
        for h in 0..heads {
            let p = pi.next().unwrap();
            let c = h * hd;
            let q = qkv.slice(s![o..o + l, c..c + hd]);
            let k = qkv.slice(s![o..o + l, e + c..e + c + hd]);
            let v = qkv.slice(s![o..o + l, 2 * e + c..2 * e + c + hd]);
            let dc = dctx.slice(s![o..o + l, c..c + hd]);
            dqkv.slice_mut(s![o..o + l, 2 * e + c..2 * e + c + hd])
                .assign(&p.t().dot(&dc));
            let mut ds = dc.dot(&v.t());
            for i in 0..l {
                let pr = p.row(i);
                let mut row = ds.row_mut(i);
                let dot: f64 = (0..=i).map(|j| row[j] * pr[j]).sum();
                for j in 0..l {
                    row[j] = if j <= i { pr[j] * (row[j] - dot) * scale } else { 0.0 };
                }
            }
            dqkv.slice_mut(s![o..o + l, c..c + hd]).assign(&ds.dot(&k));
            dqkv.slice_mut(s![o..o + l, e + c..e + c + hd])
                .assign(&ds.t().dot(&q));
        }
    }
    dqkv
}
