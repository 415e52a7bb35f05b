//! Row-level numeric kernels.
//!
//! Both the recording tape and the incremental decoder call these same
//! functions, so a row computed either way is bitwise identical.

pub const LN_EPS: f32 = 1e-5;

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

/// `out = a_row · b` where `b` is `[a_row.len() × n]`.
#[inline]
pub fn matmul_row(a_row: &[f32], b: &[f32], n: usize, out: &mut [f32]) {
    out.fill(0.0);
    for (p, &a) in a_row.iter().enumerate() {
        let b_row = &b[p * n..(p + 1) * n];
        for (o, &bv) in out.iter_mut().zip(b_row) {
            *o += a * bv;
        }
    }
}

pub fn matmul(a: &[f32], m: usize, k: usize, b: &[f32], n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        matmul_row(&a[i * k..(i + 1) * k], b, n, &mut out[i * n..(i + 1) * n]);
    }
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Normalizes `x` into `out`; returns `(mean, 1/std)`.
pub fn layer_norm_row(x: &[f32], gamma: &[f32], beta: &[f32], out: &mut [f32]) -> (f32, f32) {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let rstd = 1.0 / libm::sqrtf(var + LN_EPS);
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
    }
    (mean, rstd)
}

#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::tanhf(GELU_C * (x + GELU_A * x * x * x)))
}

#[inline]
pub fn gelu_grad(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = libm::tanhf(u);
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = libm::expf(*v - max);
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `log Σ exp(row)`.
pub fn log_sum_exp(row: &[f32]) -> f32 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let sum: f32 = row.iter().map(|v| libm::expf(v - max)).sum();
    max + libm::logf(sum)
}

/// Causal attention for one query row.
///
/// `qkv` holds rows of `[q | k | v]`, each `3 * d` wide, with `heads` heads
/// of width `d / heads`. Row `i` attends to rows `0..=i`. `probs` receives
/// the per-head attention weights laid out `[heads × (i + 1)]`.
pub fn attend_row(
    qkv: &[f32],
    d: usize,
    heads: usize,
    i: usize,
    probs: &mut [f32],
    out: &mut [f32],
) {
    let stride = 3 * d;
    let dh = d / heads;
    let scale = 1.0 / libm::sqrtf(dh as f32);
    let n = i + 1;
    let q_row = &qkv[i * stride..i * stride + d];
    for h in 0..heads {
        let q = &q_row[h * dh..(h + 1) * dh];
        let p = &mut probs[h * n..(h + 1) * n];
        for (j, pj) in p.iter_mut().enumerate() {
            let k = &qkv[j * stride + d + h * dh..j * stride + d + (h + 1) * dh];
            *pj = dot(q, k) * scale;
        }
        softmax_in_place(p);
        let o = &mut out[h * dh..(h + 1) * dh];
        o.fill(0.0);
        for (j, &pj) in p.iter().enumerate() {
            let v = &qkv[j * stride + 2 * d + h * dh..j * stride + 2 * d + (h + 1) * dh];
            for (oc, &vc) in o.iter_mut().zip(v) {
                *oc += pj * vc;
            }
        }
    }
}
