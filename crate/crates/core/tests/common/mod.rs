//! Straightforward f64 reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vec(seed: u64, n: usize, scale: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

/// Zero-padded cross-correlation of `[N,C,H,W]` with `[F,C,k,k]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f64],
    kernel: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for ff in 0..f {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for cc in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input[((b * c + cc) * h + iy as usize) * w + ix as usize];
                                let kv = kernel[((ff * c + cc) * k + ky) * k + kx];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((b * f + ff) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Mean label-smoothed cross-entropy of `[B, K]` logits.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize, smoothing: f64) -> f64 {
    let mut total = 0.0;
    for (row, &label) in logits.chunks(classes).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        for (j, z) in row.iter().enumerate() {
            let target = if j == label { 1.0 - smoothing + smoothing / classes as f64 } else { smoothing / classes as f64 };
            total -= target * (z - lse);
        }
    }
    total / labels.len() as f64
}

/// Fully connected ReLU network; weights are `[in, out]` row-major.
pub struct Mlp {
    pub widths: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn logits(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut act = x.to_vec();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (fan_in, fan_out) = (self.widths[i], self.widths[i + 1]);
            let mut z = matmul(&act, w, batch, fan_in, fan_out);
            for row in z.chunks_mut(fan_out) {
                row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
                if i != last {
                    row.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            act = z;
        }
        act
    }

    pub fn loss(&self, x: &[f64], labels: &[usize], smoothing: f64) -> f64 {
        let classes = *self.widths.last().unwrap();
        cross_entropy(&self.logits(x, labels.len()), labels, classes, smoothing)
    }
}

/// Central difference of `f` with respect to `params[i]`.
pub fn central_diff(params: &mut [f64], i: usize, eps: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let orig = params[i];
    params[i] = orig + eps;
    let up = f(params);
    params[i] = orig - eps;
    let down = f(params);
    params[i] = orig;
    (up - down) / (2.0 * eps)
}

/// `|got - want| <= rel * |want| + floor`.
pub fn assert_grad_close(what: &str, got: &[f32], want: &[f64], rel: f64, floor: f64) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        let err = (f64::from(g) - w).abs();
        assert!(err <= rel * w.abs() + floor, "{what}[{i}]: autodiff {g} vs oracle {w} (err {err:e})");
    }
}
