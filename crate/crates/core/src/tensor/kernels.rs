//! Raw f32 kernels behind the tape operations.
//!
//! Each output element is reduced sequentially in a fixed order, so results
//! do not depend on how rows are distributed over threads.

use crate::par::{self, Exec};

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(exec: Exec, a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0f32; m * n];
    par::for_each_chunk_mut(exec, &mut out, n, k * n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    out
}

/// Straightforward triple loop with the same summation order as [`matmul`].
/// Kept as a reference for tests and benchmarks.
pub fn matmul_naive(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for kk in 0..k {
                acc += a[i * k + kk] * b[kk * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `dA[m×k] = g[m×n] · bᵀ`, summing over `n` in index order.
pub fn matmul_grad_lhs(
    exec: Exec,
    grad: &[f32],
    b: &[f32],
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f32> {
    let bt = transpose(b, k, n);
    matmul(exec, grad, &bt, m, n, k)
}

/// `dB[k×n] = aᵀ · g[m×n]`, summing over `m` in index order.
pub fn matmul_grad_rhs(
    exec: Exec,
    a: &[f32],
    grad: &[f32],
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; k * n];
    par::for_each_chunk_mut(exec, &mut out, n, m * n, |kk, row| {
        for i in 0..m {
            let av = a[i * k + kk];
            let g_row = &grad[i * n..(i + 1) * n];
            for (o, &gv) in row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    });
    out
}

pub fn transpose(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Shapes of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn input_plane(&self) -> usize {
        self.height * self.width
    }

    fn out_plane(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn kernel_plane(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Input coordinate hit by output position `o` at kernel offset `kk`,
    /// or `None` when it falls into the zero padding.
    #[inline]
    fn source(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + kk).checked_sub(self.padding)?;
        (pos < limit).then_some(pos)
    }
}

/// Zero-padded cross-correlation; output is `[N, F, H', W']`.
pub fn conv2d(exec: Exec, input: &[f32], kernel: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let plane = g.out_plane();
    let work = g.in_channels * g.kernel_plane() * plane;
    let mut out = vec![0.0f32; g.batch * g.filters * plane];
    par::for_each_chunk_mut(exec, &mut out, plane, work, |idx, dst| {
        let (n, f) = (idx / g.filters, idx % g.filters);
        for c in 0..g.in_channels {
            let src = &input[(n * g.in_channels + c) * g.input_plane()..][..g.input_plane()];
            let w = &kernel[(f * g.in_channels + c) * g.kernel_plane()..][..g.kernel_plane()];
            for ki in 0..g.kernel_h {
                for kj in 0..g.kernel_w {
                    let wv = w[ki * g.kernel_w + kj];
                    for oy in 0..oh {
                        let Some(iy) = g.source(oy, ki, g.height) else {
                            continue;
                        };
                        for ox in 0..ow {
                            if let Some(ix) = g.source(ox, kj, g.width) {
                                dst[oy * ow + ox] += wv * src[iy * g.width + ix];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of [`conv2d`] with respect to its input (transposed correlation).
pub fn conv2d_grad_input(exec: Exec, grad: &[f32], kernel: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let sample = g.in_channels * g.input_plane();
    let work = g.filters * g.in_channels * g.kernel_plane() * g.out_plane();
    let mut out = vec![0.0f32; g.batch * sample];
    par::for_each_chunk_mut(exec, &mut out, sample, work, |n, dst| {
        for f in 0..g.filters {
            let go = &grad[(n * g.filters + f) * g.out_plane()..][..g.out_plane()];
            for c in 0..g.in_channels {
                let w = &kernel[(f * g.in_channels + c) * g.kernel_plane()..][..g.kernel_plane()];
                let di = &mut dst[c * g.input_plane()..][..g.input_plane()];
                for ki in 0..g.kernel_h {
                    for kj in 0..g.kernel_w {
                        let wv = w[ki * g.kernel_w + kj];
                        for oy in 0..oh {
                            let Some(iy) = g.source(oy, ki, g.height) else {
                                continue;
                            };
                            for ox in 0..ow {
                                if let Some(ix) = g.source(ox, kj, g.width) {
                                    di[iy * g.width + ix] += wv * go[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of [`conv2d`] with respect to its kernel.
pub fn conv2d_grad_kernel(exec: Exec, input: &[f32], grad: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let per_filter = g.in_channels * g.kernel_plane();
    let work = g.batch * per_filter * g.out_plane();
    let mut out = vec![0.0f32; g.filters * per_filter];
    par::for_each_chunk_mut(exec, &mut out, per_filter, work, |f, dst| {
        for n in 0..g.batch {
            let go = &grad[(n * g.filters + f) * g.out_plane()..][..g.out_plane()];
            for c in 0..g.in_channels {
                let src = &input[(n * g.in_channels + c) * g.input_plane()..][..g.input_plane()];
                let dw = &mut dst[c * g.kernel_plane()..][..g.kernel_plane()];
                for ki in 0..g.kernel_h {
                    for kj in 0..g.kernel_w {
                        let mut acc = dw[ki * g.kernel_w + kj];
                        for oy in 0..oh {
                            let Some(iy) = g.source(oy, ki, g.height) else {
                                continue;
                            };
                            for ox in 0..ow {
                                if let Some(ix) = g.source(ox, kj, g.width) {
                                    acc += go[oy * ow + ox] * src[iy * g.width + ix];
                                }
                            }
                        }
                        dw[ki * g.kernel_w + kj] = acc;
                    }
                }
            }
        }
    });
    out
}
