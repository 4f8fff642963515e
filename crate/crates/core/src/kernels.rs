//! Raw forward/backward kernels over flat NHWC buffers.
//!
//! Work is split per sample; every output element is written by exactly one
//! worker, and cross-sample reductions are summed in sample order, so results
//! do not depend on the size of the thread pool.

use rayon::prelude::*;

/// `c = a · b + beta · c`, with `a` logically m×k and `b` logically k×n.
///
/// `a_t` / `b_t` mean the operand is stored transposed (k×m / n×k).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserted buffer lengths cover every index addressed by the
    // given strides for an m×k by k×n product into m×n.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Resolved geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(g: &ConvGeometry, x: &[f32], cols: &mut [f32]) {
    let patch = g.patch();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * patch..(oy * g.wo + ox + 1) * patch];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    let dst = &mut row[(ky * g.kw + kx) * g.cin..(ky * g.kw + kx + 1) * g.cin];
                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                        dst.fill(0.0);
                    } else {
                        let src = (iy as usize * g.w + ix as usize) * g.cin;
                        dst.copy_from_slice(&x[src..src + g.cin]);
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeometry, cols: &[f32], dx: &mut [f32]) {
    let patch = g.patch();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * patch..(oy * g.wo + ox + 1) * patch];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.w + ix as usize) * g.cin;
                    let src = &row[(ky * g.kw + kx) * g.cin..(ky * g.kw + kx + 1) * g.cin];
                    for (d, s) in dx[dst..dst + g.cin].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    g: &ConvGeometry,
    x: &[f32],
    kernel: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let in_len = g.h * g.w * g.cin;
    let out_len = g.positions() * g.cout;
    let mut out = vec![0.0f32; g.n * out_len];
    out.par_chunks_mut(out_len)
        .zip(x.par_chunks(in_len))
        .for_each_init(
            || vec![0.0f32; g.positions() * g.patch()],
            |cols, (y, xs)| {
                im2col(g, xs, cols);
                for row in y.chunks_mut(g.cout) {
                    row.copy_from_slice(bias);
                }
                gemm(
                    g.positions(),
                    g.patch(),
                    g.cout,
                    cols,
                    false,
                    kernel,
                    false,
                    1.0,
                    y,
                );
            },
        );
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

pub(crate) fn conv2d_backward(
    g: &ConvGeometry,
    x: &[f32],
    kernel: &[f32],
    dy: &[f32],
    need_input: bool,
) -> ConvGrads {
    let in_len = g.h * g.w * g.cin;
    let out_len = g.positions() * g.cout;
    let klen = g.patch() * g.cout;

    let mut dx = if need_input {
        vec![0.0f32; g.n * in_len]
    } else {
        Vec::new()
    };
    let dx_chunk = if need_input { in_len } else { 0 };

    let per_sample: Vec<Vec<f32>> = (0..g.n)
        .into_par_iter()
        .map_init(
            || vec![0.0f32; g.positions() * g.patch()],
            |cols, s| {
                let xs = &x[s * in_len..(s + 1) * in_len];
                let dys = &dy[s * out_len..(s + 1) * out_len];
                im2col(g, xs, cols);
                let mut dk = vec![0.0f32; klen];
                gemm(
                    g.patch(),
                    g.positions(),
                    g.cout,
                    cols,
                    true,
                    dys,
                    false,
                    0.0,
                    &mut dk,
                );
                dk
            },
        )
        .collect();

    if need_input {
        dx.par_chunks_mut(dx_chunk).enumerate().for_each_init(
            || vec![0.0f32; g.positions() * g.patch()],
            |dcols, (s, dxs)| {
                let dys = &dy[s * out_len..(s + 1) * out_len];
                gemm(
                    g.positions(),
                    g.cout,
                    g.patch(),
                    dys,
                    false,
                    kernel,
                    true,
                    0.0,
                    dcols,
                );
                col2im_add(g, dcols, dxs);
            },
        );
    }

    let mut dk = vec![0.0f32; klen];
    for part in &per_sample {
        for (a, b) in dk.iter_mut().zip(part) {
            *a += b;
        }
    }
    let mut db = vec![0.0f32; g.cout];
    for row in dy.chunks(g.cout) {
        for (a, b) in db.iter_mut().zip(row) {
            *a += b;
        }
    }
    ConvGrads {
        input: need_input.then_some(dx),
        kernel: dk,
        bias: db,
    }
}

/// Per-channel mean and biased variance over every leading position.
pub(crate) fn channel_moments(x: &[f32], c: usize) -> (Vec<f32>, Vec<f32>) {
    let m = (x.len() / c) as f64;
    let mut sum = vec![0.0f64; c];
    for row in x.chunks(c) {
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let mut sq = vec![0.0f64; c];
    for row in x.chunks(c) {
        for ((s, &v), mu) in sq.iter_mut().zip(row).zip(&mean) {
            let d = v as f64 - mu;
            *s += d * d;
        }
    }
    (
        mean.iter().map(|&v| v as f32).collect(),
        sq.iter().map(|s| (s / m) as f32).collect(),
    )
}

/// Max pooling with window = stride = `pool`; ragged edges behave as −∞ padding.
/// Returns the output and, per output element, the flat input index of the
/// winning element (lowest index on ties).
pub(crate) fn maxpool_forward(
    x: &[f32],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    pool: usize,
) -> (Vec<f32>, Vec<usize>, usize, usize) {
    let ho = h.div_ceil(pool);
    let wo = w.div_ceil(pool);
    let mut out = vec![0.0f32; n * ho * wo * c];
    let mut arg = vec![0usize; out.len()];
    for s in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for iy in oy * pool..((oy + 1) * pool).min(h) {
                        for ix in ox * pool..((ox + 1) * pool).min(w) {
                            let idx = ((s * h + iy) * w + ix) * c + ch;
                            if best_idx == usize::MAX || x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((s * ho + oy) * wo + ox) * c + ch;
                    out[o] = best;
                    arg[o] = best_idx;
                }
            }
        }
    }
    (out, arg, ho, wo)
}
