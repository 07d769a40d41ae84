//! Per-sample layer kernels over `(h, w, c)` feature maps, channels fastest.
//!
//! Convolution weights are laid out `[ky][kx][c_in][c_out]`; kernels are
//! square with odd size `k`, stride 1 and zero padding `k / 2`, so spatial
//! size is preserved. Backward functions accumulate into their gradient
//! buffers.

use rand::Rng as _;

use super::tensor::Scalar;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn n_weights(&self) -> usize {
        self.k * self.k * self.c_in * self.c_out
    }

    /// Calls `f(out_pixel, in_pixel, tap)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let pad = (self.k / 2) as isize;
        let (h, w) = (self.h as isize, self.w as isize);
        for y in 0..h {
            for x in 0..w {
                let opix = (y * w + x) as usize;
                for ky in 0..self.k as isize {
                    let iy = y + ky - pad;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for kx in 0..self.k as isize {
                        let ix = x + kx - pad;
                        if ix < 0 || ix >= w {
                            continue;
                        }
                        f(opix, (iy * w + ix) as usize, (ky * self.k as isize + kx) as usize);
                    }
                }
            }
        }
    }
}

pub fn conv_forward<T: Scalar>(s: ConvShape, input: &[T], weights: &[T], bias: &[T]) -> Vec<T> {
    let (ci, co) = (s.c_in, s.c_out);
    let mut out = vec![T::zero(); s.h * s.w * co];
    for px in out.chunks_exact_mut(co) {
        px.copy_from_slice(bias);
    }
    s.for_each_tap(|opix, ipix, tap| {
        let o = &mut out[opix * co..(opix + 1) * co];
        let inp = &input[ipix * ci..(ipix + 1) * ci];
        let wt = &weights[tap * ci * co..(tap + 1) * ci * co];
        for (&v, wrow) in inp.iter().zip(wt.chunks_exact(co)) {
            if v == T::zero() {
                continue;
            }
            for (a, &b) in o.iter_mut().zip(wrow) {
                *a += v * b;
            }
        }
    });
    out
}

/// Accumulates weight and bias gradients; when `grad_in` is given, also
/// accumulates the input gradient.
pub fn conv_backward<T: Scalar>(
    s: ConvShape,
    input: &[T],
    weights: &[T],
    grad_out: &[T],
    grad_in: Option<&mut [T]>,
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let (ci, co) = (s.c_in, s.c_out);
    for g in grad_out.chunks_exact(co) {
        for (b, &v) in grad_b.iter_mut().zip(g) {
            *b += v;
        }
    }
    match grad_in {
        Some(gin) => s.for_each_tap(|opix, ipix, tap| {
            let go = &grad_out[opix * co..(opix + 1) * co];
            let inp = &input[ipix * ci..(ipix + 1) * ci];
            let gi = &mut gin[ipix * ci..(ipix + 1) * ci];
            let wt = &weights[tap * ci * co..(tap + 1) * ci * co];
            let gw = &mut grad_w[tap * ci * co..(tap + 1) * ci * co];
            for c in 0..ci {
                let wrow = &wt[c * co..(c + 1) * co];
                let mut acc = T::zero();
                for (&a, &b) in wrow.iter().zip(go) {
                    acc += a * b;
                }
                gi[c] += acc;
                let v = inp[c];
                if v != T::zero() {
                    for (a, &b) in gw[c * co..(c + 1) * co].iter_mut().zip(go) {
                        *a += v * b;
                    }
                }
            }
        }),
        None => s.for_each_tap(|opix, ipix, tap| {
            let go = &grad_out[opix * co..(opix + 1) * co];
            let inp = &input[ipix * ci..(ipix + 1) * ci];
            let gw = &mut grad_w[tap * ci * co..(tap + 1) * ci * co];
            for (c, &v) in inp.iter().enumerate() {
                if v == T::zero() {
                    continue;
                }
                for (a, &b) in gw[c * co..(c + 1) * co].iter_mut().zip(go) {
                    *a += v * b;
                }
            }
        }),
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max-pool, stride 2. Returns the pooled map and, per output element,
/// the flat input index of the maximum (first maximum on ties).
pub fn maxpool_forward<T: Scalar>(input: &[T], h: usize, w: usize, c: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut arg = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut best = (2 * y * w + 2 * x) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Scalar>(grad_out: &[T], argmax: &[u32], grad_in: &mut [T]) {
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i as usize] += g;
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_forward<T: Scalar>(input: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            let i = ((y / 2) * w + x / 2) * c;
            out.extend_from_slice(&input[i..i + c]);
        }
    }
    out
}

/// Sums each 2x2 block of `grad_out` back onto its source pixel.
pub fn upsample_backward<T: Scalar>(grad_out: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let ow = 2 * w;
    let mut g = vec![T::zero(); h * w * c];
    for y in 0..2 * h {
        for x in 0..ow {
            let src = &grad_out[(y * ow + x) * c..(y * ow + x + 1) * c];
            let dst = &mut g[((y / 2) * w + x / 2) * c..((y / 2) * w + x / 2 + 1) * c];
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    g
}

/// Per-pixel channel concatenation `[a, b]`.
pub fn concat_forward<T: Scalar>(a: &[T], ca: usize, b: &[T], cb: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (pa, pb) in a.chunks_exact(ca).zip(b.chunks_exact(cb)) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    out
}

/// Splits a concatenated gradient back into its two parts.
pub fn concat_backward<T: Scalar>(grad: &[T], ca: usize, cb: usize) -> (Vec<T>, Vec<T>) {
    let npix = grad.len() / (ca + cb);
    let mut ga = Vec::with_capacity(npix * ca);
    let mut gb = Vec::with_capacity(npix * cb);
    for px in grad.chunks_exact(ca + cb) {
        ga.extend_from_slice(&px[..ca]);
        gb.extend_from_slice(&px[ca..]);
    }
    (ga, gb)
}

/// Inverted dropout multipliers: each element is kept with probability
/// `1 - rate` and scaled by `1 / (1 - rate)`, else zeroed.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, seed: u64) -> Vec<T> {
    let keep = T::from(1.0 / (1.0 - rate)).expect("float cast");
    let mut r = rng::seeded(seed);
    (0..len)
        .map(|_| if r.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

pub fn apply_mask<T: Scalar>(x: &mut [T], mask: &[T]) {
    for (v, &m) in x.iter_mut().zip(mask) {
        *v *= m;
    }
}
