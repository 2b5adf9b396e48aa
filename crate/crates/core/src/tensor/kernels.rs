//! Forward and backward kernels shared by the tape and the plain evaluator.

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

fn check_conv<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, pad: usize) -> Result<usize> {
    let (is, ws) = (input.shape(), weight.shape());
    if ws.c != is.c {
        return Err(Error::shape("conv2d", is, ws));
    }
    if ws.h != ws.w || ws.h % 2 == 0 {
        return Err(Error::shape("conv2d kernel", ws, "odd square kernel"));
    }
    if pad != (ws.h - 1) / 2 {
        return Err(Error::shape("conv2d padding", pad, (ws.h - 1) / 2));
    }
    if bias.len() != ws.n {
        return Err(Error::shape("conv2d bias", bias.shape(), ws));
    }
    Ok(ws.h)
}

/// Unfolds rows `y0..y1` of one `cin×h×w` image into a
/// `(cin·k·k)×((y1−y0)·w)` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col_rows<T: Scalar>(src: &[T], cin: usize, h: usize, w: usize, k: usize, pad: usize, y0: usize, y1: usize, cols: &mut [T]) {
    let (hw, n) = (h * w, (y1 - y0) * w);
    for ci in 0..cin {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in y0..y1 {
                    let sy = y as isize + dy;
                    let out = &mut dst[(y - y0) * w..(y - y0 + 1) * w];
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        out.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    let sx0 = (x0 as isize + dx) as usize;
                    out[x0..x1].copy_from_slice(&srow[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Unfolds one `cin×h×w` image into a `(cin·k·k)×(h·w)` patch matrix.
fn im2col<T: Scalar>(src: &[T], cin: usize, h: usize, w: usize, k: usize, pad: usize, cols: &mut [T]) {
    im2col_rows(src, cin, h, w, k, pad, 0, h, cols)
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into the image.
fn col2im<T: Scalar>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, pad: usize, dst: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sx0 = (x0 as isize + dx) as usize;
                    let drow = &mut plane[sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                    for (d, &s) in drow.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Output columns unfolded at a time by [`conv2d`]; keeps the patch matrix
/// cache-resident.
const CONV_BLOCK: usize = 512;

/// Zero-padded cross-correlation preserving spatial size.
///
/// `weight` is `(out, in, k, k)`, `bias` holds `out` values.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let k = check_conv(input, weight, bias, pad)?;
    let is = input.shape();
    let cout = weight.shape().n;
    let (hw, ckk) = (is.plane(), is.c * k * k);
    let mut out = Tensor::zeros(Shape::new(is.n, cout, is.h, is.w));
    let rows = (CONV_BLOCK / is.w.max(1)).max(1);
    let mut cols = if k == 1 { Vec::new() } else { vec![T::zero(); ckk * rows * is.w] };
    for n in 0..is.n {
        let src = &input.data()[n * is.c * hw..(n + 1) * is.c * hw];
        let dst = &mut out.data_mut()[n * cout * hw..(n + 1) * cout * hw];
        for (co, row) in dst.chunks_mut(hw).enumerate() {
            row.fill(bias.data()[co]);
        }
        if k == 1 {
            T::gemm(cout, ckk, hw, weight.data(), false, src, false, dst, true);
            continue;
        }
        for y0 in (0..is.h).step_by(rows) {
            let y1 = (y0 + rows).min(is.h);
            let nb = (y1 - y0) * is.w;
            im2col_rows(src, is.c, is.h, is.w, k, pad, y0, y1, &mut cols[..ckk * nb]);
            T::gemm_ldc(cout, ckk, nb, weight.data(), false, &cols[..ckk * nb], false, &mut dst[y0 * is.w..], hw, true);
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Gradients of [`conv2d`] given the upstream gradient `grad`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad: &Tensor<T>,
    pad: usize,
    need: [bool; 3],
) -> ConvGrads<T> {
    let is = input.shape();
    let ws = weight.shape();
    let (cout, k, hw) = (ws.n, ws.h, is.plane());
    let ckk = is.c * k * k;
    let mut d_in = need[0].then(|| Tensor::zeros(is));
    let mut d_w = need[1].then(|| Tensor::zeros(ws));
    let mut d_b = need[2].then(|| Tensor::zeros(Shape::new(1, cout, 1, 1)));
    let mut cols = vec![T::zero(); if k == 1 { 0 } else { ckk * hw }];
    let mut dcols = vec![T::zero(); if need[0] && k > 1 { ckk * hw } else { 0 }];
    for n in 0..is.n {
        let g = &grad.data()[n * cout * hw..(n + 1) * cout * hw];
        let src = &input.data()[n * is.c * hw..(n + 1) * is.c * hw];
        if let Some(d_w) = d_w.as_mut() {
            let cols: &[T] = if k == 1 {
                src
            } else {
                im2col(src, is.c, is.h, is.w, k, pad, &mut cols);
                &cols
            };
            T::gemm(cout, hw, ckk, g, false, cols, true, d_w.data_mut(), true);
        }
        if let Some(d_b) = d_b.as_mut() {
            for (co, row) in g.chunks(hw).enumerate() {
                let s = row.iter().fold(T::zero(), |a, &v| a + v);
                d_b.data_mut()[co] = d_b.data()[co] + s;
            }
        }
        if let Some(d_in) = d_in.as_mut() {
            let dst = &mut d_in.data_mut()[n * is.c * hw..(n + 1) * is.c * hw];
            if k == 1 {
                T::gemm(ckk, cout, hw, weight.data(), true, g, false, dst, true);
            } else {
                T::gemm(ckk, cout, hw, weight.data(), true, g, false, &mut dcols, false);
                col2im(&dcols, is.c, is.h, is.w, k, pad, dst);
            }
        }
    }
    ConvGrads {
        input: d_in,
        weight: d_w,
        bias: d_b,
    }
}

/// Nearest-neighbour 2× upsampling: every element becomes a 2×2 block.
pub fn upsample2x<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, s.h * 2, s.w * 2));
    let ow = s.w * 2;
    for nc in 0..s.n * s.c {
        let src = &input.data()[nc * s.plane()..(nc + 1) * s.plane()];
        let dst = &mut out.data_mut()[nc * 4 * s.plane()..(nc + 1) * 4 * s.plane()];
        for y in 0..s.h {
            for x in 0..s.w {
                let v = src[y * s.w + x];
                let o = 2 * y * ow + 2 * x;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + ow] = v;
                dst[o + ow + 1] = v;
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`]: 2×2 block sums.
pub fn upsample2x_backward<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let s = grad.shape();
    let (h, w) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for nc in 0..s.n * s.c {
        let src = &grad.data()[nc * s.plane()..(nc + 1) * s.plane()];
        let dst = &mut out.data_mut()[nc * h * w..(nc + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let o = 2 * y * s.w + 2 * x;
                dst[y * w + x] = src[o] + src[o + 1] + src[o + s.w] + src[o + s.w + 1];
            }
        }
    }
    out
}

/// Concatenates along the channel axis.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?
        .shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::shape("concat", first, s));
        }
        channels += s.c;
    }
    let hw = first.plane();
    let mut data = Vec::with_capacity(first.n * channels * hw);
    for n in 0..first.n {
        for p in parts {
            let c = p.shape().c;
            data.extend_from_slice(&p.data()[n * c * hw..(n + 1) * c * hw]);
        }
    }
    Tensor::from_vec(Shape::new(first.n, channels, first.h, first.w), data)
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let s = grad.shape();
    let hw = s.plane();
    let mut outs: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(s.n * c * hw)).collect();
    for n in 0..s.n {
        let mut off = n * s.c * hw;
        for (out, &c) in outs.iter_mut().zip(channels) {
            out.extend_from_slice(&grad.data()[off..off + c * hw]);
            off += c * hw;
        }
    }
    outs.into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), d).expect("split sizes"))
        .collect()
}
