//! 2-D convolution and 2x upsampling.
//!
//! The convolution is a plain cross-correlation over C×H×W maps with zero
//! padding. Inner loops run over contiguous rows so the compiler can
//! vectorize them; summation order is fixed, so results are bit-identical
//! across runs.

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

struct ConvDims {
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    w: usize,
    h_out: usize,
    w_out: usize,
    stride: usize,
    pad: usize,
}

fn conv_output_len(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Dot product with four independent accumulators; the summation order is
/// fixed, so results are reproducible bit-for-bit.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut acc = [0.0f64; 4];
    let main = n - n % 4;
    for (x, y) in a[..main].chunks_exact(4).zip(b[..main].chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in main..n {
        s += a[i] * b[i];
    }
    s
}

/// Fused 3-tap row accumulation for 3×3 kernels with pad 1:
/// `out[oy] += w0*in[.-1] + w1*in[.] + w2*in[.+1]` along one input row.
#[inline]
fn conv3_row(out_row: &mut [f64], in_row: &[f64], w0: f64, w1: f64, w2: f64, stride: usize) {
    let w_out = out_row.len();
    let w = in_row.len();
    if stride == 1 {
        // w_out == w here
        out_row[0] += w1 * in_row[0] + w2 * in_row[1];
        let inner = w_out - 1;
        for ox in 1..inner {
            out_row[ox] += w0 * in_row[ox - 1] + w1 * in_row[ox] + w2 * in_row[ox + 1];
        }
        out_row[inner] += w0 * in_row[inner - 1] + w1 * in_row[inner];
    } else {
        out_row[0] += w1 * in_row[0] + w2 * in_row[1];
        // main range keeps all three taps in bounds: ix+2 = 2*ox+1 <= w-1
        let main_end = ((w - 2) / 2).min(w_out - 1);
        for ox in 1..=main_end {
            let ix = stride * ox - 1;
            out_row[ox] += w0 * in_row[ix] + w1 * in_row[ix + 1] + w2 * in_row[ix + 2];
        }
        for ox in main_end + 1..w_out {
            let ix = stride * ox - 1;
            out_row[ox] += w0 * in_row[ix] + w1 * in_row[ix + 1];
        }
    }
}

/// All nine taps in one pass over an interior output row (stride 1):
/// rows above/at/below are all in bounds.
#[inline]
fn conv9_row(out_row: &mut [f64], rm1: &[f64], r0: &[f64], rp1: &[f64], t: &[f64]) {
    let w = out_row.len();
    out_row[0] += t[1] * rm1[0] + t[2] * rm1[1] + t[4] * r0[0] + t[5] * r0[1]
        + t[7] * rp1[0]
        + t[8] * rp1[1];
    for ox in 1..w - 1 {
        out_row[ox] += t[0] * rm1[ox - 1] + t[1] * rm1[ox] + t[2] * rm1[ox + 1]
            + t[3] * r0[ox - 1]
            + t[4] * r0[ox]
            + t[5] * r0[ox + 1]
            + t[6] * rp1[ox - 1]
            + t[7] * rp1[ox]
            + t[8] * rp1[ox + 1];
    }
    let e = w - 1;
    out_row[e] += t[0] * rm1[e - 1] + t[1] * rm1[e] + t[3] * r0[e - 1] + t[4] * r0[e]
        + t[6] * rp1[e - 1]
        + t[7] * rp1[e];
}

fn conv3_plane(
    out_plane: &mut [f64],
    in_plane: &[f64],
    taps: &[f64],
    d_h: usize,
    d_w: usize,
    h_out: usize,
    w_out: usize,
    stride: usize,
) {
    if stride == 1 && d_h >= 2 {
        // h_out == d_h, w_out == d_w
        for oy in 0..h_out {
            let out_row = &mut out_plane[oy * w_out..(oy + 1) * w_out];
            if oy >= 1 && oy + 1 < d_h {
                let rm1 = &in_plane[(oy - 1) * d_w..oy * d_w];
                let r0 = &in_plane[oy * d_w..(oy + 1) * d_w];
                let rp1 = &in_plane[(oy + 1) * d_w..(oy + 2) * d_w];
                conv9_row(out_row, rm1, r0, rp1, taps);
            } else {
                for ky in 0..3 {
                    let iy = (oy + ky) as isize - 1;
                    if iy < 0 || iy >= d_h as isize {
                        continue;
                    }
                    let in_row = &in_plane[iy as usize * d_w..(iy as usize + 1) * d_w];
                    conv3_row(out_row, in_row, taps[ky * 3], taps[ky * 3 + 1], taps[ky * 3 + 2], 1);
                }
            }
        }
        return;
    }
    for oy in 0..h_out {
        let out_row = &mut out_plane[oy * w_out..(oy + 1) * w_out];
        for ky in 0..3 {
            let iy = (oy * stride + ky) as isize - 1;
            if iy < 0 || iy >= d_h as isize {
                continue;
            }
            let in_row = &in_plane[iy as usize * d_w..(iy as usize + 1) * d_w];
            conv3_row(out_row, in_row, taps[ky * 3], taps[ky * 3 + 1], taps[ky * 3 + 2], stride);
        }
    }
}

/// Input gradient of a stride-2, pad-1, 3×3 convolution: even input
/// columns receive the middle tap, odd columns the two side taps.
fn conv3_s2_input_grad(
    gin_plane: &mut [f64],
    gout_plane: &[f64],
    taps: &[f64],
    h: usize,
    w: usize,
    h_out: usize,
    w_out: usize,
) {
    for oy in 0..h_out {
        let g_row = &gout_plane[oy * w_out..(oy + 1) * w_out];
        for ky in 0..3 {
            let iy = (2 * oy + ky) as isize - 1;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let gin_row = &mut gin_plane[iy as usize * w..(iy as usize + 1) * w];
            let (w0, w1, w2) = (taps[ky * 3], taps[ky * 3 + 1], taps[ky * 3 + 2]);
            // even ix = 2*ox
            for (m, &g) in g_row.iter().enumerate() {
                let ix = 2 * m;
                if ix < w {
                    gin_row[ix] += w1 * g;
                }
            }
            // odd ix = 2*ox +/- 1
            for (m, &g) in g_row.iter().enumerate() {
                if 2 * m + 1 < w {
                    gin_row[2 * m + 1] += w2 * g;
                }
                if m > 0 {
                    gin_row[2 * m - 1] += w0 * g;
                }
            }
        }
    }
}

fn fused3_applies(d: &ConvDims) -> bool {
    d.k == 3 && d.pad == 1 && (d.stride == 1 || d.stride == 2) && d.w >= 2 && d.w_out >= 2
}

fn conv_forward(input: &[f64], kernels: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0f64; d.c_out * d.h_out * d.w_out];
    let hw_in = d.h * d.w;
    let hw_out = d.h_out * d.w_out;
    let fused = fused3_applies(d);
    for co in 0..d.c_out {
        let out_plane = &mut out[co * hw_out..(co + 1) * hw_out];
        out_plane.fill(bias[co]);
        for ci in 0..d.c_in {
            let in_plane = &input[ci * hw_in..(ci + 1) * hw_in];
            let k_base = (co * d.c_in + ci) * d.k * d.k;
            if fused {
                conv3_plane(
                    out_plane,
                    in_plane,
                    &kernels[k_base..k_base + 9],
                    d.h,
                    d.w,
                    d.h_out,
                    d.w_out,
                    d.stride,
                );
                continue;
            }
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let weight = kernels[k_base + ky * d.k + kx];
                    if weight == 0.0 {
                        continue;
                    }
                    accumulate_rows(out_plane, in_plane, weight, d, ky, kx);
                }
            }
        }
    }
    out
}

/// out[oy, ox] += w * in[oy*s + ky - pad, ox*s + kx - pad] over valid taps.
#[inline]
fn accumulate_rows(
    out_plane: &mut [f64],
    in_plane: &[f64],
    weight: f64,
    d: &ConvDims,
    ky: usize,
    kx: usize,
) {
    for oy in 0..d.h_out {
        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
        if iy < 0 || iy >= d.h as isize {
            continue;
        }
        let in_row = &in_plane[iy as usize * d.w..(iy as usize + 1) * d.w];
        let out_row = &mut out_plane[oy * d.w_out..(oy + 1) * d.w_out];
        // valid ox range: 0 <= ox*s + kx - pad < w
        let ox_lo = ox_lower(kx, d.pad, d.stride);
        let ox_hi = ox_upper(kx, d.pad, d.stride, d.w, d.w_out);
        if d.stride == 1 {
            let shift = kx as isize - d.pad as isize;
            let in_seg = &in_row[(ox_lo as isize + shift) as usize
                ..(ox_hi as isize + shift) as usize];
            for (o, i) in out_row[ox_lo..ox_hi].iter_mut().zip(in_seg) {
                *o += weight * *i;
            }
        } else {
            for ox in ox_lo..ox_hi {
                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                out_row[ox] += weight * in_row[ix as usize];
            }
        }
    }
}

#[inline]
fn ox_lower(kx: usize, pad: usize, stride: usize) -> usize {
    if kx >= pad {
        0
    } else {
        (pad - kx).div_ceil(stride)
    }
}

#[inline]
fn ox_upper(kx: usize, pad: usize, stride: usize, w: usize, w_out: usize) -> usize {
    // largest ox with ox*s + kx - pad <= w - 1, clamped to w_out
    let limit = w + pad;
    if kx >= limit {
        return 0;
    }
    (((limit - 1 - kx) / stride) + 1).min(w_out)
}

fn conv_backward_input(g_out: &[f64], kernels: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut g_in = vec![0.0f64; d.c_in * d.h * d.w];
    let hw_in = d.h * d.w;
    let hw_out = d.h_out * d.w_out;
    // stride-1 3x3 input gradient is a correlation of the output gradient
    // with the 180-degree flipped kernel
    if fused3_applies(d) {
        for ci in 0..d.c_in {
            let gin_plane = &mut g_in[ci * hw_in..(ci + 1) * hw_in];
            for co in 0..d.c_out {
                let gout_plane = &g_out[co * hw_out..(co + 1) * hw_out];
                let k_base = (co * d.c_in + ci) * 9;
                if d.stride == 1 {
                    let mut flipped = [0.0f64; 9];
                    for i in 0..9 {
                        flipped[i] = kernels[k_base + 8 - i];
                    }
                    conv3_plane(gin_plane, gout_plane, &flipped, d.h_out, d.w_out, d.h, d.w, 1);
                } else {
                    conv3_s2_input_grad(
                        gin_plane,
                        gout_plane,
                        &kernels[k_base..k_base + 9],
                        d.h,
                        d.w,
                        d.h_out,
                        d.w_out,
                    );
                }
            }
        }
        return g_in;
    }
    for ci in 0..d.c_in {
        let gin_plane = &mut g_in[ci * hw_in..(ci + 1) * hw_in];
        for co in 0..d.c_out {
            let gout_plane = &g_out[co * hw_out..(co + 1) * hw_out];
            let k_base = (co * d.c_in + ci) * d.k * d.k;
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let weight = kernels[k_base + ky * d.k + kx];
                    if weight == 0.0 {
                        continue;
                    }
                    for oy in 0..d.h_out {
                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let gin_row =
                            &mut gin_plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                        let gout_row = &gout_plane[oy * d.w_out..(oy + 1) * d.w_out];
                        let ox_lo = ox_lower(kx, d.pad, d.stride);
                        let ox_hi = ox_upper(kx, d.pad, d.stride, d.w, d.w_out);
                        if d.stride == 1 {
                            let shift = kx as isize - d.pad as isize;
                            let gin_seg = &mut gin_row[(ox_lo as isize + shift) as usize
                                ..(ox_hi as isize + shift) as usize];
                            for (gi, go) in gin_seg.iter_mut().zip(&gout_row[ox_lo..ox_hi]) {
                                *gi += weight * *go;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                gin_row[ix as usize] += weight * gout_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    g_in
}

fn conv_backward_kernels(g_out: &[f64], input: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut g_k = vec![0.0f64; d.c_out * d.c_in * d.k * d.k];
    let hw_in = d.h * d.w;
    let hw_out = d.h_out * d.w_out;
    for co in 0..d.c_out {
        let gout_plane = &g_out[co * hw_out..(co + 1) * hw_out];
        for ci in 0..d.c_in {
            let in_plane = &input[ci * hw_in..(ci + 1) * hw_in];
            let k_base = (co * d.c_in + ci) * d.k * d.k;
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let mut acc = 0.0f64;
                    for oy in 0..d.h_out {
                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                        let gout_row = &gout_plane[oy * d.w_out..(oy + 1) * d.w_out];
                        let ox_lo = ox_lower(kx, d.pad, d.stride);
                        let ox_hi = ox_upper(kx, d.pad, d.stride, d.w, d.w_out);
                        if d.stride == 1 {
                            let shift = kx as isize - d.pad as isize;
                            acc += dot4(
                                &gout_row[ox_lo..ox_hi],
                                &in_row[(ox_lo as isize + shift) as usize
                                    ..(ox_hi as isize + shift) as usize],
                            );
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                acc += gout_row[ox] * in_row[ix as usize];
                            }
                        }
                    }
                    g_k[k_base + ky * d.k + kx] = acc;
                }
            }
        }
    }
    g_k
}

impl Tensor {
    /// Cross-correlation of a C_in×H×W input with C_out×C_in×k×k kernels
    /// plus a C_out bias, with `stride` and symmetric zero `pad`.
    /// Differentiable with respect to input, kernels and bias.
    pub fn conv2d(
        &self,
        kernels: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let in_shape = self.shape().to_vec();
        let k_shape = kernels.shape().to_vec();
        if in_shape.len() != 3 || k_shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: in_shape,
                rhs: k_shape,
            });
        }
        let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let (c_out, kc_in, k, k2) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if kc_in != c_in || k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: in_shape,
                rhs: k_shape,
            });
        }
        if k % 2 == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("kernel size {k} must be odd"),
            });
        }
        if bias.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: bias.shape().to_vec(),
                rhs: vec![c_out],
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        let (h_out, w_out) = match (
            conv_output_len(h, k, stride, pad),
            conv_output_len(w, k, stride, pad),
        ) {
            (Some(a), Some(b)) if a >= 1 && b >= 1 => (a, b),
            _ => {
                return Err(TensorError::Invalid {
                    op: "conv2d",
                    msg: format!("no valid output positions for {h}x{w}, k={k}, stride={stride}, pad={pad}"),
                })
            }
        };
        let dims = ConvDims {
            c_in,
            c_out,
            k,
            h,
            w,
            h_out,
            w_out,
            stride,
            pad,
        };

        let values = self.with_values(|inp| {
            kernels.with_values(|ker| bias.with_values(|b| conv_forward(inp, ker, b, &dims)))
        });

        let (p_in, p_k, p_b) = (self.clone(), kernels.clone(), bias.clone());
        Ok(Tensor::new_op(
            vec![c_out, h_out, w_out],
            values,
            vec![self.clone(), kernels.clone(), bias.clone()],
            Box::new(move |_, g| {
                if p_in.requires_grad() || p_in.inner.backward_fn.is_some() {
                    let gi = p_k.with_values(|ker| conv_backward_input(g, ker, &dims));
                    p_in.accumulate_grad(&gi);
                }
                if p_k.requires_grad() || p_k.inner.backward_fn.is_some() {
                    let gk = p_in.with_values(|inp| conv_backward_kernels(g, inp, &dims));
                    p_k.accumulate_grad(&gk);
                }
                if p_b.requires_grad() || p_b.inner.backward_fn.is_some() {
                    let hw_out = dims.h_out * dims.w_out;
                    let gb: Vec<f64> = (0..dims.c_out)
                        .map(|co| g[co * hw_out..(co + 1) * hw_out].iter().sum())
                        .collect();
                    p_b.accumulate_grad(&gb);
                }
            }),
            f64::INFINITY,
        ))
    }

    /// Double the spatial size of a C×H×W map. `Nearest` replicates each
    /// pixel into a 2×2 block; `Bilinear` uses the align-corners-false
    /// convention with edge clamping.
    pub fn upsample2x(&self, mode: UpsampleMode) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if shape.len() != 3 {
            return Err(TensorError::Invalid {
                op: "upsample2x",
                msg: format!("expected C x H x W, got {shape:?}"),
            });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (h2, w2) = (2 * h, 2 * w);
        match mode {
            UpsampleMode::Nearest => {
                let mut values = vec![0.0f64; c * h2 * w2];
                self.with_values(|v| {
                    for ch in 0..c {
                        for y in 0..h2 {
                            let src_row = &v[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                            let dst_row = &mut values[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
                            for x in 0..w2 {
                                dst_row[x] = src_row[x / 2];
                            }
                        }
                    }
                });
                let p = self.clone();
                Ok(Tensor::new_op(
                    vec![c, h2, w2],
                    values,
                    vec![self.clone()],
                    Box::new(move |_, g| {
                        let mut gp = vec![0.0f64; c * h * w];
                        for ch in 0..c {
                            for y in 0..h2 {
                                let g_row = &g[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
                                let gp_row =
                                    &mut gp[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                                for x in 0..w2 {
                                    gp_row[x / 2] += g_row[x];
                                }
                            }
                        }
                        p.accumulate_grad(&gp);
                    }),
                    f64::INFINITY,
                ))
            }
            UpsampleMode::Bilinear => {
                // destination index i samples source at i/2 - 0.25, clamped
                let taps = |n: usize| -> Vec<(usize, usize, f64)> {
                    (0..2 * n)
                        .map(|i| {
                            let src = i as f64 / 2.0 - 0.25;
                            let lo = src.floor();
                            let frac = src - lo;
                            let i0 = (lo.max(0.0) as usize).min(n - 1);
                            let i1 = ((lo as i64 + 1).max(0) as usize).min(n - 1);
                            (i0, i1, frac)
                        })
                        .collect()
                };
                let ty = taps(h);
                let tx = taps(w);
                let mut values = vec![0.0f64; c * h2 * w2];
                self.with_values(|v| {
                    for ch in 0..c {
                        let plane = &v[ch * h * w..(ch + 1) * h * w];
                        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                                let v00 = plane[y0 * w + x0];
                                let v01 = plane[y0 * w + x1];
                                let v10 = plane[y1 * w + x0];
                                let v11 = plane[y1 * w + x1];
                                values[(ch * h2 + y) * w2 + x] = (1.0 - fy)
                                    * ((1.0 - fx) * v00 + fx * v01)
                                    + fy * ((1.0 - fx) * v10 + fx * v11);
                            }
                        }
                    }
                });
                let p = self.clone();
                Ok(Tensor::new_op(
                    vec![c, h2, w2],
                    values,
                    vec![self.clone()],
                    Box::new(move |_, g| {
                        let mut gp = vec![0.0f64; c * h * w];
                        for ch in 0..c {
                            let gp_plane = &mut gp[ch * h * w..(ch + 1) * h * w];
                            for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                                for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                                    let go = g[(ch * h2 + y) * w2 + x];
                                    gp_plane[y0 * w + x0] += go * (1.0 - fy) * (1.0 - fx);
                                    gp_plane[y0 * w + x1] += go * (1.0 - fy) * fx;
                                    gp_plane[y1 * w + x0] += go * fy * (1.0 - fx);
                                    gp_plane[y1 * w + x1] += go * fy * fx;
                                }
                            }
                        }
                        p.accumulate_grad(&gp);
                    }),
                    f64::INFINITY,
                ))
            }
        }
    }
}
