use super::{AdapterSlots, BlockSlots, EncoderWeights, NORM_EPS};
use crate::matrix::Matrix;

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU expressed through its output `y = elu(x)`.
#[inline]
fn elu_grad(pre: f64, out: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        out + 1.0
    }
}

/// Backpropagates `upstream` through `y = v / |v|` given `y` and `|v|`.
///
/// The result is orthogonal to `y`.
pub fn l2_normalize_backward(y: &[f64], norm: f64, upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(upstream).map(|(a, b)| a * b).sum();
    y.iter()
        .zip(upstream)
        .map(|(yi, gi)| (gi - yi * dot) / norm)
        .collect()
}

/// `(channels, freq, time)` activation tensor.
#[derive(Debug, Clone)]
pub(crate) struct Tensor3 {
    pub c: usize,
    pub f: usize,
    pub t: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    fn zeros(c: usize, f: usize, t: usize) -> Self {
        Self {
            c,
            f,
            t,
            data: vec![0.0; c * f * t],
        }
    }

    fn zeros_like(other: &Tensor3) -> Self {
        Self::zeros(other.c, other.f, other.t)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    /// Temporal conv pre-activation and ELU output.
    z1: Tensor3,
    u1: Tensor3,
    /// Frequency conv pre-activation and ELU output.
    z2: Tensor3,
    u2: Tensor3,
    xhat: Vec<f64>,
    inv_std: f64,
    out: Tensor3,
}

#[derive(Debug, Clone)]
pub(crate) struct Cache {
    adapter_pre: Matrix,
    adapter_out: Tensor3,
    blocks: Vec<BlockCache>,
    proj_pre: Vec<f64>,
    norm: f64,
    pub fingerprint: Vec<f64>,
}

/// Returns (pre-activation, ELU output), both `(freq, t0)`.
pub(crate) fn adapter_forward(
    params: &[f64],
    slots: &AdapterSlots,
    x: &Matrix,
    t0: usize,
) -> (Matrix, Matrix) {
    let a = &params[slots.weight..slots.weight + slots.t_in * t0];
    let b = &params[slots.bias..slots.bias + t0];
    let (rows, t_in) = x.shape();
    let mut pre = Matrix::zeros(rows, t0);
    for r in 0..rows {
        let dst = pre.row_mut(r);
        dst.copy_from_slice(b);
        for (t, &xv) in x.row(r).iter().enumerate().take(t_in) {
            let arow = &a[t * t0..(t + 1) * t0];
            for (d, &w) in dst.iter_mut().zip(arow) {
                *d += xv * w;
            }
        }
    }
    let mut out = pre.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = elu(*v));
    (pre, out)
}

fn conv_out_len(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

/// Output positions `lo..hi` whose tap `k` lands inside the padded input,
/// plus the input index of the first one.
fn tap_range(k: usize, stride: usize, len_in: usize, len_out: usize) -> (usize, usize, usize) {
    let lo = usize::from(k == 0);
    let hi = match len_in.checked_sub(k) {
        Some(r) => (r / stride + 1).min(len_out),
        None => 0,
    };
    if hi <= lo {
        return (lo, lo, 0);
    }
    (lo, hi, lo * stride + k - 1)
}

/// Accumulates `w (c_out x rows) * col (rows x positions)` onto the bias.
fn conv_from_columns(
    col: &[f64],
    w: &[f64],
    b: &[f64],
    c_out: usize,
    f: usize,
    t: usize,
) -> Tensor3 {
    let positions = f * t;
    let rows = col.len() / positions;
    let mut out = Tensor3::zeros(c_out, f, t);
    for (o, plane) in out.data.chunks_exact_mut(positions).enumerate() {
        plane.fill(b[o]);
        for (r, src) in col.chunks_exact(positions).enumerate() {
            let wv = w[o * rows + r];
            for (d, &sv) in plane.iter_mut().zip(src) {
                *d += wv * sv;
            }
        }
    }
    out
}

/// 1x3 convolution along time with padding 1.
fn tconv_forward(input: &Tensor3, w: &[f64], b: &[f64], c_out: usize, stride: usize) -> Tensor3 {
    let (c_in, f, t_in) = (input.c, input.f, input.t);
    let t_out = conv_out_len(t_in, stride);
    let positions = f * t_out;
    let mut col = vec![0.0; c_in * 3 * positions];
    for i in 0..c_in {
        let src = &input.data[i * f * t_in..(i + 1) * f * t_in];
        for k in 0..3 {
            let dst = &mut col[(i * 3 + k) * positions..(i * 3 + k + 1) * positions];
            let (lo, hi, ti0) = tap_range(k, stride, t_in, t_out);
            for fi in 0..f {
                let srow = &src[fi * t_in + ti0..(fi + 1) * t_in];
                let drow = &mut dst[fi * t_out + lo..fi * t_out + hi];
                for (d, &sv) in drow.iter_mut().zip(srow.iter().step_by(stride)) {
                    *d = sv;
                }
            }
        }
    }
    conv_from_columns(&col, w, b, c_out, f, t_out)
}

fn tconv_backward(
    input: &Tensor3,
    w: &[f64],
    dout: &Tensor3,
    stride: usize,
    dw: &mut [f64],
    db: &mut [f64],
    din: Option<&mut Tensor3>,
) {
    let (c_in, f, t_in) = (input.c, input.f, input.t);
    let (c_out, t_out) = (dout.c, dout.t);
    for o in 0..c_out {
        let dplane = &dout.data[o * f * t_out..(o + 1) * f * t_out];
        db[o] += dplane.iter().sum::<f64>();
        for i in 0..c_in {
            let src = &input.data[i * f * t_in..(i + 1) * f * t_in];
            for k in 0..3 {
                let mut acc = 0.0;
                let (lo, hi, ti0) = tap_range(k, stride, t_in, t_out);
                for fi in 0..f {
                    let srow = &src[fi * t_in + ti0..(fi + 1) * t_in];
                    let drow = &dplane[fi * t_out + lo..fi * t_out + hi];
                    for (&g, &sv) in drow.iter().zip(srow.iter().step_by(stride)) {
                        acc += g * sv;
                    }
                }
                dw[(o * c_in + i) * 3 + k] += acc;
            }
        }
    }
    if let Some(din) = din {
        for o in 0..c_out {
            let dplane = &dout.data[o * f * t_out..(o + 1) * f * t_out];
            for i in 0..c_in {
                let dst = &mut din.data[i * f * t_in..(i + 1) * f * t_in];
                for k in 0..3 {
                    let wv = w[(o * c_in + i) * 3 + k];
                    let (lo, hi, ti0) = tap_range(k, stride, t_in, t_out);
                    for fi in 0..f {
                        let drow = &dplane[fi * t_out + lo..fi * t_out + hi];
                        let irow = &mut dst[fi * t_in + ti0..(fi + 1) * t_in];
                        for (&g, di) in drow.iter().zip(irow.iter_mut().step_by(stride)) {
                            *di += wv * g;
                        }
                    }
                }
            }
        }
    }
}

/// 3x1 convolution along frequency with padding 1.
fn fconv_forward(input: &Tensor3, w: &[f64], b: &[f64], c_out: usize, stride: usize) -> Tensor3 {
    let (c_in, f_in, t) = (input.c, input.f, input.t);
    let f_out = conv_out_len(f_in, stride);
    let positions = f_out * t;
    let mut col = vec![0.0; c_in * 3 * positions];
    for i in 0..c_in {
        let src = &input.data[i * f_in * t..(i + 1) * f_in * t];
        for k in 0..3 {
            let dst = &mut col[(i * 3 + k) * positions..(i * 3 + k + 1) * positions];
            let (lo, hi, fi0) = tap_range(k, stride, f_in, f_out);
            for (n, fo) in (lo..hi).enumerate() {
                let fi = fi0 + n * stride;
                dst[fo * t..(fo + 1) * t].copy_from_slice(&src[fi * t..(fi + 1) * t]);
            }
        }
    }
    conv_from_columns(&col, w, b, c_out, f_out, t)
}

fn fconv_backward(
    input: &Tensor3,
    w: &[f64],
    dout: &Tensor3,
    stride: usize,
    dw: &mut [f64],
    db: &mut [f64],
    din: &mut Tensor3,
) {
    let (c_in, f_in, t) = (input.c, input.f, input.t);
    let (c_out, f_out) = (dout.c, dout.f);
    for o in 0..c_out {
        let dplane = &dout.data[o * f_out * t..(o + 1) * f_out * t];
        db[o] += dplane.iter().sum::<f64>();
        for i in 0..c_in {
            let src = &input.data[i * f_in * t..(i + 1) * f_in * t];
            let dst = &mut din.data[i * f_in * t..(i + 1) * f_in * t];
            for k in 0..3 {
                let widx = (o * c_in + i) * 3 + k;
                let wv = w[widx];
                let mut acc = 0.0;
                for fo in 0..f_out {
                    let fi = (fo * stride + k) as isize - 1;
                    if fi < 0 || fi as usize >= f_in {
                        continue;
                    }
                    let fi = fi as usize;
                    let drow = &dplane[fo * t..(fo + 1) * t];
                    let srow = &src[fi * t..(fi + 1) * t];
                    let irow = &mut dst[fi * t..(fi + 1) * t];
                    for ((&g, &s), di) in drow.iter().zip(srow).zip(irow.iter_mut()) {
                        acc += g * s;
                        *di += wv * g;
                    }
                }
                dw[widx] += acc;
            }
        }
    }
}

fn block_forward(params: &[f64], s: &BlockSlots, input: &Tensor3) -> BlockCache {
    let (ci, co) = (s.c_in, s.c_out);
    let z1 = tconv_forward(
        input,
        &params[s.tconv_w..s.tconv_w + co * ci * 3],
        &params[s.tconv_b..s.tconv_b + co],
        co,
        s.time_stride,
    );
    let mut u1 = z1.clone();
    u1.data.iter_mut().for_each(|v| *v = elu(*v));
    let z2 = fconv_forward(
        &u1,
        &params[s.fconv_w..s.fconv_w + co * co * 3],
        &params[s.fconv_b..s.fconv_b + co],
        co,
        s.freq_stride,
    );
    let mut u2 = z2.clone();
    u2.data.iter_mut().for_each(|v| *v = elu(*v));

    let n = u2.data.len() as f64;
    let mean = u2.data.iter().sum::<f64>() / n;
    let var = u2.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + NORM_EPS).sqrt();
    let xhat: Vec<f64> = u2.data.iter().map(|v| (v - mean) * inv_std).collect();
    let gain = &params[s.gain..s.gain + co];
    let shift = &params[s.shift..s.shift + co];
    let plane = u2.f * u2.t;
    let mut out = Tensor3::zeros_like(&u2);
    for c in 0..co {
        for p in c * plane..(c + 1) * plane {
            out.data[p] = gain[c] * xhat[p] + shift[c];
        }
    }
    BlockCache {
        z1,
        u1,
        z2,
        u2,
        xhat,
        inv_std,
        out,
    }
}

pub(crate) fn forward(weights: &EncoderWeights, slots: &AdapterSlots, x: &Matrix) -> Cache {
    let params = &weights.params;
    let layout = &weights.layout;
    let cfg = &weights.config;
    let (adapter_pre, adapter_mat) = adapter_forward(params, slots, x, cfg.adapter_t0);
    let adapter_out = Tensor3 {
        c: 1,
        f: adapter_mat.rows(),
        t: adapter_mat.cols(),
        data: adapter_mat.as_slice().to_vec(),
    };

    let mut blocks: Vec<BlockCache> = Vec::with_capacity(layout.blocks.len());
    for s in &layout.blocks {
        let input = blocks.last().map(|b| &b.out).unwrap_or(&adapter_out);
        let cache = block_forward(params, s, input);
        blocks.push(cache);
    }

    let hidden = &blocks.last().expect("at least one block").out.data;
    let d = cfg.fingerprint_dim;
    let pw = &params[layout.proj_w..layout.proj_w + hidden.len() * d];
    let mut proj_pre = params[layout.proj_b..layout.proj_b + d].to_vec();
    for (c, &h) in hidden.iter().enumerate() {
        for (v, &w) in proj_pre.iter_mut().zip(&pw[c * d..(c + 1) * d]) {
            *v += h * w;
        }
    }
    let norm = proj_pre.iter().map(|v| v * v).sum::<f64>().sqrt();
    let fingerprint = super::Fingerprint::from_unnormalized(proj_pre.clone()).into_vec();
    Cache {
        adapter_pre,
        adapter_out,
        blocks,
        proj_pre,
        norm,
        fingerprint,
    }
}

pub(crate) fn backward(
    weights: &EncoderWeights,
    slots: &AdapterSlots,
    x: &Matrix,
    cache: &Cache,
    upstream: &[f64],
    grads: &mut [f64],
) {
    let params = &weights.params;
    let layout = &weights.layout;
    let d = weights.config.fingerprint_dim;
    if !(cache.norm > 0.0) {
        // degenerate zero projection: the fingerprint is a constant
        return;
    }
    let dv = l2_normalize_backward(&cache.fingerprint, cache.norm, upstream);
    debug_assert_eq!(dv.len(), cache.proj_pre.len());

    let hidden = &cache.blocks.last().unwrap().out;
    let c_final = hidden.data.len();
    let pw = &params[layout.proj_w..layout.proj_w + c_final * d];
    let mut dhidden = Tensor3::zeros_like(hidden);
    {
        let (gw, rest) = grads.split_at_mut(layout.proj_b);
        let gw = &mut gw[layout.proj_w..layout.proj_w + c_final * d];
        let gb = &mut rest[..d];
        for (b, &g) in gb.iter_mut().zip(&dv) {
            *b += g;
        }
        for c in 0..c_final {
            let h = hidden.data[c];
            let mut acc = 0.0;
            for j in 0..d {
                gw[c * d + j] += h * dv[j];
                acc += pw[c * d + j] * dv[j];
            }
            dhidden.data[c] = acc;
        }
    }

    let mut dout = dhidden;
    for (bi, s) in layout.blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[bi];
        let input = if bi == 0 {
            &cache.adapter_out
        } else {
            &cache.blocks[bi - 1].out
        };
        let co = s.c_out;
        let plane = bc.u2.f * bc.u2.t;

        // layer norm
        let gain = &params[s.gain..s.gain + co];
        let mut dxhat = vec![0.0; bc.xhat.len()];
        for c in 0..co {
            let mut dg = 0.0;
            let mut ds = 0.0;
            for p in c * plane..(c + 1) * plane {
                let g = dout.data[p];
                dg += g * bc.xhat[p];
                ds += g;
                dxhat[p] = g * gain[c];
            }
            grads[s.gain + c] += dg;
            grads[s.shift + c] += ds;
        }
        let n = dxhat.len() as f64;
        let mean_dx = dxhat.iter().sum::<f64>() / n;
        let mean_dx_xhat = dxhat.iter().zip(&bc.xhat).map(|(a, b)| a * b).sum::<f64>() / n;
        let mut dz2 = Tensor3::zeros_like(&bc.z2);
        for p in 0..dz2.data.len() {
            let du2 = bc.inv_std * (dxhat[p] - mean_dx - bc.xhat[p] * mean_dx_xhat);
            dz2.data[p] = du2 * elu_grad(bc.z2.data[p], bc.u2.data[p]);
        }

        // frequency conv
        let mut du1 = Tensor3::zeros_like(&bc.u1);
        {
            let fw = &params[s.fconv_w..s.fconv_w + co * co * 3];
            let (head, tail) = grads.split_at_mut(s.fconv_b);
            fconv_backward(
                &bc.u1,
                fw,
                &dz2,
                s.freq_stride,
                &mut head[s.fconv_w..s.fconv_w + co * co * 3],
                &mut tail[..co],
                &mut du1,
            );
        }
        let mut dz1 = du1;
        for (g, (&z, &u)) in dz1.data.iter_mut().zip(bc.z1.data.iter().zip(&bc.u1.data)) {
            *g *= elu_grad(z, u);
        }

        // temporal conv
        let mut din = Tensor3::zeros_like(input);
        {
            let ci = s.c_in;
            let tw = &params[s.tconv_w..s.tconv_w + co * ci * 3];
            let (head, tail) = grads.split_at_mut(s.tconv_b);
            tconv_backward(
                input,
                tw,
                &dz1,
                s.time_stride,
                &mut head[s.tconv_w..s.tconv_w + co * ci * 3],
                &mut tail[..co],
                Some(&mut din),
            );
        }
        dout = din;
    }

    // adapter
    let t0 = weights.config.adapter_t0;
    let (rows, t_in) = x.shape();
    let (head, tail) = grads.split_at_mut(slots.bias);
    let ga = &mut head[slots.weight..slots.weight + t_in * t0];
    let gb = &mut tail[..t0];
    for r in 0..rows {
        let xrow = x.row(r);
        let da: Vec<f64> = (0..t0)
            .map(|j| {
                let idx = r * t0 + j;
                dout.data[idx]
                    * elu_grad(
                        cache.adapter_pre.as_slice()[idx],
                        cache.adapter_out.data[idx],
                    )
            })
            .collect();
        for (b, &g) in gb.iter_mut().zip(&da) {
            *b += g;
        }
        for (t, &xv) in xrow.iter().enumerate() {
            let row = &mut ga[t * t0..(t + 1) * t0];
            for (a, &g) in row.iter_mut().zip(&da) {
                *a += xv * g;
            }
        }
    }
}
