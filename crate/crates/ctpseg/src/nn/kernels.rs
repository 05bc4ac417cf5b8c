//! Pure forward/backward array kernels for the neural operators.
//!
//! Everything here works on flat row-major buffers with explicit NCHW
//! shapes. Parallel loops split by output plane (one image × one channel)
//! or by weight element, and every per-element reduction runs in a fixed
//! sequential order, so results are bit-identical for any thread count.

use crate::autodiff::Element;
use crate::parallel::{fill_chunks, fill_indexed, map_indexed};

use super::{BnCtx, ConvSpec};

#[inline]
fn dims4(s: &[usize]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

// ---- conv2d ----

pub(crate) fn conv2d_forward<E: Element>(
    x: &[E],
    xs: &[usize],
    w: &[E],
    ws: &[usize],
    bias: Option<&[E]>,
    spec: &ConvSpec,
) -> (Vec<usize>, Vec<E>) {
    let (n, cin, h, wd) = dims4(xs);
    let (cout, _, kh, kw) = dims4(ws);
    let (oh, ow) = spec.out_hw(h, wd).expect("caller validated output size");
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;

    let mut out = vec![E::zero(); n * cout * oh * ow];
    fill_chunks(&mut out, oh * ow, |plane, dst| {
        let ni = plane / cout;
        let co = plane % cout;
        let b = bias.map_or(E::zero(), |b| b[co]);
        dst.iter_mut().for_each(|v| *v = b);
        for ci in 0..cin {
            let xbase = (ni * cin + ci) * h * wd;
            let wbase = (co * cin + ci) * kh * kw;
            for oy in 0..oh {
                for ky in 0..kh {
                    let iy = (oy * sh + ky * dh) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &x[xbase + iy as usize * wd..xbase + (iy as usize + 1) * wd];
                    let wrow = &w[wbase + ky * kw..wbase + (ky + 1) * kw];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let mut acc = E::zero();
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let ix = (ox * sw + kx * dw) as isize - pw as isize;
                            if ix >= 0 && ix < wd as isize {
                                acc = acc + xrow[ix as usize] * wv;
                            }
                        }
                        *d = *d + acc;
                    }
                }
            }
        }
    });
    (vec![n, cout, oh, ow], out)
}

pub(crate) fn conv2d_backward_input<E: Element>(
    gout: &[E],
    xs: &[usize],
    w: &[E],
    ws: &[usize],
    os: &[usize],
    spec: &ConvSpec,
) -> Vec<E> {
    let (n, cin, h, wd) = dims4(xs);
    let (cout, _, kh, kw) = dims4(ws);
    let (_, _, oh, ow) = dims4(os);
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;

    let mut gx = vec![E::zero(); n * cin * h * wd];
    fill_chunks(&mut gx, h * wd, |plane, dst| {
        let ni = plane / cin;
        let ci = plane % cin;
        for co in 0..cout {
            let gbase = (ni * cout + co) * oh * ow;
            let wbase = (co * cin + ci) * kh * kw;
            for oy in 0..oh {
                for ky in 0..kh {
                    let iy = (oy * sh + ky * dh) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * wd..(iy as usize + 1) * wd];
                    let grow = &gout[gbase + oy * ow..gbase + (oy + 1) * ow];
                    let wrow = &w[wbase + ky * kw..wbase + (ky + 1) * kw];
                    for (ox, &g) in grow.iter().enumerate() {
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let ix = (ox * sw + kx * dw) as isize - pw as isize;
                            if ix >= 0 && ix < wd as isize {
                                drow[ix as usize] = drow[ix as usize] + g * wv;
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

pub(crate) fn conv2d_backward_weight<E: Element>(
    gout: &[E],
    x: &[E],
    xs: &[usize],
    ws: &[usize],
    os: &[usize],
    spec: &ConvSpec,
) -> Vec<E> {
    let (n, cin, h, wd) = dims4(xs);
    let (cout, _, kh, kw) = dims4(ws);
    let (_, _, oh, ow) = dims4(os);
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;

    let mut gw = vec![E::zero(); cout * cin * kh * kw];
    fill_chunks(&mut gw, kh * kw, |pair, dst| {
        let co = pair / cin;
        let ci = pair % cin;
        for ky in 0..kh {
            for kx in 0..kw {
                let mut acc = E::zero();
                for ni in 0..n {
                    let gbase = (ni * cout + co) * oh * ow;
                    let xbase = (ni * cin + ci) * h * wd;
                    for oy in 0..oh {
                        let iy = (oy * sh + ky * dh) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &x[xbase + iy as usize * wd..xbase + (iy as usize + 1) * wd];
                        let grow = &gout[gbase + oy * ow..gbase + (oy + 1) * ow];
                        for (ox, &g) in grow.iter().enumerate() {
                            let ix = (ox * sw + kx * dw) as isize - pw as isize;
                            if ix >= 0 && ix < wd as isize {
                                acc = acc + g * xrow[ix as usize];
                            }
                        }
                    }
                }
                dst[ky * kw + kx] = acc;
            }
        }
    });
    gw
}

/// dL/dbias for any NCHW gradient: per-channel sum.
pub(crate) fn bias_backward<E: Element>(gout: &[E], os: &[usize]) -> Vec<E> {
    let (n, c, oh, ow) = dims4(os);
    map_indexed(c, |ci| {
        let mut acc = E::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * oh * ow;
            for &g in &gout[base..base + oh * ow] {
                acc = acc + g;
            }
        }
        acc
    })
}

// ---- transposed conv2d ----

pub(crate) fn conv_transpose2d_forward<E: Element>(
    x: &[E],
    xs: &[usize],
    w: &[E],
    ws: &[usize],
    bias: Option<&[E]>,
    spec: &ConvSpec,
) -> (Vec<usize>, Vec<E>) {
    let (n, a, h, wd) = dims4(xs);
    let (_, b, kh, kw) = dims4(ws);
    let (oh, ow) = spec.transpose_out_hw(h, wd).expect("caller validated output size");
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;

    let mut out = vec![E::zero(); n * b * oh * ow];
    fill_chunks(&mut out, oh * ow, |plane, dst| {
        let ni = plane / b;
        let bo = plane % b;
        let bv = bias.map_or(E::zero(), |bb| bb[bo]);
        dst.iter_mut().for_each(|v| *v = bv);
        for ai in 0..a {
            let xbase = (ni * a + ai) * h * wd;
            let wbase = (ai * b + bo) * kh * kw;
            for ih in 0..h {
                for ky in 0..kh {
                    let oy = (ih * sh + ky * dh) as isize - ph as isize;
                    if oy < 0 || oy >= oh as isize {
                        continue;
                    }
                    let xrow = &x[xbase + ih * wd..xbase + (ih + 1) * wd];
                    let wrow = &w[wbase + ky * kw..wbase + (ky + 1) * kw];
                    let drow = &mut dst[oy as usize * ow..(oy as usize + 1) * ow];
                    for (iw, &xv) in xrow.iter().enumerate() {
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let ox = (iw * sw + kx * dw) as isize - pw as isize;
                            if ox >= 0 && ox < ow as isize {
                                drow[ox as usize] = drow[ox as usize] + xv * wv;
                            }
                        }
                    }
                }
            }
        }
    });
    (vec![n, b, oh, ow], out)
}

pub(crate) fn conv_transpose2d_backward_input<E: Element>(
    gout: &[E],
    xs: &[usize],
    w: &[E],
    ws: &[usize],
    os: &[usize],
    spec: &ConvSpec,
) -> Vec<E> {
    let (n, a, h, wd) = dims4(xs);
    let (_, b, kh, kw) = dims4(ws);
    let (_, _, oh, ow) = dims4(os);
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;

    let mut gx = vec![E::zero(); n * a * h * wd];
    fill_chunks(&mut gx, h * wd, |plane, dst| {
        let ni = plane / a;
        let ai = plane % a;
        for bo in 0..b {
            let gbase = (ni * b + bo) * oh * ow;
            let wbase = (ai * b + bo) * kh * kw;
            for ih in 0..h {
                for ky in 0..kh {
                    let oy = (ih * sh + ky * dh) as isize - ph as isize;
                    if oy < 0 || oy >= oh as isize {
                        continue;
                    }
                    let grow = &gout[gbase + oy as usize * ow..gbase + (oy as usize + 1) * ow];
                    let wrow = &w[wbase + ky * kw..wbase + (ky + 1) * kw];
                    let drow = &mut dst[ih * wd..(ih + 1) * wd];
                    for (iw, d) in drow.iter_mut().enumerate() {
                        let mut acc = E::zero();
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let ox = (iw * sw + kx * dw) as isize - pw as isize;
                            if ox >= 0 && ox < ow as isize {
                                acc = acc + grow[ox as usize] * wv;
                            }
                        }
                        *d = *d + acc;
                    }
                }
            }
        }
    });
    gx
}

pub(crate) fn conv_transpose2d_backward_weight<E: Element>(
    gout: &[E],
    x: &[E],
    xs: &[usize],
    ws: &[usize],
    os: &[usize],
    spec: &ConvSpec,
) -> Vec<E> {
    let (n, a, h, wd) = dims4(xs);
    let (_, b, kh, kw) = dims4(ws);
    let (_, _, oh, ow) = dims4(os);
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;

    let mut gw = vec![E::zero(); a * b * kh * kw];
    fill_chunks(&mut gw, kh * kw, |pair, dst| {
        let ai = pair / b;
        let bo = pair % b;
        for ky in 0..kh {
            for kx in 0..kw {
                let mut acc = E::zero();
                for ni in 0..n {
                    let xbase = (ni * a + ai) * h * wd;
                    let gbase = (ni * b + bo) * oh * ow;
                    for ih in 0..h {
                        let oy = (ih * sh + ky * dh) as isize - ph as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        let xrow = &x[xbase + ih * wd..xbase + (ih + 1) * wd];
                        let grow =
                            &gout[gbase + oy as usize * ow..gbase + (oy as usize + 1) * ow];
                        for (iw, &xv) in xrow.iter().enumerate() {
                            let ox = (iw * sw + kx * dw) as isize - pw as isize;
                            if ox >= 0 && ox < ow as isize {
                                acc = acc + xv * grow[ox as usize];
                            }
                        }
                    }
                }
                dst[ky * kw + kx] = acc;
            }
        }
    });
    gw
}

// ---- pooling ----

pub(crate) fn avg_pool_forward<E: Element>(
    x: &[E],
    xs: &[usize],
    kernel: (usize, usize),
    stride: (usize, usize),
) -> (Vec<usize>, Vec<E>) {
    let (n, c, h, wd) = dims4(xs);
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let oh = (h - kh) / sh + 1;
    let ow = (wd - kw) / sw + 1;
    // Divide (not multiply by a reciprocal) so that adaptive pooling with
    // matching bins produces bit-identical results.
    let area = E::from_f64((kh * kw) as f64);

    let mut out = vec![E::zero(); n * c * oh * ow];
    fill_chunks(&mut out, oh * ow, |plane, dst| {
        let xbase = plane * h * wd;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = E::zero();
                for ky in 0..kh {
                    let row = xbase + (oy * sh + ky) * wd + ox * sw;
                    for &v in &x[row..row + kw] {
                        acc = acc + v;
                    }
                }
                dst[oy * ow + ox] = acc / area;
            }
        }
    });
    (vec![n, c, oh, ow], out)
}

pub(crate) fn avg_pool_backward<E: Element>(
    gout: &[E],
    xs: &[usize],
    os: &[usize],
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Vec<E> {
    let (_, _, h, wd) = dims4(xs);
    let (_, _, oh, ow) = dims4(os);
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let area = E::from_f64((kh * kw) as f64);

    let mut gx = vec![E::zero(); xs.iter().product()];
    fill_chunks(&mut gx, h * wd, |plane, dst| {
        let gbase = plane * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gout[gbase + oy * ow + ox] / area;
                for ky in 0..kh {
                    let row = (oy * sh + ky) * wd + ox * sw;
                    for d in &mut dst[row..row + kw] {
                        *d = *d + g;
                    }
                }
            }
        }
    });
    gx
}

/// Bin boundaries `floor(i*extent/k) .. floor((i+1)*extent/k)` per axis.
pub(crate) fn adaptive_bins(extent: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|i| (i * extent / k, (i + 1) * extent / k)).collect()
}

pub(crate) fn adaptive_avg_pool_forward<E: Element>(
    x: &[E],
    xs: &[usize],
    out_hw: (usize, usize),
) -> (Vec<usize>, Vec<E>) {
    let (n, c, h, wd) = dims4(xs);
    let (oh, ow) = out_hw;
    let ybins = adaptive_bins(h, oh);
    let xbins = adaptive_bins(wd, ow);

    let mut out = vec![E::zero(); n * c * oh * ow];
    fill_chunks(&mut out, oh * ow, |plane, dst| {
        let xbase = plane * h * wd;
        for (oy, &(y0, y1)) in ybins.iter().enumerate() {
            for (ox, &(x0, x1)) in xbins.iter().enumerate() {
                let mut acc = E::zero();
                for iy in y0..y1 {
                    for &v in &x[xbase + iy * wd + x0..xbase + iy * wd + x1] {
                        acc = acc + v;
                    }
                }
                let area = E::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                dst[oy * ow + ox] = acc / area;
            }
        }
    });
    (vec![n, c, oh, ow], out)
}

pub(crate) fn adaptive_avg_pool_backward<E: Element>(
    gout: &[E],
    xs: &[usize],
    out_hw: (usize, usize),
) -> Vec<E> {
    let (_, _, h, wd) = dims4(xs);
    let (oh, ow) = out_hw;
    let ybins = adaptive_bins(h, oh);
    let xbins = adaptive_bins(wd, ow);

    let mut gx = vec![E::zero(); xs.iter().product()];
    fill_chunks(&mut gx, h * wd, |plane, dst| {
        let gbase = plane * oh * ow;
        for (oy, &(y0, y1)) in ybins.iter().enumerate() {
            for (ox, &(x0, x1)) in xbins.iter().enumerate() {
                let area = E::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                let g = gout[gbase + oy * ow + ox] / area;
                for iy in y0..y1 {
                    for d in &mut dst[iy * wd + x0..iy * wd + x1] {
                        *d = *d + g;
                    }
                }
            }
        }
    });
    gx
}

/// Window maxima plus the flat input index of each maximum (first
/// occurrence wins ties, scanning the window row-major).
pub(crate) fn max_pool_forward<E: Element>(
    x: &[E],
    xs: &[usize],
    kernel: (usize, usize),
    stride: (usize, usize),
) -> (Vec<usize>, Vec<E>, Vec<usize>) {
    let (n, c, h, wd) = dims4(xs);
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let oh = (h - kh) / sh + 1;
    let ow = (wd - kw) / sw + 1;

    let mut out = vec![E::zero(); n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    for plane in 0..n * c {
        let xbase = plane * h * wd;
        let obase = plane * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = x[xbase + oy * sh * wd + ox * sw];
                let mut best_idx = xbase + oy * sh * wd + ox * sw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let idx = xbase + (oy * sh + ky) * wd + ox * sw + kx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[obase + oy * ow + ox] = best;
                argmax[obase + oy * ow + ox] = best_idx;
            }
        }
    }
    (vec![n, c, oh, ow], out, argmax)
}

// ---- batch normalization ----

/// Per-channel mean and biased variance over batch and spatial dims.
pub(crate) fn batch_stats<E: Element>(x: &[E], xs: &[usize]) -> (Vec<E>, Vec<E>) {
    let (n, c, h, wd) = dims4(xs);
    let m = (n * h * wd) as f64;
    let stats = map_indexed(c, |ci| {
        let mut sum = E::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * h * wd;
            for &v in &x[base..base + h * wd] {
                sum = sum + v;
            }
        }
        let mean = sum * E::from_f64(1.0 / m);
        let mut var = E::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * h * wd;
            for &v in &x[base..base + h * wd] {
                let d = v - mean;
                var = var + d * d;
            }
        }
        (mean, var * E::from_f64(1.0 / m))
    });
    stats.into_iter().unzip()
}

/// Normalize with the given per-channel stats, then apply the affine terms.
pub(crate) fn batch_norm_apply<E: Element>(
    x: &[E],
    xs: &[usize],
    mean: &[E],
    var: &[E],
    scale: &[E],
    shift: &[E],
    eps: E,
) -> Vec<E> {
    let (_, c, h, wd) = dims4(xs);
    let hw = h * wd;
    let invstd: Vec<E> =
        var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
    let mut out = vec![E::zero(); x.len()];
    fill_indexed(&mut out, |i| {
        let ci = (i / hw) % c;
        (x[i] - mean[ci]) * invstd[ci] * scale[ci] + shift[ci]
    });
    out
}

/// Gradients w.r.t. input, scale, and shift. In train mode the batch
/// statistics depend on `x`, so the two correction terms apply; in eval
/// mode the stats are constants.
pub(crate) fn batch_norm_backward<E: Element>(
    gout: &[E],
    x: &[E],
    xs: &[usize],
    scale: &[E],
    ctx: &BnCtx<E>,
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let (n, c, h, wd) = dims4(xs);
    let hw = h * wd;
    let m = (n * hw) as f64;
    let invstd: Vec<E> =
        ctx.var.iter().map(|&v| E::one() / (v + ctx.eps).sqrt()).collect();

    // Per-channel sums: sum(gy) and sum(gy * xhat), in fixed scan order.
    let sums = map_indexed(c, |ci| {
        let mut s_g = E::zero();
        let mut s_gx = E::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for j in 0..hw {
                let g = gout[base + j];
                let xhat = (x[base + j] - ctx.mean[ci]) * invstd[ci];
                s_g = s_g + g;
                s_gx = s_gx + g * xhat;
            }
        }
        (s_g, s_gx)
    });
    let gshift: Vec<E> = sums.iter().map(|&(s, _)| s).collect();
    let gscale: Vec<E> = sums.iter().map(|&(_, s)| s).collect();

    let inv_m = E::from_f64(1.0 / m);
    let mut gx = vec![E::zero(); x.len()];
    fill_indexed(&mut gx, |i| {
        let ci = (i / hw) % c;
        let g = gout[i];
        if ctx.train {
            let xhat = (x[i] - ctx.mean[ci]) * invstd[ci];
            scale[ci]
                * invstd[ci]
                * (g - gshift[ci] * inv_m - xhat * (gscale[ci] * inv_m))
        } else {
            g * scale[ci] * invstd[ci]
        }
    });
    (gx, gscale, gshift)
}

// ---- bilinear interpolation ----

/// Half-pixel source coordinates: `(i + 0.5) * in/out - 0.5`, clamped.
/// Returns `(i0, i1, frac)` per output index.
pub(crate) fn bilinear_lut(in_extent: usize, out_extent: usize) -> Vec<(usize, usize, f64)> {
    (0..out_extent)
        .map(|o| {
            let src = (o as f64 + 0.5) * in_extent as f64 / out_extent as f64 - 0.5;
            let src = src.clamp(0.0, (in_extent - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_extent - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn bilinear_forward<E: Element>(
    x: &[E],
    xs: &[usize],
    out_hw: (usize, usize),
) -> (Vec<usize>, Vec<E>) {
    let (n, c, h, wd) = dims4(xs);
    let (oh, ow) = out_hw;
    let ylut = bilinear_lut(h, oh);
    let xlut = bilinear_lut(wd, ow);

    let mut out = vec![E::zero(); n * c * oh * ow];
    fill_chunks(&mut out, oh * ow, |plane, dst| {
        let xbase = plane * h * wd;
        for (oy, &(y0, y1, fy)) in ylut.iter().enumerate() {
            let fy = E::from_f64(fy);
            for (ox, &(x0, x1, fx)) in xlut.iter().enumerate() {
                let fx = E::from_f64(fx);
                // Lerp form keeps constant inputs exactly constant.
                let r0 = {
                    let a = x[xbase + y0 * wd + x0];
                    let b = x[xbase + y0 * wd + x1];
                    a + fx * (b - a)
                };
                let r1 = {
                    let a = x[xbase + y1 * wd + x0];
                    let b = x[xbase + y1 * wd + x1];
                    a + fx * (b - a)
                };
                dst[oy * ow + ox] = r0 + fy * (r1 - r0);
            }
        }
    });
    (vec![n, c, oh, ow], out)
}

pub(crate) fn bilinear_backward<E: Element>(
    gout: &[E],
    xs: &[usize],
    os: &[usize],
) -> Vec<E> {
    let (_, _, h, wd) = dims4(xs);
    let (_, _, oh, ow) = dims4(os);
    let ylut = bilinear_lut(h, oh);
    let xlut = bilinear_lut(wd, ow);

    let mut gx = vec![E::zero(); xs.iter().product()];
    fill_chunks(&mut gx, h * wd, |plane, dst| {
        let gbase = plane * oh * ow;
        for (oy, &(y0, y1, fy)) in ylut.iter().enumerate() {
            let fy = E::from_f64(fy);
            for (ox, &(x0, x1, fx)) in xlut.iter().enumerate() {
                let fx = E::from_f64(fx);
                let g = gout[gbase + oy * ow + ox];
                let one = E::one();
                dst[y0 * wd + x0] = dst[y0 * wd + x0] + g * (one - fy) * (one - fx);
                dst[y0 * wd + x1] = dst[y0 * wd + x1] + g * (one - fy) * fx;
                dst[y1 * wd + x0] = dst[y1 * wd + x0] + g * fy * (one - fx);
                dst[y1 * wd + x1] = dst[y1 * wd + x1] + g * fy * fx;
            }
        }
    });
    gx
}
