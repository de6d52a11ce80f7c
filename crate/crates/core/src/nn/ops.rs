//! Computational kernels behind the graph ops: im2col convolution pieces,
//! bilinear resampling, and batch normalization statistics.

use ndarray::{Array2, ArrayView2, ArrayView3, ArrayViewMut2, ArrayViewMut3};

use super::Scalar;

/// Output spatial size of a padded, strided convolution.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Fills `col` (rows: cin·kh·kw, cols: h_out·w_out) from `x` (cin, h, w).
pub fn im2col<T: Scalar>(
    x: &ArrayView3<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    col: &mut Array2<T>,
) {
    let (cin, h, w) = x.dim();
    let h_out = conv_out_size(h, kh, stride, pad);
    let w_out = conv_out_size(w, kw, stride, pad);
    debug_assert_eq!(col.dim(), (cin * kh * kw, h_out * w_out));
    col.fill(T::zero());
    for c in 0..cin {
        let plane = x.index_axis(ndarray::Axis(0), c);
        for a in 0..kh {
            for b in 0..kw {
                let row_idx = (c * kh + a) * kw + b;
                let mut col_row = col.row_mut(row_idx);
                let col_slice = col_row.as_slice_mut().expect("col is contiguous");
                for oi in 0..h_out {
                    let ii = (oi * stride + a) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let src = plane.index_axis(ndarray::Axis(0), ii as usize);
                    let src = src.as_slice().expect("input row is contiguous");
                    let dst = &mut col_slice[oi * w_out..(oi + 1) * w_out];
                    if stride == 1 {
                        // jj = oj + b − pad ranges over a contiguous window.
                        let lo = pad.saturating_sub(b);
                        let hi = w_out.min((w + pad).saturating_sub(b));
                        for oj in lo..hi {
                            dst[oj] = src[oj + b - pad];
                        }
                    } else {
                        for (oj, d) in dst.iter_mut().enumerate() {
                            let jj = (oj * stride + b) as isize - pad as isize;
                            if jj >= 0 && jj < w as isize {
                                *d = src[jj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col`-shaped gradients back onto `dx`.
pub fn col2im_add<T: Scalar>(
    col: &ArrayView2<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dx: &mut ArrayViewMut3<T>,
) {
    let (cin, h, w) = dx.dim();
    let h_out = conv_out_size(h, kh, stride, pad);
    let w_out = conv_out_size(w, kw, stride, pad);
    for c in 0..cin {
        let mut plane = dx.index_axis_mut(ndarray::Axis(0), c);
        for a in 0..kh {
            for b in 0..kw {
                let row_idx = (c * kh + a) * kw + b;
                let col_row = col.row(row_idx);
                let col_slice = col_row.as_slice().expect("col is contiguous");
                for oi in 0..h_out {
                    let ii = (oi * stride + a) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let mut dst_row = plane.index_axis_mut(ndarray::Axis(0), ii as usize);
                    let dst = dst_row.as_slice_mut().expect("row is contiguous");
                    let src = &col_slice[oi * w_out..(oi + 1) * w_out];
                    if stride == 1 {
                        let lo = pad.saturating_sub(b);
                        let hi = w_out.min((w + pad).saturating_sub(b));
                        for oj in lo..hi {
                            dst[oj + b - pad] = dst[oj + b - pad] + src[oj];
                        }
                    } else {
                        for (oj, s) in src.iter().enumerate() {
                            let jj = (oj * stride + b) as isize - pad as isize;
                            if jj >= 0 && jj < w as isize {
                                dst[jj as usize] = dst[jj as usize] + *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Interpolation taps for one output index of a 2× bilinear upsample with
/// half-pixel sampling: `(left index, left weight, right index, right weight)`.
#[inline]
fn bilinear_taps(oi: usize, len_in: usize) -> (usize, f64, usize, f64) {
    // Source coordinate (oi + 0.5)/2 − 0.5, clamped to the edges.
    let s = (oi as f64 + 0.5) / 2.0 - 0.5;
    if s <= 0.0 {
        return (0, 1.0, 0, 0.0);
    }
    let i0 = s.floor() as usize;
    if i0 + 1 >= len_in {
        return (len_in - 1, 1.0, len_in - 1, 0.0);
    }
    let frac = s - i0 as f64;
    (i0, 1.0 - frac, i0 + 1, frac)
}

/// 2× bilinear upsample of `(c, h, w)` into `(c, 2h, 2w)`.
pub fn upsample_bilinear2x<T: Scalar>(x: &ArrayView3<T>, out: &mut ArrayViewMut3<T>) {
    let (c, h, w) = x.dim();
    debug_assert_eq!(out.dim(), (c, 2 * h, 2 * w));
    for ch in 0..c {
        let plane = x.index_axis(ndarray::Axis(0), ch);
        let mut out_plane = out.index_axis_mut(ndarray::Axis(0), ch);
        for oi in 0..2 * h {
            let (i0, w0, i1, w1) = bilinear_taps(oi, h);
            let (w0, w1) = (T::from_f64(w0).unwrap(), T::from_f64(w1).unwrap());
            let r0 = plane.index_axis(ndarray::Axis(0), i0);
            let r0 = r0.as_slice().expect("contiguous");
            let r1 = plane.index_axis(ndarray::Axis(0), i1);
            let r1 = r1.as_slice().expect("contiguous");
            let mut dst_row = out_plane.index_axis_mut(ndarray::Axis(0), oi);
            let dst = dst_row.as_slice_mut().expect("contiguous");
            for oj in 0..2 * w {
                let (j0, u0, j1, u1) = bilinear_taps(oj, w);
                let (u0, u1) = (T::from_f64(u0).unwrap(), T::from_f64(u1).unwrap());
                let row_val = |r: &[T]| u0 * r[j0] + u1 * r[j1];
                dst[oj] = w0 * row_val(r0) + w1 * row_val(r1);
            }
        }
    }
}

/// Adjoint of [`upsample_bilinear2x`]: accumulates output gradients onto `dx`.
pub fn upsample_bilinear2x_adj<T: Scalar>(dout: &ArrayView3<T>, dx: &mut ArrayViewMut3<T>) {
    let (c, h, w) = dx.dim();
    debug_assert_eq!(dout.dim(), (c, 2 * h, 2 * w));
    for ch in 0..c {
        let g_plane = dout.index_axis(ndarray::Axis(0), ch);
        let mut dx_plane = dx.index_axis_mut(ndarray::Axis(0), ch);
        for oi in 0..2 * h {
            let (i0, w0, i1, w1) = bilinear_taps(oi, h);
            let (w0, w1) = (T::from_f64(w0).unwrap(), T::from_f64(w1).unwrap());
            let g_row = g_plane.index_axis(ndarray::Axis(0), oi);
            let g = g_row.as_slice().expect("contiguous");
            for oj in 0..2 * w {
                let (j0, u0, j1, u1) = bilinear_taps(oj, w);
                let (u0, u1) = (T::from_f64(u0).unwrap(), T::from_f64(u1).unwrap());
                let gv = g[oj];
                dx_plane[[i0, j0]] = dx_plane[[i0, j0]] + w0 * u0 * gv;
                dx_plane[[i0, j1]] = dx_plane[[i0, j1]] + w0 * u1 * gv;
                dx_plane[[i1, j0]] = dx_plane[[i1, j0]] + w1 * u0 * gv;
                dx_plane[[i1, j1]] = dx_plane[[i1, j1]] + w1 * u1 * gv;
            }
        }
    }
}

/// Valid cross-correlation of every channel of `x` with one kernel:
/// `out(c,i,j) = Σ k(a,b)·x(c,i+a,j+b)`.
pub fn conv_valid_xk<T: Scalar>(
    x: &ArrayView3<T>,
    k: &ArrayView2<T>,
    out: &mut ArrayViewMut3<T>,
) {
    let (c, _h, _w) = x.dim();
    let (kh, kw) = k.dim();
    let (oc, oh, ow) = out.dim();
    debug_assert_eq!(c, oc);
    out.fill(T::zero());
    for ch in 0..c {
        let plane = x.index_axis(ndarray::Axis(0), ch);
        let mut out_plane = out.index_axis_mut(ndarray::Axis(0), ch);
        for i in 0..oh {
            let mut out_row = out_plane.index_axis_mut(ndarray::Axis(0), i);
            let dst = out_row.as_slice_mut().expect("contiguous");
            for a in 0..kh {
                let src_row = plane.index_axis(ndarray::Axis(0), i + a);
                let src = src_row.as_slice().expect("contiguous");
                for b in 0..kw {
                    let kv = k[[a, b]];
                    let shifted = &src[b..b + ow];
                    for (d, s) in dst.iter_mut().zip(shifted) {
                        *d = *d + kv * *s;
                    }
                }
            }
        }
    }
}

/// Gradient of [`conv_valid_xk`] with respect to the kernel.
pub fn conv_valid_xk_grad_k<T: Scalar>(
    x: &ArrayView3<T>,
    dout: &ArrayView3<T>,
    dk: &mut ArrayViewMut2<T>,
) {
    let (c, _h, _w) = x.dim();
    let (_oc, oh, ow) = dout.dim();
    let (kh, kw) = dk.dim();
    for ch in 0..c {
        let plane = x.index_axis(ndarray::Axis(0), ch);
        let g_plane = dout.index_axis(ndarray::Axis(0), ch);
        for a in 0..kh {
            for b in 0..kw {
                let mut acc = T::zero();
                for i in 0..oh {
                    let src_row = plane.index_axis(ndarray::Axis(0), i + a);
                    let src = src_row.as_slice().expect("contiguous");
                    let g_row = g_plane.index_axis(ndarray::Axis(0), i);
                    let g = g_row.as_slice().expect("contiguous");
                    let shifted = &src[b..b + ow];
                    let mut dot = T::zero();
                    for (gv, sv) in g.iter().zip(shifted) {
                        dot = dot + *gv * *sv;
                    }
                    acc = acc + dot;
                }
                dk[[a, b]] = dk[[a, b]] + acc;
            }
        }
    }
}

/// Gradient of [`conv_valid_xk`] with respect to the image.
pub fn conv_valid_xk_grad_x<T: Scalar>(
    k: &ArrayView2<T>,
    dout: &ArrayView3<T>,
    dx: &mut ArrayViewMut3<T>,
) {
    let (c, oh, ow) = dout.dim();
    let (kh, kw) = k.dim();
    for ch in 0..c {
        let g_plane = dout.index_axis(ndarray::Axis(0), ch);
        let mut dx_plane = dx.index_axis_mut(ndarray::Axis(0), ch);
        for i in 0..oh {
            let g_row = g_plane.index_axis(ndarray::Axis(0), i);
            let g = g_row.as_slice().expect("contiguous");
            for a in 0..kh {
                let mut dst_row = dx_plane.index_axis_mut(ndarray::Axis(0), i + a);
                let dst = dst_row.as_slice_mut().expect("contiguous");
                for b in 0..kw {
                    let kv = k[[a, b]];
                    let window = &mut dst[b..b + ow];
                    for (d, gv) in window.iter_mut().zip(g) {
                        *d = *d + kv * *gv;
                    }
                }
            }
        }
    }
}

/// Per-channel batch statistics over the spatial axes: returns
/// `(mean, invstd)` per channel and writes the standardized tensor.
pub fn batchnorm_forward<T: Scalar>(
    x: &ArrayView3<T>,
    eps: T,
    xhat: &mut ArrayViewMut3<T>,
) -> (Vec<T>, Vec<T>) {
    let (c, h, w) = x.dim();
    let n = T::from_usize(h * w).unwrap();
    let mut means = Vec::with_capacity(c);
    let mut invstds = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = x.index_axis(ndarray::Axis(0), ch);
        let mean = plane.sum() / n;
        let mut var = T::zero();
        for v in plane.iter() {
            let d = *v - mean;
            var = var + d * d;
        }
        var = var / n;
        let invstd = T::one() / (var + eps).sqrt();
        let mut out_plane = xhat.index_axis_mut(ndarray::Axis(0), ch);
        for (o, v) in out_plane.iter_mut().zip(plane.iter()) {
            *o = (*v - mean) * invstd;
        }
        means.push(mean);
        invstds.push(invstd);
    }
    (means, invstds)
}
