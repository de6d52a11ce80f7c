//! FFT-backed evaluation of the data-term convolution for large kernels.
//!
//! The valid cross-correlation and both of its gradients are circular
//! correlations/convolutions once zero-padded to a power-of-two grid at
//! least the canvas size, so one cached plan serves all three passes and
//! the image spectrum computed in the forward pass is reused for the
//! kernel gradient.

use std::sync::Arc;

use ndarray::{ArrayView2, ArrayView3, ArrayViewMut2, ArrayViewMut3};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::Scalar;

/// Kernel area at or above which the tape switches to the FFT path.
pub const FFT_CONV_MIN_KERNEL_AREA: usize = 1024;

struct Fft2<T: Scalar> {
    h: usize,
    w: usize,
    fwd_row: Arc<dyn Fft<T>>,
    fwd_col: Arc<dyn Fft<T>>,
    inv_row: Arc<dyn Fft<T>>,
    inv_col: Arc<dyn Fft<T>>,
    transposed: Vec<Complex<T>>,
}

impl<T: Scalar> Fft2<T> {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            h,
            w,
            fwd_row: planner.plan_fft_forward(w),
            fwd_col: planner.plan_fft_forward(h),
            inv_row: planner.plan_fft_inverse(w),
            inv_col: planner.plan_fft_inverse(h),
            transposed: vec![Complex::new(T::zero(), T::zero()); h * w],
        }
    }

    fn pass(&mut self, buf: &mut [Complex<T>], inverse: bool) {
        let (row, col) = if inverse {
            (&self.inv_row, &self.inv_col)
        } else {
            (&self.fwd_row, &self.fwd_col)
        };
        for chunk in buf.chunks_mut(self.w) {
            row.process(chunk);
        }
        for i in 0..self.h {
            for j in 0..self.w {
                self.transposed[j * self.h + i] = buf[i * self.w + j];
            }
        }
        for chunk in self.transposed.chunks_mut(self.h) {
            col.process(chunk);
        }
        for i in 0..self.h {
            for j in 0..self.w {
                buf[i * self.w + j] = self.transposed[j * self.h + i];
            }
        }
    }
}

/// Per-node state: cached plans plus the spectra of the canvas and kernel
/// from the most recent forward pass.
pub struct FftConvState<T: Scalar> {
    fh: usize,
    fw: usize,
    fft: Fft2<T>,
    freq_x: Vec<Vec<Complex<T>>>,
    freq_k: Vec<Complex<T>>,
    work: Vec<Complex<T>>,
    work2: Vec<Complex<T>>,
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

impl<T: Scalar> FftConvState<T> {
    pub fn new(channels: usize, h: usize, w: usize) -> Self {
        let (fh, fw) = (next_pow2(h), next_pow2(w));
        let zero = Complex::new(T::zero(), T::zero());
        FftConvState {
            fh,
            fw,
            fft: Fft2::new(fh, fw),
            freq_x: vec![vec![zero; fh * fw]; channels],
            freq_k: vec![zero; fh * fw],
            work: vec![zero; fh * fw],
            work2: vec![zero; fh * fw],
        }
    }

    fn pack2(buf: &mut [Complex<T>], data: &ArrayView2<T>, fw: usize) {
        for v in buf.iter_mut() {
            *v = Complex::new(T::zero(), T::zero());
        }
        for (i, row) in data.outer_iter().enumerate() {
            let dst = &mut buf[i * fw..i * fw + row.len()];
            for (d, s) in dst.iter_mut().zip(row.iter()) {
                d.re = *s;
            }
        }
    }

    /// out(c,i,j) = Σ k(a,b)·x(c,i+a,j+b), via X·conj(K).
    pub fn forward(
        &mut self,
        x: &ArrayView3<T>,
        k: &ArrayView2<T>,
        out: &mut ArrayViewMut3<T>,
    ) {
        let (c, _h, _w) = x.dim();
        let scale = T::one() / T::from_usize(self.fh * self.fw).unwrap();
        Self::pack2(&mut self.work, k, self.fw);
        self.fft.pass(&mut self.work, false);
        self.freq_k.copy_from_slice(&self.work);
        for ch in 0..c {
            Self::pack2(&mut self.work, &x.index_axis(ndarray::Axis(0), ch), self.fw);
            self.fft.pass(&mut self.work, false);
            self.freq_x[ch].copy_from_slice(&self.work);
            for (w, kf) in self.work.iter_mut().zip(self.freq_k.iter()) {
                *w = *w * kf.conj();
            }
            self.fft.pass(&mut self.work, true);
            let mut plane = out.index_axis_mut(ndarray::Axis(0), ch);
            for (i, mut row) in plane.outer_iter_mut().enumerate() {
                let src = &self.work[i * self.fw..i * self.fw + row.len()];
                for (d, s) in row.iter_mut().zip(src) {
                    *d = s.re * scale;
                }
            }
        }
    }

    /// Accumulates both gradients from one spectrum of `dout` per channel:
    /// dk += Σ_c corr(x_c, dout_c), dx_c += dout_c ∗ k.
    pub fn backward(
        &mut self,
        dout: &ArrayView3<T>,
        want_k: Option<&mut ArrayViewMut2<T>>,
        want_x: Option<&mut ArrayViewMut3<T>>,
    ) {
        let (c, _oh, _ow) = dout.dim();
        let scale = T::one() / T::from_usize(self.fh * self.fw).unwrap();
        let zero = Complex::new(T::zero(), T::zero());
        let mut acc_k = if want_k.is_some() {
            Some(vec![zero; self.fh * self.fw])
        } else {
            None
        };
        let mut dx_out = want_x;
        for ch in 0..c {
            Self::pack2(&mut self.work, &dout.index_axis(ndarray::Axis(0), ch), self.fw);
            self.fft.pass(&mut self.work, false);
            if let Some(acc) = acc_k.as_mut() {
                // F(x_c)·conj(F(dout_c)) summed over channels.
                for ((a, xf), df) in acc
                    .iter_mut()
                    .zip(self.freq_x[ch].iter())
                    .zip(self.work.iter())
                {
                    *a += *xf * df.conj();
                }
            }
            if let Some(dx) = dx_out.as_mut() {
                for ((w2, df), kf) in self
                    .work2
                    .iter_mut()
                    .zip(self.work.iter())
                    .zip(self.freq_k.iter())
                {
                    *w2 = *df * *kf;
                }
                self.fft.pass(&mut self.work2, true);
                let mut plane = dx.index_axis_mut(ndarray::Axis(0), ch);
                for (i, mut row) in plane.outer_iter_mut().enumerate() {
                    let src = &self.work2[i * self.fw..i * self.fw + row.len()];
                    for (d, s) in row.iter_mut().zip(src) {
                        *d = *d + s.re * scale;
                    }
                }
            }
        }
        if let (Some(mut acc), Some(dk)) = (acc_k, want_k) {
            self.fft.pass(&mut acc, true);
            for (a, mut row) in dk.outer_iter_mut().enumerate() {
                let src = &acc[a * self.fw..a * self.fw + row.len()];
                for (d, s) in row.iter_mut().zip(src) {
                    *d = *d + s.re * scale;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fft_path_matches_spatial_forward_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(h, w, kh, kw, c) in &[(20usize, 33usize, 7usize, 5usize, 1usize), (37, 21, 9, 13, 3)] {
            let x = Array3::<f64>::from_shape_fn((c, h, w), |_| rng.gen::<f64>());
            let k = Array2::<f64>::from_shape_fn((kh, kw), |_| rng.gen::<f64>());
            let (oh, ow) = (h - kh + 1, w - kw + 1);
            let dout = Array3::<f64>::from_shape_fn((c, oh, ow), |_| rng.gen::<f64>() - 0.5);

            let mut out_spatial = Array3::<f64>::zeros((c, oh, ow));
            super::super::ops::conv_valid_xk(&x.view(), &k.view(), &mut out_spatial.view_mut());
            let mut dk_spatial = Array2::<f64>::zeros((kh, kw));
            super::super::ops::conv_valid_xk_grad_k(
                &x.view(),
                &dout.view(),
                &mut dk_spatial.view_mut(),
            );
            let mut dx_spatial = Array3::<f64>::zeros((c, h, w));
            super::super::ops::conv_valid_xk_grad_x(
                &k.view(),
                &dout.view(),
                &mut dx_spatial.view_mut(),
            );

            let mut state = FftConvState::<f64>::new(c, h, w);
            let mut out_fft = Array3::<f64>::zeros((c, oh, ow));
            state.forward(&x.view(), &k.view(), &mut out_fft.view_mut());
            let mut dk_fft = Array2::<f64>::zeros((kh, kw));
            let mut dx_fft = Array3::<f64>::zeros((c, h, w));
            state.backward(
                &dout.view(),
                Some(&mut dk_fft.view_mut()),
                Some(&mut dx_fft.view_mut()),
            );

            let max_out = out_spatial
                .iter()
                .zip(out_fft.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let max_dk = dk_spatial
                .iter()
                .zip(dk_fft.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let max_dx = dx_spatial
                .iter()
                .zip(dx_fft.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_out < 1e-10, "forward deviation {max_out}");
            assert!(max_dk < 1e-10, "dk deviation {max_dk}");
            assert!(max_dx < 1e-10, "dx deviation {max_dx}");
        }
    }
}
