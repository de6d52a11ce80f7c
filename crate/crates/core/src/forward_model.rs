//! Truncated linear convolution forward model, size planning, and
//! shift-symmetry utilities.
//!
//! The observation is the valid region of the full linear convolution of an
//! overspecified latent canvas with the blur kernel; the latent canvas
//! absorbs all boundary effects, so no padding is involved anywhere.

use ndarray::{Array2, Array3};

use crate::error::{DeblurError, Result};
use crate::image::{ImageGrid, Kernel};

/// The observation / kernel / latent-canvas size triple.
///
/// Invariants: `x = y + k − 1` per dimension, and `1 ≤ k ≤ y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizingPlan {
    pub y_size: (usize, usize),
    pub k_size: (usize, usize),
    pub x_size: (usize, usize),
}

/// Builds a [`SizingPlan`] from the observation size and an optional kernel
/// size. When the kernel size is unknown it defaults to the ceiling of half
/// the observation size in each dimension.
pub fn plan_sizes(y_size: (usize, usize), k_size: Option<(usize, usize)>) -> Result<SizingPlan> {
    let (n_y, m_y) = y_size;
    if n_y == 0 || m_y == 0 {
        return Err(DeblurError::InvalidSpec(format!(
            "observation size must be positive, got {n_y}x{m_y}"
        )));
    }
    let (n_k, m_k) = match k_size {
        Some((n_k, m_k)) => {
            if n_k == 0 || m_k == 0 {
                return Err(DeblurError::InvalidSpec(format!(
                    "kernel size must be positive, got {n_k}x{m_k}"
                )));
            }
            if n_k > n_y || m_k > m_y {
                return Err(DeblurError::InvalidSpec(format!(
                    "kernel size {n_k}x{m_k} exceeds observation size {n_y}x{m_y}; \
                     the latent image would be under-determined"
                )));
            }
            (n_k, m_k)
        }
        None => (n_y.div_ceil(2), m_y.div_ceil(2)),
    };
    Ok(SizingPlan {
        y_size,
        k_size: (n_k, m_k),
        x_size: (n_y + n_k - 1, m_y + m_k - 1),
    })
}

impl SizingPlan {
    /// Checks that an image/kernel pair matches this plan.
    pub fn check(&self, x: &ImageGrid, k: &Kernel) -> Result<()> {
        if x.size() != self.x_size {
            return Err(DeblurError::Dimension(format!(
                "latent canvas is {:?}, plan expects {:?}",
                x.size(),
                self.x_size
            )));
        }
        if k.size() != self.k_size {
            return Err(DeblurError::Dimension(format!(
                "kernel is {:?}, plan expects {:?}",
                k.size(),
                self.k_size
            )));
        }
        Ok(())
    }
}

/// The valid-region truncated convolution: `out(i,j,c) = Σ k(a,b)·x(i+a,j+b,c)`.
///
/// `x` must be sized `y + k − 1` so that exactly the observation-sized valid
/// region survives. `k(0,0)` aligns with the top-left of each receptive
/// window; all channels share the one kernel.
pub fn convolve_truncated(x: &ImageGrid, k: &Kernel) -> Result<ImageGrid> {
    let (n_x, m_x) = x.size();
    let (n_k, m_k) = k.size();
    if n_x < n_k || m_x < m_k {
        return Err(DeblurError::Dimension(format!(
            "latent canvas {n_x}x{m_x} smaller than kernel {n_k}x{m_k}"
        )));
    }
    let (n_y, m_y) = (n_x - n_k + 1, m_x - m_k + 1);
    let c = x.channels();
    let mut out = Array3::zeros((n_y, m_y, c));
    let xd = x.data();
    let kd = k.data();
    for ch in 0..c {
        for i in 0..n_y {
            for j in 0..m_y {
                let mut acc = 0.0;
                for a in 0..n_k {
                    for b in 0..m_k {
                        acc += kd[[a, b]] * xd[[i + a, j + b, ch]];
                    }
                }
                out[[i, j, ch]] = acc;
            }
        }
    }
    // Simplex kernel and unit-interval image keep the result in [0, 1] up to
    // roundoff, which clipping removes.
    ImageGrid::from_clipped(out)
}

/// Full linear convolution of a single channel with a kernel,
/// sized `(n_x + n_k − 1) × (m_x + m_k − 1)`.
pub fn convolve_full_2d(x: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
    let (n_x, m_x) = x.dim();
    let (n_k, m_k) = k.dim();
    let mut out = Array2::zeros((n_x + n_k - 1, m_x + m_k - 1));
    for i in 0..n_x {
        for j in 0..m_x {
            for a in 0..n_k {
                for b in 0..m_k {
                    out[[i + a, j + b]] += x[[i, j]] * k[[a, b]];
                }
            }
        }
    }
    out
}

/// Central truncation of the full convolution to `out_size`, the window a
/// finite sensor observes. Truncation offset is the floor of half the excess
/// per dimension; with `x = y + k − 1` this reduces to the valid region.
pub fn convolve_truncated_to(
    x: &Array2<f64>,
    k: &Array2<f64>,
    out_size: (usize, usize),
) -> Result<Array2<f64>> {
    let full = convolve_full_2d(x, k);
    let (n_f, m_f) = full.dim();
    let (n_y, m_y) = out_size;
    if n_y > n_f || m_y > m_f {
        return Err(DeblurError::Dimension(format!(
            "requested window {n_y}x{m_y} exceeds full convolution {n_f}x{m_f}"
        )));
    }
    let off_r = (n_f - n_y) / 2;
    let off_c = (m_f - m_y) / 2;
    Ok(full
        .slice(ndarray::s![off_r..off_r + n_y, off_c..off_c + m_y])
        .to_owned())
}

/// The 1-D convolution matrix `M` with `truncate(k ∗ x) = M·k` for a signal
/// `x` of length `n_x`, kernel length `n_k`, and window length `n_y`:
/// `M[i][j] = x[i − j + offset]` (zero outside the signal), where `offset`
/// is the central-truncation offset.
pub fn convolution_matrix_1d(x: &[f64], n_k: usize, n_y: usize) -> Result<Array2<f64>> {
    let n_x = x.len();
    if n_k == 0 || n_x == 0 {
        return Err(DeblurError::Dimension("empty signal or kernel".into()));
    }
    let n_full = n_x + n_k - 1;
    if n_y > n_full {
        return Err(DeblurError::Dimension(format!(
            "window {n_y} exceeds full convolution length {n_full}"
        )));
    }
    let offset = (n_full - n_y) / 2;
    let mut m = Array2::zeros((n_y, n_k));
    for i in 0..n_y {
        for j in 0..n_k {
            let idx = i as isize - j as isize + offset as isize;
            if (0..n_x as isize).contains(&idx) {
                m[[i, j]] = x[idx as usize];
            }
        }
    }
    Ok(m)
}

fn nonzero_bounds_2d(data: &Array2<f64>) -> Option<(usize, usize, usize, usize)> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for ((i, j), v) in data.indexed_iter() {
        if *v != 0.0 {
            bounds = Some(match bounds {
                None => (i, i, j, j),
                Some((r0, r1, c0, c1)) => (r0.min(i), r1.max(i), c0.min(j), c1.max(j)),
            });
        }
    }
    bounds
}

fn nonzero_bounds_3d(data: &Array3<f64>) -> Option<(usize, usize, usize, usize)> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for ((i, j, _), v) in data.indexed_iter() {
        if *v != 0.0 {
            bounds = Some(match bounds {
                None => (i, i, j, j),
                Some((r0, r1, c0, c1)) => (r0.min(i), r1.max(i), c0.min(j), c1.max(j)),
            });
        }
    }
    bounds
}

fn shift_fits(
    bounds: Option<(usize, usize, usize, usize)>,
    size: (usize, usize),
    shift: (isize, isize),
) -> bool {
    match bounds {
        None => true,
        Some((r0, r1, c0, c1)) => {
            let (h, w) = (size.0 as isize, size.1 as isize);
            let (dr, dc) = shift;
            r0 as isize + dr >= 0
                && r1 as isize + dr < h
                && c0 as isize + dc >= 0
                && c1 as isize + dc < w
        }
    }
}

fn shifted_2d(data: &Array2<f64>, shift: (isize, isize)) -> Array2<f64> {
    let (h, w) = data.dim();
    let mut out = Array2::zeros((h, w));
    for ((i, j), v) in data.indexed_iter() {
        if *v != 0.0 {
            let r = i as isize + shift.0;
            let c = j as isize + shift.1;
            out[[r as usize, c as usize]] = *v;
        }
    }
    out
}

fn shifted_3d(data: &Array3<f64>, shift: (isize, isize)) -> Array3<f64> {
    let (h, w, ch) = data.dim();
    let mut out = Array3::zeros((h, w, ch));
    for ((i, j, c), v) in data.indexed_iter() {
        if *v != 0.0 {
            let r = i as isize + shift.0;
            let cc = j as isize + shift.1;
            out[[r as usize, cc as usize, c]] = *v;
        }
    }
    out
}

/// Applies the bounded-shift symmetry of the truncated convolution: image
/// content moves by `+shift` and the kernel content is realigned so the
/// observation is unchanged, with vacated positions zero-filled.
///
/// In the stored index convention (`k(0,0)` at the top-left of each
/// receptive window) the preserving realignment translates the kernel array
/// by `+shift` as well; read in the flipped frame of true convolution this
/// is the kernel moving opposite to the image. Errors if either shift would
/// push nonzero content off its canvas.
pub fn shift_pair(k: &Kernel, x: &ImageGrid, shift: (isize, isize)) -> Result<(Kernel, ImageGrid)> {
    if !shift_fits(nonzero_bounds_2d(k.data()), k.size(), shift) {
        return Err(DeblurError::OutOfSupport(format!(
            "kernel content cannot shift by ({}, {})",
            shift.0, shift.1
        )));
    }
    if !shift_fits(nonzero_bounds_3d(x.data()), x.size(), shift) {
        return Err(DeblurError::OutOfSupport(format!(
            "image content cannot shift by ({}, {})",
            shift.0, shift.1
        )));
    }
    let k_shifted = Kernel::new(shifted_2d(k.data(), shift))?;
    let x_shifted = ImageGrid::new(shifted_3d(x.data(), shift))?;
    Ok((k_shifted, x_shifted))
}
