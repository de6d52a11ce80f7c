//! Core array types: intensity grids and blur kernels.

use ndarray::{Array2, Array3};

use crate::error::{DeblurError, Result};

/// Tolerance for the kernel simplex invariant (entries sum to one).
pub const KERNEL_SUM_TOL: f64 = 1e-6;

/// An H×W×C grid of intensities in `[0, 1]`.
///
/// Carries observations, latent estimates, and groundtruth alike. Channel
/// count is 1 (grayscale) or 3 (RGB). Intermediate arithmetic may leave the
/// unit interval; anything exposed as an `ImageGrid` must be back inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    data: Array3<f64>,
}

impl ImageGrid {
    /// Wraps an H×W×C array, validating the invariants.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 {
            return Err(DeblurError::Dimension(format!(
                "image must be non-empty, got {h}x{w}"
            )));
        }
        if c != 1 && c != 3 {
            return Err(DeblurError::UnsupportedChannels(format!(
                "expected 1 or 3 channels, got {c}"
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(DeblurError::Parameter(
                "image entries must be finite and in [0, 1]".into(),
            ));
        }
        Ok(Self { data })
    }

    /// Builds a constant-valued grid.
    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, channels), value))
    }

    /// Wraps raw data, clipping every entry into `[0, 1]`.
    pub fn from_clipped(mut data: Array3<f64>) -> Result<Self> {
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(data)
    }

    /// Grayscale grid from a 2-D array.
    pub fn from_gray(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        Self::new(data.into_shape((h, w, 1)).expect("same element count"))
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// (height, width) pair.
    pub fn size(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Consumes the grid, returning the raw array.
    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// View of one channel as a 2-D array.
    pub fn channel(&self, c: usize) -> ndarray::ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(2), c)
    }

    /// Luminance conversion with Rec. 601 weights; identity for grayscale.
    pub fn to_luma(&self) -> Array2<f64> {
        let (h, w, c) = self.data.dim();
        if c == 1 {
            return self.channel(0).to_owned();
        }
        let mut out = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                out[[i, j]] = 0.299 * self.data[[i, j, 0]]
                    + 0.587 * self.data[[i, j, 1]]
                    + 0.114 * self.data[[i, j, 2]];
            }
        }
        out
    }
}

/// An h×w point-spread function on the unit simplex: entries are
/// nonnegative and sum to one within [`KERNEL_SUM_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    data: Array2<f64>,
}

impl Kernel {
    /// Wraps an array already satisfying the simplex invariants.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(DeblurError::Dimension(format!(
                "kernel must be non-empty, got {h}x{w}"
            )));
        }
        if !data.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(DeblurError::Parameter(
                "kernel entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = data.sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOL {
            return Err(DeblurError::Parameter(format!(
                "kernel entries must sum to 1 within {KERNEL_SUM_TOL}, got {sum}"
            )));
        }
        Ok(Self { data })
    }

    /// Wraps nonnegative data, rescaling so the entries sum to one.
    pub fn from_normalized(data: Array2<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(DeblurError::Parameter(
                "kernel entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = data.sum();
        if sum <= 0.0 {
            return Err(DeblurError::Parameter(
                "kernel must have positive mass".into(),
            ));
        }
        Self::new(data / sum)
    }

    /// Delta kernel: all mass at `(row, col)` of an h×w canvas.
    pub fn delta(height: usize, width: usize, row: usize, col: usize) -> Result<Self> {
        if row >= height || col >= width {
            return Err(DeblurError::Dimension(format!(
                "delta position ({row},{col}) outside {height}x{width} canvas"
            )));
        }
        let mut data = Array2::zeros((height, width));
        data[[row, col]] = 1.0;
        Self::new(data)
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn size(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn image_rejects_bad_channels() {
        let data = Array3::zeros((4, 4, 2));
        assert!(matches!(
            ImageGrid::new(data),
            Err(DeblurError::UnsupportedChannels(_))
        ));
    }

    #[test]
    fn image_rejects_out_of_range() {
        let mut data = Array3::zeros((2, 2, 1));
        data[[0, 0, 0]] = 1.5;
        assert!(ImageGrid::new(data.clone()).is_err());
        let clipped = ImageGrid::from_clipped(data).unwrap();
        assert_eq!(clipped.data()[[0, 0, 0]], 1.0);
    }

    #[test]
    fn kernel_simplex_enforced() {
        let data = array![[0.5, 0.6]];
        assert!(Kernel::new(data.clone()).is_err());
        let k = Kernel::from_normalized(data).unwrap();
        assert!((k.data().sum() - 1.0).abs() < KERNEL_SUM_TOL);
    }

    #[test]
    fn delta_kernel_has_unit_mass() {
        let k = Kernel::delta(5, 5, 2, 3).unwrap();
        assert_eq!(k.data()[[2, 3]], 1.0);
        assert_eq!(k.data().sum(), 1.0);
    }

    #[test]
    fn luma_weights() {
        let mut data = Array3::zeros((1, 1, 3));
        data[[0, 0, 0]] = 1.0;
        let img = ImageGrid::new(data).unwrap();
        assert!((img.to_luma()[[0, 0]] - 0.299).abs() < 1e-12);
    }
}
