//! Self-supervised blind image deblurring with unknown kernel size.
//!
//! The toolkit recovers a sharp image and blur kernel from one blurry,
//! noisy observation by jointly training an untrained convolutional image
//! generator and a sinusoidal kernel field against a truncated-convolution
//! forward model, with windowed-moving-variance early stopping and
//! sliding-window localization of the recovered content.

pub mod degradation;
pub mod generators;
pub mod checkpoint;
pub mod error;
pub mod forward_model;
pub mod image;
pub mod io;
pub mod localization;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod solver;
pub mod synthdata;

pub use error::{DeblurError, Result};
pub use image::{ImageGrid, Kernel};
