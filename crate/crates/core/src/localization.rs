//! Resolving the bounded shift ambiguity: find the observation-sized window
//! of the recovered canvas that best matches the degraded observation under
//! SSIM, and realign the kernel by the opposite displacement.

use ndarray::Array2;

use crate::error::{DeblurError, Result};
use crate::image::{ImageGrid, Kernel};

/// SSIM configuration: 11×11 Gaussian window (std 1.5), stability constants
/// K1 = 0.01 and K2 = 0.03, dynamic range 1.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// The chosen window's top-left offset within the canvas and its SSIM score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub offset: (usize, usize),
    pub score: f64,
}

fn gaussian_taps(len: usize, sigma: f64) -> Vec<f64> {
    let half = (len - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable valid-mode filtering: rows then columns.
fn filter_valid(input: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = input.dim();
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = Array2::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, tap) in taps.iter().enumerate() {
                acc += tap * input[[i, j + t]];
            }
            rows[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, tap) in taps.iter().enumerate() {
                acc += tap * rows[[i + t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

struct PlaneStats {
    mu: Array2<f64>,
    raw_sq: Array2<f64>,
}

fn plane_stats(plane: &Array2<f64>, taps: &[f64]) -> PlaneStats {
    let mu = filter_valid(plane, taps);
    let raw_sq = filter_valid(&plane.mapv(|v| v * v), taps);
    PlaneStats { mu, raw_sq }
}

/// Mean SSIM between two equally-shaped planes given their precomputed
/// local statistics and the filtered cross product.
fn ssim_from_stats(a: &PlaneStats, b: &PlaneStats, cross_raw: &Array2<f64>) -> f64 {
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    let n = cross_raw.len() as f64;
    for ((ma, mb), (qa, (qb, cr))) in a.mu.iter().zip(b.mu.iter()).zip(
        a.raw_sq
            .iter()
            .zip(b.raw_sq.iter().zip(cross_raw.iter())),
    ) {
        let var_a = qa - ma * ma;
        let var_b = qb - mb * mb;
        let cov = cr - ma * mb;
        let value = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        total += value;
    }
    total / n
}

fn ssim_plane(a: &Array2<f64>, b: &Array2<f64>, taps: &[f64]) -> f64 {
    let sa = plane_stats(a, taps);
    let sb = plane_stats(b, taps);
    let cross = filter_valid(&(a * b), taps);
    ssim_from_stats(&sa, &sb, &cross)
}

fn effective_window(size: (usize, usize)) -> usize {
    let limit = size.0.min(size.1);
    let mut len = SSIM_WINDOW.min(limit);
    if len % 2 == 0 {
        len -= 1;
    }
    len.max(1)
}

/// Mean structural similarity between two equally-shaped images, averaged
/// over channels. Images smaller than the standard window shrink it to the
/// largest odd size that fits.
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    if a.size() != b.size() || a.channels() != b.channels() {
        return Err(DeblurError::Dimension(format!(
            "ssim inputs differ: {:?}x{} vs {:?}x{}",
            a.size(),
            a.channels(),
            b.size(),
            b.channels()
        )));
    }
    let taps = gaussian_taps(effective_window(a.size()), SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..a.channels() {
        total += ssim_plane(&a.channel(c).to_owned(), &b.channel(c).to_owned(), &taps);
    }
    Ok(total / a.channels() as f64)
}

/// Scans every stride-1 window of the canvas with the observation as the
/// template and returns the SSIM-argmax crop with its placement. Ties break
/// toward the smallest row, then column.
///
/// Canvas-side local statistics are filtered once over the whole canvas;
/// only the template-window cross products are recomputed per offset.
pub fn locate_image(canvas: &ImageGrid, y: &ImageGrid) -> Result<(ImageGrid, Placement)> {
    let (ch, cw) = canvas.size();
    let (th, tw) = y.size();
    if ch < th || cw < tw {
        return Err(DeblurError::Dimension(format!(
            "canvas {ch}x{cw} smaller than template {th}x{tw}"
        )));
    }
    if canvas.channels() != y.channels() {
        return Err(DeblurError::Dimension(
            "canvas and template channel counts differ".into(),
        ));
    }
    let taps = gaussian_taps(effective_window((th, tw)), SSIM_SIGMA);
    let channels = canvas.channels();

    // Whole-canvas filtered moments; window stats are crops of these.
    let mut canvas_stats = Vec::with_capacity(channels);
    let mut template_stats = Vec::with_capacity(channels);
    let mut template_planes = Vec::with_capacity(channels);
    let mut canvas_planes = Vec::with_capacity(channels);
    for c in 0..channels {
        let cp = canvas.channel(c).to_owned();
        canvas_stats.push(plane_stats(&cp, &taps));
        canvas_planes.push(cp);
        let tp = y.channel(c).to_owned();
        template_stats.push(plane_stats(&tp, &taps));
        template_planes.push(tp);
    }

    let k = taps.len();
    let (vh, vw) = (th - k + 1, tw - k + 1);
    let mut best: Option<Placement> = None;
    let mut cross = Array2::zeros((th, tw));
    for dr in 0..=(ch - th) {
        for dc in 0..=(cw - tw) {
            let mut score = 0.0;
            for c in 0..channels {
                let window = canvas_planes[c].slice(ndarray::s![dr..dr + th, dc..dc + tw]);
                for i in 0..th {
                    for j in 0..tw {
                        cross[[i, j]] = template_planes[c][[i, j]] * window[[i, j]];
                    }
                }
                let cross_f = filter_valid(&cross, &taps);
                let window_stats = PlaneStats {
                    mu: canvas_stats[c]
                        .mu
                        .slice(ndarray::s![dr..dr + vh, dc..dc + vw])
                        .to_owned(),
                    raw_sq: canvas_stats[c]
                        .raw_sq
                        .slice(ndarray::s![dr..dr + vh, dc..dc + vw])
                        .to_owned(),
                };
                score += ssim_from_stats(&template_stats[c], &window_stats, &cross_f);
            }
            score /= channels as f64;
            let better = match best {
                None => true,
                Some(b) => score > b.score,
            };
            if better {
                best = Some(Placement {
                    offset: (dr, dc),
                    score,
                });
            }
        }
    }
    let placement = best.expect("at least one window");
    let (dr, dc) = placement.offset;
    let crop = canvas
        .data()
        .slice(ndarray::s![dr..dr + th, dc..dc + tw, ..])
        .to_owned();
    Ok((ImageGrid::new(crop)?, placement))
}

/// Centered placement of an observation-sized window in the canvas
/// (floor rounding), the reference point for kernel realignment.
pub fn centered_offset(canvas: (usize, usize), window: (usize, usize)) -> (usize, usize) {
    ((canvas.0 - window.0) / 2, (canvas.1 - window.1) / 2)
}

/// Realigns the kernel by the negative of the image content's displacement
/// from the centered placement, zero-filling vacated entries and
/// renormalizing if clipping removed mass.
pub fn locate_kernel(
    kernel: &Kernel,
    placement: &Placement,
    canvas_size: (usize, usize),
    y_size: (usize, usize),
) -> Result<Kernel> {
    let center = centered_offset(canvas_size, y_size);
    let shift = (
        -(placement.offset.0 as isize - center.0 as isize),
        -(placement.offset.1 as isize - center.1 as isize),
    );
    let (kh, kw) = kernel.size();
    let mut shifted = Array2::zeros((kh, kw));
    for ((i, j), v) in kernel.data().indexed_iter() {
        if *v == 0.0 {
            continue;
        }
        let r = i as isize + shift.0;
        let c = j as isize + shift.1;
        if r >= 0 && (r as usize) < kh && c >= 0 && (c as usize) < kw {
            shifted[[r as usize, c as usize]] = *v;
        }
    }
    Kernel::from_normalized(shifted).map_err(|_| {
        DeblurError::OutOfSupport("kernel mass entirely clipped during realignment".into())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_model::shift_pair;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageGrid {
        ImageGrid::new(Array3::from_shape_fn((h, w, 1), |_| rng.gen::<f64>())).unwrap()
    }

    #[test]
    fn ssim_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 24, 30);
        let s = ssim(&a, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "ssim {s}");
    }

    #[test]
    fn ssim_inverted_checkerboard_negative() {
        // 2x2-block checkerboard against its inversion: means cancel and the
        // covariance is negative, so SSIM dips below zero.
        let mut data = Array3::zeros((16, 16, 1));
        for ((i, j, _), v) in data.indexed_iter_mut() {
            *v = if ((i / 2) + (j / 2)) % 2 == 0 { 1.0 } else { 0.0 };
        }
        let a = ImageGrid::new(data).unwrap();
        let inverted = ImageGrid::new(a.data().mapv(|v| 1.0 - v)).unwrap();
        let s = ssim(&a, &inverted).unwrap();
        assert!(s < 0.0, "ssim {s}");
    }

    #[test]
    fn ssim_constant_pair_is_luminance_term() {
        let a = ImageGrid::constant(12, 12, 1, 0.25).unwrap();
        let b = ImageGrid::constant(12, 12, 1, 0.75).unwrap();
        let c1 = (SSIM_K1 * 1.0f64).powi(2);
        let want = (2.0 * 0.25 * 0.75 + c1) / (0.25f64.powi(2) + 0.75f64.powi(2) + c1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn ssim_shape_mismatch() {
        let a = ImageGrid::constant(4, 4, 1, 0.5).unwrap();
        let b = ImageGrid::constant(4, 5, 1, 0.5).unwrap();
        assert!(matches!(ssim(&a, &b), Err(DeblurError::Dimension(_))));
    }

    fn embed(y: &ImageGrid, canvas: (usize, usize), at: (usize, usize)) -> ImageGrid {
        let mut data = Array3::zeros((canvas.0, canvas.1, y.channels()));
        for ((i, j, c), v) in y.data().indexed_iter() {
            data[[i + at.0, j + at.1, c]] = *v;
        }
        ImageGrid::new(data).unwrap()
    }

    #[test]
    fn exact_embedding_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_image(&mut rng, 20, 22);
        let canvas = embed(&y, (33, 35), (7, 3));
        let (crop, placement) = locate_image(&canvas, &y).unwrap();
        assert_eq!(placement.offset, (7, 3));
        assert!(placement.score >= 1.0 - 1e-9);
        assert_eq!(crop.data(), y.data());
    }

    #[test]
    fn equal_sizes_force_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_image(&mut rng, 16, 16);
        let (_, placement) = locate_image(&y, &y).unwrap();
        assert_eq!(placement.offset, (0, 0));
        assert!(placement.score >= 1.0 - 1e-12);
    }

    #[test]
    fn exact_copy_beats_dimmed_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random_image(&mut rng, 14, 14);
        let mut canvas = embed(&y, (48, 48), (7, 3)).into_data();
        for ((i, j, c), v) in y.data().indexed_iter() {
            canvas[[i + 20, j + 20, c]] = 0.5 * *v;
        }
        let canvas = ImageGrid::new(canvas).unwrap();
        let (_, placement) = locate_image(&canvas, &y).unwrap();
        assert_eq!(placement.offset, (7, 3));
    }

    #[test]
    fn translation_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_image(&mut rng, 12, 12);
        for delta in [(0, 0), (1, 2), (5, 0), (9, 9)] {
            let canvas = embed(&y, (24, 24), delta);
            let (_, placement) = locate_image(&canvas, &y).unwrap();
            assert_eq!(placement.offset, delta);
        }
    }

    #[test]
    fn kernel_round_trip_through_shift() {
        // Build a centered pair, displace it with shift_pair, then undo the
        // displacement from the recovered placement.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut kdata = Array2::zeros((9, 9));
        for i in 3..6 {
            for j in 3..6 {
                kdata[[i, j]] = rng.gen::<f64>() + 0.2;
            }
        }
        let kernel = Kernel::from_normalized(kdata).unwrap();

        let y_size = (14, 14);
        let canvas_size = (y_size.0 + 9 - 1, y_size.1 + 9 - 1);
        let mut xdata = Array3::zeros((canvas_size.0, canvas_size.1, 1));
        let center = centered_offset(canvas_size, y_size);
        for i in 0..y_size.0 {
            for j in 0..y_size.1 {
                xdata[[i + center.0, j + center.1, 0]] = rng.gen::<f64>();
            }
        }
        let x = ImageGrid::new(xdata).unwrap();

        for shift in [(1isize, 2isize), (-2, 1), (2, -2)] {
            let (k_shifted, x_shifted) = shift_pair(&kernel, &x, shift).unwrap();
            // The observation template is the centered window of the
            // unshifted x; the shifted canvas holds it at center + shift.
            let template = ImageGrid::new(
                x.data()
                    .slice(ndarray::s![
                        center.0..center.0 + y_size.0,
                        center.1..center.1 + y_size.1,
                        ..
                    ])
                    .to_owned(),
            )
            .unwrap();
            let (_, placement) = locate_image(&x_shifted, &template).unwrap();
            let expected_offset = (
                (center.0 as isize + shift.0) as usize,
                (center.1 as isize + shift.1) as usize,
            );
            assert_eq!(placement.offset, expected_offset);
            let recovered =
                locate_kernel(&k_shifted, &placement, canvas_size, y_size).unwrap();
            for (a, b) in recovered.data().iter().zip(kernel.data().iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn centered_placement_keeps_kernel() {
        let kernel = Kernel::delta(7, 7, 3, 3).unwrap();
        let placement = Placement {
            offset: centered_offset((20, 20), (14, 14)),
            score: 1.0,
        };
        let out = locate_kernel(&kernel, &placement, (20, 20), (14, 14)).unwrap();
        assert_eq!(out.data(), kernel.data());
    }

    #[test]
    fn clipped_mass_renormalizes() {
        let mut kdata = Array2::zeros((5, 5));
        kdata[[0, 0]] = 0.5;
        kdata[[2, 2]] = 0.5;
        let kernel = Kernel::new(kdata).unwrap();
        // Displacement of +2 rows: kernel realigns by −2, pushing the corner
        // entry off canvas; the survivor renormalizes to mass one.
        let center = centered_offset((20, 20), (10, 10));
        let placement = Placement {
            offset: (center.0 + 2, center.1 + 2),
            score: 1.0,
        };
        let out = locate_kernel(&kernel, &placement, (20, 20), (10, 10)).unwrap();
        assert!((out.data().sum() - 1.0).abs() < 1e-12);
        assert_eq!(out.data()[[0, 0]], 1.0);
    }
}
