//! Procedural demo data: piecewise-smooth scenes with sparse gradients and
//! motion-style blur trajectories. Real datasets are loaded from disk; these
//! generators keep the synthetic pipeline and its tests self-contained.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{ImageGrid, Kernel};

/// A deterministic piecewise-smooth grayscale scene: a soft background
/// gradient, overlapping constant-intensity shapes, and a few dark strokes,
/// rendered with 2× supersampling so edges are crisp but not aliased.
pub fn cartoon_scene(height: usize, width: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sh, sw) = (2 * height, 2 * width);
    let mut canvas = Array2::zeros((sh, sw));

    let (gr, gc) = (rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4));
    let base = rng.gen_range(0.25..0.5);
    for ((i, j), v) in canvas.indexed_iter_mut() {
        *v = base + gr * (i as f64 / sh as f64) + gc * (j as f64 / sw as f64);
    }

    #[derive(Clone, Copy)]
    enum Shape {
        Ellipse {
            cy: f64,
            cx: f64,
            ry: f64,
            rx: f64,
            angle: f64,
        },
        Rect {
            top: f64,
            left: f64,
            h: f64,
            w: f64,
        },
    }

    let shapes = 9 + (seed % 3) as usize;
    for _ in 0..shapes {
        let value: f64 = rng.gen_range(0.05..0.95);
        let shape = if rng.gen_bool(0.6) {
            Shape::Ellipse {
                cy: rng.gen_range(0.1..0.9) * sh as f64,
                cx: rng.gen_range(0.1..0.9) * sw as f64,
                ry: rng.gen_range(0.06..0.22) * sh as f64,
                rx: rng.gen_range(0.06..0.22) * sw as f64,
                angle: rng.gen_range(0.0..std::f64::consts::PI),
            }
        } else {
            Shape::Rect {
                top: rng.gen_range(0.05..0.75) * sh as f64,
                left: rng.gen_range(0.05..0.75) * sw as f64,
                h: rng.gen_range(0.08..0.3) * sh as f64,
                w: rng.gen_range(0.08..0.3) * sw as f64,
            }
        };
        for ((i, j), v) in canvas.indexed_iter_mut() {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            let inside = match shape {
                Shape::Ellipse {
                    cy,
                    cx,
                    ry,
                    rx,
                    angle,
                } => {
                    let (dy, dx) = (y - cy, x - cx);
                    let (s, c) = angle.sin_cos();
                    let u = c * dx + s * dy;
                    let w2 = -s * dx + c * dy;
                    (u / rx).powi(2) + (w2 / ry).powi(2) <= 1.0
                }
                Shape::Rect { top, left, h, w } => {
                    y >= top && y <= top + h && x >= left && x <= left + w
                }
            };
            if inside {
                *v = value;
            }
        }
    }

    // A few dark strokes give thin, high-contrast structures.
    for _ in 0..3 {
        let y0 = rng.gen_range(0.1..0.9) * sh as f64;
        let x0 = rng.gen_range(0.1..0.9) * sw as f64;
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let len = rng.gen_range(0.2..0.6) * sh.min(sw) as f64;
        let value = rng.gen_range(0.0..0.15);
        let (s, c) = angle.sin_cos();
        let steps = (2.0 * len) as usize;
        for t in 0..steps {
            let f = t as f64 / 2.0 - len / 2.0;
            let (y, x) = (y0 + f * s, x0 + f * c);
            for dy in 0..2 {
                for dx in 0..2 {
                    let (ii, jj) = (y as isize + dy, x as isize + dx);
                    if ii >= 0 && (ii as usize) < sh && jj >= 0 && (jj as usize) < sw {
                        canvas[[ii as usize, jj as usize]] = value;
                    }
                }
            }
        }
    }

    let mut out = Array3::zeros((height, width, 1));
    for i in 0..height {
        for j in 0..width {
            let mut acc = 0.0;
            for di in 0..2 {
                for dj in 0..2 {
                    acc += canvas[[2 * i + di, 2 * j + dj]];
                }
            }
            out[[i, j, 0]] = (acc / 4.0).clamp(0.0, 1.0);
        }
    }
    ImageGrid::new(out).expect("values clamped into range")
}

/// A motion-style blur trajectory: a smooth random walk splatted bilinearly
/// onto the canvas and lightly smoothed, normalized onto the simplex.
pub fn motion_kernel(size: usize, seed: u64) -> Kernel {
    assert!(size >= 3, "motion kernel needs at least 3x3");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas: Array2<f64> = Array2::zeros((size, size));
    let margin = 1.2;
    let lo = margin;
    let hi = size as f64 - 1.0 - margin;
    let (mut y, mut x) = (size as f64 / 2.0, size as f64 / 2.0);
    let mut theta: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let steps = size * 6;
    for _ in 0..steps {
        theta += rng.gen_range(-0.45..0.45);
        let speed = rng.gen_range(0.25..0.55);
        y += speed * theta.sin();
        x += speed * theta.cos();
        // Reflect off the margins so the support stays inside the canvas.
        if y < lo {
            y = lo + (lo - y);
            theta = -theta;
        }
        if y > hi {
            y = hi - (y - hi);
            theta = -theta;
        }
        if x < lo {
            x = lo + (lo - x);
            theta = std::f64::consts::PI - theta;
        }
        if x > hi {
            x = hi - (x - hi);
            theta = std::f64::consts::PI - theta;
        }
        let (iy, ix) = (y.floor() as usize, x.floor() as usize);
        let (fy, fx) = (y - iy as f64, x - ix as f64);
        canvas[[iy, ix]] += (1.0 - fy) * (1.0 - fx);
        canvas[[iy, ix + 1]] += (1.0 - fy) * fx;
        canvas[[iy + 1, ix]] += fy * (1.0 - fx);
        canvas[[iy + 1, ix + 1]] += fy * fx;
    }
    // Light 3x3 binomial smoothing keeps the trajectory connected.
    let taps = [0.25, 0.5, 0.25];
    let mut smoothed = Array2::zeros((size, size));
    for i in 0..size {
        for j in 0..size {
            let mut acc = 0.0;
            for (di, ti) in taps.iter().enumerate() {
                for (dj, tj) in taps.iter().enumerate() {
                    let ii = i as isize + di as isize - 1;
                    let jj = j as isize + dj as isize - 1;
                    if ii >= 0 && (ii as usize) < size && jj >= 0 && (jj as usize) < size {
                        acc += ti * tj * canvas[[ii as usize, jj as usize]];
                    }
                }
            }
            smoothed[[i, j]] = acc;
        }
    }
    Kernel::from_normalized(smoothed).expect("trajectory has positive mass")
}

/// An isotropic Gaussian blob kernel, the defocus-style baseline.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Kernel {
    let half = (size - 1) as f64 / 2.0;
    let data = Array2::from_shape_fn((size, size), |(i, j)| {
        let d2 = (i as f64 - half).powi(2) + (j as f64 - half).powi(2);
        (-d2 / (2.0 * sigma * sigma)).exp()
    });
    Kernel::from_normalized(data).expect("gaussian has positive mass")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_deterministic_and_structured() {
        let a = cartoon_scene(96, 80, 5);
        let b = cartoon_scene(96, 80, 5);
        assert_eq!(a.data(), b.data());
        assert_ne!(
            a.data(),
            cartoon_scene(96, 80, 6).data(),
            "different seeds differ"
        );
        // Piecewise smooth: plenty of exactly-flat area and some strong edges.
        let g = crate::objective::gradient_field(&a);
        let strong = g.iter().filter(|v| v.abs() > 0.1).count();
        let flat = g.iter().filter(|v| v.abs() < 1e-9).count();
        assert!(strong > 50, "strong edges {strong}");
        assert!(flat > g.len() / 4, "flat fraction {flat} of {}", g.len());
    }

    #[test]
    fn motion_kernel_simplex_and_spread() {
        let k = motion_kernel(13, 7);
        assert_eq!(k.size(), (13, 13));
        assert!((k.data().sum() - 1.0).abs() < 1e-9);
        let nonzero = k.data().iter().filter(|v| **v > 1e-6).count();
        assert!(nonzero > 13, "support {nonzero}");
        let peak = k.data().iter().cloned().fold(0.0f64, f64::max);
        assert!(peak < 0.5, "not a near-delta, peak {peak}");
        assert_eq!(k.data(), motion_kernel(13, 7).data());
    }

    #[test]
    fn gaussian_kernel_centered() {
        let k = gaussian_kernel(9, 1.2);
        let center = k.data()[[4, 4]];
        assert!(k.data().iter().all(|v| *v <= center));
        assert!((k.data().sum() - 1.0).abs() < 1e-12);
    }
}
