//! File formats: 8/16-bit PNG images, exact-value kernel CSVs, synthesized
//! case directories, trace CSVs.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::degradation::NoiseSpec;
use crate::error::{DeblurError, Result};
use crate::image::{ImageGrid, Kernel};
use crate::solver::RunTrace;

fn io_err(path: &Path, source: std::io::Error) -> DeblurError {
    DeblurError::io(path.display().to_string(), source)
}

fn codec_err(path: &Path, err: image::ImageError) -> DeblurError {
    DeblurError::Codec {
        path: path.display().to_string(),
        message: err.to_string(),
    }
}

/// Reads an 8- or 16-bit PNG (or any format the codec recognizes) into an
/// intensity grid; color images load as RGB, grayscale as one channel.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|e| codec_err(path, e))?;
    let grid = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Array3::from_shape_fn((h as usize, w as usize, 1), |(i, j, _)| {
                buf.get_pixel(j as u32, i as u32).0[0] as f64 / 255.0
            })
        }
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Array3::from_shape_fn((h as usize, w as usize, 1), |(i, j, _)| {
                buf.get_pixel(j as u32, i as u32).0[0] as f64 / 65535.0
            })
        }
        other => {
            if other.color().has_color() {
                let buf = other.to_rgb16();
                let (w, h) = buf.dimensions();
                Array3::from_shape_fn((h as usize, w as usize, 3), |(i, j, c)| {
                    buf.get_pixel(j as u32, i as u32).0[c] as f64 / 65535.0
                })
            } else {
                let buf = other.to_luma16();
                let (w, h) = buf.dimensions();
                Array3::from_shape_fn((h as usize, w as usize, 1), |(i, j, _)| {
                    buf.get_pixel(j as u32, i as u32).0[0] as f64 / 65535.0
                })
            }
        }
    };
    ImageGrid::new(grid)
}

/// Writes a 16-bit PNG (the default precision for synthesized data).
pub fn write_image(path: &Path, image: &ImageGrid) -> Result<()> {
    let (h, w) = image.size();
    let quantize = |v: f64| (v * 65535.0).round().clamp(0.0, 65535.0) as u16;
    match image.channels() {
        1 => {
            let buf = image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([quantize(image.data()[[y as usize, x as usize, 0]])])
            });
            image::DynamicImage::ImageLuma16(buf)
                .save(path)
                .map_err(|e| codec_err(path, e))
        }
        _ => {
            let buf = image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                image::Rgb([
                    quantize(image.data()[[y as usize, x as usize, 0]]),
                    quantize(image.data()[[y as usize, x as usize, 1]]),
                    quantize(image.data()[[y as usize, x as usize, 2]]),
                ])
            });
            image::DynamicImage::ImageRgb16(buf)
                .save(path)
                .map_err(|e| codec_err(path, e))
        }
    }
}

/// Writes an 8-bit PNG, for display artifacts.
pub fn write_image_8bit(path: &Path, image: &ImageGrid) -> Result<()> {
    let (h, w) = image.size();
    let quantize = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    match image.channels() {
        1 => {
            let buf = image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([quantize(image.data()[[y as usize, x as usize, 0]])])
            });
            buf.save(path).map_err(|e| codec_err(path, e))
        }
        _ => {
            let buf = image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                image::Rgb([
                    quantize(image.data()[[y as usize, x as usize, 0]]),
                    quantize(image.data()[[y as usize, x as usize, 1]]),
                    quantize(image.data()[[y as usize, x as usize, 2]]),
                ])
            });
            buf.save(path).map_err(|e| codec_err(path, e))
        }
    }
}

/// Writes the kernel as a max-normalized 8-bit PNG, for display only; exact
/// values belong in the CSV.
pub fn write_kernel_png(path: &Path, kernel: &Kernel) -> Result<()> {
    let max = kernel.data().iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
    let display = ImageGrid::from_clipped(
        kernel
            .data()
            .mapv(|v| v * scale)
            .insert_axis(ndarray::Axis(2)),
    )?;
    write_image_8bit(path, &display)
}

/// Writes exact kernel values, one CSV row per kernel row.
pub fn write_kernel_csv(path: &Path, kernel: &Kernel) -> Result<()> {
    let mut out = String::new();
    for i in 0..kernel.height() {
        let row: Vec<String> = (0..kernel.width())
            .map(|j| format!("{:.17e}", kernel.data()[[i, j]]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a kernel CSV written by [`write_kernel_csv`] (normalizing to the
/// simplex to absorb text-format roundoff).
pub fn read_kernel_csv(path: &Path) -> Result<Kernel> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| DeblurError::Parse {
            path: path.display().to_string(),
            message: format!("line {}: {e}", line_no + 1),
        })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(DeblurError::Parse {
                    path: path.display().to_string(),
                    message: format!("ragged row at line {}", line_no + 1),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DeblurError::Parse {
            path: path.display().to_string(),
            message: "empty kernel file".into(),
        });
    }
    let (h, w) = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let data = Array2::from_shape_vec((h, w), flat).expect("checked shape");
    Kernel::from_normalized(data)
}

/// Metadata stored beside each synthesized case.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaseSpec {
    pub schema_version: u32,
    pub noise: NoiseSpec,
    pub clean_size: (usize, usize),
    pub kernel_size: (usize, usize),
    pub observation_size: (usize, usize),
    /// Top-left offset of the observation-aligned groundtruth crop inside
    /// the clean image (the kernel's center position, floor convention).
    pub groundtruth_offset: (usize, usize),
}

pub const CASE_SCHEMA_VERSION: u32 = 1;

/// One synthesized case on disk.
#[derive(Debug, Clone)]
pub struct Case {
    pub clean: ImageGrid,
    pub kernel: Kernel,
    pub blurry: ImageGrid,
    pub spec: CaseSpec,
}

impl Case {
    /// The clean crop geometrically aligned with the observation.
    pub fn groundtruth_crop(&self) -> ImageGrid {
        let (r, c) = self.spec.groundtruth_offset;
        let (h, w) = self.spec.observation_size;
        ImageGrid::new(
            self.clean
                .data()
                .slice(ndarray::s![r..r + h, c..c + w, ..])
                .to_owned(),
        )
        .expect("crop of a valid image")
    }
}

/// Writes the case layout: `clean.png`, `kernel.png` (display),
/// `kernel.csv` (exact), `blurry.png`, `spec.json`.
pub fn write_case(dir: &Path, case: &Case) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_image(&dir.join("clean.png"), &case.clean)?;
    write_kernel_png(&dir.join("kernel.png"), &case.kernel)?;
    write_kernel_csv(&dir.join("kernel.csv"), &case.kernel)?;
    write_image(&dir.join("blurry.png"), &case.blurry)?;
    let spec_path = dir.join("spec.json");
    let json = serde_json::to_string_pretty(&case.spec).expect("serializable spec");
    std::fs::write(&spec_path, json).map_err(|e| io_err(&spec_path, e))
}

/// Loads a case directory written by [`write_case`].
pub fn read_case(dir: &Path) -> Result<Case> {
    let spec_path = dir.join("spec.json");
    let text = std::fs::read_to_string(&spec_path).map_err(|e| io_err(&spec_path, e))?;
    let spec: CaseSpec = serde_json::from_str(&text).map_err(|e| DeblurError::Parse {
        path: spec_path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(Case {
        clean: read_image(&dir.join("clean.png"))?,
        kernel: read_kernel_csv(&dir.join("kernel.csv"))?,
        blurry: read_image(&dir.join("blurry.png"))?,
        spec,
    })
}

/// Writes the run trace as CSV: `iter,objective,lr_x,lr_k,wmv,psnr`.
pub fn write_trace_csv(path: &Path, trace: &RunTrace) -> Result<()> {
    let mut out = String::from("iter,objective,lr_x,lr_k,wmv,psnr\n");
    for row in &trace.rows {
        let wmv = row
            .windowed_variance
            .map(|v| format!("{v:.9e}"))
            .unwrap_or_default();
        let psnr = row
            .groundtruth_psnr
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:.9e},{:.3e},{:.3e},{},{}\n",
            row.iter, row.objective, row.lr_image, row.lr_kernel, wmv, psnr
        ));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Directory loader for groundtruth datasets laid out per-kernel
/// (`<root>/<image>.png` plus `<root>/kernels/<id>.csv` style layouts are
/// left to the caller); this simply lists PNGs by stem.
pub fn list_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::synthesize_case;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("deblur_io_tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn png_round_trip_16bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = ImageGrid::new(Array3::from_shape_fn((9, 7, 3), |_| rng.gen::<f64>())).unwrap();
        let path = tmp("rt16.png");
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.size(), img.size());
        assert_eq!(back.channels(), 3);
        let worst = img
            .data()
            .iter()
            .zip(back.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst <= 0.5 / 65535.0 + 1e-12, "error {worst}");
    }

    #[test]
    fn kernel_csv_round_trip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = Array2::from_shape_fn((5, 7), |_| rng.gen::<f64>() + 0.01);
        let kernel = Kernel::from_normalized(data).unwrap();
        let path = tmp("kernel.csv");
        write_kernel_csv(&path, &kernel).unwrap();
        let back = read_kernel_csv(&path).unwrap();
        let worst = kernel
            .data()
            .iter()
            .zip(back.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-15, "error {worst}");
    }

    #[test]
    fn case_layout_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean =
            ImageGrid::new(Array3::from_shape_fn((20, 18, 1), |_| rng.gen::<f64>())).unwrap();
        let kernel = Kernel::delta(3, 3, 1, 1).unwrap();
        let blurry = synthesize_case(&clean, &kernel, &NoiseSpec::none()).unwrap();
        let case = Case {
            spec: CaseSpec {
                schema_version: CASE_SCHEMA_VERSION,
                noise: NoiseSpec::none(),
                clean_size: clean.size(),
                kernel_size: kernel.size(),
                observation_size: blurry.size(),
                groundtruth_offset: (1, 1),
            },
            clean,
            kernel,
            blurry,
        };
        let dir = tmp("case_demo");
        write_case(&dir, &case).unwrap();
        let back = read_case(&dir).unwrap();
        assert_eq!(back.spec, case.spec);
        assert_eq!(back.kernel.data(), case.kernel.data());
        // A delta kernel makes the groundtruth crop equal the observation up
        // to PNG quantization.
        let crop = back.groundtruth_crop();
        let worst = crop
            .data()
            .iter()
            .zip(back.blurry.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst <= 1.5 / 65535.0, "error {worst}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let missing = tmp("does_not_exist.png");
        let _ = std::fs::remove_file(&missing);
        assert!(matches!(
            read_image(&missing),
            Err(DeblurError::Codec { .. }) | Err(DeblurError::Io { .. })
        ));
    }
}
