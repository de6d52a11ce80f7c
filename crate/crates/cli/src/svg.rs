//! Minimal static SVG emitters for sweep summaries: line charts with
//! optional dashed baselines, and paired histograms.

use std::path::Path;

use deblur_core::{DeblurError, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 460.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn write(path: &Path, body: String) -> Result<()> {
    let doc = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    );
    std::fs::write(path, doc).map_err(|e| DeblurError::io(path.display().to_string(), e))
}

fn axis_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.06 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A line chart over shared x positions, one polyline per series, with an
/// optional dashed horizontal baseline.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    x_ticks: &[(f64, String)],
    series: &[(String, Vec<(f64, f64)>)],
    baseline: Option<(f64, &str)>,
) -> Result<()> {
    let (x_lo, x_hi) = axis_bounds(
        series
            .iter()
            .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
            .chain(x_ticks.iter().map(|t| t.0)),
    );
    let (y_lo, y_hi) = axis_bounds(
        series
            .iter()
            .flat_map(|(_, pts)| pts.iter().map(|p| p.1))
            .chain(baseline.map(|b| b.0)),
    );
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R);
    let sy = |y: f64| HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut body = String::new();
    body.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));
    // Axes.
    body.push_str(&format!(
        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{3}\" stroke=\"black\"/>\n",
        MARGIN_L,
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        MARGIN_T
    ));
    body.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    ));
    body.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\" font-family=\"sans-serif\">{}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    ));
    for (x, label) in x_ticks {
        body.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/><text x=\"{0}\" y=\"{3}\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">{4}</text>\n",
            sx(*x),
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0,
            HEIGHT - MARGIN_B + 20.0,
            escape(label)
        ));
    }
    for t in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * t as f64 / 4.0;
        body.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/><text x=\"{3}\" y=\"{4}\" font-size=\"11\" text-anchor=\"end\" font-family=\"sans-serif\">{5:.2}</text>\n",
            MARGIN_L - 5.0,
            sy(y),
            MARGIN_L,
            MARGIN_L - 8.0,
            sy(y) + 4.0,
            y
        ));
    }
    if let Some((value, label)) = baseline {
        body.push_str(&format!(
            "<line x1=\"{}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"#555\" stroke-dasharray=\"6,4\"/><text x=\"{3}\" y=\"{4}\" font-size=\"11\" fill=\"#555\" font-family=\"sans-serif\">{5}</text>\n",
            MARGIN_L,
            sy(value),
            WIDTH - MARGIN_R,
            MARGIN_L + 6.0,
            sy(value) - 5.0,
            escape(label)
        ));
    }
    for (idx, (name, points)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let coords: Vec<String> = points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        body.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        for (x, y) in points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            body.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(*x),
                sy(*y)
            ));
        }
        body.push_str(&format!(
            "<rect x=\"{0}\" y=\"{1}\" width=\"12\" height=\"12\" fill=\"{color}\"/><text x=\"{2}\" y=\"{3}\" font-size=\"12\" font-family=\"sans-serif\">{4}</text>\n",
            WIDTH - MARGIN_R - 170.0,
            MARGIN_T + 18.0 * idx as f64,
            WIDTH - MARGIN_R - 152.0,
            MARGIN_T + 18.0 * idx as f64 + 10.0,
            escape(name)
        ));
    }
    write(path, body)
}

/// Two overlaid histograms sharing bins, for gap-style comparisons.
pub fn histogram_pair(
    path: &Path,
    title: &str,
    x_label: &str,
    a: (&str, &[f64]),
    b: (&str, &[f64]),
    bins: usize,
) -> Result<()> {
    let (lo, hi) = axis_bounds(a.1.iter().chain(b.1).cloned());
    let bins = bins.max(1);
    let count = |values: &[f64]| {
        let mut counts = vec![0usize; bins];
        for v in values {
            if v.is_finite() {
                let idx = (((v - lo) / (hi - lo)) * bins as f64).floor() as isize;
                counts[idx.clamp(0, bins as isize - 1) as usize] += 1;
            }
        }
        counts
    };
    let ca = count(a.1);
    let cb = count(b.1);
    let max_count = ca.iter().chain(cb.iter()).cloned().max().unwrap_or(1).max(1);

    let band = (WIDTH - MARGIN_L - MARGIN_R) / bins as f64;
    let scale_y = (HEIGHT - MARGIN_T - MARGIN_B) / max_count as f64;
    let mut body = String::new();
    body.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));
    for (series_idx, (label, counts)) in [(0usize, (a.0, &ca)), (1usize, (b.0, &cb))] {
        let color = COLORS[series_idx];
        for (i, c) in counts.iter().enumerate() {
            if *c == 0 {
                continue;
            }
            let h = *c as f64 * scale_y;
            let x = MARGIN_L + i as f64 * band + series_idx as f64 * band / 2.0;
            body.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.65\"/>\n",
                x,
                HEIGHT - MARGIN_B - h,
                band / 2.0,
                h
            ));
        }
        body.push_str(&format!(
            "<rect x=\"{0}\" y=\"{1}\" width=\"12\" height=\"12\" fill=\"{color}\"/><text x=\"{2}\" y=\"{3}\" font-size=\"12\" font-family=\"sans-serif\">{4}</text>\n",
            WIDTH - MARGIN_R - 150.0,
            MARGIN_T + 18.0 * series_idx as f64,
            WIDTH - MARGIN_R - 132.0,
            MARGIN_T + 18.0 * series_idx as f64 + 10.0,
            escape(label)
        ));
    }
    body.push_str(&format!(
        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n",
        MARGIN_L,
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R
    ));
    for t in 0..=4 {
        let x = lo + (hi - lo) * t as f64 / 4.0;
        let px = MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) * t as f64 / 4.0;
        body.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">{x:.2}</text>\n",
            HEIGHT - MARGIN_B + 18.0
        ));
    }
    body.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    ));
    write(path, body)
}
