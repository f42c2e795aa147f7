//! Chart rendering for run directories: loss-component curves, the
//! target-mIoU curve, and raw-versus-refined caption token histograms.
//!
//! Charts are plain PNG rasters drawn pixel by pixel; every image gets a
//! JSON sidecar carrying the title, axis labels, value ranges, and the
//! exact points or bin counts plotted, so downstream tooling never has
//! to read numbers back out of pixels. All files are written to a
//! temporary name first and renamed into place, and nothing else in the
//! run directory is ever opened for writing.

use crate::captions::{caption_bank_load, caption_stats, CaptionStats, HISTOGRAM_BIN_WIDTH};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("no training history at {0}: run training first")]
    MissingHistory(PathBuf),
    #[error("{path} line {line}: {message}")]
    BadRow {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("nothing to plot: {0}")]
    Empty(String),
    #[error(transparent)]
    Caption(#[from] crate::captions::CaptionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Sidecar for a line chart; `series` holds every plotted point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChartMeta {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub series: Vec<Series>,
}

/// Sidecar for the token histogram; bin counts are the caption-bank
/// statistics verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramMeta {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub bin_width: usize,
    pub stats: CaptionStats,
}

const WIDTH: u32 = 800;
const HEIGHT: u32 = 500;
const MARGIN_L: u32 = 60;
const MARGIN_R: u32 = 20;
const MARGIN_T: u32 = 20;
const MARGIN_B: u32 = 40;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
];

fn write_atomic(
    path: &Path,
    write: impl FnOnce(&Path) -> Result<(), PlotError>,
) -> Result<(), PlotError> {
    let tmp = path.with_extension("tmp");
    write(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn save_png(img: &RgbImage, path: &Path) -> Result<(), PlotError> {
    write_atomic(path, |tmp| {
        img.save_with_format(tmp, image::ImageFormat::Png)
            .map_err(PlotError::from)
    })
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), PlotError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, |tmp| {
        std::fs::write(tmp, &text).map_err(PlotError::from)
    })
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    /// Data ranges padded so flat series still render mid-plot.
    fn around(series: &[Series]) -> Result<Self, PlotError> {
        let points = series.iter().flat_map(|s| s.points.iter());
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        let mut any = false;
        for &(x, y) in points {
            any = true;
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        if !any {
            return Err(PlotError::Empty("all series are empty".into()));
        }
        if x_min == x_max {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if y_min == y_max {
            y_min -= 0.5;
            y_max += 0.5;
        }
        let pad = (y_max - y_min) * 0.05;
        Ok(Self {
            x_min,
            x_max,
            y_min: y_min - pad,
            y_max: y_max + pad,
        })
    }

    fn to_px(&self, x: f64, y: f64) -> (i64, i64) {
        let w = (WIDTH - MARGIN_L - MARGIN_R) as f64;
        let h = (HEIGHT - MARGIN_T - MARGIN_B) as f64;
        let px = MARGIN_L as f64 + (x - self.x_min) / (self.x_max - self.x_min) * w;
        let py = MARGIN_T as f64 + (1.0 - (y - self.y_min) / (self.y_max - self.y_min)) * h;
        (px.round() as i64, py.round() as i64)
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Integer Bresenham segment.
fn draw_line(img: &mut RgbImage, from: (i64, i64), to: (i64, i64), color: Rgb<u8>) {
    let (mut x0, mut y0) = from;
    let (x1, y1) = to;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, color);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    for y in y0.min(y1)..=y0.max(y1) {
        for x in x0.min(x1)..=x0.max(x1) {
            put(img, x, y, color);
        }
    }
}

fn blank_canvas(frame: &Frame) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    // Horizontal gridlines at five even divisions of the y range.
    for i in 1..5 {
        let y = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 5.0;
        let (x0, py) = frame.to_px(frame.x_min, y);
        let (x1, _) = frame.to_px(frame.x_max, y);
        draw_line(&mut img, (x0, py), (x1, py), GRID);
    }
    let (ox, oy) = frame.to_px(frame.x_min, frame.y_min);
    let (tx, ty) = frame.to_px(frame.x_max, frame.y_max);
    draw_line(&mut img, (ox, oy), (tx, oy), AXIS);
    draw_line(&mut img, (ox, oy), (ox, ty), AXIS);
    img
}

/// Renders a multi-series line chart plus its sidecar. Produces
/// `<path>.png` and `<path>.json`.
pub fn render_line_chart(
    base: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<Vec<PathBuf>, PlotError> {
    let frame = Frame::around(series)?;
    let mut img = blank_canvas(&frame);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut prev: Option<(i64, i64)> = None;
        for &(x, y) in &s.points {
            let p = frame.to_px(x, y);
            match prev {
                Some(q) => draw_line(&mut img, q, p, color),
                None => put(&mut img, p.0, p.1, color),
            }
            prev = Some(p);
        }
    }
    let png = base.with_extension("png");
    let json = base.with_extension("json");
    save_png(&img, &png)?;
    save_json(
        &ChartMeta {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_range: (frame.x_min, frame.x_max),
            y_range: (frame.y_min, frame.y_max),
            series: series.to_vec(),
        },
        &json,
    )?;
    Ok(vec![png, json])
}

/// Renders the paired raw/refined token histogram plus its sidecar.
pub fn render_token_histogram(
    base: &Path,
    stats: &CaptionStats,
) -> Result<Vec<PathBuf>, PlotError> {
    // Drop trailing all-zero bins so the plot focuses on occupied range.
    let occupied = stats
        .histogram_raw
        .iter()
        .zip(&stats.histogram_refined)
        .rposition(|(a, b)| *a > 0 || *b > 0)
        .map(|i| i + 1)
        .unwrap_or(0);
    if occupied == 0 {
        return Err(PlotError::Empty("token histograms are all zero".into()));
    }
    let max_count = stats.histogram_raw[..occupied]
        .iter()
        .chain(&stats.histogram_refined[..occupied])
        .copied()
        .max()
        .unwrap_or(1)
        .max(1);
    let frame = Frame {
        x_min: 0.0,
        x_max: (occupied * HISTOGRAM_BIN_WIDTH) as f64,
        y_min: 0.0,
        y_max: max_count as f64 * 1.05,
    };
    let mut img = blank_canvas(&frame);
    for (bin, (&raw, &refined)) in stats.histogram_raw[..occupied]
        .iter()
        .zip(&stats.histogram_refined[..occupied])
        .enumerate()
    {
        let lo = (bin * HISTOGRAM_BIN_WIDTH) as f64;
        let mid = lo + HISTOGRAM_BIN_WIDTH as f64 * 0.5;
        let hi = lo + HISTOGRAM_BIN_WIDTH as f64;
        // Raw bars fill the left half of the bin, refined the right half.
        let (x0, y_base) = frame.to_px(lo, 0.0);
        let (xm, _) = frame.to_px(mid, 0.0);
        let (x1, _) = frame.to_px(hi, 0.0);
        if raw > 0 {
            let (_, y) = frame.to_px(lo, raw as f64);
            fill_rect(&mut img, x0 + 1, y, xm - 1, y_base - 1, PALETTE[0]);
        }
        if refined > 0 {
            let (_, y) = frame.to_px(lo, refined as f64);
            fill_rect(&mut img, xm + 1, y, x1 - 1, y_base - 1, PALETTE[1]);
        }
    }
    let png = base.with_extension("png");
    let json = base.with_extension("json");
    save_png(&img, &png)?;
    save_json(
        &HistogramMeta {
            title: "caption token counts, raw vs refined".into(),
            x_label: "tokens".into(),
            y_label: "captions".into(),
            bin_width: HISTOGRAM_BIN_WIDTH,
            stats: stats.clone(),
        },
        &json,
    )?;
    Ok(vec![png, json])
}

fn parse_csv(path: &Path, want_cols: usize) -> Result<Vec<Vec<f64>>, PlotError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != want_cols {
            return Err(PlotError::BadRow {
                path: path.into(),
                line: i + 1,
                message: format!("expected {want_cols} columns, found {}", fields.len()),
            });
        }
        let mut row = Vec::with_capacity(want_cols);
        for f in fields {
            row.push(f.parse::<f64>().map_err(|e| PlotError::BadRow {
                path: path.into(),
                line: i + 1,
                message: format!("{f:?}: {e}"),
            })?);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn loss_series(rows: &[Vec<f64>]) -> Vec<Series> {
    // metrics.csv columns: step, L_S, L_T, L_p, q_T_mean, lr.
    let column = |idx: usize, name: &str| Series {
        name: name.into(),
        points: rows.iter().map(|r| (r[0], r[idx])).collect(),
    };
    vec![column(1, "L_S"), column(2, "L_T"), column(3, "L_p")]
}

/// Renders every chart a run directory supports:
///
/// - `loss_curves.png/.json` from `metrics.csv` (always; its absence or
///   emptiness is the missing-history error),
/// - `miou_curve.png/.json` from `miou_curve.csv` when present,
/// - `token_histogram.png/.json` from `captions.jsonl` when present.
///
/// Returns the paths written.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let metrics = run_dir.join("metrics.csv");
    if !metrics.exists() {
        return Err(PlotError::MissingHistory(metrics));
    }
    let rows = parse_csv(&metrics, 6)?;
    if rows.is_empty() {
        return Err(PlotError::MissingHistory(metrics));
    }
    let mut written = render_line_chart(
        &run_dir.join("loss_curves"),
        "training loss components",
        "step",
        "loss",
        &loss_series(&rows),
    )?;

    let curve = run_dir.join("miou_curve.csv");
    if curve.exists() {
        let rows = parse_csv(&curve, 2)?;
        let series = [Series {
            name: "target mIoU".into(),
            points: rows.iter().map(|r| (r[0], r[1])).collect(),
        }];
        written.extend(render_line_chart(
            &run_dir.join("miou_curve"),
            "target mIoU over training",
            "step",
            "mIoU (%)",
            &series,
        )?);
    }

    let captions = run_dir.join("captions.jsonl");
    if captions.exists() {
        let records = caption_bank_load(&captions)?;
        let stats = caption_stats(&records)?;
        written.extend(render_token_histogram(
            &run_dir.join("token_histogram"),
            &stats,
        )?);
    }
    Ok(written)
}
