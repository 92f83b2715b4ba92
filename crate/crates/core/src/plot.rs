//! Minimal scatter plots written as PNG: axes, tick labels in a built-in
//! 3×5 digit font, and one dot per point.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

const WIDTH: usize = 360;
const HEIGHT: usize = 300;
const MARGIN_LEFT: usize = 44;
const MARGIN_RIGHT: usize = 14;
const MARGIN_TOP: usize = 14;
const MARGIN_BOTTOM: usize = 30;
const TICKS: usize = 5;

/// Rows of a 3-wide glyph, top to bottom, bit 2 = left column.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        _ => return None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    /// Bounds of `values` padded by 5%, or `[0, 1]` when empty.
    pub fn covering(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { min: 0.0, max: 1.0 };
        }
        if hi - lo < 1e-9 {
            return Self { min: lo - 0.5, max: hi + 0.5 };
        }
        let pad = 0.05 * (hi - lo);
        Self { min: lo - pad, max: hi + pad }
    }
}

struct Canvas {
    img: Image,
}

impl Canvas {
    fn new() -> Self {
        Self {
            img: Image::filled(WIDTH, HEIGHT, 1.0),
        }
    }

    fn put(&mut self, x: i64, y: i64, rgb: [f64; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < WIDTH && (y as usize) < HEIGHT {
            self.img.set_pixel(x as usize, y as usize, rgb);
        }
    }

    fn hline(&mut self, x0: usize, x1: usize, y: usize, rgb: [f64; 3]) {
        for x in x0..=x1 {
            self.put(x as i64, y as i64, rgb);
        }
    }

    fn vline(&mut self, x: usize, y0: usize, y1: usize, rgb: [f64; 3]) {
        for y in y0..=y1 {
            self.put(x as i64, y as i64, rgb);
        }
    }

    fn dot(&mut self, cx: i64, cy: i64, rgb: [f64; 3]) {
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                if dx * dx + dy * dy <= 5 {
                    self.put(cx + dx, cy + dy, rgb);
                }
            }
        }
    }

    /// Text at 2× scale with its top-left corner at `(x, y)`.
    fn text(&mut self, x: i64, y: i64, s: &str) {
        let mut cx = x;
        for c in s.chars() {
            if let Some(rows) = glyph(c) {
                for (ry, bits) in rows.iter().enumerate() {
                    for rx in 0..3 {
                        if bits & (4 >> rx) != 0 {
                            for (sx, sy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                                self.put(cx + 2 * rx + sx, y + 2 * ry as i64 + sy, [0.0; 3]);
                            }
                        }
                    }
                }
            }
            cx += 8;
        }
    }
}

fn text_width(s: &str) -> i64 {
    8 * s.chars().count() as i64 - 2
}

fn label(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Renders `points` inside the given axis ranges. Points outside the
/// ranges are clipped to the frame.
pub fn scatter(points: &[(f64, f64)], x: Range, y: Range) -> Result<Image> {
    if !(x.max > x.min && y.max > y.min) {
        return Err(Error::invalid("plot ranges must have max > min"));
    }
    let mut c = Canvas::new();
    let (px0, px1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (py0, py1) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
    let to_px = |v: f64| px0 as f64 + (v - x.min) / (x.max - x.min) * (px1 - px0) as f64;
    let to_py = |v: f64| py1 as f64 - (v - y.min) / (y.max - y.min) * (py1 - py0) as f64;

    let grid = [0.9; 3];
    let axis = [0.0; 3];
    for i in 0..TICKS {
        let t = i as f64 / (TICKS - 1) as f64;
        let gx = (px0 as f64 + t * (px1 - px0) as f64).round() as usize;
        let gy = (py1 as f64 - t * (py1 - py0) as f64).round() as usize;
        c.vline(gx, py0, py1, grid);
        c.hline(px0, px1, gy, grid);
        c.vline(gx, py1, py1 + 3, axis);
        c.hline(px0 - 3, px0, gy, axis);
        let xl = label(x.min + t * (x.max - x.min));
        c.text(gx as i64 - text_width(&xl) / 2, py1 as i64 + 7, &xl);
        let yl = label(y.min + t * (y.max - y.min));
        c.text(px0 as i64 - 6 - text_width(&yl), gy as i64 - 5, &yl);
    }
    c.hline(px0, px1, py1, axis);
    c.vline(px0, py0, py1, axis);

    for &(vx, vy) in points {
        if !(vx.is_finite() && vy.is_finite()) {
            continue;
        }
        let sx = to_px(vx).clamp(px0 as f64, px1 as f64).round() as i64;
        let sy = to_py(vy).clamp(py0 as f64, py1 as f64).round() as i64;
        c.dot(sx, sy, [0.12, 0.35, 0.75]);
    }
    Ok(c.img)
}

pub fn save_scatter(points: &[(f64, f64)], x: Range, y: Range, path: &Path) -> Result<()> {
    scatter(points, x, y)?.save_png(path)
}
