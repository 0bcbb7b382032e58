//! PNG figures: grayscale image grids with colored per-step boxes and a count
//! digit drawn from a built-in 5×7 font.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use dair_core::{Error, Result};

/// Box colors, cycled by inference step.
pub const PALETTE: [[u8; 3]; 6] = [
    [230, 40, 40],
    [40, 200, 40],
    [60, 90, 255],
    [240, 220, 30],
    [220, 50, 220],
    [30, 220, 220],
];

/// Color of the count digit.
pub const LABEL_COLOR: [u8; 3] = [255, 160, 0];

/// Digits 0-9, seven rows of five bits each (most significant bit leftmost).
const FONT: [[u8; 7]; 10] = [
    [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
    [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
    [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
    [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
    [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
    [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
    [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
    [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
    [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
];

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

/// Whether pixel `(col, row)` of the glyph for `digit` is lit.
pub fn glyph_pixel(digit: u8, col: usize, row: usize) -> bool {
    FONT[digit as usize % 10][row] >> (GLYPH_W - 1 - col) & 1 == 1
}

/// An RGB raster that stays grayscale until something colored is drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub width: usize,
    pub height: usize,
    pixels: Vec<[u8; 3]>,
    colored: bool,
}

/// Maps [0, 1] to 0..=255 with clamping.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Figure {
    pub fn new(width: usize, height: usize) -> Self {
        Figure {
            width,
            height,
            pixels: vec![[0; 3]; width * height],
            colored: false,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn is_colored(&self) -> bool {
        self.colored
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }

    /// Copies a row-major `[h, w]` image with values in [0, 1] to `(left, top)`.
    pub fn paste(&mut self, image: &[f64], w: usize, h: usize, left: usize, top: usize) {
        for r in 0..h {
            for c in 0..w {
                let g = to_byte(image[r * w + c]);
                self.set((left + c) as i64, (top + r) as i64, [g; 3]);
            }
        }
    }

    /// One-pixel outline of the half-open rectangle `[x0, x1) × [y0, y1)`,
    /// clipped to the figure.
    pub fn draw_box(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
        if x1 <= x0 || y1 <= y0 {
            return;
        }
        self.colored = true;
        for x in x0..x1 {
            self.set(x, y0, color);
            self.set(x, y1 - 1, color);
        }
        for y in y0..y1 {
            self.set(x0, y, color);
            self.set(x1 - 1, y, color);
        }
    }

    /// Draws the decimal digits of `n` with their top-left corner at `(x, y)`.
    pub fn draw_number(&mut self, n: usize, x: i64, y: i64, color: [u8; 3]) {
        self.colored = true;
        for (i, ch) in n.to_string().bytes().enumerate() {
            let left = x + (i * (GLYPH_W + 1)) as i64;
            for row in 0..GLYPH_H {
                for col in 0..GLYPH_W {
                    if glyph_pixel(ch - b'0', col, row) {
                        self.set(left + col as i64, y + row as i64, color);
                    }
                }
            }
        }
    }

    /// Writes an 8-bit grayscale PNG if nothing colored was drawn, RGB
    /// otherwise.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_depth(png::BitDepth::Eight);
        let data: Vec<u8> = if self.colored {
            enc.set_color(png::ColorType::Rgb);
            self.pixels.iter().flatten().copied().collect()
        } else {
            enc.set_color(png::ColorType::Grayscale);
            self.pixels.iter().map(|p| p[0]).collect()
        };
        let png_err = |e: png::EncodingError| Error::Io(std::io::Error::other(e.to_string()));
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&data).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }
}

/// A box in image pixels, half-open, tagged by inference step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBox {
    pub step: usize,
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl StepBox {
    /// Axis-aligned box of the given size around a center.
    pub fn around(step: usize, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        StepBox {
            step,
            x0: (cx - w / 2.0 + 0.5).round() as i64,
            y0: (cy - h / 2.0 + 0.5).round() as i64,
            x1: (cx + w / 2.0 + 0.5).round() as i64,
            y1: (cy + h / 2.0 + 0.5).round() as i64,
        }
    }
}

/// One grid cell: an image with optional boxes and count label.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub image: Vec<f64>,
    pub boxes: Vec<StepBox>,
    pub count: Option<usize>,
}

/// Lays `rows` of panels (each `w × h`) out with `pad` pixels around every
/// cell, so a row of n panels is `n·(w + 2·pad)` wide.
pub fn grid(rows: &[Vec<Panel>], w: usize, h: usize, pad: usize) -> Figure {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let (cw, ch) = (w + 2 * pad, h + 2 * pad);
    let mut fig = Figure::new(cols * cw, rows.len() * ch);
    for (r, row) in rows.iter().enumerate() {
        for (c, panel) in row.iter().enumerate() {
            let (left, top) = (c * cw + pad, r * ch + pad);
            fig.paste(&panel.image, w, h, left, top);
            for b in &panel.boxes {
                let clip = |v: i64, hi: usize| v.clamp(0, hi as i64);
                fig.draw_box(
                    left as i64 + clip(b.x0, w),
                    top as i64 + clip(b.y0, h),
                    left as i64 + clip(b.x1, w),
                    top as i64 + clip(b.y1, h),
                    PALETTE[b.step % PALETTE.len()],
                );
            }
            if let Some(n) = panel.count {
                fig.draw_number(n, left as i64 + 1, top as i64 + 1, LABEL_COLOR);
            }
        }
    }
    fig
}
