//! Procedural Multi-Sprites scenes: squares, equilateral triangles and
//! ellipses, rasterized with 4×4 supersampling and merged by per-pixel max.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use super::container::{Dataset, DatasetHeader, SceneObject, SceneRecord};
use crate::error::{Error, Result};
use crate::noise::{NoiseStream, Role};

/// Shape categories in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square = 0,
    Triangle = 1,
    Ellipse = 2,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Triangle, Shape::Ellipse];

    pub fn from_id(id: u8) -> Option<Shape> {
        Shape::ALL.get(id as usize).copied()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Ellipse => "ellipse",
        }
    }
}

/// Minor-to-major axis ratio of ellipses.
pub const ELLIPSE_ASPECT: f64 = 0.6;
/// Subsamples per pixel side.
pub const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SpritesConfig {
    pub height: usize,
    pub width: usize,
    pub max_objects: usize,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for SpritesConfig {
    fn default() -> Self {
        SpritesConfig {
            height: 64,
            width: 64,
            max_objects: 3,
            scale_min: 0.2,
            scale_max: 0.45,
        }
    }
}

/// A shape placed on a canvas; `size` is the square side, the triangle side
/// or the ellipse major axis, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placed {
    pub shape: Shape,
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
    pub orientation: f64,
}

impl Placed {
    /// Whether the point lies inside the shape (image axes, y down).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.orientation.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        // into the shape frame
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let half = self.size / 2.0;
        match self.shape {
            Shape::Square => u.abs() <= half && v.abs() <= half,
            Shape::Ellipse => {
                let b = half * ELLIPSE_ASPECT;
                (u / half).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Triangle => {
                // centroid-centered, apex up: each edge at the inradius
                let inradius = self.size / (2.0 * 3f64.sqrt());
                (0..3).all(|i| {
                    let a = PI / 2.0 + i as f64 * TAU / 3.0;
                    u * a.cos() + v * a.sin() <= inradius
                })
            }
        }
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.orientation.sin_cos();
        let half = self.size / 2.0;
        match self.shape {
            Shape::Ellipse => {
                let b = half * ELLIPSE_ASPECT;
                (
                    ((half * c).powi(2) + (b * s).powi(2)).sqrt(),
                    ((half * s).powi(2) + (b * c).powi(2)).sqrt(),
                )
            }
            _ => {
                let pts = self.vertices();
                let hx = pts.iter().map(|p| (p.0 - self.cx).abs()).fold(0.0, f64::max);
                let hy = pts.iter().map(|p| (p.1 - self.cy).abs()).fold(0.0, f64::max);
                (hx, hy)
            }
        }
    }

    fn vertices(&self) -> Vec<(f64, f64)> {
        let (s, c) = self.orientation.sin_cos();
        let local: Vec<(f64, f64)> = match self.shape {
            Shape::Square => {
                let h = self.size / 2.0;
                vec![(-h, -h), (h, -h), (h, h), (-h, h)]
            }
            Shape::Triangle => {
                let r = self.size / 3f64.sqrt();
                (0..3)
                    .map(|i| {
                        let a = -PI / 2.0 + i as f64 * TAU / 3.0;
                        (r * a.cos(), r * a.sin())
                    })
                    .collect()
            }
            Shape::Ellipse => vec![],
        };
        // shape frame back to image frame
        local
            .into_iter()
            .map(|(u, v)| (self.cx + c * u - s * v, self.cy + s * u + c * v))
            .collect()
    }

    /// Rasterizes into `image` (row-major `height × width`) with per-pixel max.
    pub fn draw(&self, image: &mut [u8], height: usize, width: usize) {
        let (hx, hy) = self.half_extents();
        let x0 = ((self.cx - hx).floor().max(0.0)) as usize;
        let y0 = ((self.cy - hy).floor().max(0.0)) as usize;
        let x1 = ((self.cx + hx).ceil() as usize + 1).min(width);
        let y1 = ((self.cy + hy).ceil() as usize + 1).min(height);
        let n = SUPERSAMPLE;
        let step = 1.0 / n as f64;
        for py in y0..y1 {
            for px in x0..x1 {
                let mut hits = 0;
                for sy in 0..n {
                    for sx in 0..n {
                        let x = px as f64 - 0.5 + (sx as f64 + 0.5) * step;
                        let y = py as f64 - 0.5 + (sy as f64 + 0.5) * step;
                        if self.contains(x, y) {
                            hits += 1;
                        }
                    }
                }
                let v = ((hits * 255) as f64 / (n * n) as f64).round() as u8;
                let slot = &mut image[py * width + px];
                *slot = (*slot).max(v);
            }
        }
    }
}

/// Draws one scene. Used by the generator and by tests that need a single
/// record with a known seed.
pub fn render_scene(config: &SpritesConfig, rng: &mut impl Rng) -> SceneRecord {
    let (h, w) = (config.height, config.width);
    let canvas = h.min(w) as f64;
    let count = rng.random_range(0..=config.max_objects);
    let mut image = vec![0u8; h * w];
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = Shape::ALL[rng.random_range(0..Shape::ALL.len())];
        let scale = rng.random_range(config.scale_min..=config.scale_max);
        let orientation = rng.random_range(0.0..TAU);
        let mut placed = Placed {
            shape,
            cx: 0.0,
            cy: 0.0,
            size: scale * canvas,
            orientation,
        };
        let (hx, hy) = placed.half_extents();
        // keep the bounding box inside [-0.5, side - 0.5]
        let mut span = |half: f64, side: usize| {
            let lo = half - 0.5;
            let hi = side as f64 - 0.5 - half;
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                (side as f64 - 1.0) / 2.0
            }
        };
        placed.cx = span(hx, w);
        placed.cy = span(hy, h);
        placed.draw(&mut image, h, w);
        objects.push(SceneObject {
            category: shape as u8,
            center_x: placed.cx as f32,
            center_y: placed.cy as f32,
            scale: scale as f32,
            orientation: orientation as f32,
        });
    }
    SceneRecord { image, objects }
}

/// Generates `count` scenes; record `i` draws from the stream keyed by `i`.
pub fn gen_multi_sprites(count: usize, config: &SpritesConfig, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    if !(config.scale_min > 0.0 && config.scale_min <= config.scale_max && config.scale_max < 1.0) {
        return Err(Error::invalid("scale range must satisfy 0 < min ≤ max < 1"));
    }
    if config.height == 0 || config.width == 0 || config.max_objects > u8::MAX as usize {
        return Err(Error::invalid("bad canvas size or max_objects"));
    }
    let records = (0..count)
        .map(|i| {
            let mut s = NoiseStream::new(seed, 0, i as u64, Role::Data);
            render_scene(config, s.rng())
        })
        .collect();
    Ok(Dataset {
        header: DatasetHeader::new(count, config.height, config.width, config.max_objects, Shape::ALL.len()),
        records,
    })
}
