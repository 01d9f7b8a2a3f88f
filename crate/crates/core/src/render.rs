//! PNG overlays of images, heatmaps and disc positions.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::io::atomic_write;

const PRED: Rgb<u8> = Rgb([40, 230, 60]);
const TRUTH: Rgb<u8> = Rgb([240, 40, 220]);

/// What to draw on top of a grayscale image.
#[derive(Debug, Clone, Default)]
pub struct Overlay<'a> {
    /// `[H, W]` values in `[0, 1]`, blended in as colour.
    pub heatmap: Option<&'a [f32]>,
    /// Predicted `(row, col)` per disc, drawn as crosses.
    pub predicted: &'a [Option<(f64, f64)>],
    /// Annotated `(row, col)` per disc, drawn as hollow squares.
    pub truth: &'a [Option<(f64, f64)>],
}

fn colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    [
        (1.5 * v).min(1.0),
        (1.5 * v - 0.5).clamp(0.0, 1.0),
        (3.0 * v - 2.0).clamp(0.0, 1.0),
    ]
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn cross(img: &mut RgbImage, x: i64, y: i64, r: i64) {
    for d in -r..=r {
        put(img, x + d, y, PRED);
        put(img, x, y + d, PRED);
    }
}

fn square(img: &mut RgbImage, x: i64, y: i64, r: i64) {
    for d in -r..=r {
        put(img, x + d, y - r, TRUTH);
        put(img, x + d, y + r, TRUTH);
        put(img, x - r, y + d, TRUTH);
        put(img, x + r, y + d, TRUTH);
    }
}

/// Renders `image` (`rows x cols`, values in `[0, 1]`) upscaled by `scale`.
pub fn render_overlay(image: &[f32], rows: usize, cols: usize, scale: u32, ov: &Overlay) -> Result<RgbImage> {
    if image.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("image of {} values is not {rows}x{cols}", image.len())));
    }
    if ov.heatmap.is_some_and(|h| h.len() != image.len()) {
        return Err(Error::Shape("heatmap and image sizes differ".into()));
    }
    let scale = scale.max(1);
    let mut img = RgbImage::new(cols as u32 * scale, rows as u32 * scale);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let i = (y / scale) as usize * cols + (x / scale) as usize;
        let g = image[i].clamp(0.0, 1.0);
        let mut c = [g; 3];
        if let Some(h) = ov.heatmap {
            let a = 0.6 * h[i].clamp(0.0, 1.0);
            let m = colormap(h[i]);
            for k in 0..3 {
                c[k] = (1.0 - a) * c[k] + a * m[k];
            }
        }
        *px = Rgb(c.map(|v| (v * 255.0).round() as u8));
    }
    let s = scale as f64;
    let glyph = 2 + scale as i64;
    let to_px = |(r, c): (f64, f64)| (((c + 0.5) * s).floor() as i64, ((r + 0.5) * s).floor() as i64);
    for p in ov.truth.iter().flatten() {
        let (x, y) = to_px(*p);
        square(&mut img, x, y, glyph);
    }
    for p in ov.predicted.iter().flatten() {
        let (x, y) = to_px(*p);
        cross(&mut img, x, y, glyph);
    }
    Ok(img)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn write_overlay(path: &Path, image: &[f32], rows: usize, cols: usize, scale: u32, ov: &Overlay) -> Result<()> {
    atomic_write(path, &encode_png(&render_overlay(image, rows, cols, scale, ov)?)?)
}

/// Colour-mapped map (e.g. an attention map) on its own.
pub fn write_map(path: &Path, map: &[f32], rows: usize, cols: usize, scale: u32) -> Result<()> {
    let black = vec![0.0; map.len()];
    let ov = Overlay {
        heatmap: Some(map),
        ..Overlay::default()
    };
    let mut img = render_overlay(&black, rows, cols, scale, &ov)?;
    // full opacity so the map reads on its own
    let scale = scale.max(1);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let v = map[(y / scale) as usize * cols + (x / scale) as usize];
        *px = Rgb(colormap(v).map(|c| (c * 255.0).round() as u8));
    }
    atomic_write(path, &encode_png(&img)?)
}
