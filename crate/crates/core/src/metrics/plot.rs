use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const WIDTH: u32 = 480;
const HEIGHT: u32 = 270;
const MARGIN: i64 = 24;

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn segment(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), c: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 as f64 + t * (b.0 - a.0) as f64;
        let y = a.1 as f64 + t * (b.1 - a.1) as f64;
        put(img, x.round() as i64, y.round() as i64, c);
    }
}

/// Plain per-frame line chart. Non-finite values are skipped; the vertical
/// axis spans the finite values.
pub fn line_chart_png(values: &[f64], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let axis = Rgb([90, 90, 90]);
    let (w, h) = (WIDTH as i64, HEIGHT as i64);
    segment(&mut img, (MARGIN, h - MARGIN), (w - MARGIN, h - MARGIN), axis);
    segment(&mut img, (MARGIN, MARGIN), (MARGIN, h - MARGIN), axis);
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if !finite.is_empty() {
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let n = values.len().max(2) - 1;
        let to_px = |i: usize, v: f64| {
            let x = MARGIN + ((w - 2 * MARGIN) as f64 * i as f64 / n as f64).round() as i64;
            let y = h - MARGIN - ((h - 2 * MARGIN) as f64 * (v - lo) / span).round() as i64;
            (x, y)
        };
        let line = Rgb([31, 119, 180]);
        let mut prev = None;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let p = to_px(i, v);
            if let Some(q) = prev {
                segment(&mut img, q, p, line);
            }
            for dx in -1..=1 {
                for dy in -1..=1 {
                    put(&mut img, p.0 + dx, p.1 + dy, line);
                }
            }
            prev = Some(p);
        }
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })
}
