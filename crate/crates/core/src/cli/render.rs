use crate::data::{to_byte, ImageBatch, RawImage};
use crate::error::{Error, Result};

/// Label colors for scatter plots, indexed by `label % 10`.
pub const PALETTE: [[u8; 3]; 10] = [
    [0x1f, 0x77, 0xb4],
    [0xff, 0x7f, 0x0e],
    [0x2c, 0xa0, 0x2c],
    [0xd6, 0x27, 0x28],
    [0x94, 0x67, 0xbd],
    [0x8c, 0x56, 0x4b],
    [0xe3, 0x77, 0xc2],
    [0x7f, 0x7f, 0x7f],
    [0xbc, 0xbd, 0x22],
    [0x17, 0xbe, 0xcf],
];

const GAP: usize = 2;
const GAP_VALUE: u8 = 128;

/// Tiles image `i` of every panel side by side on row `i`. Pixel values
/// are clamped to [0, 1].
pub fn image_grid(panels: &[&ImageBatch]) -> Result<RawImage> {
    let first = panels
        .first()
        .ok_or_else(|| Error::Contract("no panels".into()))?;
    let (n, h, w, c) = (first.n(), first.height(), first.width(), first.channels());
    if panels
        .iter()
        .any(|p| (p.n(), p.height(), p.width(), p.channels()) != (n, h, w, c))
    {
        return Err(Error::Shape("grid panels differ in shape".into()));
    }
    let cols = panels.len();
    let width = cols * w + (cols + 1) * GAP;
    let height = n * h + (n + 1) * GAP;
    let mut bytes = vec![GAP_VALUE; width * height * c];
    for i in 0..n {
        for (j, panel) in panels.iter().enumerate() {
            let img = panel.image(i);
            let (y0, x0) = (GAP + i * (h + GAP), GAP + j * (w + GAP));
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        bytes[((y0 + y) * width + x0 + x) * c + ch] = to_byte(img[(y * w + x) * c + ch]);
                    }
                }
            }
        }
    }
    Ok(RawImage {
        width,
        height,
        channels: c,
        bytes,
    })
}

/// Renders 2-D points as 3×3 dots on a white square canvas, colored by label.
pub fn scatter(points: &[(f64, f64)], labels: &[u8], size: usize) -> RawImage {
    let mut bytes = vec![255u8; size * size * 3];
    let margin = 8.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let usable = size as f64 - 2.0 * margin;
    for (&(x, y), &l) in points.iter().zip(labels) {
        let px = margin + (x - x0) / span(x0, x1) * usable;
        let py = margin + (y1 - y) / span(y0, y1) * usable;
        let (cx, cy) = (px.round() as i64, py.round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (u, v) = (cx + dx, cy + dy);
                if u < 0 || v < 0 || u >= size as i64 || v >= size as i64 {
                    continue;
                }
                let at = (v as usize * size + u as usize) * 3;
                bytes[at..at + 3].copy_from_slice(&PALETTE[l as usize % 10]);
            }
        }
    }
    RawImage {
        width: size,
        height: size,
        channels: 3,
        bytes,
    }
}
