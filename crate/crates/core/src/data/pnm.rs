//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::fs;
use std::path::{Path, PathBuf};

use super::ImageBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bytes: Vec<u8>,
}

pub fn encode(img: &RawImage) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.bytes);
    out
}

pub fn write(path: &Path, img: &RawImage) -> Result<()> {
    assert!(img.channels == 1 || img.channels == 3);
    assert_eq!(img.bytes.len(), img.width * img.height * img.channels);
    fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<RawImage> {
    let err = |offset: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.to_string(),
    };
    let mut pos = 0;
    let mut token = || -> Result<(usize, String)> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()))
    };
    let (_, magic) = token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(err(0, "expected P5 or P6")),
    };
    let mut number = |what: &str| -> Result<usize> {
        let (at, t) = token()?;
        t.parse()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| err(at, &format!("bad {what} {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(err(pos, "only maxval 255 is supported"));
    }
    let start = pos + 1;
    let len = width * height * channels;
    let body = bytes
        .get(start..start + len)
        .ok_or_else(|| err(bytes.len(), "truncated pixel data"))?;
    Ok(RawImage {
        width,
        height,
        channels,
        bytes: body.to_vec(),
    })
}

pub fn read(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

/// Loads every `.pgm`/`.ppm` file of a directory (sorted by name) into one
/// batch. All images must share a size and channel count.
pub fn load_image_dir(dir: &Path) -> Result<ImageBatch> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm"))
        })
        .collect();
    files.sort();
    let first = files
        .first()
        .ok_or_else(|| Error::Config(format!("no PGM/PPM images in {}", dir.display())))?;
    let head = read(first)?;
    let mut data = Vec::with_capacity(files.len() * head.bytes.len());
    for f in &files {
        let img = read(f)?;
        if (img.width, img.height, img.channels) != (head.width, head.height, head.channels) {
            return Err(Error::Config(format!(
                "{} is {}x{}x{}, expected {}x{}x{}",
                f.display(),
                img.width,
                img.height,
                img.channels,
                head.width,
                head.height,
                head.channels
            )));
        }
        data.extend(img.bytes.iter().map(|&b| f64::from(b) / 255.0));
    }
    ImageBatch::new(
        Tensor::new(&[files.len(), head.height, head.width, head.channels], data)?,
        None,
    )
}

/// Quantizes a [0, 1] value to a byte, clamping out-of-range values.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
