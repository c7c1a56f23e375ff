//! MNIST IDX containers: big-endian magic, big-endian u32 extents, raw bytes.

use std::fs;
use std::path::Path;

use super::ImageBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn parse_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn be_u32(path: &Path, bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| parse_err(path, offset, "truncated header"))
}

fn check_len(path: &Path, bytes: &[u8], header: usize, payload: usize) -> Result<()> {
    let want = header + payload;
    if bytes.len() < want {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("truncated: header declares {want} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > want {
        return Err(parse_err(
            path,
            want,
            format!("{} trailing bytes after declared payload", bytes.len() - want),
        ));
    }
    Ok(())
}

/// Returns `(count, rows, cols, pixel bytes)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = be_u32(path, &bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(parse_err(path, 0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(path, &bytes, 4)? as usize;
    let rows = be_u32(path, &bytes, 8)? as usize;
    let cols = be_u32(path, &bytes, 12)? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(parse_err(path, 4, "zero extent in header"));
    }
    check_len(path, &bytes, 16, n * rows * cols)?;
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = be_u32(path, &bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(parse_err(path, 0, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(path, &bytes, 4)? as usize;
    check_len(path, &bytes, 8, n)?;
    Ok(bytes[8..].to_vec())
}

/// Loads an image/label file pair; bytes are scaled to [0, 1] by 1/255.
pub fn load_mnist_idx(images: &Path, labels: Option<&Path>) -> Result<ImageBatch> {
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let labels = match labels {
        Some(p) => {
            let l = read_idx_labels(p)?;
            if l.len() != n {
                return Err(parse_err(
                    p,
                    4,
                    format!("{} labels for {n} images in {}", l.len(), images.display()),
                ));
            }
            Some(l)
        }
        None => None,
    };
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageBatch::new(Tensor::new(&[n, rows, cols, 1], data)?, labels)
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_endpoints_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&ip, 2, 2, &[0, 255, 51, 102, 255, 255, 0, 0]).unwrap();
        write_idx_labels(&lp, &[3, 7]).unwrap();
        let b = load_mnist_idx(&ip, Some(&lp)).unwrap();
        assert_eq!((b.n(), b.height(), b.width(), b.channels()), (2, 2, 2, 1));
        assert_eq!(b.image(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(b.labels(), Some(&[3u8, 7][..]));
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img");
        let mut bytes = 0xDEAD_BEEFu32.to_be_bytes().to_vec();
        bytes.extend_from_slice(&[0; 12]);
        fs::write(&p, bytes).unwrap();
        let err = load_mnist_idx(&p, None).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img");
        write_idx_images(&p, 2, 2, &[1; 8]).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Parse { .. })));
        bytes.extend_from_slice(&[0, 0]);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn rejects_label_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&ip, 1, 1, &[1, 2, 3]).unwrap();
        write_idx_labels(&lp, &[0, 1]).unwrap();
        assert!(matches!(load_mnist_idx(&ip, Some(&lp)), Err(Error::Parse { .. })));
    }
}
