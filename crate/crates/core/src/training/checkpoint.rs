//! Binary checkpoint container.
//!
//! ```text
//! magic "TDRCKPT\0" | version u32
//! config:     u32 count, (u32 len + utf8 key, u32 len + utf8 value)*
//! tensors:    u32 count, (u32 len + utf8 name, u32 rank, u64 extent*, f64 value*)*
//! optimizer:  u8 present, [u64 step, u32 count, (u64 len, f64 m*, f64 v*)*]
//! state:      u64 rng seed, u64 epochs done, u64 count, f64 loss*
//! crc32 of everything above, u32
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TDRCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
    pub rng_seed: u64,
    pub epochs_done: u64,
    pub losses: Vec<f64>,
}

impl Checkpoint {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut w, self.config.len());
        for (k, v) in &self.config {
            put_str(&mut w, k);
            put_str(&mut w, v);
        }
        put_u32(&mut w, self.tensors.len());
        for (name, t) in &self.tensors {
            put_str(&mut w, name);
            put_u32(&mut w, t.rank());
            for &e in t.shape() {
                w.extend_from_slice(&(e as u64).to_le_bytes());
            }
            put_f64s(&mut w, t.data());
        }
        match &self.optimizer {
            None => w.push(0),
            Some(o) => {
                w.push(1);
                w.extend_from_slice(&o.step.to_le_bytes());
                put_u32(&mut w, o.m.len());
                for (m, v) in o.m.iter().zip(&o.v) {
                    w.extend_from_slice(&(m.len() as u64).to_le_bytes());
                    put_f64s(&mut w, m);
                    put_f64s(&mut w, v);
                }
            }
        }
        w.extend_from_slice(&self.rng_seed.to_le_bytes());
        w.extend_from_slice(&self.epochs_done.to_le_bytes());
        w.extend_from_slice(&(self.losses.len() as u64).to_le_bytes());
        put_f64s(&mut w, &self.losses);
        let crc = crc32fast::hash(&w);
        w.extend_from_slice(&crc.to_le_bytes());
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(Error::Checkpoint(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let n = r.u32()? as usize;
        let mut config = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            config.push((r.string()?, r.string()?));
        }
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.len_u64()?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .ok_or_else(|| r.err("tensor extents overflow"))?;
            let data = r.f64s(len)?;
            let t = Tensor::new(&shape, data).map_err(|e| r.err(&format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let count = r.u32()? as usize;
                let (mut m, mut v) = (Vec::new(), Vec::new());
                for _ in 0..count {
                    let len = r.len_u64()?;
                    m.push(r.f64s(len)?);
                    v.push(r.f64s(len)?);
                }
                Some(OptimizerState { step, m, v })
            }
            other => return Err(r.err(&format!("bad optimizer flag {other}"))),
        };
        let rng_seed = r.u64()?;
        let epochs_done = r.u64()?;
        let count = r.len_u64()?;
        let losses = r.f64s(count)?;
        if r.pos != body.len() {
            return Err(r.err("trailing bytes before checksum"));
        }
        Ok(Checkpoint {
            config,
            tensors,
            optimizer,
            rng_seed,
            epochs_done,
            losses,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn put_u32(w: &mut Vec<u8>, v: usize) {
    w.extend_from_slice(&u32::try_from(v).expect("count fits in u32").to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len());
    w.extend_from_slice(s.as_bytes());
}

fn put_f64s(w: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Checkpoint(format!("{msg} at byte {}", self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A u64 count, bounded by what the remaining bytes could hold.
    fn len_u64(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.buf.len())
            .ok_or_else(|| self.err(&format!("implausible length {v}")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?.to_vec();
        String::from_utf8(bytes).map_err(|_| self.err("invalid utf-8"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: vec![("model".into(), "ae".into()), ("k".into(), "v=1".into())],
            tensors: vec![
                ("a".into(), Tensor::new(&[2, 2], vec![1.0, -0.5, 1e-300, 3.25]).unwrap()),
                ("b".into(), Tensor::scalar(f64::MIN_POSITIVE)),
            ],
            optimizer: Some(OptimizerState {
                step: 3,
                m: vec![vec![0.1; 4], vec![0.2]],
                v: vec![vec![0.3; 4], vec![0.4]],
            }),
            rng_seed: 9,
            epochs_done: 2,
            losses: vec![0.5, 0.25],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn detects_corruption() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
        let mut bytes = sample().to_bytes();
        bytes[20] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(&sample().to_bytes()[..30]).is_err());
    }

    #[test]
    fn rejects_other_versions() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 2;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }
}
