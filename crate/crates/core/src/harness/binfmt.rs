//! Flat little-endian binary matrices.
//!
//! Every file is a 4-byte magic followed by `u32` dimensions and then the
//! values as `f32`, row-major:
//!
//! ```text
//! FEAT  rows=T  cols=d_k   T*d_k floats          query/key features
//! ATTN  rows=T  cols=T     T*T floats            attention weights
//! PROJ  d_in d_h d_out     W1 (d_in x d_h), b1 (d_h), W2 (d_h x d_out), b2 (d_out)
//! ```
//!
//! A `T x T` attention dump therefore occupies `12 + 4*T*T` bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::attention::{AttentionMatrix, FeatureMatrix, ProjectorWeights};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FEAT";
pub const ATTENTION_MAGIC: &[u8; 4] = b"ATTN";
pub const PROJECTOR_MAGIC: &[u8; 4] = b"PROJ";

/// Row sums of reloaded attention are checked at `f32` resolution.
const F32_ROW_TOL: f64 = 1e-5;

fn push_matrix(buf: &mut Vec<u8>, m: &Array2<f64>) {
    for v in m.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn header(magic: &[u8; 4], dims: &[usize]) -> Vec<u8> {
    let mut buf = magic.to_vec();
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf
}

struct Decoder<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn new(path: &'a Path, bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let d = Self { path, bytes, pos: 4 };
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(d.bad(format!("missing {:?} magic", String::from_utf8_lossy(magic))));
        }
        Ok(d)
    }

    fn bad(&self, msg: String) -> Error {
        Error::BadFile {
            path: self.path.to_owned(),
            msg,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.bad(format!("truncated at byte {}", self.bytes.len()))),
        }
    }

    fn dim(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| self.bad("dimensions overflow".into()))?;
        let b = self.take(bytes)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| self.bad("dimensions overflow".into()))?;
        let v = self.floats(n)?;
        Ok(Array2::from_shape_vec((rows, cols), v).expect("length checked"))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.bad(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_features(f: &FeatureMatrix) -> Vec<u8> {
    let mut buf = header(FEATURE_MAGIC, &[f.frames(), f.dim()]);
    push_matrix(&mut buf, f.values());
    buf
}

pub fn encode_attention(a: &AttentionMatrix) -> Vec<u8> {
    let mut buf = header(ATTENTION_MAGIC, &[a.frames(), a.frames()]);
    push_matrix(&mut buf, a.values());
    buf
}

pub fn encode_projector(w: &ProjectorWeights) -> Vec<u8> {
    let mut buf = header(PROJECTOR_MAGIC, &w.dims());
    push_matrix(&mut buf, &w.w1);
    buf.extend(w.b1.iter().flat_map(|v| (*v as f32).to_le_bytes()));
    push_matrix(&mut buf, &w.w2);
    buf.extend(w.b2.iter().flat_map(|v| (*v as f32).to_le_bytes()));
    buf
}

pub fn write_features(path: impl AsRef<Path>, f: &FeatureMatrix) -> Result<()> {
    Ok(fs::write(path, encode_features(f))?)
}

pub fn write_attention(path: impl AsRef<Path>, a: &AttentionMatrix) -> Result<()> {
    Ok(fs::write(path, encode_attention(a))?)
}

pub fn write_projector(path: impl AsRef<Path>, w: &ProjectorWeights) -> Result<()> {
    Ok(fs::write(path, encode_projector(w))?)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut d = Decoder::new(path, &bytes, FEATURE_MAGIC)?;
    let (rows, cols) = (d.dim()?, d.dim()?);
    let m = d.matrix(rows, cols)?;
    d.finish()?;
    FeatureMatrix::new(m).map_err(|e| Error::BadFile {
        path: path.to_owned(),
        msg: e.to_string(),
    })
}

/// Loads an attention dump and renormalizes each row in `f64`.
pub fn read_attention(path: impl AsRef<Path>) -> Result<AttentionMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut d = Decoder::new(path, &bytes, ATTENTION_MAGIC)?;
    let (rows, cols) = (d.dim()?, d.dim()?);
    if rows != cols {
        return Err(d.bad(format!("attention must be square, found {rows} x {cols}")));
    }
    let mut m = d.matrix(rows, cols)?;
    d.finish()?;
    for (t, mut row) in m.rows_mut().into_iter().enumerate() {
        let sum = row.sum();
        if !((sum - 1.0).abs() <= F32_ROW_TOL) || row.iter().any(|&v| v < 0.0) {
            return Err(Error::BadFile {
                path: path.to_owned(),
                msg: Error::NotRowStochastic { row: t, sum }.to_string(),
            });
        }
        row /= sum;
    }
    AttentionMatrix::new(m)
}

pub fn read_projector(path: impl AsRef<Path>) -> Result<ProjectorWeights> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut d = Decoder::new(path, &bytes, PROJECTOR_MAGIC)?;
    let (d_in, d_h, d_out) = (d.dim()?, d.dim()?, d.dim()?);
    let w1 = d.matrix(d_in, d_h)?;
    let b1 = d.floats(d_h)?;
    let w2 = d.matrix(d_h, d_out)?;
    let b2 = d.floats(d_out)?;
    d.finish()?;
    ProjectorWeights::new(w1, b1, w2, b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn attention_dump_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.attn");
        write_attention(&p, &AttentionMatrix::uniform(598)).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 12 + 4 * 598 * 598);
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"ATTN");
        assert_eq!(&bytes[4..8], &598u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &598u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &((1.0f64 / 598.0) as f32).to_le_bytes());
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        fs::write(&p, b"ATTN\x02\x00\x00\x00\x02\x00\x00\x00").unwrap();
        assert!(matches!(read_attention(&p), Err(Error::BadFile { .. })));
        assert!(matches!(read_features(&p), Err(Error::BadFile { .. })));
        let mut ok = encode_features(&FeatureMatrix::new(Array2::ones((2, 3))).unwrap());
        ok.push(0);
        fs::write(&p, &ok).unwrap();
        assert!(read_features(&p).is_err());
    }

    #[test]
    fn projector_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.proj");
        let w = ProjectorWeights::seeded([6, 4, 3], 9);
        write_projector(&p, &w).unwrap();
        let r = read_projector(&p).unwrap();
        assert_eq!(r.dims(), [6, 4, 3]);
        for (a, b) in r.w1.iter().zip(&w.w1) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(fs::metadata(&p).unwrap().len() as usize, 16 + 4 * (6 * 4 + 4 + 4 * 3 + 3));
    }

    proptest! {
        #[test]
        fn features_round_trip_at_f32(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| {
                ((seed as usize + 31 * i + 7 * j) % 97) as f64 / 13.0 - 3.0
            });
            let f = FeatureMatrix::new(m.mapv(|v| v as f32 as f64)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("f.feat");
            write_features(&p, &f).unwrap();
            let back = read_features(&p).unwrap();
            prop_assert_eq!(back.values(), f.values());
        }
    }
}
