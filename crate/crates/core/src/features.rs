//! DCFT feature container and a synthetic feature generator.
//!
//! ```text
//! "DCFT" | utterance count u32
//! per utterance: id length u16 | UTF-8 id | T0 u32 | D0 u32 | f32 × T0·D0 (row-major)
//! ```

use std::path::Path;

use crate::encoder::weights::ByteReader;
use crate::error::{Error, Result};
use crate::rng::XorShift64;
use crate::tensor::Matrix;

pub const FEATURES_MAGIC: &[u8; 4] = b"DCFT";

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Matrix<f32>,
}

pub fn features_to_bytes(utterances: &[Utterance]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&(utterances.len() as u32).to_le_bytes());
    for u in utterances {
        let id_len = u16::try_from(u.id.len())
            .map_err(|_| Error::Format(format!("utterance id of {} bytes is too long", u.id.len())))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(u.id.as_bytes());
        out.extend_from_slice(&(u.features.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(u.features.cols() as u32).to_le_bytes());
        for &v in u.features.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<Vec<Utterance>> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != FEATURES_MAGIC {
        return Err(Error::Format("not a DCFT feature file".into()));
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let id_len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| Error::Format("utterance id is not UTF-8".into()))?
            .to_owned();
        let t0 = r.u32()? as usize;
        let d0 = r.u32()? as usize;
        let n = t0
            .checked_mul(d0)
            .ok_or_else(|| Error::Format("feature size overflow".into()))?;
        let features = Matrix::from_vec(t0, d0, r.f32s(n)?)?;
        out.push(Utterance { id, features });
    }
    if !r.is_done() {
        return Err(Error::Format("trailing bytes after last utterance".into()));
    }
    Ok(out)
}

pub fn save_features(path: impl AsRef<Path>, utterances: &[Utterance]) -> Result<()> {
    std::fs::write(path, features_to_bytes(utterances)?)?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    features_from_bytes(&std::fs::read(path)?)
}

/// `count` utterances of uniform noise in `[-1, 1)`, ids `utt0000`, `utt0001`, ….
pub fn synthetic_features(count: usize, frames: usize, dims: usize, seed: u64) -> Vec<Utterance> {
    let mut rng = XorShift64::new(seed);
    (0..count)
        .map(|i| Utterance {
            id: format!("utt{i:04}"),
            features: Matrix::from_fn(frames, dims, |_, _| rng.uniform(-1.0, 1.0) as f32),
        })
        .collect()
}
