//! Named weight tensors, deterministic initialisation, and the DCWT container.
//!
//! DCWT layout (all integers little-endian):
//!
//! ```text
//! "DCWT" | version u16 | tensor count u32
//! per tensor: name length u16 | UTF-8 name | rank u8 | dims u32 × rank | f32 × Πdims
//! ```
//!
//! Tensors are written in lexicographic name order, so equal weights always
//! produce equal bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::XorShift64;

use super::config::{BlockKind, EncoderConfig, MergeKind};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DCWT";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "{} values for dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone)]
pub(crate) struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

fn push(specs: &mut Vec<TensorSpec>, name: String, dims: &[usize], init: Init) {
    specs.push(TensorSpec {
        name,
        dims: dims.to_vec(),
        init,
    });
}

fn feed_forward(specs: &mut Vec<TensorSpec>, prefix: &str, d: usize, ff: usize) {
    push(specs, format!("{prefix}.norm_gamma"), &[d], Init::Ones);
    push(specs, format!("{prefix}.norm_beta"), &[d], Init::Zeros);
    push(specs, format!("{prefix}.w1"), &[d, ff], Init::Uniform { fan_in: d });
    push(specs, format!("{prefix}.b1"), &[ff], Init::Uniform { fan_in: d });
    push(specs, format!("{prefix}.w2"), &[ff, d], Init::Uniform { fan_in: ff });
    push(specs, format!("{prefix}.b2"), &[d], Init::Uniform { fan_in: ff });
}

/// Every tensor a config needs, in initialisation order. The CTC head comes last.
pub(crate) fn tensor_layout(config: &EncoderConfig) -> Vec<TensorSpec> {
    let d = config.d_model;
    let stacked = config.subsample_factor * config.input_dim;
    let mut specs = Vec::new();
    push(&mut specs, "subsample.w".into(), &[stacked, d], Init::Uniform { fan_in: stacked });
    push(&mut specs, "subsample.b".into(), &[d], Init::Uniform { fan_in: stacked });

    for i in 0..config.layers {
        let p = format!("layer.{i}");
        if config.has_leading_ff() {
            feed_forward(&mut specs, &format!("{p}.ff1"), d, config.ff_dim);
        }
        push(&mut specs, format!("{p}.mhsa.norm_gamma"), &[d], Init::Ones);
        push(&mut specs, format!("{p}.mhsa.norm_beta"), &[d], Init::Zeros);
        for proj in ["q", "k", "v", "o"] {
            push(&mut specs, format!("{p}.mhsa.w{proj}"), &[d, d], Init::Uniform { fan_in: d });
            push(&mut specs, format!("{p}.mhsa.b{proj}"), &[d], Init::Uniform { fan_in: d });
        }
        let k = config.kernel_size;
        push(&mut specs, format!("{p}.conv.norm_gamma"), &[d], Init::Ones);
        push(&mut specs, format!("{p}.conv.norm_beta"), &[d], Init::Zeros);
        push(&mut specs, format!("{p}.conv.pw_in_w"), &[d, 2 * d], Init::Uniform { fan_in: d });
        push(&mut specs, format!("{p}.conv.pw_in_b"), &[2 * d], Init::Uniform { fan_in: d });
        push(&mut specs, format!("{p}.conv.dw_w"), &[k, d], Init::Uniform { fan_in: k });
        push(&mut specs, format!("{p}.conv.bn_mean"), &[d], Init::Zeros);
        push(&mut specs, format!("{p}.conv.bn_scale"), &[d], Init::Ones);
        push(&mut specs, format!("{p}.conv.bn_shift"), &[d], Init::Zeros);
        push(&mut specs, format!("{p}.conv.pw_out_w"), &[d, d], Init::Uniform { fan_in: d });
        push(&mut specs, format!("{p}.conv.pw_out_b"), &[d], Init::Uniform { fan_in: d });
        if config.block_kind == BlockKind::Parallel && config.merge == MergeKind::Concat {
            push(&mut specs, format!("{p}.merge.w"), &[2 * d, d], Init::Uniform { fan_in: 2 * d });
            push(&mut specs, format!("{p}.merge.b"), &[d], Init::Uniform { fan_in: 2 * d });
        }
        feed_forward(&mut specs, &format!("{p}.ff2"), d, config.ff_dim);
        push(&mut specs, format!("{p}.final_norm.gamma"), &[d], Init::Ones);
        push(&mut specs, format!("{p}.final_norm.beta"), &[d], Init::Zeros);
    }

    let v = config.vocab_size;
    push(&mut specs, "head.w".into(), &[d, v], Init::Uniform { fan_in: d });
    push(&mut specs, "head.b".into(), &[v], Init::Uniform { fan_in: d });
    specs
}

/// Named tensor collection. Names follow `layer.{index}.{sublayer}.{param}`,
/// plus `subsample.*` and the optional CTC projection `head.*`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncoderWeights {
    tensors: BTreeMap<String, WeightTensor>,
}

impl EncoderWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: WeightTensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut WeightTensor> {
        self.tensors.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<WeightTensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &WeightTensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut WeightTensor)> {
        self.tensors.iter_mut()
    }

    pub fn has_head(&self) -> bool {
        self.tensors.contains_key("head.w") && self.tensors.contains_key("head.b")
    }

    /// Checks that every tensor the config needs is present with the right
    /// shape and finite values. The head is optional.
    pub fn validate(&self, config: &EncoderConfig) -> Result<()> {
        config.validate()?;
        for spec in tensor_layout(config) {
            let is_head = spec.name.starts_with("head.");
            let Some(t) = self.tensors.get(&spec.name) else {
                if is_head && !self.tensors.keys().any(|k| k.starts_with("head.")) {
                    continue;
                }
                return Err(Error::Config(format!("missing weight tensor '{}'", spec.name)));
            };
            if t.dims != spec.dims {
                return Err(Error::Shape(format!(
                    "tensor '{}' has dims {:?}, expected {:?}",
                    spec.name, t.dims, spec.dims
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("tensor '{}' has non-finite values", spec.name)));
            }
        }
        Ok(())
    }

    /// Serialises into the DCWT container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::Format("not a DCWT weight file".into()));
        }
        let version = r.u16()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!("unsupported DCWT version {version}")));
        }
        let count = r.u32()?;
        let mut weights = Self::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u8()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = r.f32s(n)?;
            weights.insert(name, WeightTensor { dims, data });
        }
        if !r.is_done() {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(weights)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Deterministic initialisation: tensors are drawn in layout order from one
/// xorshift stream seeded with `seed`.
pub fn init_weights(config: &EncoderConfig, seed: u64) -> Result<EncoderWeights> {
    config.validate()?;
    let mut rng = XorShift64::new(seed);
    let mut weights = EncoderWeights::new();
    for spec in tensor_layout(config) {
        let n: usize = spec.dims.iter().product();
        let data = match spec.init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect()
            }
            Init::Ones => vec![1.0; n],
            Init::Zeros => vec![0.0; n],
        };
        weights.insert(spec.name, WeightTensor { dims: spec.dims, data });
    }
    Ok(weights)
}

/// Little-endian cursor shared by the binary container readers.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = EncoderConfig::default();
        let a = init_weights(&cfg, 3).unwrap();
        let b = init_weights(&cfg, 3).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = init_weights(&cfg, 4).unwrap();
        assert!(a.iter().zip(c.iter()).any(|((_, x), (_, y))| x != y));
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let cfg = EncoderConfig {
            d_model: 100,
            heads: 4,
            layers: 1,
            ..Default::default()
        };
        let w = init_weights(&cfg, 1).unwrap();
        let wq = w.get("layer.0.mhsa.wq").unwrap();
        assert!(wq.data.iter().all(|v| v.abs() <= 0.1f32));
        assert!(wq.data.iter().any(|v| v.abs() > 0.05));
    }

    #[test]
    fn layout_follows_block_kind() {
        let seq = init_weights(&EncoderConfig::default(), 0).unwrap();
        assert!(seq.get("layer.0.ff1.w1").is_some());
        assert!(seq.get("layer.0.merge.w").is_none());
        let par = init_weights(
            &EncoderConfig {
                block_kind: BlockKind::Parallel,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert!(par.get("layer.0.ff1.w1").is_none());
        assert_eq!(par.get("layer.3.merge.w").unwrap().dims, vec![128, 64]);
        assert!(par.get("head.w").is_some());
    }

    #[test]
    fn dcwt_round_trip_and_layout() {
        let mut w = EncoderWeights::new();
        w.insert("a", WeightTensor::new(vec![2], vec![1.0, -2.5]).unwrap());
        let bytes = w.to_bytes();
        let expect: Vec<u8> = [
            b"DCWT".to_vec(),
            1u16.to_le_bytes().to_vec(),
            1u32.to_le_bytes().to_vec(),
            1u16.to_le_bytes().to_vec(),
            b"a".to_vec(),
            vec![1u8],
            2u32.to_le_bytes().to_vec(),
            1.0f32.to_le_bytes().to_vec(),
            (-2.5f32).to_le_bytes().to_vec(),
        ]
        .concat();
        assert_eq!(bytes, expect);
        assert_eq!(EncoderWeights::from_bytes(&bytes).unwrap(), w);

        let full = init_weights(&EncoderConfig::default(), 11).unwrap();
        assert_eq!(EncoderWeights::from_bytes(&full.to_bytes()).unwrap(), full);
    }

    #[test]
    fn dcwt_rejects_corruption() {
        let w = init_weights(&EncoderConfig::default(), 1).unwrap();
        let bytes = w.to_bytes();
        assert!(EncoderWeights::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EncoderWeights::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(EncoderWeights::from_bytes(&extra).is_err());
    }

    #[test]
    fn validate_reports_missing_and_misshapen() {
        let cfg = EncoderConfig::default();
        let mut w = init_weights(&cfg, 0).unwrap();
        w.validate(&cfg).unwrap();

        let mut headless = w.clone();
        headless.remove("head.w");
        headless.remove("head.b");
        headless.validate(&cfg).unwrap();
        assert!(!headless.has_head());

        w.get_mut("layer.1.conv.dw_w").unwrap().dims = vec![64, 15];
        assert!(matches!(w.validate(&cfg), Err(Error::Shape(_))));
        w.remove("layer.1.conv.dw_w");
        assert!(matches!(w.validate(&cfg), Err(Error::Config(_))));
    }
}
