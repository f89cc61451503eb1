//! Flat run configuration: JSON file first, command-line flags on top.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dcstream::conv::ConvMode;
use dcstream::encoder::{BlockKind, EncoderConfig, MergeKind};
use dcstream::masking::{ms_to_frames, ChunkSpec, LeftContext, DEFAULT_FRAME_MS};
use dcstream::Precision;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Attention left context in milliseconds, or unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeftMs {
    Ms(f64),
    All,
}

impl LeftMs {
    pub fn to_context(self, frame_ms: f64) -> anyhow::Result<LeftContext> {
        Ok(match self {
            LeftMs::Ms(ms) => LeftContext::Frames(ms_to_frames(ms, frame_ms)?),
            LeftMs::All => LeftContext::All,
        })
    }

    pub fn ms(self) -> Option<f64> {
        match self {
            LeftMs::Ms(ms) => Some(ms),
            LeftMs::All => None,
        }
    }
}

impl fmt::Display for LeftMs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeftMs::Ms(ms) => write!(f, "{ms}"),
            LeftMs::All => f.write_str("all"),
        }
    }
}

impl std::str::FromStr for LeftMs {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(LeftMs::All);
        }
        s.parse::<f64>()
            .map(LeftMs::Ms)
            .map_err(|_| format!("left context must be milliseconds or \"all\", got '{s}'"))
    }
}

impl Serialize for LeftMs {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LeftMs::Ms(ms) => s.serialize_f64(*ms),
            LeftMs::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for LeftMs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Ms(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Ms(ms) => Ok(LeftMs::Ms(ms)),
            Raw::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub kernel_size: usize,
    pub block_kind: BlockKind,
    pub conv_mode: ConvMode,
    pub subsample_factor: usize,
    pub input_dim: usize,
    pub vocab_size: usize,
    pub merge: MergeKind,
    pub parallel_macaron: bool,

    pub chunk_ms: f64,
    pub overlap: f64,
    pub left_ctx_ms: LeftMs,
    pub frame_ms: f64,

    pub beam_size: usize,
    pub seed: u64,
    pub precision: Precision,

    pub weights: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        Self {
            layers: enc.layers,
            d_model: enc.d_model,
            heads: enc.heads,
            ff_dim: enc.ff_dim,
            kernel_size: enc.kernel_size,
            block_kind: enc.block_kind,
            conv_mode: enc.conv_mode,
            subsample_factor: enc.subsample_factor,
            input_dim: enc.input_dim,
            vocab_size: enc.vocab_size,
            merge: enc.merge,
            parallel_macaron: enc.parallel_macaron,
            chunk_ms: 640.0,
            overlap: 0.5,
            left_ctx_ms: LeftMs::Ms(1280.0),
            frame_ms: DEFAULT_FRAME_MS,
            beam_size: dcstream::ctc::DEFAULT_BEAM,
            seed: 0,
            precision: Precision::Single,
            weights: None,
            features: None,
            transcripts: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            ff_dim: self.ff_dim,
            kernel_size: self.kernel_size,
            block_kind: self.block_kind,
            conv_mode: self.conv_mode,
            subsample_factor: self.subsample_factor,
            input_dim: self.input_dim,
            vocab_size: self.vocab_size,
            merge: self.merge,
            parallel_macaron: self.parallel_macaron,
            precision: self.precision,
            seed: self.seed,
        }
    }

    pub fn chunk_spec(&self) -> anyhow::Result<ChunkSpec> {
        Ok(ChunkSpec::from_ms(
            self.chunk_ms,
            self.overlap,
            self.left_ctx_ms.ms(),
            self.frame_ms,
        )?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.encoder().validate()?;
        self.chunk_spec()?;
        if self.beam_size == 0 {
            bail!("beam_size must be at least 1");
        }
        Ok(())
    }
}
