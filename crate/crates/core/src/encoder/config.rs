use serde::{Deserialize, Serialize};

use crate::conv::ConvMode;
use crate::error::{Error, Result};
use crate::scalar::Precision;

/// Ordering of the attention and convolution sub-layers inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// Macaron Conformer: ½FF → MHSA → conv → ½FF → LN.
    #[default]
    Sequential,
    /// Attention and convolution read the same input side by side.
    Parallel,
}

/// How the two branches of a parallel block are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    /// Concatenate to T×2d and project back to T×d.
    #[default]
    Concat,
    Sum,
}

impl std::str::FromStr for BlockKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(BlockKind::Sequential),
            "parallel" => Ok(BlockKind::Parallel),
            other => Err(format!("unknown block kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub kernel_size: usize,
    pub block_kind: BlockKind,
    pub conv_mode: ConvMode,
    pub subsample_factor: usize,
    /// Feature dimension of the input frames (before subsampling).
    pub input_dim: usize,
    /// CTC vocabulary size including the blank at index 0.
    pub vocab_size: usize,
    pub merge: MergeKind,
    /// Adds a leading half-step feed-forward to parallel blocks.
    pub parallel_macaron: bool,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for EncoderConfig {
    /// Desk-scale configuration: 4 layers × 64 dims × 4 heads, kernel 15.
    fn default() -> Self {
        Self {
            layers: 4,
            d_model: 64,
            heads: 4,
            ff_dim: 128,
            kernel_size: 15,
            block_kind: BlockKind::Sequential,
            conv_mode: ConvMode::DcConv,
            subsample_factor: 4,
            input_dim: 80,
            vocab_size: 32,
            merge: MergeKind::Concat,
            parallel_macaron: false,
            precision: Precision::Single,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// 12 layers × 512 dims × 8 heads with kernel 31.
    pub fn large() -> Self {
        Self {
            layers: 12,
            d_model: 512,
            heads: 8,
            ff_dim: 2048,
            kernel_size: 31,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.layers == 0 {
            return fail("encoder needs at least one layer".into());
        }
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} is not divisible into {} heads",
                self.d_model, self.heads
            ));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return fail(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        if self.subsample_factor == 0 {
            return fail("subsample factor must be at least 1".into());
        }
        if self.ff_dim == 0 || self.input_dim == 0 {
            return fail("ff_dim and input_dim must be positive".into());
        }
        if self.vocab_size < 2 {
            return fail("vocabulary needs the blank plus at least one token".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Whether blocks carry the leading feed-forward.
    pub fn has_leading_ff(&self) -> bool {
        self.block_kind == BlockKind::Sequential || self.parallel_macaron
    }
}
