//! Sequential (macaron) and parallel Conformer blocks.

use crate::conv::{conv_branch_with, ConvCache, ConvMode, ConvModuleParams};
use crate::error::{shape_err, Result};
use crate::masking::AttentionMask;
use crate::scalar::Scalar;
use crate::tensor::{layer_norm, linear, swish, Matrix, LAYER_NORM_EPS};

use super::attention::{mhsa, AttentionParams, KvCache};
use super::config::{BlockKind, MergeKind};

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams<S> {
    pub norm_gamma: Vec<S>,
    pub norm_beta: Vec<S>,
    pub w1: Matrix<S>,
    pub b1: Vec<S>,
    pub w2: Matrix<S>,
    pub b2: Vec<S>,
}

impl<S: Scalar> FeedForwardParams<S> {
    /// LN → linear → swish → linear.
    pub fn forward(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        let h = layer_norm(x, &self.norm_gamma, &self.norm_beta, S::from_f64(LAYER_NORM_EPS))?;
        linear(&swish(&linear(&h, &self.w1, &self.b1)?), &self.w2, &self.b2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    /// Leading half-step feed-forward; always present in sequential blocks.
    pub ff1: Option<FeedForwardParams<S>>,
    pub mhsa_norm_gamma: Vec<S>,
    pub mhsa_norm_beta: Vec<S>,
    pub attention: AttentionParams<S>,
    pub conv: ConvModuleParams<S>,
    /// Concat-merge projection (2d → d) of parallel blocks.
    pub merge: Option<(Matrix<S>, Vec<S>)>,
    pub ff2: FeedForwardParams<S>,
    pub final_norm_gamma: Vec<S>,
    pub final_norm_beta: Vec<S>,
}

/// Static settings shared by every block of an encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSettings {
    pub kind: BlockKind,
    pub merge: MergeKind,
    pub conv_mode: ConvMode,
    pub heads: usize,
    /// dcconv chunk size; `None` means one chunk over the whole input.
    pub chunk: Option<usize>,
    pub parallel_chunks: bool,
}

/// Per-layer streaming state: attention keys/values and convolution history.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache<S> {
    pub kv: KvCache<S>,
    pub conv: ConvCache<S>,
}

impl<S: Scalar> LayerCache<S> {
    pub fn fresh(d_model: usize, kv_capacity: Option<usize>, conv_depth: usize) -> Self {
        Self {
            kv: KvCache::new(d_model, kv_capacity),
            conv: ConvCache::fresh(conv_depth, d_model),
        }
    }

    /// Folds the first `frames` rows of a block trace into the cache.
    pub fn advance(&mut self, trace: &BlockOutput<S>, frames: usize) -> Result<()> {
        self.kv.push(
            &trace.keys.slice_rows(0, frames),
            &trace.values.slice_rows(0, frames),
        )?;
        self.conv.advance(&trace.depthwise_input.slice_rows(0, frames))
    }
}

/// Block output plus the per-frame quantities streaming caches are built from.
#[derive(Debug, Clone)]
pub struct BlockOutput<S> {
    pub output: Matrix<S>,
    pub keys: Matrix<S>,
    pub values: Matrix<S>,
    pub depthwise_input: Matrix<S>,
}

fn half_step<S: Scalar>(x: &Matrix<S>, ff: &FeedForwardParams<S>) -> Result<Matrix<S>> {
    let half = S::from_f64(0.5);
    x.add(&ff.forward(x)?.scale(half))
}

/// Runs one block and keeps the intermediate keys, values and depthwise
/// inputs for cache maintenance.
pub fn block_forward_traced<S: Scalar>(
    x: &Matrix<S>,
    mask: &AttentionMask,
    layer: &LayerParams<S>,
    settings: &BlockSettings,
    cache: Option<&LayerCache<S>>,
    offset: usize,
) -> Result<BlockOutput<S>> {
    let eps = S::from_f64(LAYER_NORM_EPS);
    let kv = cache.map(|c| &c.kv);
    let conv_cache = cache.map(|c| &c.conv);

    let x1 = match &layer.ff1 {
        Some(ff) => half_step(x, ff)?,
        None => x.clone(),
    };
    let attn_in = layer_norm(&x1, &layer.mhsa_norm_gamma, &layer.mhsa_norm_beta, eps)?;
    let attn = mhsa(&attn_in, mask, &layer.attention, settings.heads, kv, offset)?;

    let (mixed, depthwise_input) = match settings.kind {
        BlockKind::Sequential => {
            let x2 = x1.add(&attn.output)?;
            let conv = conv_branch_with(
                &x2,
                &layer.conv,
                settings.conv_mode,
                settings.chunk,
                conv_cache,
                settings.parallel_chunks,
            )?;
            (x2.add(&conv.output)?, conv.depthwise_input)
        }
        BlockKind::Parallel => {
            let conv = conv_branch_with(
                &x1,
                &layer.conv,
                settings.conv_mode,
                settings.chunk,
                conv_cache,
                settings.parallel_chunks,
            )?;
            let merged = match (settings.merge, &layer.merge) {
                (MergeKind::Concat, Some((w, b))) => linear(&attn.output.hstack(&conv.output)?, w, b)?,
                (MergeKind::Concat, None) => {
                    return Err(shape_err!("concat merge requires merge weights"))
                }
                (MergeKind::Sum, _) => attn.output.add(&conv.output)?,
            };
            (x1.add(&merged)?, conv.depthwise_input)
        }
    };

    let x3 = half_step(&mixed, &layer.ff2)?;
    let output = layer_norm(&x3, &layer.final_norm_gamma, &layer.final_norm_beta, eps)?;
    Ok(BlockOutput {
        output,
        keys: attn.keys,
        values: attn.values,
        depthwise_input,
    })
}

/// Runs one block and returns its output with caches advanced over every input frame.
pub fn block_forward<S: Scalar>(
    x: &Matrix<S>,
    mask: &AttentionMask,
    layer: &LayerParams<S>,
    settings: &BlockSettings,
    cache: Option<&LayerCache<S>>,
    offset: usize,
) -> Result<(Matrix<S>, LayerCache<S>)> {
    let trace = block_forward_traced(x, mask, layer, settings, cache, offset)?;
    let mut next = match cache {
        Some(c) => c.clone(),
        None => LayerCache::fresh(
            x.cols(),
            None,
            settings.conv_mode.cache_depth(layer.conv.kernel_size()),
        ),
    };
    next.advance(&trace, x.rows())?;
    Ok((trace.output, next))
}
