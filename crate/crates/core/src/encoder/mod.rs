//! Conformer and parallel-Conformer encoder stacks.
//!
//! [`Encoder::forward`] is the offline reference: the whole utterance is run
//! under a chunk attention mask with dcconv chunks of the same size, which is
//! exactly what the streaming runtime must reproduce window by window.

pub mod attention;
pub mod block;
pub mod config;
pub mod weights;

use crate::conv::ConvModuleParams;
use crate::error::{shape_err, Error, Result};
use crate::masking::{chunk_mask, AttentionMask, LeftContext};
use crate::scalar::Scalar;
use crate::tensor::{linear, log_softmax_rows, swish, Matrix};

pub use attention::{mhsa, AttentionOutput, AttentionParams, KvCache};
pub use block::{
    block_forward, block_forward_traced, BlockOutput, BlockSettings, FeedForwardParams,
    LayerCache, LayerParams,
};
pub use config::{BlockKind, EncoderConfig, MergeKind};
pub use weights::{init_weights, EncoderWeights, WeightTensor};

/// Chunk size of an offline forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkSize {
    Frames(usize),
    /// Whole-utterance context: all-true mask, single-chunk convolution.
    Full,
}

/// Stacks `factor` consecutive frames and projects them with swish.
///
/// Output frame `t` reads input frames `[t·f, (t+1)·f)` only. Trailing input
/// frames that do not fill a group are ignored.
pub fn subsample<S: Scalar>(
    features: &Matrix<S>,
    weight: &Matrix<S>,
    bias: &[S],
    factor: usize,
) -> Result<Matrix<S>> {
    if factor == 0 {
        return Err(Error::Config("subsample factor must be at least 1".into()));
    }
    let stacked_dim = features.cols() * factor;
    if weight.rows() != stacked_dim {
        return Err(shape_err!(
            "subsample weight expects {} inputs, got {} ({} × {factor})",
            weight.rows(),
            stacked_dim,
            features.cols()
        ));
    }
    let frames = features.rows() / factor;
    if frames == 0 {
        return Ok(Matrix::zeros(0, weight.cols()));
    }
    let stacked = Matrix::from_vec(
        frames,
        stacked_dim,
        features.data()[..frames * stacked_dim].to_vec(),
    )?;
    Ok(swish(&linear(&stacked, weight, bias)?))
}

/// Typed encoder parameters at precision `S`.
#[derive(Debug, Clone)]
pub struct Encoder<S> {
    config: EncoderConfig,
    subsample_weight: Matrix<S>,
    subsample_bias: Vec<S>,
    layers: Vec<LayerParams<S>>,
    head: Option<(Matrix<S>, Vec<S>)>,
    parallel_chunks: bool,
}

struct Fetch<'a> {
    weights: &'a EncoderWeights,
}

impl Fetch<'_> {
    fn tensor(&self, name: &str) -> Result<&WeightTensor> {
        self.weights
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing weight tensor '{name}'")))
    }

    fn matrix<S: Scalar>(&self, name: &str) -> Result<Matrix<S>> {
        let t = self.tensor(name)?;
        let [rows, cols] = t.dims[..] else {
            return Err(shape_err!("tensor '{name}' is not rank 2"));
        };
        Matrix::from_vec(rows, cols, t.data.iter().map(|&v| S::from_f32(v)).collect())
    }

    fn vector<S: Scalar>(&self, name: &str) -> Result<Vec<S>> {
        let t = self.tensor(name)?;
        if t.dims.len() != 1 {
            return Err(shape_err!("tensor '{name}' is not rank 1"));
        }
        Ok(t.data.iter().map(|&v| S::from_f32(v)).collect())
    }

    fn feed_forward<S: Scalar>(&self, prefix: &str) -> Result<FeedForwardParams<S>> {
        Ok(FeedForwardParams {
            norm_gamma: self.vector(&format!("{prefix}.norm_gamma"))?,
            norm_beta: self.vector(&format!("{prefix}.norm_beta"))?,
            w1: self.matrix(&format!("{prefix}.w1"))?,
            b1: self.vector(&format!("{prefix}.b1"))?,
            w2: self.matrix(&format!("{prefix}.w2"))?,
            b2: self.vector(&format!("{prefix}.b2"))?,
        })
    }

    fn layer<S: Scalar>(&self, config: &EncoderConfig, i: usize) -> Result<LayerParams<S>> {
        let p = format!("layer.{i}");
        let ff1 = if config.has_leading_ff() {
            Some(self.feed_forward(&format!("{p}.ff1"))?)
        } else {
            None
        };
        let attention = AttentionParams {
            wq: self.matrix(&format!("{p}.mhsa.wq"))?,
            bq: self.vector(&format!("{p}.mhsa.bq"))?,
            wk: self.matrix(&format!("{p}.mhsa.wk"))?,
            bk: self.vector(&format!("{p}.mhsa.bk"))?,
            wv: self.matrix(&format!("{p}.mhsa.wv"))?,
            bv: self.vector(&format!("{p}.mhsa.bv"))?,
            wo: self.matrix(&format!("{p}.mhsa.wo"))?,
            bo: self.vector(&format!("{p}.mhsa.bo"))?,
        };
        let conv = ConvModuleParams {
            norm_gamma: self.vector(&format!("{p}.conv.norm_gamma"))?,
            norm_beta: self.vector(&format!("{p}.conv.norm_beta"))?,
            pw_in_weight: self.matrix(&format!("{p}.conv.pw_in_w"))?,
            pw_in_bias: self.vector(&format!("{p}.conv.pw_in_b"))?,
            depthwise: self.matrix(&format!("{p}.conv.dw_w"))?,
            bn_mean: self.vector(&format!("{p}.conv.bn_mean"))?,
            bn_scale: self.vector(&format!("{p}.conv.bn_scale"))?,
            bn_shift: self.vector(&format!("{p}.conv.bn_shift"))?,
            pw_out_weight: self.matrix(&format!("{p}.conv.pw_out_w"))?,
            pw_out_bias: self.vector(&format!("{p}.conv.pw_out_b"))?,
        };
        let merge = if config.block_kind == BlockKind::Parallel && config.merge == MergeKind::Concat {
            Some((
                self.matrix(&format!("{p}.merge.w"))?,
                self.vector(&format!("{p}.merge.b"))?,
            ))
        } else {
            None
        };
        Ok(LayerParams {
            ff1,
            mhsa_norm_gamma: self.vector(&format!("{p}.mhsa.norm_gamma"))?,
            mhsa_norm_beta: self.vector(&format!("{p}.mhsa.norm_beta"))?,
            attention,
            conv,
            merge,
            ff2: self.feed_forward(&format!("{p}.ff2"))?,
            final_norm_gamma: self.vector(&format!("{p}.final_norm.gamma"))?,
            final_norm_beta: self.vector(&format!("{p}.final_norm.beta"))?,
        })
    }
}

impl<S: Scalar> Encoder<S> {
    pub fn new(config: &EncoderConfig, weights: &EncoderWeights) -> Result<Self> {
        weights.validate(config)?;
        let fetch = Fetch { weights };
        let layers = (0..config.layers)
            .map(|i| fetch.layer(config, i))
            .collect::<Result<Vec<_>>>()?;
        let head = if weights.has_head() {
            Some((fetch.matrix("head.w")?, fetch.vector("head.b")?))
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            subsample_weight: fetch.matrix("subsample.w")?,
            subsample_bias: fetch.vector("subsample.b")?,
            layers,
            head,
            parallel_chunks: false,
        })
    }

    /// Convolve dcconv chunks on the rayon pool. Results are bitwise unchanged.
    pub fn with_parallel_chunks(mut self, parallel: bool) -> Self {
        self.parallel_chunks = parallel;
        self
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams<S>] {
        &self.layers
    }

    pub fn has_head(&self) -> bool {
        self.head.is_some()
    }

    pub(crate) fn settings(&self, chunk: Option<usize>) -> BlockSettings {
        BlockSettings {
            kind: self.config.block_kind,
            merge: self.config.merge,
            conv_mode: self.config.conv_mode,
            heads: self.config.heads,
            chunk,
            parallel_chunks: self.parallel_chunks,
        }
    }

    pub fn subsample(&self, features: &Matrix<S>) -> Result<Matrix<S>> {
        if features.rows() > 0 && features.cols() != self.config.input_dim {
            return Err(shape_err!(
                "features have {} dims, encoder expects {}",
                features.cols(),
                self.config.input_dim
            ));
        }
        subsample(
            &Matrix::from_vec(features.rows(), self.config.input_dim, features.data().to_vec())?,
            &self.subsample_weight,
            &self.subsample_bias,
            self.config.subsample_factor,
        )
    }

    /// Offline forward from input features.
    pub fn forward(&self, features: &Matrix<S>, chunk: ChunkSize, left: LeftContext) -> Result<Matrix<S>> {
        let x = self.subsample(features)?;
        self.forward_encoded(&x, chunk, left)
    }

    /// Offline forward from already subsampled encoder frames.
    pub fn forward_encoded(&self, x: &Matrix<S>, chunk: ChunkSize, left: LeftContext) -> Result<Matrix<S>> {
        if x.cols() != self.config.d_model {
            return Err(shape_err!(
                "encoder input has {} dims, expected {}",
                x.cols(),
                self.config.d_model
            ));
        }
        let frames = x.rows();
        if frames == 0 {
            return Ok(x.clone());
        }
        let (mask, conv_chunk) = match chunk {
            ChunkSize::Full => (AttentionMask::full(frames, frames), None),
            ChunkSize::Frames(c) => {
                if c == 0 {
                    return Err(Error::Config("chunk size must be at least one frame".into()));
                }
                (chunk_mask(frames, c, left), Some(c))
            }
        };
        let settings = self.settings(conv_chunk);
        let mut h = x.clone();
        for layer in &self.layers {
            h = block_forward_traced(&h, &mask, layer, &settings, None, 0)?.output;
        }
        Ok(h)
    }

    /// Per-frame CTC log-probabilities from encoder outputs.
    pub fn ctc_log_probs(&self, encoded: &Matrix<S>) -> Result<Vec<Vec<f64>>> {
        let (w, b) = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Config("weights have no CTC head (head.w / head.b)".into()))?;
        Ok(log_softmax_rows(&linear(encoded, w, b)?))
    }
}

/// Builds an encoder and runs [`Encoder::forward`].
pub fn encoder_forward<S: Scalar>(
    features: &Matrix<S>,
    config: &EncoderConfig,
    weights: &EncoderWeights,
    chunk: ChunkSize,
    left: LeftContext,
) -> Result<Matrix<S>> {
    Encoder::new(config, weights)?.forward(features, chunk, left)
}
