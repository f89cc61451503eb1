//! Chunk-by-chunk inference with overlapping windows.
//!
//! Encoder frames are processed in windows of `C` frames that advance by the
//! stride. Only the first `stride` frames of each window are committed, and only
//! committed frames ever enter the attention and convolution caches, so a frame
//! that shows up in two windows is never folded into the state twice.

use std::sync::Arc;

use serde::Serialize;

use crate::conv::ConvMode;
use crate::encoder::{block_forward_traced, Encoder, EncoderConfig, EncoderWeights, LayerCache};
use crate::error::{shape_err, Error, Result};
use crate::masking::{AttentionMask, ChunkSpec};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Algorithmic emit latency of every committed frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub per_frame_ms: Vec<f64>,
    pub average_ms: f64,
    pub chunk_count: usize,
}

/// Analytic average latency of the commit-first-stride policy.
///
/// A frame at offset `p < stride` of its window waits `C − p` frames for the
/// window to fill, so the mean is `(C − (stride − 1) / 2) · frame_ms`.
pub fn average_latency(spec: &ChunkSpec) -> f64 {
    let stride = spec.stride() as f64;
    (spec.chunk_frames as f64 - (stride - 1.0) / 2.0) * spec.frame_ms
}

#[derive(Debug, Clone)]
pub struct StreamState<S> {
    encoder: Arc<Encoder<S>>,
    spec: ChunkSpec,
    caches: Vec<LayerCache<S>>,
    /// Input frames that do not yet fill one subsampling group.
    residue: Matrix<S>,
    /// Encoder frames seen but not committed, starting at `offset`.
    pending: Matrix<S>,
    offset: usize,
    closed: bool,
    window_starts: Vec<usize>,
    latencies: Vec<f64>,
}

/// Builds an encoder from raw weights and opens a stream on it.
pub fn open_stream<S: Scalar>(
    config: &EncoderConfig,
    weights: &EncoderWeights,
    spec: ChunkSpec,
) -> Result<StreamState<S>> {
    StreamState::open(Arc::new(Encoder::new(config, weights)?), spec)
}

impl<S: Scalar> StreamState<S> {
    pub fn open(encoder: Arc<Encoder<S>>, spec: ChunkSpec) -> Result<Self> {
        spec.validate()?;
        let cfg = encoder.config();
        let conv_depth = stream_conv_mode(cfg.conv_mode).cache_depth(cfg.kernel_size);
        let caches = (0..cfg.layers)
            .map(|_| LayerCache::fresh(cfg.d_model, spec.left_context.frames(), conv_depth))
            .collect();
        Ok(Self {
            residue: Matrix::zeros(0, cfg.input_dim),
            pending: Matrix::zeros(0, cfg.d_model),
            encoder,
            spec,
            caches,
            offset: 0,
            closed: false,
            window_starts: Vec::new(),
            latencies: Vec::new(),
        })
    }

    pub fn spec(&self) -> &ChunkSpec {
        &self.spec
    }

    /// Encoder frames committed so far.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn pending_frames(&self) -> usize {
        self.pending.rows()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn caches(&self) -> &[LayerCache<S>] {
        &self.caches
    }

    /// Absolute encoder-frame index at which each processed window started.
    pub fn window_starts(&self) -> &[usize] {
        &self.window_starts
    }

    pub fn latency_report(&self) -> LatencyReport {
        let n = self.latencies.len();
        let average_ms = if n == 0 {
            0.0
        } else {
            self.latencies.iter().sum::<f64>() / n as f64
        };
        LatencyReport {
            per_frame_ms: self.latencies.clone(),
            average_ms,
            chunk_count: self.window_starts.len(),
        }
    }

    /// Buffers input features and returns every encoder frame committed as a result.
    pub fn push_frames(&mut self, features: &Matrix<S>) -> Result<Matrix<S>> {
        if self.closed {
            return Err(Error::State("push after the stream was flushed".into()));
        }
        let cfg = self.encoder.config();
        if !features.is_empty() && features.cols() != cfg.input_dim {
            return Err(shape_err!(
                "features have {} dims, stream expects {}",
                features.cols(),
                cfg.input_dim
            ));
        }
        if !features.is_empty() {
            self.residue = self.residue.vstack(features)?;
        }
        let (factor, d_model) = (cfg.subsample_factor, cfg.d_model);
        let usable = self.residue.rows() / factor * factor;
        if usable > 0 {
            let encoded = self.encoder.subsample(&self.residue.slice_rows(0, usable))?;
            self.residue = self.residue.slice_rows(usable, self.residue.rows());
            self.pending = self.pending.vstack(&encoded)?;
        }

        let chunk = self.spec.chunk_frames;
        let stride = self.spec.stride();
        let mut committed = Vec::new();
        while self.pending.rows() >= chunk {
            committed.push(self.run_window(chunk, stride)?);
        }
        Matrix::concat_rows(&committed, d_model)
    }

    /// Runs the remaining pending frames as one short window, commits them
    /// all and closes the stream. Input below one subsampling group is dropped.
    pub fn flush(&mut self) -> Result<Matrix<S>> {
        if self.closed {
            return Err(Error::State("stream already flushed".into()));
        }
        self.closed = true;
        let n = self.pending.rows();
        self.residue = Matrix::zeros(0, self.residue.cols());
        if n == 0 {
            return Ok(Matrix::zeros(0, self.encoder.config().d_model));
        }
        self.run_window(n, n)
    }

    /// Processes `pending[..len]` and commits its first `commit` frames.
    fn run_window(&mut self, len: usize, commit: usize) -> Result<Matrix<S>> {
        let mut settings = self.encoder.settings(None);
        settings.conv_mode = stream_conv_mode(settings.conv_mode);

        let mut h = self.pending.slice_rows(0, len);
        let mut traces = Vec::with_capacity(self.caches.len());
        for (layer, cache) in self.encoder.layers().iter().zip(&self.caches) {
            let mask = AttentionMask::full(len, cache.kv.len() + len);
            let trace = block_forward_traced(&h, &mask, layer, &settings, Some(cache), self.offset)?;
            h = trace.output.clone();
            traces.push(trace);
        }
        for (cache, trace) in self.caches.iter_mut().zip(&traces) {
            cache.advance(trace, commit)?;
        }

        self.window_starts.push(self.offset);
        self.latencies
            .extend((0..commit).map(|p| (len - p) as f64 * self.spec.frame_ms));
        self.offset += commit;
        self.pending = self.pending.slice_rows(commit, self.pending.rows());
        Ok(h.slice_rows(0, commit))
    }
}

/// Symmetric convolution has no streaming form; a window is convolved as one
/// dcconv chunk with cached history instead.
fn stream_conv_mode(mode: ConvMode) -> ConvMode {
    match mode {
        ConvMode::Regular => ConvMode::DcConv,
        other => other,
    }
}
