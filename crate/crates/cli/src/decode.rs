//! Feature files to CTC hypotheses.

use std::sync::Arc;

use dcstream::ctc::{prefix_beam_search, Hypothesis};
use dcstream::encoder::{ChunkSize, Encoder, EncoderConfig, EncoderWeights};
use dcstream::features::Utterance;
use dcstream::masking::{ChunkSpec, LeftContext};
use dcstream::streaming::StreamState;
use dcstream::Scalar;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DecodeMode {
    /// Whole utterance at once under the chunk mask of the configured spec.
    Offline,
    /// Window by window through the streaming runtime.
    Streaming,
    /// Unrestricted attention and a single convolution chunk.
    Full,
}

/// Top hypothesis per utterance, in input order.
pub fn decode_utterances<S: Scalar>(
    config: &EncoderConfig,
    weights: &EncoderWeights,
    utterances: &[Utterance],
    mode: DecodeMode,
    spec: ChunkSpec,
    beam_size: usize,
) -> anyhow::Result<Vec<Hypothesis>> {
    let encoder = Arc::new(Encoder::<S>::new(config, weights)?);
    if !encoder.has_head() {
        anyhow::bail!("weights have no CTC head (head.w / head.b); cannot decode");
    }
    utterances
        .par_iter()
        .map(|u| {
            let x = u.features.convert::<S>();
            let encoded = match mode {
                DecodeMode::Offline => encoder.forward(&x, ChunkSize::Frames(spec.chunk_frames), spec.left_context)?,
                DecodeMode::Full => encoder.forward(&x, ChunkSize::Full, LeftContext::All)?,
                DecodeMode::Streaming => {
                    let mut state = StreamState::open(encoder.clone(), spec)?;
                    let head = state.push_frames(&x)?;
                    head.vstack(&state.flush()?)?
                }
            };
            let log_probs = encoder.ctc_log_probs(&encoded)?;
            Ok(prefix_beam_search(&log_probs, beam_size)?.swap_remove(0))
        })
        .collect()
}
