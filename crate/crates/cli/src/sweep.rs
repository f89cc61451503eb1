//! Latency / accuracy sweeps over chunk size, overlap and left context.
//!
//! Without trained weights the accuracy axis is the mean squared difference
//! between streamed encoder outputs and the full-context forward. WER columns
//! are filled only when reference transcripts are supplied.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use anyhow::{bail, Context};
use dcstream::ctc::{greedy_decode, prefix_beam_search, edit_distance};
use dcstream::encoder::{ChunkSize, Encoder, EncoderConfig, EncoderWeights};
use dcstream::features::Utterance;
use dcstream::masking::{ms_to_frames, ChunkSpec, LeftContext};
use dcstream::streaming::{average_latency, StreamState};
use dcstream::{Matrix, Scalar};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::LeftMs;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub chunk_ms: Vec<f64>,
    pub overlaps: Vec<f64>,
    pub left_ctx_ms: Vec<LeftMs>,
}

impl SweepGrid {
    /// Checks every entry is a whole number of frames; returns the specs in grid order.
    pub fn specs(&self, frame_ms: f64) -> anyhow::Result<Vec<(ChunkSpec, LeftMs)>> {
        if self.chunk_ms.is_empty() || self.overlaps.is_empty() || self.left_ctx_ms.is_empty() {
            bail!("sweep grid is empty");
        }
        for &c in &self.chunk_ms {
            ms_to_frames(c, frame_ms).with_context(|| format!("chunk size {c} ms"))?;
        }
        for &l in &self.left_ctx_ms {
            if let LeftMs::Ms(ms) = l {
                ms_to_frames(ms, frame_ms).with_context(|| format!("left context {ms} ms"))?;
            }
        }
        let mut out = Vec::new();
        for &c in &self.chunk_ms {
            for &r in &self.overlaps {
                for &l in &self.left_ctx_ms {
                    let spec = ChunkSpec::from_ms(c, r, l.ms(), frame_ms)
                        .with_context(|| format!("grid point chunk {c} ms, overlap {r}, left {l}"))?;
                    out.push((spec, l));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub chunk_ms: f64,
    pub overlap: f64,
    pub left_ctx_ms: String,
    pub avg_latency_ms: f64,
    pub out_divergence: f64,
    pub wer_greedy: Option<f64>,
    pub wer_beam: Option<f64>,
}

/// Mean squared difference of two equally shaped outputs.
pub fn mean_squared_difference<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> f64 {
    let n = a.data().len();
    if n == 0 {
        return 0.0;
    }
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        / n as f64
}

pub struct SweepInputs<'a> {
    pub config: &'a EncoderConfig,
    /// One entry per weight seed; divergence is averaged over all of them.
    pub weights: &'a [EncoderWeights],
    pub utterances: &'a [Utterance],
    pub transcripts: Option<&'a HashMap<String, Vec<String>>>,
    pub beam_size: usize,
}

fn stream<S: Scalar>(encoder: &Arc<Encoder<S>>, spec: ChunkSpec, x: &Matrix<S>) -> anyhow::Result<Matrix<S>> {
    let mut state = StreamState::open(encoder.clone(), spec)?;
    let head = state.push_frames(x)?;
    Ok(head.vstack(&state.flush()?)?)
}

struct Prepared<S> {
    encoder: Arc<Encoder<S>>,
    features: Vec<Matrix<S>>,
    full_context: Vec<Matrix<S>>,
}

pub fn run_sweep<S: Scalar>(inputs: &SweepInputs<'_>, grid: &[(ChunkSpec, LeftMs)]) -> anyhow::Result<Vec<SweepRow>> {
    if inputs.weights.is_empty() {
        bail!("sweep needs at least one weight set");
    }
    let features: Vec<Matrix<S>> = inputs.utterances.iter().map(|u| u.features.convert()).collect();
    let prepared = inputs
        .weights
        .par_iter()
        .map(|w| {
            let encoder = Arc::new(Encoder::<S>::new(inputs.config, w)?);
            let full_context = features
                .iter()
                .map(|x| encoder.forward(x, ChunkSize::Full, LeftContext::All))
                .collect::<dcstream::Result<Vec<_>>>()?;
            Ok(Prepared {
                encoder,
                features: features.clone(),
                full_context,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let wants_wer = inputs.transcripts.is_some();
    if wants_wer && !prepared[0].encoder.has_head() {
        bail!("WER columns need a CTC head (head.w / head.b) in the weights");
    }

    grid.par_iter()
        .map(|&(spec, left)| {
            let mut div_sum = 0.0;
            let mut div_n = 0usize;
            let (mut ref_words, mut greedy_edits, mut beam_edits) = (0usize, 0usize, 0usize);
            for p in &prepared {
                for (i, x) in p.features.iter().enumerate() {
                    let streamed = stream(&p.encoder, spec, x)?;
                    div_sum += mean_squared_difference(&streamed, &p.full_context[i]);
                    div_n += 1;
                    let Some(reference) = inputs.transcripts.and_then(|t| t.get(&inputs.utterances[i].id)) else {
                        continue;
                    };
                    let lp = p.encoder.ctc_log_probs(&streamed)?;
                    let words = |tokens: Vec<usize>| tokens.iter().map(usize::to_string).collect::<Vec<_>>();
                    let greedy = words(greedy_decode(&lp));
                    let beam = words(prefix_beam_search(&lp, inputs.beam_size)?.swap_remove(0).tokens);
                    ref_words += reference.len();
                    greedy_edits += edit_distance(reference, &greedy);
                    beam_edits += edit_distance(reference, &beam);
                }
            }
            let rate = |edits: usize| (wants_wer && ref_words > 0).then(|| edits as f64 / ref_words as f64);
            Ok(SweepRow {
                chunk_ms: spec.chunk_ms(),
                overlap: spec.overlap_ratio,
                left_ctx_ms: left.to_string(),
                avg_latency_ms: average_latency(&spec),
                out_divergence: if div_n == 0 { 0.0 } else { div_sum / div_n as f64 },
                wer_greedy: rate(greedy_edits),
                wer_beam: rate(beam_edits),
            })
        })
        .collect()
}

pub fn write_csv(rows: &[SweepRow], out: impl Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "chunk_ms",
            "overlap",
            "left_ctx_ms",
            "avg_latency_ms",
            "out_divergence",
            "wer_greedy",
            "wer_beam",
        ])?;
    }
    w.flush()?;
    Ok(())
}
