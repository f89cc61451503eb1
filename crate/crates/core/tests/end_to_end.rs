use std::sync::Arc;

use dcstream::ctc::{greedy_decode, prefix_beam_search};
use dcstream::encoder::{init_weights, BlockKind, ChunkSize, Encoder, EncoderConfig, EncoderWeights, MergeKind};
use dcstream::features::synthetic_features;
use dcstream::masking::{ChunkSpec, DctPolicy, LeftContext};
use dcstream::streaming::StreamState;
use dcstream::Matrix;

fn config(kind: BlockKind, merge: MergeKind) -> EncoderConfig {
    EncoderConfig {
        layers: 3,
        d_model: 32,
        heads: 4,
        ff_dim: 64,
        kernel_size: 7,
        block_kind: kind,
        merge,
        input_dim: 20,
        vocab_size: 9,
        ..Default::default()
    }
}

fn stream(encoder: &Arc<Encoder<f64>>, spec: ChunkSpec, x: &Matrix<f64>, piece: usize) -> Matrix<f64> {
    let mut state = StreamState::open(encoder.clone(), spec).unwrap();
    let mut out = Matrix::zeros(0, encoder.config().d_model);
    for start in (0..x.rows()).step_by(piece) {
        let end = (start + piece).min(x.rows());
        out = out.vstack(&state.push_frames(&x.slice_rows(start, end)).unwrap()).unwrap();
    }
    out.vstack(&state.flush().unwrap()).unwrap()
}

#[test]
fn weights_file_to_streamed_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(BlockKind::Sequential, MergeKind::Concat);
    let path = dir.path().join("w.dcwt");
    init_weights(&cfg, 21).unwrap().save(&path).unwrap();
    let encoder = Arc::new(Encoder::<f64>::new(&cfg, &EncoderWeights::load(&path).unwrap()).unwrap());

    let x = synthetic_features(1, 300, 20, 2).remove(0).features.convert::<f64>();
    let spec = ChunkSpec::new(8, 0.0, LeftContext::Frames(16)).unwrap();
    let offline = encoder.forward(&x, ChunkSize::Frames(8), LeftContext::Frames(16)).unwrap();
    let streamed = stream(&encoder, spec, &x, 37);
    assert_eq!(streamed, offline);

    let lp_off = encoder.ctc_log_probs(&offline).unwrap();
    let lp_on = encoder.ctc_log_probs(&streamed).unwrap();
    assert_eq!(greedy_decode(&lp_off), greedy_decode(&lp_on));
    assert_eq!(prefix_beam_search(&lp_off, 10).unwrap(), prefix_beam_search(&lp_on, 10).unwrap());
}

#[test]
fn every_block_variant_streams_like_offline() {
    let x = synthetic_features(1, 160, 20, 3).remove(0).features.convert::<f64>();
    for (kind, merge, macaron) in [
        (BlockKind::Sequential, MergeKind::Concat, false),
        (BlockKind::Parallel, MergeKind::Concat, false),
        (BlockKind::Parallel, MergeKind::Sum, false),
        (BlockKind::Parallel, MergeKind::Concat, true),
    ] {
        let cfg = EncoderConfig {
            parallel_macaron: macaron,
            ..config(kind, merge)
        };
        let encoder = Arc::new(Encoder::<f64>::new(&cfg, &init_weights(&cfg, 4).unwrap()).unwrap());
        for (c, left) in [(4, LeftContext::All), (6, LeftContext::Frames(6)), (16, LeftContext::Frames(0))] {
            let offline = encoder.forward(&x, ChunkSize::Frames(c), left).unwrap();
            let streamed = stream(&encoder, ChunkSpec::new(c, 0.0, left).unwrap(), &x, 13);
            assert!(streamed.max_abs_diff(&offline).unwrap() <= 1e-10, "{kind:?} {merge:?} C={c}");
        }
    }
}

#[test]
fn sampled_training_chunks_are_valid_streams() {
    let cfg = config(BlockKind::Sequential, MergeKind::Concat);
    let encoder = Arc::new(Encoder::<f64>::new(&cfg, &init_weights(&cfg, 5).unwrap()).unwrap());
    let x = synthetic_features(1, 200, 20, 6).remove(0).features.convert::<f64>();
    let frames = x.rows() / cfg.subsample_factor;
    let mut sampler = DctPolicy { seed: 8, ..Default::default() }.sampler().unwrap();
    for _ in 0..6 {
        let (c, left) = sampler.sample(frames);
        let offline = encoder.forward(&x, ChunkSize::Frames(c), left).unwrap();
        let streamed = stream(&encoder, ChunkSpec::new(c, 0.0, left).unwrap(), &x, 64);
        assert!(streamed.max_abs_diff(&offline).unwrap() <= 1e-10);
    }
}
