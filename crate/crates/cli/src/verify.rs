//! Property suites run by `dcstream verify` and by the acceptance tests.
//!
//! Every property returns a [`Check`]: a named pass/fail with the measured
//! deviation, so the report says how close a run came, not just whether it passed.

use std::fmt;
use std::sync::Arc;

use dcstream::conv::{conv_dcconv, conv_regular, left_context, ConvMode};
use dcstream::ctc::{brute_force_scores, log_add_exp, prefix_beam_search, IncrementalDecoder};
use dcstream::encoder::{ChunkSize, Encoder, EncoderConfig, EncoderWeights};
use dcstream::masking::{chunk_mask, window_mask, AttentionMask, ChunkSpec, LeftContext};
use dcstream::rng::XorShift64;
use dcstream::streaming::{average_latency, StreamState};
use dcstream::{Matrix, Precision, Scalar};
use rayon::prelude::*;

pub const GOLDEN_CHUNK_MASK: &str = include_str!("../golden/chunk_mask_20_4_8.txt");
pub const GOLDEN_WINDOW_MASK: &str = include_str!("../golden/window_mask_20_3_8.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Masks,
    Conv,
    Equivalence,
    Ctc,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<38} {}", self.name, self.detail)
    }
}

fn random_matrix<S: Scalar>(rng: &mut XorShift64, rows: usize, cols: usize) -> Matrix<S> {
    Matrix::from_fn(rows, cols, |_, _| S::from_f64(rng.uniform(-1.0, 1.0)))
}

// ---- masks ---------------------------------------------------------------

pub fn mask_goldens() -> Vec<Check> {
    let cases = [
        ("masks/golden-chunk-20-4-8", chunk_mask(20, 4, LeftContext::Frames(8)), GOLDEN_CHUNK_MASK),
        ("masks/golden-window-20-3-8", window_mask(20, 3, 8), GOLDEN_WINDOW_MASK),
    ];
    cases
        .into_iter()
        .map(|(name, mask, golden)| {
            let ok = mask.to_ascii() == golden;
            let detail = if ok {
                "20x20 grid identical".to_owned()
            } else {
                format!("got\n{}", mask.to_ascii())
            };
            Check::new(name, ok, detail)
        })
        .collect()
}

/// Checks every row of every chunk mask with `T ≤ max_t`, `C ≤ max_c` and
/// left context in `{0, C, 2C, all}` against the interval it should expose.
pub fn mask_intervals(max_t: usize, max_c: usize) -> Check {
    let mut checked = 0usize;
    let mut first_bad = None;
    for t in 1..=max_t {
        for c in 1..=max_c {
            for left in [LeftContext::Frames(0), LeftContext::Frames(c), LeftContext::Frames(2 * c), LeftContext::All] {
                let m = chunk_mask(t, c, left);
                // expected grid built chunk-by-chunk, independently of the row formula
                let mut expect = AttentionMask::from_fn(t, t, |_, _| false);
                for start in (0..t).step_by(c) {
                    let end = (start + c).min(t);
                    let lo = match left {
                        LeftContext::Frames(l) => start.saturating_sub(l),
                        LeftContext::All => 0,
                    };
                    for r in start..end {
                        for k in lo..end {
                            expect.set(r, k, true);
                        }
                    }
                }
                checked += 1;
                if m != expect && first_bad.is_none() {
                    first_bad = Some(format!("T={t} C={c} L={left}"));
                }
            }
        }
    }
    match first_bad {
        None => Check::new("masks/exhaustive-intervals", true, format!("{checked} masks")),
        Some(bad) => Check::new("masks/exhaustive-intervals", false, format!("mismatch at {bad}")),
    }
}

pub fn run_masks() -> Vec<Check> {
    let mut checks = mask_goldens();
    checks.push(mask_intervals(64, 16));
    checks
}

// ---- convolution ---------------------------------------------------------

pub fn dcconv_constants() -> Check {
    let l5 = left_context(5);
    let l31 = left_context(31);
    Check::new("conv/left-context", l5 == 2 && l31 == 15, format!("k=5 -> L={l5}, k=31 -> L={l31}"))
}

/// dcconv with a chunk covering the input against symmetric convolution, f32.
pub fn dcconv_single_chunk(instances: usize, seed: u64) -> Check {
    let mut rng = XorShift64::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let t = 1 + rng.below(64) as usize;
        let d = 1 + rng.below(8) as usize;
        let k = 2 * rng.below(16) as usize + 1;
        let c = t + rng.below(8) as usize;
        let x = random_matrix::<f32>(&mut rng, t, d);
        let w = random_matrix::<f32>(&mut rng, k, d);
        let (a, _) = conv_dcconv(&x, &w, c, None).expect("valid shapes");
        let b = conv_regular(&x, &w).expect("valid shapes");
        worst = worst.max(a.max_abs_diff(&b).expect("same shape"));
    }
    Check::new(
        "conv/dcconv-equals-regular-C>=T",
        worst <= 1e-6,
        format!("{instances} instances, max dev {worst:.3e} (tol 1e-6)"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOutcome {
    pub probes: usize,
    /// Largest change seen in any frame left of the perturbed frame's chunk, dcconv.
    pub dcconv_max_influence: f64,
    /// Probes near a left chunk boundary (within the conv left context).
    pub regular_eligible: usize,
    pub regular_leaks: usize,
}

impl ProbeOutcome {
    pub fn leak_rate(&self) -> f64 {
        if self.regular_eligible == 0 {
            0.0
        } else {
            self.regular_leaks as f64 / self.regular_eligible as f64
        }
    }
}

/// Single-frame perturbation probes at double precision.
///
/// Each probe adds noise to one encoder frame and measures the change in all
/// frames of earlier chunks. With dcconv that change must be exactly zero.
/// The same probe on a regular-convolution encoder should find a leak whenever
/// the frame is within `(k-1)/2` of its chunk's left edge.
pub fn lookahead_probes(config: &EncoderConfig, weights: &EncoderWeights, probes: usize, seed: u64) -> ProbeOutcome {
    let dc_cfg = EncoderConfig {
        conv_mode: ConvMode::DcConv,
        ..config.clone()
    };
    let reg_cfg = EncoderConfig {
        conv_mode: ConvMode::Regular,
        ..config.clone()
    };
    let dc = Encoder::<f64>::new(&dc_cfg, weights).expect("weights match config");
    let reg = Encoder::<f64>::new(&reg_cfg, weights).expect("weights match config");
    let half = left_context(config.kernel_size);
    let d = config.d_model;
    let frames = 48;

    let mut rng = XorShift64::new(seed);
    let jobs: Vec<(usize, usize, u64)> = (0..probes)
        .map(|_| {
            let chunk = [8, 16][rng.below(2) as usize];
            let chunk_index = 1 + rng.below((frames / chunk - 1) as u64) as usize;
            let within = if rng.bernoulli(0.5) {
                rng.below(half.clamp(1, chunk) as u64) as usize
            } else {
                rng.below(chunk as u64) as usize
            };
            (chunk, chunk_index * chunk + within, rng.next_u64())
        })
        .collect();
    let base_input = random_matrix::<f64>(&mut XorShift64::new(seed ^ 0x5eed), frames, d);
    let bases: Vec<(usize, Matrix<f64>, Matrix<f64>)> = [8, 16]
        .into_iter()
        .map(|c| {
            let run = |e: &Encoder<f64>| e.forward_encoded(&base_input, ChunkSize::Frames(c), LeftContext::All).unwrap();
            (c, run(&dc), run(&reg))
        })
        .collect();

    let results: Vec<(f64, bool, bool)> = jobs
        .par_iter()
        .map(|&(chunk, frame, noise_seed)| {
            let mut rng = XorShift64::new(noise_seed);
            let mut x = base_input.clone();
            for v in x.row_mut(frame) {
                *v += rng.uniform(-1.0, 1.0);
            }
            let (_, base_dc, base_reg) = bases.iter().find(|b| b.0 == chunk).unwrap();
            let boundary = frame / chunk * chunk;
            let influence = |out: &Matrix<f64>, base: &Matrix<f64>| {
                out.slice_rows(0, boundary)
                    .max_abs_diff(&base.slice_rows(0, boundary))
                    .unwrap()
            };
            let dc_out = dc.forward_encoded(&x, ChunkSize::Frames(chunk), LeftContext::All).unwrap();
            let eligible = frame - boundary < half;
            let leaked = eligible && {
                let reg_out = reg.forward_encoded(&x, ChunkSize::Frames(chunk), LeftContext::All).unwrap();
                influence(&reg_out, base_reg) > 1e-12
            };
            (influence(&dc_out, base_dc), eligible, leaked)
        })
        .collect();

    ProbeOutcome {
        probes,
        dcconv_max_influence: results.iter().map(|r| r.0).fold(0.0, f64::max),
        regular_eligible: results.iter().filter(|r| r.1).count(),
        regular_leaks: results.iter().filter(|r| r.2).count(),
    }
}

pub fn probe_checks(outcome: &ProbeOutcome) -> Vec<Check> {
    vec![
        Check::new(
            "conv/lookahead-dcconv-zero-influence",
            outcome.dcconv_max_influence <= 1e-12,
            format!(
                "{} probes, max influence {:.3e} (tol 1e-12)",
                outcome.probes, outcome.dcconv_max_influence
            ),
        ),
        Check::new(
            "conv/lookahead-regular-leaks",
            outcome.regular_eligible > 0 && outcome.leak_rate() >= 0.95,
            format!(
                "expected leak found in {}/{} boundary probes ({:.1}%, need >= 95%)",
                outcome.regular_leaks,
                outcome.regular_eligible,
                100.0 * outcome.leak_rate()
            ),
        ),
    ]
}

pub fn run_conv(config: &EncoderConfig, weights: &EncoderWeights, seed: u64) -> Vec<Check> {
    let mut checks = vec![dcconv_constants(), dcconv_single_chunk(100, seed)];
    checks.extend(probe_checks(&lookahead_probes(config, weights, 200, seed)));
    checks
}

// ---- streaming equivalence -----------------------------------------------

fn stream_utterance<S: Scalar>(
    encoder: &Arc<Encoder<S>>,
    spec: ChunkSpec,
    features: &Matrix<S>,
    piece: usize,
) -> dcstream::Result<Matrix<S>> {
    let mut state = StreamState::open(encoder.clone(), spec)?;
    let mut parts = Vec::new();
    let mut start = 0;
    while start < features.rows() {
        let end = (start + piece.max(1)).min(features.rows());
        parts.push(state.push_frames(&features.slice_rows(start, end))?);
        start = end;
    }
    parts.push(state.flush()?);
    Matrix::concat_rows(&parts, encoder.config().d_model)
}

/// Largest deviation between no-overlap streaming and the offline chunked
/// forward over `cases` random `(T, C, L)` draws, `T ≤ max_frames` encoder frames.
pub fn streaming_deviation<S: Scalar>(
    config: &EncoderConfig,
    weights: &EncoderWeights,
    cases: usize,
    max_frames: usize,
    seed: u64,
) -> dcstream::Result<f64> {
    let encoder = Arc::new(Encoder::<S>::new(config, weights)?);
    let f = config.subsample_factor;
    let mut rng = XorShift64::new(seed);
    let draws: Vec<(usize, usize, LeftContext, usize, u64)> = (0..cases)
        .map(|_| {
            let frames = 1 + rng.below(max_frames as u64) as usize;
            let chunk = [8, 16, 32][rng.below(3) as usize];
            let left = [LeftContext::Frames(0), LeftContext::Frames(2 * chunk), LeftContext::All][rng.below(3) as usize];
            let extra = rng.below(f as u64) as usize;
            let piece = 1 + rng.below(64) as usize;
            (frames * f + extra, chunk, left, piece, rng.next_u64())
        })
        .collect();
    let devs = draws
        .par_iter()
        .map(|&(t0, chunk, left, piece, s)| {
            let x = random_matrix::<S>(&mut XorShift64::new(s), t0, config.input_dim);
            let offline = encoder.forward(&x, ChunkSize::Frames(chunk), left)?;
            let spec = ChunkSpec::new(chunk, 0.0, left)?;
            let streamed = stream_utterance(&encoder, spec, &x, piece)?;
            offline.max_abs_diff(&streamed)
        })
        .collect::<dcstream::Result<Vec<f64>>>()?;
    Ok(devs.into_iter().fold(0.0, f64::max))
}

/// Every encoder frame is committed exactly once, for overlaps `{0, 0.5, 0.75}`.
pub fn conservation(config: &EncoderConfig, weights: &EncoderWeights, cases: usize, seed: u64) -> Check {
    let encoder = Arc::new(Encoder::<f32>::new(config, weights).expect("weights match config"));
    let f = config.subsample_factor;
    let mut rng = XorShift64::new(seed);
    let draws: Vec<(usize, usize, f64, usize, u64)> = (0..cases)
        .map(|i| {
            let t0 = rng.below(256 * f as u64) as usize;
            let chunk = 1 + rng.below(32) as usize;
            let r = [0.0, 0.5, 0.75][i % 3];
            (t0, chunk, r, 1 + rng.below(97) as usize, rng.next_u64())
        })
        .collect();
    let failures: Vec<String> = draws
        .par_iter()
        .filter_map(|&(t0, chunk, r, piece, s)| {
            let spec = match ChunkSpec::new(chunk, r, LeftContext::Frames(2 * chunk)) {
                Ok(spec) => spec,
                // C·(1−r) rounds to zero: not a valid stream, skip
                Err(_) => return None,
            };
            let x = random_matrix::<f32>(&mut XorShift64::new(s), t0, config.input_dim);
            let out = stream_utterance(&encoder, spec, &x, piece).ok()?;
            (out.rows() != t0 / f).then(|| format!("T0={t0} C={chunk} r={r}: {} != {}", out.rows(), t0 / f))
        })
        .collect();
    Check::new(
        "equivalence/frame-conservation",
        failures.is_empty(),
        match failures.first() {
            None => format!("{cases} fuzzed (T, C, r) cases"),
            Some(f) => format!("{} failures, first {f}", failures.len()),
        },
    )
}

pub fn run_equivalence(config: &EncoderConfig, weights: &EncoderWeights, precision: Precision, seed: u64) -> Vec<Check> {
    let cases = 20;
    let deviation = match precision {
        Precision::Double => streaming_deviation::<f64>(config, weights, cases, 128, seed),
        Precision::Single => streaming_deviation::<f32>(config, weights, cases, 128, seed),
    };
    let tol = match precision {
        Precision::Double => 1e-10,
        Precision::Single => 1e-4,
    };
    let mut checks = Vec::new();
    match deviation {
        Err(e) => checks.push(Check::new("equivalence/stream-vs-offline", false, e.to_string())),
        Ok(dev) if config.conv_mode == ConvMode::Regular => {
            // symmetric convolution reads across chunk edges offline, so the
            // streamed output must disagree with it
            checks.push(Check::new(
                "equivalence/regular-conv-leak",
                dev > tol,
                format!("expected mismatch, max dev {dev:.3e} ({precision}, tol {tol:.0e})"),
            ));
        }
        Ok(dev) => checks.push(Check::new(
            "equivalence/stream-vs-offline",
            dev <= tol,
            format!("{cases} cases, max dev {dev:.3e} ({precision}, tol {tol:.0e})"),
        )),
    }
    checks.push(conservation(config, weights, 60, seed ^ 1));
    checks.push(latency_anchor());
    checks.push(latency_monotone());
    checks
}

pub fn latency_anchor() -> Check {
    let spec = ChunkSpec::from_ms(640.0, 0.5, Some(1280.0), 40.0).expect("aligned");
    let avg = average_latency(&spec);
    Check::new(
        "latency/640ms-half-overlap",
        (avg - 480.0).abs() <= 25.0,
        format!("{avg} ms (target 480 +/- 25)"),
    )
}

pub fn latency_monotone() -> Check {
    let sizes = [320.0, 640.0, 1280.0, 2560.0];
    let ratios = [0.0, 0.5, 0.75];
    let at = |c: f64, r: f64| average_latency(&ChunkSpec::from_ms(c, r, None, 40.0).expect("aligned"));
    let in_c = ratios
        .iter()
        .all(|&r| sizes.windows(2).all(|w| at(w[0], r) <= at(w[1], r)));
    let in_r = sizes
        .iter()
        .all(|&c| ratios.windows(2).all(|w| at(c, w[0]) <= at(c, w[1])));
    Check::new(
        "latency/monotone",
        in_c && in_r,
        format!("chunk {{320..2560}} ms x overlap {{0, 0.5, 0.75}}: in C {in_c}, in r {in_r}"),
    )
}

// ---- CTC -----------------------------------------------------------------

fn random_log_frames(rng: &mut XorShift64, t: usize, v: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| {
            let raw: Vec<f64> = (0..v).map(|_| rng.uniform(0.01, 1.0)).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|x| (x / z).ln()).collect()
        })
        .collect()
}

/// Exhaustive-beam search against path enumeration, plus the total-probability law.
pub fn ctc_oracle(instances: usize, seed: u64) -> Vec<Check> {
    let mut rng = XorShift64::new(seed);
    let mut worst = 0.0f64;
    let mut worst_total = 0.0f64;
    let mut top_mismatch = 0;
    for _ in 0..instances {
        let t = 1 + rng.below(6) as usize;
        let v = 2 + rng.below(3) as usize;
        let frames = random_log_frames(&mut rng, t, v);
        let oracle = brute_force_scores(&frames).expect("small instance");
        let total = oracle.values().fold(f64::NEG_INFINITY, |a, &b| log_add_exp(a, b));
        worst_total = worst_total.max((total.exp() - 1.0).abs());
        let hyps = prefix_beam_search(&frames, v.pow(t as u32)).expect("beam >= 1");
        if hyps.len() != oracle.len() {
            worst = f64::INFINITY;
        }
        for h in &hyps {
            let exact = oracle.get(&h.tokens).copied().unwrap_or(f64::NEG_INFINITY);
            worst = worst.max((h.log_prob - exact).abs());
        }
        let best = oracle
            .iter()
            .fold(None::<(&Vec<usize>, f64)>, |acc, (k, &v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((k, v)),
            })
            .map(|(k, _)| k.clone());
        if best.as_ref() != hyps.first().map(|h| &h.tokens) {
            top_mismatch += 1;
        }
    }
    vec![
        Check::new(
            "ctc/beam-vs-bruteforce",
            worst <= 1e-9 && top_mismatch == 0,
            format!("{instances} instances, max |dlogp| {worst:.3e}, top-1 mismatches {top_mismatch}"),
        ),
        Check::new(
            "ctc/total-probability",
            worst_total <= 1e-9,
            format!("max |sum p - 1| {worst_total:.3e}"),
        ),
    ]
}

/// Incremental decoding over random chunkings against the one-shot search.
pub fn ctc_chunking(cases: usize, seed: u64) -> Check {
    let mut rng = XorShift64::new(seed);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let t = rng.below(30) as usize;
        let v = 2 + rng.below(5) as usize;
        let beam = 1 + rng.below(16) as usize;
        let frames = random_log_frames(&mut rng, t, v);
        let one_shot = prefix_beam_search(&frames, beam).expect("beam >= 1");
        let mut dec = IncrementalDecoder::new(beam).expect("beam >= 1");
        let mut start = 0;
        while start < t {
            let end = (start + rng.below(6) as usize).min(t);
            dec.push(&frames[start..end]).expect("open decoder");
            start = end;
        }
        let chunked = dec.finalize().expect("first finalize");
        if chunked.len() != one_shot.len() || chunked.iter().zip(&one_shot).any(|(a, b)| a.tokens != b.tokens) {
            mismatches += 1;
        }
        for (a, b) in chunked.iter().zip(&one_shot) {
            worst = worst.max((a.log_prob - b.log_prob).abs());
        }
    }
    Check::new(
        "ctc/chunking-invariance",
        mismatches == 0 && worst <= 1e-12,
        format!("{cases} chunkings, {mismatches} ranking mismatches, max |dlogp| {worst:.3e}"),
    )
}

pub fn run_ctc(seed: u64) -> Vec<Check> {
    let mut checks = ctc_oracle(200, seed);
    checks.push(ctc_chunking(100, seed ^ 2));
    checks
}

pub fn run_suite(
    suite: Suite,
    config: &EncoderConfig,
    weights: &EncoderWeights,
    precision: Precision,
    seed: u64,
) -> Vec<Check> {
    let mut checks = Vec::new();
    if matches!(suite, Suite::Masks | Suite::All) {
        checks.extend(run_masks());
    }
    if matches!(suite, Suite::Conv | Suite::All) {
        checks.extend(run_conv(config, weights, seed));
    }
    if matches!(suite, Suite::Equivalence | Suite::All) {
        checks.extend(run_equivalence(config, weights, precision, seed));
    }
    if matches!(suite, Suite::Ctc | Suite::All) {
        checks.extend(run_ctc(seed));
    }
    checks
}
