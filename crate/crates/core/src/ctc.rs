//! CTC decoding: greedy, prefix beam search, an incremental form of the same
//! search, an exhaustive path-enumeration oracle, and word error rate.
//!
//! Token 0 is the blank. All scores are natural-log probabilities in `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const BLANK: usize = 0;
pub const DEFAULT_BEAM: usize = 50;

/// Stable `ln(e^a + e^b)` with `-inf` as the zero element.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Checks that every frame has the same width `V ≥ 2` and normalizes to one.
pub fn validate_frames(frames: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = frames.first() else {
        return Ok(0);
    };
    let v = first.len();
    if v < 2 {
        return Err(Error::Contract(format!("vocabulary of {v} leaves no non-blank token")));
    }
    for (t, f) in frames.iter().enumerate() {
        if f.len() != v {
            return Err(Error::Shape(format!("frame {t} has {} entries, expected {v}", f.len())));
        }
        let total = f.iter().fold(f64::NEG_INFINITY, |acc, &x| log_add_exp(acc, x));
        if (total).abs() > 1e-5 {
            return Err(Error::Contract(format!("frame {t} log-sum-exp is {total}, expected 0")));
        }
    }
    Ok(v)
}

/// Drops repeats, then blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &tok in path {
        if Some(tok) != prev && tok != BLANK {
            out.push(tok);
        }
        prev = Some(tok);
    }
    out
}

/// Per-frame argmax (first index on ties) collapsed into a labeling.
pub fn greedy_decode(frames: &[Vec<f64>]) -> Vec<usize> {
    let path: Vec<usize> = frames
        .iter()
        .map(|f| {
            f.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0
        })
        .collect();
    collapse(&path)
}

/// A labeling with its CTC log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// `<logprob>\t<space-joined tokens>`.
    pub fn to_line(&self) -> String {
        let mut line = format!("{:.6}\t", self.log_prob);
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{t}");
        }
        line
    }
}

/// A live prefix split by whether its paths end in blank or in the last token.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub prefix: Vec<usize>,
    pub p_b: f64,
    pub p_nb: f64,
}

impl BeamHypothesis {
    pub fn total(&self) -> f64 {
        log_add_exp(self.p_b, self.p_nb)
    }
}

/// Prefix beam search state that can be fed frames in any chunking.
#[derive(Debug, Clone)]
pub struct IncrementalDecoder {
    beam_size: usize,
    beams: Vec<BeamHypothesis>,
    finalized: bool,
}

impl IncrementalDecoder {
    pub fn new(beam_size: usize) -> Result<Self> {
        if beam_size == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        Ok(Self {
            beam_size,
            beams: vec![BeamHypothesis {
                prefix: Vec::new(),
                p_b: 0.0,
                p_nb: f64::NEG_INFINITY,
            }],
            finalized: false,
        })
    }

    pub fn beams(&self) -> &[BeamHypothesis] {
        &self.beams
    }

    /// Advances over `frames` and returns the current best hypothesis.
    pub fn push(&mut self, frames: &[Vec<f64>]) -> Result<Hypothesis> {
        if self.finalized {
            return Err(Error::State("decoder already finalized".into()));
        }
        for frame in frames {
            self.step(frame)?;
        }
        Ok(self.ranked().swap_remove(0))
    }

    pub fn finalize(&mut self) -> Result<Vec<Hypothesis>> {
        if self.finalized {
            return Err(Error::State("decoder already finalized".into()));
        }
        self.finalized = true;
        Ok(self.ranked())
    }

    fn ranked(&self) -> Vec<Hypothesis> {
        self.beams
            .iter()
            .map(|b| Hypothesis {
                tokens: b.prefix.clone(),
                log_prob: b.total(),
            })
            .collect()
    }

    fn step(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() < 2 {
            return Err(Error::Contract("frame has no non-blank token".into()));
        }
        let mut next: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
        let mut add = |prefix: Vec<usize>, b: f64, nb: f64| {
            let e = next.entry(prefix).or_insert((f64::NEG_INFINITY, f64::NEG_INFINITY));
            e.0 = log_add_exp(e.0, b);
            e.1 = log_add_exp(e.1, nb);
        };
        let ninf = f64::NEG_INFINITY;
        for beam in &self.beams {
            let total = beam.total();
            add(beam.prefix.clone(), total + frame[BLANK], ninf);
            let last = beam.prefix.last().copied();
            for (tok, &lp) in frame.iter().enumerate().skip(1) {
                let mut extended = beam.prefix.clone();
                extended.push(tok);
                if last == Some(tok) {
                    add(beam.prefix.clone(), ninf, beam.p_nb + lp);
                    add(extended, ninf, beam.p_b + lp);
                } else {
                    add(extended, ninf, total + lp);
                }
            }
        }
        let mut beams: Vec<BeamHypothesis> = next
            .into_iter()
            .map(|(prefix, (p_b, p_nb))| BeamHypothesis { prefix, p_b, p_nb })
            .filter(|b| b.total() > f64::NEG_INFINITY)
            .collect();
        if beams.is_empty() {
            return Err(Error::Contract("frame gives every hypothesis zero probability".into()));
        }
        // BTreeMap order makes the stable sort break ties by smaller prefix
        beams.sort_by(|a, b| b.total().total_cmp(&a.total()));
        beams.truncate(self.beam_size);
        self.beams = beams;
        Ok(())
    }
}

/// Ranked hypotheses, best first.
pub fn prefix_beam_search(frames: &[Vec<f64>], beam_size: usize) -> Result<Vec<Hypothesis>> {
    let mut dec = IncrementalDecoder::new(beam_size)?;
    dec.push(frames)?;
    dec.finalize()
}

/// Exact log-probability of every labeling by enumerating all `V^T` paths.
pub fn brute_force_scores(frames: &[Vec<f64>]) -> Result<BTreeMap<Vec<usize>, f64>> {
    let v = frames.first().map_or(1, Vec::len);
    if frames.iter().any(|f| f.len() != v) {
        return Err(Error::Shape("frames differ in vocabulary size".into()));
    }
    let paths = (v as f64).powi(frames.len() as i32);
    if paths > 1e6 {
        return Err(Error::Size(format!("{v}^{} paths exceed the 10^6 enumeration limit", frames.len())));
    }
    let mut scores = BTreeMap::new();
    let mut path = vec![0usize; frames.len()];
    loop {
        let lp: f64 = path.iter().zip(frames).map(|(&k, f)| f[k]).sum();
        let e = scores.entry(collapse(&path)).or_insert(f64::NEG_INFINITY);
        *e = log_add_exp(*e, lp);
        // odometer increment, last frame fastest
        let mut i = path.len();
        loop {
            if i == 0 {
                return Ok(scores);
            }
            i -= 1;
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
        }
    }
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over reference length. Can exceed 1 when the hypothesis inserts.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Contract("WER needs a non-empty reference".into()));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}
