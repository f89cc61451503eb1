//! Chunk and window attention masks, streaming geometry, and the dynamic chunk
//! sampling policy.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::XorShift64;

/// Dense boolean visibility matrix; `true` means the key column is attendable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                bits.push(f(r, c));
            }
        }
        Self { rows, cols, bits }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    /// The visible columns of row `r` as `[start, end)`, or `None` when they are
    /// empty or not contiguous.
    pub fn visible_interval(&self, r: usize) -> Option<(usize, usize)> {
        let row = self.row(r);
        let start = row.iter().position(|&b| b)?;
        let end = start + row[start..].iter().take_while(|&&b| b).count();
        if row[end..].iter().any(|&b| b) {
            return None;
        }
        Some((start, end))
    }

    /// `true` when every bit visible here is also visible in `other`.
    pub fn is_subset_of(&self, other: &AttentionMask) -> bool {
        self.shape() == other.shape() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// One line per query row, `#` visible and `.` hidden.
    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            s.extend(self.row(r).iter().map(|&b| if b { '#' } else { '.' }));
            s.push('\n');
        }
        s
    }

    pub fn from_ascii(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let cols = lines.first().map_or(0, |l| l.trim().len());
        let mut bits = Vec::with_capacity(lines.len() * cols);
        for line in &lines {
            let line = line.trim();
            if line.len() != cols {
                return Err(Error::Format("ragged mask grid".into()));
            }
            for ch in line.chars() {
                bits.push(match ch {
                    '#' => true,
                    '.' => false,
                    other => return Err(Error::Format(format!("unexpected mask glyph {other:?}"))),
                });
            }
        }
        Ok(Self {
            rows: lines.len(),
            cols,
            bits,
        })
    }
}

/// Attention left context, in encoder frames, or unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LeftContext {
    Frames(usize),
    All,
}

impl LeftContext {
    /// First visible key index for a chunk starting at `chunk_start`.
    pub fn lower_bound(self, chunk_start: usize) -> usize {
        match self {
            LeftContext::Frames(n) => chunk_start.saturating_sub(n),
            LeftContext::All => 0,
        }
    }

    pub fn frames(self) -> Option<usize> {
        match self {
            LeftContext::Frames(n) => Some(n),
            LeftContext::All => None,
        }
    }
}

impl fmt::Display for LeftContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeftContext::Frames(n) => write!(f, "{n}"),
            LeftContext::All => f.write_str("all"),
        }
    }
}

impl Serialize for LeftContext {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LeftContext::Frames(n) => s.serialize_u64(*n as u64),
            LeftContext::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for LeftContext {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Frames(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Frames(n) => Ok(LeftContext::Frames(n)),
            Raw::Word(w) if w.eq_ignore_ascii_case("all") => Ok(LeftContext::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "left context must be a frame count or \"all\", got {w:?}"
            ))),
        }
    }
}

/// Chunk mask: frame `t` in chunk `i = t / chunk` sees `[i·chunk − left, (i+1)·chunk)`.
pub fn chunk_mask(frames: usize, chunk: usize, left: LeftContext) -> AttentionMask {
    let chunk = chunk.max(1);
    AttentionMask::from_fn(frames, frames, |t, c| {
        let start = (t / chunk) * chunk;
        let end = (start + chunk).min(frames);
        c >= left.lower_bound(start) && c < end
    })
}

/// Window mask: frame `t` sees `[t − left, t + right]`, clipped to the sequence.
pub fn window_mask(frames: usize, right: usize, left: usize) -> AttentionMask {
    AttentionMask::from_fn(frames, frames, |t, c| {
        c + left >= t && c <= t + right
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Chunk { chunk: usize },
    Window { right: usize, left: usize },
}

/// How many future frames can influence frame `t` after `layers` stacked
/// attention layers.
///
/// Chunk masks never see past their own chunk no matter how deep the stack is;
/// window look-ahead compounds by `right` per layer.
pub fn receptive_field(kind: MaskKind, layers: usize, frame: usize) -> usize {
    match kind {
        MaskKind::Chunk { chunk } => {
            let chunk = chunk.max(1);
            (frame / chunk + 1) * chunk - 1 - frame
        }
        MaskKind::Window { right, .. } => layers * right,
    }
}

pub const DEFAULT_FRAME_MS: f64 = 40.0;

/// Streaming geometry: window size, overlap between successive windows, and
/// attention left context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub chunk_frames: usize,
    pub overlap_ratio: f64,
    pub left_context: LeftContext,
    #[serde(default = "default_frame_ms")]
    pub frame_ms: f64,
}

fn default_frame_ms() -> f64 {
    DEFAULT_FRAME_MS
}

impl ChunkSpec {
    pub fn new(chunk_frames: usize, overlap_ratio: f64, left_context: LeftContext) -> Result<Self> {
        let spec = Self {
            chunk_frames,
            overlap_ratio,
            left_context,
            frame_ms: DEFAULT_FRAME_MS,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec from millisecond quantities, rejecting anything that is not
    /// a whole number of frames.
    pub fn from_ms(
        chunk_ms: f64,
        overlap_ratio: f64,
        left_ms: Option<f64>,
        frame_ms: f64,
    ) -> Result<Self> {
        let chunk_frames = ms_to_frames(chunk_ms, frame_ms)?;
        let left_context = match left_ms {
            Some(ms) => LeftContext::Frames(ms_to_frames(ms, frame_ms)?),
            None => LeftContext::All,
        };
        let spec = Self {
            chunk_frames,
            overlap_ratio,
            left_context,
            frame_ms,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Window hop in frames, `round(C × (1 − r))`.
    pub fn stride(&self) -> usize {
        (self.chunk_frames as f64 * (1.0 - self.overlap_ratio)).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_frames == 0 {
            return Err(Error::Config("chunk size must be at least one frame".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_ratio) {
            return Err(Error::Config(format!(
                "overlap ratio {} outside [0, 1)",
                self.overlap_ratio
            )));
        }
        if self.stride() == 0 {
            return Err(Error::Config(format!(
                "overlap {} leaves a zero stride for chunk {}",
                self.overlap_ratio, self.chunk_frames
            )));
        }
        if !self.frame_ms.is_finite() || self.frame_ms <= 0.0 {
            return Err(Error::Config("frame duration must be positive".into()));
        }
        Ok(())
    }

    pub fn chunk_ms(&self) -> f64 {
        self.chunk_frames as f64 * self.frame_ms
    }
}

/// Converts a duration to a whole frame count.
pub fn ms_to_frames(ms: f64, frame_ms: f64) -> Result<usize> {
    let frames = ms / frame_ms;
    if ms < 0.0 || (frames - frames.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{ms} ms is not a whole number of {frame_ms} ms frames"
        )));
    }
    Ok(frames.round() as usize)
}

/// Dynamic chunk sampling policy: random chunk sizes mixed with full-context draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DctPolicy {
    pub c_min: usize,
    pub c_max: usize,
    pub full_context_prob: f64,
    pub seed: u64,
}

impl Default for DctPolicy {
    fn default() -> Self {
        Self {
            c_min: 8,
            c_max: 32,
            full_context_prob: 0.5,
            seed: 0,
        }
    }
}

impl DctPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.c_min == 0 || self.c_min > self.c_max {
            return Err(Error::Config(format!(
                "chunk range [{}, {}] is empty or starts at zero",
                self.c_min, self.c_max
            )));
        }
        if !(0.0..=1.0).contains(&self.full_context_prob) {
            return Err(Error::Config("full-context probability outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn sampler(&self) -> Result<DctSampler> {
        self.validate()?;
        Ok(DctSampler {
            policy: *self,
            rng: XorShift64::new(self.seed),
        })
    }
}

/// Stateful draw stream for a [`DctPolicy`]; one per thread.
#[derive(Debug, Clone)]
pub struct DctSampler {
    policy: DctPolicy,
    rng: XorShift64,
}

impl DctSampler {
    /// Draws `(chunk, left_context)` for an utterance of `frames` encoder frames.
    ///
    /// Draw order: full-context Bernoulli, then chunk size, then the number of
    /// whole left chunks. The full-context branch consumes only the first draw.
    pub fn sample(&mut self, frames: usize) -> (usize, LeftContext) {
        let frames = frames.max(1);
        if self.rng.bernoulli(self.policy.full_context_prob) {
            return (frames, LeftContext::All);
        }
        let chunk = self.rng.range_inclusive(self.policy.c_min, self.policy.c_max);
        let max_left_chunks = frames.div_ceil(chunk) - 1;
        let left_chunks = self.rng.range_inclusive(0, max_left_chunks);
        let left = if left_chunks == max_left_chunks {
            LeftContext::All
        } else {
            LeftContext::Frames(left_chunks * chunk)
        };
        (chunk, left)
    }
}
