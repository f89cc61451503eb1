//! Depthwise convolution modes and the Conformer convolution module.
//!
//! * regular: symmetric padding, sees `(k-1)/2` frames on both sides.
//! * causal: left padding only, sees `k-1` past frames and nothing ahead.
//! * dcconv: the sequence is cut into chunks of `C` frames; every chunk gets the
//!   `L = (k-1)/2` frames preceding it as left context and zero padding on its
//!   right edge, so no output reads past its chunk boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    depthwise_conv1d, glu, layer_norm, linear, swish, Matrix, PaddingPlan, LAYER_NORM_EPS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    Regular,
    Causal,
    #[default]
    DcConv,
}

impl ConvMode {
    /// Frames of left history a streaming cache must hold for this mode.
    pub fn cache_depth(self, kernel: usize) -> usize {
        match self {
            ConvMode::Causal => kernel - 1,
            ConvMode::Regular | ConvMode::DcConv => left_context(kernel),
        }
    }
}

impl std::str::FromStr for ConvMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "regular" => Ok(ConvMode::Regular),
            "causal" => Ok(ConvMode::Causal),
            "dcconv" => Ok(ConvMode::DcConv),
            other => Err(format!("unknown conv mode '{other}'")),
        }
    }
}

/// Left context of a chunk convolution, `(k - 1) / 2`.
pub fn left_context(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// The most recent input frames preceding the next chunk, zeros before the stream starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvCache<S> {
    frames: Matrix<S>,
}

impl<S: Scalar> ConvCache<S> {
    pub fn fresh(depth: usize, channels: usize) -> Self {
        Self {
            frames: Matrix::zeros(depth, channels),
        }
    }

    pub fn depth(&self) -> usize {
        self.frames.rows()
    }

    pub fn channels(&self) -> usize {
        self.frames.cols()
    }

    pub fn frames(&self) -> &Matrix<S> {
        &self.frames
    }

    /// Appends `new_frames` and keeps only the last `depth` rows.
    pub fn advance(&mut self, new_frames: &Matrix<S>) -> Result<()> {
        if new_frames.is_empty() {
            return Ok(());
        }
        let depth = self.depth();
        let joined = self.frames.vstack(new_frames)?;
        self.frames = joined.slice_rows(joined.rows() - depth, joined.rows());
        Ok(())
    }

    fn check(&self, depth: usize, channels: usize) -> Result<()> {
        if self.depth() != depth || self.channels() != channels {
            return Err(shape_err!(
                "conv cache is {}x{}, expected {depth}x{channels}",
                self.depth(),
                self.channels()
            ));
        }
        Ok(())
    }
}

fn check_kernel<S: Scalar>(x: &Matrix<S>, kernels: &Matrix<S>) -> Result<usize> {
    let k = kernels.rows();
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::Config(format!("kernel size must be odd, got {k}")));
    }
    if kernels.cols() != x.cols() {
        return Err(shape_err!(
            "kernel has {} channels, input has {}",
            kernels.cols(),
            x.cols()
        ));
    }
    Ok(k)
}

pub fn conv_regular<S: Scalar>(x: &Matrix<S>, kernels: &Matrix<S>) -> Result<Matrix<S>> {
    depthwise_conv1d(x, kernels, PaddingPlan::Symmetric)
}

pub fn conv_causal<S: Scalar>(x: &Matrix<S>, kernels: &Matrix<S>) -> Result<Matrix<S>> {
    depthwise_conv1d(x, kernels, PaddingPlan::Causal)
}

/// Causal convolution continuing from a `k-1` frame history.
pub fn conv_causal_cached<S: Scalar>(
    x: &Matrix<S>,
    kernels: &Matrix<S>,
    cache: Option<&ConvCache<S>>,
) -> Result<(Matrix<S>, ConvCache<S>)> {
    let k = check_kernel(x, kernels)?;
    let mut cache = cache
        .cloned()
        .unwrap_or_else(|| ConvCache::fresh(k - 1, x.cols()));
    cache.check(k - 1, x.cols())?;
    let ext = cache.frames.vstack(x)?;
    let out = depthwise_conv1d(&ext, kernels, PaddingPlan::Explicit { left: 0, right: 0 })?;
    cache.advance(x)?;
    Ok((out, cache))
}

fn chunk_bounds(len: usize, chunk: usize) -> Vec<(usize, usize)> {
    (0..len.div_ceil(chunk))
        .map(|i| (i * chunk, ((i + 1) * chunk).min(len)))
        .collect()
}

/// Convolves one chunk of the cache-extended input. `ext` row `start + L` is
/// the chunk's first frame, so `ext[start .. end + L]` is the `L` frames of
/// left context followed by the chunk itself.
fn conv_one_chunk<S: Scalar>(
    ext: &Matrix<S>,
    kernels: &Matrix<S>,
    left: usize,
    start: usize,
    end: usize,
) -> Result<Matrix<S>> {
    let piece = ext.slice_rows(start, end + left);
    depthwise_conv1d(&piece, kernels, PaddingPlan::Explicit { left: 0, right: left })
}

/// Dynamic chunk convolution over `x` with chunk size `chunk`.
///
/// Returns the output and the cache to thread into the next call: the last
/// `L` input frames seen so far.
pub fn conv_dcconv<S: Scalar>(
    x: &Matrix<S>,
    kernels: &Matrix<S>,
    chunk: usize,
    cache: Option<&ConvCache<S>>,
) -> Result<(Matrix<S>, ConvCache<S>)> {
    dcconv_impl(x, kernels, chunk, cache, false)
}

/// [`conv_dcconv`] with chunks convolved on the rayon pool. Bitwise identical
/// to the serial version.
pub fn conv_dcconv_parallel<S: Scalar>(
    x: &Matrix<S>,
    kernels: &Matrix<S>,
    chunk: usize,
    cache: Option<&ConvCache<S>>,
) -> Result<(Matrix<S>, ConvCache<S>)> {
    dcconv_impl(x, kernels, chunk, cache, true)
}

fn dcconv_impl<S: Scalar>(
    x: &Matrix<S>,
    kernels: &Matrix<S>,
    chunk: usize,
    cache: Option<&ConvCache<S>>,
    parallel: bool,
) -> Result<(Matrix<S>, ConvCache<S>)> {
    let k = check_kernel(x, kernels)?;
    if chunk == 0 {
        return Err(Error::Config("chunk size must be at least one frame".into()));
    }
    let left = left_context(k);
    let mut cache = cache
        .cloned()
        .unwrap_or_else(|| ConvCache::fresh(left, x.cols()));
    cache.check(left, x.cols())?;

    let ext = cache.frames.vstack(x)?;
    let bounds = chunk_bounds(x.rows(), chunk);
    let pieces: Vec<Matrix<S>> = if parallel {
        bounds
            .par_iter()
            .map(|&(s, e)| conv_one_chunk(&ext, kernels, left, s, e))
            .collect::<Result<_>>()?
    } else {
        bounds
            .iter()
            .map(|&(s, e)| conv_one_chunk(&ext, kernels, left, s, e))
            .collect::<Result<_>>()?
    };
    let out = Matrix::concat_rows(&pieces, x.cols())?;
    cache.advance(x)?;
    Ok((out, cache))
}

/// Weights of the Conformer convolution module.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvModuleParams<S> {
    pub norm_gamma: Vec<S>,
    pub norm_beta: Vec<S>,
    /// D × 2D
    pub pw_in_weight: Matrix<S>,
    pub pw_in_bias: Vec<S>,
    /// k × D
    pub depthwise: Matrix<S>,
    /// Inference-form batch norm: `(x - mean) * scale + shift`.
    pub bn_mean: Vec<S>,
    pub bn_scale: Vec<S>,
    pub bn_shift: Vec<S>,
    /// D × D
    pub pw_out_weight: Matrix<S>,
    pub pw_out_bias: Vec<S>,
}

impl<S: Scalar> ConvModuleParams<S> {
    pub fn kernel_size(&self) -> usize {
        self.depthwise.rows()
    }

    pub fn channels(&self) -> usize {
        self.depthwise.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.channels();
        let ok = self.norm_gamma.len() == d
            && self.norm_beta.len() == d
            && self.pw_in_weight.shape() == (d, 2 * d)
            && self.pw_in_bias.len() == 2 * d
            && self.bn_mean.len() == d
            && self.bn_scale.len() == d
            && self.bn_shift.len() == d
            && self.pw_out_weight.shape() == (d, d)
            && self.pw_out_bias.len() == d;
        if !ok {
            return Err(shape_err!("conv module parameters inconsistent with {d} channels"));
        }
        if self.kernel_size().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size()
            )));
        }
        Ok(())
    }
}

/// Output of the convolution branch before the residual add, plus the
/// depthwise-conv input that streaming caches are built from.
#[derive(Debug, Clone)]
pub struct ConvBranch<S> {
    pub output: Matrix<S>,
    pub depthwise_input: Matrix<S>,
}

/// Convolution branch without the residual connection.
///
/// `chunk = None` means one chunk spanning the whole input. The cache is read
/// but not updated; callers advance it with whichever frames they commit.
pub fn conv_branch<S: Scalar>(
    x: &Matrix<S>,
    params: &ConvModuleParams<S>,
    mode: ConvMode,
    chunk: Option<usize>,
    cache: Option<&ConvCache<S>>,
) -> Result<ConvBranch<S>> {
    conv_branch_with(x, params, mode, chunk, cache, false)
}

/// [`conv_branch`] with the option of convolving dcconv chunks in parallel.
pub fn conv_branch_with<S: Scalar>(
    x: &Matrix<S>,
    params: &ConvModuleParams<S>,
    mode: ConvMode,
    chunk: Option<usize>,
    cache: Option<&ConvCache<S>>,
    parallel_chunks: bool,
) -> Result<ConvBranch<S>> {
    params.validate()?;
    if x.cols() != params.channels() {
        return Err(shape_err!(
            "conv module expects {} channels, got {}",
            params.channels(),
            x.cols()
        ));
    }
    let h = layer_norm(
        x,
        &params.norm_gamma,
        &params.norm_beta,
        S::from_f64(LAYER_NORM_EPS),
    )?;
    let h = glu(&linear(&h, &params.pw_in_weight, &params.pw_in_bias)?)?;
    let mut conv = match mode {
        ConvMode::Regular => conv_regular(&h, &params.depthwise)?,
        ConvMode::Causal => conv_causal_cached(&h, &params.depthwise, cache)?.0,
        ConvMode::DcConv => {
            let chunk = chunk.unwrap_or(h.rows()).max(1);
            dcconv_impl(&h, &params.depthwise, chunk, cache, parallel_chunks)?.0
        }
    };
    for r in 0..conv.rows() {
        for (c, v) in conv.row_mut(r).iter_mut().enumerate() {
            *v = (*v - params.bn_mean[c]) * params.bn_scale[c] + params.bn_shift[c];
        }
    }
    let out = linear(&swish(&conv), &params.pw_out_weight, &params.pw_out_bias)?;
    Ok(ConvBranch {
        output: out,
        depthwise_input: h,
    })
}

/// Full convolution module with residual: LN → pointwise → GLU → depthwise
/// (selected mode) → scale-shift norm → swish → pointwise, added to `x`.
///
/// The returned cache is `Some` for the modes that carry history (causal and
/// dcconv) and reflects every frame of `x`.
pub fn conv_module<S: Scalar>(
    x: &Matrix<S>,
    params: &ConvModuleParams<S>,
    mode: ConvMode,
    chunk: Option<usize>,
    cache: Option<&ConvCache<S>>,
) -> Result<(Matrix<S>, Option<ConvCache<S>>)> {
    let branch = conv_branch(x, params, mode, chunk, cache)?;
    let out = x.add(&branch.output)?;
    let next = match mode {
        ConvMode::Regular => None,
        ConvMode::Causal | ConvMode::DcConv => {
            let depth = mode.cache_depth(params.kernel_size());
            let mut c = cache
                .cloned()
                .unwrap_or_else(|| ConvCache::fresh(depth, x.cols()));
            c.advance(&branch.depthwise_input)?;
            Some(c)
        }
    };
    Ok((out, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::XorShift64;

    fn random(rng: &mut XorShift64, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    fn column(v: &[f64]) -> Matrix<f64> {
        Matrix::from_fn(v.len(), 1, |r, _| v[r])
    }

    pub(crate) fn random_params(rng: &mut XorShift64, d: usize, k: usize) -> ConvModuleParams<f64> {
        ConvModuleParams {
            norm_gamma: vec![1.0; d],
            norm_beta: vec![0.0; d],
            pw_in_weight: random(rng, d, 2 * d),
            pw_in_bias: (0..2 * d).map(|_| rng.uniform(-0.5, 0.5)).collect(),
            depthwise: random(rng, k, d),
            bn_mean: vec![0.0; d],
            bn_scale: vec![1.0; d],
            bn_shift: vec![0.0; d],
            pw_out_weight: random(rng, d, d),
            pw_out_bias: (0..d).map(|_| rng.uniform(-0.5, 0.5)).collect(),
        }
    }

    #[test]
    fn regular_hand_cases() {
        let x = column(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        let ones = column(&[1.0, 1.0, 1.0]);
        assert_eq!(conv_regular(&x, &ones).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 0.0]);
        let id = column(&[0.0, 1.0, 0.0]);
        assert_eq!(conv_regular(&x, &id).unwrap(), x);
    }

    #[test]
    fn causal_hand_cases() {
        let x = column(&[1.0, 0.0, 0.0, 0.0]);
        let ones = column(&[1.0, 1.0, 1.0]);
        assert_eq!(conv_causal(&x, &ones).unwrap().data(), &[1.0, 1.0, 1.0, 0.0]);
        let mut rng = XorShift64::new(1);
        let y = random(&mut rng, 9, 2);
        let last_tap = Matrix::from_fn(5, 2, |r, _| if r == 4 { 1.0 } else { 0.0 });
        assert_eq!(conv_causal(&y, &last_tap).unwrap(), y);
    }

    #[test]
    fn dcconv_left_context_constants() {
        assert_eq!(left_context(5), 2);
        assert_eq!(left_context(31), 15);
        assert_eq!(ConvMode::Causal.cache_depth(5), 4);
        assert_eq!(ConvMode::DcConv.cache_depth(5), 2);
    }

    #[test]
    fn dcconv_single_chunk_equals_regular() {
        let mut rng = XorShift64::new(2);
        for t in [1, 3, 7, 16] {
            let x = random(&mut rng, t, 3);
            let k = random(&mut rng, 5, 3);
            let (y, _) = conv_dcconv(&x, &k, t.max(20), None).unwrap();
            assert_eq!(y, conv_regular(&x, &k).unwrap());
        }
    }

    #[test]
    fn dcconv_hand_case_stops_at_boundary() {
        // C = 2, k = 3: frame 1 would see frame 2 under regular conv.
        let x = column(&[1.0, 2.0, 4.0, 8.0]);
        let ones = column(&[1.0, 1.0, 1.0]);
        let (y, cache) = conv_dcconv(&x, &ones, 2, None).unwrap();
        assert_eq!(y.data(), &[3.0, 3.0, 14.0, 12.0]);
        assert_eq!(cache.frames().data(), &[8.0]);
    }

    #[test]
    fn dcconv_perturbation_respects_chunk_boundary() {
        let mut rng = XorShift64::new(8);
        let x = random(&mut rng, 16, 1);
        let k = random(&mut rng, 5, 1);
        let (base, _) = conv_dcconv(&x, &k, 4, None).unwrap();

        let mut bumped = x.clone();
        bumped.set(4, 0, x.get(4, 0) + 1.0);
        let (y, _) = conv_dcconv(&bumped, &k, 4, None).unwrap();
        for t in 0..4 {
            assert_eq!(y.get(t, 0), base.get(t, 0));
        }

        let mut bumped = x.clone();
        bumped.set(3, 0, x.get(3, 0) + 1.0);
        let (y, _) = conv_dcconv(&bumped, &k, 4, None).unwrap();
        assert_ne!(y.get(2, 0), base.get(2, 0));
    }

    #[test]
    fn regular_leaks_and_causal_does_not() {
        let mut rng = XorShift64::new(12);
        let x = random(&mut rng, 16, 1);
        let k = random(&mut rng, 5, 1);
        let base_r = conv_regular(&x, &k).unwrap();
        let base_c = conv_causal(&x, &k).unwrap();
        for p in 0..16 {
            let mut bumped = x.clone();
            bumped.set(p, 0, x.get(p, 0) + 1.0);
            let r = conv_regular(&bumped, &k).unwrap();
            let c = conv_causal(&bumped, &k).unwrap();
            if p >= 1 {
                assert_ne!(r.get(p - 1, 0), base_r.get(p - 1, 0));
            }
            for t in 0..p {
                assert_eq!(c.get(t, 0), base_c.get(t, 0));
            }
        }
    }

    #[test]
    fn dcconv_cache_threading_matches_one_shot() {
        let mut rng = XorShift64::new(5);
        let x = random(&mut rng, 29, 4);
        let k = random(&mut rng, 7, 4);
        let (full, _) = conv_dcconv(&x, &k, 8, None).unwrap();
        let mut cache = None;
        let mut pieces = Matrix::zeros(0, 4);
        for start in (0..29).step_by(8) {
            let end = (start + 8).min(29);
            let (y, c) = conv_dcconv(&x.slice_rows(start, end), &k, 8, cache.as_ref()).unwrap();
            pieces = pieces.vstack(&y).unwrap();
            cache = Some(c);
        }
        assert_eq!(pieces, full);
    }

    #[test]
    fn dcconv_cache_spans_short_chunks() {
        // L = 3 with one-frame chunks: the cache reaches back over several chunks.
        let mut rng = XorShift64::new(6);
        let x = random(&mut rng, 10, 2);
        let k = random(&mut rng, 7, 2);
        let (full, _) = conv_dcconv(&x, &k, 1, None).unwrap();
        let mut cache = None;
        for t in 0..10 {
            let (y, c) = conv_dcconv(&x.slice_rows(t, t + 1), &k, 1, cache.as_ref()).unwrap();
            assert_eq!(y.row(0), full.row(t));
            cache = Some(c);
        }
        // chunk size 1 means zero look-ahead: same as causal on the left half kernel
        let mut half = k.clone();
        for r in 4..7 {
            for c in 0..2 {
                half.set(r, c, 0.0);
            }
        }
        let causal_like = conv_dcconv(&x, &half, 1, None).unwrap().0;
        assert!(causal_like.max_abs_diff(&full).unwrap() < 1e-12);
    }

    #[test]
    fn parallel_chunks_are_bitwise_identical() {
        let mut rng = XorShift64::new(17);
        let x = random(&mut rng, 100, 8).convert::<f32>();
        let k = random(&mut rng, 15, 8).convert::<f32>();
        let (a, ca) = conv_dcconv(&x, &k, 6, None).unwrap();
        let (b, cb) = conv_dcconv_parallel(&x, &k, 6, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
    }

    #[test]
    fn cache_shape_is_checked() {
        let x = Matrix::<f64>::zeros(4, 2);
        let k = Matrix::<f64>::zeros(5, 2);
        let wrong = ConvCache::fresh(3, 2);
        assert!(conv_dcconv(&x, &k, 2, Some(&wrong)).is_err());
        assert!(conv_dcconv(&x, &Matrix::zeros(4, 2), 2, None).is_err());
    }

    #[test]
    fn module_residual_only_when_weights_vanish() {
        let mut rng = XorShift64::new(3);
        let mut p = random_params(&mut rng, 4, 5);
        p.depthwise = Matrix::zeros(5, 4);
        p.pw_out_weight = Matrix::zeros(4, 4);
        p.pw_out_bias = vec![0.0; 4];
        let x = random(&mut rng, 6, 4);
        for mode in [ConvMode::Regular, ConvMode::Causal, ConvMode::DcConv] {
            let (y, _) = conv_module(&x, &p, mode, Some(2), None).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn module_single_chunk_matches_regular() {
        let mut rng = XorShift64::new(4);
        let p = random_params(&mut rng, 6, 7);
        let x = random(&mut rng, 12, 6);
        let (a, _) = conv_module(&x, &p, ConvMode::Regular, None, None).unwrap();
        let (b, _) = conv_module(&x, &p, ConvMode::DcConv, Some(12), None).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-6);
    }

    #[test]
    fn module_streaming_matches_one_shot_single_precision() {
        let mut rng = XorShift64::new(9);
        let p64 = random_params(&mut rng, 8, 5);
        let p = ConvModuleParams::<f32> {
            norm_gamma: p64.norm_gamma.iter().map(|&v| v as f32).collect(),
            norm_beta: p64.norm_beta.iter().map(|&v| v as f32).collect(),
            pw_in_weight: p64.pw_in_weight.convert(),
            pw_in_bias: p64.pw_in_bias.iter().map(|&v| v as f32).collect(),
            depthwise: p64.depthwise.convert(),
            bn_mean: vec![0.0; 8],
            bn_scale: vec![1.0; 8],
            bn_shift: vec![0.0; 8],
            pw_out_weight: p64.pw_out_weight.convert(),
            pw_out_bias: p64.pw_out_bias.iter().map(|&v| v as f32).collect(),
        };
        let x = random(&mut rng, 32, 8).convert::<f32>();
        let (full, _) = conv_module(&x, &p, ConvMode::DcConv, Some(8), None).unwrap();
        let mut cache = None;
        let mut streamed = Matrix::zeros(0, 8);
        for start in (0..32).step_by(8) {
            let (y, c) =
                conv_module(&x.slice_rows(start, start + 8), &p, ConvMode::DcConv, Some(8), cache.as_ref())
                    .unwrap();
            streamed = streamed.vstack(&y).unwrap();
            cache = c;
        }
        assert!(streamed.max_abs_diff(&full).unwrap() <= 1e-5);
    }

    #[test]
    fn module_rejects_bad_shapes() {
        let mut rng = XorShift64::new(3);
        let mut p = random_params(&mut rng, 4, 5);
        p.pw_out_bias = vec![0.0; 3];
        let x = random(&mut rng, 6, 4);
        assert!(matches!(
            conv_module(&x, &p, ConvMode::DcConv, None, None),
            Err(Error::Shape(_))
        ));
    }
}
