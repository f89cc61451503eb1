//! Dense row-major matrices and the numerical kernels the encoder is built from.
//!
//! Every reduction runs in ascending index order so that a row's result never
//! depends on how many other rows were computed alongside it. The streaming
//! runtime relies on this to reproduce the offline forward pass bit for bit.

use crate::error::{shape_err, Error, Result};
use crate::masking::AttentionMask;
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input; intended for literals.
    pub fn from_rows<R: AsRef<[S]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.rows, "row range out of bounds");
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Copy of columns `[start, end)`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols, "column range out of bounds");
        Self::from_fn(self.rows, end - start, |r, c| self.get(r, start + c))
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(shape_err!(
                "cannot stack {}-column rows onto {} columns",
                other.cols,
                self.cols
            ));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    /// Stacks row blocks of equal width. An empty list gives a `0 × cols` matrix.
    pub fn concat_rows(blocks: &[Self], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(blocks.iter().map(|b| b.data.len()).sum());
        let mut rows = 0;
        for b in blocks {
            if b.rows > 0 && b.cols != cols {
                return Err(shape_err!("row block has {} columns, expected {cols}", b.cols));
            }
            rows += b.rows;
            data.extend_from_slice(&b.data);
        }
        Ok(Self { rows, cols, data })
    }

    /// Places `other` to the right of `self`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(shape_err!(
                "hstack row mismatch: {} vs {}",
                self.rows,
                other.rows
            ));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(shape_err!(
                "elementwise op on {:?} and {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn convert<T: Scalar>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    /// Largest absolute elementwise difference, as `f64`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(shape_err!(
                "comparing {:?} with {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }
}

/// `a × b`, summing over the shared index in ascending order.
pub fn matmul<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<Matrix<S>> {
    if a.cols != b.rows {
        return Err(shape_err!(
            "matmul {}x{} by {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a × bᵀ` without materialising the transpose.
pub fn matmul_transposed<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<Matrix<S>> {
    if a.cols != b.cols {
        return Err(shape_err!(
            "matmul_transposed {}x{} by ({}x{})ᵀ",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let mut acc = S::ZERO;
            for (&x, &y) in arow.iter().zip(b.row(j)) {
                acc += x * y;
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    Ok(out)
}

/// Row softmax of `scores × scale` with hidden positions forced to probability 0.
pub fn masked_softmax<S: Scalar>(
    scores: &Matrix<S>,
    mask: &AttentionMask,
    scale: S,
) -> Result<Matrix<S>> {
    if scores.shape() != mask.shape() {
        return Err(shape_err!(
            "scores {:?} vs mask {:?}",
            scores.shape(),
            mask.shape()
        ));
    }
    let mut out = Matrix::zeros(scores.rows, scores.cols);
    for r in 0..scores.rows {
        let visible = mask.row(r);
        let mut max = S::NEG_INFINITY;
        let mut any = false;
        for (c, &s) in scores.row(r).iter().enumerate() {
            if visible[c] {
                max = if any { max.max(s * scale) } else { s * scale };
                any = true;
            }
        }
        if !any {
            return Err(Error::Contract(format!(
                "softmax row {r} has no visible entry"
            )));
        }
        let orow = out.row_mut(r);
        let mut sum = S::ZERO;
        for (c, &s) in scores.row(r).iter().enumerate() {
            if visible[c] {
                let e = (s * scale - max).exp();
                orow[c] = e;
                sum += e;
            }
        }
        for v in orow.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

pub fn layer_norm<S: Scalar>(x: &Matrix<S>, gamma: &[S], beta: &[S], eps: S) -> Result<Matrix<S>> {
    if gamma.len() != x.cols || beta.len() != x.cols {
        return Err(shape_err!(
            "layer_norm over {} columns with gamma {} / beta {}",
            x.cols,
            gamma.len(),
            beta.len()
        ));
    }
    let n = S::from_f64(x.cols as f64);
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<S>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let inv = S::ONE / (var + eps).sqrt();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (row[c] - mean) * inv * gamma[c] + beta[c];
        }
    }
    Ok(out)
}

/// Zero-padding layout for [`depthwise_conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingPlan {
    /// `(k-1)/2` frames on both sides.
    Symmetric,
    /// `k-1` frames on the left only.
    Causal,
    Explicit { left: usize, right: usize },
}

impl PaddingPlan {
    pub fn pads(self, kernel: usize) -> (usize, usize) {
        match self {
            PaddingPlan::Symmetric => ((kernel - 1) / 2, (kernel - 1) / 2),
            PaddingPlan::Causal => (kernel - 1, 0),
            PaddingPlan::Explicit { left, right } => (left, right),
        }
    }
}

/// Per-channel 1-D cross-correlation of `x` (T×D) with `kernels` (k×D).
///
/// Output length is `T + left + right - k + 1`, which is `T` for the symmetric
/// and causal plans.
pub fn depthwise_conv1d<S: Scalar>(
    x: &Matrix<S>,
    kernels: &Matrix<S>,
    padding: PaddingPlan,
) -> Result<Matrix<S>> {
    let k = kernels.rows;
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::Config(format!("kernel size must be odd, got {k}")));
    }
    if kernels.cols != x.cols {
        return Err(shape_err!(
            "kernel has {} channels, input has {}",
            kernels.cols,
            x.cols
        ));
    }
    let (left, right) = padding.pads(k);
    let padded_len = x.rows + left + right;
    if padded_len < k {
        return Ok(Matrix::zeros(0, x.cols));
    }
    let out_len = padded_len + 1 - k;
    let d = x.cols;
    let mut out = Matrix::zeros(out_len, d);
    for t in 0..out_len {
        let orow = &mut out.data[t * d..(t + 1) * d];
        for j in 0..k {
            // padded index t + j maps to input row t + j - left
            let src = (t + j) as isize - left as isize;
            let krow = kernels.row(j);
            if src < 0 || src as usize >= x.rows {
                continue;
            }
            let xrow = x.row(src as usize);
            for ((o, &w), &v) in orow.iter_mut().zip(krow).zip(xrow) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Gated linear unit over the column halves: `a ⊙ σ(b)` for `x = [a | b]`.
pub fn glu<S: Scalar>(x: &Matrix<S>) -> Result<Matrix<S>> {
    if !x.cols.is_multiple_of(2) {
        return Err(shape_err!("glu needs an even column count, got {}", x.cols));
    }
    let half = x.cols / 2;
    Ok(Matrix::from_fn(x.rows, half, |r, c| {
        x.get(r, c) * x.get(r, c + half).sigmoid()
    }))
}

pub fn swish<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    x.map(|v| v * v.sigmoid())
}

/// `x × w + b` with `w` stored as in×out.
pub fn linear<S: Scalar>(x: &Matrix<S>, w: &Matrix<S>, b: &[S]) -> Result<Matrix<S>> {
    if b.len() != w.cols {
        return Err(shape_err!(
            "bias length {} for {} outputs",
            b.len(),
            w.cols
        ));
    }
    let mut out = matmul(x, w)?;
    for r in 0..out.rows {
        for (o, &bias) in out.row_mut(r).iter_mut().zip(b) {
            *o += bias;
        }
    }
    Ok(out)
}

/// Absolute sinusoidal encodings for positions `offset..offset+n`.
pub fn sinusoidal_positions<S: Scalar>(offset: usize, n: usize, d: usize) -> Matrix<S> {
    Matrix::from_fn(n, d, |r, c| {
        let pos = (offset + r) as f64;
        let pair = (c / 2) as f64;
        let angle = pos / 10000f64.powf(2.0 * pair / d as f64);
        S::from_f64(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Row-wise `log_softmax`, in `f64` regardless of the input precision.
pub fn log_softmax_rows<S: Scalar>(x: &Matrix<S>) -> Vec<Vec<f64>> {
    (0..x.rows)
        .map(|r| {
            let row: Vec<f64> = x.row(r).iter().map(|v| v.to_f64()).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter().map(|v| v - lse).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::AttentionMask;
    use crate::rng::XorShift64;

    fn random(rng: &mut XorShift64, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let eye = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        let r = matmul(
            &Matrix::from_rows(&[[1.0, 2.0]]),
            &Matrix::from_rows(&[[3.0], [4.0]]),
        )
        .unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_single_precision() {
        let mut rng = XorShift64::new(7);
        let a = random(&mut rng, 7, 5);
        let b = random(&mut rng, 5, 3);
        let expect = naive_matmul(&a, &b);
        let got = matmul(&a.convert::<f32>(), &b.convert::<f32>()).unwrap();
        assert!(got.convert::<f64>().max_abs_diff(&expect).unwrap() <= 1e-6);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Matrix::<f32>::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_transposed_agrees_with_explicit_transpose() {
        let mut rng = XorShift64::new(3);
        let a = random(&mut rng, 4, 6);
        let b = random(&mut rng, 5, 6);
        let lhs = matmul_transposed(&a, &b).unwrap();
        let rhs = matmul(&a, &b.transpose()).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn softmax_examples() {
        let full = AttentionMask::from_fn(1, 2, |_, _| true);
        let s = masked_softmax(&Matrix::from_rows(&[[0.0f64, 0.0]]), &full, 1.0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let first = AttentionMask::from_fn(1, 2, |_, c| c == 0);
        let s = masked_softmax(&Matrix::from_rows(&[[5.0f64, 100.0]]), &first, 1.0).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_fully_masked_row_is_contract_error() {
        let none = AttentionMask::from_fn(2, 2, |r, _| r == 0);
        let err = masked_softmax(&Matrix::<f64>::zeros(2, 2), &none, 1.0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn softmax_rows_sum_to_one_over_random_masks() {
        let mut rng = XorShift64::new(11);
        for _ in 0..100 {
            let scores = random(&mut rng, 6, 6).scale(10.0);
            let mut mask = AttentionMask::from_fn(6, 6, |_, _| rng.next_u64().is_multiple_of(2));
            for r in 0..6 {
                let c = (rng.next_u64() % 6) as usize;
                mask.set(r, c, true);
            }
            let p = masked_softmax(&scores, &mask, 0.5).unwrap();
            for r in 0..6 {
                let sum: f64 = p.row(r).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-6);
                for c in 0..6 {
                    if !mask.get(r, c) {
                        assert_eq!(p.get(r, c), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn layer_norm_examples() {
        let ones = [1.0f64; 3];
        let zeros = [0.0f64; 3];
        let y = layer_norm(&Matrix::from_rows(&[[1.0, 1.0, 1.0]]), &ones, &zeros, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
        let y = layer_norm(&Matrix::from_rows(&[[0.0, 2.0]]), &ones[..2], &zeros[..2], 1e-5)
            .unwrap();
        assert!((y.get(0, 0) + 1.0).abs() < 1e-5 && (y.get(0, 1) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_standardizes_random_rows() {
        let mut rng = XorShift64::new(5);
        let x = random(&mut rng, 10, 32).scale(4.0);
        let y = layer_norm(&x, &[1.0; 32], &[0.0; 32], 1e-5).unwrap();
        for r in 0..10 {
            let mean: f64 = y.row(r).iter().sum::<f64>() / 32.0;
            let var: f64 = y.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
        assert!(matches!(
            layer_norm(&x, &[1.0; 3], &[0.0; 3], 1e-5),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_hand_cases() {
        let x = Matrix::from_rows(&[[1.0f64]; 5]);
        let id = Matrix::from_rows(&[[0.0], [1.0], [0.0]]);
        assert_eq!(depthwise_conv1d(&x, &id, PaddingPlan::Symmetric).unwrap(), x);

        let x = Matrix::from_rows(&[[1.0f64], [0.0], [0.0], [0.0]]);
        let ones = Matrix::from_rows(&[[1.0], [1.0], [1.0]]);
        let y = depthwise_conv1d(&x, &ones, PaddingPlan::Causal).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let x = Matrix::<f64>::zeros(4, 1);
        let k = Matrix::<f64>::zeros(4, 1);
        assert!(matches!(
            depthwise_conv1d(&x, &k, PaddingPlan::Symmetric),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv_matches_naive_channel_loop() {
        let mut rng = XorShift64::new(21);
        let x = random(&mut rng, 12, 3);
        let k = random(&mut rng, 5, 3);
        for plan in [
            PaddingPlan::Symmetric,
            PaddingPlan::Causal,
            PaddingPlan::Explicit { left: 1, right: 3 },
        ] {
            let (left, right) = plan.pads(5);
            let got = depthwise_conv1d(&x, &k, plan).unwrap();
            let out_len = 12 + left + right - 4;
            assert_eq!(got.rows(), out_len);
            for ch in 0..3 {
                for t in 0..out_len {
                    let mut acc = 0.0;
                    for j in 0..5 {
                        let src = t as isize + j as isize - left as isize;
                        if (0..12).contains(&src) {
                            acc += k.get(j, ch) * x.get(src as usize, ch);
                        }
                    }
                    assert!((got.get(t, ch) - acc).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn glu_swish_positions() {
        let x = Matrix::from_rows(&[[2.0f64, -4.0, 0.0, 0.0]]);
        assert_eq!(glu(&x).unwrap().data(), &[1.0, -2.0]);
        assert!(glu(&Matrix::<f64>::zeros(1, 3)).is_err());
        assert_eq!(swish(&Matrix::from_rows(&[[0.0f64]])).data(), &[0.0]);

        let all = sinusoidal_positions::<f64>(0, 8, 6);
        let tail = sinusoidal_positions::<f64>(5, 3, 6);
        assert_eq!(tail, all.slice_rows(5, 8));
    }

    #[test]
    fn double_and_single_precision_agree() {
        let mut rng = XorShift64::new(99);
        let x = random(&mut rng, 16, 64);
        let w = random(&mut rng, 64, 64).scale(0.125);
        let b: Vec<f64> = (0..64).map(|_| rng.uniform(-0.1, 0.1)).collect();
        let g = vec![1.0; 64];
        let z = vec![0.0; 64];
        let run64 = layer_norm(&swish(&linear(&x, &w, &b).unwrap()), &g, &z, 1e-5).unwrap();
        let b32: Vec<f32> = b.iter().map(|&v| v as f32).collect();
        let run32 = layer_norm(
            &swish(&linear(&x.convert::<f32>(), &w.convert(), &b32).unwrap()),
            &vec![1.0f32; 64],
            &vec![0.0f32; 64],
            1e-5,
        )
        .unwrap();
        assert!(run32.convert::<f64>().max_abs_diff(&run64).unwrap() <= 1e-3);
    }

    #[test]
    fn kernels_are_deterministic() {
        let mut rng = XorShift64::new(4);
        let a = random(&mut rng, 9, 9).convert::<f32>();
        let first = matmul(&a, &a).unwrap();
        for _ in 0..3 {
            let again = matmul(&a, &a).unwrap();
            assert!(first
                .data()
                .iter()
                .zip(again.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
