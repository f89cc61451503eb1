//! Multi-head self-attention with absolute positions and a bounded key/value cache.

use crate::error::{shape_err, Result};
use crate::masking::AttentionMask;
use crate::scalar::Scalar;
use crate::tensor::{linear, masked_softmax, matmul, matmul_transposed, sinusoidal_positions, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<S> {
    pub wq: Matrix<S>,
    pub bq: Vec<S>,
    pub wk: Matrix<S>,
    pub bk: Vec<S>,
    pub wv: Matrix<S>,
    pub bv: Vec<S>,
    pub wo: Matrix<S>,
    pub bo: Vec<S>,
}

/// Projected keys and values of frames that precede the current input.
///
/// With a capacity the cache keeps only the most recent frames, which is the
/// streaming form of a finite attention left context.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache<S> {
    keys: Matrix<S>,
    values: Matrix<S>,
    capacity: Option<usize>,
}

impl<S: Scalar> KvCache<S> {
    pub fn new(d_model: usize, capacity: Option<usize>) -> Self {
        Self {
            keys: Matrix::zeros(0, d_model),
            values: Matrix::zeros(0, d_model),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn keys(&self) -> &Matrix<S> {
        &self.keys
    }

    pub fn values(&self) -> &Matrix<S> {
        &self.values
    }

    /// Appends frames, then drops the oldest beyond capacity.
    pub fn push(&mut self, keys: &Matrix<S>, values: &Matrix<S>) -> Result<()> {
        if keys.shape() != values.shape() {
            return Err(shape_err!(
                "keys {:?} and values {:?} differ",
                keys.shape(),
                values.shape()
            ));
        }
        self.keys = self.keys.vstack(keys)?;
        self.values = self.values.vstack(values)?;
        if let Some(cap) = self.capacity {
            let n = self.keys.rows();
            if n > cap {
                self.keys = self.keys.slice_rows(n - cap, n);
                self.values = self.values.slice_rows(n - cap, n);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttentionOutput<S> {
    pub output: Matrix<S>,
    /// Keys of the current input rows only (not the cache).
    pub keys: Matrix<S>,
    pub values: Matrix<S>,
}

/// Masked multi-head self-attention.
///
/// Positions `offset..offset+T` are added to `x` before projection. With a
/// cache, keys and values are `[cache ∥ current]` and `mask` must be
/// `T × (cache_len + T)`.
pub fn mhsa<S: Scalar>(
    x: &Matrix<S>,
    mask: &AttentionMask,
    params: &AttentionParams<S>,
    heads: usize,
    cache: Option<&KvCache<S>>,
    offset: usize,
) -> Result<AttentionOutput<S>> {
    let (t, d) = x.shape();
    if heads == 0 || d % heads != 0 {
        return Err(shape_err!("{d} dims cannot split into {heads} heads"));
    }
    let cached = cache.map_or(0, KvCache::len);
    if mask.shape() != (t, cached + t) {
        return Err(shape_err!(
            "mask {:?} for {t} queries over {} keys",
            mask.shape(),
            cached + t
        ));
    }

    let h = x.add(&sinusoidal_positions(offset, t, d))?;
    let q = linear(&h, &params.wq, &params.bq)?;
    let k_new = linear(&h, &params.wk, &params.bk)?;
    let v_new = linear(&h, &params.wv, &params.bv)?;
    let (k_all, v_all) = match cache {
        Some(c) if !c.is_empty() => (c.keys.vstack(&k_new)?, c.values.vstack(&v_new)?),
        _ => (k_new.clone(), v_new.clone()),
    };

    let hd = d / heads;
    let scale = S::ONE / S::from_f64(hd as f64).sqrt();
    let mut context = Matrix::zeros(t, d);
    for head in 0..heads {
        let (lo, hi) = (head * hd, (head + 1) * hd);
        let scores = matmul_transposed(&q.slice_cols(lo, hi), &k_all.slice_cols(lo, hi))?;
        let probs = masked_softmax(&scores, mask, scale)?;
        let out = matmul(&probs, &v_all.slice_cols(lo, hi))?;
        for r in 0..t {
            context.row_mut(r)[lo..hi].copy_from_slice(out.row(r));
        }
    }

    Ok(AttentionOutput {
        output: linear(&context, &params.wo, &params.bo)?,
        keys: k_new,
        values: v_new,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{chunk_mask, LeftContext};
    use crate::rng::XorShift64;

    fn random(rng: &mut XorShift64, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    fn random_params(rng: &mut XorShift64, d: usize) -> AttentionParams<f64> {
        let mut m = || random(rng, d, d).scale(0.3);
        let (wq, wk, wv, wo) = (m(), m(), m(), m());
        let mut b = || (0..d).map(|_| rng.uniform(-0.1, 0.1)).collect::<Vec<_>>();
        AttentionParams {
            wq,
            bq: b(),
            wk,
            bk: b(),
            wv,
            bv: b(),
            wo,
            bo: b(),
        }
    }

    fn identity(d: usize) -> Matrix<f64> {
        Matrix::from_fn(d, d, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[test]
    fn self_only_attention_returns_projected_input() {
        let mut rng = XorShift64::new(1);
        let d = 6;
        let mut p = random_params(&mut rng, d);
        p.wv = identity(d);
        p.bv = vec![0.0; d];
        let x = random(&mut rng, 5, d);
        let diag = AttentionMask::from_fn(5, 5, |r, c| r == c);
        let out = mhsa(&x, &diag, &p, 1, None, 0).unwrap();
        let expect = linear(&x.add(&sinusoidal_positions(0, 5, d)).unwrap(), &p.wo, &p.bo).unwrap();
        assert!(out.output.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn full_mask_equals_covering_chunk_mask() {
        let mut rng = XorShift64::new(2);
        let p = random_params(&mut rng, 8);
        let x = random(&mut rng, 9, 8);
        let a = mhsa(&x, &AttentionMask::full(9, 9), &p, 2, None, 0).unwrap();
        let b = mhsa(&x, &chunk_mask(9, 16, LeftContext::All), &p, 2, None, 0).unwrap();
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn cached_split_matches_one_shot() {
        let mut rng = XorShift64::new(3);
        let p = random_params(&mut rng, 8);
        let x = random(&mut rng, 12, 8);
        for split in 1..12 {
            // one-shot: the first block sees itself, the rest sees everything
            let mask = AttentionMask::from_fn(12, 12, |r, c| if r < split { c < split } else { true });
            let full = mhsa(&x, &mask, &p, 4, None, 0).unwrap().output;

            let head = x.slice_rows(0, split);
            let first = mhsa(&head, &AttentionMask::full(split, split), &p, 4, None, 0).unwrap();
            let mut cache = KvCache::new(8, None);
            cache.push(&first.keys, &first.values).unwrap();
            let tail = x.slice_rows(split, 12);
            let second =
                mhsa(&tail, &AttentionMask::full(12 - split, 12), &p, 4, Some(&cache), split).unwrap();
            let joined = first.output.vstack(&second.output).unwrap();
            assert!(joined.max_abs_diff(&full).unwrap() <= 1e-10);

            let joined32 = {
                let p32 = AttentionParams::<f32> {
                    wq: p.wq.convert(),
                    bq: p.bq.iter().map(|&v| v as f32).collect(),
                    wk: p.wk.convert(),
                    bk: p.bk.iter().map(|&v| v as f32).collect(),
                    wv: p.wv.convert(),
                    bv: p.bv.iter().map(|&v| v as f32).collect(),
                    wo: p.wo.convert(),
                    bo: p.bo.iter().map(|&v| v as f32).collect(),
                };
                let x32 = x.convert::<f32>();
                let full32 = mhsa(&x32, &mask, &p32, 4, None, 0).unwrap().output;
                let a = mhsa(&x32.slice_rows(0, split), &AttentionMask::full(split, split), &p32, 4, None, 0)
                    .unwrap();
                let mut c = KvCache::new(8, None);
                c.push(&a.keys, &a.values).unwrap();
                let b = mhsa(&x32.slice_rows(split, 12), &AttentionMask::full(12 - split, 12), &p32, 4, Some(&c), split)
                    .unwrap();
                a.output.vstack(&b.output).unwrap().max_abs_diff(&full32).unwrap()
            };
            assert!(joined32 <= 1e-5);
        }
    }

    #[test]
    fn cache_capacity_trims_oldest() {
        let mut c = KvCache::<f64>::new(2, Some(3));
        let m = Matrix::from_fn(5, 2, |r, _| r as f64);
        c.push(&m, &m).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.keys().get(0, 0), 2.0);
        let mut none = KvCache::<f64>::new(2, Some(0));
        none.push(&m, &m).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn mask_length_mismatch_is_shape_error() {
        let mut rng = XorShift64::new(4);
        let p = random_params(&mut rng, 4);
        let x = random(&mut rng, 3, 4);
        let mut cache = KvCache::new(4, None);
        cache.push(&x, &x).unwrap();
        let err = mhsa(&x, &AttentionMask::full(3, 3), &p, 2, Some(&cache), 3).unwrap_err();
        assert!(matches!(err, crate::Error::Shape(_)));
    }
}
