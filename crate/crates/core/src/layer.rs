//! Binary weight layers with per-block affine supports.
//!
//! Every column of an `m x n` binary matrix is cut top-to-bottom into
//! `m / p` blocks of `p` rows. Block `g` of column `j` owns one pair
//! `(a[g, j], b[g, j])`, and each binary weight `w` in it acts as `a * w + b`.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Default range of the initial multiplicative supports.
pub const DEFAULT_SUPPORT_INIT: [f64; 2] = [0.5, 1.5];

/// Sign with `sign(0) = +1`.
pub fn binarize<T: Scalar>(w: ArrayView2<'_, T>) -> Result<Array2<T>> {
    if w.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("binarize"));
    }
    Ok(w.mapv(sign))
}

#[inline]
pub(crate) fn sign<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportedBinaryLayer<T> {
    /// Full-precision shadow weights, `m x n`.
    weights: Array2<T>,
    /// `sign(weights)`, kept in sync by every mutator.
    binary: Array2<T>,
    /// Multiplicative supports, `m/p x n`.
    pub(crate) a: Array2<T>,
    /// Additive supports, `m/p x n`.
    pub(crate) b: Array2<T>,
    block_size: usize,
    /// Fixed scale on the layer output, 1 unless set.
    gain: T,
}

impl<T: Scalar> SupportedBinaryLayer<T> {
    pub fn from_parts(weights: Array2<T>, a: Array2<T>, b: Array2<T>, block_size: usize) -> Result<Self> {
        let (m, n) = weights.dim();
        if block_size == 0 || m % block_size != 0 {
            return Err(Error::Config(format!(
                "block size {block_size} does not divide {m} rows"
            )));
        }
        let r = m / block_size;
        if a.dim() != (r, n) || b.dim() != (r, n) {
            return Err(shape_err(format!(
                "supports must be {r}x{n}, got a {:?} and b {:?}",
                a.dim(),
                b.dim()
            )));
        }
        let binary = binarize(weights.view())?;
        Ok(Self {
            weights,
            binary,
            a,
            b,
            block_size,
            gain: T::one(),
        })
    }

    /// Same layer with output `(x S) * gain`.
    pub fn with_gain(mut self, gain: T) -> Result<Self> {
        if !(gain.is_finite() && gain > T::zero()) {
            return Err(Error::Config(format!("layer gain must be positive and finite, got {gain}")));
        }
        self.gain = gain;
        Ok(self)
    }


    /// Plain BNN layer: every support pair is `(1, 0)`.
    pub fn plain(weights: Array2<T>, block_size: usize) -> Result<Self> {
        let (m, n) = weights.dim();
        let r = if block_size == 0 { 0 } else { m / block_size };
        Self::from_parts(weights, Array2::ones((r, n)), Array2::zeros((r, n)), block_size)
    }

    /// Glorot-uniform shadow weights, `a ~ U(0.5, 1.5)`, `b = 0`.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, block_size: usize, rng: &mut R) -> Result<Self> {
        Self::random_with(rows, cols, block_size, DEFAULT_SUPPORT_INIT, rng)
    }

    /// Glorot-uniform shadow weights, `a ~ U(a_range[0], a_range[1])`, `b = 0`.
    pub fn random_with<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        block_size: usize,
        a_range: [f64; 2],
        rng: &mut R,
    ) -> Result<Self> {
        if block_size == 0 || rows % block_size != 0 {
            return Err(Error::Config(format!(
                "block size {block_size} does not divide {rows} rows"
            )));
        }
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let w_dist = Uniform::new_inclusive(-limit, limit).expect("finite range");
        let a_dist = Uniform::new(a_range[0], a_range[1])
            .map_err(|_| Error::Config(format!("support init range {a_range:?} is empty")))?;
        let weights = Array2::from_shape_simple_fn((rows, cols), || T::of(w_dist.sample(rng)));
        let r = rows / block_size;
        let a = Array2::from_shape_simple_fn((r, cols), || T::of(a_dist.sample(rng)));
        Self::from_parts(weights, a, Array2::zeros((r, cols)), block_size)
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn cols(&self) -> usize {
        self.weights.ncols()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Scale applied after the matrix product.
    pub fn gain(&self) -> T {
        self.gain
    }

    /// `1 / sqrt(rows)`, the gain used under fan-in scaling.
    pub fn fan_in_gain(&self) -> T {
        T::of(1.0 / (self.rows() as f64).sqrt())
    }

    pub fn blocks_per_column(&self) -> usize {
        self.rows() / self.block_size
    }

    /// Block index of row `i`.
    #[inline]
    pub fn block_of(&self, row: usize) -> usize {
        row / self.block_size
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }

    pub fn binary(&self) -> &Array2<T> {
        &self.binary
    }

    pub fn supports_a(&self) -> &Array2<T> {
        &self.a
    }

    pub fn supports_b(&self) -> &Array2<T> {
        &self.b
    }

    pub fn set_supports(&mut self, a: Array2<T>, b: Array2<T>) -> Result<()> {
        let want = (self.blocks_per_column(), self.cols());
        if a.dim() != want || b.dim() != want {
            return Err(shape_err(format!("supports must be {want:?}")));
        }
        self.a = a;
        self.b = b;
        Ok(())
    }

    /// Mutable access to `(W, A, B)` for the optimizer. Callers must follow
    /// up with [`Self::sync_binary`].
    pub(crate) fn params_mut(&mut self) -> (&mut Array2<T>, &mut Array2<T>, &mut Array2<T>) {
        (&mut self.weights, &mut self.a, &mut self.b)
    }

    /// Clips shadow weights to `[-1, 1]` and recomputes the binary matrix.
    pub(crate) fn sync_binary(&mut self) -> Result<()> {
        let one = T::one();
        self.weights.mapv_inplace(|w| w.max(-one).min(one));
        self.binary = binarize(self.weights.view())?;
        Ok(())
    }

    /// Effective weights `S[i, j] = A[g(i), j] * Wb[i, j] + B[g(i), j]`.
    pub fn apply_supports(&self) -> Array2<T> {
        self.apply_supports_masked(None)
    }

    /// Same as [`Self::apply_supports`] but with inactive blocks zeroed.
    pub fn apply_supports_masked(&self, active: Option<ArrayView2<'_, bool>>) -> Array2<T> {
        let mut s = self.binary.clone();
        for (i, mut row) in s.rows_mut().into_iter().enumerate() {
            let g = self.block_of(i);
            let a = self.a.row(g);
            let b = self.b.row(g);
            match active {
                None => Zip::from(&mut row).and(a).and(b).for_each(|w, &a, &b| *w = a * *w + b),
                Some(mask) => Zip::from(&mut row)
                    .and(a)
                    .and(b)
                    .and(mask.row(g))
                    .for_each(|w, &a, &b, &on| *w = if on { a * *w + b } else { T::zero() }),
            }
        }
        s
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> SupportedBinaryLayer<U> {
        let conv = |m: &Array2<T>| m.mapv(|v| U::of(v.to_f64_lossy()));
        SupportedBinaryLayer {
            weights: conv(&self.weights),
            binary: conv(&self.binary),
            a: conv(&self.a),
            b: conv(&self.b),
            block_size: self.block_size,
            gain: U::of(self.gain.to_f64_lossy()),
        }
    }
}

/// Exact `p = 2` encoding of an arbitrary real matrix: per block `(v1, v2)`,
/// `Wb = (+1, -1)`, `a = (v1 - v2) / 2`, `b = (v1 + v2) / 2`.
pub fn encode_full_precision<T: Scalar>(
    values: ArrayView2<'_, T>,
    block_size: usize,
) -> Result<(Array2<T>, Array2<T>, Array2<T>)> {
    if block_size != 2 {
        return Err(Error::Unsupported(format!(
            "full-precision encoding requires block size 2, got {block_size}"
        )));
    }
    let (m, n) = values.dim();
    if m % 2 != 0 {
        return Err(Error::Config(format!("row count {m} is not even")));
    }
    let half = T::of(0.5);
    let mut wb = Array2::zeros((m, n));
    let mut a = Array2::zeros((m / 2, n));
    let mut b = Array2::zeros((m / 2, n));
    for g in 0..m / 2 {
        for j in 0..n {
            let (v1, v2) = (values[[2 * g, j]], values[[2 * g + 1, j]]);
            wb[[2 * g, j]] = T::one();
            wb[[2 * g + 1, j]] = -T::one();
            a[[g, j]] = (v1 - v2) * half;
            b[[g, j]] = (v1 + v2) * half;
        }
    }
    Ok((wb, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sign_with_zero_tie() {
        let w = array![[0.5, -0.3, 0.0]];
        assert_eq!(binarize(w.view()).unwrap(), array![[1.0, -1.0, 1.0]]);
        let neg = array![[-0.1f32, -2.0], [-1e-9, -0.5]];
        assert!(binarize(neg.view()).unwrap().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn binarize_is_idempotent() {
        let w = array![[0.2, -0.7], [0.0, -0.0]];
        let once = binarize(w.view()).unwrap();
        assert_eq!(binarize(once.view()).unwrap(), once);
    }

    #[test]
    fn binarize_rejects_nan() {
        let w = array![[0.2, f64::NAN]];
        assert!(matches!(binarize(w.view()), Err(Error::Numeric(_))));
    }

    #[test]
    fn block_arithmetic() {
        let layer = SupportedBinaryLayer::<f64>::from_parts(array![[1.0], [-1.0]], array![[0.5]], array![[0.1]], 2).unwrap();
        let s = layer.apply_supports();
        assert!((s[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((s[[1, 0]] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn identity_supports_give_binary_weights() {
        let layer = SupportedBinaryLayer::plain(array![[0.3, -0.2], [-0.9, 0.0], [0.1, 0.4], [-0.5, -0.5]], 2).unwrap();
        assert_eq!(&layer.apply_supports(), layer.binary());
    }

    #[test]
    fn reproduces_target_pair() {
        let layer = SupportedBinaryLayer::<f64>::from_parts(array![[1.0], [-1.0]], array![[0.5]], array![[0.2]], 2).unwrap();
        let s = layer.apply_supports();
        assert!((s[[0, 0]] - 0.7).abs() < 1e-15);
        assert!((s[[1, 0]] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_block_size() {
        let w = Array2::<f64>::zeros((6, 2));
        assert!(SupportedBinaryLayer::plain(w.clone(), 4).is_err());
        assert!(SupportedBinaryLayer::plain(w.clone(), 0).is_err());
        assert!(SupportedBinaryLayer::from_parts(w, Array2::ones((2, 2)), Array2::zeros((3, 2)), 2).is_err());
    }

    #[test]
    fn encode_zero_and_equal_blocks() {
        let (_, a, b) = encode_full_precision(Array2::<f64>::zeros((4, 3)).view(), 2).unwrap();
        assert!(a.iter().chain(b.iter()).all(|&v| v == 0.0));
        let (_, a, b) = encode_full_precision(array![[0.7], [0.7]].view(), 2).unwrap();
        assert_eq!((a[[0, 0]], b[[0, 0]]), (0.0, 0.7));
    }

    #[test]
    fn encode_requires_pairs() {
        assert!(matches!(
            encode_full_precision(Array2::<f64>::zeros((4, 1)).view(), 4),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            encode_full_precision(Array2::<f64>::zeros((3, 1)).view(), 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sync_clips_and_rebinarizes() {
        let mut layer = SupportedBinaryLayer::plain(array![[0.5f64], [-0.5]], 1).unwrap();
        layer.params_mut().0.assign(&array![[-3.0], [2.0]]);
        layer.sync_binary().unwrap();
        assert_eq!(layer.weights(), &array![[-1.0], [1.0]]);
        assert_eq!(layer.binary(), &array![[-1.0], [1.0]]);
    }

    #[test]
    fn masked_blocks_are_zero() {
        let layer = SupportedBinaryLayer::from_parts(
            array![[1.0, -1.0], [1.0, 1.0]],
            array![[2.0, 3.0]],
            array![[0.5, 0.5]],
            2,
        )
        .unwrap();
        let mask = array![[true, false]];
        let s = layer.apply_supports_masked(Some(mask.view()));
        assert_eq!(s, array![[2.5, 0.0], [2.5, 0.0]]);
    }
}
