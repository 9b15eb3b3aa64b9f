//! Scaled dot-product attention over frames, deterministic query/key
//! features and a two-layer feature projector.

use ndarray::{Array, Array2, ArrayView2, Axis, Dimension};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::scm::IscmSeries;

/// Row sums of an [`AttentionMatrix`] must be within this of one.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Per-frame feature vectors `[frame][d_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::InvalidValue {
                what: "feature matrix",
                reason: format!("shape {:?} is empty", values.dim()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue {
                what: "feature matrix",
                reason: "non-finite entry".into(),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Row-stochastic `[T][T]` weights; row `t` mixes frames into frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    values: Array2<f64>,
}

impl AttentionMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c || r == 0 {
            return Err(shape_err("attention matrix", "non-empty square", (r, c)));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidValue {
                what: "attention matrix",
                reason: "entries must be finite and non-negative".into(),
            });
        }
        for (row, v) in values.outer_iter().enumerate() {
            let sum = v.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotRowStochastic { row, sum });
            }
        }
        Ok(Self { values })
    }

    pub fn identity(t: usize) -> Self {
        Self {
            values: Array2::eye(t),
        }
    }

    pub fn uniform(t: usize) -> Self {
        Self {
            values: Array2::from_elem((t, t), 1.0 / t as f64),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// In-place softmax with max subtraction. Entries equal to `-inf` get zero
/// weight; at least one entry must be finite.
fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn logits(q: &FeatureMatrix, k: &FeatureMatrix) -> Result<Array2<f64>> {
    if q.dim() != k.dim() {
        return Err(shape_err("key dimension", q.dim(), k.dim()));
    }
    if q.frames() != k.frames() {
        return Err(shape_err("key frames", q.frames(), k.frames()));
    }
    let scale = 1.0 / (q.dim() as f64).sqrt();
    let a = q.values.dot(&k.values.t()) * scale;
    Ok(a.as_standard_layout().into_owned())
}

/// `softmax(Q K^T / sqrt(d_k))` row by row.
pub fn attention_weights(q: &FeatureMatrix, k: &FeatureMatrix) -> Result<AttentionMatrix> {
    let mut a = logits(q, k)?;
    for mut row in a.outer_iter_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    Ok(AttentionMatrix { values: a })
}

/// As [`attention_weights`], but frame `t` attends only to frames `t' <= t`.
pub fn causal_attention_weights(q: &FeatureMatrix, k: &FeatureMatrix) -> Result<AttentionMatrix> {
    let mut a = logits(q, k)?;
    for (t, mut row) in a.outer_iter_mut().enumerate() {
        row.slice_mut(ndarray::s![t + 1..]).fill(f64::NEG_INFINITY);
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    Ok(AttentionMatrix { values: a })
}

fn check_frames(a: &AttentionMatrix, frames: usize) -> Result<()> {
    if a.frames() != frames {
        return Err(shape_err("attended frames", a.frames(), frames));
    }
    Ok(())
}

/// `Z(t) = sum_t' A[t][t'] V(t')` for values of any shape with frames on
/// axis 0.
pub fn attend<D: Dimension>(a: &AttentionMatrix, v: &Array<f64, D>) -> Result<Array<f64, D>> {
    let dim = v.raw_dim();
    let t = *dim.slice().first().ok_or_else(|| shape_err("attended values", "at least 1 axis", 0))?;
    check_frames(a, t)?;
    let flat = v
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((t, v.len() / t.max(1)))
        .expect("contiguous");
    let z = a.values.dot(&flat).as_standard_layout().into_owned();
    Ok(z.into_shape_with_order(dim).expect("same element count"))
}

/// Complex counterpart of [`attend`]; the real weights act on the real and
/// imaginary parts separately.
pub fn attend_complex<D: Dimension>(
    a: &AttentionMatrix,
    v: &Array<Complex64, D>,
) -> Result<Array<Complex64, D>> {
    let dim = v.raw_dim();
    let t = *dim.slice().first().ok_or_else(|| shape_err("attended values", "at least 1 axis", 0))?;
    check_frames(a, t)?;
    let std = v.as_standard_layout();
    let flat: ArrayView2<Complex64> = std
        .view()
        .into_shape_with_order((t, v.len() / t.max(1)))
        .expect("contiguous");
    let re = flat.mapv(|c| c.re);
    let im = flat.mapv(|c| c.im);
    let (zr, zi) = (a.values.dot(&re), a.values.dot(&im));
    let mut z = Array2::<Complex64>::zeros(zr.dim());
    ndarray::Zip::from(&mut z)
        .and(&zr)
        .and(&zi)
        .for_each(|o, &r, &i| *o = Complex64::new(r, i));
    Ok(z.into_shape_with_order(dim).expect("same element count"))
}

/// Frame features from frequency-averaged ISCMs: real parts of the upper
/// triangle (diagonal included, row-major), then the imaginary parts in the
/// same order, L2-normalized. Length is `M (M + 1)`; all-zero frames stay
/// zero.
pub fn iscm_features(psi: &IscmSeries) -> FeatureMatrix {
    let (t, m) = (psi.frames(), psi.mics());
    let half = m * (m + 1) / 2;
    let mut out = Array2::<f64>::zeros((t, 2 * half));
    let values = psi.values();
    for (frame, mut row) in out.outer_iter_mut().enumerate() {
        let mean = values.index_axis(Axis(0), frame).mean_axis(Axis(0));
        let Some(mean) = mean else { continue };
        let mut k = 0;
        for i in 0..m {
            for j in i..m {
                let c = mean[[i, j]];
                row[k] = c.re;
                row[half + k] = c.im;
                k += 1;
            }
        }
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    FeatureMatrix { values: out }
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorWeights {
    /// `d_in x d_h`.
    pub w1: Array2<f64>,
    pub b1: Vec<f64>,
    /// `d_h x d_out`.
    pub w2: Array2<f64>,
    pub b2: Vec<f64>,
}

pub const PROJECTOR_DIMS: [usize; 3] = [512, 256, 128];

impl ProjectorWeights {
    pub fn new(w1: Array2<f64>, b1: Vec<f64>, w2: Array2<f64>, b2: Vec<f64>) -> Result<Self> {
        if b1.len() != w1.ncols() {
            return Err(shape_err("projector bias 1", w1.ncols(), b1.len()));
        }
        if w2.nrows() != w1.ncols() {
            return Err(shape_err("projector layer 2 rows", w1.ncols(), w2.nrows()));
        }
        if b2.len() != w2.ncols() {
            return Err(shape_err("projector bias 2", w2.ncols(), b2.len()));
        }
        let all = w1.iter().chain(&b1).chain(w2.iter()).chain(&b2);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue {
                what: "projector weights",
                reason: "non-finite entry".into(),
            });
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    /// Glorot-uniform weights and zero biases from a fixed seed.
    pub fn seeded(dims: [usize; 3], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |r: usize, c: usize| {
            let lim = (6.0 / (r + c) as f64).sqrt();
            Array2::from_shape_simple_fn((r, c), || rng.gen_range(-lim..lim))
        };
        let w1 = layer(dims[0], dims[1]);
        let w2 = layer(dims[1], dims[2]);
        Self {
            w1,
            b1: vec![0.0; dims[1]],
            w2,
            b2: vec![0.0; dims[2]],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.w1.nrows(), self.w1.ncols(), self.w2.ncols()]
    }
}

/// Row-wise `ReLU(X W1 + b1) W2 + b2`.
pub fn project_features(x: &FeatureMatrix, w: &ProjectorWeights) -> Result<FeatureMatrix> {
    if x.dim() != w.w1.nrows() {
        return Err(shape_err("projector input", w.w1.nrows(), x.dim()));
    }
    let b1 = ndarray::ArrayView1::from(&w.b1[..]);
    let b2 = ndarray::ArrayView1::from(&w.b2[..]);
    let hidden = (x.values.dot(&w.w1) + b1).mapv(|v| v.max(0.0));
    FeatureMatrix::new(hidden.dot(&w.w2) + b2)
}

/// Jacobian `diag(p) - p p^T` of softmax at output `p`.
pub fn softmax_jacobian(p: &[f64]) -> Result<Array2<f64>> {
    if p.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidValue {
            what: "probability vector",
            reason: "entries must be non-negative".into(),
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized(sum));
    }
    let n = p.len();
    let mut j = Array2::<f64>::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            j[[a, b]] = if a == b { p[a] } else { 0.0 } - p[a] * p[b];
        }
    }
    Ok(j)
}

/// Softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut v = logits.to_vec();
    softmax_in_place(&mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;
    use rand::Rng;

    fn feats(v: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(v).unwrap()
    }

    #[test]
    fn closed_form_two_frames() {
        let q = feats(array![[0.0], [1.0]]);
        let a = attention_weights(&q, &q).unwrap();
        let e = std::f64::consts::E;
        assert!((a.values()[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((a.values()[[1, 0]] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((a.values()[[1, 1]] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn single_frame_and_zero_queries() {
        let one = feats(array![[3.0, -1.0]]);
        assert_eq!(attention_weights(&one, &one).unwrap().values(), &array![[1.0]]);
        let q = feats(Array2::zeros((5, 3)));
        let k = feats(Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64));
        let a = attention_weights(&q, &k).unwrap();
        assert!(a.values().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn dimension_mismatch() {
        let q = feats(Array2::zeros((2, 3)));
        let k = feats(Array2::zeros((2, 4)));
        assert!(attention_weights(&q, &k).is_err());
    }

    #[test]
    fn causal_rows_ignore_future() {
        let q = feats(Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64 * 0.3));
        let a = causal_attention_weights(&q, &q).unwrap();
        for t in 0..4 {
            assert!((a.values().row(t).sum() - 1.0).abs() < 1e-12);
            for u in t + 1..4 {
                assert_eq!(a.values()[[t, u]], 0.0);
            }
        }
        assert_eq!(a.values()[[0, 0]], 1.0);
    }

    #[test]
    fn attend_identity_and_constant() {
        let v = Array3::from_shape_fn((3, 2, 2), |(a, b, c)| (a * 7 + b * 3 + c) as f64);
        assert_eq!(attend(&AttentionMatrix::identity(3), &v).unwrap(), v);
        let c = Array2::from_elem((3, 4), 2.5);
        let a = AttentionMatrix::new(array![[0.2, 0.3, 0.5], [1.0, 0.0, 0.0], [0.1, 0.1, 0.8]]).unwrap();
        let z = attend(&a, &c).unwrap();
        assert!(z.iter().all(|v| (v - 2.5).abs() < 1e-15));
        assert!(attend(&a, &Array2::<f64>::zeros((4, 1))).is_err());
    }

    #[test]
    fn attend_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 6;
        let raw = Array2::from_shape_simple_fn((t, t), || rng.gen_range(0.0..1.0));
        let a = AttentionMatrix::new(&raw / &raw.sum_axis(Axis(1)).insert_axis(Axis(1))).unwrap();
        let v = Array3::from_shape_simple_fn((t, 3, 2), || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let z = attend_complex(&a, &v).unwrap();
        for i in 0..t {
            for b in 0..3 {
                for c in 0..2 {
                    let want: Complex64 = (0..t).map(|u| v[[u, b, c]] * a.values()[[i, u]]).sum();
                    assert!((z[[i, b, c]] - want).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_non_stochastic() {
        assert!(matches!(
            AttentionMatrix::new(array![[0.5, 0.4], [0.5, 0.5]]),
            Err(Error::NotRowStochastic { row: 0, .. })
        ));
        assert!(AttentionMatrix::new(array![[1.5, -0.5], [0.5, 0.5]]).is_err());
    }

    #[test]
    fn iscm_features_single_mic() {
        let psi = IscmSeries::from_values(ndarray::Array4::from_elem((1, 3, 1, 1), Complex64::new(1.0, 0.0))).unwrap();
        let f = iscm_features(&psi);
        assert_eq!(f.values(), &array![[1.0, 0.0]]);
        let zero = IscmSeries::from_values(ndarray::Array4::zeros((4, 3, 2, 2))).unwrap();
        let f = iscm_features(&zero);
        assert_eq!(f.dim(), 6);
        assert!(f.values().iter().all(|&v| v == 0.0));
        let a = attention_weights(&f, &f).unwrap();
        assert!(a.values().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn projector_bias_and_identity_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w1 = Array2::from_shape_simple_fn((3, 4), || rng.gen_range(-1.0..1.0));
        let w2 = Array2::from_shape_simple_fn((4, 2), || rng.gen_range(-1.0..1.0));
        let (b1, b2) = (vec![0.5, -0.2, 0.1, -1.0], vec![0.3, 0.7]);
        let w = ProjectorWeights::new(w1, b1.clone(), w2.clone(), b2.clone()).unwrap();
        let out = project_features(&feats(Array2::zeros((2, 3))), &w).unwrap();
        for r in out.values().outer_iter() {
            for c in 0..2 {
                let want: f64 = (0..4).map(|h| b1[h].max(0.0) * w2[[h, c]]).sum::<f64>() + b2[c];
                assert!((r[c] - want).abs() < 1e-15);
            }
        }
        let id = ProjectorWeights::new(Array2::eye(3), vec![0.0; 3], Array2::eye(3), vec![0.0; 3]).unwrap();
        let x = feats(array![[1.0, -2.0, 0.5]]);
        assert_eq!(project_features(&x, &id).unwrap().values(), &array![[1.0, 0.0, 0.5]]);
        assert!(project_features(&feats(Array2::zeros((1, 5))), &id).is_err());
    }

    #[test]
    fn projector_matches_triple_loop() {
        let w = ProjectorWeights::seeded([7, 5, 3], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_simple_fn((4, 7), || rng.gen_range(-1.0..1.0));
        let out = project_features(&feats(x.clone()), &w).unwrap();
        for r in 0..4 {
            let h: Vec<f64> = (0..5)
                .map(|j| ((0..7).map(|i| x[[r, i]] * w.w1[[i, j]]).sum::<f64>() + w.b1[j]).max(0.0))
                .collect();
            for c in 0..3 {
                let want = (0..5).map(|j| h[j] * w.w2[[j, c]]).sum::<f64>() + w.b2[c];
                assert!((out.values()[[r, c]] - want).abs() < 1e-10);
            }
        }
        assert_eq!(ProjectorWeights::seeded(PROJECTOR_DIMS, 3).dims(), PROJECTOR_DIMS);
    }

    #[test]
    fn jacobian_closed_forms() {
        assert_eq!(softmax_jacobian(&[1.0]).unwrap(), array![[0.0]]);
        assert_eq!(softmax_jacobian(&[0.5, 0.5]).unwrap(), array![[0.25, -0.25], [-0.25, 0.25]]);
        assert!(matches!(softmax_jacobian(&[0.5, 0.6]), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let z: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let j = softmax_jacobian(&softmax(&z)).unwrap();
            let h = 1e-5;
            for b in 0..6 {
                let (mut zp, mut zm) = (z.clone(), z.clone());
                zp[b] += h;
                zm[b] -= h;
                let (pp, pm) = (softmax(&zp), softmax(&zm));
                for a in 0..6 {
                    let fd = (pp[a] - pm[a]) / (2.0 * h);
                    let err = (fd - j[[a, b]]).abs() / j[[a, b]].abs().max(1e-3);
                    assert!(err < 1e-5, "{a},{b}: {fd} vs {}", j[[a, b]]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn rows_stochastic_and_shift_invariant(
            vals in proptest::collection::vec(-20.0f64..20.0, 12),
            shift in -50.0f64..50.0,
        ) {
            let q = feats(Array2::from_shape_vec((4, 3), vals).unwrap());
            let a = attention_weights(&q, &q).unwrap();
            for r in a.values().outer_iter() {
                prop_assert!((r.sum() - 1.0).abs() < 1e-12);
                prop_assert!(r.iter().all(|&v| v >= 0.0));
            }
            let z: Vec<f64> = q.values().row(0).to_vec();
            let p = softmax(&z);
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            for (x, y) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_equivariant(vals in proptest::collection::vec(-2.0f64..2.0, 8), rot in 1usize..4) {
            let x = Array2::from_shape_vec((4, 2), vals).unwrap();
            let perm: Vec<usize> = (0..4).map(|i| (i + rot) % 4).collect();
            let xp = x.select(Axis(0), &perm);
            let v = Array2::from_shape_fn((4, 3), |(i, j)| x[[i, j % 2]] * (j as f64 + 1.0));
            let vp = v.select(Axis(0), &perm);
            let z = attend(&attention_weights(&feats(x.clone()), &feats(x)).unwrap(), &v).unwrap();
            let zp = attend(&attention_weights(&feats(xp.clone()), &feats(xp)).unwrap(), &vp).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                for j in 0..3 {
                    prop_assert!((zp[[i, j]] - z[[p, j]]).abs() < 1e-12);
                }
            }
        }
    }
}
