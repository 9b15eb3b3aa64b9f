//! Spatial covariance matrices: instantaneous outer products, mask-weighted
//! batch averages and attention-weighted time-varying estimates.
//!
//! Every series is stored densely as `[frame][bin][M][M]`; a time-invariant
//! series has exactly one frame.

use ndarray::{s, Array4, ArrayView2, Axis, Zip};
use num_complex::Complex64;

use crate::attention::{attend_complex, AttentionMatrix};
use crate::dsp::Spectrogram;
use crate::error::{shape_err, Result};
use crate::linalg;
use crate::masks::TfMask;

/// Denominator used for bins whose mask sums to zero.
pub const MASK_SUM_FLOOR: f64 = 1e-10;

fn check_square(values: &Array4<Complex64>) -> Result<()> {
    let (_, _, a, b) = values.dim();
    if a != b || a == 0 {
        return Err(shape_err("SCM matrices", "non-empty square", (a, b)));
    }
    Ok(())
}

/// Rank-one, mask-weighted outer products `M(t,f) y y^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct IscmSeries {
    values: Array4<Complex64>,
}

impl IscmSeries {
    /// Wraps raw matrices; no rank or definiteness check is made.
    pub fn from_values(values: Array4<Complex64>) -> Result<Self> {
        check_square(&values)?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array4<Complex64> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.dim().0
    }

    pub fn bins(&self) -> usize {
        self.values.dim().1
    }

    pub fn mics(&self) -> usize {
        self.values.dim().2
    }

    /// Multiplies every matrix by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: &self.values * Complex64::new(alpha, 0.0),
        }
    }
}

/// Hermitian covariance estimates, time-varying or (one frame)
/// time-invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmSeries {
    values: Array4<Complex64>,
}

impl ScmSeries {
    pub fn from_values(values: Array4<Complex64>) -> Result<Self> {
        check_square(&values)?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array4<Complex64> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.dim().0
    }

    pub fn bins(&self) -> usize {
        self.values.dim().1
    }

    pub fn mics(&self) -> usize {
        self.values.dim().2
    }

    pub fn is_time_invariant(&self) -> bool {
        self.frames() == 1
    }

    /// Matrix at `(frame, bin)`; time-invariant series ignore `frame`.
    pub fn matrix(&self, frame: usize, bin: usize) -> ArrayView2<'_, Complex64> {
        let t = if self.is_time_invariant() { 0 } else { frame };
        self.values.slice(s![t, bin, .., ..])
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: &self.values * Complex64::new(alpha, 0.0),
        }
    }
}

fn check_mask(y: &Spectrogram, mask: &TfMask) -> Result<()> {
    if (y.frames(), y.bins()) != (mask.frames(), mask.bins()) {
        return Err(shape_err(
            "mask",
            (y.frames(), y.bins()),
            (mask.frames(), mask.bins()),
        ));
    }
    Ok(())
}

/// `Psi(t,f) = M(t,f) Y(t,f) Y(t,f)^H`, with `Y(t,f)` the channel vector.
pub fn compute_iscm(y: &Spectrogram, mask: &TfMask) -> Result<IscmSeries> {
    check_mask(y, mask)?;
    let (m, t, f) = y.values.dim();
    let mut out = Array4::<Complex64>::zeros((t, f, m, m));
    Zip::indexed(out.outer_iter_mut()).for_each(|frame, mut per_frame| {
        for bin in 0..f {
            let w = mask.values()[[frame, bin]];
            let v = y.values.slice(s![.., frame, bin]);
            let mut mat = per_frame.index_axis_mut(Axis(0), bin);
            for i in 0..m {
                for j in 0..m {
                    mat[[i, j]] = v[i] * v[j].conj() * w;
                }
            }
        }
    });
    Ok(IscmSeries { values: out })
}

/// Time-invariant SCM with the bins whose mask sum was floored.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchScm {
    pub scm: ScmSeries,
    pub flagged_bins: Vec<usize>,
}

/// `Phi(f) = sum_l M(l,f) y y^H / sum_l M(l,f)`. Bins with a zero mask sum
/// use [`MASK_SUM_FLOOR`] as denominator and are listed in `flagged_bins`.
pub fn batch_scm(y: &Spectrogram, mask: &TfMask) -> Result<BatchScm> {
    let psi = compute_iscm(y, mask)?;
    Ok(batch_from_iscm(&psi, &mask.sum_over_frames()))
}

/// Same as [`batch_scm`] given precomputed ISCMs and per-bin mask sums.
pub fn batch_from_iscm(psi: &IscmSeries, mask_sums: &[f64]) -> BatchScm {
    let mut total = psi.values.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut flagged_bins = Vec::new();
    for (bin, &den) in mask_sums.iter().enumerate() {
        let den = if den > 0.0 {
            den
        } else {
            flagged_bins.push(bin);
            MASK_SUM_FLOOR
        };
        total
            .slice_mut(s![0, bin, .., ..])
            .mapv_inplace(|v| v / den);
    }
    BatchScm {
        scm: ScmSeries { values: total },
        flagged_bins,
    }
}

/// `Phi~(t,f) = sum_t' A[t][t'] Psi(t',f)`, the same weights at every bin.
pub fn attend_scm(psi: &IscmSeries, a: &AttentionMatrix) -> Result<ScmSeries> {
    if a.frames() != psi.frames() {
        return Err(shape_err("attention frames", psi.frames(), a.frames()));
    }
    Ok(ScmSeries {
        values: attend_complex(a, &psi.values)?,
    })
}

/// Result of [`psd_condition`].
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioned {
    pub scm: ScmSeries,
    /// Largest amount any eigenvalue was raised by.
    pub max_clip: f64,
}

/// Replaces every matrix by its Hermitian part and raises eigenvalues below
/// `eps * max(lambda_max, 0)` to that floor (`eps = 0` clips at zero).
/// Matrices with nothing to clip are left as their Hermitian part exactly.
pub fn psd_condition(scm: &ScmSeries, eps: f64) -> ScmSeries {
    psd_condition_report(scm, eps).scm
}

pub fn psd_condition_report(scm: &ScmSeries, eps: f64) -> Conditioned {
    let m = scm.mics();
    let mut values = scm.values.clone();
    let mut max_clip = 0.0f64;
    for mut per_frame in values.outer_iter_mut() {
        for mut mat in per_frame.outer_iter_mut() {
            let flat: Vec<Complex64> = mat.iter().cloned().collect();
            let herm = linalg::hermitian_part(&flat, m);
            let eig = linalg::hermitian_eigen(&herm, m);
            let top = eig.values.last().copied().unwrap_or(0.0).max(0.0);
            let floor = eps * top;
            let clip = eig.values.iter().map(|&l| floor - l).fold(0.0, f64::max);
            let fixed = if clip > 0.0 {
                max_clip = max_clip.max(clip);
                eig.reconstruct(|l| l.max(floor))
            } else {
                herm
            };
            mat.iter_mut().zip(fixed).for_each(|(o, v)| *o = v);
        }
    }
    Conditioned {
        scm: ScmSeries { values },
        max_clip,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{StftConfig, Window};
    use crate::linalg::testutil::random_psd;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spec(values: Array3<Complex64>) -> Spectrogram {
        let bins = values.dim().2;
        Spectrogram {
            values,
            config: StftConfig {
                frame_len: 2,
                hop: 1,
                fft_len: 2 * (bins - 1).max(1),
                window: Window::Rect,
            },
        }
    }

    fn random_case(rng: &mut ChaCha8Rng, m: usize, t: usize, f: usize) -> (Spectrogram, TfMask) {
        let y = Array3::from_shape_simple_fn((m, t, f), || c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let mask = TfMask::new(Array2::from_shape_simple_fn((t, f), || rng.gen_range(0.0..1.0))).unwrap();
        (spec(y), mask)
    }

    fn herm_err(mat: ArrayView2<Complex64>) -> f64 {
        let d: f64 = mat
            .indexed_iter()
            .map(|((i, j), v)| (v - mat[[j, i]].conj()).norm_sqr())
            .sum();
        d.sqrt()
    }

    #[test]
    fn hand_computed_outer_product() {
        let y = spec(Array3::from_shape_vec((2, 1, 2), vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0)]).unwrap());
        let mask = TfMask::filled(1, 2, 0.5).unwrap();
        let psi = compute_iscm(&y, &mask).unwrap();
        let want = [[c(0.5, 0.0), c(0.0, -0.5)], [c(0.0, 0.5), c(0.5, 0.0)]];
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(psi.values()[[0, 0, i, j]], want[i][j]);
            }
        }
        let zero = compute_iscm(&y, &TfMask::filled(1, 2, 0.0).unwrap()).unwrap();
        assert!(zero.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn batch_of_orthogonal_frames_is_half_identity() {
        let y = spec(Array3::from_shape_vec((2, 2, 1), vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap());
        let b = batch_scm(&y, &TfMask::filled(2, 1, 1.0).unwrap()).unwrap();
        assert!(b.flagged_bins.is_empty());
        let phi = b.scm.matrix(0, 0);
        assert_eq!(phi, ndarray::arr2(&[[c(0.5, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.5, 0.0)]]));
    }

    #[test]
    fn zero_mask_bins_are_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, _) = random_case(&mut rng, 2, 3, 3);
        let mut mv = Array2::from_elem((3, 3), 0.7);
        mv.column_mut(1).fill(0.0);
        let b = batch_scm(&y, &TfMask::new(mv).unwrap()).unwrap();
        assert_eq!(b.flagged_bins, vec![1]);
        assert!(b.scm.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batch_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (y, mask) = random_case(&mut rng, 3, 5, 4);
        let b = batch_scm(&y, &mask).unwrap();
        for f in 0..4 {
            let den: f64 = (0..5).map(|t| mask.values()[[t, f]]).sum();
            for i in 0..3 {
                for j in 0..3 {
                    let mut num = c(0.0, 0.0);
                    for t in 0..5 {
                        num += y.values[[i, t, f]] * y.values[[j, t, f]].conj() * mask.values()[[t, f]];
                    }
                    assert!((b.scm.matrix(0, f)[[i, j]] - num / den).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn uniform_attention_reduces_to_scaled_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (y, mask) = random_case(&mut rng, 4, 6, 5);
        let psi = compute_iscm(&y, &mask).unwrap();
        let tv = attend_scm(&psi, &AttentionMatrix::uniform(6)).unwrap();
        let b = batch_scm(&y, &mask).unwrap();
        let sums = mask.sum_over_frames();
        for t in 0..6 {
            for f in 0..5 {
                let scale = sums[f] / 6.0;
                for (x, z) in tv.matrix(t, f).iter().zip(b.scm.matrix(0, f)) {
                    assert!((x - z * scale).norm() < 1e-12);
                }
            }
        }
        let id = attend_scm(&psi, &AttentionMatrix::identity(6)).unwrap();
        assert_eq!(id.values(), psi.values());
    }

    #[test]
    fn outputs_hermitian_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (y, mask) = random_case(&mut rng, 4, 5, 3);
        let psi = compute_iscm(&y, &mask).unwrap();
        let raw = Array2::from_shape_simple_fn((5, 5), || rng.gen_range(0.0..1.0));
        let a = AttentionMatrix::new(&raw / &raw.sum_axis(Axis(1)).insert_axis(Axis(1))).unwrap();
        let tv = attend_scm(&psi, &a).unwrap();
        let b = batch_scm(&y, &mask).unwrap().scm;
        for s in [&tv, &b] {
            for t in 0..s.frames() {
                for f in 0..3 {
                    let mat = s.matrix(t, f);
                    let norm = mat.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                    assert!(herm_err(mat) <= 1e-12 * norm);
                    let flat: Vec<_> = mat.iter().cloned().collect();
                    assert!(linalg::hermitian_eigen(&flat, 4).values[0] >= -1e-10 * norm);
                }
            }
        }
    }

    #[test]
    fn attend_rejects_frame_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (y, mask) = random_case(&mut rng, 2, 3, 2);
        let psi = compute_iscm(&y, &mask).unwrap();
        assert!(attend_scm(&psi, &AttentionMatrix::uniform(4)).is_err());
    }

    fn series(mats: &[Vec<Complex64>], m: usize) -> ScmSeries {
        let flat: Vec<Complex64> = mats.iter().flatten().cloned().collect();
        ScmSeries::from_values(Array4::from_shape_vec((1, mats.len(), m, m), flat).unwrap()).unwrap()
    }

    #[test]
    fn conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let psd = random_psd(&mut rng, 3, 0.1);
        let s = series(&[psd.clone()], 3);
        let out = psd_condition_report(&s, 0.0);
        assert_eq!(out.max_clip, 0.0);
        for (a, b) in out.scm.values().iter().zip(&psd) {
            assert!((a - b).norm() < 1e-12);
        }

        // diag(1, -1e-12) in a rotated basis.
        let (cs, sn) = (0.6, 0.8);
        let v = [[c(cs, 0.0), c(-sn, 0.0)], [c(sn, 0.0), c(cs, 0.0)]];
        let lam = [1.0, -1e-12];
        let mut mat = vec![c(0.0, 0.0); 4];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    mat[i * 2 + j] += v[i][k] * v[j][k] * lam[k];
                }
            }
        }
        let out = psd_condition_report(&series(&[mat], 2), 0.0);
        assert!((out.max_clip - 1e-12).abs() < 1e-15);
        let flat: Vec<_> = out.scm.values().iter().cloned().collect();
        assert!(linalg::hermitian_eigen(&flat, 2).values[0].abs() < 1e-15);

        let b = vec![c(2.0, 0.0), c(1.0, 1.0), c(3.0, 0.0), c(2.0, 0.0)];
        let out = psd_condition(&series(&[b.clone()], 2), 0.0);
        let h = linalg::hermitian_part(&b, 2);
        let eig = linalg::hermitian_eigen(&h, 2);
        let want = eig.reconstruct(|l| l.max(0.0));
        for (a, w) in out.values().iter().zip(want) {
            assert!((a - w).norm() < 1e-12);
        }
    }
}
