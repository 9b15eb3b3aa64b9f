//! Trace-normalized MVDR, GEV and blind analytical normalization.

use ndarray::{s, Array2, Array3};
use num_complex::Complex64;

use crate::dsp::Spectrogram;
use crate::error::{shape_err, Error, Result};
use crate::linalg;
use crate::scm::ScmSeries;

type C = Complex64;

/// Relative diagonal loading applied to the noise SCM before inversion.
pub const DEFAULT_LOADING: f64 = 1e-6;
/// `|tr(Phi_N^-1 Phi_X)|` below this passes the reference channel through.
pub const MIN_TRACE: f64 = 1e-12;
/// BAN denominators below this give zero gain.
pub const BAN_FLOOR: f64 = 1e-12;

/// Beamformer weights `[frame][bin][M]`; one frame when time-invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights {
    values: Array3<C>,
    /// `(frame, bin)` pairs that fell back to the reference channel.
    pub flagged: Vec<(usize, usize)>,
}

impl BeamWeights {
    pub fn new(values: Array3<C>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue {
                what: "beam weights",
                reason: "non-finite entry".into(),
            });
        }
        Ok(Self {
            values,
            flagged: Vec::new(),
        })
    }

    /// One-hot selector of `reference` at every bin.
    pub fn selector(frames: usize, bins: usize, mics: usize, reference: usize) -> Self {
        let mut values = Array3::zeros((frames, bins, mics));
        values.slice_mut(s![.., .., reference]).fill(C::new(1.0, 0.0));
        Self {
            values,
            flagged: Vec::new(),
        }
    }

    pub fn values(&self) -> &Array3<C> {
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

    /// Weight vector at `(frame, bin)`; time-invariant weights ignore
    /// `frame`.
    pub fn vector(&self, frame: usize, bin: usize) -> Vec<C> {
        let t = if self.is_time_invariant() { 0 } else { frame };
        self.values.slice(s![t, bin, ..]).to_vec()
    }
}

fn unit(m: usize, reference: usize) -> Vec<C> {
    let mut u = vec![C::new(0.0, 0.0); m];
    u[reference] = C::new(1.0, 0.0);
    u
}

/// Output frame count when combining two series; each must have one frame
/// or the common count.
fn joint_frames(a: usize, b: usize) -> Result<usize> {
    match (a, b) {
        (x, y) if x == y => Ok(x),
        (1, y) => Ok(y),
        (x, 1) => Ok(x),
        (x, y) => Err(shape_err("SCM frames", x, y)),
    }
}

fn check_pair(phi_x: &ScmSeries, phi_n: &ScmSeries, reference: usize) -> Result<(usize, usize, usize)> {
    if (phi_x.bins(), phi_x.mics()) != (phi_n.bins(), phi_n.mics()) {
        return Err(shape_err(
            "noise SCM",
            (phi_x.bins(), phi_x.mics()),
            (phi_n.bins(), phi_n.mics()),
        ));
    }
    if reference >= phi_x.mics() {
        return Err(Error::InvalidValue {
            what: "reference channel",
            reason: format!("{reference} >= {} channels", phi_x.mics()),
        });
    }
    Ok((joint_frames(phi_x.frames(), phi_n.frames())?, phi_x.bins(), phi_x.mics()))
}

fn flat(view: ndarray::ArrayView2<'_, C>) -> Vec<C> {
    view.iter().cloned().collect()
}

/// `Phi_N + loading * tr(Phi_N) / M * I`.
fn loaded(phi_n: &[C], m: usize, loading: f64) -> Vec<C> {
    let delta = loading * linalg::trace(phi_n, m).re / m as f64;
    let mut out = phi_n.to_vec();
    for i in 0..m {
        out[i * m + i] += delta;
    }
    out
}

/// `[Phi_N^-1 Phi_X / tr(Phi_N^-1 Phi_X)] u` for one bin, `None` when the
/// solve fails or the trace is below [`MIN_TRACE`].
pub fn mvdr_vector(phi_x: &[C], phi_n: &[C], m: usize, reference: usize, loading: f64) -> Option<Vec<C>> {
    let x = linalg::solve(&loaded(phi_n, m, loading), phi_x, m, m)?;
    let tr = linalg::trace(&x, m);
    if !(tr.norm() >= MIN_TRACE) || !tr.is_finite() {
        return None;
    }
    let w: Vec<C> = (0..m).map(|i| x[i * m + reference] / tr).collect();
    w.iter().all(|v| v.is_finite()).then_some(w)
}

/// MVDR weights for every `(frame, bin)`. Either series may be
/// time-invariant; degenerate bins pass the reference through and are
/// flagged.
pub fn mvdr_weights(phi_x: &ScmSeries, phi_n: &ScmSeries, reference: usize, loading: f64) -> Result<BeamWeights> {
    let (t, f, m) = check_pair(phi_x, phi_n, reference)?;
    let mut values = Array3::zeros((t, f, m));
    let mut flagged = Vec::new();
    for frame in 0..t {
        for bin in 0..f {
            let px = flat(phi_x.matrix(frame, bin));
            let pn = flat(phi_n.matrix(frame, bin));
            let w = mvdr_vector(&px, &pn, m, reference, loading).unwrap_or_else(|| {
                flagged.push((frame, bin));
                unit(m, reference)
            });
            values.slice_mut(s![frame, bin, ..]).iter_mut().zip(w).for_each(|(o, v)| *o = v);
        }
    }
    Ok(BeamWeights { values, flagged })
}

/// `S^(t,f) = w(t,f)^H Y(t,f)`, broadcasting time-invariant weights.
pub fn apply_weights(w: &BeamWeights, y: &Spectrogram) -> Result<Spectrogram> {
    let (m, t, f) = y.values.dim();
    if (w.bins(), w.mics()) != (f, m) {
        return Err(shape_err("beam weights", (f, m), (w.bins(), w.mics())));
    }
    if !w.is_time_invariant() && w.frames() != t {
        return Err(shape_err("beam weight frames", t, w.frames()));
    }
    let mut out = Spectrogram::zeros(1, t, y.config);
    for frame in 0..t {
        let wt = if w.is_time_invariant() { 0 } else { frame };
        for bin in 0..f {
            let mut acc = C::new(0.0, 0.0);
            for ch in 0..m {
                acc += w.values[[wt, bin, ch]].conj() * y.values[[ch, frame, bin]];
            }
            out.values[[0, frame, bin]] = acc;
        }
    }
    Ok(out)
}

/// Principal generalized eigenpair of `(Phi_X, Phi_N)` scaled to unit norm
/// with the reference component real and non-negative. `Phi_N` is loaded
/// only if it is not numerically positive definite.
pub fn gev_vector(phi_x: &[C], phi_n: &[C], m: usize, reference: usize) -> Option<(f64, Vec<C>)> {
    let (lam, w) = linalg::principal_generalized_eigen(phi_x, phi_n, m)
        .or_else(|| linalg::principal_generalized_eigen(phi_x, &loaded(phi_n, m, DEFAULT_LOADING), m))?;
    let norm = w.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return None;
    }
    let r = w[reference];
    let phase = if r.norm() > 0.0 { r.conj() / r.norm() } else { C::new(1.0, 0.0) };
    let mut out: Vec<C> = w.iter().map(|v| v * phase / norm).collect();
    out[reference] = C::new(r.norm() / norm, 0.0);
    Some((lam, out))
}

/// GEV weights at every bin of the (usually time-invariant) SCM pair.
pub fn gev_weights(phi_x: &ScmSeries, phi_n: &ScmSeries, reference: usize) -> Result<BeamWeights> {
    let (t, f, m) = check_pair(phi_x, phi_n, reference)?;
    let mut values = Array3::zeros((t, f, m));
    let mut flagged = Vec::new();
    for frame in 0..t {
        for bin in 0..f {
            let px = flat(phi_x.matrix(frame, bin));
            let pn = flat(phi_n.matrix(frame, bin));
            let w = match gev_vector(&px, &pn, m, reference) {
                Some((_, w)) => w,
                None => {
                    flagged.push((frame, bin));
                    unit(m, reference)
                }
            };
            values.slice_mut(s![frame, bin, ..]).iter_mut().zip(w).for_each(|(o, v)| *o = v);
        }
    }
    Ok(BeamWeights { values, flagged })
}

/// Blind analytical normalization gain
/// `sqrt(w^H Phi_N Phi_N w / M) / (w^H Phi_N w)` per `(frame, bin)` of `w`.
pub fn ban_gain(w: &BeamWeights, phi_n: &ScmSeries) -> Result<Array2<f64>> {
    if (w.bins(), w.mics()) != (phi_n.bins(), phi_n.mics()) {
        return Err(shape_err("noise SCM", (w.bins(), w.mics()), (phi_n.bins(), phi_n.mics())));
    }
    let t = joint_frames(w.frames(), phi_n.frames())?;
    let m = w.mics();
    let mut g = Array2::zeros((t, w.bins()));
    for frame in 0..t {
        for bin in 0..w.bins() {
            let v = w.vector(frame, bin);
            let pn = flat(phi_n.matrix(frame, bin));
            let nw = linalg::matvec(&pn, &v, m);
            let den = linalg::dotc(&v, &nw).re;
            g[[frame, bin]] = if den.abs() < BAN_FLOOR {
                0.0
            } else {
                (linalg::dotc(&nw, &nw).re / m as f64).sqrt() / den
            };
        }
    }
    Ok(g)
}

/// Multiplies a one-channel spectrogram by a real per-bin gain, broadcasting
/// a single-frame gain.
pub fn apply_gain(spec: &Spectrogram, gain: &Array2<f64>) -> Result<Spectrogram> {
    let (_, t, f) = spec.values.dim();
    if gain.ncols() != f || !(gain.nrows() == 1 || gain.nrows() == t) {
        return Err(shape_err("gain", (t, f), gain.dim()));
    }
    let mut out = spec.clone();
    for mut ch in out.values.outer_iter_mut() {
        for (frame, mut row) in ch.outer_iter_mut().enumerate() {
            let g = gain.row(if gain.nrows() == 1 { 0 } else { frame });
            row.iter_mut().zip(g).for_each(|(v, &k)| *v *= k);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::random_psd;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn one(mat: &[C], m: usize) -> ScmSeries {
        ScmSeries::from_values(Array4::from_shape_vec((1, 1, m, m), mat.to_vec()).unwrap()).unwrap()
    }

    fn scale(a: &[C], k: f64) -> Vec<C> {
        a.iter().map(|v| v * k).collect()
    }

    #[test]
    fn single_mic_is_identity() {
        let w = mvdr_weights(&one(&[c(3.0, 0.0)], 1), &one(&[c(0.2, 0.0)], 1), 0, DEFAULT_LOADING).unwrap();
        assert!((w.vector(0, 0)[0] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn hand_derived_two_mic_case() {
        let phi_x = vec![c(0.5, 0.0); 4];
        let w = mvdr_vector(&phi_x, &linalg::identity(2), 2, 0, DEFAULT_LOADING).unwrap();
        for v in &w {
            assert!((v - c(0.5, 0.0)).norm() < 1e-6);
        }
        let a = [c(1.0 / 2f64.sqrt(), 0.0); 2];
        assert!((linalg::dotc(&w, &a) - a[0]).norm() < 1e-12);
    }

    #[test]
    fn degenerate_bins_flagged() {
        let zero = vec![c(0.0, 0.0); 4];
        let w = mvdr_weights(&one(&zero, 2), &one(&linalg::identity(2), 2), 1, DEFAULT_LOADING).unwrap();
        assert_eq!(w.flagged, vec![(0, 0)]);
        assert_eq!(w.vector(0, 0), vec![c(0.0, 0.0), c(1.0, 0.0)]);
        let w = mvdr_weights(&one(&linalg::identity(2), 2), &one(&zero, 2), 0, DEFAULT_LOADING).unwrap();
        assert_eq!(w.flagged, vec![(0, 0)]);
        assert!(mvdr_weights(&one(&zero, 2), &one(&zero, 2), 2, DEFAULT_LOADING).is_err());
    }

    #[test]
    fn mvdr_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (px, pn) = (random_psd(&mut rng, 4, 0.0), random_psd(&mut rng, 4, 0.1));
            let base = mvdr_vector(&px, &pn, 4, 0, DEFAULT_LOADING).unwrap();
            for (a, b) in [(1e-3, 1e3), (1e3, 1e-3), (1e3, 1e3)] {
                let w = mvdr_vector(&scale(&px, a), &scale(&pn, b), 4, 0, DEFAULT_LOADING).unwrap();
                for (x, y) in w.iter().zip(&base) {
                    assert!((x - y).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn distortionless_for_rank_one_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for r in 0..3 {
            let a: Vec<C> = (0..3).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let px: Vec<C> = (0..9).map(|k| a[k / 3] * a[k % 3].conj() * 2.5).collect();
            let pn = random_psd(&mut rng, 3, 0.05);
            let w = mvdr_vector(&px, &pn, 3, r, DEFAULT_LOADING).unwrap();
            assert!((linalg::dotc(&w, &a) - a[r]).norm() < 1e-9);
        }
    }

    #[test]
    fn apply_selector_zero_and_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut y = Spectrogram::zeros(3, 4, crate::dsp::StftConfig::default());
        y.values.mapv_inplace(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let sel = apply_weights(&BeamWeights::selector(1, 257, 3, 2), &y).unwrap();
        assert_eq!(sel.values.index_axis(ndarray::Axis(0), 0), y.values.index_axis(ndarray::Axis(0), 2));
        let zero = BeamWeights::new(Array3::zeros((4, 257, 3))).unwrap();
        assert!(apply_weights(&zero, &y).unwrap().values.iter().all(|v| v.norm() == 0.0));
        let w = BeamWeights::new(Array3::from_shape_simple_fn((4, 257, 3), || c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))).unwrap();
        let out = apply_weights(&w, &y).unwrap();
        for t in 0..4 {
            for f in (0..257).step_by(31) {
                let want: C = (0..3).map(|m| w.values()[[t, f, m]].conj() * y.values[[m, t, f]]).sum();
                assert!((out.values[[0, t, f]] - want).norm() < 1e-12);
            }
        }
        assert!(apply_weights(&BeamWeights::selector(2, 257, 3, 0), &y).is_err());
    }

    #[test]
    fn gev_diagonal_case() {
        let px = vec![c(4.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)];
        let (lam, w) = gev_vector(&px, &linalg::identity(2), 2, 0).unwrap();
        assert!((lam - 4.0).abs() < 1e-12);
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-12 && w[1].norm() < 1e-12);
    }

    #[test]
    fn gev_residual_scale_and_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (px, pn) = (random_psd(&mut rng, 4, 0.0), random_psd(&mut rng, 4, 0.2));
            let (lam, w) = gev_vector(&px, &pn, 4, 1).unwrap();
            let lhs = linalg::matvec(&px, &w, 4);
            let rhs = linalg::matvec(&pn, &w, 4);
            let res: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b * lam).norm_sqr()).sum::<f64>().sqrt();
            let norm: f64 = lhs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!(res <= 1e-8 * norm);
            assert!(w[1].im == 0.0 && w[1].re >= 0.0);

            let (_, w2) = gev_vector(&scale(&px, 1e3), &scale(&pn, 1e-3), 4, 1).unwrap();
            for (a, b) in w.iter().zip(&w2) {
                assert!((a - b).norm() < 1e-9);
            }

            let snr = |v: &[C]| {
                linalg::dotc(v, &linalg::matvec(&px, v, 4)).re / linalg::dotc(v, &linalg::matvec(&pn, v, 4)).re
            };
            let best = snr(&w);
            for _ in 0..50 {
                let v: Vec<C> = (0..4).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                assert!(snr(&v) <= best * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn ban_closed_form_and_invariance() {
        let w = BeamWeights::new(Array3::from_shape_vec((1, 1, 2), vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap()).unwrap();
        let g = ban_gain(&w, &one(&linalg::identity(2), 2)).unwrap();
        assert!((g[[0, 0]] - 0.5f64.sqrt()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pn = random_psd(&mut rng, 2, 0.1);
        let g1 = ban_gain(&w, &one(&pn, 2)).unwrap()[[0, 0]];
        let g2 = ban_gain(&w, &one(&scale(&pn, 1e3), 2)).unwrap()[[0, 0]];
        assert!((g1 - g2).abs() < 1e-10 * g1.abs());
        let zero = BeamWeights::new(Array3::zeros((1, 1, 2))).unwrap();
        assert_eq!(ban_gain(&zero, &one(&pn, 2)).unwrap()[[0, 0]], 0.0);
    }
}
