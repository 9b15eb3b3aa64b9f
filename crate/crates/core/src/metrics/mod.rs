//! Objective enhancement metrics and the training objective as a
//! measurable quantity.

mod stoi;

pub use stoi::{stoi, STOI_MIN_FRAMES};

use crate::dsp::{Spectrogram, TimeSignal};
use crate::error::{shape_err, Error, Result};

/// SI-SNR values are clamped to `[-SI_SNR_CAP, SI_SNR_CAP]` dB.
pub const SI_SNR_CAP: f64 = 60.0;

/// Terms of the joint spectral/temporal objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// `100 / (F T) * sum (|S| - |S^|)^2`.
    pub mse_term: f64,
    /// Utterance-level error-to-signal ratio `sum (s - s^)^2 / sum s^2`.
    pub snr_term: f64,
    pub total: f64,
    /// Mean per-sample `s^2 / (s - s^)^2`, each denominator floored at
    /// 1e-12. Reported only; it grows as the estimate improves.
    pub literal_ratio: f64,
}

fn mono(x: &TimeSignal, what: &'static str) -> Result<()> {
    if x.channels() != 1 {
        return Err(shape_err(what, 1, x.channels()));
    }
    Ok(())
}

pub fn joint_loss(
    clean_spec: &Spectrogram,
    est_spec: &Spectrogram,
    clean_time: &TimeSignal,
    est_time: &TimeSignal,
) -> Result<LossReport> {
    clean_spec.check_same_shape(est_spec, "estimated spectrogram")?;
    if clean_spec.channels() != 1 {
        return Err(shape_err("loss spectrogram channels", 1, clean_spec.channels()));
    }
    mono(clean_time, "clean signal channels")?;
    mono(est_time, "estimated signal channels")?;
    if clean_time.len() != est_time.len() {
        return Err(shape_err("estimated signal length", clean_time.len(), est_time.len()));
    }
    let (f, t) = (clean_spec.bins() as f64, clean_spec.frames() as f64);
    let sq: f64 = clean_spec
        .values
        .iter()
        .zip(est_spec.values.iter())
        .map(|(a, b)| (a.norm() - b.norm()).powi(2))
        .sum();
    let mse_term = 100.0 / (f * t) * sq;

    let (s, e) = (clean_time.channel(0), est_time.channel(0));
    let err: f64 = s.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum();
    let sig: f64 = s.iter().map(|a| a * a).sum();
    let snr_term = err / sig.max(1e-12);
    let literal_ratio = s
        .iter()
        .zip(e)
        .map(|(a, b)| a * a / ((a - b).powi(2)).max(1e-12))
        .sum::<f64>()
        / s.len().max(1) as f64;
    Ok(LossReport {
        mse_term,
        snr_term,
        total: mse_term + snr_term,
        literal_ratio,
    })
}

/// Scale-invariant SNR in dB after mean removal, without the cap. Returns
/// `+inf` for an exact (scaled) match and `-inf` for an estimate orthogonal
/// to the reference with no target component.
pub fn si_snr_uncapped(reference: &TimeSignal, estimate: &TimeSignal) -> Result<f64> {
    mono(reference, "reference channels")?;
    mono(estimate, "estimate channels")?;
    if reference.len() != estimate.len() {
        return Err(shape_err("estimate length", reference.len(), estimate.len()));
    }
    let center = |x: &[f64]| {
        let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
        x.iter().map(|v| v - mean).collect::<Vec<_>>()
    };
    let (s, e) = (center(reference.channel(0)), center(estimate.channel(0)));
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if ss == 0.0 {
        return Err(Error::SilentSignal("reference"));
    }
    let k = s.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / ss;
    let target: f64 = k * k * ss;
    let noise: f64 = s.iter().zip(&e).map(|(a, b)| (b - k * a).powi(2)).sum();
    Ok(10.0 * (target / noise).log10())
}

/// [`si_snr_uncapped`] clamped to [`SI_SNR_CAP`].
pub fn si_snr(reference: &TimeSignal, estimate: &TimeSignal) -> Result<f64> {
    let v = si_snr_uncapped(reference, estimate)?;
    Ok(if v.is_nan() { -SI_SNR_CAP } else { v.clamp(-SI_SNR_CAP, SI_SNR_CAP) })
}
