//! Short-time objective intelligibility.
//!
//! Signals are resampled to 10 kHz with an Octave-compatible Kaiser
//! polyphase filter, frames whose clean energy is more than 40 dB below the
//! loudest frame are dropped from both signals, and the score is the mean
//! clipped correlation of 384 ms one-third-octave envelope segments.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::TimeSignal;
use crate::error::{shape_err, Error, Result};

const FS: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;

/// Envelope frames per intermediate-intelligibility segment.
pub const STOI_MIN_FRAMES: usize = 30;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
    let q = x * x / 4.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Anti-aliasing filter of Octave's `resample`, scaled to sum to `p`.
fn resample_filter(p: u32, q: u32) -> Vec<f64> {
    let rejection_db = 60.0;
    let cutoff = 1.0 / (2.0 * p.max(q) as f64);
    let roll_off = cutoff / 10.0;
    let half = ((rejection_db - 8.0) / (28.714 * roll_off)).ceil() as i64;
    let beta = 0.1102 * (rejection_db - 8.7);
    let len = 2 * half + 1;
    let mut h: Vec<f64> = (-half..=half)
        .enumerate()
        .map(|(n, t)| {
            let x = 2.0 * cutoff * t as f64;
            let sinc = if t == 0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            let r = 2.0 * n as f64 / (len - 1) as f64 - 1.0;
            let kaiser = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta);
            kaiser * 2.0 * p as f64 * cutoff * sinc
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v *= p as f64 / sum);
    h
}

/// Rational resampling by `p / q` with a zero-phase FIR, matching
/// polyphase `upfirdn` with the filter centred on each output sample.
fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    let g = gcd(from, to);
    let (p, q) = ((to / g) as usize, (from / g) as usize);
    if p == q {
        return x.to_vec();
    }
    let h = resample_filter(p as u32, q as u32);
    let half = (h.len() - 1) / 2;
    let n_out = (x.len() * p).div_ceil(q);
    (0..n_out)
        .map(|k| {
            // y[k] = sum_j h[half + q k - p j] x[j]
            let centre = half + q * k;
            let j_lo = (centre.saturating_sub(h.len() - 1)).div_ceil(p);
            let j_hi = (centre / p).min(x.len().saturating_sub(1));
            (j_lo..=j_hi)
                .map(|j| h[centre - p * j] * x[j])
                .sum()
        })
        .collect()
}

/// `hanning(FRAME + 2)` without its zero end points.
fn window() -> Vec<f64> {
    (1..=FRAME)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (FRAME + 1) as f64).cos())
        .collect()
}

/// Frame starts `0, HOP, ...` strictly before `len - FRAME`.
fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

fn remove_silent_frames(x: &[f64], y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + f64::EPSILON).log10()
        })
        .collect();
    let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    let len = if kept.is_empty() { 0 } else { (kept.len() - 1) * HOP + FRAME };
    let (mut xs, mut ys) = (vec![0.0; len], vec![0.0; len]);
    for (k, &s) in kept.iter().enumerate() {
        for i in 0..FRAME {
            xs[k * HOP + i] += w[i] * x[s + i];
            ys[k * HOP + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// Band-edge bin ranges `[lo, hi)` of the one-third-octave filterbank.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let freqs: Vec<f64> = (0..=NFFT / 2).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        let mut best = 0;
        for (i, f) in freqs.iter().enumerate() {
            if (f - target).powi(2) < (freqs[best] - target).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// One-third-octave envelopes `[band][frame]`.
fn band_envelopes(x: &[f64], w: &[f64], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    let mut out = vec![Vec::new(); bands.len()];
    for s in frame_starts(x.len()) {
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for i in 0..FRAME {
            buf[i].re = w[i] * x[s + i];
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = buf[lo..hi].iter().map(|v| v.norm_sqr()).sum();
            out[b].push(e.sqrt());
        }
    }
    out
}

fn center_and_normalize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt() + f64::EPSILON;
    v.iter_mut().for_each(|x| *x /= norm);
}

/// STOI of `estimate` against the clean `reference`, both mono.
pub fn stoi(reference: &TimeSignal, estimate: &TimeSignal) -> Result<f64> {
    for (s, what) in [(reference, "reference channels"), (estimate, "estimate channels")] {
        if s.channels() != 1 {
            return Err(shape_err(what, 1, s.channels()));
        }
    }
    if reference.len() != estimate.len() {
        return Err(shape_err("estimate length", reference.len(), estimate.len()));
    }
    let fs = reference.sample_rate();
    let x = resample(reference.channel(0), fs, FS);
    let y = resample(estimate.channel(0), fs, FS);
    let w = window();
    let (x, y) = remove_silent_frames(&x, &y, &w);
    let bands = third_octave_bands();
    let xe = band_envelopes(&x, &w, &bands);
    let ye = band_envelopes(&y, &w, &bands);
    let frames = xe[0].len();
    if frames < STOI_MIN_FRAMES {
        return Err(Error::TooShortForStoi {
            frames,
            required: STOI_MIN_FRAMES,
        });
    }

    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let segments = frames - STOI_MIN_FRAMES + 1;
    let mut total = 0.0;
    for m in STOI_MIN_FRAMES..=frames {
        for b in 0..BANDS {
            let xs = &xe[b][m - STOI_MIN_FRAMES..m];
            let ys = &ye[b][m - STOI_MIN_FRAMES..m];
            let nx = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = nx / (ny + f64::EPSILON);
            let mut yp: Vec<f64> = ys.iter().zip(xs).map(|(yv, xv)| (yv * alpha).min(xv * clip)).collect();
            let mut xp = xs.to_vec();
            center_and_normalize(&mut yp);
            center_and_normalize(&mut xp);
            total += xp.iter().zip(&yp).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total / (segments * BANDS) as f64)
}
