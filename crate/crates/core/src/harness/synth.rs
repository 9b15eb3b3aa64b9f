//! Seeded speech-like test signals: a harmonic source with drifting pitch,
//! shaped by per-syllable formant resonators and gated into syllables and
//! pauses, with occasional fricative noise bursts.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{TimeSignal, SAMPLE_RATE};

/// Formant triples (Hz) of a few vowels.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];

/// Two-pole resonator with unit peak gain.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self { a1: 0.0, a2: 0.0, gain: 0.0, y1: 0.0, y2: 0.0 }
    }

    fn tune(&mut self, freq: f64, bandwidth: f64, fs: f64) {
        let r = (-PI * bandwidth / fs).exp();
        self.a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
        self.a2 = -r * r;
        self.gain = 1.0 - r;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// A `len`-sample mono signal at 16 kHz with peak amplitude 0.5.
pub fn speech_like(seed: u64, len: usize) -> TimeSignal {
    let fs = SAMPLE_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rng.gen_range(90.0..220.0);
    let (p1, p2) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));

    // Segment plan: (start, end, voiced formants, fricative onset length).
    let mut segments = Vec::new();
    let mut t = rng.gen_range(0.0..0.1);
    while t * fs < len as f64 {
        let syllables = rng.gen_range(1..=4);
        for _ in 0..syllables {
            let d = rng.gen_range(0.12..0.3);
            let vowel = VOWELS[rng.gen_range(0..VOWELS.len())];
            let fric = if rng.gen_bool(0.3) { rng.gen_range(0.03..0.08) } else { 0.0 };
            segments.push((t, t + d, vowel, fric));
            t += d + rng.gen_range(0.0..0.03);
        }
        t += rng.gen_range(0.08..0.3);
    }

    let mut out = vec![0.0; len];
    let mut phase = 0.0;
    let mut res = [Resonator::new(), Resonator::new(), Resonator::new()];
    let mut seg = 0;
    let mut tuned = None;
    for (n, o) in out.iter_mut().enumerate() {
        let time = n as f64 / fs;
        let f0 = base * (1.0 + 0.12 * (2.0 * PI * 0.6 * time + p1).sin() + 0.04 * (2.0 * PI * 2.7 * time + p2).sin());
        phase = (phase + 2.0 * PI * f0 / fs) % (2.0 * PI);
        while seg < segments.len() && segments[seg].1 <= time {
            seg += 1;
        }
        let Some(&(start, end, vowel, fric)) = segments.get(seg) else {
            // Keep the resonators ringing down.
            *o = res.iter_mut().map(|r| r.step(0.0)).sum();
            continue;
        };
        if tuned != Some(seg) {
            tuned = Some(seg);
            for (k, r) in res.iter_mut().enumerate() {
                r.tune(vowel[k] * rng.gen_range(0.92..1.08), BANDWIDTHS[k], fs);
            }
        }
        let inside = time >= start && time < end;
        let env = if inside {
            let u = (time - start) / (end - start);
            (PI * u).sin().powf(0.6)
        } else {
            0.0
        };
        let harmonics = (4000.0 / f0) as usize;
        let source: f64 = if env > 0.0 {
            (1..=harmonics).map(|k| (k as f64 * phase).sin() / k as f64).sum()
        } else {
            0.0
        };
        let voiced: f64 = res.iter_mut().map(|r| r.step(source * env)).sum();
        let noise = if inside && time - start < fric {
            0.25 * rng.gen_range(-1.0..1.0) * (1.0 - (time - start) / fric)
        } else {
            0.0
        };
        *o = voiced + noise;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    TimeSignal::mono(out).expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = speech_like(3, 32_000);
        assert_eq!(a, speech_like(3, 32_000));
        assert_ne!(a, speech_like(4, 32_000));
        let peak = a.channel(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
    }

    #[test]
    fn has_pauses_and_activity() {
        let x = speech_like(9, 96_000);
        let frame_energy: Vec<f64> = x.channel(0).chunks(400).map(|c| c.iter().map(|v| v * v).sum()).collect();
        let max = frame_energy.iter().cloned().fold(0.0, f64::max);
        let quiet = frame_energy.iter().filter(|&&e| e < 1e-4 * max).count();
        let loud = frame_energy.iter().filter(|&&e| e > 1e-2 * max).count();
        assert!(quiet > 10 && loud > 50, "quiet {quiet} loud {loud}");
    }
}
