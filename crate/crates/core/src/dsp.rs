//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Framing follows a no-centering convention: frame `t` covers samples
//! `t*hop .. t*hop + frame_len`, a partial tail frame is dropped, and each
//! windowed frame is zero-padded at its end up to `fft_len`.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{shape_err, Error, Result};

/// The only sample rate this crate processes.
pub const SAMPLE_RATE: u32 = 16_000;

/// Real-valued multichannel audio, stored `[channel][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl TimeSignal {
    pub fn new(samples: Array2<f64>) -> Result<Self> {
        Self::with_rate(samples, SAMPLE_RATE)
    }

    pub fn with_rate(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::InvalidValue {
                what: "signal",
                reason: "no channels".into(),
            });
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue {
                what: "signal",
                reason: format!("non-finite sample at flat index {pos}"),
            });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>) -> Result<Self> {
        let n = samples.len();
        Self::new(Array2::from_shape_vec((1, n), samples).expect("1 x n shape"))
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            samples: Array2::zeros((channels, len)),
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.samples
            .row(c)
            .to_slice()
            .expect("signals are stored in standard layout")
    }

    /// A single channel as a new mono signal.
    pub fn select(&self, c: usize) -> TimeSignal {
        TimeSignal {
            samples: self.samples.slice(s![c..c + 1, ..]).to_owned(),
            sample_rate: self.sample_rate,
        }
    }

    /// Zero-pads or truncates every channel to `len` samples.
    pub fn resized(&self, len: usize) -> TimeSignal {
        let mut out = Array2::zeros((self.channels(), len));
        let keep = len.min(self.len());
        out.slice_mut(s![.., ..keep])
            .assign(&self.samples.slice(s![.., ..keep]));
        TimeSignal {
            samples: out,
            sample_rate: self.sample_rate,
        }
    }
}

/// Analysis/synthesis window pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Square-root periodic Hann on both sides.
    SqrtHann,
    /// Periodic Hann analysis, rectangular synthesis.
    HannRect,
    /// Rectangular on both sides.
    Rect,
}

impl Window {
    fn hann(len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
            .collect()
    }

    pub fn analysis(self, len: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => Self::hann(len).into_iter().map(f64::sqrt).collect(),
            Window::HannRect => Self::hann(len),
            Window::Rect => vec![1.0; len],
        }
    }

    pub fn synthesis(self, len: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => Self::hann(len).into_iter().map(f64::sqrt).collect(),
            Window::HannRect | Window::Rect => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub window: Window,
}

impl Default for StftConfig {
    /// 25 ms frames, 10 ms hop, 512-point FFT at 16 kHz.
    fn default() -> Self {
        Self {
            frame_len: 400,
            hop: 160,
            fft_len: 512,
            window: Window::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Number of full frames that fit in `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// Number of samples reconstructed from `frames` frames.
    pub fn coverage(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.hop == 0 {
            return Err(Error::InvalidStft("frame_len and hop must be positive".into()));
        }
        if self.frame_len > self.fft_len {
            return Err(Error::InvalidStft(format!(
                "frame_len {} exceeds fft_len {}",
                self.frame_len, self.fft_len
            )));
        }
        if self.hop > self.frame_len {
            return Err(Error::InvalidStft(format!(
                "hop {} exceeds frame_len {}",
                self.hop, self.frame_len
            )));
        }
        Ok(())
    }

    /// Steady-state overlap-add envelope of the window product, one hop long.
    fn steady_envelope(&self) -> Vec<f64> {
        let prod: Vec<f64> = self
            .window
            .analysis(self.frame_len)
            .iter()
            .zip(self.window.synthesis(self.frame_len))
            .map(|(a, s)| a * s)
            .collect();
        (0..self.hop)
            .map(|n| prod.iter().skip(n).step_by(self.hop).sum())
            .collect()
    }

    /// Checks that overlapped window products never vanish, which is what
    /// normalized overlap-add needs for perfect reconstruction.
    pub fn check_overlap_add(&self) -> Result<()> {
        self.validate()?;
        let env = self.steady_envelope();
        let peak = env.iter().cloned().fold(0.0, f64::max);
        match env.iter().position(|&e| e <= 1e-8 * peak) {
            Some(sample) => Err(Error::NotOverlapAdd { sample }),
            None => Ok(()),
        }
    }
}

/// One-sided complex spectrogram stored `[channel][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array3<Complex64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn zeros(channels: usize, frames: usize, config: StftConfig) -> Self {
        Self {
            values: Array3::zeros((channels, frames, config.n_bins())),
            config,
        }
    }

    pub fn channels(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn frames(&self) -> usize {
        self.values.len_of(Axis(1))
    }

    pub fn bins(&self) -> usize {
        self.values.len_of(Axis(2))
    }

    /// A single channel as a new one-channel spectrogram.
    pub fn select(&self, c: usize) -> Spectrogram {
        Spectrogram {
            values: self.values.slice(s![c..c + 1, .., ..]).to_owned(),
            config: self.config,
        }
    }

    pub(crate) fn check_same_shape(&self, other: &Spectrogram, what: &'static str) -> Result<()> {
        if self.values.dim() != other.values.dim() {
            return Err(shape_err(what, self.values.dim(), other.values.dim()));
        }
        Ok(())
    }
}

pub fn stft(x: &TimeSignal, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if x.len() < cfg.frame_len {
        return Err(Error::SignalTooShort {
            len: x.len(),
            frame_len: cfg.frame_len,
        });
    }
    let frames = cfg.n_frames(x.len());
    let bins = cfg.n_bins();
    let window = cfg.window.analysis(cfg.frame_len);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
    let mut out = Spectrogram::zeros(x.channels(), frames, *cfg);

    for c in 0..x.channels() {
        let samples = x.channel(c);
        for t in 0..frames {
            let frame = &samples[t * cfg.hop..t * cfg.hop + cfg.frame_len];
            for (b, (&v, &w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
                *b = Complex64::new(v * w, 0.0);
            }
            buf[cfg.frame_len..].fill(Complex64::new(0.0, 0.0));
            fft.process(&mut buf);
            out.values
                .slice_mut(s![c, t, ..])
                .iter_mut()
                .zip(&buf[..bins])
                .for_each(|(o, &v)| *o = v);
        }
    }
    Ok(out)
}

/// Normalized weighted overlap-add synthesis.
///
/// Output length is the analysis coverage `(T - 1) * hop + frame_len`. Each
/// sample is divided by the overlapped window product; the few edge samples
/// where that envelope falls below 1e-3 of its steady-state peak are divided
/// by the floor instead.
pub fn istft(spec: &Spectrogram) -> Result<TimeSignal> {
    let cfg = spec.config;
    cfg.check_overlap_add()?;
    if spec.bins() != cfg.n_bins() {
        return Err(shape_err("spectrogram bins", cfg.n_bins(), spec.bins()));
    }
    let frames = spec.frames();
    let len = cfg.coverage(frames);
    let analysis = cfg.window.analysis(cfg.frame_len);
    let synthesis = cfg.window.synthesis(cfg.frame_len);

    let mut envelope = vec![0.0; len];
    for t in 0..frames {
        for (n, (a, s)) in analysis.iter().zip(&synthesis).enumerate() {
            envelope[t * cfg.hop + n] += a * s;
        }
    }
    let floor = 1e-3 * cfg.steady_envelope().iter().cloned().fold(0.0, f64::max);

    let ifft = FftPlanner::new().plan_fft_inverse(cfg.fft_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
    let scale = 1.0 / cfg.fft_len as f64;
    let mut out = Array2::zeros((spec.channels(), len));

    for c in 0..spec.channels() {
        let mut row = out.row_mut(c);
        for t in 0..frames {
            let half = spec.values.slice(s![c, t, ..]);
            for (k, &v) in half.iter().enumerate() {
                buf[k] = v;
            }
            // Hermitian extension; DC and Nyquist must be real for a real frame.
            buf[0].im = 0.0;
            if cfg.fft_len % 2 == 0 {
                buf[cfg.fft_len / 2].im = 0.0;
            }
            for k in 1..cfg.fft_len - half.len() + 1 {
                buf[cfg.fft_len - k] = buf[k].conj();
            }
            ifft.process(&mut buf);
            for (n, &w) in synthesis.iter().enumerate() {
                row[t * cfg.hop + n] += buf[n].re * scale * w;
            }
        }
        for (v, &e) in row.iter_mut().zip(&envelope) {
            *v /= e.max(floor);
        }
    }
    TimeSignal::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(channels: usize, len: usize, seed: u64) -> TimeSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TimeSignal::new(Array2::from_shape_fn((channels, len), |_| rng.gen_range(-1.0..1.0)))
            .unwrap()
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let x = TimeSignal::zeros(1, 16_000);
        let spec = stft(&x, &StftConfig::default()).unwrap();
        assert!(spec.values.iter().all(|v| v.norm() == 0.0));
        let y = istft(&spec).unwrap();
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn six_seconds_gives_598_frames() {
        // Oracle: count frame starts directly.
        let cfg = StftConfig::default();
        let n = 6 * 16_000;
        let mut count = 0;
        let mut start = 0;
        while start + cfg.frame_len <= n {
            count += 1;
            start += cfg.hop;
        }
        assert_eq!(count, 598);
        let spec = stft(&TimeSignal::zeros(1, n), &cfg).unwrap();
        assert_eq!((spec.frames(), spec.bins()), (598, 257));
    }

    #[test]
    fn sinusoid_peaks_at_bin_32() {
        let x: Vec<f64> = (0..4000)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let spec = stft(&TimeSignal::mono(x.clone()).unwrap(), &StftConfig::default()).unwrap();

        // Direct DFT of the first windowed frame.
        let w = Window::SqrtHann.analysis(400);
        let dft_mag = |k: usize| {
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..400 {
                let ph = -2.0 * PI * (k * n) as f64 / 512.0;
                acc += Complex64::from_polar(x[n] * w[n], ph);
            }
            acc.norm()
        };
        let peak = (0..257usize)
            .max_by(|&a, &b| dft_mag(a).total_cmp(&dft_mag(b)))
            .unwrap();
        assert_eq!(peak, 32);
        for k in [0, 10, 31, 32, 33, 100] {
            assert!((spec.values[[0, 0, k]].norm() - dft_mag(k)).abs() < 1e-9);
        }
        let row = spec.values.slice(s![0, 5, ..]);
        let arg = (0..257usize)
            .max_by(|&a, &b| row[a].norm().total_cmp(&row[b].norm()))
            .unwrap();
        assert_eq!(arg, 32);
    }

    #[test]
    fn round_trip_two_channels() {
        let x = random_signal(2, 8000, 3);
        let y = istft(&stft(&x, &StftConfig::default()).unwrap()).unwrap();
        assert_eq!(y.channels(), 2);
        assert_eq!(y.len(), StftConfig::default().coverage(48));
        for c in 0..2 {
            let (a, b) = (x.channel(c), y.channel(c));
            for n in 400..y.len() - 400 {
                assert!((a[n] - b[n]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        let err = stft(&TimeSignal::zeros(1, 399), &StftConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SignalTooShort { len: 399, frame_len: 400 }));
    }

    #[test]
    fn vanishing_envelope_is_rejected() {
        // Periodic sqrt-Hann starts at zero, so hop == frame_len leaves gaps.
        let cfg = StftConfig {
            hop: 400,
            ..StftConfig::default()
        };
        let spec = stft(&random_signal(1, 2000, 1), &cfg).unwrap();
        assert!(matches!(istft(&spec), Err(Error::NotOverlapAdd { sample: 0 })));
        assert!(StftConfig::default().check_overlap_add().is_ok());
        let rect = StftConfig {
            hop: 400,
            window: Window::Rect,
            ..StftConfig::default()
        };
        assert!(rect.check_overlap_add().is_ok());
    }

    #[test]
    fn invalid_configs() {
        let big = StftConfig {
            frame_len: 600,
            ..StftConfig::default()
        };
        assert!(big.validate().is_err());
        let hop = StftConfig {
            hop: 401,
            ..StftConfig::default()
        };
        assert!(hop.validate().is_err());
    }

    #[test]
    fn parseval_per_frame() {
        let x = random_signal(1, 2000, 9);
        let cfg = StftConfig::default();
        let spec = stft(&x, &cfg).unwrap();
        let w = cfg.window.analysis(cfg.frame_len);
        for t in 0..spec.frames() {
            let e_time: f64 = (0..cfg.frame_len)
                .map(|n| (x.channel(0)[t * cfg.hop + n] * w[n]).powi(2))
                .sum();
            let row = spec.values.slice(s![0, t, ..]);
            let last = row.len() - 1;
            let e_freq: f64 = row
                .iter()
                .enumerate()
                .map(|(k, v)| if k == 0 || k == last { v.norm_sqr() } else { 2.0 * v.norm_sqr() })
                .sum::<f64>()
                / cfg.fft_len as f64;
            assert!((e_time - e_freq).abs() <= 1e-9 * e_time);
        }
    }

    #[test]
    fn stft_is_linear() {
        let x = random_signal(1, 3000, 4);
        let y = random_signal(1, 3000, 5);
        let (a, b) = (0.7, -1.9);
        let z = TimeSignal::new(&x.samples() * a + &y.samples() * b).unwrap();
        let cfg = StftConfig::default();
        let (sx, sy, sz) = (
            stft(&x, &cfg).unwrap(),
            stft(&y, &cfg).unwrap(),
            stft(&z, &cfg).unwrap(),
        );
        for ((vx, vy), vz) in sx.values.iter().zip(sy.values.iter()).zip(sz.values.iter()) {
            assert!((vx * a + vy * b - vz).norm() < 1e-12);
        }
    }

    #[test]
    fn non_finite_samples_rejected() {
        assert!(TimeSignal::mono(vec![0.0, f64::NAN]).is_err());
    }
}
