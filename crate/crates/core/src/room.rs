//! Shoebox-room simulation: image-source impulse responses, static and
//! moving sources, and SIR/SNR-controlled multichannel mixing.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::dsp::{TimeSignal, SAMPLE_RATE};
use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Hop between RIR updates for moving sources, in samples.
pub const MOVING_BLOCK: usize = 160;

/// SIR levels accepted without the free-SIR override, in dB.
pub const SIR_GRID: [f64; 6] = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0];

/// Half-width of the camera cone that the target must stay in, degrees.
pub const CAMERA_HALF_ANGLE: f64 = 15.0;

pub const DEFAULT_ROOM: Point = [7.0, 5.3, 2.7];
pub const DEFAULT_ARRAY_CENTER: Point = [3.5, 1.5, 1.2];
pub const DEFAULT_RADIUS: f64 = 0.035;
pub const DEFAULT_MICS: usize = 4;

const SINC_HALF: usize = 40;
const SINC_TAPS: usize = 2 * SINC_HALF + 1;
const SINC_TABLE_STEPS: usize = 2048;
const MIN_DISTANCE: f64 = 0.01;
/// RIR tails stop once the remaining energy is 40 dB down.
const TAIL_DECAY_DB: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    mic_positions: Vec<Point>,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<Point>) -> Result<Self> {
        if mic_positions.is_empty() {
            return Err(Error::InvalidValue {
                what: "array",
                reason: "needs at least one microphone".into(),
            });
        }
        for (i, a) in mic_positions.iter().enumerate() {
            for b in &mic_positions[i + 1..] {
                if distance(a, b) == 0.0 {
                    return Err(Error::InvalidValue {
                        what: "array",
                        reason: "microphone positions must be distinct".into(),
                    });
                }
            }
        }
        Ok(Self { mic_positions })
    }

    pub fn mics(&self) -> &[Point] {
        &self.mic_positions
    }

    pub fn len(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mic_positions.is_empty()
    }

    pub fn center(&self) -> Point {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.mic_positions {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    }
}

/// Uniform circular array in the horizontal plane, mic 0 on the +x axis,
/// numbered counter-clockwise.
pub fn make_uca(m: usize, radius: f64, center: Point) -> Result<ArrayGeometry> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidValue {
            what: "radius",
            reason: format!("{radius} is negative"),
        });
    }
    let positions = (0..m)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / m as f64;
            [
                center[0] + radius * phi.cos(),
                center[1] + radius * phi.sin(),
                center[2],
            ]
        })
        .collect();
    ArrayGeometry::new(positions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomSpec {
    pub dims: Point,
    /// Seconds; 0 means anechoic.
    pub rt60: f64,
    pub sound_speed: f64,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            dims: DEFAULT_ROOM,
            rt60: 0.3,
            sound_speed: 343.0,
        }
    }
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidValue {
                what: "room dimensions",
                reason: format!("{:?} must all be positive", self.dims),
            });
        }
        if !(self.rt60 >= 0.0 && self.rt60 <= 2.0) {
            return Err(Error::InvalidValue {
                what: "rt60",
                reason: format!("{} is outside [0, 2] s", self.rt60),
            });
        }
        if !(self.sound_speed > 0.0) {
            return Err(Error::InvalidValue {
                what: "sound_speed",
                reason: format!("{} must be positive", self.sound_speed),
            });
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.iter().zip(&self.dims).all(|(&x, &d)| x > 0.0 && x < d)
    }

    fn check_inside(&self, p: &Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutsideRoom {
                x: p[0],
                y: p[1],
                z: p[2],
            })
        }
    }

    /// Sabine's absorption `alpha = 24 ln(10) V / (c S rt60)`, capped at 1.
    pub fn sabine_absorption(&self) -> f64 {
        let [lx, ly, lz] = self.dims;
        let volume = lx * ly * lz;
        let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
        (24.0 * std::f64::consts::LN_10 * volume / (self.sound_speed * surface * self.rt60)).min(1.0)
    }

    /// Frequency-independent wall pressure reflection coefficient
    /// `sqrt(1 - alpha)` from Sabine's absorption.
    pub fn reflection_coefficient(&self) -> f64 {
        if self.rt60 == 0.0 {
            return 0.0;
        }
        (1.0 - self.sabine_absorption()).sqrt()
    }
}

/// Visits every image of `src` within `reach` metres of `rcv` as
/// `(distance, reflection order)`.
fn for_each_image(room: &RoomSpec, src: &Point, rcv: &Point, reach: f64, mut visit: impl FnMut(f64, u32)) {
    let axis = |k: usize| -> Vec<(f64, u32)> {
        let l = room.dims[k];
        let span = (reach / (2.0 * l)).ceil() as i64 + 1;
        let mut out = Vec::with_capacity(4 * span as usize + 2);
        for n in -span..=span {
            for q in 0..2i64 {
                let coord = (1 - 2 * q) as f64 * src[k] + 2.0 * n as f64 * l;
                let delta = (coord - rcv[k]).powi(2);
                if delta <= reach * reach {
                    out.push((delta, (2 * n - q).unsigned_abs() as u32));
                }
            }
        }
        out
    };
    let (xs, ys, zs) = (axis(0), axis(1), axis(2));
    let reach_sq = reach * reach;
    for &(dx2, ox) in &xs {
        for &(dy2, oy) in &ys {
            let dxy2 = dx2 + dy2;
            if dxy2 > reach_sq {
                continue;
            }
            for &(dz2, oz) in &zs {
                let d2 = dxy2 + dz2;
                if d2 <= reach_sq {
                    visit(d2.sqrt(), ox + oy + oz);
                }
            }
        }
    }
}

/// Straight-line, constant-speed source motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub start: Point,
    pub end: Point,
    /// Seconds.
    pub duration: f64,
}

impl Trajectory {
    pub fn fixed(at: Point, duration: f64) -> Self {
        Self {
            start: at,
            end: at,
            duration,
        }
    }

    pub fn is_static(&self) -> bool {
        self.start == self.end
    }

    pub fn position(&self, time: f64) -> Point {
        if self.is_static() || self.duration <= 0.0 {
            return self.start;
        }
        let u = (time / self.duration).clamp(0.0, 1.0);
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = self.start[k] + u * (self.end[k] - self.start[k]);
        }
        p
    }
}

/// Multichannel impulse response `[mic][tap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Array2<f64>,
    pub sample_rate: u32,
}

impl Rir {
    pub fn len(&self) -> usize {
        self.taps.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.ncols() == 0
    }

    pub fn mic(&self, m: usize) -> &[f64] {
        self.taps.row(m).to_slice().expect("standard layout")
    }
}

fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Hann-windowed sinc evaluated at `x`, window reaching zero at |x| = 41.
pub(crate) fn windowed_sinc(x: f64) -> f64 {
    let width = SINC_HALF as f64 + 1.0;
    if x.abs() >= width {
        return 0.0;
    }
    let w = 0.5 * (1.0 + (PI * x / width).cos());
    let s = if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    };
    w * s
}

/// Rows `r = 0..=STEPS`: `table[r][k] = windowed_sinc(k - 40 - r / STEPS)`.
fn sinc_table() -> &'static [[f64; SINC_TAPS]] {
    static TABLE: OnceLock<Vec<[f64; SINC_TAPS]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..=SINC_TABLE_STEPS)
            .map(|r| {
                let frac = r as f64 / SINC_TABLE_STEPS as f64;
                let mut row = [0.0; SINC_TAPS];
                for (k, v) in row.iter_mut().enumerate() {
                    *v = windowed_sinc(k as f64 - SINC_HALF as f64 - frac);
                }
                row
            })
            .collect()
    })
}

/// Adds `gain * windowed_sinc(n - delay)` into `out` for the 81 taps around
/// `delay`, dropping taps outside `out`.
fn add_fractional_impulse(out: &mut [f64], delay: f64, gain: f64) {
    let base = delay.floor();
    let frac = delay - base;
    let pos = frac * SINC_TABLE_STEPS as f64;
    let r = (pos as usize).min(SINC_TABLE_STEPS - 1);
    let mu = pos - r as f64;
    let table = sinc_table();
    let (row0, row1) = (&table[r], &table[r + 1]);
    let (g0, g1) = (gain * (1.0 - mu), gain * mu);

    let first = base as i64 - SINC_HALF as i64;
    let lo = (-first).max(0) as usize;
    let hi = ((out.len() as i64 - first).min(SINC_TAPS as i64)).max(0) as usize;
    if lo >= hi {
        return;
    }
    let start = (first + lo as i64) as usize;
    let dst = &mut out[start..start + (hi - lo)];
    for ((d, a), b) in dst.iter_mut().zip(&row0[lo..hi]).zip(&row1[lo..hi]) {
        *d += g0 * a + g1 * b;
    }
}

/// Image-source RIR from `src` to every microphone of `array`.
///
/// Each image contributes `beta^order / max(d, 0.01)` at delay `d / c`,
/// placed with an 81-tap Hann-windowed sinc. Images are kept while their
/// delay lies inside the RIR, whose length covers the farthest direct path
/// plus the time the reverberant energy needs to fall 40 dB.
pub fn simulate_rir(room: &RoomSpec, src: &Point, array: &ArrayGeometry) -> Result<Rir> {
    room.validate()?;
    room.check_inside(src)?;
    for mic in array.mics() {
        room.check_inside(mic)?;
    }
    let fs = SAMPLE_RATE as f64;
    let c = room.sound_speed;
    let beta = room.reflection_coefficient();
    let direct_max = array
        .mics()
        .iter()
        .map(|m| distance(m, src))
        .fold(0.0, f64::max);
    let tail = room.rt60 * TAIL_DECAY_DB / 60.0;
    let len = ((direct_max / c + tail) * fs).ceil() as usize + SINC_HALF + 1;
    let mut taps = Array2::zeros((array.len(), len));

    if beta == 0.0 {
        for (m, mic) in array.mics().iter().enumerate() {
            let d = distance(mic, src);
            let row = taps.row_mut(m).into_slice().expect("standard layout");
            add_fractional_impulse(row, d * fs / c, 1.0 / d.max(MIN_DISTANCE));
        }
        return Ok(Rir {
            taps,
            sample_rate: SAMPLE_RATE,
        });
    }

    // Longest path that still lands inside the response.
    let reach = (len + SINC_HALF) as f64 * c / fs;
    let mut powers = Vec::new();
    for (m, mic) in array.mics().iter().enumerate() {
        let row = taps.row_mut(m).into_slice().expect("standard layout");
        for_each_image(room, src, mic, reach, |d, order| {
            let order = order as usize;
            while powers.len() <= order {
                powers.push(beta.powi(powers.len() as i32));
            }
            add_fractional_impulse(row, d * fs / c, powers[order] / d.max(MIN_DISTANCE));
        });
        highpass_in_place(row);
    }
    Ok(Rir {
        taps,
        sample_rate: SAMPLE_RATE,
    })
}

/// Allen-Berkley 100 Hz high-pass. Image gains are all positive, so without
/// it the summed pulses build up a slowly decaying DC component that
/// stretches the measured reverberation time.
fn highpass_in_place(h: &mut [f64]) {
    let w = 2.0 * PI * 100.0 / SAMPLE_RATE as f64;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let mut y = [0.0; 3];
    for v in h.iter_mut() {
        y[2] = y[1];
        y[1] = y[0];
        y[0] = b1 * y[1] + b2 * y[2] + *v;
        *v = y[0] + a1 * y[1] + r1 * y[2];
    }
}

/// Linear convolution of `x` with `h`, truncated to `x.len()` samples.
fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 || h.is_empty() {
        return vec![0.0; n];
    }
    let size = (n + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex64> = (0..size)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    let mut b: Vec<Complex64> = (0..size)
        .map(|i| Complex64::new(h.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    a[..n].iter().map(|v| v.re / size as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Renders a mono dry signal at the microphones. Output has the dry
/// signal's length; the reverberant tail past it is dropped.
///
/// Moving sources get a fresh RIR every [`MOVING_BLOCK`] samples, and the
/// response used at each sample is the linear interpolation between the two
/// RIRs bracketing its block, which crossfades the two block outputs.
pub fn render_source(
    dry: &TimeSignal,
    traj: &Trajectory,
    room: &RoomSpec,
    array: &ArrayGeometry,
) -> Result<TimeSignal> {
    if dry.channels() != 1 {
        return Err(Error::InvalidValue {
            what: "dry signal",
            reason: format!("expected mono, got {} channels", dry.channels()),
        });
    }
    let fs = SAMPLE_RATE as f64;
    let n = dry.len();
    let seconds = n as f64 / fs;
    if !traj.is_static() && traj.duration + 1e-9 < seconds {
        return Err(Error::InvalidValue {
            what: "trajectory",
            reason: format!("duration {} s shorter than signal {} s", traj.duration, seconds),
        });
    }
    room.check_inside(&traj.start)?;
    room.check_inside(&traj.end)?;
    let x = dry.channel(0);
    let mut out = Array2::zeros((array.len(), n));

    if traj.is_static() {
        let rir = simulate_rir(room, &traj.start, array)?;
        for m in 0..array.len() {
            let y = fft_convolve(x, rir.mic(m));
            out.row_mut(m).iter_mut().zip(y).for_each(|(o, v)| *o = v);
        }
        return TimeSignal::new(out);
    }

    let blocks = n.div_ceil(MOVING_BLOCK);
    let rirs = (0..=blocks)
        .map(|k| simulate_rir(room, &traj.position((k * MOVING_BLOCK) as f64 / fs), array))
        .collect::<Result<Vec<_>>>()?;
    let len = rirs.iter().map(Rir::len).max().unwrap_or(0);
    // Zero-padded history so that y[n] = sum_i rev_h[i] * padded[n + i].
    let mut padded = vec![0.0; len - 1 + n];
    padded[len - 1..].copy_from_slice(x);

    for m in 0..array.len() {
        let reversed: Vec<Vec<f64>> = rirs
            .iter()
            .map(|r| {
                let mut h = r.mic(m).to_vec();
                h.resize(len, 0.0);
                h.reverse();
                h
            })
            .collect();
        let mut row = out.row_mut(m);
        for k in 0..blocks {
            let (h0, h1) = (&reversed[k], &reversed[k + 1]);
            let begin = k * MOVING_BLOCK;
            for i in begin..(begin + MOVING_BLOCK).min(n) {
                let alpha = (i - begin) as f64 / MOVING_BLOCK as f64;
                let window = &padded[i..i + len];
                let a = dot(h0, window);
                let b = if alpha == 0.0 { a } else { dot(h1, window) };
                row[i] = (1.0 - alpha) * a + alpha * b;
            }
        }
    }
    TimeSignal::new(out)
}

/// Source layout and mixing levels for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub room: RoomSpec,
    /// Looks along +y; azimuths are measured from +y towards +x.
    pub array: ArrayGeometry,
    pub target: Trajectory,
    pub interferers: Vec<Point>,
    /// Per interferer, relative to the target at the reference channel.
    pub sir_db: Vec<f64>,
    /// Per-channel sensor SNR is drawn uniformly from this range; `None`
    /// disables sensor noise.
    pub sensor_snr_db: Option<[f64; 2]>,
    /// Allows SIRs off [`SIR_GRID`].
    pub free_sir: bool,
    pub seed: u64,
}

/// Azimuth of `p` seen from `center`, degrees from +y towards +x.
pub fn azimuth_deg(center: &Point, p: &Point) -> f64 {
    (p[0] - center[0]).atan2(p[1] - center[1]).to_degrees()
}

/// Point at `azimuth_deg` / `dist` from `center` in its horizontal plane.
pub fn polar_point(center: &Point, azimuth_deg: f64, dist: f64) -> Point {
    let a = azimuth_deg.to_radians();
    [center[0] + dist * a.sin(), center[1] + dist * a.cos(), center[2]]
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        for mic in self.array.mics() {
            self.room.check_inside(mic)?;
        }
        self.room.check_inside(&self.target.start)?;
        self.room.check_inside(&self.target.end)?;
        for p in &self.interferers {
            self.room.check_inside(p)?;
        }
        let center = self.array.center();
        for p in [self.target.start, self.target.end] {
            let az = azimuth_deg(&center, &p);
            if az.abs() > CAMERA_HALF_ANGLE + 1e-9 {
                return Err(Error::InvalidValue {
                    what: "target",
                    reason: format!("azimuth {az:.2} deg is outside the camera cone"),
                });
            }
        }
        if self.sir_db.len() != self.interferers.len() {
            return Err(Error::InvalidValue {
                what: "sir_db",
                reason: format!(
                    "{} values for {} interferers",
                    self.sir_db.len(),
                    self.interferers.len()
                ),
            });
        }
        for &s in &self.sir_db {
            if !s.is_finite() || (!self.free_sir && !SIR_GRID.contains(&s)) {
                return Err(Error::InvalidValue {
                    what: "sir_db",
                    reason: format!("{s} is not one of {SIR_GRID:?}"),
                });
            }
        }
        if let Some([lo, hi]) = self.sensor_snr_db {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidValue {
                    what: "sensor_snr_db",
                    reason: format!("bad range [{lo}, {hi}]"),
                });
            }
        }
        Ok(())
    }

    pub fn is_moving(&self) -> bool {
        !self.target.is_static()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneOptions {
    pub moving: bool,
    pub interferers: usize,
    /// Seconds.
    pub duration: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            moving: false,
            interferers: 1,
            duration: 6.0,
        }
    }
}

/// Minimum angular gap kept between the target and each interferer, degrees.
pub const MIN_SEPARATION_DEG: f64 = 20.0;

/// Draws a scene from the training-set distribution: target inside the
/// camera cone, every source 0.5 to 2.1 m from the array on the frontal
/// half-plane, RT60 between 0.2 and 0.5 s, SIR from [`SIR_GRID`], sensor SNR
/// between 30 and 40 dB. Static targets are placed closer than every
/// interferer.
pub fn sample_scene(seed: u64, opts: &SceneOptions) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = DEFAULT_ARRAY_CENTER;
    let array = make_uca(DEFAULT_MICS, DEFAULT_RADIUS, center).expect("default array is valid");
    let rt60 = rng.gen_range(0.2..=0.5);
    let t_az = rng.gen_range(-CAMERA_HALF_ANGLE..=CAMERA_HALF_ANGLE);
    let mut dists: Vec<f64> = (0..=opts.interferers)
        .map(|_| rng.gen_range(0.5..=2.1))
        .collect();
    if !opts.moving {
        // Closest distance goes to the target.
        let (imin, _) = dists
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least the target");
        dists.swap(0, imin);
    }
    let start = polar_point(&center, t_az, dists[0]);
    let end = if opts.moving {
        let az = rng.gen_range(-CAMERA_HALF_ANGLE..=CAMERA_HALF_ANGLE);
        let d = rng.gen_range(0.5..=2.1);
        polar_point(&center, az, d)
    } else {
        start
    };
    let interferers = dists[1..]
        .iter()
        .map(|&d| loop {
            let az: f64 = rng.gen_range(-90.0..=90.0);
            if (az - t_az).abs() >= MIN_SEPARATION_DEG {
                break polar_point(&center, az, d);
            }
        })
        .collect();
    let sir_db = (0..opts.interferers)
        .map(|_| SIR_GRID[rng.gen_range(0..SIR_GRID.len())])
        .collect();
    Scene {
        room: RoomSpec {
            rt60,
            ..RoomSpec::default()
        },
        array,
        target: Trajectory {
            start,
            end,
            duration: opts.duration,
        },
        interferers,
        sir_db,
        sensor_snr_db: Some([30.0, 40.0]),
        free_sir: false,
        seed,
    }
}

/// Reference channel for SIR measurement.
pub const SIR_REF_CHANNEL: usize = 0;

/// Output of [`mix_scene`].
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixture: TimeSignal,
    /// Reverberant target image at every microphone.
    pub clean: TimeSignal,
    /// Realized per-channel sensor SNR in dB (empty without sensor noise).
    pub sensor_snr_db: Vec<f64>,
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

pub fn mix_scene(
    scene: &Scene,
    target_dry: &TimeSignal,
    interferer_drys: &[TimeSignal],
) -> Result<Mixture> {
    scene.validate()?;
    if interferer_drys.len() != scene.interferers.len() {
        return Err(Error::InvalidValue {
            what: "interferer signals",
            reason: format!(
                "{} signals for {} interferers",
                interferer_drys.len(),
                scene.interferers.len()
            ),
        });
    }
    let n = target_dry.len();
    if let Some(bad) = interferer_drys.iter().find(|s| s.len() != n) {
        return Err(Error::InvalidValue {
            what: "interferer signals",
            reason: format!("length {} differs from target length {n}", bad.len()),
        });
    }
    let clean = render_source(target_dry, &scene.target, &scene.room, &scene.array)?;
    let p_target = power(clean.channel(SIR_REF_CHANNEL));
    if p_target == 0.0 {
        return Err(Error::SilentSignal("target"));
    }
    let mut total = clean.samples().to_owned();
    for ((dry, pos), sir) in interferer_drys
        .iter()
        .zip(&scene.interferers)
        .zip(&scene.sir_db)
    {
        let img = render_source(dry, &Trajectory::fixed(*pos, scene.target.duration), &scene.room, &scene.array)?;
        let p = power(img.channel(SIR_REF_CHANNEL));
        if p == 0.0 {
            return Err(Error::SilentSignal("interferer"));
        }
        let gain = (p_target / (p * 10f64.powf(sir / 10.0))).sqrt();
        total.scaled_add(gain, &img.samples());
    }

    let mut realized = Vec::new();
    if let Some([lo, hi]) = scene.sensor_snr_db {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x5e45_0a15_e000_0001);
        for mut row in total.rows_mut() {
            let snr = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let p_sig = power(row.as_slice().expect("standard layout"));
            let p_noise = power(&noise);
            if p_sig > 0.0 && p_noise > 0.0 {
                let g = (p_sig / (p_noise * 10f64.powf(snr / 10.0))).sqrt();
                row.iter_mut().zip(&noise).for_each(|(v, e)| *v += g * e);
            }
            realized.push(snr);
        }
    }
    Ok(Mixture {
        mixture: TimeSignal::new(total)?,
        clean,
        sensor_snr_db: realized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uca_layout() {
        let a = make_uca(4, 0.035, [0.0; 3]).unwrap();
        for (i, p) in a.mics().iter().enumerate() {
            assert!((distance(p, &[0.0; 3]) - 0.035).abs() < 1e-15);
            let az = p[1].atan2(p[0]).to_degrees().rem_euclid(360.0);
            assert!((az - 90.0 * i as f64).abs() < 1e-9);
        }
        let chord = 2.0 * 0.035 * (PI / 4.0).sin();
        for i in 0..4 {
            let d = distance(&a.mics()[i], &a.mics()[(i + 1) % 4]);
            assert!((d - chord).abs() < 1e-15);
        }
        let single = make_uca(1, 0.0, [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(single.mics(), &[[1.0, 2.0, 3.0]]);
        assert!(make_uca(4, -0.1, [0.0; 3]).is_err());
        assert!(make_uca(0, 0.1, [0.0; 3]).is_err());
    }

    #[test]
    fn anechoic_pulse_at_expected_delay() {
        let room = RoomSpec {
            rt60: 0.0,
            ..RoomSpec::default()
        };
        let mic = [3.0, 2.0, 1.5];
        let src = [4.0, 2.0, 1.5];
        let array = ArrayGeometry::new(vec![mic]).unwrap();
        let rir = simulate_rir(&room, &src, &array).unwrap();
        let delay: f64 = 16_000.0 / 343.0;
        let h = rir.mic(0);
        let support = (delay.floor() as usize - 40)..=(delay.floor() as usize + 40);
        for (n, &v) in h.iter().enumerate() {
            let expect = if support.contains(&n) {
                windowed_sinc(n as f64 - delay)
            } else {
                0.0
            };
            assert!((v - expect).abs() < 1e-6, "tap {n}: {v} vs {expect}");
        }
        let argmax = (0..h.len()).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap();
        assert_eq!(argmax, 47);
    }

    #[test]
    fn integer_delays_halve_with_distance() {
        let room = RoomSpec {
            rt60: 0.0,
            ..RoomSpec::default()
        };
        let d = 40.0 * 343.0 / 16_000.0;
        let array = ArrayGeometry::new(vec![[1.0, 2.0, 1.0]]).unwrap();
        let near = simulate_rir(&room, &[1.0 + d, 2.0, 1.0], &array).unwrap();
        let far = simulate_rir(&room, &[1.0 + 2.0 * d, 2.0, 1.0], &array).unwrap();
        let a1 = near.mic(0).iter().cloned().fold(0.0, f64::max);
        let a2 = far.mic(0).iter().cloned().fold(0.0, f64::max);
        assert!((a2 / a1 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn source_outside_room_fails() {
        let array = make_uca(4, 0.035, DEFAULT_ARRAY_CENTER).unwrap();
        let err = simulate_rir(&RoomSpec::default(), &[8.0, 1.0, 1.0], &array).unwrap_err();
        assert!(matches!(err, Error::OutsideRoom { .. }));
    }

    #[test]
    fn equidistant_mics_match() {
        let room = RoomSpec {
            rt60: 0.0,
            ..RoomSpec::default()
        };
        let array = ArrayGeometry::new(vec![[3.0, 2.0, 1.0], [3.0, 2.0, 1.6]]).unwrap();
        let rir = simulate_rir(&room, &[4.0, 2.0, 1.3], &array).unwrap();
        for (a, b) in rir.mic(0).iter().zip(rir.mic(1)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn reverberant_rir_length_follows_rt60() {
        let array = make_uca(4, 0.035, DEFAULT_ARRAY_CENTER).unwrap();
        let src = polar_point(&DEFAULT_ARRAY_CENTER, 0.0, 1.0);
        let short = simulate_rir(&RoomSpec { rt60: 0.2, ..RoomSpec::default() }, &src, &array).unwrap();
        let long = simulate_rir(&RoomSpec { rt60: 0.5, ..RoomSpec::default() }, &src, &array).unwrap();
        assert!(long.len() > 2 * short.len());
        assert!(long.taps.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn scene_sampling_ranges() {
        for seed in 0..200 {
            let moving = seed % 2 == 1;
            let s = sample_scene(seed, &SceneOptions { moving, ..SceneOptions::default() });
            s.validate().unwrap();
            let c = s.array.center();
            let az = azimuth_deg(&c, &s.target.start);
            assert!(az.abs() <= 15.0);
            let dt = distance(&c, &s.target.start);
            assert!((0.5..=2.1).contains(&dt));
            let di = distance(&c, &s.interferers[0]);
            assert!((0.5..=2.1).contains(&di));
            assert!((0.2..=0.5).contains(&s.room.rt60));
            assert!(SIR_GRID.contains(&s.sir_db[0]));
            assert_eq!(s.is_moving(), moving);
            if !moving {
                assert!(dt <= di);
            }
        }
        let o = SceneOptions::default();
        assert_eq!(sample_scene(5, &o), sample_scene(5, &o));
    }
}
