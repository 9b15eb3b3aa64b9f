//! RIFF/WAVE input and output at 16 kHz.
//!
//! Input may be 16-bit PCM (scaled by 1/32768) or 32-bit IEEE float;
//! output is always 32-bit float. Float samples survive a save/load round
//! trip bit-exactly when they are representable in `f32`.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::dsp::{TimeSignal, SAMPLE_RATE};
use crate::error::{Error, Result};

pub fn load_wav(path: impl AsRef<Path>) -> Result<TimeSignal> {
    let path = path.as_ref();
    let bad = |msg: String| Error::BadFile {
        path: path.to_owned(),
        msg,
    };
    let mut reader = WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate {
            path: path.to_owned(),
            found: spec.sample_rate,
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => return Err(bad(format!("unsupported sample format {fmt:?} with {bits} bits"))),
    };
    let ch = spec.channels as usize;
    if ch == 0 || interleaved.len() % ch != 0 {
        return Err(bad(format!("{} samples do not divide into {ch} channels", interleaved.len())));
    }
    let frames = interleaved.len() / ch;
    let samples = Array2::from_shape_fn((ch, frames), |(c, n)| interleaved[n * ch + c]);
    TimeSignal::new(samples)
}

pub fn save_wav(path: impl AsRef<Path>, x: &TimeSignal) -> Result<()> {
    let channels = u16::try_from(x.channels()).map_err(|_| Error::InvalidValue {
        what: "channels",
        reason: format!("{} exceeds the WAV limit", x.channels()),
    })?;
    let spec = WavSpec {
        channels,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path.as_ref(), spec)?;
    let s = x.samples();
    for n in 0..x.len() {
        for c in 0..x.channels() {
            w.write_sample(s[[c, n]] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let x = TimeSignal::new(Array2::from_shape_fn((4, 1000), |(c, n)| {
            (((c * 7919 + n * 104_729) % 2001) as f64 / 1000.0 - 1.0) as f32 as f64
        }))
        .unwrap();
        save_wav(&p, &x).unwrap();
        let y = load_wav(&p).unwrap();
        assert_eq!(y.samples(), x.samples());
    }

    #[test]
    fn pcm16_scaling_and_rate_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pcm.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [i16::MIN, -1, 0, 16384, i16::MAX] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let x = load_wav(&p).unwrap();
        assert_eq!(x.channel(0), &[-1.0, -1.0 / 32768.0, 0.0, 0.5, 32767.0 / 32768.0]);

        let q = dir.path().join("cd.wav");
        let mut w = WavWriter::create(&q, WavSpec { sample_rate: 44_100, ..spec }).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let e = load_wav(&q).unwrap_err();
        assert!(e.to_string().contains("expected 16000 Hz"), "{e}");
        assert!(e.to_string().contains("44100"), "{e}");
    }

    #[test]
    fn malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.wav");
        std::fs::write(&p, b"RIFF\x00\x00\x00\x00WAVEjunk").unwrap();
        assert!(matches!(load_wav(&p), Err(Error::BadFile { .. })));
    }
}
