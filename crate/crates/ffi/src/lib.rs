//! C ABI over the attnbeam enhancement pipeline.
//!
//! Objects cross the boundary as opaque handles created and destroyed by
//! this library. Every fallible call returns an [`AttnbeamStatus`]; on
//! failure the message is available from [`attnbeam_last_error`] on the
//! same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use attnbeam::attention::{AttentionMatrix, FeatureMatrix};
use attnbeam::dsp::TimeSignal;
use attnbeam::harness::experiment::synthesize;
use attnbeam::harness::{load_wav, parse_scene_config, save_wav, Corpus};
use attnbeam::masks::MaskMode;
use attnbeam::metrics::{si_snr, stoi};
use attnbeam::pipeline::{enhance, EnhanceConfig, Enhanced, Mode};
use attnbeam::Error;
use ndarray::Array2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnbeamStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    BufferTooSmall = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnbeamStream {
    Speech = 0,
    Noise = 1,
}

/// Multichannel 16 kHz signal.
pub struct AttnbeamSignal(TimeSignal);

/// Enhancement settings.
pub struct AttnbeamConfig(EnhanceConfig);

/// Output of one enhancement run.
pub struct AttnbeamEnhanced(Enhanced);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> AttnbeamStatus {
    match e {
        Error::ShapeMismatch { .. } | Error::SignalTooShort { .. } | Error::TooShortForStoi { .. } => {
            AttnbeamStatus::ShapeMismatch
        }
        Error::Io(_) | Error::Wav(_) | Error::Csv(_) | Error::BadFile { .. } | Error::SampleRate { .. } => {
            AttnbeamStatus::Io
        }
        _ => AttnbeamStatus::InvalidArgument,
    }
}

struct Fail(AttnbeamStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AttnbeamStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AttnbeamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AttnbeamStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AttnbeamStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AttnbeamStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn attnbeam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Copies `channels * len` channel-major samples into a new signal.
///
/// # Safety
/// `samples` must point to `channels * len` readable doubles and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_signal_new(
    samples: *const f64,
    channels: usize,
    len: usize,
    out: *mut *mut AttnbeamSignal,
) -> AttnbeamStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if samples.is_null() {
            return Err(null("samples"));
        }
        let n = channels
            .checked_mul(len)
            .ok_or_else(|| Fail(AttnbeamStatus::InvalidArgument, "size overflows".into()))?;
        let v = std::slice::from_raw_parts(samples, n).to_vec();
        let a = Array2::from_shape_vec((channels, len), v).expect("length checked");
        *out = boxed(AttnbeamSignal(TimeSignal::new(a)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_signal_load_wav(
    path: *const c_char,
    out: *mut *mut AttnbeamSignal,
) -> AttnbeamStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(text(path, "path")?);
        *out = boxed(AttnbeamSignal(load_wav(path)?));
        Ok(())
    })
}

/// Writes 32-bit float WAV.
///
/// # Safety
/// `signal` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_signal_save_wav(
    signal: *const AttnbeamSignal,
    path: *const c_char,
) -> AttnbeamStatus {
    guard(|| {
        let s = deref(signal, "signal")?;
        save_wav(text(path, "path")?, &s.0)?;
        Ok(())
    })
}

/// Zero for a null handle.
///
/// # Safety
/// `signal` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_signal_channels(signal: *const AttnbeamSignal) -> usize {
    signal.as_ref().map_or(0, |s| s.0.channels())
}

/// # Safety
/// `signal` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_signal_len(signal: *const AttnbeamSignal) -> usize {
    signal.as_ref().map_or(0, |s| s.0.len())
}

/// Copies the samples, channel-major, into `buf`, which must hold
/// `channels * len` values.
///
/// # Safety
/// `signal` must be a live handle and `buf` must point to `capacity`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_signal_copy(
    signal: *const AttnbeamSignal,
    buf: *mut f64,
    capacity: usize,
) -> AttnbeamStatus {
    guard(|| {
        let s = deref(signal, "signal")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need = s.0.channels() * s.0.len();
        if capacity < need {
            return Err(Fail(
                AttnbeamStatus::BufferTooSmall,
                format!("buffer holds {capacity} values, need {need}"),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (d, v) in dst.iter_mut().zip(s.0.samples().iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `signal` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_signal_free(signal: *mut AttnbeamSignal) {
    if !signal.is_null() {
        drop(Box::from_raw(signal));
    }
}

/// Renders a scene from configuration text (empty for a sampled scene)
/// with seeded synthetic speech.
///
/// # Safety
/// `config` must be a NUL-terminated string; `mixture` and `clean` must be
/// writable handle slots.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_simulate(
    config: *const c_char,
    seed: u64,
    mixture: *mut *mut AttnbeamSignal,
    clean: *mut *mut AttnbeamSignal,
) -> AttnbeamStatus {
    guard(|| {
        let mixture = out_ptr(mixture, "mixture")?;
        let clean = out_ptr(clean, "clean")?;
        let scene = parse_scene_config(text(config, "config")?, seed)?;
        let m = synthesize(&scene, &Corpus::synthetic(), &Corpus::synthetic())?;
        *mixture = boxed(AttnbeamSignal(m.mixture));
        *clean = boxed(AttnbeamSignal(m.clean));
        Ok(())
    })
}

/// New configuration for `mode`, for example `"mvdr-batch"`.
///
/// # Safety
/// `mode` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_config_new(mode: *const c_char, out: *mut *mut AttnbeamConfig) -> AttnbeamStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mode: Mode = text(mode, "mode")?.parse()?;
        *out = boxed(AttnbeamConfig(EnhanceConfig::with_mode(mode)));
        Ok(())
    })
}

/// `"WLM"`, `"IRM"` or `"IBM"`.
///
/// # Safety
/// `config` must be a live handle and `mask` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_config_set_mask(config: *mut AttnbeamConfig, mask: *const c_char) -> AttnbeamStatus {
    guard(|| {
        let c = out_ptr(config, "config")?;
        c.0.mask_mode = text(mask, "mask")?.parse::<MaskMode>()?;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_config_set_ref_channel(config: *mut AttnbeamConfig, channel: usize) -> AttnbeamStatus {
    guard(|| {
        out_ptr(config, "config")?.0.ref_channel = channel;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_config_set_diag_loading(config: *mut AttnbeamConfig, loading: f64) -> AttnbeamStatus {
    guard(|| {
        if !(loading >= 0.0) {
            return Err(Fail(AttnbeamStatus::InvalidArgument, format!("loading {loading} must be non-negative")));
        }
        out_ptr(config, "config")?.0.diag_loading = loading;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_config_set_separate_noise_attention(
    config: *mut AttnbeamConfig,
    separate: bool,
) -> AttnbeamStatus {
    guard(|| {
        out_ptr(config, "config")?.0.separate_noise_attention = separate;
        Ok(())
    })
}

/// Query/key features for `mvdr-tv-featfile`, `frames * dim` row-major.
///
/// # Safety
/// `config` must be a live handle and `values` must point to
/// `frames * dim` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_config_set_features(
    config: *mut AttnbeamConfig,
    values: *const f64,
    frames: usize,
    dim: usize,
) -> AttnbeamStatus {
    guard(|| {
        let c = out_ptr(config, "config")?;
        if values.is_null() {
            return Err(null("values"));
        }
        let n = frames
            .checked_mul(dim)
            .ok_or_else(|| Fail(AttnbeamStatus::InvalidArgument, "size overflows".into()))?;
        let v = std::slice::from_raw_parts(values, n).to_vec();
        let m = Array2::from_shape_vec((frames, dim), v).expect("length checked");
        c.0.features = Some(FeatureMatrix::new(m)?);
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_config_free(config: *mut AttnbeamConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Enhances `mixture` with oracle masks from `clean`.
///
/// # Safety
/// All handles must be live and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_enhance(
    mixture: *const AttnbeamSignal,
    clean: *const AttnbeamSignal,
    config: *const AttnbeamConfig,
    out: *mut *mut AttnbeamEnhanced,
) -> AttnbeamStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let y = deref(mixture, "mixture")?;
        let s = deref(clean, "clean")?;
        let c = deref(config, "config")?;
        *out = boxed(AttnbeamEnhanced(enhance(&y.0, &s.0, &c.0)?));
        Ok(())
    })
}

/// Copies the enhanced mono output into a new signal handle.
///
/// # Safety
/// `result` must be a live handle and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_enhanced_output(
    result: *const AttnbeamEnhanced,
    out: *mut *mut AttnbeamSignal,
) -> AttnbeamStatus {
    guard(|| {
        let r = deref(result, "result")?;
        *out_ptr(out, "out")? = boxed(AttnbeamSignal(r.0.output.clone()));
        Ok(())
    })
}

/// Number of (frame, bin) pairs that fell back to the reference channel.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_enhanced_flagged_bins(result: *const AttnbeamEnhanced) -> usize {
    result.as_ref().map_or(0, |r| r.0.flagged_bins.len())
}

/// Frame count of the attention matrix for `stream`, or 0 when the mode
/// does not compute one.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_enhanced_attention_frames(
    result: *const AttnbeamEnhanced,
    stream: AttnbeamStream,
) -> usize {
    result
        .as_ref()
        .and_then(|r| attention_of(&r.0, stream))
        .map_or(0, AttentionMatrix::frames)
}

fn attention_of(e: &Enhanced, stream: AttnbeamStream) -> Option<&AttentionMatrix> {
    match stream {
        AttnbeamStream::Speech => e.speech_attention.as_ref(),
        AttnbeamStream::Noise => e.noise_attention.as_ref(),
    }
}

/// Copies the `T x T` attention matrix row-major into `buf`.
///
/// # Safety
/// `result` must be a live handle and `buf` must point to `capacity`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_enhanced_attention(
    result: *const AttnbeamEnhanced,
    stream: AttnbeamStream,
    buf: *mut f64,
    capacity: usize,
) -> AttnbeamStatus {
    guard(|| {
        let r = deref(result, "result")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let a = attention_of(&r.0, stream).ok_or_else(|| {
            Fail(
                AttnbeamStatus::InvalidArgument,
                format!("no {stream:?} attention: the mode is not time-varying"),
            )
        })?;
        let need = a.frames() * a.frames();
        if capacity < need {
            return Err(Fail(
                AttnbeamStatus::BufferTooSmall,
                format!("buffer holds {capacity} values, need {need}"),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (d, v) in dst.iter_mut().zip(a.values().iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_enhanced_free(result: *mut AttnbeamEnhanced) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// SI-SNR in dB of mono `estimate` against mono `reference`.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_si_snr(
    reference: *const AttnbeamSignal,
    estimate: *const AttnbeamSignal,
    out: *mut f64,
) -> AttnbeamStatus {
    guard(|| {
        let v = si_snr(&deref(reference, "reference")?.0, &deref(estimate, "estimate")?.0)?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// STOI of mono `estimate` against mono `reference`.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn attnbeam_stoi(
    reference: *const AttnbeamSignal,
    estimate: *const AttnbeamSignal,
    out: *mut f64,
) -> AttnbeamStatus {
    guard(|| {
        let v = stoi(&deref(reference, "reference")?.0, &deref(estimate, "estimate")?.0)?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}
