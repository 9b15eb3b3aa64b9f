//! Oracle time-frequency masks computed from the true target and noise
//! spectrograms, and mask application.

use std::str::FromStr;

use ndarray::{Array2, Axis, Zip};

use crate::dsp::Spectrogram;
use crate::error::{shape_err, Error, Result};

/// Real mask `[frame][bin]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMask {
    values: Array2<f64>,
}

impl TfMask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue {
                what: "mask",
                reason: format!("value {v} outside [0, 1]"),
            });
        }
        Ok(Self { values })
    }

    pub fn filled(frames: usize, bins: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((frames, bins), value))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    /// Per-bin sum over frames.
    pub fn sum_over_frames(&self) -> Vec<f64> {
        self.values.sum_axis(Axis(0)).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Wiener-like power ratio `|S|^2 / (|S|^2 + |N|^2)`.
    #[default]
    Wlm,
    /// Ideal ratio mask, the square root of the Wiener-like mask.
    Irm,
    /// Ideal binary mask `|S| > |N|`.
    Ibm,
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wlm" => Ok(Self::Wlm),
            "irm" => Ok(Self::Irm),
            "ibm" => Ok(Self::Ibm),
            _ => Err(Error::InvalidValue {
                what: "mask mode",
                reason: format!("unknown mode {s:?}, expected WLM, IRM or IBM"),
            }),
        }
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Wlm => "WLM",
            Self::Irm => "IRM",
            Self::Ibm => "IBM",
        })
    }
}

/// `wins_ties` breaks IBM ties so the binary pair still sums to one.
fn mask_value(mode: MaskMode, own: f64, other: f64, wins_ties: bool) -> f64 {
    let (p, q) = (own * own, other * other);
    if p + q == 0.0 {
        return 0.5;
    }
    match mode {
        MaskMode::Wlm => p / (p + q),
        MaskMode::Irm => (p / (p + q)).sqrt(),
        MaskMode::Ibm => {
            if own > other || (wins_ties && own == other) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Speech and noise masks from one-channel target and noise spectrograms.
///
/// The noise mask uses the same rule with the roles swapped; an IBM tie goes
/// to the noise mask. Bins where both spectrograms vanish get 0.5 in both.
pub fn oracle_mask(
    target: &Spectrogram,
    noise: &Spectrogram,
    mode: MaskMode,
) -> Result<(TfMask, TfMask)> {
    target.check_same_shape(noise, "oracle mask inputs")?;
    if target.channels() != 1 {
        return Err(shape_err("oracle mask channels", 1, target.channels()));
    }
    let s = target.values.index_axis(Axis(0), 0);
    let n = noise.values.index_axis(Axis(0), 0);
    let mut mx = Array2::zeros(s.dim());
    let mut mn = Array2::zeros(s.dim());
    Zip::from(&mut mx)
        .and(&mut mn)
        .and(&s)
        .and(&n)
        .for_each(|x, y, sv, nv| {
            let (a, b) = (sv.norm(), nv.norm());
            *x = mask_value(mode, a, b, false);
            *y = mask_value(mode, b, a, true);
        });
    Ok((TfMask { values: mx }, TfMask { values: mn }))
}

/// Scales every channel of `y` by the mask, bin by bin.
pub fn apply_mask(y: &Spectrogram, mask: &TfMask) -> Result<Spectrogram> {
    if (y.frames(), y.bins()) != mask.values.dim() {
        return Err(shape_err("mask", (y.frames(), y.bins()), mask.values.dim()));
    }
    let mut out = y.clone();
    for mut ch in out.values.outer_iter_mut() {
        Zip::from(&mut ch)
            .and(&mask.values)
            .for_each(|v, &m| *v *= m);
    }
    Ok(out)
}
