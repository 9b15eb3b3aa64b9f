//! Oracle-mask enhancement: masks, SCMs, attention, beamformer, synthesis.

use std::fmt;
use std::str::FromStr;

use crate::attention::{attention_weights, iscm_features, project_features, AttentionMatrix, FeatureMatrix, ProjectorWeights};
use crate::beamformer::{apply_gain, apply_weights, ban_gain, gev_weights, mvdr_weights, BeamWeights, DEFAULT_LOADING};
use crate::dsp::{istft, stft, Spectrogram, StftConfig, TimeSignal};
use crate::error::{shape_err, Error, Result};
use crate::masks::{oracle_mask, MaskMode, TfMask};
use crate::scm::{attend_scm, batch_from_iscm, compute_iscm, IscmSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Reference channel through the STFT round trip.
    Passthrough,
    /// Time-invariant mask-weighted SCMs, MVDR weights broadcast over frames.
    MvdrBatch,
    /// Time-varying SCMs with uniform attention.
    MvdrTvUniform,
    /// Time-varying SCMs; attention queries and keys are ISCM features.
    MvdrTvIscmQk,
    /// Time-varying SCMs; attention from externally supplied features.
    MvdrTvFeatFile,
    /// Generalized-eigenvector beamformer with BAN postfilter.
    GevBan,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Passthrough,
        Mode::MvdrBatch,
        Mode::MvdrTvUniform,
        Mode::MvdrTvIscmQk,
        Mode::MvdrTvFeatFile,
        Mode::GevBan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Passthrough => "passthrough",
            Mode::MvdrBatch => "mvdr-batch",
            Mode::MvdrTvUniform => "mvdr-tv-uniform",
            Mode::MvdrTvIscmQk => "mvdr-tv-iscmqk",
            Mode::MvdrTvFeatFile => "mvdr-tv-featfile",
            Mode::GevBan => "gev-ban",
        }
    }

    pub fn is_time_varying(self) -> bool {
        matches!(self, Mode::MvdrTvUniform | Mode::MvdrTvIscmQk | Mode::MvdrTvFeatFile)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidValue {
                what: "mode",
                reason: format!(
                    "unknown mode {s:?}, expected one of {}",
                    Mode::ALL.map(Mode::name).join(", ")
                ),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceConfig {
    pub mode: Mode,
    pub mask_mode: MaskMode,
    pub ref_channel: usize,
    pub diag_loading: f64,
    /// Noise SCMs get their own attention matrix when the mode derives one
    /// from ISCMs; otherwise the speech matrix is shared.
    pub separate_noise_attention: bool,
    /// Query/key features for [`Mode::MvdrTvFeatFile`]; required there and
    /// rejected elsewhere.
    pub features: Option<FeatureMatrix>,
    /// Optional projector applied to query/key features before attention.
    pub projector: Option<ProjectorWeights>,
    pub stft: StftConfig,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            mode: Mode::MvdrBatch,
            mask_mode: MaskMode::Wlm,
            ref_channel: 0,
            diag_loading: DEFAULT_LOADING,
            separate_noise_attention: true,
            features: None,
            projector: None,
            stft: StftConfig::default(),
        }
    }
}

impl EnhanceConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, &self.features) {
            (Mode::MvdrTvFeatFile, None) => Err(Error::InvalidValue {
                what: "features",
                reason: "mode mvdr-tv-featfile needs a feature file".into(),
            }),
            (m, Some(_)) if m != Mode::MvdrTvFeatFile => Err(Error::InvalidValue {
                what: "features",
                reason: format!("a feature file is only used by mvdr-tv-featfile, not {m}"),
            }),
            _ if !(self.diag_loading >= 0.0) => Err(Error::InvalidValue {
                what: "diag_loading",
                reason: format!("{} must be non-negative", self.diag_loading),
            }),
            _ => self.stft.validate(),
        }
    }
}

/// Enhanced signal and the intermediate quantities worth inspecting.
#[derive(Debug, Clone)]
pub struct Enhanced {
    /// Mono, same length as the input mixture.
    pub output: TimeSignal,
    pub speech_mask: TfMask,
    pub noise_mask: TfMask,
    pub speech_attention: Option<AttentionMatrix>,
    /// Equal to `speech_attention` when the streams share one matrix.
    pub noise_attention: Option<AttentionMatrix>,
    /// `(frame, bin)` pairs whose beamformer fell back to the reference.
    pub flagged_bins: Vec<(usize, usize)>,
    /// Bins with a zero mask sum in the batch SCM estimate.
    pub empty_mask_bins: Vec<usize>,
}

fn features_attention(feats: &FeatureMatrix, projector: Option<&ProjectorWeights>) -> Result<AttentionMatrix> {
    match projector {
        Some(w) => {
            let p = project_features(feats, w)?;
            attention_weights(&p, &p)
        }
        None => attention_weights(feats, feats),
    }
}

fn stream_attention(
    cfg: &EnhanceConfig,
    psi_x: &IscmSeries,
    psi_n: &IscmSeries,
) -> Result<(AttentionMatrix, AttentionMatrix)> {
    let t = psi_x.frames();
    let proj = cfg.projector.as_ref();
    match cfg.mode {
        Mode::MvdrTvUniform => Ok((AttentionMatrix::uniform(t), AttentionMatrix::uniform(t))),
        Mode::MvdrTvIscmQk => {
            let ax = features_attention(&iscm_features(psi_x), proj)?;
            let an = if cfg.separate_noise_attention {
                features_attention(&iscm_features(psi_n), proj)?
            } else {
                ax.clone()
            };
            Ok((ax, an))
        }
        Mode::MvdrTvFeatFile => {
            let feats = cfg.features.as_ref().expect("validated");
            if feats.frames() != t {
                return Err(shape_err("feature frames", t, feats.frames()));
            }
            let a = features_attention(feats, proj)?;
            Ok((a.clone(), a))
        }
        _ => unreachable!("time-varying modes only"),
    }
}

/// Enhances the reference channel of `mixture` with oracle masks derived
/// from `clean` (the target image at every microphone).
pub fn enhance(mixture: &TimeSignal, clean: &TimeSignal, cfg: &EnhanceConfig) -> Result<Enhanced> {
    cfg.validate()?;
    if (mixture.channels(), mixture.len()) != (clean.channels(), clean.len()) {
        return Err(shape_err(
            "clean reference",
            (mixture.channels(), mixture.len()),
            (clean.channels(), clean.len()),
        ));
    }
    let r = cfg.ref_channel;
    if r >= mixture.channels() {
        return Err(Error::InvalidValue {
            what: "ref_channel",
            reason: format!("{r} >= {} channels", mixture.channels()),
        });
    }
    let y = stft(mixture, &cfg.stft)?;
    let s = stft(&clean.select(r), &cfg.stft)?;
    let mut n = y.select(r);
    n.values -= &s.values;
    let (speech_mask, noise_mask) = oracle_mask(&s, &n, cfg.mask_mode)?;

    let mut out = Enhanced {
        output: TimeSignal::zeros(1, 0),
        speech_mask,
        noise_mask,
        speech_attention: None,
        noise_attention: None,
        flagged_bins: Vec::new(),
        empty_mask_bins: Vec::new(),
    };
    let beamformed: Spectrogram = if cfg.mode == Mode::Passthrough {
        y.select(r)
    } else {
        let psi_x = compute_iscm(&y, &out.speech_mask)?;
        let psi_n = compute_iscm(&y, &out.noise_mask)?;
        let weights: BeamWeights;
        let mut gain = None;
        if cfg.mode.is_time_varying() {
            let (ax, an) = stream_attention(cfg, &psi_x, &psi_n)?;
            let phi_x = attend_scm(&psi_x, &ax)?;
            let phi_n = attend_scm(&psi_n, &an)?;
            weights = mvdr_weights(&phi_x, &phi_n, r, cfg.diag_loading)?;
            out.speech_attention = Some(ax);
            out.noise_attention = Some(an);
        } else {
            let bx = batch_from_iscm(&psi_x, &out.speech_mask.sum_over_frames());
            let bn = batch_from_iscm(&psi_n, &out.noise_mask.sum_over_frames());
            out.empty_mask_bins = bx.flagged_bins.clone();
            out.empty_mask_bins.extend(&bn.flagged_bins);
            out.empty_mask_bins.sort_unstable();
            out.empty_mask_bins.dedup();
            if cfg.mode == Mode::GevBan {
                weights = gev_weights(&bx.scm, &bn.scm, r)?;
                let mut g = ban_gain(&weights, &bn.scm)?;
                // Flagged bins pass the reference through unscaled.
                for &(frame, bin) in &weights.flagged {
                    g[[frame, bin]] = 1.0;
                }
                gain = Some(g);
            } else {
                weights = mvdr_weights(&bx.scm, &bn.scm, r, cfg.diag_loading)?;
            }
        }
        out.flagged_bins = weights.flagged.clone();
        let bf = apply_weights(&weights, &y)?;
        match gain {
            Some(g) => apply_gain(&bf, &g)?,
            None => bf,
        }
    };
    out.output = istft(&beamformed)?.resized(mixture.len());
    Ok(out)
}
