//! Batch experiments: synthesize scenes, enhance them in every requested
//! mode, score the results and export a report.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::binfmt::{read_features, write_attention};
use super::synth::speech_like;
use super::wav::{load_wav, save_wav};
use crate::attention::AttentionMatrix;
use crate::dsp::{stft, TimeSignal, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::metrics::{joint_loss, si_snr, stoi};
use crate::pipeline::{enhance, EnhanceConfig, Mode};
use crate::room::{mix_scene, Mixture, Scene};

/// Dry source material. An empty corpus yields seeded synthetic speech.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    signals: Vec<TimeSignal>,
}

impl Corpus {
    pub fn synthetic() -> Self {
        Self::default()
    }

    /// Every `*.wav` in `dir`, in file-name order. Files must be mono.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let mut signals = Vec::with_capacity(paths.len());
        for p in &paths {
            let s = load_wav(p)?;
            if s.channels() != 1 || s.is_empty() {
                return Err(Error::BadFile {
                    path: p.clone(),
                    msg: format!("corpus files must be mono and non-empty, found {} channels", s.channels()),
                });
            }
            signals.push(s);
        }
        if signals.is_empty() {
            return Err(Error::BadFile {
                path: dir.to_owned(),
                msg: "no .wav files".into(),
            });
        }
        Ok(Self { signals })
    }

    pub fn is_synthetic(&self) -> bool {
        self.signals.is_empty()
    }

    /// A `len`-sample excerpt chosen by `seed`, read cyclically from a
    /// corpus file so short files still fill the scene.
    pub fn draw(&self, seed: u64, len: usize) -> TimeSignal {
        if self.signals.is_empty() {
            return speech_like(seed, len);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = &self.signals[rng.gen_range(0..self.signals.len())];
        let x = src.channel(0);
        let start = rng.gen_range(0..x.len());
        let v = (0..len).map(|n| x[(start + n) % x.len()]).collect();
        TimeSignal::mono(v).expect("mono")
    }
}

fn source_seed(scene_seed: u64, source: u64) -> u64 {
    scene_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(source.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Renders the scene with dry signals drawn from the corpora; the target
/// is source 0 and interferer `k` is source `k + 1`.
pub fn synthesize(scene: &Scene, speech: &Corpus, noise: &Corpus) -> Result<Mixture> {
    let len = (scene.target.duration * SAMPLE_RATE as f64).round() as usize;
    let target = speech.draw(source_seed(scene.seed, 0), len);
    let interferers: Vec<TimeSignal> = (0..scene.interferers.len())
        .map(|k| noise.draw(source_seed(scene.seed, k as u64 + 1), len))
        .collect();
    mix_scene(scene, &target, &interferers)
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenes: Vec<Scene>,
    pub modes: Vec<Mode>,
    pub speech: Corpus,
    pub noise: Corpus,
    /// Shared settings; `mode` and `features` are set per run.
    pub base: EnhanceConfig,
    /// Directory of `scene_NNNN.feat` files for [`Mode::MvdrTvFeatFile`].
    pub features_dir: Option<PathBuf>,
    pub jobs: usize,
}

impl Experiment {
    pub fn new(scenes: Vec<Scene>, modes: Vec<Mode>) -> Self {
        Self {
            scenes,
            modes,
            speech: Corpus::synthetic(),
            noise: Corpus::synthetic(),
            base: EnhanceConfig::default(),
            features_dir: None,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scene: usize,
    pub seed: u64,
    pub mode: Mode,
    /// SIR of the first interferer; `inf` without interferers.
    pub sir_db: f64,
    pub moving: bool,
    pub rt60: f64,
    pub si_snr_in: f64,
    pub si_snr_out: f64,
    pub stoi_in: f64,
    pub stoi_out: f64,
    pub loss_mse: f64,
    pub loss_snr: f64,
    pub loss_total: f64,
    pub loss_literal: f64,
    pub flagged_bins: usize,
}

pub const REPORT_COLUMNS: [&str; 15] = [
    "scene",
    "seed",
    "mode",
    "sir_db",
    "condition",
    "rt60",
    "si_snr_in",
    "si_snr_out",
    "stoi_in",
    "stoi_out",
    "loss_mse",
    "loss_snr",
    "loss_total",
    "loss_literal",
    "flagged_bins",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Speech,
    Noise,
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Speech => "speech",
            Stream::Noise => "noise",
        })
    }
}

#[derive(Debug, Clone)]
pub struct AttentionDump {
    pub scene: usize,
    pub mode: Mode,
    pub stream: Stream,
    pub matrix: AttentionMatrix,
}

impl AttentionDump {
    pub fn file_name(&self) -> String {
        format!("scene_{:04}_{}_{}.attn", self.scene, self.mode, self.stream)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    /// Sorted by scene, then by the order modes were requested.
    pub rows: Vec<ReportRow>,
    pub attention: Vec<AttentionDump>,
    /// Scenes that failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

struct SceneResult {
    rows: Vec<ReportRow>,
    attention: Vec<AttentionDump>,
    audio: Vec<(String, TimeSignal)>,
}

fn run_scene(exp: &Experiment, id: usize, scene: &Scene) -> Result<SceneResult> {
    let mix = synthesize(scene, &exp.speech, &exp.noise)?;
    let r = exp.base.ref_channel;
    // Scores cover only the samples the analysis frames reconstruct.
    let framing = &exp.base.stft;
    let span = framing.coverage(framing.n_frames(mix.mixture.len()));
    let clean = mix.clean.select(r).resized(span);
    let noisy = mix.mixture.select(r).resized(span);
    let si_snr_in = si_snr(&clean, &noisy)?;
    let stoi_in = stoi(&clean, &noisy)?;
    let clean_spec = stft(&clean, framing)?;

    let mut out = SceneResult {
        rows: Vec::new(),
        attention: Vec::new(),
        audio: vec![(format!("scene_{id:04}_mixture.wav"), mix.mixture.clone())],
    };
    for &mode in &exp.modes {
        let mut cfg = exp.base.clone();
        cfg.mode = mode;
        cfg.features = match (mode, &exp.features_dir) {
            (Mode::MvdrTvFeatFile, Some(dir)) => Some(read_features(dir.join(format!("scene_{id:04}.feat")))?),
            _ => None,
        };
        let e = enhance(&mix.mixture, &mix.clean, &cfg)?;
        let est = e.output.resized(span);
        let loss = joint_loss(&clean_spec, &stft(&est, &cfg.stft)?, &clean, &est)?;
        out.rows.push(ReportRow {
            scene: id,
            seed: scene.seed,
            mode,
            sir_db: scene.sir_db.first().copied().unwrap_or(f64::INFINITY),
            moving: scene.is_moving(),
            rt60: scene.room.rt60,
            si_snr_in,
            si_snr_out: si_snr(&clean, &est)?,
            stoi_in,
            stoi_out: stoi(&clean, &est)?,
            loss_mse: loss.mse_term,
            loss_snr: loss.snr_term,
            loss_total: loss.total,
            loss_literal: loss.literal_ratio,
            flagged_bins: e.flagged_bins.len(),
        });
        for (stream, a) in [(Stream::Speech, e.speech_attention), (Stream::Noise, e.noise_attention)] {
            if let Some(matrix) = a {
                out.attention.push(AttentionDump {
                    scene: id,
                    mode,
                    stream,
                    matrix,
                });
            }
        }
        out.audio.push((format!("scene_{id:04}_{mode}.wav"), e.output));
    }
    Ok(out)
}

/// Runs every (scene, mode) pair. Scene failures are logged and skipped;
/// the call fails only when every scene fails. Enhanced audio goes to
/// `audio_dir` when given.
pub fn run_experiment(exp: &Experiment, audio_dir: Option<&Path>) -> Result<ExperimentReport> {
    if exp.modes.contains(&Mode::MvdrTvFeatFile) && exp.features_dir.is_none() {
        return Err(Error::InvalidValue {
            what: "features_dir",
            reason: "mode mvdr-tv-featfile needs a directory of per-scene feature files".into(),
        });
    }
    if let Some(dir) = audio_dir {
        fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exp.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidValue {
            what: "jobs",
            reason: e.to_string(),
        })?;
    let results: Vec<Result<SceneResult>> = pool.install(|| {
        exp.scenes
            .par_iter()
            .enumerate()
            .map(|(id, scene)| {
                let res = run_scene(exp, id, scene)?;
                if let Some(dir) = audio_dir {
                    for (name, sig) in &res.audio {
                        save_wav(dir.join(name), sig)?;
                    }
                }
                Ok(res)
            })
            .collect()
    });

    let mut report = ExperimentReport::default();
    for (id, res) in results.into_iter().enumerate() {
        match res {
            Ok(r) => {
                report.rows.extend(r.rows);
                report.attention.extend(r.attention);
            }
            Err(e) => {
                log::warn!("scene {id} skipped: {e}");
                report.failures.push((id, e.to_string()));
            }
        }
    }
    if report.rows.is_empty() && !exp.scenes.is_empty() {
        return Err(Error::InvalidValue {
            what: "experiment",
            reason: format!(
                "all {} scenes failed; first error: {}",
                exp.scenes.len(),
                report.failures.first().map_or("", |f| &f.1)
            ),
        });
    }
    Ok(report)
}

pub const REPORT_FILE: &str = "report.csv";
pub const ATTENTION_DIR: &str = "attention";

/// Writes `report.csv` and one attention dump per scene, mode and mask
/// stream under `attention/`.
pub fn export_report(report: &ExperimentReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out)?;
    write_report_csv(report, out.join(REPORT_FILE))?;
    if !report.attention.is_empty() {
        let dir = out.join(ATTENTION_DIR);
        fs::create_dir_all(&dir)?;
        for d in &report.attention {
            write_attention(dir.join(d.file_name()), &d.matrix)?;
        }
    }
    Ok(())
}

pub fn write_report_csv(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_COLUMNS)?;
    for r in &report.rows {
        w.write_record([
            r.scene.to_string(),
            r.seed.to_string(),
            r.mode.to_string(),
            r.sir_db.to_string(),
            if r.moving { "moving" } else { "static" }.to_string(),
            r.rt60.to_string(),
            r.si_snr_in.to_string(),
            r.si_snr_out.to_string(),
            r.stoi_in.to_string(),
            r.stoi_out.to_string(),
            r.loss_mse.to_string(),
            r.loss_snr.to_string(),
            r.loss_total.to_string(),
            r.loss_literal.to_string(),
            r.flagged_bins.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a report written by [`write_report_csv`].
pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path)?;
    let bad = |msg: String| Error::BadFile {
        path: path.to_owned(),
        msg,
    };
    let header = rd.headers()?.clone();
    if header.iter().ne(REPORT_COLUMNS) {
        return Err(bad(format!("unexpected header {:?}", header)));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or_default();
        let num = |k: usize| {
            f64::from_str(field(k)).map_err(|_| bad(format!("row {}: bad {} {:?}", i + 1, REPORT_COLUMNS[k], field(k))))
        };
        let int = |k: usize| {
            u64::from_str(field(k)).map_err(|_| bad(format!("row {}: bad {} {:?}", i + 1, REPORT_COLUMNS[k], field(k))))
        };
        rows.push(ReportRow {
            scene: int(0)? as usize,
            seed: int(1)?,
            mode: field(2).parse().map_err(|e: Error| bad(format!("row {}: {e}", i + 1)))?,
            sir_db: num(3)?,
            moving: match field(4) {
                "moving" => true,
                "static" => false,
                v => return Err(bad(format!("row {}: bad condition {v:?}", i + 1))),
            },
            rt60: num(5)?,
            si_snr_in: num(6)?,
            si_snr_out: num(7)?,
            stoi_in: num(8)?,
            stoi_out: num(9)?,
            loss_mse: num(10)?,
            loss_snr: num(11)?,
            loss_total: num(12)?,
            loss_literal: num(13)?,
            flagged_bins: int(14)? as usize,
        });
    }
    Ok(rows)
}
