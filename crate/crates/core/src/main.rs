use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use attnbeam::attention::{ProjectorWeights, PROJECTOR_DIMS};
use attnbeam::dsp::TimeSignal;
use attnbeam::harness::binfmt::{read_features, read_projector, write_attention};
use attnbeam::harness::experiment::{synthesize, ATTENTION_DIR};
use attnbeam::harness::{export_report, load_wav, parse_scene_config, run_experiment, save_wav, Corpus, Experiment};
use attnbeam::masks::MaskMode;
use attnbeam::metrics::{si_snr, stoi};
use attnbeam::pipeline::{enhance, EnhanceConfig, Mode};
use attnbeam::room::{simulate_rir, Scene};
use attnbeam::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Oracle-mask beamforming experiments for small microphone arrays.
#[derive(Debug, Parser)]
#[command(name = "attnbeam", version)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene to a multichannel mixture and its clean target image.
    Simulate {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        corpora: CorpusArgs,
        /// Output directory for mixture.wav and clean.wav.
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance a mixture using oracle masks from its clean target image.
    Enhance {
        #[arg(long)]
        mixture: PathBuf,
        /// Clean target image with the same channels as the mixture.
        #[arg(long)]
        clean: PathBuf,
        #[command(flatten)]
        enhance: EnhanceArgs,
        /// Query/key feature file for mvdr-tv-featfile.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output WAV (mono).
        #[arg(long)]
        out: PathBuf,
        /// Write speech.attn and noise.attn here for time-varying modes.
        #[arg(long)]
        attention_dir: Option<PathBuf>,
    },
    /// Score an estimate against a clean reference.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// Reference channel used when the reference is multichannel.
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
    /// Write the room impulse responses from the target start position.
    Rir {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a batch of seeded scenes through several modes.
    Report {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        corpora: CorpusArgs,
        #[command(flatten)]
        enhance: EnhanceArgs,
        /// Number of scenes; scene i uses seed `--seed + i`.
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_value = "passthrough,mvdr-batch,mvdr-tv-iscmqk")]
        modes: Vec<Mode>,
        /// Directory of scene_NNNN.feat files for mvdr-tv-featfile.
        #[arg(long)]
        features_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Skip writing enhanced audio.
        #[arg(long)]
        no_audio: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SceneArgs {
    /// Scene configuration file; flags below add keys to it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    moving: bool,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    rt60: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sir_db: Option<f64>,
    #[arg(long)]
    free_sir: bool,
    #[arg(long)]
    interferers: Option<usize>,
}

impl SceneArgs {
    fn config_text(&self) -> Result<String, Error> {
        let mut text = match &self.config {
            Some(p) => fs::read_to_string(p)?,
            None => String::new(),
        };
        // Flag keys go first so config line numbers shift predictably.
        let mut flags = String::new();
        if self.moving {
            flags.push_str("moving = true\n");
        }
        if self.free_sir {
            flags.push_str("free_sir = true\n");
        }
        for (k, v) in [
            ("duration", self.duration),
            ("rt60", self.rt60),
            ("sir_db", self.sir_db),
            ("interferers", self.interferers.map(|n| n as f64)),
        ] {
            if let Some(v) = v {
                flags.push_str(&format!("{k} = {v}\n"));
            }
        }
        if !flags.is_empty() {
            flags.push('\n');
            text.insert_str(0, &flags);
        }
        Ok(text)
    }

    fn scene(&self, seed: u64) -> Result<Scene, Error> {
        parse_scene_config(&self.config_text()?, seed)
    }
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Directory of mono 16 kHz target speech; synthetic if omitted.
    #[arg(long)]
    speech_dir: Option<PathBuf>,
    /// Directory of mono 16 kHz interferer signals; synthetic if omitted.
    #[arg(long)]
    noise_dir: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self) -> Result<(Corpus, Corpus), Error> {
        let load = |d: &Option<PathBuf>| d.as_ref().map_or(Ok(Corpus::synthetic()), Corpus::load_dir);
        Ok((load(&self.speech_dir)?, load(&self.noise_dir)?))
    }
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    #[arg(long, default_value = "mvdr-batch")]
    mode: Mode,
    #[arg(long, default_value = "wlm")]
    mask: MaskMode,
    #[arg(long, default_value_t = 0)]
    ref_channel: usize,
    #[arg(long, default_value_t = attnbeam::beamformer::DEFAULT_LOADING)]
    diag_loading: f64,
    /// Use the speech attention matrix for the noise SCMs as well.
    #[arg(long)]
    shared_attention: bool,
    /// Projector weights file applied to query/key features.
    #[arg(long, conflicts_with = "projector_seed")]
    projector: Option<PathBuf>,
    /// Seeded random projector (input width taken from the features).
    #[arg(long)]
    projector_seed: Option<u64>,
}

impl EnhanceArgs {
    fn config(&self) -> Result<EnhanceConfig, Error> {
        let mut cfg = EnhanceConfig::with_mode(self.mode);
        cfg.mask_mode = self.mask;
        cfg.ref_channel = self.ref_channel;
        cfg.diag_loading = self.diag_loading;
        cfg.separate_noise_attention = !self.shared_attention;
        if let Some(p) = &self.projector {
            cfg.projector = Some(read_projector(p)?);
        }
        Ok(cfg)
    }

    fn seeded_projector(&self, d_in: usize) -> Option<ProjectorWeights> {
        self.projector_seed
            .map(|s| ProjectorWeights::seeded([d_in, PROJECTOR_DIMS[1], PROJECTOR_DIMS[2]], s))
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn check_featfile(mode: Mode, has_features: bool) -> Result<(), Failure> {
    match (mode == Mode::MvdrTvFeatFile, has_features) {
        (true, false) => Err(usage("--mode mvdr-tv-featfile requires feature input")),
        (false, true) => Err(usage("feature input is only used by --mode mvdr-tv-featfile")),
        _ => Ok(()),
    }
}

fn create_parent(path: &Path) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { scene, corpora, out } => {
            let scene = scene.scene(scene.seed)?;
            let (speech, noise) = corpora.load()?;
            let mix = synthesize(&scene, &speech, &noise)?;
            fs::create_dir_all(&out).map_err(Error::from)?;
            save_wav(out.join("mixture.wav"), &mix.mixture)?;
            save_wav(out.join("clean.wav"), &mix.clean)?;
            info!("sensor SNR per channel: {:?}", mix.sensor_snr_db);
        }
        Command::Enhance {
            mixture,
            clean,
            enhance: args,
            features,
            out,
            attention_dir,
        } => {
            check_featfile(args.mode, features.is_some())?;
            let mut cfg = args.config()?;
            let y = load_wav(&mixture)?;
            let s = load_wav(&clean)?;
            if let Some(p) = &features {
                cfg.features = Some(read_features(p)?);
            }
            if cfg.projector.is_none() {
                let d_in = match &cfg.features {
                    Some(f) => f.dim(),
                    None => y.channels() * (y.channels() + 1),
                };
                cfg.projector = args.seeded_projector(d_in);
            }
            let e = enhance(&y, &s, &cfg)?;
            create_parent(&out)?;
            save_wav(&out, &e.output)?;
            if let Some(dir) = attention_dir {
                fs::create_dir_all(&dir).map_err(Error::from)?;
                if let (Some(ax), Some(an)) = (&e.speech_attention, &e.noise_attention) {
                    write_attention(dir.join("speech.attn"), ax)?;
                    write_attention(dir.join("noise.attn"), an)?;
                }
            }
            if !e.flagged_bins.is_empty() {
                log::warn!("{} bins fell back to the reference channel", e.flagged_bins.len());
            }
        }
        Command::Eval {
            reference,
            estimate,
            channel,
        } => {
            let r = load_wav(&reference)?;
            let e = load_wav(&estimate)?;
            if channel >= r.channels() {
                return Err(usage(format!("--channel {channel} but the reference has {} channels", r.channels())));
            }
            let r = r.select(channel);
            let e: TimeSignal = if e.channels() == 1 { e } else { e.select(channel) };
            println!("si_snr_db,stoi");
            println!("{},{}", si_snr(&r, &e)?, stoi(&r, &e)?);
        }
        Command::Rir { scene, out } => {
            let scene = scene.scene(scene.seed)?;
            let rir = simulate_rir(&scene.room, &scene.target.start, &scene.array)?;
            create_parent(&out)?;
            save_wav(&out, &TimeSignal::new(rir.taps)?)?;
        }
        Command::Report {
            scene,
            corpora,
            enhance: args,
            scenes,
            modes,
            features_dir,
            jobs,
            no_audio,
            out,
        } => {
            if modes.is_empty() {
                return Err(usage("--modes is empty"));
            }
            check_featfile(
                if modes.contains(&Mode::MvdrTvFeatFile) { Mode::MvdrTvFeatFile } else { Mode::MvdrBatch },
                features_dir.is_some(),
            )?;
            if args.projector_seed.is_some() {
                return Err(usage("--projector-seed is not supported by report; pass --projector"));
            }
            let list = (0..scenes as u64)
                .map(|i| scene.scene(scene.seed.wrapping_add(i)))
                .collect::<Result<Vec<_>, _>>()?;
            let (speech, noise) = corpora.load()?;
            let mut exp = Experiment::new(list, modes);
            exp.speech = speech;
            exp.noise = noise;
            exp.base = args.config()?;
            exp.features_dir = features_dir;
            exp.jobs = jobs;
            let audio = (!no_audio).then(|| out.join("audio"));
            let report = run_experiment(&exp, audio.as_deref())?;
            export_report(&report, &out)?;
            info!(
                "{} rows, {} failed scenes, attention dumps in {}",
                report.rows.len(),
                report.failures.len(),
                out.join(ATTENTION_DIR).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
