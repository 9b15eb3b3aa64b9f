//! File formats, scene configuration, test signals and the batch
//! experiment runner behind the command-line tool.

pub mod binfmt;
pub mod config;
pub mod experiment;
pub mod synth;
pub mod wav;

pub use config::parse_scene_config;
pub use experiment::{export_report, run_experiment, Corpus, Experiment, ExperimentReport, ReportRow};
pub use wav::{load_wav, save_wav};
