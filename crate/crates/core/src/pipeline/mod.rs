//! End-to-end driver: resolved configuration, stage orchestration with
//! on-disk artifacts, and the unlabeled-fraction ablation.

mod ablation;
mod config;
mod run;

pub use ablation::{run_ablation_unlabeled, AblationRow, AblationTrial};
pub use config::{
    DataSource, EarlyStopConfig, Mode, OmegaSweepConfig, PipelineConfig, Preset, StageSeeds,
};
pub use run::{Manifest, ManifestEntry, RunSummary, Runner, Stage};
