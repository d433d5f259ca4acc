//! Training loop, metrics, leave-one-subject-out runs, configuration and reports.

mod config;
mod features;
mod loso;
mod metrics;
mod report;
mod train;

pub use config::{desk_synth, DataSource, ExperimentConfig, Profile, SearchConfig};
pub use features::{branch_channels, FeatureSet, InputLayout, SampleRef, Split, Standardizer, SubjectFeatures};
pub use loso::{fit, inner_split, run_fold, run_loso, run_loso_on, run_loso_recordings, search_branch, AssemblyLog, FoldResult, Fitted};
pub use metrics::{macro_recall, mean_std, subject_accuracy, ConfusionMatrix};
pub use report::{grid_markdown, parse_csv, ReportFormat, ReportRow, ReportTable, CSV_HEADER};
pub use train::{evaluate, train, EpochLog, History};
