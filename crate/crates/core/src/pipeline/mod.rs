//! Dataset preparation, evaluation and stage orchestration.

pub mod labeling;
pub mod metrics;
pub mod run;
pub mod split;
pub mod stages;
pub mod synth;

pub use labeling::{filter_and_label, LabelingConfig};
pub use metrics::{evaluate, EvalReport};
pub use run::{run_pipeline, PipelineConfig, RunOptions, RunSummary, Stage, StageStatus};
pub use split::{split_and_balance, SplitPlan};
pub use synth::{write_synthetic_captures, SynthConfig};
