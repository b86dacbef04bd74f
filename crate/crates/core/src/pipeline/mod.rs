//! Data ingestion, training, and held-out evaluation.

pub mod dataset;
pub mod evaluate;
pub mod synth;
pub mod train;

pub use dataset::{ingest_dataset, load_split, prepare_eval_image, DatasetEntry, DatasetManifest, SkipReport, Split};
pub use evaluate::{evaluate, EvalMode, EvalSummary};
pub use synth::{synth_image, write_synthetic_dataset, SynthConfig};
pub use train::{load_train_config, train, train_from_manifest, StepLog, TrainConfig, TrainOptions, TrainOutcome, FINAL_CHECKPOINT};
