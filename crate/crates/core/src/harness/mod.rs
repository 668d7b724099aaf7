//! Orchestration: configuration, training, evaluation, persistence and
//! gradient checking.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod train;

pub use checkpoint::{checkpoint_dtype, Checkpoint};
pub use config::{ExtractorKind, TrainConfig};
pub use eval::{
    baseline_crossfade, evaluate_clips, evaluate_crossfade, evaluate_generator, sample_multimodal,
    EvalReport, Generator, MultimodalSamples,
};
pub use gradcheck::GradCheck;
pub use train::{Extractor, TrainEvent, Trainer};
