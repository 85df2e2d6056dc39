//! Optimization, augmentation, synthetic data, metrics and the training loop.

pub mod augment;
pub mod metrics;
pub mod optim;
pub mod synthetic;
mod trainer;

pub use augment::{augment, AugmentSettings};
pub use metrics::{eigen_metrics, spearman, DepthMetrics, EvalSettings};
pub use optim::{cosine_lr, AdamW, DEFAULT_BASE_LR};
pub use synthetic::{Image, RenderedTriplet, SceneSettings, SyntheticScene};
pub use trainer::{evaluate, stack_images, train, train_from_scratch, trace_to_csv, objective, Dataset, EvalReport, Sample, TraceRow, TrainConfig, TrainOutcome};
