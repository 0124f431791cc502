//! Training, evaluation, statistics and FLOPs accounting.

pub mod config;
pub mod eval;
pub mod flops;
pub mod metrics;
pub mod stats;
pub mod train;

pub use eval::{evaluate, segment_clips, subgroup_analysis, EvalReport, Segment, SubgroupAnalysis};
pub use flops::{compute_flops, FlopsReport};
pub use metrics::{metrics, Metrics};
pub use stats::{null_calibration, permutation_test, PermutationTestResult};
pub use train::{train, TrainConfig, TrainLog};
