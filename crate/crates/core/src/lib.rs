//! Active-learning experiment engine for visit-structured synthetic
//! cohorts.
//!
//! The pipeline: generate a cohort whose per-visit data is a
//! class-conditional function of the previous visit, split it by eye,
//! then run pool-based active learning under an acquisition-visibility
//! policy (retrospective, prospective, or a non-sequential ablation) with
//! one of six batch query strategies, recording accuracy on a fixed and a
//! growing per-visit test set, negative flip rates, and the fraction of
//! training data drawn from future visits.

pub mod acquisition;
pub mod al_loop;
pub mod classifier;
pub mod cohort;
pub mod config;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod runner;

pub use acquisition::{SelectionOutcome, SelectionRequest, StrategyKind};
pub use al_loop::{
    run_experiment, EvalContext, ExperimentSetup, PoolState, ReplicateResult, ScheduleConfig,
    VisibilityPolicy,
};
pub use classifier::{ClassifierConfig, ClassifierState, ProbMatrix, TrainOutcome};
pub use cohort::{Cohort, CohortConfig, EyeSplit, InterventionMap, Sample, SampleId};
pub use config::{parse_config, serialize_config, validate_config, ConfigError, ExperimentConfig};
pub use matrix::Matrix;
pub use metrics::{DynamicTestSet, FixedTestSet, PolicyKind, RoundRecord};
pub use runner::{run_matrix, MatrixSummary, RunnerError};
