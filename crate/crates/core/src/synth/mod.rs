//! Synthetic cities with planted structure, and the experiment harness that
//! runs the pipelines on them and scores the results.

pub mod experiment;
pub mod metrics;
pub mod world;

pub use experiment::{
    run_experiment, run_synthetic, source_feature_space, Dataset, ExperimentConfig,
    ExperimentReport, McNemarRow, Method, Pipeline,
};
pub use metrics::{metric_suite, split_train_test, MetricTable, Split, TestCase};
pub use world::{generate, SynthConfig, SynthUser, SynthVenue, World, CATALOGUE, ZONES};
