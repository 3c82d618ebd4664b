//! Configuration, evaluation metrics, experiments and the command line.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod pipeline;

pub use config::Config;
pub use experiments::{prepare_corpus, run_experiment_precise, run_experiment_quality, Corpus, EvalReport, ZeroPredictor};
pub use metrics::rmse_metrics;
