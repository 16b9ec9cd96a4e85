//! Experiment plumbing: configuration, metrics, model files, verification
//! and the pipeline stages driven by the command-line tool.

pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod serialize;
pub mod verify;

pub use config::{ExperimentConfig, FlowConfig, Oracle};
pub use metrics::{abs_cosine, covariance_trace, fit_line_direction, quantile, zeta, Summary};
pub use pipeline::{InversionRequest, Layout, Stage};
pub use serialize::InVAErtModel;
pub use verify::{verify_inversion, InterrogationReport, Verifier};
