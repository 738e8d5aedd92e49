//! Online task-free continual learning for goal-position forecasting.
//!
//! The crate is organised around a single stream of [`Sample`]s that arrive
//! task after task with no task identifiers visible to the learners:
//!
//! - [`model`]: a small fully connected heatmap predictor with focal and KL
//!   losses and analytic gradients over a flat [`ParamVector`].
//! - [`buffers`]: the reservoir buffer, the gradient-diversity buffer and
//!   joint replay sampling.
//! - [`trainer`]: the dual-buffer learner with working/fast/slow models and
//!   the Vanilla, DER, GSS and A-GEM baselines, plus the stream harness.
//! - [`stream`]: synthetic domain-incremental task generation and CSV
//!   ingestion of trajectory tables.
//! - [`metrics`]: FDE, miss rate, error matrices and backward transfer.
//! - [`stats`]: the handful of hypothesis tests used by the benchmark suite.

pub mod audit;
pub mod buffers;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod stats;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{GridSpec, Heatmap, ParamVector, Predictor, PredictorConfig, Sample};
