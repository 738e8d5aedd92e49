//! Heatmap goal predictor.
//!
//! A fully connected tanh network maps the flattened sample features to
//! `l·w` logits; a softmax turns them into a [`Heatmap`] over a fixed metric
//! grid. Parameters live in one flat [`ParamVector`] so that EMA averaging,
//! gradient projection and cosine scoring all operate on plain vectors.

mod heatmap;
mod loss;
mod params;
mod predictor;
mod sample;

pub use heatmap::{GridSpec, Heatmap};
pub use loss::{focal_loss, kl_divergence, splat_target};
pub use params::{sgd_step, ParamVector};
pub use predictor::{LossSpec, LossTerm, Objective, Predictor, PredictorConfig, SampleGradient, TermLoss};
pub use sample::Sample;
