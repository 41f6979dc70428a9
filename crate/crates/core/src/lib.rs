//! Multimodal trajectory prediction on synthetic driving scenes.
//!
//! Scenes are canonicalized around the target agent, encoded with stacked
//! multi-context-gating blocks and decoded into six Gaussian-mixture
//! trajectories, either by a single decoder or by a decoder bank whose 30
//! intermediate modes are fused back to six. Training minimizes the mixture
//! NLL with history masking; evaluation applies NMS and reports
//! minADE/minFDE/miss rate/mAP/Soft mAP per agent type and horizon.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod augment;
pub mod autodiff;
mod binio;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod postprocess;
pub mod predictor;
pub mod scalar;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Scene32 = scene::Scene<f32>;
pub type Scene64 = scene::Scene<f64>;
pub type ModeSet32 = predictor::ModeSet<f32>;
pub type ModeSet64 = predictor::ModeSet<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Matrix32 = tensor::Matrix<f32>;
pub type Matrix64 = tensor::Matrix<f64>;
pub type EvalRecord64 = metrics::EvalRecord<f64>;
