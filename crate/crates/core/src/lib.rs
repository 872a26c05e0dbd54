//! Local feature masking for convolutional networks.
//!
//! The crate bundles the masking regularizer and its baselines, a small
//! residual CNN with hand-written forward/backward passes, a synthetic
//! re-identification dataset, CMC/mAP retrieval metrics, a transfer-attack
//! harness and an experiment runner.

pub mod attack;
pub mod data;
pub mod error;
pub mod experiment;
pub mod masking;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use masking::{FeatureBlock, LfmConfig, MaskDecision, MaskRect};
pub use rng::RngStream;
pub use scalar::Scalar;
