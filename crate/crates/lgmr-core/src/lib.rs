//! Local-Global Multimodal Reasoner (LGMR) for multi-paragraph temporal
//! grounding: given a long video feature sequence and N paragraph-query token
//! sequences, predict N temporal intervals.
//!
//! The crate covers the full pipeline at desk scale: feature ingestion and
//! fusion, the windowed local-global encoder, the iterative local-global
//! decoder with interval heads, localization/attention training losses,
//! evaluation metrics, an analytic encoder FLOPs estimator, a synthetic
//! planted-correspondence benchmark, and a deterministic trainer with
//! checkpointing and finite-difference gradient verification.

pub mod annotation;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod featfile;
pub mod fusion;
pub mod flops;
pub mod interval;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod sample;
pub mod synthetic;
pub mod trainer;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use interval::{CenterWidth, Interval, NormalizedInterval};
pub use sample::{AttentionMaskMatrix, ParagraphTokenFeatures, SynopsisSample, VideoFeatureSequence};
