//! Segment-length-configurable neural audio fingerprinting.
//!
//! The pipeline runs audio ingestion ([`audio`]), sliding-window
//! segmentation ([`segmentation`]), log-mel features ([`features`]), the
//! fingerprint [`encoder`], contrastive [`training`], an exhaustive
//! fingerprint index ([`db`]), offset-aware vote aggregation ([`query`]) and
//! the hit-rate evaluation harness ([`eval`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audio;
pub mod db;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod matrix;
pub mod query;
pub mod segmentation;
pub mod training;

pub use audio::{AudioClip, CANONICAL_RATE};
pub use encoder::{EncoderConfig, EncoderWeights, Fingerprint};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureExtractor, MelSpectrogram};
pub use matrix::Matrix;
pub use segmentation::{Segment, SegmentationParams};
