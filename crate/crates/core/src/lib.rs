//! Noise-adaptive regularization for multi-label classification.
//!
//! The crate covers the whole pipeline of a label-noise study on synthetic
//! multi-label data: controlled noise injection ([`noise`]), the three-state
//! confidence-based label handler ([`handler`]), the BCE / ELR-ML /
//! confidence-weighted losses ([`losses`]), a small feed-forward classifier
//! trained with AdamW ([`trainer`]), macro mAP ([`metrics`]) and the
//! experiment drivers that emit CSV tables ([`harness`]).
//!
//! Data-parallel loops go through [`exec::Exec`]; with the default
//! `parallel` feature they run on rayon, and results are bit-identical to the
//! sequential path.

pub mod dataset;
pub mod error;
pub mod exec;
pub mod handler;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod noise;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
