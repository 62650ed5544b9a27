//! Visual saliency from block-wise Kalman estimation of an "expected image".
//!
//! A colour image is split into feature channels. For every channel a 7-state
//! Kalman filter walks the image block by block in random order, learning a
//! linear model that predicts each block's mean intensity from seven local
//! statistics. The prediction formed *before* a block is observed is the
//! expected image; the pointwise absolute difference between the channel and
//! its expectation is the channel's surprise (saliency) map.
//!
//! The crate also carries the fixation-prediction metrics used to score the
//! maps (AUC-Judd, AUC-Borji, CC, SIM, NSS), a dataset indexer and the batch
//! harness behind the `kalsal` binary.

pub mod channels;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod kalman;
pub mod localstats;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, Result};
pub use imaging::{RgbImage, ScalarField};
