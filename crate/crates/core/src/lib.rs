//! Encoder-decoder segmentation networks with layer-group freezing.

pub mod archive;
pub mod data;
pub mod freeze;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod training;
