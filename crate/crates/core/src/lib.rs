//! Low-complexity acoustic scene classification: audio decoding, log-mel
//! features, data augmentation, a two-pathway attention network with manual
//! backpropagation, training, 16-bit weight truncation and evaluation.

pub mod augment;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod nn;
pub mod quantize;
pub mod synth;
pub mod train;
