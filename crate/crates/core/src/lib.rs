//! Differentiable FM resynthesis.
//!
//! Audio is rendered through a fixed-routing, fixed-ratio FM oscillator graph
//! whose per-frame output levels come from a causal temporal convolutional
//! decoder conditioned on pitch and loudness. Everything between the decoder
//! weights and the multi-scale spectral loss runs on the in-crate
//! reverse-mode [`autodiff`] engine.

pub mod autodiff;
pub mod cli;
pub mod container;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fm;
pub mod model;
pub mod reverb;
pub mod seed;
pub mod spectral;
pub mod tcn;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
