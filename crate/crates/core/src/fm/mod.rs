//! Constrained FM synthesis: fixed routing, fixed ratios, frame-rate output
//! levels as the only time-varying controls.

mod bessel;
mod config;
pub mod patches;
mod render;

pub use bessel::{bessel_j, sideband_spectrum, MONOTONIC_INDEX_LIMIT};
pub use config::{FmConfig, Oscillator, Ratio, MAX_OSCILLATORS};
pub use render::{render, render_on, EnvelopeFrames, RenderSpec, FRAME_RATE, HOP, SAMPLE_RATE};
