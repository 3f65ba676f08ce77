use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{finalize, quantize, CorpusManifest, Instrument, PendingClip, Preprocessing, Truth, CLIP_FRAMES};
use crate::error::Result;
use crate::features::FeatureTrack;
use crate::fm::{render, EnvelopeFrames, FmConfig, RenderSpec};
use crate::seed::derive_seed;

/// Modulator ceiling for generated envelopes; the smallest swept `i_max`, so
/// every clip stays renderable under all of them.
const SYNTH_MAX_INDEX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticClip {
    pub audio: Vec<f64>,
    pub truth: Truth,
}

fn piecewise_linear(rng: &mut ChaCha8Rng, frames: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut knots = vec![(0usize, rng.random_range(lo..=hi))];
    while knots.last().unwrap().0 < frames - 1 {
        let next = (knots.last().unwrap().0 + rng.random_range(50..=250)).min(frames - 1);
        knots.push((next, rng.random_range(lo..=hi)));
    }
    let mut out = Vec::with_capacity(frames);
    for w in knots.windows(2) {
        let ((t0, v0), (t1, v1)) = (w[0], w[1]);
        for t in t0..t1 {
            out.push(v0 + (v1 - v0) * (t - t0) as f64 / (t1 - t0) as f64);
        }
    }
    out.push(knots.last().unwrap().1);
    out
}

/// One 4 s clip: piecewise-constant f0 in [200, 600] Hz (segments of 100 to
/// 400 frames) and one piecewise-linear dynamics curve `d(t)` in [0, 1] that
/// drives every oscillator. Each oscillator draws a depth `g` in [0.5, 1];
/// carriers play `0.2 + 0.8 · g · d(t)` and modulators `2 · g · d(t)`, so
/// brightness follows loudness. Audio is rounded through `f32` like cached
/// clips.
pub fn synth_clip(config: &FmConfig, seed: u64) -> Result<SyntheticClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f0 = Vec::with_capacity(CLIP_FRAMES);
    while f0.len() < CLIP_FRAMES {
        let hz = rng.random_range(200.0..=600.0);
        let len = rng.random_range(100..=400).min(CLIP_FRAMES - f0.len());
        f0.extend(std::iter::repeat_n(hz, len));
    }
    let dynamics = piecewise_linear(&mut rng, CLIP_FRAMES, 0.0, 1.0);
    let n = config.len();
    let depth: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..=1.0)).collect();
    let level = |k: usize, d: f64| {
        if config.is_carrier(k) { 0.2 + 0.8 * depth[k] * d } else { SYNTH_MAX_INDEX * depth[k] * d }
    };
    let levels = dynamics.iter().flat_map(|&d| (0..n).map(move |k| level(k, d))).collect();
    let envelopes = EnvelopeFrames::new(CLIP_FRAMES, n, levels)?;
    let audio = quantize(&render(config, &envelopes, &RenderSpec::new(f0.clone(), SYNTH_MAX_INDEX))?);
    Ok(SyntheticClip { audio, truth: Truth { envelopes, f0_hz: f0 } })
}

/// Writes `n_clips` synthetic clips rendered from `config` to `out`, with
/// their generating envelopes and f0 stored as ground truth.
pub fn synth_corpus(config: &FmConfig, n_clips: usize, seed: u64, out: &Path) -> Result<CorpusManifest> {
    let clips: Vec<PendingClip> = (0..n_clips)
        .into_par_iter()
        .map(|i| {
            let clip = synth_clip(config, derive_seed(&[seed, i as u64]))?;
            let features = FeatureTrack::extract(&clip.audio)?;
            Ok(PendingClip {
                id: format!("synth-{i:04}"),
                source_file: format!("synthetic:{}", config.name()),
                audio: clip.audio,
                features,
                truth: Some(clip.truth),
            })
        })
        .collect::<Result<_>>()?;
    finalize(out, Instrument::Synthetic, seed, Preprocessing::for_instrument(Instrument::Synthetic), clips)
}
