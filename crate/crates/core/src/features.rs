//! Frame-synchronous pitch and A-weighted loudness, and their normalization
//! into decoder conditioning.
//!
//! Frame `t` is centred on sample `t·hop`; its 1024-sample analysis window is
//! shifted to stay inside the signal near the edges. A signal of `L` samples
//! yields `L / hop` frames.

use std::path::Path;

use rustfft::num_complex::Complex64;

use crate::autodiff::Tensor;
use crate::container::Container;
use crate::dsp;
use crate::error::{Error, Result};
use crate::fm::{HOP, SAMPLE_RATE};
use crate::tcn::Conditioning;

pub const ANALYSIS_WINDOW: usize = 1024;
pub const EXTRACTOR_VERSION: u32 = 1;

const YIN_WINDOW: usize = 512;
const TAU_MIN: usize = 8;
const TAU_MAX: usize = 400;
const YIN_THRESHOLD: f64 = 0.1;
const VOICING_LIMIT: f64 = 0.5;
const SILENCE_ENERGY: f64 = 1e-10;

pub const LOUDNESS_FLOOR_DB: f64 = -80.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    pub f0_hz: Vec<f64>,
    pub confidence: Vec<f64>,
    pub loudness_db: Vec<f64>,
}

fn frame_count(len: usize, hop: usize) -> Result<usize> {
    if len == 0 {
        return Err(Error::domain("features", "empty audio"));
    }
    if hop == 0 {
        return Err(Error::domain("features", "hop must be positive"));
    }
    Ok(len / hop)
}

/// Copies the analysis window of frame `t`, zero-padding signals shorter than it.
fn frame(audio: &[f64], t: usize, hop: usize, out: &mut [f64]) {
    out.fill(0.0);
    let n = out.len();
    if audio.len() <= n {
        out[..audio.len()].copy_from_slice(audio);
        return;
    }
    let start = (t * hop).saturating_sub(n / 2).min(audio.len() - n);
    out.copy_from_slice(&audio[start..start + n]);
}

fn check_rate(sample_rate: u32) -> Result<()> {
    if sample_rate != SAMPLE_RATE {
        return Err(Error::domain("features", format!("sample rate {sample_rate}, expected {SAMPLE_RATE}")));
    }
    Ok(())
}

/// Cumulative mean normalized difference over lags `0..=TAU_MAX`.
fn cmndf(x: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; TAU_MAX + 1];
    for (tau, slot) in d.iter_mut().enumerate().skip(1) {
        *slot = x[..YIN_WINDOW].iter().zip(&x[tau..tau + YIN_WINDOW]).map(|(a, b)| (a - b) * (a - b)).sum();
    }
    let mut out = vec![1.0; TAU_MAX + 1];
    let mut running = 0.0;
    for tau in 1..=TAU_MAX {
        running += d[tau];
        out[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
    }
    out
}

/// YIN pitch estimate per frame.
///
/// Returns `(f0, confidence)`. Confidence is `1 − min CMNDF` over the lag
/// range, clamped to `[0, 1]`. Frames with (near) zero energy get confidence 0;
/// frames whose CMNDF minimum is at least 0.5 are marked unvoiced with f0 = 0.
pub fn estimate_f0(audio: &[f64], sample_rate: u32, hop: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_rate(sample_rate)?;
    let frames = frame_count(audio.len(), hop)?;
    let mut f0 = vec![0.0; frames];
    let mut conf = vec![0.0; frames];
    let mut buf = vec![0.0; ANALYSIS_WINDOW];
    for t in 0..frames {
        frame(audio, t, hop, &mut buf);
        if buf.iter().map(|v| v * v).sum::<f64>() < SILENCE_ENERGY {
            continue;
        }
        let c = cmndf(&buf);
        let range = TAU_MIN..=TAU_MAX;
        let tau = match range.clone().find(|&k| c[k] < YIN_THRESHOLD) {
            Some(mut k) => {
                while k < TAU_MAX && c[k + 1] < c[k] {
                    k += 1;
                }
                k
            }
            None => range.min_by(|&a, &b| c[a].total_cmp(&c[b])).expect("non-empty lag range"),
        };
        let floor = c[TAU_MIN..=TAU_MAX].iter().cloned().fold(f64::INFINITY, f64::min);
        conf[t] = (1.0 - floor).clamp(0.0, 1.0);
        if c[tau] >= VOICING_LIMIT {
            continue;
        }
        let refined = if tau > TAU_MIN && tau < TAU_MAX {
            let (a, b, z) = (c[tau - 1], c[tau], c[tau + 1]);
            let denom = a - 2.0 * b + z;
            if denom > 0.0 { tau as f64 + 0.5 * (a - z) / denom } else { tau as f64 }
        } else {
            tau as f64
        };
        f0[t] = (f64::from(sample_rate) / refined).clamp(40.0, 2000.0);
    }
    Ok((f0, conf))
}

/// A-weighting gain in dB at `freq` Hz (0 dB at 1 kHz).
pub fn a_weighting_db(freq: f64) -> f64 {
    let f2 = freq * freq;
    let c = [20.6f64.powi(2), 107.7f64.powi(2), 737.9f64.powi(2), 12194f64.powi(2)];
    let ra = c[3] * f2 * f2 / ((f2 + c[0]) * ((f2 + c[1]) * (f2 + c[2])).sqrt() * (f2 + c[3]));
    20.0 * ra.log10() + 2.0
}

/// A-weighted frame power in dB, scaled so a full-scale sine at 1 kHz reads
/// about 0 dB, clamped to `[−80, 0]`.
pub fn a_weighted_loudness(audio: &[f64], sample_rate: u32, hop: usize) -> Result<Vec<f64>> {
    check_rate(sample_rate)?;
    let frames = frame_count(audio.len(), hop)?;
    let n = ANALYSIS_WINDOW;
    let win = dsp::hann(n);
    let weights: Vec<f64> = (0..=n / 2)
        .map(|k| if k == 0 { 0.0 } else { 10f64.powf(a_weighting_db(k as f64 * f64::from(sample_rate) / n as f64) / 10.0) })
        .collect();
    let full_scale = n as f64 * win.iter().map(|w| w * w).sum::<f64>() / 4.0;
    let mut buf = vec![0.0; n];
    let mut spec = vec![Complex64::default(); n];
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        frame(audio, t, hop, &mut buf);
        for ((s, &x), &w) in spec.iter_mut().zip(&buf).zip(&win) {
            *s = Complex64::new(x * w, 0.0);
        }
        dsp::fft(&mut spec);
        let power: f64 = spec[..=n / 2].iter().zip(&weights).map(|(s, w)| s.norm_sqr() * w).sum();
        let db = 10.0 * (power / full_scale).log10();
        out.push(if db.is_nan() { LOUDNESS_FLOOR_DB } else { db.clamp(LOUDNESS_FLOOR_DB, 0.0) });
    }
    Ok(out)
}

impl FeatureTrack {
    pub fn extract(audio: &[f64]) -> Result<Self> {
        let (f0_hz, confidence) = estimate_f0(audio, SAMPLE_RATE, HOP)?;
        let loudness_db = a_weighted_loudness(audio, SAMPLE_RATE, HOP)?;
        Ok(FeatureTrack { f0_hz, confidence, loudness_db })
    }

    pub fn frames(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn mean_confidence(&self) -> f64 {
        self.confidence.iter().sum::<f64>() / self.confidence.len().max(1) as f64
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("features");
        c.set_meta("sample_rate", SAMPLE_RATE);
        c.set_meta("hop", HOP);
        c.set_meta("extractor_version", EXTRACTOR_VERSION);
        let arr = |v: &Vec<f64>| Tensor::new(vec![v.len()], v.clone()).expect("track");
        c.push("f0_hz", arr(&self.f0_hz));
        c.push("confidence", arr(&self.confidence));
        c.push("loudness_db", arr(&self.loudness_db));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        for (key, want) in [("sample_rate", SAMPLE_RATE.to_string()), ("hop", HOP.to_string()), ("extractor_version", EXTRACTOR_VERSION.to_string())] {
            let got = c.require_meta(key)?;
            if got != want {
                return Err(Error::Container(format!("feature cache {key} = {got}, expected {want}")));
            }
        }
        let track = FeatureTrack {
            f0_hz: c.array("f0_hz")?.data().to_vec(),
            confidence: c.array("confidence")?.data().to_vec(),
            loudness_db: c.array("loudness_db")?.data().to_vec(),
        };
        if track.confidence.len() != track.frames() || track.loudness_db.len() != track.frames() {
            return Err(Error::Container("feature tracks differ in length".into()));
        }
        Ok(track)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_kind(path, "features")?)
    }
}

pub fn hz_to_midi(hz: f64) -> f64 {
    if hz <= 0.0 { 0.0 } else { 69.0 + 12.0 * (hz / 440.0).log2() }
}

/// Pitch as MIDI/127 and loudness as `(dB + 80)/80`, both clamped to `[0, 1]`.
pub fn normalize(track: &FeatureTrack) -> Result<Conditioning> {
    let pitch = track.f0_hz.iter().map(|&f| (hz_to_midi(f) / 127.0).clamp(0.0, 1.0)).collect();
    let loud = track.loudness_db.iter().map(|&d| ((d - LOUDNESS_FLOOR_DB) / -LOUDNESS_FLOOR_DB).clamp(0.0, 1.0)).collect();
    Conditioning::new(pitch, loud)
}
