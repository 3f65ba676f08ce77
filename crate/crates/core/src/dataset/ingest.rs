use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::{finalize, quantize, CorpusManifest, Instrument, PendingClip, Preprocessing, CLIP_SAMPLES};
use crate::error::{Error, Result};
use crate::features::FeatureTrack;
use crate::fm::SAMPLE_RATE;
use crate::wav;

const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.6;
/// Passband edge as a fraction of the lower Nyquist frequency.
const CUTOFF: f64 = 0.95;

pub(crate) const RESAMPLER: &str = "windowed-sinc, 64-tap Kaiser (beta 8.6), cutoff 0.95 x lower Nyquist";

fn bessel_i0(x: f64) -> f64 {
    let (mut sum, mut term, mut k) = (1.0, 1.0, 1.0);
    while term > 1e-16 * sum {
        term *= (x / (2.0 * k)).powi(2);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Band-limited resampling by direct evaluation of a Kaiser-windowed sinc at
/// each output instant.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let out_len = (x.len() as u64 * u64::from(to) / u64::from(from)) as usize;
    let step = f64::from(from) / f64::from(to);
    // cutoff in cycles per input sample
    let fc = 0.5 * CUTOFF * (f64::from(to) / f64::from(from)).min(1.0);
    let half = (TAPS / 2) as f64;
    let norm = bessel_i0(KAISER_BETA);
    let kernel = |u: f64| {
        let r = u / half;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = 2.0 * fc * u;
        let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
        2.0 * fc * sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
    };
    (0..out_len)
        .into_par_iter()
        .map(|n| {
            let t = n as f64 * step;
            let base = t.floor() as i64;
            let mut acc = 0.0;
            for k in base - (TAPS as i64 / 2 - 1)..=base + TAPS as i64 / 2 {
                if k >= 0 && (k as usize) < x.len() {
                    acc += x[k as usize] * kernel(t - k as f64);
                }
            }
            acc
        })
        .collect()
}

/// Drops analysis frames whose RMS is below `threshold_dbfs`. Frames start
/// every `hop` samples; a sample survives if any loud frame covers it. The
/// surviving samples are concatenated.
pub fn strip_silence(x: &[f64], frame: usize, hop: usize, threshold_dbfs: f64) -> Vec<f64> {
    let mut keep = vec![false; x.len()];
    let mut start = 0;
    while start < x.len() {
        let end = (start + frame).min(x.len());
        let rms = (x[start..end].iter().map(|v| v * v).sum::<f64>() / (end - start) as f64).sqrt();
        if 20.0 * rms.log10() >= threshold_dbfs {
            keep[start..end].fill(true);
        }
        if end == x.len() {
            break;
        }
        start += hop;
    }
    x.iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| *v).collect()
}

/// Consecutive 4 s clips; the remainder is dropped.
pub fn crop(x: &[f64]) -> Vec<Vec<f64>> {
    x.chunks_exact(CLIP_SAMPLES).map(<[f64]>::to_vec).collect()
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Missing(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn process_file(path: &Path, pre: &Preprocessing) -> Result<Vec<PendingClip>> {
    let (audio, rate) = wav::read_mono(path)?;
    let audio = resample(&audio, rate, SAMPLE_RATE);
    let audio = strip_silence(&audio, pre.silence_frame, pre.silence_hop, pre.silence_threshold_dbfs);
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    crop(&audio)
        .into_iter()
        .enumerate()
        .map(|(i, clip)| {
            let audio = quantize(&clip);
            let features = FeatureTrack::extract(&audio)?;
            Ok(PendingClip { id: format!("{stem}-{i:03}"), source_file: name.clone(), audio, features, truth: None })
        })
        .collect()
}

pub fn ingest(input: &Path, instrument: Instrument, seed: u64, out: &Path) -> Result<CorpusManifest> {
    ingest_with(input, instrument, seed, out, Preprocessing::for_instrument(instrument))
}

/// Reads every `.wav` file in `input` (sorted by name), preprocesses it into
/// 4 s clips, drops clips under the confidence threshold, and writes the
/// corpus to `out`. Unreadable files are skipped with a warning.
pub fn ingest_with(input: &Path, instrument: Instrument, seed: u64, out: &Path, pre: Preprocessing) -> Result<CorpusManifest> {
    let files = wav_files(input)?;
    let per_file: Vec<Vec<PendingClip>> = files
        .par_iter()
        .map(|f| match process_file(f, &pre) {
            Ok(clips) => {
                if clips.is_empty() {
                    warn!("{}: no 4 s clip left after silence removal", f.display());
                }
                clips
            }
            Err(e) => {
                warn!("skipping {}: {e}", f.display());
                Vec::new()
            }
        })
        .collect();
    let mut kept = Vec::new();
    for clip in per_file.into_iter().flatten() {
        let conf = clip.features.mean_confidence();
        if conf >= pre.confidence_threshold {
            kept.push(clip);
        } else {
            info!("dropping {}: mean confidence {conf:.3} below {}", clip.id, pre.confidence_threshold);
        }
    }
    finalize(out, instrument, seed, pre, kept)
}
