//! Held-out resynthesis, reconstruction metrics and result grids.
//!
//! Metrics: multi-scale spectral loss, log-spectral distance in dB (window
//! 1024, hop 256) and f0 RMSE in cents over frames where both signals have
//! pitch confidence above 0.5.
//!
//! Grid cells are looked up as `<runs>/<patch>_imax-<label>/`, using the
//! highest-step checkpoint in that directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{FeatureTrack, hz_to_midi};
use crate::fm::patches;
use crate::model::TrainClip;
use crate::spectral::{mss_loss, stft_magnitude, MssSpec};
use crate::training::{latest_checkpoint, Checkpoint, IMax};

pub const LSD_WINDOW: usize = 1024;
pub const LSD_HOP: usize = 256;
const LSD_EPS: f64 = 1e-6;
const VOICED_CONFIDENCE: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub mss: f64,
    pub lsd_db: f64,
    pub f0_rmse_cents: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub run: String,
    pub config: String,
    pub i_max: f64,
    /// Per clip, ordered by clip id.
    pub clips: Vec<(String, Metrics)>,
    pub mean: Metrics,
}

fn check_lengths(target: &[f64], prediction: &[f64]) -> Result<()> {
    if target.len() != prediction.len() {
        return Err(Error::shape("metrics", format!("lengths {} and {}", target.len(), prediction.len())));
    }
    Ok(())
}

/// Log-spectral distance restricted to `bins` (all bins when `None`).
pub fn log_spectral_distance_bins(target: &[f64], prediction: &[f64], bins: Option<&[usize]>) -> Result<f64> {
    check_lengths(target, prediction)?;
    let (s, p) = (stft_magnitude(target, LSD_WINDOW, LSD_HOP)?, stft_magnitude(prediction, LSD_WINDOW, LSD_HOP)?);
    let width = LSD_WINDOW / 2 + 1;
    let all: Vec<usize> = (0..width).collect();
    let bins = bins.unwrap_or(&all);
    if bins.is_empty() || bins.iter().any(|&b| b >= width) {
        return Err(Error::domain("lsd", format!("bins must be non-empty and below {width}")));
    }
    let frames: Vec<f64> = s
        .data()
        .chunks(width)
        .zip(p.data().chunks(width))
        .map(|(a, b)| {
            let ms = bins.iter().map(|&k| (20.0 * ((a[k] + LSD_EPS) / (b[k] + LSD_EPS)).log10()).powi(2)).sum::<f64>() / bins.len() as f64;
            ms.sqrt()
        })
        .collect();
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

pub fn log_spectral_distance(target: &[f64], prediction: &[f64]) -> Result<f64> {
    log_spectral_distance_bins(target, prediction, None)
}

/// RMS pitch difference in cents over frames where both tracks are confident.
/// Zero when no frame qualifies.
pub fn f0_rmse_cents(target: &FeatureTrack, prediction: &FeatureTrack) -> Result<f64> {
    if target.frames() != prediction.frames() {
        return Err(Error::FrameCount { expected: target.frames(), got: prediction.frames() });
    }
    let diffs: Vec<f64> = (0..target.frames())
        .filter(|&t| target.confidence[t] > VOICED_CONFIDENCE && prediction.confidence[t] > VOICED_CONFIDENCE)
        .filter(|&t| target.f0_hz[t] > 0.0 && prediction.f0_hz[t] > 0.0)
        .map(|t| 100.0 * (hz_to_midi(prediction.f0_hz[t]) - hz_to_midi(target.f0_hz[t])))
        .collect();
    if diffs.is_empty() {
        return Ok(0.0);
    }
    Ok((diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt())
}

pub fn compute_metrics(target: &[f64], prediction: &[f64]) -> Result<Metrics> {
    check_lengths(target, prediction)?;
    let (ft, fp) = (FeatureTrack::extract(target)?, FeatureTrack::extract(prediction)?);
    Ok(Metrics {
        mss: mss_loss(target, prediction, &MssSpec::default())?,
        lsd_db: log_spectral_distance(target, prediction)?,
        f0_rmse_cents: f0_rmse_cents(&ft, &fp)?,
    })
}

fn mean(ms: &[Metrics]) -> Metrics {
    let n = ms.len().max(1) as f64;
    Metrics {
        mss: ms.iter().map(|m| m.mss).sum::<f64>() / n,
        lsd_db: ms.iter().map(|m| m.lsd_db).sum::<f64>() / n,
        f0_rmse_cents: ms.iter().map(|m| m.f0_rmse_cents).sum::<f64>() / n,
    }
}

/// Resynthesizes a clip from its features in inference mode.
pub fn resynthesize(ckpt: &Checkpoint, clip: &TrainClip) -> Result<Vec<f64>> {
    ckpt.model.check()?;
    ckpt.model.resynthesize(clip)
}

/// Resynthesizes and scores every clip.
pub fn evaluate(ckpt: &Checkpoint, run: &str, clips: &[TrainClip]) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::Dataset("no clips to evaluate".into()));
    }
    let mut scored: Vec<(String, Metrics)> = clips
        .par_iter()
        .map(|c| Ok((c.id.clone(), compute_metrics(&c.target, &resynthesize(ckpt, c)?)?)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.0.cmp(&b.0));
    let all: Vec<Metrics> = scored.iter().map(|(_, m)| *m).collect();
    Ok(EvalReport {
        run: run.to_string(),
        config: ckpt.model.config.name().to_string(),
        i_max: ckpt.model.tcn.i_max,
        mean: mean(&all),
        clips: scored,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub label: String,
    pub patch: String,
    pub i_max: IMax,
    pub dir: PathBuf,
}

pub fn cell_dir(runs: &Path, patch: &str, i_max: IMax) -> PathBuf {
    runs.join(format!("{patch}_imax-{}", i_max.label()))
}

/// One cell per swept `i_max`, all on the instrument's full patch.
pub fn imax_cells(instrument: &str, runs: &Path) -> Result<Vec<GridCell>> {
    let (_, patch) = patches::ablation_variants(instrument)?[0];
    Ok(IMax::all()
        .map(|i| GridCell { label: format!("I_max={}", i.label()), patch: patch.to_string(), i_max: i, dir: cell_dir(runs, patch, i) })
        .collect())
}

/// One cell per ablation variant of the instrument at a fixed `i_max`.
pub fn ablation_cells(instrument: &str, runs: &Path, i_max: IMax) -> Result<Vec<GridCell>> {
    Ok(patches::ablation_variants(instrument)?
        .into_iter()
        .map(|(label, patch)| GridCell { label: label.to_string(), patch: patch.to_string(), i_max, dir: cell_dir(runs, patch, i_max) })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub label: String,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<EvalReport>,
    /// Why the row is absent.
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
}

impl GridTable {
    pub fn complete(&self) -> bool {
        self.rows.iter().all(|r| r.report.is_some())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Dataset(e.to_string());
        w.write_record(["variant", "status", "clips", "mss", "lsd_db", "f0_rmse_cents", "checkpoint"]).map_err(err)?;
        for r in &self.rows {
            let ckpt = r.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            match &r.report {
                Some(rep) => w.write_record([
                    r.label.clone(),
                    "ok".into(),
                    rep.clips.len().to_string(),
                    format!("{}", rep.mean.mss),
                    format!("{}", rep.mean.lsd_db),
                    format!("{}", rep.mean.f0_rmse_cents),
                    ckpt,
                ]),
                None => w.write_record([r.label.clone(), "absent".into(), String::new(), String::new(), String::new(), String::new(), ckpt]),
            }
            .map_err(err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?).map_err(|e| Error::Dataset(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12} {:>6} {:>14} {:>10} {:>14}\n", "variant", "clips", "mss", "lsd_db", "f0_rmse_cents");
        for r in &self.rows {
            match &r.report {
                Some(rep) => out.push_str(&format!(
                    "{:<12} {:>6} {:>14.4} {:>10.4} {:>14.4}\n",
                    r.label,
                    rep.clips.len(),
                    rep.mean.mss,
                    rep.mean.lsd_db,
                    rep.mean.f0_rmse_cents
                )),
                None => out.push_str(&format!("{:<12} {:>6} absent: {}\n", r.label, "-", r.note)),
            }
        }
        out
    }
}

/// Evaluates every cell on `clips`. Cells without a usable checkpoint become
/// absent rows; check [`GridTable::complete`].
pub fn run_grid(cells: &[GridCell], clips: &[TrainClip]) -> Result<GridTable> {
    if cells.is_empty() {
        return Err(Error::Config("empty variant list".into()));
    }
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let absent = |checkpoint: Option<PathBuf>, note: String| GridRow { label: cell.label.clone(), checkpoint, report: None, note };
        let Some(path) = latest_checkpoint(&cell.dir)? else {
            rows.push(absent(None, format!("no checkpoint in {}", cell.dir.display())));
            continue;
        };
        let ckpt = match Checkpoint::load(&path) {
            Ok(c) => c,
            Err(e) => {
                rows.push(absent(Some(path), e.to_string()));
                continue;
            }
        };
        if ckpt.model.config.name() != cell.patch || ckpt.run.i_max != cell.i_max {
            let note = format!("checkpoint holds {} at i_max {}", ckpt.model.config.name(), ckpt.run.i_max);
            rows.push(absent(Some(path), note));
            continue;
        }
        let report = evaluate(&ckpt, &cell.label, clips)?;
        rows.push(GridRow { label: cell.label.clone(), checkpoint: Some(path), report: Some(report), note: String::new() });
    }
    Ok(GridTable { rows })
}
