//! Corpus preparation and serving.
//!
//! A prepared corpus directory holds
//!
//! - `manifest.json`: preprocessing parameters, seed and one entry per clip;
//! - `clips/<id>.f32`: 64000 little-endian `f32` samples at 16 kHz;
//! - `clips/<id>.json`: sidecar metadata for the raw audio;
//! - `clips/<id>.feat`: the feature track (see [`crate::container`]);
//! - `clips/<id>.env`: ground-truth envelopes and f0, synthetic corpora only.

mod ingest;
mod synth;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::features::{FeatureTrack, EXTRACTOR_VERSION};
use crate::fm::{EnvelopeFrames, HOP, SAMPLE_RATE};
use crate::seed::derive_seed;

pub use ingest::{crop, ingest, ingest_with, resample, strip_silence};
pub use synth::{synth_clip, synth_corpus, SyntheticClip};

pub const CLIP_SAMPLES: usize = 4 * SAMPLE_RATE as usize;
pub const CLIP_FRAMES: usize = CLIP_SAMPLES / HOP;
pub const SPLIT_FRACTIONS: [f64; 3] = [0.75, 0.125, 0.125];
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Violin,
    Flute,
    Trumpet,
    Synthetic,
}

impl Instrument {
    /// Minimum mean pitch confidence for a clip to be kept.
    pub fn confidence_threshold(self) -> f64 {
        match self {
            Instrument::Flute => 0.80,
            Instrument::Violin | Instrument::Trumpet => 0.85,
            Instrument::Synthetic => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Violin => "violin",
            Instrument::Flute => "flute",
            Instrument::Trumpet => "trumpet",
            Instrument::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "violin" => Instrument::Violin,
            "flute" => Instrument::Flute,
            "trumpet" => Instrument::Trumpet,
            "synthetic" => Instrument::Synthetic,
            other => return Err(Error::Config(format!("unknown instrument {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL.into_iter().find(|x| x.to_string() == s).ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub sample_rate: u32,
    pub hop: usize,
    pub clip_samples: usize,
    pub silence_threshold_dbfs: f64,
    pub silence_frame: usize,
    pub silence_hop: usize,
    pub confidence_threshold: f64,
    pub resampler: String,
    pub extractor_version: u32,
}

impl Preprocessing {
    pub fn for_instrument(instrument: Instrument) -> Self {
        Preprocessing {
            sample_rate: SAMPLE_RATE,
            hop: HOP,
            clip_samples: CLIP_SAMPLES,
            silence_threshold_dbfs: -45.0,
            silence_frame: 1024,
            silence_hop: 512,
            confidence_threshold: instrument.confidence_threshold(),
            resampler: ingest::RESAMPLER.to_string(),
            extractor_version: EXTRACTOR_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub source_file: String,
    pub instrument: Instrument,
    pub split: Split,
    pub mean_confidence: f64,
    pub audio: String,
    pub features: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub instrument: Instrument,
    pub seed: u64,
    pub split_fractions: [f64; 3],
    pub preprocessing: Preprocessing,
    pub records: Vec<RecordMeta>,
}

impl CorpusManifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Err(Error::Missing(path));
        }
        let m: CorpusManifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!("manifest version {}, expected {MANIFEST_VERSION}", m.format_version)));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(Self::path(dir), text)?;
        Ok(())
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &RecordMeta> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// `(train, valid, test)` record counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let n = |s| self.records(s).count();
        (n(Split::Train), n(Split::Valid), n(Split::Test))
    }
}

/// `(floor(0.75 n), floor(0.125 n), remainder)`.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 3 / 4;
    let valid = n / 8;
    (train, valid, n - train - valid)
}

/// Split per record position: a seeded shuffle, then train, valid and test
/// blocks of [`split_counts`] sizes.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x5eed_5b17])));
    let (train, valid, _) = split_counts(n);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < train {
            Split::Train
        } else if rank < train + valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    out
}

/// Index batches over `len` records for one epoch; the last batch may be short.
pub fn minibatches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::Dataset("empty split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0xba7c, epoch])));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Ground truth stored with synthetic clips.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub envelopes: EnvelopeFrames,
    pub f0_hz: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub meta: RecordMeta,
    pub audio: Vec<f64>,
    pub features: FeatureTrack,
    pub truth: Option<Truth>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    id: String,
    source_file: String,
    sample_rate: u32,
    samples: usize,
    format: String,
}

pub(crate) struct PendingClip {
    pub id: String,
    pub source_file: String,
    pub audio: Vec<f64>,
    pub features: FeatureTrack,
    pub truth: Option<Truth>,
}

/// Rounds through `f32` so in-memory audio equals what the cache stores.
pub(crate) fn quantize(audio: &[f64]) -> Vec<f64> {
    audio.iter().map(|&v| f64::from(v as f32)).collect()
}

fn read_f32(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Dataset(format!("{}: size {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect())
}

fn write_clip(dir: &Path, clip: &PendingClip) -> Result<()> {
    let clips = dir.join("clips");
    let bytes: Vec<u8> = clip.audio.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    std::fs::write(clips.join(format!("{}.f32", clip.id)), bytes)?;
    let side = Sidecar {
        id: clip.id.clone(),
        source_file: clip.source_file.clone(),
        sample_rate: SAMPLE_RATE,
        samples: clip.audio.len(),
        format: "f32le".into(),
    };
    std::fs::write(clips.join(format!("{}.json", clip.id)), serde_json::to_string_pretty(&side)? + "\n")?;
    clip.features.save(&clips.join(format!("{}.feat", clip.id)))?;
    if let Some(t) = &clip.truth {
        let mut c = t.envelopes.to_container();
        c.push("f0_hz", crate::autodiff::Tensor::from_vec(t.f0_hz.clone()));
        c.write(&clips.join(format!("{}.env", clip.id)))?;
    }
    Ok(())
}

/// Splits, caches and indexes clips that already passed filtering.
pub(crate) fn finalize(out: &Path, instrument: Instrument, seed: u64, pre: Preprocessing, clips: Vec<PendingClip>) -> Result<CorpusManifest> {
    if clips.is_empty() {
        return Err(Error::Dataset("no clips survived preprocessing".into()));
    }
    std::fs::create_dir_all(out.join("clips"))?;
    clips.par_iter().map(|c| write_clip(out, c)).collect::<Result<Vec<()>>>()?;
    let splits = assign_splits(clips.len(), seed);
    let records = clips
        .iter()
        .zip(splits)
        .map(|(c, split)| RecordMeta {
            id: c.id.clone(),
            source_file: c.source_file.clone(),
            instrument,
            split,
            mean_confidence: c.features.mean_confidence(),
            audio: format!("clips/{}.f32", c.id),
            features: format!("clips/{}.feat", c.id),
            truth: c.truth.as_ref().map(|_| format!("clips/{}.env", c.id)),
        })
        .collect();
    let manifest = CorpusManifest {
        format_version: MANIFEST_VERSION,
        instrument,
        seed,
        split_fractions: SPLIT_FRACTIONS,
        preprocessing: pre,
        records,
    };
    manifest.save(out)?;
    Ok(manifest)
}

pub fn load_record(dir: &Path, meta: &RecordMeta) -> Result<ClipRecord> {
    let audio = read_f32(&dir.join(&meta.audio))?;
    let features = FeatureTrack::load(&dir.join(&meta.features))?;
    let truth = match &meta.truth {
        None => None,
        Some(p) => {
            let c = Container::read(&dir.join(p))?;
            Some(Truth { envelopes: EnvelopeFrames::from_container(&c)?, f0_hz: c.array("f0_hz")?.data().to_vec() })
        }
    };
    Ok(ClipRecord { meta: meta.clone(), audio, features, truth })
}

/// Loads every clip of `split`, in manifest order.
pub fn load_split(dir: &Path, manifest: &CorpusManifest, split: Split) -> Result<Vec<ClipRecord>> {
    let metas: Vec<&RecordMeta> = manifest.records(split).collect();
    metas.par_iter().map(|m| load_record(dir, m)).collect()
}

/// Checks every cached clip against the corpus invariants. Returns one line
/// per problem; an empty list means the corpus is clean.
pub fn lint(dir: &Path) -> Result<Vec<String>> {
    let manifest = CorpusManifest::load(dir)?;
    let pre = &manifest.preprocessing;
    let mut problems = Vec::new();
    if pre.sample_rate != SAMPLE_RATE || pre.hop != HOP || pre.clip_samples != CLIP_SAMPLES {
        problems.push(format!("preprocessing {pre:?} does not match this build"));
    }
    let mut ids: Vec<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        problems.push("duplicate clip ids".into());
    }
    let (tr, va, te) = manifest.counts();
    if (tr, va, te) != split_counts(manifest.records.len()) {
        problems.push(format!("split counts {tr}/{va}/{te} do not follow the split rule for {} clips", manifest.records.len()));
    }
    let per_clip: Vec<Vec<String>> = manifest
        .records
        .par_iter()
        .map(|r| {
            let mut p = Vec::new();
            match load_record(dir, r) {
                Err(e) => p.push(format!("{}: {e}", r.id)),
                Ok(clip) => {
                    if clip.audio.len() != CLIP_SAMPLES {
                        p.push(format!("{}: {} samples, expected {CLIP_SAMPLES}", r.id, clip.audio.len()));
                    }
                    if clip.features.frames() != CLIP_FRAMES {
                        p.push(format!("{}: {} feature frames, expected {CLIP_FRAMES}", r.id, clip.features.frames()));
                    }
                    let conf = clip.features.mean_confidence();
                    if conf < pre.confidence_threshold {
                        p.push(format!("{}: mean confidence {conf:.4} below {}", r.id, pre.confidence_threshold));
                    }
                    if conf != r.mean_confidence {
                        p.push(format!("{}: manifest confidence {} differs from cache {conf}", r.id, r.mean_confidence));
                    }
                }
            }
            p
        })
        .collect();
    problems.extend(per_clip.into_iter().flatten());
    Ok(problems)
}
