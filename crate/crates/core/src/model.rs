//! The full synthesis path: conditioning → decoder → FM renderer → reverb.

use crate::autodiff::{Bound, Graph, ParamSet, Tensor, Var};
use crate::dataset::ClipRecord;
use crate::error::{Error, Result};
use crate::features::{normalize, FeatureTrack};
use crate::fm::{render_on, FmConfig, RenderSpec};
use crate::reverb::{apply_reverb_on, ReverbParams, ReverbVars};
use crate::seed::derive_seed;
use crate::tcn::{check_weights, decode_on, init_weights, Conditioning, Mode, TcnSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: FmConfig,
    pub tcn: TcnSpec,
    /// Decoder (`tcn.*`) and reverb (`reverb.*`) parameters.
    pub params: ParamSet,
}

/// Conditioning, f0 track and target audio of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainClip {
    pub id: String,
    pub cond: Conditioning,
    pub f0_hz: Vec<f64>,
    pub target: Vec<f64>,
}

impl TrainClip {
    /// Extracts features from 16 kHz audio.
    pub fn from_audio(id: impl Into<String>, audio: Vec<f64>) -> Result<Self> {
        let features = FeatureTrack::extract(&audio)?;
        Self::from_features(id, audio, &features, None)
    }

    /// Clips with a known generating f0 take it for both pitch conditioning
    /// and rendering in place of the extracted one.
    pub fn from_features(id: impl Into<String>, audio: Vec<f64>, features: &FeatureTrack, truth_f0: Option<&[f64]>) -> Result<Self> {
        let mut features = features.clone();
        if let Some(f0) = truth_f0 {
            if f0.len() != features.frames() {
                return Err(Error::FrameCount { expected: features.frames(), got: f0.len() });
            }
            features.f0_hz = f0.to_vec();
        }
        Ok(TrainClip { id: id.into(), cond: normalize(&features)?, f0_hz: features.f0_hz, target: audio })
    }

    pub fn from_record(record: &ClipRecord) -> Result<Self> {
        let truth = record.truth.as_ref().map(|t| t.f0_hz.as_slice());
        Self::from_features(record.meta.id.clone(), record.audio.clone(), &record.features, truth)
    }
}

impl Model {
    pub fn init(config: FmConfig, tcn: TcnSpec, seed: u64) -> Result<Self> {
        let mut params = init_weights(&tcn, derive_seed(&[seed, 1]))?;
        params.extend(ReverbParams::init(derive_seed(&[seed, 2])).to_params())?;
        Ok(Model { config, tcn, params })
    }

    /// Fails when the parameters do not fit the decoder spec and patch.
    pub fn check(&self) -> Result<()> {
        if self.tcn.out_channels != self.config.len() {
            return Err(Error::Mismatch(format!(
                "decoder has {} outputs but patch {:?} has {} oscillators",
                self.tcn.out_channels,
                self.config.name(),
                self.config.len()
            )));
        }
        check_weights(&self.tcn, &self.params)?;
        ReverbParams::from_params(&self.params)?;
        Ok(())
    }

    /// Reverberated audio of `frames · hop` samples.
    pub fn synthesize_on<'g>(&self, g: &'g Graph, bound: &Bound<'g>, cond: &Conditioning, f0_hz: &[f64], mode: Mode) -> Result<Var<'g>> {
        if f0_hz.len() != cond.frames() {
            return Err(Error::FrameCount { expected: cond.frames(), got: f0_hz.len() });
        }
        let env = decode_on(&self.tcn, &self.config, bound, g.constant(cond.to_channels()), mode)?;
        let dry = render_on(g, &self.config, env, &RenderSpec::new(f0_hz.to_vec(), self.tcn.i_max))?;
        apply_reverb_on(dry, &ReverbVars::from_bound(bound)?)
    }

    pub fn synthesize(&self, cond: &Conditioning, f0_hz: &[f64]) -> Result<Vec<f64>> {
        let g = Graph::new();
        let bound = self.params.bind(&g, false);
        Ok(self.synthesize_on(&g, &bound, cond, f0_hz, Mode::Inference)?.value().data().to_vec())
    }

    /// Output for a clip, trimmed or zero-padded to the target length.
    pub fn resynthesize(&self, clip: &TrainClip) -> Result<Vec<f64>> {
        let mut y = self.synthesize(&clip.cond, &clip.f0_hz)?;
        y.resize(clip.target.len(), 0.0);
        Ok(y)
    }
}

pub(crate) fn signal<'g>(g: &'g Graph, x: &[f64]) -> Result<Var<'g>> {
    if x.is_empty() {
        return Err(Error::shape("signal", "empty"));
    }
    Ok(g.constant(Tensor::from_vec(x.to_vec())))
}
