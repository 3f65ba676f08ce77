use std::collections::HashMap;
use std::f64::consts::TAU;

use super::FmConfig;
use crate::autodiff::{Graph, Tensor, Var};
use crate::container::Container;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const HOP: usize = 64;
pub const FRAME_RATE: f64 = SAMPLE_RATE as f64 / HOP as f64;

/// Frame-rate output levels, `frames × oscillators`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeFrames {
    frames: usize,
    oscillators: usize,
    levels: Vec<f64>,
}

impl EnvelopeFrames {
    pub fn new(frames: usize, oscillators: usize, levels: Vec<f64>) -> Result<Self> {
        if frames == 0 || oscillators == 0 || levels.len() != frames * oscillators {
            return Err(Error::shape(
                "envelopes",
                format!("{} levels for {frames} frames × {oscillators} oscillators", levels.len()),
            ));
        }
        Ok(EnvelopeFrames { frames, oscillators, levels })
    }

    /// Carriers at full level, modulators silent.
    pub fn carriers_only(config: &FmConfig, frames: usize) -> Self {
        let row: Vec<f64> = (0..config.len()).map(|k| if config.is_carrier(k) { 1.0 } else { 0.0 }).collect();
        let levels = row.iter().copied().cycle().take(frames * row.len()).collect();
        EnvelopeFrames { frames, oscillators: config.len(), levels }
    }

    /// From a channels-first `[oscillators, frames]` tensor.
    pub fn from_channels(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::shape("envelopes", format!("expected [oscillators, frames], got {s:?}")));
        }
        let (n, frames) = (s[0], s[1]);
        let mut levels = vec![0.0; n * frames];
        for k in 0..n {
            for f in 0..frames {
                levels[f * n + k] = t.data()[k * frames + f];
            }
        }
        EnvelopeFrames::new(frames, n, levels)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn oscillators(&self) -> usize {
        self.oscillators
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn get(&self, frame: usize, osc: usize) -> f64 {
        self.levels[frame * self.oscillators + osc]
    }

    /// Channels-first `[oscillators, frames]` tensor.
    pub fn to_channels(&self) -> Tensor {
        let (n, t) = (self.oscillators, self.frames);
        let mut data = vec![0.0; n * t];
        for f in 0..t {
            for k in 0..n {
                data[k * t + f] = self.levels[f * n + k];
            }
        }
        Tensor::new(vec![n, t], data).expect("envelope shape")
    }

    /// Container with a `[frames, oscillators]` array named `envelopes`.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("envelopes");
        c.set_meta("hop", HOP);
        c.set_meta("sample_rate", SAMPLE_RATE);
        c.push("envelopes", Tensor::new(vec![self.frames, self.oscillators], self.levels.clone()).expect("envelope shape"));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let t = c.array("envelopes")?;
        match t.shape() {
            [frames, oscillators] => EnvelopeFrames::new(*frames, *oscillators, t.data().to_vec()),
            s => Err(Error::Container(format!("envelopes array has shape {s:?}, expected [frames, oscillators]"))),
        }
    }
}

/// Sample-rate settings plus the fundamental-frequency track.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderSpec {
    pub sample_rate: u32,
    pub hop: usize,
    /// Hz per frame; 0 marks unvoiced frames.
    pub f0_frames: Vec<f64>,
    /// Ceiling on modulator output levels.
    pub i_max: f64,
}

impl RenderSpec {
    pub fn new(f0_frames: Vec<f64>, i_max: f64) -> Self {
        RenderSpec { sample_rate: SAMPLE_RATE, hop: HOP, f0_frames, i_max }
    }

    pub fn samples(&self) -> usize {
        self.f0_frames.len() * self.hop
    }
}

fn check_inputs(config: &FmConfig, levels: &Tensor, spec: &RenderSpec) -> Result<()> {
    let s = levels.shape();
    if s.len() != 2 || s[0] != config.len() {
        return Err(Error::shape("render", format!("envelopes {s:?} for {} oscillators", config.len())));
    }
    if s[1] != spec.f0_frames.len() {
        return Err(Error::FrameCount { expected: spec.f0_frames.len(), got: s[1] });
    }
    if spec.hop == 0 || spec.sample_rate == 0 {
        return Err(Error::domain("render", "hop and sample rate must be positive"));
    }
    if let Some(f) = spec.f0_frames.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
        return Err(Error::domain("render", format!("invalid f0 {f}")));
    }
    let limits = config.amplitude_limits(spec.i_max);
    for (k, row) in levels.data().chunks(s[1]).enumerate() {
        if let Some(&v) = row.iter().find(|v| !(**v >= 0.0 && **v <= limits[k])) {
            return Err(Error::EnvelopeBounds { channel: k + 1, value: v, max: limits[k] });
        }
    }
    Ok(())
}

/// Renders `config` on graph `g` from channels-first `[oscillators, frames]`
/// levels. Returns a `[frames · hop]` signal, differentiable in `levels`.
///
/// Frame-rate controls are linearly upsampled to the sample rate. Oscillator
/// `k` accumulates phase `2π · cumsum(r_k · f0 / sr)`, adds the summed outputs
/// of its modulators, and outputs `level_k · sin(·)`. The carrier outputs are
/// averaged.
pub fn render_on<'g>(g: &'g Graph, config: &FmConfig, levels: Var<'g>, spec: &RenderSpec) -> Result<Var<'g>> {
    check_inputs(config, &levels.value(), spec)?;
    let frames = spec.f0_frames.len();
    let f0 = g.constant(Tensor::new(vec![1, frames], spec.f0_frames.clone())?).upsample(spec.hop)?;

    let sr = f64::from(spec.sample_rate);
    let mut phases: HashMap<u32, Var<'g>> = HashMap::new();
    let mut outputs: Vec<Option<Var<'g>>> = vec![None; config.len()];
    for &k in config.order() {
        let ratio = config.oscillators()[k].ratio;
        let phase = match phases.get(&ratio.tenths()) {
            Some(p) => *p,
            None => {
                let p = f0.scale_shift(ratio.value() / sr, 0.0).cumsum().scale_shift(TAU, 0.0);
                phases.insert(ratio.tenths(), p);
                p
            }
        };
        let mut arg = phase;
        for m in config.modulators_of(k) {
            arg = arg.add(outputs[m].expect("modulator rendered before its target"))?;
        }
        let level = levels.slice(0, k, k + 1)?.upsample(spec.hop)?;
        outputs[k] = Some(level.mul(arg.sin())?);
    }

    let mut mix: Option<Var<'g>> = None;
    for k in (0..config.len()).filter(|&k| config.is_carrier(k)) {
        let out = outputs[k].expect("all oscillators rendered");
        mix = Some(match mix {
            None => out,
            Some(acc) => acc.add(out)?,
        });
    }
    let mix = mix.expect("validated config has a carrier");
    mix.scale_shift(1.0 / config.carrier_count() as f64, 0.0).reshape(&[frames * spec.hop])
}

/// Renders plain envelopes to audio.
pub fn render(config: &FmConfig, env: &EnvelopeFrames, spec: &RenderSpec) -> Result<Vec<f64>> {
    if env.oscillators() != config.len() {
        return Err(Error::shape("render", format!("{} envelope channels for {} oscillators", env.oscillators(), config.len())));
    }
    let g = Graph::new();
    let levels = g.constant(env.to_channels());
    Ok(render_on(&g, config, levels, spec)?.value().data().to_vec())
}
