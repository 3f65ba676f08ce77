//! Causal temporal convolutional decoder from pitch/loudness frames to
//! oscillator envelopes.
//!
//! Each residual block holds two weight-normalized dilated causal convolutions
//! (ReLU and dropout after each) sharing the dilation `growth^block`, plus a
//! 1×1 projection on the skip path when the channel count changes. A final
//! 1×1 convolution maps to one channel per oscillator; its sigmoid output is
//! scaled by 1 for carriers and by `i_max` for modulators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bound, Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::fm::{EnvelopeFrames, FmConfig};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TcnSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub hidden_channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub dilation_growth: usize,
    pub dropout_p: f64,
    pub i_max: f64,
}

impl TcnSpec {
    /// Default architecture sized for `config`.
    pub fn for_config(config: &FmConfig, i_max: f64) -> Self {
        TcnSpec {
            in_channels: 2,
            out_channels: config.len(),
            hidden_channels: 128,
            blocks: 5,
            kernel: 3,
            dilation_growth: 2,
            dropout_p: 0.5,
            i_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.in_channels, self.out_channels, self.hidden_channels, self.blocks, self.kernel, self.dilation_growth];
        if positive.contains(&0) {
            return Err(Error::Config(format!("decoder sizes must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout_p)));
        }
        if !(self.i_max > 0.0 && self.i_max.is_finite()) {
            return Err(Error::Config(format!("i_max {} must be positive", self.i_max)));
        }
        Ok(())
    }

    pub fn dilation(&self, block: usize) -> usize {
        self.dilation_growth.pow(block as u32)
    }

    /// Frames of context seen by each output frame, current frame included.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * (0..self.blocks).map(|b| 2 * self.dilation(b)).sum::<usize>()
    }

    fn block_input(&self, block: usize) -> usize {
        if block == 0 { self.in_channels } else { self.hidden_channels }
    }
}

/// Pitch and loudness per frame, both normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pitch: Vec<f64>,
    loudness: Vec<f64>,
}

impl Conditioning {
    pub fn new(pitch: Vec<f64>, loudness: Vec<f64>) -> Result<Self> {
        if pitch.is_empty() || pitch.len() != loudness.len() {
            return Err(Error::shape("conditioning", format!("{} pitch and {} loudness frames", pitch.len(), loudness.len())));
        }
        let bad = pitch.iter().chain(&loudness).find(|v| !(0.0..=1.0).contains(*v));
        if let Some(v) = bad {
            return Err(Error::domain("conditioning", format!("value {v} outside [0, 1]")));
        }
        Ok(Conditioning { pitch, loudness })
    }

    pub fn frames(&self) -> usize {
        self.pitch.len()
    }

    pub fn pitch(&self) -> &[f64] {
        &self.pitch
    }

    pub fn loudness(&self) -> &[f64] {
        &self.loudness
    }

    /// `[2, frames]`: pitch row then loudness row.
    pub fn to_channels(&self) -> Tensor {
        let data = self.pitch.iter().chain(&self.loudness).copied().collect();
        Tensor::new(vec![2, self.frames()], data).expect("conditioning shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Dropout active, masks drawn from `seed`.
    Train { seed: u64 },
}

fn conv_names(prefix: &str) -> [String; 3] {
    [format!("{prefix}.v"), format!("{prefix}.g"), format!("{prefix}.b")]
}

fn layer_prefixes(spec: &TcnSpec) -> Vec<(String, usize, usize, usize)> {
    // (prefix, c_in, c_out, kernel)
    let mut out = Vec::new();
    for b in 0..spec.blocks {
        let c_in = spec.block_input(b);
        out.push((format!("tcn.block{b}.conv0"), c_in, spec.hidden_channels, spec.kernel));
        out.push((format!("tcn.block{b}.conv1"), spec.hidden_channels, spec.hidden_channels, spec.kernel));
        if c_in != spec.hidden_channels {
            out.push((format!("tcn.block{b}.skip"), c_in, spec.hidden_channels, 1));
        }
    }
    out.push(("tcn.out".to_string(), spec.hidden_channels, spec.out_channels, 1));
    out
}

/// Seeded weights: directions and biases uniform in ±1/√fan_in, gains equal
/// to the initial direction norms.
pub fn init_weights(spec: &TcnSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    for (prefix, c_in, c_out, kernel) in layer_prefixes(spec) {
        let fan_in = c_in * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let v: Vec<f64> = (0..c_out * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
        let g: Vec<f64> = v.chunks(fan_in).map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let b: Vec<f64> = (0..c_out).map(|_| rng.random_range(-bound..bound)).collect();
        let [nv, ng, nb] = conv_names(&prefix);
        set.insert(nv, Tensor::new(vec![c_out, fan_in], v)?)?;
        set.insert(ng, Tensor::new(vec![c_out, 1], g)?)?;
        set.insert(nb, Tensor::new(vec![c_out, 1], b)?)?;
    }
    Ok(set)
}

/// Checks that `params` holds exactly the tensors `spec` expects.
pub fn check_weights(spec: &TcnSpec, params: &ParamSet) -> Result<()> {
    for (prefix, c_in, c_out, kernel) in layer_prefixes(spec) {
        let [nv, ng, nb] = conv_names(&prefix);
        for (name, shape) in [(nv, [c_out, c_in * kernel]), (ng, [c_out, 1]), (nb, [c_out, 1])] {
            let t = params.require(&name)?;
            if t.shape() != shape {
                return Err(Error::Mismatch(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
    }
    Ok(())
}

struct Forward<'a, 'g> {
    spec: &'a TcnSpec,
    params: &'a Bound<'g>,
    mode: Mode,
    layer: usize,
}

impl<'g> Forward<'_, 'g> {
    fn conv(&self, x: Var<'g>, prefix: &str, kernel: usize, dilation: usize) -> Result<Var<'g>> {
        let [nv, ng, nb] = conv_names(prefix);
        let v = self.params.get(&nv)?;
        let w = v.div(v.l2_norm())?.mul(self.params.get(&ng)?)?;
        x.conv1d(w, kernel, dilation, true)?.add(self.params.get(&nb)?)
    }

    fn checked(&mut self, x: Var<'g>) -> Result<Var<'g>> {
        if x.value().data().iter().any(|v| v.is_nan()) {
            return Err(Error::NanActivation(self.layer));
        }
        self.layer += 1;
        Ok(x)
    }

    fn hidden(&mut self, x: Var<'g>, prefix: &str, dilation: usize) -> Result<Var<'g>> {
        let layer = self.layer as u64;
        let h = self.conv(x, prefix, self.spec.kernel, dilation)?;
        let h = self.checked(h)?.relu();
        Ok(match self.mode {
            Mode::Train { seed } if self.spec.dropout_p > 0.0 => h.dropout(self.spec.dropout_p, derive_seed(&[seed, layer]))?,
            _ => h,
        })
    }
}

/// Runs the decoder on graph `g`. `cond` is `[2, T]`; the result is the
/// channels-first `[N_osc, T]` envelope node expected by
/// [`render_on`](crate::fm::render_on).
///
/// NaN activations report the zero-based conv layer index (two per block,
/// then the output layer).
pub fn decode_on<'g>(spec: &TcnSpec, config: &FmConfig, params: &Bound<'g>, cond: Var<'g>, mode: Mode) -> Result<Var<'g>> {
    spec.validate()?;
    if spec.out_channels != config.len() {
        return Err(Error::Config(format!("decoder has {} outputs for {} oscillators", spec.out_channels, config.len())));
    }
    let s = cond.shape();
    if s.len() != 2 || s[0] != spec.in_channels {
        return Err(Error::shape("decode", format!("conditioning {s:?}, expected [{}, T]", spec.in_channels)));
    }
    if let Some(v) = cond.value().data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::domain("decode", format!("conditioning value {v} outside [0, 1]")));
    }
    let mut f = Forward { spec, params, mode, layer: 0 };
    let mut x = cond;
    for b in 0..spec.blocks {
        let d = spec.dilation(b);
        let h = f.hidden(x, &format!("tcn.block{b}.conv0"), d)?;
        let h = f.hidden(h, &format!("tcn.block{b}.conv1"), d)?;
        let skip = if spec.block_input(b) != spec.hidden_channels { f.conv(x, &format!("tcn.block{b}.skip"), 1, 1)? } else { x };
        x = h.add(skip)?;
    }
    let logits = f.conv(x, "tcn.out", 1, 1)?;
    let logits = f.checked(logits)?;
    let limits = Tensor::new(vec![config.len(), 1], config.amplitude_limits(spec.i_max))?;
    logits.sigmoid().mul(cond.graph().constant(limits))
}

pub fn decode(spec: &TcnSpec, config: &FmConfig, params: &ParamSet, cond: &Conditioning, mode: Mode) -> Result<EnvelopeFrames> {
    let g = Graph::new();
    let bound = params.bind(&g, false);
    let out = decode_on(spec, config, &bound, g.constant(cond.to_channels()), mode)?;
    EnvelopeFrames::from_channels(&out.value())
}
