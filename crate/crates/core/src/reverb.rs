//! Trainable one-second room response added on top of the dry signal.
//!
//! The effective impulse response is
//! `wet[n] = wet_gain · ir_raw[n] · exp(−softplus(decay) · n / sr)` with
//! `wet[0] = 0`, and the output is `audio + (wet ⊛ audio)` truncated to the
//! input length.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::fm::SAMPLE_RATE;

pub const IR_LEN: usize = SAMPLE_RATE as usize;

const IR_RAW: &str = "reverb.ir_raw";
const DECAY: &str = "reverb.decay";
const WET_GAIN: &str = "reverb.wet_gain";

#[derive(Clone, Debug, PartialEq)]
pub struct ReverbParams {
    pub ir_raw: Vec<f64>,
    pub decay: f64,
    pub wet_gain: f64,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 { x } else { x.exp().ln_1p() }
}

impl ReverbParams {
    /// Noise IR at 1e-3 scale, decay rate ≈ 4 per second, wet gain 0.5.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ir_raw = (0..IR_LEN).map(|_| 1e-3 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        ReverbParams { ir_raw, decay: (4f64.exp() - 1.0).ln(), wet_gain: 0.5 }
    }

    fn check(&self) -> Result<()> {
        if self.ir_raw.len() != IR_LEN {
            return Err(Error::shape("reverb", format!("impulse response of {} samples, expected {IR_LEN}", self.ir_raw.len())));
        }
        if !(self.decay.is_finite() && self.wet_gain.is_finite() && self.ir_raw.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("reverb parameters".into()));
        }
        Ok(())
    }

    /// The effective impulse response.
    pub fn wet(&self) -> Vec<f64> {
        let rate = softplus(self.decay);
        let sr = f64::from(SAMPLE_RATE);
        let mut wet: Vec<f64> =
            self.ir_raw.iter().enumerate().map(|(n, r)| self.wet_gain * r * (-rate * n as f64 / sr).exp()).collect();
        wet[0] = 0.0;
        wet
    }

    pub fn to_params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        set.insert(IR_RAW, Tensor::from_vec(self.ir_raw.clone())).expect("fresh set");
        set.insert(DECAY, Tensor::scalar(self.decay)).expect("fresh set");
        set.insert(WET_GAIN, Tensor::scalar(self.wet_gain)).expect("fresh set");
        set
    }

    pub fn from_params(set: &ParamSet) -> Result<Self> {
        let p = ReverbParams {
            ir_raw: set.require(IR_RAW)?.data().to_vec(),
            decay: set.require(DECAY)?.item(),
            wet_gain: set.require(WET_GAIN)?.item(),
        };
        p.check()?;
        Ok(p)
    }
}

/// Reverb handles on a graph, looked up from a bound parameter set.
#[derive(Clone, Copy)]
pub struct ReverbVars<'g> {
    pub ir_raw: Var<'g>,
    pub decay: Var<'g>,
    pub wet_gain: Var<'g>,
}

impl<'g> ReverbVars<'g> {
    pub fn from_bound(bound: &crate::autodiff::Bound<'g>) -> Result<Self> {
        Ok(ReverbVars { ir_raw: bound.get(IR_RAW)?, decay: bound.get(DECAY)?, wet_gain: bound.get(WET_GAIN)? })
    }

    pub fn leaves(g: &'g Graph, params: &ReverbParams, requires_grad: bool) -> Self {
        ReverbVars {
            ir_raw: g.leaf(Tensor::from_vec(params.ir_raw.clone()), requires_grad),
            decay: g.leaf(Tensor::scalar(params.decay), requires_grad),
            wet_gain: g.leaf(Tensor::scalar(params.wet_gain), requires_grad),
        }
    }

    /// Effective impulse response as a `[IR_LEN]` node.
    pub fn wet(&self) -> Result<Var<'g>> {
        let g = self.ir_raw.graph();
        if self.ir_raw.shape() != [IR_LEN] {
            return Err(Error::shape("reverb", format!("impulse response {:?}, expected [{IR_LEN}]", self.ir_raw.shape())));
        }
        let finite = [self.ir_raw, self.decay, self.wet_gain].iter().all(|v| v.value().all_finite());
        if !finite {
            return Err(Error::NonFinite("reverb parameters".into()));
        }
        let sr = f64::from(SAMPLE_RATE);
        let time = g.constant(Tensor::from_vec((0..IR_LEN).map(|n| n as f64 / sr).collect()));
        let mut gate = vec![1.0; IR_LEN];
        gate[0] = 0.0;
        let gate = g.constant(Tensor::from_vec(gate));
        let rate = self.decay.exp().scale_shift(1.0, 1.0).log()?;
        let envelope = time.mul(rate)?.neg().exp();
        self.ir_raw.mul(envelope)?.mul(gate)?.mul(self.wet_gain)
    }
}

/// `audio + wet ⊛ audio` for a `[L]` signal node.
pub fn apply_reverb_on<'g>(audio: Var<'g>, vars: &ReverbVars<'g>) -> Result<Var<'g>> {
    if audio.shape().len() != 1 {
        return Err(Error::shape("reverb", format!("expected a [L] signal, got {:?}", audio.shape())));
    }
    let wet = vars.wet()?;
    audio.add(audio.causal_convolve(wet)?)
}

pub fn apply_reverb(audio: &[f64], params: &ReverbParams) -> Result<Vec<f64>> {
    if audio.is_empty() {
        return Err(Error::shape("reverb", "empty signal"));
    }
    params.check()?;
    let g = Graph::new();
    let vars = ReverbVars::leaves(&g, params, false);
    let x = g.constant(Tensor::from_vec(audio.to_vec()));
    Ok(apply_reverb_on(x, &vars)?.value().data().to_vec())
}
