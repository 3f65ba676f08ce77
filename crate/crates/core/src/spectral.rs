//! Short-time magnitude spectra and the multi-scale spectral loss.
//!
//! Both L1 terms are element sums over every frame and bin, not means.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MssSpec {
    pub windows: Vec<usize>,
    pub log_epsilon: f64,
}

impl Default for MssSpec {
    fn default() -> Self {
        MssSpec { windows: vec![64, 128, 256, 512, 1024, 2048], log_epsilon: 1e-6 }
    }
}

impl MssSpec {
    pub fn new(windows: Vec<usize>, log_epsilon: f64) -> Result<Self> {
        let spec = MssSpec { windows, log_epsilon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn hop(window: usize) -> usize {
        window / 4
    }

    pub fn max_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::Config("no analysis windows".into()));
        }
        if self.windows.iter().any(|&w| w < 4 || w % 4 != 0) {
            return Err(Error::Config(format!("windows {:?} must be positive multiples of 4", self.windows)));
        }
        if self.windows.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Config(format!("windows {:?} must be strictly ascending", self.windows)));
        }
        if !(self.log_epsilon > 0.0 && self.log_epsilon.is_finite()) {
            return Err(Error::Config(format!("log epsilon {} must be positive", self.log_epsilon)));
        }
        Ok(())
    }
}

/// `[frames, window/2 + 1]` magnitudes of a plain signal.
pub fn stft_magnitude(audio: &[f64], window: usize, hop: usize) -> Result<Tensor> {
    if audio.is_empty() {
        return Err(Error::shape("stft_magnitude", "empty signal"));
    }
    let g = Graph::new();
    let x = g.constant(Tensor::from_vec(audio.to_vec()));
    Ok((*x.stft_magnitude(window, hop)?.value()).clone())
}

/// Multi-scale spectral loss between two `[L]` nodes. Differentiable in both.
pub fn mss_loss_on<'g>(target: Var<'g>, prediction: Var<'g>, spec: &MssSpec) -> Result<Var<'g>> {
    spec.validate()?;
    let (lt, lp) = (target.shape(), prediction.shape());
    if lt != lp {
        return Err(Error::shape("mss_loss", format!("target {lt:?} vs prediction {lp:?}")));
    }
    let mut total: Option<Var<'g>> = None;
    for &w in &spec.windows {
        let hop = MssSpec::hop(w);
        let s = target.stft_magnitude(w, hop)?;
        let s_hat = prediction.stft_magnitude(w, hop)?;
        let lin = s.sub(s_hat)?.abs().sum();
        let log_s = s.scale_shift(1.0, spec.log_epsilon).log()?;
        let log_hat = s_hat.scale_shift(1.0, spec.log_epsilon).log()?;
        let term = lin.add(log_s.sub(log_hat)?.abs().sum())?;
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    Ok(total.expect("validated spec has a window"))
}

pub fn mss_loss(target: &[f64], prediction: &[f64], spec: &MssSpec) -> Result<f64> {
    if target.len() != prediction.len() {
        return Err(Error::shape("mss_loss", format!("lengths {} and {}", target.len(), prediction.len())));
    }
    if target.len() < spec.max_window() {
        return Err(Error::shape("mss_loss", format!("length {} shorter than window {}", target.len(), spec.max_window())));
    }
    let g = Graph::new();
    let t = g.constant(Tensor::from_vec(target.to_vec()));
    let p = g.constant(Tensor::from_vec(prediction.to_vec()));
    Ok(mss_loss_on(t, p, spec)?.value().item())
}
