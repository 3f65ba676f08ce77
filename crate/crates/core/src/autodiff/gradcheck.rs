//! Finite-difference validation of the analytic gradients of every operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// The closed operator set, with the static parameters each operator takes.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Exp,
    Log,
    Abs,
    Sigmoid,
    Relu,
    CumulativeSum,
    MatMul,
    Conv1dDilated { kernel: usize, dilation: usize, causal: bool },
    LinearUpsample { factor: usize },
    StftMagnitude { window: usize, hop: usize },
    ReduceSum,
    ReduceMean,
    L2Norm,
    Dropout { p: f64, seed: u64 },
    Slice { axis: usize, start: usize, end: usize },
    Concat { axis: usize },
    ScaleShift { scale: f64, shift: f64 },
    Reshape { shape: Vec<usize> },
    CausalConvolve,
}

impl OpKind {
    /// Applies the operator to `inputs` on graph `g`.
    pub fn apply<'g>(&self, g: &'g Graph, inputs: &[Var<'g>]) -> Result<Var<'g>> {
        let arg = |i: usize| {
            inputs.get(i).copied().ok_or_else(|| Error::shape("gradient_check", format!("{self:?} needs input {i}")))
        };
        Ok(match self {
            OpKind::Add => arg(0)?.add(arg(1)?)?,
            OpKind::Sub => arg(0)?.sub(arg(1)?)?,
            OpKind::Mul => arg(0)?.mul(arg(1)?)?,
            OpKind::Div => arg(0)?.div(arg(1)?)?,
            OpKind::Neg => arg(0)?.neg(),
            OpKind::Sin => arg(0)?.sin(),
            OpKind::Exp => arg(0)?.exp(),
            OpKind::Log => arg(0)?.log()?,
            OpKind::Abs => arg(0)?.abs(),
            OpKind::Sigmoid => arg(0)?.sigmoid(),
            OpKind::Relu => arg(0)?.relu(),
            OpKind::CumulativeSum => arg(0)?.cumsum(),
            OpKind::MatMul => arg(0)?.matmul(arg(1)?)?,
            OpKind::Conv1dDilated { kernel, dilation, causal } => arg(0)?.conv1d(arg(1)?, *kernel, *dilation, *causal)?,
            OpKind::LinearUpsample { factor } => arg(0)?.upsample(*factor)?,
            OpKind::StftMagnitude { window, hop } => arg(0)?.stft_magnitude(*window, *hop)?,
            OpKind::ReduceSum => arg(0)?.sum(),
            OpKind::ReduceMean => arg(0)?.mean(),
            OpKind::L2Norm => arg(0)?.l2_norm(),
            OpKind::Dropout { p, seed } => arg(0)?.dropout(*p, *seed)?,
            OpKind::Slice { axis, start, end } => arg(0)?.slice(*axis, *start, *end)?,
            OpKind::Concat { axis } => g.concat(inputs, *axis)?,
            OpKind::ScaleShift { scale, shift } => arg(0)?.scale_shift(*scale, *shift),
            OpKind::Reshape { shape } => arg(0)?.reshape(shape)?,
            OpKind::CausalConvolve => arg(0)?.causal_convolve(arg(1)?)?,
        })
    }
}

/// Projects the operator output onto fixed pseudo-random weights so a single
/// scalar covers the full Jacobian.
fn projected(kind: &OpKind, inputs: &[Tensor], weights: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = kind.apply(&g, &vars)?.value();
    if !out.all_finite() {
        return Err(Error::NonFinite(format!("{kind:?} forward value")));
    }
    let w: Vec<f64> = match weights {
        Some(w) => w.to_vec(),
        None => projection_weights(out.numel()),
    };
    Ok((out.data().iter().zip(&w).map(|(a, b)| a * b).sum(), w))
}

fn projection_weights(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ n as u64);
    (0..n).map(|_| rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Max over every input element of `|analytic − fd| / max(|analytic|, |fd|, 1e-8)`
/// where `fd` is the central finite difference with the given step.
pub fn gradient_check(kind: &OpKind, inputs: &[Tensor], step: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::domain("gradient_check", format!("step {step} outside [1e-7, 1e-3]")));
    }
    if inputs.iter().any(|t| !t.all_finite()) {
        return Err(Error::NonFinite("gradient_check sample point".into()));
    }
    let (_, weights) = projected(kind, inputs, None)?;

    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = kind.apply(&g, &vars)?;
    let w = g.constant(Tensor::new(out.shape(), weights.clone())?);
    let loss = out.mul(w)?.sum();
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    for (idx, (input, var)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads.get(var).expect("leaf gradient");
        for j in 0..input.numel() {
            let mut shifted: Vec<Tensor> = inputs.to_vec();
            shifted[idx].data_mut()[j] += step;
            let (plus, _) = projected(kind, &shifted, Some(&weights))?;
            shifted[idx].data_mut()[j] -= 2.0 * step;
            let (minus, _) = projected(kind, &shifted, Some(&weights))?;
            let fd = (plus - minus) / (2.0 * step);
            let a = analytic.data()[j];
            let denom = a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max((a - fd).abs() / denom);
        }
    }
    Ok(worst)
}
