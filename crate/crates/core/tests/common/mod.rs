#![allow(dead_code)]

use fmresynth::autodiff::{OpKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Uniform in ±[lo, hi]: keeps samples away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// One sample point per operator in the closed set, drawn from `seed`.
pub fn op_samples(seed: u64) -> Vec<(OpKind, Vec<Tensor>)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    vec![
        (OpKind::Add, vec![normal(r, &[3, 4]), normal(r, &[3, 4])]),
        (OpKind::Add, vec![normal(r, &[3, 4]), normal(r, &[3, 1])]),
        (OpKind::Sub, vec![normal(r, &[3, 4]), normal(r, &[1, 4])]),
        (OpKind::Mul, vec![normal(r, &[3, 4]), normal(r, &[3, 4])]),
        (OpKind::Mul, vec![normal(r, &[5]), normal(r, &[1])]),
        (OpKind::Div, vec![normal(r, &[3, 4]), away_from_zero(r, &[3, 1], 0.5, 2.0)]),
        (OpKind::Neg, vec![normal(r, &[5])]),
        (OpKind::Sin, vec![normal(r, &[6])]),
        (OpKind::Exp, vec![normal(r, &[6])]),
        (OpKind::Log, vec![positive(r, &[6], 0.2, 3.0)]),
        (OpKind::Abs, vec![away_from_zero(r, &[6], 0.05, 2.0)]),
        (OpKind::Sigmoid, vec![normal(r, &[6])]),
        (OpKind::Relu, vec![away_from_zero(r, &[6], 0.05, 2.0)]),
        (OpKind::CumulativeSum, vec![normal(r, &[2, 6])]),
        (OpKind::MatMul, vec![normal(r, &[3, 4]), normal(r, &[4, 2])]),
        (OpKind::Conv1dDilated { kernel: 3, dilation: 2, causal: true }, vec![normal(r, &[1, 8]), normal(r, &[2, 3])]),
        (OpKind::Conv1dDilated { kernel: 2, dilation: 3, causal: false }, vec![normal(r, &[2, 10]), normal(r, &[3, 4])]),
        (OpKind::LinearUpsample { factor: 4 }, vec![normal(r, &[2, 5])]),
        (OpKind::StftMagnitude { window: 64, hop: 16 }, vec![normal(r, &[256])]),
        (OpKind::ReduceSum, vec![normal(r, &[3, 4])]),
        (OpKind::ReduceMean, vec![normal(r, &[3, 4])]),
        (OpKind::L2Norm, vec![normal(r, &[3, 4])]),
        (OpKind::Dropout { p: 0.5, seed }, vec![normal(r, &[20])]),
        (OpKind::Slice { axis: 1, start: 1, end: 4 }, vec![normal(r, &[3, 6])]),
        (OpKind::Concat { axis: 1 }, vec![normal(r, &[2, 3]), normal(r, &[2, 2])]),
        (OpKind::ScaleShift { scale: 1.7, shift: -0.3 }, vec![normal(r, &[5])]),
        (OpKind::Reshape { shape: vec![2, 6] }, vec![normal(r, &[3, 4])]),
        (OpKind::CausalConvolve, vec![normal(r, &[32]), normal(r, &[8])]),
    ]
}

/// Samples `seconds` of a sine at `freq` Hz and unit amplitude.
pub fn sine(freq: f64, seconds: f64, sample_rate: f64) -> Vec<f64> {
    let n = (seconds * sample_rate).round() as usize;
    (0..n).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate).sin()).collect()
}

pub fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Power-series evaluation of J_n(x), summed until terms drop below 1e-12.
pub fn bessel_series(n: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = half.powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
    let mut sum = term;
    let mut m = 0u32;
    loop {
        m += 1;
        term *= -(half * half) / (f64::from(m) * f64::from(m + n));
        sum += term;
        if term.abs() < 1e-12 && f64::from(m) > half.abs() {
            break;
        }
    }
    sum
}
