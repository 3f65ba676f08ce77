mod common;

use fmresynth::autodiff::{Graph, Tensor};
use fmresynth::dsp;
use fmresynth::reverb::{apply_reverb, apply_reverb_on, softplus, ReverbParams, ReverbVars, IR_LEN};
use fmresynth::Error;
use proptest::prelude::*;

fn impulse_at_one(decay: f64) -> ReverbParams {
    let mut ir_raw = vec![0.0; IR_LEN];
    ir_raw[1] = 1.0;
    ReverbParams { ir_raw, decay, wet_gain: 1.0 }
}

#[test]
fn zero_wet_gain_is_bit_exact() {
    let x = common::white_noise(4000, 3);
    let mut p = ReverbParams::init(9);
    p.wet_gain = 0.0;
    assert_eq!(apply_reverb(&x, &p).unwrap(), x);
}

#[test]
fn unit_impulse_at_one_is_a_scaled_delay() {
    let x = common::white_noise(3000, 4);
    let decay = 0.7;
    let y = apply_reverb(&x, &impulse_at_one(decay)).unwrap();
    let tap = (-softplus(decay) / 16_000.0).exp();
    for n in 0..x.len() {
        let prev = if n == 0 { 0.0 } else { x[n - 1] };
        assert!((y[n] - (x[n] + tap * prev)).abs() < 1e-12, "n={n}");
    }
}

#[test]
fn tap_zero_never_contributes() {
    let mut p = impulse_at_one(0.0);
    p.ir_raw[1] = 0.0;
    p.ir_raw[0] = 5.0;
    let x = common::white_noise(500, 5);
    let y = apply_reverb(&x, &p).unwrap();
    for (a, b) in x.iter().zip(&y) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn wet_gain_gradient_matches_central_differences() {
    let x = common::white_noise(2000, 6);
    let base = ReverbParams::init(2);
    let total = |gain: f64| {
        let mut p = base.clone();
        p.wet_gain = gain;
        apply_reverb(&x, &p).unwrap().iter().sum::<f64>()
    };
    for gain in [0.5, -0.3, 1.7] {
        let g = Graph::new();
        let mut p = base.clone();
        p.wet_gain = gain;
        let vars = ReverbVars::leaves(&g, &p, true);
        let audio = g.constant(Tensor::from_vec(x.clone()));
        let loss = apply_reverb_on(audio, &vars).unwrap().sum();
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get(&vars.wet_gain).unwrap().item();
        let h = 1e-5;
        let fd = (total(gain + h) - total(gain - h)) / (2.0 * h);
        assert!((analytic - fd).abs() <= 1e-4 * analytic.abs().max(1.0), "{analytic} vs {fd}");
    }
}

#[test]
fn decay_and_ir_gradients_match_central_differences() {
    let x = common::white_noise(1500, 7);
    let w = common::white_noise(1500, 8);
    let base = ReverbParams::init(3);
    let project = |p: &ReverbParams| apply_reverb(&x, p).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let g = Graph::new();
    let vars = ReverbVars::leaves(&g, &base, true);
    let audio = g.constant(Tensor::from_vec(x.clone()));
    let y = apply_reverb_on(audio, &vars).unwrap();
    let loss = y.mul(g.constant(Tensor::from_vec(w.clone()))).unwrap().sum();
    let grads = g.backward(loss).unwrap();
    let h = 1e-5;
    let (mut up, mut down) = (base.clone(), base.clone());
    up.decay += h;
    down.decay -= h;
    let fd = (project(&up) - project(&down)) / (2.0 * h);
    let an = grads.get(&vars.decay).unwrap().item();
    assert!((an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-3), "decay {an} vs {fd}");
    for k in [1, 17, 900] {
        let (mut up, mut down) = (base.clone(), base.clone());
        up.ir_raw[k] += h;
        down.ir_raw[k] -= h;
        let fd = (project(&up) - project(&down)) / (2.0 * h);
        let an = grads.get(&vars.ir_raw).unwrap().data()[k];
        assert!((an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-3), "ir[{k}] {an} vs {fd}");
    }
}

#[test]
fn fft_and_direct_convolution_agree_on_one_second() {
    let x = common::white_noise(16_000, 10);
    let wet = ReverbParams::init(11).wet();
    let fast = dsp::fft_convolve(&x, &wet, x.len());
    let slow = dsp::direct_convolve(&x, &wet, x.len());
    let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() <= 1e-6 * scale);
    }
}

#[test]
fn non_finite_params_are_rejected() {
    let mut p = ReverbParams::init(1);
    p.decay = f64::NAN;
    assert!(matches!(apply_reverb(&[1.0, 2.0], &p), Err(Error::NonFinite(_))));
    let mut p = ReverbParams::init(1);
    p.ir_raw[5] = f64::INFINITY;
    assert!(matches!(apply_reverb(&[1.0, 2.0], &p), Err(Error::NonFinite(_))));
    assert!(apply_reverb(&[], &ReverbParams::init(1)).is_err());
}

#[test]
fn init_is_seeded_and_round_trips_through_params() {
    let a = ReverbParams::init(5);
    assert_eq!(a, ReverbParams::init(5));
    assert_ne!(a, ReverbParams::init(6));
    assert!((softplus(a.decay) - 4.0).abs() < 1e-12);
    assert_eq!(ReverbParams::from_params(&a.to_params()).unwrap(), a);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reverb_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let p = ReverbParams::init(seed);
        let x = common::white_noise(800, seed + 1);
        let y = common::white_noise(800, seed + 2);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = apply_reverb(&mix, &p).unwrap();
        let (rx, ry) = (apply_reverb(&x, &p).unwrap(), apply_reverb(&y, &p).unwrap());
        let scale = lhs.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * rx[i] + b * ry[i])).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn reverb_is_causal(seed in 0u64..1000, at in 0usize..600) {
        let p = ReverbParams::init(seed);
        let x = common::white_noise(600, seed);
        let mut x2 = x.clone();
        x2[at] += 1.0;
        let (y, y2) = (apply_reverb(&x, &p).unwrap(), apply_reverb(&x2, &p).unwrap());
        // FFT round-off reaches every sample, so compare at round-off level
        for n in 0..at {
            prop_assert!((y[n] - y2[n]).abs() < 1e-12);
        }
        prop_assert!((y2[at] - y[at] - 1.0).abs() < 1e-9);
    }
}
