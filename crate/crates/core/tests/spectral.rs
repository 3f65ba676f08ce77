mod common;

use fmresynth::autodiff::{Graph, Tensor};
use fmresynth::dsp;
use fmresynth::spectral::{mss_loss, mss_loss_on, stft_magnitude, MssSpec};

#[test]
fn silence_has_zero_magnitude() {
    let s = stft_magnitude(&vec![0.0; 16_000], 1024, 256).unwrap();
    assert_eq!(s.shape(), &[(16_000 - 1024) / 256 + 1, 513]);
    assert!(s.data().iter().all(|&v| v == 0.0));
}

#[test]
fn sine_peaks_at_expected_bin() {
    let x = common::sine(440.0, 1.0, 16_000.0);
    let s = stft_magnitude(&x, 2048, 512).unwrap();
    let bins = 1025;
    for frame in s.data().chunks(bins) {
        let argmax = (0..bins).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
        assert_eq!(argmax, (440.0f64 * 2048.0 / 16_000.0).round() as usize);
    }
}

#[test]
fn frame_energy_follows_parseval() {
    let x = common::white_noise(8192, 21);
    let (w, hop) = (512, 128);
    let s = stft_magnitude(&x, w, hop).unwrap();
    let win = dsp::hann(w);
    let bins = w / 2 + 1;
    for (f, frame) in s.data().chunks(bins).enumerate() {
        // one-sided spectrum: interior bins stand for two conjugate bins
        let spectral: f64 = frame.iter().enumerate().map(|(k, m)| if k == 0 || k == w / 2 { m * m } else { 2.0 * m * m }).sum::<f64>() / w as f64;
        let direct: f64 = x[f * hop..f * hop + w].iter().zip(&win).map(|(v, h)| (v * h).powi(2)).sum();
        assert!((spectral - direct).abs() <= 0.01 * direct, "frame {f}: {spectral} vs {direct}");
    }
}

#[test]
fn short_signals_are_rejected() {
    assert!(stft_magnitude(&[0.0; 100], 128, 32).is_err());
    let spec = MssSpec::default();
    assert!(mss_loss(&[0.0; 1000], &[0.0; 1000], &spec).is_err());
    assert!(mss_loss(&[0.0; 4096], &[0.0; 4000], &spec).is_err());
}

#[test]
fn loss_is_zero_on_identity_and_symmetric() {
    let spec = MssSpec::default();
    let x = common::white_noise(8000, 1);
    let y = common::sine(300.0, 0.5, 16_000.0);
    assert_eq!(mss_loss(&x, &x, &spec).unwrap(), 0.0);
    let (a, b) = (mss_loss(&x, &y, &spec).unwrap(), mss_loss(&y, &x, &spec).unwrap());
    assert!(a > 0.0);
    assert_eq!(a, b);
}

#[test]
fn loss_orders_silence_below_half_amplitude() {
    let spec = MssSpec::default();
    let x = common::sine(440.0, 1.0, 16_000.0);
    let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
    let silence = vec![0.0; x.len()];
    assert!(mss_loss(&x, &silence, &spec).unwrap() > mss_loss(&x, &half, &spec).unwrap());
}

#[test]
fn one_sample_shift_barely_moves_the_loss_on_noise() {
    let spec = MssSpec::default();
    let long = common::white_noise(16_001, 5);
    let reference = common::white_noise(16_000, 6);
    let a = mss_loss(&reference, &long[..16_000], &spec).unwrap();
    let b = mss_loss(&reference, &long[1..], &spec).unwrap();
    assert!((a - b).abs() < 0.05 * a, "{a} vs {b}");
}

#[test]
fn loss_gradient_matches_central_differences() {
    let spec = MssSpec::new(vec![64, 128], 1e-6).unwrap();
    for seed in 0..3 {
        let target = common::white_noise(512, 100 + seed);
        let pred = common::white_noise(512, 200 + seed);
        let g = Graph::new();
        let t = g.constant(Tensor::from_vec(target.clone()));
        let p = g.param(Tensor::from_vec(pred.clone()));
        let grads = g.backward(mss_loss_on(t, p, &spec).unwrap()).unwrap();
        let an = grads.get(&p).unwrap().data().to_vec();
        let h = 1e-6;
        // normalized by the largest gradient, as in `gradient_check`
        let scale = an.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for i in (0..512).step_by(7) {
            let (mut up, mut down) = (pred.clone(), pred.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (mss_loss(&target, &up, &spec).unwrap() - mss_loss(&target, &down, &spec).unwrap()) / (2.0 * h);
            worst = worst.max((an[i] - fd).abs() / scale);
        }
        assert!(worst < 1e-4, "seed {seed}: relative error {worst}");
    }
}

#[test]
fn spec_validation() {
    assert!(MssSpec::new(vec![128, 64], 1e-6).is_err());
    assert!(MssSpec::new(vec![], 1e-6).is_err());
    assert!(MssSpec::new(vec![64], 0.0).is_err());
    assert_eq!(MssSpec::default().windows.iter().map(|&w| MssSpec::hop(w)).collect::<Vec<_>>(), vec![16, 32, 64, 128, 256, 512]);
}
