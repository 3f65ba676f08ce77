mod common;

use fmresynth::dsp;
use fmresynth::fm::{bessel_j, patches, render, sideband_spectrum, EnvelopeFrames, FmConfig, RenderSpec};
use fmresynth::Error;
use proptest::prelude::*;
use rustfft::num_complex::Complex64;

const PAIR: &str = r#"
name = "pair"
source_patch = "test"

[[oscillator]]
ratio = "10.0"
carrier = true

[[oscillator]]
ratio = "1.0"
modulates = [1]
"#;

const SINGLE: &str = "name = \"single\"\n[[oscillator]]\nratio = \"10.0\"\ncarrier = true\n";

fn magnitude_spectrum(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dsp::fft(&mut buf);
    buf[..x.len() / 2 + 1].iter().map(|c| c.norm()).collect()
}

fn constant_env(levels: &[f64], frames: usize) -> EnvelopeFrames {
    let data = levels.iter().copied().cycle().take(frames * levels.len()).collect();
    EnvelopeFrames::new(frames, levels.len(), data).unwrap()
}

#[test]
fn unmodulated_carrier_is_a_pure_sine() {
    let cfg = FmConfig::parse("name = \"s\"\n[[oscillator]]\nratio = \"1.0\"\ncarrier = true\n").unwrap();
    let spec = RenderSpec::new(vec![440.0; 250], 2.0);
    let audio = render(&cfg, &constant_env(&[1.0], 250), &spec).unwrap();
    assert_eq!(audio.len(), 16_000);
    let mag = magnitude_spectrum(&audio);
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let argmax = mag.iter().position(|&m| m == peak).unwrap();
    assert_eq!(argmax, 440);
    for (bin, &m) in mag.iter().enumerate() {
        if bin != 440 {
            assert!(20.0 * (m / peak).log10() <= -60.0, "bin {bin} at {} dB", 20.0 * (m / peak).log10());
        }
    }
}

#[test]
fn silent_modulator_is_bit_identical_to_lone_carrier() {
    let f0: Vec<f64> = (0..250).map(|i| 180.0 + i as f64 * 0.4).collect();
    let spec = RenderSpec::new(f0, 2.0);
    let pair = render(&FmConfig::parse(PAIR).unwrap(), &constant_env(&[0.8, 0.0], 250), &spec).unwrap();
    let single = render(&FmConfig::parse(SINGLE).unwrap(), &constant_env(&[0.8], 250), &spec).unwrap();
    assert_eq!(pair, single);
}

#[test]
fn sidebands_follow_bessel_amplitudes() {
    // f0 = 200 Hz: carrier 10.0 → 2 kHz, modulator 1.0 → 200 Hz
    let spec = RenderSpec::new(vec![200.0; 250], 2.0);
    let cfg = FmConfig::parse(PAIR).unwrap();
    for index in [0.5, 1.0, 1.5] {
        let audio = render(&cfg, &constant_env(&[1.0, index], 250), &spec).unwrap();
        let mag = magnitude_spectrum(&audio);
        let norm = audio.len() as f64 / 2.0;
        for n in 0..=2i32 {
            let expect = common::bessel_series(n as u32, index).abs();
            for bin in [2000 + 200 * n, 2000 - 200 * n] {
                let got = mag[bin as usize] / norm;
                assert!((got - expect).abs() <= 0.01 * expect, "I={index} n={n} bin {bin}: {got} vs {expect}");
            }
        }
    }
}

#[test]
fn sideband_values_at_unit_index() {
    let s = sideband_spectrum(1.0, 2);
    let centre: Vec<f64> = s.iter().filter(|(n, _)| *n >= 0).map(|(_, v)| *v).collect();
    for (got, want) in centre.iter().zip([0.76520, 0.44005, 0.11490]) {
        assert!((got - want).abs() < 5e-6, "{got} vs {want}");
    }
    for (n, v) in &s {
        let oracle = common::bessel_series(n.unsigned_abs(), 1.0);
        let oracle = if *n < 0 && n % 2 != 0 { -oracle } else { oracle };
        assert!((v - oracle).abs() < 1e-12);
    }
}

#[test]
fn bessel_matches_power_series_up_to_sixteen() {
    for n in 0..12u32 {
        let mut x = -16.0;
        while x <= 16.0 {
            let err = (bessel_j(n, x) - common::bessel_series(n, x)).abs();
            assert!(err < 1e-10, "J_{n}({x}) off by {err}");
            x += 0.25;
        }
    }
}

#[test]
fn first_zero_of_j0() {
    let (mut lo, mut hi) = (2.0, 3.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if common::bessel_series(0, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((lo - 2.4048).abs() < 1e-4);
    assert!(bessel_j(0, 2.4048).abs() < 1e-3);
    assert!(bessel_j(0, lo).abs() < 1e-12);
}

#[test]
fn first_sideband_rises_below_monotonic_limit() {
    let grid: Vec<f64> = (0..=18).map(|i| i as f64 * 0.1).collect();
    for w in grid.windows(2) {
        assert!(bessel_j(1, w[1]) > bessel_j(1, w[0]));
    }
}

#[test]
fn render_validates_inputs() {
    let cfg = FmConfig::parse(PAIR).unwrap();
    let spec = RenderSpec::new(vec![200.0; 10], 2.0);
    match render(&cfg, &constant_env(&[1.0, 0.5], 12), &spec) {
        Err(Error::FrameCount { expected: 10, got: 12 }) => {}
        other => panic!("{other:?}"),
    }
    match render(&cfg, &constant_env(&[1.0, 2.5], 10), &spec) {
        Err(Error::EnvelopeBounds { channel: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
    match render(&cfg, &constant_env(&[1.2, 0.5], 10), &spec) {
        Err(Error::EnvelopeBounds { channel: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(render(&cfg, &constant_env(&[1.0], 10), &spec).is_err());
}

#[test]
fn unvoiced_frames_render_silence() {
    let cfg = FmConfig::parse(PAIR).unwrap();
    let spec = RenderSpec::new(vec![0.0; 20], 2.0);
    let audio = render(&cfg, &constant_env(&[1.0, 2.0], 20), &spec).unwrap();
    assert!(audio.iter().all(|&v| v == 0.0));
}

#[test]
fn total_power_does_not_depend_on_index() {
    // carrier 3 kHz, modulator 100 Hz: sidebands stay clear of DC and Nyquist
    let cfg = FmConfig::parse(&PAIR.replace("10.0", "30.0")).unwrap();
    let spec = RenderSpec::new(vec![100.0; 500], 4.0 * std::f64::consts::PI);
    let power = |i: f64| {
        let y = render(&cfg, &constant_env(&[1.0, i], 500), &spec).unwrap();
        y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64
    };
    let base = power(0.0);
    for i in [0.3, 1.0, 1.83, 3.0, 6.0, 4.0 * std::f64::consts::PI] {
        let p = power(i);
        assert!((p - base).abs() < 0.01 * base, "I={i}: {p} vs {base}");
    }
}

#[test]
fn one_decimal_ratios_give_harmonic_spectra() {
    let cfg = patches::builtin("violin").unwrap();
    // moderate indices keep the spectrum below Nyquist, so no aliased partials
    let spec = RenderSpec::new(vec![110.0; 250], 2.0);
    let env = constant_env(&[0.9, 1.0, 0.7, 0.5, 0.3, 0.2], 250);
    let audio = render(&cfg, &env, &spec).unwrap();
    let mag = magnitude_spectrum(&audio);
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    for bin in 1..mag.len() - 1 {
        let local_peak = mag[bin] > mag[bin - 1] && mag[bin] >= mag[bin + 1];
        if local_peak && mag[bin] > peak * 1e-3 {
            let off = (bin as f64 / 11.0 - (bin as f64 / 11.0).round()).abs() * 11.0;
            assert!(off <= 1.0, "peak at {bin} Hz is off the 11 Hz grid");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_is_bounded_and_pure(
        levels in proptest::collection::vec(0.0f64..1.0, 6),
        f0 in 50.0f64..900.0,
        i_max in prop_oneof![Just(2.0), Just(std::f64::consts::TAU), Just(4.0 * std::f64::consts::PI)],
    ) {
        let cfg = patches::builtin("trumpet").unwrap();
        let limits = cfg.amplitude_limits(i_max);
        let env: Vec<f64> = levels.iter().zip(&limits).map(|(l, m)| l * m).collect();
        let spec = RenderSpec::new(vec![f0; 40], i_max);
        let a = render(&cfg, &constant_env(&env, 40), &spec).unwrap();
        let b = render(&cfg, &constant_env(&env, 40), &spec).unwrap();
        prop_assert!(a.iter().all(|v| v.abs() <= 1.0));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn config_text_round_trips(ratios in proptest::collection::vec(1u32..200, 1..=6)) {
        let n = ratios.len();
        let mut doc = String::from("name = \"gen\"\nsource_patch = \"p\"\n");
        for (i, r) in ratios.iter().enumerate() {
            let carrier = i == 0;
            let modulates = if carrier { String::new() } else { i.to_string() };
            doc.push_str(&format!("[[oscillator]]\nratio = \"{}.{}\"\ncarrier = {carrier}\nmodulates = [{modulates}]\n", r / 10, r % 10));
        }
        let cfg = FmConfig::parse(&doc).unwrap();
        prop_assert_eq!(cfg.len(), n);
        let again = FmConfig::parse(&cfg.to_toml()).unwrap();
        prop_assert_eq!(cfg.to_toml(), again.to_toml());
        prop_assert_eq!(cfg, again);
    }
}
