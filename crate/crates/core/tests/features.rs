mod common;

use fmresynth::features::{a_weighted_loudness, a_weighting_db, estimate_f0, hz_to_midi, normalize, FeatureTrack};
use proptest::prelude::*;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn sine_pitch_and_confidence() {
    let x = common::sine(440.0, 1.0, 16_000.0);
    let (f0, conf) = estimate_f0(&x, 16_000, 64).unwrap();
    assert_eq!(f0.len(), 250);
    let m = median(f0);
    assert!((m - 440.0).abs() <= 0.5, "median {m}");
    assert!(mean(&conf) > 0.9, "confidence {}", mean(&conf));
}

#[test]
fn noise_has_low_confidence() {
    let x = common::white_noise(16_000, 77);
    let (_, conf) = estimate_f0(&x, 16_000, 64).unwrap();
    assert!(mean(&conf) < 0.3, "confidence {}", mean(&conf));
}

#[test]
fn silence_is_unvoiced_with_zero_confidence() {
    let (f0, conf) = estimate_f0(&vec![0.0; 16_000], 16_000, 64).unwrap();
    assert!(f0.iter().all(|&f| f == 0.0));
    assert!(conf.iter().all(|&c| c == 0.0));
}

#[test]
fn rejects_empty_audio_and_wrong_rate() {
    assert!(estimate_f0(&[], 16_000, 64).is_err());
    assert!(estimate_f0(&[0.0; 2000], 44_100, 64).is_err());
    assert!(FeatureTrack::extract(&[]).is_err());
}

#[test]
fn sines_rarely_jump_octaves() {
    let mut voiced = 0usize;
    let mut octave_errors = 0usize;
    let mut f = 100.0;
    while f <= 1000.0 {
        let x: Vec<f64> = common::sine(f, 0.5, 16_000.0).iter().map(|v| 0.6 * v).collect();
        let (f0, _) = estimate_f0(&x, 16_000, 64).unwrap();
        for &e in f0.iter().filter(|&&e| e > 0.0) {
            voiced += 1;
            if (e / f).log2().abs() >= 1.0 - 1e-9 {
                octave_errors += 1;
            }
        }
        f *= 1.07;
    }
    assert!(voiced > 0);
    assert!((octave_errors as f64) < 0.02 * voiced as f64, "{octave_errors}/{voiced}");
}

#[test]
fn a_curve_reference_points() {
    assert!(a_weighting_db(1000.0).abs() < 0.01);
    assert!((a_weighting_db(100.0) + 19.1).abs() < 0.1);
}

#[test]
fn loudness_of_reference_sines() {
    let one_k = a_weighted_loudness(&common::sine(1000.0, 1.0, 16_000.0), 16_000, 64).unwrap();
    let hundred = a_weighted_loudness(&common::sine(100.0, 1.0, 16_000.0), 16_000, 64).unwrap();
    let (a, b) = (mean(&one_k), mean(&hundred));
    assert!(a.abs() <= 1.0, "1 kHz at {a} dB");
    assert!((b - a + 19.1).abs() <= 1.5, "100 Hz at {} dB relative", b - a);
    let silent = a_weighted_loudness(&vec![0.0; 4000], 16_000, 64).unwrap();
    assert!(silent.iter().all(|&d| d == -80.0));
}

#[test]
fn tracks_share_frame_count() {
    let x = common::white_noise(64_000, 3);
    let t = FeatureTrack::extract(&x).unwrap();
    assert_eq!((t.f0_hz.len(), t.confidence.len(), t.loudness_db.len()), (1000, 1000, 1000));
}

#[test]
fn normalization_examples() {
    let track = FeatureTrack { f0_hz: vec![440.0, 0.0], confidence: vec![1.0, 0.0], loudness_db: vec![-80.0, 0.0] };
    let c = normalize(&track).unwrap();
    assert!((c.pitch()[0] - 69.0 / 127.0).abs() < 1e-12);
    assert_eq!(c.pitch()[1], 0.0);
    assert_eq!(c.loudness(), &[0.0, 1.0]);
}

#[test]
fn feature_cache_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.feat");
    let t = FeatureTrack::extract(&common::sine(300.0, 0.25, 16_000.0)).unwrap();
    t.save(&path).unwrap();
    assert_eq!(FeatureTrack::load(&path).unwrap(), t);
    let mut c = t.to_container();
    c.set_meta("extractor_version", 0);
    assert!(FeatureTrack::from_container(&c).is_err());
}

proptest! {
    #[test]
    fn normalize_is_monotone_and_bounded(a in 0.0f64..5000.0, b in 0.0f64..5000.0, da in -120.0f64..20.0, db in -120.0f64..20.0) {
        let track = FeatureTrack { f0_hz: vec![a, b], confidence: vec![0.0; 2], loudness_db: vec![da, db] };
        let c = normalize(&track).unwrap();
        for v in c.pitch().iter().chain(c.loudness()) {
            prop_assert!((0.0..=1.0).contains(v));
        }
        if a <= b { prop_assert!(c.pitch()[0] <= c.pitch()[1]); }
        if da <= db { prop_assert!(c.loudness()[0] <= c.loudness()[1]); }
        prop_assert!(hz_to_midi(a.max(1e-3)) <= hz_to_midi(a.max(1e-3) + 1.0));
    }
}
