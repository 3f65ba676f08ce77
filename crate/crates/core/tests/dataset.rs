mod common;

use std::collections::HashSet;
use std::path::Path;

use fmresynth::dataset::{
    assign_splits, crop, ingest, lint, load_split, minibatches, resample, split_counts, strip_silence, synth_corpus, CorpusManifest,
    Instrument, Split, CLIP_FRAMES, CLIP_SAMPLES,
};
use fmresynth::fm::patches;
use fmresynth::wav;
use proptest::prelude::*;

fn tone(freq: f64, seconds: f64, rate: u32, amp: f64) -> Vec<f64> {
    common::sine(freq, seconds, f64::from(rate)).iter().map(|v| amp * v).collect()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("clips")] {
        for e in std::fs::read_dir(&sub).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn split_rule_examples() {
    assert_eq!(split_counts(3), (2, 0, 1));
    assert_eq!(split_counts(8), (6, 1, 1));
    assert_eq!(split_counts(33), (24, 4, 5));
}

#[test]
fn confidence_thresholds() {
    assert!(Instrument::Flute.confidence_threshold() <= 0.82);
    assert!(Instrument::Violin.confidence_threshold() > 0.82);
    assert_eq!(Instrument::Violin.confidence_threshold(), 0.85);
    assert_eq!(Instrument::Trumpet.confidence_threshold(), 0.85);
    assert_eq!(Instrument::Flute.confidence_threshold(), 0.80);
}

#[test]
fn minibatch_examples() {
    let b = minibatches(33, 16, 7, 0).unwrap();
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 16, 1]);
    let mut all: Vec<usize> = b.concat();
    all.sort_unstable();
    assert_eq!(all, (0..33).collect::<Vec<_>>());
    assert_eq!(b, minibatches(33, 16, 7, 0).unwrap());
    let orders: HashSet<Vec<Vec<usize>>> = (0..10).map(|e| minibatches(33, 16, 7, e).unwrap()).collect();
    assert_eq!(orders.len(), 10);
    assert!(minibatches(0, 16, 7, 0).is_err());
}

#[test]
fn resampler_keeps_passband_and_removes_alias_band() {
    let x = tone(1000.0, 1.0, 44_100, 0.5);
    let y = resample(&x, 44_100, 16_000);
    assert_eq!(y.len(), 16_000);
    let reference = tone(1000.0, 1.0, 16_000, 0.5);
    for i in 200..15_800 {
        assert!((y[i] - reference[i]).abs() < 2e-3, "sample {i}: {} vs {}", y[i], reference[i]);
    }
    let high = resample(&tone(10_000.0, 0.5, 44_100, 0.5), 44_100, 16_000);
    let rms = (high[200..7800].iter().map(|v| v * v).sum::<f64>() / 7600.0).sqrt();
    assert!(rms < 1e-3, "alias rms {rms}");
    assert_eq!(resample(&x, 44_100, 44_100), x);
}

#[test]
fn silence_stripping_and_cropping() {
    let mut x = vec![0.0; 20_000];
    x.extend(tone(300.0, 1.0, 16_000, 0.5));
    x.extend(vec![1e-4; 20_000]);
    let y = strip_silence(&x, 1024, 512, -45.0);
    assert!(y.len() >= 16_000 && y.len() <= 16_000 + 2048, "{}", y.len());
    assert!(strip_silence(&vec![0.0; 50_000], 1024, 512, -45.0).is_empty());
    let clips = crop(&vec![0.1; CLIP_SAMPLES * 2 + 100]);
    assert_eq!(clips.len(), 2);
    assert!(clips.iter().all(|c| c.len() == CLIP_SAMPLES));
}

#[test]
fn ingest_twelve_seconds_at_a_foreign_rate() {
    let input = tempfile::tempdir().unwrap();
    // light vibrato keeps the tone realistic without hurting pitch confidence
    let x: Vec<f64> = (0..12 * 44_100)
        .map(|n| {
            let t = n as f64 / 44_100.0;
            0.5 * (2.0 * std::f64::consts::PI * (330.0 * t + 0.5 * (2.0 * std::f64::consts::PI * 5.0 * t).sin())).sin()
        })
        .collect();
    let spec = hound::WavSpec { channels: 1, sample_rate: 44_100, bits_per_sample: 24, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(input.path().join("a_voiced.wav"), spec).unwrap();
    for v in &x {
        w.write_sample((v * 8_388_607.0).round() as i32).unwrap();
    }
    w.finalize().unwrap();
    wav::write_pcm16(&input.path().join("b_silent.wav"), &vec![0.0; 100_000], 16_000).unwrap();
    std::fs::write(input.path().join("c_broken.wav"), b"not a wave file").unwrap();

    let out = tempfile::tempdir().unwrap();
    let m = ingest(input.path(), Instrument::Violin, 3, out.path()).unwrap();
    assert_eq!(m.records.len(), 3);
    assert_eq!(m.counts(), (2, 0, 1));
    assert!(m.records.iter().all(|r| r.source_file == "a_voiced.wav" && r.mean_confidence >= 0.85));
    assert!(lint(out.path()).unwrap().is_empty());
    let train = load_split(out.path(), &m, Split::Train).unwrap();
    assert!(train.iter().all(|c| c.audio.len() == CLIP_SAMPLES && c.features.frames() == CLIP_FRAMES));

    let again = tempfile::tempdir().unwrap();
    ingest(input.path(), Instrument::Violin, 3, again.path()).unwrap();
    assert_eq!(dir_bytes(out.path()), dir_bytes(again.path()));
}

#[test]
fn ingest_without_survivors_fails() {
    let input = tempfile::tempdir().unwrap();
    wav::write_pcm16(&input.path().join("silent.wav"), &vec![0.0; 100_000], 16_000).unwrap();
    let out = tempfile::tempdir().unwrap();
    assert!(ingest(input.path(), Instrument::Flute, 1, out.path()).is_err());
    assert!(ingest(&input.path().join("nope"), Instrument::Flute, 1, out.path()).is_err());
}

#[test]
fn synthetic_corpus_contract() {
    let cfg = patches::builtin("violin-2x2").unwrap();
    let a = tempfile::tempdir().unwrap();
    let m = synth_corpus(&cfg, 8, 11, a.path()).unwrap();
    assert_eq!(m.records.len(), 8);
    assert_eq!(m.counts(), (6, 1, 1));
    let mut clips = Vec::new();
    for s in Split::ALL {
        clips.extend(load_split(a.path(), &m, s).unwrap());
    }
    for c in &clips {
        assert_eq!(c.audio.len(), CLIP_SAMPLES);
        let truth = c.truth.as_ref().unwrap();
        assert_eq!((truth.envelopes.frames(), truth.envelopes.oscillators()), (CLIP_FRAMES, 4));
    }
    let problems = lint(a.path()).unwrap();
    assert!(problems.is_empty(), "{problems:?}");

    let b = tempfile::tempdir().unwrap();
    synth_corpus(&cfg, 8, 11, b.path()).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));

    // the generator's f0 is the oracle; frames whose window straddles a jump are skipped
    let (mut checked, mut bad) = (0, 0);
    for c in &clips {
        let truth = &c.truth.as_ref().unwrap().f0_hz;
        for t in 8..CLIP_FRAMES - 8 {
            let steady = truth[t - 8..=t + 8].iter().all(|&f| f == truth[t]);
            let est = c.features.f0_hz[t];
            if steady && est > 0.0 {
                checked += 1;
                if (est - truth[t]).abs() > 0.01 * truth[t] {
                    bad += 1;
                }
            }
        }
    }
    assert!(checked > 4000, "only {checked} voiced steady frames");
    assert_eq!(bad, 0, "{bad} of {checked} frames off by more than 1%");
}

#[test]
fn lint_reports_damage() {
    let cfg = patches::builtin("violin-2").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = synth_corpus(&cfg, 2, 5, dir.path()).unwrap();
    std::fs::write(dir.path().join(&m.records[0].audio), [0u8; 400]).unwrap();
    let problems = lint(dir.path()).unwrap();
    assert!(problems.iter().any(|p| p.contains(&m.records[0].id) && p.contains("samples")), "{problems:?}");
    let mut m2 = CorpusManifest::load(dir.path()).unwrap();
    m2.records[1].split = Split::Valid;
    m2.records[0].split = Split::Valid;
    m2.save(dir.path()).unwrap();
    assert!(lint(dir.path()).unwrap().iter().any(|p| p.contains("split counts")));
}

proptest! {
    #[test]
    fn splits_are_disjoint_and_exhaustive(n in 1usize..200, seed in any::<u64>()) {
        let s = assign_splits(n, seed);
        prop_assert_eq!(s.clone(), assign_splits(n, seed));
        let count = |k| s.iter().filter(|&&x| x == k).count();
        prop_assert_eq!((count(Split::Train), count(Split::Valid), count(Split::Test)), split_counts(n));
    }
}
