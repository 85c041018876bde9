//! Generator and augmentation statistics checked against direct computations.

use std::time::Instant;

use eegtext_core::cape::{ChannelId, Montage, ReferenceType, STANDARD_19};
use eegtext_core::dcp::{apply_channel_removal, RemovalPolicy};
use eegtext_core::synthdata::{default_effects, generate_corpus, Band, GeneratorConfig, Sample, SignalEffect, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const TEMPORAL: [&str; 4] = ["T3", "T4", "T5", "T6"];

/// Power of the 2-4 Hz band by a direct DFT over the matching bins.
fn slow_band_power(x: &[f64], sample_rate: f64) -> f64 {
    let n = x.len();
    let mut power = 0.0;
    for k in 1..n / 2 {
        let f = k as f64 * sample_rate / n as f64;
        if !(2.0..=4.0).contains(&f) {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let a = std::f64::consts::TAU * (k * t) as f64 / n as f64;
            re += v * a.cos();
            im -= v * a.sin();
        }
        power += re * re + im * im;
    }
    power
}

/// Probability that a random positive outranks a random negative, ties halved.
fn rank_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for q in neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn slow_band_effect_is_recoverable_from_band_power() {
    // other tasks keep zero-gain entries so the slow band carries one label only
    let mut effects = default_effects(0.0);
    effects.retain(|e| e.task != Task::Pathological);
    for (value, gain) in [("abnormal", 0.5), ("normal", 0.0)] {
        effects.push(SignalEffect {
            task: Task::Pathological,
            value: value.into(),
            band: Band::Delta,
            electrodes: TEMPORAL.iter().map(|s| s.to_string()).collect(),
            gain,
        });
    }
    let config = GeneratorConfig {
        n_subjects: 160,
        effects: Some(effects),
        ..GeneratorConfig::default()
    };
    let corpus = generate_corpus(&config).unwrap();
    let feature = |s: &Sample| -> f64 {
        TEMPORAL
            .iter()
            .map(|n| {
                slow_band_power(
                    s.signal.channel_row(&ChannelId::unipolar(n).unwrap()).unwrap(),
                    config.sample_rate,
                )
            })
            .sum()
    };
    let all: Vec<&Sample> = corpus.train.iter().chain(&corpus.val).chain(&corpus.test).collect();
    let pos: Vec<f64> = all
        .iter()
        .filter(|s| s.labels.pathological == "abnormal")
        .map(|s| feature(s))
        .collect();
    let neg: Vec<f64> = all
        .iter()
        .filter(|s| s.labels.pathological == "normal")
        .map(|s| feature(s))
        .collect();
    let auc = rank_auc(&pos, &neg);
    assert!(auc > 0.95, "AUC {auc}");
}

#[test]
fn default_effects_leave_total_band_power_uninformative() {
    let config = GeneratorConfig {
        n_subjects: 160,
        ..GeneratorConfig::default()
    };
    let corpus = generate_corpus(&config).unwrap();
    let all: Vec<&Sample> = corpus.train.iter().chain(&corpus.test).collect();
    let total = |s: &Sample| -> f64 {
        (0..s.signal.channels.len())
            .map(|i| slow_band_power(s.signal.values.row(i), config.sample_rate))
            .sum()
    };
    let pos: Vec<f64> = all
        .iter()
        .filter(|s| s.labels.pathological == "abnormal")
        .map(|s| total(s))
        .collect();
    let neg: Vec<f64> = all
        .iter()
        .filter(|s| s.labels.pathological == "normal")
        .map(|s| total(s))
        .collect();
    let auc = rank_auc(&pos, &neg);
    assert!((auc - 0.5).abs() < 0.15, "AUC {auc}");
}

#[test]
fn removal_count_is_uniform_over_its_support() {
    let names: Vec<String> = STANDARD_19
        .iter()
        .map(|s| s.to_string())
        .chain(["A1".to_string()])
        .collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let montage = Montage::from_names(&refs, ReferenceType::Average).unwrap();
    assert_eq!(montage.len(), 20);
    let policy = RemovalPolicy {
        p_remove: 1.0,
        r_max: 0.8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts = [0usize; 21];
    let draws = 10_000;
    for _ in 0..draws {
        let kept = apply_channel_removal(&montage.channels, &policy, &mut rng).unwrap();
        counts[20 - kept.len()] += 1;
    }
    assert_eq!(counts[0], 0);
    assert!(counts[17..].iter().all(|&c| c == 0));
    let expected = draws as f64 / 16.0;
    let chi2: f64 = counts[1..=16]
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(15.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}

#[test]
fn default_corpus_generates_quickly() {
    let start = Instant::now();
    let corpus = generate_corpus(&GeneratorConfig::default()).unwrap();
    assert_eq!(corpus.len(), 512);
    assert!(start.elapsed().as_secs() < 60);
}
