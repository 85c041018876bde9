//! Independent oracles for losses, metrics and samplers.

use std::collections::BTreeMap;

use eegtext_core::cape::ChannelId;
use eegtext_core::dcl::{ccl_loss_with, sample_channels, scl_loss, ChannelEmbeddingSet, ContrastiveBatch};
use eegtext_core::diffcore::normalize;
use eegtext_core::encoders::{ReportText, Section};
use eegtext_core::evalsuite::{auc_pr, balanced_accuracy, precision_at_k, retrieve, train_probe, ProbeConfig};
use eegtext_core::prompting::{synthesize_report, SectionPool};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    normalize(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
}

/// Symmetric InfoNCE written out term by term, without any stabilization.
fn brute_info_nce(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> f64 {
    let m = a.len();
    let sim = |i: usize, j: usize| a[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum::<f64>() / tau;
    let mut total = 0.0;
    for i in 0..m {
        let row: f64 = (0..m).map(|j| sim(i, j).exp()).sum();
        let col: f64 = (0..m).map(|j| sim(j, i).exp()).sum();
        total += (sim(i, i).exp() / row).ln() + (sim(i, i).exp() / col).ln();
    }
    -total / (2.0 * m as f64)
}

fn batch(b: usize, c: usize, tau: f64, rng: &mut ChaCha8Rng) -> ContrastiveBatch {
    let samples = (0..b)
        .map(|_| ChannelEmbeddingSet {
            channels: (0..c)
                .map(|i| ChannelId::unipolar(["FP1", "C3", "O2"][i]).unwrap())
                .collect(),
            eeg: (0..c).map(|_| unit(6, rng)).collect(),
            text: (0..c).map(|_| unit(6, rng)).collect(),
        })
        .collect();
    ContrastiveBatch {
        samples,
        eeg_global: (0..b).map(|_| unit(6, rng)).collect(),
        text_global: (0..b).map(|_| unit(6, rng)).collect(),
        tau,
        lambda: 0.5,
        n: 2,
    }
}

#[test]
fn losses_match_brute_force_for_small_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for b in 1..=3 {
        for n in 1..=2 {
            for _ in 0..25 {
                let tau = rng.random_range(0.05..2.0);
                let batch = batch(b, 3, tau, &mut rng);
                let selection: Vec<Vec<usize>> = (0..b).map(|_| sample_channels(3, n, &mut rng).unwrap()).collect();
                let mut eeg = Vec::new();
                let mut text = Vec::new();
                for (s, idx) in batch.samples.iter().zip(&selection) {
                    for &i in idx {
                        eeg.push(s.eeg[i].clone());
                        text.push(s.text[i].clone());
                    }
                }
                let ccl = ccl_loss_with(&batch, &selection).unwrap();
                assert!((ccl - brute_info_nce(&eeg, &text, tau)).abs() < 1e-12, "B={b} N={n}");
                if b >= 2 {
                    let scl = scl_loss(&batch).unwrap();
                    assert!((scl - brute_info_nce(&batch.eeg_global, &batch.text_global, tau)).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn uniform_embeddings_give_log_counts() {
    let v = normalize(&[0.3, -0.2, 0.9, 0.1, 0.0, 0.4]);
    for b in 1..=3 {
        for n in 1..=2 {
            let set = ChannelEmbeddingSet {
                channels: vec![ChannelId::unipolar("CZ").unwrap(); 3],
                eeg: vec![v.clone(); 3],
                text: vec![v.clone(); 3],
            };
            let batch = ContrastiveBatch {
                samples: vec![set; b],
                eeg_global: vec![v.clone(); b],
                text_global: vec![v.clone(); b],
                tau: 0.07,
                lambda: 1.0,
                n,
            };
            let selection: Vec<Vec<usize>> = (0..b).map(|_| (0..n).collect()).collect();
            assert_eq!(ccl_loss_with(&batch, &selection).unwrap(), ((b * n) as f64).ln());
            if b >= 2 {
                assert_eq!(scl_loss(&batch).unwrap(), (b as f64).ln());
            }
        }
    }
}

#[test]
fn channel_sampling_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = [0usize; 4];
    let draws = 10_000;
    for _ in 0..draws {
        counts[sample_channels(4, 1, &mut rng).unwrap()[0]] += 1;
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.25).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn section_segments_are_drawn_uniformly() {
    let mut pools = BTreeMap::new();
    for s in Section::ALL {
        pools.insert(s, vec![format!("{} one", s.as_str())]);
    }
    pools.insert(
        Section::Description,
        vec!["first segment".to_string(), "second segment".to_string()],
    );
    let pool = SectionPool {
        label: "normal".into(),
        pools,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws = 10_000;
    let first = (0..draws)
        .filter(|_| synthesize_report(&pool, &mut rng).get(Section::Description) == Some("first segment"))
        .count();
    assert!((first as f64 / draws as f64 - 0.5).abs() < 0.02);
    let r: ReportText = synthesize_report(&pool, &mut rng);
    assert_eq!(r.sections.len(), 4);
}

#[test]
fn probe_on_shuffled_labels_is_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 2000;
    let embeds: Vec<Vec<f64>> = (0..n).map(|_| unit(8, &mut rng)).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let (train_x, test_x) = embeds.split_at(n / 2);
    let (train_y, test_y) = labels.split_at(n / 2);
    let head = train_probe(train_x, train_y, 2, &ProbeConfig::default()).unwrap();
    let ba = balanced_accuracy(&head.predict(test_x).unwrap(), test_y, 2).unwrap();
    assert!((ba - 0.5).abs() < 0.05, "{ba}");
}

/// Average precision from its definition: precision at the rank of every
/// positive, averaged over positives.
fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1.0;
            sum += hits / (rank + 1) as f64;
        }
    }
    sum / positives
}

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=10).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..6).prop_map(|v| v as f64 / 5.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
    })
}

proptest! {
    #[test]
    fn auc_pr_matches_brute_force((scores, labels) in labelled_scores()) {
        prop_assert!((auc_pr(&scores, &labels).unwrap() - brute_ap(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn balanced_accuracy_is_permutation_invariant(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 3..40),
        seed in any::<u64>(),
    ) {
        let mut pairs = pairs;
        pairs.extend([(0, 0), (1, 1), (2, 2)]);
        let (p, l): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let before = balanced_accuracy(&p, &l, 3).unwrap();
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (p, l): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        prop_assert!((balanced_accuracy(&p, &l, 3).unwrap() - before).abs() < 1e-12);
    }

    #[test]
    fn retrieval_ranking_ignores_positive_rescaling(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let index: Vec<Vec<f64>> = (0..12).map(|_| unit(5, &mut rng)).collect();
        let query = unit(5, &mut rng);
        let scaled: Vec<f64> = query.iter().map(|v| v * scale).collect();
        let a: Vec<usize> = retrieve(&query, &index, 12).unwrap().iter().map(|h| h.0).collect();
        let b: Vec<usize> = retrieve(&scaled, &index, 12).unwrap().iter().map(|h| h.0).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn full_retrieval_precision_is_base_rate(labels in prop::collection::vec(0u8..3, 1..30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let index: Vec<Vec<f64>> = labels.iter().map(|_| unit(4, &mut rng)).collect();
        let query = unit(4, &mut rng);
        let hits = retrieve(&query, &index, index.len()).unwrap();
        let base = labels.iter().filter(|&&l| l == labels[0]).count() as f64 / labels.len() as f64;
        prop_assert_eq!(precision_at_k(&hits, &labels, &labels[0]), base);
    }
}
