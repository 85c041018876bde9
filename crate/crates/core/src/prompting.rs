//! Label prototypes built from synthetic reports assembled out of
//! label-specific section pools, plus the single-sentence baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dcp::text_global_on_tape;
use crate::diffcore::{cosine, normalize, ParameterStore, Tape};
use crate::encoders::text::{featurize_text, text_featurize, TextFeature};
use crate::encoders::{ReportText, Section};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 64;

/// Section texts harvested from training reports of one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionPool {
    pub label: String,
    pub pools: BTreeMap<Section, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPrototype {
    pub label: String,
    pub embedding: Vec<f64>,
    pub k: usize,
}

/// Groups section texts by label, deduplicated verbatim in first-seen order.
pub fn build_pools(reports: &[&ReportText], labels: &[&str]) -> Result<BTreeMap<String, SectionPool>> {
    if reports.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} reports vs {} labels",
            reports.len(),
            labels.len()
        )));
    }
    let mut out: BTreeMap<String, SectionPool> = BTreeMap::new();
    for (report, label) in reports.iter().zip(labels) {
        let pool = out.entry(label.to_string()).or_insert_with(|| SectionPool {
            label: label.to_string(),
            pools: BTreeMap::new(),
        });
        for (section, text) in &report.sections {
            let segs = pool.pools.entry(*section).or_default();
            if !segs.contains(text) {
                segs.push(text.clone());
            }
        }
    }
    for pool in out.values() {
        for section in Section::ALL {
            if pool.pools.get(&section).is_none_or(|v| v.is_empty()) {
                return Err(Error::data(format!(
                    "label `{}` has no `{}` segments",
                    pool.label,
                    section.as_str()
                )));
            }
        }
    }
    Ok(out)
}

/// One uniformly drawn segment per section.
pub fn synthesize_report<R: Rng + ?Sized>(pool: &SectionPool, rng: &mut R) -> ReportText {
    ReportText::new(Section::ALL.iter().filter_map(|s| {
        let segs = pool.pools.get(s)?;
        Some((*s, segs[rng.random_range(0..segs.len())].clone()))
    }))
}

/// Frozen features of `k` synthetic reports; these do not change during training.
pub fn synthetic_features<R: Rng + ?Sized>(
    pool: &SectionPool,
    k: usize,
    rng: &mut R,
    store: &ParameterStore,
) -> Result<Vec<TextFeature>> {
    if k < 1 {
        return Err(Error::config("prompt ensemble size K must be at least 1"));
    }
    (0..k)
        .map(|_| text_featurize(&synthesize_report(pool, rng), store))
        .collect()
}

/// Unit-normalized mean of the projected text embeddings.
pub fn prototype_from_features(
    label: &str,
    features: &[TextFeature],
    store: &ParameterStore,
) -> Result<LabelPrototype> {
    if features.is_empty() {
        return Err(Error::config("prompt ensemble size K must be at least 1"));
    }
    let refs: Vec<&TextFeature> = features.iter().collect();
    let mut tape = Tape::new();
    let emb = text_global_on_tape(&mut tape, store, &refs)?;
    let emb = tape.value(emb);
    let mut mean = vec![0.0; emb.cols()];
    for r in 0..emb.rows() {
        for (m, v) in mean.iter_mut().zip(emb.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= features.len() as f64);
    Ok(LabelPrototype {
        label: label.to_string(),
        embedding: normalize(&mean),
        k: features.len(),
    })
}

pub fn label_prototype<R: Rng + ?Sized>(
    pool: &SectionPool,
    k: usize,
    rng: &mut R,
    store: &ParameterStore,
) -> Result<LabelPrototype> {
    let feats = synthetic_features(pool, k, rng, store)?;
    prototype_from_features(&pool.label, &feats, store)
}

/// Single-sentence prompt per label value.
pub fn default_single_prompts() -> BTreeMap<String, String> {
    [
        ("abnormal", "an eeg of an abnormal patient"),
        ("normal", "an eeg of a normal patient"),
        ("female", "an eeg of a female patient"),
        ("male", "an eeg of a male patient"),
        ("over50", "an eeg of an elderly patient"),
        ("under50", "an eeg of a young patient"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

pub fn single_prompt_prototype(label: &str, prompt: &str, store: &ParameterStore) -> Result<LabelPrototype> {
    let feat = featurize_text(prompt, store)?;
    let mut p = prototype_from_features(label, &[feat], store)?;
    p.k = 1;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub label: String,
    pub method: String,
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std of cosine similarity between each prototype and
/// the report embeddings carrying the same label.
pub fn prompt_similarity_report(
    prototypes: &[LabelPrototype],
    method: &str,
    reports_by_label: &BTreeMap<String, Vec<Vec<f64>>>,
) -> Result<Vec<SimilarityRow>> {
    let mut rows = Vec::new();
    for p in prototypes {
        let reports = reports_by_label
            .get(&p.label)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::data(format!("no validation reports for label `{}`", p.label)))?;
        let sims: Vec<f64> = reports.iter().map(|r| cosine(&p.embedding, r)).collect();
        let n = sims.len() as f64;
        let mean = sims.iter().sum::<f64>() / n;
        let var = sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        rows.push(SimilarityRow {
            label: p.label.clone(),
            method: method.to_string(),
            mean,
            std: var.sqrt(),
        });
    }
    Ok(rows)
}

pub fn similarity_csv(rows: &[SimilarityRow], config_hash: &str, seed: u64) -> String {
    let mut out = format!("# config_hash={config_hash} seed={seed}\nlabel,method,mean,std\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.label, r.method, r.mean, r.std);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcp;
    use crate::encoders::text::{init_text_encoder, DEFAULT_BUCKETS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn report(tag: &str) -> ReportText {
        ReportText::new(Section::ALL.iter().map(|s| (*s, format!("{tag} {}", s.as_str()))))
    }

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        init_text_encoder(&mut s, DEFAULT_BUCKETS, 1);
        dcp::init_text_global(&mut s, &mut ChaCha8Rng::seed_from_u64(2));
        s
    }

    #[test]
    fn pools_partition_by_label() {
        let reps = [report("a1"), report("a2"), report("a1"), report("b1")];
        let refs: Vec<&ReportText> = reps.iter().collect();
        let pools = build_pools(&refs, &["a", "a", "a", "b"]).unwrap();
        assert_eq!(pools["a"].pools[&Section::Impression].len(), 2);
        assert!(pools["b"].pools.values().flatten().all(|s| s.starts_with("b1")));
    }

    #[test]
    fn missing_section_is_error() {
        let r = ReportText::single(Section::Impression, "normal eeg");
        let err = build_pools(&[&r], &["normal"]).unwrap_err().to_string();
        assert!(err.contains("normal") && err.contains("clinical_history"));
    }

    #[test]
    fn degenerate_pool_reproduces_report() {
        let r = report("only");
        let pools = build_pools(&[&r], &["x"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(synthesize_report(&pools["x"], &mut rng), r);
        let s = store();
        let one = label_prototype(&pools["x"], 1, &mut rng, &s).unwrap();
        let many = label_prototype(&pools["x"], 16, &mut rng, &s).unwrap();
        for (a, b) in one.embedding.iter().zip(&many.embedding) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(label_prototype(&pools["x"], 0, &mut rng, &s).is_err());
    }

    #[test]
    fn similarity_of_identical_is_one() {
        let p = LabelPrototype {
            label: "x".into(),
            embedding: vec![1.0, 0.0],
            k: 1,
        };
        let reports = BTreeMap::from([("x".to_string(), vec![vec![1.0, 0.0], vec![0.0, 1.0]])]);
        let rows = prompt_similarity_report(&[p], "single", &reports).unwrap();
        assert!((rows[0].mean - 0.5).abs() < 1e-12);
        assert!((rows[0].std - 0.5).abs() < 1e-12);
    }
}
