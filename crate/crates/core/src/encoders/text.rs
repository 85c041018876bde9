use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParameterStore, Tensor};
use crate::error::{Error, Result};

pub const TEXT_DIM: usize = 256;
pub const DEFAULT_BUCKETS: usize = 1024;
pub const PROJECTION_PARAM: &str = "text_encoder.projection";

/// Report sections, declared in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    ClinicalHistory,
    Medications,
    Description,
    Impression,
}

impl Section {
    pub const ALL: [Section; 4] = [
        Section::ClinicalHistory,
        Section::Medications,
        Section::Description,
        Section::Impression,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::ClinicalHistory => "clinical_history",
            Section::Medications => "medications",
            Section::Description => "description",
            Section::Impression => "impression",
        }
    }
}

/// A sectioned clinical report.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportText {
    pub sections: BTreeMap<Section, String>,
}

impl ReportText {
    pub fn new(sections: impl IntoIterator<Item = (Section, String)>) -> Self {
        Self {
            sections: sections.into_iter().collect(),
        }
    }

    /// A report whose whole text sits in one section, used for free-form prompts.
    pub fn single(section: Section, text: impl Into<String>) -> Self {
        Self::new([(section, text.into())])
    }

    pub fn get(&self, section: Section) -> Option<&str> {
        self.sections.get(&section).map(String::as_str)
    }

    /// Sections joined in schema order.
    pub fn concatenated(&self) -> String {
        Section::ALL
            .iter()
            .filter_map(|s| self.sections.get(s))
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Unit-norm frozen text feature.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeature(pub Vec<f64>);

impl TextFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h ^= 0x1f;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        for b in p.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Hashed counts of unigrams and adjacent bigrams.
pub fn hashed_counts(text: &str, buckets: usize) -> Vec<f64> {
    let tokens = tokenize(text);
    let mut counts = vec![0.0; buckets];
    for t in &tokens {
        counts[(fnv1a(&[t]) % buckets as u64) as usize] += 1.0;
    }
    for pair in tokens.windows(2) {
        counts[(fnv1a(&[&pair[0], &pair[1]]) % buckets as u64) as usize] += 1.0;
    }
    counts
}

/// Register the frozen random projection of the text featurizer.
pub fn init_text_encoder(store: &mut ParameterStore, buckets: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = Tensor::randn(buckets, TEXT_DIM, 1.0, &mut rng);
    store.insert(PROJECTION_PARAM, projection, true);
}

/// Frozen featurizer: hashed n-gram counts through a fixed projection, unit-normalized.
pub fn featurize_text(text: &str, store: &ParameterStore) -> Result<TextFeature> {
    let projection = store.value(PROJECTION_PARAM)?;
    let counts = hashed_counts(text, projection.rows());
    if counts.iter().all(|&c| c == 0.0) {
        return Err(Error::data("cannot featurize empty text"));
    }
    let mut out = vec![0.0; TEXT_DIM];
    for (bucket, &count) in counts.iter().enumerate() {
        if count == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(projection.row(bucket)) {
            *o += count * w;
        }
    }
    Ok(TextFeature(crate::diffcore::normalize(&out)))
}

pub fn text_featurize(report: &ReportText, store: &ParameterStore) -> Result<TextFeature> {
    featurize_text(&report.concatenated(), store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        init_text_encoder(&mut s, DEFAULT_BUCKETS, 11);
        s
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let s = store();
        let r = ReportText::single(Section::Impression, "normal eeg");
        let a = text_featurize(&r, &s).unwrap();
        assert_eq!(a, text_featurize(&r, &s).unwrap());
        let one = featurize_text("slowing", &s).unwrap();
        let norm: f64 = one.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_token_changes_feature() {
        let s = store();
        let a = featurize_text("focal slowing over the left temporal region", &s).unwrap();
        let b = featurize_text("focal slowing over the right temporal region", &s).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_text_is_error() {
        let s = store();
        assert!(featurize_text("  ,. ", &s).is_err());
        assert!(text_featurize(&ReportText::default(), &s).is_err());
    }

    #[test]
    fn concatenation_follows_schema_order() {
        let r = ReportText::new([
            (Section::Impression, "c".to_string()),
            (Section::ClinicalHistory, "a".to_string()),
            (Section::Description, "b".to_string()),
        ]);
        assert_eq!(r.concatenated(), "a b c");
    }

    #[test]
    fn projection_is_frozen() {
        assert!(store().is_frozen(PROJECTION_PARAM).unwrap());
    }
}
