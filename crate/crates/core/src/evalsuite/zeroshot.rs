use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classify::text_based_classify;
use super::metrics::{auc_pr, balanced_accuracy};
use crate::diffcore::{cosine, ParameterStore};
use crate::encoders::text::{featurize_text, TextFeature};
use crate::encoders::ReportText;
use crate::error::{Error, Result};
use crate::prompting::{build_pools, prototype_from_features, synthetic_features, LabelPrototype};
use crate::synthdata::{Sample, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMethod {
    Single,
    Ensemble,
}

impl PromptMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMethod::Single => "single",
            PromptMethod::Ensemble => "ensemble",
        }
    }
}

/// Frozen text features of every prompt, computed once; prototypes are
/// re-projected with the current parameters on demand.
#[derive(Debug, Clone)]
pub struct PromptBank {
    ensemble: BTreeMap<Task, Vec<(String, Vec<TextFeature>)>>,
    single: BTreeMap<Task, Vec<(String, TextFeature)>>,
    pub k: usize,
}

impl PromptBank {
    /// Pools come only from `train`.
    pub fn build(
        train: &[Sample],
        text_store: &ParameterStore,
        k: usize,
        seed: u64,
        single_prompts: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let reports: Vec<&ReportText> = train.iter().map(|s| &s.report).collect();
        let mut ensemble = BTreeMap::new();
        let mut single = BTreeMap::new();
        for (ti, task) in Task::ALL.into_iter().enumerate() {
            let labels: Vec<&str> = train.iter().map(|s| s.labels.get(task)).collect();
            let pools = build_pools(&reports, &labels)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ti as u64);
            let mut per_label = Vec::new();
            let mut singles = Vec::new();
            for class in task.classes() {
                let pool = pools
                    .get(class)
                    .ok_or_else(|| Error::data(format!("no training reports labelled {task}={class}")))?;
                per_label.push((class.to_string(), synthetic_features(pool, k, &mut rng, text_store)?));
                let prompt = single_prompts
                    .get(class)
                    .ok_or_else(|| Error::config(format!("no single prompt for label `{class}`")))?;
                singles.push((class.to_string(), featurize_text(prompt, text_store)?));
            }
            ensemble.insert(task, per_label);
            single.insert(task, singles);
        }
        Ok(Self { ensemble, single, k })
    }

    pub fn prototypes(&self, task: Task, method: PromptMethod, store: &ParameterStore) -> Result<Vec<LabelPrototype>> {
        match method {
            PromptMethod::Ensemble => self.ensemble[&task]
                .iter()
                .map(|(label, feats)| prototype_from_features(label, feats, store))
                .collect(),
            PromptMethod::Single => self.single[&task]
                .iter()
                .map(|(label, feat)| prototype_from_features(label, std::slice::from_ref(feat), store))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroShotScore {
    pub balanced_accuracy: f64,
    pub auc_pr: f64,
}

/// Text-based classification of `embeds` (aligned with `samples`) for one task.
pub fn zero_shot(
    task: Task,
    embeds: &[Vec<f64>],
    samples: &[&Sample],
    prototypes: &[LabelPrototype],
) -> Result<ZeroShotScore> {
    let classes = task.classes();
    let preds = text_based_classify(embeds, prototypes, &classes)?;
    let pred_idx = preds.iter().map(|p| task.class_index(p)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.labels.class(task)).collect();
    let ba = balanced_accuracy(&pred_idx, &labels, 2)?;
    let proto = |c: &str| {
        &prototypes
            .iter()
            .find(|p| p.label == c)
            .expect("checked by classify")
            .embedding
    };
    let (neg, pos) = (proto(classes[0]), proto(classes[1]));
    let scores: Vec<f64> = embeds.iter().map(|e| cosine(e, pos) - cosine(e, neg)).collect();
    let positive: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
    Ok(ZeroShotScore {
        balanced_accuracy: ba,
        auc_pr: auc_pr(&scores, &positive)?,
    })
}
