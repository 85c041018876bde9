use crate::diffcore::cosine;
use crate::error::{Error, Result};
use crate::prompting::LabelPrototype;

/// Label of the most cosine-similar prototype; ties go to the
/// lexicographically smallest label. `labels` lists the values that must
/// all have a prototype.
pub fn text_based_classify(eeg: &[Vec<f64>], prototypes: &[LabelPrototype], labels: &[&str]) -> Result<Vec<String>> {
    for l in labels {
        if !prototypes.iter().any(|p| p.label == *l) {
            return Err(Error::data(format!("no prototype for label `{l}`")));
        }
    }
    if prototypes.is_empty() {
        return Err(Error::data("no prototypes supplied"));
    }
    let mut sorted: Vec<&LabelPrototype> = prototypes.iter().collect();
    sorted.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(eeg
        .iter()
        .map(|e| {
            let mut best = sorted[0];
            let mut best_sim = cosine(e, &best.embedding);
            for p in &sorted[1..] {
                let s = cosine(e, &p.embedding);
                if s > best_sim {
                    best = p;
                    best_sim = s;
                }
            }
            best.label.clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proto(label: &str, v: Vec<f64>) -> LabelPrototype {
        LabelPrototype {
            label: label.into(),
            embedding: v,
            k: 1,
        }
    }

    #[test]
    fn exact_match_and_tie_break() {
        let ps = [proto("normal", vec![0.0, 1.0]), proto("abnormal", vec![1.0, 0.0])];
        let out = text_based_classify(&[vec![0.0, 1.0], vec![1.0, 1.0]], &ps, &["abnormal", "normal"]).unwrap();
        assert_eq!(out, vec!["normal", "abnormal"]);
        assert!(text_based_classify(&[vec![1.0, 0.0]], &ps[..1], &["abnormal", "normal"]).is_err());
    }
}
