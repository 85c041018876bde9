use serde::{Deserialize, Serialize};

use crate::diffcore::{optimizer_step, AdamConfig, ParameterStore, Tape, Tensor};
use crate::error::{Error, Result};

const W: &str = "probe.w";
const B: &str = "probe.b";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.02,
        }
    }
}

/// Linear softmax classifier over frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

fn matrix(embeds: &[Vec<f64>]) -> Result<Tensor> {
    let d = embeds.first().map(Vec::len).unwrap_or(0);
    if d == 0 {
        return Err(Error::contract("probe needs non-empty embeddings"));
    }
    Tensor::from_rows(embeds.len(), d, embeds.iter().flatten().copied().collect())
}

/// Full-batch softmax cross-entropy with Adam from a zero initialization.
pub fn train_probe(embeds: &[Vec<f64>], labels: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<ProbeHead> {
    if embeds.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} embeddings vs {} labels",
            embeds.len(),
            labels.len()
        )));
    }
    let mut present = vec![false; n_classes];
    for &y in labels {
        *present
            .get_mut(y)
            .ok_or_else(|| Error::contract(format!("label {y} outside {n_classes} classes")))? = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::data("probe training needs at least two classes"));
    }
    let x = matrix(embeds)?;
    let d = x.cols();
    let mut onehot = Tensor::zeros(labels.len(), n_classes);
    for (i, &y) in labels.iter().enumerate() {
        onehot.set(i, y, 1.0);
    }
    let onehot_t = onehot.transpose();
    let mut store = ParameterStore::new();
    store.insert(W, Tensor::zeros(d, n_classes), false);
    store.insert(B, Tensor::zeros(1, n_classes), false);
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..Default::default()
    };
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.param(&store, W)?;
        let b = tape.param(&store, B)?;
        let logits = tape.linear(xv, w, Some(b))?;
        let logp = tape.log_softmax_rows(logits)?;
        let yt = tape.constant(onehot_t.clone());
        let picked = tape.matmul(logp, yt)?;
        let picked = tape.diag(picked)?;
        let mean = tape.mean_all(picked)?;
        let loss = tape.scale(mean, -1.0)?;
        tape.backward(loss, &mut store)?;
        optimizer_step(&mut store, &adam);
    }
    Ok(ProbeHead {
        weight: store.value(W)?.clone(),
        bias: store.value(B)?.clone(),
    })
}

impl ProbeHead {
    /// Class probabilities per row.
    pub fn probabilities(&self, embeds: &[Vec<f64>]) -> Result<Tensor> {
        let x = matrix(embeds)?;
        let mut logits = x.matmul(&self.weight)?;
        for r in 0..logits.rows() {
            for (v, b) in logits.row_mut(r).iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(logits.softmax_rows())
    }

    /// Argmax class; ties resolve to the lower index.
    pub fn predict(&self, embeds: &[Vec<f64>]) -> Result<Vec<usize>> {
        let p = self.probabilities(embeds)?;
        Ok((0..p.rows())
            .map(|r| {
                let row = p.row(r);
                (1..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }
}
