use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    BalancedAccuracy,
    AucPr,
    PrecisionAtK,
    MeanCosine,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::BalancedAccuracy => "balanced_accuracy",
            MetricKind::AucPr => "auc_pr",
            MetricKind::PrecisionAtK => "precision_at_k",
            MetricKind::MeanCosine => "mean_cosine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub task: String,
    pub method: String,
    pub metric: MetricKind,
    pub k: Option<usize>,
    pub value: f64,
    pub seed: u64,
}

impl MetricRecord {
    pub fn new(
        task: impl Into<String>,
        method: impl Into<String>,
        metric: MetricKind,
        k: Option<usize>,
        value: f64,
        seed: u64,
    ) -> Result<Self> {
        // cosine similarity is signed; every other metric is a proportion
        let range = if metric == MetricKind::MeanCosine {
            -1.0..=1.0
        } else {
            0.0..=1.0
        };
        if !range.contains(&value) {
            return Err(Error::Numerical(format!(
                "{} value {value} out of range",
                metric.as_str()
            )));
        }
        if k.is_some() != (metric == MetricKind::PrecisionAtK) {
            return Err(Error::contract("k is set exactly for precision_at_k records"));
        }
        Ok(Self {
            task: task.into(),
            method: method.into(),
            metric,
            k,
            value,
            seed,
        })
    }
}

pub fn records_csv(records: &[MetricRecord], config_hash: &str) -> String {
    let mut out = format!("# config_hash={config_hash}\ntask,method,metric,k,value,seed\n");
    for r in records {
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{k},{},{}",
            r.task,
            r.method,
            r.metric.as_str(),
            r.value,
            r.seed
        );
    }
    out
}

pub fn records_json(records: &[MetricRecord], config_hash: &str) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        config_hash: &'a str,
        records: &'a [MetricRecord],
    }
    Ok(serde_json::to_string_pretty(&Doc { config_hash, records })?)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_invariants() {
        assert!(MetricRecord::new("t", "m", MetricKind::AucPr, None, 1.2, 0).is_err());
        assert!(MetricRecord::new("t", "m", MetricKind::PrecisionAtK, None, 0.5, 0).is_err());
        assert!(MetricRecord::new("t", "m", MetricKind::MeanCosine, None, -0.2, 0).is_ok());
        let r = MetricRecord::new("pathological", "full", MetricKind::PrecisionAtK, Some(5), 0.6, 3).unwrap();
        let csv = records_csv(&[r], "abc");
        assert!(csv.contains("pathological,full,precision_at_k,5,0.6,3"));
    }
}
