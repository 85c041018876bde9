use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::diffcore::cosine;
use crate::error::{Error, Result};

/// Within-channel versus between-channel cosine structure of channel embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub channels: Vec<String>,
    /// Mean pairwise cosine within a channel, averaged over channels.
    pub within: f64,
    /// Mean cosine across embeddings of distinct channels, averaged over channel pairs.
    pub between: f64,
    pub gap: f64,
    /// Mean cosine between every pair of channels; the diagonal excludes self-pairs.
    pub matrix: Vec<Vec<f64>>,
}

fn mean_cross(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += cosine(x, y);
        }
    }
    s / (a.len() * b.len()) as f64
}

fn mean_within(a: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            s += cosine(&a[i], &a[j]);
            n += 1;
        }
    }
    s / n as f64
}

pub fn channel_separation_report(by_channel: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<SeparationReport> {
    let mut kept: Vec<(&String, &Vec<Vec<f64>>)> = Vec::new();
    for (name, embeds) in by_channel {
        if embeds.len() < 2 {
            log::warn!(
                "channel {name} has {} embedding(s); excluded from the separation report",
                embeds.len()
            );
        } else {
            kept.push((name, embeds));
        }
    }
    if kept.len() < 2 {
        return Err(Error::data(
            "separation report needs at least two channels with two embeddings each",
        ));
    }
    let n = kept.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        matrix[i][i] = mean_within(kept[i].1);
        for j in i + 1..n {
            let m = mean_cross(kept[i].1, kept[j].1);
            matrix[i][j] = m;
            matrix[j][i] = m;
        }
    }
    let within = (0..n).map(|i| matrix[i][i]).sum::<f64>() / n as f64;
    let between = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| matrix[i][j])
        .sum::<f64>()
        / (n * (n - 1) / 2) as f64;
    Ok(SeparationReport {
        channels: kept.iter().map(|(k, _)| (*k).clone()).collect(),
        within,
        between,
        gap: within - between,
        matrix,
    })
}

impl SeparationReport {
    pub fn matrix_csv(&self, config_hash: &str, seed: u64) -> String {
        let mut out = format!(
            "# config_hash={config_hash} seed={seed}\nchannel,{}\n",
            self.channels.join(",")
        );
        for (name, row) in self.channels.iter().zip(&self.matrix) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{name},{}", cells.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_orthogonal_extremes() {
        let same = BTreeMap::from([
            ("A".to_string(), vec![vec![1.0, 0.0]; 3]),
            ("B".to_string(), vec![vec![1.0, 0.0]; 2]),
        ]);
        assert!(channel_separation_report(&same).unwrap().gap.abs() < 1e-15);
        let ortho = BTreeMap::from([
            ("A".to_string(), vec![vec![1.0, 0.0]; 3]),
            ("B".to_string(), vec![vec![0.0, 1.0]; 2]),
            ("C".to_string(), vec![vec![0.5, 0.5]]),
        ]);
        let r = channel_separation_report(&ortho).unwrap();
        assert_eq!(r.channels, vec!["A", "B"]);
        assert!((r.gap - 1.0).abs() < 1e-15);
    }
}
