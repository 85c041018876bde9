use crate::diffcore::cosine;
use crate::error::{Error, Result};

/// Top-`k` index entries by cosine similarity, descending; equal scores keep index order.
pub fn retrieve(query: &[f64], index: &[Vec<f64>], k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::config("retrieval K must be at least 1"));
    }
    if k > index.len() {
        return Err(Error::config(format!(
            "K = {k} exceeds the retrieval index size {}",
            index.len()
        )));
    }
    let mut scored: Vec<(usize, f64)> = index.iter().enumerate().map(|(i, v)| (i, cosine(query, v))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    Ok(scored)
}

/// Fraction of retrieved entries whose label equals `query_label`.
pub fn precision_at_k<L: PartialEq>(retrieved: &[(usize, f64)], index_labels: &[L], query_label: &L) -> f64 {
    if retrieved.is_empty() {
        return 0.0;
    }
    let hits = retrieved
        .iter()
        .filter(|(i, _)| index_labels[*i] == *query_label)
        .count();
    hits as f64 / retrieved.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn own_pair_ranks_first_and_full_k_is_base_rate() {
        let index = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8], vec![-1.0, 0.0]];
        let labels = ["a", "b", "a", "b"];
        let top = retrieve(&[0.0, 1.0], &index, 1).unwrap();
        assert_eq!(top[0].0, 1);
        let all = retrieve(&[0.3, 0.2], &index, 4).unwrap();
        assert_eq!(precision_at_k(&all, &labels, &"a"), 0.5);
        let err = retrieve(&[1.0, 0.0], &index, 5).unwrap_err().to_string();
        assert!(err.contains('5') && err.contains('4'));
    }

    #[test]
    fn ties_keep_index_order() {
        let index = vec![vec![1.0, 0.0]; 3];
        let ids: Vec<usize> = retrieve(&[1.0, 0.0], &index, 3).unwrap().iter().map(|r| r.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }
}
