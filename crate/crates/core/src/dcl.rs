//! Channel-level and sample-level symmetric InfoNCE objectives, attention
//! pooling over channels and per-sample channel sampling.

use rand::seq::index::sample;
use rand::Rng;

use crate::cape::{ChannelId, EMBED_DIM};
use crate::diffcore::{dot, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub mod param_names {
    pub const POOL_W: &str = "pool.w";
    pub const POOL_V: &str = "pool.v";
    pub const LOG_TAU: &str = "log_tau";
}

pub const DEFAULT_TAU: f64 = 0.07;
pub const MIN_TAU: f64 = 0.01;
const UNIT_TOL: f64 = 1e-9;

/// Channel-wise EEG and text embeddings of one sample, order-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEmbeddingSet {
    pub channels: Vec<ChannelId>,
    pub eeg: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
}

impl ChannelEmbeddingSet {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub samples: Vec<ChannelEmbeddingSet>,
    pub eeg_global: Vec<Vec<f64>>,
    pub text_global: Vec<Vec<f64>>,
    pub tau: f64,
    pub lambda: f64,
    pub n: usize,
}

fn check_unit(vectors: &[Vec<f64>], what: &str) -> Result<()> {
    for (i, v) in vectors.iter().enumerate() {
        let n = dot(v, v).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::contract(format!(
                "{what} embedding {i} has norm {n}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Mean of the diagonal log-softmax terms. Shifted logits and a running mean
/// keep the all-identical case exact: every term is `-ln(n)`.
fn log_softmax_diag_mean(logits: &[Vec<f64>]) -> f64 {
    let mut mean = 0.0;
    for (i, row) in logits.iter().enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let term = (row[i] - m) - row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        mean += (term - mean) / (i + 1) as f64;
    }
    mean
}

/// Symmetric InfoNCE between matched rows of `a` and `b` at temperature `tau`.
pub fn info_nce(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "{} anchors vs {} candidates",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::contract("InfoNCE needs at least one pair"));
    }
    if !(tau > 0.0) {
        return Err(Error::contract(format!("temperature must be positive, got {tau}")));
    }
    check_unit(a, "eeg")?;
    check_unit(b, "text")?;
    let s: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| dot(x, y) / tau).collect()).collect();
    let st: Vec<Vec<f64>> = (0..b.len()).map(|j| (0..a.len()).map(|i| s[i][j]).collect()).collect();
    Ok(-(log_softmax_diag_mean(&s) + log_softmax_diag_mean(&st)) / 2.0)
}

/// Uniform draw of `n` distinct channel indices; clamps to `c` when fewer remain.
pub fn sample_channels<R: Rng + ?Sized>(c: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if c == 0 {
        return Err(Error::contract("cannot sample from an empty channel list"));
    }
    if n == 0 {
        return Err(Error::config("channel sample count must be at least 1"));
    }
    let n = if n > c {
        log::debug!("sampling {c} channels instead of {n}: only {c} available");
        c
    } else {
        n
    };
    Ok(sample(rng, c, n).into_vec())
}

/// Channel-level loss over explicitly chosen channel indices per sample.
pub fn ccl_loss_with(batch: &ContrastiveBatch, selection: &[Vec<usize>]) -> Result<f64> {
    if selection.len() != batch.samples.len() {
        return Err(Error::contract("one channel selection per sample required"));
    }
    let mut eeg = Vec::new();
    let mut text = Vec::new();
    for (set, idx) in batch.samples.iter().zip(selection) {
        if set.eeg.len() != set.text.len() {
            return Err(Error::contract("channel embedding set is not aligned"));
        }
        for &i in idx {
            let (e, t) = set
                .eeg
                .get(i)
                .zip(set.text.get(i))
                .ok_or_else(|| Error::contract(format!("channel index {i} out of range")))?;
            eeg.push(e.clone());
            text.push(t.clone());
        }
    }
    // a single pair is allowed and scores exactly zero
    info_nce(&eeg, &text, batch.tau)
}

/// Channel-level loss with `batch.n` channels drawn per sample.
pub fn ccl_loss<R: Rng + ?Sized>(batch: &ContrastiveBatch, rng: &mut R) -> Result<f64> {
    let selection = batch
        .samples
        .iter()
        .map(|s| sample_channels(s.len(), batch.n, rng))
        .collect::<Result<Vec<_>>>()?;
    ccl_loss_with(batch, &selection)
}

pub fn scl_loss(batch: &ContrastiveBatch) -> Result<f64> {
    if batch.eeg_global.len() < 2 {
        return Err(Error::contract(format!(
            "sample-level loss needs a batch of at least 2, got {}",
            batch.eeg_global.len()
        )));
    }
    info_nce(&batch.eeg_global, &batch.text_global, batch.tau)
}

pub fn dcl_loss_with(batch: &ContrastiveBatch, selection: &[Vec<usize>]) -> Result<f64> {
    let scl = scl_loss(batch)?;
    if batch.lambda == 0.0 {
        return Ok(scl);
    }
    Ok(scl + batch.lambda * ccl_loss_with(batch, selection)?)
}

pub fn dcl_loss<R: Rng + ?Sized>(batch: &ContrastiveBatch, rng: &mut R) -> Result<f64> {
    let scl = scl_loss(batch)?;
    if batch.lambda == 0.0 {
        return Ok(scl);
    }
    Ok(scl + batch.lambda * ccl_loss(batch, rng)?)
}

pub fn init_params<R: Rng + ?Sized>(store: &mut ParameterStore, rng: &mut R) {
    let d = EMBED_DIM;
    store.insert(
        param_names::POOL_W,
        Tensor::randn(d, d, (1.0 / d as f64).sqrt(), rng),
        false,
    );
    store.insert(
        param_names::POOL_V,
        Tensor::randn(d, 1, (1.0 / d as f64).sqrt(), rng),
        false,
    );
}

pub fn init_temperature(store: &mut ParameterStore, tau: f64) {
    store.insert(param_names::LOG_TAU, Tensor::scalar(tau.ln()), false);
}

/// Keep the learned temperature at or above [`MIN_TAU`].
pub fn clamp_temperature(store: &mut ParameterStore) -> Result<()> {
    let t = store.value_mut(param_names::LOG_TAU)?;
    let floor = MIN_TAU.ln();
    if t.data()[0] < floor {
        t.data_mut()[0] = floor;
    }
    Ok(())
}

/// Symmetric InfoNCE on the tape; temperature is `exp(log_tau)`.
pub fn info_nce_on_tape(tape: &mut Tape, eeg: Var, text: Var, log_tau: Var) -> Result<Var> {
    let tt = tape.transpose(text)?;
    let sims = tape.matmul(eeg, tt)?;
    let neg = tape.scale(log_tau, -1.0)?;
    let inv_tau = tape.exp(neg)?;
    let logits = tape.mul_scalar(sims, inv_tau)?;
    let forward = tape.log_softmax_rows(logits)?;
    let forward = tape.diag(forward)?;
    let forward = tape.mean_all(forward)?;
    let logits_t = tape.transpose(logits)?;
    let backward = tape.log_softmax_rows(logits_t)?;
    let backward = tape.diag(backward)?;
    let backward = tape.mean_all(backward)?;
    let total = tape.add(forward, backward)?;
    tape.scale(total, -0.5)
}

/// Pools `x` (rows `b * C + i`) to one unit-norm row per sample using
/// scores `v . tanh(W x_c)` softmaxed over channels.
pub fn attention_pool_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    x: Var,
    samples: usize,
    channels: usize,
) -> Result<Var> {
    let (rows, _) = tape.shape(x);
    if channels == 0 || rows != samples * channels {
        return Err(Error::contract(format!(
            "attention pooling expects {samples}x{channels} rows, got {rows}"
        )));
    }
    let w = tape.param(store, param_names::POOL_W)?;
    let v = tape.param(store, param_names::POOL_V)?;
    let hidden = tape.matmul(x, w)?;
    let hidden = tape.tanh(hidden)?;
    let scores = tape.matmul(hidden, v)?;
    let mut pooled = Vec::with_capacity(samples);
    for s in 0..samples {
        let sc = tape.slice(scores, s * channels, channels, 0, 1)?;
        let sc = tape.transpose(sc)?;
        let alpha = tape.softmax_rows(sc)?;
        let xs = tape.slice(x, s * channels, channels, 0, EMBED_DIM)?;
        pooled.push(tape.matmul(alpha, xs)?);
    }
    let joined = tape.concat_rows(&pooled)?;
    tape.l2_normalize_rows(joined)
}

/// Value-level pooling of one sample's channel embeddings `e_c` and features `h_c`.
pub fn attention_pool(embeds: &[Vec<f64>], features: &[Vec<f64>], store: &ParameterStore) -> Result<Vec<f64>> {
    if embeds.is_empty() {
        return Err(Error::contract("attention pooling needs at least one channel"));
    }
    if embeds.len() != features.len() {
        return Err(Error::contract("channel embeddings and features are not aligned"));
    }
    let data: Vec<f64> = embeds
        .iter()
        .zip(features)
        .flat_map(|(e, h)| e.iter().zip(h).map(|(a, b)| a + b))
        .collect();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(embeds.len(), EMBED_DIM, data)?);
    let out = attention_pool_on_tape(&mut tape, store, x, 1, embeds.len())?;
    Ok(tape.value(out).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::normalize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn orthonormal_pairs_at_unit_temperature() {
        let a = vec![basis(0, 4), basis(1, 4)];
        let loss = info_nce(&a, &a, 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-15);
    }

    #[test]
    fn uniform_is_log_count_and_single_is_zero() {
        let v = normalize(&[1.0, 2.0, 3.0]);
        let a = vec![v.clone(); 5];
        assert_eq!(info_nce(&a, &a, 0.07).unwrap(), 5f64.ln());
        assert_eq!(info_nce(&a[..1], &a[..1], 0.07).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_unit_input() {
        let a = vec![vec![2.0, 0.0], vec![0.0, 1.0]];
        assert!(info_nce(&a, &a, 1.0).is_err());
    }

    #[test]
    fn tape_matches_value_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::randn(4, 6, 1.0, &mut rng).l2_normalize_rows();
        let b = Tensor::randn(4, 6, 1.0, &mut rng).l2_normalize_rows();
        let rows = |t: &Tensor| (0..t.rows()).map(|r| t.row(r).to_vec()).collect::<Vec<_>>();
        let expected = info_nce(&rows(&a), &rows(&b), 0.2).unwrap();
        let mut tape = Tape::new();
        let av = tape.constant(a);
        let bv = tape.constant(b);
        let lt = tape.constant(Tensor::scalar(0.2f64.ln()));
        let loss = info_nce_on_tape(&mut tape, av, bv, lt).unwrap();
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn pooling_contracts() {
        let mut store = ParameterStore::new();
        init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(3));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = vec![Tensor::randn(1, EMBED_DIM, 1.0, &mut rng).into_data()];
        let h = vec![vec![0.0; EMBED_DIM]];
        let single = attention_pool(&e, &h, &store).unwrap();
        let expected = normalize(&e[0]);
        for (a, b) in single.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let same = attention_pool(
            &[e[0].clone(), e[0].clone(), e[0].clone()],
            &[h[0].clone(), h[0].clone(), h[0].clone()],
            &store,
        )
        .unwrap();
        for (a, b) in same.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let es: Vec<Vec<f64>> = (0..4)
            .map(|_| Tensor::randn(1, EMBED_DIM, 1.0, &mut rng).into_data())
            .collect();
        let hs: Vec<Vec<f64>> = (0..4)
            .map(|_| Tensor::randn(1, EMBED_DIM, 1.0, &mut rng).into_data())
            .collect();
        let fwd = attention_pool(&es, &hs, &store).unwrap();
        let rev: Vec<_> = es.iter().rev().cloned().collect();
        let hrev: Vec<_> = hs.iter().rev().cloned().collect();
        let back = attention_pool(&rev, &hrev, &store).unwrap();
        for (a, b) in fwd.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(attention_pool(&[], &[], &store).is_err());
    }

    #[test]
    fn channel_sampling_clamps_and_is_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            sample_channels(10, 3, &mut a).unwrap(),
            sample_channels(10, 3, &mut b).unwrap()
        );
        let mut all = sample_channels(4, 9, &mut a).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn temperature_clamp() {
        let mut store = ParameterStore::new();
        init_temperature(&mut store, 0.001);
        clamp_temperature(&mut store).unwrap();
        assert!((store.value(param_names::LOG_TAU).unwrap().item().exp() - MIN_TAU).abs() < 1e-12);
    }
}
