use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cape::{self, ChannelId, ReferenceType, EMBED_DIM};
use crate::diffcore::{ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// How channel identity enters the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    /// Attribute-based encoding; the encoder is exactly permutation-equivariant.
    Cape,
    /// Learned table indexed by the channel's ordinal position in the input.
    Index,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EegEncoderConfig {
    pub patch_len: usize,
    pub patch_hidden: usize,
    pub heads: usize,
    pub positional: PositionalEncoding,
    /// Rows of the index table when `positional = Index`.
    pub max_positions: usize,
}

impl Default for EegEncoderConfig {
    fn default() -> Self {
        Self {
            patch_len: 32,
            patch_hidden: 64,
            heads: 2,
            positional: PositionalEncoding::Cape,
            max_positions: 32,
        }
    }
}

/// Hidden width of the feed-forward sublayer, as a multiple of the embedding width.
const FFN_MULT: usize = 2;

pub mod param_names {
    pub const PATCH1_W: &str = "eeg.patch1.w";
    pub const PATCH1_B: &str = "eeg.patch1.b";
    pub const PATCH2_W: &str = "eeg.patch2.w";
    pub const PATCH2_B: &str = "eeg.patch2.b";
    pub const ATTN_Q: &str = "eeg.attn.q";
    pub const ATTN_K: &str = "eeg.attn.k";
    pub const ATTN_V: &str = "eeg.attn.v";
    pub const ATTN_O: &str = "eeg.attn.o";
    pub const ATTN_O_B: &str = "eeg.attn.o.b";
    pub const FFN1_W: &str = "eeg.ffn1.w";
    pub const FFN1_B: &str = "eeg.ffn1.b";
    pub const FFN2_W: &str = "eeg.ffn2.w";
    pub const FFN2_B: &str = "eeg.ffn2.b";
    pub const INDEX_TABLE: &str = "pos.index";
}

/// Multichannel recording, rows aligned with `channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMatrix {
    pub channels: Vec<ChannelId>,
    pub reference: ReferenceType,
    pub values: Tensor,
    pub sample_rate: f64,
}

impl SignalMatrix {
    pub fn new(channels: Vec<ChannelId>, reference: ReferenceType, values: Tensor, sample_rate: f64) -> Result<Self> {
        if values.rows() != channels.len() {
            return Err(Error::Shape {
                op: "signal_matrix",
                lhs: values.shape().to_vec(),
                rhs: vec![channels.len()],
            });
        }
        Ok(Self {
            channels,
            reference,
            values,
            sample_rate,
        })
    }

    pub fn samples(&self) -> usize {
        self.values.cols()
    }

    pub fn channel_row(&self, id: &ChannelId) -> Option<&[f64]> {
        self.channels.iter().position(|c| c == id).map(|i| self.values.row(i))
    }
}

/// Per-channel encoder output `h_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFeature(pub Vec<f64>);

pub fn init_params<R: Rng + ?Sized>(store: &mut ParameterStore, cfg: &EegEncoderConfig, rng: &mut R) {
    use param_names::*;
    let (l, h, d) = (cfg.patch_len, cfg.patch_hidden, EMBED_DIM);
    store.insert(PATCH1_W, Tensor::randn(l, h, (2.0 / l as f64).sqrt(), rng), false);
    store.insert(PATCH1_B, Tensor::zeros(1, h), false);
    store.insert(PATCH2_W, Tensor::randn(h, d, (1.0 / h as f64).sqrt(), rng), false);
    store.insert(PATCH2_B, Tensor::zeros(1, d), false);
    let attn_std = (1.0 / d as f64).sqrt();
    for name in [ATTN_Q, ATTN_K, ATTN_V, ATTN_O] {
        store.insert(name, Tensor::randn(d, d, attn_std, rng), false);
    }
    store.insert(ATTN_O_B, Tensor::zeros(1, d), false);
    let f = FFN_MULT * d;
    store.insert(FFN1_W, Tensor::randn(d, f, (2.0 / d as f64).sqrt(), rng), false);
    store.insert(FFN1_B, Tensor::zeros(1, f), false);
    store.insert(FFN2_W, Tensor::randn(f, d, (1.0 / f as f64).sqrt(), rng), false);
    store.insert(FFN2_B, Tensor::zeros(1, d), false);
    match cfg.positional {
        PositionalEncoding::Cape => cape::init_params(store, rng),
        PositionalEncoding::Index => store.insert(INDEX_TABLE, Tensor::randn(cfg.max_positions, d, 1.0, rng), false),
    }
}

/// Encoder output for a batch of recordings sharing one channel list.
///
/// Row `b * C + i` belongs to sample `b`, channel `channels[i]`.
#[derive(Debug, Clone, Copy)]
pub struct EncodedChannels {
    pub features: Var,
    pub pre_attention: Var,
    pub samples: usize,
    pub channels: usize,
}

/// Sort permutation the encoder works in: channel-identity order under CAPE,
/// input order under index encoding.
fn working_order(channels: &[ChannelId], positional: PositionalEncoding) -> Vec<usize> {
    let mut order: Vec<usize> = (0..channels.len()).collect();
    if positional == PositionalEncoding::Cape {
        order.sort_by(|&a, &b| channels[a].cmp(&channels[b]));
    }
    order
}

pub fn encode_batch(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &EegEncoderConfig,
    signals: &[&Tensor],
    channels: &[ChannelId],
    reference: ReferenceType,
) -> Result<EncodedChannels> {
    use param_names::*;
    let b = signals.len();
    let c = channels.len();
    if b == 0 || c == 0 {
        return Err(Error::contract("encoder needs at least one sample and one channel"));
    }
    let t = signals[0].cols();
    if !t.is_multiple_of(cfg.patch_len) {
        return Err(Error::contract(format!(
            "signal length {t} is not divisible by patch length {}",
            cfg.patch_len
        )));
    }
    for s in signals {
        if s.dims2() != (c, t) {
            return Err(Error::Shape {
                op: "encode_batch",
                lhs: s.shape().to_vec(),
                rhs: vec![c, t],
            });
        }
    }
    let order = working_order(channels, cfg.positional);
    let ordered: Vec<ChannelId> = order.iter().map(|&i| channels[i].clone()).collect();
    let patches_per_channel = t / cfg.patch_len;

    let mut patch_data = Vec::with_capacity(b * c * t);
    for s in signals {
        for &ci in &order {
            patch_data.extend_from_slice(s.row(ci));
        }
    }
    let patches = tape.constant(Tensor::from_rows(
        b * c * patches_per_channel,
        cfg.patch_len,
        patch_data,
    )?);

    let w1 = tape.param(store, PATCH1_W)?;
    let b1 = tape.param(store, PATCH1_B)?;
    let w2 = tape.param(store, PATCH2_W)?;
    let b2 = tape.param(store, PATCH2_B)?;
    let hidden = tape.linear(patches, w1, Some(b1))?;
    let hidden = tape.relu(hidden)?;
    let per_patch = tape.linear(hidden, w2, Some(b2))?;
    let pooled = tape.mean_row_groups(per_patch, patches_per_channel)?;

    let positional = match cfg.positional {
        PositionalEncoding::Cape => cape::embed_channels(tape, store, &ordered, reference)?,
        PositionalEncoding::Index => {
            if c > cfg.max_positions {
                return Err(Error::contract(format!(
                    "{c} channels exceed the positional table size {}",
                    cfg.max_positions
                )));
            }
            let table = tape.param(store, INDEX_TABLE)?;
            let idx: Vec<usize> = (0..c).collect();
            tape.gather_rows(table, &idx)?
        }
    };
    let tiled_idx: Vec<usize> = (0..b).flat_map(|_| 0..c).collect();
    let tiled = tape.gather_rows(positional, &tiled_idx)?;
    let pre = tape.add(pooled, tiled)?;

    let attended = self_attention(tape, store, cfg.heads, pre, b, c)?;
    let mixed = feed_forward(tape, store, attended)?;

    // back to input channel order
    let mut position = vec![0; c];
    for (k, &ci) in order.iter().enumerate() {
        position[ci] = k;
    }
    let (features, pre_attention) = if order.iter().enumerate().all(|(k, &ci)| k == ci) {
        (mixed, pre)
    } else {
        let back: Vec<usize> = (0..b).flat_map(|s| position.iter().map(move |&k| s * c + k)).collect();
        (tape.gather_rows(mixed, &back)?, tape.gather_rows(pre, &back)?)
    };
    Ok(EncodedChannels {
        features,
        pre_attention,
        samples: b,
        channels: c,
    })
}

/// One pre-norm multi-head self-attention block with a residual connection,
/// applied independently to each sample's `C` rows.
fn self_attention(
    tape: &mut Tape,
    store: &ParameterStore,
    heads: usize,
    x: Var,
    samples: usize,
    channels: usize,
) -> Result<Var> {
    use param_names::*;
    let d = EMBED_DIM;
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::config(format!("{heads} heads do not divide width {d}")));
    }
    let dh = d / heads;
    let normed = tape.layer_norm_rows(x, 1e-5)?;
    let wq = tape.param(store, ATTN_Q)?;
    let wk = tape.param(store, ATTN_K)?;
    let wv = tape.param(store, ATTN_V)?;
    let q = tape.matmul(normed, wq)?;
    let k = tape.matmul(normed, wk)?;
    let v = tape.matmul(normed, wv)?;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut per_sample = Vec::with_capacity(samples);
    for s in 0..samples {
        let row = s * channels;
        let mut head_out = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice(q, row, channels, h * dh, dh)?;
            let kh = tape.slice(k, row, channels, h * dh, dh)?;
            let vh = tape.slice(v, row, channels, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let weights = tape.softmax_rows(scores)?;
            head_out.push(tape.matmul(weights, vh)?);
        }
        per_sample.push(tape.concat_cols(&head_out)?);
    }
    let joined = tape.concat_rows(&per_sample)?;
    let wo = tape.param(store, ATTN_O)?;
    let bo = tape.param(store, ATTN_O_B)?;
    let out = tape.linear(joined, wo, Some(bo))?;
    tape.add(x, out)
}

/// Pre-norm per-channel ReLU feed-forward sublayer with a residual connection.
fn feed_forward(tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
    use param_names::*;
    let normed = tape.layer_norm_rows(x, 1e-5)?;
    let w1 = tape.param(store, FFN1_W)?;
    let b1 = tape.param(store, FFN1_B)?;
    let w2 = tape.param(store, FFN2_W)?;
    let b2 = tape.param(store, FFN2_B)?;
    let h = tape.linear(normed, w1, Some(b1))?;
    let h = tape.relu(h)?;
    let out = tape.linear(h, w2, Some(b2))?;
    tape.add(x, out)
}

/// Value-level encoder for one recording; output follows the input channel order.
pub fn eeg_encode(
    signal: &SignalMatrix,
    store: &ParameterStore,
    cfg: &EegEncoderConfig,
) -> Result<Vec<ChannelFeature>> {
    let mut tape = Tape::new();
    let enc = encode_batch(
        &mut tape,
        store,
        cfg,
        &[&signal.values],
        &signal.channels,
        signal.reference,
    )?;
    let feats = tape.value(enc.features);
    Ok((0..feats.rows())
        .map(|r| ChannelFeature(feats.row(r).to_vec()))
        .collect())
}
