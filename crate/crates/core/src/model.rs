//! The aligned EEG/text model: encoders, projections, pooling and the
//! training objective, with switches for each component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cape::{ChannelId, ReferenceType, EMBED_DIM};
use crate::dcl::{self, attention_pool_on_tape, info_nce_on_tape};
use crate::dcp::{self, ChannelKnowledgeLibrary, RemovalPolicy};
use crate::diffcore::{Checkpoint, ParameterStore, Tape, Tensor, Var};
use crate::encoders::eeg::{self, encode_batch, EegEncoderConfig, PositionalEncoding};
use crate::encoders::text::{init_text_encoder, text_featurize, TextFeature};
use crate::encoders::{ReportText, SignalMatrix};
use crate::error::{Error, Result};

pub const GLOBAL_HEAD_W: &str = "eeg.global_head.w";
pub const GLOBAL_HEAD_B: &str = "eeg.global_head.b";

/// Inference batch size.
const EMBED_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub patch_len: usize,
    pub patch_hidden: usize,
    pub heads: usize,
    pub max_positions: usize,
    /// Attribute-based channel encoding; off falls back to an ordinal table.
    pub cape: bool,
    /// Channel-wise projection, attention pooling and channel removal; off
    /// mean-pools channel features into one embedding.
    pub dcp: bool,
    /// Adds the channel-level loss; requires `dcp`.
    pub dcl: bool,
    pub lambda: f64,
    pub n_sampled: usize,
    pub tau_init: f64,
    pub p_remove: f64,
    pub r_max: f64,
    pub text_buckets: usize,
    pub text_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: EMBED_DIM,
            patch_len: 32,
            patch_hidden: 64,
            heads: 2,
            max_positions: 32,
            cape: true,
            dcp: true,
            dcl: true,
            lambda: 0.5,
            n_sampled: 3,
            tau_init: dcl::DEFAULT_TAU,
            p_remove: 0.5,
            r_max: 0.8,
            text_buckets: crate::encoders::text::DEFAULT_BUCKETS,
            text_seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EegEncoderConfig {
        EegEncoderConfig {
            patch_len: self.patch_len,
            patch_hidden: self.patch_hidden,
            heads: self.heads,
            positional: if self.cape {
                PositionalEncoding::Cape
            } else {
                PositionalEncoding::Index
            },
            max_positions: self.max_positions,
        }
    }

    pub fn removal(&self) -> RemovalPolicy {
        RemovalPolicy {
            p_remove: self.p_remove,
            r_max: self.r_max,
        }
    }

    /// Effective channel-loss weight.
    pub fn ccl_weight(&self) -> f64 {
        if self.dcl {
            self.lambda
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.embed_dim != EMBED_DIM {
            return fail(format!("embed_dim is fixed at {EMBED_DIM}, got {}", self.embed_dim));
        }
        if self.dcl && !self.dcp {
            return fail("the channel-level loss needs channel projection (dcp = true)".into());
        }
        if self.patch_len == 0 || self.patch_hidden == 0 {
            return fail("patch_len and patch_hidden must be positive".into());
        }
        if self.heads == 0 || !EMBED_DIM.is_multiple_of(self.heads) {
            return fail(format!("heads = {} must divide {EMBED_DIM}", self.heads));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.n_sampled == 0 {
            return fail("n_sampled must be at least 1".into());
        }
        if !(self.tau_init >= dcl::MIN_TAU) {
            return fail(format!("tau_init must be >= {}, got {}", dcl::MIN_TAU, self.tau_init));
        }
        if self.text_buckets == 0 {
            return fail("text_buckets must be positive".into());
        }
        self.removal().validate()
    }
}

/// One training mini-batch; every sample shares `channels`.
#[derive(Debug, Clone)]
pub struct TrainBatch<'a> {
    pub signals: Vec<Tensor>,
    pub channels: Vec<ChannelId>,
    pub reference: ReferenceType,
    pub reports: Vec<&'a TextFeature>,
    /// Channel indices per sample for the channel-level loss.
    pub selection: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub scl: Var,
    pub ccl: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct EegVars {
    pub global: Var,
    /// Unit-norm channel embeddings, rows `b * C + i`; absent without `dcp`.
    pub channel_embeds: Option<Var>,
    pub features: Var,
}

pub fn eeg_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &ModelConfig,
    signals: &[&Tensor],
    channels: &[ChannelId],
    reference: ReferenceType,
) -> Result<EegVars> {
    let enc = encode_batch(tape, store, &cfg.encoder(), signals, channels, reference)?;
    if cfg.dcp {
        let e = dcp::eeg_channels_on_tape(tape, store, enc.features)?;
        let x = tape.add(e, enc.features)?;
        let global = attention_pool_on_tape(tape, store, x, enc.samples, enc.channels)?;
        Ok(EegVars {
            global,
            channel_embeds: Some(e),
            features: enc.features,
        })
    } else {
        let pooled = tape.mean_row_groups(enc.features, enc.channels)?;
        let w = tape.param(store, GLOBAL_HEAD_W)?;
        let b = tape.param(store, GLOBAL_HEAD_B)?;
        let z = tape.linear(pooled, w, Some(b))?;
        let global = tape.l2_normalize_rows(z)?;
        Ok(EegVars {
            global,
            channel_embeds: None,
            features: enc.features,
        })
    }
}

/// `L_SCL + lambda * L_CCL` on the tape.
pub fn loss_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &ModelConfig,
    library: &ChannelKnowledgeLibrary,
    batch: &TrainBatch<'_>,
) -> Result<LossVars> {
    let b = batch.signals.len();
    if b < 2 {
        return Err(Error::contract(format!(
            "training batch needs at least 2 samples, got {b}"
        )));
    }
    if batch.reports.len() != b {
        return Err(Error::contract("one report per signal required"));
    }
    let refs: Vec<&Tensor> = batch.signals.iter().collect();
    let eeg = eeg_on_tape(tape, store, cfg, &refs, &batch.channels, batch.reference)?;
    let text = dcp::text_global_on_tape(tape, store, &batch.reports)?;
    let log_tau = tape.param(store, dcl::param_names::LOG_TAU)?;
    let scl = info_nce_on_tape(tape, eeg.global, text, log_tau)?;
    let weight = cfg.ccl_weight();
    if weight == 0.0 {
        return Ok(LossVars {
            total: scl,
            scl,
            ccl: None,
        });
    }
    let e = eeg
        .channel_embeds
        .ok_or_else(|| Error::config("channel-level loss needs channel projection"))?;
    if batch.selection.len() != b {
        return Err(Error::contract("one channel selection per sample required"));
    }
    let c = batch.channels.len();
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    for (s, idx) in batch.selection.iter().enumerate() {
        for &i in idx {
            if i >= c {
                return Err(Error::contract(format!("selected channel {i} out of {c}")));
            }
            rows.push(s * c + i);
            pairs.push((batch.reports[s], &batch.channels[i]));
        }
    }
    let e_sel = tape.gather_rows(e, &rows)?;
    let t_sel = dcp::text_channel_pairs_on_tape(tape, store, &pairs, library)?;
    let ccl = info_nce_on_tape(tape, e_sel, t_sel, log_tau)?;
    let weighted = tape.scale(ccl, weight)?;
    let total = tape.add(scl, weighted)?;
    Ok(LossVars {
        total,
        scl,
        ccl: Some(ccl),
    })
}

/// Parameters plus the frozen text side and channel knowledge.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub library: ChannelKnowledgeLibrary,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        init_text_encoder(&mut store, config.text_buckets, config.text_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_trainable(&mut store, &config, &mut rng);
        let library = ChannelKnowledgeLibrary::standard(&store)?;
        Ok(Self { config, store, library })
    }

    pub fn with_library(mut self, library: ChannelKnowledgeLibrary) -> Self {
        self.library = library;
        self
    }

    pub fn text_feature(&self, report: &ReportText) -> Result<TextFeature> {
        text_featurize(report, &self.store)
    }

    pub fn text_features(&self, reports: &[&ReportText]) -> Result<Vec<TextFeature>> {
        reports.iter().map(|r| self.text_feature(r)).collect()
    }

    /// Report-only text embeddings.
    pub fn text_global(&self, features: &[&TextFeature]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(EMBED_CHUNK.max(1)) {
            let mut tape = Tape::new();
            let v = dcp::text_global_on_tape(&mut tape, &self.store, chunk)?;
            out.extend(rows(tape.value(v)));
        }
        Ok(out)
    }

    fn eeg_chunks<T>(
        &self,
        signals: &[&SignalMatrix],
        mut f: impl FnMut(&Tape, &EegVars, usize) -> Result<T>,
    ) -> Result<Vec<T>> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < signals.len() {
            let first = signals[start];
            let mut end = start + 1;
            while end < signals.len()
                && end - start < EMBED_CHUNK
                && signals[end].channels == first.channels
                && signals[end].reference == first.reference
            {
                end += 1;
            }
            let values: Vec<&Tensor> = signals[start..end].iter().map(|s| &s.values).collect();
            let mut tape = Tape::new();
            let vars = eeg_on_tape(
                &mut tape,
                &self.store,
                &self.config,
                &values,
                &first.channels,
                first.reference,
            )?;
            for i in 0..end - start {
                out.push(f(&tape, &vars, i)?);
            }
            start = end;
        }
        Ok(out)
    }

    /// Unit-norm global EEG embeddings.
    pub fn eeg_global(&self, signals: &[&SignalMatrix]) -> Result<Vec<Vec<f64>>> {
        self.eeg_chunks(signals, |tape, vars, i| Ok(tape.value(vars.global).row(i).to_vec()))
    }

    /// Unit-norm channel embeddings per recording, in channel order.
    pub fn eeg_channels(&self, signals: &[&SignalMatrix]) -> Result<Vec<Vec<Vec<f64>>>> {
        if !self.config.dcp {
            return Err(Error::config("channel embeddings need channel projection (dcp = true)"));
        }
        let counts: Vec<usize> = signals.iter().map(|s| s.channels.len()).collect();
        let mut k = 0;
        self.eeg_chunks(signals, |tape, vars, i| {
            let c = counts[k];
            k += 1;
            let e = tape.value(vars.channel_embeds.expect("dcp enabled"));
            Ok((0..c).map(|j| e.row(i * c + j).to_vec()).collect())
        })
    }

    /// Channel-level text embeddings for one report.
    pub fn text_channels(&self, report: &TextFeature, channels: &[ChannelId]) -> Result<Vec<Vec<f64>>> {
        if !self.config.dcl {
            return Err(Error::config(
                "channel text embeddings are only trained with dcl = true",
            ));
        }
        dcp::project_text_channels(report, channels, &self.library, &self.store)
    }

    pub fn tau(&self) -> Result<f64> {
        Ok(self.store.value(dcl::param_names::LOG_TAU)?.item().exp())
    }

    /// Checkpoint carrying the model configuration in its metadata.
    pub fn checkpoint(&self, extra: impl IntoIterator<Item = (String, String)>) -> Result<Checkpoint> {
        let mut metadata: std::collections::BTreeMap<String, String> = extra.into_iter().collect();
        metadata.insert("model_config".into(), serde_json::to_string(&self.config)?);
        Ok(Checkpoint::from_store(&self.store, metadata))
    }

    /// Rebuilds a model; every parameter must match the shapes implied by `config`.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: &ModelConfig) -> Result<Self> {
        let template = Model::new(config.clone(), 0)?;
        let store = ckpt.to_store()?;
        for (name, entry) in template.store.iter() {
            let got = store
                .entry(name)
                .map_err(|_| Error::config(format!("checkpoint lacks parameter `{name}` required by the config")))?;
            if got.value.shape() != entry.value.shape() {
                return Err(Error::config(format!(
                    "parameter `{name}` has shape {:?} in the checkpoint but {:?} under the config",
                    got.value.shape(),
                    entry.value.shape()
                )));
            }
        }
        if store.len() != template.store.len() {
            return Err(Error::config("checkpoint has parameters the config does not use"));
        }
        let library = ChannelKnowledgeLibrary::standard(&store)?;
        Ok(Self {
            config: config.clone(),
            store,
            library,
        })
    }
}

/// Registers trainable parameters in a fixed order.
pub fn init_trainable<R: Rng + ?Sized>(store: &mut ParameterStore, config: &ModelConfig, rng: &mut R) {
    eeg::init_params(store, &config.encoder(), rng);
    if config.dcp {
        dcp::init_eeg_head(store, rng);
        dcl::init_params(store, rng);
    } else {
        let d = EMBED_DIM;
        store.insert(GLOBAL_HEAD_W, Tensor::randn(d, d, (1.0 / d as f64).sqrt(), rng), false);
        store.insert(GLOBAL_HEAD_B, Tensor::zeros(1, d), false);
    }
    if config.dcl {
        dcp::init_text_channel(store, rng);
    }
    dcp::init_text_global(store, rng);
    dcl::init_temperature(store, config.tau_init);
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dcl_without_dcp_is_rejected() {
        let cfg = ModelConfig {
            dcp: false,
            ..Default::default()
        };
        assert!(matches!(Model::new(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn toggles_change_parameter_sets() {
        let names =
            |cfg: ModelConfig| -> Vec<String> { Model::new(cfg, 0).unwrap().store.names().map(String::from).collect() };
        let full = names(ModelConfig::default());
        let no_dcl = names(ModelConfig {
            dcl: false,
            ..Default::default()
        });
        let no_dcp = names(ModelConfig {
            dcl: false,
            dcp: false,
            ..Default::default()
        });
        let no_cape = names(ModelConfig {
            dcl: false,
            dcp: false,
            cape: false,
            ..Default::default()
        });
        assert!(full.iter().any(|n| n == dcp::param_names::TEXT_CHANNEL_W));
        assert!(!no_dcl.iter().any(|n| n == dcp::param_names::TEXT_CHANNEL_W));
        assert!(no_dcp.iter().any(|n| n == GLOBAL_HEAD_W));
        assert!(!no_dcp.iter().any(|n| n == dcl::param_names::POOL_W));
        assert!(no_cape.iter().any(|n| n == eeg::param_names::INDEX_TABLE));
        assert!(!no_cape.iter().any(|n| n.starts_with("cape.")));
    }

    #[test]
    fn checkpoint_shape_mismatch_is_config_error() {
        let model = Model::new(ModelConfig::default(), 1).unwrap();
        let ckpt = model.checkpoint([]).unwrap();
        let back = Model::from_checkpoint(&ckpt, &model.config).unwrap();
        assert_eq!(back.store.checksum_all(), model.store.checksum_all());
        let other = ModelConfig {
            patch_hidden: 16,
            ..Default::default()
        };
        assert!(matches!(Model::from_checkpoint(&ckpt, &other), Err(Error::Config(_))));
    }
}
