//! Channel-wise projection into the shared embedding space and the
//! mini-batch channel removal augmentation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cape::{ChannelId, Montage, EMBED_DIM};
use crate::diffcore::{ParameterStore, Tape, Tensor, Var};
use crate::encoders::text::{featurize_text, TextFeature, TEXT_DIM};
use crate::encoders::ChannelFeature;
use crate::error::{Error, Result};

const STANDARD_KNOWLEDGE: &str = include_str!("../data/channel_knowledge.tsv");

pub mod param_names {
    pub const EEG_HEAD_W: &str = "dcp.eeg_head.w";
    pub const EEG_HEAD_B: &str = "dcp.eeg_head.b";
    pub const TEXT_CHANNEL_W: &str = "dcp.text_channel.w";
    pub const TEXT_CHANNEL_B: &str = "dcp.text_channel.b";
    pub const TEXT_GLOBAL_W: &str = "text.global.w";
    pub const TEXT_GLOBAL_B: &str = "text.global.b";
}

/// Descriptive text per electrode and its cached frozen text feature.
#[derive(Debug, Clone)]
pub struct ChannelKnowledgeLibrary {
    descriptions: BTreeMap<String, String>,
    features: BTreeMap<String, TextFeature>,
}

impl ChannelKnowledgeLibrary {
    /// The bundled library covering the 21 standard 10-20 electrodes.
    pub fn standard(store: &ParameterStore) -> Result<Self> {
        Self::parse(STANDARD_KNOWLEDGE, store)
    }

    pub fn load(path: &Path, store: &ParameterStore) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, store)
    }

    pub fn parse(text: &str, store: &ParameterStore) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim() == "name\tdescription" => {}
            _ => return Err(Error::data("knowledge library must start with `name\\tdescription`")),
        }
        let mut descriptions = BTreeMap::new();
        for (i, line) in lines {
            let (name, desc) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(format!("knowledge library line {}: expected two columns", i + 1)))?;
            let name = name.trim().to_ascii_uppercase();
            if descriptions.insert(name.clone(), desc.trim().to_string()).is_some() {
                return Err(Error::data(format!("knowledge library: duplicate entry `{name}`")));
            }
        }
        Self::from_descriptions(descriptions, store)
    }

    pub fn from_descriptions(descriptions: BTreeMap<String, String>, store: &ParameterStore) -> Result<Self> {
        let features = descriptions
            .iter()
            .map(|(k, v)| Ok((k.clone(), featurize_text(v, store)?)))
            .collect::<Result<_>>()?;
        Ok(Self { descriptions, features })
    }

    pub fn description(&self, electrode: &str) -> Option<&str> {
        self.descriptions
            .get(&electrode.to_ascii_uppercase())
            .map(String::as_str)
    }

    fn electrode_feature(&self, electrode: &str) -> Result<&TextFeature> {
        self.features
            .get(&electrode.to_ascii_uppercase())
            .ok_or_else(|| Error::data(format!("no channel knowledge entry for `{electrode}`")))
    }

    /// Knowledge feature of a channel; a bipolar derivation uses the mean of its two electrodes.
    pub fn feature(&self, channel: &ChannelId) -> Result<Vec<f64>> {
        let electrodes = channel.electrodes();
        let mut out = vec![0.0; TEXT_DIM];
        for e in &electrodes {
            for (o, v) in out.iter_mut().zip(&self.electrode_feature(e)?.0) {
                *o += v;
            }
        }
        let n = electrodes.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        Ok(out)
    }

    /// Every channel of the montage must have an entry.
    pub fn validate(&self, montage: &Montage) -> Result<()> {
        for c in &montage.channels {
            self.feature(c)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.descriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }
}

pub fn init_params<R: Rng + ?Sized>(store: &mut ParameterStore, rng: &mut R) {
    init_eeg_head(store, rng);
    init_text_channel(store, rng);
    init_text_global(store, rng);
}

pub fn init_eeg_head<R: Rng + ?Sized>(store: &mut ParameterStore, rng: &mut R) {
    use param_names::*;
    let d = EMBED_DIM;
    store.insert(EEG_HEAD_W, Tensor::randn(d, d, (1.0 / d as f64).sqrt(), rng), false);
    store.insert(EEG_HEAD_B, Tensor::zeros(1, d), false);
}

pub fn init_text_channel<R: Rng + ?Sized>(store: &mut ParameterStore, rng: &mut R) {
    use param_names::*;
    let fan = 2 * TEXT_DIM;
    store.insert(
        TEXT_CHANNEL_W,
        Tensor::randn(fan, EMBED_DIM, (1.0 / fan as f64).sqrt(), rng),
        false,
    );
    store.insert(TEXT_CHANNEL_B, Tensor::zeros(1, EMBED_DIM), false);
}

/// The report-only text head; also used when channel projection is disabled.
pub fn init_text_global<R: Rng + ?Sized>(store: &mut ParameterStore, rng: &mut R) {
    use param_names::*;
    let d = EMBED_DIM;
    store.insert(
        TEXT_GLOBAL_W,
        Tensor::randn(TEXT_DIM, d, (1.0 / TEXT_DIM as f64).sqrt(), rng),
        false,
    );
    store.insert(TEXT_GLOBAL_B, Tensor::zeros(1, d), false);
}

/// Shared head applied to every row of `features`, then row-normalized.
pub fn eeg_channels_on_tape(tape: &mut Tape, store: &ParameterStore, features: Var) -> Result<Var> {
    let w = tape.param(store, param_names::EEG_HEAD_W)?;
    let b = tape.param(store, param_names::EEG_HEAD_B)?;
    let z = tape.linear(features, w, Some(b))?;
    tape.l2_normalize_rows(z)
}

/// Rows ordered `b * C + i` for report `b`, channel `channels[i]`.
pub fn text_channels_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    reports: &[&TextFeature],
    channels: &[ChannelId],
    library: &ChannelKnowledgeLibrary,
) -> Result<Var> {
    let pairs: Vec<(&TextFeature, &ChannelId)> = reports
        .iter()
        .flat_map(|r| channels.iter().map(move |c| (*r, c)))
        .collect();
    text_channel_pairs_on_tape(tape, store, &pairs, library)
}

/// One row per (report, channel) pair.
pub fn text_channel_pairs_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    pairs: &[(&TextFeature, &ChannelId)],
    library: &ChannelKnowledgeLibrary,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::contract("text channel projection needs reports and channels"));
    }
    let mut data = Vec::with_capacity(pairs.len() * 2 * TEXT_DIM);
    for (report, channel) in pairs {
        data.extend_from_slice(&report.0);
        data.extend(library.feature(channel)?);
    }
    let input = tape.constant(Tensor::from_rows(pairs.len(), 2 * TEXT_DIM, data)?);
    let w = tape.param(store, param_names::TEXT_CHANNEL_W)?;
    let b = tape.param(store, param_names::TEXT_CHANNEL_B)?;
    let z = tape.linear(input, w, Some(b))?;
    tape.l2_normalize_rows(z)
}

/// One row per report.
pub fn text_global_on_tape(tape: &mut Tape, store: &ParameterStore, reports: &[&TextFeature]) -> Result<Var> {
    if reports.is_empty() {
        return Err(Error::contract("text projection needs at least one report"));
    }
    let data: Vec<f64> = reports.iter().flat_map(|r| r.0.iter().copied()).collect();
    let input = tape.constant(Tensor::from_rows(reports.len(), TEXT_DIM, data)?);
    let w = tape.param(store, param_names::TEXT_GLOBAL_W)?;
    let b = tape.param(store, param_names::TEXT_GLOBAL_B)?;
    let z = tape.linear(input, w, Some(b))?;
    tape.l2_normalize_rows(z)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn project_eeg_channels(features: &[ChannelFeature], store: &ParameterStore) -> Result<Vec<Vec<f64>>> {
    if features.is_empty() {
        return Err(Error::contract("cannot project an empty channel list"));
    }
    let data: Vec<f64> = features.iter().flat_map(|f| f.0.iter().copied()).collect();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(features.len(), EMBED_DIM, data)?);
    let out = eeg_channels_on_tape(&mut tape, store, x)?;
    Ok(rows(tape.value(out)))
}

pub fn project_text_channels(
    report: &TextFeature,
    channels: &[ChannelId],
    library: &ChannelKnowledgeLibrary,
    store: &ParameterStore,
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let out = text_channels_on_tape(&mut tape, store, &[report], channels, library)?;
    Ok(rows(tape.value(out)))
}

pub fn project_text_global(report: &TextFeature, store: &ParameterStore) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let out = text_global_on_tape(&mut tape, store, &[report])?;
    Ok(tape.value(out).data().to_vec())
}

/// Stochastic removal of a shared channel subset per mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalPolicy {
    pub p_remove: f64,
    pub r_max: f64,
}

impl Default for RemovalPolicy {
    fn default() -> Self {
        Self {
            p_remove: 0.5,
            r_max: 0.8,
        }
    }
}

impl RemovalPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_remove) {
            return Err(Error::config(format!(
                "p_remove must lie in [0, 1], got {}",
                self.p_remove
            )));
        }
        if !(self.r_max > 0.0 && self.r_max <= 1.0) {
            return Err(Error::config(format!("r_max must lie in (0, 1], got {}", self.r_max)));
        }
        Ok(())
    }

    /// Largest number of channels a triggered removal may drop.
    pub fn max_removed(&self, channels: usize) -> usize {
        (channels as f64 * self.r_max + 1e-9).floor() as usize
    }
}

/// Indices (ascending) of the channels kept for this mini-batch.
pub fn apply_channel_removal<R: Rng + ?Sized>(
    channels: &[ChannelId],
    policy: &RemovalPolicy,
    rng: &mut R,
) -> Result<Vec<usize>> {
    policy.validate()?;
    let c = channels.len();
    if c < 2 {
        return Err(Error::contract(format!(
            "channel removal needs at least 2 channels, got {c}"
        )));
    }
    let upper = policy.max_removed(c);
    if upper < 1 {
        return Err(Error::contract(format!(
            "r_max {} allows no removal from {c} channels",
            policy.r_max
        )));
    }
    if !rng.random_bool(policy.p_remove) {
        return Ok((0..c).collect());
    }
    // never drop every channel
    let upper = upper.min(c - 1);
    let m = rng.random_range(1..=upper);
    let mut removed = vec![false; c];
    for i in sample(rng, c, m) {
        removed[i] = true;
    }
    Ok((0..c).filter(|&i| !removed[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::text::{init_text_encoder, DEFAULT_BUCKETS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        init_text_encoder(&mut s, DEFAULT_BUCKETS, 3);
        init_params(&mut s, &mut ChaCha8Rng::seed_from_u64(5));
        s
    }

    fn unit(v: &[f64]) -> bool {
        (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12
    }

    #[test]
    fn library_covers_standard_electrodes() {
        let s = store();
        let lib = ChannelKnowledgeLibrary::standard(&s).unwrap();
        assert_eq!(lib.len(), 21);
        lib.validate(&Montage::standard_19(crate::cape::ReferenceType::Average))
            .unwrap();
        let bip = ChannelId::bipolar("FP1", "F7").unwrap();
        let f = lib.feature(&bip).unwrap();
        let a = lib.feature(&ChannelId::unipolar("FP1").unwrap()).unwrap();
        let b = lib.feature(&ChannelId::unipolar("F7").unwrap()).unwrap();
        for i in 0..TEXT_DIM {
            assert_eq!(f[i], (a[i] + b[i]) / 2.0);
        }
    }

    #[test]
    fn missing_entry_names_channel() {
        let s = store();
        let lib = ChannelKnowledgeLibrary::parse("name\tdescription\nFP1\tfront\n", &s).unwrap();
        let err = lib.feature(&ChannelId::unipolar("O2").unwrap()).unwrap_err();
        assert!(err.to_string().contains("O2"));
    }

    #[test]
    fn eeg_projection_is_per_channel() {
        let s = store();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for c in [1, 5, 23] {
            let feats: Vec<ChannelFeature> = (0..c)
                .map(|_| ChannelFeature(Tensor::randn(1, EMBED_DIM, 1.0, &mut rng).into_data()))
                .collect();
            let out = project_eeg_channels(&feats, &s).unwrap();
            assert_eq!(out.len(), c);
            assert!(out.iter().all(|v| unit(v)));
            let alone = project_eeg_channels(&feats[..1], &s).unwrap();
            assert_eq!(alone[0], out[0]);
        }
        assert!(project_eeg_channels(&[], &s).is_err());
    }

    #[test]
    fn text_channel_embeddings_vary_with_channel_and_report() {
        let s = store();
        let lib = ChannelKnowledgeLibrary::standard(&s).unwrap();
        let r1 = featurize_text("abnormal eeg with temporal slowing", &s).unwrap();
        let r2 = featurize_text("normal eeg with posterior alpha", &s).unwrap();
        let chans = vec![ChannelId::unipolar("T3").unwrap(), ChannelId::unipolar("O1").unwrap()];
        let a = project_text_channels(&r1, &chans, &lib, &s).unwrap();
        let b = project_text_channels(&r2, &chans, &lib, &s).unwrap();
        assert_eq!(a.len(), 2);
        assert_ne!(a[0], a[1]);
        assert_ne!(a[0], b[0]);
        assert!(a.iter().chain(&b).all(|v| unit(v)));
        let g1 = project_text_global(&r1, &s).unwrap();
        assert!(unit(&g1));
        assert_eq!(g1, project_text_global(&r1, &s).unwrap());
        assert_ne!(g1, project_text_global(&r2, &s).unwrap());
    }

    #[test]
    fn removal_identity_and_bounds() {
        let chans: Vec<ChannelId> = crate::cape::STANDARD_19
            .iter()
            .map(|n| ChannelId::unipolar(n).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let off = RemovalPolicy {
            p_remove: 0.0,
            r_max: 0.5,
        };
        for _ in 0..100 {
            assert_eq!(apply_channel_removal(&chans, &off, &mut rng).unwrap().len(), 19);
        }
        let on = RemovalPolicy {
            p_remove: 1.0,
            r_max: 0.5,
        };
        for _ in 0..500 {
            let kept = apply_channel_removal(&chans, &on, &mut rng).unwrap();
            let removed = 19 - kept.len();
            assert!((1..=9).contains(&removed));
        }
        let bad = RemovalPolicy {
            p_remove: 1.0,
            r_max: 0.4,
        };
        assert!(apply_channel_removal(&chans[..2], &bad, &mut rng).is_err());
        assert!(apply_channel_removal(&chans[..1], &on, &mut rng).is_err());
    }
}
