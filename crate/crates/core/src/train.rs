//! Contrastive training loop with per-epoch validation and best-epoch selection.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cape::ChannelId;
use crate::config::RunConfig;
use crate::dcl::{clamp_temperature, sample_channels};
use crate::dcp::apply_channel_removal;
use crate::diffcore::{optimizer_step, ParameterStore, Tape, Tensor};
use crate::encoders::text::TextFeature;
use crate::encoders::SignalMatrix;
use crate::error::{Error, Result};
use crate::evalsuite::{zero_shot, PromptBank, PromptMethod};
use crate::model::{loss_on_tape, Model, TrainBatch};
use crate::synthdata::{Corpus, Sample, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub scl: f64,
    pub ccl: Option<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochScore {
    pub epoch: usize,
    /// Ensemble-prompt balanced accuracy per task, in `Task::ALL` order.
    pub balanced_accuracy: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<LossPoint>,
    pub validation: Vec<EpochScore>,
    pub best_epoch: Option<usize>,
    pub prompts: PromptBank,
}

/// Channel list shared by every sample of a split.
pub fn shared_channels(samples: &[Sample]) -> Result<&[ChannelId]> {
    let first = samples.first().ok_or_else(|| Error::data("split is empty"))?;
    if samples.iter().any(|s| s.signal.channels != first.signal.channels) {
        return Err(Error::data("samples of a split must share one montage"));
    }
    Ok(&first.signal.channels)
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let data: Vec<f64> = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
    Tensor::from_rows(rows.len(), t.cols(), data)
}

/// Mean ensemble-prompt balanced accuracy over the three tasks.
pub fn validate_epoch(model: &Model, prompts: &PromptBank, samples: &[Sample]) -> Result<Vec<f64>> {
    let signals: Vec<&SignalMatrix> = samples.iter().map(|s| &s.signal).collect();
    let embeds = model.eeg_global(&signals)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    Task::ALL
        .iter()
        .map(|&task| {
            let protos = prompts.prototypes(task, PromptMethod::Ensemble, &model.store)?;
            Ok(zero_shot(task, &embeds, &refs, &protos)?.balanced_accuracy)
        })
        .collect()
}

pub fn train(config: &RunConfig, corpus: &Corpus, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = Model::new(config.model.clone(), seed)?;
    let train_set = &corpus.train;
    let channels = shared_channels(train_set)?.to_vec();
    let reference = train_set[0].signal.reference;
    for c in &channels {
        model.library.feature(c)?;
    }
    let reports: Vec<TextFeature> = train_set
        .iter()
        .map(|s| model.text_feature(&s.report))
        .collect::<Result<_>>()?;
    let prompts = PromptBank::build(
        train_set,
        &model.store,
        config.prompts.k,
        config.prompts.seed,
        &config.prompts.single,
    )?;
    let adam = config.train.adam();
    let removal = config.model.removal();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut curve = Vec::new();
    let mut validation = Vec::new();
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.train.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let kept = if config.model.dcp {
                apply_channel_removal(&channels, &removal, &mut rng)?
            } else {
                (0..channels.len()).collect()
            };
            let signals = chunk
                .iter()
                .map(|&i| select_rows(&train_set[i].signal.values, &kept))
                .collect::<Result<Vec<_>>>()?;
            let selection = if config.model.dcl {
                chunk
                    .iter()
                    .map(|_| sample_channels(kept.len(), config.model.n_sampled, &mut rng))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let batch = TrainBatch {
                signals,
                channels: kept.iter().map(|&i| channels[i].clone()).collect(),
                reference,
                reports: chunk.iter().map(|&i| &reports[i]).collect(),
                selection,
            };
            let context = |e: Error| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch} step {step}: {m}")),
                other => other,
            };
            let mut tape = Tape::new();
            let vars = loss_on_tape(&mut tape, &model.store, &model.config, &model.library, &batch).map_err(context)?;
            let loss = tape.value(vars.total).item();
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("epoch {epoch} step {step}: loss is {loss}")));
            }
            curve.push(LossPoint {
                epoch,
                step,
                loss,
                scl: tape.value(vars.scl).item(),
                ccl: vars.ccl.map(|v| tape.value(v).item()),
                tau: model.tau()?,
            });
            tape.backward(vars.total, &mut model.store).map_err(context)?;
            optimizer_step(&mut model.store, &adam);
            clamp_temperature(&mut model.store)?;
            step += 1;
        }
        if !corpus.val.is_empty() {
            let scores = validate_epoch(&model, &prompts, &corpus.val)?;
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            log::info!("epoch {epoch}: validation balanced accuracy {scores:.3?} (mean {mean:.3})");
            if best.as_ref().is_none_or(|(b, _, _)| mean > *b) {
                best = Some((mean, epoch, model.store.clone()));
            }
            validation.push(EpochScore {
                epoch,
                balanced_accuracy: scores,
                mean,
            });
        }
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, store)) = best {
        model.store = store;
    }
    Ok(TrainOutcome {
        model,
        curve,
        validation,
        best_epoch,
        prompts,
    })
}

pub fn loss_curve_csv(curve: &[LossPoint], config_hash: &str, seed: u64) -> String {
    let mut out = format!("# config_hash={config_hash} seed={seed}\nepoch,step,loss,scl,ccl,tau\n");
    for p in curve {
        let ccl = p.ccl.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{ccl},{}", p.epoch, p.step, p.loss, p.scl, p.tau);
    }
    out
}
