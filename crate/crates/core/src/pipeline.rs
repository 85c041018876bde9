//! Command implementations behind the `eegtext` binary.
//!
//! Each `cmd_*` function reads inputs, computes in memory through a
//! companion function that tests can call directly, and writes files stamped
//! with the config hash and seed.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cape::{ChannelId, Montage, ReferenceType};
use crate::config::RunConfig;
use crate::diffcore::{finite_difference_check, Checkpoint, GradCheckOptions, GradCheckReport, Tensor};
use crate::encoders::SignalMatrix;
use crate::error::{Error, Result};
use crate::evalsuite::{
    auc_pr, balanced_accuracy, channel_separation_report, mean_std, precision_at_k, records_csv, records_json,
    retrieve, train_probe, zero_shot, MetricKind, MetricRecord, PromptBank, PromptMethod, SeparationReport,
};
use crate::model::{loss_on_tape, Model, ModelConfig, TrainBatch};
use crate::prompting::{prompt_similarity_report, similarity_csv, SimilarityRow};
use crate::synthdata::{read_corpus, rederive_montage, write_corpus, Corpus, Labels, Sample, Task, TextTemplates};
use crate::train::{loss_curve_csv, train, TrainOutcome};

pub const CHECKPOINT_FILE: &str = "model.ckpt.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";

/// Longitudinal bipolar chains; none of these channels occur in training.
pub const UNSEEN_BIPOLAR: [(&str, &str); 16] = [
    ("FP1", "F7"),
    ("F7", "T3"),
    ("T3", "T5"),
    ("T5", "O1"),
    ("FP2", "F8"),
    ("F8", "T4"),
    ("T4", "T6"),
    ("T6", "O2"),
    ("FP1", "F3"),
    ("F3", "C3"),
    ("C3", "P3"),
    ("P3", "O1"),
    ("FP2", "F4"),
    ("F4", "C4"),
    ("C4", "P4"),
    ("P4", "O2"),
];

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn signals(samples: &[Sample]) -> Vec<&SignalMatrix> {
    samples.iter().map(|s| &s.signal).collect()
}

#[derive(Debug, Clone)]
pub struct CorpusSummary {
    pub dir: PathBuf,
    pub seed: u64,
    pub config_hash: String,
    pub splits: Vec<(&'static str, usize)>,
    pub channels: usize,
}

impl fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "corpus at {} (seed {}, config {}):",
            self.dir.display(),
            self.seed,
            &self.config_hash[..12]
        )?;
        for (name, n) in &self.splits {
            write!(f, " {name}={n}")?;
        }
        write!(f, ", {} channels", self.channels)
    }
}

/// Generates the corpus into `out`; an existing corpus is only replaced with `force`.
pub fn cmd_gen_data(config: &RunConfig, out: &Path, force: bool) -> Result<CorpusSummary> {
    config.validate()?;
    let existing = ["train", "val", "test"]
        .iter()
        .any(|s| out.join(format!("{s}.jsonl")).exists());
    if existing && !force {
        return Err(Error::config(format!(
            "{} already holds a corpus; pass --force to overwrite",
            out.display()
        )));
    }
    let corpus = crate::synthdata::generate_corpus(&config.data)?;
    write_corpus(out, &config.data, &corpus)?;
    Ok(CorpusSummary {
        dir: out.to_path_buf(),
        seed: config.data.seed,
        config_hash: config.data.hash(),
        splits: corpus.splits().iter().map(|(n, s)| (*n, s.len())).collect(),
        channels: config.data.channels.len(),
    })
}

pub fn load_corpus(config: &RunConfig, dir: &Path) -> Result<Corpus> {
    let (header, corpus) = read_corpus(dir)?;
    if let Some(h) = header {
        if h.config_hash != config.data.hash() {
            log::warn!(
                "corpus in {} was generated under a different data config",
                dir.display()
            );
        }
    }
    if corpus.train.is_empty() || corpus.test.is_empty() {
        return Err(Error::data(format!(
            "{}: train and test splits must be non-empty",
            dir.display()
        )));
    }
    Ok(corpus)
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub checkpoint: PathBuf,
    pub loss_curve: PathBuf,
}

pub fn checkpoint_for(config: &RunConfig, outcome: &TrainOutcome, seed: u64) -> Result<Checkpoint> {
    outcome.model.checkpoint([
        ("config_hash".to_string(), config.hash()),
        ("seed".to_string(), seed.to_string()),
        (
            "best_epoch".to_string(),
            outcome
                .best_epoch
                .map(|e| e.to_string())
                .unwrap_or_else(|| "last".into()),
        ),
    ])
}

pub fn cmd_train(config: &RunConfig, corpus_dir: &Path, out: &Path, seed: u64) -> Result<TrainArtifacts> {
    config.validate()?;
    let corpus = load_corpus(config, corpus_dir)?;
    let outcome = train(config, &corpus, seed)?;
    let hash = config.hash();
    let checkpoint = out.join(CHECKPOINT_FILE);
    let loss_curve = out.join(LOSS_CURVE_FILE);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    checkpoint_for(config, &outcome, seed)?.save(&checkpoint)?;
    write_file(&loss_curve, &loss_curve_csv(&outcome.curve, &hash, seed))?;
    let mut val = format!("# config_hash={hash} seed={seed}\nepoch,pathological,gender,age_group,mean\n");
    for s in &outcome.validation {
        let cols: Vec<String> = s.balanced_accuracy.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(val, "{},{},{}", s.epoch, cols.join(","), s.mean);
    }
    write_file(&out.join("validation.csv"), &val)?;
    write_file(&out.join("config.toml"), &config.to_toml()?)?;
    Ok(TrainArtifacts {
        outcome,
        checkpoint,
        loss_curve,
    })
}

/// Loads a checkpoint whose parameter shapes must match `config.model`.
pub fn load_model(config: &RunConfig, path: &Path) -> Result<Model> {
    let ckpt = Checkpoint::load(path)?;
    Model::from_checkpoint(&ckpt, &config.model)
}

fn record(
    task: Task,
    method: &str,
    metric: MetricKind,
    k: Option<usize>,
    value: f64,
    seed: u64,
) -> Result<MetricRecord> {
    MetricRecord::new(task.as_str(), method, metric, k, value, seed)
}

/// Probe trained on `train` embeddings, scored on `test` embeddings.
fn probe_scores(
    config: &RunConfig,
    task: Task,
    train: (&[Vec<f64>], &[Sample]),
    test: (&[Vec<f64>], &[Sample]),
) -> Result<(f64, f64)> {
    let y: Vec<usize> = train.1.iter().map(|s| s.labels.class(task)).collect();
    let head = train_probe(train.0, &y, 2, &config.eval.probe)?;
    let yt: Vec<usize> = test.1.iter().map(|s| s.labels.class(task)).collect();
    let probs = head.probabilities(test.0)?;
    let preds = head.predict(test.0)?;
    let scores: Vec<f64> = (0..probs.rows()).map(|i| probs.row(i)[1]).collect();
    let positive: Vec<bool> = yt.iter().map(|&c| c == 1).collect();
    Ok((balanced_accuracy(&preds, &yt, 2)?, auc_pr(&scores, &positive)?))
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub records: Vec<MetricRecord>,
    pub similarity: Vec<SimilarityRow>,
}

impl EvalReport {
    pub fn value(&self, task: Task, method: &str, metric: MetricKind) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.task == task.as_str() && r.method == method && r.metric == metric)
            .map(|r| r.value)
    }
}

/// Zero-shot (single and ensemble prompts) and linear-probe scores on the
/// test split, plus prompt-to-report similarity on the validation split.
pub fn evaluate(config: &RunConfig, model: &Model, corpus: &Corpus, seed: u64) -> Result<EvalReport> {
    let bank = PromptBank::build(
        &corpus.train,
        &model.store,
        config.prompts.k,
        config.prompts.seed,
        &config.prompts.single,
    )?;
    let test_embeds = model.eeg_global(&signals(&corpus.test))?;
    let train_embeds = model.eeg_global(&signals(&corpus.train))?;
    let test_refs: Vec<&Sample> = corpus.test.iter().collect();
    let val_text = if corpus.val.is_empty() {
        Vec::new()
    } else {
        let feats = model.text_features(&corpus.val.iter().map(|s| &s.report).collect::<Vec<_>>())?;
        model.text_global(&feats.iter().collect::<Vec<_>>())?
    };
    let mut records = Vec::new();
    let mut similarity = Vec::new();
    for task in Task::ALL {
        for method in [PromptMethod::Single, PromptMethod::Ensemble] {
            let protos = bank.prototypes(task, method, &model.store)?;
            let score = zero_shot(task, &test_embeds, &test_refs, &protos)?;
            let name = format!("zero_shot_{}", method.as_str());
            records.push(record(
                task,
                &name,
                MetricKind::BalancedAccuracy,
                None,
                score.balanced_accuracy,
                seed,
            )?);
            records.push(record(task, &name, MetricKind::AucPr, None, score.auc_pr, seed)?);
            if !val_text.is_empty() {
                let mut by_label: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
                for (s, e) in corpus.val.iter().zip(&val_text) {
                    by_label
                        .entry(s.labels.get(task).to_string())
                        .or_default()
                        .push(e.clone());
                }
                let rows = prompt_similarity_report(&protos, method.as_str(), &by_label)?;
                let mean = rows.iter().map(|r| r.mean).sum::<f64>() / rows.len() as f64;
                records.push(record(
                    task,
                    &format!("prompt_{}", method.as_str()),
                    MetricKind::MeanCosine,
                    None,
                    mean,
                    seed,
                )?);
                similarity.extend(rows);
            }
        }
        let (ba, ap) = probe_scores(
            config,
            task,
            (&train_embeds, &corpus.train),
            (&test_embeds, &corpus.test),
        )?;
        records.push(record(
            task,
            "linear_probe",
            MetricKind::BalancedAccuracy,
            None,
            ba,
            seed,
        )?);
        records.push(record(task, "linear_probe", MetricKind::AucPr, None, ap, seed)?);
    }
    Ok(EvalReport { records, similarity })
}

fn write_records(out: &Path, stem: &str, records: &[MetricRecord], hash: &str) -> Result<()> {
    write_file(&out.join(format!("{stem}.csv")), &records_csv(records, hash))?;
    write_file(&out.join(format!("{stem}.json")), &records_json(records, hash)?)
}

pub fn cmd_eval(config: &RunConfig, corpus_dir: &Path, checkpoint: &Path, out: &Path, seed: u64) -> Result<EvalReport> {
    config.validate()?;
    let model = load_model(config, checkpoint)?;
    let corpus = load_corpus(config, corpus_dir)?;
    let report = evaluate(config, &model, &corpus, seed)?;
    let hash = config.hash();
    write_records(out, "metrics", &report.records, &hash)?;
    write_file(
        &out.join("prompt_similarity.csv"),
        &similarity_csv(&report.similarity, &hash, seed),
    )?;
    Ok(report)
}

/// Precision@K of test EEG queries against the training-report index.
pub fn retrieval(config: &RunConfig, model: &Model, corpus: &Corpus, seed: u64) -> Result<Vec<MetricRecord>> {
    let feats = model.text_features(&corpus.train.iter().map(|s| &s.report).collect::<Vec<_>>())?;
    let index = model.text_global(&feats.iter().collect::<Vec<_>>())?;
    let queries = model.eeg_global(&signals(&corpus.test))?;
    let mut records = Vec::new();
    for task in Task::ALL {
        for &k in &config.eval.retrieval_k {
            let mut total = 0.0;
            for (q, sample) in queries.iter().zip(&corpus.test) {
                let keep: Vec<usize> = (0..index.len())
                    .filter(|&i| !(config.eval.exclude_self && corpus.train[i].subject == sample.subject))
                    .collect();
                let candidates: Vec<Vec<f64>> = keep.iter().map(|&i| index[i].clone()).collect();
                let labels: Vec<&str> = keep.iter().map(|&i| corpus.train[i].labels.get(task)).collect();
                let hits = retrieve(q, &candidates, k)?;
                total += precision_at_k(&hits, &labels, &sample.labels.get(task));
            }
            let p = total / queries.len() as f64;
            records.push(record(task, "retrieval", MetricKind::PrecisionAtK, Some(k), p, seed)?);
        }
    }
    Ok(records)
}

pub fn cmd_retrieve(
    config: &RunConfig,
    corpus_dir: &Path,
    checkpoint: &Path,
    out: &Path,
    seed: u64,
) -> Result<Vec<MetricRecord>> {
    config.validate()?;
    let model = load_model(config, checkpoint)?;
    let corpus = load_corpus(config, corpus_dir)?;
    let records = retrieval(config, &model, &corpus, seed)?;
    write_records(out, "retrieval", &records, &config.hash())?;
    Ok(records)
}

/// Component toggles of one ablation row: (name, cape, dcp, dcl).
pub const ABLATION_ROWS: [(&str, bool, bool, bool); 4] = [
    ("-cape-dcp-dcl", false, false, false),
    ("-dcp-dcl", true, false, false),
    ("-dcl", true, true, false),
    ("full", true, true, true),
];

pub fn ablation_config(base: &ModelConfig, cape: bool, dcp: bool, dcl: bool) -> ModelConfig {
    ModelConfig {
        cape,
        dcp,
        dcl,
        ..base.clone()
    }
}

/// Drops `remove` and reorders the remaining rows with a seeded permutation.
pub fn shift_montage(signal: &SignalMatrix, remove: &[ChannelId], seed: u64) -> Result<SignalMatrix> {
    for r in remove {
        if !signal.channels.contains(r) {
            return Err(Error::data(format!("cannot remove {r}: not in the montage")));
        }
    }
    let mut keep: Vec<usize> = (0..signal.channels.len())
        .filter(|&i| !remove.contains(&signal.channels[i]))
        .collect();
    if keep.is_empty() {
        return Err(Error::data("shift removes every channel"));
    }
    keep.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let t = signal.samples();
    let values: Vec<f64> = keep
        .iter()
        .flat_map(|&i| signal.values.row(i).iter().copied())
        .collect();
    SignalMatrix::new(
        keep.iter().map(|&i| signal.channels[i].clone()).collect(),
        signal.reference,
        Tensor::from_rows(keep.len(), t, values)?,
        signal.sample_rate,
    )
}

pub fn shift_ids(config: &RunConfig) -> Result<Vec<ChannelId>> {
    config
        .eval
        .shift_remove
        .iter()
        .map(|n| ChannelId::unipolar(n))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneityScore {
    pub task: Task,
    pub full: f64,
    pub shifted: f64,
    pub shifted_auc_pr: f64,
}

impl HeterogeneityScore {
    pub fn retention(&self) -> f64 {
        self.shifted / self.full
    }
}

/// Linear probe fitted on full-montage training embeddings, scored on the
/// test split with the full montage and with the shifted montage.
pub fn heterogeneity_benchmark(config: &RunConfig, model: &Model, corpus: &Corpus) -> Result<Vec<HeterogeneityScore>> {
    let remove = shift_ids(config)?;
    let shifted: Vec<SignalMatrix> = corpus
        .test
        .iter()
        .map(|s| shift_montage(&s.signal, &remove, config.eval.shift_seed))
        .collect::<Result<_>>()?;
    let train_embeds = model.eeg_global(&signals(&corpus.train))?;
    let full_embeds = model.eeg_global(&signals(&corpus.test))?;
    let shifted_embeds = model.eeg_global(&shifted.iter().collect::<Vec<_>>())?;
    Task::ALL
        .iter()
        .map(|&task| {
            let train = (&train_embeds[..], &corpus.train[..]);
            let (full, _) = probe_scores(config, task, train, (&full_embeds, &corpus.test))?;
            let (shifted, shifted_auc_pr) = probe_scores(config, task, train, (&shifted_embeds, &corpus.test))?;
            Ok(HeterogeneityScore {
                task,
                full,
                shifted,
                shifted_auc_pr,
            })
        })
        .collect()
}

/// Channel embeddings of `samples` grouped by channel name.
pub fn channel_embeddings(model: &Model, samples: &[&SignalMatrix]) -> Result<BTreeMap<String, Vec<Vec<f64>>>> {
    let per_sample = model.eeg_channels(samples)?;
    let mut out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (signal, embeds) in samples.iter().zip(per_sample) {
        for (c, e) in signal.channels.iter().zip(embeds) {
            out.entry(c.to_string()).or_default().push(e);
        }
    }
    Ok(out)
}

pub fn channel_separation(model: &Model, samples: &[Sample]) -> Result<SeparationReport> {
    channel_separation_report(&channel_embeddings(model, &signals(samples))?)
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub row: &'static str,
    pub seed: u64,
    pub scores: Vec<HeterogeneityScore>,
    /// Within-minus-between channel cosine gap; needs channel projection.
    pub separation_gap: Option<f64>,
}

impl AblationRun {
    pub fn mean_shifted(&self) -> f64 {
        self.scores.iter().map(|s| s.shifted).sum::<f64>() / self.scores.len() as f64
    }
}

/// One training run per (row, seed), scored on the heterogeneity benchmark.
pub fn ablate(
    config: &RunConfig,
    corpus: &Corpus,
    rows: &[(&'static str, bool, bool, bool)],
) -> Result<Vec<AblationRun>> {
    let mut runs = Vec::new();
    for &(row, cape, dcp, dcl) in rows {
        let mut cfg = config.clone();
        cfg.model = ablation_config(&config.model, cape, dcp, dcl);
        cfg.validate()?;
        for &seed in &config.eval.seeds {
            log::info!("ablation {row}, seed {seed}");
            let outcome = train(&cfg, corpus, seed)?;
            let scores = heterogeneity_benchmark(&cfg, &outcome.model, corpus)?;
            let separation_gap = if dcp {
                Some(channel_separation(&outcome.model, &corpus.test)?.gap)
            } else {
                None
            };
            runs.push(AblationRun {
                row,
                seed,
                scores,
                separation_gap,
            });
        }
    }
    Ok(runs)
}

pub fn ablation_records(runs: &[AblationRun]) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for run in runs {
        for s in &run.scores {
            out.push(record(
                s.task,
                run.row,
                MetricKind::BalancedAccuracy,
                None,
                s.shifted,
                run.seed,
            )?);
            out.push(record(
                s.task,
                run.row,
                MetricKind::AucPr,
                None,
                s.shifted_auc_pr,
                run.seed,
            )?);
        }
    }
    Ok(out)
}

/// One line per (row, task): mean and std over seeds of the shifted-montage
/// balanced accuracy, next to the full-montage mean.
pub fn ablation_summary_csv(runs: &[AblationRun], config_hash: &str, seeds: &[u64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
    let mut out = format!(
        "# config_hash={config_hash} seeds={}\nrow,task,shifted_mean,shifted_std,full_mean\n",
        seeds.join(" ")
    );
    for (row, ..) in ABLATION_ROWS {
        let of_row: Vec<&AblationRun> = runs.iter().filter(|r| r.row == row).collect();
        if of_row.is_empty() {
            continue;
        }
        for task in Task::ALL {
            let pick = |f: fn(&HeterogeneityScore) -> f64| -> Vec<f64> {
                of_row
                    .iter()
                    .flat_map(|r| r.scores.iter().filter(|s| s.task == task).map(f))
                    .collect()
            };
            let (m, s) = mean_std(&pick(|s| s.shifted));
            let (full, _) = mean_std(&pick(|s| s.full));
            let _ = writeln!(out, "{row},{task},{m},{s},{full}");
        }
    }
    out
}

pub fn cmd_ablate(config: &RunConfig, corpus_dir: &Path, out: &Path) -> Result<Vec<AblationRun>> {
    config.validate()?;
    let corpus = load_corpus(config, corpus_dir)?;
    let runs = ablate(config, &corpus, &ABLATION_ROWS)?;
    let hash = config.hash();
    write_records(out, "ablation", &ablation_records(&runs)?, &hash)?;
    write_file(
        &out.join("ablation_summary.csv"),
        &ablation_summary_csv(&runs, &hash, &config.eval.seeds),
    )?;
    Ok(runs)
}

#[derive(Debug, Clone)]
pub struct Diagnosis {
    pub separation: SeparationReport,
    /// Seen unipolar channels together with unseen bipolar derivations.
    pub unseen: SeparationReport,
}

pub fn unseen_montage() -> Result<Montage> {
    let channels = UNSEEN_BIPOLAR
        .iter()
        .map(|(a, b)| ChannelId::bipolar(a, b))
        .collect::<Result<Vec<_>>>()?;
    Montage::new(channels, ReferenceType::Bipolar)
}

pub fn cmd_diagnose(
    config: &RunConfig,
    corpus_dir: &Path,
    checkpoint: &Path,
    out: &Path,
    seed: u64,
) -> Result<Diagnosis> {
    config.validate()?;
    let model = load_model(config, checkpoint)?;
    let corpus = load_corpus(config, corpus_dir)?;
    let hash = config.hash();
    let test = signals(&corpus.test);
    let per_sample = model.eeg_channels(&test)?;

    let mut dump =
        format!("# config_hash={hash} seed={seed}\nsubject,channel,pathological,gender,age_group,embedding\n");
    for (sample, embeds) in corpus.test.iter().zip(&per_sample) {
        let Labels {
            pathological,
            gender,
            age_group,
        } = &sample.labels;
        for (c, e) in sample.signal.channels.iter().zip(embeds) {
            let values: Vec<String> = e.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                dump,
                "{},{c},{pathological},{gender},{age_group},{}",
                sample.subject,
                values.join(" ")
            );
        }
    }
    write_file(&out.join("channel_embeddings.csv"), &dump)?;

    let mut by_channel = channel_embeddings(&model, &test)?;
    let separation = channel_separation_report(&by_channel)?;
    let bipolar = unseen_montage()?;
    let rederived = corpus
        .test
        .iter()
        .map(|s| rederive_montage(s, &bipolar))
        .collect::<Result<Vec<_>>>()?;
    by_channel.extend(channel_embeddings(&model, &signals(&rederived))?);
    let unseen = channel_separation_report(&by_channel)?;

    let summary = format!(
        "# config_hash={hash} seed={seed}\nset,within,between,gap\nseen,{},{},{}\nseen+unseen,{},{},{}\n",
        separation.within, separation.between, separation.gap, unseen.within, unseen.between, unseen.gap
    );
    write_file(&out.join("separation.csv"), &summary)?;
    write_file(&out.join("cosine_matrix.csv"), &separation.matrix_csv(&hash, seed))?;
    write_file(&out.join("unseen_cosine_matrix.csv"), &unseen.matrix_csv(&hash, seed))?;
    Ok(Diagnosis { separation, unseen })
}

/// Finite-difference check of the full training objective on a tiny batch:
/// two recordings of three channels, one of them bipolar.
pub fn model_gradcheck(model: &ModelConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        n_sampled: 2,
        ..model.clone()
    };
    let m = Model::new(config.clone(), seed)?;
    let channels = vec![
        ChannelId::unipolar("FP1")?,
        ChannelId::unipolar("CZ")?,
        ChannelId::bipolar("T3", "T5")?,
    ];
    let t = 2 * config.patch_len;
    let signals: Vec<Tensor> = (0..2)
        .map(|_| Tensor::randn(channels.len(), t, 1.0, &mut rng))
        .collect();
    let templates = TextTemplates::default();
    let reports = [
        templates.write_report(&Labels::from_combo(0), &mut rng)?,
        templates.write_report(&Labels::from_combo(7), &mut rng)?,
    ];
    let feats = m.text_features(&reports.iter().collect::<Vec<_>>())?;
    let selection = if config.dcl {
        vec![vec![0, 2], vec![1, 2]]
    } else {
        Vec::new()
    };
    let batch = TrainBatch {
        signals,
        channels,
        reference: ReferenceType::Average,
        reports: feats.iter().collect(),
        selection,
    };
    finite_difference_check(
        "training objective",
        &m.store,
        |tape, store| Ok(loss_on_tape(tape, store, &config, &m.library, &batch)?.total),
        opts,
    )
}

/// Gradient checks over `seeds` consecutive seeds starting at `seed`.
pub fn cmd_gradcheck(config: &RunConfig, seed: u64, seeds: u64) -> Result<Vec<GradCheckReport>> {
    config.model.validate()?;
    (seed..seed + seeds)
        .map(|s| {
            let opts = GradCheckOptions {
                max_coords_per_param: Some(8),
                seed: s,
                ..GradCheckOptions::default()
            };
            model_gradcheck(&config.model, s, &opts)
        })
        .collect()
}
