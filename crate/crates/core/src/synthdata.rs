//! Synthetic paired EEG/report corpus with known label structure.
//!
//! Every subject gets signals for all 21 electrodes of the nomenclature table;
//! the configured montage is then derived from those rows, so any other
//! montage can be re-derived later without regenerating.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cape::{ChannelId, Montage, Nomenclature, ReferenceType, STANDARD_19};
use crate::diffcore::Tensor;
use crate::encoders::{ReportText, Section, SignalMatrix};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// The three binary classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pathological,
    Gender,
    AgeGroup,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Pathological, Task::Gender, Task::AgeGroup];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pathological => "pathological",
            Task::Gender => "gender",
            Task::AgeGroup => "age_group",
        }
    }

    /// Class values in lexicographic order; index 1 is the positive class for AUC-PR.
    pub fn classes(self) -> [&'static str; 2] {
        match self {
            Task::Pathological => ["abnormal", "normal"],
            Task::Gender => ["female", "male"],
            Task::AgeGroup => ["over50", "under50"],
        }
    }

    pub fn class_index(self, value: &str) -> Result<usize> {
        self.classes()
            .iter()
            .position(|c| *c == value)
            .ok_or_else(|| Error::data(format!("`{value}` is not a {} label", self.as_str())))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub pathological: String,
    pub gender: String,
    pub age_group: String,
}

impl Labels {
    pub fn get(&self, task: Task) -> &str {
        match task {
            Task::Pathological => &self.pathological,
            Task::Gender => &self.gender,
            Task::AgeGroup => &self.age_group,
        }
    }

    pub fn class(&self, task: Task) -> usize {
        task.class_index(self.get(task))
            .expect("labels validated on construction")
    }

    pub fn from_combo(combo: usize) -> Self {
        Self {
            pathological: Task::Pathological.classes()[combo & 1].into(),
            gender: Task::Gender.classes()[(combo >> 1) & 1].into(),
            age_group: Task::AgeGroup.classes()[(combo >> 2) & 1].into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in Task::ALL {
            t.class_index(self.get(t))?;
        }
        Ok(())
    }
}

/// One paired record.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject: u64,
    pub signal: SignalMatrix,
    pub report: ReportText,
    pub labels: Labels,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Corpus {
    pub fn splits(&self) -> [(&'static str, &Vec<Sample>); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta];

    /// Centre frequency in Hz.
    pub fn frequency(self) -> f64 {
        match self {
            Band::Delta => 3.0,
            Band::Theta => 6.0,
            Band::Alpha => 10.0,
            Band::Beta => 20.0,
        }
    }

    fn base_amplitude(self) -> f64 {
        match self {
            Band::Delta => 1.0,
            Band::Theta => 0.7,
            Band::Alpha => 1.0,
            Band::Beta => 1.0,
        }
    }
}

/// Relative amplitude boost of one band on a set of electrodes for one label value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalEffect {
    pub task: Task,
    pub value: String,
    pub band: Band,
    pub electrodes: Vec<String>,
    pub gain: f64,
}

/// Effects swap the location of a band boost between the two classes of a
/// task with equally sized electrode sets, so the summed band power carries
/// no label information; only channel identity does.
pub fn default_effects(gain: f64) -> Vec<SignalEffect> {
    let e = |task, value: &str, band, names: &[&str]| SignalEffect {
        task,
        value: value.into(),
        band,
        electrodes: names.iter().map(|s| s.to_string()).collect(),
        gain: if task == Task::AgeGroup { 1.5 * gain } else { gain },
    };
    vec![
        e(Task::Pathological, "abnormal", Band::Delta, &["T3", "T4", "T5", "T6"]),
        e(Task::Pathological, "normal", Band::Delta, &["O1", "O2", "P3", "P4"]),
        e(
            Task::AgeGroup,
            "over50",
            Band::Beta,
            &["FP1", "FP2", "F3", "F4", "F7", "F8"],
        ),
        e(
            Task::AgeGroup,
            "under50",
            Band::Beta,
            &["O1", "O2", "P3", "P4", "T5", "T6"],
        ),
        e(
            Task::Gender,
            "male",
            Band::Alpha,
            &["FP1", "F7", "F3", "T3", "C3", "T5", "P3", "O1"],
        ),
        e(
            Task::Gender,
            "female",
            Band::Alpha,
            &["FP2", "F8", "F4", "T4", "C4", "T6", "P4", "O2"],
        ),
    ]
}

/// Phrase pools used to write reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextTemplates {
    /// Probability that a label-correlated cue matches the subject's true label.
    pub cue_fidelity: f64,
    pub age: BTreeMap<String, Vec<String>>,
    pub gender_noun: BTreeMap<String, Vec<String>>,
    pub pronoun: BTreeMap<String, String>,
    pub complaint: BTreeMap<String, Vec<String>>,
    pub medication: BTreeMap<String, Vec<String>>,
    pub finding: BTreeMap<String, Vec<String>>,
    pub impression: BTreeMap<String, Vec<String>>,
    pub distractors: Vec<String>,
}

fn pool(entries: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
        .collect()
}

impl Default for TextTemplates {
    fn default() -> Self {
        Self {
            cue_fidelity: 0.8,
            age: pool(&[
                (
                    "under50",
                    &[
                        "young",
                        "twenty six year old",
                        "thirty one year old",
                        "young adult",
                        "teenage",
                    ],
                ),
                (
                    "over50",
                    &[
                        "elderly",
                        "sixty eight year old",
                        "seventy three year old",
                        "older",
                        "aged",
                    ],
                ),
            ]),
            gender_noun: pool(&[
                ("male", &["man", "male", "gentleman"]),
                ("female", &["woman", "female", "lady"]),
            ]),
            pronoun: [("male", "he"), ("female", "she")]
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            complaint: pool(&[
                (
                    "abnormal",
                    &[
                        "with recurrent seizures",
                        "with new onset convulsions",
                        "after a generalized tonic clonic event",
                    ],
                ),
                (
                    "normal",
                    &[
                        "with a single syncopal episode",
                        "with chronic headaches",
                        "with episodes of dizziness",
                    ],
                ),
            ]),
            medication: pool(&[
                ("abnormal", &["keppra", "dilantin", "lamictal", "depakote"]),
                ("normal", &["none", "tylenol", "lisinopril", "aspirin"]),
            ]),
            finding: pool(&[
                (
                    "abnormal",
                    &[
                        "there is focal slowing over the temporal regions",
                        "intermittent polymorphic delta activity is seen over both temporal leads",
                        "sharp waves are noted in the temporal derivations",
                    ],
                ),
                (
                    "normal",
                    &[
                        "the posterior dominant rhythm is well formed and reactive",
                        "no focal slowing or epileptiform discharges are seen",
                        "background activity is normal and symmetric",
                    ],
                ),
                (
                    "over50",
                    &[
                        "prominent frontopolar beta activity",
                        "excess anterior temporal fast activity",
                    ],
                ),
                (
                    "under50",
                    &[
                        "central beta activity over the motor strip",
                        "fast activity over the frontal central region",
                    ],
                ),
                (
                    "male",
                    &[
                        "alpha is higher over the left hemisphere",
                        "left sided alpha predominance",
                    ],
                ),
                (
                    "female",
                    &[
                        "alpha is higher over the right hemisphere",
                        "right sided alpha predominance",
                    ],
                ),
            ]),
            impression: pool(&[
                ("abnormal", &["abnormal eeg", "abnormal study due to temporal slowing"]),
                ("normal", &["normal eeg", "normal awake and drowsy study"]),
            ]),
            distractors: [
                "referred by the outpatient neurology clinic",
                "no prior studies are available for comparison",
                "the recording was technically adequate",
                "photic stimulation was performed",
                "hyperventilation was not performed",
                "history of hypertension",
                "the patient was cooperative throughout",
                "electrode impedances were acceptable",
                "clinical correlation is advised",
                "study performed at the bedside",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl TextTemplates {
    fn pick<'a, R: Rng + ?Sized>(map: &'a BTreeMap<String, Vec<String>>, key: &str, rng: &mut R) -> Result<&'a str> {
        map.get(key)
            .and_then(|v| v.choose(rng))
            .map(String::as_str)
            .ok_or_else(|| Error::config(format!("text templates have no phrases for `{key}`")))
    }

    /// A cue that follows the true label with probability `cue_fidelity`.
    fn noisy_cue<'a, R: Rng + ?Sized>(
        &'a self,
        map: &'a BTreeMap<String, Vec<String>>,
        task: Task,
        value: &str,
        rng: &mut R,
    ) -> Result<&'a str> {
        let [a, b] = task.classes();
        let other = if value == a { b } else { a };
        let key = if rng.random_bool(self.cue_fidelity) {
            value
        } else {
            other
        };
        Self::pick(map, key, rng)
    }

    fn distractor<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        self.distractors.choose(rng).map(String::as_str).unwrap_or("")
    }

    pub fn write_report<R: Rng + ?Sized>(&self, labels: &Labels, rng: &mut R) -> Result<ReportText> {
        let age = Self::pick(&self.age, &labels.age_group, rng)?;
        let noun = Self::pick(&self.gender_noun, &labels.gender, rng)?;
        let complaint = self.noisy_cue(&self.complaint, Task::Pathological, &labels.pathological, rng)?;
        let history = format!("{age} {noun} {complaint}. {}.", self.distractor(rng));

        let meds = self.noisy_cue(&self.medication, Task::Pathological, &labels.pathological, rng)?;
        let medications = format!("{meds}.");

        let pronoun = self
            .pronoun
            .get(&labels.gender)
            .ok_or_else(|| Error::config(format!("no pronoun for `{}`", labels.gender)))?;
        let finding = Self::pick(&self.finding, &labels.pathological, rng)?;
        let age_finding = self.noisy_cue(&self.finding, Task::AgeGroup, &labels.age_group, rng)?;
        let side = self.noisy_cue(&self.finding, Task::Gender, &labels.gender, rng)?;
        let description = format!(
            "{pronoun} was awake during the recording. {finding}. {age_finding}. {side}. {}.",
            self.distractor(rng)
        );

        let impression = format!(
            "{}. {}.",
            Self::pick(&self.impression, &labels.pathological, rng)?,
            self.distractor(rng)
        );
        Ok(ReportText::new([
            (Section::ClinicalHistory, history),
            (Section::Medications, medications),
            (Section::Description, description),
            (Section::Impression, impression),
        ]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_subjects: usize,
    pub channels: Vec<String>,
    pub reference: ReferenceType,
    pub samples: usize,
    pub sample_rate: f64,
    pub noise: f64,
    /// Relative amplitude jitter applied per subject, electrode and band.
    pub amplitude_jitter: f64,
    /// Frequency jitter in Hz applied per subject and band.
    pub frequency_jitter: f64,
    pub effect_gain: f64,
    pub effects: Option<Vec<SignalEffect>>,
    pub templates: TextTemplates,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_subjects: 512,
            channels: STANDARD_19.iter().map(|s| s.to_string()).collect(),
            reference: ReferenceType::Average,
            samples: 256,
            sample_rate: 128.0,
            noise: 0.5,
            amplitude_jitter: 0.2,
            frequency_jitter: 0.5,
            effect_gain: 0.5,
            effects: None,
            templates: TextTemplates::default(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn montage(&self) -> Result<Montage> {
        let channels = self
            .channels
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<ChannelId>>>()?;
        Montage::new(channels, self.reference).map_err(|e| Error::config(e.to_string()))
    }

    pub fn effects(&self) -> Vec<SignalEffect> {
        self.effects
            .clone()
            .unwrap_or_else(|| default_effects(self.effect_gain))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 12 {
            return Err(Error::config(format!(
                "need at least 12 subjects, got {}",
                self.n_subjects
            )));
        }
        if self.samples == 0 || !(self.sample_rate > 0.0) {
            return Err(Error::config("samples and sample_rate must be positive"));
        }
        if !(self.noise >= 0.0) || !(0.0..1.0).contains(&self.amplitude_jitter) {
            return Err(Error::config("noise must be >= 0 and amplitude_jitter in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.templates.cue_fidelity) {
            return Err(Error::config("cue_fidelity must lie in [0, 1]"));
        }
        let montage = self.montage()?;
        montage.validate(&Nomenclature::standard())?;
        let effects = self.effects();
        for task in Task::ALL {
            for value in task.classes() {
                if !effects.iter().any(|e| e.task == task && e.value == value) {
                    return Err(Error::config(format!("effect table has no entry for {task}={value}")));
                }
            }
        }
        for e in &effects {
            e.task
                .class_index(&e.value)
                .map_err(|err| Error::config(err.to_string()))?;
            for name in &e.electrodes {
                if Nomenclature::standard().get(name).is_none() {
                    return Err(Error::config(format!("effect electrode `{name}` is unknown")));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn subject_rng(seed: u64, subject: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject + 1);
    rng
}

/// Signals for every electrode of the nomenclature table, in table order.
pub fn generate_electrode_signals<R: Rng + ?Sized>(
    config: &GeneratorConfig,
    labels: &Labels,
    rng: &mut R,
) -> Result<SignalMatrix> {
    let nomenclature = Nomenclature::standard();
    let names = nomenclature.names();
    let effects = config.effects();
    let t = config.samples;
    let freqs: Vec<f64> = Band::ALL
        .iter()
        .map(|b| b.frequency() + rng.random_range(-1.0..=1.0) * config.frequency_jitter)
        .collect();
    let noise = Normal::new(0.0, config.noise.max(0.0)).map_err(|e| Error::config(e.to_string()))?;
    let mut values = Vec::with_capacity(names.len() * t);
    for name in names {
        let mut row = vec![0.0; t];
        for (bi, band) in Band::ALL.iter().enumerate() {
            let mut amp = band.base_amplitude();
            if config.amplitude_jitter > 0.0 {
                amp *= 1.0 + rng.random_range(-config.amplitude_jitter..=config.amplitude_jitter);
            }
            for e in &effects {
                if e.band == *band
                    && labels.get(e.task) == e.value
                    && e.electrodes.iter().any(|x| x.eq_ignore_ascii_case(name))
                {
                    amp *= 1.0 + e.gain;
                }
            }
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let w = std::f64::consts::TAU * freqs[bi] / config.sample_rate;
            for (k, v) in row.iter_mut().enumerate() {
                *v += amp * (w * k as f64 + phase).sin();
            }
        }
        if config.noise > 0.0 {
            for v in row.iter_mut() {
                *v += noise.sample(rng);
            }
        }
        values.extend(row);
    }
    let channels = names
        .iter()
        .map(|n| ChannelId::unipolar(n))
        .collect::<Result<Vec<_>>>()?;
    SignalMatrix::new(
        channels,
        config.reference,
        Tensor::from_rows(names.len(), t, values)?,
        config.sample_rate,
    )
}

/// One subject, signals derived to the configured montage.
pub fn generate_subject(config: &GeneratorConfig, subject: u64, labels: Labels) -> Result<Sample> {
    let mut rng = subject_rng(config.seed, subject);
    let electrodes = generate_electrode_signals(config, &labels, &mut rng)?;
    let report = config.templates.write_report(&labels, &mut rng)?;
    let full = Sample {
        subject,
        signal: electrodes,
        report,
        labels,
    };
    rederive_montage(&full, &config.montage()?)
}

/// Balanced labels (cycling all eight combinations) and a stratified,
/// subject-disjoint 2/3 : 1/6 : 1/6 split.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<Corpus> {
    config.validate()?;
    let mut by_combo: Vec<Vec<u64>> = vec![Vec::new(); 8];
    for s in 0..config.n_subjects as u64 {
        by_combo[(s % 8) as usize].push(s);
    }
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut corpus = Corpus::default();
    for (combo, mut subjects) in by_combo.into_iter().enumerate() {
        subjects.shuffle(&mut split_rng);
        let n = subjects.len();
        let n_val = n / 6;
        let n_test = n / 6;
        let n_train = n - n_val - n_test;
        for (i, s) in subjects.into_iter().enumerate() {
            let sample = generate_subject(config, s, Labels::from_combo(combo))?;
            if i < n_train {
                corpus.train.push(sample);
            } else if i < n_train + n_val {
                corpus.val.push(sample);
            } else {
                corpus.test.push(sample);
            }
        }
    }
    for split in [&mut corpus.train, &mut corpus.val, &mut corpus.test] {
        split.sort_by_key(|s| s.subject);
    }
    Ok(corpus)
}

/// Re-express a sample in another montage. Source channels must be unipolar.
pub fn rederive_montage(sample: &Sample, target: &Montage) -> Result<Sample> {
    let source = &sample.signal;
    let row_of = |name: &str| -> Result<&[f64]> {
        source
            .channel_row(&ChannelId::Unipolar(name.to_string()))
            .ok_or_else(|| Error::data(format!("source montage lacks electrode {name}")))
    };
    let t = source.samples();
    let mut values = Vec::with_capacity(target.len() * t);
    for c in &target.channels {
        match c {
            ChannelId::Unipolar(a) => values.extend_from_slice(row_of(a)?),
            ChannelId::Bipolar(a, b) => {
                let (ra, rb) = (row_of(a)?, row_of(b)?);
                values.extend(ra.iter().zip(rb).map(|(x, y)| x - y));
            }
        }
    }
    let signal = SignalMatrix::new(
        target.channels.clone(),
        target.reference,
        Tensor::from_rows(target.len(), t, values)?,
        source.sample_rate,
    )?;
    Ok(Sample {
        signal,
        ..sample.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub schema_version: u32,
    pub split: String,
    pub montage: Vec<String>,
    pub reference: ReferenceType,
    pub sample_rate: f64,
    pub samples: usize,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    subject: u64,
    channels: Vec<String>,
    reference: ReferenceType,
    sample_rate: f64,
    samples: usize,
    /// Little-endian f64, row-major, base64.
    signal: String,
    report: BTreeMap<Section, String>,
    labels: Labels,
}

impl SampleRecord {
    fn from_sample(s: &Sample) -> Self {
        let bytes: Vec<u8> = s.signal.values.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            subject: s.subject,
            channels: s.signal.channels.iter().map(ToString::to_string).collect(),
            reference: s.signal.reference,
            sample_rate: s.signal.sample_rate,
            samples: s.signal.samples(),
            signal: B64.encode(bytes),
            report: s.report.sections.clone(),
            labels: s.labels.clone(),
        }
    }

    fn into_sample(self) -> Result<Sample> {
        let bytes = B64
            .decode(&self.signal)
            .map_err(|e| Error::data(format!("bad signal encoding: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::data("signal byte length is not a multiple of 8"));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let channels = self
            .channels
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<ChannelId>>>()?;
        let tensor = Tensor::from_rows(channels.len(), self.samples, values)?;
        self.labels.validate()?;
        Ok(Sample {
            subject: self.subject,
            signal: SignalMatrix::new(channels, self.reference, tensor, self.sample_rate)?,
            report: ReportText { sections: self.report },
            labels: self.labels,
        })
    }
}

pub fn write_samples(path: &Path, header: &CorpusHeader, samples: &[Sample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = serde_json::to_string(header)?;
    line.push('\n');
    for s in samples {
        line.push_str(&serde_json::to_string(&SampleRecord::from_sample(s))?);
        line.push('\n');
    }
    w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one split file. An empty file is an empty split.
pub fn read_samples(path: &Path) -> Result<(Option<CorpusHeader>, Vec<Sample>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::data(format!("{}:{}: {msg}", path.display(), i + 1));
        if header.is_none() {
            let h: CorpusHeader = serde_json::from_str(&line).map_err(|e| at(format!("bad header: {e}")))?;
            if h.schema_version != SCHEMA_VERSION {
                return Err(at(format!(
                    "schema version {} is not supported (expected {SCHEMA_VERSION})",
                    h.schema_version
                )));
            }
            header = Some(h);
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        samples.push(record.into_sample().map_err(|e| at(e.to_string()))?);
    }
    Ok((header, samples))
}

pub fn header_for(config: &GeneratorConfig, split: &str) -> CorpusHeader {
    CorpusHeader {
        schema_version: SCHEMA_VERSION,
        split: split.into(),
        montage: config.channels.iter().map(|c| c.to_ascii_uppercase()).collect(),
        reference: config.reference,
        sample_rate: config.sample_rate,
        samples: config.samples,
        config_hash: config.hash(),
        seed: config.seed,
    }
}

/// Writes `train.jsonl`, `val.jsonl` and `test.jsonl` into `dir`.
pub fn write_corpus(dir: &Path, config: &GeneratorConfig, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, samples) in corpus.splits() {
        write_samples(&dir.join(format!("{name}.jsonl")), &header_for(config, name), samples)?;
    }
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<(Option<CorpusHeader>, Corpus)> {
    let (header, train) = read_samples(&dir.join("train.jsonl"))?;
    let (_, val) = read_samples(&dir.join("val.jsonl"))?;
    let (_, test) = read_samples(&dir.join("test.jsonl"))?;
    Ok((header, Corpus { train, val, test }))
}
