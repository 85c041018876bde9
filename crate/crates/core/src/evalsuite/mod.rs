//! Evaluation protocols: prompt-based classification, linear probing,
//! retrieval, channel-embedding diagnostics and metric records.

pub mod classify;
pub mod metrics;
pub mod probe;
pub mod records;
pub mod retrieval;
pub mod separation;
pub mod zeroshot;

pub use classify::text_based_classify;
pub use metrics::{auc_pr, balanced_accuracy};
pub use probe::{train_probe, ProbeConfig, ProbeHead};
pub use records::{mean_std, records_csv, records_json, MetricKind, MetricRecord};
pub use retrieval::{precision_at_k, retrieve};
pub use separation::{channel_separation_report, SeparationReport};
pub use zeroshot::{zero_shot, PromptBank, PromptMethod, ZeroShotScore};
