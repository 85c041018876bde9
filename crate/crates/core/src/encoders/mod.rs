//! Stand-in encoders: a frozen hashed text featurizer and a small patch-based
//! EEG encoder with one cross-channel attention block.

pub mod eeg;
pub mod text;

pub use eeg::{eeg_encode, ChannelFeature, EegEncoderConfig, EncodedChannels, PositionalEncoding, SignalMatrix};
pub use text::{featurize_text, text_featurize, ReportText, Section, TextFeature, TEXT_DIM};
