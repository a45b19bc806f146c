//! Audio ingestion, log-Mel features, utterance mean normalization and truncation.

pub mod features;
pub mod mel;
pub mod wav;

pub use features::{mean_normalize, truncate, FeatureMatrix, Offset, Truncation};
pub use mel::{logmel, MelConfig, MelExtractor};
pub use wav::{read_wav, write_wav, Waveform, SAMPLE_RATE};
