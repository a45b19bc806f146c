use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mel::MelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[dims, frames]` log-Mel energies of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    values: Tensor<f32>,
    normalized: bool,
}

impl FeatureMatrix {
    pub fn new(values: Tensor<f32>, normalized: bool) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::invalid(format!(
                "feature matrix must be [dims, frames], got {:?}",
                values.shape()
            )));
        }
        Ok(FeatureMatrix { values, normalized })
    }

    pub fn dims(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.values
    }

    /// Contiguous frames `[start, start + len)`.
    pub fn frames_range(&self, start: usize, len: usize) -> Result<FeatureMatrix> {
        let (d, t) = (self.dims(), self.frames());
        if len == 0 || start + len > t {
            return Err(Error::invalid(format!("frames [{start}, {}) outside 0..{t}", start + len)));
        }
        let mut data = Vec::with_capacity(d * len);
        for m in 0..d {
            data.extend_from_slice(&self.values.data()[m * t + start..][..len]);
        }
        FeatureMatrix::new(Tensor::new(&[d, len], data)?, false)
    }

    pub fn duration_seconds(&self) -> f64 {
        frames_to_seconds(self.frames(), &MelConfig::default())
    }
}

/// Subtract the temporal mean of every feature dimension.
pub fn mean_normalize(f: &FeatureMatrix) -> FeatureMatrix {
    let (d, t) = (f.dims(), f.frames());
    let mut data = f.values.data().to_vec();
    for row in data.chunks_exact_mut(t).take(d) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / t as f64;
        for v in row {
            *v = (*v as f64 - mean) as f32;
        }
    }
    FeatureMatrix {
        values: Tensor::new(&[d, t], data).expect("same shape"),
        normalized: true,
    }
}

/// Frames produced by `seconds` of audio under `cfg` (0 below one window).
pub fn seconds_to_frames(seconds: f64, cfg: &MelConfig) -> usize {
    let samples = (seconds * cfg.sample_rate as f64).round() as usize;
    cfg.num_frames(samples).unwrap_or(0)
}

pub fn frames_to_seconds(frames: usize, cfg: &MelConfig) -> f64 {
    if frames == 0 {
        return 0.0;
    }
    ((frames - 1) * cfg.hop + cfg.window) as f64 / cfg.sample_rate as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Offset {
    Start,
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Truncation {
    /// Mean-normalized segment.
    pub features: FeatureMatrix,
    /// Set when the utterance was shorter than requested and returned whole.
    pub whole: bool,
}

/// Cut a `seconds`-long segment and mean-normalize it.
pub fn truncate(f: &FeatureMatrix, seconds: f64, offset: Offset) -> Result<Truncation> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::invalid(format!("truncation length must be positive, got {seconds}")));
    }
    let want = seconds_to_frames(seconds, &MelConfig::default()).max(1);
    if want > f.frames() {
        return Ok(Truncation {
            features: mean_normalize(f),
            whole: true,
        });
    }
    let start = match offset {
        Offset::Start => 0,
        Offset::Random { seed } => ChaCha8Rng::seed_from_u64(seed).gen_range(0..=f.frames() - want),
    };
    Ok(Truncation {
        features: mean_normalize(&f.frames_range(start, want)?),
        whole: false,
    })
}
