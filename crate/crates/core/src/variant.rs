//! Model naming: `resnet`, `resnext-{w}w{c}c`, `res2net-{w}w{s}s`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::conv::output_len;

/// Residual block family together with its width/cardinality/scale knobs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockFamily {
    /// Two 3x3 convolutions per block.
    ResNet,
    /// Bottleneck with a grouped 3x3 of `cardinality` groups, each `base_width` wide.
    ResNeXt { base_width: usize, cardinality: usize },
    /// 3x3 convolution followed by a hierarchical module of `scale` subsets.
    Res2Net { base_width: usize, scale: usize },
}

fn variant_err(name: &str, reason: impl Into<String>) -> Error {
    Error::Variant {
        name: name.to_string(),
        reason: reason.into(),
    }
}

/// Parse a canonical decimal: digits only, no sign, no leading zeros.
fn number(name: &str, text: &str, what: &str) -> Result<usize> {
    let canonical = !text.is_empty()
        && text.bytes().all(|b| b.is_ascii_digit())
        && (text == "0" || !text.starts_with('0'));
    if !canonical {
        return Err(variant_err(name, format!("`{text}` is not a valid {what}")));
    }
    text.parse()
        .map_err(|_| variant_err(name, format!("{what} `{text}` out of range")))
}

/// Split `"{a}w{b}{suffix}"` into its two numbers.
fn pair(name: &str, body: &str, suffix: char, second: &str) -> Result<(usize, usize)> {
    let body = body
        .strip_suffix(suffix)
        .ok_or_else(|| variant_err(name, format!("missing `{suffix}` suffix")))?;
    let (w, rest) = body
        .split_once('w')
        .ok_or_else(|| variant_err(name, "missing `w` separator"))?;
    Ok((number(name, w, "base width")?, number(name, rest, second)?))
}

impl FromStr for BlockFamily {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        if name == "resnet" {
            return Ok(BlockFamily::ResNet);
        }
        if let Some(body) = name.strip_prefix("resnext-") {
            let (base_width, cardinality) = pair(name, body, 'c', "cardinality")?;
            if base_width == 0 {
                return Err(variant_err(name, "base width must be at least 1"));
            }
            if cardinality == 0 {
                return Err(variant_err(name, "cardinality must be at least 1"));
            }
            return Ok(BlockFamily::ResNeXt {
                base_width,
                cardinality,
            });
        }
        if let Some(body) = name.strip_prefix("res2net-") {
            let (base_width, scale) = pair(name, body, 's', "scale")?;
            if base_width == 0 {
                return Err(variant_err(name, "base width must be at least 1"));
            }
            if scale < 2 {
                return Err(variant_err(name, "scale must be at least 2"));
            }
            return Ok(BlockFamily::Res2Net { base_width, scale });
        }
        Err(variant_err(name, "unknown family"))
    }
}

impl fmt::Display for BlockFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BlockFamily::ResNet => write!(f, "resnet"),
            BlockFamily::ResNeXt {
                base_width,
                cardinality,
            } => write!(f, "resnext-{base_width}w{cardinality}c"),
            BlockFamily::Res2Net { base_width, scale } => write!(f, "res2net-{base_width}w{scale}s"),
        }
    }
}

/// Full description of a speaker model: block family plus the backbone layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelVariant {
    pub family: BlockFamily,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
    pub mel_bins: usize,
    pub heads: usize,
    pub attention_dim: usize,
}

pub const PAPER_NUM_CLASSES: usize = 5994;

impl ModelVariant {
    /// The published layout (three stages of 64/128/256 channels, two blocks
    /// each, 80 Mel bins, 128-d embedding, 16 attention heads).
    pub fn standard(family: BlockFamily, num_classes: usize) -> Self {
        ModelVariant {
            family,
            stage_channels: vec![64, 128, 256],
            blocks_per_stage: vec![2, 2, 2],
            embedding_dim: 128,
            num_classes,
            mel_bins: 80,
            heads: 16,
            attention_dim: 64,
        }
    }

    pub fn parse(name: &str, num_classes: usize) -> Result<Self> {
        let v = Self::standard(name.parse()?, num_classes);
        v.validate()?;
        Ok(v)
    }

    pub fn name(&self) -> String {
        self.family.to_string()
    }

    /// Width multiplier of stage `i` relative to the first stage.
    pub fn stage_multiplier(stage: usize) -> usize {
        1 << stage
    }

    /// Frequency extent after each standalone convolution: one downsampling
    /// convolution per stage, then two frequency-only reductions.
    pub fn frequency_chain(&self) -> Option<Vec<usize>> {
        let mut f = self.mel_bins;
        let mut out = Vec::new();
        for _ in 0..self.stage_channels.len() + 2 {
            f = output_len(f, 0, 3, 2)?;
            out.push(f);
        }
        Some(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.stage_channels.is_empty() || self.stage_channels.len() != self.blocks_per_stage.len() {
            return bad(format!(
                "stage channels {:?} and blocks {:?} must be non-empty and equally long",
                self.stage_channels, self.blocks_per_stage
            ));
        }
        if self.stage_channels.iter().chain([&self.embedding_dim, &self.num_classes, &self.heads, &self.attention_dim]).any(|&v| v == 0) {
            return bad("zero-sized layer in model variant".into());
        }
        match self.frequency_chain() {
            Some(chain) if chain.last() == Some(&1) => {}
            other => {
                return bad(format!(
                    "{} Mel bins reduce to {:?}, the final extent must be 1",
                    self.mel_bins, other
                ))
            }
        }
        Ok(())
    }
}
