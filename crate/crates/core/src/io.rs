//! Binary tensor records and model checkpoints.
//!
//! A tensor record is the magic `TNSR`, a `u8` rank, `rank` little-endian `u32`
//! dimensions and the `f32` little-endian data. A checkpoint is the magic
//! `SPKC`, a length-prefixed UTF-8 block of `key=value` metadata, a `u32`
//! record count and that many `(u32 name length, name, tensor record)` entries.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::backbone::SpeakerModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::variant::ModelVariant;

const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
const CHECKPOINT_MAGIC: &[u8; 4] = b"SPKC";

pub fn write_tensor(w: &mut impl Write, t: &Tensor<f32>) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid("tensor rank above 255"))?;
    w.write_all(&[rank])?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::invalid("dimension above u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(4 * t.numel());
    for &v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::format("tensor", format!("bad magic {magic:?}")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    let shape = (0..rank[0]).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| Error::format("tensor", format!("implausible shape {shape:?}")))?;
    let mut bytes = vec![0u8; 4 * n];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Tensor::new(&shape, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    read_tensor(&mut std::io::BufReader::new(f)).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Named tensors plus string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format("checkpoint", format!("missing metadata `{key}`")))
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::invalid(format!("metadata entry `{k}` cannot be encoded")));
            }
            meta.push_str(&format!("{k}={v}\n"));
        }
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_tensor(w, t)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", format!("bad magic {magic:?}")));
        }
        let text = read_string(r)?;
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("checkpoint", format!("bad metadata line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = read_u32(r)?;
        let tensors = (0..count)
            .map(|_| Ok((read_string(r)?, read_tensor(r)?)))
            .collect::<Result<_>>()?;
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // write then rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("partial");
        {
            let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ctx = path.display().to_string();
        let f = std::fs::File::open(path).map_err(|e| Error::format(ctx.clone(), e.to_string()))?;
        Self::read(&mut std::io::BufReader::new(f)).map_err(|e| Error::format(ctx, e.to_string()))
    }
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::format("checkpoint", "string length out of range"));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::format("checkpoint", e.to_string()))
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(key: &str, s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| x.parse().map_err(|_| Error::format("checkpoint", format!("bad `{key}` value `{s}`"))))
        .collect()
}

fn parse_num(c: &Checkpoint, key: &str) -> Result<usize> {
    let s = c.meta(key)?;
    s.parse().map_err(|_| Error::format("checkpoint", format!("bad `{key}` value `{s}`")))
}

/// Record the full architecture description alongside the weights.
pub fn variant_meta(v: &ModelVariant) -> BTreeMap<String, String> {
    [
        ("variant", v.family.to_string()),
        ("num_classes", v.num_classes.to_string()),
        ("stage_channels", join(&v.stage_channels)),
        ("blocks_per_stage", join(&v.blocks_per_stage)),
        ("embedding_dim", v.embedding_dim.to_string()),
        ("mel_bins", v.mel_bins.to_string()),
        ("heads", v.heads.to_string()),
        ("attention_dim", v.attention_dim.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn variant_from_meta(c: &Checkpoint) -> Result<ModelVariant> {
    let v = ModelVariant {
        family: c.meta("variant")?.parse()?,
        num_classes: parse_num(c, "num_classes")?,
        stage_channels: parse_list("stage_channels", c.meta("stage_channels")?)?,
        blocks_per_stage: parse_list("blocks_per_stage", c.meta("blocks_per_stage")?)?,
        embedding_dim: parse_num(c, "embedding_dim")?,
        mel_bins: parse_num(c, "mel_bins")?,
        heads: parse_num(c, "heads")?,
        attention_dim: parse_num(c, "attention_dim")?,
    };
    v.validate()?;
    Ok(v)
}

impl SpeakerModel<f32> {
    /// Weights and running statistics; parameters are stored as `param/<name>`
    /// and buffers as `buffer/<name>`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let store = self.store();
        let tensors = store
            .params()
            .iter()
            .map(|e| (format!("param/{}", e.name), e.value.clone()))
            .chain(store.buffers().iter().map(|e| (format!("buffer/{}", e.name), e.value.clone())))
            .collect();
        Checkpoint {
            meta: variant_meta(self.variant()),
            tensors,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let variant = variant_from_meta(c)?;
        let mut model = SpeakerModel::build(&variant, 0)?;
        let store = model.store_mut();
        let fill = |prefix: &str, entries: &mut [crate::nn::Entry<f32>]| -> Result<()> {
            for e in entries {
                let key = format!("{prefix}/{}", e.name);
                let t = c
                    .get(&key)
                    .ok_or_else(|| Error::format("checkpoint", format!("missing tensor `{key}`")))?;
                if t.shape() != e.value.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "checkpoint tensor",
                        left: e.value.shape().to_vec(),
                        right: t.shape().to_vec(),
                    });
                }
                e.value = t.clone();
            }
            Ok(())
        };
        fill("param", store.params_mut())?;
        fill("buffer", store.buffers_mut())?;
        Ok(model)
    }
}
