//! Gradient-weighted class activation maps over the input feature plane.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::autograd::{Tape, Var};
use crate::backbone::SpeakerModel;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Mode};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_LAYER: &str = "block3";

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap<F: Scalar = f32> {
    pub layer: String,
    pub target: usize,
    /// Per-channel weights: spatial mean of the target-logit gradient.
    pub weights: Vec<F>,
    /// Rectified weighted sum at layer resolution `[F', T']`, not normalized.
    pub values: Tensor<F>,
    /// Bilinear upsampling of `values` to the input size `[F, T]`, max-normalized.
    pub upsampled: Tensor<F>,
}

impl<F: Scalar> ActivationMap<F> {
    /// `values` divided by its maximum (unchanged when all zero).
    pub fn normalized(&self) -> Tensor<F> {
        max_normalize(&self.values)
    }
}

fn max_normalize<F: Scalar>(t: &Tensor<F>) -> Tensor<F> {
    let m = t.data().iter().fold(F::zero(), |a, &b| a.max(b));
    if m > F::zero() {
        t.map(|v| v / m)
    } else {
        t.clone()
    }
}

/// Grad-CAM of `features` (`[F, T]`, already normalized) at a named layer.
/// `target` defaults to the model's top-scoring class.
pub fn grad_cam<F: Scalar>(
    model: &SpeakerModel<F>,
    features: &Tensor<F>,
    layer: &str,
    target: Option<usize>,
) -> Result<ActivationMap<F>> {
    if !model.layer_names().iter().any(|n| n == layer) {
        return Err(Error::UnknownLayer(layer.to_string()));
    }
    let classes = model.variant().num_classes;
    if let Some(t) = target.filter(|&t| t >= classes) {
        return Err(Error::LabelOutOfRange { label: t, classes });
    }
    let x = model.batch_input(&[features])?;
    let mut tape = Tape::new();
    let mut captured: Option<Var> = None;
    let mut hook = |name: &str, v: Var, tape: &mut Tape<F>| -> Result<Var> {
        if name != layer {
            return Ok(v);
        }
        let leaf = tape.leaf(tape.value(v).clone(), true);
        captured = Some(leaf);
        Ok(leaf)
    };
    let logits = {
        let mut ctx = Ctx::new(&mut tape, model.store(), Mode::Infer, false).with_hook(&mut hook);
        let xv = ctx.tape.constant(x);
        let e = model.embed_vars(&mut ctx, xv)?;
        model.logits_vars(&mut ctx, e)?
    };
    let act = captured.ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
    let scores = tape.value(logits).data().to_vec();
    let target = target.unwrap_or_else(|| {
        (0..scores.len()).fold(0, |best, i| if scores[i] > scores[best] { i } else { best })
    });
    let picked = tape.narrow(logits, 1, target, 1)?;
    let loss = tape.sum(picked, None)?;
    let grads = tape.backward(loss)?;

    let a = tape.value(act);
    let (c, h, w) = (a.shape()[1], a.shape()[2], a.shape()[3]);
    let plane = h * w;
    let zeros = Tensor::zeros(a.shape())?;
    let g = grads.get(act).unwrap_or(&zeros);
    let weights: Vec<F> = g
        .data()
        .chunks_exact(plane)
        .map(|ch| ch.iter().fold(F::zero(), |s, &v| s + v) / F::cst(plane as f64))
        .collect();
    let mut map = vec![F::zero(); plane];
    for (k, &wk) in weights.iter().enumerate() {
        for (m, &v) in map.iter_mut().zip(&a.data()[k * plane..(k + 1) * plane]) {
            *m = *m + wk * v;
        }
    }
    for m in &mut map {
        *m = m.max(F::zero());
    }
    debug_assert_eq!(weights.len(), c);
    let values = Tensor::new(&[h, w], map)?;
    let upsampled = max_normalize(&bilinear(&values, features.shape()[0], features.shape()[1])?);
    Ok(ActivationMap {
        layer: layer.to_string(),
        target,
        weights,
        values,
        upsampled,
    })
}

/// Bilinear resize of a `[H, W]` map with half-pixel centers and edge clamping.
pub fn bilinear<F: Scalar>(src: &Tensor<F>, out_h: usize, out_w: usize) -> Result<Tensor<F>> {
    let (h, w) = match src.shape() {
        &[h, w] => (h, w),
        s => return Err(Error::invalid(format!("bilinear expects [H, W], got {s:?}"))),
    };
    let coord = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = pos.floor() as usize;
        (lo, (lo + 1).min(n_in - 1), pos - lo as f64)
    };
    let d = src.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, h, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, w, out_w);
            let at = |r: usize, c: usize| d[r * w + c].to_f64().unwrap();
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push(F::cst(top * (1.0 - fy) + bot * fy));
        }
    }
    Tensor::new(&[out_h, out_w], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapFormat {
    Pgm,
    Csv,
}

impl FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(HeatmapFormat::Pgm),
            "csv" => Ok(HeatmapFormat::Csv),
            _ => Err(Error::invalid(format!("unknown heatmap format `{s}`, expected pgm or csv"))),
        }
    }
}

/// 8-bit binary PGM with 255 at the map maximum, rounding half up.
pub fn encode_pgm<F: Scalar>(map: &Tensor<F>) -> Result<Vec<u8>> {
    let (h, w) = match map.shape() {
        &[h, w] => (h, w),
        s => return Err(Error::invalid(format!("heatmap must be [H, W], got {s:?}"))),
    };
    let max = map.data().iter().fold(0.0f64, |a, v| a.max(v.to_f64().unwrap()));
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|v| {
        let v = v.to_f64().unwrap();
        if max > 0.0 {
            (v / max * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// Row-major comma-separated values, one map row per line.
pub fn encode_csv<F: Scalar>(map: &Tensor<F>) -> Result<String> {
    let w = match map.shape() {
        &[_, w] => w,
        s => return Err(Error::invalid(format!("heatmap must be [H, W], got {s:?}"))),
    };
    let mut s = String::new();
    for row in map.data().chunks_exact(w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(s, "{}", cells.join(",")).unwrap();
    }
    Ok(s)
}

pub fn parse_csv(text: &str) -> Result<Tensor<f32>> {
    let rows: Vec<Vec<f32>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| c.trim().parse::<f32>().map_err(|_| Error::format("csv", format!("bad value `{c}`"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::format("csv", "ragged rows"));
    }
    Tensor::new(&[rows.len(), w], rows.concat())
}

pub fn export_heatmap<F: Scalar>(map: &Tensor<F>, path: impl AsRef<Path>, format: HeatmapFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        HeatmapFormat::Pgm => encode_pgm(map)?,
        HeatmapFormat::Csv => encode_csv(map)?.into_bytes(),
    };
    std::fs::write(path, bytes).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}
