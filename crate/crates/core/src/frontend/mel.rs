//! 80-band log-Mel filterbank energies.
//!
//! 25 ms Hamming window, 10 ms hop, 512-point FFT, HTK Mel scale over 20–7600 Hz,
//! natural log with a floor of 1e-10.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::features::FeatureMatrix;
use super::wav::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: SAMPLE_RATE,
            window: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 80,
            f_min: 20.0,
            f_max: 7600.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    /// `1 + floor((n - window) / hop)`, or `None` below one window.
    pub fn num_frames(&self, n_samples: usize) -> Option<usize> {
        (n_samples >= self.window).then(|| 1 + (n_samples - self.window) / self.hop)
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.n_fft as f64
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels` rows of `n_fft / 2 + 1` weights, with edges
/// equally spaced on the Mel scale.
pub fn filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let bins = cfg.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = cfg.bin_hz(k);
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

pub struct MelExtractor {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        if cfg.window == 0 || cfg.window > cfg.n_fft || cfg.hop == 0 || cfg.n_mels == 0 {
            return Err(Error::invalid(format!("bad Mel configuration {cfg:?}")));
        }
        let n = cfg.window;
        let window = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            .collect();
        let filters = filterbank(&cfg)
            .into_iter()
            .map(|row| row.into_iter().enumerate().filter(|&(_, w)| w > 0.0).collect())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(MelExtractor {
            cfg,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Power spectrum `|X_k|^2` of every frame, `[T][n_fft / 2 + 1]`.
    pub fn power_spectrogram(&self, samples: &[f32]) -> Result<Vec<Vec<f64>>> {
        let frames = self.cfg.num_frames(samples.len()).ok_or(Error::TooShort {
            frames: samples.len(),
            min: self.cfg.window,
        })?;
        let bins = self.cfg.n_fft / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        Ok((0..frames)
            .map(|t| {
                let chunk = &samples[t * self.cfg.hop..][..self.cfg.window];
                for (i, slot) in buf.iter_mut().enumerate() {
                    let v = chunk.get(i).map_or(0.0, |&s| s as f64 * self.window[i]);
                    *slot = Complex::new(v, 0.0);
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf[..bins].iter().map(|c| c.norm_sqr()).collect()
            })
            .collect())
    }

    pub fn compute(&self, wave: &Waveform) -> Result<FeatureMatrix> {
        if wave.sample_rate != self.cfg.sample_rate {
            return Err(Error::invalid(format!(
                "expected {} Hz audio, got {} Hz",
                self.cfg.sample_rate, wave.sample_rate
            )));
        }
        let spec = self.power_spectrogram(&wave.samples)?;
        let t = spec.len();
        let m = self.cfg.n_mels;
        let mut data = vec![0f32; m * t];
        for (ti, frame) in spec.iter().enumerate() {
            for (mi, filt) in self.filters.iter().enumerate() {
                let e: f64 = filt.iter().map(|&(k, w)| w * frame[k]).sum();
                data[mi * t + ti] = e.max(self.cfg.log_floor).ln() as f32;
            }
        }
        FeatureMatrix::new(Tensor::new(&[m, t], data)?, false)
    }
}

/// Log-Mel features with the default configuration.
pub fn logmel(wave: &Waveform) -> Result<FeatureMatrix> {
    MelExtractor::new(MelConfig::default())?.compute(wave)
}
