//! Synthetic speakers: a pulse train at a per-speaker fundamental, shaped by
//! three per-speaker resonators, plus white noise.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Manifest, Utterance};
use crate::error::{Error, Result};
use crate::eval::{Trial, TrialSet};
use crate::frontend::{write_wav, Waveform, SAMPLE_RATE};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Utterances per speaker held out for the test split (taken from the end).
    pub test_per_speaker: usize,
    pub min_seconds: f64,
    pub max_seconds: f64,
    /// Noise standard deviation relative to the voiced signal peak.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_speakers: 20,
            utterances_per_speaker: 10,
            test_per_speaker: 5,
            min_seconds: 2.0,
            max_seconds: 5.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 || self.utterances_per_speaker == 0 {
            return Err(Error::invalid("need at least one speaker and one utterance"));
        }
        if self.test_per_speaker > self.utterances_per_speaker {
            return Err(Error::invalid("more test utterances than utterances per speaker"));
        }
        if !(self.min_seconds >= 0.05 && self.max_seconds >= self.min_seconds) {
            return Err(Error::invalid(format!(
                "bad duration range {}..{} s",
                self.min_seconds, self.max_seconds
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::invalid("noise level must be nonnegative"));
        }
        Ok(())
    }
}

/// Fundamental plus three (centre, bandwidth) resonances in Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct Signature {
    pub f0: f64,
    pub resonances: [(f64, f64); 3],
}

impl Signature {
    fn distance(&self, other: &Signature) -> f64 {
        let rel = |a: f64, b: f64| ((a - b) / a.max(b)).abs();
        let mut d = rel(self.f0, other.f0);
        for (a, b) in self.resonances.iter().zip(&other.resonances) {
            d = d.max(rel(a.0, b.0));
        }
        d
    }
}

/// Pairwise-distinct signatures: every pair differs by at least 6% in the
/// fundamental or one resonance centre.
pub fn signatures(num: usize, seed: u64) -> Result<Vec<Signature>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Signature> = Vec::with_capacity(num);
    let mut attempts = 0;
    while out.len() < num {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::invalid(format!("cannot draw {num} distinct speaker signatures")));
        }
        let s = Signature {
            f0: rng.gen_range(90.0..260.0),
            resonances: [
                (rng.gen_range(300.0..900.0), rng.gen_range(60.0..140.0)),
                (rng.gen_range(900.0..2400.0), rng.gen_range(80.0..180.0)),
                (rng.gen_range(2400.0..3800.0), rng.gen_range(120.0..250.0)),
            ],
        };
        if out.iter().all(|o| o.distance(&s) >= 0.06) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Two-pole resonator `y[n] = x[n] + a1 y[n-1] - a2 y[n-2]`, gain-normalized at its centre.
fn resonate(x: &[f64], centre: f64, bandwidth: f64) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let r = (-std::f64::consts::PI * bandwidth / fs).exp();
    let theta = 2.0 * std::f64::consts::PI * centre / fs;
    let (a1, a2) = (2.0 * r * theta.cos(), r * r);
    let gain = 1.0 - r;
    let (mut y1, mut y2) = (0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = gain * v + a1 * y1 - a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// One utterance of a speaker: syllable-like voiced segments with slight pitch
/// and resonance jitter.
pub fn utterance(sig: &Signature, seconds: f64, noise: f64, rng: &mut impl Rng) -> Waveform {
    let fs = SAMPLE_RATE as f64;
    let n = (seconds * fs).round() as usize;
    let f0 = sig.f0 * rng.gen_range(0.95..1.05);
    let vibrato = rng.gen_range(2.0..6.0);
    let mut env = vec![0.0; n];
    let mut t = rng.gen_range(0..(fs * 0.1) as usize);
    while t < n {
        let len = rng.gen_range((fs * 0.12) as usize..(fs * 0.35) as usize);
        let amp = rng.gen_range(0.6..1.0);
        for (i, e) in env[t..(t + len).min(n)].iter_mut().enumerate() {
            *e = amp * (std::f64::consts::PI * i as f64 / len as f64).sin();
        }
        t += len + rng.gen_range((fs * 0.03) as usize..(fs * 0.12) as usize);
    }
    let mut phase = 0.0;
    let mut pulses = vec![0.0; n];
    for (i, p) in pulses.iter_mut().enumerate() {
        let f = f0 * (1.0 + 0.02 * (2.0 * std::f64::consts::PI * vibrato * i as f64 / fs).sin());
        phase += f / fs;
        if phase >= 1.0 {
            phase -= 1.0;
            *p = env[i];
        }
    }
    let mut voiced = vec![0.0; n];
    for (k, &(c, b)) in sig.resonances.iter().enumerate() {
        let c = c * rng.gen_range(0.97..1.03);
        let weight = [1.0, 0.7, 0.4][k];
        for (v, y) in voiced.iter_mut().zip(resonate(&pulses, c, b)) {
            *v += weight * y;
        }
    }
    let peak = voiced.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let samples = voiced
        .iter()
        .map(|&v| {
            let g: f64 = rng.sample(StandardNormal);
            (0.5 * (v / peak + noise * g)) as f32
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub manifest: Manifest,
    pub train: Manifest,
    pub test: Manifest,
    pub trials: TrialSet,
    pub manifest_path: PathBuf,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub trials_path: PathBuf,
}

pub fn utterance_id(speaker: usize, utt: usize) -> String {
    format!("spk{speaker:02}-{utt:02}")
}

/// Balanced trials over the test utterances: every same-speaker pair, plus as
/// many different-speaker pairs drawn without replacement.
pub fn balanced_trials(test: &Manifest, seed: u64) -> TrialSet {
    let u = &test.utterances;
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            let t = Trial {
                target: u[i].speaker == u[j].speaker,
                enroll: u[i].id.clone(),
                test: u[j].id.clone(),
            };
            if t.target {
                targets.push(t);
            } else {
                nontargets.push(t);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6961_6c73);
    nontargets.shuffle(&mut rng);
    nontargets.truncate(targets.len().max(1).min(nontargets.len()));
    if targets.is_empty() {
        nontargets.clear();
    }
    let mut trials: Vec<Trial> = targets.into_iter().chain(nontargets).collect();
    trials.shuffle(&mut rng);
    TrialSet { trials }
}

/// Write WAVs under `out/wav`, plus `manifest.tsv`, `train.tsv`, `test.tsv` and `trials.txt`.
pub fn generate(spec: &SynthSpec, out: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    let sigs = signatures(spec.num_speakers, spec.seed)?;
    let wav_dir = out.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    let mut all = Manifest::default();
    let mut train = Manifest::default();
    let mut test = Manifest::default();
    for (s, sig) in sigs.iter().enumerate() {
        for u in 0..spec.utterances_per_speaker {
            let id = utterance_id(s, u);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1_000_003) ^ ((s as u64) << 20 | u as u64));
            let seconds = rng.gen_range(spec.min_seconds..=spec.max_seconds);
            let wave = utterance(sig, seconds, spec.noise, &mut rng);
            let path = wav_dir.join(format!("{id}.wav"));
            write_wav(&path, &wave)?;
            let entry = Utterance {
                speaker: crate::data::speaker_of(&id).to_string(),
                id,
                path,
            };
            if u >= spec.utterances_per_speaker - spec.test_per_speaker {
                test.utterances.push(entry.clone());
            } else {
                train.utterances.push(entry.clone());
            }
            all.utterances.push(entry);
        }
    }
    let trials = balanced_trials(&test, spec.seed);
    let paths = [
        out.join("manifest.tsv"),
        out.join("train.tsv"),
        out.join("test.tsv"),
        out.join("trials.txt"),
    ];
    all.write(&paths[0])?;
    train.write(&paths[1])?;
    test.write(&paths[2])?;
    trials.write(&paths[3])?;
    let [manifest_path, train_path, test_path, trials_path] = paths;
    Ok(SynthOutput {
        manifest: all,
        train,
        test,
        trials,
        manifest_path,
        train_path,
        test_path,
        trials_path,
    })
}
