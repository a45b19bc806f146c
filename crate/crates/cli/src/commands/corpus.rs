use std::path::PathBuf;

use rayon::prelude::*;
use spkr_core::data::{load_features, Manifest, Utterance};
use spkr_core::eval::report::truncation_label;
use spkr_core::frontend::{truncate as cut, Offset};
use spkr_core::io::save_tensor;
use spkr_core::synth::{generate, SynthSpec};

use super::{offset, pool};
use crate::error::CliError;
use crate::settings::Settings;

pub fn synth(s: &Settings) -> Result<(), CliError> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        num_speakers: s.or("speakers", d.num_speakers)?,
        utterances_per_speaker: s.or("utterances", d.utterances_per_speaker)?,
        test_per_speaker: s.or("test-utterances", d.test_per_speaker)?,
        min_seconds: s.or("min-seconds", d.min_seconds)?,
        max_seconds: s.or("max-seconds", d.max_seconds)?,
        noise: s.or("noise", d.noise)?,
        seed: s.or("seed", d.seed)?,
    };
    let out = generate(&spec, &s.path("out")?)?;
    println!("utterances={}", out.manifest.len());
    println!("train_utterances={}", out.train.len());
    println!("test_utterances={}", out.test.len());
    println!("trials={}", out.trials.len());
    println!("manifest={}", out.manifest_path.display());
    println!("train_manifest={}", out.train_path.display());
    println!("test_manifest={}", out.test_path.display());
    println!("trial_list={}", out.trials_path.display());
    Ok(())
}

pub fn features(s: &Settings) -> Result<(), CliError> {
    let manifest = Manifest::read(s.path("manifest")?)?;
    let out = s.path("out")?;
    std::fs::create_dir_all(&out)?;
    let frames = pool(s)?.install(|| {
        manifest
            .utterances
            .par_iter()
            .map(|u| {
                let f = load_features(&u.path)?;
                save_tensor(out.join(format!("{}.tnsr", u.id)), f.tensor())?;
                Ok(f.frames())
            })
            .collect::<spkr_core::Result<Vec<usize>>>()
    })?;
    let stored = Manifest {
        utterances: manifest
            .utterances
            .iter()
            .map(|u| Utterance {
                path: out.join(format!("{}.tnsr", u.id)),
                ..u.clone()
            })
            .collect(),
    };
    let path = out.join("manifest.tsv");
    stored.write(&path)?;
    println!("utterances={}", stored.len());
    println!("frames={}", frames.iter().sum::<usize>());
    println!("manifest={}", path.display());
    Ok(())
}

pub fn truncate(s: &Settings) -> Result<(), CliError> {
    let manifest = Manifest::read(s.path("manifest")?)?;
    let lengths: Vec<f64> = s.list("truncate-seconds")?;
    if lengths.is_empty() {
        return Err(CliError::Usage("missing required setting `truncate-seconds`".into()));
    }
    let out = s.path("out")?;
    let offset = offset(s)?;
    let pool = pool(s)?;
    for &len in &lengths {
        let label = truncation_label(len);
        let dir = out.join(&label);
        std::fs::create_dir_all(&dir)?;
        let results = pool.install(|| {
            manifest
                .utterances
                .par_iter()
                .enumerate()
                .map(|(i, u)| {
                    let raw = load_features(&u.path)?;
                    let off = match offset {
                        Offset::Random { seed } => Offset::Random {
                            seed: seed.wrapping_add(i as u64),
                        },
                        o => o,
                    };
                    let t = cut(&raw, len, off)?;
                    let path: PathBuf = dir.join(format!("{}.tnsr", u.id));
                    save_tensor(&path, t.features.tensor())?;
                    Ok((
                        Utterance {
                            path,
                            ..u.clone()
                        },
                        t.whole,
                    ))
                })
                .collect::<spkr_core::Result<Vec<_>>>()
        })?;
        let whole = results.iter().filter(|r| r.1).count();
        let m = Manifest {
            utterances: results.into_iter().map(|r| r.0).collect(),
        };
        m.write(dir.join("manifest.tsv"))?;
        println!("truncated_{label}={}", m.len() - whole);
        println!("whole_{label}={whole}");
        println!("manifest_{label}={}", dir.join("manifest.tsv").display());
    }
    Ok(())
}
