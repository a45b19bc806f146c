use std::fmt::Write as _;

use rayon::prelude::*;
use spkr_core::data::{load_features, Manifest, ManifestSource};
use spkr_core::eval::{evaluate_trials, format_scores, DcfParams, DurationBucket, EvalOptions, TrialSet};
use spkr_core::frontend::mean_normalize;
use spkr_core::io::Checkpoint;
use spkr_core::{ModelVariant, SpeakerModel};

use super::{offset, pool};
use crate::error::CliError;
use crate::settings::Settings;

pub fn load_model(s: &Settings) -> Result<SpeakerModel<f32>, CliError> {
    match s.get::<String>("checkpoint")? {
        Some(p) => Ok(SpeakerModel::from_checkpoint(&Checkpoint::load(p)?)?),
        None => {
            let name: String = s.get("variant")?.ok_or_else(|| {
                CliError::Usage("either --checkpoint or --variant is required".into())
            })?;
            let variant = ModelVariant::parse(&name, 2)?;
            Ok(SpeakerModel::build(&variant, s.or("seed", 0)?)?)
        }
    }
}

pub fn embed(s: &Settings) -> Result<(), CliError> {
    let model = SpeakerModel::from_checkpoint(&Checkpoint::load(s.path("checkpoint")?)?)?;
    let manifest = Manifest::read(s.path("manifest")?)?;
    let rows = pool(s)?.install(|| {
        manifest
            .utterances
            .par_iter()
            .map(|u| {
                let f = mean_normalize(&load_features(&u.path)?);
                let e = model.embed(f.tensor())?;
                let mut line = u.id.clone();
                for v in e.data() {
                    write!(line, "\t{v}").unwrap();
                }
                Ok(line)
            })
            .collect::<spkr_core::Result<Vec<String>>>()
    })?;
    let out = s.path("out")?;
    std::fs::write(&out, rows.join("\n") + "\n")?;
    println!("embeddings={}", rows.len());
    println!("dim={}", model.variant().embedding_dim);
    Ok(())
}

pub fn eval(s: &Settings) -> Result<(), CliError> {
    let model = load_model(s)?;
    let trials = TrialSet::read(s.path("trials")?)?;
    let manifest = Manifest::read(s.path("manifest")?)?;
    let opts = EvalOptions {
        truncations: s.list("truncate-seconds")?,
        buckets: DurationBucket::parse_list(s.raw("buckets").unwrap_or(""))
            .map_err(|e| CliError::Usage(e.to_string()))?,
        offset: offset(s)?,
        dcf: DcfParams {
            p_target: s.or("p-target", DcfParams::default().p_target)?,
            ..DcfParams::default()
        },
        workers: s.or("workers", 1)?,
    };
    if opts.truncations.iter().any(|&t| !(t > 0.0)) {
        return Err(CliError::Usage("truncation lengths must be positive".into()));
    }
    opts.dcf.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let report = evaluate_trials(&model, &trials, &ManifestSource::new(&manifest), &opts)?;
    if let Some(p) = s.get::<String>("scores")? {
        std::fs::write(p, format_scores(&trials, &report.scores)?)?;
    }
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = s.get::<String>("report")? {
        std::fs::write(p, &text)?;
    }
    Ok(())
}
