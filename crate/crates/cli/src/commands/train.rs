use std::io::Write;

use spkr_core::data::Manifest;
use spkr_core::io::Checkpoint;
use spkr_core::train::{TrainConfig, Trainer, TrainingSet};

use crate::error::CliError;
use crate::settings::Settings;

pub fn config(s: &Settings) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        variant: s.or("variant", d.variant)?,
        seed: s.or("seed", d.seed)?,
        epochs: s.or("epochs", d.epochs)?,
        batch_size: s.or("batch-size", d.batch_size)?,
        lr: s.or("lr", d.lr)?,
        momentum: s.or("momentum", d.momentum)?,
        weight_decay: s.or("weight-decay", d.weight_decay)?,
        lr_decay: s.or("lr-decay", d.lr_decay)?,
        decay_at: s.or("decay-at", d.decay_at)?,
        crop_seconds: s.or("crop-seconds", d.crop_seconds)?,
        workers: s.or("workers", d.workers)?,
    })
}

pub fn train(s: &Settings) -> Result<(), CliError> {
    let config = config(s)?;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest = Manifest::read(s.path("manifest")?)?;
    let checkpoint = s.path("checkpoint")?;
    let data = TrainingSet::load(&manifest, config.workers.max(1))?;
    let mut trainer = if s.flag("resume")? && checkpoint.exists() {
        Trainer::resume(config, &Checkpoint::load(&checkpoint)?)?
    } else {
        Trainer::new(config, data.speakers.clone())?
    };
    let mut log = match s.get::<String>("log")? {
        Some(p) => Some(std::fs::OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    println!(
        "variant={} speakers={} utterances={} parameters={}",
        trainer.config().variant,
        data.speakers.len(),
        data.len(),
        trainer.model.store().num_trainable()
    );
    while !trainer.is_finished() {
        let epoch = trainer.train_epoch(&data)?;
        println!("{epoch}");
        if let Some(f) = log.as_mut() {
            writeln!(f, "{epoch}")?;
        }
        trainer.checkpoint().save(&checkpoint)?;
    }
    println!("checkpoint={}", checkpoint.display());
    Ok(())
}
