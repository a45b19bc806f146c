//! Mini-batch SGD on softmax cross-entropy over fixed-length random crops.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::Tape;
use crate::backbone::SpeakerModel;
use crate::data::{load_features, Manifest};
use crate::error::{Error, Result};
use crate::eval::report::build_pool;
use crate::frontend::features::seconds_to_frames;
use crate::frontend::{mean_normalize, FeatureMatrix, MelConfig};
use crate::io::Checkpoint;
use crate::nn::batchnorm::MOMENTUM;
use crate::nn::{Ctx, Mode, Sgd};
use crate::tensor::Tensor;
use crate::variant::ModelVariant;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: String,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplier applied to the learning rate once `decay_at` of the epochs are done.
    pub lr_decay: f64,
    pub decay_at: f64,
    pub crop_seconds: f64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: "res2net-14w8s".into(),
            seed: 0,
            epochs: 30,
            batch_size: 16,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_decay: 0.1,
            decay_at: 2.0 / 3.0,
            crop_seconds: 2.0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate must be positive and momentum in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.decay_at) || !(self.lr_decay > 0.0) {
            return Err(Error::invalid("decay point must lie in [0, 1] and the decay factor be positive"));
        }
        if self.crop_frames() < crate::backbone::MIN_FRAMES {
            return Err(Error::invalid(format!("crop of {} s is too short", self.crop_seconds)));
        }
        Ok(())
    }

    pub fn crop_frames(&self) -> usize {
        seconds_to_frames(self.crop_seconds, &MelConfig::default())
    }

    /// First (0-based) epoch trained at the decayed rate.
    pub fn decay_epoch(&self) -> usize {
        (self.epochs as f64 * self.decay_at).round() as usize
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch() {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}

/// Raw features with class labels; speakers are sorted by name.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub features: Vec<FeatureMatrix>,
    pub labels: Vec<usize>,
    pub speakers: Vec<String>,
}

impl TrainingSet {
    pub fn new(features: Vec<FeatureMatrix>, labels: Vec<usize>, speakers: Vec<String>) -> Result<Self> {
        if speakers.len() < 2 {
            return Err(Error::invalid(format!(
                "training needs at least 2 speakers, found {}",
                speakers.len()
            )));
        }
        if features.len() != labels.len() || features.is_empty() {
            return Err(Error::invalid("features and labels must be nonempty and aligned"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= speakers.len()) {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: speakers.len(),
            });
        }
        Ok(TrainingSet {
            features,
            labels,
            speakers,
        })
    }

    pub fn load(manifest: &Manifest, workers: usize) -> Result<Self> {
        let index = manifest.speaker_index();
        let features = build_pool(workers)?.install(|| {
            manifest
                .utterances
                .par_iter()
                .map(|u| load_features(&u.path))
                .collect::<Result<Vec<_>>>()
        })?;
        let labels = manifest.utterances.iter().map(|u| index[&u.speaker]).collect();
        Self::new(features, labels, index.into_keys().collect())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// A `frames`-long window starting at a random offset (wrapping around when
/// the utterance is shorter), mean-normalized.
pub fn random_crop(f: &FeatureMatrix, frames: usize, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    let (d, t) = (f.dims(), f.frames());
    let start = if t > frames { rng.gen_range(0..=t - frames) } else { 0 };
    let src = f.tensor().data();
    let mut data = Vec::with_capacity(d * frames);
    for m in 0..d {
        data.extend((0..frames).map(|i| src[m * t + (start + i) % t]));
    }
    let crop = FeatureMatrix::new(Tensor::new(&[d, frames], data)?, false)?;
    Ok(mean_normalize(&crop).into_tensor())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} accuracy={:.4} lr={} seconds={:.1}",
            self.epoch, self.loss, self.accuracy, self.lr, self.seconds
        )
    }
}

pub struct Trainer {
    pub model: SpeakerModel<f32>,
    config: TrainConfig,
    opt: Sgd<f32>,
    speakers: Vec<String>,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, speakers: Vec<String>) -> Result<Self> {
        let variant = ModelVariant::parse(&config.variant, speakers.len())?;
        Self::with_variant(config, &variant, speakers)
    }

    /// Train an explicitly described network (used for reduced test models).
    pub fn with_variant(config: TrainConfig, variant: &ModelVariant, speakers: Vec<String>) -> Result<Self> {
        config.validate()?;
        if variant.num_classes != speakers.len() {
            return Err(Error::invalid(format!(
                "variant has {} classes for {} speakers",
                variant.num_classes,
                speakers.len()
            )));
        }
        let model = SpeakerModel::build(variant, config.seed)?;
        let opt = Sgd::new(config.lr as f32, config.momentum as f32, config.weight_decay as f32);
        Ok(Trainer {
            model,
            config,
            opt,
            speakers,
            epochs_done: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.epochs
    }

    /// One SGD update; returns the batch loss and the number of correct argmax predictions.
    pub fn step(&mut self, crops: &[Tensor<f32>], labels: &[usize], lr: f64) -> Result<(f64, usize)> {
        let refs: Vec<&Tensor<f32>> = crops.iter().collect();
        let x = self.model.batch_input(&refs)?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, self.model.store(), Mode::Train, true);
        let xv = ctx.tape.constant(x);
        let emb = self.model.embed_vars(&mut ctx, xv)?;
        let logits = self.model.logits_vars(&mut ctx, emb)?;
        let loss = ctx.tape.softmax_cross_entropy(logits, labels)?;
        let loss_value = ctx.tape.value(loss).data()[0] as f64;
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("loss became {loss_value}")));
        }
        let k = self.model.variant().num_classes;
        let correct = ctx
            .tape
            .value(logits)
            .data()
            .chunks_exact(k)
            .zip(labels)
            .filter(|(row, &l)| (0..k).all(|j| row[j] <= row[l]))
            .count();
        let mut grads = ctx.tape.backward(loss)?;
        let param_grads = ctx.param_grads(&mut grads);
        let stats = ctx.into_stats();
        drop(tape);
        if let Some(bad) = param_grads.iter().flatten().find(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient of shape {:?}", bad.shape())));
        }
        self.opt.lr = lr as f32;
        self.opt.step(self.model.store_mut(), &param_grads)?;
        self.model.store_mut().apply_stats(stats, MOMENTUM as f32);
        Ok((loss_value, correct))
    }

    /// Shuffle, crop and train one epoch. Randomness depends only on the seed
    /// and the epoch index.
    pub fn train_epoch(&mut self, data: &TrainingSet) -> Result<EpochLog> {
        if data.speakers != self.speakers {
            return Err(Error::invalid("training set speakers differ from the model's"));
        }
        let start = Instant::now();
        let epoch = self.epochs_done;
        let lr = self.config.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let frames = self.config.crop_frames();
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            let crops = batch
                .iter()
                .map(|&i| random_crop(&data.features[i], frames, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let (loss, c) = self.step(&crops, &labels, lr)?;
            loss_sum += loss * batch.len() as f64;
            correct += c;
        }
        self.epochs_done += 1;
        Ok(EpochLog {
            epoch: self.epochs_done,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Model weights plus optimizer state, epoch counter and speaker list.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = self.model.to_checkpoint();
        c.meta.insert("epochs_done".into(), self.epochs_done.to_string());
        c.meta.insert("seed".into(), self.config.seed.to_string());
        c.meta.insert("speakers".into(), self.speakers.join("\t"));
        for (e, v) in self.model.store().params().iter().zip(self.opt.velocity()) {
            c.tensors.push((format!("velocity/{}", e.name), v.clone()));
        }
        c
    }

    pub fn resume(config: TrainConfig, c: &Checkpoint) -> Result<Self> {
        config.validate()?;
        let model = SpeakerModel::from_checkpoint(c)?;
        if model.variant().family.to_string() != config.variant {
            return Err(Error::invalid(format!(
                "checkpoint holds `{}` but the configuration asks for `{}`",
                model.variant().family,
                config.variant
            )));
        }
        let speakers: Vec<String> = c.meta("speakers")?.split('\t').map(str::to_string).collect();
        let epochs_done = c
            .meta("epochs_done")?
            .parse()
            .map_err(|_| Error::format("checkpoint", "bad `epochs_done`"))?;
        let velocity: Vec<Tensor<f32>> = model
            .store()
            .params()
            .iter()
            .filter_map(|e| c.get(&format!("velocity/{}", e.name)).cloned())
            .collect();
        let mut opt = Sgd::new(config.lr as f32, config.momentum as f32, config.weight_decay as f32);
        if velocity.len() == model.store().params().len() {
            opt.set_velocity(velocity);
        }
        Ok(Trainer {
            model,
            config,
            opt,
            speakers,
            epochs_done,
        })
    }
}
