//! The speaker embedding network: a strided convolution before each residual
//! stage, two frequency-only reductions, attentive pooling, and a linear
//! classifier used during training.
//!
//! With the standard layout and an `80 x T` input the feature maps are
//! `39 x T/2 x 64`, `19 x T/4 x 128`, `9 x T/8 x 256`, `4 x T/8 x 256` and
//! `1 x T/8 x 128` (each size is the floor formula of its convolution).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::blocks::{BlockSpec, ResidualBlock};
use crate::error::{Error, Result};
use crate::nn::{ConvBn, ConvGeometry, Ctx, Linear, Mode, ParamStore};
use crate::pooling::AttentivePooling;
use crate::tensor::{Scalar, Tensor};
use crate::variant::ModelVariant;

/// Shortest input (in frames) accepted by the network.
pub const MIN_FRAMES: usize = 8;

#[derive(Clone, Debug)]
pub struct Stage {
    pub name: String,
    pub down: ConvBn,
    pub blocks: Vec<ResidualBlock>,
}

#[derive(Clone, Debug)]
pub struct SpeakerModel<F: Scalar = f32> {
    variant: ModelVariant,
    store: ParamStore<F>,
    stages: Vec<Stage>,
    tail: Vec<(String, ConvBn)>,
    pooling: AttentivePooling,
    classifier: Linear,
}

/// Trainable-parameter counts grouped by top-level layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub layers: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamCount {
    pub fn get(&self, layer: &str) -> Option<usize> {
        self.layers.iter().find(|(n, _)| n == layer).map(|&(_, c)| c)
    }
}

impl<F: Scalar> SpeakerModel<F> {
    pub fn build(variant: &ModelVariant, seed: u64) -> Result<Self> {
        variant.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut stages = Vec::new();
        let mut in_ch = 1;
        for (i, (&ch, &count)) in variant.stage_channels.iter().zip(&variant.blocks_per_stage).enumerate() {
            let down_geom = ConvGeometry::new(in_ch, ch, (3, 3), (2, 2), (0, 1), 1)?;
            let down = ConvBn::new(&mut store, &format!("conv{}", i + 1), down_geom, true, &mut rng)?;
            let spec = BlockSpec {
                family: variant.family,
                channels: ch,
                stage_multiplier: ModelVariant::stage_multiplier(i),
            };
            let name = format!("block{}", i + 1);
            let blocks = (0..count)
                .map(|j| ResidualBlock::new(&mut store, &format!("{name}.{j}"), &spec, &mut rng))
                .collect::<Result<_>>()?;
            stages.push(Stage { name, down, blocks });
            in_ch = ch;
        }
        let s = variant.stage_channels.len();
        let mut tail = Vec::new();
        for (k, out_ch) in [in_ch, variant.embedding_dim].into_iter().enumerate() {
            let name = format!("conv{}", s + k + 1);
            let geom = ConvGeometry::new(in_ch, out_ch, (3, 3), (2, 1), (0, 1), 1)?;
            tail.push((name.clone(), ConvBn::new(&mut store, &name, geom, true, &mut rng)?));
            in_ch = out_ch;
        }
        let pooling = AttentivePooling::new(
            &mut store,
            "pooling",
            variant.heads,
            variant.embedding_dim,
            variant.attention_dim,
            &mut rng,
        )?;
        let classifier = Linear::new(&mut store, "classifier", variant.embedding_dim, variant.num_classes, &mut rng)?;
        Ok(SpeakerModel {
            variant: variant.clone(),
            store,
            stages,
            tail,
            pooling,
            classifier,
        })
    }

    pub fn variant(&self) -> &ModelVariant {
        &self.variant
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn pooling(&self) -> &AttentivePooling {
        &self.pooling
    }

    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    pub fn cast<G: Scalar>(&self) -> SpeakerModel<G> {
        SpeakerModel {
            variant: self.variant.clone(),
            store: self.store.cast(),
            stages: self.stages.clone(),
            tail: self.tail.clone(),
            pooling: self.pooling.clone(),
            classifier: self.classifier.clone(),
        }
    }

    /// Names reported to forward hooks, in execution order. A stage name
    /// (`block3`) aliases the output of that stage's last block.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for st in &self.stages {
            names.push(st.down_name());
            for j in 0..st.blocks.len() {
                names.push(format!("{}.{j}", st.name));
            }
            names.push(st.name.clone());
        }
        names.extend(self.tail.iter().map(|(n, _)| n.clone()));
        names
    }

    /// Count of convolutional layers (standalone plus inside blocks).
    pub fn num_conv_layers(&self) -> usize {
        let in_blocks: usize = self
            .stages
            .iter()
            .flat_map(|s| &s.blocks)
            .map(|b| match b {
                ResidualBlock::Basic(_) => 2,
                ResidualBlock::ResNeXt(_) => 3,
                ResidualBlock::Res2Net(r) => 2 + r.module.convs.len(),
            })
            .sum();
        self.stages.len() + self.tail.len() + in_blocks
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != self.variant.mel_bins {
            return Err(Error::ShapeMismatch {
                op: "speaker model input",
                left: s.to_vec(),
                right: vec![0, 1, self.variant.mel_bins, 0],
            });
        }
        if s[3] < MIN_FRAMES {
            return Err(Error::TooShort {
                frames: s[3],
                min: MIN_FRAMES,
            });
        }
        Ok(())
    }

    /// Convolutional trunk: `[N, 1, F, T] -> [N, E, 1, T']`.
    pub fn forward_map(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        self.check_input(ctx.tape.value(x))?;
        let mut h = x;
        for st in &self.stages {
            h = st.down.forward(ctx, h)?;
            h = ctx.tap(&st.down_name(), h)?;
            for (j, b) in st.blocks.iter().enumerate() {
                h = b.forward(ctx, h)?;
                h = ctx.tap(&format!("{}.{j}", st.name), h)?;
            }
            h = ctx.tap(&st.name, h)?;
        }
        for (name, conv) in &self.tail {
            h = conv.forward(ctx, h)?;
            h = ctx.tap(name, h)?;
        }
        Ok(h)
    }

    /// Split a `[N, E, 1, T']` map into per-utterance `[T', E]` frame matrices.
    pub fn frame_matrices(&self, ctx: &mut Ctx<'_, F>, map: Var) -> Result<Vec<Var>> {
        let s = ctx.tape.shape(map).to_vec();
        if s.len() != 4 || s[2] != 1 {
            return Err(Error::invalid(format!("frame map must be [N, E, 1, T], got {s:?}")));
        }
        (0..s[0])
            .map(|n| {
                let one = ctx.tape.narrow(map, 0, n, 1)?;
                let m = ctx.tape.reshape(one, &[s[1], s[3]])?;
                ctx.tape.transpose(m)
            })
            .collect()
    }

    /// Utterance embeddings `[N, E]`.
    pub fn embed_vars(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let map = self.forward_map(ctx, x)?;
        let frames = self.frame_matrices(ctx, map)?;
        self.pooling.forward_batch(ctx, &frames)
    }

    pub fn logits_vars(&self, ctx: &mut Ctx<'_, F>, embeddings: Var) -> Result<Var> {
        self.classifier.forward(ctx, embeddings)
    }

    /// Stack equally long `[F, T]` feature matrices into a `[N, 1, F, T]` batch.
    pub fn batch_input(&self, features: &[&Tensor<F>]) -> Result<Tensor<F>> {
        let first = features.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let s = first.shape().to_vec();
        if s.len() != 2 || s[0] != self.variant.mel_bins {
            return Err(Error::ShapeMismatch {
                op: "features",
                left: s,
                right: vec![self.variant.mel_bins, 0],
            });
        }
        let mut data = Vec::with_capacity(features.len() * first.numel());
        for f in features {
            if f.shape() != s.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "batch",
                    left: s,
                    right: f.shape().to_vec(),
                });
            }
            data.extend_from_slice(f.data());
        }
        Tensor::new(&[features.len(), 1, s[0], s[1]], data)
    }

    /// Frame-level embeddings `[T', E]` of one `[F, T]` feature matrix.
    pub fn forward_frames(&self, features: &Tensor<F>) -> Result<Tensor<F>> {
        let x = self.batch_input(&[features])?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.store, Mode::Infer, false);
        let xv = ctx.tape.constant(x);
        let map = self.forward_map(&mut ctx, xv)?;
        let frames = self.frame_matrices(&mut ctx, map)?;
        Ok(ctx.tape.value(frames[0]).clone())
    }

    /// Utterance embedding (length `E`) of one `[F, T]` feature matrix.
    pub fn embed(&self, features: &Tensor<F>) -> Result<Tensor<F>> {
        let e = self.embed_batch(&[features])?;
        Tensor::from_vec(e.into_data())
    }

    /// Embeddings `[N, E]` of equally long utterances, in inference mode.
    pub fn embed_batch(&self, features: &[&Tensor<F>]) -> Result<Tensor<F>> {
        let x = self.batch_input(features)?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.store, Mode::Infer, false);
        let xv = ctx.tape.constant(x);
        let e = self.embed_vars(&mut ctx, xv)?;
        Ok(ctx.tape.value(e).clone())
    }

    pub fn logits(&self, features: &Tensor<F>) -> Result<Tensor<F>> {
        let x = self.batch_input(&[features])?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.store, Mode::Infer, false);
        let xv = ctx.tape.constant(x);
        let e = self.embed_vars(&mut ctx, xv)?;
        let l = self.logits_vars(&mut ctx, e)?;
        Ok(ctx.tape.value(l).clone())
    }

    pub fn count_parameters(&self) -> ParamCount {
        let mut layers: Vec<(String, usize)> = Vec::new();
        for e in self.store.params() {
            let layer = e.name.split('.').next().unwrap_or(&e.name);
            match layers.last_mut() {
                Some((name, count)) if name == layer => *count += e.value.numel(),
                _ => layers.push((layer.to_string(), e.value.numel())),
            }
        }
        let total = layers.iter().map(|(_, c)| c).sum();
        ParamCount { layers, total }
    }
}

impl Stage {
    pub fn down_name(&self) -> String {
        self.name.replacen("block", "conv", 1)
    }
}
