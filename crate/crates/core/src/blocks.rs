//! Residual block families: basic two-layer block, ResNeXt bottleneck with
//! grouped convolution, and the Res2Net block with its hierarchical module.
//!
//! All blocks preserve channel count and spatial extent; convolutions use the
//! conv -> BN -> ReLU ordering and the last ReLU follows the skip addition.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{ConvBn, ConvGeometry, Ctx, ParamStore};
use crate::tensor::Scalar;
use crate::variant::BlockFamily;

/// Block family plus the channel count and width multiplier of its stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub family: BlockFamily,
    pub channels: usize,
    pub stage_multiplier: usize,
}

impl BlockSpec {
    /// Channels between the block's outer convolutions: `w * c * m` for ResNeXt,
    /// `w * s * m` for Res2Net, the stage width for the basic block.
    pub fn inner_width(&self) -> usize {
        match self.family {
            BlockFamily::ResNet => self.channels,
            BlockFamily::ResNeXt {
                base_width,
                cardinality,
            } => base_width * cardinality * self.stage_multiplier,
            BlockFamily::Res2Net { base_width, scale } => base_width * scale * self.stage_multiplier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.inner_width();
        match self.family {
            BlockFamily::ResNeXt { cardinality, .. } if cardinality == 0 || !w.is_multiple_of(cardinality) => {
                Err(Error::invalid(format!("inner width {w} not divisible by cardinality {cardinality}")))
            }
            BlockFamily::Res2Net { scale, .. } if scale < 2 || !w.is_multiple_of(scale) => {
                Err(Error::invalid(format!("inner width {w} not divisible by scale {scale}")))
            }
            _ if self.channels == 0 || w == 0 => Err(Error::invalid("empty block")),
            _ => Ok(()),
        }
    }
}

fn check_channels<F: Scalar>(ctx: &Ctx<'_, F>, x: Var, want: usize, what: &str) -> Result<()> {
    let shape = ctx.tape.shape(x);
    if shape.len() != 4 || shape[1] != want {
        return Err(Error::invalid(format!(
            "{what} expects [N, {want}, F, T] input, got {shape:?}"
        )));
    }
    Ok(())
}

/// `relu(x + bn(conv(relu(bn(conv(x))))))`
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub channels: usize,
    pub conv1: ConvBn,
    pub conv2: ConvBn,
}

impl BasicBlock {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, name: &str, channels: usize, rng: &mut R) -> Result<Self> {
        let geom = ConvGeometry::same3x3(channels, channels, 1)?;
        Ok(BasicBlock {
            channels,
            conv1: ConvBn::new(store, &format!("{name}.conv1"), geom, true, rng)?,
            conv2: ConvBn::new(store, &format!("{name}.conv2"), geom, false, rng)?,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        check_channels(ctx, x, self.channels, "basic block")?;
        let h = self.conv1.forward(ctx, x)?;
        let h = self.conv2.forward(ctx, h)?;
        let s = ctx.tape.add(x, h)?;
        Ok(ctx.tape.relu(s))
    }
}

/// 1x1 reduce, grouped 3x3, 1x1 expand.
#[derive(Clone, Debug)]
pub struct ResNeXtBlock {
    pub channels: usize,
    pub cardinality: usize,
    pub reduce: ConvBn,
    pub grouped: ConvBn,
    pub expand: ConvBn,
}

impl ResNeXtBlock {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, name: &str, spec: &BlockSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let BlockFamily::ResNeXt { cardinality, .. } = spec.family else {
            return Err(Error::invalid("ResNeXt block needs a resnext spec"));
        };
        let (c, w) = (spec.channels, spec.inner_width());
        Ok(ResNeXtBlock {
            channels: c,
            cardinality,
            reduce: ConvBn::new(store, &format!("{name}.reduce"), ConvGeometry::pointwise(c, w)?, true, rng)?,
            grouped: ConvBn::new(store, &format!("{name}.grouped"), ConvGeometry::same3x3(w, w, cardinality)?, true, rng)?,
            expand: ConvBn::new(store, &format!("{name}.expand"), ConvGeometry::pointwise(w, c)?, false, rng)?,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        check_channels(ctx, x, self.channels, "ResNeXt block")?;
        let h = self.reduce.forward(ctx, x)?;
        let h = self.grouped.forward(ctx, h)?;
        let h = self.expand.forward(ctx, h)?;
        let s = ctx.tape.add(x, h)?;
        Ok(ctx.tape.relu(s))
    }
}

/// Hierarchical split module: channels are cut into `scale` equal subsets
/// `x_1..x_s`; `y_1 = x_1`, `y_2 = K_2(x_2)`, `y_i = K_i(x_i + y_{i-1})`, and the
/// outputs are concatenated back.
#[derive(Clone, Debug)]
pub struct Res2NetModule {
    pub scale: usize,
    pub subset_width: usize,
    /// `K_2 ..= K_s`; each is a 3x3 conv with batch norm and ReLU.
    pub convs: Vec<ConvBn>,
}

impl Res2NetModule {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        width: usize,
        scale: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if scale < 2 || !width.is_multiple_of(scale) {
            return Err(Error::invalid(format!("width {width} cannot be split into {scale} subsets")));
        }
        let subset_width = width / scale;
        let geom = ConvGeometry::same3x3(subset_width, subset_width, 1)?;
        let convs = (2..=scale)
            .map(|i| ConvBn::new(store, &format!("{name}.k{i}"), geom, true, rng))
            .collect::<Result<_>>()?;
        Ok(Res2NetModule {
            scale,
            subset_width,
            convs,
        })
    }

    pub fn width(&self) -> usize {
        self.scale * self.subset_width
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        check_channels(ctx, x, self.width(), "Res2Net module")?;
        let w = self.subset_width;
        let mut outputs = Vec::with_capacity(self.scale);
        outputs.push(ctx.tape.narrow(x, 1, 0, w)?);
        let mut prev: Option<Var> = None;
        for (k, conv) in self.convs.iter().enumerate() {
            let xi = ctx.tape.narrow(x, 1, (k + 1) * w, w)?;
            let input = match prev {
                Some(p) => ctx.tape.add(xi, p)?,
                None => xi,
            };
            let yi = conv.forward(ctx, input)?;
            outputs.push(yi);
            prev = Some(yi);
        }
        ctx.tape.concat(&outputs, 1)
    }
}

/// 3x3 conv C -> W, Res2Net module, 1x1 conv W -> C.
#[derive(Clone, Debug)]
pub struct Res2NetBlock {
    pub channels: usize,
    pub conv1: ConvBn,
    pub module: Res2NetModule,
    pub expand: ConvBn,
}

impl Res2NetBlock {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, name: &str, spec: &BlockSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let BlockFamily::Res2Net { scale, .. } = spec.family else {
            return Err(Error::invalid("Res2Net block needs a res2net spec"));
        };
        let (c, w) = (spec.channels, spec.inner_width());
        Ok(Res2NetBlock {
            channels: c,
            conv1: ConvBn::new(store, &format!("{name}.conv1"), ConvGeometry::same3x3(c, w, 1)?, true, rng)?,
            module: Res2NetModule::new(store, &format!("{name}.module"), w, scale, rng)?,
            expand: ConvBn::new(store, &format!("{name}.expand"), ConvGeometry::pointwise(w, c)?, false, rng)?,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        check_channels(ctx, x, self.channels, "Res2Net block")?;
        let h = self.conv1.forward(ctx, x)?;
        let h = self.module.forward(ctx, h)?;
        let h = self.expand.forward(ctx, h)?;
        let s = ctx.tape.add(x, h)?;
        Ok(ctx.tape.relu(s))
    }
}

#[derive(Clone, Debug)]
pub enum ResidualBlock {
    Basic(BasicBlock),
    ResNeXt(ResNeXtBlock),
    Res2Net(Res2NetBlock),
}

impl ResidualBlock {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, name: &str, spec: &BlockSpec, rng: &mut R) -> Result<Self> {
        Ok(match spec.family {
            BlockFamily::ResNet => ResidualBlock::Basic(BasicBlock::new(store, name, spec.channels, rng)?),
            BlockFamily::ResNeXt { .. } => ResidualBlock::ResNeXt(ResNeXtBlock::new(store, name, spec, rng)?),
            BlockFamily::Res2Net { .. } => ResidualBlock::Res2Net(Res2NetBlock::new(store, name, spec, rng)?),
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        match self {
            ResidualBlock::Basic(b) => b.forward(ctx, x),
            ResidualBlock::ResNeXt(b) => b.forward(ctx, x),
            ResidualBlock::Res2Net(b) => b.forward(ctx, x),
        }
    }
}
