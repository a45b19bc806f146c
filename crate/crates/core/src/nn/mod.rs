//! Layers, parameter storage and the forward-pass context.

pub mod batchnorm;
pub mod conv;
pub mod sgd;

use rand::Rng;

use crate::autograd::{Gradients, Tape, Var};
use crate::error::Result;
use crate::tensor::{Fill, Scalar, Tensor};

pub use batchnorm::{BatchNorm, BatchNormStats};
pub use conv::{Conv2d, ConvGeometry};
pub use sgd::Sgd;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Entry<F> {
    pub name: String,
    pub value: Tensor<F>,
}

/// Named trainable parameters plus non-trainable buffers (batch-norm running
/// statistics), in construction order.
#[derive(Clone, Debug)]
pub struct ParamStore<F> {
    params: Vec<Entry<F>>,
    buffers: Vec<Entry<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: String, value: Tensor<F>) -> ParamId {
        self.params.push(Entry { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: String, value: Tensor<F>) -> BufferId {
        self.buffers.push(Entry { name, value });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<F> {
        &self.buffers[id.0].value
    }

    pub fn params(&self) -> &[Entry<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Entry<F>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Entry<F>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Entry<F>] {
        &mut self.buffers
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars (buffers excluded).
    pub fn num_trainable(&self) -> usize {
        self.params.iter().map(|e| e.value.numel()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        let conv = |v: &[Entry<F>]| {
            v.iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                })
                .collect()
        };
        ParamStore {
            params: conv(&self.params),
            buffers: conv(&self.buffers),
        }
    }

    /// Blend batch statistics gathered during a training forward pass into the
    /// running buffers: `running = (1 - m) * running + m * batch`, with the
    /// unbiased batch variance.
    pub fn apply_stats(&mut self, records: Vec<StatRecord<F>>, momentum: F) {
        for r in records {
            let n = r.stats.count as f64;
            let unbias = if n > 1.0 { F::cst(n / (n - 1.0)) } else { F::one() };
            let keep = F::one() - momentum;
            for (rm, &m) in self.buffers[r.mean.0].value.data_mut().iter_mut().zip(&r.stats.mean) {
                *rm = keep * *rm + momentum * m;
            }
            for (rv, &v) in self.buffers[r.var.0].value.data_mut().iter_mut().zip(&r.stats.var) {
                *rv = keep * *rv + momentum * v * unbias;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

impl Mode {
    pub fn is_training(self) -> bool {
        self == Mode::Train
    }
}

#[derive(Clone, Debug)]
pub struct StatRecord<F> {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BatchNormStats<F>,
}

/// Observer/rewriter invoked with each named layer output during a forward pass.
pub type Hook<'a, F> = dyn FnMut(&str, Var, &mut Tape<F>) -> Result<Var> + 'a;

/// State threaded through a forward pass: the tape, the parameters bound onto it,
/// the mode, and batch statistics waiting to be folded into running buffers.
pub struct Ctx<'a, F: Scalar> {
    pub tape: &'a mut Tape<F>,
    store: &'a ParamStore<F>,
    params: Vec<Var>,
    mode: Mode,
    stats: Vec<StatRecord<F>>,
    hook: Option<&'a mut Hook<'a, F>>,
}

impl<'a, F: Scalar> Ctx<'a, F> {
    /// Bind every parameter of `store` onto `tape` as a leaf.
    pub fn new(tape: &'a mut Tape<F>, store: &'a ParamStore<F>, mode: Mode, grad_params: bool) -> Self {
        let params = store
            .params
            .iter()
            .map(|e| tape.leaf(e.value.clone(), grad_params))
            .collect();
        Ctx {
            tape,
            store,
            params,
            mode,
            stats: Vec::new(),
            hook: None,
        }
    }

    pub fn with_hook(mut self, hook: &'a mut Hook<'a, F>) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    pub fn store(&self) -> &'a ParamStore<F> {
        self.store
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub(crate) fn record_stats(&mut self, mean: BufferId, var: BufferId, stats: BatchNormStats<F>) {
        self.stats.push(StatRecord { mean, var, stats });
    }

    /// Report a named layer output to the hook, which may substitute it.
    pub fn tap(&mut self, name: &str, v: Var) -> Result<Var> {
        match self.hook.as_mut() {
            Some(h) => h(name, v, self.tape),
            None => Ok(v),
        }
    }

    pub fn into_stats(self) -> Vec<StatRecord<F>> {
        self.stats
    }

    /// Collect parameter gradients from a backward pass, aligned with the store.
    pub fn param_grads(&self, grads: &mut Gradients<F>) -> Vec<Option<Tensor<F>>> {
        self.params.iter().map(|&v| grads.take(v)).collect()
    }
}

/// Convolution followed by batch normalization and an optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        geom: ConvGeometry,
        relu: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ConvBn {
            conv: Conv2d::new(store, &format!("{name}.conv"), geom, rng)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), geom.out_channels)?,
            relu,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(if self.relu { ctx.tape.relu(y) } else { y })
    }
}

/// Bias-free affine map `[N, in] -> [N, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
}

impl Linear {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = Tensor::create(&[inputs, outputs], Fill::HeUniform { fan_in: inputs }, rng)?;
        Ok(Linear {
            inputs,
            outputs,
            weight: store.add_param(format!("{name}.weight"), w),
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        ctx.tape.matmul(x, w)
    }
}
