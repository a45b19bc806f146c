//! Multi-head attentive pooling over frame-level embeddings.
//!
//! Head `h` scores frame `t` with `e = v_h . tanh(W_h^T m_t)`, normalizes the
//! scores over time with a softmax, and returns the weighted mean of the frames.
//! Every head sees the full frame vector and head outputs are averaged, so the
//! pooled vector keeps the frame dimension.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Mode, ParamId, ParamStore};
use crate::tensor::{Fill, Scalar, Tensor};

pub const DEFAULT_HEADS: usize = 16;
pub const DEFAULT_ATTENTION_DIM: usize = 64;

#[derive(Clone, Debug)]
pub struct AttentivePooling {
    pub heads: usize,
    pub dim: usize,
    pub hidden: usize,
    /// `[heads, dim, hidden]`
    pub projection: ParamId,
    /// `[heads, hidden]`
    pub score: ParamId,
}

/// Per-head quantities built once per forward pass and reused for every utterance.
struct HeadVars {
    projection: Vec<Var>,
    score: Vec<Var>,
}

impl AttentivePooling {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        heads: usize,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let projection = Tensor::create(&[heads, dim, hidden], Fill::HeUniform { fan_in: dim }, rng)?;
        let score = Tensor::create(&[heads, hidden], Fill::HeUniform { fan_in: hidden }, rng)?;
        Ok(AttentivePooling {
            heads,
            dim,
            hidden,
            projection: store.add_param(format!("{name}.projection"), projection),
            score: store.add_param(format!("{name}.score"), score),
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.heads * self.hidden * (self.dim + 1)
    }

    fn head_vars<F: Scalar>(&self, ctx: &mut Ctx<'_, F>) -> Result<HeadVars> {
        let (pw, sv) = (ctx.param(self.projection), ctx.param(self.score));
        let mut projection = Vec::with_capacity(self.heads);
        let mut score = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let w = ctx.tape.narrow(pw, 0, h, 1)?;
            projection.push(ctx.tape.reshape(w, &[self.dim, self.hidden])?);
            let v = ctx.tape.narrow(sv, 0, h, 1)?;
            score.push(ctx.tape.reshape(v, &[self.hidden, 1])?);
        }
        Ok(HeadVars { projection, score })
    }

    fn check_frames(&self, tape: &Tape<impl Scalar>, frames: Var) -> Result<()> {
        let s = tape.shape(frames);
        if s.len() != 2 || s[1] != self.dim {
            return Err(Error::ShapeMismatch {
                op: "attentive_pool",
                left: s.to_vec(),
                right: vec![0, self.dim],
            });
        }
        Ok(())
    }

    /// Attention weights `[T, 1]` of every head.
    fn weights<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, heads: &HeadVars, frames: Var) -> Result<Vec<Var>> {
        self.check_frames(ctx.tape, frames)?;
        (0..self.heads)
            .map(|h| {
                let z = ctx.tape.matmul(frames, heads.projection[h])?;
                let z = ctx.tape.tanh(z);
                let e = ctx.tape.matmul(z, heads.score[h])?;
                ctx.tape.softmax(e, 0)
            })
            .collect()
    }

    fn pool_one<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, heads: &HeadVars, frames: Var) -> Result<Var> {
        let alphas = self.weights(ctx, heads, frames)?;
        let mut acc: Option<Var> = None;
        for alpha in alphas {
            let at = ctx.tape.transpose(alpha)?;
            let u = ctx.tape.matmul(at, frames)?;
            acc = Some(match acc {
                Some(a) => ctx.tape.add(a, u)?,
                None => u,
            });
        }
        let sum = acc.ok_or_else(|| Error::invalid("attentive pooling with zero heads"))?;
        Ok(ctx.tape.scale(sum, F::one() / F::cst(self.heads as f64)))
    }

    /// Pool one `[T, dim]` frame matrix into `[1, dim]`.
    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, frames: Var) -> Result<Var> {
        let heads = self.head_vars(ctx)?;
        self.pool_one(ctx, &heads, frames)
    }

    /// Pool several frame matrices into `[N, dim]`.
    pub fn forward_batch<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, frames: &[Var]) -> Result<Var> {
        let heads = self.head_vars(ctx)?;
        let pooled = frames
            .iter()
            .map(|&f| self.pool_one(ctx, &heads, f))
            .collect::<Result<Vec<_>>>()?;
        ctx.tape.concat(&pooled, 0)
    }

    /// Attention distribution over frames for each head.
    pub fn attention<F: Scalar>(&self, store: &ParamStore<F>, frames: &Tensor<F>) -> Result<Vec<Vec<F>>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, store, Mode::Infer, false);
        let heads = self.head_vars(&mut ctx)?;
        let f = ctx.tape.constant(frames.clone());
        let alphas = self.weights(&mut ctx, &heads, f)?;
        Ok(alphas.iter().map(|&a| ctx.tape.value(a).data().to_vec()).collect())
    }

    /// Shannon entropy (nats) of each head's attention distribution.
    pub fn attention_entropy<F: Scalar>(&self, store: &ParamStore<F>, frames: &Tensor<F>) -> Result<Vec<F>> {
        Ok(self
            .attention(store, frames)?
            .iter()
            .map(|alpha| entropy(alpha))
            .collect())
    }

    /// Pool a `[T, dim]` tensor outside of any training graph.
    pub fn pool<F: Scalar>(&self, store: &ParamStore<F>, frames: &Tensor<F>) -> Result<Vec<F>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, store, Mode::Infer, false);
        let f = ctx.tape.constant(frames.clone());
        let out = self.forward(&mut ctx, f)?;
        Ok(ctx.tape.value(out).data().to_vec())
    }
}

pub fn entropy<F: Scalar>(p: &[F]) -> F {
    p.iter()
        .filter(|&&x| x > F::zero())
        .map(|&x| -x * x.ln())
        .sum()
}
