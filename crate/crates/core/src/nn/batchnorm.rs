use super::{BufferId, Ctx, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{axis_split, Scalar, Tensor};

pub const EPSILON: f64 = 1e-5;
pub const MOMENTUM: f64 = 0.1;

/// Per-channel statistics used by a normalization pass.
#[derive(Clone, Debug)]
pub struct BatchNormStats<F> {
    pub mean: Vec<F>,
    /// Biased variance of the batch (or the running variance in inference).
    pub var: Vec<F>,
    pub inv_std: Vec<F>,
    /// Number of values per channel that produced the statistics.
    pub count: usize,
    /// Whether the statistics depend on the input (training mode).
    pub from_batch: bool,
}

fn channel_layout<F: Scalar>(x: &Tensor<F>, channels: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() < 2 || s[1] != channels {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            left: s.to_vec(),
            right: vec![0, channels],
        });
    }
    let (outer, _, inner) = axis_split(s, 1);
    Ok((outer, inner))
}

pub(crate) fn forward<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running: Option<(&[F], &[F])>,
    eps: F,
) -> Result<(Tensor<F>, BatchNormStats<F>)> {
    let c = gamma.numel();
    let (outer, inner) = channel_layout(x, c)?;
    let count = outer * inner;
    let xd = x.data();
    let (mean, var, from_batch) = match running {
        Some((m, v)) => {
            if m.len() != c || v.len() != c {
                return Err(Error::invalid("running statistics length differs from channels"));
            }
            (m.to_vec(), v.to_vec(), false)
        }
        None => {
            let mut mean = vec![F::zero(); c];
            let mut var = vec![F::zero(); c];
            let inv_count = F::one() / F::cst(count as f64);
            for ch in 0..c {
                let mut s = F::zero();
                for o in 0..outer {
                    s = s + xd[(o * c + ch) * inner..][..inner].iter().copied().sum::<F>();
                }
                let m = s * inv_count;
                let mut ss = F::zero();
                for o in 0..outer {
                    for &v in &xd[(o * c + ch) * inner..][..inner] {
                        ss = ss + (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = ss * inv_count;
            }
            (mean, var, true)
        }
    };
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut out = vec![F::zero(); xd.len()];
    for o in 0..outer {
        for ch in 0..c {
            let (m, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            let base = (o * c + ch) * inner;
            for (d, &v) in out[base..][..inner].iter_mut().zip(&xd[base..][..inner]) {
                *d = (v - m) * is * g + b;
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        BatchNormStats {
            mean,
            var,
            inv_std,
            count,
            from_batch,
        },
    ))
}

/// Returns `(d input, d gamma, d beta)`.
pub(crate) fn backward<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    stats: &BatchNormStats<F>,
    gy: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let c = gamma.numel();
    let (outer, inner) = channel_layout(x, c).expect("validated in forward");
    let (xd, gd) = (x.data(), gy.data());
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            for (&v, &g) in xd[base..][..inner].iter().zip(&gd[base..][..inner]) {
                let xhat = (v - stats.mean[ch]) * stats.inv_std[ch];
                dgamma[ch] = dgamma[ch] + g * xhat;
                dbeta[ch] = dbeta[ch] + g;
            }
        }
    }
    let m = F::cst(stats.count as f64);
    let mut dx = vec![F::zero(); xd.len()];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            let (mu, is, gm) = (stats.mean[ch], stats.inv_std[ch], gamma.data()[ch]);
            for j in base..base + inner {
                dx[j] = if stats.from_batch {
                    let xhat = (xd[j] - mu) * is;
                    gm * is / m * (m * gd[j] - dbeta[ch] - xhat * dgamma[ch])
                } else {
                    gd[j] * gm * is
                };
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    )
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            channels,
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(&[channels], F::one())?),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels])?),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])?),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], F::one())?),
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let eps = F::cst(EPSILON);
        if ctx.mode().is_training() {
            let (out, stats) = ctx.tape.batch_norm(x, gamma, beta, None, eps)?;
            ctx.record_stats(self.running_mean, self.running_var, stats);
            Ok(out)
        } else {
            let store = ctx.store();
            let mean = store.buffer(self.running_mean).data();
            let var = store.buffer(self.running_var).data();
            let (out, _) = ctx.tape.batch_norm(x, gamma, beta, Some((mean, var)), eps)?;
            Ok(out)
        }
    }
}
