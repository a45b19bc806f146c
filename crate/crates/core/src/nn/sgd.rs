use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Momentum SGD: `v <- m * v + (g + decay * p)`, `p <- p - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<F> {
    pub lr: F,
    pub momentum: F,
    pub weight_decay: F,
    velocity: Vec<Tensor<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(lr: F, momentum: F, weight_decay: F) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<F>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Tensor<F>>) {
        self.velocity = velocity;
    }

    /// Update every parameter of `store`; `grads` is aligned with the store order.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Option<Tensor<F>>]) -> Result<()> {
        let params = store.params_mut();
        if grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (entry, g) in params.iter().zip(grads) {
            match g {
                None => return Err(Error::MissingGrad(entry.name.clone())),
                Some(g) if g.shape() != entry.value.shape() => {
                    return Err(Error::ShapeMismatch {
                        op: "sgd_step",
                        left: entry.value.shape().to_vec(),
                        right: g.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if self.velocity.len() != params.len() {
            self.velocity = params
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect::<Result<_>>()?;
        }
        for ((entry, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let g = g.as_ref().expect("checked above");
            let p = entry.value.data_mut();
            for ((pi, vi), &gi) in p.iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *pi;
                *pi = *pi - self.lr * *vi;
            }
        }
        Ok(())
    }
}
