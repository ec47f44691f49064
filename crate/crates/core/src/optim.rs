//! Plain SGD and bias-corrected Adam over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `theta -= lr * grad`.
pub fn sgd_step(theta: &mut [f64], grad: &[f64], lr: f64) {
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
}

/// One Adam update at 1-based step `step`, updating the moments in place.
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    lr: f64,
    step: u64,
) {
    let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        first[i] = ADAM_BETA1 * first[i] + (1.0 - ADAM_BETA1) * g;
        second[i] = ADAM_BETA2 * second[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = first[i] / c1;
        let v_hat = second[i] / c2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Optimizer with its full resumable state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Number of steps taken so far.
    pub step: u64,
    /// Adam moments per parameter slot; empty until first touched.
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update. `grads` has one slot per stored tensor; `None`
    /// slots (buffers, or parameters not reached this step) are left alone.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape("optimizer", &[store.len()], &[grads.len()]));
        }
        self.step += 1;
        if self.kind == OptimizerKind::Adam && self.first.len() < store.len() {
            self.first.resize(store.len(), Vec::new());
            self.second.resize(store.len(), Vec::new());
        }
        for (id, grad) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let Some(grad) = grad else { continue };
            if !store.is_trainable(id) {
                continue;
            }
            let theta = store.get_mut(id);
            if theta.shape() != grad.shape() {
                return Err(Error::shape("optimizer", theta.shape(), grad.shape()));
            }
            match self.kind {
                OptimizerKind::Sgd => sgd_step(theta.data_mut(), grad.data(), self.learning_rate),
                OptimizerKind::Adam => {
                    let i = id.index();
                    if self.first[i].is_empty() {
                        self.first[i] = vec![0.0; grad.len()];
                        self.second[i] = vec![0.0; grad.len()];
                    }
                    adam_step(
                        theta.data_mut(),
                        grad.data(),
                        &mut self.first[i],
                        &mut self.second[i],
                        self.learning_rate,
                        self.step,
                    );
                }
            }
        }
        Ok(())
    }
}
