//! Batch normalization with one branch per domain.
//!
//! With a single branch this is ordinary batch normalization; with one branch
//! per domain each domain keeps its own affine `(alpha, beta)` and its own
//! running mean and variance. Running statistics are stored as non-trainable
//! buffers in the [`ParamStore`] so checkpoints carry them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::params::{Mode, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

use super::domain_copy;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    /// 1 for shared statistics, D for domain-specific.
    pub copies: usize,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Branch {
    alpha: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DsbnLayer {
    width: usize,
    branches: Vec<Branch>,
    momentum: f64,
    eps: f64,
}

impl DsbnLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, spec: NormSpec) -> Result<Self> {
        if spec.eps <= 0.0 {
            return Err(Error::Config(format!(
                "normalization eps must be > 0, got {}",
                spec.eps
            )));
        }
        if !(0.0..=1.0).contains(&spec.momentum) {
            return Err(Error::Config(format!(
                "normalization momentum must be in [0,1], got {}",
                spec.momentum
            )));
        }
        if spec.copies == 0 {
            return Err(Error::Config(
                "normalization needs at least one branch".into(),
            ));
        }
        let branches = (0..spec.copies)
            .map(|d| Branch {
                alpha: store.add(
                    format!("{prefix}.bn{d}.alpha"),
                    Tensor::ones(&[1, width]),
                    true,
                ),
                beta: store.add(
                    format!("{prefix}.bn{d}.beta"),
                    Tensor::zeros(&[1, width]),
                    true,
                ),
                running_mean: store.add(
                    format!("{prefix}.bn{d}.running_mean"),
                    Tensor::zeros(&[1, width]),
                    false,
                ),
                running_var: store.add(
                    format!("{prefix}.bn{d}.running_var"),
                    Tensor::ones(&[1, width]),
                    false,
                ),
            })
            .collect();
        Ok(DsbnLayer {
            width,
            branches,
            momentum: spec.momentum,
            eps: spec.eps,
        })
    }

    pub fn copies(&self) -> usize {
        self.branches.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn affine(&self, domain: usize) -> Result<(ParamId, ParamId)> {
        let b = &self.branches[domain_copy(domain, self.branches.len())?];
        Ok((b.alpha, b.beta))
    }

    pub fn running(&self, domain: usize) -> Result<(ParamId, ParamId)> {
        let b = &self.branches[domain_copy(domain, self.branches.len())?];
        Ok((b.running_mean, b.running_var))
    }

    /// Normalizes `x` (`[batch, width]`), all rows belonging to `domain`.
    ///
    /// Train mode uses the batch statistics (biased variance) and records the
    /// momentum update of the running statistics; infer mode uses the stored
    /// running statistics.
    pub fn forward(&self, s: &mut Session, x: Var, domain: usize) -> Result<Var> {
        let branch = &self.branches[domain_copy(domain, self.branches.len())?];
        let (rows, cols) = (s.g.value(x).rows(), s.g.value(x).cols());
        if cols != self.width {
            return Err(Error::shape("dsbn", &[rows, cols], &[rows, self.width]));
        }
        let alpha = s.param(branch.alpha)?;
        let beta = s.param(branch.beta)?;
        let normalized = match s.mode() {
            Mode::Train => {
                if rows < 2 {
                    return Err(Error::Data(format!(
                        "train-mode normalization needs at least 2 samples of domain {domain} in the batch, got {rows}"
                    )));
                }
                let mean = s.g.mean_axis(x, 0)?;
                let centered = s.g.sub(x, mean)?;
                let sq = s.g.mul(centered, centered)?;
                let var = s.g.mean_axis(sq, 0)?;
                let shifted = s.g.add_scalar(var, self.eps)?;
                let inv_std = s.g.powf(shifted, -0.5)?;
                let out = s.g.mul(centered, inv_std)?;

                let m = self.momentum;
                let blend = |old: &Tensor, new: &Tensor| {
                    let data = old
                        .data()
                        .iter()
                        .zip(new.data())
                        .map(|(o, n)| m * o + (1.0 - m) * n)
                        .collect();
                    Tensor::new(old.shape().to_vec(), data)
                };
                let store = s.store();
                let new_mean = blend(store.get(branch.running_mean), s.g.value(mean))?;
                let new_var = blend(store.get(branch.running_var), s.g.value(var))?;
                s.record_buffer(branch.running_mean, new_mean);
                s.record_buffer(branch.running_var, new_var);
                out
            }
            Mode::Infer => {
                let store = s.store();
                let mean = store.get(branch.running_mean).clone();
                let inv_std: Vec<f64> = store
                    .get(branch.running_var)
                    .data()
                    .iter()
                    .map(|v| 1.0 / (v + self.eps).sqrt())
                    .collect();
                let mean = s.constant(mean)?;
                let inv_std = s.constant(Tensor::row_vector(inv_std)?)?;
                let centered = s.g.sub(x, mean)?;
                s.g.mul(centered, inv_std)?
            }
        };
        let scaled = s.g.mul(normalized, alpha)?;
        s.g.add(scaled, beta)
    }
}

/// Applies recorded running-statistic updates to the store.
pub fn apply_buffer_updates(store: &mut ParamStore, updates: Vec<(ParamId, Tensor)>) -> Result<()> {
    for (id, t) in updates {
        store.set(id, t)?;
    }
    Ok(())
}
