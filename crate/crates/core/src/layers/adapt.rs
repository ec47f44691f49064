//! Domain interest adaptation: feature re-weighting selected by domain.
//!
//! Three forms operate on the per-field embeddings `F_1..F_N`:
//!
//! * linear transformation, `W ⊙ F + b` over the concatenated features;
//! * vanilla attention, `α_i = σ(Q_i · F_i)` scaling each field;
//! * squeeze-excitation, where the per-field means are passed through an
//!   `(FC, ReLU, FC)` block and a gate to produce one weight per field.
//!
//! Every form preserves the concatenated width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::mlp::Linear;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptationKind {
    None,
    Linear,
    VanillaAttention,
    Se,
}

impl AdaptationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdaptationKind::None => "none",
            AdaptationKind::Linear => "linear",
            AdaptationKind::VanillaAttention => "vanilla-attention",
            AdaptationKind::Se => "se",
        }
    }
}

/// Output activation of the squeeze-excitation block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeGate {
    Sigmoid,
    Identity,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Params {
    Linear {
        weight: ParamId,
        bias: ParamId,
    },
    Vanilla {
        queries: Vec<ParamId>,
    },
    Se {
        squeeze: Linear,
        excite: Linear,
        gate: SeGate,
    },
}

/// One adaptation parameter set (for one domain, or shared).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptationLayer {
    field_dims: Vec<usize>,
    params: Params,
}

pub struct Adapted {
    pub output: Var,
    /// Per-field weights `[batch, N]` for the attention forms.
    pub weights: Option<Var>,
}

impl AdaptationLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngState,
        prefix: &str,
        kind: AdaptationKind,
        field_dims: &[usize],
        se_reduction: usize,
        se_gate: SeGate,
    ) -> Result<Self> {
        let width: usize = field_dims.iter().sum();
        let params = match kind {
            AdaptationKind::None => {
                return Err(Error::Config("no adaptation layer for kind `none`".into()))
            }
            AdaptationKind::Linear => Params::Linear {
                weight: store.add(format!("{prefix}.lt.w"), Tensor::ones(&[1, width]), true),
                bias: store.add(format!("{prefix}.lt.b"), Tensor::zeros(&[1, width]), true),
            },
            AdaptationKind::VanillaAttention => Params::Vanilla {
                queries: field_dims
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| store.add_glorot(format!("{prefix}.va.q{i}"), [d, 1], d, 1, rng))
                    .collect(),
            },
            AdaptationKind::Se => {
                if se_reduction == 0 {
                    return Err(Error::Config("SE reduction ratio must be >= 1".into()));
                }
                let n = field_dims.len();
                let hidden = (n / se_reduction).max(1);
                Params::Se {
                    squeeze: Linear::new(store, rng, &format!("{prefix}.se.fc1"), n, hidden),
                    excite: Linear::new(store, rng, &format!("{prefix}.se.fc2"), hidden, n),
                    gate: se_gate,
                }
            }
        };
        Ok(AdaptationLayer {
            field_dims: field_dims.to_vec(),
            params,
        })
    }

    pub fn kind(&self) -> AdaptationKind {
        match self.params {
            Params::Linear { .. } => AdaptationKind::Linear,
            Params::Vanilla { .. } => AdaptationKind::VanillaAttention,
            Params::Se { .. } => AdaptationKind::Se,
        }
    }

    /// Linear-transform weight `W`, when this is the linear form.
    pub fn linear_weight(&self) -> Option<ParamId> {
        match self.params {
            Params::Linear { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn forward(&self, s: &mut Session, fields: &[Var]) -> Result<Adapted> {
        if fields.len() != self.field_dims.len() {
            return Err(Error::shape(
                "adaptation",
                &[fields.len()],
                &[self.field_dims.len()],
            ));
        }
        match &self.params {
            Params::Linear { weight, bias } => {
                let f = s.g.concat(fields)?;
                let w = s.param(*weight)?;
                let b = s.param(*bias)?;
                if s.g.value(f).cols() != s.g.value(w).cols() {
                    return Err(Error::shape("adapt_linear", s.g.shape(f), s.g.shape(w)));
                }
                let scaled = s.g.mul(f, w)?;
                let output = s.g.add(scaled, b)?;
                Ok(Adapted {
                    output,
                    weights: None,
                })
            }
            Params::Vanilla { queries } => {
                let mut alphas = Vec::with_capacity(fields.len());
                let mut scaled = Vec::with_capacity(fields.len());
                for (&f, &q) in fields.iter().zip(queries) {
                    let qv = s.param(q)?;
                    let logit = s.g.matmul(f, qv)?;
                    let alpha = s.g.sigmoid(logit)?;
                    scaled.push(s.g.mul(f, alpha)?);
                    alphas.push(alpha);
                }
                let output = s.g.concat(&scaled)?;
                let weights = s.g.concat(&alphas)?;
                Ok(Adapted {
                    output,
                    weights: Some(weights),
                })
            }
            Params::Se {
                squeeze,
                excite,
                gate,
            } => {
                let means = fields
                    .iter()
                    .map(|&f| s.g.mean_axis(f, 1))
                    .collect::<Result<Vec<_>>>()?;
                let z = s.g.concat(&means)?;
                let h = squeeze.forward(s, z)?;
                let h = s.g.relu(h)?;
                let e = excite.forward(s, h)?;
                let weights = match gate {
                    SeGate::Sigmoid => s.g.sigmoid(e)?,
                    SeGate::Identity => e,
                };
                let mut scaled = Vec::with_capacity(fields.len());
                for (i, &f) in fields.iter().enumerate() {
                    let a = s.g.slice(weights, i, i + 1)?;
                    scaled.push(s.g.mul(f, a)?);
                }
                let output = s.g.concat(&scaled)?;
                Ok(Adapted {
                    output,
                    weights: Some(weights),
                })
            }
        }
    }
}
