//! Domain-driven mixing weights over the shared networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// How expert logits become mixing weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// Softmax over the logits: always a convex mixture.
    #[default]
    Softmax,
    /// Each logit divided by the logit sum. Undefined when the sum is
    /// (near) zero and may produce negative weights.
    SumRatio,
}

/// Smallest admissible `|Σ logits|` in [`GateMode::SumRatio`].
pub const RATIO_GUARD: f64 = 1e-8;

/// One shallow `(W_k, b_k)` per shared network, each mapping the domain
/// indicator embedding to a scalar logit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SharedGate {
    experts: Vec<(ParamId, ParamId)>,
    mode: GateMode,
}

impl SharedGate {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngState,
        prefix: &str,
        experts: usize,
        indicator_dim: usize,
        mode: GateMode,
    ) -> Result<Self> {
        if experts == 0 {
            return Err(Error::Config(
                "gate needs at least one shared network".into(),
            ));
        }
        let experts = (0..experts)
            .map(|k| {
                (
                    store.add_glorot(
                        format!("{prefix}.gate{k}.w"),
                        [indicator_dim, 1],
                        indicator_dim,
                        1,
                        rng,
                    ),
                    store.add(format!("{prefix}.gate{k}.b"), Tensor::zeros(&[1, 1]), true),
                )
            })
            .collect();
        Ok(SharedGate { experts, mode })
    }

    pub fn experts(&self) -> usize {
        self.experts.len()
    }

    pub fn params(&self, k: usize) -> (ParamId, ParamId) {
        self.experts[k]
    }

    pub fn mode(&self) -> GateMode {
        self.mode
    }

    /// Mixing weights `[rows, K]` for indicator embeddings `[rows, e]`.
    pub fn weights(&self, s: &mut Session, indicator: Var) -> Result<Var> {
        let mut logits = Vec::with_capacity(self.experts.len());
        for &(w, b) in &self.experts {
            let wv = s.param(w)?;
            let bv = s.param(b)?;
            let z = s.g.matmul(indicator, wv)?;
            logits.push(s.g.add(z, bv)?);
        }
        let logits = s.g.concat(&logits)?;
        match self.mode {
            GateMode::Softmax => s.g.softmax(logits),
            GateMode::SumRatio => {
                let total = s.g.sum_axis(logits, 1)?;
                if let Some(bad) =
                    s.g.value(total)
                        .data()
                        .iter()
                        .find(|v| v.abs() < RATIO_GUARD)
                {
                    return Err(Error::Config(format!(
                        "sum-ratio gate: logit sum {bad:e} is within {RATIO_GUARD:e} of zero; use gate mode `softmax`"
                    )));
                }
                let inv = s.g.powf(total, -1.0)?;
                s.g.mul(logits, inv)
            }
        }
    }
}

/// `Σ_k α_k · expert_k`, with `alpha` of shape `[rows or 1, K]`.
pub fn mix_experts(s: &mut Session, alpha: Var, outputs: &[Var]) -> Result<Var> {
    let k = s.g.value(alpha).cols();
    if outputs.is_empty() || outputs.len() != k {
        return Err(Error::shape(
            "mix_experts",
            s.g.shape(alpha),
            &[outputs.len()],
        ));
    }
    let width = s.g.value(outputs[0]).cols();
    let mut acc: Option<Var> = None;
    for (i, &out) in outputs.iter().enumerate() {
        if s.g.value(out).cols() != width {
            return Err(Error::shape(
                "mix_experts",
                s.g.shape(outputs[0]),
                s.g.shape(out),
            ));
        }
        let a = s.g.slice(alpha, i, i + 1)?;
        let term = s.g.mul(out, a)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => s.g.add(prev, term)?,
        });
    }
    Ok(acc.expect("at least one expert"))
}
