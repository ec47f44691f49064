use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::norm::{DsbnLayer, NormSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

/// `y = x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngState,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let weight = store.add_glorot(
            format!("{prefix}.w"),
            [fan_in, fan_out],
            fan_in,
            fan_out,
            rng,
        );
        let bias = store.add(format!("{prefix}.b"), Tensor::zeros(&[1, fan_out]), true);
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight)?;
        let b = s.param(self.bias)?;
        let xw = s.g.matmul(x, w)?;
        s.g.add(xw, b)
    }
}

pub(crate) fn activate(s: &mut Session, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Relu => s.g.relu(x),
        Activation::Identity => Ok(x),
    }
}

/// Stack of linear layers. Hidden layers are `linear -> [norm] -> relu`; the
/// last layer uses `final_activation` and is never normalized.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
    norms: Vec<Option<DsbnLayer>>,
    final_activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngState,
        prefix: &str,
        input: usize,
        widths: &[usize],
        final_activation: Activation,
        norm: Option<NormSpec>,
    ) -> Result<Self> {
        if widths.is_empty() || input == 0 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "{prefix}: MLP needs positive widths, got input {input} and {widths:?}"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut norms = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(
                store,
                rng,
                &format!("{prefix}.l{i}"),
                fan_in,
                w,
            ));
            let hidden = i + 1 < widths.len();
            norms.push(match (hidden, norm) {
                (true, Some(spec)) => {
                    Some(DsbnLayer::new(store, &format!("{prefix}.l{i}"), w, spec)?)
                }
                _ => None,
            });
            fan_in = w;
        }
        Ok(Mlp {
            layers,
            norms,
            final_activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward(&self, s: &mut Session, x: Var, domain: usize) -> Result<Var> {
        let cols = s.g.value(x).cols();
        if cols != self.input_dim() {
            return Err(Error::shape("mlp", s.g.shape(x), &[0, self.input_dim()]));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, (layer, norm)) in self.layers.iter().zip(&self.norms).enumerate() {
            h = layer.forward(s, h)?;
            if let Some(n) = norm {
                h = n.forward(s, h, domain)?;
            }
            let act = if i == last {
                self.final_activation
            } else {
                Activation::Relu
            };
            h = activate(s, h, act)?;
        }
        Ok(h)
    }
}

/// Forward through the network owned by `domain` among one-per-domain copies.
pub fn per_domain_forward(nets: &[Mlp], s: &mut Session, x: Var, domain: usize) -> Result<Var> {
    let net = nets.get(domain).ok_or(Error::UnknownDomain {
        domain,
        domains: nets.len(),
    })?;
    net.forward(s, x, domain)
}
