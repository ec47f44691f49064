//! One side of the two-tower model.
//!
//! A forward pass runs: embedding lookup, domain interest adaptation, the
//! shared and specific bottom networks (with their normalization), fusion,
//! and the domain's forward network.

use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::layers::{
    embed_batch, mix_experts, Activation, AdaptationKind, AdaptationLayer, FeatureRows, FieldTable,
    FusionKind, FusionLayer, Mlp, SharedGate, Side, StarMlp,
};
use crate::params::{ParamStore, Session};
use crate::rng::RngState;

use super::config::{ModelConfig, Placement};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Adaptation {
    None,
    Global(AdaptationLayer),
    PerDomain(Vec<AdaptationLayer>),
    PerNetwork {
        shared: Vec<AdaptationLayer>,
        specific: Vec<AdaptationLayer>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Bottom {
    Gated {
        gate: Option<SharedGate>,
        shared: Vec<Mlp>,
        specific: Vec<Mlp>,
        fusion: Option<FusionLayer>,
    },
    Star(StarMlp),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tower {
    pub side: Side,
    pub domains: usize,
    pub fields: Vec<FieldTable>,
    pub indicator: Option<FieldTable>,
    pub indicator_input: bool,
    pub adaptation: Adaptation,
    pub bottom: Bottom,
    pub forward: Vec<Mlp>,
}

/// Result of one tower pass.
pub struct TowerOutput {
    pub embedding: Var,
    /// Per-field adaptation weights `[rows, fields]`, when the adaptation
    /// kind produces them.
    pub attention: Option<Var>,
}

impl Tower {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut RngState,
        config: &ModelConfig,
        schema: &FeatureSchema,
        side: Side,
    ) -> Result<Self> {
        let p = side.as_str();
        let d = config.domains;
        let k = config.shared_networks;
        let fields: Vec<FieldTable> = schema
            .side_fields(side)
            .map(|f| FieldTable::new(store, rng, p, &f.name, f.vocab, f.dim))
            .collect();
        if fields.is_empty() {
            return Err(Error::Config(format!("schema has no {side} fields")));
        }
        let star = config.fusion == FusionKind::NetworkMul;
        let needs_indicator =
            config.indicator_input || (k > 1 && !star) || (config.specific_networks && !star);
        let ind = schema.indicator();
        let indicator =
            needs_indicator.then(|| FieldTable::new(store, rng, p, &ind.name, d, ind.dim));

        let mut field_dims: Vec<usize> = fields.iter().map(|f| f.dim).collect();
        if config.indicator_input {
            field_dims.push(ind.dim);
        }
        let input: usize = field_dims.iter().sum();

        let mut adapt = |name: &str| {
            AdaptationLayer::new(
                store,
                rng,
                &format!("{p}.adapt.{name}"),
                config.adaptation,
                &field_dims,
                config.se_reduction,
                config.se_gate,
            )
        };
        let adaptation = match (config.adaptation, config.placement) {
            (AdaptationKind::None, _) => Adaptation::None,
            (_, Placement::Global) => Adaptation::Global(adapt("global")?),
            (_, Placement::PerDomain) => Adaptation::PerDomain(
                (0..d)
                    .map(|i| adapt(&format!("d{i}")))
                    .collect::<Result<_>>()?,
            ),
            (_, Placement::PerNetwork) => Adaptation::PerNetwork {
                shared: (0..k)
                    .map(|i| adapt(&format!("shared{i}")))
                    .collect::<Result<_>>()?,
                specific: if config.specific_networks {
                    (0..d)
                        .map(|i| adapt(&format!("spec{i}")))
                        .collect::<Result<_>>()?
                } else {
                    Vec::new()
                },
            },
        };

        let h = config.bottom_width();
        let bottom = if star {
            Bottom::Star(StarMlp::new(
                store,
                rng,
                &format!("{p}.star"),
                d,
                input,
                &config.bottom_widths,
                Activation::Relu,
                config.norm_spec(d),
            )?)
        } else {
            let shared = (0..k)
                .map(|i| {
                    Mlp::new(
                        store,
                        rng,
                        &format!("{p}.shared{i}"),
                        input,
                        &config.bottom_widths,
                        Activation::Relu,
                        config.norm_spec(d),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let specific = if config.specific_networks {
                (0..d)
                    .map(|i| {
                        Mlp::new(
                            store,
                            rng,
                            &format!("{p}.spec{i}"),
                            input,
                            &config.bottom_widths,
                            Activation::Relu,
                            config.norm_spec(1),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let gate = if k > 1 {
                Some(SharedGate::new(
                    store,
                    rng,
                    p,
                    k,
                    ind.dim,
                    config.gate_mode,
                )?)
            } else {
                None
            };
            let fusion = match config.effective_fusion() {
                Some(kind) => Some(FusionLayer::new(store, rng, p, kind, d, ind.dim, h)?),
                None => None,
            };
            Bottom::Gated {
                gate,
                shared,
                specific,
                fusion,
            }
        };

        let fused = match config.effective_fusion() {
            Some(kind) => kind.output_width(h),
            None => h,
        };
        let forward = if config.per_domain_forward {
            (0..d)
                .map(|i| {
                    Mlp::new(
                        store,
                        rng,
                        &format!("{p}.fwd{i}"),
                        fused,
                        &config.forward_widths,
                        Activation::Identity,
                        config.norm_spec(1),
                    )
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![Mlp::new(
                store,
                rng,
                &format!("{p}.fwd"),
                fused,
                &config.forward_widths,
                Activation::Identity,
                config.norm_spec(d),
            )?]
        };

        Ok(Tower {
            side,
            domains: d,
            fields,
            indicator,
            indicator_input: config.indicator_input,
            adaptation,
            bottom,
            forward,
        })
    }

    /// Names of the fields the adaptation layer weights, in order.
    pub fn field_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.fields.iter().map(|f| f.name.clone()).collect();
        if self.indicator_input {
            if let Some(ind) = &self.indicator {
                names.push(ind.name.clone());
            }
        }
        names
    }

    pub fn forward(
        &self,
        s: &mut Session,
        rows: &FeatureRows,
        domain: usize,
    ) -> Result<TowerOutput> {
        if domain >= self.domains {
            return Err(Error::UnknownDomain {
                domain,
                domains: self.domains,
            });
        }
        let batch = rows.batch();
        let embedded = embed_batch(s, &self.fields, rows)?;
        let mut fields = embedded.fields;
        let indicator = match &self.indicator {
            Some(t) => {
                let table = s.param(t.table)?;
                Some(s.g.gather(table, &[domain])?)
            }
            None => None,
        };
        if self.indicator_input {
            let t = self
                .indicator
                .as_ref()
                .expect("indicator input allocates the table");
            let table = s.param(t.table)?;
            fields.push(s.g.gather(table, &vec![domain; batch])?);
        }

        // Adapted input for the shared networks and for the specific network.
        let mut attention = None;
        let (shared_inputs, specific_input) = match &self.adaptation {
            Adaptation::None => {
                let f = s.g.concat(&fields)?;
                (None, f)
            }
            Adaptation::Global(layer) => {
                let a = layer.forward(s, &fields)?;
                attention = a.weights;
                (None, a.output)
            }
            Adaptation::PerDomain(layers) => {
                let a = layers[domain].forward(s, &fields)?;
                attention = a.weights;
                (None, a.output)
            }
            Adaptation::PerNetwork { shared, specific } => {
                let shared_in = shared
                    .iter()
                    .map(|l| l.forward(s, &fields).map(|a| a.output))
                    .collect::<Result<Vec<_>>>()?;
                let spec_in = match specific.get(domain) {
                    Some(l) => {
                        let a = l.forward(s, &fields)?;
                        attention = a.weights;
                        a.output
                    }
                    None => s.g.concat(&fields)?,
                };
                (Some(shared_in), spec_in)
            }
        };

        let fused = match &self.bottom {
            Bottom::Star(star) => star.forward(s, specific_input, domain)?,
            Bottom::Gated {
                gate,
                shared,
                specific,
                fusion,
            } => {
                let mut outs = Vec::with_capacity(shared.len());
                for (i, net) in shared.iter().enumerate() {
                    let x = shared_inputs.as_ref().map_or(specific_input, |v| v[i]);
                    outs.push(net.forward(s, x, domain)?);
                }
                let e_shared = match gate {
                    Some(g) => {
                        let ind = indicator.expect("gate allocates the indicator");
                        let alpha = g.weights(s, ind)?;
                        mix_experts(s, alpha, &outs)?
                    }
                    None => outs[0],
                };
                match fusion {
                    Some(f) => {
                        let e_spec = specific[domain].forward(s, specific_input, domain)?;
                        let ind = indicator.expect("fusion allocates the indicator");
                        f.forward(s, e_spec, e_shared, ind, domain)?
                    }
                    None => e_shared,
                }
            }
        };
        let fwd = if self.forward.len() == 1 {
            &self.forward[0]
        } else {
            &self.forward[domain]
        };
        let embedding = fwd.forward(s, fused, domain)?;
        Ok(TowerOutput {
            embedding,
            attention,
        })
    }
}
