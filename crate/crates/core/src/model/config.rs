use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{AdaptationKind, FusionKind, GateMode, NormSpec, SeGate};

/// Where domain interest adaptation is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// One layer shared by all domains ("1-SE").
    Global,
    /// One layer per domain, selected by the domain indicator ("3-SE").
    #[default]
    PerDomain,
    /// One layer in front of every shared and specific network ("4-SE").
    PerNetwork,
}

impl Placement {
    pub fn label(self, domains: usize, shared: usize) -> String {
        match self {
            Placement::Global => "1-SE".into(),
            Placement::PerDomain => format!("{domains}-SE"),
            Placement::PerNetwork => format!("{}-SE", domains + shared),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    None,
    /// Ordinary batch normalization shared by all domains.
    Batch,
    /// Separate statistics and affine per domain.
    #[default]
    DomainSpecific,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub domains: usize,
    /// Number of shared bottom networks.
    pub shared_networks: usize,
    /// One specific bottom network per domain.
    pub specific_networks: bool,
    /// Hidden and output widths of every bottom network.
    pub bottom_widths: Vec<usize>,
    /// Widths of the forward network; the last one is the score dimension.
    pub forward_widths: Vec<usize>,
    /// One forward network per domain instead of a single shared one.
    pub per_domain_forward: bool,
    pub fusion: FusionKind,
    pub adaptation: AdaptationKind,
    pub placement: Placement,
    pub se_reduction: usize,
    pub se_gate: SeGate,
    pub gate_mode: GateMode,
    pub norm: NormKind,
    pub norm_momentum: f64,
    pub norm_eps: f64,
    /// Feed the domain indicator embedding into the towers as an extra field.
    pub indicator_input: bool,
    /// Train one independent single-domain model per domain.
    pub separate_domains: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            domains: 3,
            shared_networks: 1,
            specific_networks: true,
            bottom_widths: vec![32, 16],
            forward_widths: vec![16],
            per_domain_forward: true,
            fusion: FusionKind::Concat,
            adaptation: AdaptationKind::Se,
            placement: Placement::PerDomain,
            se_reduction: 2,
            se_gate: SeGate::Sigmoid,
            gate_mode: GateMode::Softmax,
            norm: NormKind::DomainSpecific,
            norm_momentum: 0.9,
            norm_eps: 1e-5,
            indicator_input: false,
            separate_domains: false,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.domains == 0 {
            return bad("domains must be >= 1".into());
        }
        if self.shared_networks == 0 {
            return bad("shared_networks must be >= 1".into());
        }
        for (name, w) in [
            ("bottom_widths", &self.bottom_widths),
            ("forward_widths", &self.forward_widths),
        ] {
            if w.is_empty() || w.contains(&0) {
                return bad(format!(
                    "{name} must be a nonempty list of positive widths, got {w:?}"
                ));
            }
        }
        if self.se_reduction == 0 {
            return bad("se_reduction must be >= 1".into());
        }
        if self.fusion == FusionKind::NetworkMul
            && (self.shared_networks != 1 || !self.specific_networks)
        {
            return bad(
                "Network-Mul fusion needs exactly one shared network and specific networks".into(),
            );
        }
        if self.placement == Placement::PerNetwork {
            if self.adaptation == AdaptationKind::None {
                return bad("per-network placement needs an adaptation kind".into());
            }
            if self.fusion == FusionKind::NetworkMul {
                return bad("per-network placement is not defined for Network-Mul fusion".into());
            }
        }
        if self.norm != NormKind::None
            && !(self.norm_eps > 0.0 && (0.0..=1.0).contains(&self.norm_momentum))
        {
            return bad("normalization needs eps > 0 and momentum in [0,1]".into());
        }
        Ok(())
    }

    pub fn score_dim(&self) -> usize {
        *self.forward_widths.last().expect("validated")
    }

    pub fn bottom_width(&self) -> usize {
        *self.bottom_widths.last().expect("validated")
    }

    /// Normalization for a network that sees `domains_seen` domains.
    pub fn norm_spec(&self, domains_seen: usize) -> Option<NormSpec> {
        let copies = match self.norm {
            NormKind::None => return None,
            NormKind::Batch => 1,
            NormKind::DomainSpecific => domains_seen,
        };
        Some(NormSpec {
            copies,
            momentum: self.norm_momentum,
            eps: self.norm_eps,
        })
    }

    /// Bottom networks per tower: the shared ones plus one per domain.
    pub fn bottom_networks(&self) -> usize {
        self.shared_networks
            + if self.specific_networks {
                self.domains
            } else {
                0
            }
    }

    /// The fusion actually applied; without specific networks the shared
    /// output passes through unchanged.
    pub fn effective_fusion(&self) -> Option<FusionKind> {
        self.specific_networks.then_some(self.fusion)
    }
}
