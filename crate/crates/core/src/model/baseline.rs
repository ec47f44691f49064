//! Comparison models expressed as degenerate configurations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{AdaptationKind, FusionKind};

use super::config::{ModelConfig, NormKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// The configuration passed in, unchanged.
    Adi,
    /// One shared tower trained on all domains mixed.
    Dnn,
    /// One independent DNN per domain.
    DnnSingle,
    /// One shared bottom network and per-domain forward networks.
    SharedBottom,
    /// Only shared experts, mixed per domain by the gate.
    MmoeLike,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [
        Baseline::DnnSingle,
        Baseline::Dnn,
        Baseline::SharedBottom,
        Baseline::MmoeLike,
        Baseline::Adi,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Baseline::Adi => "ADI",
            Baseline::Dnn => "DNN",
            Baseline::DnnSingle => "DNN-Single",
            Baseline::SharedBottom => "Shared-Bottom",
            Baseline::MmoeLike => "MMoE-like",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adi" => Ok(Baseline::Adi),
            "dnn" => Ok(Baseline::Dnn),
            "dnn-single" | "dnn_single" => Ok(Baseline::DnnSingle),
            "shared-bottom" | "shared_bottom" => Ok(Baseline::SharedBottom),
            "mmoe-like" | "mmoe_like" | "mmoe" => Ok(Baseline::MmoeLike),
            other => Err(Error::Config(format!(
                "unknown baseline `{other}` (expected adi, dnn, dnn-single, shared-bottom or mmoe-like)"
            ))),
        }
    }
}

/// Derives a baseline from `base`, keeping its widths, seed and domains.
/// Baselines use ordinary batch normalization when `base` normalizes.
pub fn baseline_config(which: Baseline, base: &ModelConfig) -> ModelConfig {
    let norm = match base.norm {
        NormKind::None => NormKind::None,
        _ => NormKind::Batch,
    };
    let plain = ModelConfig {
        adaptation: AdaptationKind::None,
        norm,
        indicator_input: false,
        separate_domains: false,
        fusion: FusionKind::Sum,
        ..base.clone()
    };
    match which {
        Baseline::Adi => base.clone(),
        Baseline::Dnn => ModelConfig {
            shared_networks: 1,
            specific_networks: false,
            per_domain_forward: false,
            ..plain
        },
        Baseline::DnnSingle => ModelConfig {
            separate_domains: true,
            ..baseline_config(Baseline::Dnn, base)
        },
        Baseline::SharedBottom => ModelConfig {
            shared_networks: 1,
            specific_networks: false,
            per_domain_forward: true,
            ..plain
        },
        Baseline::MmoeLike => ModelConfig {
            // Equal size: as many experts as the base has bottom networks.
            shared_networks: base.bottom_networks(),
            specific_networks: false,
            per_domain_forward: true,
            ..plain
        },
    }
}
