//! Sub-networks of the two towers: embeddings, MLPs, domain-specific batch
//! normalization, domain interest adaptation, the shared-network gate and the
//! fusion variants.

pub mod adapt;
pub mod embedding;
pub mod fusion;
pub mod gate;
pub mod mlp;
pub mod norm;

pub use adapt::{AdaptationKind, AdaptationLayer, Adapted, SeGate};
pub use embedding::{embed_batch, Embedded, FeatureRows, FieldTable, Side};
pub use fusion::{concat_fuse, sum_fuse, FusionKind, FusionLayer, StarMlp};
pub use gate::{mix_experts, GateMode, SharedGate};
pub use mlp::{per_domain_forward, Activation, Linear, Mlp};
pub use norm::{apply_buffer_updates, DsbnLayer, NormSpec};

use crate::error::{Error, Result};

/// Index of the per-domain copy to use. A single copy serves every domain.
pub(crate) fn domain_copy(domain: usize, copies: usize) -> Result<usize> {
    match copies {
        1 => Ok(0),
        _ if domain < copies => Ok(domain),
        _ => Err(Error::UnknownDomain {
            domain,
            domains: copies,
        }),
    }
}
