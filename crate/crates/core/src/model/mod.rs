//! The assembled two-tower model, its parameter census, baseline
//! configurations and checkpoints.

pub mod baseline;
pub mod census;
pub mod checkpoint;
pub mod config;
pub mod tower;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureSchema, FieldKind};
use crate::error::{Error, Result};
use crate::layers::{FeatureRows, Side};
use crate::params::{Mode, ParamStore, Session};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub use baseline::{baseline_config, Baseline};
pub use census::{Census, TowerCensus};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{ModelConfig, NormKind, Placement};
pub use tower::{Tower, TowerOutput};

/// Rows embedded per inference pass.
const INFER_CHUNK: usize = 1024;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdiModel {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub store: ParamStore,
    pub user: Tower,
    pub item: Tower,
}

impl AdiModel {
    pub fn build(config: &ModelConfig, schema: &FeatureSchema) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        if config.domains != schema.domains {
            return Err(Error::Config(format!(
                "model has {} domains but the schema has {}",
                config.domains, schema.domains
            )));
        }
        let root = RngState::new(config.seed);
        let mut store = ParamStore::new();
        let user = Tower::build(&mut store, &mut root.fork(1), config, schema, Side::User)?;
        let item = Tower::build(&mut store, &mut root.fork(2), config, schema, Side::Item)?;
        Ok(AdiModel {
            config: config.clone(),
            schema: schema.clone(),
            store,
            user,
            item,
        })
    }

    pub fn domains(&self) -> usize {
        self.config.domains
    }

    pub fn tower(&self, side: Side) -> &Tower {
        match side {
            Side::User => &self.user,
            Side::Item => &self.item,
        }
    }

    pub fn tower_forward(
        &self,
        s: &mut Session,
        side: Side,
        rows: &FeatureRows,
        domain: usize,
    ) -> Result<TowerOutput> {
        self.tower(side).forward(s, rows, domain)
    }

    /// Inference-mode score embeddings `[rows, score_dim]`.
    pub fn embed_rows(&self, side: Side, domain: usize, rows: &FeatureRows) -> Result<Tensor> {
        let n = rows.batch();
        let dim = self.config.score_dim();
        let mut data = Vec::with_capacity(n * dim);
        let mut start = 0;
        while start < n {
            let end = (start + INFER_CHUNK).min(n);
            let chunk = rows.select(&(start..end).collect::<Vec<_>>());
            let mut s = Session::new(&self.store, Mode::Infer);
            let out = self.tower_forward(&mut s, side, &chunk, domain)?;
            data.extend_from_slice(s.g.value(out.embedding).data());
            start = end;
        }
        Tensor::matrix(n, dim, data)
    }

    pub fn census(&self) -> Census {
        Census::of(self)
    }
}

/// Anything that maps users and items of a dataset to score embeddings per
/// domain; retrieval and evaluation only need this.
pub trait Embedder {
    fn domains(&self) -> usize;
    fn embed(&self, side: Side, domain: usize, ds: &Dataset, ids: &[u32]) -> Result<Tensor>;
}

impl Embedder for AdiModel {
    fn domains(&self) -> usize {
        self.config.domains
    }

    fn embed(&self, side: Side, domain: usize, ds: &Dataset, ids: &[u32]) -> Result<Tensor> {
        self.embed_rows(side, domain, &ds.rows(side, ids))
    }
}

/// One independent single-domain model per domain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerDomainModels {
    pub models: Vec<AdiModel>,
}

impl Embedder for PerDomainModels {
    fn domains(&self) -> usize {
        self.models.len()
    }

    fn embed(&self, side: Side, domain: usize, ds: &Dataset, ids: &[u32]) -> Result<Tensor> {
        let model = self.models.get(domain).ok_or(Error::UnknownDomain {
            domain,
            domains: self.models.len(),
        })?;
        model.embed_rows(side, 0, &ds.rows(side, ids))
    }
}

/// A trained model as produced by the trainer: one joint multi-domain
/// model, or independent single-domain models.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Joint(AdiModel),
    PerDomain(PerDomainModels),
}

impl TrainedModel {
    pub fn embedder(&self) -> &dyn Embedder {
        match self {
            TrainedModel::Joint(m) => m,
            TrainedModel::PerDomain(m) => m,
        }
    }

    /// Census of the joint model; `None` for separately trained domains,
    /// which are not compared under the equal-size rule.
    pub fn census(&self) -> Option<Census> {
        match self {
            TrainedModel::Joint(m) => Some(m.census()),
            TrainedModel::PerDomain(_) => None,
        }
    }

    pub fn to_checkpoint(&self, training: Option<crate::training::TrainState>) -> Checkpoint {
        match self {
            TrainedModel::Joint(m) => Checkpoint::single(m, training),
            TrainedModel::PerDomain(p) => Checkpoint::new(
                p.models
                    .iter()
                    .map(|m| checkpoint::MemberState::capture(m, None))
                    .collect(),
            ),
        }
    }

    /// Rebuilds the model held by a checkpoint, with the training state of
    /// a joint model when one was saved.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
    ) -> Result<(Self, Option<crate::training::TrainState>)> {
        if let [member] = ckpt.members.as_slice() {
            if !member.config.separate_domains {
                return Ok((
                    TrainedModel::Joint(member.restore()?),
                    member.training.clone(),
                ));
            }
        }
        let models = ckpt
            .members
            .iter()
            .map(|m| m.restore())
            .collect::<Result<Vec<_>>>()?;
        Ok((TrainedModel::PerDomain(PerDomainModels { models }), None))
    }
}

impl Embedder for crate::data::GroundTruth {
    fn domains(&self) -> usize {
        self.item_effect.len()
    }

    fn embed(&self, side: Side, domain: usize, _ds: &Dataset, ids: &[u32]) -> Result<Tensor> {
        if domain >= self.item_effect.len() {
            return Err(Error::UnknownDomain {
                domain,
                domains: self.item_effect.len(),
            });
        }
        let rows: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| match side {
                Side::User => self.user_vector(id as usize, domain),
                Side::Item => self.item_vector(id as usize, domain),
            })
            .collect();
        Tensor::from_rows(&rows)
    }
}

/// Schema of the same features routed as a single domain, used by
/// per-domain models.
pub fn single_domain_schema(schema: &FeatureSchema) -> FeatureSchema {
    let mut out = schema.clone();
    out.domains = 1;
    for f in out.fields.iter_mut() {
        if f.kind == FieldKind::DomainIndicator {
            f.vocab = 1;
        }
        f.domain = None;
    }
    out
}

/// Dot products of one user embedding with each item row.
pub fn score(user: &[f64], items: &Tensor) -> Result<Vec<f64>> {
    if items.cols() != user.len() {
        return Err(Error::shape("score", &[1, user.len()], items.shape()));
    }
    Ok((0..items.rows())
        .map(|r| items.row(r).iter().zip(user).map(|(a, b)| a * b).sum())
        .collect())
}

/// The common domain of a batch; mixed batches are rejected.
pub fn single_domain(domains: &[u32]) -> Result<usize> {
    let Some(&first) = domains.first() else {
        return Err(Error::Data("empty batch".into()));
    };
    if let Some(other) = domains.iter().find(|&&d| d != first) {
        return Err(Error::Data(format!(
            "mixed-domain batch: domains {first} and {other}; batches must be grouped by domain"
        )));
    }
    Ok(first as usize)
}
