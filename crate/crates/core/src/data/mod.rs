//! Multi-domain interaction datasets: schema, synthetic generation, TSV
//! files and domain-grouped batching.

pub mod batch;
pub mod schema;
pub mod synth;
pub mod tsv;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{FeatureRows, Side};

pub use batch::{batch_by_domain, Batch};
pub use schema::{FeatureSchema, FieldKind, FieldSpec};
pub use synth::{generate_synthetic, GroundTruth, SynthConfig};
pub use tsv::{load_dataset, load_tsv, write_tsv, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Real,
    Pseudo,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Pseudo => "pseudo",
        }
    }
}

/// One positive interaction `(user, item, domain)`. Feature ids live in the
/// dataset's user and item catalogs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sample {
    pub user: u32,
    pub item: u32,
    pub domain: u32,
    pub label: Label,
}

impl Sample {
    pub fn real(user: u32, item: u32, domain: u32) -> Self {
        Sample {
            user,
            item,
            domain,
            label: Label::Real,
        }
    }
}

/// Items to rank for one `(user, domain)` under the candidate-list protocol.
pub type CandidateLists = BTreeMap<(u32, u32), Vec<u32>>;

/// Positive item sets keyed by `(user, domain)`.
pub type PositiveSets = BTreeMap<(u32, u32), BTreeSet<u32>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    /// User feature rows indexed by user id, in user-side schema order.
    pub users: Vec<Vec<u32>>,
    /// Item feature rows indexed by item id, in item-side schema order.
    pub items: Vec<Vec<u32>>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub candidates: CandidateLists,
    /// Latent generative factors, present for synthetic data only.
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn domains(&self) -> usize {
        self.schema.domains
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        for row in &self.users {
            self.schema.check_row(Side::User, row)?;
        }
        for row in &self.items {
            self.schema.check_row(Side::Item, row)?;
        }
        for s in self.train.iter().chain(&self.test) {
            self.check_sample(s)?;
        }
        let train = positive_sets(&self.train);
        for s in &self.test {
            if train
                .get(&(s.user, s.domain))
                .is_some_and(|set| set.contains(&s.item))
            {
                return Err(Error::Data(format!(
                    "({}, {}, {}) is both a train and a test positive",
                    s.user, s.item, s.domain
                )));
            }
        }
        Ok(())
    }

    pub fn check_sample(&self, s: &Sample) -> Result<()> {
        if s.domain as usize >= self.domains() {
            return Err(Error::UnknownDomain {
                domain: s.domain as usize,
                domains: self.domains(),
            });
        }
        if s.user as usize >= self.users.len() || s.item as usize >= self.items.len() {
            return Err(Error::Data(format!(
                "sample ({}, {}, {}) refers to an unknown user or item",
                s.user, s.item, s.domain
            )));
        }
        Ok(())
    }

    pub fn user_rows(&self, users: &[u32]) -> FeatureRows {
        FeatureRows::from_samples(
            users.iter().map(|&u| self.users[u as usize].as_slice()),
            self.schema.side_fields(Side::User).count(),
        )
    }

    pub fn item_rows(&self, items: &[u32]) -> FeatureRows {
        FeatureRows::from_samples(
            items.iter().map(|&v| self.items[v as usize].as_slice()),
            self.schema.side_fields(Side::Item).count(),
        )
    }

    pub fn rows(&self, side: Side, ids: &[u32]) -> FeatureRows {
        match side {
            Side::User => self.user_rows(ids),
            Side::Item => self.item_rows(ids),
        }
    }

    /// Train samples per domain, in dataset order.
    pub fn train_by_domain(&self) -> Vec<Vec<Sample>> {
        group_by_domain(&self.train, self.domains())
    }

    /// Fraction of users with interactions in at least two domains.
    pub fn user_overlap(&self) -> f64 {
        overlap(
            self.train
                .iter()
                .chain(&self.test)
                .map(|s| (s.user, s.domain)),
        )
    }

    /// Fraction of items with interactions in at least two domains.
    pub fn item_overlap(&self) -> f64 {
        overlap(
            self.train
                .iter()
                .chain(&self.test)
                .map(|s| (s.item, s.domain)),
        )
    }
}

pub fn group_by_domain(samples: &[Sample], domains: usize) -> Vec<Vec<Sample>> {
    let mut out = vec![Vec::new(); domains];
    for s in samples {
        out[s.domain as usize].push(*s);
    }
    out
}

pub fn positive_sets(samples: &[Sample]) -> PositiveSets {
    let mut out = PositiveSets::new();
    for s in samples {
        out.entry((s.user, s.domain)).or_default().insert(s.item);
    }
    out
}

fn overlap(pairs: impl Iterator<Item = (u32, u32)>) -> f64 {
    let mut seen: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for (id, d) in pairs {
        seen.entry(id).or_default().insert(d);
    }
    if seen.is_empty() {
        return 0.0;
    }
    seen.values().filter(|ds| ds.len() >= 2).count() as f64 / seen.len() as f64
}
