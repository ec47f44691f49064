//! Shared embedding tables and batch lookup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Embedding matrix `(vocab, dim)` for one categorical field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldTable {
    pub name: String,
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl FieldTable {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngState,
        prefix: &str,
        name: &str,
        vocab: usize,
        dim: usize,
    ) -> Self {
        // A lookup is a linear map from a one-hot vector, so fan_in is 1.
        let table = store.add_glorot(format!("{prefix}.embed.{name}"), [vocab, dim], 1, dim, rng);
        FieldTable {
            name: name.to_string(),
            table,
            vocab,
            dim,
        }
    }
}

/// Categorical ids for a batch, stored field-major: `ids[field][row]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureRows {
    pub ids: Vec<Vec<u32>>,
}

impl FeatureRows {
    pub fn from_samples<'a>(rows: impl IntoIterator<Item = &'a [u32]>, fields: usize) -> Self {
        let mut ids = vec![Vec::new(); fields];
        for row in rows {
            for (f, &id) in row.iter().enumerate().take(fields) {
                ids[f].push(id);
            }
        }
        FeatureRows { ids }
    }

    pub fn batch(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    pub fn fields(&self) -> usize {
        self.ids.len()
    }

    /// Keeps only the given row positions, in order.
    pub fn select(&self, rows: &[usize]) -> FeatureRows {
        FeatureRows {
            ids: self
                .ids
                .iter()
                .map(|col| rows.iter().map(|&r| col[r]).collect())
                .collect(),
        }
    }
}

/// Per-field embeddings `F_i` and their concatenation `F`.
pub struct Embedded {
    pub fields: Vec<Var>,
    pub concat: Var,
}

pub fn embed_batch(s: &mut Session, tables: &[FieldTable], rows: &FeatureRows) -> Result<Embedded> {
    if rows.fields() != tables.len() {
        return Err(Error::Data(format!(
            "expected {} feature fields, got {}",
            tables.len(),
            rows.fields()
        )));
    }
    if rows.batch() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let mut fields = Vec::with_capacity(tables.len());
    for (t, ids) in tables.iter().zip(&rows.ids) {
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= t.vocab) {
            return Err(Error::OutOfVocab {
                field: t.name.clone(),
                id: bad,
                vocab: t.vocab,
            });
        }
        let table = s.param(t.table)?;
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        fields.push(s.g.gather(table, &idx)?);
    }
    let concat = s.g.concat(&fields)?;
    Ok(Embedded { fields, concat })
}
